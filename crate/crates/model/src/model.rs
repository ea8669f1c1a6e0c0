//! The scorer: frozen vision encoder, projector, LoRA-adapted causal LM, score decoder.

use harmony_core::ImageBuffer;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::graph::Var;
use crate::lora::{check_rank, linear_lora, LoraAdapter, LoraIds, DEFAULT_A_STD, DEFAULT_RANK};
use crate::params::{Forward, Group, ParamId, ParamStore, Trainable};
use crate::tensor::Tensor;
use crate::vocab::{Vocabulary, DEFAULT_PROMPT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Nr,
    Fr,
}

impl std::str::FromStr for Mode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nr" => Ok(Mode::Nr),
            "fr" => Ok(Mode::Fr),
            other => Err(ModelError::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisionEncoderConfig {
    pub image_size: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
}

impl Default for VisionEncoderConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            channels: 3,
            patch_size: 4,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
        }
    }
}

impl VisionEncoderConfig {
    pub fn n_patches(&self) -> usize {
        (self.image_size / self.patch_size).pow(2)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_context: usize,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            n_layers: 2,
            n_heads: 4,
            d_ff: 64,
            max_context: 192,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vision: VisionEncoderConfig,
    pub projector_hidden: usize,
    pub llm: LlmConfig,
    pub lora_rank: usize,
    pub lora_a_std: f64,
    pub decoder_hidden: usize,
    pub prompt: String,
    pub mode: Mode,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vision: VisionEncoderConfig::default(),
            projector_hidden: 64,
            llm: LlmConfig::default(),
            lora_rank: DEFAULT_RANK,
            lora_a_std: DEFAULT_A_STD,
            decoder_hidden: 32,
            prompt: DEFAULT_PROMPT.to_string(),
            mode: Mode::Nr,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// A model small enough for finite-difference checks (all widths ≤ 16).
    pub fn tiny() -> Self {
        Self {
            vision: VisionEncoderConfig {
                image_size: 8,
                channels: 3,
                patch_size: 4,
                d_model: 16,
                n_layers: 1,
                n_heads: 2,
                d_ff: 16,
            },
            projector_hidden: 16,
            llm: LlmConfig {
                d_model: 16,
                n_layers: 2,
                n_heads: 2,
                d_ff: 16,
                max_context: 64,
            },
            lora_rank: 2,
            lora_a_std: DEFAULT_A_STD,
            decoder_hidden: 16,
            prompt: "rate this image".to_string(),
            mode: Mode::Nr,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = &self.vision;
        let bad = |m: String| Err(ModelError::Config(m));
        if v.patch_size == 0 || !v.image_size.is_multiple_of(v.patch_size) {
            return bad(format!(
                "image size {} is not divisible by patch size {}",
                v.image_size, v.patch_size
            ));
        }
        if v.n_heads == 0 || !v.d_model.is_multiple_of(v.n_heads) {
            return bad(format!(
                "vision width {} not divisible by {} heads",
                v.d_model, v.n_heads
            ));
        }
        let l = &self.llm;
        if l.n_heads == 0 || !l.d_model.is_multiple_of(l.n_heads) {
            return bad(format!("LM width {} not divisible by {} heads", l.d_model, l.n_heads));
        }
        if !l.d_model.is_multiple_of(2) {
            return bad("LM width must be even for sinusoidal positions".into());
        }
        if v.channels == 0 || self.projector_hidden == 0 || self.decoder_hidden == 0 {
            return bad("zero-width layer".into());
        }
        check_rank(self.lora_rank, l.d_model, l.d_model)
    }
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

/// Two affine layers with a GELU between; the projector and the score decoder.
#[derive(Debug, Clone, Copy)]
struct TwoLayer {
    first: Dense,
    second: Dense,
}

#[derive(Debug, Clone)]
struct Block {
    ln1: Norm,
    /// q, k, v, o projections (d×d, no bias).
    attn: [ParamId; 4],
    lora: Option<[LoraIds; 4]>,
    ln2: Norm,
    ff1: Dense,
    ff2: Dense,
}

#[derive(Debug, Clone)]
struct VisionIds {
    patch: Dense,
    pos: ParamId,
    blocks: Vec<Block>,
}

#[derive(Debug, Clone)]
struct LlmIds {
    embed: ParamId,
    blocks: Vec<Block>,
    ln_f: Norm,
    head: Dense,
}

const ATTN_NAMES: [&str; 4] = ["wq", "wk", "wv", "wo"];

/// Which stages have run on a model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingState {
    pub stage1: bool,
    pub stage2: bool,
}

/// A sequence laid out for the LM: ids are `None` on visual and separator rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceLayout {
    pub token_ids: Vec<Option<usize>>,
    /// First position of the response (after the prompt).
    pub response_start: usize,
}

#[derive(Debug, Clone)]
pub struct HarmonyIqa {
    config: ModelConfig,
    vocab: Vocabulary,
    store: ParamStore,
    vision: VisionIds,
    projector: TwoLayer,
    llm: LlmIds,
    decoder: TwoLayer,
    prompt_ids: Vec<usize>,
    lora_enabled: bool,
    pub state: TrainingState,
}

fn std_for(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

impl HarmonyIqa {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let vocab = Vocabulary::default();
        let prompt_ids = vocab.tokenize(&config.prompt)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut s = ParamStore::new();

        let v = &config.vision;
        let patch = Dense {
            w: s.gaussian(
                "vision.patch.w",
                Group::VisionEncoder,
                &[v.d_model, v.patch_dim()],
                std_for(v.patch_dim()),
                &mut rng,
            ),
            b: s.add("vision.patch.b", Group::VisionEncoder, Tensor::zeros(&[v.d_model])),
        };
        let pos = s.gaussian(
            "vision.pos",
            Group::VisionEncoder,
            &[v.n_patches(), v.d_model],
            0.1,
            &mut rng,
        );
        let vblocks = (0..v.n_layers)
            .map(|i| {
                add_block(
                    &mut s,
                    &format!("vision.block{i}"),
                    Group::VisionEncoder,
                    v.d_model,
                    v.d_ff,
                    None,
                    &mut rng,
                )
            })
            .collect();
        let vision = VisionIds {
            patch,
            pos,
            blocks: vblocks,
        };

        let l = &config.llm;
        let projector = TwoLayer {
            first: add_dense(
                &mut s,
                "projector.fc1",
                Group::Projector,
                v.d_model,
                config.projector_hidden,
                &mut rng,
            ),
            second: add_dense(
                &mut s,
                "projector.fc2",
                Group::Projector,
                config.projector_hidden,
                l.d_model,
                &mut rng,
            ),
        };

        let embed = s.gaussian("llm.embed", Group::LlmBase, &[vocab.len(), l.d_model], 1.0, &mut rng);
        let lora = Some((config.lora_rank, config.lora_a_std));
        let lblocks = (0..l.n_layers)
            .map(|i| {
                add_block(
                    &mut s,
                    &format!("llm.block{i}"),
                    Group::LlmBase,
                    l.d_model,
                    l.d_ff,
                    lora,
                    &mut rng,
                )
            })
            .collect();
        let ln_f = add_norm(&mut s, "llm.ln_f", Group::LlmBase, l.d_model);
        let head = add_dense(&mut s, "llm.head", Group::LmHead, l.d_model, vocab.len(), &mut rng);
        let llm = LlmIds {
            embed,
            blocks: lblocks,
            ln_f,
            head,
        };

        let first = add_dense(
            &mut s,
            "decoder.fc1",
            Group::ScoreDecoder,
            l.d_model,
            config.decoder_hidden,
            &mut rng,
        );
        let second = Dense {
            w: s.gaussian(
                "decoder.fc2.w",
                Group::ScoreDecoder,
                &[1, config.decoder_hidden],
                0.01,
                &mut rng,
            ),
            b: s.add("decoder.fc2.b", Group::ScoreDecoder, Tensor::full(&[1], 0.5)),
        };

        Ok(Self {
            config,
            vocab,
            store: s,
            vision,
            projector,
            llm,
            decoder: TwoLayer { first, second },
            prompt_ids,
            lora_enabled: true,
            state: TrainingState::default(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn prompt_ids(&self) -> &[usize] {
        &self.prompt_ids
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn lora_enabled(&self) -> bool {
        self.lora_enabled
    }

    /// Runs without the adapters, i.e. the frozen base model.
    pub fn set_lora_enabled(&mut self, enabled: bool) {
        self.lora_enabled = enabled;
    }

    /// Adapters of the LM attention projections, as standalone values.
    pub fn lora_adapters(&self) -> Vec<LoraAdapter> {
        let mut out = Vec::new();
        for block in &self.llm.blocks {
            let Some(lora) = block.lora else { continue };
            for (w, ids) in block.attn.iter().zip(lora) {
                out.push(LoraAdapter {
                    target: self.store.get(*w).name.clone(),
                    a: self.store.value(ids.a).clone(),
                    b: self.store.value(ids.b).clone(),
                });
            }
        }
        out
    }

    /// Folds every adapter into its weight (`W ← W + A B`) and drops the adapters.
    pub fn merge_lora(&mut self) {
        for bi in 0..self.llm.blocks.len() {
            let Some(lora) = self.llm.blocks[bi].lora else { continue };
            for (w, ids) in self.llm.blocks[bi].attn.into_iter().zip(lora) {
                let delta = self
                    .store
                    .value(ids.a)
                    .matmul(self.store.value(ids.b))
                    .expect("adapter shapes");
                let merged = self.store.value(w).add(&delta).expect("adapter fits weight");
                *self.store.value_mut(w) = merged;
                let rank = self.store.value(ids.b).rows();
                let k = self.store.value(ids.b).cols();
                *self.store.value_mut(ids.b) = Tensor::zeros(&[rank, k]);
            }
        }
        self.lora_enabled = false;
    }

    pub fn trainable_count(&self, group: Group) -> usize {
        self.store.count(group)
    }

    // ---- forward building blocks -------------------------------------------

    fn check_image(&self, img: &ImageBuffer) -> Result<()> {
        let v = &self.config.vision;
        let got = (img.width(), img.height(), img.channels());
        let expected = (v.image_size, v.image_size, v.channels);
        if got != expected {
            return Err(ModelError::ImageSize { got, expected });
        }
        Ok(())
    }

    fn patchify(&self, img: &ImageBuffer) -> Tensor {
        let v = &self.config.vision;
        let per_side = v.image_size / v.patch_size;
        let mut data = Vec::with_capacity(v.n_patches() * v.patch_dim());
        for py in 0..per_side {
            for px in 0..per_side {
                for y in 0..v.patch_size {
                    for x in 0..v.patch_size {
                        for c in 0..v.channels {
                            let val = img.get(px * v.patch_size + x, py * v.patch_size + y, c);
                            data.push(val / 255.0 - 0.5);
                        }
                    }
                }
            }
        }
        Tensor::matrix(v.n_patches(), v.patch_dim(), data).unwrap()
    }

    /// Frozen encoder output `E(I)`, one row per patch. Depends only on frozen
    /// weights, so callers may cache it across training steps.
    pub fn vision_features(&self, img: &ImageBuffer) -> Result<Tensor> {
        self.check_image(img)?;
        let mut f = Forward::new(&self.store, Trainable::none());
        let patches = f.graph.constant(self.patchify(img));
        let x = dense(&mut f, patches, self.vision.patch);
        let pos = f.param(self.vision.pos);
        let mut x = f.graph.add(x, pos);
        for b in &self.vision.blocks {
            x = block_forward(&mut f, x, b, self.config.vision.n_heads, false, false);
        }
        Ok(f.graph.value(x).clone())
    }

    fn project(&self, f: &mut Forward, features: &Tensor) -> Var {
        let x = f.graph.constant(features.clone());
        two_layer(f, x, self.projector)
    }

    /// Visual tokens `T_v = P(E(I))`.
    pub fn encode_image(&self, img: &ImageBuffer) -> Result<Tensor> {
        let feats = self.vision_features(img)?;
        let mut f = Forward::new(&self.store, Trainable::none());
        let tv = self.project(&mut f, &feats);
        Ok(f.graph.value(tv).clone())
    }

    fn positions(&self, len: usize) -> Tensor {
        let d = self.config.llm.d_model;
        let mut data = vec![0.0; len * d];
        for p in 0..len {
            for i in 0..d / 2 {
                let angle = p as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
                data[p * d + 2 * i] = angle.sin();
                data[p * d + 2 * i + 1] = angle.cos();
            }
        }
        Tensor::matrix(len, d, data).unwrap()
    }

    fn layout(&self, n_visual: usize, n_ref: Option<usize>, text: &[usize], response_len: usize) -> SequenceLayout {
        let mut token_ids = vec![None; n_visual];
        if let Some(n) = n_ref {
            token_ids.push(Some(self.vocab.sep()));
            token_ids.extend(std::iter::repeat_n(None, n));
        }
        let response_start = token_ids.len() + text.len() - response_len;
        token_ids.extend(text.iter().map(|&t| Some(t)));
        SequenceLayout {
            token_ids,
            response_start,
        }
    }

    /// `[T_v ; (sep ; T_v_ref) ; embed(text)] + positions`.
    fn assemble(&self, f: &mut Forward, tv: Var, tv_ref: Option<Var>, text: &[usize]) -> Result<Var> {
        let mut parts = vec![tv];
        if let Some(r) = tv_ref {
            let embed = f.param(self.llm.embed);
            parts.push(f.graph.gather(embed, &[self.vocab.sep()]));
            parts.push(r);
        }
        if !text.is_empty() {
            let embed = f.param(self.llm.embed);
            parts.push(f.graph.gather(embed, text));
        }
        let seq = f.graph.concat_rows(&parts);
        let len = f.graph.value(seq).rows();
        if len > self.config.llm.max_context {
            return Err(ModelError::ContextOverflow {
                len,
                max: self.config.llm.max_context,
            });
        }
        let pos = f.graph.constant(self.positions(len));
        Ok(f.graph.add(seq, pos))
    }

    /// Final-layer hidden states of the causal LM.
    fn llm_hidden(&self, f: &mut Forward, seq: Var) -> Var {
        let mut x = seq;
        for b in &self.llm.blocks {
            x = block_forward(f, x, b, self.config.llm.n_heads, true, self.lora_enabled);
        }
        let (g, b) = (f.param(self.llm.ln_f.gamma), f.param(self.llm.ln_f.beta));
        f.graph.layer_norm(x, g, b)
    }

    fn lm_head(&self, f: &mut Forward, hidden: Var) -> Var {
        dense(f, hidden, self.llm.head)
    }

    fn decode(&self, f: &mut Forward, h: Var) -> Var {
        two_layer(f, h, self.decoder)
    }

    fn check_mode(&self, reference: Option<&Tensor>) -> Result<()> {
        if self.config.mode == Mode::Fr && reference.is_none() {
            return Err(ModelError::MissingReference);
        }
        Ok(())
    }

    // ---- public tensor-level operations ------------------------------------

    /// Embeds `prompt` after the visual tokens and adds positional encodings.
    pub fn build_sequence(&self, tv: &Tensor, prompt: &[usize], mode: Mode, tv_ref: Option<&Tensor>) -> Result<Tensor> {
        if mode == Mode::Fr && tv_ref.is_none() {
            return Err(ModelError::MissingReference);
        }
        for &t in prompt {
            if t >= self.vocab.len() {
                return Err(ModelError::OutOfVocabulary(format!("#{t}")));
            }
        }
        let mut f = Forward::new(&self.store, Trainable::none());
        let a = f.graph.constant(tv.clone());
        let r = match (mode, tv_ref) {
            (Mode::Fr, Some(r)) => Some(f.graph.constant(r.clone())),
            _ => None,
        };
        let seq = self.assemble(&mut f, a, r, prompt)?;
        Ok(f.graph.value(seq).clone())
    }

    /// Per-position vocabulary logits and final hidden states.
    pub fn llm_forward(&self, seq: &Tensor) -> Result<(Tensor, Tensor)> {
        if seq.rows() > self.config.llm.max_context {
            return Err(ModelError::ContextOverflow {
                len: seq.rows(),
                max: self.config.llm.max_context,
            });
        }
        if seq.cols() != self.config.llm.d_model {
            return Err(ModelError::Shape(format!(
                "sequence width {} != {}",
                seq.cols(),
                self.config.llm.d_model
            )));
        }
        let mut f = Forward::new(&self.store, Trainable::none());
        let x = f.graph.constant(seq.clone());
        let h = self.llm_hidden(&mut f, x);
        let logits = self.lm_head(&mut f, h);
        Ok((f.graph.value(logits).clone(), f.graph.value(h).clone()))
    }

    /// Decoder output for one hidden vector (not clamped, not scaled).
    pub fn decoder_output(&self, h: &[f64]) -> f64 {
        let mut f = Forward::new(&self.store, Trainable::none());
        let x = f.graph.constant(Tensor::matrix(1, h.len(), h.to_vec()).unwrap());
        let y = self.decode(&mut f, x);
        f.graph.value(y).item()
    }

    /// `(decoder(h) − target/100)²`.
    pub fn stage2_loss(&self, h: &[f64], target_mos: f64) -> f64 {
        let d = self.decoder_output(h) - target_mos / 100.0;
        d * d
    }

    /// Layout of `[visual ; prompt ; response]` for the configured mode.
    pub fn sequence_layout(&self, response: &[usize]) -> SequenceLayout {
        let n = self.config.vision.n_patches();
        let n_ref = (self.config.mode == Mode::Fr).then_some(n);
        let mut text = self.prompt_ids.clone();
        text.extend_from_slice(response);
        self.layout(n, n_ref, &text, response.len())
    }

    // ---- graph-level passes used by training and inference -----------------

    /// Builds the forward pass for one sample, returning the loss leaf.
    pub(crate) fn sample_loss(
        &self,
        f: &mut Forward,
        feats: &Tensor,
        feats_ref: Option<&Tensor>,
        mos: f64,
        stage: Stage,
    ) -> Result<Var> {
        self.check_mode(feats_ref)?;
        let score = mos.round().clamp(0.0, 100.0) as u32;
        let response = self.vocab.score_sentence(score)?;
        let mut text = self.prompt_ids.clone();
        text.extend_from_slice(&response);
        let tv = self.project(f, feats);
        let tr = match (self.config.mode, feats_ref) {
            (Mode::Fr, Some(r)) => Some(self.project(f, r)),
            _ => None,
        };
        let seq = self.assemble(f, tv, tr, &text)?;
        let layout = self.sequence_layout(&response);
        let hidden = self.llm_hidden(f, seq);
        match stage {
            Stage::One => {
                // logits only for the rows that predict response tokens
                let rows: Vec<usize> = (layout.response_start - 1..layout.token_ids.len() - 1).collect();
                let picked = f.graph.gather(hidden, &rows);
                let logits = self.lm_head(f, picked);
                let targets: Vec<Option<usize>> = response.iter().map(|&t| Some(t)).collect();
                Ok(f.graph.cross_entropy(logits, &targets))
            }
            Stage::Two => {
                let at = pre_score_index(&layout, &self.vocab)?;
                let h = f.graph.gather(hidden, &[at]);
                let y = self.decode(f, h);
                Ok(f.graph.squared_error(y, mos / 100.0))
            }
        }
    }

    /// Decoder output from cached encoder features; `×100` is the score.
    pub(crate) fn raw_score(&self, feats: &Tensor, feats_ref: Option<&Tensor>) -> Result<f64> {
        self.check_mode(feats_ref)?;
        let mut f = Forward::new(&self.store, Trainable::none());
        let mut text = self.prompt_ids.clone();
        text.extend(self.vocab.score_prefix()?);
        let tv = self.project(&mut f, feats);
        let tr = match (self.config.mode, feats_ref) {
            (Mode::Fr, Some(r)) => Some(self.project(&mut f, r)),
            _ => None,
        };
        let seq = self.assemble(&mut f, tv, tr, &text)?;
        let hidden = self.llm_hidden(&mut f, seq);
        let last = f.graph.value(hidden).rows() - 1;
        let h = f.graph.gather(hidden, &[last]);
        let y = self.decode(&mut f, h);
        Ok(f.graph.value(y).item())
    }

    pub fn score_from_features(&self, feats: &Tensor, feats_ref: Option<&Tensor>) -> Result<f64> {
        Ok((100.0 * self.raw_score(feats, feats_ref)?).clamp(0.0, 100.0))
    }

    /// Score in `[0, 100]` from the decoder head.
    pub fn predict_score(&self, img: &ImageBuffer, reference: Option<&ImageBuffer>) -> Result<f64> {
        if !self.state.stage2 {
            log::warn!("predicting with a model whose score decoder has not been trained");
        }
        let feats = self.vision_features(img)?;
        let feats_ref = match (self.config.mode, reference) {
            (Mode::Fr, Some(r)) => Some(self.vision_features(r)?),
            (Mode::Fr, None) => return Err(ModelError::MissingReference),
            (Mode::Nr, _) => None,
        };
        self.score_from_features(&feats, feats_ref.as_ref())
    }

    /// Greedy decoding after the prompt, stopping at the period or `max_new` tokens.
    pub fn generate(&self, feats: &Tensor, feats_ref: Option<&Tensor>, max_new: usize) -> Result<Vec<usize>> {
        self.check_mode(feats_ref)?;
        let end = self.vocab.id(crate::vocab::SCORE_END)?;
        let mut f = Forward::new(&self.store, Trainable::none());
        let tv = self.project(&mut f, feats);
        let tr = match (self.config.mode, feats_ref) {
            (Mode::Fr, Some(r)) => Some(self.project(&mut f, r)),
            _ => None,
        };
        let tv_val = f.graph.value(tv).clone();
        let tr_val = tr.map(|r| f.graph.value(r).clone());
        let mut text = self.prompt_ids.clone();
        let mut out = Vec::new();
        for _ in 0..max_new {
            let mut g = Forward::new(&self.store, Trainable::none());
            let a = g.graph.constant(tv_val.clone());
            let r = tr_val.as_ref().map(|t| g.graph.constant(t.clone()));
            let seq = self.assemble(&mut g, a, r, &text)?;
            let hidden = self.llm_hidden(&mut g, seq);
            let last = g.graph.value(hidden).rows() - 1;
            let h = g.graph.gather(hidden, &[last]);
            let logits = self.lm_head(&mut g, h);
            let row = g.graph.value(logits).data();
            let next = argmax(row);
            out.push(next);
            text.push(next);
            if next == end {
                break;
            }
        }
        Ok(out)
    }

    /// Score read back from generated text; falls back to 50 when no digits appear.
    pub fn text_score(&self, feats: &Tensor, feats_ref: Option<&Tensor>) -> Result<f64> {
        let ids = self.generate(feats, feats_ref, crate::vocab::SCORE_PREFIX.len() + 4)?;
        Ok(match self.vocab.parse_score(&ids) {
            Some(s) => (s as f64).min(100.0),
            None => TEXT_FALLBACK_SCORE,
        })
    }
}

pub const TEXT_FALLBACK_SCORE: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    One,
    Two,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }

    pub fn trainable(self) -> Trainable {
        match self {
            Stage::One => Trainable::of(&[Group::Projector, Group::Lora, Group::LmHead]),
            Stage::Two => Trainable::of(&[Group::Projector, Group::Lora, Group::ScoreDecoder]),
        }
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Position of the token immediately before the first score digit.
pub fn pre_score_index(layout: &SequenceLayout, vocab: &Vocabulary) -> Result<usize> {
    layout
        .token_ids
        .iter()
        .enumerate()
        .skip(layout.response_start)
        .find(|(_, t)| t.is_some_and(|id| vocab.is_digit(id)))
        .map(|(i, _)| i)
        .filter(|&i| i > 0)
        .map(|i| i - 1)
        .ok_or(ModelError::NoScoreDigit)
}

/// Hidden state of the token right before the first score digit.
pub fn locate_pre_score_hidden(hidden: &Tensor, layout: &SequenceLayout, vocab: &Vocabulary) -> Result<Vec<f64>> {
    if hidden.rows() != layout.token_ids.len() {
        return Err(ModelError::Shape(format!(
            "{} hidden rows for {} positions",
            hidden.rows(),
            layout.token_ids.len()
        )));
    }
    Ok(hidden.row(pre_score_index(layout, vocab)?).to_vec())
}

/// Mean cross-entropy over positions with a label; `labels[t]` is the token
/// expected from the logits at row `t`.
pub fn stage1_loss(logits: &Tensor, labels: &[Option<usize>]) -> Result<f64> {
    if logits.rows() != labels.len() {
        return Err(ModelError::Shape(format!(
            "{} logit rows for {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    let v = logits.cols();
    if let Some(bad) = labels.iter().flatten().find(|&&t| t >= v) {
        return Err(ModelError::OutOfVocabulary(format!("#{bad}")));
    }
    let mut g = crate::graph::Graph::new();
    let l = g.constant(logits.clone());
    let loss = g.cross_entropy(l, labels);
    Ok(g.value(loss).item())
}

/// Labels aligned to the logits rows: the response token at position `q` is
/// predicted from row `q − 1`; every other row is masked.
pub fn response_labels(layout: &SequenceLayout) -> Vec<Option<usize>> {
    let n = layout.token_ids.len();
    let mut labels = vec![None; n];
    let start = layout.response_start.max(1);
    if start < n {
        labels[start - 1..n - 1].copy_from_slice(&layout.token_ids[start..]);
    }
    labels
}

// ---- parameter construction helpers ----------------------------------------

fn add_norm(s: &mut ParamStore, name: &str, group: Group, d: usize) -> Norm {
    Norm {
        gamma: s.add(format!("{name}.gamma"), group, Tensor::full(&[d], 1.0)),
        beta: s.add(format!("{name}.beta"), group, Tensor::zeros(&[d])),
    }
}

fn add_dense(s: &mut ParamStore, name: &str, group: Group, d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Dense {
    Dense {
        w: s.gaussian(format!("{name}.w"), group, &[d_out, d_in], std_for(d_in), rng),
        b: s.add(format!("{name}.b"), group, Tensor::zeros(&[d_out])),
    }
}

fn add_block(
    s: &mut ParamStore,
    name: &str,
    group: Group,
    d: usize,
    d_ff: usize,
    lora: Option<(usize, f64)>,
    rng: &mut ChaCha8Rng,
) -> Block {
    let ln1 = add_norm(s, &format!("{name}.ln1"), group, d);
    let attn = ATTN_NAMES.map(|n| s.gaussian(format!("{name}.attn.{n}"), group, &[d, d], std_for(d), rng));
    let lora = lora.map(|(rank, a_std)| {
        ATTN_NAMES.map(|n| LoraIds {
            a: s.gaussian(format!("{name}.attn.{n}.lora_a"), Group::Lora, &[d, rank], a_std, rng),
            b: s.add(
                format!("{name}.attn.{n}.lora_b"),
                Group::Lora,
                Tensor::zeros(&[rank, d]),
            ),
        })
    });
    let ln2 = add_norm(s, &format!("{name}.ln2"), group, d);
    let ff1 = add_dense(s, &format!("{name}.ff1"), group, d, d_ff, rng);
    let ff2 = add_dense(s, &format!("{name}.ff2"), group, d_ff, d, rng);
    Block {
        ln1,
        attn,
        lora,
        ln2,
        ff1,
        ff2,
    }
}

// ---- graph helpers -----------------------------------------------------------

fn dense(f: &mut Forward, x: Var, d: Dense) -> Var {
    let w = f.param(d.w);
    let b = f.param(d.b);
    let y = f.graph.matmul_t(x, w);
    f.graph.add_row(y, b)
}

fn two_layer(f: &mut Forward, x: Var, m: TwoLayer) -> Var {
    let h = dense(f, x, m.first);
    let h = f.graph.gelu(h);
    dense(f, h, m.second)
}

fn norm(f: &mut Forward, x: Var, n: Norm) -> Var {
    let g = f.param(n.gamma);
    let b = f.param(n.beta);
    f.graph.layer_norm(x, g, b)
}

/// Pre-LN transformer block.
fn block_forward(f: &mut Forward, x: Var, b: &Block, heads: usize, causal: bool, use_lora: bool) -> Var {
    let d = f.graph.value(x).cols();
    let dh = d / heads;
    let lora = |i: usize| if use_lora { b.lora.map(|l| l[i]) } else { None };
    let h = norm(f, x, b.ln1);
    let q = linear_lora(f, h, b.attn[0], lora(0));
    let k = linear_lora(f, h, b.attn[1], lora(1));
    let v = linear_lora(f, h, b.attn[2], lora(2));
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for i in 0..heads {
        let qi = f.graph.slice_cols(q, i * dh, dh);
        let ki = f.graph.slice_cols(k, i * dh, dh);
        let vi = f.graph.slice_cols(v, i * dh, dh);
        let s = f.graph.matmul_t(qi, ki);
        let s = f.graph.scale(s, scale);
        let p = f.graph.softmax(s, causal);
        outs.push(f.graph.matmul(p, vi));
    }
    let cat = if heads == 1 {
        outs[0]
    } else {
        f.graph.concat_cols(&outs)
    };
    let o = linear_lora(f, cat, b.attn[3], lora(3));
    let x = f.graph.add(x, o);
    let h = norm(f, x, b.ln2);
    let h = dense(f, h, b.ff1);
    let h = f.graph.gelu(h);
    let h = dense(f, h, b.ff2);
    f.graph.add(x, h)
}
