//! Low-rank adapters on frozen weight matrices.
//!
//! Weights follow the `W: d×k` convention with inputs as rows, so a layer
//! computes `X Wᵀ`. An adapter adds `ΔW = A B` with `A: d×r`, `B: r×k`, and
//! the adapted product is evaluated as `X Wᵀ + (X Bᵀ) Aᵀ` so `A B` is never
//! formed.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{ModelError, Result};
use crate::graph::Var;
use crate::params::{Forward, ParamId};
use crate::tensor::Tensor;

pub const DEFAULT_RANK: usize = 4;
pub const DEFAULT_A_STD: f64 = 0.02;

pub fn check_rank(rank: usize, rows: usize, cols: usize) -> Result<()> {
    if rank == 0 || rank >= rows.min(cols) {
        return Err(ModelError::LoraRank { rank, rows, cols });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub target: String,
    pub a: Tensor,
    pub b: Tensor,
}

impl LoraAdapter {
    /// Fresh adapter: `A` small Gaussian, `B` zero, so `ΔW = 0`.
    pub fn new<R: Rng>(target: impl Into<String>, d: usize, k: usize, rank: usize, rng: &mut R) -> Result<Self> {
        check_rank(rank, d, k)?;
        let dist = Normal::new(0.0, DEFAULT_A_STD).unwrap();
        let a = (0..d * rank).map(|_| dist.sample(rng)).collect();
        Ok(Self {
            target: target.into(),
            a: Tensor::matrix(d, rank, a)?,
            b: Tensor::zeros(&[rank, k]),
        })
    }

    pub fn from_parts(target: impl Into<String>, a: Tensor, b: Tensor) -> Result<Self> {
        if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.rows() {
            return Err(ModelError::Shape(format!(
                "adapter A {:?} and B {:?} do not compose",
                a.shape(),
                b.shape()
            )));
        }
        check_rank(a.cols(), a.rows(), b.cols())?;
        Ok(Self {
            target: target.into(),
            a,
            b,
        })
    }

    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    /// Dense `A B`, for merging and for tests.
    pub fn delta(&self) -> Tensor {
        self.a.matmul(&self.b).expect("adapter shapes checked at construction")
    }
}

/// `x Wᵀ + (x Bᵀ) Aᵀ` for row inputs `x: n×k`.
pub fn lora_forward(w: &Tensor, adapter: &LoraAdapter, x: &Tensor) -> Result<Tensor> {
    if w.rows() != adapter.a.rows() || w.cols() != adapter.b.cols() {
        return Err(ModelError::Shape(format!(
            "adapter {}x{} does not fit weight {:?}",
            adapter.a.rows(),
            adapter.b.cols(),
            w.shape()
        )));
    }
    let base = x.matmul_t(w)?;
    let low = x.matmul_t(&adapter.b)?.matmul_t(&adapter.a)?;
    base.add(&low)
}

/// Parameter handles for an adapter stored in a `ParamStore`.
#[derive(Debug, Clone, Copy)]
pub struct LoraIds {
    pub a: ParamId,
    pub b: ParamId,
}

/// Graph version of [`lora_forward`]; `lora = None` is the plain linear map.
pub fn linear_lora(f: &mut Forward, x: Var, w: ParamId, lora: Option<LoraIds>) -> Var {
    let wv = f.param(w);
    let base = f.graph.matmul_t(x, wv);
    match lora {
        None => base,
        Some(ids) => {
            let b = f.param(ids.b);
            let a = f.param(ids.a);
            let xb = f.graph.matmul_t(x, b);
            let low = f.graph.matmul_t(xb, a);
            f.graph.add(base, low)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rank_must_be_strictly_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(LoraAdapter::new("w", 8, 4, 4, &mut rng).is_err());
        assert!(LoraAdapter::new("w", 8, 4, 0, &mut rng).is_err());
        assert!(LoraAdapter::new("w", 8, 4, 3, &mut rng).is_ok());
    }

    #[test]
    fn fresh_adapter_is_exact_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = Tensor::matrix(3, 5, (0..15).map(|i| (i as f64).sin()).collect()).unwrap();
        let x = Tensor::matrix(2, 5, (0..10).map(|i| (i as f64).cos()).collect()).unwrap();
        let ad = LoraAdapter::new("w", 3, 5, 2, &mut rng).unwrap();
        assert_eq!(lora_forward(&w, &ad, &x).unwrap(), x.matmul_t(&w).unwrap());
    }
}
