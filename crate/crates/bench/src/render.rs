//! Markdown rendering of evaluation reports.

use harmony_core::EvalReport;

use crate::evaluate::SubsetFilter;

pub const UNDEFINED: &str = "—";

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |x| format!("{x:.4}"))
}

/// Metric rows against {All, NGIHA, GIHA} × {SRCC, KRCC, PLCC} columns, padded
/// so the pipes line up in a monospace view.
pub fn render_markdown(report: &EvalReport) -> String {
    let mut header = vec!["Metric".to_string()];
    for s in SubsetFilter::ALL {
        let label = match s {
            SubsetFilter::All => "All",
            other => other.name(),
        };
        for c in ["SRCC", "KRCC", "PLCC"] {
            header.push(format!("{label} {c}"));
        }
    }
    let mut rows = vec![header];
    for (metric, subsets) in &report.cells {
        let mut row = vec![metric.clone()];
        for s in SubsetFilter::ALL {
            let cell = subsets.get(s.name());
            row.push(fmt(cell.and_then(|c| c.srcc)));
            row.push(fmt(cell.and_then(|c| c.krcc)));
            row.push(fmt(cell.and_then(|c| c.plcc)));
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
        .collect();
    let line = |r: &[String]| {
        let cells: Vec<String> = r
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        format!("| {} |\n", cells.join(" | "))
    };
    let mut out = line(&rows[0]);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&format!("|-{}-|\n", rule.join("-|-")));
    for r in &rows[1..] {
        out.push_str(&line(r));
    }
    out
}

/// Markdown table plus the machine-readable JSON.
pub fn render_report(report: &EvalReport) -> harmony_core::Result<(String, String)> {
    Ok((render_markdown(report), report.to_json()?))
}
