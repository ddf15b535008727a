use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::MetricReport;

/// Side-by-side comparison of several metric reports.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Provenance problems, e.g. reports computed on different datasets.
    pub warnings: Vec<String>,
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

pub fn comparison_table(reports: &[(String, MetricReport)]) -> ReportTable {
    let ns: BTreeSet<usize> = reports.iter().flat_map(|(_, r)| r.n_list.iter().copied()).collect();
    let mut columns: Vec<String> = ["run", "memory", "strategy", "layers", "trajectories", "SR", "ATE", "RPE", "SSIM", "PSNR"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for n in &ns {
        columns.push(format!("SSIM@{n}"));
        columns.push(format!("PSNR@{n}"));
    }
    let rows = reports
        .iter()
        .map(|(label, r)| {
            let a = &r.aggregate;
            let mut row = vec![
                label.clone(),
                r.memory_mode.name().to_owned(),
                r.strategy.name().to_string(),
                r.memory_layers.len().to_string(),
                a.n_trajectories.to_string(),
                fmt(Some(a.sr)),
                fmt(Some(a.ate)),
                fmt(Some(a.rpe)),
                fmt(a.ssim),
                fmt(a.psnr),
            ];
            for n in &ns {
                let k = n.to_string();
                row.push(fmt(a.ssim_at.get(&k).copied()));
                row.push(fmt(a.psnr_at.get(&k).copied()));
            }
            row
        })
        .collect();
    let mut warnings = Vec::new();
    let hashes: BTreeSet<&str> = reports.iter().map(|(_, r)| r.provenance.dataset_hash.as_str()).collect();
    if hashes.len() > 1 {
        warnings.push(format!(
            "WARNING: inputs were computed on {} different datasets; rows are not comparable",
            hashes.len()
        ));
    }
    let conv: BTreeSet<&str> = reports.iter().map(|(_, r)| r.ate_convention.as_str()).collect();
    if conv.len() > 1 {
        warnings.push("WARNING: inputs use different ATE conventions".into());
    }
    ReportTable { columns, rows, warnings }
}

impl ReportTable {
    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    /// Fixed-width text table, warnings first.
    pub fn to_text(&self) -> String {
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|i| self.rows.iter().map(|r| r[i].len()).chain([self.columns[i].len()]).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for w in &self.warnings {
            writeln!(out, "{w}").unwrap();
        }
        let line = |cells: &[String]| {
            cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect::<Vec<_>>().join("  ").trim_end().to_owned()
        };
        writeln!(out, "{}", line(&self.columns)).unwrap();
        writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  ")).unwrap();
        for r in &self.rows {
            writeln!(out, "{}", line(r)).unwrap();
        }
        out
    }
}
