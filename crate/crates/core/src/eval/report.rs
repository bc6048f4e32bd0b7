//! Per-repeat metrics, their mean and standard deviation, and text output.

use std::fmt::Write as _;

use super::EvalProtocol;

#[derive(Debug, Clone, PartialEq)]
pub struct RepeatMetrics {
    /// `None` for m-way protocols, which report R@1 only.
    pub med_r: Option<f64>,
    /// `R@K` in percent, one per `protocol.recall_ranks` entry.
    pub recall: Vec<f64>,
    pub queries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub med_r: Option<f64>,
    pub recall: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub protocol: EvalProtocol,
    pub repeats: Vec<RepeatMetrics>,
    pub mean: Summary,
    /// Sample standard deviation (`n - 1`); zero for a single repeat.
    pub std: Summary,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl MetricsReport {
    pub fn new(protocol: EvalProtocol, repeats: Vec<RepeatMetrics>) -> Self {
        assert!(!repeats.is_empty(), "report needs at least one repeat");
        let med: Option<Vec<f64>> = repeats.iter().map(|r| r.med_r).collect();
        let (med_mean, med_std) = match med {
            Some(v) => {
                let (m, s) = mean_std(&v);
                (Some(m), Some(s))
            }
            None => (None, None),
        };
        let k = repeats[0].recall.len();
        let (rec_mean, rec_std) = (0..k)
            .map(|j| mean_std(&repeats.iter().map(|r| r.recall[j]).collect::<Vec<_>>()))
            .unzip();
        Self {
            protocol,
            repeats,
            mean: Summary { med_r: med_mean, recall: rec_mean },
            std: Summary { med_r: med_std, recall: rec_std },
        }
    }

    /// Mean `R@K` across repeats, if `k` was requested.
    pub fn mean_recall(&self, k: usize) -> Option<f64> {
        let j = self.protocol.recall_ranks.iter().position(|&r| r == k)?;
        Some(self.mean.recall[j])
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["repeat".to_string()];
        if self.mean.med_r.is_some() {
            h.push("medR".into());
        }
        h.extend(self.protocol.recall_ranks.iter().map(|k| format!("R@{k}")));
        h
    }

    fn cells(med_r: Option<f64>, recall: &[f64]) -> Vec<String> {
        med_r.iter().chain(recall).map(|v| format!("{v:.4}")).collect()
    }

    /// Body rows: one per repeat, then `mean` and `std`.
    pub fn rows(&self) -> Vec<Vec<String>> {
        let mut rows: Vec<Vec<String>> = self
            .repeats
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut row = vec![i.to_string()];
                row.extend(Self::cells(r.med_r, &r.recall));
                row
            })
            .collect();
        for (name, s) in [("mean", &self.mean), ("std", &self.std)] {
            let mut row = vec![name.to_string()];
            row.extend(Self::cells(s.med_r, &s.recall));
            rows.push(row);
        }
        rows
    }

    /// One-line description of the protocol, used as a TSV comment.
    pub fn protocol_line(&self) -> String {
        let p = &self.protocol;
        format!(
            "direction={} mode={} pool_size={} repeats={} seed={} dedup_images={}",
            p.direction, p.mode, p.pool_size, p.repeats, p.seed, p.dedup_images
        )
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("# {}\n", self.protocol_line());
        out.push_str(&self.header().join("\t"));
        out.push('\n');
        for row in self.rows() {
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{}\n", self.protocol_line());
        out.push_str(&align(&self.header(), &self.rows()));
        out
    }
}

/// Right-aligned columns separated by two spaces.
pub(super) fn align(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    for row in std::iter::once(header).chain(rows.iter().map(Vec::as_slice)) {
        let line: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(out, "{}", line.join("  "));
    }
    out
}
