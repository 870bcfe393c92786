//! Frame-level code/phone co-occurrence statistics.

mod cocluster;
mod heatmap;

pub use cocluster::{kmeans, spectral_cocluster, CoclusterOrdering};
pub use heatmap::{emit_heatmap, heatmap_csv, heatmap_ppm, permute_clip};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Phone × code count table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Contingency {
    num_phones: usize,
    num_codes: usize,
    counts: Vec<u64>,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
}

impl Contingency {
    pub fn zeros(num_phones: usize, num_codes: usize) -> Self {
        Self {
            num_phones,
            num_codes,
            counts: vec![0; num_phones * num_codes],
            row_labels: (0..num_phones).map(|p| p.to_string()).collect(),
            col_labels: (0..num_codes).map(|c| c.to_string()).collect(),
        }
    }

    pub fn from_counts(rows: &[Vec<u64>]) -> Result<Self> {
        let v = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != v) {
            return Err(Error::shape("ragged contingency rows"));
        }
        let mut c = Self::zeros(rows.len(), v);
        c.counts = rows.concat();
        Ok(c)
    }

    pub fn num_phones(&self) -> usize {
        self.num_phones
    }

    pub fn num_codes(&self) -> usize {
        self.num_codes
    }

    pub fn get(&self, phone: usize, code: usize) -> u64 {
        self.counts[phone * self.num_codes + code]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn column_sums(&self) -> Vec<u64> {
        let mut out = vec![0; self.num_codes];
        for row in self.counts.chunks(self.num_codes.max(1)) {
            for (o, &c) in out.iter_mut().zip(row) {
                *o += c;
            }
        }
        out
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.chunks(self.num_codes.max(1)).map(|r| r.iter().sum()).collect()
    }

    pub fn num_used_codes(&self) -> usize {
        self.column_sums().iter().filter(|&&c| c > 0).count()
    }

    /// Elementwise sum of two equally shaped tables.
    pub fn merge(&mut self, other: &Contingency) -> Result<()> {
        if (self.num_phones, self.num_codes) != (other.num_phones, other.num_codes) {
            return Err(Error::shape("contingency tables differ in shape"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn transpose(&self) -> Contingency {
        let mut t = Contingency::zeros(self.num_codes, self.num_phones);
        for p in 0..self.num_phones {
            for c in 0..self.num_codes {
                t.counts[c * self.num_phones + p] = self.get(p, c);
            }
        }
        t.row_labels = self.col_labels.clone();
        t.col_labels = self.row_labels.clone();
        t
    }
}

/// Counts every frame's (phone, code) pair.
pub fn accumulate_cooccurrence(
    ids: &[String],
    code_seqs: &[Vec<usize>],
    phone_seqs: &[Vec<usize>],
    num_phones: usize,
    num_codes: usize,
) -> Result<Contingency> {
    if ids.len() != code_seqs.len() || ids.len() != phone_seqs.len() {
        return Err(Error::shape("ids, code and phone sequence lists differ in length"));
    }
    let mut out = Contingency::zeros(num_phones, num_codes);
    for ((id, codes), phones) in ids.iter().zip(code_seqs).zip(phone_seqs) {
        if codes.len() != phones.len() {
            return Err(Error::Alignment {
                utterance: id.clone(),
                reason: format!("{} codes for {} phone labels", codes.len(), phones.len()),
            });
        }
        for (&c, &p) in codes.iter().zip(phones) {
            if p >= num_phones || c >= num_codes {
                return Err(Error::Alignment {
                    utterance: id.clone(),
                    reason: format!("pair (phone {p}, code {c}) outside {num_phones}×{num_codes}"),
                });
            }
            out.counts[p * num_codes + c] += 1;
        }
    }
    Ok(out)
}

/// Maximum-likelihood P(phone | code); unused codes give zero columns.
pub fn conditional_prob(cont: &Contingency) -> Tensor<f64> {
    let sums = cont.column_sums();
    let (p, v) = (cont.num_phones, cont.num_codes);
    let mut data = vec![0.0; p * v];
    for i in 0..p {
        for j in 0..v {
            if sums[j] > 0 {
                data[i * v + j] = cont.get(i, j) as f64 / sums[j] as f64;
            }
        }
    }
    Tensor::new(vec![p, v], data).expect("shape")
}

fn entropy(counts: &[u64], total: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let q = c as f64 / total;
            -q * q.ln()
        })
        .sum()
}

/// Mutual information normalized by the mean of the marginal entropies.
///
/// Two constant labelings carry no entropy at all; they are treated as
/// perfectly matched and score 1.
pub fn normalized_mutual_information(cont: &Contingency) -> Result<f64> {
    let total = cont.total();
    if total == 0 {
        return Err(Error::EmptyInput("contingency table has no counts".into()));
    }
    let n = total as f64;
    let rows = cont.row_sums();
    let cols = cont.column_sums();
    let mut mi = 0.0;
    for p in 0..cont.num_phones {
        for c in 0..cont.num_codes {
            let k = cont.get(p, c);
            if k > 0 {
                let k = k as f64;
                mi += k / n * (k * n / (rows[p] as f64 * cols[c] as f64)).ln();
            }
        }
    }
    let h = entropy(&rows, n) + entropy(&cols, n);
    if h == 0.0 {
        return Ok(1.0);
    }
    Ok((2.0 * mi / h).clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeStats {
    pub nmi: f64,
    pub num_used_codes: usize,
    /// Most frequent phone per code, `None` for unused codes.
    pub per_code_top_phone: Vec<Option<usize>>,
}

pub fn code_stats(cont: &Contingency) -> Result<CodeStats> {
    let per_code_top_phone = (0..cont.num_codes)
        .map(|c| {
            let mut best: Option<(usize, u64)> = None;
            for p in 0..cont.num_phones {
                let k = cont.get(p, c);
                if k > 0 && best.is_none_or(|(_, b)| k > b) {
                    best = Some((p, k));
                }
            }
            best.map(|(p, _)| p)
        })
        .collect();
    Ok(CodeStats {
        nmi: normalized_mutual_information(cont)?,
        num_used_codes: cont.num_used_codes(),
        per_code_top_phone,
    })
}

/// Code indices, one per line.
pub fn write_code_file(path: &Path, codes: &[usize]) -> Result<()> {
    let mut out = String::with_capacity(codes.len() * 4);
    for c in codes {
        out.push_str(&c.to_string());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub use crate::features::io::read_label_file as read_code_file;
