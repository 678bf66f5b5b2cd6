//! Row-wise categorical distributions parameterized by logits.

use rand::Rng as _;

use crate::error::{IpsdError, Result};
use crate::rng::Rng;

/// A `[rows x classes]` logit matrix; each row is an independent categorical.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits {
    rows: usize,
    classes: usize,
    values: Vec<f64>,
}

impl Logits {
    pub fn new(values: Vec<f64>, rows: usize, classes: usize) -> Result<Self> {
        if classes == 0 || values.len() != rows * classes {
            return Err(IpsdError::invalid(format!(
                "{} logits do not form {rows} rows of {classes} classes",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(IpsdError::invalid("logits must be finite"));
        }
        Ok(Logits {
            rows,
            classes,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.classes..(r + 1) * self.classes]
    }

    /// Log-probabilities, row by row.
    pub fn log_probs(&self) -> Vec<f64> {
        self.values
            .chunks_exact(self.classes)
            .flat_map(log_softmax)
            .collect()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs().into_iter().map(f64::exp).collect()
    }

    /// Draw one class per row by inverting the row's CDF.
    pub fn sample(&self, rng: &mut Rng) -> (Vec<usize>, f64) {
        let mut picks = Vec::with_capacity(self.rows);
        let mut logp = 0.0;
        for row in self.values.chunks_exact(self.classes) {
            let lp = log_softmax(row);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = self.classes - 1;
            for (c, l) in lp.iter().enumerate() {
                acc += l.exp();
                if u < acc {
                    pick = c;
                    break;
                }
            }
            // a zero-probability tail class can only be reached through
            // rounding; fall back to the last class with mass
            while lp[pick] == f64::NEG_INFINITY && pick > 0 {
                pick -= 1;
            }
            logp += lp[pick];
            picks.push(pick);
        }
        (picks, logp)
    }

    /// Joint log-probability of one class per row.
    pub fn log_prob_of(&self, picks: &[usize]) -> Result<f64> {
        if picks.len() != self.rows {
            return Err(IpsdError::invalid(format!(
                "{} picks for {} rows",
                picks.len(),
                self.rows
            )));
        }
        let mut total = 0.0;
        for (row, &c) in self.values.chunks_exact(self.classes).zip(picks) {
            if c >= self.classes {
                return Err(IpsdError::invalid(format!("class {c} out of range")));
            }
            total += log_softmax(row)[c];
        }
        Ok(total)
    }

    /// Most likely class per row; ties go to the lowest index.
    pub fn argmax(&self) -> Vec<usize> {
        self.values
            .chunks_exact(self.classes)
            .map(|row| {
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }

    /// Gradient with respect to the logits of `sum_b weight_b * log p(picks_b)`:
    /// row `r` receives `sum_b weight_b * (onehot(picks_b[r]) - p_r)`.
    pub fn score_gradient(&self, batch: &[(&[usize], f64)]) -> Vec<f64> {
        let probs = self.probs();
        let mut g = vec![0.0; self.values.len()];
        for &(picks, w) in batch {
            debug_assert_eq!(picks.len(), self.rows);
            for (r, &c) in picks.iter().enumerate() {
                let base = r * self.classes;
                for k in 0..self.classes {
                    g[base + k] -= w * probs[base + k];
                }
                g[base + c] += w;
            }
        }
        g
    }
}

/// Numerically stable `log softmax`.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}
