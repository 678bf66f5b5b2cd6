//! Signals, window grids and within-window partitions.
//!
//! A signal of length `L` is cut into `L / W` non-overlapping windows. Each
//! window is split into two halves of `W / 2` samples by choosing one entry of
//! the [`PartitionCatalog`]; concatenating the halves window by window gives
//! the sub-signal pair used for self-supervised training.

use serde::{Deserialize, Serialize};

use crate::error::{IpsdError, Result};

/// Largest supported window length. `C(14, 7) / 2 = 1716` arms is already
/// beyond what the policy head or the bandit can explore.
pub const MAX_WINDOW_LEN: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    samples: Vec<f64>,
    sample_rate_hz: f64,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(IpsdError::invalid("signal must contain at least one sample"));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(IpsdError::invalid(format!(
                "sample rate must be positive and finite, got {sample_rate_hz}"
            )));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(IpsdError::invalid(format!("sample {i} is not finite")));
        }
        Ok(Signal {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Same sample rate, new samples.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Signal> {
        Signal::new(samples, self.sample_rate_hz)
    }

    /// Drop trailing samples so the length is a multiple of `window_len`.
    pub fn truncated_to_multiple(&self, window_len: usize) -> Result<Signal> {
        let keep = self.len() - self.len() % window_len.max(1);
        if keep == 0 {
            return Err(IpsdError::invalid(format!(
                "signal of length {} is shorter than one window ({window_len})",
                self.len()
            )));
        }
        self.with_samples(self.samples[..keep].to_vec())
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }
}

/// Non-overlapping windows of length `window_len` over a signal of length `signal_len`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowGrid {
    signal_len: usize,
    window_len: usize,
}

impl WindowGrid {
    pub fn new(signal_len: usize, window_len: usize) -> Result<Self> {
        if window_len < 2 || window_len % 2 != 0 {
            return Err(IpsdError::invalid(format!(
                "window length must be even and at least 2, got {window_len}"
            )));
        }
        if signal_len == 0 || signal_len % window_len != 0 {
            return Err(IpsdError::invalid(format!(
                "window length {window_len} does not divide signal length {signal_len}"
            )));
        }
        Ok(WindowGrid {
            signal_len,
            window_len,
        })
    }

    pub fn for_signal(signal: &Signal, window_len: usize) -> Result<Self> {
        WindowGrid::new(signal.len(), window_len)
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn num_windows(&self) -> usize {
        self.signal_len / self.window_len
    }

    pub fn half_len(&self) -> usize {
        self.signal_len / 2
    }
}

/// All ways to split a window into two halves, one entry per complement pair.
///
/// Each entry is the half that contains index 0, stored as ascending indices.
/// Entries are sorted lexicographically, so entry `i` is the same partition in
/// every run and can serve as a stable class or arm id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionCatalog {
    window_len: usize,
    entries: Vec<Vec<usize>>,
    complements: Vec<Vec<usize>>,
}

impl PartitionCatalog {
    pub fn enumerate(window_len: usize) -> Result<Self> {
        if window_len < 2 || window_len % 2 != 0 || window_len > MAX_WINDOW_LEN {
            return Err(IpsdError::invalid(format!(
                "window length must be even and in [2, {MAX_WINDOW_LEN}], got {window_len}"
            )));
        }
        let half = window_len / 2;
        // Lexicographic combinations of {1..W-1} choose half-1, each prefixed with 0.
        let mut entries = Vec::new();
        let mut rest: Vec<usize> = (1..half).collect();
        loop {
            let mut entry = Vec::with_capacity(half);
            entry.push(0);
            entry.extend_from_slice(&rest);
            entries.push(entry);
            if !next_combination(&mut rest, window_len - 1) {
                break;
            }
        }
        let complements = entries
            .iter()
            .map(|e| (0..window_len).filter(|i| !e.contains(i)).collect())
            .collect();
        Ok(PartitionCatalog {
            window_len,
            entries,
            complements,
        })
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Vec<usize>] {
        &self.entries
    }

    pub fn entry(&self, idx: usize) -> &[usize] {
        &self.entries[idx]
    }

    pub fn complement(&self, idx: usize) -> &[usize] {
        &self.complements[idx]
    }

    pub fn index_of(&self, subset: &[usize]) -> Option<usize> {
        self.entries.binary_search_by(|e| e.as_slice().cmp(subset)).ok()
    }

    /// Index of the even-position subset `{0, 2, ..., W-2}`.
    pub fn interleaved_index(&self) -> usize {
        let even: Vec<usize> = (0..self.window_len).step_by(2).collect();
        self.index_of(&even)
            .expect("catalog always contains the interleaved subset")
    }
}

/// Advance `comb` (ascending values in `1..=max`) to the next combination in
/// lexicographic order. Returns false after the last one.
fn next_combination(comb: &mut [usize], max: usize) -> bool {
    let k = comb.len();
    for i in (0..k).rev() {
        if comb[i] < max - (k - 1 - i) {
            comb[i] += 1;
            for j in i + 1..k {
                comb[j] = comb[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// One catalog index per window.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PartitionChoice(Vec<usize>);

impl PartitionChoice {
    pub fn new(indices: Vec<usize>) -> Self {
        PartitionChoice(indices)
    }

    /// Every window uses catalog entry `entry`.
    pub fn uniform(grid: &WindowGrid, entry: usize) -> Self {
        PartitionChoice(vec![entry; grid.num_windows()])
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn validate(&self, signal_len: usize, catalog: &PartitionCatalog) -> Result<()> {
        let w = catalog.window_len();
        if signal_len % w != 0 {
            return Err(IpsdError::invalid(format!(
                "signal length {signal_len} is not a multiple of the window length {w}"
            )));
        }
        if self.0.len() != signal_len / w {
            return Err(IpsdError::invalid(format!(
                "choice has {} windows, signal has {}",
                self.0.len(),
                signal_len / w
            )));
        }
        if let Some(&bad) = self.0.iter().find(|&&i| i >= catalog.len()) {
            return Err(IpsdError::invalid(format!(
                "catalog index {bad} out of range (catalog has {} entries)",
                catalog.len()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubSignalPair {
    pub left: Signal,
    pub right: Signal,
}

impl SubSignalPair {
    pub fn new(left: Signal, right: Signal) -> Result<Self> {
        if left.len() != right.len() {
            return Err(IpsdError::invalid(format!(
                "sub-signal lengths differ: {} vs {}",
                left.len(),
                right.len()
            )));
        }
        Ok(SubSignalPair { left, right })
    }

    pub fn swapped(&self) -> SubSignalPair {
        SubSignalPair {
            left: self.right.clone(),
            right: self.left.clone(),
        }
    }
}

/// Every window takes the even-index half `{0, 2, ..., W-2}`.
pub fn interleaved_choice(grid: &WindowGrid, catalog: &PartitionCatalog) -> Result<PartitionChoice> {
    if grid.window_len() != catalog.window_len() {
        return Err(IpsdError::invalid(format!(
            "grid window {} does not match catalog window {}",
            grid.window_len(),
            catalog.window_len()
        )));
    }
    Ok(PartitionChoice::uniform(grid, catalog.interleaved_index()))
}

/// Gather left/right halves from raw samples. Lengths must already be validated.
pub(crate) fn split_samples<T: Copy>(
    samples: &[T],
    choice: &PartitionChoice,
    catalog: &PartitionCatalog,
) -> (Vec<T>, Vec<T>) {
    let w = catalog.window_len();
    let mut left = Vec::with_capacity(samples.len() / 2);
    let mut right = Vec::with_capacity(samples.len() / 2);
    for (window, &idx) in samples.chunks_exact(w).zip(choice.indices()) {
        left.extend(catalog.entry(idx).iter().map(|&i| window[i]));
        right.extend(catalog.complement(idx).iter().map(|&i| window[i]));
    }
    (left, right)
}

/// Scatter halves back to their window positions (inverse of [`split_samples`]).
pub(crate) fn merge_samples<T: Copy + Default>(
    left: &[T],
    right: &[T],
    choice: &PartitionChoice,
    catalog: &PartitionCatalog,
) -> Vec<T> {
    let w = catalog.window_len();
    let h = w / 2;
    let mut out = vec![T::default(); left.len() + right.len()];
    for (k, &idx) in choice.indices().iter().enumerate() {
        let window = &mut out[k * w..(k + 1) * w];
        for (j, &i) in catalog.entry(idx).iter().enumerate() {
            window[i] = left[k * h + j];
        }
        for (j, &i) in catalog.complement(idx).iter().enumerate() {
            window[i] = right[k * h + j];
        }
    }
    out
}

pub fn apply_partition(
    signal: &Signal,
    choice: &PartitionChoice,
    catalog: &PartitionCatalog,
) -> Result<SubSignalPair> {
    choice.validate(signal.len(), catalog)?;
    let (left, right) = split_samples(signal.samples(), choice, catalog);
    Ok(SubSignalPair {
        left: signal.with_samples(left)?,
        right: signal.with_samples(right)?,
    })
}

pub fn merge_partition(
    pair: &SubSignalPair,
    choice: &PartitionChoice,
    catalog: &PartitionCatalog,
) -> Result<Signal> {
    if pair.left.len() != pair.right.len() {
        return Err(IpsdError::invalid("sub-signal lengths differ"));
    }
    let total = pair.left.len() + pair.right.len();
    choice.validate(total, catalog)?;
    let merged = merge_samples(pair.left.samples(), pair.right.samples(), choice, catalog);
    pair.left.with_samples(merged)
}

/// The partition operator for one side: `project(s, .., Left)` equals
/// `apply_partition(s, ..).left`.
pub fn project(
    signal: &Signal,
    choice: &PartitionChoice,
    catalog: &PartitionCatalog,
    side: Side,
) -> Result<Signal> {
    choice.validate(signal.len(), catalog)?;
    let w = catalog.window_len();
    let mut out = Vec::with_capacity(signal.len() / 2);
    for (window, &idx) in signal.samples().chunks_exact(w).zip(choice.indices()) {
        let subset = match side {
            Side::Left => catalog.entry(idx),
            Side::Right => catalog.complement(idx),
        };
        out.extend(subset.iter().map(|&i| window[i]));
    }
    signal.with_samples(out)
}

/// `||x^l - x^r||^2` for the halves a choice extracts from `clean`.
pub fn clean_mismatch(
    clean: &Signal,
    choice: &PartitionChoice,
    catalog: &PartitionCatalog,
) -> Result<f64> {
    let pair = apply_partition(clean, choice, catalog)?;
    Ok(pair
        .left
        .samples()
        .iter()
        .zip(pair.right.samples())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// `||x^l - x^r||^2 + ||x^r - x^l||^2`, the clean residual the two-sided
/// N2N loss cannot remove. Twice [`clean_mismatch`].
pub fn symmetric_clean_mismatch(
    clean: &Signal,
    choice: &PartitionChoice,
    catalog: &PartitionCatalog,
) -> Result<f64> {
    Ok(2.0 * clean_mismatch(clean, choice, catalog)?)
}
