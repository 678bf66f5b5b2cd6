//! Same-padded 1D convolution, kernel 3, stride 1.
//!
//! Activations are channel-major: `[channels x len]`, row-major. The forward
//! pass lowers the input to a `[in_ch * 3 x len]` column matrix so both
//! passes become matrix products.
//!
//! A row may hold several independent sequences laid end to end (`segments`);
//! each one is zero-padded on its own, so a batch costs one matrix product
//! per layer instead of one per sequence.

use super::{dot, gemm_acc_inner_blocks, gemm_col_blocks, init_uniform, MatRef, Params, Real};
use crate::error::{IpsdError, Result};
use crate::rng::Rng;

pub const KERNEL: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d<T> {
    in_ch: usize,
    out_ch: usize,
    /// `[out_ch x in_ch x KERNEL]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// What the backward pass needs from a forward pass. A tape can be reused
/// across passes with [`Conv1d::forward_segments_into`], which keeps its
/// buffers allocated.
#[derive(Clone, Debug)]
pub struct ConvTape<T> {
    saved: Saved<T>,
    segments: Vec<usize>,
}

impl<T> Default for ConvTape<T> {
    fn default() -> Self {
        ConvTape {
            saved: Saved::Input(Vec::new()),
            segments: Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
enum Saved<T> {
    /// Lowered input, for layers computed as matrix products.
    Cols(Vec<T>),
    /// Raw input, for single-channel layers computed with shifted loops.
    Input(Vec<T>),
}

impl<T: Real> Conv1d<T> {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Conv1d {
            in_ch,
            out_ch,
            weight: vec![T::ZERO; out_ch * in_ch * KERNEL],
            bias: vec![T::ZERO; out_ch],
        }
    }

    pub fn init(in_ch: usize, out_ch: usize, rng: &mut Rng) -> Self {
        let fan_in = in_ch * KERNEL;
        let weight = init_uniform(rng, out_ch * in_ch * KERNEL, fan_in);
        let bias = init_uniform(rng, out_ch, fan_in);
        Conv1d {
            in_ch,
            out_ch,
            weight,
            bias,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_ch
    }

    pub fn out_channels(&self) -> usize {
        self.out_ch
    }

    pub fn w(&self, o: usize, i: usize, k: usize) -> T {
        self.weight[(o * self.in_ch + i) * KERNEL + k]
    }

    pub fn set_w(&mut self, o: usize, i: usize, k: usize, v: T) {
        self.weight[(o * self.in_ch + i) * KERNEL + k] = v;
    }

    /// Single-channel sides are cheaper as shifted loops than as matrix products.
    fn is_direct(&self) -> bool {
        self.in_ch.min(self.out_ch) == 1
    }

    fn check_input(&self, input: &[T]) -> Result<usize> {
        if input.is_empty() || input.len() % self.in_ch != 0 {
            return Err(IpsdError::invalid(format!(
                "conv input of {} values does not hold {} channels",
                input.len(),
                self.in_ch
            )));
        }
        Ok(input.len() / self.in_ch)
    }

    pub fn forward(&self, input: &[T]) -> Result<Vec<T>> {
        self.forward_taped(input).map(|(out, _)| out)
    }

    pub fn forward_taped(&self, input: &[T]) -> Result<(Vec<T>, ConvTape<T>)> {
        let len = self.check_input(input)?;
        self.forward_segments(input, &[len])
    }

    /// Forward pass over sequences of lengths `segments` stored back to back
    /// in every channel row.
    pub fn forward_segments(&self, input: &[T], segments: &[usize]) -> Result<(Vec<T>, ConvTape<T>)> {
        let mut out = Vec::new();
        let mut tape = ConvTape::default();
        self.forward_segments_into(input, segments, &mut out, &mut tape)?;
        Ok((out, tape))
    }

    /// [`Conv1d::forward_segments`] writing into `out` and `tape`, reusing
    /// their allocations.
    pub fn forward_segments_into(
        &self,
        input: &[T],
        segments: &[usize],
        out: &mut Vec<T>,
        tape: &mut ConvTape<T>,
    ) -> Result<()> {
        let len = self.check_input(input)?;
        if segments.contains(&0) || segments.iter().sum::<usize>() != len {
            return Err(IpsdError::invalid(format!(
                "segments {segments:?} do not tile a row of {len} values"
            )));
        }
        tape.segments.clear();
        tape.segments.extend_from_slice(segments);
        out.resize(self.out_ch * len, T::ZERO);
        for (row, &b) in out.chunks_exact_mut(len).zip(&self.bias) {
            row.fill(b);
        }
        let saved = std::mem::replace(&mut tape.saved, Saved::Input(Vec::new()));
        if self.is_direct() {
            for (o, dst) in out.chunks_exact_mut(len).enumerate() {
                for (i, src) in input.chunks_exact(len).enumerate() {
                    for k in 0..KERNEL {
                        shift_axpy(dst, src, self.w(o, i, k), k, segments);
                    }
                }
            }
            let mut buf = saved.into_vec();
            buf.clear();
            buf.extend_from_slice(input);
            tape.saved = Saved::Input(buf);
            return Ok(());
        }
        let mut cols = saved.into_vec();
        im2col_into(input, self.in_ch, len, segments, &mut cols);
        gemm_col_blocks(
            T::ONE,
            MatRef::new(&self.weight, self.out_ch, self.in_ch * KERNEL),
            MatRef::new(&cols, self.in_ch * KERNEL, len),
            T::ONE,
            out,
            len,
        );
        tape.saved = Saved::Cols(cols);
        Ok(())
    }

    /// Accumulates parameter gradients into `grads`; returns the input
    /// gradient when `need_input` is set.
    pub fn backward(
        &self,
        tape: &ConvTape<T>,
        grad_out: &[T],
        grads: &mut Conv1d<T>,
        need_input: bool,
    ) -> Option<Vec<T>> {
        let mut dx = Vec::new();
        let mut scratch = Vec::new();
        self.backward_into(tape, grad_out, grads, need_input.then_some(&mut dx), &mut scratch);
        need_input.then_some(dx)
    }

    /// [`Conv1d::backward`] writing the input gradient into `dx` (if given)
    /// and using `scratch` for intermediate columns.
    pub fn backward_into(
        &self,
        tape: &ConvTape<T>,
        grad_out: &[T],
        grads: &mut Conv1d<T>,
        dx: Option<&mut Vec<T>>,
        scratch: &mut Vec<T>,
    ) {
        let len: usize = tape.segments.iter().sum();
        let width = self.in_ch * KERNEL;
        let segs = &tape.segments;
        debug_assert_eq!(grad_out.len(), self.out_ch * len);
        for (gb, row) in grads.bias.iter_mut().zip(grad_out.chunks_exact(len)) {
            *gb += row.iter().copied().sum::<T>();
        }
        let cols = match &tape.saved {
            Saved::Cols(cols) => cols,
            Saved::Input(input) => {
                let mut dx = dx;
                if let Some(dx) = dx.as_mut() {
                    dx.clear();
                    dx.resize(self.in_ch * len, T::ZERO);
                }
                for (o, g) in grad_out.chunks_exact(len).enumerate() {
                    for (i, x) in input.chunks_exact(len).enumerate() {
                        for k in 0..KERNEL {
                            let idx = (o * self.in_ch + i) * KERNEL + k;
                            grads.weight[idx] += shift_dot(g, x, k, segs);
                            if let Some(dx) = dx.as_mut() {
                                // the adjoint of shift k is shift 2 - k
                                let dst = &mut dx[i * len..(i + 1) * len];
                                shift_axpy(dst, g, self.weight[idx], KERNEL - 1 - k, segs);
                            }
                        }
                    }
                }
                return;
            }
        };
        gemm_acc_inner_blocks(
            MatRef::new(grad_out, self.out_ch, len),
            MatRef::t(cols, width, len),
            &mut grads.weight,
            width,
        );
        let Some(dx) = dx else {
            return;
        };
        scratch.resize(width * len, T::ZERO);
        gemm_col_blocks(
            T::ONE,
            MatRef::t(&self.weight, self.out_ch, width),
            MatRef::new(grad_out, self.out_ch, len),
            T::ZERO,
            scratch,
            len,
        );
        col2im_into(scratch, self.in_ch, len, &tape.segments, dx);
    }
}

impl<T> Saved<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            Saved::Cols(v) | Saved::Input(v) => v,
        }
    }
}

/// `dst[t] += w * src[t + k - 1]` within each segment.
fn shift_axpy<T: Real>(dst: &mut [T], src: &[T], w: T, k: usize, segments: &[usize]) {
    let mut start = 0;
    for &n in segments {
        let (d, x) = (&mut dst[start..start + n], &src[start..start + n]);
        let (d, x) = match k {
            0 => (&mut d[1..], &x[..n - 1]),
            1 => (d, x),
            _ => (&mut d[..n - 1], &x[1..]),
        };
        for (a, &b) in d.iter_mut().zip(x) {
            *a += w * b;
        }
        start += n;
    }
}

/// `sum_t g[t] * x[t + k - 1]` within each segment.
fn shift_dot<T: Real>(g: &[T], x: &[T], k: usize, segments: &[usize]) -> T {
    let mut acc = T::ZERO;
    let mut start = 0;
    for &n in segments {
        let (g, x) = (&g[start..start + n], &x[start..start + n]);
        acc += match k {
            0 => dot(&g[1..], &x[..n - 1]),
            1 => dot(g, x),
            _ => dot(&g[..n - 1], &x[1..]),
        };
        start += n;
    }
    acc
}

/// `cols[(i*3 + k)][t] = input[i][t + k - 1]`, zero outside the segment
/// containing `t`.
fn im2col_into<T: Real>(input: &[T], in_ch: usize, len: usize, segments: &[usize], cols: &mut Vec<T>) {
    cols.resize(in_ch * KERNEL * len, T::ZERO);
    for i in 0..in_ch {
        let row = &input[i * len..(i + 1) * len];
        let base = i * KERNEL * len;
        let mut start = 0;
        for &n in segments {
            let src = &row[start..start + n];
            let (b0, b1, b2) = (base + start, base + len + start, base + 2 * len + start);
            // k = 0: shifted right by one
            cols[b0] = T::ZERO;
            cols[b0 + 1..b0 + n].copy_from_slice(&src[..n - 1]);
            cols[b1..b1 + n].copy_from_slice(src);
            // k = 2: shifted left by one
            cols[b2..b2 + n - 1].copy_from_slice(&src[1..]);
            cols[b2 + n - 1] = T::ZERO;
            start += n;
        }
    }
}

fn col2im_into<T: Real>(dcols: &[T], in_ch: usize, len: usize, segments: &[usize], out: &mut Vec<T>) {
    out.resize(in_ch * len, T::ZERO);
    for i in 0..in_ch {
        let dst = &mut out[i * len..(i + 1) * len];
        let base = i * KERNEL * len;
        let (c0, rest) = dcols[base..base + KERNEL * len].split_at(len);
        let (c1, c2) = rest.split_at(len);
        dst.copy_from_slice(c1);
        let mut start = 0;
        for &n in segments {
            let end = start + n;
            for t in start..end - 1 {
                dst[t] += c0[t + 1];
                dst[t + 1] += c2[t];
            }
            start = end;
        }
    }
}

impl<T: Real> Params<T> for Conv1d<T> {
    fn params(&self) -> Vec<&[T]> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        vec![&mut self.weight, &mut self.bias]
    }
}
