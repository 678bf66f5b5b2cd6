//! Gated recurrent unit and its bidirectional wrapper.
//!
//! Gate convention, with `h_0 = 0`:
//!
//! ```text
//! z_t = sigmoid(W_z x_t + U_z h_{t-1} + b_z)
//! r_t = sigmoid(W_r x_t + U_r h_{t-1} + b_r)
//! c_t = tanh(W_h x_t + U_h (r_t * h_{t-1}) + b_h)
//! h_t = (1 - z_t) * h_{t-1} + z_t * c_t
//! ```
//!
//! Gate parameters are stacked in `z, r, h` order: `w` is `[3H x I]`,
//! `u` is `[3H x H]`, `b` is `[3H]`.

use super::activation::sigmoid;
use super::{dot, gemm, init_uniform, MatRef, Params};
use crate::error::{IpsdError, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct GruCell {
    input_dim: usize,
    hidden: usize,
    /// Processes the sequence last-to-first when set.
    reverse: bool,
    pub w: Vec<f64>,
    pub u: Vec<f64>,
    pub b: Vec<f64>,
}

/// Per-sequence activations, indexed by sequence position.
#[derive(Clone, Debug)]
pub struct GruTape {
    len: usize,
    input: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    cand: Vec<f64>,
    rh: Vec<f64>,
}

impl GruCell {
    pub fn zeros(input_dim: usize, hidden: usize, reverse: bool) -> Self {
        GruCell {
            input_dim,
            hidden,
            reverse,
            w: vec![0.0; 3 * hidden * input_dim],
            u: vec![0.0; 3 * hidden * hidden],
            b: vec![0.0; 3 * hidden],
        }
    }

    pub fn init(input_dim: usize, hidden: usize, reverse: bool, rng: &mut Rng) -> Self {
        GruCell {
            input_dim,
            hidden,
            reverse,
            w: init_uniform(rng, 3 * hidden * input_dim, hidden),
            u: init_uniform(rng, 3 * hidden * hidden, hidden),
            b: init_uniform(rng, 3 * hidden, hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn order(&self, len: usize) -> Box<dyn Iterator<Item = usize>> {
        if self.reverse {
            Box::new((0..len).rev())
        } else {
            Box::new(0..len)
        }
    }

    /// Hidden states `[len x H]` in sequence order.
    pub fn forward_taped(&self, seq: &[f64]) -> Result<(Vec<f64>, GruTape)> {
        let (i_dim, h) = (self.input_dim, self.hidden);
        if seq.is_empty() || seq.len() % i_dim != 0 {
            return Err(IpsdError::invalid(format!(
                "GRU input of {} values is not a nonempty multiple of {i_dim}",
                seq.len()
            )));
        }
        let len = seq.len() / i_dim;
        let mut xw = Vec::with_capacity(len * 3 * h);
        for _ in 0..len {
            xw.extend_from_slice(&self.b);
        }
        gemm(
            1.0,
            MatRef::new(seq, len, i_dim),
            MatRef::t(&self.w, 3 * h, i_dim),
            1.0,
            &mut xw,
            3 * h,
        );

        let mut tape = GruTape {
            len,
            input: seq.to_vec(),
            h_prev: vec![0.0; len * h],
            z: vec![0.0; len * h],
            r: vec![0.0; len * h],
            cand: vec![0.0; len * h],
            rh: vec![0.0; len * h],
        };
        let mut out = vec![0.0; len * h];
        let mut state = vec![0.0; h];
        let (uz, rest) = self.u.split_at(h * h);
        let (ur, uh) = rest.split_at(h * h);
        for t in self.order(len) {
            let a = &xw[t * 3 * h..(t + 1) * 3 * h];
            let row = t * h..(t + 1) * h;
            tape.h_prev[row.clone()].copy_from_slice(&state);
            for j in 0..h {
                let zj = sigmoid(a[j] + dot(&uz[j * h..(j + 1) * h], &state));
                let rj = sigmoid(a[h + j] + dot(&ur[j * h..(j + 1) * h], &state));
                tape.z[t * h + j] = zj;
                tape.r[t * h + j] = rj;
                tape.rh[t * h + j] = rj * state[j];
            }
            let rh = &tape.rh[row.clone()];
            for j in 0..h {
                let c = (a[2 * h + j] + dot(&uh[j * h..(j + 1) * h], rh)).tanh();
                tape.cand[t * h + j] = c;
            }
            for j in 0..h {
                let zj = tape.z[t * h + j];
                state[j] = (1.0 - zj) * state[j] + zj * tape.cand[t * h + j];
            }
            out[row].copy_from_slice(&state);
        }
        Ok((out, tape))
    }

    pub fn forward(&self, seq: &[f64]) -> Result<Vec<f64>> {
        self.forward_taped(seq).map(|(o, _)| o)
    }

    /// Backpropagation through time. `grad_out` is `[len x H]` in sequence
    /// order; returns the input gradient `[len x I]`.
    pub fn backward(&self, tape: &GruTape, grad_out: &[f64], grads: &mut GruCell) -> Vec<f64> {
        let (i_dim, h, len) = (self.input_dim, self.hidden, tape.len);
        let (uz, rest) = self.u.split_at(h * h);
        let (ur, uh) = rest.split_at(h * h);
        // pre-activation gradients, [len x 3H] in z, r, h order
        let mut da = vec![0.0; len * 3 * h];
        let mut carry = vec![0.0; h];
        let mut drh = vec![0.0; h];
        let order: Vec<usize> = self.order(len).collect();
        for &t in order.iter().rev() {
            let at = |v: &[f64], j: usize| v[t * h + j];
            let dh: Vec<f64> = (0..h).map(|j| grad_out[t * h + j] + carry[j]).collect();
            let (daz, rest) = da[t * 3 * h..(t + 1) * 3 * h].split_at_mut(h);
            let (dar, dah) = rest.split_at_mut(h);
            for j in 0..h {
                let (z, c, hp) = (at(&tape.z, j), at(&tape.cand, j), at(&tape.h_prev, j));
                carry[j] = dh[j] * (1.0 - z);
                dah[j] = dh[j] * z * (1.0 - c * c);
                daz[j] = dh[j] * (c - hp) * z * (1.0 - z);
            }
            // d(r * h_prev) = U_h^T da_h
            drh.fill(0.0);
            for (k, &g) in dah.iter().enumerate() {
                for (d, w) in drh.iter_mut().zip(&uh[k * h..(k + 1) * h]) {
                    *d += w * g;
                }
            }
            for j in 0..h {
                let (r, hp) = (at(&tape.r, j), at(&tape.h_prev, j));
                carry[j] += drh[j] * r;
                dar[j] = drh[j] * hp * r * (1.0 - r);
            }
            for k in 0..h {
                let (gz, gr) = (daz[k], dar[k]);
                let (rz, rr) = (&uz[k * h..(k + 1) * h], &ur[k * h..(k + 1) * h]);
                for j in 0..h {
                    carry[j] += rz[j] * gz + rr[j] * gr;
                }
            }
        }

        // dU_{z,r} += da_{z,r}^T h_prev ; dU_h += da_h^T (r * h_prev)
        let (guz, rest) = grads.u.split_at_mut(h * h);
        let (gur, guh) = rest.split_at_mut(h * h);
        for (block, target, rhs) in [
            (0, guz, &tape.h_prev),
            (1, gur, &tape.h_prev),
            (2, guh, &tape.rh),
        ] {
            gemm(
                1.0,
                MatRef {
                    data: &da[block * h..],
                    rows: h,
                    cols: len,
                    rs: 1,
                    cs: 3 * h,
                },
                MatRef::new(rhs, len, h),
                1.0,
                target,
                h,
            );
        }
        gemm(
            1.0,
            MatRef::t(&da, len, 3 * h),
            MatRef::new(&tape.input, len, i_dim),
            1.0,
            &mut grads.w,
            i_dim,
        );
        for row in da.chunks_exact(3 * h) {
            for (gb, g) in grads.b.iter_mut().zip(row) {
                *gb += g;
            }
        }
        let mut dx = vec![0.0; len * i_dim];
        gemm(
            1.0,
            MatRef::new(&da, len, 3 * h),
            MatRef::new(&self.w, 3 * h, i_dim),
            0.0,
            &mut dx,
            i_dim,
        );
        dx
    }
}

impl Params<f64> for GruCell {
    fn params(&self) -> Vec<&[f64]> {
        vec![&self.w, &self.u, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w, &mut self.u, &mut self.b]
    }
}

/// Forward and backward GRUs over the same sequence; outputs are
/// concatenated per step as `[forward | backward]`, `[len x 2H]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BiGru {
    pub fwd: GruCell,
    pub bwd: GruCell,
}

#[derive(Clone, Debug)]
pub struct BiGruTape {
    fwd: GruTape,
    bwd: GruTape,
}

impl BiGru {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        BiGru {
            fwd: GruCell::zeros(input_dim, hidden, false),
            bwd: GruCell::zeros(input_dim, hidden, true),
        }
    }

    pub fn init(input_dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        let fwd = GruCell::init(input_dim, hidden, false, rng);
        let bwd = GruCell::init(input_dim, hidden, true, rng);
        BiGru { fwd, bwd }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.fwd.hidden
    }

    pub fn forward_taped(&self, seq: &[f64]) -> Result<(Vec<f64>, BiGruTape)> {
        let (hf, tf) = self.fwd.forward_taped(seq)?;
        let (hb, tb) = self.bwd.forward_taped(seq)?;
        let h = self.fwd.hidden;
        let mut out = Vec::with_capacity(hf.len() * 2);
        for (a, b) in hf.chunks_exact(h).zip(hb.chunks_exact(h)) {
            out.extend_from_slice(a);
            out.extend_from_slice(b);
        }
        Ok((out, BiGruTape { fwd: tf, bwd: tb }))
    }

    pub fn forward(&self, seq: &[f64]) -> Result<Vec<f64>> {
        self.forward_taped(seq).map(|(o, _)| o)
    }

    pub fn backward(&self, tape: &BiGruTape, grad_out: &[f64], grads: &mut BiGru) -> Vec<f64> {
        let h = self.fwd.hidden;
        let mut gf = Vec::with_capacity(grad_out.len() / 2);
        let mut gb = Vec::with_capacity(grad_out.len() / 2);
        for row in grad_out.chunks_exact(2 * h) {
            gf.extend_from_slice(&row[..h]);
            gb.extend_from_slice(&row[h..]);
        }
        let mut dx = self.fwd.backward(&tape.fwd, &gf, &mut grads.fwd);
        let dxb = self.bwd.backward(&tape.bwd, &gb, &mut grads.bwd);
        for (a, b) in dx.iter_mut().zip(dxb) {
            *a += b;
        }
        dx
    }
}

impl Params<f64> for BiGru {
    fn params(&self) -> Vec<&[f64]> {
        let mut p = self.fwd.params();
        p.extend(self.bwd.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.fwd.params_mut();
        p.extend(self.bwd.params_mut());
        p
    }
}
