use super::{gemm, init_uniform, MatRef, Params};
use crate::error::{IpsdError, Result};
use crate::rng::Rng;

/// Fully connected layer applied row-wise to a `[rows x in]` batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    in_dim: usize,
    out_dim: usize,
    /// `[out x in]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LinearTape {
    input: Vec<f64>,
    rows: usize,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn init(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        Linear {
            in_dim,
            out_dim,
            weight: init_uniform(rng, in_dim * out_dim, in_dim),
            bias: init_uniform(rng, out_dim, in_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward_taped(input).map(|(o, _)| o)
    }

    pub fn forward_taped(&self, input: &[f64]) -> Result<(Vec<f64>, LinearTape)> {
        if input.len() % self.in_dim != 0 {
            return Err(IpsdError::invalid(format!(
                "linear input of {} values is not a multiple of {}",
                input.len(),
                self.in_dim
            )));
        }
        let rows = input.len() / self.in_dim;
        let mut out = Vec::with_capacity(rows * self.out_dim);
        for _ in 0..rows {
            out.extend_from_slice(&self.bias);
        }
        gemm(
            1.0,
            MatRef::new(input, rows, self.in_dim),
            MatRef::t(&self.weight, self.out_dim, self.in_dim),
            1.0,
            &mut out,
            self.out_dim,
        );
        Ok((
            out,
            LinearTape {
                input: input.to_vec(),
                rows,
            },
        ))
    }

    pub fn backward(&self, tape: &LinearTape, grad_out: &[f64], grads: &mut Linear) -> Vec<f64> {
        let rows = tape.rows;
        gemm(
            1.0,
            MatRef::t(grad_out, rows, self.out_dim),
            MatRef::new(&tape.input, rows, self.in_dim),
            1.0,
            &mut grads.weight,
            self.in_dim,
        );
        for row in grad_out.chunks_exact(self.out_dim) {
            for (gb, g) in grads.bias.iter_mut().zip(row) {
                *gb += g;
            }
        }
        let mut dx = vec![0.0; rows * self.in_dim];
        gemm(
            1.0,
            MatRef::new(grad_out, rows, self.out_dim),
            MatRef::new(&self.weight, self.out_dim, self.in_dim),
            0.0,
            &mut dx,
            self.in_dim,
        );
        dx
    }
}

impl Params<f64> for Linear {
    fn params(&self) -> Vec<&[f64]> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weight, &mut self.bias]
    }
}
