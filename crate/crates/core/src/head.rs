//! Prediction head and reconstruction decoder.

use rand::Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// One-hidden-layer MLP: `relu(x W₁ + b₁) W₂ + b₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

fn fan_in_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    Tensor::uniform(&[rows, cols], 1.0 / (rows as f64).sqrt(), rng)
}

impl HeadParams {
    pub fn init<R: Rng + ?Sized>(
        d_in: usize,
        hidden: usize,
        out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if d_in == 0 || hidden == 0 || !(1..=2).contains(&out) {
            return Err(Error::contract(format!(
                "head dims must be >= 1 with out in {{1, 2}}, got {d_in}/{hidden}/{out}"
            )));
        }
        Ok(Self {
            w1: fan_in_uniform(d_in, hidden, rng),
            b1: Tensor::zeros(&[1, hidden]),
            w2: fan_in_uniform(hidden, out, rng),
            b2: Tensor::zeros(&[1, out]),
        })
    }

    pub fn d_in(&self) -> usize {
        self.w1.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.w2.cols()
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn bind(&self, g: &mut Graph) -> HeadVars {
        let [w1, b1, w2, b2] = self.tensors().map(|t| g.param(t.clone()));
        HeadVars { w1, b1, w2, b2 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl HeadVars {
    pub fn vars(&self) -> [Var; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }
}

/// `B × d_in` → `B × out` raw outputs (logit, or valence/arousal pair).
pub fn head_forward(g: &mut Graph, p: &HeadVars, x: Var) -> Result<Var> {
    let h = g.matmul(x, p.w1)?;
    let h = g.add_row(h, p.b1)?;
    let h = g.relu(h)?;
    let o = g.matmul(h, p.w2)?;
    g.add_row(o, p.b2)
}

/// Linear decoder from the fused embedding back to the concatenated final
/// modality states.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub w: Tensor,
    pub b: Tensor,
}

impl DecoderParams {
    pub fn init<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(Error::contract("decoder dims must be >= 1"));
        }
        Ok(Self {
            w: fan_in_uniform(d_in, d_out, rng),
            b: Tensor::zeros(&[1, d_out]),
        })
    }

    pub fn tensors(&self) -> [&Tensor; 2] {
        [&self.w, &self.b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.w, &mut self.b]
    }

    pub fn bind(&self, g: &mut Graph) -> DecoderVars {
        let [w, b] = self.tensors().map(|t| g.param(t.clone()));
        DecoderVars { w, b }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderVars {
    pub w: Var,
    pub b: Var,
}

impl DecoderVars {
    pub fn vars(&self) -> [Var; 2] {
        [self.w, self.b]
    }
}

pub fn decoder_forward(g: &mut Graph, p: &DecoderVars, fused: Var) -> Result<Var> {
    let o = g.matmul(fused, p.w)?;
    g.add_row(o, p.b)
}
