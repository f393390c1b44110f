//! Single-layer GRU sequence encoders.
//!
//! Cell convention (update gate weights the candidate):
//!
//! ```text
//! r = σ(x W_r + h U_r + b_r)
//! z = σ(x W_z + h U_z + b_z)
//! ĥ = tanh(x W_h + (r ⊙ h) U_h + b_h)
//! h' = (1 - z) ⊙ h + z ⊙ ĥ
//! ```
//!
//! Inputs are batched row-wise: each timestep is a `B × d_in` matrix and
//! each hidden state a `B × d_h` matrix.

use rand::Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::data::FeatureSequence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_r: Tensor,
    pub w_z: Tensor,
    pub w_h: Tensor,
    pub u_r: Tensor,
    pub u_z: Tensor,
    pub u_h: Tensor,
    pub b_r: Tensor,
    pub b_z: Tensor,
    pub b_h: Tensor,
}

pub const GRU_TENSOR_NAMES: [&str; 9] = [
    "w_r", "w_z", "w_h", "u_r", "u_z", "u_h", "b_r", "b_z", "b_h",
];

impl GruParams {
    /// Weights `~ Uniform(-1/√d_h, 1/√d_h)`, biases zero.
    pub fn init<R: Rng + ?Sized>(d_in: usize, d_h: usize, rng: &mut R) -> Result<Self> {
        if d_in == 0 || d_h == 0 {
            return Err(Error::contract(format!(
                "GRU dims must be >= 1, got d_in={d_in}, d_h={d_h}"
            )));
        }
        let s = 1.0 / (d_h as f64).sqrt();
        Ok(Self {
            w_r: Tensor::uniform(&[d_in, d_h], s, rng),
            w_z: Tensor::uniform(&[d_in, d_h], s, rng),
            w_h: Tensor::uniform(&[d_in, d_h], s, rng),
            u_r: Tensor::uniform(&[d_h, d_h], s, rng),
            u_z: Tensor::uniform(&[d_h, d_h], s, rng),
            u_h: Tensor::uniform(&[d_h, d_h], s, rng),
            b_r: Tensor::zeros(&[1, d_h]),
            b_z: Tensor::zeros(&[1, d_h]),
            b_h: Tensor::zeros(&[1, d_h]),
        })
    }

    /// All-zero parameters.
    pub fn zeros(d_in: usize, d_h: usize) -> Self {
        Self {
            w_r: Tensor::zeros(&[d_in, d_h]),
            w_z: Tensor::zeros(&[d_in, d_h]),
            w_h: Tensor::zeros(&[d_in, d_h]),
            u_r: Tensor::zeros(&[d_h, d_h]),
            u_z: Tensor::zeros(&[d_h, d_h]),
            u_h: Tensor::zeros(&[d_h, d_h]),
            b_r: Tensor::zeros(&[1, d_h]),
            b_z: Tensor::zeros(&[1, d_h]),
            b_h: Tensor::zeros(&[1, d_h]),
        }
    }

    pub fn d_in(&self) -> usize {
        self.w_r.rows()
    }

    pub fn d_h(&self) -> usize {
        self.w_r.cols()
    }

    pub fn tensors(&self) -> [&Tensor; 9] {
        [
            &self.w_r, &self.w_z, &self.w_h, &self.u_r, &self.u_z, &self.u_h, &self.b_r, &self.b_z,
            &self.b_h,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 9] {
        [
            &mut self.w_r,
            &mut self.w_z,
            &mut self.w_h,
            &mut self.u_r,
            &mut self.u_z,
            &mut self.u_h,
            &mut self.b_r,
            &mut self.b_z,
            &mut self.b_h,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let (d_in, d_h) = (self.d_in(), self.d_h());
        let want: [[usize; 2]; 9] = [
            [d_in, d_h],
            [d_in, d_h],
            [d_in, d_h],
            [d_h, d_h],
            [d_h, d_h],
            [d_h, d_h],
            [1, d_h],
            [1, d_h],
            [1, d_h],
        ];
        for ((t, w), name) in self.tensors().iter().zip(want).zip(GRU_TENSOR_NAMES) {
            if t.shape() != w {
                return Err(Error::Dimension {
                    op: name,
                    lhs: t.shape().to_vec(),
                    rhs: w.to_vec(),
                });
            }
        }
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph) -> GruVars {
        let [w_r, w_z, w_h, u_r, u_z, u_h, b_r, b_z, b_h] =
            self.tensors().map(|t| g.param(t.clone()));
        GruVars {
            w_r,
            w_z,
            w_h,
            u_r,
            u_z,
            u_h,
            b_r,
            b_z,
            b_h,
        }
    }
}

/// GRU parameters as graph leaves.
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_r: Var,
    pub w_z: Var,
    pub w_h: Var,
    pub u_r: Var,
    pub u_z: Var,
    pub u_h: Var,
    pub b_r: Var,
    pub b_z: Var,
    pub b_h: Var,
}

impl GruVars {
    pub fn vars(&self) -> [Var; 9] {
        [
            self.w_r, self.w_z, self.w_h, self.u_r, self.u_z, self.u_h, self.b_r, self.b_z,
            self.b_h,
        ]
    }
}

/// Hidden-state sequence and final state of one encoder pass.
#[derive(Debug, Clone)]
pub struct ModalityEncoding {
    /// One `B × d_h` node per timestep.
    pub steps: Vec<Var>,
    pub last: Var,
}

fn gate(g: &mut Graph, x: Var, w: Var, h: Var, u: Var, b: Var) -> Result<Var> {
    let xw = g.matmul(x, w)?;
    let hu = g.matmul(h, u)?;
    let s = g.add(xw, hu)?;
    g.add_row(s, b)
}

pub fn gru_cell(g: &mut Graph, p: &GruVars, x: Var, h: Var) -> Result<Var> {
    let r = gate(g, x, p.w_r, h, p.u_r, p.b_r)?;
    let r = g.sigmoid(r)?;
    let z = gate(g, x, p.w_z, h, p.u_z, p.b_z)?;
    let z = g.sigmoid(z)?;
    let rh = g.mul(r, h)?;
    let cand = gate(g, x, p.w_h, rh, p.u_h, p.b_h)?;
    let cand = g.tanh(cand)?;
    // h' = h + z ⊙ (ĥ - h)
    let diff = g.sub(cand, h)?;
    let step = g.mul(z, diff)?;
    g.add(h, step)
}

/// Runs the recurrence over `xs` starting from `h0`.
pub fn gru_forward(g: &mut Graph, p: &GruVars, xs: &[Var], h0: Var) -> Result<ModalityEncoding> {
    if xs.is_empty() {
        return Err(Error::contract("GRU input sequence is empty"));
    }
    let d_in = g.shape(p.w_r).0;
    let mut h = h0;
    let mut steps = Vec::with_capacity(xs.len());
    for &x in xs {
        let (_, cols) = g.shape(x);
        if cols != d_in {
            return Err(Error::Dimension {
                op: "gru_forward",
                lhs: g.value(x).shape().to_vec(),
                rhs: g.value(p.w_r).shape().to_vec(),
            });
        }
        h = gru_cell(g, p, x, h)?;
        steps.push(h);
    }
    Ok(ModalityEncoding { steps, last: h })
}

/// One row per timestep, as graph constants (batch of one).
pub fn sequence_inputs(g: &mut Graph, x: &FeatureSequence) -> Result<Vec<Var>> {
    (0..x.steps())
        .map(|t| {
            let row = x.row(t).iter().map(|&v| v as f64).collect();
            Ok(g.constant(Tensor::row(row)?))
        })
        .collect()
}

/// Encodes a single feature sequence with `h0 = 0` and returns the
/// `T × d_h` hidden-state matrix.
pub fn encode_sequence(p: &GruParams, x: &FeatureSequence) -> Result<Tensor> {
    p.validate()?;
    if x.dim() != p.d_in() {
        return Err(Error::contract(format!(
            "feature dim {} does not match GRU input dim {}",
            x.dim(),
            p.d_in()
        )));
    }
    let mut g = Graph::new();
    let vars = p.bind(&mut g);
    let xs = sequence_inputs(&mut g, x)?;
    let h0 = g.constant(Tensor::zeros(&[1, p.d_h()]));
    let enc = gru_forward(&mut g, &vars, &xs, h0)?;
    let rows: Vec<Tensor> = enc.steps.iter().map(|&v| g.value(v).clone()).collect();
    Tensor::vstack(&rows)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::data::Modality;

    fn seq(steps: usize, dim: usize, seed: u64) -> FeatureSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..steps * dim)
            .map(|_| rng.gen_range(-1.0f32..1.0))
            .collect();
        FeatureSequence::new(Modality::Video, steps, dim, data).unwrap()
    }

    #[test]
    fn zero_params_keep_zero_state() {
        let h = encode_sequence(&GruParams::zeros(3, 4), &seq(6, 3, 1)).unwrap();
        assert_eq!(h.shape(), &[6, 4]);
        assert!(h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn closed_update_gate_carries_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = GruParams::init(3, 4, &mut rng).unwrap();
        p.b_z = Tensor::filled(&[1, 4], -1e3).unwrap();
        let v = Tensor::row(vec![0.3, -0.8, 0.5, 0.9]).unwrap();

        let mut g = Graph::new();
        let vars = p.bind(&mut g);
        let x = seq(7, 3, 2);
        let xs = sequence_inputs(&mut g, &x).unwrap();
        let h0 = g.constant(v.clone());
        let enc = gru_forward(&mut g, &vars, &xs, h0).unwrap();
        for s in enc.steps {
            for (a, b) in g.value(s).data().iter().zip(v.data()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn single_step_final_is_first_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = GruParams::init(3, 4, &mut rng).unwrap();
        let mut g = Graph::new();
        let vars = p.bind(&mut g);
        let xs = sequence_inputs(&mut g, &seq(1, 3, 1)).unwrap();
        let h0 = g.constant(Tensor::zeros(&[1, 4]));
        let enc = gru_forward(&mut g, &vars, &xs, h0).unwrap();
        assert_eq!(enc.steps.len(), 1);
        assert_eq!(enc.last, enc.steps[0]);
    }

    #[test]
    fn init_bounds_and_determinism() {
        let p = GruParams::init(5, 4, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let q = GruParams::init(5, 4, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(p, q);
        for t in &p.tensors()[..6] {
            assert!(t.data().iter().all(|v| v.abs() < 0.5));
        }
        for t in &p.tensors()[6..] {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
        p.validate().unwrap();
    }

    #[test]
    fn input_dim_mismatch_is_an_error() {
        let p = GruParams::zeros(3, 4);
        assert!(encode_sequence(&p, &seq(4, 5, 0)).is_err());
        assert!(GruParams::init(0, 4, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn prefix_run_matches_full_run() {
        let p = GruParams::init(3, 4, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let x = seq(9, 3, 4);
        let full = encode_sequence(&p, &x).unwrap();
        for t in 1..=9 {
            let idx: Vec<usize> = (0..t).collect();
            let prefix = encode_sequence(&p, &x.gather_rows(&idx).unwrap()).unwrap();
            assert_eq!(prefix.row_slice(t - 1), full.row_slice(t - 1));
        }
    }
}
