//! Two-stage cross-attention fusion.
//!
//! The final image state queries the video hidden sequence and then the
//! text hidden sequence; the two attended vectors are concatenated into a
//! `2·d_h` fused embedding. Single head, learned `W_Q`, `W_K`, `W_V`,
//! scores scaled by `1/√d_h`, no output projection, residual or norm.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::encoders::ModalityEncoding;
use crate::error::{Error, Result};

/// Which part of each encoding serves as keys/values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KvSource {
    /// Full hidden-state sequence.
    #[default]
    Sequence,
    /// Final state only; attention weights collapse to 1.
    Final,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
}

impl AttentionParams {
    pub fn init<R: Rng + ?Sized>(d_h: usize, rng: &mut R) -> Result<Self> {
        if d_h == 0 {
            return Err(Error::contract("attention dim must be >= 1"));
        }
        let s = 1.0 / (d_h as f64).sqrt();
        Ok(Self {
            w_q: Tensor::uniform(&[d_h, d_h], s, rng),
            w_k: Tensor::uniform(&[d_h, d_h], s, rng),
            w_v: Tensor::uniform(&[d_h, d_h], s, rng),
        })
    }

    pub fn identity(d_h: usize) -> Self {
        Self {
            w_q: Tensor::identity(d_h),
            w_k: Tensor::identity(d_h),
            w_v: Tensor::identity(d_h),
        }
    }

    pub fn d_h(&self) -> usize {
        self.w_q.rows()
    }

    pub fn tensors(&self) -> [&Tensor; 3] {
        [&self.w_q, &self.w_k, &self.w_v]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 3] {
        [&mut self.w_q, &mut self.w_k, &mut self.w_v]
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d_h();
        for t in self.tensors() {
            if t.shape() != [d, d] {
                return Err(Error::Dimension {
                    op: "attention params",
                    lhs: t.shape().to_vec(),
                    rhs: vec![d, d],
                });
            }
        }
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph) -> AttentionVars {
        let [w_q, w_k, w_v] = self.tensors().map(|t| g.param(t.clone()));
        AttentionVars { w_q, w_k, w_v }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
}

impl AttentionVars {
    pub fn vars(&self) -> [Var; 3] {
        [self.w_q, self.w_k, self.w_v]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Attended {
    /// `B × d_h` attended values.
    pub output: Var,
    /// `B × T` attention weights.
    pub weights: Var,
}

/// Batched cross-attention. `q` is `B × d_h`; `kv` holds one `B × d_h`
/// node per key/value position, so sample `b` attends over row `b` of
/// every position.
pub fn cross_attention(g: &mut Graph, q: Var, kv: &[Var], p: &AttentionVars) -> Result<Attended> {
    if kv.is_empty() {
        return Err(Error::contract(
            "cross_attention needs at least one key/value row",
        ));
    }
    let d_h = g.shape(p.w_q).0;
    let (b, dq) = g.shape(q);
    for &k in kv {
        if g.shape(k) != (b, dq) {
            return Err(Error::Dimension {
                op: "cross_attention",
                lhs: g.value(q).shape().to_vec(),
                rhs: g.value(k).shape().to_vec(),
            });
        }
    }
    let qp = g.matmul(q, p.w_q)?;
    let mut scores = Vec::with_capacity(kv.len());
    let mut values = Vec::with_capacity(kv.len());
    for &k in kv {
        let kp = g.matmul(k, p.w_k)?;
        let prod = g.mul(qp, kp)?;
        scores.push(g.row_sum(prod)?);
        values.push(g.matmul(k, p.w_v)?);
    }
    let scores = g.concat_cols(&scores)?;
    let scores = g.scale(scores, 1.0 / (d_h as f64).sqrt())?;
    let weights = g.softmax_rows(scores)?;
    let mut output = None;
    for (t, &v) in values.iter().enumerate() {
        let w_t = g.slice_cols(weights, t, 1)?;
        let term = g.scale_rows(v, w_t)?;
        output = Some(match output {
            None => term,
            Some(acc) => g.add(acc, term)?,
        });
    }
    Ok(Attended {
        output: output.expect("kv is non-empty"),
        weights,
    })
}

/// Single-sample form: `q` is `1 × d_h`, `kv` is `T × d_h`.
pub fn cross_attention_matrix(
    g: &mut Graph,
    q: Var,
    kv: Var,
    p: &AttentionVars,
) -> Result<Attended> {
    let (t, _) = g.shape(kv);
    let rows = (0..t)
        .map(|i| g.slice_rows(kv, i, 1))
        .collect::<Result<Vec<_>>>()?;
    cross_attention(g, q, &rows, p)
}

#[derive(Debug, Clone, Copy)]
pub struct FusionOutput {
    pub z_iv: Var,
    pub z_it: Var,
    /// `B × 2·d_h`, equal to `[z_iv | z_it]`.
    pub fused: Var,
    pub w_iv: Var,
    pub w_it: Var,
}

fn keys(enc: &ModalityEncoding, kv: KvSource) -> Vec<Var> {
    match kv {
        KvSource::Sequence => enc.steps.clone(),
        KvSource::Final => vec![enc.last],
    }
}

/// Image final state attends to video, then to text; outputs concatenated.
pub fn fuse(
    g: &mut Graph,
    video: &ModalityEncoding,
    image: &ModalityEncoding,
    text: &ModalityEncoding,
    p_iv: &AttentionVars,
    p_it: &AttentionVars,
    kv: KvSource,
) -> Result<FusionOutput> {
    let d_i = g.shape(image.last);
    for enc in [video, text] {
        if g.shape(enc.last) != d_i {
            return Err(Error::Dimension {
                op: "fuse",
                lhs: g.value(image.last).shape().to_vec(),
                rhs: g.value(enc.last).shape().to_vec(),
            });
        }
    }
    let iv = cross_attention(g, image.last, &keys(video, kv), p_iv)?;
    let it = cross_attention(g, image.last, &keys(text, kv), p_it)?;
    let fused = g.concat_cols(&[iv.output, it.output])?;
    Ok(FusionOutput {
        z_iv: iv.output,
        z_it: it.output,
        fused,
        w_iv: iv.weights,
        w_it: it.weights,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn hand_example() {
        let mut g = Graph::new();
        let p = AttentionParams::identity(2).bind(&mut g);
        let q = g.constant(Tensor::row(vec![1.0, 0.0]).unwrap());
        let kv = g.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let a = cross_attention_matrix(&mut g, q, kv, &p).unwrap();
        let w = g.value(a.weights).data();
        assert!((w[0] - 0.6698).abs() < 1e-4 && (w[1] - 0.3302).abs() < 1e-4);
        let o = g.value(a.output).data();
        assert!((o[0] - 0.6698).abs() < 1e-4 && (o[1] - 0.3302).abs() < 1e-4);
    }

    #[test]
    fn single_key_returns_projected_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = AttentionParams::init(3, &mut rng).unwrap();
        let mut g = Graph::new();
        let p = params.bind(&mut g);
        let q = g.constant(Tensor::uniform(&[1, 3], 1.0, &mut rng));
        let k = g.constant(Tensor::uniform(&[1, 3], 1.0, &mut rng));
        let a = cross_attention_matrix(&mut g, q, k, &p).unwrap();
        let expect = g.matmul(k, p.w_v).unwrap();
        assert_eq!(g.value(a.output), g.value(expect));
        assert_eq!(g.value(a.weights).data(), &[1.0]);
    }

    #[test]
    fn identical_rows_ignore_query() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = AttentionParams::init(4, &mut rng).unwrap();
        let v = Tensor::uniform(&[1, 4], 1.0, &mut rng);
        let kv = Tensor::vstack(&[v.clone(), v.clone(), v.clone()]).unwrap();
        let mut outs = Vec::new();
        for _ in 0..2 {
            let mut g = Graph::new();
            let p = params.bind(&mut g);
            let q = g.constant(Tensor::uniform(&[1, 4], 1.0, &mut rng));
            let kv = g.constant(kv.clone());
            let a = cross_attention_matrix(&mut g, q, kv, &p).unwrap();
            let vv = g.constant(v.clone());
            let expect = g.matmul(vv, p.w_v).unwrap();
            for (x, y) in g.value(a.output).data().iter().zip(g.value(expect).data()) {
                assert!((x - y).abs() < 1e-12);
            }
            outs.push(g.value(a.output).clone());
        }
    }

    #[test]
    fn mismatched_query_width_is_an_error() {
        let mut g = Graph::new();
        let p = AttentionParams::identity(2).bind(&mut g);
        let q = g.constant(Tensor::row(vec![1.0, 0.0, 0.0]).unwrap());
        let kv = g.constant(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap());
        assert!(cross_attention_matrix(&mut g, q, kv, &p).is_err());
        assert!(cross_attention(&mut g, q, &[], &p).is_err());
    }
}
