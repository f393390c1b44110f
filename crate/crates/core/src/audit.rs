//! Finite-difference gradient audit over every differentiable component.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{grad_check, Graph, Tensor, Var};
use crate::data::{FeatureSequence, Label, Modality, Task, WindowSample};
use crate::encoders::{gru_forward, GruVars};
use crate::error::Result;
use crate::fusion::{cross_attention_matrix, fuse, AttentionVars, KvSource};
use crate::head::{head_forward, DecoderVars, HeadVars};
use crate::loss::{focal_loss, mse_loss, recon_loss};
use crate::model::{forward, objective, Batch, FusionMode, LossConfig, ModelConfig, ModelParams};

pub const AUDIT_EPS: f64 = 1e-5;
pub const AUDIT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct AuditEntry {
    pub name: String,
    pub max_rel_error: f64,
}

impl AuditEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_error < AUDIT_TOLERANCE
    }
}

fn rand_t<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    Tensor::uniform(&[rows, cols], 1.0, rng)
}

/// Weighted sum with fixed random coefficients; turns any node into a
/// scalar whose gradient exercises every entry.
fn probe(g: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    let (r, c) = g.shape(x);
    let w = g.constant(rand_t(&mut ChaCha8Rng::seed_from_u64(seed), r, c));
    let p = g.mul(x, w)?;
    g.sum(p)
}

fn entry(name: &str, err: f64) -> AuditEntry {
    AuditEntry {
        name: name.to_string(),
        max_rel_error: err,
    }
}

/// Each graph primitive on its own, plus one composed three-layer graph.
pub fn audit_ops(seed: u64) -> Result<Vec<AuditEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = rand_t(&mut rng, 3, 4);
    let b = rand_t(&mut rng, 3, 4);
    let m = rand_t(&mut rng, 4, 2);
    let row = rand_t(&mut rng, 1, 4);
    let col = rand_t(&mut rng, 3, 1);
    let pos = a.map(|x| x.abs() + 0.1)?;
    let s = seed;

    type Case = (
        &'static str,
        Vec<Tensor>,
        Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>,
    );
    let cases: Vec<Case> = vec![
        (
            "matmul",
            vec![a.clone(), m.clone()],
            Box::new(move |g, v| {
                let o = g.matmul(v[0], v[1])?;
                probe(g, o, s)
            }),
        ),
        (
            "add",
            vec![a.clone(), b.clone()],
            Box::new(move |g, v| {
                let o = g.add(v[0], v[1])?;
                probe(g, o, s)
            }),
        ),
        (
            "sub",
            vec![a.clone(), b.clone()],
            Box::new(move |g, v| {
                let o = g.sub(v[0], v[1])?;
                probe(g, o, s)
            }),
        ),
        (
            "mul",
            vec![a.clone(), b.clone()],
            Box::new(move |g, v| {
                let o = g.mul(v[0], v[1])?;
                probe(g, o, s)
            }),
        ),
        (
            "add_row",
            vec![a.clone(), row.clone()],
            Box::new(move |g, v| {
                let o = g.add_row(v[0], v[1])?;
                probe(g, o, s)
            }),
        ),
        (
            "scale_rows",
            vec![a.clone(), col.clone()],
            Box::new(move |g, v| {
                let o = g.scale_rows(v[0], v[1])?;
                probe(g, o, s)
            }),
        ),
        (
            "scale",
            vec![a.clone()],
            Box::new(move |g, v| {
                let o = g.affine(v[0], -1.7, 0.3)?;
                probe(g, o, s)
            }),
        ),
        (
            "sigmoid",
            vec![a.clone()],
            Box::new(move |g, v| {
                let o = g.sigmoid(v[0])?;
                probe(g, o, s)
            }),
        ),
        (
            "tanh",
            vec![a.clone()],
            Box::new(move |g, v| {
                let o = g.tanh(v[0])?;
                probe(g, o, s)
            }),
        ),
        (
            "relu",
            vec![a.clone()],
            Box::new(move |g, v| {
                let o = g.relu(v[0])?;
                probe(g, o, s)
            }),
        ),
        (
            "powf",
            vec![pos.clone()],
            Box::new(move |g, v| {
                let o = g.powf(v[0], 2.5)?;
                probe(g, o, s)
            }),
        ),
        (
            "ln",
            vec![pos.clone()],
            Box::new(move |g, v| {
                let o = g.ln_clamped(v[0], 1e-12)?;
                probe(g, o, s)
            }),
        ),
        (
            "softmax_rows",
            vec![a.clone()],
            Box::new(move |g, v| {
                let o = g.softmax_rows(v[0])?;
                probe(g, o, s)
            }),
        ),
        (
            "concat_cols",
            vec![a.clone(), col.clone()],
            Box::new(move |g, v| {
                let o = g.concat_cols(&[v[0], v[1], v[0]])?;
                probe(g, o, s)
            }),
        ),
        (
            "stack_rows",
            vec![a.clone(), row.clone()],
            Box::new(move |g, v| {
                let o = g.stack_rows(&[v[0], v[1]])?;
                probe(g, o, s)
            }),
        ),
        (
            "slices",
            vec![a.clone()],
            Box::new(move |g, v| {
                let c = g.slice_cols(v[0], 1, 2)?;
                let r = g.slice_rows(c, 1, 2)?;
                probe(g, r, s)
            }),
        ),
        (
            "transpose",
            vec![a.clone()],
            Box::new(move |g, v| {
                let o = g.transpose(v[0])?;
                probe(g, o, s)
            }),
        ),
        (
            "reductions",
            vec![a.clone()],
            Box::new(move |g, v| {
                let r = g.row_sum(v[0])?;
                let r = g.mul(r, r)?;
                let m = g.mean(v[0])?;
                let m = g.mul(m, m)?;
                let s1 = g.sum(r)?;
                g.add(s1, m)
            }),
        ),
        (
            "three_layer",
            vec![
                a.clone(),
                m.clone(),
                rand_t(&mut rng, 2, 3),
                rand_t(&mut rng, 3, 2),
            ],
            Box::new(move |g, v| {
                let h = g.matmul(v[0], v[1])?;
                let h = g.tanh(h)?;
                let h = g.matmul(h, v[2])?;
                let h = g.sigmoid(h)?;
                let h = g.matmul(h, v[3])?;
                let h = g.softmax_rows(h)?;
                probe(g, h, s)
            }),
        ),
    ];
    cases
        .into_iter()
        .map(|(name, params, f)| {
            Ok(entry(
                &format!("op/{name}"),
                grad_check(f, &params, AUDIT_EPS)?,
            ))
        })
        .collect()
}

/// GRU recurrence with T=5, d_in=3, d_h=4 and a random initial state.
pub fn audit_gru(seed: u64) -> Result<AuditEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t, d_in, d_h) = (5, 3, 4);
    let mut params: Vec<Tensor> = Vec::new();
    for _ in 0..3 {
        params.push(rand_t(&mut rng, d_in, d_h));
    }
    for _ in 0..3 {
        params.push(rand_t(&mut rng, d_h, d_h));
    }
    for _ in 0..3 {
        params.push(rand_t(&mut rng, 1, d_h));
    }
    params.push(rand_t(&mut rng, 1, d_h));
    let xs: Vec<Tensor> = (0..t).map(|_| rand_t(&mut rng, 1, d_in)).collect();
    let err = grad_check(
        |g, v| {
            let p = GruVars {
                w_r: v[0],
                w_z: v[1],
                w_h: v[2],
                u_r: v[3],
                u_z: v[4],
                u_h: v[5],
                b_r: v[6],
                b_z: v[7],
                b_h: v[8],
            };
            let inputs: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
            let enc = gru_forward(g, &p, &inputs, v[9])?;
            let all = g.stack_rows(&enc.steps)?;
            probe(g, all, seed)
        },
        &params,
        AUDIT_EPS,
    )?;
    Ok(entry("gru_forward", err))
}

/// Cross-attention alone, and both fusion stages over differentiable
/// hidden sequences.
pub fn audit_attention(seed: u64) -> Result<Vec<AuditEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 4;
    let att: Vec<Tensor> = (0..3).map(|_| rand_t(&mut rng, d, d)).collect();
    let q = rand_t(&mut rng, 1, d);
    let kv = rand_t(&mut rng, 5, d);
    let mut params = att.clone();
    params.push(q);
    params.push(kv);
    let single = grad_check(
        |g, v| {
            let p = AttentionVars {
                w_q: v[0],
                w_k: v[1],
                w_v: v[2],
            };
            let a = cross_attention_matrix(g, v[3], v[4], &p)?;
            probe(g, a.output, seed)
        },
        &params,
        AUDIT_EPS,
    )?;

    let mut fparams: Vec<Tensor> = (0..6).map(|_| rand_t(&mut rng, d, d)).collect();
    fparams.extend((0..16).map(|_| rand_t(&mut rng, 1, d)));
    fparams.extend((0..16).map(|_| rand_t(&mut rng, 1, d)));
    fparams.extend((0..4).map(|_| rand_t(&mut rng, 1, d)));
    let fused = grad_check(
        |g, v| {
            let p_iv = AttentionVars {
                w_q: v[0],
                w_k: v[1],
                w_v: v[2],
            };
            let p_it = AttentionVars {
                w_q: v[3],
                w_k: v[4],
                w_v: v[5],
            };
            let enc = |steps: &[Var]| crate::encoders::ModalityEncoding {
                steps: steps.to_vec(),
                last: *steps.last().expect("nonempty"),
            };
            let (ev, ei, et) = (enc(&v[6..22]), enc(&v[22..38]), enc(&v[38..42]));
            let f = fuse(g, &ev, &ei, &et, &p_iv, &p_it, KvSource::Sequence)?;
            probe(g, f.fused, seed)
        },
        &fparams,
        AUDIT_EPS,
    )?;
    Ok(vec![entry("cross_attention", single), entry("fuse", fused)])
}

/// Head composed with each loss, and the reconstruction loss.
pub fn audit_head_losses(seed: u64) -> Result<Vec<AuditEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d_in, hidden, batch) = (8, 4, 3);
    let head_params = |rng: &mut ChaCha8Rng, out: usize| -> Vec<Tensor> {
        vec![
            rand_t(rng, d_in, hidden),
            rand_t(rng, 1, hidden),
            rand_t(rng, hidden, out),
            rand_t(rng, 1, out),
            rand_t(rng, batch, d_in),
        ]
    };
    let bind = |v: &[Var]| HeadVars {
        w1: v[0],
        b1: v[1],
        w2: v[2],
        b2: v[3],
    };

    let labels = Tensor::matrix(batch, 1, vec![1.0, 0.0, 1.0])?;
    let focal = grad_check(
        |g, v| {
            let o = head_forward(g, &bind(v), v[4])?;
            focal_loss(g, o, &labels, 0.25, 2.0)
        },
        &head_params(&mut rng, 1),
        AUDIT_EPS,
    )?;

    let targets = rand_t(&mut rng, batch, 2);
    let mse = grad_check(
        |g, v| {
            let o = head_forward(g, &bind(v), v[4])?;
            let t = g.constant(targets.clone());
            mse_loss(g, o, t)
        },
        &head_params(&mut rng, 2),
        AUDIT_EPS,
    )?;

    let rparams = vec![
        rand_t(&mut rng, d_in, 12),
        rand_t(&mut rng, 1, 12),
        rand_t(&mut rng, batch, d_in),
        rand_t(&mut rng, batch, 12),
    ];
    let recon = grad_check(
        |g, v| recon_loss(g, &DecoderVars { w: v[0], b: v[1] }, v[2], v[3]),
        &rparams,
        AUDIT_EPS,
    )?;
    Ok(vec![
        entry("head+focal", focal),
        entry("head+mse", mse),
        entry("recon", recon),
    ])
}

/// Random window sample with the fixed 16/16/4 stream lengths.
pub fn random_sample<R: Rng>(
    rng: &mut R,
    d_v: usize,
    d_i: usize,
    d_t: usize,
    task: Task,
) -> Result<WindowSample> {
    let mut seq = |m: Modality, d: usize| {
        let steps = crate::data::sampling::steps_for(m);
        let data = (0..steps * d)
            .map(|_| rng.gen_range(-1.0f32..1.0))
            .collect();
        FeatureSequence::new(m, steps, d, data)
    };
    let (v, i, t) = (
        seq(Modality::Video, d_v)?,
        seq(Modality::Image, d_i)?,
        seq(Modality::Text, d_t)?,
    );
    let label = match task {
        Task::Classification => Label::Class(rng.gen_range(0..=1)),
        Task::Regression => Label::Va([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]),
    };
    WindowSample::new(v, i, t, label)
}

/// Data → encoders → fusion → head → total loss on a one-sample batch,
/// checked with respect to every model parameter.
pub fn audit_pipeline(seed: u64, task: Task, cfg: Option<ModelConfig>) -> Result<AuditEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = cfg.unwrap_or(ModelConfig {
        task,
        d_v: 6,
        d_i: 6,
        d_t: 6,
        d_h: 4,
        recon: true,
        ..ModelConfig::default()
    });
    let params = ModelParams::init(&cfg, &mut rng)?;
    let sample = random_sample(&mut rng, cfg.d_v, cfg.d_i, cfg.d_t, task)?;
    let batch = Batch::from_samples(&[&sample], task)?;
    let loss_cfg = LossConfig::default();
    let err = grad_check(
        |g, v| {
            let vars = params.vars_from(v)?;
            let fwd = forward(g, &cfg, &vars, &batch)?;
            objective(g, &cfg, &loss_cfg, &vars, &fwd, &batch)
        },
        &params.tensors(),
        AUDIT_EPS,
    )?;
    Ok(entry(&format!("pipeline/{task}"), err))
}

/// Every audit above, in order.
pub fn full_audit(seed: u64) -> Result<Vec<AuditEntry>> {
    let mut out = audit_ops(seed)?;
    out.push(audit_gru(seed)?);
    out.extend(audit_attention(seed)?);
    out.extend(audit_head_losses(seed)?);
    out.push(audit_pipeline(seed, Task::Classification, None)?);
    out.push(audit_pipeline(seed, Task::Regression, None)?);
    let variant = |fusion, kv| ModelConfig {
        d_v: 6,
        d_i: 6,
        d_t: 6,
        d_h: 4,
        recon: true,
        fusion,
        kv,
        ..ModelConfig::default()
    };
    for (name, cfg) in [
        (
            "pipeline/concat",
            variant(FusionMode::Concat, KvSource::Sequence),
        ),
        (
            "pipeline/kv-final",
            variant(FusionMode::Attention, KvSource::Final),
        ),
    ] {
        let mut e = audit_pipeline(seed, Task::Classification, Some(cfg))?;
        e.name = name.to_string();
        out.push(e);
    }
    Ok(out)
}
