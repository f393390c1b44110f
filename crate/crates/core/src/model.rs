//! Full three-stream model: per-modality GRUs, fusion, head, optional
//! reconstruction decoder.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::data::{Label, Modality, Task, WindowSample};
use crate::encoders::{gru_forward, GruParams, GruVars, ModalityEncoding, GRU_TENSOR_NAMES};
use crate::error::{Error, Result};
use crate::fusion::{fuse, AttentionParams, AttentionVars, FusionOutput, KvSource};
use crate::head::{head_forward, DecoderParams, DecoderVars, HeadParams, HeadVars};
use crate::loss::{focal_loss, mse_loss, recon_loss, total_loss};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Image-queried cross-attention over video and text.
    #[default]
    Attention,
    /// Naive baseline: concatenated final states of all three streams.
    Concat,
}

/// Which streams feed the model. Disabled streams are replaced by zero
/// encodings; their parameters stay in place.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityMask {
    pub video: bool,
    pub image: bool,
    pub text: bool,
}

impl Default for ModalityMask {
    fn default() -> Self {
        Self::all()
    }
}

impl ModalityMask {
    pub fn all() -> Self {
        Self {
            video: true,
            image: true,
            text: true,
        }
    }

    pub fn only(m: Modality) -> Self {
        Self {
            video: m == Modality::Video,
            image: m == Modality::Image,
            text: m == Modality::Text,
        }
    }

    pub fn enabled(&self, m: Modality) -> bool {
        match m {
            Modality::Video => self.video,
            Modality::Image => self.image,
            Modality::Text => self.text,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub task: Task,
    pub d_v: usize,
    pub d_i: usize,
    pub d_t: usize,
    pub d_h: usize,
    pub fusion: FusionMode,
    pub kv: KvSource,
    pub modalities: ModalityMask,
    /// Attach the reconstruction decoder.
    pub recon: bool,
    /// Squash regression outputs with tanh.
    pub tanh_output: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            task: Task::Classification,
            d_v: 8,
            d_i: 8,
            d_t: 8,
            d_h: 32,
            fusion: FusionMode::Attention,
            kv: KvSource::Sequence,
            modalities: ModalityMask::all(),
            recon: false,
            tanh_output: false,
        }
    }
}

impl ModelConfig {
    pub fn input_dim(&self, m: Modality) -> usize {
        match m {
            Modality::Video => self.d_v,
            Modality::Image => self.d_i,
            Modality::Text => self.d_t,
        }
    }

    pub fn fused_dim(&self) -> usize {
        match self.fusion {
            FusionMode::Attention => 2 * self.d_h,
            FusionMode::Concat => 3 * self.d_h,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.d_v, self.d_i, self.d_t, self.d_h].contains(&0) {
            return Err(Error::Config("model dims must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub gru_v: GruParams,
    pub gru_i: GruParams,
    pub gru_t: GruParams,
    /// Image→video and image→text attention; absent in concat mode.
    pub attention: Option<[AttentionParams; 2]>,
    pub head: HeadParams,
    pub decoder: Option<DecoderParams>,
}

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d_h = cfg.d_h;
        let gru_v = GruParams::init(cfg.d_v, d_h, rng)?;
        let gru_i = GruParams::init(cfg.d_i, d_h, rng)?;
        let gru_t = GruParams::init(cfg.d_t, d_h, rng)?;
        let attention = match cfg.fusion {
            FusionMode::Attention => Some([
                AttentionParams::init(d_h, rng)?,
                AttentionParams::init(d_h, rng)?,
            ]),
            FusionMode::Concat => None,
        };
        let head = HeadParams::init(cfg.fused_dim(), d_h, cfg.task.out_dim(), rng)?;
        let decoder = if cfg.recon {
            Some(DecoderParams::init(cfg.fused_dim(), 3 * d_h, rng)?)
        } else {
            None
        };
        Ok(Self {
            gru_v,
            gru_i,
            gru_t,
            attention,
            head,
            decoder,
        })
    }

    pub fn gru(&self, m: Modality) -> &GruParams {
        match m {
            Modality::Video => &self.gru_v,
            Modality::Image => &self.gru_i,
            Modality::Text => &self.gru_t,
        }
    }

    /// Every tensor with a stable dotted name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (prefix, gru) in [
            ("gru_v", &self.gru_v),
            ("gru_i", &self.gru_i),
            ("gru_t", &self.gru_t),
        ] {
            for (name, t) in GRU_TENSOR_NAMES.iter().zip(gru.tensors()) {
                out.push((format!("{prefix}.{name}"), t));
            }
        }
        if let Some(att) = &self.attention {
            for (prefix, a) in [("att_iv", &att[0]), ("att_it", &att[1])] {
                for (name, t) in ["w_q", "w_k", "w_v"].iter().zip(a.tensors()) {
                    out.push((format!("{prefix}.{name}"), t));
                }
            }
        }
        for (name, t) in ["w1", "b1", "w2", "b2"].iter().zip(self.head.tensors()) {
            out.push((format!("head.{name}"), t));
        }
        if let Some(dec) = &self.decoder {
            for (name, t) in ["w", "b"].iter().zip(dec.tensors()) {
                out.push((format!("decoder.{name}"), t));
            }
        }
        out
    }

    /// Same order as [`ModelParams::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        out.extend(self.gru_v.tensors_mut());
        out.extend(self.gru_i.tensors_mut());
        out.extend(self.gru_t.tensors_mut());
        if let Some([a, b]) = &mut self.attention {
            out.extend(a.tensors_mut());
            out.extend(b.tensors_mut());
        }
        out.extend(self.head.tensors_mut());
        if let Some(dec) = &mut self.decoder {
            out.extend(dec.tensors_mut());
        }
        out
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.named_tensors()
            .into_iter()
            .map(|(_, t)| t.clone())
            .collect()
    }

    /// Replaces every tensor, in `named_tensors` order.
    pub fn set_tensors(&mut self, new: Vec<Tensor>) -> Result<()> {
        let slots = self.tensors_mut();
        if slots.len() != new.len() {
            return Err(Error::contract(format!(
                "expected {} tensors, got {}",
                slots.len(),
                new.len()
            )));
        }
        for (slot, t) in slots.into_iter().zip(new) {
            if slot.shape() != t.shape() {
                return Err(Error::Dimension {
                    op: "set_tensors",
                    lhs: slot.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            *slot = t;
        }
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph) -> ModelVars {
        ModelVars {
            gru_v: self.gru_v.bind(g),
            gru_i: self.gru_i.bind(g),
            gru_t: self.gru_t.bind(g),
            attention: self.attention.as_ref().map(|[a, b]| [a.bind(g), b.bind(g)]),
            head: self.head.bind(g),
            decoder: self.decoder.as_ref().map(|d| d.bind(g)),
        }
    }

    /// Binds externally created leaves (e.g. from a gradient checker), in
    /// `named_tensors` order.
    pub fn vars_from(&self, vars: &[Var]) -> Result<ModelVars> {
        if vars.len() != self.named_tensors().len() {
            return Err(Error::contract(
                "variable count does not match parameter count",
            ));
        }
        let mut it = vars.iter().copied();
        let mut gru = || {
            let v: Vec<Var> = it.by_ref().take(9).collect();
            GruVars {
                w_r: v[0],
                w_z: v[1],
                w_h: v[2],
                u_r: v[3],
                u_z: v[4],
                u_h: v[5],
                b_r: v[6],
                b_z: v[7],
                b_h: v[8],
            }
        };
        let (gru_v, gru_i, gru_t) = (gru(), gru(), gru());
        let mut att = || {
            let v: Vec<Var> = it.by_ref().take(3).collect();
            AttentionVars {
                w_q: v[0],
                w_k: v[1],
                w_v: v[2],
            }
        };
        let attention = self.attention.as_ref().map(|_| [att(), att()]);
        let mut rest = vars[27 + attention.map_or(0, |_| 6)..].iter().copied();
        let mut next = || rest.next().expect("length checked");
        let head = HeadVars {
            w1: next(),
            b1: next(),
            w2: next(),
            b2: next(),
        };
        let decoder = self.decoder.as_ref().map(|_| DecoderVars {
            w: next(),
            b: next(),
        });
        Ok(ModelVars {
            gru_v,
            gru_i,
            gru_t,
            attention,
            head,
            decoder,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ModelVars {
    pub gru_v: GruVars,
    pub gru_i: GruVars,
    pub gru_t: GruVars,
    pub attention: Option<[AttentionVars; 2]>,
    pub head: HeadVars,
    pub decoder: Option<DecoderVars>,
}

impl ModelVars {
    /// Same order as [`ModelParams::named_tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        out.extend(self.gru_v.vars());
        out.extend(self.gru_i.vars());
        out.extend(self.gru_t.vars());
        if let Some([a, b]) = &self.attention {
            out.extend(a.vars());
            out.extend(b.vars());
        }
        out.extend(self.head.vars());
        if let Some(d) = &self.decoder {
            out.extend(d.vars());
        }
        out
    }

    fn gru(&self, m: Modality) -> &GruVars {
        match m {
            Modality::Video => &self.gru_v,
            Modality::Image => &self.gru_i,
            Modality::Text => &self.gru_t,
        }
    }
}

/// A minibatch laid out time-major: `streams[m][t]` is `B × d_m`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub streams: [Vec<Tensor>; 3],
    /// `B × out` targets.
    pub targets: Tensor,
    pub labels: Vec<Label>,
}

impl Batch {
    pub fn from_samples(samples: &[&WindowSample], task: Task) -> Result<Self> {
        let b = samples.len();
        if b == 0 {
            return Err(Error::contract("empty batch"));
        }
        let mut streams: [Vec<Tensor>; 3] = Default::default();
        for (slot, m) in streams.iter_mut().zip(Modality::ALL) {
            let first = samples[0].stream(m);
            let (steps, dim) = (first.steps(), first.dim());
            for t in 0..steps {
                let mut data = Vec::with_capacity(b * dim);
                for s in samples {
                    let seq = s.stream(m);
                    if seq.dim() != dim || seq.steps() != steps {
                        return Err(Error::Data(format!("inconsistent {m} shapes inside batch")));
                    }
                    data.extend(seq.row(t).iter().map(|&v| v as f64));
                }
                slot.push(Tensor::matrix(b, dim, data)?);
            }
        }
        let out = task.out_dim();
        let mut tdata = Vec::with_capacity(b * out);
        for s in samples {
            if s.label.task() != task {
                return Err(Error::Config(format!(
                    "sample label is for {} but the task is {task}",
                    s.label.task()
                )));
            }
            tdata.extend(s.label.values());
        }
        Ok(Self {
            streams,
            targets: Tensor::matrix(b, out, tdata)?,
            labels: samples.iter().map(|s| s.label).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.targets.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn stream(&self, m: Modality) -> &[Tensor] {
        match m {
            Modality::Video => &self.streams[0],
            Modality::Image => &self.streams[1],
            Modality::Text => &self.streams[2],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub encodings: [ModalityEncoding; 3],
    pub fusion: Option<FusionOutput>,
    pub fused: Var,
    /// `B × out` raw head outputs (tanh applied when configured).
    pub out: Var,
}

pub fn forward(
    g: &mut Graph,
    cfg: &ModelConfig,
    vars: &ModelVars,
    batch: &Batch,
) -> Result<Forward> {
    let b = batch.len();
    let d_h = cfg.d_h;
    let mut encs = Vec::with_capacity(3);
    for m in Modality::ALL {
        let xs = batch.stream(m);
        if cfg.modalities.enabled(m) {
            let inputs: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
            let h0 = g.constant(Tensor::zeros(&[b, d_h]));
            encs.push(gru_forward(g, vars.gru(m), &inputs, h0)?);
        } else {
            let steps: Vec<Var> = xs
                .iter()
                .map(|_| g.constant(Tensor::zeros(&[b, d_h])))
                .collect();
            let last = *steps
                .last()
                .ok_or_else(|| Error::contract("empty stream"))?;
            encs.push(ModalityEncoding { steps, last });
        }
    }
    let encodings: [ModalityEncoding; 3] = encs.try_into().expect("three streams");
    let [ev, ei, et] = &encodings;

    let (fusion, fused) = match cfg.fusion {
        FusionMode::Attention => {
            let [p_iv, p_it] = vars.attention.as_ref().ok_or_else(|| {
                Error::Config("attention fusion without attention parameters".into())
            })?;
            let f = fuse(g, ev, ei, et, p_iv, p_it, cfg.kv)?;
            (Some(f), f.fused)
        }
        FusionMode::Concat => (None, g.concat_cols(&[ev.last, ei.last, et.last])?),
    };
    let mut out = head_forward(g, &vars.head, fused)?;
    if cfg.tanh_output && cfg.task == Task::Regression {
        out = g.tanh(out)?;
    }
    Ok(Forward {
        encodings,
        fusion,
        fused,
        out,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub alpha: f64,
    pub gamma: f64,
    /// Weight of the reconstruction term.
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: crate::loss::DEFAULT_ALPHA,
            gamma: crate::loss::DEFAULT_GAMMA,
            lambda: 0.1,
        }
    }
}

/// Task loss plus the optional reconstruction term, averaged over the batch.
pub fn objective(
    g: &mut Graph,
    cfg: &ModelConfig,
    loss: &LossConfig,
    vars: &ModelVars,
    fwd: &Forward,
    batch: &Batch,
) -> Result<Var> {
    let task = match cfg.task {
        Task::Classification => focal_loss(g, fwd.out, &batch.targets, loss.alpha, loss.gamma)?,
        Task::Regression => {
            let t = g.constant(batch.targets.clone());
            mse_loss(g, fwd.out, t)?
        }
    };
    let recon = match &vars.decoder {
        Some(dec) => {
            let [ev, ei, et] = &fwd.encodings;
            let finals = g.concat_cols(&[ev.last, ei.last, et.last])?;
            Some(recon_loss(g, dec, fwd.fused, finals)?)
        }
        None => None,
    };
    total_loss(g, task, recon, loss.lambda)
}
