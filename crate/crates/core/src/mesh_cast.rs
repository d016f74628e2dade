//! Mesh-Cast: a temporal pass with channels as lanes, then a channel pass
//! with frames as lanes, joined by a transpose pair.

use mnet_tensor::{Scalar, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, data, Result};
use crate::nn::{join, Flops, Linear, Params};
use crate::seq::{SeqConfig, SeqModule, Site};

/// `[T,C,H,W] → [T,C,H·W]`.
pub fn flatten_temporal<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let &[t, c, h, w] = x.shape() else {
        return Err(data(format!("expected [T,C,H,W], got {:?}", x.shape())));
    };
    Ok(x.reshape(&[t, c, h * w])?)
}

/// `[T,C,H·W] → [T,C,H,W]`.
pub fn unflatten_temporal<S: Scalar>(x: &Tensor<S>, h: usize, w: usize) -> Result<Tensor<S>> {
    let &[t, c, d] = x.shape() else {
        return Err(data(format!("expected [T,C,D], got {:?}", x.shape())));
    };
    if d != h * w {
        return Err(data(format!("feature width {d} does not unflatten to {h}×{w}")));
    }
    Ok(x.reshape(&[t, c, h, w])?)
}

/// `[T,C,D] → [C,T,D]`.
pub fn mesh_cast_forward<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    Ok(x.transpose(0, 1)?)
}

/// `[C,T,D] → [T,C,D]`.
pub fn mesh_cast_backward<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    Ok(x.transpose(0, 1)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshCastMode {
    /// No Mesh-Cast: the backbone.
    Off,
    /// Temporal pass only.
    Temporal,
    /// Temporal then channel pass.
    TemporalChannel,
}

impl MeshCastMode {
    pub const ALL: [MeshCastMode; 3] = [MeshCastMode::Off, MeshCastMode::Temporal, MeshCastMode::TemporalChannel];

    pub fn name(self) -> &'static str {
        match self {
            MeshCastMode::Off => "backbone",
            MeshCastMode::Temporal => "t",
            MeshCastMode::TemporalChannel => "t+c",
        }
    }
}

#[derive(Debug, Clone)]
pub struct MeshCastLayer<S: Scalar> {
    /// Sees `[L=T, B=C, D=H·W]`.
    pub temporal: SeqModule<S>,
    /// Sees `[L=C, B=T, D=H·W]`.
    pub channel: SeqModule<S>,
}

impl<S: Scalar> MeshCastLayer<S> {
    pub fn identity() -> Self {
        MeshCastLayer {
            temporal: SeqModule::Identity,
            channel: SeqModule::Identity,
        }
    }

    /// `[T,C,H,W] → [T,C,H,W]`.
    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let &[_, _, h, w] = x.shape() else {
            return Err(data(format!("expected [T,C,H,W], got {:?}", x.shape())));
        };
        let temporal = self.temporal.forward(&flatten_temporal(x)?)?;
        let channel = self.channel.forward(&mesh_cast_forward(&temporal)?)?;
        unflatten_temporal(&mesh_cast_backward(&channel)?, h, w)
    }

    pub fn flops(&self, t: usize, c: usize) -> Flops {
        self.temporal.flops(t, c) + self.channel.flops(c, t)
    }
}

impl<S: Scalar> Params<S> for MeshCastLayer<S> {
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<S>)>) {
        self.temporal.params_mut(&join(prefix, "temporal"), out);
        self.channel.params_mut(&join(prefix, "channel"), out);
    }
}

/// Squeeze-and-excitation weighting of stacked layer outputs:
///
/// ```text
/// s_i = mean(Y_i);  a = σ(W2·relu(W1·s));  α = a / Σa
/// Y_bal = Σ α_i Y_i
/// out = x ⊙ Y_bal + Σ_{i≥2} β_i Y_i
/// ```
#[derive(Debug, Clone)]
pub struct LayerAttention<S: Scalar> {
    pub fc1: Linear<S>,
    pub fc2: Linear<S>,
    /// One coefficient per auxiliary layer (layers 2..n), each in `[0, 1)`.
    pub beta: Vec<f64>,
}

impl<S: Scalar> LayerAttention<S> {
    pub fn new<R: Rng + ?Sized>(n: usize, beta: f64, rng: &mut R) -> Result<Self> {
        if n == 0 {
            return Err(config("layer attention needs at least one layer"));
        }
        let r = n.div_ceil(2);
        let la = LayerAttention {
            fc1: Linear::new(n, r, true, rng),
            fc2: Linear::new(r, n, true, rng),
            beta: vec![beta; n - 1],
        };
        la.validate()?;
        Ok(la)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(b) = self.beta.iter().find(|b| !(0.0..1.0).contains(*b)) {
            return Err(config(format!("auxiliary layer coefficient {b} outside [0, 1)")));
        }
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.fc1.in_features()
    }

    /// Normalized weights `α` (shape `[n]`).
    pub fn gates(&self, layers: &[Tensor<S>]) -> Result<Tensor<S>> {
        let n = self.layers();
        if layers.len() != n {
            return Err(data(format!("layer attention built for {n} layers, got {}", layers.len())));
        }
        let pooled: Vec<Tensor<S>> = layers.iter().map(Tensor::mean_all).collect();
        let s = Tensor::concat(&pooled, 0)?.reshape(&[1, n])?;
        let a = self.fc2.forward(&self.fc1.forward(&s)?.relu())?.sigmoid();
        let alpha = a.div(&a.sum_all())?;
        Ok(alpha.reshape(&[n])?)
    }

    pub fn aggregate(&self, layers: &[Tensor<S>], x: &Tensor<S>) -> Result<Tensor<S>> {
        for y in layers {
            if y.shape() != x.shape() {
                return Err(data(format!(
                    "layer output {:?} does not match input {:?}",
                    y.shape(),
                    x.shape()
                )));
            }
        }
        let alpha = self.gates(layers)?;
        let mut balanced: Option<Tensor<S>> = None;
        for (i, y) in layers.iter().enumerate() {
            let term = y.mul(&alpha.narrow(0, i, 1)?)?;
            balanced = Some(match balanced {
                Some(acc) => acc.add(&term)?,
                None => term,
            });
        }
        let mut out = x.mul(&balanced.expect("at least one layer"))?;
        for (y, &b) in layers.iter().skip(1).zip(&self.beta) {
            if b != 0.0 {
                out = out.add(&y.scale(S::of(b)))?;
            }
        }
        Ok(out)
    }
}

impl<S: Scalar> Params<S> for LayerAttention<S> {
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<S>)>) {
        self.fc1.params_mut(&join(prefix, "fc1"), out);
        self.fc2.params_mut(&join(prefix, "fc2"), out);
    }
}

/// A stack of Mesh-Cast layers, aggregated by layer attention when there is
/// more than one.
#[derive(Debug, Clone)]
pub struct MeshCast<S: Scalar> {
    pub layers: Vec<MeshCastLayer<S>>,
    pub attention: Option<LayerAttention<S>>,
}

impl<S: Scalar> MeshCast<S> {
    /// Builds `n` layers for feature maps of `channels × h × w` and sequences
    /// of up to `max_frames` frames.
    #[allow(clippy::too_many_arguments)]
    pub fn build<R: Rng + ?Sized>(
        cfg: &SeqConfig,
        mode: MeshCastMode,
        n: usize,
        beta: f64,
        channels: usize,
        (h, w): (usize, usize),
        max_frames: usize,
        rng: &mut R,
    ) -> Result<Option<Self>> {
        if mode == MeshCastMode::Off {
            return Ok(None);
        }
        if n == 0 {
            return Err(config("mesh_layers must be at least 1"));
        }
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let temporal = SeqModule::build(cfg, Site::spatial(1, h, w, max_frames), rng)?;
            let channel = match mode {
                MeshCastMode::TemporalChannel => SeqModule::build(cfg, Site::spatial(1, h, w, channels), rng)?,
                _ => SeqModule::Identity,
            };
            layers.push(MeshCastLayer { temporal, channel });
        }
        let attention = if n > 1 { Some(LayerAttention::new(n, beta, rng)?) } else { None };
        Ok(Some(MeshCast { layers, attention }))
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut outs: Vec<Tensor<S>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let y = layer.forward(outs.last().unwrap_or(x))?;
            outs.push(y);
        }
        match &self.attention {
            Some(att) => att.aggregate(&outs, x),
            None => Ok(outs.pop().expect("at least one layer")),
        }
    }

    pub fn flops(&self, t: usize, c: usize) -> Flops {
        let mut f = Flops::default();
        for layer in &self.layers {
            f += layer.flops(t, c);
        }
        f
    }
}

impl<S: Scalar> Params<S> for MeshCast<S> {
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<S>)>) {
        self.layers.params_mut(&join(prefix, "layers"), out);
        self.attention.params_mut(&join(prefix, "attention"), out);
    }
}
