//! The encoder–decoder M-Net.
//!
//! ```text
//! [T,4,H,W] ─stem─▶ enc_0 ─down─▶ enc_1 … ─down─▶ bottleneck
//!                     │skip                          │
//!           head ◀─ dec_0 ◀─fuse(cat)─up─ … ◀────────┘
//! ```
//!
//! Every stage block is `y = x + merge(seq(scan(LN_c(x))))` (the vision
//! module over the four scan directions, sharing one sequence module) followed
//! by `z = y + MeshCast(LN_hw(y))` unless Mesh-Cast is off.

mod checkpoint;
mod flops;
mod patch;

use mnet_tensor::{Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cross_scan::{merge_lanes, scan_lanes};
use crate::error::{config, data, Result};
use crate::mesh_cast::{MeshCast, MeshCastMode};
use crate::nn::{join, Conv2d, LayerNorm, Params};
use crate::seq::{SeqConfig, SeqModule, Site};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use flops::{flops_estimate, FlopReport};
pub use patch::{channel_to_space, space_to_channel, PatchDown, PatchUp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MNetConfig {
    /// Encoder stages (each followed by a downsample).
    pub depth: usize,
    pub base_channels: usize,
    /// Down/up factor per stage.
    pub patch: usize,
    pub seq: SeqConfig,
    pub input_modalities: usize,
    pub output_channels: usize,
    /// Frames per training sequence.
    pub frames: usize,
    /// Longest sequence the temporal modules accept.
    pub max_frames: usize,
    /// Square input side.
    pub image_size: usize,
    pub mesh: MeshCastMode,
    pub mesh_layers: usize,
    /// Auxiliary-layer coefficient for layer attention.
    pub beta: f64,
}

impl Default for MNetConfig {
    fn default() -> Self {
        MNetConfig {
            depth: 4,
            base_channels: 16,
            patch: 2,
            seq: SeqConfig::default(),
            input_modalities: 4,
            output_channels: 3,
            frames: 15,
            max_frames: 64,
            image_size: 160,
            mesh: MeshCastMode::TemporalChannel,
            mesh_layers: 1,
            beta: 0.5,
        }
    }
}

impl MNetConfig {
    pub fn validate(&self) -> Result<()> {
        self.seq.validate()?;
        if self.depth == 0 || self.base_channels == 0 || self.patch == 0 || self.image_size == 0 {
            return Err(config("depth, base_channels, patch and image_size must be positive"));
        }
        if self.input_modalities != 4 {
            return Err(config(format!("input_modalities must be 4, got {}", self.input_modalities)));
        }
        if self.output_channels != 3 {
            return Err(config(format!(
                "output_channels must be 3 (WT, TC, ET), got {}",
                self.output_channels
            )));
        }
        let step = self
            .patch
            .checked_pow(self.depth as u32)
            .ok_or_else(|| config("patch^depth overflows"))?;
        if !self.image_size.is_multiple_of(step) {
            return Err(config(format!(
                "image_size {} is not divisible by patch^depth = {step}",
                self.image_size
            )));
        }
        if self.frames == 0 || self.frames > self.max_frames {
            return Err(config(format!(
                "frames must be in 1..={}, got {}",
                self.max_frames, self.frames
            )));
        }
        if self.mesh != MeshCastMode::Off && self.mesh_layers == 0 {
            return Err(config("mesh_layers must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(config(format!("beta must be in [0, 1), got {}", self.beta)));
        }
        Ok(())
    }

    /// `(channels, side)` of stage `i` (`i == depth` is the bottleneck).
    pub fn stage_dims(&self, i: usize) -> (usize, usize) {
        (self.base_channels << i, self.image_size / self.patch.pow(i as u32))
    }
}

/// One vision block plus its optional Mesh-Cast stack.
#[derive(Debug, Clone)]
pub struct Stage<S: Scalar> {
    pub channels: usize,
    pub side: usize,
    pub norm: LayerNorm<S>,
    pub vision: SeqModule<S>,
    pub mesh_norm: Option<LayerNorm<S>>,
    pub mesh: Option<MeshCast<S>>,
}

impl<S: Scalar> Stage<S> {
    fn build(cfg: &MNetConfig, i: usize, backbone: &mut ChaCha8Rng, mesh: &mut ChaCha8Rng) -> Result<Self> {
        let (c, side) = cfg.stage_dims(i);
        let vision = SeqModule::build(&cfg.seq, Site::flat(c, side * side), backbone)?;
        let mesh = MeshCast::build(
            &cfg.seq,
            cfg.mesh,
            cfg.mesh_layers,
            cfg.beta,
            c,
            (side, side),
            cfg.max_frames,
            mesh,
        )?;
        Ok(Stage {
            channels: c,
            side,
            norm: LayerNorm::new(c),
            vision,
            mesh_norm: mesh.as_ref().map(|_| LayerNorm::new(side * side)),
            mesh,
        })
    }

    /// The vision half: `x + merge(seq(scan(LN_c(x))))`.
    pub fn vision_forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let &[t, c, h, w] = x.shape() else {
            return Err(data(format!("stage expects [T,C,H,W], got {:?}", x.shape())));
        };
        let positions = x.reshape(&[t, c, h * w])?.permute(&[2, 0, 1])?;
        let lanes = scan_lanes(&self.norm.forward(&positions)?, h, w)?;
        let merged = merge_lanes(&self.vision.forward(&lanes)?, h, w)?;
        Ok(x.add(&merged.permute(&[1, 2, 0])?.reshape(&[t, c, h, w])?)?)
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let y = self.vision_forward(x)?;
        match (&self.mesh, &self.mesh_norm) {
            (Some(mesh), Some(norm)) => {
                let s = y.shape().to_vec();
                let normed = norm
                    .forward(&y.reshape(&[s[0], s[1], s[2] * s[3]])?)?
                    .reshape(&s)?;
                Ok(y.add(&mesh.forward(&normed)?)?)
            }
            _ => Ok(y),
        }
    }
}

impl<S: Scalar> Params<S> for Stage<S> {
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<S>)>) {
        self.norm.params_mut(&join(prefix, "norm"), out);
        self.vision.params_mut(&join(prefix, "vision"), out);
        self.mesh_norm.params_mut(&join(prefix, "mesh_norm"), out);
        self.mesh.params_mut(&join(prefix, "mesh"), out);
    }
}

#[derive(Debug, Clone)]
pub struct DecoderStage<S: Scalar> {
    pub up: PatchUp<S>,
    /// 1×1 projection of `[upsampled | skip]` back to the stage width.
    pub fuse: Conv2d<S>,
    pub block: Stage<S>,
}

impl<S: Scalar> Params<S> for DecoderStage<S> {
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<S>)>) {
        self.up.params_mut(&join(prefix, "up"), out);
        self.fuse.params_mut(&join(prefix, "fuse"), out);
        self.block.params_mut(&join(prefix, "block"), out);
    }
}

#[derive(Debug, Clone)]
pub struct MNet<S: Scalar> {
    pub config: MNetConfig,
    pub stem: Conv2d<S>,
    pub encoders: Vec<Stage<S>>,
    pub downs: Vec<PatchDown<S>>,
    pub bottleneck: Stage<S>,
    /// Indexed by stage; applied deepest first.
    pub decoders: Vec<DecoderStage<S>>,
    pub head: Conv2d<S>,
}

impl<S: Scalar> MNet<S> {
    /// Deterministic in `seed`. Backbone and Mesh-Cast parameters come from
    /// separate streams, so builds differing only in `mesh` share every
    /// backbone parameter.
    pub fn new(cfg: &MNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut backbone = ChaCha8Rng::seed_from_u64(seed);
        let mut mesh = ChaCha8Rng::seed_from_u64(seed);
        mesh.set_stream(1);
        let f = cfg.patch;
        let stem = Conv2d::new(cfg.input_modalities, cfg.base_channels, 1, true, &mut backbone);
        let mut encoders = Vec::with_capacity(cfg.depth);
        let mut downs = Vec::with_capacity(cfg.depth);
        for i in 0..cfg.depth {
            encoders.push(Stage::build(cfg, i, &mut backbone, &mut mesh)?);
            let (c, _) = cfg.stage_dims(i);
            downs.push(PatchDown::new(c, 2 * c, f, &mut backbone));
        }
        let bottleneck = Stage::build(cfg, cfg.depth, &mut backbone, &mut mesh)?;
        let mut decoders = Vec::with_capacity(cfg.depth);
        for i in 0..cfg.depth {
            let (c, _) = cfg.stage_dims(i);
            decoders.push(DecoderStage {
                up: PatchUp::new(2 * c, c, f, &mut backbone),
                fuse: Conv2d::new(2 * c, c, 1, true, &mut backbone),
                block: Stage::build(cfg, i, &mut backbone, &mut mesh)?,
            });
        }
        let head = Conv2d::new(cfg.base_channels, cfg.output_channels, 1, true, &mut backbone);
        Ok(MNet {
            config: cfg.clone(),
            stem,
            encoders,
            downs,
            bottleneck,
            decoders,
            head,
        })
    }

    /// `[T,4,H,W]` to per-pixel logits `[T,3,H,W]`; any `T` up to
    /// `max_frames`.
    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let cfg = &self.config;
        let side = cfg.image_size;
        match *x.shape() {
            [t, m, h, w] if m == cfg.input_modalities && h == side && w == side && t >= 1 => {
                if t > cfg.max_frames {
                    return Err(config(format!("{t} frames exceed max_frames {}", cfg.max_frames)));
                }
            }
            _ => {
                return Err(data(format!(
                    "model expects [T,{},{side},{side}], got {:?}",
                    cfg.input_modalities,
                    x.shape()
                )))
            }
        }
        let mut h = self.stem.forward(x)?;
        let mut skips = Vec::with_capacity(cfg.depth);
        for (enc, down) in self.encoders.iter().zip(&self.downs) {
            h = enc.forward(&h)?;
            skips.push(h.clone());
            h = down.forward(&h)?;
        }
        h = self.bottleneck.forward(&h)?;
        for (dec, skip) in self.decoders.iter().zip(&skips).rev() {
            let up = dec.up.forward(&h)?;
            h = dec.block.forward(&dec.fuse.forward(&Tensor::concat(&[up, skip.clone()], 1)?)?)?;
        }
        self.head.forward(&h)
    }

    /// Every stage block, encoder first, then the bottleneck, then decoders.
    pub fn stages_mut(&mut self) -> Vec<&mut Stage<S>> {
        let mut v: Vec<&mut Stage<S>> = self.encoders.iter_mut().collect();
        v.push(&mut self.bottleneck);
        v.extend(self.decoders.iter_mut().map(|d| &mut d.block));
        v
    }

    /// Same architecture and parameters in another precision.
    pub fn cast<T: Scalar>(&self) -> MNet<T> {
        let mut out = MNet::<T>::new(&self.config, 0).expect("config already validated");
        let src = self.named_params();
        let mut dst = Vec::new();
        out.params_mut("", &mut dst);
        for ((_, d), (_, s)) in dst.into_iter().zip(src) {
            *d = s.cast();
        }
        out
    }
}

impl<S: Scalar> Params<S> for MNet<S> {
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<S>)>) {
        self.stem.params_mut(&join(prefix, "stem"), out);
        self.encoders.params_mut(&join(prefix, "encoders"), out);
        self.downs.params_mut(&join(prefix, "downs"), out);
        self.bottleneck.params_mut(&join(prefix, "bottleneck"), out);
        self.decoders.params_mut(&join(prefix, "decoders"), out);
        self.head.params_mut(&join(prefix, "head"), out);
    }
}

pub type MNet32 = MNet<f32>;
pub type MNet64 = MNet<f64>;
