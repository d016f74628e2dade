use mnet_tensor::Scalar;
use serde::{Deserialize, Serialize};

use super::{MNet, MNetConfig, Stage};
use crate::error::Result;
use crate::nn::Flops;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopReport {
    pub frames: usize,
    pub image_size: usize,
    pub total: Flops,
    /// Named parts in forward order.
    pub parts: Vec<(String, Flops)>,
}

fn stage_flops<S: Scalar>(stage: &Stage<S>, t: usize) -> Flops {
    let hw = stage.side * stage.side;
    let mut f = stage.vision.flops(hw, 4 * t);
    if let Some(mesh) = &stage.mesh {
        f += mesh.flops(t, stage.channels);
    }
    f
}

/// Analytic forward cost for a sequence of `frames` frames; independent of
/// parameter values.
pub fn flops_estimate(cfg: &MNetConfig, frames: usize) -> Result<FlopReport> {
    let model = MNet::<f32>::new(cfg, 0)?;
    let t = frames;
    let mut parts = Vec::new();
    let side = cfg.image_size;
    parts.push(("stem".to_string(), model.stem.flops(side, side).times(t)));
    for (i, (enc, down)) in model.encoders.iter().zip(&model.downs).enumerate() {
        parts.push((format!("encoder.{i}"), stage_flops(enc, t)));
        let s = enc.side / down.factor;
        parts.push((format!("down.{i}"), down.proj.flops(s, s).times(t)));
    }
    parts.push(("bottleneck".to_string(), stage_flops(&model.bottleneck, t)));
    for (i, dec) in model.decoders.iter().enumerate().rev() {
        let inner = dec.block.side / dec.up.factor;
        parts.push((format!("up.{i}"), dec.up.proj.flops(inner, inner).times(t)));
        let s = dec.block.side;
        parts.push((format!("fuse.{i}"), dec.fuse.flops(s, s).times(t)));
        parts.push((format!("decoder.{i}"), stage_flops(&dec.block, t)));
    }
    parts.push(("head".to_string(), model.head.flops(side, side).times(t)));
    let mut total = Flops::default();
    for (_, f) in &parts {
        total += *f;
    }
    Ok(FlopReport {
        frames,
        image_size: side,
        total,
        parts,
    })
}
