//! Joint segmentation loss over sigmoid probabilities.
//!
//! ```text
//! BCE(P,T)  = −Σ [T ln P + (1−T) ln(1−P)]           (P clamped to [ε, 1−ε])
//! Dice(P,T) = 1 − 2(Σ P·T + τ) / (Σ P + Σ T + τ)
//! joint     = Σ_{WT,TC,ET} λ·Dice + (1−λ)·BCE
//! ```
//!
//! Both terms are sums over pixels, not means.

use mnet_tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{config, data, Result};

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda: f64,
    pub tau: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda: 0.5, tau: 1e-5 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(config(format!("loss.lambda must be in (0, 1), got {}", self.lambda)));
        }
        if !(self.tau > 0.0) {
            return Err(config(format!("loss.tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

fn same_shape<S: Scalar>(op: &str, p: &Tensor<S>, t: &Tensor<S>) -> Result<()> {
    if p.shape() != t.shape() {
        return Err(data(format!(
            "{op}: prediction {:?} vs target {:?}",
            p.shape(),
            t.shape()
        )));
    }
    Ok(())
}

/// Summed binary cross-entropy of probabilities `p` against `t`.
pub fn bce_loss<S: Scalar>(p: &Tensor<S>, t: &Tensor<S>) -> Result<Tensor<S>> {
    same_shape("bce_loss", p, t)?;
    let eps = S::of(PROB_CLAMP);
    let pc = p.clamp(eps, S::one() - eps);
    let pos = t.mul(&pc.ln())?;
    let neg = t.neg().add_scalar(S::one()).mul(&pc.neg().add_scalar(S::one()).ln())?;
    Ok(pos.add(&neg)?.sum_all().neg())
}

pub fn dice_loss<S: Scalar>(p: &Tensor<S>, t: &Tensor<S>, tau: f64) -> Result<Tensor<S>> {
    same_shape("dice_loss", p, t)?;
    let tau = S::of(tau);
    let inter = p.mul(t)?.sum_all().add_scalar(tau);
    let denom = p.sum_all().add(&t.sum_all())?.add_scalar(tau);
    Ok(inter.div(&denom)?.scale(S::of(-2.0)).add_scalar(S::one()))
}

/// Per-channel terms `(Σ Dice, Σ BCE)` over the three regions.
pub fn joint_terms<S: Scalar>(logits: &Tensor<S>, targets: &Tensor<S>, tau: f64) -> Result<(Tensor<S>, Tensor<S>)> {
    same_shape("joint_loss", logits, targets)?;
    if logits.rank() < 2 || logits.shape()[1] != 3 {
        return Err(data(format!(
            "joint_loss expects [T,3,...] logits, got {:?}",
            logits.shape()
        )));
    }
    let probs = logits.sigmoid();
    let mut dice: Option<Tensor<S>> = None;
    let mut bce: Option<Tensor<S>> = None;
    for ch in 0..3 {
        let p = probs.narrow(1, ch, 1)?;
        let t = targets.narrow(1, ch, 1)?;
        let d = dice_loss(&p, &t, tau)?;
        let b = bce_loss(&p, &t)?;
        dice = Some(match dice {
            Some(acc) => acc.add(&d)?,
            None => d,
        });
        bce = Some(match bce {
            Some(acc) => acc.add(&b)?,
            None => b,
        });
    }
    Ok((dice.unwrap(), bce.unwrap()))
}

pub fn joint_loss<S: Scalar>(logits: &Tensor<S>, targets: &Tensor<S>, cfg: &LossConfig) -> Result<Tensor<S>> {
    let (dice, bce) = joint_terms(logits, targets, cfg.tau)?;
    Ok(dice
        .scale(S::of(cfg.lambda))
        .add(&bce.scale(S::of(1.0 - cfg.lambda)))?)
}
