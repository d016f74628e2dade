//! Interchangeable sequence processors over `[L steps, B lanes, D features]`.
//!
//! Every module maps `[L,B,D]` to `[L,B,D]`, treats lanes independently and
//! accepts any `L ≥ 1` (the Transformer up to its positional table length).

mod convlstm;
mod lstm;
mod s6;
mod transformer;
mod xlstm;

use std::fmt;
use std::str::FromStr;

use mnet_tensor::{Scalar, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::nn::{Flops, Params};

pub use convlstm::ConvLstm;
pub use lstm::Lstm;
pub use s6::{S6, ScanInputs};
pub use transformer::TransformerBlock;
pub use xlstm::{MLstmBlock, SLstmBlock, XBlock, XLstm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeqKind {
    Lstm,
    ConvLstm,
    XLstm,
    Transformer,
    Mamba,
}

impl SeqKind {
    pub const ALL: [SeqKind; 5] = [
        SeqKind::Lstm,
        SeqKind::ConvLstm,
        SeqKind::XLstm,
        SeqKind::Transformer,
        SeqKind::Mamba,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SeqKind::Lstm => "lstm",
            SeqKind::ConvLstm => "convlstm",
            SeqKind::XLstm => "xlstm",
            SeqKind::Transformer => "transformer",
            SeqKind::Mamba => "mamba",
        }
    }

    /// Whether output at step `t` depends only on steps `..=t`.
    pub fn is_causal(self) -> bool {
        self != SeqKind::Transformer
    }
}

impl fmt::Display for SeqKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SeqKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        SeqKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown sequence module `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum XBlockKind {
    Slstm,
    Mlstm,
}

/// Hyperparameters shared by every place a sequence module is instantiated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeqConfig {
    pub kind: SeqKind,
    /// LSTM hidden width.
    pub hidden: usize,
    /// ConvLSTM kernel size (odd).
    pub conv_kernel: usize,
    /// ConvLSTM hidden channels.
    pub conv_channels: usize,
    /// Transformer head count; sites whose width it does not divide use the
    /// largest divisor below it.
    pub heads: usize,
    pub mlp_ratio: usize,
    /// S6 state size N.
    pub state_dim: usize,
    /// S6 low-rank step projection; `None` means `ceil(D/16)` clamped to 1..=32.
    pub dt_rank: Option<usize>,
    pub xlstm_pattern: Vec<XBlockKind>,
}

impl Default for SeqConfig {
    fn default() -> Self {
        SeqConfig {
            kind: SeqKind::Mamba,
            hidden: 32,
            conv_kernel: 3,
            conv_channels: 4,
            heads: 2,
            mlp_ratio: 2,
            state_dim: 16,
            dt_rank: None,
            xlstm_pattern: vec![XBlockKind::Slstm, XBlockKind::Mlstm],
        }
    }
}

impl SeqConfig {
    pub fn with_kind(kind: SeqKind) -> Self {
        SeqConfig {
            kind,
            ..SeqConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden", self.hidden),
            ("conv_channels", self.conv_channels),
            ("heads", self.heads),
            ("mlp_ratio", self.mlp_ratio),
            ("state_dim", self.state_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(config(format!("seq.{name} must be at least 1")));
            }
        }
        if self.conv_kernel.is_multiple_of(2) {
            return Err(config("seq.conv_kernel must be odd"));
        }
        if self.dt_rank == Some(0) {
            return Err(config("seq.dt_rank must be at least 1"));
        }
        if self.xlstm_pattern.is_empty() {
            return Err(config("seq.xlstm_pattern must not be empty"));
        }
        Ok(())
    }
}

/// Where a module is placed: its feature width, how that width factors into
/// `channels × height × width` for ConvLSTM, and the longest sequence it must
/// accept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Site {
    pub d: usize,
    pub grid: (usize, usize, usize),
    pub max_len: usize,
}

impl Site {
    /// Features without spatial structure (`grid = (d,1,1)`).
    pub fn flat(d: usize, max_len: usize) -> Site {
        Site {
            d,
            grid: (d, 1, 1),
            max_len,
        }
    }

    pub fn spatial(channels: usize, h: usize, w: usize, max_len: usize) -> Site {
        Site {
            d: channels * h * w,
            grid: (channels, h, w),
            max_len,
        }
    }
}

/// Largest divisor of `d` that does not exceed `heads`.
pub fn fit_heads(d: usize, heads: usize) -> usize {
    (1..=heads.min(d)).rev().find(|h| d.is_multiple_of(*h)).unwrap_or(1)
}

#[derive(Debug, Clone)]
pub enum SeqModule<S: Scalar> {
    Lstm(Lstm<S>),
    ConvLstm(ConvLstm<S>),
    XLstm(XLstm<S>),
    Transformer(TransformerBlock<S>),
    Mamba(S6<S>),
    /// Returns its input.
    Identity,
    /// Returns zeros.
    Zero,
}

impl<S: Scalar> SeqModule<S> {
    pub fn build<R: Rng + ?Sized>(cfg: &SeqConfig, site: Site, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        Ok(match cfg.kind {
            SeqKind::Lstm => SeqModule::Lstm(Lstm::new(site.d, cfg.hidden, rng)),
            SeqKind::ConvLstm => {
                let (c, h, w) = site.grid;
                SeqModule::ConvLstm(ConvLstm::new(c, h, w, cfg.conv_channels, cfg.conv_kernel, rng)?)
            }
            SeqKind::XLstm => SeqModule::XLstm(XLstm::new(site.d, &cfg.xlstm_pattern, rng)?),
            SeqKind::Transformer => SeqModule::Transformer(TransformerBlock::new(
                site.d,
                fit_heads(site.d, cfg.heads),
                cfg.mlp_ratio,
                site.max_len,
                rng,
            )?),
            SeqKind::Mamba => SeqModule::Mamba(S6::new(site.d, cfg.state_dim, cfg.dt_rank, rng)),
        })
    }

    pub fn kind(&self) -> Option<SeqKind> {
        match self {
            SeqModule::Lstm(_) => Some(SeqKind::Lstm),
            SeqModule::ConvLstm(_) => Some(SeqKind::ConvLstm),
            SeqModule::XLstm(_) => Some(SeqKind::XLstm),
            SeqModule::Transformer(_) => Some(SeqKind::Transformer),
            SeqModule::Mamba(_) => Some(SeqKind::Mamba),
            SeqModule::Identity | SeqModule::Zero => None,
        }
    }

    /// `[L,B,D] → [L,B,D]`.
    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        check_batch(x)?;
        match self {
            SeqModule::Lstm(m) => m.forward(x),
            SeqModule::ConvLstm(m) => m.forward(x),
            SeqModule::XLstm(m) => m.forward(x),
            SeqModule::Transformer(m) => m.forward(x),
            SeqModule::Mamba(m) => m.forward(x),
            SeqModule::Identity => Ok(x.clone()),
            SeqModule::Zero => Ok(Tensor::zeros(x.shape())),
        }
    }

    pub fn flops(&self, l: usize, b: usize) -> Flops {
        match self {
            SeqModule::Lstm(m) => m.flops(l, b),
            SeqModule::ConvLstm(m) => m.flops(l, b),
            SeqModule::XLstm(m) => m.flops(l, b),
            SeqModule::Transformer(m) => m.flops(l, b),
            SeqModule::Mamba(m) => m.flops(l, b),
            SeqModule::Identity | SeqModule::Zero => Flops::default(),
        }
    }
}

impl<S: Scalar> Params<S> for SeqModule<S> {
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<S>)>) {
        match self {
            SeqModule::Lstm(m) => m.params_mut(prefix, out),
            SeqModule::ConvLstm(m) => m.params_mut(prefix, out),
            SeqModule::XLstm(m) => m.params_mut(prefix, out),
            SeqModule::Transformer(m) => m.params_mut(prefix, out),
            SeqModule::Mamba(m) => m.params_mut(prefix, out),
            SeqModule::Identity | SeqModule::Zero => {}
        }
    }
}

pub(crate) fn check_batch<S: Scalar>(x: &Tensor<S>) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [l, b, d] => Ok((l, b, d)),
        _ => Err(mnet_tensor::TensorError::Rank {
            op: "sequence module",
            expected: 3,
            shape: x.shape().to_vec(),
        }
        .into()),
    }
}

/// Step `t` of `[L,B,F]` as `[B,F]`.
pub(crate) fn step<S: Scalar>(x: &Tensor<S>, t: usize) -> Result<Tensor<S>> {
    let s = x.shape();
    let rest: Vec<usize> = s[1..].to_vec();
    Ok(x.narrow(0, t, 1)?.reshape(&rest)?)
}
