use mnet_tensor::{Scalar, Tensor};
use rand::Rng;

use super::check_batch;
use crate::error::Result;
use crate::nn::{join, Flops, Linear, Params};

/// Pre-activations of the step size are clamped from below so `softplus`
/// never underflows to zero in `f32`.
const DT_FLOOR: f64 = -60.0;

/// Selective state-space layer (Mamba S6 core).
///
/// ```text
/// A   = −exp(a_log)                       [D,N]
/// B_t = x_t·W_B + b_B,  C_t = x_t·W_C + b_C   [B,N] per step, shared by channels
/// Δ_t = softplus(x_t·W_down·W_up + b_dt)     [B,D]
/// h_t = exp(Δ_t A) ⊙ h_{t−1} + Δ_t B_t x_t
/// y_t = C_t·h_t + D_skip ⊙ x_t
/// ```
#[derive(Debug, Clone)]
pub struct S6<S: Scalar> {
    pub a_log: Tensor<S>,
    pub b_proj: Linear<S>,
    pub c_proj: Linear<S>,
    pub dt_down: Linear<S>,
    pub dt_up: Linear<S>,
    pub d_skip: Tensor<S>,
}

/// The per-step tensors fed to the scan primitive.
#[derive(Debug, Clone)]
pub struct ScanInputs<S: Scalar> {
    pub delta: Tensor<S>,
    pub a: Tensor<S>,
    pub b: Tensor<S>,
    pub c: Tensor<S>,
}

pub fn default_dt_rank(d: usize) -> usize {
    d.div_ceil(16).clamp(1, 32)
}

impl<S: Scalar> S6<S> {
    pub fn new<R: Rng + ?Sized>(d: usize, n: usize, dt_rank: Option<usize>, rng: &mut R) -> Self {
        let rank = dt_rank.unwrap_or_else(|| default_dt_rank(d));
        let a_log = Tensor::from_fn(&[d, n], |i| S::of(((i % n) + 1) as f64).ln());
        let mut dt_up = Linear::new(rank, d, true, rng);
        // Initial step sizes log-uniform in [1e-3, 1e-1], stored through the
        // inverse of softplus.
        let (lo, hi) = (1e-3f64.ln(), 1e-1f64.ln());
        dt_up.b = Some(Tensor::from_fn(&[d], |_| {
            let dt = rng.gen_range(lo..hi).exp();
            S::of(dt + (-(-dt).exp_m1()).ln())
        }));
        S6 {
            a_log,
            b_proj: Linear::new(d, n, true, rng),
            c_proj: Linear::new(d, n, true, rng),
            dt_down: Linear::new(d, rank, false, rng),
            dt_up,
            d_skip: Tensor::ones(&[d]),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a_log.shape()[1]
    }

    pub fn inputs(&self, x: &Tensor<S>) -> Result<ScanInputs<S>> {
        check_batch(x)?;
        let pre = self.dt_up.forward(&self.dt_down.forward(x)?)?;
        Ok(ScanInputs {
            delta: pre.clamp(S::of(DT_FLOOR), S::max_value()).softplus(),
            a: self.a_log.exp().neg(),
            b: self.b_proj.forward(x)?,
            c: self.c_proj.forward(x)?,
        })
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let p = self.inputs(x)?;
        let y = x.selective_scan(&p.delta, &p.a, &p.b, &p.c)?;
        Ok(y.add(&x.mul(&self.d_skip)?)?)
    }

    /// Each state update counts three multiply-adds (decay, injection,
    /// readout).
    pub fn flops(&self, l: usize, b: usize) -> Flops {
        let rows = l * b;
        let d = self.d_skip.numel();
        let scan = Flops {
            scan: 6 * (rows * d * self.state_dim()) as u64,
            ..Flops::default()
        };
        self.b_proj.flops(rows) + self.c_proj.flops(rows) + self.dt_down.flops(rows) + self.dt_up.flops(rows) + scan
    }
}

impl<S: Scalar> Params<S> for S6<S> {
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<S>)>) {
        out.push((join(prefix, "a_log"), &mut self.a_log));
        self.b_proj.params_mut(&join(prefix, "b_proj"), out);
        self.c_proj.params_mut(&join(prefix, "c_proj"), out);
        self.dt_down.params_mut(&join(prefix, "dt_down"), out);
        self.dt_up.params_mut(&join(prefix, "dt_up"), out);
        out.push((join(prefix, "d_skip"), &mut self.d_skip));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dt_rank_rule() {
        assert_eq!(default_dt_rank(1), 1);
        assert_eq!(default_dt_rank(16), 1);
        assert_eq!(default_dt_rank(17), 2);
        assert_eq!(default_dt_rank(256), 16);
        assert_eq!(default_dt_rank(4096), 32);
    }

    #[test]
    fn initial_steps_are_in_range() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let s6 = S6::<f64>::new(8, 4, None, &mut rng);
        for &b in s6.dt_up.b.as_ref().unwrap().data() {
            let dt = mnet_tensor::softplus(b);
            assert!((1e-3..=1e-1 + 1e-12).contains(&dt), "{dt}");
        }
        let a = s6.a_log.exp().neg();
        for (got, want) in a.data()[..4].iter().zip([-1.0, -2.0, -3.0, -4.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }
}
