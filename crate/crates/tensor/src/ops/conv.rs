use crate::error::{Result, TensorError};
use crate::ops::linalg::gemm;
use crate::scalar::Scalar;
use crate::tape::record;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Unfolds one image `[cin,h,w]` into `[cin·k·k, ho·wo]`.
    fn im2col<S: Scalar>(&self, x: &[S], cols: &mut [S]) {
        let (k, s, p) = (self.k, self.stride, self.pad);
        let hw = self.col_cols();
        for c in 0..self.cin {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut cols[row * hw..(row + 1) * hw];
                    for oy in 0..self.ho {
                        let iy = (oy * s + ki) as isize - p as isize;
                        for ox in 0..self.wo {
                            let ix = (ox * s + kj) as isize - p as isize;
                            dst[oy * self.wo + ox] = if iy >= 0
                                && ix >= 0
                                && (iy as usize) < self.h
                                && (ix as usize) < self.w
                            {
                                x[(c * self.h + iy as usize) * self.w + ix as usize]
                            } else {
                                S::zero()
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): accumulates columns into an image.
    fn col2im<S: Scalar>(&self, cols: &[S], x: &mut [S]) {
        let (k, s, p) = (self.k, self.stride, self.pad);
        let hw = self.col_cols();
        for c in 0..self.cin {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &cols[row * hw..(row + 1) * hw];
                    for oy in 0..self.ho {
                        let iy = (oy * s + ki) as isize - p as isize;
                        if iy < 0 || iy as usize >= self.h {
                            continue;
                        }
                        for ox in 0..self.wo {
                            let ix = (ox * s + kj) as isize - p as isize;
                            if ix < 0 || ix as usize >= self.w {
                                continue;
                            }
                            x[(c * self.h + iy as usize) * self.w + ix as usize] += src[oy * self.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<S: Scalar> Tensor<S> {
    /// 2-D cross-correlation of `[B,Cin,H,W]` with `[Cout,Cin,k,k]`, plus an
    /// optional per-output-channel bias `[Cout]`.
    pub fn conv2d(
        &self,
        weight: &Tensor<S>,
        bias: Option<&Tensor<S>>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor<S>> {
        let &[batch, cin, h, w] = self.shape() else {
            return Err(TensorError::Rank {
                op: "conv2d",
                expected: 4,
                shape: self.shape().to_vec(),
            });
        };
        let &[cout, wcin, k, k2] = weight.shape() else {
            return Err(TensorError::Rank {
                op: "conv2d",
                expected: 4,
                shape: weight.shape().to_vec(),
            });
        };
        if wcin != cin || k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: self.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            });
        }
        if stride == 0 {
            return Err(TensorError::Invalid("conv2d: stride must be at least 1".into()));
        }
        let padded = (h + 2 * padding).min(w + 2 * padding);
        if k > padded {
            return Err(TensorError::KernelTooLarge { kernel: k, padded });
        }
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: vec![cout],
                    rhs: b.shape().to_vec(),
                });
            }
        }
        let geo = Geometry {
            cin,
            h,
            w,
            k,
            stride,
            pad: padding,
            ho: (h + 2 * padding - k) / stride + 1,
            wo: (w + 2 * padding - k) / stride + 1,
        };
        let (rows, hw) = (geo.col_rows(), geo.col_cols());
        let x = self.shared();
        let wt = weight.shared();
        let cols: Vec<S> = if geo.is_pointwise() {
            Vec::new()
        } else {
            let mut cols = vec![S::zero(); batch * rows * hw];
            for b in 0..batch {
                geo.im2col(&x[b * cin * h * w..(b + 1) * cin * h * w], &mut cols[b * rows * hw..(b + 1) * rows * hw]);
            }
            cols
        };
        let cols = std::sync::Arc::new(cols);
        let mut out = vec![S::zero(); batch * cout * hw];
        for b in 0..batch {
            let src: &[S] = if geo.is_pointwise() {
                &x[b * rows * hw..(b + 1) * rows * hw]
            } else {
                &cols[b * rows * hw..(b + 1) * rows * hw]
            };
            gemm(cout, rows, hw, &wt, false, src, false, S::zero(), &mut out[b * cout * hw..(b + 1) * cout * hw]);
            if let Some(bias) = bias {
                for (o, &bv) in bias.data().iter().enumerate() {
                    for v in &mut out[(b * cout + o) * hw..(b * cout + o + 1) * hw] {
                        *v += bv;
                    }
                }
            }
        }
        let mut inputs = vec![self, weight];
        if let Some(b) = bias {
            inputs.push(b);
        }
        Ok(record(&inputs, vec![batch, cout, geo.ho, geo.wo], out, move |g, needs| {
            let gx = needs[0].then(|| {
                let mut gx = vec![S::zero(); batch * cin * h * w];
                let mut dcols = vec![S::zero(); rows * hw];
                for b in 0..batch {
                    let gb = &g[b * cout * hw..(b + 1) * cout * hw];
                    let dst = &mut gx[b * cin * h * w..(b + 1) * cin * h * w];
                    if geo.is_pointwise() {
                        gemm(rows, cout, hw, &wt, true, gb, false, S::zero(), dst);
                    } else {
                        gemm(rows, cout, hw, &wt, true, gb, false, S::zero(), &mut dcols);
                        geo.col2im(&dcols, dst);
                    }
                }
                gx
            });
            let gw = needs[1].then(|| {
                let mut gw = vec![S::zero(); cout * rows];
                for b in 0..batch {
                    let gb = &g[b * cout * hw..(b + 1) * cout * hw];
                    let src: &[S] = if geo.is_pointwise() { &x } else { &cols };
                    let c = &src[b * rows * hw..(b + 1) * rows * hw];
                    gemm(cout, hw, rows, gb, false, c, true, S::one(), &mut gw);
                }
                gw
            });
            let mut res = vec![gx, gw];
            if needs.len() == 3 {
                res.push(needs[2].then(|| {
                    let mut gbias = vec![S::zero(); cout];
                    for b in 0..batch {
                        for (o, acc) in gbias.iter_mut().enumerate() {
                            *acc += g[(b * cout + o) * hw..(b * cout + o + 1) * hw].iter().copied().sum::<S>();
                        }
                    }
                    gbias
                }));
            }
            res
        }))
    }
}
