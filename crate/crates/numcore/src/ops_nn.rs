//! Neural-network operators: softmax family, normalizations, dropout,
//! convolution building blocks, bilinear upsampling, and pooling.

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::ops_matmul::gemm;
use crate::tensor::Tensor;

const NORM_EPS: f64 = 1e-5;

impl Tensor {
    /// Row-wise softmax over the last axis, stabilized by max subtraction.
    pub fn softmax_last(&self) -> Tensor {
        let cols = *self.shape().last().unwrap_or(&1);
        let rows = self.numel() / cols;
        let mut out = vec![0.0; self.numel()];
        {
            let data = self.data();
            for r in 0..rows {
                let row = &data[r * cols..(r + 1) * cols];
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for (o, &x) in out[r * cols..(r + 1) * cols].iter_mut().zip(row.iter()) {
                    *o = (x - mx).exp();
                    sum += *o;
                }
                for o in out[r * cols..(r + 1) * cols].iter_mut() {
                    *o /= sum;
                }
            }
        }
        let saved = out.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let mut dx = vec![0.0; g.len()];
                for r in 0..rows {
                    let y = &saved[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let dot: f64 = y.iter().zip(gr.iter()).map(|(yi, gi)| yi * gi).sum();
                    for c in 0..cols {
                        dx[r * cols + c] = y[c] * (gr[c] - dot);
                    }
                }
                parents[0].accumulate_grad(&dx);
            }),
        )
    }

    /// Row-wise log-softmax over the last axis; `exp(log_softmax(x))` equals
    /// `softmax(x)` to machine precision.
    pub fn log_softmax_last(&self) -> Tensor {
        let cols = *self.shape().last().unwrap_or(&1);
        let rows = self.numel() / cols;
        let mut out = vec![0.0; self.numel()];
        {
            let data = self.data();
            for r in 0..rows {
                let row = &data[r * cols..(r + 1) * cols];
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = row.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln() + mx;
                for (o, &x) in out[r * cols..(r + 1) * cols].iter_mut().zip(row.iter()) {
                    *o = x - lse;
                }
            }
        }
        let saved = out.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let mut dx = vec![0.0; g.len()];
                for r in 0..rows {
                    let y = &saved[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let gsum: f64 = gr.iter().sum();
                    for c in 0..cols {
                        dx[r * cols + c] = gr[c] - y[c].exp() * gsum;
                    }
                }
                parents[0].accumulate_grad(&dx);
            }),
        )
    }

    /// Layer normalization over the last axis with affine parameters.
    /// `gamma` and `beta` must have the size of the last axis.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
        let cols = *self.shape().last().unwrap_or(&0);
        if gamma.numel() != cols || beta.numel() != cols {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                left: self.shape().to_vec(),
                right: gamma.shape().to_vec(),
            });
        }
        let rows = self.numel() / cols;
        let mut out = vec![0.0; self.numel()];
        let mut xhat = vec![0.0; self.numel()];
        let mut inv_std = vec![0.0; rows];
        {
            let data = self.data();
            let gv = gamma.data();
            let bv = beta.data();
            for r in 0..rows {
                let row = &data[r * cols..(r + 1) * cols];
                let mean = row.iter().sum::<f64>() / cols as f64;
                let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / cols as f64;
                let is = 1.0 / (var + NORM_EPS).sqrt();
                inv_std[r] = is;
                for c in 0..cols {
                    let h = (row[c] - mean) * is;
                    xhat[r * cols + c] = h;
                    out[r * cols + c] = h * gv[c] + bv[c];
                }
            }
        }
        let gamma_c = gamma.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, parents| {
                let gv = gamma_c.data();
                let mut dx = vec![0.0; g.len()];
                let mut dgamma = vec![0.0; cols];
                let mut dbeta = vec![0.0; cols];
                for r in 0..rows {
                    let h = &xhat[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let mut sum_gh = 0.0;
                    let mut sum_ghh = 0.0;
                    for c in 0..cols {
                        let gg = gr[c] * gv[c];
                        sum_gh += gg;
                        sum_ghh += gg * h[c];
                        dgamma[c] += gr[c] * h[c];
                        dbeta[c] += gr[c];
                    }
                    let n = cols as f64;
                    for c in 0..cols {
                        let gg = gr[c] * gv[c];
                        dx[r * cols + c] = inv_std[r] * (gg - sum_gh / n - h[c] * sum_ghh / n);
                    }
                }
                drop(gv);
                parents[0].accumulate_grad(&dx);
                parents[1].accumulate_grad(&dgamma);
                parents[2].accumulate_grad(&dbeta);
            }),
        ))
    }

    /// Batch normalization over batch and spatial dims of [B,C,H,W].
    ///
    /// Training mode normalizes with batch statistics and returns the biased
    /// batch variance so callers can update running estimates; eval mode
    /// normalizes with the provided running statistics.
    pub fn batch_norm(
        &self,
        gamma: &Tensor,
        beta: &Tensor,
        running_mean: &[f64],
        running_var: &[f64],
        training: bool,
    ) -> Result<(Tensor, Option<(Vec<f64>, Vec<f64>)>)> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(TensorError::InvalidShape {
                op: "batch_norm",
                message: format!("expected [B,C,H,W], got {:?}", s),
            });
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        if gamma.numel() != c || beta.numel() != c || running_mean.len() != c || running_var.len() != c {
            return Err(TensorError::ShapeMismatch {
                op: "batch_norm",
                left: s.to_vec(),
                right: gamma.shape().to_vec(),
            });
        }
        let plane = h * w;
        let n = (b * plane) as f64;

        let (mean, var): (Vec<f64>, Vec<f64>) = if training {
            let data = self.data();
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ci in 0..c {
                let mut sum = 0.0;
                for bi in 0..b {
                    let base = (bi * c + ci) * plane;
                    sum += data[base..base + plane].iter().sum::<f64>();
                }
                mean[ci] = sum / n;
                let mut sq = 0.0;
                for bi in 0..b {
                    let base = (bi * c + ci) * plane;
                    for &x in &data[base..base + plane] {
                        let d = x - mean[ci];
                        sq += d * d;
                    }
                }
                var[ci] = sq / n;
            }
            (mean, var)
        } else {
            (running_mean.to_vec(), running_var.to_vec())
        };

        let mut out = vec![0.0; self.numel()];
        let mut xhat = vec![0.0; self.numel()];
        {
            let data = self.data();
            let gv = gamma.data();
            let bv = beta.data();
            for bi in 0..b {
                for ci in 0..c {
                    let inv = 1.0 / (var[ci] + NORM_EPS).sqrt();
                    let base = (bi * c + ci) * plane;
                    for k in 0..plane {
                        let hval = (data[base + k] - mean[ci]) * inv;
                        xhat[base + k] = hval;
                        out[base + k] = hval * gv[ci] + bv[ci];
                    }
                }
            }
        }
        let stats = if training {
            Some((mean.clone(), var.clone()))
        } else {
            None
        };
        let gamma_c = gamma.clone();
        let var_b = var.clone();
        let out_tensor = Tensor::from_op(
            s.to_vec(),
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, parents| {
                let gv = gamma_c.data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut dx = vec![0.0; g.len()];
                if training {
                    // Standard training-mode backward through batch stats.
                    for ci in 0..c {
                        let inv = 1.0 / (var_b[ci] + NORM_EPS).sqrt();
                        let mut sum_g = 0.0;
                        let mut sum_gh = 0.0;
                        for bi in 0..b {
                            let base = (bi * c + ci) * plane;
                            for k in 0..plane {
                                let gi = g[base + k];
                                sum_g += gi;
                                sum_gh += gi * xhat[base + k];
                                dgamma[ci] += gi * xhat[base + k];
                                dbeta[ci] += gi;
                            }
                        }
                        for bi in 0..b {
                            let base = (bi * c + ci) * plane;
                            for k in 0..plane {
                                let gi = g[base + k];
                                dx[base + k] = gv[ci]
                                    * inv
                                    * (gi - sum_g / n - xhat[base + k] * sum_gh / n);
                            }
                        }
                    }
                } else {
                    // Eval mode: running stats are constants.
                    for ci in 0..c {
                        let inv = 1.0 / (var_b[ci] + NORM_EPS).sqrt();
                        for bi in 0..b {
                            let base = (bi * c + ci) * plane;
                            for k in 0..plane {
                                let gi = g[base + k];
                                dgamma[ci] += gi * xhat[base + k];
                                dbeta[ci] += gi;
                                dx[base + k] = gi * gv[ci] * inv;
                            }
                        }
                    }
                }
                drop(gv);
                parents[0].accumulate_grad(&dx);
                parents[1].accumulate_grad(&dgamma);
                parents[2].accumulate_grad(&dbeta);
            }),
        );
        Ok((out_tensor, stats))
    }

    /// Inverted dropout: zero with probability `p` during training and scale
    /// survivors by 1/(1-p); identity in eval mode.
    pub fn dropout(&self, p: f64, training: bool, rng: &mut impl Rng) -> Result<Tensor> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidArgument {
                op: "dropout",
                message: format!("p must be in [0,1), got {p}"),
            });
        }
        if !training || p == 0.0 {
            return Ok(Tensor::from_op(
                self.shape().to_vec(),
                self.to_vec(),
                vec![self.clone()],
                Box::new(|g, parents| parents[0].accumulate_grad(g)),
            ));
        }
        let scale = 1.0 / (1.0 - p);
        let keep: Vec<f64> = (0..self.numel())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { scale })
            .collect();
        let data: Vec<f64> = self
            .data()
            .iter()
            .zip(keep.iter())
            .map(|(x, k)| x * k)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let dx: Vec<f64> = g.iter().zip(keep.iter()).map(|(gi, k)| gi * k).collect();
                parents[0].accumulate_grad(&dx);
            }),
        ))
    }

    /// im2col: extract `kh x kw` patches at `stride` with zero `padding` from
    /// a [B,C,H,W] tensor, producing [B*oh*ow, C*kh*kw] rows (patch per row,
    /// channel-major within the row).
    pub fn unfold(&self, kh: usize, kw: usize, stride: usize, padding: usize) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(TensorError::InvalidShape {
                op: "unfold",
                message: format!("expected [B,C,H,W], got {:?}", s),
            });
        }
        if kh == 0 || kw == 0 || stride == 0 {
            return Err(TensorError::InvalidArgument {
                op: "unfold",
                message: "kernel and stride must be >= 1".into(),
            });
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(TensorError::InvalidShape {
                op: "unfold",
                message: format!("kernel {kh}x{kw} larger than padded input {h}x{w}+{padding}"),
            });
        }
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (w + 2 * padding - kw) / stride + 1;
        let row = c * kh * kw;
        let mut out = vec![0.0; b * oh * ow * row];
        {
            let data = self.data();
            for bi in 0..b {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let dst = ((bi * oh + oy) * ow + ox) * row;
                        for ci in 0..c {
                            for ky in 0..kh {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let src_base = ((bi * c + ci) * h + iy as usize) * w;
                                let dst_base = dst + (ci * kh + ky) * kw;
                                for kx in 0..kw {
                                    let ix = (ox * stride + kx) as isize - padding as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    out[dst_base + kx] = data[src_base + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            vec![b * oh * ow, row],
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                // col2im scatter-add.
                let mut dx = vec![0.0; b * c * h * w];
                for bi in 0..b {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let src = ((bi * oh + oy) * ow + ox) * row;
                            for ci in 0..c {
                                for ky in 0..kh {
                                    let iy = (oy * stride + ky) as isize - padding as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    let dst_base = ((bi * c + ci) * h + iy as usize) * w;
                                    let src_base = src + (ci * kh + ky) * kw;
                                    for kx in 0..kw {
                                        let ix = (ox * stride + kx) as isize - padding as isize;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        dx[dst_base + ix as usize] += g[src_base + kx];
                                    }
                                }
                            }
                        }
                    }
                }
                parents[0].accumulate_grad(&dx);
            }),
        ))
    }

    /// 2-D convolution of [B,Cin,H,W] with [Cout,Cin,kh,kw] weights.
    /// Output spatial size: floor((H + 2*padding - kh)/stride) + 1.
    pub fn conv2d(
        &self,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        let si = self.shape();
        let sw = weight.shape();
        if si.len() != 4 || sw.len() != 4 {
            return Err(TensorError::InvalidShape {
                op: "conv2d",
                message: format!("expected 4-D input and weight, got {:?} and {:?}", si, sw),
            });
        }
        if si[1] != sw[1] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                left: si.to_vec(),
                right: sw.to_vec(),
            });
        }
        let (b, _cin, h, w) = (si[0], si[1], si[2], si[3]);
        let (cout, cin, kh, kw) = (sw[0], sw[1], sw[2], sw[3]);
        if let Some(bt) = bias {
            if bt.numel() != cout {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d",
                    left: sw.to_vec(),
                    right: bt.shape().to_vec(),
                });
            }
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(TensorError::InvalidShape {
                op: "conv2d",
                message: format!(
                    "kernel {kh}x{kw} does not fit input {h}x{w} with padding {padding}"
                ),
            });
        }
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (w + 2 * padding - kw) / stride + 1;
        let cols = self.unfold(kh, kw, stride, padding)?; // [B*oh*ow, cin*kh*kw]
        let w2 = weight.reshape(&[cout, cin * kh * kw])?;
        let mut out = cols.matmul(&w2.transpose()?)?; // [B*oh*ow, cout]
        if let Some(bt) = bias {
            out = out.add_rowvec(bt)?;
        }
        out.reshape(&[b, oh, ow, cout])?.permute(&[0, 3, 1, 2])
    }

    /// Bilinear upsampling of [B,C,H,W] with the half-pixel (align-corners
    /// false) convention; source coords are clamped at the borders.
    pub fn bilinear_upsample(&self, out_h: usize, out_w: usize) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(TensorError::InvalidShape {
                op: "bilinear_upsample",
                message: format!("expected [B,C,H,W], got {:?}", s),
            });
        }
        if out_h == 0 || out_w == 0 {
            return Err(TensorError::InvalidArgument {
                op: "bilinear_upsample",
                message: "zero-size output".into(),
            });
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        // (low index, high index, high weight) per output coordinate
        let axis_map = |out_n: usize, in_n: usize| -> Vec<(usize, usize, f64)> {
            let scale = in_n as f64 / out_n as f64;
            (0..out_n)
                .map(|o| {
                    let src = (o as f64 + 0.5) * scale - 0.5;
                    let src = src.max(0.0).min((in_n - 1) as f64);
                    let lo = src.floor() as usize;
                    let hi = (lo + 1).min(in_n - 1);
                    (lo, hi, src - lo as f64)
                })
                .collect()
        };
        let ys = axis_map(out_h, h);
        let xs = axis_map(out_w, w);
        let mut out = vec![0.0; b * c * out_h * out_w];
        {
            let data = self.data();
            for bc in 0..b * c {
                let src = &data[bc * h * w..(bc + 1) * h * w];
                let dst = &mut out[bc * out_h * out_w..(bc + 1) * out_h * out_w];
                for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                    for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                        let v00 = src[y0 * w + x0];
                        let v01 = src[y0 * w + x1];
                        let v10 = src[y1 * w + x0];
                        let v11 = src[y1 * w + x1];
                        dst[oy * out_w + ox] = v00 * (1.0 - fy) * (1.0 - fx)
                            + v01 * (1.0 - fy) * fx
                            + v10 * fy * (1.0 - fx)
                            + v11 * fy * fx;
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            vec![b, c, out_h, out_w],
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let mut dx = vec![0.0; b * c * h * w];
                for bc in 0..b * c {
                    let dsrc = &mut dx[bc * h * w..(bc + 1) * h * w];
                    let gdst = &g[bc * out_h * out_w..(bc + 1) * out_h * out_w];
                    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                            let gi = gdst[oy * out_w + ox];
                            dsrc[y0 * w + x0] += gi * (1.0 - fy) * (1.0 - fx);
                            dsrc[y0 * w + x1] += gi * (1.0 - fy) * fx;
                            dsrc[y1 * w + x0] += gi * fy * (1.0 - fx);
                            dsrc[y1 * w + x1] += gi * fy * fx;
                        }
                    }
                }
                parents[0].accumulate_grad(&dx);
            }),
        ))
    }

    /// Mean over the spatial dims of [B,C,H,W] -> [B,C].
    pub fn global_avg_pool(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(TensorError::InvalidShape {
                op: "global_avg_pool",
                message: format!("expected [B,C,H,W], got {:?}", s),
            });
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let plane = h * w;
        let mut out = vec![0.0; b * c];
        {
            let data = self.data();
            for (i, o) in out.iter_mut().enumerate() {
                *o = data[i * plane..(i + 1) * plane].iter().sum::<f64>() / plane as f64;
            }
        }
        Ok(Tensor::from_op(
            vec![b, c],
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let mut dx = vec![0.0; b * c * plane];
                for (i, &gi) in g.iter().enumerate() {
                    let v = gi / plane as f64;
                    for slot in dx[i * plane..(i + 1) * plane].iter_mut() {
                        *slot = v;
                    }
                }
                parents[0].accumulate_grad(&dx);
            }),
        ))
    }

    /// Normalize each row of a 2-D matrix to unit L2 norm (epsilon-guarded).
    pub fn l2_normalize_rows(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(TensorError::InvalidShape {
                op: "l2_normalize_rows",
                message: format!("expected rank 2, got {:?}", s),
            });
        }
        let (rows, cols) = (s[0], s[1]);
        const EPS: f64 = 1e-12;
        let mut out = vec![0.0; rows * cols];
        let mut norms = vec![0.0; rows];
        {
            let data = self.data();
            for r in 0..rows {
                let row = &data[r * cols..(r + 1) * cols];
                let n = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(EPS);
                norms[r] = n;
                for c in 0..cols {
                    out[r * cols + c] = row[c] / n;
                }
            }
        }
        let saved = out.clone();
        Ok(Tensor::from_op(
            s.to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                // d(x/||x||)/dx = (I - y y^T) / ||x||
                let mut dx = vec![0.0; g.len()];
                for r in 0..rows {
                    let y = &saved[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let dot: f64 = y.iter().zip(gr.iter()).map(|(yi, gi)| yi * gi).sum();
                    for c in 0..cols {
                        dx[r * cols + c] = (gr[c] - y[c] * dot) / norms[r];
                    }
                }
                parents[0].accumulate_grad(&dx);
            }),
        ))
    }
}

/// Direct nested-loop convolution, exported for oracle comparisons in tests
/// and the gradcheck CLI. Intentionally naive and independent of `conv2d`.
pub fn conv2d_reference(
    input: &[f64],
    ishape: &[usize],
    weight: &[f64],
    wshape: &[usize],
    bias: Option<&[f64]>,
    stride: usize,
    padding: usize,
) -> (Vec<usize>, Vec<f64>) {
    let (b, cin, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
    let (cout, _cin, kh, kw) = (wshape[0], wshape[1], wshape[2], wshape[3]);
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let mut out = vec![0.0; b * cout * oh * ow];
    for bi in 0..b {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map(|bv| bv[co]).unwrap_or(0.0);
                    for ci in 0..cin {
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += input[((bi * cin + ci) * h + iy as usize) * w + ix as usize]
                                    * weight[((co * cin + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((bi * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (vec![b, cout, oh, ow], out)
}

/// Re-export of the GEMM helper for modules that need raw matrix products
/// outside the autodiff graph (power iteration, oracles).
pub fn gemm_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    gemm(a, b, n, k, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn softmax_uniform_and_shift_invariance() {
        let x = Tensor::from_vec(&[3], vec![0.0, 0.0, 0.0]).unwrap();
        for v in x.softmax_last().to_vec() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let big = Tensor::from_vec(&[2], vec![1000.0, 1000.0]).unwrap();
        let y = big.softmax_last().to_vec();
        assert_eq!(y, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_closed_form() {
        let x = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = x.softmax_last().to_vec();
        let expect = [0.09003057, 0.24472847, 0.66524096];
        for (a, b) in y.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn log_softmax_consistent_with_softmax() {
        let x = Tensor::from_vec(&[4], vec![0.3, -1.2, 2.0, 0.0]).unwrap();
        let p = x.softmax_last().to_vec();
        let lp = x.log_softmax_last().to_vec();
        for (a, b) in p.iter().zip(lp.iter()) {
            assert!((a - b.exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let x = Tensor::from_vec(&[4], vec![5.0; 4]).unwrap();
        let g = Tensor::ones(&[4]);
        let b = Tensor::zeros(&[4]);
        let y = x.layer_norm(&g, &b).unwrap();
        assert_eq!(y.to_vec(), vec![0.0; 4]);
    }

    #[test]
    fn layer_norm_closed_form() {
        let x = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let g = Tensor::ones(&[3]);
        let b = Tensor::zeros(&[3]);
        let y = x.layer_norm(&g, &b).unwrap().to_vec();
        let expect = [-1.22474, 0.0, 1.22474];
        for (a, e) in y.iter().zip(expect.iter()) {
            assert!((a - e).abs() < 1e-4, "{a} vs {e}");
        }
    }

    #[test]
    fn batch_norm_training_standardizes() {
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        // Large variance keeps the epsilon bias below the 1e-6 tolerance.
        let data: Vec<f64> = (0..2 * 3 * 4 * 4).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let x = Tensor::from_vec(&[2, 3, 4, 4], data).unwrap();
        let g = Tensor::ones(&[3]);
        let b = Tensor::zeros(&[3]);
        let (y, stats) = x.batch_norm(&g, &b, &[0.0; 3], &[1.0; 3], true).unwrap();
        assert!(stats.is_some());
        let yv = y.to_vec();
        for ci in 0..3 {
            let mut vals = Vec::new();
            for bi in 0..2 {
                let base = (bi * 3 + ci) * 16;
                vals.extend_from_slice(&yv[base..base + 16]);
            }
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-6, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "var {var}");
        }
    }

    #[test]
    fn conv2d_matches_reference_on_random_shapes() {
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let b = rng.gen_range(1..=2);
            let cin = rng.gen_range(1..=4);
            let cout = rng.gen_range(1..=4);
            let h = rng.gen_range(3..=9);
            let w = rng.gen_range(3..=9);
            let kh = rng.gen_range(1..=3.min(h));
            let kw = rng.gen_range(1..=3.min(w));
            let stride = rng.gen_range(1..=2);
            let padding = rng.gen_range(0..=1);
            let input: Vec<f64> = (0..b * cin * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let weight: Vec<f64> = (0..cout * cin * kh * kw).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let bias: Vec<f64> = (0..cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let ti = Tensor::from_vec(&[b, cin, h, w], input.clone()).unwrap();
            let tw = Tensor::from_vec(&[cout, cin, kh, kw], weight.clone()).unwrap();
            let tb = Tensor::from_vec(&[cout], bias.clone()).unwrap();
            let y = ti.conv2d(&tw, Some(&tb), stride, padding).unwrap();
            let (rshape, rdata) = conv2d_reference(
                &input,
                &[b, cin, h, w],
                &weight,
                &[cout, cin, kh, kw],
                Some(&bias),
                stride,
                padding,
            );
            assert_eq!(y.shape(), rshape.as_slice());
            for (a, e) in y.to_vec().iter().zip(rdata.iter()) {
                assert!((a - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn conv2d_basic_examples() {
        // 3x3 ones * 3x3 ones kernel, no padding -> 9
        let x = Tensor::ones(&[1, 1, 3, 3]);
        let w = Tensor::ones(&[1, 1, 3, 3]);
        let y = x.conv2d(&w, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.item(), 9.0);
        // 1x1 identity kernel
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::ones(&[1, 1, 1, 1]);
        let y = x.conv2d(&w, None, 1, 0).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn conv2d_strided_shape() {
        let x = Tensor::zeros(&[2, 3, 8, 8]);
        let w = Tensor::zeros(&[4, 3, 3, 3]);
        let y = x.conv2d(&w, None, 2, 1).unwrap();
        assert_eq!(y.shape(), &[2, 4, 4, 4]);
    }

    #[test]
    fn bilinear_upsample_constant_and_oracle() {
        let x = Tensor::full(&[1, 1, 1, 1], 3.5);
        let y = x.bilinear_upsample(4, 4).unwrap();
        assert_eq!(y.to_vec(), vec![3.5; 16]);

        // independent direct-interpolation oracle on a 2x2 map
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = x.bilinear_upsample(4, 4).unwrap().to_vec();
        let src = [0.0, 1.0, 2.0, 3.0];
        let coord = |o: usize| -> (usize, usize, f64) {
            let s = ((o as f64 + 0.5) * 0.5 - 0.5).max(0.0).min(1.0);
            let lo = s.floor() as usize;
            (lo, (lo + 1).min(1), s - lo as f64)
        };
        for oy in 0..4 {
            for ox in 0..4 {
                let (y0, y1, fy) = coord(oy);
                let (x0, x1, fx) = coord(ox);
                let expect = src[y0 * 2 + x0] * (1.0 - fy) * (1.0 - fx)
                    + src[y0 * 2 + x1] * (1.0 - fy) * fx
                    + src[y1 * 2 + x0] * fy * (1.0 - fx)
                    + src[y1 * 2 + x1] * fy * fx;
                assert!((y[oy * 4 + ox] - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn global_avg_pool_values_and_gradient() {
        let x = Tensor::param(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = x.global_avg_pool().unwrap();
        assert_eq!(y.item(), 2.5);
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.25; 4]);
        let c = Tensor::full(&[1, 1, 3, 3], 7.0);
        assert_eq!(c.global_avg_pool().unwrap().item(), 7.0);
    }

    #[test]
    fn dropout_statistics() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1234);
        let n = 100_000;
        let x = Tensor::ones(&[n]);
        let y = x.dropout(0.5, true, &mut rng).unwrap();
        let v = y.to_vec();
        let mean = v.iter().sum::<f64>() / n as f64;
        let zero_frac = v.iter().filter(|&&z| z == 0.0).count() as f64 / n as f64;
        // 3-sigma binomial bounds
        let sigma_mean = 2.0 * (0.25_f64 / n as f64).sqrt();
        let sigma_frac = (0.25_f64 / n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * sigma_mean, "mean {mean}");
        assert!((zero_frac - 0.5).abs() < 3.0 * sigma_frac, "frac {zero_frac}");
        // identity cases
        let id = x.dropout(0.0, true, &mut rng).unwrap();
        assert_eq!(id.to_vec(), x.to_vec());
        let ev = x.dropout(0.5, false, &mut rng).unwrap();
        assert_eq!(ev.to_vec(), x.to_vec());
        assert!(x.dropout(1.0, true, &mut rng).is_err());
    }
}
