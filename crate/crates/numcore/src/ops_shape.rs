//! Shape manipulation: reshape, permute, concatenation, slicing, gathers,
//! and the broadcast helpers the attention blocks rely on.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

fn permute_copy(src: &[f64], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let in_strides = strides_of(shape);
    let out_strides = strides_of(&out_shape);
    let mut out = vec![0.0; src.len()];
    // Walk output positions in order; translate to input offset.
    let mut idx = vec![0usize; rank];
    for slot in out.iter_mut() {
        let mut src_off = 0;
        for d in 0..rank {
            src_off += idx[d] * in_strides[axes[d]];
        }
        *slot = src[src_off];
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    let _ = out_strides;
    (out_shape, out)
}

impl Tensor {
    /// View with a new shape; element count must match. Data is copied (the
    /// engine has no stride views), gradient is a reshape of the output grad.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(TensorError::InvalidShape {
                op: "reshape",
                message: format!(
                    "cannot reshape {:?} ({} elements) to {:?} ({} elements)",
                    self.shape(),
                    self.numel(),
                    shape,
                    numel
                ),
            });
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|g, parents| parents[0].accumulate_grad(g)),
        ))
    }

    /// Reorder axes; `axes` must be a permutation of `0..rank`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let rank = self.shape().len();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(TensorError::InvalidArgument {
                op: "permute",
                message: format!("axes {:?} is not a permutation of 0..{}", axes, rank),
            });
        }
        let (out_shape, out) = permute_copy(&self.data(), self.shape(), axes);
        let axes_owned = axes.to_vec();
        let out_shape_b = out_shape.clone();
        Ok(Tensor::from_op(
            out_shape,
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                // Inverse permutation maps output axes back to input axes.
                let mut inv = vec![0usize; axes_owned.len()];
                for (i, &a) in axes_owned.iter().enumerate() {
                    inv[a] = i;
                }
                let (_, dg) = permute_copy(g, &out_shape_b, &inv);
                parents[0].accumulate_grad(&dg);
            }),
        ))
    }

    /// 2-D matrix transpose.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.shape().len() != 2 {
            return Err(TensorError::InvalidShape {
                op: "transpose",
                message: format!("expected rank 2, got {:?}", self.shape()),
            });
        }
        self.permute(&[1, 0])
    }

    /// Concatenate along `axis`; all other dimensions must agree.
    pub fn cat(tensors: &[Tensor], axis: usize) -> Result<Tensor> {
        if tensors.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "cat",
                message: "empty tensor list".into(),
            });
        }
        let rank = tensors[0].shape().len();
        if axis >= rank {
            return Err(TensorError::InvalidArgument {
                op: "cat",
                message: format!("axis {axis} out of range for rank {rank}"),
            });
        }
        for t in tensors.iter().skip(1) {
            if t.shape().len() != rank
                || t.shape()
                    .iter()
                    .enumerate()
                    .any(|(d, &s)| d != axis && s != tensors[0].shape()[d])
            {
                return Err(TensorError::ShapeMismatch {
                    op: "cat",
                    left: tensors[0].shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
        }
        let mut out_shape = tensors[0].shape().to_vec();
        out_shape[axis] = tensors.iter().map(|t| t.shape()[axis]).sum();
        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let total: usize = out_shape.iter().product();
        let mut out = vec![0.0; total];
        let out_row = out_shape[axis] * inner;
        let mut offset = 0;
        let mut spans = Vec::with_capacity(tensors.len());
        for t in tensors {
            let len = t.shape()[axis] * inner;
            let data = t.data();
            for o in 0..outer {
                out[o * out_row + offset..o * out_row + offset + len]
                    .copy_from_slice(&data[o * len..(o + 1) * len]);
            }
            spans.push((offset, len));
            offset += len;
        }
        Ok(Tensor::from_op(
            out_shape,
            out,
            tensors.to_vec(),
            Box::new(move |g, parents| {
                for (p, &(off, len)) in parents.iter().zip(spans.iter()) {
                    let mut dp = vec![0.0; outer * len];
                    for o in 0..outer {
                        dp[o * len..(o + 1) * len]
                            .copy_from_slice(&g[o * out_row + off..o * out_row + off + len]);
                    }
                    p.accumulate_grad(&dp);
                }
            }),
        ))
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let rank = self.shape().len();
        if axis >= rank || start + len > self.shape()[axis] || len == 0 {
            return Err(TensorError::InvalidArgument {
                op: "narrow",
                message: format!(
                    "range {start}..{} invalid for axis {axis} of {:?}",
                    start + len,
                    self.shape()
                ),
            });
        }
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let src_row = self.shape()[axis] * inner;
        let dst_row = len * inner;
        let mut out_shape = self.shape().to_vec();
        out_shape[axis] = len;
        let mut out = vec![0.0; outer * dst_row];
        {
            let data = self.data();
            for o in 0..outer {
                out[o * dst_row..(o + 1) * dst_row].copy_from_slice(
                    &data[o * src_row + start * inner..o * src_row + start * inner + dst_row],
                );
            }
        }
        Ok(Tensor::from_op(
            out_shape,
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let mut dp = vec![0.0; outer * src_row];
                for o in 0..outer {
                    dp[o * src_row + start * inner..o * src_row + start * inner + dst_row]
                        .copy_from_slice(&g[o * dst_row..(o + 1) * dst_row]);
                }
                parents[0].accumulate_grad(&dp);
            }),
        ))
    }

    /// Gather rows (axis 0) by index; indices may repeat.
    pub fn index_select(&self, indices: &[usize]) -> Result<Tensor> {
        let rows = self.shape()[0];
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(TensorError::InvalidArgument {
                op: "index_select",
                message: format!("index {bad} out of range for {rows} rows"),
            });
        }
        let inner: usize = self.shape()[1..].iter().product();
        let mut out = Vec::with_capacity(indices.len() * inner);
        {
            let data = self.data();
            for &i in indices {
                out.extend_from_slice(&data[i * inner..(i + 1) * inner]);
            }
        }
        let mut out_shape = self.shape().to_vec();
        out_shape[0] = indices.len();
        let idx = indices.to_vec();
        Ok(Tensor::from_op(
            out_shape,
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let mut dp = vec![0.0; rows * inner];
                for (r, &i) in idx.iter().enumerate() {
                    for k in 0..inner {
                        dp[i * inner + k] += g[r * inner + k];
                    }
                }
                parents[0].accumulate_grad(&dp);
            }),
        ))
    }

    /// Add `other`, tiled cyclically: `other.numel()` must divide
    /// `self.numel()`. Used to broadcast per-window attention bias and masks
    /// over batch/head groups.
    pub fn add_cycle(&self, other: &Tensor) -> Result<Tensor> {
        let n = self.numel();
        let m = other.numel();
        if m == 0 || n % m != 0 {
            return Err(TensorError::ShapeMismatch {
                op: "add_cycle",
                left: self.shape().to_vec(),
                right: other.shape().to_vec(),
            });
        }
        let data: Vec<f64> = {
            let a = self.data();
            let b = other.data();
            a.iter().enumerate().map(|(i, &x)| x + b[i % m]).collect()
        };
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g, parents| {
                parents[0].accumulate_grad(g);
                if parents[1].requires_grad_flag() {
                    let mut db = vec![0.0; m];
                    for (i, &gi) in g.iter().enumerate() {
                        db[i % m] += gi;
                    }
                    parents[1].accumulate_grad(&db);
                }
            }),
        ))
    }

    /// Add a length-F vector to every row of an [N, F] matrix.
    pub fn add_rowvec(&self, bias: &Tensor) -> Result<Tensor> {
        let rank = self.shape().len();
        let f = *self.shape().last().unwrap_or(&0);
        if rank < 1 || bias.numel() != f {
            return Err(TensorError::ShapeMismatch {
                op: "add_rowvec",
                left: self.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        self.add_cycle(bias)
    }

    /// Cyclic shift of the two innermost-but-one dims of a [B, H, W, C]
    /// tensor (the token grid used by shifted-window attention). Positive
    /// shifts move content toward larger indices, wrapping around.
    pub fn roll_hw(&self, shift_h: i64, shift_w: i64) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(TensorError::InvalidShape {
                op: "roll_hw",
                message: format!("expected [B,H,W,C], got {:?}", s),
            });
        }
        let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
        let wrap = |v: i64, n: usize| -> usize {
            let n = n as i64;
            (((v % n) + n) % n) as usize
        };
        let mut out = vec![0.0; self.numel()];
        {
            let data = self.data();
            for bi in 0..b {
                for hi in 0..h {
                    let src_h = wrap(hi as i64 - shift_h, h);
                    for wi in 0..w {
                        let src_w = wrap(wi as i64 - shift_w, w);
                        let dst = ((bi * h + hi) * w + wi) * c;
                        let src = ((bi * h + src_h) * w + src_w) * c;
                        out[dst..dst + c].copy_from_slice(&data[src..src + c]);
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            s.to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let mut dp = vec![0.0; g.len()];
                for bi in 0..b {
                    for hi in 0..h {
                        let src_h = wrap(hi as i64 - shift_h, h);
                        for wi in 0..w {
                            let src_w = wrap(wi as i64 - shift_w, w);
                            let dst = ((bi * h + hi) * w + wi) * c;
                            let src = ((bi * h + src_h) * w + src_w) * c;
                            for k in 0..c {
                                dp[src + k] += g[dst + k];
                            }
                        }
                    }
                }
                parents[0].accumulate_grad(&dp);
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_roundtrip() {
        let x = Tensor::from_vec(&[2, 3, 4], (0..24).map(|v| v as f64).collect()).unwrap();
        let y = x.permute(&[2, 0, 1]).unwrap();
        assert_eq!(y.shape(), &[4, 2, 3]);
        let z = y.permute(&[1, 2, 0]).unwrap();
        assert_eq!(z.to_vec(), x.to_vec());
    }

    #[test]
    fn cat_and_narrow_inverse() {
        let a = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[2, 1], vec![5.0, 6.0]).unwrap();
        let c = Tensor::cat(&[a.clone(), b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.to_vec(), vec![1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let a2 = c.narrow(1, 0, 2).unwrap();
        assert_eq!(a2.to_vec(), a.to_vec());
    }

    #[test]
    fn index_select_backward_accumulates_repeats() {
        let x = Tensor::param(&[3, 2], vec![1.0; 6]).unwrap();
        let y = x.index_select(&[1, 1, 2]).unwrap();
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0, 2.0, 2.0, 1.0, 1.0]);
    }

    #[test]
    fn roll_wraps_and_inverts() {
        let x = Tensor::from_vec(&[1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = x.roll_hw(1, 0).unwrap();
        assert_eq!(y.to_vec(), vec![3.0, 4.0, 1.0, 2.0]);
        let z = y.roll_hw(-1, 0).unwrap();
        assert_eq!(z.to_vec(), x.to_vec());
    }

    #[test]
    fn add_cycle_broadcasts_and_reduces() {
        let x = Tensor::param(&[2, 2], vec![0.0; 4]).unwrap();
        let b = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = x.add_cycle(&b).unwrap();
        assert_eq!(y.to_vec(), vec![1.0, 2.0, 1.0, 2.0]);
        y.sum().backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![2.0, 2.0]);
    }
}
