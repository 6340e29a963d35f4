//! Matrix products. The inner kernel delegates to `matrixmultiply::dgemm`
//! (single-threaded, deterministic); everything autodiff-related stays here.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// C = A[n,k] * B[k,m], plain f64 GEMM on contiguous row-major slices.
pub(crate) fn gemm(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * m];
    if n == 0 || k == 0 || m == 0 {
        return c;
    }
    unsafe {
        matrixmultiply::dgemm(
            n,
            k,
            m,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            m as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            m as isize,
            1,
        );
    }
    c
}

/// C = A^T[k,n] * B[k,m] without materializing the transpose.
fn gemm_at_b(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * m];
    if n == 0 || k == 0 || m == 0 {
        return c;
    }
    unsafe {
        matrixmultiply::dgemm(
            n,
            k,
            m,
            1.0,
            a.as_ptr(),
            1,
            n as isize,
            b.as_ptr(),
            m as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            m as isize,
            1,
        );
    }
    c
}

/// C = A[n,k] * B^T[m,k] without materializing the transpose.
fn gemm_a_bt(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * m];
    if n == 0 || k == 0 || m == 0 {
        return c;
    }
    unsafe {
        matrixmultiply::dgemm(
            n,
            k,
            m,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            0.0,
            c.as_mut_ptr(),
            m as isize,
            1,
        );
    }
    c
}

impl Tensor {
    /// [n,k] x [k,m] -> [n,m].
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let out = gemm(&self.data(), &other.data(), n, k, m);
        Ok(Tensor::from_op(
            vec![n, m],
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g, parents| {
                let a = parents[0].data();
                let b = parents[1].data();
                if parents[0].requires_grad_flag() {
                    // dA = dC * B^T
                    let da = gemm_a_bt(g, &b, n, m, k);
                    drop(b);
                    parents[0].accumulate_grad(&da);
                    let b = parents[1].data();
                    if parents[1].requires_grad_flag() {
                        let db = gemm_at_b(&a, g, k, n, m);
                        drop(a);
                        drop(b);
                        parents[1].accumulate_grad(&db);
                    }
                } else if parents[1].requires_grad_flag() {
                    // dB = A^T * dC
                    let db = gemm_at_b(&a, g, k, n, m);
                    drop(a);
                    drop(b);
                    parents[1].accumulate_grad(&db);
                }
            }),
        ))
    }

    /// Batched matmul: [g,n,k] x [g,k,m] -> [g,n,m].
    pub fn bmm(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(TensorError::ShapeMismatch {
                op: "bmm",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (groups, n, k, m) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; groups * n * m];
        {
            let a = self.data();
            let b = other.data();
            for gi in 0..groups {
                let c = gemm(&a[gi * n * k..(gi + 1) * n * k], &b[gi * k * m..(gi + 1) * k * m], n, k, m);
                out[gi * n * m..(gi + 1) * n * m].copy_from_slice(&c);
            }
        }
        Ok(Tensor::from_op(
            vec![groups, n, m],
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g, parents| {
                let a = parents[0].data();
                let b = parents[1].data();
                let mut da = vec![0.0; groups * n * k];
                let mut db = vec![0.0; groups * k * m];
                for gi in 0..groups {
                    let gc = &g[gi * n * m..(gi + 1) * n * m];
                    if parents[0].requires_grad_flag() {
                        let d = gemm_a_bt(gc, &b[gi * k * m..(gi + 1) * k * m], n, m, k);
                        da[gi * n * k..(gi + 1) * n * k].copy_from_slice(&d);
                    }
                    if parents[1].requires_grad_flag() {
                        let d = gemm_at_b(&a[gi * n * k..(gi + 1) * n * k], gc, k, n, m);
                        db[gi * k * m..(gi + 1) * k * m].copy_from_slice(&d);
                    }
                }
                drop(a);
                drop(b);
                if parents[0].requires_grad_flag() {
                    parents[0].accumulate_grad(&da);
                }
                if parents[1].requires_grad_flag() {
                    parents[1].accumulate_grad(&db);
                }
            }),
        ))
    }

    /// Transpose the last two axes of a rank-3 tensor.
    pub fn transpose_last2(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 3 {
            return Err(TensorError::InvalidShape {
                op: "transpose_last2",
                message: format!("expected rank 3, got {:?}", s),
            });
        }
        self.permute(&[0, 2, 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent triple-loop reference used to pin the GEMM backend.
    fn naive_matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
        let mut c = vec![0.0; n * m];
        for i in 0..n {
            for p in 0..k {
                let av = a[i * k + p];
                for j in 0..m {
                    c[i * m + j] += av * b[p * m + j];
                }
            }
        }
        c
    }

    #[test]
    fn matmul_matches_naive_reference() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for &(n, k, m) in &[(1usize, 1usize, 1usize), (3, 4, 5), (7, 2, 9), (16, 16, 16)] {
            let a: Vec<f64> = (0..n * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..k * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let ta = Tensor::from_vec(&[n, k], a.clone()).unwrap();
            let tb = Tensor::from_vec(&[k, m], b.clone()).unwrap();
            let c = ta.matmul(&tb).unwrap();
            let expect = naive_matmul(&a, &b, n, k, m);
            for (x, y) in c.to_vec().iter().zip(expect.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_gradients() {
        // f = sum(A*B); dA = ones*B^T, dB = A^T*ones
        let a = Tensor::param(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::param(&[2, 2], vec![0.5, 0.3, 0.7, 0.1]).unwrap();
        a.matmul(&b).unwrap().sum().backward().unwrap();
        let da = a.grad().unwrap();
        for &v in &da {
            assert!((v - 0.8).abs() < 1e-12 || (v - 1.2).abs() < 1e-12);
        }
        assert_eq!(da, vec![0.8, 0.8, 0.8, 0.8]);
        assert_eq!(b.grad().unwrap(), vec![4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn bmm_matches_per_group_matmul() {
        let a = Tensor::from_vec(&[2, 2, 3], (0..12).map(|v| v as f64).collect()).unwrap();
        let b = Tensor::from_vec(&[2, 3, 2], (0..12).map(|v| v as f64 * 0.5).collect()).unwrap();
        let c = a.bmm(&b).unwrap();
        for gi in 0..2 {
            let ag = a.narrow(0, gi, 1).unwrap().reshape(&[2, 3]).unwrap();
            let bg = b.narrow(0, gi, 1).unwrap().reshape(&[3, 2]).unwrap();
            let cg = ag.matmul(&bg).unwrap();
            let expect = cg.to_vec();
            let got = c.narrow(0, gi, 1).unwrap().to_vec();
            assert_eq!(got, expect);
        }
    }
}
