//! Elementwise arithmetic and activation operators.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        check_same_shape("add", self, other)?;
        let data: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|g, parents| {
                parents[0].accumulate_grad(g);
                parents[1].accumulate_grad(g);
            }),
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        check_same_shape("sub", self, other)?;
        let data: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a - b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|g, parents| {
                parents[0].accumulate_grad(g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                parents[1].accumulate_grad(&neg);
            }),
        ))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        check_same_shape("mul", self, other)?;
        let data: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a * b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|g, parents| {
                let a = parents[0].data();
                let b = parents[1].data();
                let da: Vec<f64> = g.iter().zip(b.iter()).map(|(gi, bi)| gi * bi).collect();
                let db: Vec<f64> = g.iter().zip(a.iter()).map(|(gi, ai)| gi * ai).collect();
                drop(a);
                drop(b);
                parents[0].accumulate_grad(&da);
                parents[1].accumulate_grad(&db);
            }),
        ))
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        check_same_shape("div", self, other)?;
        let data: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a / b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|g, parents| {
                let a = parents[0].data();
                let b = parents[1].data();
                let da: Vec<f64> = g.iter().zip(b.iter()).map(|(gi, bi)| gi / bi).collect();
                let db: Vec<f64> = g
                    .iter()
                    .zip(a.iter().zip(b.iter()))
                    .map(|(gi, (ai, bi))| -gi * ai / (bi * bi))
                    .collect();
                drop(a);
                drop(b);
                parents[0].accumulate_grad(&da);
                parents[1].accumulate_grad(&db);
            }),
        ))
    }

    pub fn neg(&self) -> Tensor {
        self.map_unary(|x| -x, |_x, _y| -1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.map_unary(move |x| x + c, |_x, _y| 1.0)
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        self.map_unary(move |x| x * c, move |_x, _y| c)
    }

    pub fn recip(&self) -> Tensor {
        self.map_unary(|x| 1.0 / x, |x, _y| -1.0 / (x * x))
    }

    pub fn exp(&self) -> Tensor {
        self.map_unary(f64::exp, |_x, y| y)
    }

    pub fn ln(&self) -> Tensor {
        self.map_unary(f64::ln, |x, _y| 1.0 / x)
    }

    pub fn sqrt(&self) -> Tensor {
        self.map_unary(f64::sqrt, |_x, y| 0.5 / y)
    }

    pub fn abs(&self) -> Tensor {
        self.map_unary(f64::abs, |x, _y| if x >= 0.0 { 1.0 } else { -1.0 })
    }

    pub fn square(&self) -> Tensor {
        self.map_unary(|x| x * x, |x, _y| 2.0 * x)
    }

    pub fn tanh(&self) -> Tensor {
        self.map_unary(f64::tanh, |_x, y| 1.0 - y * y)
    }

    pub fn relu(&self) -> Tensor {
        self.map_unary(|x| x.max(0.0), |x, _y| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        self.map_unary(
            move |x| if x > 0.0 { x } else { slope * x },
            move |x, _y| if x > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map_unary(|x| 1.0 / (1.0 + (-x).exp()), |_x, y| y * (1.0 - y))
    }

    /// x * sigmoid(x).
    pub fn silu(&self) -> Tensor {
        self.map_unary(
            |x| x / (1.0 + (-x).exp()),
            |x, _y| {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            },
        )
    }

    /// Gaussian error linear unit, tanh approximation (used consistently in
    /// both forward and backward).
    pub fn gelu(&self) -> Tensor {
        const K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        const C: f64 = 0.044_715;
        self.map_unary(
            |x| 0.5 * x * (1.0 + (K * (x + C * x * x * x)).tanh()),
            |x, _y| {
                let u = K * (x + C * x * x * x);
                let t = u.tanh();
                let du = K * (1.0 + 3.0 * C * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            },
        )
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(move |g, parents| {
                parents[0].accumulate_grad(&vec![g[0]; n]);
            }),
        )
    }

    /// Arithmetic mean of all elements, as a scalar tensor.
    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        let s: f64 = self.data().iter().sum();
        Tensor::from_op(
            vec![1],
            vec![s / n as f64],
            vec![self.clone()],
            Box::new(move |g, parents| {
                parents[0].accumulate_grad(&vec![g[0] / n as f64; n]);
            }),
        )
    }

    /// Multiply every element by a scalar *tensor* (shape [1]), with
    /// gradients flowing to both operands.
    pub fn scale_by(&self, s: &Tensor) -> Result<Tensor> {
        if s.numel() != 1 {
            return Err(TensorError::InvalidShape {
                op: "scale_by",
                message: format!("scale must be a scalar, got shape {:?}", s.shape()),
            });
        }
        let sv = s.item();
        let data: Vec<f64> = self.data().iter().map(|x| x * sv).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), s.clone()],
            Box::new(move |g, parents| {
                let x = parents[0].data();
                let ds: f64 = g.iter().zip(x.iter()).map(|(gi, xi)| gi * xi).sum();
                let dx: Vec<f64> = g.iter().map(|gi| gi * sv).collect();
                drop(x);
                parents[0].accumulate_grad(&dx);
                parents[1].accumulate_grad(&[ds]);
            }),
        ))
    }

    fn map_unary(
        &self,
        f: impl Fn(f64) -> f64 + 'static,
        // derivative as a function of (input, output)
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&x| f(x)).collect();
        let saved_out = data.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let x = parents[0].data();
                let dx: Vec<f64> = g
                    .iter()
                    .zip(x.iter().zip(saved_out.iter()))
                    .map(|(gi, (&xi, &yi))| gi * df(xi, yi))
                    .collect();
                drop(x);
                parents[0].accumulate_grad(&dx);
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_and_sigmoid_values() {
        let x = Tensor::from_vec(&[3], vec![-1.5, 0.0, 2.0]).unwrap();
        assert_eq!(x.relu().to_vec(), vec![0.0, 0.0, 2.0]);
        let s = Tensor::scalar(0.0).sigmoid();
        assert_eq!(s.item(), 0.5);
    }

    #[test]
    fn silu_closed_form() {
        let y = Tensor::scalar(1.0).silu();
        let expect = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((y.item() - expect).abs() < 1e-15);
        assert!((y.item() - 0.731058).abs() < 1e-6);
    }

    #[test]
    fn relu_gradient_mask() {
        let x = Tensor::param(&[2], vec![-1.0, 2.0]).unwrap();
        x.relu().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn mean_gradient_uniform() {
        let x = Tensor::param(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        x.mean().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let a = Tensor::zeros(&[2, 2]);
        let b = Tensor::zeros(&[4]);
        assert!(matches!(
            a.add(&b),
            Err(TensorError::ShapeMismatch { op: "add", .. })
        ));
    }
}
