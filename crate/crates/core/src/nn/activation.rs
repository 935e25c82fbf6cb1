use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::probe;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    /// Tanh approximation: `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    Gelu,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

impl Activation {
    pub fn forward<T: Scalar>(self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Activation::Relu => {
                if probe::active() {
                    probe::mix(x.data().iter().map(|v| (*v > T::zero()) as u64));
                }
                x.map(|v| v.max(T::zero()))
            }
            Activation::Gelu => x.map(|v| T::from_f64(gelu_scalar(v.as_f64()))),
        }
    }

    pub fn forward_inplace<T: Scalar>(self, x: &mut Tensor<T>) {
        match self {
            Activation::Relu => {
                if probe::active() {
                    probe::mix(x.data().iter().map(|v| (*v > T::zero()) as u64));
                }
                x.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
            }
            Activation::Gelu => x
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = T::from_f64(gelu_scalar(v.as_f64()))),
        }
    }

    /// Input gradient given the pre-activation `x` and upstream `dy`.
    pub fn backward<T: Scalar>(self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        if x.shape() != dy.shape() {
            return Err(Error::Shape {
                op: "activation backward",
                lhs: x.shape().to_vec(),
                rhs: dy.shape().to_vec(),
            });
        }
        crate::tensor::require_f64::<T>()?;
        let data = x
            .data()
            .iter()
            .zip(dy.data())
            .map(|(&v, &g)| match self {
                Activation::Relu => {
                    if v > T::zero() {
                        g
                    } else {
                        T::zero()
                    }
                }
                Activation::Gelu => g * T::from_f64(gelu_grad_scalar(v.as_f64())),
            })
            .collect();
        Tensor::new(x.shape(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values_and_negative_gradient() {
        let x = Tensor::<f64>::new(&[2], vec![-1.0, 2.0]).unwrap();
        assert_eq!(Activation::Relu.forward(&x).data(), &[0.0, 2.0]);
        let dx = Activation::Relu.backward(&x, &Tensor::ones(&[2])).unwrap();
        assert_eq!(dx.data(), &[0.0, 1.0]);
    }

    #[test]
    fn gelu_against_erf_form() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(1.0) - 0.8412).abs() < 1e-4);
        // erf(1/sqrt 2) to 15 digits
        let exact = 0.5 * (1.0 + 0.682_689_492_137_086);
        assert!((gelu_scalar(1.0) - exact).abs() < 1e-3);
    }

    #[test]
    fn gelu_derivative_matches_differences() {
        for x in [-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu_scalar(x + h) - gelu_scalar(x - h)) / (2.0 * h);
            assert!((gelu_grad_scalar(x) - fd).abs() < 1e-8);
        }
    }
}
