use crate::error::{Error, Result};
use crate::tensor::{require_f64, Scalar, Tensor};

/// In-place softmax of every `cols`-wide row, stabilised by max subtraction.
pub fn softmax_rows<T: Scalar>(data: &mut [T], cols: usize) {
    for row in data.chunks_mut(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        let inv = T::one() / sum;
        row.iter_mut().for_each(|v| *v = *v * inv);
    }
}

/// `dx = y * (dy - sum(y * dy))` per row, in place over `dy`.
pub fn softmax_rows_backward<T: Scalar>(y: &[T], dy: &mut [T], cols: usize) {
    for (yr, dr) in y.chunks(cols).zip(dy.chunks_mut(cols)) {
        let dot = yr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum::<T>();
        for (d, &yv) in dr.iter_mut().zip(yr) {
            *d = yv * (*d - dot);
        }
    }
}

/// Softmax over the last axis.
pub fn softmax<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let cols = last_dim(x)?;
    let mut y = x.clone();
    softmax_rows(y.data_mut(), cols);
    Ok(y)
}

pub fn softmax_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    require_f64::<T>()?;
    let cols = last_dim(y)?;
    let mut dx = dy.clone();
    softmax_rows_backward(y.data(), dx.data_mut(), cols);
    Ok(dx)
}

fn last_dim<T: Scalar>(x: &Tensor<T>) -> Result<usize> {
    match x.shape().last() {
        Some(&c) if c > 0 => Ok(c),
        _ => Err(Error::invalid(
            "softmax",
            format!("needs a non-empty last axis, got {:?}", x.shape()),
        )),
    }
}
