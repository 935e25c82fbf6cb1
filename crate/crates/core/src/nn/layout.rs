use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Splits `B x C x H x W` along channels at `c1`.
pub fn channel_split<T: Scalar>(x: &Tensor<T>, c1: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    if x.rank() != 4 || c1 == 0 || c1 >= x.dim(1) {
        return Err(Error::invalid(
            "channel_split",
            format!(
                "split point {c1} must lie strictly inside the channels of {:?}",
                x.shape()
            ),
        ));
    }
    let (b, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let plane = h * w;
    let mut first = Vec::with_capacity(b * c1 * plane);
    let mut second = Vec::with_capacity(b * (c - c1) * plane);
    for sample in x.data().chunks(c * plane) {
        first.extend_from_slice(&sample[..c1 * plane]);
        second.extend_from_slice(&sample[c1 * plane..]);
    }
    Ok((
        Tensor::new(&[b, c1, h, w], first)?,
        Tensor::new(&[b, c - c1, h, w], second)?,
    ))
}

/// Inverse of [`channel_split`].
pub fn channel_concat<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.shape()[2..] != b.shape()[2..] {
        return Err(Error::Shape {
            op: "channel_concat",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (n, ca, cb) = (a.dim(0), a.dim(1), b.dim(1));
    let plane = a.dim(2) * a.dim(3);
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    for i in 0..n {
        data.extend_from_slice(&a.data()[i * ca * plane..(i + 1) * ca * plane]);
        data.extend_from_slice(&b.data()[i * cb * plane..(i + 1) * cb * plane]);
    }
    Tensor::new(&[n, ca + cb, a.dim(2), a.dim(3)], data)
}

/// `B x C x H x W -> B x (H*W) x C`.
pub fn nchw_to_tokens<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 4 {
        return Err(Error::invalid(
            "nchw_to_tokens",
            format!("expected rank 4, got {:?}", x.shape()),
        ));
    }
    let (b, c, n) = (x.dim(0), x.dim(1), x.dim(2) * x.dim(3));
    let mut out = vec![T::zero(); x.numel()];
    for i in 0..b {
        transpose(
            &x.data()[i * c * n..(i + 1) * c * n],
            &mut out[i * c * n..(i + 1) * c * n],
            c,
            n,
        );
    }
    Tensor::new(&[b, n, c], out)
}

/// `B x (H*W) x C -> B x C x H x W`.
pub fn tokens_to_nchw<T: Scalar>(x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    if x.rank() != 3 || x.dim(1) != h * w {
        return Err(Error::invalid(
            "tokens_to_nchw",
            format!("{:?} does not hold {h}x{w} tokens", x.shape()),
        ));
    }
    let (b, n, c) = (x.dim(0), x.dim(1), x.dim(2));
    let mut out = vec![T::zero(); x.numel()];
    for i in 0..b {
        transpose(
            &x.data()[i * c * n..(i + 1) * c * n],
            &mut out[i * c * n..(i + 1) * c * n],
            n,
            c,
        );
    }
    Tensor::new(&[b, c, h, w], out)
}

fn transpose<T: Copy>(src: &[T], dst: &mut [T], rows: usize, cols: usize) {
    const TILE: usize = 32;
    for r0 in (0..rows).step_by(TILE) {
        for c0 in (0..cols).step_by(TILE) {
            for r in r0..(r0 + TILE).min(rows) {
                for c in c0..(c0 + TILE).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}
