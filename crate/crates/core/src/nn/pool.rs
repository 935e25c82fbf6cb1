use crate::error::{Error, Result};
use crate::tensor::{require_f64, Scalar, Tensor};

use super::conv::conv_output_hw;
use super::probe;

fn dims4<T: Scalar>(op: &'static str, x: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    if x.rank() != 4 {
        return Err(Error::invalid(
            op,
            format!("expected B x C x H x W, got {:?}", x.shape()),
        ));
    }
    Ok((x.dim(0), x.dim(1), x.dim(2), x.dim(3)))
}

/// Mean over `kernel x kernel` windows, no padding.
pub fn avgpool2d<T: Scalar>(x: &Tensor<T>, kernel: usize, stride: usize) -> Result<Tensor<T>> {
    let (b, c, h, w) = dims4("avgpool2d", x)?;
    let (ho, wo) = conv_output_hw(h, w, kernel, stride, 0)?;
    let norm = T::one() / T::from_usize(kernel * kernel);
    let mut y = Tensor::zeros(&[b, c, ho, wo]);
    for (src, dst) in x.data().chunks(h * w).zip(y.data_mut().chunks_mut(ho * wo)) {
        for oh in 0..ho {
            for ow in 0..wo {
                let mut acc = T::zero();
                for ki in 0..kernel {
                    let row = &src[(oh * stride + ki) * w + ow * stride..];
                    for &v in &row[..kernel] {
                        acc = acc + v;
                    }
                }
                dst[oh * wo + ow] = acc * norm;
            }
        }
    }
    Ok(y)
}

pub fn avgpool2d_backward<T: Scalar>(
    input_shape: &[usize],
    dy: &Tensor<T>,
    kernel: usize,
    stride: usize,
) -> Result<Tensor<T>> {
    require_f64::<T>()?;
    let (h, w) = (input_shape[2], input_shape[3]);
    let (ho, wo) = (dy.dim(2), dy.dim(3));
    let norm = T::one() / T::from_usize(kernel * kernel);
    let mut dx = Tensor::zeros(input_shape);
    for (g, d) in dy.data().chunks(ho * wo).zip(dx.data_mut().chunks_mut(h * w)) {
        for oh in 0..ho {
            for ow in 0..wo {
                let share = g[oh * wo + ow] * norm;
                for ki in 0..kernel {
                    for kj in 0..kernel {
                        let idx = (oh * stride + ki) * w + ow * stride + kj;
                        d[idx] = d[idx] + share;
                    }
                }
            }
        }
    }
    Ok(dx)
}

/// Max over windows with implicit `-inf` padding. Returns the output and the
/// flat in-plane index each output was taken from.
pub fn maxpool2d<T: Scalar>(
    x: &Tensor<T>,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Vec<u32>)> {
    let (b, c, h, w) = dims4("maxpool2d", x)?;
    if padding >= kernel {
        return Err(Error::invalid("maxpool2d", "padding must be smaller than the kernel"));
    }
    let (ho, wo) = conv_output_hw(h, w, kernel, stride, padding)?;
    let mut y = Tensor::zeros(&[b, c, ho, wo]);
    let mut arg = vec![0u32; b * c * ho * wo];
    for ((src, dst), am) in x
        .data()
        .chunks(h * w)
        .zip(y.data_mut().chunks_mut(ho * wo))
        .zip(arg.chunks_mut(ho * wo))
    {
        for oh in 0..ho {
            for ow in 0..wo {
                let mut best = T::neg_infinity();
                let mut best_idx = 0;
                for ki in 0..kernel {
                    let ih = (oh * stride + ki) as isize - padding as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    for kj in 0..kernel {
                        let iw = (ow * stride + kj) as isize - padding as isize;
                        if iw < 0 || iw >= w as isize {
                            continue;
                        }
                        let idx = ih as usize * w + iw as usize;
                        if src[idx] > best {
                            best = src[idx];
                            best_idx = idx;
                        }
                    }
                }
                dst[oh * wo + ow] = best;
                am[oh * wo + ow] = best_idx as u32;
            }
        }
    }
    if probe::active() {
        probe::mix(arg.iter().map(|&i| i as u64));
    }
    Ok((y, arg))
}

pub fn maxpool2d_backward<T: Scalar>(input_shape: &[usize], dy: &Tensor<T>, argmax: &[u32]) -> Result<Tensor<T>> {
    require_f64::<T>()?;
    let plane_in = input_shape[2] * input_shape[3];
    let plane_out = dy.dim(2) * dy.dim(3);
    let mut dx = Tensor::zeros(input_shape);
    for ((g, am), d) in dy
        .data()
        .chunks(plane_out)
        .zip(argmax.chunks(plane_out))
        .zip(dx.data_mut().chunks_mut(plane_in))
    {
        for (&gv, &i) in g.iter().zip(am) {
            d[i as usize] = d[i as usize] + gv;
        }
    }
    Ok(dx)
}

/// `B x C x H x W -> B x C`.
pub fn global_avgpool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = dims4("global_avgpool", x)?;
    let norm = T::one() / T::from_usize(h * w);
    let data = x
        .data()
        .chunks(h * w)
        .map(|p| p.iter().copied().sum::<T>() * norm)
        .collect();
    Tensor::new(&[b, c], data)
}
