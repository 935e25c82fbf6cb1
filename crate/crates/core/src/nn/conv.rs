use crate::error::{Error, Result};
use crate::tensor::gemm::{gemm, MatMut, MatRef};
use crate::tensor::{count, require_f64, MacCounter, Scalar, Tensor};

use super::{Differentiable, Grads, ParamKind, Params};

/// 2-D convolution over `B x C x H x W` maps with square kernels.
///
/// Lowered to GEMM per image: `im2col` unrolls receptive fields into a
/// `(C*K*K) x (H'*W')` matrix (skipped for 1x1 stride-1 kernels, whose input
/// already has that layout).
#[derive(Clone, Debug)]
pub struct Conv2d<T: Scalar = f32> {
    /// `out x in x K x K`
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> Conv2d<T> {
    /// Zero-initialised convolution.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Self {
        assert!(kernel > 0 && stride > 0, "kernel and stride must be positive");
        Self {
            weight: Tensor::zeros(&[out_channels, in_channels, kernel, kernel]),
            bias: bias.then(|| Tensor::zeros(&[out_channels])),
            stride,
            padding,
        }
    }

    /// Padding `K/2`, so stride 1 keeps the spatial extent.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self::new(in_channels, out_channels, kernel, stride, kernel / 2, false)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim(2)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        conv_output_hw(h, w, self.kernel(), self.stride, self.padding)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, usize, usize, usize, usize)> {
        if x.rank() != 4 || x.dim(1) != self.in_channels() {
            return Err(Error::Shape {
                op: "conv2d",
                lhs: x.shape().to_vec(),
                rhs: self.weight.shape().to_vec(),
            });
        }
        let (ho, wo) = self.output_hw(x.dim(2), x.dim(3))?;
        Ok((x.dim(0), x.dim(2), x.dim(3), ho, wo))
    }

    fn is_pointwise(&self) -> bool {
        self.kernel() == 1 && self.stride == 1 && self.padding == 0
    }

    pub fn forward(&self, x: &Tensor<T>, counter: Option<&MacCounter>) -> Result<Tensor<T>> {
        let (b, h, w, ho, wo) = self.check_input(x)?;
        let (cin, cout, k) = (self.in_channels(), self.out_channels(), self.kernel());
        let ckk = cin * k * k;
        let (in_plane, out_plane) = (cin * h * w, cout * ho * wo);
        let mut y = Tensor::zeros(&[b, cout, ho, wo]);
        let mut cols = Vec::new();
        let wmat = MatRef::new(self.weight.data(), cout, ckk);
        for i in 0..b {
            let xi = &x.data()[i * in_plane..(i + 1) * in_plane];
            let yi = &mut y.data_mut()[i * out_plane..(i + 1) * out_plane];
            let src = if self.is_pointwise() {
                xi
            } else {
                im2col(xi, cin, h, w, k, self.stride, self.padding, ho, wo, &mut cols);
                &cols
            };
            gemm(
                wmat,
                MatRef::new(src, ckk, ho * wo),
                MatMut::new(yi, cout, ho * wo),
                false,
            );
            if let Some(bias) = &self.bias {
                for (plane, &bv) in yi.chunks_mut(ho * wo).zip(bias.data()) {
                    plane.iter_mut().for_each(|v| *v = *v + bv);
                }
            }
        }
        count(counter, (b * cout * ho * wo * ckk) as u64);
        Ok(y)
    }

    /// Gradient with respect to the input; adds `weight`/`bias` gradients.
    pub fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>, grads: &mut Grads<T>) -> Result<Tensor<T>> {
        require_f64::<T>()?;
        let (b, h, w, ho, wo) = self.check_input(x)?;
        let (cin, cout, k) = (self.in_channels(), self.out_channels(), self.kernel());
        if dy.shape() != [b, cout, ho, wo] {
            return Err(Error::Shape {
                op: "conv2d backward",
                lhs: dy.shape().to_vec(),
                rhs: vec![b, cout, ho, wo],
            });
        }
        let ckk = cin * k * k;
        let (in_plane, out_plane) = (cin * h * w, cout * ho * wo);
        let mut dw = Tensor::zeros(self.weight.shape());
        let mut dx = Tensor::zeros(x.shape());
        let mut cols = Vec::new();
        let mut dcols = vec![T::zero(); ckk * ho * wo];
        let wmat = MatRef::new(self.weight.data(), cout, ckk);
        for i in 0..b {
            let xi = &x.data()[i * in_plane..(i + 1) * in_plane];
            let dyi = MatRef::new(&dy.data()[i * out_plane..(i + 1) * out_plane], cout, ho * wo);
            let src = if self.is_pointwise() {
                xi
            } else {
                im2col(xi, cin, h, w, k, self.stride, self.padding, ho, wo, &mut cols);
                &cols
            };
            gemm(
                dyi,
                MatRef::new(src, ckk, ho * wo).t(),
                MatMut::new(dw.data_mut(), cout, ckk),
                true,
            );
            let dxi = &mut dx.data_mut()[i * in_plane..(i + 1) * in_plane];
            if self.is_pointwise() {
                gemm(wmat.t(), dyi, MatMut::new(dxi, ckk, ho * wo), false);
            } else {
                gemm(wmat.t(), dyi, MatMut::new(&mut dcols, ckk, ho * wo), false);
                col2im(&dcols, cin, h, w, k, self.stride, self.padding, ho, wo, dxi);
            }
        }
        grads.add("weight", dw);
        if self.bias.is_some() {
            let mut db = Tensor::zeros(&[cout]);
            for (idx, v) in dy.data().iter().enumerate() {
                let c = (idx / (ho * wo)) % cout;
                db.data_mut()[c] = db.data()[c] + *v;
            }
            grads.add("bias", db);
        }
        Ok(dx)
    }
}

pub(crate) fn conv_output_hw(h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Result<(usize, usize)> {
    let extent = |n: usize| -> Result<usize> {
        if n + 2 * pad < k {
            return Err(Error::invalid(
                "conv2d",
                format!("kernel {k} does not fit input extent {n} with padding {pad}"),
            ));
        }
        Ok((n + 2 * pad - k) / stride + 1)
    };
    Ok((extent(h)?, extent(w)?))
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    cols: &mut Vec<T>,
) {
    cols.clear();
    cols.resize(c * k * k * ho * wo, T::zero());
    let mut row = 0;
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oh in 0..ho {
                    let ih = (oh * stride + ki) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let src = &plane[ih as usize * w..(ih as usize + 1) * w];
                    let out = &mut dst[oh * wo..(oh + 1) * wo];
                    for (ow, o) in out.iter_mut().enumerate() {
                        let iw = (ow * stride + kj) as isize - pad as isize;
                        if iw >= 0 && iw < w as isize {
                            *o = src[iw as usize];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-adds unrolled columns back onto the input grid.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    dx: &mut [T],
) {
    let mut row = 0;
    for ch in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oh in 0..ho {
                    let ih = (oh * stride + ki) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    for ow in 0..wo {
                        let iw = (ow * stride + kj) as isize - pad as isize;
                        if iw >= 0 && iw < w as isize {
                            let idx = ch * h * w + ih as usize * w + iw as usize;
                            dx[idx] = dx[idx] + src[oh * wo + ow];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

impl<T: Scalar> Params<T> for Conv2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &Tensor<T>)) {
        f(&super::join(prefix, "weight"), ParamKind::Weight, &self.weight);
        if let Some(b) = &self.bias {
            f(&super::join(prefix, "bias"), ParamKind::Weight, b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        f(&super::join(prefix, "weight"), ParamKind::Weight, &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&super::join(prefix, "bias"), ParamKind::Weight, b);
        }
    }
}

impl<T: Scalar> Differentiable<T> for Conv2d<T> {
    type Cache = Tensor<T>;

    fn forward_train(&self, x: &Tensor<T>, counter: Option<&MacCounter>) -> Result<(Tensor<T>, Tensor<T>)> {
        require_f64::<T>()?;
        Ok((self.forward(x, counter)?, x.clone()))
    }

    fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>, grads: &mut Grads<T>) -> Result<Tensor<T>> {
        Conv2d::backward(self, x, dy, grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{rand_normal, Rng};

    fn naive(x: &Tensor<f64>, conv: &Conv2d<f64>) -> Tensor<f64> {
        let (b, cin, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let (cout, k, s, p) = (conv.out_channels(), conv.kernel(), conv.stride, conv.padding);
        let ho = (h + 2 * p - k) / s + 1;
        let wo = (w + 2 * p - k) / s + 1;
        let mut out = vec![0.0; b * cout * ho * wo];
        for n in 0..b {
            for co in 0..cout {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut acc = conv.bias.as_ref().map_or(0.0, |bb| bb.data()[co]);
                        for ci in 0..cin {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let ih = (oh * s + ki) as isize - p as isize;
                                    let iw = (ow * s + kj) as isize - p as isize;
                                    if ih >= 0 && iw >= 0 && (ih as usize) < h && (iw as usize) < w {
                                        acc += conv.weight.at(&[co, ci, ki, kj])
                                            * x.at(&[n, ci, ih as usize, iw as usize]);
                                    }
                                }
                            }
                        }
                        out[((n * cout + co) * ho + oh) * wo + ow] = acc;
                    }
                }
            }
        }
        Tensor::new(&[b, cout, ho, wo], out).unwrap()
    }

    #[test]
    fn pointwise_scalar() {
        let mut conv = Conv2d::<f32>::new(1, 1, 1, 1, 0, false);
        conv.weight.data_mut()[0] = 3.0;
        let x = Tensor::new(&[1, 1, 1, 1], vec![2.0]).unwrap();
        let counter = MacCounter::new();
        assert_eq!(conv.forward(&x, Some(&counter)).unwrap().data(), &[6.0]);
        assert_eq!(counter.total(), 1);
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let mut conv = Conv2d::<f32>::same(2, 2, 3, 1);
        for c in 0..2 {
            conv.weight.data_mut()[((c * 2 + c) * 3 + 1) * 3 + 1] = 1.0;
        }
        let x: Tensor<f32> = rand_normal(&mut Rng::new(1), &[1, 2, 5, 5], 1.0);
        assert_eq!(conv.forward(&x, None).unwrap(), x);
    }

    #[test]
    fn matches_seven_loop_reference() {
        let mut rng = Rng::new(2);
        let mut conv = Conv2d::<f64>::new(2, 3, 3, 2, 1, true);
        conv.weight = rand_normal(&mut rng, conv.weight.shape(), 1.0);
        conv.bias = Some(rand_normal(&mut rng, &[3], 1.0));
        let x: Tensor<f64> = rand_normal(&mut rng, &[1, 2, 5, 5], 1.0);
        let counter = MacCounter::new();
        let y = conv.forward(&x, Some(&counter)).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3, 3]);
        assert!(y.max_abs_diff(&naive(&x, &conv)).unwrap() < 1e-12);
        assert_eq!(counter.total(), (3 * 3 * 3 * 2 * 9) as u64);
    }

    #[test]
    fn same_padding_keeps_extent() {
        for k in [1, 3, 7] {
            let conv = Conv2d::<f32>::same(1, 1, k, 1);
            assert_eq!(conv.output_hw(9, 12).unwrap(), (9, 12));
        }
    }

    #[test]
    fn rejects_channel_mismatch_and_oversized_kernel() {
        let conv = Conv2d::<f32>::new(3, 4, 3, 1, 0, false);
        assert!(conv.forward(&Tensor::zeros(&[1, 2, 5, 5]), None).is_err());
        assert!(conv.forward(&Tensor::zeros(&[1, 3, 2, 2]), None).is_err());
    }

    #[test]
    fn backward_needs_f64() {
        let conv = Conv2d::<f32>::same(1, 1, 3, 1);
        let x = Tensor::zeros(&[1, 1, 3, 3]);
        let err = conv.backward(&x, &x, &mut Grads::new()).unwrap_err();
        assert!(matches!(err, Error::Precision(_)));
    }
}
