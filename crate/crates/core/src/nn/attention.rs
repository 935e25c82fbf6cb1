use crate::error::{Error, Result};
use crate::tensor::gemm::{gemm, MatMut, MatRef};
use crate::tensor::{count, require_f64, MacCounter, Scalar, Tensor};

use super::layout::{nchw_to_tokens, tokens_to_nchw};
use super::softmax::{softmax_rows, softmax_rows_backward};
use super::{composite_params, Conv2d, Grads, LayerNorm, Linear};

/// Width of every attention head.
pub const HEAD_DIM: usize = 32;

/// Multi-head self-attention whose keys and values are computed from a
/// spatially reduced token grid.
///
/// With reduction ratio `S > 1`, the `H x W` tokens are folded back into a map,
/// passed through a `S x S` stride-`S` convolution and a LayerNorm, and the
/// resulting `(H/S)(W/S)` tokens feed the key and value projections. Queries
/// always come from the full grid, so the output keeps `N = H*W` tokens.
#[derive(Clone, Debug)]
pub struct SpatialReductionAttention<T: Scalar = f32> {
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub out: Linear<T>,
    pub reduce: Option<Conv2d<T>>,
    pub reduce_norm: Option<LayerNorm<T>>,
}

composite_params!(SpatialReductionAttention {
    query => "query",
    key => "key",
    value => "value",
    out => "out",
    reduce => "reduce",
    reduce_norm => "reduce_norm",
});

/// Intermediates kept by [`SpatialReductionAttention::forward_cached`].
#[derive(Clone, Debug)]
pub struct AttentionCache<T: Scalar> {
    x: Tensor<T>,
    hw: (usize, usize),
    q: Tensor<T>,
    reduced: Option<Tensor<T>>,
    kv_in: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    /// `B x heads x N x Nk`
    probs: Vec<T>,
    o: Tensor<T>,
}

impl<T: Scalar> SpatialReductionAttention<T> {
    pub fn new(channels: usize, sr_ratio: usize) -> Result<Self> {
        if channels == 0 || channels % HEAD_DIM != 0 {
            return Err(Error::invalid(
                "attention",
                format!("width {channels} is not a positive multiple of the head dim {HEAD_DIM}"),
            ));
        }
        if sr_ratio == 0 {
            return Err(Error::invalid(
                "attention",
                "spatial reduction ratio must be at least 1",
            ));
        }
        let reduces = sr_ratio > 1;
        Ok(Self {
            query: Linear::new(channels, channels, true),
            key: Linear::new(channels, channels, true),
            value: Linear::new(channels, channels, true),
            out: Linear::new(channels, channels, true),
            reduce: reduces.then(|| Conv2d::new(channels, channels, sr_ratio, sr_ratio, 0, true)),
            reduce_norm: reduces.then(|| LayerNorm::new(channels)),
        })
    }

    pub fn channels(&self) -> usize {
        self.query.in_features()
    }

    pub fn heads(&self) -> usize {
        self.channels() / HEAD_DIM
    }

    pub fn sr_ratio(&self) -> usize {
        self.reduce.as_ref().map_or(1, |c| c.stride)
    }

    fn scale() -> T {
        T::from_f64(1.0 / (HEAD_DIM as f64).sqrt())
    }

    pub fn forward(&self, x: &Tensor<T>, hw: (usize, usize), counter: Option<&MacCounter>) -> Result<Tensor<T>> {
        self.forward_cached(x, hw, counter).map(|(y, _)| y)
    }

    pub fn forward_cached(
        &self,
        x: &Tensor<T>,
        hw: (usize, usize),
        counter: Option<&MacCounter>,
    ) -> Result<(Tensor<T>, AttentionCache<T>)> {
        let c = self.channels();
        if x.rank() != 3 || x.dim(2) != c || x.dim(1) != hw.0 * hw.1 {
            return Err(Error::invalid(
                "attention",
                format!(
                    "input {:?} is not B x {} x {c} for a {}x{} grid",
                    x.shape(),
                    hw.0 * hw.1,
                    hw.0,
                    hw.1
                ),
            ));
        }
        let (b, n) = (x.dim(0), x.dim(1));
        let q = self.query.forward(x, counter)?;
        let (reduced, kv_in) = match (&self.reduce, &self.reduce_norm) {
            (Some(conv), Some(norm)) => {
                let map = conv.forward(&tokens_to_nchw(x, hw.0, hw.1)?, counter)?;
                let tokens = nchw_to_tokens(&map)?;
                let normed = norm.forward(&tokens)?;
                (Some(tokens), normed)
            }
            _ => (None, x.clone()),
        };
        let k = self.key.forward(&kv_in, counter)?;
        let v = self.value.forward(&kv_in, counter)?;
        let nk = kv_in.dim(1);
        let heads = self.heads();
        let mut probs = vec![T::zero(); b * heads * n * nk];
        let mut o = Tensor::zeros(&[b, n, c]);
        let scale = Self::scale();
        for i in 0..b {
            let qi = &q.data()[i * n * c..(i + 1) * n * c];
            let ki = &k.data()[i * nk * c..(i + 1) * nk * c];
            let vi = &v.data()[i * nk * c..(i + 1) * nk * c];
            let oi = &mut o.data_mut()[i * n * c..(i + 1) * n * c];
            for hd in 0..heads {
                let off = hd * HEAD_DIM;
                let p = &mut probs[(i * heads + hd) * n * nk..(i * heads + hd + 1) * n * nk];
                gemm(
                    MatRef::strided(&qi[off..], n, HEAD_DIM, c, 1),
                    MatRef::strided(&ki[off..], nk, HEAD_DIM, c, 1).t(),
                    MatMut::new(p, n, nk),
                    false,
                );
                p.iter_mut().for_each(|s| *s = *s * scale);
                softmax_rows(p, nk);
                gemm(
                    MatRef::new(p, n, nk),
                    MatRef::strided(&vi[off..], nk, HEAD_DIM, c, 1),
                    MatMut::strided(&mut oi[off..], n, HEAD_DIM, c, 1),
                    false,
                );
            }
        }
        count(counter, (2 * b * n * nk * c) as u64);
        let y = self.out.forward(&o, counter)?;
        let cache = AttentionCache {
            x: x.clone(),
            hw,
            q,
            reduced,
            kv_in,
            k,
            v,
            probs,
            o,
        };
        Ok((y, cache))
    }

    pub fn backward(&self, cache: &AttentionCache<T>, dy: &Tensor<T>, grads: &mut Grads<T>) -> Result<Tensor<T>> {
        require_f64::<T>()?;
        let AttentionCache {
            x,
            hw,
            q,
            reduced,
            kv_in,
            k,
            v,
            probs,
            o,
        } = cache;
        let (b, n, c) = (x.dim(0), x.dim(1), x.dim(2));
        let nk = kv_in.dim(1);
        let heads = self.heads();
        let scale = Self::scale();
        let d_o = grads.scoped("out", |g| self.out.backward(o, dy, g))?;
        let mut dq = Tensor::zeros(q.shape());
        let mut dk = Tensor::zeros(k.shape());
        let mut dv = Tensor::zeros(v.shape());
        let mut dp = vec![T::zero(); n * nk];
        for i in 0..b {
            let (qi, ki, vi) = (
                &q.data()[i * n * c..(i + 1) * n * c],
                &k.data()[i * nk * c..(i + 1) * nk * c],
                &v.data()[i * nk * c..(i + 1) * nk * c],
            );
            let doi = &d_o.data()[i * n * c..(i + 1) * n * c];
            for hd in 0..heads {
                let off = hd * HEAD_DIM;
                let p = &probs[(i * heads + hd) * n * nk..(i * heads + hd + 1) * n * nk];
                let do_h = MatRef::strided(&doi[off..], n, HEAD_DIM, c, 1);
                gemm(
                    MatRef::new(p, n, nk).t(),
                    do_h,
                    MatMut::strided(&mut dv.data_mut()[i * nk * c + off..], nk, HEAD_DIM, c, 1),
                    false,
                );
                gemm(
                    do_h,
                    MatRef::strided(&vi[off..], nk, HEAD_DIM, c, 1).t(),
                    MatMut::new(&mut dp, n, nk),
                    false,
                );
                softmax_rows_backward(p, &mut dp, nk);
                dp.iter_mut().for_each(|s| *s = *s * scale);
                gemm(
                    MatRef::new(&dp, n, nk),
                    MatRef::strided(&ki[off..], nk, HEAD_DIM, c, 1),
                    MatMut::strided(&mut dq.data_mut()[i * n * c + off..], n, HEAD_DIM, c, 1),
                    false,
                );
                gemm(
                    MatRef::new(&dp, n, nk).t(),
                    MatRef::strided(&qi[off..], n, HEAD_DIM, c, 1),
                    MatMut::strided(&mut dk.data_mut()[i * nk * c + off..], nk, HEAD_DIM, c, 1),
                    false,
                );
            }
        }
        let mut dx = grads.scoped("query", |g| self.query.backward(x, &dq, g))?;
        let mut dkv = grads.scoped("key", |g| self.key.backward(kv_in, &dk, g))?;
        dkv.add_assign(&grads.scoped("value", |g| self.value.backward(kv_in, &dv, g))?)?;
        match (&self.reduce, &self.reduce_norm, reduced) {
            (Some(conv), Some(norm), Some(tokens)) => {
                let d_tokens = grads.scoped("reduce_norm", |g| norm.backward(tokens, &dkv, g))?;
                let s = conv.stride;
                let d_map = tokens_to_nchw(&d_tokens, hw.0 / s, hw.1 / s)?;
                let map_in = tokens_to_nchw(x, hw.0, hw.1)?;
                let d_in = grads.scoped("reduce", |g| conv.backward(&map_in, &d_map, g))?;
                dx.add_assign(&nchw_to_tokens(&d_in)?)?;
            }
            _ => dx.add_assign(&dkv)?,
        }
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Params;
    use crate::tensor::{rand_normal, Rng};

    fn randomized(c: usize, s: usize, seed: u64) -> SpatialReductionAttention<f64> {
        let mut attn = SpatialReductionAttention::new(c, s).unwrap();
        let mut rng = Rng::new(seed);
        attn.visit_mut("", &mut |_, _, t| *t = rand_normal(&mut rng, t.shape(), 0.2));
        if let Some(n) = &mut attn.reduce_norm {
            n.gamma = n.gamma.map(|v| v + 1.0);
        }
        attn
    }

    /// Literal loops: explicit projections, per-head scores, softmax, mixing.
    #[allow(clippy::needless_range_loop)]
    fn reference(attn: &SpatialReductionAttention<f64>, x: &Tensor<f64>, h: usize, w: usize) -> Vec<f64> {
        let (n, c) = (x.dim(1), x.dim(2));
        let lin = |l: &Linear<f64>, rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
            rows.iter()
                .map(|r| {
                    (0..c)
                        .map(|j| {
                            l.bias.as_ref().unwrap().data()[j]
                                + (0..c).map(|i| r[i] * l.weight.at(&[i, j])).sum::<f64>()
                        })
                        .collect()
                })
                .collect()
        };
        let tokens: Vec<Vec<f64>> = (0..n).map(|t| (0..c).map(|ch| x.at(&[0, t, ch])).collect()).collect();
        let kv_src = match (&attn.reduce, &attn.reduce_norm) {
            (Some(conv), Some(norm)) => {
                let s = conv.stride;
                let (hr, wr) = (h / s, w / s);
                let mut red = Vec::new();
                for oh in 0..hr {
                    for ow in 0..wr {
                        let mut row = vec![0.0; c];
                        for (co, r) in row.iter_mut().enumerate() {
                            *r = conv.bias.as_ref().unwrap().data()[co];
                            for ci in 0..c {
                                for ki in 0..s {
                                    for kj in 0..s {
                                        *r += conv.weight.at(&[co, ci, ki, kj])
                                            * tokens[(oh * s + ki) * w + ow * s + kj][ci];
                                    }
                                }
                            }
                        }
                        let mean = row.iter().sum::<f64>() / c as f64;
                        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
                        red.push(
                            (0..c)
                                .map(|j| {
                                    (row[j] - mean) / (var + norm.eps).sqrt() * norm.gamma.data()[j]
                                        + norm.beta.data()[j]
                                })
                                .collect(),
                        );
                    }
                }
                red
            }
            _ => tokens.clone(),
        };
        let q = lin(&attn.query, &tokens);
        let k = lin(&attn.key, &kv_src);
        let v = lin(&attn.value, &kv_src);
        let mut o = vec![vec![0.0; c]; n];
        for hd in 0..c / HEAD_DIM {
            for t in 0..n {
                let mut scores: Vec<f64> = (0..kv_src.len())
                    .map(|u| {
                        (0..HEAD_DIM)
                            .map(|d| q[t][hd * 32 + d] * k[u][hd * 32 + d])
                            .sum::<f64>()
                            / 32f64.sqrt()
                    })
                    .collect();
                let m = scores.iter().cloned().fold(f64::MIN, f64::max);
                let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
                scores.iter_mut().for_each(|s| *s = (*s - m).exp() / z);
                for d in 0..HEAD_DIM {
                    o[t][hd * 32 + d] = (0..kv_src.len()).map(|u| scores[u] * v[u][hd * 32 + d]).sum();
                }
            }
        }
        lin(&attn.out, &o).concat()
    }

    #[test]
    fn matches_step_by_step_reference() {
        let attn = randomized(32, 2, 3);
        let x: Tensor<f64> = rand_normal(&mut Rng::new(4), &[1, 4, 32], 1.0);
        let y = attn.forward(&x, (2, 2), None).unwrap();
        let want = reference(&attn, &x, 2, 2);
        let err = y
            .data()
            .iter()
            .zip(&want)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn single_token_reduces_to_value_path() {
        let attn = randomized(32, 1, 5);
        let x: Tensor<f64> = rand_normal(&mut Rng::new(6), &[1, 1, 32], 1.0);
        let y = attn.forward(&x, (1, 1), None).unwrap();
        let vx = attn.value.forward(&x, None).unwrap();
        let want = attn.out.forward(&vx, None).unwrap();
        assert!(y.max_abs_diff(&want).unwrap() < 1e-12);
    }

    #[test]
    fn equal_tokens_give_equal_rows() {
        let attn = randomized(64, 1, 7);
        let token: Tensor<f64> = rand_normal(&mut Rng::new(8), &[64], 1.0);
        let x = Tensor::from_fn(&[1, 6, 64], |i| token.data()[i % 64]);
        let y = attn.forward(&x, (2, 3), None).unwrap();
        for row in y.data().chunks(64).skip(1) {
            assert_eq!(row, &y.data()[..64]);
        }
    }

    #[test]
    fn rejects_bad_width_and_token_count() {
        assert!(SpatialReductionAttention::<f32>::new(48, 1).is_err());
        let attn = SpatialReductionAttention::<f32>::new(32, 1).unwrap();
        assert!(attn.forward(&Tensor::zeros(&[1, 5, 32]), (2, 2), None).is_err());
    }

    #[test]
    fn mac_count_closed_form() {
        let (c, h, w, s) = (64usize, 4usize, 6usize, 2usize);
        let attn = SpatialReductionAttention::<f32>::new(c, s).unwrap();
        let counter = MacCounter::new();
        attn.forward(&Tensor::zeros(&[2, h * w, c]), (h, w), Some(&counter))
            .unwrap();
        let (n, nk) = (h * w, (h / s) * (w / s));
        let per = 2 * n * c * c + 2 * nk * c * c + 2 * n * nk * c + nk * c * c * s * s;
        assert_eq!(counter.total(), 2 * per as u64);
    }
}
