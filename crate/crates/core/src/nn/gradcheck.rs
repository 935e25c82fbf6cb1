//! Central finite-difference verification of analytic gradients.

use std::fmt;

use crate::error::Result;
use crate::tensor::{rand_normal, MacCounter, Rng, Tensor};

use super::layout::{channel_concat, channel_split};
use super::pool::{avgpool2d, avgpool2d_backward, maxpool2d, maxpool2d_backward};
use super::softmax::{softmax, softmax_backward};
use super::{probe, Activation, AttentionCache, Differentiable, Grads, ParamKind, Params, SpatialReductionAttention};

#[derive(Clone, Debug)]
pub struct GradcheckConfig {
    /// Finite-difference step.
    pub step: f64,
    pub rel_tol: f64,
    /// Absolute differences at or below this always pass: relative errors
    /// are taken against at least `abs_floor / rel_tol`.
    pub abs_floor: f64,
    /// Coordinates beyond this count are subsampled.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            rel_tol: 1e-4,
            abs_floor: 1e-7,
            max_coords: 256,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    /// Input plus parameter scalars.
    pub total_coords: usize,
    pub checked: usize,
    /// Coordinates whose stencil crossed a ReLU or max-pool decision boundary.
    pub skipped: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Coordinate with the largest relative error, if any exceeded the floor.
    pub worst: Option<String>,
    pub pass: bool,
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} max_rel_err={:.3e} max_abs_err={:.3e} checked={}/{} skipped={}",
            if self.pass { "PASS" } else { "FAIL" },
            self.max_rel_err,
            self.max_abs_err,
            self.checked,
            self.total_coords,
            self.skipped,
        )?;
        if let Some(w) = &self.worst {
            write!(f, " worst={w}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
enum Coord {
    Input(usize),
    Param(usize, usize),
}

/// Compares `backward` against central differences of `L = sum(y * r)` with
/// `r ~ N(0, 1)`, over the input and every trainable parameter (or a random
/// subsample of `max_coords` of them).
pub fn gradcheck<M: Differentiable<f64>>(
    module: &mut M,
    x: &Tensor<f64>,
    cfg: &GradcheckConfig,
) -> Result<GradcheckReport> {
    let mut rng = Rng::with_stream(cfg.seed, 0x6772_6164);
    let (out, base_fp) = probe::fingerprint(|| module.forward_train(x, None));
    let (y, cache) = out?;
    let r: Tensor<f64> = rand_normal(&mut rng, y.shape(), 1.0);
    let mut grads = Grads::new();
    let dx = module.backward(&cache, &r, &mut grads)?;
    drop(cache);

    let params: Vec<(String, usize)> = {
        let mut v = Vec::new();
        module.visit("", &mut |path, kind, t| {
            if kind == ParamKind::Weight {
                v.push((path.to_string(), t.numel()));
            }
        });
        v
    };
    let mut coords: Vec<Coord> = (0..x.numel()).map(Coord::Input).collect();
    for (pi, (_, n)) in params.iter().enumerate() {
        coords.extend((0..*n).map(|i| Coord::Param(pi, i)));
    }
    let total_coords = coords.len();
    if coords.len() > cfg.max_coords {
        for i in 0..cfg.max_coords {
            let j = i + rng.below(coords.len() - i);
            coords.swap(i, j);
        }
        coords.truncate(cfg.max_coords);
    }

    let loss = |m: &M, input: &Tensor<f64>| -> Result<(f64, u64)> {
        let (out, fp) = probe::fingerprint(|| m.forward_train(input, None));
        let (out, _) = out?;
        Ok((out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum(), fp))
    };

    let mut report = GradcheckReport {
        total_coords,
        checked: 0,
        skipped: 0,
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: None,
        pass: true,
    };
    let mut xp = x.clone();
    for coord in coords {
        let (analytic, plus, minus, label) = match coord {
            Coord::Input(i) => {
                let orig = xp.data()[i];
                xp.data_mut()[i] = orig + cfg.step;
                let plus = loss(module, &xp)?;
                xp.data_mut()[i] = orig - cfg.step;
                let minus = loss(module, &xp)?;
                xp.data_mut()[i] = orig;
                (dx.data()[i], plus, minus, format!("input[{i}]"))
            }
            Coord::Param(pi, i) => {
                let path = &params[pi].0;
                let analytic = grads.get(path).map_or(0.0, |g| g.data()[i]);
                let orig = set_param(module, path, i, None);
                set_param(module, path, i, Some(orig + cfg.step));
                let plus = loss(module, x)?;
                set_param(module, path, i, Some(orig - cfg.step));
                let minus = loss(module, x)?;
                set_param(module, path, i, Some(orig));
                (analytic, plus, minus, format!("{path}[{i}]"))
            }
        };
        if plus.1 != base_fp || minus.1 != base_fp {
            report.skipped += 1;
            continue;
        }
        report.checked += 1;
        let numeric = (plus.0 - minus.0) / (2.0 * cfg.step);
        let abs = (analytic - numeric).abs();
        report.max_abs_err = report.max_abs_err.max(abs);
        let rel = abs / analytic.abs().max(numeric.abs()).max(cfg.abs_floor / cfg.rel_tol);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = Some(format!("{label} analytic={analytic:.6e} numeric={numeric:.6e}"));
        }
    }
    report.pass = report.max_rel_err <= cfg.rel_tol;
    Ok(report)
}

/// Reads element `i` of the parameter at `path`, writing `value` if given.
fn set_param<M: Params<f64>>(module: &mut M, path: &str, i: usize, value: Option<f64>) -> f64 {
    let mut old = f64::NAN;
    module.visit_mut("", &mut |p, _, t| {
        if p == path {
            old = t.data()[i];
            if let Some(v) = value {
                t.data_mut()[i] = v;
            }
        }
    });
    old
}

/// Fills every tensor with well-conditioned random values: fan-in scaled
/// weights, scales near 1, small shifts and positive variances.
pub fn randomize_params<M: Params<f64>>(module: &mut M, rng: &mut Rng) {
    module.visit_mut("", &mut |path, _, t| {
        let name = path.rsplit('.').next().unwrap_or(path);
        *t = match name {
            "running_var" | "gamma" => Tensor::from_fn(t.shape(), |_| rng.uniform(0.5, 1.5)),
            "running_mean" | "beta" | "bias" => rand_normal(rng, t.shape(), 0.1),
            _ => {
                let fan_in = match t.rank() {
                    2 => t.dim(0),
                    _ => t.numel() / t.dim(0).max(1),
                };
                rand_normal(rng, t.shape(), 1.0 / (fan_in.max(1) as f64).sqrt())
            }
        };
    });
}

macro_rules! no_params {
    ($ty:ty) => {
        impl Params<f64> for $ty {
            fn visit(&self, _: &str, _: &mut dyn FnMut(&str, ParamKind, &Tensor<f64>)) {}
            fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, ParamKind, &mut Tensor<f64>)) {}
        }
    };
}

/// Elementwise activation as a checkable module.
#[derive(Clone, Copy, Debug)]
pub struct ActivationOp(pub Activation);
no_params!(ActivationOp);

impl Differentiable<f64> for ActivationOp {
    type Cache = Tensor<f64>;

    fn forward_train(&self, x: &Tensor<f64>, _: Option<&MacCounter>) -> Result<(Tensor<f64>, Tensor<f64>)> {
        Ok((self.0.forward(x), x.clone()))
    }

    fn backward(&self, x: &Tensor<f64>, dy: &Tensor<f64>, _: &mut Grads<f64>) -> Result<Tensor<f64>> {
        self.0.backward(x, dy)
    }
}

/// Softmax over the last axis.
#[derive(Clone, Copy, Debug)]
pub struct SoftmaxOp;
no_params!(SoftmaxOp);

impl Differentiable<f64> for SoftmaxOp {
    type Cache = Tensor<f64>;

    fn forward_train(&self, x: &Tensor<f64>, _: Option<&MacCounter>) -> Result<(Tensor<f64>, Tensor<f64>)> {
        let y = softmax(x)?;
        Ok((y.clone(), y))
    }

    fn backward(&self, y: &Tensor<f64>, dy: &Tensor<f64>, _: &mut Grads<f64>) -> Result<Tensor<f64>> {
        softmax_backward(y, dy)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AvgPoolOp {
    pub kernel: usize,
    pub stride: usize,
}
no_params!(AvgPoolOp);

impl Differentiable<f64> for AvgPoolOp {
    type Cache = Vec<usize>;

    fn forward_train(&self, x: &Tensor<f64>, _: Option<&MacCounter>) -> Result<(Tensor<f64>, Vec<usize>)> {
        Ok((avgpool2d(x, self.kernel, self.stride)?, x.shape().to_vec()))
    }

    fn backward(&self, shape: &Vec<usize>, dy: &Tensor<f64>, _: &mut Grads<f64>) -> Result<Tensor<f64>> {
        avgpool2d_backward(shape, dy, self.kernel, self.stride)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MaxPoolOp {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}
no_params!(MaxPoolOp);

impl Differentiable<f64> for MaxPoolOp {
    type Cache = (Vec<usize>, Vec<u32>);

    fn forward_train(&self, x: &Tensor<f64>, _: Option<&MacCounter>) -> Result<(Tensor<f64>, Self::Cache)> {
        let (y, arg) = maxpool2d(x, self.kernel, self.stride, self.padding)?;
        Ok((y, (x.shape().to_vec(), arg)))
    }

    fn backward(&self, cache: &Self::Cache, dy: &Tensor<f64>, _: &mut Grads<f64>) -> Result<Tensor<f64>> {
        maxpool2d_backward(&cache.0, dy, &cache.1)
    }
}

/// Splits channels at `at` and concatenates the halves in swapped order, so
/// the gradient must route through both layout ops.
#[derive(Clone, Copy, Debug)]
pub struct SplitConcatOp {
    pub at: usize,
}
no_params!(SplitConcatOp);

impl Differentiable<f64> for SplitConcatOp {
    type Cache = usize;

    fn forward_train(&self, x: &Tensor<f64>, _: Option<&MacCounter>) -> Result<(Tensor<f64>, usize)> {
        let (a, b) = channel_split(x, self.at)?;
        Ok((channel_concat(&b, &a)?, x.dim(1)))
    }

    fn backward(&self, c: &usize, dy: &Tensor<f64>, _: &mut Grads<f64>) -> Result<Tensor<f64>> {
        let (db, da) = channel_split(dy, c - self.at)?;
        channel_concat(&da, &db)
    }
}

/// Attention over a fixed `h x w` token grid.
#[derive(Clone, Debug)]
pub struct AttentionOp {
    pub attn: SpatialReductionAttention<f64>,
    pub hw: (usize, usize),
}

impl Params<f64> for AttentionOp {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &Tensor<f64>)) {
        self.attn.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<f64>)) {
        self.attn.visit_mut(prefix, f);
    }
}

impl Differentiable<f64> for AttentionOp {
    type Cache = AttentionCache<f64>;

    fn forward_train(&self, x: &Tensor<f64>, counter: Option<&MacCounter>) -> Result<(Tensor<f64>, Self::Cache)> {
        self.attn.forward_cached(x, self.hw, counter)
    }

    fn backward(&self, cache: &Self::Cache, dy: &Tensor<f64>, grads: &mut Grads<f64>) -> Result<Tensor<f64>> {
        self.attn.backward(cache, dy, grads)
    }
}
