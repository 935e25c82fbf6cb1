use indexmap::IndexMap;

use crate::error::Result;
use crate::tensor::{MacCounter, Scalar, Tensor};

/// Whether a named tensor is a trainable parameter or a running buffer
/// (BatchNorm statistics). Buffers are serialized but never counted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Weight,
    Buffer,
}

/// Dotted path of a child tensor, e.g. `stage2.0.conv1.weight`.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Visitor access to every named tensor of a module, in a fixed order.
pub trait Params<T: Scalar> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &Tensor<T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>));

    /// Number of trainable scalars.
    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, kind, t| {
            if kind == ParamKind::Weight {
                n += t.numel();
            }
        });
        n
    }

    fn param_paths(&self) -> Vec<(String, ParamKind)> {
        let mut out = Vec::new();
        self.visit("", &mut |path, kind, _| out.push((path.to_string(), kind)));
        out
    }
}

impl<T: Scalar, P: Params<T>> Params<T> for Option<P> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &Tensor<T>)) {
        if let Some(p) = self {
            p.visit(prefix, f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        if let Some(p) = self {
            p.visit_mut(prefix, f);
        }
    }
}

impl<T: Scalar, P: Params<T>> Params<T> for Vec<P> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &Tensor<T>)) {
        for (i, p) in self.iter().enumerate() {
            p.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        for (i, p) in self.iter_mut().enumerate() {
            p.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

/// Implements [`Params`] for a struct by visiting the listed child fields.
macro_rules! composite_params {
    ($ty:ident { $($field:ident => $name:literal),* $(,)? }) => {
        impl<T: $crate::tensor::Scalar> $crate::nn::Params<T> for $ty<T> {
            fn visit(
                &self,
                prefix: &str,
                f: &mut dyn FnMut(&str, $crate::nn::ParamKind, &$crate::tensor::Tensor<T>),
            ) {
                $( self.$field.visit(&$crate::nn::join(prefix, $name), f); )*
            }

            fn visit_mut(
                &mut self,
                prefix: &str,
                f: &mut dyn FnMut(&str, $crate::nn::ParamKind, &mut $crate::tensor::Tensor<T>),
            ) {
                $( self.$field.visit_mut(&$crate::nn::join(prefix, $name), f); )*
            }
        }
    };
}
pub(crate) use composite_params;

/// Parameter gradients keyed by the same dotted paths as [`Params::visit`].
#[derive(Clone, Debug, Default)]
pub struct Grads<T: Scalar> {
    map: IndexMap<String, Tensor<T>>,
    prefix: String,
}

impl<T: Scalar> Grads<T> {
    pub fn new() -> Self {
        Self {
            map: IndexMap::new(),
            prefix: String::new(),
        }
    }

    /// Runs `f` with `name` appended to the current path prefix.
    pub fn scoped<R>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> R) -> R {
        let saved = self.prefix.len();
        if !self.prefix.is_empty() {
            self.prefix.push('.');
        }
        self.prefix.push_str(name);
        let out = f(self);
        self.prefix.truncate(saved);
        out
    }

    /// Adds `grad` into the entry for `name` under the current prefix.
    pub fn add(&mut self, name: &str, grad: Tensor<T>) {
        let path = join(&self.prefix, name);
        match self.map.get_mut(&path) {
            Some(acc) => acc.add_assign(&grad).expect("gradient shapes agree"),
            None => {
                self.map.insert(path, grad);
            }
        }
    }

    pub fn get(&self, path: &str) -> Option<&Tensor<T>> {
        self.map.get(path)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }
}

/// A module with an analytic backward pass.
///
/// `forward_train` keeps whatever `backward` needs in `Cache`; `backward`
/// adds parameter gradients into `grads` and returns the input gradient.
/// Both fail with [`crate::Error::Precision`] unless `T` is `f64`.
pub trait Differentiable<T: Scalar>: Params<T> {
    type Cache;

    fn forward_train(&self, x: &Tensor<T>, counter: Option<&MacCounter>) -> Result<(Tensor<T>, Self::Cache)>;

    fn backward(&self, cache: &Self::Cache, dy: &Tensor<T>, grads: &mut Grads<T>) -> Result<Tensor<T>>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scoped_paths_nest_and_unwind() {
        let mut g = Grads::<f64>::new();
        g.scoped("stage2", |g| {
            g.scoped("0", |g| g.add("weight", Tensor::ones(&[2])));
            g.add("bias", Tensor::ones(&[1]));
        });
        g.add("head", Tensor::ones(&[1]));
        let keys: Vec<_> = g.iter().map(|(k, _)| k.to_string()).collect();
        assert_eq!(keys, ["stage2.0.weight", "stage2.bias", "head"]);
    }

    #[test]
    fn add_accumulates() {
        let mut g = Grads::<f64>::new();
        g.add("w", Tensor::ones(&[2]));
        g.add("w", Tensor::ones(&[2]));
        assert_eq!(g.get("w").unwrap().data(), &[2.0, 2.0]);
    }
}
