//! Named parameter trees.
//!
//! Model parameters live in plain structs generic over their leaf type: the
//! stored model is `Foo<Tensor>`, the same struct bound onto a tape is
//! `Foo<Var>`. [`ParamTree`] gives every leaf a stable dotted name
//! (`extractor.blocks.0.cross_attn.w_q`) and a fixed visiting order, which the
//! optimizer, checkpoints and gradient checks all rely on.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::autodiff::{Graph, Var};
use crate::tensor::Tensor;

pub trait ParamTree<T> {
    type Mapped<U>;

    fn map_named<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> Self::Mapped<U>;

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a T));

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T));
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Implements [`ParamTree`] for a struct generic over its leaf type.
///
/// `leaves` are fields of type `T`, `nodes` are nested trees and `lists` are
/// `Vec`s of nested trees (named `field.index`).
macro_rules! param_tree {
    ($ty:ident { leaves: [$($leaf:ident),*], nodes: [$($node:ident),*], lists: [$($list:ident),*] }) => {
        impl<T> $crate::params::ParamTree<T> for $ty<T> {
            type Mapped<U> = $ty<U>;

            #[allow(unused_variables)]
            fn map_named<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> $ty<U> {
                $ty {
                    $($leaf: f(&$crate::params::join(prefix, stringify!($leaf)), &self.$leaf),)*
                    $($node: $crate::params::ParamTree::map_named(
                        &self.$node,
                        &$crate::params::join(prefix, stringify!($node)),
                        f,
                    ),)*
                    $($list: self.$list
                        .iter()
                        .enumerate()
                        .map(|(i, x)| $crate::params::ParamTree::map_named(
                            x,
                            &$crate::params::join(prefix, &format!("{}.{}", stringify!($list), i)),
                            f,
                        ))
                        .collect(),)*
                }
            }

            #[allow(unused_variables)]
            fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a T)) {
                $(f(&$crate::params::join(prefix, stringify!($leaf)), &self.$leaf);)*
                $($crate::params::ParamTree::visit(
                    &self.$node,
                    &$crate::params::join(prefix, stringify!($node)),
                    f,
                );)*
                $(for (i, x) in self.$list.iter().enumerate() {
                    $crate::params::ParamTree::visit(
                        x,
                        &$crate::params::join(prefix, &format!("{}.{}", stringify!($list), i)),
                        f,
                    );
                })*
            }

            #[allow(unused_variables)]
            fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
                $(f(&$crate::params::join(prefix, stringify!($leaf)), &mut self.$leaf);)*
                $($crate::params::ParamTree::visit_mut(
                    &mut self.$node,
                    &$crate::params::join(prefix, stringify!($node)),
                    f,
                );)*
                $(for (i, x) in self.$list.iter_mut().enumerate() {
                    $crate::params::ParamTree::visit_mut(
                        x,
                        &$crate::params::join(prefix, &format!("{}.{}", stringify!($list), i)),
                        f,
                    );
                })*
            }
        }
    };
}
pub(crate) use param_tree;

/// Every leaf with its name, in visiting order.
pub fn named<T, P: ParamTree<T>>(tree: &P) -> Vec<(String, &T)> {
    let mut out = Vec::new();
    tree.visit("", &mut |name, t| out.push((name.to_string(), t)));
    out
}

pub fn count_scalars<P: ParamTree<Tensor>>(tree: &P) -> usize {
    let mut n = 0;
    tree.visit("", &mut |_, t| n += t.numel());
    n
}

/// Registers every tensor as a trainable leaf on `graph`.
pub fn bind<P: ParamTree<Tensor>>(tree: &P, graph: &mut Graph) -> P::Mapped<Var> {
    tree.map_named("", &mut |_, t| graph.param(t.clone()))
}

/// Registers every tensor as a constant (no gradient) on `graph`.
pub fn bind_frozen<P: ParamTree<Tensor>>(tree: &P, graph: &mut Graph) -> P::Mapped<Var> {
    tree.map_named("", &mut |_, t| graph.constant(t.clone()))
}

/// Reads the accumulated gradient of each bound leaf; untouched leaves get zeros.
pub fn collect_grads<B: ParamTree<Var>>(bound: &B, graph: &Graph) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    bound.visit("", &mut |name, &v| {
        let g = graph.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(graph.shape(v)));
        out.push((name.to_string(), g));
    });
    out
}

/// Uniform on `±1/sqrt(fan_in)`.
pub fn uniform_fan_in(rng: &mut impl Rng, fan_in: usize, shape: &[usize]) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
    sample(rng, shape, |r| dist.sample(r))
}

pub fn normal(rng: &mut impl Rng, std: f64, shape: &[usize]) -> Tensor {
    let dist = Normal::new(0.0, std).expect("finite std");
    sample(rng, shape, |r| dist.sample(r))
}

fn sample<R: Rng>(rng: &mut R, shape: &[usize], mut f: impl FnMut(&mut R) -> f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = f(rng);
    }
    t
}
