//! Central finite-difference gradients, used as an oracle for the tape.
//!
//! Only forward evaluations are used here, so the result is independent of
//! every backward rule in [`crate::autodiff`].

use crate::error::Result;
use crate::params::ParamTree;
use crate::tensor::Tensor;

/// Default step for central differences in `f64`.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared in absolute rather than
/// relative terms; see [`relative_error`].
pub const MAGNITUDE_FLOOR: f64 = 1e-4;

/// `(f(x + h) - f(x - h)) / 2h` for every scalar of every leaf of `params`.
pub fn finite_difference<P, F>(params: &P, step: f64, mut loss: F) -> Result<Vec<(String, Tensor)>>
where
    P: ParamTree<Tensor> + Clone,
    F: FnMut(&P) -> Result<f64>,
{
    let mut work = params.clone();
    let mut layout = Vec::new();
    params.visit("", &mut |name, t| layout.push((name.to_string(), t.shape().to_vec())));

    let mut out = Vec::with_capacity(layout.len());
    for (leaf, (name, shape)) in layout.into_iter().enumerate() {
        let mut grad = Tensor::zeros(&shape);
        for k in 0..grad.numel() {
            nudge(&mut work, leaf, k, step);
            let plus = loss(&work)?;
            nudge(&mut work, leaf, k, -2.0 * step);
            let minus = loss(&work)?;
            nudge(&mut work, leaf, k, step);
            grad.data_mut()[k] = (plus - minus) / (2.0 * step);
        }
        out.push((name, grad));
    }
    Ok(out)
}

fn nudge<P: ParamTree<Tensor>>(tree: &mut P, leaf: usize, k: usize, delta: f64) {
    let mut i = 0;
    tree.visit_mut("", &mut |_, t| {
        if i == leaf {
            t.data_mut()[k] += delta;
        }
        i += 1;
    });
}

/// `|a - b| / max(|a|, |b|, MAGNITUDE_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(MAGNITUDE_FLOOR)
}

/// Largest [`relative_error`] over matching entries, with the offending name.
pub fn worst_relative_error(analytic: &[(String, Tensor)], numeric: &[(String, Tensor)]) -> (f64, String) {
    let mut worst = (0.0, String::new());
    for ((name, a), (name_b, b)) in analytic.iter().zip(numeric) {
        assert_eq!(name, name_b, "gradient lists are not aligned");
        for (k, (&x, &y)) in a.data().iter().zip(b.data()).enumerate() {
            let e = relative_error(x, y);
            if e > worst.0 || e.is_nan() {
                worst = (e, format!("{name}[{k}]: analytic {x:e}, numeric {y:e}"));
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::param_tree;

    #[derive(Clone)]
    struct Pair<T> {
        a: T,
        b: T,
    }
    param_tree!(Pair {
        leaves: [a, b],
        nodes: [],
        lists: []
    });

    #[test]
    fn quadratic_gradient() {
        let p = Pair {
            a: Tensor::vector(vec![1.0, -2.0]).unwrap(),
            b: Tensor::scalar(3.0),
        };
        // f = a0^2 + a1 * b
        let g = finite_difference(&p, DEFAULT_STEP, |p| {
            Ok(p.a.data()[0].powi(2) + p.a.data()[1] * p.b.data()[0])
        })
        .unwrap();
        assert_eq!(g[0].0, "a");
        assert!((g[0].1.data()[0] - 2.0).abs() < 1e-8);
        assert!((g[0].1.data()[1] - 3.0).abs() < 1e-8);
        assert!((g[1].1.data()[0] + 2.0).abs() < 1e-8);
    }

    #[test]
    fn relative_error_floors_tiny_values() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!(relative_error(1e-12, -1e-12) < 1e-7);
    }
}
