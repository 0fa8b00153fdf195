use super::{Graph, Scalar, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate.
    pub worst: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Coordinates left out because `x - eps` and `x + eps` take different
    /// ReLU or max-pool branches, where central differences are undefined.
    pub kinks: usize,
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

fn eval<T: Scalar, F>(f: &F, input: Tensor<T>) -> Result<(f64, u64)>
where
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.leaf(input);
    let out = f(&mut g, x)?;
    let v = g.value(out);
    if v.shape().numel() != 1 {
        return Err(Error::Usage(format!(
            "grad_check graph must end in a scalar, got {}",
            v.shape()
        )));
    }
    Ok((v.data()[0].as_f64(), g.branch_signature()))
}

/// Compare the reverse-mode gradient of `f` at `input` with central
/// differences on the given flat coordinates. Coordinates whose stencil
/// crosses a branch point are counted in `kinks` instead of compared.
pub fn grad_check_coords<T: Scalar, F>(
    f: F,
    input: &Tensor<T>,
    eps: f64,
    coords: &[usize],
) -> Result<GradCheck>
where
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let mut x0 = input.clone();
    x0.requires_grad = true;
    let x = g.leaf(x0);
    let out = f(&mut g, x)?;
    g.backward(out)?;
    let analytic: Vec<f64> = match g.grad(x) {
        Some(gr) => gr.iter().map(|v| v.as_f64()).collect(),
        None => vec![0.0; input.shape().numel()],
    };

    let mut best = GradCheck {
        max_rel_error: 0.0,
        worst: 0,
        analytic: 0.0,
        numeric: 0.0,
        kinks: 0,
    };
    let mut compared = false;
    for &i in coords {
        let orig = input.data()[i].as_f64();
        let mut plus = input.clone();
        plus.requires_grad = false;
        plus.data_mut()[i] = T::from_f64(orig + eps);
        let mut minus = plus.clone();
        minus.data_mut()[i] = T::from_f64(orig - eps);
        // Use the perturbation actually representable in T.
        let h = plus.data()[i].as_f64() - minus.data()[i].as_f64();
        let (fp, sp) = eval(&f, plus)?;
        let (fm, sm) = eval(&f, minus)?;
        if sp != sm {
            best.kinks += 1;
            continue;
        }
        let numeric = (fp - fm) / h;
        let err = rel_error(analytic[i], numeric);
        if err > best.max_rel_error || !compared {
            best = GradCheck {
                max_rel_error: err,
                worst: i,
                analytic: analytic[i],
                numeric,
                kinks: best.kinks,
            };
            compared = true;
        }
    }
    Ok(best)
}

/// Maximum relative error `|a - n| / max(|a|, |n|, 1e-8)` over every
/// coordinate of `input` that is not at a kink.
pub fn grad_check<T: Scalar, F>(f: F, input: &Tensor<T>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..input.shape().numel()).collect();
    grad_check_coords(f, input, eps, &coords).map(|r| r.max_rel_error)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_op_is_exact() {
        let x = Tensor::<f64>::from_fn([1, 2, 3, 3], |[_, c, h, w]| (c + h * w) as f64 * 0.1);
        let w = Tensor::<f64>::from_fn([1, 2, 3, 3], |[_, c, h, w]| {
            (c as f64 - h as f64) * 0.3 + w as f64
        });
        let err = grad_check(|g, x| g.weighted_sum(x, &w), &x, 1e-3).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // mul by a constant leaf whose value changes between the forward used
        // for backward and the perturbed forwards
        let x = Tensor::<f64>::full([1, 1, 1, 2], 0.5);
        let calls = std::cell::Cell::new(0.0);
        let err = grad_check(
            |g, x| {
                calls.set(calls.get() + 1.0);
                let w = g.leaf(Tensor::full(
                    [1, 1, 1, 2],
                    if calls.get() == 1.0 { 1.0 } else { 3.0 },
                ));
                let y = g.mul(x, w)?;
                Ok(g.sum(y))
            },
            &x,
            1e-3,
        )
        .unwrap();
        assert!(err > 0.5, "{err}");
    }

    #[test]
    fn relu_kink_is_skipped_not_compared() {
        // at exactly 0 the central difference sees 0.5 where backward reports 0
        let x = Tensor::<f64>::from_fn([1, 1, 1, 2], |[_, _, _, w]| w as f64);
        let r = grad_check_coords(
            |g, x| {
                Ok({
                    let y = g.relu(x);
                    g.sum(y)
                })
            },
            &x,
            1e-3,
            &[0, 1],
        )
        .unwrap();
        assert_eq!(r.kinks, 1);
        assert_eq!(r.worst, 1);
        assert!(r.max_rel_error < 1e-9);
    }
}
