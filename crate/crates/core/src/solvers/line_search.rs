//! Backtracking line search under the sufficient-decrease test.

use nalgebra::DVector;

/// Signals the search cannot return a certified stepsize.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LineSearchError {
    /// The supplied slope is not negative; backtracking cannot certify
    /// decrease. The caller decides the fallback.
    NonDescent { slope: f64 },
    /// Every trial stepsize was rejected; carries the last one tried and
    /// the number of value queries spent.
    Exhausted { last_alpha: f64, probes: usize },
}

/// Finds the first `alpha` in `{1, shrink, shrink^2, ...}` with
/// `f(x + alpha d) <= f0 + c * alpha * slope`, given `f0 = f(x)` and the
/// directional-derivative surrogate `slope`. Returns
/// `(alpha, probes, f(x + alpha d))`; each trial costs one value query.
pub fn armijo_stepsize<F: Fn(&DVector<f64>) -> f64>(
    f: F,
    f0: f64,
    x: &DVector<f64>,
    dir: &DVector<f64>,
    slope: f64,
    c: f64,
    shrink: f64,
    max_backtracks: usize,
) -> Result<(f64, usize, f64), LineSearchError> {
    debug_assert!(c > 0.0 && c < 1.0);
    debug_assert!(shrink > 0.0 && shrink < 1.0);
    if !(slope < 0.0) {
        return Err(LineSearchError::NonDescent { slope });
    }
    let mut alpha = 1.0;
    for trial in 0..max_backtracks {
        let probe = x + dir * alpha;
        let f_alpha = f(&probe);
        if f_alpha <= f0 + c * alpha * slope {
            return Ok((alpha, trial + 1, f_alpha));
        }
        if trial + 1 == max_backtracks {
            return Err(LineSearchError::Exhausted {
                last_alpha: alpha,
                probes: max_backtracks,
            });
        }
        alpha *= shrink;
    }
    unreachable!("max_backtracks is at least 1")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_square(x: &DVector<f64>) -> f64 {
        0.5 * x[0] * x[0]
    }

    #[test]
    fn full_step_accepted_when_decrease_holds() {
        let x = DVector::from_vec(vec![1.0]);
        let d = DVector::from_vec(vec![-1.0]);
        let (alpha, probes, f_alpha) =
            armijo_stepsize(half_square, 0.5, &x, &d, -1.0, 0.1, 0.5, 30).unwrap();
        assert_eq!(alpha, 1.0);
        assert_eq!(probes, 1);
        assert_eq!(f_alpha, 0.0);
    }

    #[test]
    fn two_rejections_then_quarter_step() {
        let x = DVector::from_vec(vec![1.0]);
        let d = DVector::from_vec(vec![-3.0]);
        let (alpha, probes, _) =
            armijo_stepsize(half_square, 0.5, &x, &d, -3.0, 0.5, 0.5, 30).unwrap();
        assert_eq!(alpha, 0.25);
        assert_eq!(probes, 3);
    }

    #[test]
    fn positive_slope_signals_non_descent() {
        let x = DVector::from_vec(vec![1.0]);
        let d = DVector::from_vec(vec![1.0]);
        let err = armijo_stepsize(half_square, 0.5, &x, &d, 1.0, 0.1, 0.5, 30).unwrap_err();
        assert_eq!(err, LineSearchError::NonDescent { slope: 1.0 });
    }

    #[test]
    fn zero_slope_also_signals_non_descent() {
        let x = DVector::from_vec(vec![1.0]);
        let d = DVector::zeros(1);
        assert!(matches!(
            armijo_stepsize(half_square, 0.5, &x, &d, 0.0, 0.1, 0.5, 30),
            Err(LineSearchError::NonDescent { .. })
        ));
    }

    #[test]
    fn exhaustion_carries_last_alpha_tried() {
        // f increases along d, so no trial can pass
        let f = |x: &DVector<f64>| x[0];
        let x = DVector::from_vec(vec![0.0]);
        let d = DVector::from_vec(vec![1.0]);
        let err = armijo_stepsize(f, 0.0, &x, &d, -1.0, 0.9, 0.5, 4).unwrap_err();
        assert_eq!(
            err,
            LineSearchError::Exhausted {
                last_alpha: 0.125,
                probes: 4
            }
        );
    }
}
