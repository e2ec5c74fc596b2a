//! The duality gap Δ, the squared-gap regularizer, and its chain-rule
//! gradient contributions to both models.
//!
//! For one example, Δ = log P̂(x) + log P(y|x;θ_xy) - log P̂(y)
//! - log P(x|y;θ_yx), and the regularizer is Δ². The gap is zero exactly
//! when the two conditional models factorize the same joint under the
//! supplied marginals.

use crate::data::Item;
use crate::error::{Error, Result};
use crate::models::Gradient;

/// Per-example duality measurement. `lambda_xy`/`lambda_yx` carry the
/// penalty weights the trainer will apply; [`duality_term`] leaves them
/// at zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualityTerm {
    pub delta: f64,
    pub loss: f64,
    pub lambda_xy: f64,
    pub lambda_yx: f64,
}

impl DualityTerm {
    pub fn with_lambdas(mut self, lambda_xy: f64, lambda_yx: f64) -> Self {
        self.lambda_xy = lambda_xy;
        self.lambda_yx = lambda_yx;
        self
    }
}

/// Computes Δ and Δ² from the four log factors.
///
/// Non-finite inputs are a hard error rather than being clamped: a -inf
/// here means an unsmoothed marginal, and clamping would silently
/// corrupt the regularizer.
pub fn duality_term(
    log_px: f64,
    log_p_y_given_x: f64,
    log_py: f64,
    log_p_x_given_y: f64,
) -> Result<DualityTerm> {
    let inputs = [log_px, log_p_y_given_x, log_py, log_p_x_given_y];
    if inputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateLogProb(format!(
            "duality inputs must be finite, got {inputs:?}"
        )));
    }
    // grouped as a difference of differences so a role swap negates
    // delta exactly, not just approximately
    let delta = (log_px - log_py) + (log_p_y_given_x - log_p_x_given_y);
    Ok(DualityTerm { delta, loss: delta * delta, lambda_xy: 0.0, lambda_yx: 0.0 })
}

/// Chain-rule gradients of Δ² through both models, before λ weighting:
/// (2Δ·∇_θxy log P(y|x), -2Δ·∇_θyx log P(x|y)).
pub fn duality_grads(
    term: &DualityTerm,
    grad_primal: &Gradient,
    grad_dual: &Gradient,
) -> (Gradient, Gradient) {
    let s = 2.0 * term.delta;
    let gp = grad_primal.iter().map(|g| s * g).collect();
    let gd = grad_dual.iter().map(|g| -s * g).collect();
    (gp, gd)
}

/// How λ_xy and λ_yx are derived per example.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LambdaRule {
    /// Fixed weights, the same for every example.
    Constant { c_xy: f64, c_yx: f64 },
    /// λ = (c / len(x))², shrinking the penalty for long inputs.
    LengthScaled { c_xy: f64, c_yx: f64 },
}

impl LambdaRule {
    pub fn constant(c_xy: f64, c_yx: f64) -> Self {
        LambdaRule::Constant { c_xy, c_yx }
    }

    pub fn length_scaled(c_xy: f64, c_yx: f64) -> Self {
        LambdaRule::LengthScaled { c_xy, c_yx }
    }

    /// True when both weights are identically zero for every example,
    /// i.e. training reduces to independent supervised learning.
    pub fn is_zero(&self) -> bool {
        match *self {
            LambdaRule::Constant { c_xy, c_yx } | LambdaRule::LengthScaled { c_xy, c_yx } => {
                c_xy == 0.0 && c_yx == 0.0
            }
        }
    }
}

/// Resolves the per-example (λ_xy, λ_yx) for input `x`.
pub fn lambda_for(rule: &LambdaRule, x: &Item) -> (f64, f64) {
    match *rule {
        LambdaRule::Constant { c_xy, c_yx } => (c_xy, c_yx),
        LambdaRule::LengthScaled { c_xy, c_yx } => {
            let len = x.len() as f64;
            ((c_xy / len).powi(2), (c_yx / len).powi(2))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Alphabet;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn balanced_factorization_has_zero_gap() {
        let t = duality_term(-2.0, -1.0, -2.5, -0.5).unwrap();
        assert_eq!(t.delta, 0.0);
        assert_eq!(t.loss, 0.0);
    }

    #[test]
    fn direct_substitution() {
        let t = duality_term(-2.0, -1.0, -1.5, -2.0).unwrap();
        assert_abs_diff_eq!(t.delta, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(t.loss, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn role_swap_negates_delta_and_preserves_loss() {
        let t = duality_term(-2.0, -1.0, -1.5, -2.0).unwrap();
        let swapped = duality_term(-1.5, -2.0, -2.0, -1.0).unwrap();
        assert_eq!(swapped.delta, -t.delta);
        assert_eq!(swapped.loss, t.loss);
    }

    #[test]
    fn non_finite_input_is_an_error() {
        assert!(duality_term(f64::NEG_INFINITY, -1.0, -1.0, -1.0).is_err());
        assert!(duality_term(-1.0, f64::NAN, -1.0, -1.0).is_err());
    }

    #[test]
    fn zero_gap_gives_zero_gradients() {
        let t = duality_term(-2.0, -1.0, -2.5, -0.5).unwrap();
        let (gp, gd) = duality_grads(&t, &vec![1.0, -2.0], &vec![0.5, 0.5]);
        assert_eq!(gp, vec![0.0, 0.0]);
        assert_eq!(gd, vec![0.0, 0.0]);
    }

    #[test]
    fn primal_gradient_is_two_delta_times_grad() {
        let t = duality_term(-2.0, -1.0, -1.5, -2.0).unwrap(); // delta = 0.5
        let (gp, gd) = duality_grads(&t, &vec![1.0, -2.0], &vec![3.0]);
        assert_eq!(gp, vec![1.0, -2.0]);
        assert_eq!(gd, vec![-3.0]);
    }

    #[test]
    fn constant_lambda() {
        let a = Alphabet::new(4).unwrap();
        let x = Item::new(vec![0, 1, 2], a).unwrap();
        let rule = LambdaRule::constant(0.01, 0.01);
        assert_eq!(lambda_for(&rule, &x), (0.01, 0.01));
    }

    #[test]
    fn length_scaled_lambda() {
        let a = Alphabet::new(4).unwrap();
        let x = Item::new(vec![0; 10], a).unwrap();
        let rule = LambdaRule::length_scaled(5.0, 0.5);
        let (lxy, lyx) = lambda_for(&rule, &x);
        assert_abs_diff_eq!(lxy, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(lyx, 0.0025, epsilon = 1e-15);
    }

    #[test]
    fn length_scaled_lambda_long_input() {
        let a = Alphabet::new(2).unwrap();
        let x = Item::new(vec![0; 3072], a).unwrap();
        let rule = LambdaRule::length_scaled(30.0, 1.2);
        let (lxy, lyx) = lambda_for(&rule, &x);
        assert_abs_diff_eq!(lxy, (30.0f64 / 3072.0).powi(2), epsilon = 1e-18);
        assert_abs_diff_eq!(lyx, (1.2f64 / 3072.0).powi(2), epsilon = 1e-18);
    }

    proptest! {
        #[test]
        fn antisymmetry(lpx in -10.0f64..0.0, lpyx in -10.0f64..0.0,
                        lpy in -10.0f64..0.0, lpxy in -10.0f64..0.0) {
            let t = duality_term(lpx, lpyx, lpy, lpxy).unwrap();
            let s = duality_term(lpy, lpxy, lpx, lpyx).unwrap();
            prop_assert_eq!(s.delta, -t.delta);
            prop_assert_eq!(s.loss, t.loss);
            prop_assert!(t.loss >= 0.0);
            prop_assert!((t.loss - t.delta * t.delta).abs() <= 1e-12);
        }
    }
}
