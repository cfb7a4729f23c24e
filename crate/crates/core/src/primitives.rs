//! Lipschitz-resilient robust statistics.
//!
//! All estimators take voting rights `w_u`, optional values `x_u` (absent
//! values are ignored) and asymmetric uncertainties, and are `L`-Lipschitz
//! in the voting rights under the ℓ₁ norm: moving a single voter's weight by
//! `δ` moves the output by at most `L·δ` (or `2L·δ` for [`qr_dev`]).
//!
//! The regularized estimators minimize `m²/(2L) + Σ w_u·Huber_α(m | x_u, Δ_u)`.
//! The asymmetric Huber loss weighs values above `m` by `min{1, α/(1-α)}` and
//! values below `m` by `min{1, (1-α)/α}`, so for large `L·‖w‖₁` the
//! minimizer approaches the weighted α-quantile.

use serde::{Deserialize, Serialize};

use crate::solver::minimize_convex_1d;

/// Left/right uncertainty of a value. `f64::INFINITY` means "unknown".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Uncertainty {
    pub left: f64,
    pub right: f64,
}

impl Uncertainty {
    pub const ZERO: Uncertainty = Uncertainty { left: 0.0, right: 0.0 };
    pub const INFINITE: Uncertainty = Uncertainty {
        left: f64::INFINITY,
        right: f64::INFINITY,
    };

    pub fn new(left: f64, right: f64) -> Self {
        debug_assert!(left >= 0.0 && right >= 0.0, "uncertainties are nonnegative");
        Uncertainty { left, right }
    }

    pub fn symmetric(delta: f64) -> Self {
        Uncertainty::new(delta, delta)
    }

    /// Uncertainty of `-x` given the uncertainty of `x`.
    pub fn swapped(self) -> Self {
        Uncertainty {
            left: self.right,
            right: self.left,
        }
    }

    /// Uncertainty of `k·x` for `k ≥ 0`.
    pub fn scaled(self, k: f64) -> Self {
        Uncertainty {
            left: scale_unc(self.left, k),
            right: scale_unc(self.right, k),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.left.is_finite() && self.right.is_finite()
    }
}

impl std::ops::Add for Uncertainty {
    type Output = Uncertainty;

    fn add(self, rhs: Uncertainty) -> Uncertainty {
        Uncertainty {
            left: self.left + rhs.left,
            right: self.right + rhs.right,
        }
    }
}

// 0·∞ is taken to be 0: a zero factor erases the unknown term.
fn scale_unc(delta: f64, k: f64) -> f64 {
    if k == 0.0 {
        0.0
    } else {
        delta * k
    }
}

/// A voter's contribution: weight, optional value, and uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedInput {
    pub weight: f64,
    pub value: Option<f64>,
    pub uncertainty: Uncertainty,
}

impl WeightedInput {
    pub fn new(weight: f64, value: f64, uncertainty: Uncertainty) -> Self {
        debug_assert!(weight >= 0.0, "voting rights are nonnegative");
        WeightedInput {
            weight,
            value: Some(value),
            uncertainty,
        }
    }

    /// A value known exactly.
    pub fn exact(weight: f64, value: f64) -> Self {
        WeightedInput::new(weight, value, Uncertainty::ZERO)
    }

    /// A voter without a value for this item.
    pub fn absent(weight: f64) -> Self {
        WeightedInput {
            weight,
            value: None,
            uncertainty: Uncertainty::ZERO,
        }
    }

    fn active(&self) -> Option<f64> {
        match self.value {
            Some(x) if self.weight > 0.0 => Some(x),
            _ => None,
        }
    }
}

/// Hyperparameters shared by the regularized primitives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResilienceParams {
    pub lipschitz: f64,
    pub quantile: f64,
    pub default_deviation: f64,
    pub solver_tolerance: f64,
}

impl Default for ResilienceParams {
    fn default() -> Self {
        ResilienceParams {
            lipschitz: 0.1,
            quantile: 0.2,
            default_deviation: 1.0,
            solver_tolerance: 0.01,
        }
    }
}

fn branch_coefficients(alpha: f64) -> (f64, f64) {
    debug_assert!(alpha > 0.0 && alpha < 1.0, "quantile must lie in (0, 1)");
    let above = (alpha / (1.0 - alpha)).min(1.0);
    let below = ((1.0 - alpha) / alpha).min(1.0);
    (above, below)
}

/// Asymmetric Huber loss of estimate `m` against value `x`.
pub fn huber_asym(m: f64, x: f64, delta_left: f64, delta_right: f64, alpha: f64) -> f64 {
    let (above, below) = branch_coefficients(alpha);
    let (coef, delta) = if m <= x {
        (above, delta_left)
    } else {
        (below, delta_right)
    };
    if delta.is_infinite() {
        return 0.0;
    }
    let gap = x - m;
    // sqrt(Δ² + g²) - Δ, written to avoid cancellation for large Δ
    let root = delta.hypot(gap);
    if root == 0.0 {
        return 0.0;
    }
    coef * gap * gap / (root + delta)
}

/// Derivative of [`huber_asym`] with respect to `m`. Always in `[-1, 1]`.
pub fn huber_asym_derivative(m: f64, x: f64, delta_left: f64, delta_right: f64, alpha: f64) -> f64 {
    let (above, below) = branch_coefficients(alpha);
    let (coef, delta) = if m <= x {
        (above, delta_left)
    } else {
        (below, delta_right)
    };
    if delta.is_infinite() {
        return 0.0;
    }
    let gap = m - x;
    let root = delta.hypot(gap);
    if root == 0.0 {
        return 0.0;
    }
    coef * gap / root
}

fn solve(lipschitz: f64, alpha: f64, inputs: &[WeightedInput], tol: f64) -> f64 {
    debug_assert!(lipschitz > 0.0, "lipschitz must be positive");
    if inputs.iter().all(|i| i.active().is_none()) {
        return 0.0;
    }
    let derivative = |m: f64| {
        let data: f64 = inputs
            .iter()
            .filter_map(|i| {
                i.active().map(|x| {
                    i.weight
                        * huber_asym_derivative(m, x, i.uncertainty.left, i.uncertainty.right, alpha)
                })
            })
            .sum();
        m / lipschitz + data
    };
    // The regularizer dominates far from the data, so a finite input always
    // brackets; only NaN inputs can fail here.
    minimize_convex_1d(derivative, tol).expect("regularized loss with finite inputs has a minimizer")
}

/// Quadratically regularized median.
///
/// Returns 0 when no voter has both a value and positive weight.
pub fn qr_med(lipschitz: f64, inputs: &[WeightedInput], tol: f64) -> f64 {
    solve(lipschitz, 0.5, inputs, tol)
}

/// Quadratically regularized α-quantile.
pub fn qr_qtl(alpha: f64, lipschitz: f64, inputs: &[WeightedInput], tol: f64) -> f64 {
    solve(lipschitz, alpha, inputs, tol)
}

/// Quadratically regularized deviation to the regularized median.
///
/// `default_dev + QrQtl_α(w, |x - m| - default_dev, Δ)` with
/// `m = QrMed_L(w, x, Δ)`. It is `2L`-Lipschitz resilient.
pub fn qr_dev(
    alpha: f64,
    lipschitz: f64,
    default_dev: f64,
    inputs: &[WeightedInput],
    tol: f64,
) -> f64 {
    debug_assert!(default_dev > 0.0);
    let median = qr_med(lipschitz, inputs, tol);
    let deviations: Vec<WeightedInput> = inputs
        .iter()
        .map(|i| match i.value {
            Some(x) => {
                // below the median a lower x means a larger deviation
                let unc = if x >= median {
                    i.uncertainty
                } else {
                    i.uncertainty.swapped()
                };
                WeightedInput::new(i.weight, (x - median).abs() - default_dev, unc)
            }
            None => *i,
        })
        .collect();
    default_dev + qr_qtl(alpha, lipschitz, &deviations, tol)
}

/// Uncertainty on [`qr_med`]; the pessimistic [`qr_dev`] estimate.
pub fn qr_unc(
    alpha: f64,
    lipschitz: f64,
    default_dev: f64,
    inputs: &[WeightedInput],
    tol: f64,
) -> f64 {
    qr_dev(alpha, lipschitz, default_dev, inputs, tol)
}

/// Weighted mean of values clipped to `[center - radius, center + radius]`.
///
/// Uncertainties are ignored. Returns `center` when the total weight is 0.
pub fn clip_mean(inputs: &[WeightedInput], center: f64, radius: f64) -> f64 {
    let (lo, hi) = (center - radius, center + radius);
    let (total, weighted) = inputs
        .iter()
        .filter_map(|i| i.active().map(|x| (i.weight, i.weight * x.clamp(lo, hi))))
        .fold((0.0, 0.0), |(t, s), (w, v)| (t + w, s + v));
    if total > 0.0 {
        weighted / total
    } else {
        center
    }
}

/// Byzantine-robustified mean: [`clip_mean`] centered on `QrMed_{L/4}` with
/// radius `(L/4)·Σw`.
///
/// The center moves by at most `(L/4)·δ`, the radius by `(L/4)·δ` and the
/// reweighting by `(L/2)·δ` when weights move by `δ` in ℓ₁, hence
/// `L`-Lipschitz resilience.
pub fn br_mean(lipschitz: f64, inputs: &[WeightedInput], tol: f64) -> f64 {
    let total: f64 = inputs
        .iter()
        .filter(|i| i.active().is_some())
        .map(|i| i.weight)
        .sum();
    if total <= 0.0 {
        return 0.0;
    }
    let center = qr_med(lipschitz / 4.0, inputs, tol);
    clip_mean(inputs, center, lipschitz / 4.0 * total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TOL: f64 = 1e-6;

    // Independent loss: written from the definition, no shared helpers.
    fn oracle_loss(m: f64, lipschitz: f64, alpha: f64, data: &[(f64, f64, f64, f64)]) -> f64 {
        let mut loss = m * m / (2.0 * lipschitz);
        for &(w, x, dl, dr) in data {
            if m <= x {
                let c = f64::min(1.0, alpha / (1.0 - alpha));
                loss += w * c * ((dl * dl + (x - m) * (x - m)).sqrt() - dl);
            } else {
                let c = f64::min(1.0, (1.0 - alpha) / alpha);
                loss += w * c * ((dr * dr + (m - x) * (m - x)).sqrt() - dr);
            }
        }
        loss
    }

    // Dense grid followed by golden-section refinement around the best cell.
    fn grid_argmin(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
        let n = 20_000;
        let step = (hi - lo) / n as f64;
        let best = (0..=n)
            .map(|k| lo + k as f64 * step)
            .min_by(|a, b| f(*a).partial_cmp(&f(*b)).unwrap())
            .unwrap();
        let (mut a, mut b) = (best - step, best + step);
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - phi * (b - a);
            let d = a + phi * (b - a);
            if f(c) < f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        (a + b) / 2.0
    }

    fn exact_inputs(values: &[f64]) -> Vec<WeightedInput> {
        values.iter().map(|&x| WeightedInput::exact(1.0, x)).collect()
    }

    #[test]
    fn huber_zero_at_value() {
        assert_eq!(huber_asym(5.0, 5.0, 1.0, 1.0, 0.3), 0.0);
    }

    #[test]
    fn huber_unit_slope_without_uncertainty() {
        assert!((huber_asym(0.0, 1.0, 0.0, 0.0, 0.5) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn huber_right_branch_uses_right_uncertainty() {
        let expected = 13f64.sqrt() - 3.0;
        assert!((huber_asym(2.0, 0.0, 0.0, 3.0, 0.5) - expected).abs() < 1e-12);
        assert!((expected - 0.6056).abs() < 1e-4);
    }

    #[test]
    fn huber_infinite_uncertainty_vanishes() {
        assert_eq!(huber_asym(-3.0, 1.0, f64::INFINITY, 0.0, 0.4), 0.0);
        assert_eq!(huber_asym_derivative(-3.0, 1.0, f64::INFINITY, 0.0, 0.4), 0.0);
    }

    #[test]
    fn huber_derivative_examples() {
        assert_eq!(huber_asym_derivative(2.0, 2.0, 0.3, 0.7, 0.2), 0.0);
        assert_eq!(huber_asym_derivative(10.0, 0.0, 0.0, 0.0, 0.5), 1.0);
        assert_eq!(huber_asym_derivative(-10.0, 0.0, 0.0, 0.0, 0.5), -1.0);
    }

    #[test]
    fn qr_med_empty_is_zero() {
        assert_eq!(qr_med(1.0, &[], TOL), 0.0);
        assert_eq!(qr_med(1.0, &[WeightedInput::exact(0.0, 5.0)], TOL), 0.0);
        assert_eq!(qr_med(1.0, &[WeightedInput::absent(1.0)], TOL), 0.0);
    }

    #[test]
    fn qr_med_single_input_matches_grid() {
        let m = qr_med(1.0, &[WeightedInput::exact(1.0, 10.0)], TOL);
        let oracle = grid_argmin(|m| oracle_loss(m, 1.0, 0.5, &[(1.0, 10.0, 0.0, 0.0)]), -20.0, 20.0);
        assert!((oracle - 1.0).abs() < 1e-6);
        assert!((m - oracle).abs() <= TOL + 1e-7);
    }

    #[test]
    fn qr_med_large_l_approaches_median() {
        let inputs = exact_inputs(&[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let m = qr_med(100.0, &inputs, TOL);
        let data: Vec<_> = (1..=9).map(|x| (1.0, x as f64, 0.0, 0.0)).collect();
        let oracle = grid_argmin(|m| oracle_loss(m, 100.0, 0.5, &data), 0.0, 10.0);
        assert!((m - oracle).abs() <= TOL + 1e-6);
        assert!((m - 5.0).abs() <= TOL + 0.05);
    }

    #[test]
    fn qr_qtl_half_retrieves_qr_med() {
        let inputs = exact_inputs(&[-3.0, 0.5, 2.0, 7.5, 11.0]);
        for l in [0.1, 1.0, 10.0] {
            let a = qr_qtl(0.5, l, &inputs, TOL);
            let b = qr_med(l, &inputs, TOL);
            assert!((a - b).abs() <= 2.0 * TOL);
        }
    }

    #[test]
    fn qr_qtl_zero_weights() {
        let inputs = vec![WeightedInput::exact(0.0, 3.0), WeightedInput::exact(0.0, -1.0)];
        assert_eq!(qr_qtl(0.3, 2.0, &inputs, TOL), 0.0);
    }

    // Weighted β-quantile: smallest x whose cumulative weight reaches β·‖w‖₁.
    fn weighted_quantile(values: &[f64], beta: f64) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let total = v.len() as f64;
        let mut acc = 0.0;
        for x in &v {
            acc += 1.0;
            if acc >= beta * total - 1e-12 {
                return *x;
            }
        }
        *v.last().unwrap()
    }

    #[test]
    fn qr_qtl_tracks_lower_quantile() {
        let values: Vec<f64> = (1..=10).map(|x| x as f64).collect();
        let q = qr_qtl(0.2, 1e6, &exact_inputs(&values), TOL);
        let lo = weighted_quantile(&values, 0.1);
        let hi = weighted_quantile(&values, 0.3);
        assert!(q >= lo - TOL && q <= hi + TOL, "{q} not in [{lo}, {hi}]");
    }

    #[test]
    fn qr_qtl_consensus_preference() {
        // Two equal camps at ±4: α < 0.5 leans towards the lower camp.
        let inputs = exact_inputs(&[-4.0, -4.0, 4.0, 4.0]);
        let q = qr_qtl(0.2, 0.1, &inputs, TOL);
        let data: Vec<_> = [-4.0, -4.0, 4.0, 4.0].iter().map(|&x| (1.0, x, 0.0, 0.0)).collect();
        let oracle = grid_argmin(|m| oracle_loss(m, 0.1, 0.2, &data), -5.0, 5.0);
        assert!(q < 0.0);
        assert!((q - oracle).abs() < 1e-5);
    }

    #[test]
    fn qr_dev_empty_is_default() {
        assert_eq!(qr_dev(0.9, 1.0, 1.0, &[], TOL), 1.0);
        assert_eq!(qr_unc(0.9, 1.0, 1.0, &[], TOL), 1.0);
    }

    #[test]
    fn qr_dev_concentrated_values_shrink_to_zero() {
        let inputs: Vec<_> = (0..4).map(|_| WeightedInput::exact(1e5, 0.0)).collect();
        let d = qr_dev(0.5, 1.0, 1.0, &inputs, 1e-9);
        assert!(d.abs() < 1e-4, "{d}");
    }

    #[test]
    fn clip_mean_examples() {
        let inside = exact_inputs(&[0.1, 0.2, 0.6]);
        assert!((clip_mean(&inside, 0.0, 1.0) - 0.3).abs() < 1e-12);
        assert_eq!(clip_mean(&[WeightedInput::exact(1.0, 100.0)], 0.0, 1.0), 1.0);
        assert_eq!(clip_mean(&exact_inputs(&[-5.0, 5.0]), 0.0, 2.0), 0.0);
        assert_eq!(clip_mean(&[], 3.5, 1.0), 3.5);
    }

    #[test]
    fn br_mean_exact_on_bounded_inputs() {
        let values: Vec<f64> = (0..100).map(|k| -1.0 + 2.0 * (k as f64 * 0.618_034).fract()).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let b = br_mean(10.0, &exact_inputs(&values), TOL);
        assert!((b - mean).abs() <= 2.0 * TOL);
        assert_eq!(br_mean(1.0, &[], TOL), 0.0);
    }

    #[test]
    fn br_mean_single_voter_moves_at_most_l() {
        let mut inputs = exact_inputs(&[0.3, 2.0, -1.5, 40.0]);
        let before = br_mean(0.5, &inputs, TOL);
        inputs[3].weight = 0.0;
        let after = br_mean(0.5, &inputs, TOL);
        assert!((before - after).abs() <= 0.5 + TOL);
    }

    fn inputs_strategy() -> impl Strategy<Value = Vec<(f64, f64, f64, f64)>> {
        prop::collection::vec((0.0..3.0f64, -20.0..20.0f64, 0.0..2.0f64, 0.0..2.0f64), 1..12)
    }

    fn to_inputs(raw: &[(f64, f64, f64, f64)]) -> Vec<WeightedInput> {
        raw.iter()
            .map(|&(w, x, l, r)| WeightedInput::new(w, x, Uncertainty::new(l, r)))
            .collect()
    }

    proptest! {
        #[test]
        fn huber_derivative_bounded_and_matches_fd(
            m in -10.0..10.0f64, x in -10.0..10.0f64,
            dl in 0.0..3.0f64, dr in 0.0..3.0f64, alpha in 0.05..0.95f64,
        ) {
            let d = huber_asym_derivative(m, x, dl, dr, alpha);
            prop_assert!(d.abs() <= 1.0);
            let h = 1e-5;
            // skip the kink of the Δ = 0 branches
            prop_assume!((m - x).abs() > 1e-3);
            let fd = (huber_asym(m + h, x, dl, dr, alpha) - huber_asym(m - h, x, dl, dr, alpha)) / (2.0 * h);
            prop_assert!((fd - d).abs() <= 1e-6, "fd {} vs {}", fd, d);
        }

        #[test]
        fn huber_is_convex(x in -5.0..5.0f64, dl in 0.0..2.0f64, dr in 0.0..2.0f64, alpha in 0.05..0.95f64) {
            let h = 0.01;
            for k in -500..500 {
                let m = k as f64 * h;
                let second = huber_asym(m + h, x, dl, dr, alpha) - 2.0 * huber_asym(m, x, dl, dr, alpha)
                    + huber_asym(m - h, x, dl, dr, alpha);
                prop_assert!(second >= -1e-9);
            }
        }

        #[test]
        fn qr_med_matches_grid_oracle(raw in inputs_strategy(), l in 0.1..10.0f64) {
            let m = qr_med(l, &to_inputs(&raw), TOL);
            let bound = l * raw.iter().map(|r| r.0).sum::<f64>() + 1.0;
            let oracle = grid_argmin(|m| oracle_loss(m, l, 0.5, &raw), -bound, bound);
            prop_assert!((m - oracle).abs() <= 1e-4, "{} vs {}", m, oracle);
        }

        #[test]
        fn qr_med_one_lipschitz_in_values(raw in inputs_strategy(), l in 0.1..10.0f64, c in -5.0..5.0f64) {
            let inputs = to_inputs(&raw);
            let shifted: Vec<_> = inputs.iter().map(|i| WeightedInput { value: i.value.map(|x| x + c), ..*i }).collect();
            let diff = (qr_med(l, &shifted, TOL) - qr_med(l, &inputs, TOL)).abs();
            prop_assert!(diff <= c.abs() + 2.0 * TOL);
        }

        #[test]
        fn qr_qtl_lipschitz_in_weights(
            raw in inputs_strategy(), l in 0.1..10.0f64, alpha in 0.05..0.95f64,
            idx in 0usize..12, dw in -3.0..3.0f64,
        ) {
            let inputs = to_inputs(&raw);
            let mut perturbed = inputs.clone();
            let k = idx % inputs.len();
            let new_w = (perturbed[k].weight + dw).max(0.0);
            let delta = (new_w - perturbed[k].weight).abs();
            perturbed[k].weight = new_w;
            let diff = (qr_qtl(alpha, l, &inputs, TOL) - qr_qtl(alpha, l, &perturbed, TOL)).abs();
            prop_assert!(diff <= l * delta + 4.0 * TOL);
        }

        #[test]
        fn br_mean_lipschitz_in_weights(
            raw in inputs_strategy(), l in 0.1..10.0f64, idx in 0usize..12, dw in -3.0..3.0f64,
        ) {
            let inputs = to_inputs(&raw);
            let mut perturbed = inputs.clone();
            let k = idx % inputs.len();
            let new_w = (perturbed[k].weight + dw).max(0.0);
            let delta = (new_w - perturbed[k].weight).abs();
            perturbed[k].weight = new_w;
            // a voter dropping to the only positive weight makes the output jump to 0
            prop_assume!(perturbed.iter().any(|i| i.weight > 0.0) && inputs.iter().any(|i| i.weight > 0.0));
            let diff = (br_mean(l, &inputs, TOL) - br_mean(l, &perturbed, TOL)).abs();
            prop_assert!(diff <= l * delta + 4.0 * TOL, "{} > {}", diff, l * delta);
        }

        #[test]
        fn outputs_finite(raw in inputs_strategy(), l in 0.01..100.0f64) {
            let inputs = to_inputs(&raw);
            prop_assert!(qr_med(l, &inputs, TOL).is_finite());
            prop_assert!(qr_dev(0.9, l, 1.0, &inputs, TOL).is_finite());
            prop_assert!(br_mean(l, &inputs, TOL).is_finite());
        }
    }
}
