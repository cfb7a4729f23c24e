//! Per-user raw scores from pairwise comparisons.
//!
//! Comparisons follow the generalized Bradley-Terry model with a uniform
//! root law, whose cumulant generating function is `Φ(θ) = ln(sinh θ / θ)`.
//! A user's raw scores minimize
//!
//! ```text
//! (α/2)·‖θ‖² + Σ_(e,f,r) [ Φ(θ_e - θ_f) + r·(θ_e - θ_f)/R_max ]
//! ```
//!
//! which is strongly convex. A negative `r` means `e` is preferred, and
//! pushes `θ_e` above `θ_f`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Comparison, Dataset, EntityId, UserId};
use crate::error::{Error, Result};
use crate::primitives::Uncertainty;
use crate::solver::brent_root;

const TAYLOR_SWITCH: f64 = 1e-2;
const MAX_NEWTON_STEPS: usize = 200;
const UNC_START: f64 = 1e-3;
const UNC_MAX: f64 = 1e6;
const UNC_TOL: f64 = 1e-10;

/// `Φ(θ) = ln(sinh θ / θ)`, with `Φ(0) = 0`.
pub fn cgf_uniform(theta: f64) -> f64 {
    let a = theta.abs();
    if a < TAYLOR_SWITCH {
        let t2 = theta * theta;
        t2 / 6.0 - t2 * t2 / 180.0
    } else if a < 1.0 {
        (theta.sinh() / theta).ln()
    } else {
        // sinh a = e^a (1 - e^{-2a}) / 2, safe for large a
        a + (-(-2.0 * a).exp()).ln_1p() - std::f64::consts::LN_2 - a.ln()
    }
}

/// `Φ'(θ) = coth θ - 1/θ`.
pub fn cgf_uniform_derivative(theta: f64) -> f64 {
    if theta.abs() < TAYLOR_SWITCH {
        theta / 3.0 - theta.powi(3) / 45.0
    } else {
        1.0 / theta.tanh() - 1.0 / theta
    }
}

/// `Φ''(θ) = 1/θ² - 1/sinh²θ`.
pub fn cgf_uniform_second_derivative(theta: f64) -> f64 {
    if theta.abs() < TAYLOR_SWITCH {
        1.0 / 3.0 - theta * theta / 15.0
    } else {
        let s = theta.sinh();
        1.0 / (theta * theta) - 1.0 / (s * s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub prior_weight: f64,
    pub comparison_max: f64,
    pub convergence_error: f64,
    pub cgf_error: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            prior_weight: 1.0 / 49.0,
            comparison_max: 10.0,
            convergence_error: 1e-5,
            cgf_error: 1e-5,
        }
    }
}

impl GbtParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.prior_weight > 0.0 && self.prior_weight.is_finite()) {
            return Err(Error::config("prior weight must be positive"));
        }
        if !(self.comparison_max > 0.0 && self.comparison_max.is_finite()) {
            return Err(Error::config("comparison_max must be positive"));
        }
        if !(self.convergence_error > 0.0) || !(self.cgf_error > 0.0) {
            return Err(Error::config("GBT tolerances must be positive"));
        }
        Ok(())
    }
}

/// A scored entity with its asymmetric uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub value: f64,
    pub uncertainty: Uncertainty,
}

/// One user's scores, defined exactly on the entities they compared.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UserModel {
    pub scores: BTreeMap<EntityId, Score>,
}

impl UserModel {
    pub fn get(&self, entity: EntityId) -> Option<&Score> {
        self.scores.get(&entity)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Comparisons re-indexed over the user's entities.
struct Problem {
    entities: Vec<EntityId>,
    pairs: Vec<(usize, usize, f64)>,
    prior_weight: f64,
}

impl Problem {
    fn new(comparisons: &[Comparison], comparison_max: f64, prior_weight: f64) -> Self {
        let mut entities: Vec<EntityId> = comparisons
            .iter()
            .flat_map(|c| [c.entity_a, c.entity_b])
            .collect();
        entities.sort_unstable();
        entities.dedup();
        let index = |e: EntityId| entities.binary_search(&e).unwrap();
        let pairs = comparisons
            .iter()
            .map(|c| (index(c.entity_a), index(c.entity_b), c.value / comparison_max))
            .collect();
        Problem {
            entities,
            pairs,
            prior_weight,
        }
    }

    fn nll(&self, theta: &[f64]) -> f64 {
        self.pairs
            .iter()
            .map(|&(i, j, r)| {
                let d = theta[i] - theta[j];
                cgf_uniform(d) + r * d
            })
            .sum()
    }

    fn loss(&self, theta: &[f64]) -> f64 {
        let prior: f64 = theta.iter().map(|t| t * t).sum();
        0.5 * self.prior_weight * prior + self.nll(theta)
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut g: Vec<f64> = theta.iter().map(|t| self.prior_weight * t).collect();
        for &(i, j, r) in &self.pairs {
            let d = cgf_uniform_derivative(theta[i] - theta[j]) + r;
            g[i] += d;
            g[j] -= d;
        }
        g
    }

    fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        let n = theta.len();
        let mut h = DMatrix::from_diagonal_element(n, n, self.prior_weight);
        for &(i, j, _) in &self.pairs {
            let c = cgf_uniform_second_derivative(theta[i] - theta[j]);
            h[(i, i)] += c;
            h[(j, j)] += c;
            h[(i, j)] -= c;
            h[(j, i)] -= c;
        }
        h
    }

    /// Damped Newton from `start` until `‖∇‖∞ ≤ tol`.
    fn minimize(&self, mut theta: Vec<f64>, tol: f64) -> Vec<f64> {
        let mut loss = self.loss(&theta);
        for _ in 0..MAX_NEWTON_STEPS {
            let g = self.gradient(&theta);
            if g.iter().all(|x| x.abs() <= tol) {
                break;
            }
            let h = self.hessian(&theta);
            let grad = DVector::from_vec(g);
            // H ⪰ α·I, so Cholesky only fails on numerical breakdown
            let step = match h.cholesky() {
                Some(chol) => -chol.solve(&grad),
                None => -grad.clone() / self.prior_weight,
            };
            let slope = grad.dot(&step);
            let mut t = 1.0;
            loop {
                let candidate: Vec<f64> = theta.iter().zip(step.iter()).map(|(x, s)| x + t * s).collect();
                let candidate_loss = self.loss(&candidate);
                if candidate_loss <= loss + 1e-4 * t * slope || t < 1e-12 {
                    theta = candidate;
                    loss = candidate_loss;
                    break;
                }
                t *= 0.5;
            }
        }
        theta
    }

    /// Smallest `δ ≥ 0` with `NLL(θ + sign·δ·e_k) = NLL(θ) + 1`.
    fn uncertainty(&self, theta: &[f64], k: usize, sign: f64) -> f64 {
        let involved: Vec<(usize, usize, f64)> = self
            .pairs
            .iter()
            .copied()
            .filter(|&(i, j, _)| i == k || j == k)
            .collect();
        let slice = |delta: f64| -> f64 {
            involved
                .iter()
                .map(|&(i, j, r)| {
                    let d0 = theta[i] - theta[j];
                    let shift = if i == k { sign * delta } else { -sign * delta };
                    let d = d0 + shift;
                    (cgf_uniform(d) - cgf_uniform(d0)) + r * shift
                })
                .sum::<f64>()
                - 1.0
        };
        let mut lo = 0.0;
        let mut hi = UNC_START;
        while slice(hi) < 0.0 {
            if hi >= UNC_MAX {
                return f64::INFINITY;
            }
            lo = hi;
            hi *= 2.0;
        }
        brent_root(slice, lo, hi, UNC_TOL).unwrap_or(hi)
    }
}

fn as_map(entities: &[EntityId], theta: &[f64]) -> BTreeMap<EntityId, f64> {
    entities.iter().copied().zip(theta.iter().copied()).collect()
}

/// Prior-regularized GBT loss of one user's comparisons.
///
/// Entities missing from `theta` count as 0.
pub fn gbt_loss(
    theta: &BTreeMap<EntityId, f64>,
    comparisons: &[Comparison],
    comparison_max: f64,
    prior_weight: f64,
) -> f64 {
    let p = Problem::new(comparisons, comparison_max, prior_weight);
    let x: Vec<f64> = p.entities.iter().map(|e| theta.get(e).copied().unwrap_or(0.0)).collect();
    p.loss(&x)
}

/// Gradient of [`gbt_loss`] with respect to each compared entity.
pub fn gbt_gradient(
    theta: &BTreeMap<EntityId, f64>,
    comparisons: &[Comparison],
    comparison_max: f64,
    prior_weight: f64,
) -> BTreeMap<EntityId, f64> {
    let p = Problem::new(comparisons, comparison_max, prior_weight);
    let x: Vec<f64> = p.entities.iter().map(|e| theta.get(e).copied().unwrap_or(0.0)).collect();
    as_map(&p.entities, &p.gradient(&x))
}

/// Negative log-likelihood without the prior.
pub fn gbt_nll(theta: &BTreeMap<EntityId, f64>, comparisons: &[Comparison], comparison_max: f64) -> f64 {
    let p = Problem::new(comparisons, comparison_max, 0.0);
    let x: Vec<f64> = p.entities.iter().map(|e| theta.get(e).copied().unwrap_or(0.0)).collect();
    p.nll(&x)
}

/// Minimizer of [`gbt_loss`], starting from 0.
pub fn fit_raw_scores(comparisons: &[Comparison], params: &GbtParams) -> BTreeMap<EntityId, f64> {
    fit_raw_scores_from(comparisons, params, &BTreeMap::new())
}

/// Minimizer of [`gbt_loss`], starting from `start` (missing entries at 0).
pub fn fit_raw_scores_from(
    comparisons: &[Comparison],
    params: &GbtParams,
    start: &BTreeMap<EntityId, f64>,
) -> BTreeMap<EntityId, f64> {
    let p = Problem::new(comparisons, params.comparison_max, params.prior_weight);
    let x0 = p.entities.iter().map(|e| start.get(e).copied().unwrap_or(0.0)).collect();
    let theta = p.minimize(x0, params.convergence_error);
    as_map(&p.entities, &theta)
}

/// Left and right uncertainty of every fitted score.
///
/// The left (right) uncertainty is the decrease (increase) of `θ_e` that
/// raises the negative log-likelihood by one; it is infinite when no such
/// move below `10⁶` exists.
pub fn estimate_uncertainties(
    scores: &BTreeMap<EntityId, f64>,
    comparisons: &[Comparison],
    comparison_max: f64,
) -> BTreeMap<EntityId, Uncertainty> {
    let p = Problem::new(comparisons, comparison_max, 0.0);
    let theta: Vec<f64> = p.entities.iter().map(|e| scores.get(e).copied().unwrap_or(0.0)).collect();
    p.entities
        .iter()
        .enumerate()
        .map(|(k, &e)| {
            let left = p.uncertainty(&theta, k, -1.0);
            let right = p.uncertainty(&theta, k, 1.0);
            (e, Uncertainty::new(left, right))
        })
        .collect()
}

/// Raw scores and uncertainties of one user.
pub fn learn_user_model(comparisons: &[Comparison], params: &GbtParams) -> UserModel {
    let raw = fit_raw_scores(comparisons, params);
    let unc = estimate_uncertainties(&raw, comparisons, params.comparison_max);
    UserModel {
        scores: raw
            .iter()
            .map(|(&e, &value)| {
                (
                    e,
                    Score {
                        value,
                        uncertainty: unc[&e],
                    },
                )
            })
            .collect(),
    }
}

/// Fits every user with at least one comparison, in parallel.
pub fn learn_all(dataset: &Dataset, params: &GbtParams) -> BTreeMap<UserId, UserModel> {
    let by_user: Vec<(UserId, Vec<Comparison>)> = dataset.comparisons_by_user().into_iter().collect();
    by_user
        .into_par_iter()
        .map(|(u, comparisons)| (u, learn_user_model(&comparisons, params)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Privacy;
    use proptest::prelude::*;

    fn cmp(a: u32, b: u32, r: f64) -> Comparison {
        Comparison {
            user: UserId(0),
            entity_a: EntityId(a),
            entity_b: EntityId(b),
            value: r,
            privacy: Privacy::Public,
        }
    }

    fn tight() -> GbtParams {
        GbtParams {
            convergence_error: 1e-10,
            ..GbtParams::default()
        }
    }

    #[test]
    fn cgf_values() {
        assert_eq!(cgf_uniform(0.0), 0.0);
        assert_eq!(cgf_uniform_derivative(0.0), 0.0);
        assert!((cgf_uniform(1.0) - 1.0_f64.sinh().ln()).abs() < 1e-12);
        assert!((cgf_uniform(1.0) - 0.16144).abs() < 1e-5);
        // stable branch agrees with the direct formula where both are accurate
        for t in [1.5, 3.0, -7.0, 20.0] {
            assert!((cgf_uniform(t) - (f64::sinh(t) / t).ln()).abs() < 1e-12);
        }
        assert!(cgf_uniform(1000.0).is_finite());
        assert!((cgf_uniform_derivative(1000.0) - (1.0 - 1e-3)).abs() < 1e-12);
    }

    #[test]
    fn cgf_branches_are_continuous() {
        for t in [TAYLOR_SWITCH, 1.0] {
            let below = t * (1.0 - 1e-12);
            assert!((cgf_uniform(below) - cgf_uniform(t)).abs() < 1e-12);
            assert!((cgf_uniform_derivative(below) - cgf_uniform_derivative(t)).abs() < 1e-10);
            assert!((cgf_uniform_second_derivative(below) - cgf_uniform_second_derivative(t)).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn cgf_derivatives_match_finite_differences(t in -30.0..30.0f64) {
            let h = 1e-5;
            let fd1 = (cgf_uniform(t + h) - cgf_uniform(t - h)) / (2.0 * h);
            let d1 = cgf_uniform_derivative(t);
            prop_assert!((fd1 - d1).abs() <= 1e-6 * d1.abs().max(1e-2));
            let fd2 = (cgf_uniform_derivative(t + h) - cgf_uniform_derivative(t - h)) / (2.0 * h);
            let d2 = cgf_uniform_second_derivative(t);
            prop_assert!((fd2 - d2).abs() <= 1e-5 * d2.abs().max(1e-2));
        }
    }

    #[test]
    fn zero_scores_zero_loss() {
        let data = [cmp(0, 1, 7.0), cmp(1, 2, -3.0)];
        assert_eq!(gbt_loss(&BTreeMap::new(), &data, 10.0, 0.02), 0.0);
    }

    #[test]
    fn neutral_comparison_fits_zero() {
        let fit = fit_raw_scores(&[cmp(0, 1, 0.0)], &tight());
        assert!(fit.values().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn strong_preference_is_antisymmetric() {
        let fit = fit_raw_scores(&[cmp(0, 1, -10.0)], &tight());
        let (a, b) = (fit[&EntityId(0)], fit[&EntityId(1)]);
        assert!(a > 0.0 && b < 0.0);
        assert!((a + b).abs() < 1e-9);
        // 2-D grid oracle on the symmetric line θ = (x, -x)
        let p = tight();
        let loss = |x: f64| {
            let m = BTreeMap::from([(EntityId(0), x), (EntityId(1), -x)]);
            gbt_loss(&m, &[cmp(0, 1, -10.0)], 10.0, p.prior_weight)
        };
        let best = (0..200_000)
            .map(|i| i as f64 * 1e-4)
            .min_by(|x, y| loss(*x).total_cmp(&loss(*y)))
            .unwrap();
        assert!((a - best).abs() < 2e-4, "{a} vs {best}");
    }

    #[test]
    fn single_neutral_comparison_has_symmetric_uncertainty() {
        let data = [cmp(0, 1, 0.0)];
        let fit = fit_raw_scores(&data, &tight());
        let unc = estimate_uncertainties(&fit, &data, 10.0);
        for u in unc.values() {
            assert!(u.is_finite());
            assert!((u.left - u.right).abs() < 1e-8);
        }
        // dense scan for the first crossing of the +1 level
        let nll = |d: f64| cgf_uniform(d);
        let scan = (1..2_000_000)
            .map(|i| i as f64 * 1e-5)
            .find(|&d| nll(d) >= 1.0)
            .unwrap();
        assert!((unc[&EntityId(0)].left - scan).abs() < 2e-5);
    }

    #[test]
    fn extreme_comparison_has_infinite_side() {
        // with r = -R_max the NLL keeps decreasing as θ_0 grows
        let data = [cmp(0, 1, -10.0)];
        let fit = fit_raw_scores(&data, &tight());
        let unc = estimate_uncertainties(&fit, &data, 10.0);
        assert!(unc[&EntityId(0)].right.is_infinite());
        assert!(unc[&EntityId(0)].left.is_finite());
        assert!(unc[&EntityId(1)].left.is_infinite());
    }

    #[test]
    fn uncertainty_residual() {
        let data = [cmp(0, 1, -4.0), cmp(1, 2, 2.0), cmp(0, 2, -7.0), cmp(2, 3, 1.0)];
        let fit = fit_raw_scores(&data, &tight());
        let unc = estimate_uncertainties(&fit, &data, 10.0);
        let base = gbt_nll(&fit, &data, 10.0);
        for (e, u) in &unc {
            for (delta, sign) in [(u.left, -1.0), (u.right, 1.0)] {
                if delta.is_finite() {
                    let mut moved = fit.clone();
                    *moved.get_mut(e).unwrap() += sign * delta;
                    assert!((gbt_nll(&moved, &data, 10.0) - base - 1.0).abs() < 1e-4);
                }
            }
        }
    }

    fn random_comparisons() -> impl Strategy<Value = Vec<Comparison>> {
        prop::collection::vec((0u32..5, 1u32..5, -10.0..10.0f64), 1..12).prop_map(|v| {
            v.into_iter()
                .map(|(a, off, r)| cmp(a, (a + off) % 5, r).normalized())
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn gradient_matches_finite_differences(data in random_comparisons(), seed in prop::collection::vec(-3.0..3.0f64, 5)) {
            let theta: BTreeMap<EntityId, f64> = (0..5).map(|i| (EntityId(i), seed[i as usize])).collect();
            let grad = gbt_gradient(&theta, &data, 10.0, 0.02);
            let h = 1e-6;
            for (e, g) in grad {
                let mut plus = theta.clone();
                let mut minus = theta.clone();
                *plus.get_mut(&e).unwrap() += h;
                *minus.get_mut(&e).unwrap() -= h;
                let fd = (gbt_loss(&plus, &data, 10.0, 0.02) - gbt_loss(&minus, &data, 10.0, 0.02)) / (2.0 * h);
                prop_assert!((fd - g).abs() <= 1e-4 * g.abs().max(1e-2));
            }
        }

        #[test]
        fn fit_is_unique(data in random_comparisons(), seed in prop::collection::vec(-20.0..20.0f64, 5)) {
            let p = tight();
            let a = fit_raw_scores(&data, &p);
            let start: BTreeMap<EntityId, f64> = (0..5).map(|i| (EntityId(i), seed[i as usize])).collect();
            let b = fit_raw_scores_from(&data, &p, &start);
            for (e, x) in &a {
                prop_assert!((x - b[e]).abs() < 1e-6);
            }
        }

        #[test]
        fn negating_comparisons_negates_scores(data in random_comparisons()) {
            let p = tight();
            let a = fit_raw_scores(&data, &p);
            let flipped: Vec<Comparison> = data.iter().map(|c| Comparison { value: -c.value, ..*c }).collect();
            let b = fit_raw_scores(&flipped, &p);
            for (e, x) in &a {
                prop_assert!((x + b[e]).abs() < 1e-7);
            }
        }

        #[test]
        fn favoring_an_entity_never_lowers_it(data in random_comparisons(), pick in 0usize..12, bump in 0.0..10.0f64) {
            let p = tight();
            let k = pick % data.len();
            let before = fit_raw_scores(&data, &p);
            let mut changed = data.clone();
            // lowering r favors entity_a
            changed[k].value = (changed[k].value - bump).max(-10.0);
            let after = fit_raw_scores(&changed, &p);
            let e = data[k].entity_a;
            prop_assert!(after[&e] >= before[&e] - 1e-7);
        }
    }

    #[test]
    fn disconnected_components_are_independent() {
        let p = tight();
        let first = [cmp(0, 1, -3.0), cmp(1, 2, 5.0)];
        let mut both = first.to_vec();
        both.push(cmp(7, 8, 9.0));
        let a = fit_raw_scores(&first, &p);
        let b = fit_raw_scores(&both, &p);
        for (e, x) in &a {
            assert!((x - b[e]).abs() < 1e-9);
        }
    }
}
