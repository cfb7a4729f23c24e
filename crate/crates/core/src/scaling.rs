//! Putting user models on a common scale.
//!
//! Users rate on personal scales. Mehestan estimates for each user `u` a
//! multiplicative factor `s_u` and a translation `τ_u` such that
//! `s_u·θ_u + τ_u` is comparable across users. A small set of active, trusted
//! users (the scalers) first calibrate against each other; every other user
//! is then fitted to the scalers' scaled scores.
//!
//! After scaling, a global zero shift places the `q`-quantile of all scores at
//! 0, and standardization divides scores by a robust deviation estimate.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{EntityId, Privacy, UserId};
use crate::error::{Error, Result};
use crate::preference::{Score, UserModel};
use crate::primitives::{br_mean, qr_med, qr_qtl, qr_unc, Uncertainty, WeightedInput};

/// Quantile used by the QrUnc uncertainty estimates inside Mehestan.
pub const MEHESTAN_UNC_QUANTILE: f64 = 0.5;
/// Default deviation of the QrUnc estimates inside Mehestan.
pub const MEHESTAN_DEFAULT_DEV: f64 = 1.0;
/// Lower bound on the standardization deviation.
pub const SIGMA_FLOOR: f64 = 1e-6;

const MIN_SCALE: f64 = 1e-6;
const MIN_NORM: f64 = 1e-12;

fn default_trust_min() -> f64 {
    0.1
}

fn default_p_norm() -> f64 {
    f64::INFINITY
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MehestanParams {
    pub lipschitz: f64,
    pub min_activity: usize,
    pub n_scalers_max: usize,
    pub privacy_penalty: f64,
    pub user_comparison_lipschitz: f64,
    #[serde(
        default = "default_p_norm",
        rename = "p_norm_for_multiplicative_resilience",
        with = "p_norm_serde"
    )]
    pub p_norm: f64,
    pub error: f64,
    #[serde(default = "default_trust_min")]
    pub trust_min: f64,
}

// JSON has no infinity; the default ∞-norm is written as null.
mod p_norm_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(p: &f64, s: S) -> Result<S::Ok, S::Error> {
        if p.is_finite() {
            s.serialize_f64(*p)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl Default for MehestanParams {
    fn default() -> Self {
        MehestanParams {
            lipschitz: 1.0,
            min_activity: 1,
            n_scalers_max: 100,
            privacy_penalty: 0.5,
            user_comparison_lipschitz: 10.0,
            p_norm: f64::INFINITY,
            error: 1e-5,
            trust_min: 0.1,
        }
    }
}

impl MehestanParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, x: f64| {
            if x > 0.0 && !x.is_nan() {
                Ok(())
            } else {
                Err(Error::config(format!("Mehestan {name} must be positive, got {x}")))
            }
        };
        positive("lipschitz", self.lipschitz)?;
        positive("user_comparison_lipschitz", self.user_comparison_lipschitz)?;
        positive("error", self.error)?;
        if !(self.p_norm >= 1.0) {
            return Err(Error::config("p_norm_for_multiplicative_resilience must be at least 1"));
        }
        if !(self.privacy_penalty > 0.0 && self.privacy_penalty <= 1.0) {
            return Err(Error::config("Mehestan privacy_penalty must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.trust_min) {
            return Err(Error::config("Mehestan trust_min must lie in [0, 1]"));
        }
        Ok(())
    }

    fn penalty(&self, privacy: Option<&Privacy>) -> f64 {
        match privacy {
            Some(Privacy::Private) => self.privacy_penalty,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZeroShiftParams {
    pub zero_quantile: f64,
    pub lipschitz: f64,
    pub error: f64,
}

impl Default for ZeroShiftParams {
    fn default() -> Self {
        ZeroShiftParams {
            zero_quantile: 0.15,
            lipschitz: 0.1,
            error: 1e-5,
        }
    }
}

impl ZeroShiftParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.zero_quantile > 0.0 && self.zero_quantile < 1.0) {
            return Err(Error::config("zero_quantile must lie in (0, 1)"));
        }
        if !(self.lipschitz > 0.0) || !(self.error > 0.0) {
            return Err(Error::config("QuantileZeroShift lipschitz and error must be positive"));
        }
        Ok(())
    }
}

pub type Models = BTreeMap<UserId, UserModel>;
pub type PrivacyFlags = BTreeMap<(UserId, EntityId), Privacy>;

/// Scaling-calibration users and their scaling weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScalerSet {
    pub members: BTreeSet<UserId>,
    pub weights: BTreeMap<UserId, f64>,
}

impl ScalerSet {
    pub fn contains(&self, user: UserId) -> bool {
        self.members.contains(&user)
    }

    pub fn weight(&self, user: UserId) -> f64 {
        self.weights.get(&user).copied().unwrap_or(0.0)
    }
}

/// The `n_scalers_max` most active users among those trusted enough.
///
/// Activity is the number of distinct compared entities; ties go to the
/// smaller id.
pub fn select_scalers(models: &Models, trusts: &BTreeMap<UserId, f64>, params: &MehestanParams) -> ScalerSet {
    let mut eligible: Vec<(usize, UserId)> = models
        .iter()
        .filter(|(u, m)| {
            trusts.get(u).copied().unwrap_or(0.0) >= params.trust_min
                && m.len() >= params.min_activity.max(1)
        })
        .map(|(&u, m)| (m.len(), u))
        .collect();
    eligible.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let members: BTreeSet<UserId> = eligible
        .into_iter()
        .take(params.n_scalers_max)
        .map(|(_, u)| u)
        .collect();
    let weights = members.iter().map(|&u| (u, 1.0)).collect();
    ScalerSet { members, weights }
}

/// Pairs `(e, f)` with `e < f` whose score gap exceeds twice the facing
/// uncertainties. Pairs with an infinite uncertainty or no gap are excluded.
pub fn clearly_ordered_pairs(model: &UserModel) -> BTreeSet<(EntityId, EntityId)> {
    let scored: Vec<(EntityId, Score)> = model
        .scores
        .iter()
        .filter(|(_, s)| s.uncertainty.is_finite())
        .map(|(&e, &s)| (e, s))
        .collect();
    let mut out = BTreeSet::new();
    for (i, &(e, se)) in scored.iter().enumerate() {
        for &(f, sf) in &scored[i + 1..] {
            if se.value == sf.value {
                continue;
            }
            let (ue, uf) = (se.uncertainty, sf.uncertainty);
            if se.value >= sf.value + 2.0 * ue.left + 2.0 * uf.right
                || sf.value >= se.value + 2.0 * ue.right + 2.0 * uf.left
            {
                out.insert((e, f));
            }
        }
    }
    out
}

/// A ratio of score gaps with its asymmetric uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratio {
    pub value: f64,
    pub uncertainty: Uncertainty,
}

/// `|θ_ve - θ_vf| / |θ_ue - θ_uf|` with the uncertainty obtained by moving
/// each score within its uncertainty interval.
///
/// Both pairs must be clearly ordered; negative uncertainties are clamped.
pub fn ratio_estimate(ue: Score, uf: Score, ve: Score, vf: Score) -> Ratio {
    let gu = ue.value - uf.value;
    let gv = ve.value - vf.value;
    let s = gv.abs() / gu.abs();
    let (due, duf, dve, dvf) = (ue.uncertainty, uf.uncertainty, ve.uncertainty, vf.uncertainty);

    // extreme magnitudes of v's gap over the uncertainty box
    let (v_small, v_large) = if gv >= 0.0 {
        (gv - dve.left - dvf.right, gv + dve.right + dvf.left)
    } else {
        (-gv - dve.right - dvf.left, -gv + dve.left + dvf.right)
    };
    // and of u's gap
    let (u_small, u_large) = if gu >= 0.0 {
        (gu - due.left - duf.right, gu + due.right + duf.left)
    } else {
        (-gu - due.right - duf.left, -gu + due.left + duf.right)
    };

    let left = (s - v_small / u_large).max(0.0);
    let right = (v_large / u_small - s).max(0.0);
    Ratio {
        value: s,
        uncertainty: Uncertainty::new(left, right),
    }
}

/// Relative scale `s_uv` of `u` against `v` and its uncertainty.
///
/// `None` when the users share no clearly ordered pair.
pub fn pair_scale(
    u_model: &UserModel,
    u_pairs: &BTreeSet<(EntityId, EntityId)>,
    v_model: &UserModel,
    v_pairs: &BTreeSet<(EntityId, EntityId)>,
    anchor_weight: impl Fn(EntityId, EntityId) -> f64,
    params: &MehestanParams,
) -> Option<(f64, f64)> {
    let inputs: Vec<WeightedInput> = u_pairs
        .intersection(v_pairs)
        .map(|&(e, f)| {
            let r = ratio_estimate(
                u_model.scores[&e],
                u_model.scores[&f],
                v_model.scores[&e],
                v_model.scores[&f],
            );
            WeightedInput::new(anchor_weight(e, f), r.value - 1.0, r.uncertainty)
        })
        .collect();
    if inputs.is_empty() {
        return None;
    }
    let l = params.user_comparison_lipschitz;
    let s = 1.0 + qr_med(l, &inputs, params.error);
    let unc = qr_unc(MEHESTAN_UNC_QUANTILE, l, MEHESTAN_DEFAULT_DEV, &inputs, params.error);
    Some((s, unc))
}

/// Relative translation `τ_uv` between `v`'s (already transformed) scores and
/// `s_u·θ_u`, over the entities both scored.
pub fn pair_translation(
    u_model: &UserModel,
    s_u: f64,
    v_target: &UserModel,
    entity_weight: impl Fn(EntityId) -> f64,
    params: &MehestanParams,
) -> Option<(f64, f64)> {
    let inputs: Vec<WeightedInput> = u_model
        .scores
        .iter()
        .filter_map(|(&e, su)| {
            let sv = v_target.scores.get(&e)?;
            let value = sv.value - s_u * su.value;
            // v's left error raises the gap's left error, u's left error its right one
            let unc = sv.uncertainty + su.uncertainty.scaled(s_u).swapped();
            Some(WeightedInput::new(entity_weight(e), value, unc))
        })
        .collect();
    if inputs.is_empty() {
        return None;
    }
    let t = qr_med(1.0, &inputs, params.error);
    let unc = qr_unc(MEHESTAN_UNC_QUANTILE, 1.0, MEHESTAN_DEFAULT_DEV, &inputs, params.error);
    Some((t, unc))
}

/// Affine map `θ ↦ s·θ + τ` with uncertainties on `s` and `τ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub s: f64,
    pub s_uncertainty: Uncertainty,
    pub tau: f64,
    pub tau_uncertainty: Uncertainty,
}

impl AffineMap {
    pub const IDENTITY: AffineMap = AffineMap {
        s: 1.0,
        s_uncertainty: Uncertainty::ZERO,
        tau: 0.0,
        tau_uncertainty: Uncertainty::ZERO,
    };

    /// Pure multiplication by `s`, without uncertainty on the factor.
    pub fn scale_only(s: f64) -> AffineMap {
        AffineMap {
            s,
            ..AffineMap::IDENTITY
        }
    }
}

/// Applies `map` to every score of `model`.
///
/// The uncertainty of `s·θ + τ` is `s·Δθ + Δτ + |θ|·Δs`, with the two sides
/// of `Δs` swapped when `θ < 0`.
pub fn apply_scaling(model: &UserModel, map: &AffineMap) -> UserModel {
    let scores = model
        .scores
        .iter()
        .map(|(&e, sc)| {
            let from_s = if sc.value >= 0.0 {
                map.s_uncertainty.scaled(sc.value)
            } else {
                map.s_uncertainty.swapped().scaled(-sc.value)
            };
            let uncertainty = sc.uncertainty.scaled(map.s) + map.tau_uncertainty + from_s;
            (
                e,
                Score {
                    value: map.s * sc.value + map.tau,
                    uncertainty,
                },
            )
        })
        .collect();
    UserModel { scores }
}

/// `‖θ_u‖_p` over raw scores, `p = ∞` allowed.
pub fn score_norm(model: &UserModel, p: f64) -> f64 {
    let abs = model.scores.values().map(|s| s.value.abs());
    if p.is_infinite() {
        abs.fold(0.0, f64::max)
    } else {
        abs.map(|x| x.powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MehestanOutput {
    pub scalers: ScalerSet,
    pub maps: BTreeMap<UserId, AffineMap>,
    pub scaled: Models,
}

struct Prepared<'a> {
    model: &'a UserModel,
    pairs: BTreeSet<(EntityId, EntityId)>,
}

/// Mehestan scaling of every user model.
pub fn mehestan(
    models: &Models,
    trusts: &BTreeMap<UserId, f64>,
    privacy: &PrivacyFlags,
    params: &MehestanParams,
) -> MehestanOutput {
    let scalers = select_scalers(models, trusts, params);
    let pen = |u: UserId, e: EntityId| params.penalty(privacy.get(&(u, e)));
    let tol = params.error;

    let scaler_list: Vec<UserId> = scalers.members.iter().copied().collect();
    let prepared: BTreeMap<UserId, Prepared> = scaler_list
        .par_iter()
        .map(|&u| {
            let model = &models[&u];
            (
                u,
                Prepared {
                    model,
                    pairs: clearly_ordered_pairs(model),
                },
            )
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect();

    // scalers, multiplicative part
    let scaler_s: BTreeMap<UserId, (f64, f64)> = scaler_list
        .par_iter()
        .map(|&u| {
            let pu = &prepared[&u];
            let mut inputs = vec![WeightedInput::exact(1.0, 0.0)];
            for &v in &scaler_list {
                if v == u {
                    continue;
                }
                let pv = &prepared[&v];
                let weight = |e: EntityId, f: EntityId| {
                    pen(u, e).min(pen(u, f)).min(pen(v, e)).min(pen(v, f))
                };
                if let Some((s_uv, unc)) = pair_scale(pu.model, &pu.pairs, pv.model, &pv.pairs, weight, params) {
                    inputs.push(WeightedInput::new(scalers.weight(v), s_uv - 1.0, Uncertainty::symmetric(unc)));
                }
            }
            let l = params.lipschitz / (8.0 * score_norm(pu.model, params.p_norm).max(MIN_NORM));
            let s = (1.0 + qr_med(l, &inputs, tol)).max(MIN_SCALE);
            let unc = qr_unc(MEHESTAN_UNC_QUANTILE, l, MEHESTAN_DEFAULT_DEV, &inputs, tol);
            (u, (s, unc))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect();

    // scalers, translation against the other scalers' s_v·θ_v
    let prescaled: BTreeMap<UserId, UserModel> = scaler_list
        .iter()
        .map(|&v| (v, apply_scaling(&models[&v], &AffineMap::scale_only(scaler_s[&v].0))))
        .collect();
    let mut maps: BTreeMap<UserId, AffineMap> = scaler_list
        .par_iter()
        .map(|&u| {
            let (s_u, s_unc) = scaler_s[&u];
            let pu = &prepared[&u];
            let mut inputs = vec![WeightedInput::exact(1.0, 0.0)];
            for &v in &scaler_list {
                if v == u || !comparable(&pu.pairs, &prepared[&v].pairs) {
                    continue;
                }
                let weight = |e: EntityId| pen(u, e).min(pen(v, e));
                if let Some((t, unc)) = pair_translation(pu.model, s_u, &prescaled[&v], weight, params) {
                    inputs.push(WeightedInput::new(scalers.weight(v), t, Uncertainty::symmetric(unc)));
                }
            }
            let l = params.lipschitz / 8.0;
            let tau = qr_med(l, &inputs, tol);
            let tau_unc = qr_unc(MEHESTAN_UNC_QUANTILE, l, MEHESTAN_DEFAULT_DEV, &inputs, tol);
            (
                u,
                AffineMap {
                    s: s_u,
                    s_uncertainty: Uncertainty::symmetric(s_unc),
                    tau,
                    tau_uncertainty: Uncertainty::symmetric(tau_unc),
                },
            )
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect();

    // non-scalers fit the scalers' scaled scores
    let scaled_models: BTreeMap<UserId, UserModel> = scaler_list
        .iter()
        .map(|&v| (v, apply_scaling(&models[&v], &maps[&v])))
        .collect();
    let scaled_pairs: BTreeMap<UserId, BTreeSet<(EntityId, EntityId)>> = scaled_models
        .iter()
        .map(|(&v, m)| (v, clearly_ordered_pairs(m)))
        .collect();

    let others: Vec<UserId> = models.keys().copied().filter(|u| !scalers.contains(*u)).collect();
    let other_maps: Vec<(UserId, AffineMap)> = others
        .par_iter()
        .map(|&u| {
            let model = &models[&u];
            let pairs = clearly_ordered_pairs(model);
            let mut s_inputs = Vec::new();
            let mut comparable_scalers = Vec::new();
            for &v in &scaler_list {
                let weight = |e: EntityId, f: EntityId| {
                    pen(u, e).min(pen(u, f)).min(pen(v, e)).min(pen(v, f))
                };
                if let Some((s_uv, unc)) =
                    pair_scale(model, &pairs, &scaled_models[&v], &scaled_pairs[&v], weight, params)
                {
                    s_inputs.push(WeightedInput::new(scalers.weight(v), s_uv - 1.0, Uncertainty::symmetric(unc)));
                    comparable_scalers.push(v);
                }
            }
            if s_inputs.is_empty() {
                return (u, AffineMap::IDENTITY);
            }
            let l = params.lipschitz / (8.0 * score_norm(model, params.p_norm).max(MIN_NORM));
            let s = (1.0 + br_mean(l, &s_inputs, tol)).max(MIN_SCALE);
            let s_unc = qr_unc(MEHESTAN_UNC_QUANTILE, l, MEHESTAN_DEFAULT_DEV, &s_inputs, tol);

            let mut t_inputs = Vec::new();
            for &v in &comparable_scalers {
                let weight = |e: EntityId| pen(u, e).min(pen(v, e));
                if let Some((t, unc)) = pair_translation(model, s, &scaled_models[&v], weight, params) {
                    t_inputs.push(WeightedInput::new(scalers.weight(v), t, Uncertainty::symmetric(unc)));
                }
            }
            let l = params.lipschitz / 8.0;
            let tau = br_mean(l, &t_inputs, tol);
            let tau_unc = if t_inputs.is_empty() {
                0.0
            } else {
                qr_unc(MEHESTAN_UNC_QUANTILE, l, MEHESTAN_DEFAULT_DEV, &t_inputs, tol)
            };
            (
                u,
                AffineMap {
                    s,
                    s_uncertainty: Uncertainty::symmetric(s_unc),
                    tau,
                    tau_uncertainty: Uncertainty::symmetric(tau_unc),
                },
            )
        })
        .collect();
    maps.extend(other_maps);

    let scaled = models
        .iter()
        .map(|(&u, m)| (u, apply_scaling(m, &maps[&u])))
        .collect();
    MehestanOutput { scalers, maps, scaled }
}

fn comparable(a: &BTreeSet<(EntityId, EntityId)>, b: &BTreeSet<(EntityId, EntityId)>) -> bool {
    a.intersection(b).next().is_some()
}

/// Per-score weight `penalty / n_u`, `n_u` being the user's entity count.
fn activity_weights(models: &Models, penalty: impl Fn(UserId, EntityId) -> f64) -> Vec<WeightedInput> {
    let mut out = Vec::new();
    for (&u, m) in models {
        let n = m.len() as f64;
        for (&e, s) in &m.scores {
            out.push(WeightedInput::new(penalty(u, e) / n, s.value, s.uncertainty));
        }
    }
    out
}

/// The global shift `QrQtl_q` of all scores, weighted by
/// `penalty(u, e) / n_u`.
pub fn zero_shift_amount(
    models: &Models,
    penalty: impl Fn(UserId, EntityId) -> f64,
    params: &ZeroShiftParams,
) -> f64 {
    let inputs = activity_weights(models, penalty);
    qr_qtl(params.zero_quantile, params.lipschitz, &inputs, params.error)
}

/// Subtracts `shift` from every score; uncertainties are unchanged.
pub fn shift_models(models: &Models, shift: f64) -> Models {
    models
        .iter()
        .map(|(&u, m)| {
            let scores = m
                .scores
                .iter()
                .map(|(&e, s)| {
                    (
                        e,
                        Score {
                            value: s.value - shift,
                            ..*s
                        },
                    )
                })
                .collect();
            (u, UserModel { scores })
        })
        .collect()
}

/// Zero shift of all models; returns the shift and the shifted models.
pub fn quantile_zero_shift(
    models: &Models,
    penalty: impl Fn(UserId, EntityId) -> f64,
    params: &ZeroShiftParams,
) -> (f64, Models) {
    let shift = zero_shift_amount(models, penalty, params);
    (shift, shift_models(models, shift))
}

/// Robust deviation `σ` of all scores around their regularized median,
/// floored at [`SIGMA_FLOOR`].
pub fn standard_deviation_estimate(models: &Models, dev_quantile: f64, lipschitz: f64, tol: f64) -> f64 {
    let inputs = activity_weights(models, |_, _| 1.0);
    if inputs.is_empty() {
        return SIGMA_FLOOR;
    }
    let median = qr_med(lipschitz, &inputs, tol);
    let deviations: Vec<WeightedInput> = inputs
        .iter()
        .map(|i| {
            let x = i.value.expect("model scores are present");
            let unc = if x >= median {
                i.uncertainty
            } else {
                i.uncertainty.swapped()
            };
            WeightedInput::new(i.weight, (x - median).abs(), unc)
        })
        .collect();
    qr_qtl(dev_quantile, lipschitz, &deviations, tol).max(SIGMA_FLOOR)
}

/// Divides every score and uncertainty by the robust deviation `σ`.
pub fn standardize(models: &Models, dev_quantile: f64, lipschitz: f64, tol: f64) -> (f64, Models) {
    let sigma = standard_deviation_estimate(models, dev_quantile, lipschitz, tol);
    let scale = 1.0 / sigma;
    let out = models
        .iter()
        .map(|(&u, m)| {
            let scores = m
                .scores
                .iter()
                .map(|(&e, s)| {
                    (
                        e,
                        Score {
                            value: s.value * scale,
                            uncertainty: s.uncertainty.scaled(scale),
                        },
                    )
                })
                .collect();
            (u, UserModel { scores })
        })
        .collect();
    (sigma, out)
}
