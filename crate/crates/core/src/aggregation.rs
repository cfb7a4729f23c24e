//! Global scores and their displayed values.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_csv, EntityId, UserId};
use crate::error::{Error, Result};
use crate::primitives::{qr_qtl, WeightedInput};
use crate::scaling::Models;
use crate::voting::VotingRightsMatrix;

fn default_quantile() -> f64 {
    0.2
}

/// Standardization followed by a regularized quantile per entity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregationParams {
    pub dev_quantile: f64,
    pub lipschitz: f64,
    pub error: f64,
    #[serde(default = "default_quantile")]
    pub quantile: f64,
}

impl Default for AggregationParams {
    fn default() -> Self {
        AggregationParams {
            dev_quantile: 0.9,
            lipschitz: 0.1,
            error: 1e-5,
            quantile: 0.2,
        }
    }
}

impl AggregationParams {
    pub fn validate(&self) -> Result<()> {
        for (name, q) in [("dev_quantile", self.dev_quantile), ("quantile", self.quantile)] {
            if !(q > 0.0 && q < 1.0) {
                return Err(Error::config(format!("aggregation {name} must lie in (0, 1)")));
            }
        }
        if !(self.lipschitz > 0.0) || !(self.error > 0.0) {
            return Err(Error::config("aggregation lipschitz and error must be positive"));
        }
        Ok(())
    }
}

/// `QrQtl_{α,L}` of the raters' standardized scores on one entity.
pub fn aggregate_entity(inputs: &[WeightedInput], alpha: f64, lipschitz: f64, tol: f64) -> f64 {
    qr_qtl(alpha, lipschitz, inputs, tol)
}

/// `x ↦ score_max·x / √(1 + x²)`, an increasing bijection onto
/// `(-score_max, score_max)`.
pub fn squash(x: f64, score_max: f64) -> f64 {
    if x.is_infinite() {
        return score_max.copysign(x);
    }
    // x / hypot keeps |result| < 1 without overflow for huge x
    score_max * (x / x.hypot(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntityScore {
    pub rho: f64,
    pub rho_display: f64,
    pub n_raters: usize,
    pub total_voting_right: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserScore {
    pub score_standardized: f64,
    pub display: f64,
    pub unc_left: f64,
    pub unc_right: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GlobalScores {
    pub entities: BTreeMap<EntityId, EntityScore>,
    pub users: BTreeMap<(UserId, EntityId), UserScore>,
}

impl GlobalScores {
    pub fn rho(&self) -> BTreeMap<EntityId, f64> {
        self.entities.iter().map(|(&e, s)| (e, s.rho)).collect()
    }

    pub fn write_entities_csv(&self, path: &Path) -> Result<()> {
        write_csv(
            path,
            &["entity", "rho", "rho_display", "n_raters", "total_voting_right"],
            self.entities
                .iter()
                .map(|(e, s)| (e, s.rho, s.rho_display, s.n_raters, s.total_voting_right)),
        )
    }

    pub fn write_users_csv(&self, path: &Path) -> Result<()> {
        write_csv(
            path,
            &["user", "entity", "score_standardized", "display", "unc_left", "unc_right"],
            self.users
                .iter()
                .map(|((u, e), s)| (u, e, s.score_standardized, s.display, s.unc_left, s.unc_right)),
        )
    }
}

/// Aggregates standardized models into `ρ_e` for every entity in `entities`.
///
/// Entities without raters get `ρ_e = 0`.
pub fn aggregate(
    standardized: &Models,
    rights: &VotingRightsMatrix,
    entities: impl IntoIterator<Item = EntityId>,
    params: &AggregationParams,
) -> BTreeMap<EntityId, (f64, usize, f64)> {
    let mut per_entity: BTreeMap<EntityId, Vec<WeightedInput>> =
        entities.into_iter().map(|e| (e, Vec::new())).collect();
    for (&u, model) in standardized {
        for (&e, s) in &model.scores {
            per_entity
                .entry(e)
                .or_default()
                .push(WeightedInput::new(rights.get(u, e), s.value, s.uncertainty));
        }
    }
    per_entity
        .into_par_iter()
        .map(|(e, inputs)| {
            let rho = aggregate_entity(&inputs, params.quantile, params.lipschitz, params.error);
            let total: f64 = inputs.iter().map(|i| i.weight).sum();
            (e, (rho, inputs.len(), total))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// Squashes global and user scores for display.
pub fn postprocess(
    aggregated: &BTreeMap<EntityId, (f64, usize, f64)>,
    standardized: &Models,
    score_max: f64,
) -> GlobalScores {
    let entities = aggregated
        .iter()
        .map(|(&e, &(rho, n_raters, total_voting_right))| {
            (
                e,
                EntityScore {
                    rho,
                    rho_display: squash(rho, score_max),
                    n_raters,
                    total_voting_right,
                },
            )
        })
        .collect();
    let users = standardized
        .iter()
        .flat_map(|(&u, m)| {
            m.scores.iter().map(move |(&e, s)| {
                (
                    (u, e),
                    UserScore {
                        score_standardized: s.value,
                        display: squash(s.value, score_max),
                        unc_left: s.uncertainty.left,
                        unc_right: s.uncertainty.right,
                    },
                )
            })
        })
        .collect();
    GlobalScores { entities, users }
}
