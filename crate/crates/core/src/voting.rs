//! Affine-overtrust voting rights.
//!
//! Each rater of an entity gets at least a per-entity minimal voting right
//! `w_min`, chosen so that the extra weight handed to under-trusted raters
//! (the overtrust) stays below `min_overtrust + overtrust_ratio·Σ w^pen·t`.
//! Private ratings are multiplied by `privacy_penalty`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{EntityId, Privacy, UserId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OvertrustParams {
    pub privacy_penalty: f64,
    pub min_overtrust: f64,
    pub overtrust_ratio: f64,
}

impl Default for OvertrustParams {
    fn default() -> Self {
        OvertrustParams {
            privacy_penalty: 0.5,
            min_overtrust: 2.0,
            overtrust_ratio: 0.1,
        }
    }
}

impl OvertrustParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.privacy_penalty > 0.0 && self.privacy_penalty <= 1.0) {
            return Err(Error::config("privacy_penalty must lie in (0, 1]"));
        }
        if !(self.min_overtrust > 0.0 && self.min_overtrust.is_finite()) {
            return Err(Error::config("min_overtrust must be positive"));
        }
        if !(0.0..1.0).contains(&self.overtrust_ratio) {
            return Err(Error::config("overtrust_ratio must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn penalty(&self, privacy: Privacy) -> f64 {
        match privacy {
            Privacy::Public => 1.0,
            Privacy::Private => self.privacy_penalty,
        }
    }
}

/// A user who rated the entity under consideration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rater {
    pub user: UserId,
    pub trust: f64,
    pub privacy: Privacy,
}

/// Extra weight granted when every rater gets at least `w_min`.
pub fn overtrust(w_min: f64, raters: &[Rater], params: &OvertrustParams) -> f64 {
    raters
        .iter()
        .map(|r| params.penalty(r.privacy) * (w_min - r.trust).max(0.0))
        .sum()
}

/// Maximal tolerated overtrust.
pub fn overtrust_cap(raters: &[Rater], params: &OvertrustParams) -> f64 {
    let cumulative: f64 = raters
        .iter()
        .map(|r| params.penalty(r.privacy) * r.trust)
        .sum();
    params.min_overtrust + params.overtrust_ratio * cumulative
}

/// Minimal voting right of an entity, found by dichotomy on `[0, 1]`.
///
/// Returns `None` without raters. The returned value never exceeds the
/// budget: `overtrust(w_min) ∈ [cap - tol, cap]` unless `w_min = 1`.
pub fn solve_min_voting_right(raters: &[Rater], params: &OvertrustParams, tol: f64) -> Option<f64> {
    if raters.is_empty() {
        return None;
    }
    let cap = overtrust_cap(raters, params);
    if overtrust(1.0, raters, params) <= cap {
        return Some(1.0);
    }
    // overtrust has slope at most Σ w^pen, so this width bounds its error by tol
    let slope: f64 = raters.iter().map(|r| params.penalty(r.privacy)).sum();
    let width = tol / slope.max(1.0);
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while hi - lo > width {
        let mid = 0.5 * (lo + hi);
        if overtrust(mid, raters, params) <= cap {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(lo)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VotingRightsMatrix {
    pub rights: BTreeMap<(UserId, EntityId), f64>,
    pub min_voting_right: BTreeMap<EntityId, f64>,
}

impl VotingRightsMatrix {
    pub fn get(&self, user: UserId, entity: EntityId) -> f64 {
        self.rights.get(&(user, entity)).copied().unwrap_or(0.0)
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        #[derive(Serialize)]
        struct Row {
            user: UserId,
            entity: EntityId,
            voting_right: f64,
            min_voting_right: f64,
        }
        crate::dataset::write_csv(
            path,
            &["user", "entity", "voting_right", "min_voting_right"],
            self.rights.iter().map(|(&(user, entity), &voting_right)| Row {
                user,
                entity,
                voting_right,
                min_voting_right: self.min_voting_right[&entity],
            }),
        )
    }
}

/// Voting rights `w_ue = w^pen_ue · max{t_u, w_min,e}` for every rated pair.
pub fn compute_voting_rights(
    flags: &BTreeMap<(UserId, EntityId), Privacy>,
    trusts: &BTreeMap<UserId, f64>,
    params: &OvertrustParams,
    tol: f64,
) -> VotingRightsMatrix {
    let mut by_entity: BTreeMap<EntityId, Vec<Rater>> = BTreeMap::new();
    for (&(user, entity), &privacy) in flags {
        by_entity.entry(entity).or_default().push(Rater {
            user,
            trust: trusts.get(&user).copied().unwrap_or(0.0),
            privacy,
        });
    }
    type EntityRights = (EntityId, f64, Vec<(UserId, f64)>);
    let per_entity: Vec<EntityRights> = by_entity
        .into_par_iter()
        .filter_map(|(entity, raters)| {
            let w_min = solve_min_voting_right(&raters, params, tol)?;
            let rights = raters
                .iter()
                .map(|r| (r.user, params.penalty(r.privacy) * r.trust.max(w_min)))
                .collect();
            Some((entity, w_min, rights))
        })
        .collect();

    let mut out = VotingRightsMatrix::default();
    for (entity, w_min, rights) in per_entity {
        out.min_voting_right.insert(entity, w_min);
        for (user, w) in rights {
            out.rights.insert((user, entity), w);
        }
    }
    out
}
