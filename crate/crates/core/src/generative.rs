//! Synthetic users, vouches, entities and comparisons.
//!
//! Users and entities carry latent vectors; a user's true score for an entity
//! is the inner product of the two. Trustworthy users are drawn around
//! `svd_mean`, untrustworthy ones all sit exactly at `-svd_mean`. Users then
//! vouch within their own group, engage with the entities they find most
//! engaging, and compare pairs of engaged entities with a k-nary
//! Bradley-Terry law.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, Zipf};
use serde::{Deserialize, Serialize};

use crate::dataset::{write_csv, Comparison, Dataset, EntityId, Privacy, UserId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalUserModel {
    pub p_trustworthy: f64,
    pub p_pretrusted: f64,
    pub zipf_vouch: f64,
    pub zipf_compare: f64,
    pub poisson_compare: f64,
    pub n_comparisons_per_entity: f64,
    pub multiplicator_std_dev: f64,
    pub svd_mean: Vec<f64>,
    pub engagement_bias_std_dev: f64,
}

impl Default for NormalUserModel {
    fn default() -> Self {
        NormalUserModel {
            p_trustworthy: 0.8,
            p_pretrusted: 0.2,
            zipf_vouch: 2.0,
            zipf_compare: 1.5,
            poisson_compare: 30.0,
            n_comparisons_per_entity: 3.0,
            multiplicator_std_dev: 1.0,
            svd_mean: vec![3.0, 0.0],
            engagement_bias_std_dev: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalEntityModel {
    pub mean: Vec<f64>,
}

impl Default for NormalEntityModel {
    fn default() -> Self {
        NormalEntityModel { mean: vec![0.0, 0.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimpleEngagementModel {
    pub p_per_criterion: BTreeMap<String, f64>,
    pub p_private: f64,
}

impl Default for SimpleEngagementModel {
    fn default() -> Self {
        SimpleEngagementModel {
            p_per_criterion: BTreeMap::from([("0".to_string(), 1.0)]),
            p_private: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnaryGbt {
    pub n_options: usize,
    pub comparison_max: f64,
}

impl Default for KnaryGbt {
    fn default() -> Self {
        KnaryGbt {
            n_options: 21,
            comparison_max: 10.0,
        }
    }
}

/// Everything needed to draw one synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeConfig {
    pub n_users: usize,
    pub n_entities: usize,
    pub seed: u64,
    pub user: NormalUserModel,
    pub entity: NormalEntityModel,
    pub engagement: SimpleEngagementModel,
    pub comparison: KnaryGbt,
}

impl Default for GenerativeConfig {
    fn default() -> Self {
        GenerativeConfig {
            n_users: 30,
            n_entities: 50,
            seed: 0,
            user: NormalUserModel::default(),
            entity: NormalEntityModel::default(),
            engagement: SimpleEngagementModel::default(),
            comparison: KnaryGbt::default(),
        }
    }
}

impl GenerativeConfig {
    pub fn validate(&self) -> Result<()> {
        let u = &self.user;
        for (name, p) in [
            ("p_trustworthy", u.p_trustworthy),
            ("p_pretrusted", u.p_pretrusted),
            ("p_private", self.engagement.p_private),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        for (name, x) in [("zipf_vouch", u.zipf_vouch), ("zipf_compare", u.zipf_compare)] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {x}")));
            }
        }
        if !(u.poisson_compare > 0.0 && u.poisson_compare.is_finite()) {
            return Err(Error::config("poisson_compare must be positive"));
        }
        if !(u.n_comparisons_per_entity > 0.0) {
            return Err(Error::config("n_comparisons_per_entity must be positive"));
        }
        for (name, x) in [
            ("multiplicator_std_dev", u.multiplicator_std_dev),
            ("engagement_bias_std_dev", u.engagement_bias_std_dev),
        ] {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(Error::config(format!("{name} must be nonnegative, got {x}")));
            }
        }
        if u.svd_mean.is_empty() {
            return Err(Error::config("svd_mean needs at least one dimension"));
        }
        if self.entity.mean.len() != u.svd_mean.len() {
            return Err(Error::config(format!(
                "entity mean has dimension {}, svd_mean has {}",
                self.entity.mean.len(),
                u.svd_mean.len()
            )));
        }
        let k = &self.comparison;
        if k.n_options < 3 || k.n_options.is_multiple_of(2) {
            return Err(Error::config(format!("n_options must be odd and at least 3, got {}", k.n_options)));
        }
        if !(k.comparison_max > 0.0 && k.comparison_max.is_finite()) {
            return Err(Error::config("comparison_max must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserTruth {
    pub svd: Vec<f64>,
    pub trustworthy: bool,
    pub pretrusted: bool,
    pub engagement_bias: f64,
    pub vouch_activity: f64,
    pub compare_activity: f64,
    pub multiplicator: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub svd_mean: Vec<f64>,
    pub users: Vec<UserTruth>,
    pub entities: Vec<Vec<f64>>,
}

impl GroundTruth {
    pub fn true_score(&self, user: usize, entity: usize) -> f64 {
        dot(&self.users[user].svd, &self.entities[entity])
    }

    /// `⟨svd_mean, entity svd⟩` for every entity.
    pub fn global_scores(&self) -> BTreeMap<EntityId, f64> {
        self.entities
            .iter()
            .enumerate()
            .map(|(e, v)| (EntityId(e as u32), dot(&self.svd_mean, v)))
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv(path, &["entity", "true_global_score"], self.global_scores())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub dataset: Dataset,
    pub truth: GroundTruth,
}

impl Generated {
    /// Dataset files plus `ground_truth.csv`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        self.dataset.write_dir(dir)?;
        self.truth.write_csv(&dir.join("ground_truth.csv"))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normal(std_dev: f64) -> Normal<f64> {
    Normal::new(0.0, std_dev).expect("validated standard deviation")
}

/// Zipf draw in `[1, n]`; 0 for an empty group.
fn zipf_activity<R: Rng>(n: usize, exponent: f64, rng: &mut R) -> f64 {
    if n == 0 {
        return 0.0;
    }
    Zipf::new(n as f64, exponent).expect("validated Zipf parameters").sample(rng).ceil()
}

pub fn generate_users<R: Rng>(config: &GenerativeConfig, rng: &mut R) -> Vec<UserTruth> {
    let u = &config.user;
    let mut users: Vec<UserTruth> = (0..config.n_users)
        .map(|_| {
            let trustworthy = rng.random_bool(u.p_trustworthy);
            let pretrusted = trustworthy && rng.random_bool(u.p_pretrusted);
            let svd = if trustworthy {
                u.svd_mean.iter().map(|m| m + normal(1.0).sample(rng)).collect()
            } else {
                u.svd_mean.iter().map(|m| -m).collect()
            };
            UserTruth {
                svd,
                trustworthy,
                pretrusted,
                engagement_bias: normal(u.engagement_bias_std_dev).sample(rng),
                vouch_activity: 0.0,
                compare_activity: 0.0,
                multiplicator: normal(u.multiplicator_std_dev).sample(rng).exp(),
            }
        })
        .collect();
    let group_size = |trustworthy: bool| users.iter().filter(|x| x.trustworthy == trustworthy).count();
    let (n_good, n_bad) = (group_size(true), group_size(false));
    for user in &mut users {
        let n = if user.trustworthy { n_good } else { n_bad };
        user.vouch_activity = zipf_activity(n, u.zipf_vouch, rng);
        user.compare_activity = zipf_activity(config.n_entities, u.zipf_compare, rng);
    }
    users
}

/// Independent vouches inside each trust group, with probability
/// `min{1, activity / group size}`.
pub fn generate_vouches<R: Rng>(users: &[UserTruth], rng: &mut R) -> BTreeSet<(UserId, UserId)> {
    let mut vouches = BTreeSet::new();
    for group in [true, false] {
        let members: Vec<usize> = (0..users.len()).filter(|&i| users[i].trustworthy == group).collect();
        let n = members.len() as f64;
        for &u in &members {
            let p = (users[u].vouch_activity / n).min(1.0);
            for &v in &members {
                if u != v && rng.random_bool(p) {
                    vouches.insert((UserId(u as u32), UserId(v as u32)));
                }
            }
        }
    }
    vouches
}

pub fn generate_entities<R: Rng>(config: &GenerativeConfig, rng: &mut R) -> Vec<Vec<f64>> {
    (0..config.n_entities)
        .map(|_| config.entity.mean.iter().map(|m| m + normal(1.0).sample(rng)).collect())
        .collect()
}

/// One user's engaged entities and their privacy, in engagement order.
pub fn generate_engagement<R: Rng>(
    user: &UserTruth,
    entities: &[Vec<f64>],
    config: &GenerativeConfig,
    rng: &mut R,
) -> Vec<(usize, Privacy)> {
    let n = entities.len();
    if n == 0 {
        return Vec::new();
    }
    let mut engagement: Vec<(f64, usize)> = entities
        .iter()
        .enumerate()
        .map(|(e, v)| (user.engagement_bias * dot(&user.svd, v) + normal(1.0).sample(rng), e))
        .collect();
    engagement.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let k: f64 = Poisson::new(config.user.poisson_compare)
        .expect("validated Poisson rate")
        .sample(rng);
    let k = (k as usize).clamp(1, n);
    engagement
        .into_iter()
        .take(k)
        .map(|(_, e)| {
            let privacy = if rng.random_bool(config.engagement.p_private) {
                Privacy::Private
            } else {
                Privacy::Public
            };
            (e, privacy)
        })
        .collect()
}

/// Draws `r` on the grid `{-R_max, …, R_max}` with probability
/// `∝ exp(-θ_diff·r / R_max)`.
pub fn sample_comparison_knary<R: Rng>(theta_diff: f64, n_options: usize, comparison_max: f64, rng: &mut R) -> f64 {
    let grid: Vec<f64> = (0..n_options)
        .map(|i| comparison_max * (2.0 * i as f64 / (n_options - 1) as f64 - 1.0))
        .collect();
    let logits: Vec<f64> = grid.iter().map(|r| -theta_diff * r / comparison_max).collect();
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut draw = rng.random::<f64>() * total;
    for (r, w) in grid.iter().zip(&weights) {
        if draw < *w {
            return *r;
        }
        draw -= w;
    }
    // rounding can leave a sliver past the last weight
    grid[weights.iter().rposition(|&w| w > 0.0).unwrap_or(n_options - 1)]
}

/// Draws a full dataset from `config.seed`.
pub fn generate(config: &GenerativeConfig) -> Result<Generated> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let users = generate_users(config, &mut rng);
    let vouches = generate_vouches(&users, &mut rng);
    let entities = generate_entities(config, &mut rng);

    let r_max = config.comparison.comparison_max;
    let mut comparisons = Vec::new();
    for (u, user) in users.iter().enumerate() {
        let engaged = generate_engagement(user, &entities, config, &mut rng);
        let k = engaged.len();
        if k < 2 {
            continue;
        }
        let p = (config.user.n_comparisons_per_entity / (k - 1) as f64).min(1.0);
        for i in 0..k {
            for j in i + 1..k {
                if !rng.random_bool(p) {
                    continue;
                }
                let ((e, pe), (f, pf)) = (engaged[i], engaged[j]);
                let diff = user.multiplicator * (dot(&user.svd, &entities[e]) - dot(&user.svd, &entities[f]));
                let r = sample_comparison_knary(diff, config.comparison.n_options, r_max, &mut rng);
                let privacy = if pe == Privacy::Private || pf == Privacy::Private {
                    Privacy::Private
                } else {
                    Privacy::Public
                };
                comparisons.push(Comparison {
                    user: UserId(u as u32),
                    entity_a: EntityId(e as u32),
                    entity_b: EntityId(f as u32),
                    value: r,
                    privacy,
                });
            }
        }
    }

    let dataset = Dataset::new(
        (0..config.n_users).map(|u| UserId(u as u32)),
        users
            .iter()
            .enumerate()
            .filter(|(_, x)| x.pretrusted)
            .map(|(u, _)| UserId(u as u32)),
        vouches,
        comparisons,
        r_max,
    )?;
    Ok(Generated {
        dataset,
        truth: GroundTruth {
            svd_mean: config.user.svd_mean.clone(),
            users,
            entities,
        },
    })
}
