//! The six stages end to end.
//!
//! trust propagation → voting rights → preference learning → scaling →
//! aggregation → post-process. Every intermediate result is kept in
//! [`PipelineOutput`] for inspection.

use std::collections::BTreeMap;
use std::path::Path;

use crate::aggregation::{aggregate, postprocess, GlobalScores};
use crate::config::{PipelineConfig, ScalingStep};
use crate::dataset::{create_dir, write_csv, Dataset, EntityId, UserId};
use crate::error::{Result, Stage};
use crate::preference::learn_all;
use crate::scaling::{mehestan, quantile_zero_shift, standardize, MehestanOutput, Models};
use crate::trust::{build_vouch_matrix, lipschitrust, pretrust_vector, TrustState, VouchSet};
use crate::voting::{compute_voting_rights, VotingRightsMatrix};

/// Dichotomy tolerance on minimal voting rights.
pub const VOTING_RIGHT_TOL: f64 = 1e-6;

/// Outcome of one scaling step.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalingReport {
    Mehestan(MehestanOutput),
    ZeroShift { shift: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub trust: TrustState,
    pub voting_rights: VotingRightsMatrix,
    pub raw_models: Models,
    pub scaling_reports: Vec<ScalingReport>,
    pub scaled_models: Models,
    pub sigma: f64,
    pub standardized: Models,
    pub scores: GlobalScores,
    /// Number of comparisons of each user involving each entity.
    pub comparison_counts: BTreeMap<(UserId, EntityId), usize>,
}

/// Runs every stage on `dataset`.
///
/// Every failure, including invalid parameters, is wrapped in
/// [`Error::Stage`](crate::Error::Stage).
pub fn run_pipeline(dataset: &Dataset, config: &PipelineConfig) -> Result<PipelineOutput> {
    config.validate()?;

    let tp = &config.trust_propagation;
    let trust = (|| {
        let vouches = VouchSet::new(dataset.users.iter().copied(), dataset.vouches.iter().copied(), tp.sink_vouch)?;
        let matrix = build_vouch_matrix(&vouches);
        let pretrust = pretrust_vector(&matrix, &dataset.pretrusted, tp.pretrust_value);
        lipschitrust(&pretrust, &matrix, tp.decay, tp.error)
    })()
    .map_err(|e| e.in_stage(Stage::TrustPropagation))?;

    let privacy = dataset.privacy_flags();
    let voting_rights = compute_voting_rights(&privacy, &trust.as_map(), &config.voting_rights, VOTING_RIGHT_TOL);

    let gbt = config
        .preference_learning
        .to_gbt()
        .map_err(|e| e.in_stage(Stage::PreferenceLearning))?;
    let raw_models = learn_all(dataset, &gbt);

    let penalty = config.voting_rights;
    let mut scaled_models = raw_models.clone();
    let mut scaling_reports = Vec::new();
    for step in &config.scaling {
        match step {
            ScalingStep::Mehestan(params) => {
                let out = mehestan(&scaled_models, &trust.as_map(), &privacy, params);
                scaled_models = out.scaled.clone();
                scaling_reports.push(ScalingReport::Mehestan(out));
            }
            ScalingStep::QuantileZeroShift(params) => {
                let pen = |u: UserId, e: EntityId| {
                    privacy.get(&(u, e)).map_or(1.0, |&p| penalty.penalty(p))
                };
                let (shift, shifted) = quantile_zero_shift(&scaled_models, pen, params);
                scaled_models = shifted;
                scaling_reports.push(ScalingReport::ZeroShift { shift });
            }
        }
    }

    let agg = &config.aggregation;
    let score_max = config.post_process.score_max;
    let (sigma, standardized) = standardize(&scaled_models, agg.dev_quantile, agg.lipschitz, agg.error);
    let aggregated = aggregate(&standardized, &voting_rights, dataset.entities(), agg);
    let scores = postprocess(&aggregated, &standardized, score_max);

    let mut comparison_counts = BTreeMap::new();
    for c in &dataset.comparisons {
        for e in [c.entity_a, c.entity_b] {
            *comparison_counts.entry((c.user, e)).or_insert(0) += 1;
        }
    }

    Ok(PipelineOutput {
        trust,
        voting_rights,
        raw_models,
        scaling_reports,
        scaled_models,
        sigma,
        standardized,
        scores,
        comparison_counts,
    })
}

impl PipelineOutput {
    /// Writes `trust.csv`, `voting_rights.csv`, `user_scores.csv`,
    /// `global_scores.csv` and `comparison_counts.csv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        create_dir(dir)?;
        write_csv(
            &dir.join("trust.csv"),
            &["user", "pretrust", "trust"],
            self.trust
                .users
                .iter()
                .zip(&self.trust.pretrust)
                .zip(&self.trust.trust)
                .map(|((u, p), t)| (u, p, t)),
        )?;
        self.voting_rights.write_csv(&dir.join("voting_rights.csv"))?;
        self.scores.write_users_csv(&dir.join("user_scores.csv"))?;
        self.scores.write_entities_csv(&dir.join("global_scores.csv"))?;
        write_csv(
            &dir.join("comparison_counts.csv"),
            &["user", "entity", "n_comparisons"],
            self.comparison_counts.iter().map(|((u, e), n)| (u, e, n)),
        )
    }
}
