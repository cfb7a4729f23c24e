//! Histograms of displayed scores, bucketed by how much data backs them.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{read_csv, write_csv, EntityId, UserId};
use crate::error::{Error, Result};

pub const N_BINS: usize = 20;

/// Upper-exclusive count buckets; the last one is open.
const BUCKETS: [(usize, Option<usize>, &str); 5] = [
    (1, Some(2), "1"),
    (2, Some(3), "2"),
    (3, Some(5), "3-4"),
    (5, Some(10), "5-9"),
    (10, None, "10+"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BucketBy {
    Comparisons,
    Raters,
}

impl FromStr for BucketBy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "comparisons" => Ok(BucketBy::Comparisons),
            "raters" => Ok(BucketBy::Raters),
            other => Err(Error::config(format!("unknown bucketing {other:?}, expected comparisons or raters"))),
        }
    }
}

#[derive(Debug, Deserialize)]
struct GlobalRow {
    entity: EntityId,
    rho_display: f64,
    n_raters: usize,
}

#[derive(Debug, Deserialize)]
struct UserRow {
    user: UserId,
    entity: EntityId,
    display: f64,
}

#[derive(Debug, Deserialize)]
struct CountRow {
    user: UserId,
    entity: EntityId,
    n_comparisons: usize,
}

/// The score files of a pipeline run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunScores {
    /// Display score and number of raters per entity.
    pub global: BTreeMap<EntityId, (f64, usize)>,
    pub user: BTreeMap<(UserId, EntityId), f64>,
    pub comparison_counts: BTreeMap<(UserId, EntityId), usize>,
}

impl RunScores {
    /// Reads `global_scores.csv`, `user_scores.csv` and `comparison_counts.csv`.
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let global: Vec<GlobalRow> = read_csv(&dir.join("global_scores.csv"))?;
        let user: Vec<UserRow> = read_csv(&dir.join("user_scores.csv"))?;
        let counts: Vec<CountRow> = read_csv(&dir.join("comparison_counts.csv"))?;
        Ok(RunScores {
            global: global.into_iter().map(|r| (r.entity, (r.rho_display, r.n_raters))).collect(),
            user: user.into_iter().map(|r| ((r.user, r.entity), r.display)).collect(),
            comparison_counts: counts.into_iter().map(|r| ((r.user, r.entity), r.n_comparisons)).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramRow {
    /// `user` or `global`.
    pub kind: &'static str,
    pub bucket: &'static str,
    pub bin_low: f64,
    pub bin_high: f64,
    pub count: usize,
}

fn bucket_of(n: usize) -> Option<usize> {
    BUCKETS
        .iter()
        .position(|&(lo, hi, _)| n >= lo && hi.is_none_or(|hi| n < hi))
}

fn bin_of(x: f64, score_max: f64) -> usize {
    let width = 2.0 * score_max / N_BINS as f64;
    (((x + score_max) / width).floor().max(0.0) as usize).min(N_BINS - 1)
}

/// Counts display scores in `N_BINS` equal bins over `[-score_max,
/// score_max]` per count bucket. Only nonempty bins are emitted.
///
/// User scores are bucketed by that user's comparisons of the entity (or the
/// entity's raters); global scores by all comparisons of the entity (or its
/// raters). Scores backed by no data are skipped.
pub fn histogram(scores: &RunScores, by: BucketBy, score_max: f64) -> Vec<HistogramRow> {
    let mut entity_comparisons: BTreeMap<EntityId, usize> = BTreeMap::new();
    for (&(_, e), &n) in &scores.comparison_counts {
        *entity_comparisons.entry(e).or_default() += n;
    }
    let raters = |e: &EntityId| scores.global.get(e).map_or(0, |g| g.1);

    let user_samples = scores.user.iter().map(|(key, &d)| {
        let n = match by {
            BucketBy::Comparisons => scores.comparison_counts.get(key).copied().unwrap_or(0),
            BucketBy::Raters => raters(&key.1),
        };
        ("user", n, d)
    });
    let global_samples = scores.global.iter().map(|(e, &(d, n_raters))| {
        let n = match by {
            BucketBy::Comparisons => entity_comparisons.get(e).copied().unwrap_or(0),
            BucketBy::Raters => n_raters,
        };
        ("global", n, d)
    });

    let mut counts: BTreeMap<(&'static str, usize, usize), usize> = BTreeMap::new();
    for (kind, n, d) in user_samples.chain(global_samples) {
        if let Some(b) = bucket_of(n) {
            *counts.entry((kind, b, bin_of(d, score_max))).or_default() += 1;
        }
    }
    let width = 2.0 * score_max / N_BINS as f64;
    counts
        .into_iter()
        .map(|((kind, b, bin), count)| HistogramRow {
            kind,
            bucket: BUCKETS[b].2,
            bin_low: -score_max + bin as f64 * width,
            bin_high: -score_max + (bin + 1) as f64 * width,
            count,
        })
        .collect()
}

pub fn write_histogram_csv(rows: &[HistogramRow], path: &Path) -> Result<()> {
    write_csv(path, &["kind", "bucket", "bin_low", "bin_high", "count"], rows)
}

/// Same as [`write_histogram_csv`] but to any writer.
pub fn write_histogram<W: std::io::Write>(rows: &[HistogramRow], out: W) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let wrap = |source| Error::Csv {
        path: "-".into(),
        source,
    };
    writer
        .write_record(["kind", "bucket", "bin_low", "bin_high", "count"])
        .map_err(wrap)?;
    for row in rows {
        writer.serialize(row).map_err(wrap)?;
    }
    writer.flush().map_err(|source| Error::Io {
        path: "-".into(),
        source,
    })
}
