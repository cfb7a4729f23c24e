//! Seeded parameter sweeps scored against the generator's ground truth.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::dataset::{write_csv, EntityId};
use crate::error::Result;
use crate::generative::generate;
use crate::pipeline::run_pipeline;

/// Pearson correlation of two equally long samples.
///
/// Returns 0 (with a warning) when either side has zero variance or fewer
/// than two points.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    if xs.len() < 2 {
        log::warn!("correlation needs at least two points, got {}", xs.len());
        return 0.0;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        log::warn!("correlation of a constant sample, reporting 0");
        return 0.0;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

/// Correlation between `scores` and `truth` over the entities of `scores`.
pub fn correlation(scores: &BTreeMap<EntityId, f64>, truth: &BTreeMap<EntityId, f64>) -> f64 {
    let (xs, ys): (Vec<f64>, Vec<f64>) = scores
        .iter()
        .filter_map(|(e, &s)| truth.get(e).map(|&t| (s, t)))
        .unzip();
    pearson(&xs, &ys)
}

/// Generates one dataset and scores it; the correlation is taken over
/// entities with at least one comparison.
pub fn run_once(config: &ExperimentConfig, x: f64, z: Option<f64>, seed_index: u64) -> Result<f64> {
    let resolved = config.resolve(x, z, seed_index)?;
    let generated = generate(&resolved.generative)?;
    let out = run_pipeline(&generated.dataset, &resolved.pipeline)?;
    Ok(correlation(&out.scores.rho(), &generated.truth.global_scores()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub x: f64,
    pub z: Option<f64>,
    pub correlations: Vec<f64>,
}

impl CellResult {
    pub fn mean(&self) -> f64 {
        self.correlations.iter().sum::<f64>() / self.correlations.len() as f64
    }

    /// Sample standard deviation; 0 for a single seed.
    pub fn std(&self) -> f64 {
        let n = self.correlations.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        let ss: f64 = self.correlations.iter().map(|c| (c - m).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    /// Cells in `xvalues`-major, `zvalues`-minor order.
    pub cells: Vec<CellResult>,
}

impl ExperimentResult {
    pub fn cell(&self, x: f64, z: Option<f64>) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.x == x && c.z == z)
    }

    /// `xvalue,zvalue,mean_correlation,std_correlation,n_seeds`; `zvalue` is
    /// empty without a z axis.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv(
            path,
            &["xvalue", "zvalue", "mean_correlation", "std_correlation", "n_seeds"],
            self.cells
                .iter()
                .map(|c| (c.x, c.z, c.mean(), c.std(), c.correlations.len())),
        )
    }
}

/// Runs every `(x, z, seed)` combination in parallel. Results do not depend
/// on scheduling since each run only reads its own seed.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let cells: Vec<(f64, Option<f64>)> = config
        .xvalues
        .iter()
        .flat_map(|&x| config.z_axis().into_iter().map(move |z| (x, z)))
        .collect();
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| (0..config.n_seeds as u64).map(move |s| (c, s)))
        .collect();
    let values = jobs
        .par_iter()
        .map(|&(c, s)| run_once(config, cells[c].0, cells[c].1, s))
        .collect::<Result<Vec<f64>>>()?;
    let cells = cells
        .iter()
        .zip(values.chunks(config.n_seeds))
        .map(|(&(x, z), chunk)| CellResult {
            x,
            z,
            correlations: chunk.to_vec(),
        })
        .collect();
    Ok(ExperimentResult { cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pearson_extremes() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &xs) - 1.0).abs() < 1e-12);
        assert!((pearson(&xs, &neg) + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&xs, &[3.0; 4]), 0.0);
        assert_eq!(pearson(&[1.0], &[2.0]), 0.0);
    }

    #[test]
    fn pearson_affine_invariance() {
        let xs = [0.3, -1.2, 2.5, 0.0, 4.1];
        let ys = [1.0, 0.1, 2.0, -0.7, 3.3];
        let ys2: Vec<f64> = ys.iter().map(|y| 3.0 * y - 7.0).collect();
        assert!((pearson(&xs, &ys) - pearson(&xs, &ys2)).abs() < 1e-12);
    }

    #[test]
    fn independent_samples_stay_in_envelope() {
        // under independence √(n-1)·r is roughly standard normal
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200;
        let mut outside = 0;
        for _ in 0..200 {
            let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let ys: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            if pearson(&xs, &ys).abs() * ((n - 1) as f64).sqrt() > 2.576 {
                outside += 1;
            }
        }
        assert!(outside <= 8, "{outside} of 200 beyond the 99% envelope");
    }

    #[test]
    fn std_of_single_seed_is_zero() {
        let c = CellResult {
            x: 0.0,
            z: None,
            correlations: vec![0.4],
        };
        assert_eq!(c.std(), 0.0);
        let c = CellResult {
            x: 0.0,
            z: None,
            correlations: vec![1.0, 3.0],
        };
        assert!((c.std() - 2f64.sqrt()).abs() < 1e-12);
    }
}
