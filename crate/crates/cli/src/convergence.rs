//! Distribution of the realized FDP against its limiting distribution.
//!
//! For each dimension the experiment is rerun with its own child seed; the
//! realized FDP and the limit at the realized factors come from the same
//! replications, so both histograms share one seed set.

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::experiment::{run_experiment, Record};
use crate::io;
use pfa::rng::child_seed;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const BINS: usize = 50;
pub const CONVERGENCE_FILE: &str = "convergence.json";
pub const HISTOGRAM_FILE: &str = "histograms.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    /// Template experiment; its `scenario.p` is replaced by each entry of `p_values`.
    pub experiment: ExperimentConfig,
    #[serde(default = "default_p_values")]
    pub p_values: Vec<usize>,
}

fn default_p_values() -> Vec<usize> {
    vec![100, 500, 1000]
}

impl ConvergenceConfig {
    pub fn new(experiment: ExperimentConfig) -> Self {
        Self {
            experiment,
            p_values: default_p_values(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p_values.is_empty() {
            return Err(HarnessError::Config("p_values is empty".into()));
        }
        for &p in &self.p_values {
            self.for_dimension(p).validate()?;
        }
        Ok(())
    }

    fn for_dimension(&self, p: usize) -> ExperimentConfig {
        let mut cfg = self.experiment.clone();
        cfg.scenario.p = p;
        cfg.seed = child_seed(self.experiment.seed, p as u64);
        cfg.estimators = false;
        cfg.alpha = None;
        cfg.n_mc = 0;
        cfg
    }
}

/// Counts over `BINS` equal bins on `[0, 1]`; the last bin is closed.
pub fn histogram(values: &[f64]) -> Vec<usize> {
    let mut counts = vec![0; BINS];
    for &v in values {
        let b = ((v.clamp(0.0, 1.0) * BINS as f64) as usize).min(BINS - 1);
        counts[b] += 1;
    }
    counts
}

/// Largest gap between the two empirical CDFs at the bin edges.
pub fn ks_distance(a: &[usize], b: &[usize]) -> f64 {
    let (na, nb) = (
        a.iter().sum::<usize>() as f64,
        b.iter().sum::<usize>() as f64,
    );
    let (mut ca, mut cb, mut worst) = (0usize, 0usize, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        ca += x;
        cb += y;
        worst = worst.max((ca as f64 / na - cb as f64 / nb).abs());
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub p: usize,
    pub t: f64,
    pub mean_k: f64,
    pub empirical: Vec<usize>,
    pub limit: Vec<usize>,
    pub ks: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceOutput {
    pub version: String,
    pub seed: u64,
    pub config: ConvergenceConfig,
    pub bins: usize,
    pub panels: Vec<Panel>,
}

impl ConvergenceOutput {
    pub fn panel(&self, p: usize, t: f64) -> Option<&Panel> {
        self.panels.iter().find(|x| x.p == p && x.t == t)
    }

    /// KS distances in the order of `p_values` at threshold `t`.
    pub fn ks_series(&self, t: f64) -> Vec<f64> {
        self.config
            .p_values
            .iter()
            .filter_map(|&p| self.panel(p, t).map(|x| x.ks))
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        io::ensure_dir(dir)?;
        io::write_json(&dir.join(CONVERGENCE_FILE), self)?;
        let path = dir.join(HISTOGRAM_FILE);
        let mut w = csv::Writer::from_path(&path).map_err(|e| HarnessError::io(&path, e))?;
        w.write_record(["p", "t", "bin_lo", "bin_hi", "empirical", "limit"])
            .map_err(|e| HarnessError::io(&path, e))?;
        for x in &self.panels {
            for b in 0..BINS {
                w.write_record([
                    x.p.to_string(),
                    x.t.to_string(),
                    (b as f64 / BINS as f64).to_string(),
                    ((b + 1) as f64 / BINS as f64).to_string(),
                    x.empirical[b].to_string(),
                    x.limit[b].to_string(),
                ])
                .map_err(|e| HarnessError::io(&path, e))?;
            }
        }
        w.flush().map_err(|e| HarnessError::io(&path, e))
    }
}

fn panel(p: usize, t: f64, records: &[Record]) -> Panel {
    let rs: Vec<&Record> = records.iter().filter(|r| r.t == t).collect();
    let empirical = histogram(&rs.iter().map(|r| r.fdp_true).collect::<Vec<_>>());
    let limit = histogram(&rs.iter().map(|r| r.fdp_limit).collect::<Vec<_>>());
    Panel {
        p,
        t,
        mean_k: rs.iter().map(|r| r.k as f64).sum::<f64>() / rs.len() as f64,
        ks: ks_distance(&empirical, &limit),
        empirical,
        limit,
    }
}

pub fn run_convergence(cfg: &ConvergenceConfig) -> Result<ConvergenceOutput> {
    cfg.validate()?;
    let mut panels = Vec::new();
    for &p in &cfg.p_values {
        let out = run_experiment(&cfg.for_dimension(p))?;
        for &t in &cfg.experiment.t_grid {
            panels.push(panel(p, t, &out.records));
        }
    }
    Ok(ConvergenceOutput {
        version: crate::VERSION.to_string(),
        seed: cfg.experiment.seed,
        config: cfg.clone(),
        bins: BINS,
        panels,
    })
}
