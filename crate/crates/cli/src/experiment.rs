//! Replicated simulation experiments.
//!
//! Each replication draws (or reuses) a design, builds the factor model of
//! its sample correlation, samples one statistic vector and records the
//! realized and estimated FDP at every threshold of the grid. Replications
//! run in parallel on independent substreams and are merged in index order.

use crate::config::{AlphaRule, DesignMode, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::io;
use pfa::compensated_sum;
use pfa::fdr::{
    bh_procedure, efron_dispersion, efron_estimate_with_dispersion, storey_estimate,
    storey_procedure,
};
use pfa::gauss::two_sided_pvalue;
use pfa::lad::{estimate_factors, LadOptions};
use pfa::pfa::{
    build_factor_model, estimate_fdp, fdp_limit, fdp_numerator, sample_variance,
    select_num_factors, variance_of_false_count, FactorModel,
};
use pfa::rng::{child_seed, substream, Purpose};
use pfa::simgen::{
    generate_design, realized_counts, select_false_nulls, signal_means, true_null_indices,
    StandardizedDesign, StatisticSampler,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const SUMMARY_FILE: &str = "summary.json";
pub const RECORDS_FILE: &str = "records.csv";

/// One replication at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub rep: usize,
    pub t: f64,
    pub k: usize,
    pub r: usize,
    pub v_true: usize,
    pub s_true: usize,
    pub fdp_true: f64,
    /// Limiting FDP at the realized factors.
    pub fdp_limit: f64,
    /// Surrogate false-discovery count over all hypotheses at the realized factors.
    pub false_count_surrogate: f64,
    /// The same sum restricted to the true nulls.
    pub false_count_nulls: f64,
    /// `N / (N + p1)` with `N` the surrogate count.
    pub approx_fdr: f64,
    pub fdp_pfa: Option<f64>,
    pub fdp_efron: Option<f64>,
    pub fdp_storey: Option<f64>,
    pub lad_converged: Option<bool>,
    pub fdp_bh_procedure: Option<f64>,
    pub fdp_storey_procedure: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub sd: f64,
}

impl Moments {
    pub fn of(xs: &[f64]) -> Self {
        let mean = if xs.is_empty() {
            0.0
        } else {
            compensated_sum(xs.iter().copied()) / xs.len() as f64
        };
        Self {
            mean,
            sd: sample_variance(xs).sqrt(),
        }
    }
}

/// `(estimate - truth) / truth`, or zero when the truth is zero.
pub fn relative_error(estimate: f64, truth: f64) -> f64 {
    if truth == 0.0 {
        0.0
    } else {
        (estimate - truth) / truth
    }
}

/// Aggregates at one threshold, all recomputable from the records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSummary {
    pub t: f64,
    pub reps: usize,
    pub mean_k: f64,
    pub rejections: Moments,
    pub false_discoveries: Moments,
    pub var_false_discoveries: f64,
    pub false_count_surrogate: Moments,
    pub var_false_count_surrogate: f64,
    pub fdp_true: Moments,
    pub fdp_limit: Moments,
    pub approx_fdr: Moments,
    pub fdp_pfa: Option<Moments>,
    pub re_pfa: Option<Moments>,
    pub re_efron: Option<Moments>,
    pub re_storey: Option<Moments>,
    pub lad_unconverged: Option<usize>,
    pub fdr_bh_procedure: Option<Moments>,
    pub fdr_storey_procedure: Option<Moments>,
}

/// Monte-Carlo variance of the surrogate count over fresh factor draws for
/// the first replication's model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceVariance {
    pub t: f64,
    pub k: usize,
    pub n_mc: usize,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub procedure_alpha: Option<f64>,
    pub summaries: Vec<ThresholdSummary>,
    pub reference: Vec<ReferenceVariance>,
    #[serde(skip)]
    pub records: Vec<Record>,
}

struct Instance {
    model: FactorModel,
    sampler: StatisticSampler,
    mu: Vec<f64>,
    true_nulls: Vec<usize>,
    is_null: Vec<bool>,
}

fn build_instance(cfg: &ExperimentConfig, index: u64) -> Result<Instance> {
    let scenario = &cfg.scenario;
    let mut rng = substream(cfg.seed, Purpose::Design, index);
    let design = StandardizedDesign::new(&generate_design(scenario, &mut rng)?)?;
    let system = design.eigen()?;
    let k = match cfg.num_factors {
        Some(k) => k,
        None => select_num_factors(system.values(), cfg.epsilon)?,
    };
    let model = build_factor_model(&system, k)?;
    let false_nulls = select_false_nulls(
        scenario,
        &mut substream(cfg.seed, Purpose::Placement, index),
    );
    let mu = signal_means(scenario, design.sds(), &false_nulls);
    let true_nulls = true_null_indices(scenario.p, &false_nulls);
    let mut is_null = vec![false; scenario.p];
    for &i in &true_nulls {
        is_null[i] = true;
    }
    let sampler = StatisticSampler::new(&system, mu.clone())?;
    Ok(Instance {
        model,
        sampler,
        mu,
        true_nulls,
        is_null,
    })
}

/// Realized FDP of a rejection set.
fn procedure_fdp(indices: &[usize], is_null: &[bool]) -> f64 {
    if indices.is_empty() {
        0.0
    } else {
        indices.iter().filter(|&&i| is_null[i]).count() as f64 / indices.len() as f64
    }
}

struct Replication {
    records: Vec<Record>,
    pvalues: Option<Vec<f64>>,
    is_null: Option<Vec<bool>>,
}

fn run_replication(
    cfg: &ExperimentConfig,
    rep: usize,
    shared: Option<&Instance>,
) -> Result<Replication> {
    let owned;
    let inst = match shared {
        Some(inst) => inst,
        None => {
            owned = build_instance(cfg, rep as u64)?;
            &owned
        }
    };
    let model = &inst.model;
    let k = model.k();
    let p = cfg.scenario.p;
    let p1 = p - inst.true_nulls.len();
    let draw = inst
        .sampler
        .sample(&mut substream(cfg.seed, Purpose::Replication, rep as u64));
    let z = draw.z;
    let real = model.realize(&draw.components[..k])?;
    let pvalues: Vec<f64> = z.iter().map(|&v| two_sided_pvalue(v)).collect();

    let estimators = if cfg.estimators {
        let lad = LadOptions::default();
        let (_, fit) = estimate_factors(model, &z, cfg.calibration_fraction, &lad)?;
        let dispersion = efron_dispersion(&z, cfg.efron_x0)?;
        Some((fit, dispersion))
    } else {
        None
    };

    let mut records = Vec::with_capacity(cfg.t_grid.len());
    for &t in &cfg.t_grid {
        let counts = realized_counts(&z, &inst.true_nulls, t);
        let surrogate = fdp_numerator(t, model, &real, None)?;
        let nulls = fdp_numerator(t, model, &real, Some(&inst.true_nulls))?;
        let limit = fdp_limit(t, model, &inst.mu, &inst.true_nulls, &real)?;
        let approx_fdr = if surrogate + p1 as f64 > 0.0 {
            surrogate / (surrogate + p1 as f64)
        } else {
            0.0
        };
        let (fdp_pfa, fdp_efron, fdp_storey, lad_converged) = match &estimators {
            Some((fit, dispersion)) => (
                Some(estimate_fdp(t, &z, model, &fit.w_hat)?.fdp),
                Some(efron_estimate_with_dispersion(&z, t, p - p1, *dispersion)?),
                Some(storey_estimate(&pvalues, t, cfg.storey_lambda)?),
                Some(fit.converged),
            ),
            None => (None, None, None, None),
        };
        records.push(Record {
            rep,
            t,
            k,
            r: counts.r,
            v_true: counts.v,
            s_true: counts.s,
            fdp_true: counts.fdp(),
            fdp_limit: limit,
            false_count_surrogate: surrogate,
            false_count_nulls: nulls,
            approx_fdr,
            fdp_pfa,
            fdp_efron,
            fdp_storey,
            lad_converged,
            fdp_bh_procedure: None,
            fdp_storey_procedure: None,
        });
    }

    let keep = cfg.alpha.is_some();
    Ok(Replication {
        records,
        pvalues: keep.then_some(pvalues),
        is_null: keep.then(|| inst.is_null.clone()),
    })
}

fn moments_opt(values: &[Option<f64>]) -> Option<Moments> {
    let xs: Option<Vec<f64>> = values.iter().copied().collect();
    xs.filter(|v| !v.is_empty()).map(|v| Moments::of(&v))
}

/// Aggregates over the records of each threshold in `t_grid`.
pub fn summarize(t_grid: &[f64], records: &[Record]) -> Vec<ThresholdSummary> {
    t_grid
        .iter()
        .map(|&t| {
            let rs: Vec<&Record> = records.iter().filter(|r| r.t == t).collect();
            let col =
                |f: &dyn Fn(&Record) -> f64| -> Vec<f64> { rs.iter().map(|r| f(r)).collect() };
            let opt = |f: &dyn Fn(&Record) -> Option<f64>| -> Vec<Option<f64>> {
                rs.iter().map(|r| f(r)).collect()
            };
            let v = col(&|r| r.v_true as f64);
            let surrogate = col(&|r| r.false_count_surrogate);
            let re = |f: &dyn Fn(&Record) -> Option<f64>| {
                moments_opt(&opt(&|r| f(r).map(|e| relative_error(e, r.fdp_true))))
            };
            let lad: Option<Vec<bool>> = rs.iter().map(|r| r.lad_converged).collect();
            ThresholdSummary {
                t,
                reps: rs.len(),
                mean_k: Moments::of(&col(&|r| r.k as f64)).mean,
                rejections: Moments::of(&col(&|r| r.r as f64)),
                false_discoveries: Moments::of(&v),
                var_false_discoveries: sample_variance(&v),
                false_count_surrogate: Moments::of(&surrogate),
                var_false_count_surrogate: sample_variance(&surrogate),
                fdp_true: Moments::of(&col(&|r| r.fdp_true)),
                fdp_limit: Moments::of(&col(&|r| r.fdp_limit)),
                approx_fdr: Moments::of(&col(&|r| r.approx_fdr)),
                fdp_pfa: moments_opt(&opt(&|r| r.fdp_pfa)),
                re_pfa: re(&|r| r.fdp_pfa),
                re_efron: re(&|r| r.fdp_efron),
                re_storey: re(&|r| r.fdp_storey),
                lad_unconverged: lad
                    .filter(|l| !l.is_empty())
                    .map(|l| l.iter().filter(|&&c| !c).count()),
                fdr_bh_procedure: moments_opt(&opt(&|r| r.fdp_bh_procedure)),
                fdr_storey_procedure: moments_opt(&opt(&|r| r.fdp_storey_procedure)),
            }
        })
        .collect()
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let shared = match cfg.design {
        DesignMode::Fixed => Some(build_instance(cfg, 0)?),
        DesignMode::PerReplication => None,
    };
    let reps: Vec<Replication> = (0..cfg.n_reps)
        .into_par_iter()
        .map(|rep| run_replication(cfg, rep, shared.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let mut records: Vec<Record> = Vec::with_capacity(cfg.n_reps * cfg.t_grid.len());
    let mut kept = Vec::new();
    for rep in reps {
        records.extend(rep.records);
        if let (Some(pv), Some(mask)) = (rep.pvalues, rep.is_null) {
            kept.push((pv, mask));
        }
    }

    let procedure_alpha = match cfg.alpha {
        None => None,
        Some(AlphaRule::Fixed(a)) => Some(a),
        Some(AlphaRule::PfaApprox) => {
            let t0 = cfg.t_grid[0];
            let xs: Vec<f64> = records
                .iter()
                .filter(|r| r.t == t0)
                .map(|r| r.approx_fdr)
                .collect();
            Some(Moments::of(&xs).mean)
        }
    };
    if let Some(alpha) = procedure_alpha {
        let outcomes: Vec<(f64, f64)> = kept
            .par_iter()
            .map(|(pv, mask)| -> Result<(f64, f64)> {
                let bh = bh_procedure(pv, alpha);
                let st = storey_procedure(pv, alpha, cfg.storey_lambda)?;
                Ok((
                    procedure_fdp(&bh.indices, mask),
                    procedure_fdp(&st.indices, mask),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let per_rep = cfg.t_grid.len();
        for (i, rec) in records.iter_mut().enumerate() {
            let (bh, st) = outcomes[i / per_rep];
            rec.fdp_bh_procedure = Some(bh);
            rec.fdp_storey_procedure = Some(st);
        }
    }

    let reference = if cfg.n_mc >= 2 {
        let first;
        let inst = match &shared {
            Some(inst) => inst,
            None => {
                first = build_instance(cfg, 0)?;
                &first
            }
        };
        cfg.t_grid
            .iter()
            .map(|&t| {
                Ok(ReferenceVariance {
                    t,
                    k: inst.model.k(),
                    n_mc: cfg.n_mc,
                    variance: variance_of_false_count(
                        t,
                        &inst.model,
                        None,
                        cfg.n_mc,
                        child_seed(cfg.seed, 1),
                    )?,
                })
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };

    Ok(ExperimentOutput {
        version: crate::VERSION.to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        procedure_alpha,
        summaries: summarize(&cfg.t_grid, &records),
        reference,
        records,
    })
}

impl ExperimentOutput {
    /// Writes `summary.json` and `records.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        io::ensure_dir(dir)?;
        io::write_json(&dir.join(SUMMARY_FILE), self)?;
        let path = dir.join(RECORDS_FILE);
        let mut w = csv::Writer::from_path(&path).map_err(|e| HarnessError::io(&path, e))?;
        for r in &self.records {
            w.serialize(r).map_err(|e| HarnessError::io(&path, e))?;
        }
        w.flush().map_err(|e| HarnessError::io(&path, e))
    }

    /// Reads a saved experiment and checks that its aggregates match a
    /// recomputation from the records.
    pub fn load(dir: &Path) -> Result<Self> {
        let mut out: ExperimentOutput = io::read_json(&dir.join(SUMMARY_FILE))?;
        let path = dir.join(RECORDS_FILE);
        let mut rd = csv::Reader::from_path(&path).map_err(|e| HarnessError::io(&path, e))?;
        for (i, row) in rd.deserialize().enumerate() {
            out.records.push(row.map_err(|e| HarnessError::Parse {
                path: path.clone(),
                line: i + 2,
                message: e.to_string(),
            })?);
        }
        out.check()?;
        Ok(out)
    }

    pub fn check(&self) -> Result<()> {
        let expected = self.config.n_reps * self.config.t_grid.len();
        if self.records.len() != expected {
            return Err(HarnessError::Inconsistent(format!(
                "{} records, expected {expected}",
                self.records.len()
            )));
        }
        let again = summarize(&self.config.t_grid, &self.records);
        if again != self.summaries {
            return Err(HarnessError::Inconsistent(
                "aggregates differ from a recomputation over the records".into(),
            ));
        }
        Ok(())
    }

    pub fn summary(&self, t: f64) -> Option<&ThresholdSummary> {
        self.summaries.iter().find(|s| s.t == t)
    }
}
