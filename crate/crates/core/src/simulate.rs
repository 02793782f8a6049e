//! Simulation studies: data-generating processes, a seeded replication
//! engine, and operating-characteristic metrics.
//!
//! A replication draws everything that does not depend on the estimand
//! (randomization, cell sizes, covariates, random effects, errors) once into
//! a [`RawTrial`]. Outcomes center the individual covariate at its
//! scheme-weighted period mean, so potential outcomes and the observed data
//! are realized separately for each weight scheme.

use std::fmt;

use rand_distr::{Bernoulli, Distribution, Gamma, Normal, Poisson, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Cell, Dataset, IndividualRecord, WeightScheme};
use crate::design::{randomize_with, AdoptionAssignment, DesignSpec};
use crate::error::{Error, Result};
use crate::estimands::{true_wate, PotentialOutcomeTable};
use crate::estimator::{estimate_with_policy, ModelSpec, RankPolicy};
use crate::seed::{stream_rng, SimRng};
use crate::variance::{confidence_interval, variance, Reference};

/// Threshold below which a truth is treated as zero for relative bias.
pub const RELATIVE_BIAS_GUARD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    /// Informative cell sizes, compound-symmetry normal random effects.
    #[serde(rename = "sim_i_main")]
    SimIMain,
    /// No cell-size term in the treatment effect.
    #[serde(rename = "scenario_i")]
    ScenarioI,
    /// Effect modification growing with calendar period.
    #[serde(rename = "scenario_ii")]
    ScenarioII,
    /// Cluster-period and random intervention effects.
    #[serde(rename = "scenario_iii")]
    ScenarioIII,
    /// Centered gamma cluster effects and centered Poisson errors.
    #[serde(rename = "scenario_iv")]
    ScenarioIV,
}

impl Scenario {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "sim_i_main" | "main" | "sim1" => Some(Scenario::SimIMain),
            "scenario_i" | "s1" => Some(Scenario::ScenarioI),
            "scenario_ii" | "s2" => Some(Scenario::ScenarioII),
            "scenario_iii" | "s3" => Some(Scenario::ScenarioIII),
            "scenario_iv" | "s4" => Some(Scenario::ScenarioIV),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::SimIMain => "sim_i_main",
            Scenario::ScenarioI => "scenario_i",
            Scenario::ScenarioII => "scenario_ii",
            Scenario::ScenarioIII => "scenario_iii",
            Scenario::ScenarioIV => "scenario_iv",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Variances of the random components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceComponents {
    /// Cluster random effect `c_i`.
    pub cluster: f64,
    /// Cluster-period random effect `b_ij`.
    pub cluster_period: f64,
    /// Random intervention effect `d_i`, added to treated outcomes only.
    pub intervention: f64,
    /// Individual error `e_ijk`.
    pub individual: f64,
}

impl VarianceComponents {
    pub fn default_for(scenario: Scenario) -> Self {
        match scenario {
            Scenario::ScenarioIII => VarianceComponents {
                cluster: 0.05,
                cluster_period: 0.05,
                intervention: 0.1,
                individual: 0.9,
            },
            _ => VarianceComponents {
                cluster: 0.1,
                cluster_period: 0.0,
                intervention: 0.0,
                individual: 0.9,
            },
        }
    }

    pub fn icc(&self) -> f64 {
        self.cluster / (self.cluster + self.individual)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub scenario: Scenario,
    pub num_clusters: usize,
    pub num_rollout_periods: usize,
    pub variances: VarianceComponents,
    pub seed: u64,
    /// Adds the cell size as a cluster-period covariate.
    pub adjust_cell_size: bool,
    /// Removes every treatment-effect term, so `Y(1) = Y(0)`.
    pub null_effect: bool,
}

impl DgpSpec {
    pub fn new(scenario: Scenario, num_clusters: usize, seed: u64) -> Self {
        DgpSpec {
            scenario,
            num_clusters,
            num_rollout_periods: 5,
            variances: VarianceComponents::default_for(scenario),
            seed,
            adjust_cell_size: false,
            null_effect: false,
        }
    }

    pub fn design(&self) -> Result<DesignSpec> {
        DesignSpec::balanced(self.num_clusters, self.num_rollout_periods)
            .map_err(|e| Error::Simulation(format!("{e}; the number of clusters must be a multiple of J+1")))
    }

    pub fn check(&self) -> Result<()> {
        let v = &self.variances;
        if [v.cluster, v.cluster_period, v.intervention, v.individual]
            .iter()
            .any(|x| !(x.is_finite() && *x >= 0.0))
        {
            return Err(Error::Simulation("variance components must be finite and nonnegative".into()));
        }
        if self.scenario == Scenario::ScenarioIV && (v.cluster == 0.0 || v.individual == 0.0) {
            return Err(Error::Simulation("centered gamma and Poisson draws need positive variances".into()));
        }
        self.design().map(|_| ())
    }
}

/// Estimand-free draws of one replication over periods `0..=J+1`.
#[derive(Debug, Clone)]
pub struct RawTrial {
    pub dgp: DgpSpec,
    pub design: DesignSpec,
    pub assignment: AdoptionAssignment,
    /// `N_ij`, cluster-major over `J + 2` periods.
    sizes: Vec<usize>,
    x1: Vec<f64>,
    x2: Vec<Vec<f64>>,
    errors: Vec<Vec<f64>>,
    cluster_effect: Vec<f64>,
    cluster_period_effect: Vec<f64>,
    intervention_effect: Vec<f64>,
}

fn centered_gamma(rng: &mut SimRng, variance: f64) -> f64 {
    let scale = variance.sqrt();
    Gamma::new(1.0, scale).expect("positive scale").sample(rng) - scale
}

fn centered_poisson(rng: &mut SimRng, variance: f64) -> f64 {
    let draw: f64 = Poisson::new(variance).expect("positive rate").sample(rng);
    draw - variance
}

fn normal(rng: &mut SimRng, variance: f64) -> f64 {
    if variance == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, variance.sqrt()).expect("finite sd").sample(rng)
}

/// Draws the estimand-free part of replication `replication` of `dgp`.
pub fn generate_raw(dgp: &DgpSpec, replication: u64) -> Result<RawTrial> {
    dgp.check()?;
    let design = dgp.design()?;
    let mut rng = stream_rng(dgp.seed, replication);
    let assignment = randomize_with(&design, &mut rng);
    let (n_i, n_p) = (dgp.num_clusters, dgp.num_rollout_periods + 2);
    let v = dgp.variances;
    let uniform_size = Uniform::new(10.0, 90.0).expect("valid range");
    let uniform_x = Uniform::new(-1.0, 1.0).expect("valid range");
    let coin = Bernoulli::new(0.5).expect("valid probability");

    let mut sizes = Vec::with_capacity(n_i * n_p);
    let mut x1 = Vec::with_capacity(n_i * n_p);
    let mut x2 = Vec::with_capacity(n_i * n_p);
    let mut errors = Vec::with_capacity(n_i * n_p);
    let mut cluster_period_effect = Vec::with_capacity(n_i * n_p);
    let mut cluster_effect = Vec::with_capacity(n_i);
    let mut intervention_effect = Vec::with_capacity(n_i);
    for i in 0..n_i {
        cluster_effect.push(draw_cluster_effect(dgp.scenario, v.cluster, &mut rng));
        intervention_effect.push(normal(&mut rng, v.intervention));
        let location = (i + 1) as f64 / n_i as f64;
        for j in 0..n_p {
            let raw: f64 = uniform_size.sample(&mut rng) + 2.5 * ((j + 1) * (j + 1)) as f64;
            let n = raw.round() as usize;
            sizes.push(n);
            x1.push(if coin.sample(&mut rng) { 1.0 } else { 0.0 });
            cluster_period_effect.push(normal(&mut rng, v.cluster_period));
            x2.push((0..n).map(|_| location + uniform_x.sample(&mut rng)).collect());
            errors.push((0..n).map(|_| draw_individual_error(dgp.scenario, v.individual, &mut rng)).collect());
        }
    }
    Ok(RawTrial {
        dgp: dgp.clone(),
        design,
        assignment,
        sizes,
        x1,
        x2,
        errors,
        cluster_effect,
        cluster_period_effect,
        intervention_effect,
    })
}

/// Observed data and the potential outcomes behind them for one scheme.
#[derive(Debug, Clone)]
pub struct Trial {
    pub dataset: Dataset,
    pub potential: PotentialOutcomeTable,
    pub assignment: AdoptionAssignment,
    pub design: DesignSpec,
}

impl RawTrial {
    fn num_periods_total(&self) -> usize {
        self.dgp.num_rollout_periods + 2
    }

    /// `N_ij` for period `j` in `0..=J+1`.
    pub fn cell_size(&self, i: usize, j: usize) -> usize {
        self.sizes[i * self.num_periods_total() + j]
    }

    /// Scheme-weighted mean of the individual covariate in each period `0..=J+1`.
    fn period_means_x2(&self, scheme: WeightScheme) -> Vec<f64> {
        let n_p = self.num_periods_total();
        (0..n_p)
            .map(|j| {
                let n_j: usize = (0..self.dgp.num_clusters).map(|i| self.cell_size(i, j)).sum();
                let (mut num, mut den) = (0.0, 0.0);
                for i in 0..self.dgp.num_clusters {
                    let c = i * n_p + j;
                    let w = scheme.individual_weight(self.sizes[c], n_j);
                    num += w * self.x2[c].iter().sum::<f64>();
                    den += w * self.sizes[c] as f64;
                }
                num / den
            })
            .collect()
    }

    /// `Y(0)` and `Y(1)` for every individual of every period `0..=J+1`.
    fn outcomes(&self, scheme: WeightScheme) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n_p = self.num_periods_total();
        let jn = self.dgp.num_rollout_periods as f64;
        let xbar = self.period_means_x2(scheme);
        let average_period_size = self.sizes.iter().sum::<usize>() as f64 / n_p as f64;
        let size_scale = 2.0 * self.dgp.num_clusters as f64 / average_period_size;
        let scenario = self.dgp.scenario;
        let mut y0 = Vec::with_capacity(self.sizes.len());
        let mut y1 = Vec::with_capacity(self.sizes.len());
        for i in 0..self.dgp.num_clusters {
            for j in 0..n_p {
                let c = i * n_p + j;
                let trend = (j + 1) as f64 / (jn + 2.0);
                let x1 = self.x1[c];
                let base = trend + x1 + self.cluster_effect[i] + self.cluster_period_effect[c];
                let size_term = match scenario {
                    Scenario::ScenarioI => 0.0,
                    _ => size_scale * self.sizes[c] as f64,
                };
                let (x1_effect, cube_scale) = match scenario {
                    Scenario::ScenarioII => (0.5 * (j + 1) as f64 * x1, trend),
                    _ => (0.5 * x1, 1.0),
                };
                let shift = size_term + x1_effect + self.intervention_effect[i];
                let mut c0 = Vec::with_capacity(self.sizes[c]);
                let mut c1 = Vec::with_capacity(self.sizes[c]);
                for (x2, e) in self.x2[c].iter().zip(&self.errors[c]) {
                    let d = x2 - xbar[j];
                    let v0 = base + d * d + e;
                    c0.push(v0);
                    c1.push(if self.dgp.null_effect { v0 } else { v0 + shift + cube_scale * d * d * d });
                }
                y0.push(c0);
                y1.push(c1);
            }
        }
        (y0, y1)
    }

    /// Potential outcomes over the rollout periods under `scheme`.
    pub fn potential_outcomes(&self, scheme: WeightScheme) -> PotentialOutcomeTable {
        let (y0, y1) = self.outcomes(scheme);
        self.rollout_table(y0, y1)
    }

    fn rollout_table(&self, y0: Vec<Vec<f64>>, y1: Vec<Vec<f64>>) -> PotentialOutcomeTable {
        let n_p = self.num_periods_total();
        let keep = |v: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            v.into_iter()
                .enumerate()
                .filter(|(c, _)| {
                    let j = c % n_p;
                    j >= 1 && j < n_p - 1
                })
                .map(|(_, cell)| cell)
                .collect()
        };
        PotentialOutcomeTable::new(
            (1..=self.dgp.num_clusters as i64).collect(),
            self.dgp.num_rollout_periods,
            keep(y0),
            keep(y1),
        )
        .expect("generated tables are complete")
    }

    /// Observed trial under `scheme`.
    pub fn realize(&self, scheme: WeightScheme) -> Trial {
        let n_p = self.num_periods_total();
        let jn = self.dgp.num_rollout_periods;
        let (y0, y1) = self.outcomes(scheme);
        let mut names = vec!["x1".to_string(), "x2".to_string()];
        if self.dgp.adjust_cell_size {
            names.push("cell_size".into());
        }
        let mut cells = Vec::with_capacity(self.dgp.num_clusters * jn);
        let mut outside = Vec::new();
        for i in 0..self.dgp.num_clusters {
            for j in 0..n_p {
                let c = i * n_p + j;
                let z = self.assignment.adoption_time(i) <= j;
                let ys = if z { &y1[c] } else { &y0[c] };
                let n = self.sizes[c];
                let mut covariates = vec![vec![self.x1[c]; n], self.x2[c].clone()];
                if self.dgp.adjust_cell_size {
                    covariates.push(vec![n as f64; n]);
                }
                if j == 0 || j == n_p - 1 {
                    outside.extend((0..n).map(|k| IndividualRecord {
                        cluster_id: (i + 1) as i64,
                        period: j,
                        outcome: ys[k],
                        covariates: covariates.iter().map(|col| col[k]).collect(),
                        treated: z,
                        declared_cell_size: None,
                    }));
                } else {
                    cells.push(Cell::new(z, ys.clone(), covariates));
                }
            }
        }
        let dataset = Dataset::from_cells((1..=self.dgp.num_clusters as i64).collect(), jn, names, cells)
            .expect("generated cells are consistent")
            .with_outside_rollout(outside);
        Trial {
            dataset,
            potential: self.rollout_table(y0, y1),
            assignment: self.assignment.clone(),
            design: self.design.clone(),
        }
    }
}

/// Replication `replication` of `dgp`, realized under `scheme`.
pub fn generate_trial(dgp: &DgpSpec, replication: u64, scheme: WeightScheme) -> Result<Trial> {
    Ok(generate_raw(dgp, replication)?.realize(scheme))
}

/// Operating characteristics of one estimator under one scheme.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub replications: usize,
    pub mean_truth: f64,
    /// Mean relative bias, or mean bias when `bias_is_absolute`.
    pub bias: f64,
    pub bias_is_absolute: bool,
    pub rmse: f64,
    pub ese: f64,
    pub ase_db: f64,
    pub ase_crse: f64,
    pub coverage_db: f64,
    pub coverage_crse: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

/// Summarizes a replication series. Coverage uses normal intervals at level
/// `1 - alpha`.
pub fn metrics(estimates: &[f64], truths: &[f64], ses_db: &[f64], ses_crse: &[f64], alpha: f64) -> Result<Metrics> {
    let n = estimates.len();
    if truths.len() != n || ses_db.len() != n || ses_crse.len() != n {
        return Err(Error::LengthMismatch(format!(
            "{n} estimates, {} truths, {} DB and {} CRSE standard errors",
            truths.len(),
            ses_db.len(),
            ses_crse.len()
        )));
    }
    if n < 2 {
        return Err(Error::Simulation("metrics need at least two replications".into()));
    }
    let errors: Vec<f64> = estimates.iter().zip(truths).map(|(e, t)| e - t).collect();
    let bias_is_absolute = truths.iter().any(|t| t.abs() <= RELATIVE_BIAS_GUARD);
    let bias = if bias_is_absolute {
        mean(&errors)
    } else {
        mean(&errors.iter().zip(truths).map(|(d, t)| d / t).collect::<Vec<_>>())
    };
    let coverage = |ses: &[f64]| {
        let hits = (0..n)
            .filter(|&r| {
                let (lo, hi) = confidence_interval(estimates[r], ses[r], alpha);
                lo <= truths[r] && truths[r] <= hi
            })
            .count();
        hits as f64 / n as f64
    };
    Ok(Metrics {
        replications: n,
        mean_truth: mean(truths),
        bias,
        bias_is_absolute,
        rmse: mean(&errors.iter().map(|d| d * d).collect::<Vec<_>>()).sqrt(),
        ese: sample_sd(estimates),
        ase_db: mean(ses_db),
        ase_crse: mean(ses_crse),
        coverage_db: coverage(ses_db),
        coverage_crse: coverage(ses_crse),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub model: ModelSpec,
    pub scheme: WeightScheme,
    #[serde(flatten)]
    pub metrics: Metrics,
    /// `(ESE_unadjusted / ESE_model)^2`; absent when the unadjusted
    /// estimator was not run.
    pub relative_efficiency: Option<f64>,
    /// Replications in which an aliased covariate column was dropped.
    pub aliased_fits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsTable {
    pub dgp: DgpSpec,
    pub replications: usize,
    pub alpha: f64,
    pub relative_efficiency: &'static str,
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn row(&self, model: ModelSpec, scheme: WeightScheme) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.model == model && r.scheme == scheme)
    }

    pub const CSV_HEADER: [&'static str; 18] = [
        "scenario",
        "clusters",
        "rollout_periods",
        "seed",
        "model",
        "scheme",
        "replications",
        "mean_truth",
        "bias",
        "bias_kind",
        "rmse",
        "ese",
        "ase_db",
        "ase_crse",
        "coverage_db",
        "coverage_crse",
        "re",
        "aliased_fits",
    ];

    pub fn write_csv<W: std::io::Write>(&self, writer: W, header: bool) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        if header {
            w.write_record(Self::CSV_HEADER)?;
        }
        for r in &self.rows {
            let m = &r.metrics;
            w.write_record([
                self.dgp.scenario.name().to_string(),
                self.dgp.num_clusters.to_string(),
                self.dgp.num_rollout_periods.to_string(),
                self.dgp.seed.to_string(),
                r.model.short_name().to_string(),
                r.scheme.short_name().to_string(),
                m.replications.to_string(),
                m.mean_truth.to_string(),
                m.bias.to_string(),
                if m.bias_is_absolute { "absolute" } else { "relative" }.to_string(),
                m.rmse.to_string(),
                m.ese.to_string(),
                m.ase_db.to_string(),
                m.ase_crse.to_string(),
                m.coverage_db.to_string(),
                m.coverage_crse.to_string(),
                r.relative_efficiency.map(|v| v.to_string()).unwrap_or_default(),
                r.aliased_fits.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-replication outcome of every (model, scheme) pair.
#[derive(Debug, Clone)]
struct ReplicationOutput {
    truths: Vec<f64>,
    /// `[scheme][model] -> (estimate, se_db, se_crse, aliased)`
    fits: Vec<Vec<(f64, f64, f64, bool)>>,
}

fn run_one(dgp: &DgpSpec, replication: u64, models: &[ModelSpec], schemes: &[WeightScheme]) -> Result<ReplicationOutput> {
    let raw = generate_raw(dgp, replication)?;
    let mut truths = Vec::with_capacity(schemes.len());
    let mut fits = Vec::with_capacity(schemes.len());
    for &scheme in schemes {
        let trial = raw.realize(scheme);
        truths.push(true_wate(&trial.potential, scheme)?);
        let wt = crate::data::compute_weights(&trial.dataset, scheme)?;
        let mut row = Vec::with_capacity(models.len());
        for &model in models {
            let fit = estimate_with_policy(&trial.dataset, model, &wt, RankPolicy::DropAliasedCovariates)?;
            let v = variance(
                &fit,
                &trial.dataset,
                &wt,
                &trial.design,
                &trial.assignment,
                0.05,
                Reference::Normal,
            )?;
            row.push((fit.tau, v.se_db, v.se_crse, !fit.dropped.is_empty()));
        }
        fits.push(row);
    }
    Ok(ReplicationOutput { truths, fits })
}

/// Runs `replications` seeded replications and summarizes every model under
/// every scheme. Results do not depend on the size of the rayon pool.
pub fn run_replications(
    dgp: &DgpSpec,
    models: &[ModelSpec],
    schemes: &[WeightScheme],
    replications: usize,
    alpha: f64,
) -> Result<MetricsTable> {
    if replications < 2 {
        return Err(Error::Simulation("at least two replications are required".into()));
    }
    if models.is_empty() || schemes.is_empty() {
        return Err(Error::Simulation("no models or schemes requested".into()));
    }
    dgp.check()?;
    let outputs: Vec<Result<ReplicationOutput>> = (0..replications as u64)
        .into_par_iter()
        .map(|r| run_one(dgp, r, models, schemes))
        .collect();
    let mut done = Vec::with_capacity(replications);
    for (index, out) in outputs.into_iter().enumerate() {
        done.push(out.map_err(|cause| Error::Replication {
            index,
            cause: Box::new(cause),
        })?);
    }

    let mut rows = Vec::new();
    for (s, &scheme) in schemes.iter().enumerate() {
        let truths: Vec<f64> = done.iter().map(|o| o.truths[s]).collect();
        let mut scheme_rows = Vec::new();
        for (m, &model) in models.iter().enumerate() {
            let pick = |k: usize| -> Vec<f64> {
                done.iter()
                    .map(|o| {
                        let t = o.fits[s][m];
                        [t.0, t.1, t.2][k]
                    })
                    .collect()
            };
            let metrics = metrics(&pick(0), &truths, &pick(1), &pick(2), alpha)?;
            scheme_rows.push(MetricsRow {
                model,
                scheme,
                metrics,
                relative_efficiency: None,
                aliased_fits: done.iter().filter(|o| o.fits[s][m].3).count(),
            });
        }
        if let Some(un) = scheme_rows.iter().find(|r| r.model == ModelSpec::Unadjusted).map(|r| r.metrics.ese) {
            for r in &mut scheme_rows {
                r.relative_efficiency = Some((un / r.metrics.ese).powi(2));
            }
        }
        rows.extend(scheme_rows);
    }
    Ok(MetricsTable {
        dgp: dgp.clone(),
        replications,
        alpha,
        relative_efficiency: "(ESE_unadjusted / ESE_model)^2",
        rows,
    })
}

/// Per-replication true estimands, `[replication][scheme]`.
pub fn truth_replications(dgp: &DgpSpec, schemes: &[WeightScheme], replications: usize) -> Result<Vec<Vec<f64>>> {
    dgp.check()?;
    (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            let raw = generate_raw(dgp, r)?;
            schemes
                .iter()
                .map(|&s| true_wate(&raw.potential_outcomes(s), s))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .enumerate()
        .map(|(index, r)| r.map_err(|cause| Error::Replication { index, cause: Box::new(cause) }))
        .collect()
}

/// Cluster random effect with variance `variance` under `scenario`.
pub fn draw_cluster_effect(scenario: Scenario, variance: f64, rng: &mut SimRng) -> f64 {
    match scenario {
        Scenario::ScenarioIV => centered_gamma(rng, variance),
        _ => normal(rng, variance),
    }
}

/// Individual error with variance `variance` under `scenario`.
pub fn draw_individual_error(scenario: Scenario, variance: f64, rng: &mut SimRng) -> f64 {
    match scenario {
        Scenario::ScenarioIV => centered_poisson(rng, variance),
        _ => normal(rng, variance),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_names_round_trip() {
        for s in [
            Scenario::SimIMain,
            Scenario::ScenarioI,
            Scenario::ScenarioII,
            Scenario::ScenarioIII,
            Scenario::ScenarioIV,
        ] {
            let json = serde_json::to_string(&s).unwrap();
            assert_eq!(json, format!("\"{}\"", s.name()));
            assert_eq!(serde_json::from_str::<Scenario>(&json).unwrap(), s);
            assert_eq!(Scenario::parse(s.name()), Some(s));
        }
    }

    #[test]
    fn metrics_exact_estimates() {
        let t = [0.5, 0.6, 0.7];
        let m = metrics(&t, &t, &[0.1; 3], &[0.2; 3], 0.05).unwrap();
        assert_eq!(m.bias, 0.0);
        assert_eq!(m.rmse, 0.0);
        assert_eq!(m.coverage_db, 1.0);
        assert_eq!(m.coverage_crse, 1.0);
    }

    #[test]
    fn metrics_hand_series() {
        let est = [1.1, 0.9, 1.3, 0.7];
        let truth = [1.0; 4];
        let se_db = [0.05, 0.2, 0.2, 0.1];
        let se_crse = [0.1, 0.1, 0.1, 0.1];
        let m = metrics(&est, &truth, &se_db, &se_crse, 0.05).unwrap();
        // errors 0.1, -0.1, 0.3, -0.3
        assert!(m.bias.abs() < 1e-15);
        assert!(!m.bias_is_absolute);
        assert!((m.rmse - 0.05f64.sqrt()).abs() < 1e-12);
        // sample sd of estimates: sum sq dev 0.2 / 3
        assert!((m.ese - (0.2f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((m.ase_db - 0.1375).abs() < 1e-12);
        assert!((m.ase_crse - 0.1).abs() < 1e-12);
        // half-widths 1.96*se: db (0.098, 0.392, 0.392, 0.196); crse 0.196 each
        assert_eq!(m.coverage_db, 0.5);
        assert_eq!(m.coverage_crse, 0.5);
    }

    #[test]
    fn zero_truth_switches_to_absolute_bias() {
        let m = metrics(&[0.1, 0.3], &[0.0, 0.0], &[1.0; 2], &[1.0; 2], 0.05).unwrap();
        assert!(m.bias_is_absolute);
        assert!((m.bias - 0.2).abs() < 1e-15);
        assert!(matches!(
            metrics(&[0.1], &[0.0, 0.0], &[1.0], &[1.0], 0.05),
            Err(Error::LengthMismatch(_))
        ));
    }

    #[test]
    fn size_law_range_in_first_period() {
        let raw = generate_raw(&DgpSpec::new(Scenario::SimIMain, 12, 3), 0).unwrap();
        for i in 0..12 {
            let n = raw.cell_size(i, 0);
            assert!((13..=93).contains(&n), "{n}");
        }
    }

    #[test]
    fn invalid_cluster_count() {
        assert!(matches!(
            generate_raw(&DgpSpec::new(Scenario::SimIMain, 13, 3), 0),
            Err(Error::Simulation(_))
        ));
    }

    #[test]
    fn realized_trial_is_consistent() {
        let raw = generate_raw(&DgpSpec::new(Scenario::ScenarioIII, 12, 8), 4).unwrap();
        let trial = raw.realize(WeightScheme::InverseCellSize);
        assert_eq!(trial.dataset.num_rollout_periods(), 5);
        assert_eq!(trial.dataset.adoption_assignment().unwrap(), trial.assignment);
        assert!(crate::data::validate(&trial.dataset, &trial.design).is_empty());
        let obs = trial.potential.observe(&trial.assignment).unwrap();
        for i in 0..12 {
            for j in 1..=5 {
                assert_eq!(obs.cell(i, j).outcomes, trial.dataset.cell(i, j).outcomes);
            }
        }
    }

    #[test]
    fn replications_are_reproducible() {
        let dgp = DgpSpec::new(Scenario::SimIMain, 12, 21);
        let a = generate_raw(&dgp, 5).unwrap().realize(WeightScheme::Uniform);
        let b = generate_raw(&dgp, 5).unwrap().realize(WeightScheme::Uniform);
        assert_eq!(a.dataset, b.dataset);
        let c = generate_raw(&dgp, 6).unwrap().realize(WeightScheme::Uniform);
        assert_ne!(a.dataset, c.dataset);
    }
}
