//! Individual-level trial data, estimand weights and covariate centering.
//!
//! A [`Dataset`] is the complete `I x J` grid of rollout cluster-periods.
//! Records from the pre-rollout (period 0) and post-rollout (period `J+1`)
//! periods are kept aside: they can feed baseline summaries but never enter
//! the estimation sample.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::design::{AdoptionAssignment, DesignSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct IndividualRecord {
    pub cluster_id: i64,
    pub period: usize,
    pub outcome: f64,
    pub covariates: Vec<f64>,
    pub treated: bool,
    /// Cell size declared in the input, if the input carries one.
    pub declared_cell_size: Option<usize>,
}

/// One rollout cluster-period. Covariates are stored column-major.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cell {
    pub treated: bool,
    pub outcomes: Vec<f64>,
    pub covariates: Vec<Vec<f64>>,
    pub(crate) declared_size: Option<usize>,
    pub(crate) mixed_treatment: bool,
}

impl Cell {
    pub fn new(treated: bool, outcomes: Vec<f64>, covariates: Vec<Vec<f64>>) -> Self {
        Cell {
            treated,
            outcomes,
            covariates,
            declared_size: None,
            mixed_treatment: false,
        }
    }

    pub fn size(&self) -> usize {
        self.outcomes.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    cluster_ids: Vec<i64>,
    num_rollout_periods: usize,
    covariate_names: Vec<String>,
    cells: Vec<Cell>,
    outside_rollout: Vec<IndividualRecord>,
}

impl Dataset {
    /// Assembles a dataset from cells laid out cluster-major:
    /// `cells[i * J + (j - 1)]` is cluster `i`, rollout period `j`.
    pub fn from_cells(
        cluster_ids: Vec<i64>,
        num_rollout_periods: usize,
        covariate_names: Vec<String>,
        cells: Vec<Cell>,
    ) -> Result<Self> {
        if cells.len() != cluster_ids.len() * num_rollout_periods {
            return Err(Error::Data(format!(
                "{} cells for {} clusters x {} periods",
                cells.len(),
                cluster_ids.len(),
                num_rollout_periods
            )));
        }
        let p = covariate_names.len();
        for cell in &cells {
            if cell.covariates.len() != p || cell.covariates.iter().any(|c| c.len() != cell.size()) {
                return Err(Error::Data("covariate columns do not match the cell size".into()));
            }
        }
        Ok(Dataset {
            cluster_ids,
            num_rollout_periods,
            covariate_names,
            cells,
            outside_rollout: Vec::new(),
        })
    }

    /// Groups records into cluster-period cells. Periods `1..=J` are rollout;
    /// periods 0 and `J+1` are retained separately.
    pub fn from_records(
        records: Vec<IndividualRecord>,
        num_rollout_periods: usize,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let p = covariate_names.len();
        let mut ids: Vec<i64> = records.iter().map(|r| r.cluster_id).collect();
        ids.sort_unstable();
        ids.dedup();
        let index: BTreeMap<i64, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let j_max = num_rollout_periods;
        let mut cells: Vec<Option<Cell>> = vec![None; ids.len() * j_max];
        let mut outside = Vec::new();
        for rec in records {
            if rec.covariates.len() != p {
                return Err(Error::Data(format!(
                    "cluster {} period {}: {} covariates, expected {p}",
                    rec.cluster_id,
                    rec.period,
                    rec.covariates.len()
                )));
            }
            if !rec.outcome.is_finite() || rec.covariates.iter().any(|x| !x.is_finite()) {
                return Err(Error::Data(format!(
                    "cluster {} period {}: missing or non-finite value",
                    rec.cluster_id, rec.period
                )));
            }
            if rec.period > j_max + 1 {
                return Err(Error::Data(format!(
                    "cluster {}: period {} beyond post-rollout period {}",
                    rec.cluster_id,
                    rec.period,
                    j_max + 1
                )));
            }
            if rec.period == 0 || rec.period == j_max + 1 {
                outside.push(rec);
                continue;
            }
            let slot = &mut cells[index[&rec.cluster_id] * j_max + rec.period - 1];
            let cell = slot.get_or_insert_with(|| Cell {
                treated: rec.treated,
                covariates: vec![Vec::new(); p],
                declared_size: rec.declared_cell_size,
                ..Cell::default()
            });
            if cell.treated != rec.treated {
                cell.mixed_treatment = true;
            }
            if rec.declared_cell_size != cell.declared_size {
                // keep the first declaration; any disagreement surfaces as a size mismatch
                cell.declared_size = cell.declared_size.or(rec.declared_cell_size);
            }
            cell.outcomes.push(rec.outcome);
            for (col, x) in cell.covariates.iter_mut().zip(&rec.covariates) {
                col.push(*x);
            }
        }
        let cells = cells
            .into_iter()
            .map(|c| {
                c.unwrap_or_else(|| Cell {
                    covariates: vec![Vec::new(); p],
                    ..Cell::default()
                })
            })
            .collect();
        Ok(Dataset {
            cluster_ids: ids,
            num_rollout_periods,
            covariate_names,
            cells,
            outside_rollout: outside,
        })
    }

    pub fn num_clusters(&self) -> usize {
        self.cluster_ids.len()
    }

    pub fn num_rollout_periods(&self) -> usize {
        self.num_rollout_periods
    }

    pub fn num_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn cluster_ids(&self) -> &[i64] {
        &self.cluster_ids
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn outside_rollout(&self) -> &[IndividualRecord] {
        &self.outside_rollout
    }

    /// Cell of cluster index `i` (0-based) in rollout period `j` (1-based).
    pub fn cell(&self, i: usize, j: usize) -> &Cell {
        &self.cells[i * self.num_rollout_periods + j - 1]
    }

    pub fn cell_size(&self, i: usize, j: usize) -> usize {
        self.cell(i, j).size()
    }

    /// `N_j`.
    pub fn period_size(&self, j: usize) -> usize {
        (0..self.num_clusters()).map(|i| self.cell_size(i, j)).sum()
    }

    /// `N_i` over rollout periods.
    pub fn cluster_size(&self, i: usize) -> usize {
        (1..=self.num_rollout_periods).map(|j| self.cell_size(i, j)).sum()
    }

    /// `N`, the number of rollout individuals.
    pub fn total_size(&self) -> usize {
        self.cells.iter().map(Cell::size).sum()
    }

    pub fn is_treated(&self, i: usize, j: usize) -> bool {
        self.cell(i, j).treated
    }

    /// `I x J` matrix of cell sizes, cluster-major.
    pub fn cell_sizes(&self) -> Vec<usize> {
        self.cells.iter().map(Cell::size).collect()
    }

    /// Adoption times read off the treatment indicators.
    pub fn adoption_assignment(&self) -> Result<AdoptionAssignment> {
        let j_max = self.num_rollout_periods;
        let mut times = Vec::with_capacity(self.num_clusters());
        for i in 0..self.num_clusters() {
            let mut adoption = j_max + 1;
            for j in 1..=j_max {
                let z = self.is_treated(i, j);
                if z && adoption > j_max {
                    adoption = j;
                } else if !z && adoption <= j_max {
                    return Err(Error::Consistency(format!(
                        "cluster {} returns to control in period {j}",
                        self.cluster_ids[i]
                    )));
                }
            }
            times.push(adoption);
        }
        Ok(AdoptionAssignment::from_times(times))
    }

    /// The rollout schedule implied by the treatment indicators.
    pub fn inferred_design(&self) -> Result<DesignSpec> {
        let counts = (1..=self.num_rollout_periods)
            .map(|j| (0..self.num_clusters()).filter(|&i| self.is_treated(i, j)).count())
            .collect();
        DesignSpec::new(self.num_clusters(), counts)
    }

    /// Copy with every outcome mapped through `f`.
    pub fn map_outcomes(&self, f: impl Fn(f64) -> f64) -> Dataset {
        let mut out = self.clone();
        for cell in &mut out.cells {
            for y in &mut cell.outcomes {
                *y = f(*y);
            }
        }
        out
    }

    /// Copy with covariate column `col` mapped through `f`.
    pub fn map_covariate(&self, col: usize, f: impl Fn(f64) -> f64) -> Dataset {
        let mut out = self.clone();
        for cell in &mut out.cells {
            for x in &mut cell.covariates[col] {
                *x = f(*x);
            }
        }
        out
    }

    /// Copy with `N_ij` appended as an extra cluster-period covariate.
    pub fn with_cell_size_covariate(&self, name: &str) -> Dataset {
        let mut out = self.clone();
        out.covariate_names.push(name.to_string());
        for cell in &mut out.cells {
            let n = cell.size() as f64;
            cell.covariates.push(vec![n; cell.size()]);
        }
        out
    }
}

/// Estimand-defining individual weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum WeightScheme {
    /// `w_ijk = 1`; targets the individual-average effect.
    #[serde(rename = "ind")]
    Uniform,
    /// `w_ijk = 1/N_j`; targets the period-average effect.
    #[serde(rename = "period")]
    InversePeriodSize,
    /// `w_ijk = 1/N_ij`; targets the cell-average effect.
    #[serde(rename = "cell")]
    InverseCellSize,
}

impl WeightScheme {
    pub const ALL: [WeightScheme; 3] = [
        WeightScheme::Uniform,
        WeightScheme::InversePeriodSize,
        WeightScheme::InverseCellSize,
    ];

    pub fn short_name(&self) -> &'static str {
        match self {
            WeightScheme::Uniform => "ind",
            WeightScheme::InversePeriodSize => "period",
            WeightScheme::InverseCellSize => "cell",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ind" | "uniform" | "individual" => Some(WeightScheme::Uniform),
            "period" | "inverse_period_size" => Some(WeightScheme::InversePeriodSize),
            "cell" | "inverse_cell_size" => Some(WeightScheme::InverseCellSize),
            _ => None,
        }
    }

    /// `w_ijk` for an individual in a cell of size `n_ij` within a period of size `n_j`.
    pub fn individual_weight(&self, n_ij: usize, n_j: usize) -> f64 {
        match self {
            WeightScheme::Uniform => 1.0,
            WeightScheme::InversePeriodSize => 1.0 / n_j as f64,
            WeightScheme::InverseCellSize => 1.0 / n_ij as f64,
        }
    }
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

/// Treatment-free part of a weight table: depends only on cell sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct CellWeights {
    scheme: WeightScheme,
    num_clusters: usize,
    num_periods: usize,
    individual: Vec<f64>,
    cell_total: Vec<f64>,
    period_total: Vec<f64>,
    normalized: Vec<f64>,
}

impl CellWeights {
    /// `sizes` is the cluster-major `I x J` grid of `N_ij`.
    pub fn from_sizes(sizes: &[usize], num_clusters: usize, num_periods: usize, scheme: WeightScheme) -> Result<Self> {
        if sizes.len() != num_clusters * num_periods {
            return Err(Error::LengthMismatch(format!(
                "{} cell sizes for a {num_clusters} x {num_periods} grid",
                sizes.len()
            )));
        }
        if let Some(pos) = sizes.iter().position(|&n| n == 0) {
            return Err(Error::EmptyCell {
                cluster: (pos / num_periods) as i64,
                period: pos % num_periods + 1,
            });
        }
        let period_size: Vec<usize> = (0..num_periods)
            .map(|j| (0..num_clusters).map(|i| sizes[i * num_periods + j]).sum())
            .collect();
        let mut individual = Vec::with_capacity(sizes.len());
        let mut cell_total = Vec::with_capacity(sizes.len());
        for i in 0..num_clusters {
            for j in 0..num_periods {
                let n = sizes[i * num_periods + j];
                let w = scheme.individual_weight(n, period_size[j]);
                individual.push(w);
                cell_total.push(w * n as f64);
            }
        }
        let period_total: Vec<f64> = (0..num_periods)
            .map(|j| (0..num_clusters).map(|i| cell_total[i * num_periods + j]).sum())
            .collect();
        let grand: f64 = period_total.iter().sum();
        let normalized = period_total.iter().map(|w| w / grand).collect();
        Ok(CellWeights {
            scheme,
            num_clusters,
            num_periods,
            individual,
            cell_total,
            period_total,
            normalized,
        })
    }

    pub fn scheme(&self) -> WeightScheme {
        self.scheme
    }

    /// `w_ijk` (constant within a cell), `j` 1-based.
    pub fn individual(&self, i: usize, j: usize) -> f64 {
        self.individual[i * self.num_periods + j - 1]
    }

    /// `w_ij`.
    pub fn cell(&self, i: usize, j: usize) -> f64 {
        self.cell_total[i * self.num_periods + j - 1]
    }

    /// `w_j`.
    pub fn period(&self, j: usize) -> f64 {
        self.period_total[j - 1]
    }

    pub fn period_totals(&self) -> &[f64] {
        &self.period_total
    }

    /// `ϖ_j = w_j / Σ w_j`, indexed from 0.
    pub fn normalized(&self) -> &[f64] {
        &self.normalized
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn num_periods(&self) -> usize {
        self.num_periods
    }
}

/// Weights for an observed trial, including the treatment-arm period totals.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    cells: CellWeights,
    treated_total: Vec<f64>,
    control_total: Vec<f64>,
}

impl WeightTable {
    pub fn scheme(&self) -> WeightScheme {
        self.cells.scheme
    }

    pub fn cell_weights(&self) -> &CellWeights {
        &self.cells
    }

    pub fn individual(&self, i: usize, j: usize) -> f64 {
        self.cells.individual(i, j)
    }

    pub fn cell(&self, i: usize, j: usize) -> f64 {
        self.cells.cell(i, j)
    }

    pub fn period(&self, j: usize) -> f64 {
        self.cells.period(j)
    }

    pub fn normalized(&self) -> &[f64] {
        self.cells.normalized()
    }

    /// `w_j^1`.
    pub fn treated_total(&self, j: usize) -> f64 {
        self.treated_total[j - 1]
    }

    /// `w_j^0`.
    pub fn control_total(&self, j: usize) -> f64 {
        self.control_total[j - 1]
    }

    /// `w_j^z`.
    pub fn arm_total(&self, j: usize, treated: bool) -> f64 {
        if treated {
            self.treated_total(j)
        } else {
            self.control_total(j)
        }
    }
}

/// Weights of `scheme` over the rollout periods of `ds`.
pub fn compute_weights(ds: &Dataset, scheme: WeightScheme) -> Result<WeightTable> {
    let cells = CellWeights::from_sizes(&ds.cell_sizes(), ds.num_clusters(), ds.num_rollout_periods(), scheme)
        .map_err(|e| match e {
            Error::EmptyCell { cluster, period } => Error::EmptyCell {
                cluster: ds.cluster_ids()[cluster as usize],
                period,
            },
            other => other,
        })?;
    let j_max = ds.num_rollout_periods();
    let mut treated_total = vec![0.0; j_max];
    let mut control_total = vec![0.0; j_max];
    for i in 0..ds.num_clusters() {
        for j in 1..=j_max {
            if ds.is_treated(i, j) {
                treated_total[j - 1] += cells.cell(i, j);
            } else {
                control_total[j - 1] += cells.cell(i, j);
            }
        }
    }
    Ok(WeightTable {
        cells,
        treated_total,
        control_total,
    })
}

/// Period-centered covariates `X̃_ijk = X_ijk - X̄_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredCovariates {
    num_covariates: usize,
    num_periods: usize,
    period_means: Vec<f64>,
    values: Vec<Vec<Vec<f64>>>,
    cell_means: Vec<f64>,
}

impl CenteredCovariates {
    pub fn num_covariates(&self) -> usize {
        self.num_covariates
    }

    /// `X̄_j`, column `l`.
    pub fn period_mean(&self, j: usize, l: usize) -> f64 {
        self.period_means[(j - 1) * self.num_covariates + l]
    }

    /// Centered column `l` of cell `(i, j)`.
    pub fn column(&self, i: usize, j: usize, l: usize) -> &[f64] {
        &self.values[i * self.num_periods + j - 1][l]
    }

    pub fn value(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.values[i * self.num_periods + j - 1][l][k]
    }

    /// Weighted cell mean `X̃_ij` of the centered covariates.
    pub fn cell_mean(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.num_periods + j - 1) * self.num_covariates;
        &self.cell_means[start..start + self.num_covariates]
    }
}

fn weighted_cell_mean(values: &[f64], w: f64) -> f64 {
    // w_ijk is constant within a cell, so the weighted mean is the plain mean;
    // written with weights to keep the definition visible.
    let num: f64 = values.iter().map(|x| w * x).sum();
    num / (w * values.len() as f64)
}

/// Centers each covariate at its scheme-weighted rollout-period mean.
pub fn center_covariates(ds: &Dataset, wt: &WeightTable) -> Result<CenteredCovariates> {
    let p = ds.num_covariates();
    let (n_i, n_j) = (ds.num_clusters(), ds.num_rollout_periods());
    let mut raw_cell_means = vec![0.0; n_i * n_j * p];
    for i in 0..n_i {
        for j in 1..=n_j {
            let cell = ds.cell(i, j);
            if cell.size() == 0 {
                return Err(Error::EmptyCell {
                    cluster: ds.cluster_ids()[i],
                    period: j,
                });
            }
            for l in 0..p {
                let col = &cell.covariates[l];
                if col.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Data(format!(
                        "missing covariate {} in cluster {} period {j}",
                        ds.covariate_names()[l],
                        ds.cluster_ids()[i]
                    )));
                }
                raw_cell_means[(i * n_j + j - 1) * p + l] = weighted_cell_mean(col, wt.individual(i, j));
            }
        }
    }
    let mut period_means = vec![0.0; n_j * p];
    for j in 1..=n_j {
        for l in 0..p {
            let num: f64 = (0..n_i).map(|i| wt.cell(i, j) * raw_cell_means[(i * n_j + j - 1) * p + l]).sum();
            period_means[(j - 1) * p + l] = num / wt.period(j);
        }
    }
    let mut values = Vec::with_capacity(n_i * n_j);
    let mut cell_means = Vec::with_capacity(n_i * n_j * p);
    for i in 0..n_i {
        for j in 1..=n_j {
            let cell = ds.cell(i, j);
            let centered: Vec<Vec<f64>> = (0..p)
                .map(|l| {
                    let m = period_means[(j - 1) * p + l];
                    cell.covariates[l].iter().map(|x| x - m).collect()
                })
                .collect();
            for col in &centered {
                cell_means.push(weighted_cell_mean(col, wt.individual(i, j)));
            }
            values.push(centered);
        }
    }
    Ok(CenteredCovariates {
        num_covariates: p,
        num_periods: n_j,
        period_means,
        values,
        cell_means,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationIssue {
    ClusterCount { expected: usize, observed: usize },
    RolloutPeriodCount { expected: usize, observed: usize },
    EmptyCell { cluster: i64, period: usize },
    MixedTreatmentInCell { cluster: i64, period: usize },
    NonMonotoneTreatment { cluster: i64, period: usize },
    ArmCountMismatch { period: usize, expected: usize, observed: usize },
    DegeneratePeriod { period: usize, treated: usize, clusters: usize },
    DeclaredSizeMismatch { cluster: i64, period: usize, declared: usize, observed: usize },
    NonFiniteValue { cluster: i64, period: usize },
    TreatedBeforeRollout { cluster: i64 },
    UntreatedAfterRollout { cluster: i64 },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ValidationIssue::*;
        match self {
            ClusterCount { expected, observed } => write!(f, "design has {expected} clusters, data has {observed}"),
            RolloutPeriodCount { expected, observed } => {
                write!(f, "design has {expected} rollout periods, data has {observed}")
            }
            EmptyCell { cluster, period } => write!(f, "cluster {cluster} period {period}: no individuals"),
            MixedTreatmentInCell { cluster, period } => {
                write!(f, "cluster {cluster} period {period}: treatment differs across individuals")
            }
            NonMonotoneTreatment { cluster, period } => {
                write!(f, "cluster {cluster} period {period}: returns to control after treatment")
            }
            ArmCountMismatch { period, expected, observed } => {
                write!(f, "period {period}: {observed} treated clusters, design expects {expected}")
            }
            DegeneratePeriod { period, treated, clusters } => write!(
                f,
                "period {period}: {treated} of {clusters} clusters treated, no treatment contrast"
            ),
            DeclaredSizeMismatch { cluster, period, declared, observed } => write!(
                f,
                "cluster {cluster} period {period}: declared size {declared}, observed {observed} rows"
            ),
            NonFiniteValue { cluster, period } => write!(f, "cluster {cluster} period {period}: non-finite value"),
            TreatedBeforeRollout { cluster } => write!(f, "cluster {cluster}: treated in pre-rollout period 0"),
            UntreatedAfterRollout { cluster } => write!(f, "cluster {cluster}: untreated in post-rollout period"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Reports every structural problem with `ds` relative to `spec`.
pub fn validate(ds: &Dataset, spec: &DesignSpec) -> ValidationReport {
    let mut issues = Vec::new();
    let (n_i, n_j) = (ds.num_clusters(), ds.num_rollout_periods());
    if n_i != spec.num_clusters() {
        issues.push(ValidationIssue::ClusterCount {
            expected: spec.num_clusters(),
            observed: n_i,
        });
    }
    if n_j != spec.num_rollout_periods() {
        issues.push(ValidationIssue::RolloutPeriodCount {
            expected: spec.num_rollout_periods(),
            observed: n_j,
        });
    }
    for i in 0..n_i {
        let id = ds.cluster_ids()[i];
        let mut seen_treated = false;
        for j in 1..=n_j {
            let cell = ds.cell(i, j);
            if cell.size() == 0 {
                issues.push(ValidationIssue::EmptyCell { cluster: id, period: j });
                continue;
            }
            if cell.mixed_treatment {
                issues.push(ValidationIssue::MixedTreatmentInCell { cluster: id, period: j });
            }
            if let Some(declared) = cell.declared_size {
                if declared != cell.size() {
                    issues.push(ValidationIssue::DeclaredSizeMismatch {
                        cluster: id,
                        period: j,
                        declared,
                        observed: cell.size(),
                    });
                }
            }
            if !cell.outcomes.iter().chain(cell.covariates.iter().flatten()).all(|x| x.is_finite()) {
                issues.push(ValidationIssue::NonFiniteValue { cluster: id, period: j });
            }
            if cell.treated {
                seen_treated = true;
            } else if seen_treated {
                issues.push(ValidationIssue::NonMonotoneTreatment { cluster: id, period: j });
            }
        }
    }
    for j in 1..=n_j {
        let treated = (0..n_i).filter(|&i| ds.is_treated(i, j)).count();
        if treated == 0 || treated == n_i {
            issues.push(ValidationIssue::DegeneratePeriod {
                period: j,
                treated,
                clusters: n_i,
            });
        }
        if j <= spec.num_rollout_periods() && treated != spec.treated_by(j) {
            issues.push(ValidationIssue::ArmCountMismatch {
                period: j,
                expected: spec.treated_by(j),
                observed: treated,
            });
        }
    }
    let mut flagged = std::collections::BTreeSet::new();
    for rec in ds.outside_rollout() {
        if rec.period == 0 && rec.treated && flagged.insert((rec.cluster_id, 0)) {
            issues.push(ValidationIssue::TreatedBeforeRollout { cluster: rec.cluster_id });
        }
        if rec.period == n_j + 1 && !rec.treated && flagged.insert((rec.cluster_id, 1)) {
            issues.push(ValidationIssue::UntreatedAfterRollout { cluster: rec.cluster_id });
        }
    }
    ValidationReport { issues }
}

/// How period numbers in an input file map onto the design.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeriodLayout {
    /// Periods `0..=J+1` are present; `J` is the largest period minus one.
    Full,
    /// Only rollout periods `1..=J` are present.
    RolloutOnly,
}

/// Reads trial data with columns `cluster,period,treated,outcome`, any number
/// of `x_*` covariate columns and an optional `cell_size` column.
pub fn read_csv<R: Read>(reader: R, layout: PeriodLayout) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let col = |name: &str| find(name).ok_or_else(|| Error::Data(format!("missing required column `{name}`")));
    let (c_cluster, c_period, c_treated, c_outcome) = (col("cluster")?, col("period")?, col("treated")?, col("outcome")?);
    let c_size = find("cell_size");
    let mut covariate_cols = Vec::new();
    let mut covariate_names = Vec::new();
    for (idx, h) in headers.iter().enumerate() {
        if let Some(name) = h.strip_prefix("x_") {
            covariate_cols.push(idx);
            covariate_names.push(name.to_string());
        } else if ![c_cluster, c_period, c_treated, c_outcome].contains(&idx) && Some(idx) != c_size {
            return Err(Error::Data(format!("unknown column `{h}`")));
        }
    }

    let mut records = Vec::new();
    for (row, result) in rdr.records().enumerate() {
        let rec = result?;
        let line = row + 2;
        let field = |idx: usize| -> Result<&str> {
            let v = rec.get(idx).unwrap_or("");
            if v.is_empty() || v.eq_ignore_ascii_case("na") || v.eq_ignore_ascii_case("nan") {
                Err(Error::Data(format!("line {line}: missing value in column `{}`", &headers[idx])))
            } else {
                Ok(v)
            }
        };
        let parse_f = |idx: usize| -> Result<f64> {
            let v = field(idx)?;
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::Data(format!("line {line}: `{v}` in column `{}` is not a number", &headers[idx])))
        };
        let parse_u = |idx: usize| -> Result<i64> {
            let v = field(idx)?;
            v.parse::<i64>()
                .map_err(|_| Error::Data(format!("line {line}: `{v}` in column `{}` is not an integer", &headers[idx])))
        };
        let period = parse_u(c_period)?;
        if period < 0 {
            return Err(Error::Data(format!("line {line}: negative period")));
        }
        let treated = match parse_u(c_treated)? {
            0 => false,
            1 => true,
            other => return Err(Error::Data(format!("line {line}: treated must be 0 or 1, got {other}"))),
        };
        let declared_cell_size = match c_size {
            Some(idx) => Some(parse_u(idx)?.max(0) as usize),
            None => None,
        };
        records.push(IndividualRecord {
            cluster_id: parse_u(c_cluster)?,
            period: period as usize,
            outcome: parse_f(c_outcome)?,
            covariates: covariate_cols.iter().map(|&c| parse_f(c)).collect::<Result<_>>()?,
            treated,
            declared_cell_size,
        });
    }
    if records.is_empty() {
        return Err(Error::Data("no records".into()));
    }
    let max_period = records.iter().map(|r| r.period).max().unwrap();
    let min_period = records.iter().map(|r| r.period).min().unwrap();
    let num_rollout_periods = match layout {
        PeriodLayout::Full => {
            if min_period != 0 || max_period < 2 {
                return Err(Error::Data(format!(
                    "periods span {min_period}..={max_period}; a full layout needs periods 0 through J+1 \
                     (declare the file rollout-only otherwise)"
                )));
            }
            max_period - 1
        }
        PeriodLayout::RolloutOnly => {
            if min_period == 0 {
                return Err(Error::Data("period 0 present in a rollout-only file".into()));
            }
            max_period
        }
    };
    Dataset::from_records(records, num_rollout_periods, covariate_names)
}

/// Writes `ds` (rollout and retained outside-rollout records) in the
/// [`read_csv`] format with the full period layout.
pub fn write_csv<W: std::io::Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["cluster".to_string(), "period".into(), "treated".into(), "outcome".into()];
    header.extend(ds.covariate_names().iter().map(|n| format!("x_{n}")));
    w.write_record(&header)?;
    let mut rows: Vec<(i64, usize, Vec<String>)> = Vec::new();
    let fmt_row = |id: i64, period: usize, treated: bool, y: f64, xs: Vec<f64>| {
        let mut row = vec![id.to_string(), period.to_string(), (treated as u8).to_string(), format!("{y:?}")];
        row.extend(xs.iter().map(|x| format!("{x:?}")));
        row
    };
    for rec in ds.outside_rollout() {
        rows.push((
            rec.cluster_id,
            rec.period,
            fmt_row(rec.cluster_id, rec.period, rec.treated, rec.outcome, rec.covariates.clone()),
        ));
    }
    for i in 0..ds.num_clusters() {
        let id = ds.cluster_ids()[i];
        for j in 1..=ds.num_rollout_periods() {
            let cell = ds.cell(i, j);
            for k in 0..cell.size() {
                let xs = cell.covariates.iter().map(|c| c[k]).collect();
                rows.push((id, j, fmt_row(id, j, cell.treated, cell.outcomes[k], xs)));
            }
        }
    }
    rows.sort_by_key(|(id, period, _)| (*id, *period));
    for (_, _, row) in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

impl Dataset {
    /// Attaches records from periods 0 and `J+1`.
    pub fn with_outside_rollout(mut self, records: Vec<IndividualRecord>) -> Self {
        self.outside_rollout = records;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rec(cluster: i64, period: usize, treated: bool, y: f64, x: f64) -> IndividualRecord {
        IndividualRecord {
            cluster_id: cluster,
            period,
            outcome: y,
            covariates: vec![x],
            treated,
            declared_cell_size: None,
        }
    }

    fn two_cluster_one_period(n1: usize, n2: usize) -> Dataset {
        let mut records = Vec::new();
        for k in 0..n1 {
            records.push(rec(1, 1, true, k as f64, 1.0));
        }
        for k in 0..n2 {
            records.push(rec(2, 1, false, k as f64, 2.0));
        }
        Dataset::from_records(records, 1, vec!["a".into()]).unwrap()
    }

    #[test]
    fn uniform_weights_equal_cell_sizes() {
        let ds = two_cluster_one_period(50, 50);
        let wt = compute_weights(&ds, WeightScheme::Uniform).unwrap();
        assert_eq!(wt.cell(0, 1), 50.0);
        assert_eq!(wt.cell(1, 1), 50.0);
        assert_eq!(wt.period(1), 100.0);
    }

    #[test]
    fn inverse_cell_size_weights() {
        let ds = two_cluster_one_period(7, 31);
        let wt = compute_weights(&ds, WeightScheme::InverseCellSize).unwrap();
        assert_relative_eq!(wt.cell(0, 1), 1.0, epsilon = 1e-15);
        assert_relative_eq!(wt.cell(1, 1), 1.0, epsilon = 1e-15);
        assert_relative_eq!(wt.period(1), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn inverse_period_size_weights_hand_arithmetic() {
        let ds = two_cluster_one_period(10, 30);
        let wt = compute_weights(&ds, WeightScheme::InversePeriodSize).unwrap();
        assert_relative_eq!(wt.cell(0, 1), 0.25, epsilon = 1e-15);
        assert_relative_eq!(wt.cell(1, 1), 0.75, epsilon = 1e-15);
        assert_relative_eq!(wt.period(1), 1.0, epsilon = 1e-15);
        assert_relative_eq!(wt.treated_total(1), 0.25, epsilon = 1e-15);
        assert_relative_eq!(wt.control_total(1), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn empty_cell_is_an_error() {
        let records = vec![rec(1, 1, true, 0.0, 0.0), rec(2, 1, false, 0.0, 0.0), rec(1, 2, true, 0.0, 0.0)];
        let ds = Dataset::from_records(records, 2, vec!["a".into()]).unwrap();
        assert!(matches!(
            compute_weights(&ds, WeightScheme::Uniform),
            Err(Error::EmptyCell { cluster: 2, period: 2 })
        ));
    }

    #[test]
    fn weighted_period_mean_hand_example() {
        // w_ij = (1, 3) under inverse period size with N_1j = 1, N_2j = 3;
        // cell means (2, 6) -> X̄_j = (2 + 18) / 4 = 5
        let records = vec![
            rec(1, 1, true, 0.0, 2.0),
            rec(2, 1, false, 0.0, 5.0),
            rec(2, 1, false, 0.0, 6.0),
            rec(2, 1, false, 0.0, 7.0),
        ];
        let ds = Dataset::from_records(records, 1, vec!["a".into()]).unwrap();
        let wt = compute_weights(&ds, WeightScheme::Uniform).unwrap();
        let cx = center_covariates(&ds, &wt).unwrap();
        assert_relative_eq!(cx.period_mean(1, 0), 5.0, epsilon = 1e-12);
        assert_relative_eq!(cx.cell_mean(0, 1)[0], -3.0, epsilon = 1e-12);
        assert_relative_eq!(cx.cell_mean(1, 1)[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_covariate_centers_to_zero() {
        let records = (0..6).map(|k| rec(k % 2, 1, k % 2 == 0, k as f64, 4.5)).collect();
        let ds = Dataset::from_records(records, 1, vec!["a".into()]).unwrap();
        for scheme in WeightScheme::ALL {
            let wt = compute_weights(&ds, scheme).unwrap();
            let cx = center_covariates(&ds, &wt).unwrap();
            for i in 0..2 {
                assert!(cx.column(i, 1, 0).iter().all(|v| v.abs() < 1e-14));
            }
        }
    }

    #[test]
    fn single_cluster_period_mean_is_cell_mean() {
        let records = vec![rec(1, 1, false, 0.0, 1.0), rec(1, 1, false, 0.0, 4.0)];
        let ds = Dataset::from_records(records, 1, vec!["a".into()]).unwrap();
        let wt = compute_weights(&ds, WeightScheme::InverseCellSize).unwrap();
        let cx = center_covariates(&ds, &wt).unwrap();
        assert_eq!(cx.column(0, 1, 0), &[-1.5, 1.5]);
    }

    #[test]
    fn validation_flags_non_monotone_and_degenerate_periods() {
        // cluster 1: Z = (0,1,0,1) over four rollout periods
        let mut records = Vec::new();
        for (j, z) in [false, true, false, true].iter().enumerate() {
            records.push(rec(1, j + 1, *z, 0.0, 0.0));
            records.push(rec(2, j + 1, j == 3, 0.0, 0.0));
        }
        let ds = Dataset::from_records(records, 4, vec!["a".into()]).unwrap();
        let spec = DesignSpec::new(3, vec![1, 2]).unwrap();
        let report = validate(&ds, &spec);
        assert!(report
            .issues
            .contains(&ValidationIssue::NonMonotoneTreatment { cluster: 1, period: 3 }));
        assert!(report.issues.iter().any(|i| matches!(i, ValidationIssue::DegeneratePeriod { period: 4, .. })));
        assert!(report.issues.iter().any(|i| matches!(i, ValidationIssue::ClusterCount { .. })));
    }

    #[test]
    fn csv_round_trip_and_missing_values() {
        let text = "cluster,period,treated,outcome,x_age\n\
                    1,0,0,0.5,30\n1,1,1,1.5,31\n1,2,1,2.0,32\n\
                    2,0,0,0.1,40\n2,1,0,0.2,41\n2,2,1,0.3,42\n";
        let ds = read_csv(text.as_bytes(), PeriodLayout::Full).unwrap();
        assert_eq!(ds.num_rollout_periods(), 1);
        assert_eq!(ds.num_clusters(), 2);
        assert_eq!(ds.outside_rollout().len(), 4);
        assert_eq!(ds.covariate_names(), &["age".to_string()]);
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let again = read_csv(buf.as_slice(), PeriodLayout::Full).unwrap();
        assert_eq!(again, ds);

        let missing = "cluster,period,treated,outcome,x_age\n1,1,1,,30\n";
        assert!(matches!(read_csv(missing.as_bytes(), PeriodLayout::RolloutOnly), Err(Error::Data(_))));
        let unknown = "cluster,period,treated,outcome,age\n1,1,1,1,30\n";
        assert!(read_csv(unknown.as_bytes(), PeriodLayout::RolloutOnly).is_err());
        let no_pre = "cluster,period,treated,outcome\n1,1,1,1\n1,2,1,1\n";
        assert!(read_csv(no_pre.as_bytes(), PeriodLayout::Full).is_err());
    }

    #[test]
    fn declared_cell_size_must_match() {
        let text = "cluster,period,treated,outcome,cell_size\n1,1,1,1.0,2\n2,1,0,1.0,1\n";
        let ds = read_csv(text.as_bytes(), PeriodLayout::RolloutOnly).unwrap();
        let spec = DesignSpec::new(2, vec![1]).unwrap();
        let report = validate(&ds, &spec);
        assert_eq!(
            report.issues,
            vec![ValidationIssue::DeclaredSizeMismatch {
                cluster: 1,
                period: 1,
                declared: 2,
                observed: 1
            }]
        );
    }

    #[test]
    fn adoption_times_from_indicators() {
        let mut records = Vec::new();
        for j in 1..=2 {
            records.push(rec(10, j, true, 0.0, 0.0));
            records.push(rec(20, j, j == 2, 0.0, 0.0));
            records.push(rec(30, j, false, 0.0, 0.0));
        }
        let ds = Dataset::from_records(records, 2, vec!["a".into()]).unwrap();
        assert_eq!(ds.adoption_assignment().unwrap().adoption_times(), &[1, 2, 3]);
        assert_eq!(ds.inferred_design().unwrap().cumulative_treated(), &[1, 2]);
    }
}
