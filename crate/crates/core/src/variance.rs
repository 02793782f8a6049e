//! Design-based and cluster-robust variance estimators for the aggregated
//! effect, and confidence intervals.

use nalgebra::DVector;
use serde::{Serialize, Serializer};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::data::{Dataset, WeightTable};
use crate::design::{AdoptionAssignment, DesignSpec};
use crate::error::{Error, Result};
use crate::estimator::{arm_means, FitResult};
use crate::linalg;

/// Model-residualized cell means and the per-cluster centered residual
/// vectors they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualizedCells {
    num_clusters: usize,
    num_periods: usize,
    /// `Ū_ij(Z_ij)`, cluster-major.
    cell: Vec<f64>,
    treated_mean: Vec<f64>,
    control_mean: Vec<f64>,
    /// `Û_i`, cluster-major; entry `j` is centered by the arm cluster `i` is in.
    stacked: Vec<f64>,
    adoption: Vec<usize>,
}

impl ResidualizedCells {
    pub fn cell(&self, i: usize, j: usize) -> f64 {
        self.cell[i * self.num_periods + j - 1]
    }

    /// `ū_j(z)`.
    pub fn arm_mean(&self, j: usize, treated: bool) -> f64 {
        if treated {
            self.treated_mean[j - 1]
        } else {
            self.control_mean[j - 1]
        }
    }

    /// `Û_i^{A_i}`.
    pub fn stacked(&self, i: usize) -> &[f64] {
        &self.stacked[i * self.num_periods..(i + 1) * self.num_periods]
    }

    pub fn adoption_time(&self, i: usize) -> usize {
        self.adoption[i]
    }

    /// Builds the residual structure directly from cell values and an
    /// adoption schedule.
    pub fn from_cell_values(
        cell: Vec<f64>,
        num_periods: usize,
        wt: &WeightTable,
        assignment: &AdoptionAssignment,
    ) -> Result<Self> {
        let num_clusters = assignment.num_clusters();
        if cell.len() != num_clusters * num_periods {
            return Err(Error::LengthMismatch(format!(
                "{} cell values for {num_clusters} clusters x {num_periods} periods",
                cell.len()
            )));
        }
        let mut treated = vec![0.0; num_periods];
        let mut control = vec![0.0; num_periods];
        for i in 0..num_clusters {
            for j in 1..=num_periods {
                let v = wt.cell(i, j) * cell[i * num_periods + j - 1];
                if assignment.is_treated(i, j) {
                    treated[j - 1] += v;
                } else {
                    control[j - 1] += v;
                }
            }
        }
        for j in 1..=num_periods {
            if wt.treated_total(j) <= 0.0 || wt.control_total(j) <= 0.0 {
                return Err(Error::DegeneratePeriod {
                    period: j,
                    reason: "one arm is empty".into(),
                });
            }
            treated[j - 1] /= wt.treated_total(j);
            control[j - 1] /= wt.control_total(j);
        }
        Ok(Self::assemble(cell, num_periods, treated, control, assignment))
    }

    fn assemble(
        cell: Vec<f64>,
        num_periods: usize,
        treated_mean: Vec<f64>,
        control_mean: Vec<f64>,
        assignment: &AdoptionAssignment,
    ) -> Self {
        let num_clusters = assignment.num_clusters();
        let mut stacked = Vec::with_capacity(cell.len());
        for i in 0..num_clusters {
            for j in 1..=num_periods {
                let mean = if assignment.is_treated(i, j) {
                    treated_mean[j - 1]
                } else {
                    control_mean[j - 1]
                };
                stacked.push(cell[i * num_periods + j - 1] - mean);
            }
        }
        ResidualizedCells {
            num_clusters,
            num_periods,
            cell,
            treated_mean,
            control_mean,
            stacked,
            adoption: assignment.adoption_times().to_vec(),
        }
    }
}

/// Residualized cells of `fit`, with residual vectors stacked by each
/// cluster's adoption time.
pub fn residualize(
    fit: &FitResult,
    ds: &Dataset,
    wt: &WeightTable,
    assignment: &AdoptionAssignment,
) -> Result<ResidualizedCells> {
    let (n_i, n_j) = (ds.num_clusters(), ds.num_rollout_periods());
    if assignment.num_clusters() != n_i {
        return Err(Error::Consistency(format!(
            "{} adoption times for {n_i} clusters",
            assignment.num_clusters()
        )));
    }
    for i in 0..n_i {
        for j in 1..=n_j {
            if assignment.is_treated(i, j) != ds.is_treated(i, j) {
                return Err(Error::Consistency(format!(
                    "cluster {} period {j}: adoption time {} disagrees with the observed treatment",
                    ds.cluster_ids()[i],
                    assignment.adoption_time(i)
                )));
            }
        }
    }
    if fit.residualized.len() != n_i * n_j {
        return Err(Error::LengthMismatch("fit does not belong to this dataset".into()));
    }
    let (u1, u0) = arm_means(ds, wt, &fit.residualized)?;
    Ok(ResidualizedCells::assemble(fit.residualized.clone(), n_j, u1, u0, assignment))
}

/// Design-based plug-in variance of `ϖ'Δ̂`.
///
/// Arms with a single cluster have no within-arm spread; when any arm is a
/// singleton every arm's covariance uses divisor `I^a` instead of `I^a - 1`.
pub fn db_variance(
    cells: &ResidualizedCells,
    wt: &WeightTable,
    spec: &DesignSpec,
    assignment: &AdoptionAssignment,
) -> Result<f64> {
    assignment.check(spec)?;
    let n_j = spec.num_rollout_periods();
    if cells.num_periods != n_j || cells.num_clusters != spec.num_clusters() {
        return Err(Error::LengthMismatch("residualized cells do not match the design".into()));
    }
    let arm_sizes = spec.arm_sizes();
    let singleton = arm_sizes.iter().any(|&n| n == 1);
    let varpi = wt.normalized();
    let mut arm_sums = vec![0.0; arm_sizes.len()];
    for i in 0..cells.num_clusters {
        let a = assignment.adoption_time(i);
        let size = arm_sizes[a - 1] as f64;
        let u = cells.stacked(i);
        let mut projected = 0.0;
        for j in 1..=n_j {
            let w = if j >= a {
                size * wt.cell(i, j) / wt.treated_total(j)
            } else {
                -size * wt.cell(i, j) / wt.control_total(j)
            };
            projected += varpi[j - 1] * w * u[j - 1];
        }
        arm_sums[a - 1] += projected * projected;
    }
    let var = arm_sizes
        .iter()
        .zip(&arm_sums)
        .map(|(&n, s)| {
            let n = n as f64;
            let divisor = if singleton { n } else { n - 1.0 };
            s / (divisor * n)
        })
        .sum::<f64>();
    Ok(var.max(0.0))
}

/// Cluster-robust sandwich variance of `ϖ'Δ̂`, with clusters as the
/// independent units and the effect contrast taken over coefficient roles.
pub fn crse_variance(fit: &FitResult) -> f64 {
    let k = fit.layout.num_columns();
    let mut full = DVector::zeros(k);
    for (j, w) in fit.period_weights.iter().enumerate() {
        full += fit.layout.effect_contrast(j + 1) * *w;
    }
    let c = DVector::from_iterator(fit.kept.len(), fit.kept.iter().map(|&col| full[col]));
    linalg::sandwich_quadratic_form(&fit.r_factor, &fit.scores, &c)
}

/// Reference distribution for interval construction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Reference {
    #[default]
    Normal,
    StudentT {
        df: f64,
    },
}

impl Reference {
    pub fn critical_value(&self, alpha: f64) -> f64 {
        let p = 1.0 - alpha / 2.0;
        match self {
            Reference::Normal => Normal::new(0.0, 1.0).unwrap().inverse_cdf(p),
            Reference::StudentT { df } => StudentsT::new(0.0, 1.0, *df)
                .expect("positive degrees of freedom")
                .inverse_cdf(p),
        }
    }
}

/// `τ̂ ± q_{1-α/2} se` under the normal reference.
pub fn confidence_interval(tau: f64, se: f64, alpha: f64) -> (f64, f64) {
    confidence_interval_with(tau, se, alpha, Reference::Normal)
}

pub fn confidence_interval_with(tau: f64, se: f64, alpha: f64, reference: Reference) -> (f64, f64) {
    if se == 0.0 {
        return (tau, tau);
    }
    let half = reference.critical_value(alpha) * se;
    (tau - half, tau + half)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceResult {
    pub tau: f64,
    pub var_db: f64,
    pub var_crse: f64,
    pub se_db: f64,
    pub se_crse: f64,
    pub ci_db: (f64, f64),
    pub ci_crse: (f64, f64),
    pub alpha: f64,
}

impl Serialize for VarianceResult {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut s = serializer.serialize_struct("VarianceResult", 5)?;
        s.serialize_field("se_db", &self.se_db)?;
        s.serialize_field("se_crse", &self.se_crse)?;
        s.serialize_field("ci_db", &[self.ci_db.0, self.ci_db.1])?;
        s.serialize_field("ci_crse", &[self.ci_crse.0, self.ci_crse.1])?;
        s.serialize_field("alpha", &self.alpha)?;
        s.end()
    }
}

/// Both variance estimates and their intervals for a fitted model.
pub fn variance(
    fit: &FitResult,
    ds: &Dataset,
    wt: &WeightTable,
    spec: &DesignSpec,
    assignment: &AdoptionAssignment,
    alpha: f64,
    reference: Reference,
) -> Result<VarianceResult> {
    let cells = residualize(fit, ds, wt, assignment)?;
    let var_db = db_variance(&cells, wt, spec, assignment)?;
    let var_crse = crse_variance(fit);
    let (se_db, se_crse) = (var_db.sqrt(), var_crse.sqrt());
    Ok(VarianceResult {
        tau: fit.tau,
        var_db,
        var_crse,
        se_db,
        se_crse,
        ci_db: confidence_interval_with(fit.tau, se_db, alpha, reference),
        ci_crse: confidence_interval_with(fit.tau, se_crse, alpha, reference),
        alpha,
    })
}
