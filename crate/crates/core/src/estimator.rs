//! Working-model ANCOVA estimators fitted by weighted least squares.
//!
//! Every model has period-specific treatment effects and no global
//! intercept. Models III and IV are fitted in the split-arm form, where the
//! control and treated arms carry separate period intercepts and covariate
//! slopes; the per-period effect is then the difference of the two arm
//! intercepts.
//!
//! Besides the coefficient reading, each per-period effect is recomputed as
//! the difference of weighted arm averages of model-residualized cell means.
//! The two routes must agree; a disagreement is reported as an error.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use crate::data::{center_covariates, compute_weights, CenteredCovariates, Dataset, WeightScheme, WeightTable};
use crate::error::{Error, Result};
use crate::linalg;

/// Relative agreement required between the coefficient and closed-form effects.
pub const CROSS_CHECK_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelSpec {
    #[serde(rename = "un")]
    Unadjusted,
    #[serde(rename = "a1")]
    AncovaI,
    #[serde(rename = "a2")]
    AncovaII,
    #[serde(rename = "a3")]
    AncovaIII,
    #[serde(rename = "a4")]
    AncovaIV,
}

impl ModelSpec {
    pub const ALL: [ModelSpec; 5] = [
        ModelSpec::Unadjusted,
        ModelSpec::AncovaI,
        ModelSpec::AncovaII,
        ModelSpec::AncovaIII,
        ModelSpec::AncovaIV,
    ];

    pub fn short_name(&self) -> &'static str {
        match self {
            ModelSpec::Unadjusted => "un",
            ModelSpec::AncovaI => "a1",
            ModelSpec::AncovaII => "a2",
            ModelSpec::AncovaIII => "a3",
            ModelSpec::AncovaIV => "a4",
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ModelSpec::Unadjusted => "UN",
            ModelSpec::AncovaI => "AN I",
            ModelSpec::AncovaII => "AN II",
            ModelSpec::AncovaIII => "AN III",
            ModelSpec::AncovaIV => "AN IV",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        ModelSpec::ALL
            .into_iter()
            .find(|m| m.short_name().eq_ignore_ascii_case(s))
    }

    /// Number of design columns for `j` rollout periods and `p` covariates.
    pub fn num_columns(&self, j: usize, p: usize) -> usize {
        2 * j
            + match self {
                ModelSpec::Unadjusted => 0,
                ModelSpec::AncovaI => p,
                ModelSpec::AncovaII => j * p,
                ModelSpec::AncovaIII => 2 * p,
                ModelSpec::AncovaIV => 2 * j * p,
            }
    }

    fn split_arms(&self) -> bool {
        matches!(self, ModelSpec::AncovaIII | ModelSpec::AncovaIV)
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

/// What a design column represents. Periods are 1-based, covariates 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CoefRole {
    /// Period indicator (all clusters).
    Period(usize),
    /// Treatment indicator within a period.
    Treatment(usize),
    /// Control-arm period indicator `(1 - Z) 1{period}`.
    ControlPeriod(usize),
    /// Treated-arm period indicator `Z 1{period}`.
    TreatedPeriod(usize),
    Covariate(usize),
    PeriodCovariate(usize, usize),
    ControlCovariate(usize),
    TreatedCovariate(usize),
    ControlPeriodCovariate(usize, usize),
    TreatedPeriodCovariate(usize, usize),
    /// Treatment-by-covariate interaction `Z X`.
    Interaction(usize),
}

impl CoefRole {
    /// True for slope columns, false for period and treatment indicators.
    pub fn is_covariate(&self) -> bool {
        !matches!(
            self,
            CoefRole::Period(_) | CoefRole::Treatment(_) | CoefRole::ControlPeriod(_) | CoefRole::TreatedPeriod(_)
        )
    }

    pub fn label(&self, covariates: &[String]) -> String {
        let name = |l: &usize| covariates.get(*l).cloned().unwrap_or_else(|| format!("x{l}"));
        match self {
            CoefRole::Period(j) => format!("period[{j}]"),
            CoefRole::Treatment(j) => format!("treatment[{j}]"),
            CoefRole::ControlPeriod(j) => format!("control:period[{j}]"),
            CoefRole::TreatedPeriod(j) => format!("treated:period[{j}]"),
            CoefRole::Covariate(l) => name(l),
            CoefRole::PeriodCovariate(j, l) => format!("{}[{j}]", name(l)),
            CoefRole::ControlCovariate(l) => format!("control:{}", name(l)),
            CoefRole::TreatedCovariate(l) => format!("treated:{}", name(l)),
            CoefRole::ControlPeriodCovariate(j, l) => format!("control:{}[{j}]", name(l)),
            CoefRole::TreatedPeriodCovariate(j, l) => format!("treated:{}[{j}]", name(l)),
            CoefRole::Interaction(l) => format!("treatment:{}", name(l)),
        }
    }
}

/// Column layout of a working model.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnLayout {
    pub roles: Vec<CoefRole>,
    num_periods: usize,
    num_covariates: usize,
    form: Form,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Form {
    Model(ModelSpec),
    /// ANCOVA III with a shared covariate slope plus a treatment interaction.
    InteractionIII,
}

impl ColumnLayout {
    pub fn new(model: ModelSpec, num_periods: usize, num_covariates: usize) -> Self {
        Self::with_form(Form::Model(model), num_periods, num_covariates)
    }

    fn with_form(form: Form, num_periods: usize, num_covariates: usize) -> Self {
        let (jn, p) = (num_periods, num_covariates);
        let periods = 1..=jn;
        let mut roles = Vec::new();
        let split = matches!(form, Form::Model(m) if m.split_arms());
        if split {
            roles.extend(periods.clone().map(CoefRole::ControlPeriod));
            roles.extend(periods.clone().map(CoefRole::TreatedPeriod));
        } else {
            roles.extend(periods.clone().map(CoefRole::Period));
            roles.extend(periods.clone().map(CoefRole::Treatment));
        }
        match form {
            Form::Model(ModelSpec::Unadjusted) => {}
            Form::Model(ModelSpec::AncovaI) => roles.extend((0..p).map(CoefRole::Covariate)),
            Form::Model(ModelSpec::AncovaII) => {
                for j in periods {
                    roles.extend((0..p).map(|l| CoefRole::PeriodCovariate(j, l)));
                }
            }
            Form::Model(ModelSpec::AncovaIII) => {
                roles.extend((0..p).map(CoefRole::ControlCovariate));
                roles.extend((0..p).map(CoefRole::TreatedCovariate));
            }
            Form::Model(ModelSpec::AncovaIV) => {
                for j in periods.clone() {
                    roles.extend((0..p).map(|l| CoefRole::ControlPeriodCovariate(j, l)));
                }
                for j in periods {
                    roles.extend((0..p).map(|l| CoefRole::TreatedPeriodCovariate(j, l)));
                }
            }
            Form::InteractionIII => {
                roles.extend((0..p).map(CoefRole::Covariate));
                roles.extend((0..p).map(CoefRole::Interaction));
            }
        }
        ColumnLayout {
            roles,
            num_periods,
            num_covariates,
            form,
        }
    }

    pub fn num_columns(&self) -> usize {
        self.roles.len()
    }

    /// Writes the design row of an individual in period `j` with treatment
    /// `z` and centered covariates `x` into `row`.
    fn fill_row(&self, j: usize, z: bool, x: &[f64], row: &mut [f64]) {
        row.fill(0.0);
        let (jn, p) = (self.num_periods, self.num_covariates);
        let zf = if z { 1.0 } else { 0.0 };
        let base = 2 * jn;
        match self.form {
            Form::Model(m) if m.split_arms() => {
                row[if z { jn + j - 1 } else { j - 1 }] = 1.0;
                let arm_offset = match m {
                    ModelSpec::AncovaIII => base + if z { p } else { 0 },
                    _ => base + if z { jn * p } else { 0 } + (j - 1) * p,
                };
                row[arm_offset..arm_offset + p].copy_from_slice(x);
            }
            form => {
                row[j - 1] = 1.0;
                row[jn + j - 1] = zf;
                match form {
                    Form::Model(ModelSpec::AncovaI) => row[base..base + p].copy_from_slice(x),
                    Form::Model(ModelSpec::AncovaII) => {
                        let off = base + (j - 1) * p;
                        row[off..off + p].copy_from_slice(x);
                    }
                    Form::InteractionIII => {
                        row[base..base + p].copy_from_slice(x);
                        for (dst, v) in row[base + p..base + 2 * p].iter_mut().zip(x) {
                            *dst = zf * v;
                        }
                    }
                    _ => {}
                }
            }
        }
    }

    /// Coefficient vector `L_j` with `Δ_j = L_j' b`.
    pub fn effect_contrast(&self, j: usize) -> DVector<f64> {
        let mut c = DVector::zeros(self.num_columns());
        let jn = self.num_periods;
        match self.form {
            Form::Model(m) if m.split_arms() => {
                c[jn + j - 1] = 1.0;
                c[j - 1] = -1.0;
            }
            _ => c[jn + j - 1] = 1.0,
        }
        c
    }

    /// Covariate slopes applied to an arm in period `j`.
    fn arm_slopes<'a>(&self, coef: &'a [f64], j: usize, treated: bool) -> Option<&'a [f64]> {
        let (jn, p) = (self.num_periods, self.num_covariates);
        let base = 2 * jn;
        let off = match self.form {
            Form::Model(ModelSpec::Unadjusted) => return None,
            Form::Model(ModelSpec::AncovaI) => base,
            Form::Model(ModelSpec::AncovaII) => base + (j - 1) * p,
            Form::Model(ModelSpec::AncovaIII) => base + if treated { p } else { 0 },
            Form::Model(ModelSpec::AncovaIV) => base + if treated { jn * p } else { 0 } + (j - 1) * p,
            Form::InteractionIII => return None,
        };
        Some(&coef[off..off + p])
    }
}

/// Weighted design for a working model, one row per rollout individual in
/// cluster-major, then period, then individual order.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub w: Vec<f64>,
    /// Cluster index of each row.
    pub cluster: Vec<usize>,
    pub layout: ColumnLayout,
}

/// Builds the design matrix of `model` with covariates centered under `wt`.
pub fn build_design_matrix(ds: &Dataset, model: ModelSpec, wt: &WeightTable) -> Result<DesignMatrix> {
    let cx = center_covariates(ds, wt)?;
    Ok(assemble(ds, ColumnLayout::new(model, ds.num_rollout_periods(), ds.num_covariates()), wt, &cx))
}

fn assemble(ds: &Dataset, layout: ColumnLayout, wt: &WeightTable, cx: &CenteredCovariates) -> DesignMatrix {
    let n = ds.total_size();
    let k = layout.num_columns();
    let p = ds.num_covariates();
    let mut x = DMatrix::zeros(n, k);
    let mut y = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    let mut cluster = Vec::with_capacity(n);
    let mut row = vec![0.0; k];
    let mut xr = vec![0.0; p];
    let mut r = 0;
    for i in 0..ds.num_clusters() {
        for j in 1..=ds.num_rollout_periods() {
            let cell = ds.cell(i, j);
            let wi = wt.individual(i, j);
            for kk in 0..cell.size() {
                for (l, v) in xr.iter_mut().enumerate() {
                    *v = cx.value(i, j, kk, l);
                }
                layout.fill_row(j, cell.treated, &xr, &mut row);
                for (c, v) in row.iter().enumerate() {
                    if *v != 0.0 {
                        x[(r, c)] = *v;
                    }
                }
                y.push(cell.outcomes[kk]);
                w.push(wi);
                cluster.push(i);
                r += 1;
            }
        }
    }
    DesignMatrix {
        x,
        y,
        w,
        cluster,
        layout,
    }
}

/// Coefficients of a weighted least squares fit; a rank-deficient design is
/// reported by the role of the first dependent column.
pub fn fit_wls(design: &DesignMatrix, covariate_names: &[String]) -> Result<linalg::WlsSolution> {
    let (n, k) = design.x.shape();
    if k >= n {
        return Err(Error::TooManyParameters { columns: k, rows: n });
    }
    linalg::wls(&design.x, &design.y, &design.w).map_err(|e| Error::SingularDesign {
        role: design.layout.roles[e.column].label(covariate_names),
    })
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: ModelSpec,
    pub scheme: WeightScheme,
    /// Per-period effects from the coefficients, length `J`.
    pub delta: Vec<f64>,
    pub tau: f64,
    pub coefficients: Vec<f64>,
    pub layout: ColumnLayout,
    pub covariate_names: Vec<String>,
    /// `y - X b` per rollout individual, in design-row order.
    pub residuals: Vec<f64>,
    pub warnings: Vec<String>,
    /// Covariate columns removed under [`RankPolicy::DropAliasedCovariates`].
    pub dropped: Vec<CoefRole>,
    /// Normalized period weights used for aggregation.
    pub period_weights: Vec<f64>,
    /// Residualized cell means of the observed arm, cluster-major.
    pub(crate) residualized: Vec<f64>,
    /// Design columns that entered the fit.
    pub(crate) kept: Vec<usize>,
    pub(crate) r_factor: DMatrix<f64>,
    /// Per-cluster scores `D_i' W_i e_i` over the kept columns, one column per cluster.
    pub(crate) scores: DMatrix<f64>,
}

impl FitResult {
    pub fn coefficient(&self, role: CoefRole) -> Option<f64> {
        self.layout
            .roles
            .iter()
            .position(|r| *r == role)
            .map(|c| self.coefficients[c])
    }

    pub fn labeled_coefficients(&self) -> Vec<(String, f64)> {
        self.layout
            .roles
            .iter()
            .zip(&self.coefficients)
            .map(|(r, b)| (r.label(&self.covariate_names), *b))
            .collect()
    }
}

impl Serialize for FitResult {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        struct Coefs<'a>(&'a FitResult);
        impl Serialize for Coefs<'_> {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                let labeled = self.0.labeled_coefficients();
                let mut map = s.serialize_map(Some(labeled.len()))?;
                for (k, v) in &labeled {
                    map.serialize_entry(k, v)?;
                }
                map.end()
            }
        }
        let mut map = serializer.serialize_map(Some(5))?;
        map.serialize_entry("model", &self.model)?;
        map.serialize_entry("scheme", &self.scheme)?;
        map.serialize_entry("delta", &self.delta)?;
        map.serialize_entry("tau", &self.tau)?;
        map.serialize_entry("coefficients", &Coefs(self))?;
        map.end()
    }
}

/// Model-residualized mean of each cell's observed arm:
/// `Ȳ_ij - X̃_ij' slope`, with the slope the model applies to that arm and
/// period.
fn residualized_cell_means(ds: &Dataset, layout: &ColumnLayout, coef: &[f64], cx: &CenteredCovariates) -> Vec<f64> {
    let mut out = Vec::with_capacity(ds.num_clusters() * ds.num_rollout_periods());
    for i in 0..ds.num_clusters() {
        for j in 1..=ds.num_rollout_periods() {
            let cell = ds.cell(i, j);
            let ybar = cell.outcomes.iter().sum::<f64>() / cell.size() as f64;
            let adj = layout
                .arm_slopes(coef, j, cell.treated)
                .map(|g| g.iter().zip(cx.cell_mean(i, j)).map(|(a, b)| a * b).sum::<f64>())
                .unwrap_or(0.0);
            out.push(ybar - adj);
        }
    }
    out
}

/// Weighted arm averages `ū_j(1)` and `ū_j(0)` of residualized cell means.
pub(crate) fn arm_means(ds: &Dataset, wt: &WeightTable, residualized: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let jn = ds.num_rollout_periods();
    let mut treated = vec![0.0; jn];
    let mut control = vec![0.0; jn];
    for i in 0..ds.num_clusters() {
        for j in 1..=jn {
            let v = wt.cell(i, j) * residualized[i * jn + j - 1];
            if ds.is_treated(i, j) {
                treated[j - 1] += v;
            } else {
                control[j - 1] += v;
            }
        }
    }
    for j in 1..=jn {
        let (w1, w0) = (wt.treated_total(j), wt.control_total(j));
        if w1 <= 0.0 || w0 <= 0.0 {
            return Err(Error::DegeneratePeriod {
                period: j,
                reason: if w1 <= 0.0 { "no treated clusters" } else { "no control clusters" }.into(),
            });
        }
        treated[j - 1] /= w1;
        control[j - 1] /= w0;
    }
    Ok((treated, control))
}

/// Per-period effects as differences of weighted arm averages of
/// residualized cell means, using the slopes in `fit`.
pub fn delta_closed_form(ds: &Dataset, fit: &FitResult, wt: &WeightTable) -> Result<Vec<f64>> {
    let cx = center_covariates(ds, wt)?;
    let res = residualized_cell_means(ds, &fit.layout, &fit.coefficients, &cx);
    let (u1, u0) = arm_means(ds, wt, &res)?;
    Ok(u1.iter().zip(&u0).map(|(a, b)| a - b).collect())
}

/// `Σ_j ϖ_j Δ_j`.
pub fn aggregate_tau(deltas: &[f64], period_weights: &[f64]) -> f64 {
    deltas.iter().zip(period_weights).map(|(d, w)| d * w).sum()
}

fn check_degenerate_periods(ds: &Dataset, wt: &WeightTable) -> Result<()> {
    arm_means(ds, wt, &vec![0.0; ds.num_clusters() * ds.num_rollout_periods()]).map(|_| ())
}

/// Fits `model` under `scheme` and returns coefficients, effects and the
/// aggregated estimate.
pub fn estimate(ds: &Dataset, model: ModelSpec, scheme: WeightScheme) -> Result<FitResult> {
    let wt = compute_weights(ds, scheme)?;
    estimate_with_weights(ds, model, &wt)
}

pub fn estimate_with_weights(ds: &Dataset, model: ModelSpec, wt: &WeightTable) -> Result<FitResult> {
    estimate_with_policy(ds, model, wt, RankPolicy::Strict)
}

/// Handling of rank-deficient designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankPolicy {
    /// Any dependent column is an error.
    #[default]
    Strict,
    /// A covariate slope column that is constant or collinear within its
    /// block (for example a cluster-level binary covariate that takes one
    /// value among the few control clusters of the last period) is removed
    /// and its coefficient reported as zero. Period and treatment columns are
    /// never removed.
    DropAliasedCovariates,
}

pub fn estimate_with_policy(ds: &Dataset, model: ModelSpec, wt: &WeightTable, policy: RankPolicy) -> Result<FitResult> {
    check_degenerate_periods(ds, wt)?;
    let cx = center_covariates(ds, wt)?;
    let layout = ColumnLayout::new(model, ds.num_rollout_periods(), ds.num_covariates());
    let DesignMatrix {
        mut x,
        y,
        w,
        cluster,
        layout,
    } = assemble(ds, layout, wt, &cx);
    let names = ds.covariate_names();
    let full_k = layout.num_columns();
    if full_k >= y.len() {
        return Err(Error::TooManyParameters {
            columns: full_k,
            rows: y.len(),
        });
    }
    let mut kept: Vec<usize> = (0..full_k).collect();
    let mut dropped = Vec::new();
    let sol = loop {
        match linalg::wls(&x, &y, &w) {
            Ok(sol) => break sol,
            Err(e) => {
                let role = layout.roles[kept[e.column]];
                if policy == RankPolicy::Strict || !role.is_covariate() {
                    return Err(Error::SingularDesign { role: role.label(names) });
                }
                x = x.remove_column(e.column);
                kept.remove(e.column);
                dropped.push(role);
            }
        }
    };
    let mut full = DVector::zeros(full_k);
    for (c, b) in kept.iter().zip(sol.coefficients.iter()) {
        full[*c] = *b;
    }
    let coefficients: Vec<f64> = full.iter().cloned().collect();
    let jn = ds.num_rollout_periods();

    let delta: Vec<f64> = (1..=jn).map(|j| layout.effect_contrast(j).dot(&full)).collect();
    let residualized = residualized_cell_means(ds, &layout, &coefficients, &cx);
    let (u1, u0) = arm_means(ds, wt, &residualized)?;
    for j in 0..jn {
        let closed = u1[j] - u0[j];
        if !delta[j].is_finite() || (delta[j] - closed).abs() > CROSS_CHECK_TOLERANCE * (1.0 + delta[j].abs()) {
            return Err(Error::InternalConsistency {
                period: j + 1,
                coefficient: delta[j],
                closed_form: closed,
            });
        }
    }

    let k = kept.len();
    let mut scores = DMatrix::zeros(k, ds.num_clusters());
    for r in 0..y.len() {
        let s = w[r] * sol.residuals[r];
        let mut col = scores.column_mut(cluster[r]);
        for c in 0..k {
            let v = x[(r, c)];
            if v != 0.0 {
                col[c] += v * s;
            }
        }
    }

    let mut warnings = Vec::new();
    if full_k > ds.num_clusters() {
        warnings.push(format!(
            "{full_k} parameters exceed {} clusters; large-sample approximations may be poor",
            ds.num_clusters()
        ));
    }
    for role in &dropped {
        warnings.push(format!("dropped aliased column `{}`", role.label(names)));
    }
    let period_weights = wt.normalized().to_vec();
    Ok(FitResult {
        model,
        scheme: wt.scheme(),
        tau: aggregate_tau(&delta, &period_weights),
        delta,
        coefficients,
        layout,
        covariate_names: names.to_vec(),
        residuals: sol.residuals.iter().cloned().collect(),
        warnings,
        dropped,
        period_weights,
        residualized,
        kept,
        r_factor: sol.r,
        scores,
    })
}

/// Per-period effects of ANCOVA III fitted with a shared covariate slope and a
/// treatment-by-covariate interaction instead of separate arm slopes.
pub fn ancova3_interaction_form(ds: &Dataset, scheme: WeightScheme) -> Result<Vec<f64>> {
    let wt = compute_weights(ds, scheme)?;
    let cx = center_covariates(ds, &wt)?;
    let layout = ColumnLayout::with_form(Form::InteractionIII, ds.num_rollout_periods(), ds.num_covariates());
    let design = assemble(ds, layout, &wt, &cx);
    let sol = fit_wls(&design, ds.covariate_names())?;
    Ok((1..=ds.num_rollout_periods())
        .map(|j| design.layout.effect_contrast(j).dot(&sol.coefficients))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Cell, Dataset};

    /// Two clusters per arm pattern over `J = 2`, one covariate.
    fn tiny(outcome: impl Fn(usize, usize, usize, f64) -> f64) -> Dataset {
        let adoption = [1usize, 2, 3, 3];
        let sizes = [[3usize, 4], [2, 5], [4, 3], [6, 2]];
        let mut cells = Vec::new();
        for (i, a) in adoption.iter().enumerate() {
            for j in 1..=2 {
                let n = sizes[i][j - 1];
                let xs: Vec<f64> = (0..n).map(|k| (i * 7 + j * 3 + k) as f64 % 5.0 - 1.3).collect();
                let ys = xs.iter().enumerate().map(|(k, x)| outcome(i, j, k, *x)).collect();
                cells.push(Cell::new(*a <= j, ys, vec![xs]));
            }
        }
        Dataset::from_cells(vec![1, 2, 3, 4], 2, vec!["x".into()], cells).unwrap()
    }

    #[test]
    fn column_counts() {
        assert_eq!(ColumnLayout::new(ModelSpec::AncovaI, 5, 2).num_columns(), 12);
        assert_eq!(ColumnLayout::new(ModelSpec::AncovaIV, 5, 2).num_columns(), 30);
        assert_eq!(ModelSpec::AncovaIV.num_columns(5, 2), 30);
        let layout = ColumnLayout::new(ModelSpec::Unadjusted, 3, 0);
        assert_eq!(layout.num_columns(), 6);
    }

    #[test]
    fn unadjusted_design_is_binary() {
        let ds = tiny(|i, j, k, _| (i + j + k) as f64);
        let wt = compute_weights(&ds, WeightScheme::Uniform).unwrap();
        let d = build_design_matrix(&ds, ModelSpec::Unadjusted, &wt).unwrap();
        assert_eq!(d.x.ncols(), 4);
        assert!(d.x.iter().all(|v| *v == 0.0 || *v == 1.0));
    }

    #[test]
    fn unadjusted_is_weighted_difference_in_means() {
        let ds = tiny(|i, j, k, x| (i * i) as f64 + 0.5 * j as f64 + 0.1 * k as f64 + x);
        for scheme in WeightScheme::ALL {
            let fit = estimate(&ds, ModelSpec::Unadjusted, scheme).unwrap();
            let wt = compute_weights(&ds, scheme).unwrap();
            for j in 1..=2 {
                let mut sums = [0.0; 2];
                let mut tot = [0.0; 2];
                for i in 0..4 {
                    let cell = ds.cell(i, j);
                    let w = wt.individual(i, j);
                    let z = cell.treated as usize;
                    sums[z] += w * cell.outcomes.iter().sum::<f64>();
                    tot[z] += w * cell.size() as f64;
                }
                let dim = sums[1] / tot[1] - sums[0] / tot[0];
                assert!((fit.delta[j - 1] - dim).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn linear_outcome_without_treatment_gives_zero_effects() {
        let ds = tiny(|_, j, _, x| 2.0 * j as f64 + 3.0 * x);
        for model in [ModelSpec::AncovaI, ModelSpec::AncovaII, ModelSpec::AncovaIII, ModelSpec::AncovaIV] {
            let fit = estimate(&ds, model, WeightScheme::InversePeriodSize).unwrap();
            for d in &fit.delta {
                assert!(d.abs() < 1e-10, "{model}: {d}");
            }
            assert!(fit.residuals.iter().all(|e| e.abs() < 1e-9));
        }
    }

    #[test]
    fn aggregation_examples() {
        assert!((aggregate_tau(&[0.2, 0.6], &[0.25, 0.75]) - 0.5).abs() < 1e-15);
        assert!((aggregate_tau(&[1.5; 3], &[0.2, 0.3, 0.5]) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn inverse_cell_size_aggregates_by_simple_average() {
        let ds = tiny(|i, j, k, x| (i as f64).sin() + j as f64 * 0.7 + k as f64 * x);
        let fit = estimate(&ds, ModelSpec::AncovaI, WeightScheme::InverseCellSize).unwrap();
        let mean = fit.delta.iter().sum::<f64>() / 2.0;
        assert!((fit.tau - mean).abs() < 1e-12);
    }

    #[test]
    fn constant_covariate_is_singular() {
        let ds = tiny(|i, _, k, x| i as f64 + k as f64 + x);
        let ds = ds.map_covariate(0, |_| 1.0);
        // centers to an all-zero column
        let err = estimate(&ds, ModelSpec::AncovaI, WeightScheme::Uniform).unwrap_err();
        assert_eq!(err, Error::SingularDesign { role: "x".into() });
    }

    #[test]
    fn too_many_parameters() {
        let cells = vec![
            Cell::new(true, vec![1.0], vec![vec![0.5], vec![1.0]]),
            Cell::new(false, vec![2.0], vec![vec![0.1], vec![3.0]]),
        ];
        let ds = Dataset::from_cells(vec![1, 2], 1, vec!["a".into(), "b".into()], cells).unwrap();
        assert!(matches!(
            estimate(&ds, ModelSpec::AncovaIV, WeightScheme::Uniform),
            Err(Error::TooManyParameters { columns: 6, rows: 2 })
        ));
    }

    #[test]
    fn interaction_form_matches_split_arms() {
        let ds = tiny(|i, j, k, x| (i * j) as f64 * 0.3 + (k as f64).cos() + x * x);
        for scheme in WeightScheme::ALL {
            let split = estimate(&ds, ModelSpec::AncovaIII, scheme).unwrap();
            let inter = ancova3_interaction_form(&ds, scheme).unwrap();
            for (a, b) in split.delta.iter().zip(&inter) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn serializes_with_role_labels() {
        let ds = tiny(|i, j, _, x| i as f64 + j as f64 + x);
        let fit = estimate(&ds, ModelSpec::AncovaIII, WeightScheme::Uniform).unwrap();
        let v: serde_json::Value = serde_json::to_value(&fit).unwrap();
        assert_eq!(v["model"], "a3");
        assert_eq!(v["scheme"], "ind");
        assert_eq!(v["delta"].as_array().unwrap().len(), 2);
        assert!(v["coefficients"]["treated:x"].is_number());
        assert!(v["coefficients"]["control:period[2]"].is_number());
    }
}
