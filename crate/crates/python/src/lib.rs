//! Python bindings: datasets, designs, fitted effects with both variance
//! estimators, true estimands and simulation campaigns.

use std::fs::File;
use std::io::BufReader;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use stepwedge::data::{read_csv, write_csv, IndividualRecord, PeriodLayout};
use stepwedge::estimator::estimate_with_policy;
use stepwedge::simulate::{generate_trial as core_generate_trial, run_replications};
use stepwedge::variance::variance;
use stepwedge::{
    compute_weights, per_period_effect, true_wate, validate, wate_via_adoption, DesignSpec as CoreDesign, DgpSpec,
    ModelSpec, PotentialOutcomeTable as CoreTable, RankPolicy, Reference, Scenario, WeightScheme,
};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_model(s: &str) -> PyResult<ModelSpec> {
    ModelSpec::parse(s).ok_or_else(|| PyValueError::new_err(format!("unknown model `{s}` (un, a1, a2, a3, a4)")))
}

fn parse_scheme(s: &str) -> PyResult<WeightScheme> {
    WeightScheme::parse(s).ok_or_else(|| PyValueError::new_err(format!("unknown estimand `{s}` (ind, period, cell)")))
}

fn parse_scenario(s: &str) -> PyResult<Scenario> {
    Scenario::parse(s).ok_or_else(|| PyValueError::new_err(format!("unknown scenario `{s}`")))
}

/// Standard stepped wedge design: cumulative treated counts by period.
#[pyclass(name = "Design", module = "stepwedge", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDesign {
    inner: CoreDesign,
}

#[pymethods]
impl PyDesign {
    #[new]
    fn new(clusters: usize, cumulative: Vec<usize>) -> PyResult<Self> {
        Ok(PyDesign {
            inner: CoreDesign::new(clusters, cumulative).map_err(value_error)?,
        })
    }

    #[staticmethod]
    fn balanced(clusters: usize, rollout_periods: usize) -> PyResult<Self> {
        Ok(PyDesign {
            inner: CoreDesign::balanced(clusters, rollout_periods).map_err(value_error)?,
        })
    }

    #[getter]
    fn clusters(&self) -> usize {
        self.inner.num_clusters()
    }

    #[getter]
    fn rollout_periods(&self) -> usize {
        self.inner.num_rollout_periods()
    }

    #[getter]
    fn cumulative(&self) -> Vec<usize> {
        self.inner.cumulative_treated().to_vec()
    }

    fn arm_sizes(&self) -> Vec<usize> {
        self.inner.arm_sizes()
    }

    /// Adoption period of every cluster (J + 1 means never during rollout).
    fn randomize(&self, seed: u64) -> Vec<usize> {
        stepwedge::randomize(&self.inner, seed).adoption_times().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("Design(clusters={}, cumulative={:?})", self.clusters(), self.cumulative())
    }
}

/// Individual-level trial data grouped into cluster-period cells.
#[pyclass(name = "Dataset", module = "stepwedge", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: stepwedge::Dataset,
}

#[pymethods]
impl PyDataset {
    /// Builds a dataset from parallel columns. `covariates` maps names to
    /// columns; periods `0` and `J + 1` are kept outside the rollout unless
    /// `rollout_only` is set.
    #[staticmethod]
    #[pyo3(signature = (cluster, period, treated, outcome, covariates=None, rollout_only=false))]
    fn from_columns(
        cluster: Vec<i64>,
        period: Vec<usize>,
        treated: Vec<bool>,
        outcome: Vec<f64>,
        covariates: Option<&Bound<'_, PyDict>>,
        rollout_only: bool,
    ) -> PyResult<Self> {
        let n = cluster.len();
        if period.len() != n || treated.len() != n || outcome.len() != n {
            return Err(PyValueError::new_err("columns must have equal lengths"));
        }
        let mut names = Vec::new();
        let mut columns: Vec<Vec<f64>> = Vec::new();
        if let Some(d) = covariates {
            for (k, v) in d.iter() {
                names.push(k.extract::<String>()?);
                let col: Vec<f64> = v.extract()?;
                if col.len() != n {
                    return Err(PyValueError::new_err(format!("covariate `{}` has {} values, expected {n}", names.last().unwrap(), col.len())));
                }
                columns.push(col);
            }
        }
        let max_period = period.iter().copied().max().unwrap_or(0);
        let num_periods = if rollout_only {
            max_period
        } else {
            max_period
                .checked_sub(1)
                .ok_or_else(|| PyValueError::new_err("full layout needs periods 0 through J + 1"))?
        };
        let records = (0..n)
            .map(|r| IndividualRecord {
                cluster_id: cluster[r],
                period: period[r],
                outcome: outcome[r],
                covariates: columns.iter().map(|c| c[r]).collect(),
                treated: treated[r],
                declared_cell_size: None,
            })
            .collect();
        Ok(PyDataset {
            inner: stepwedge::Dataset::from_records(records, num_periods, names).map_err(value_error)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (path, rollout_only=false))]
    fn from_csv(path: &str, rollout_only: bool) -> PyResult<Self> {
        let file = File::open(path).map_err(|e| PyOSError::new_err(format!("{path}: {e}")))?;
        let layout = if rollout_only { PeriodLayout::RolloutOnly } else { PeriodLayout::Full };
        Ok(PyDataset {
            inner: read_csv(BufReader::new(file), layout).map_err(value_error)?,
        })
    }

    fn to_csv(&self, path: &str) -> PyResult<()> {
        let file = File::create(path).map_err(|e| PyOSError::new_err(format!("{path}: {e}")))?;
        write_csv(&self.inner, file).map_err(value_error)
    }

    #[getter]
    fn num_clusters(&self) -> usize {
        self.inner.num_clusters()
    }

    #[getter]
    fn num_periods(&self) -> usize {
        self.inner.num_rollout_periods()
    }

    #[getter]
    fn covariate_names(&self) -> Vec<String> {
        self.inner.covariate_names().to_vec()
    }

    /// `N_ij`, one row per cluster.
    fn cell_sizes(&self) -> Vec<Vec<usize>> {
        let j = self.inner.num_rollout_periods();
        self.inner.cell_sizes().chunks(j).map(|c| c.to_vec()).collect()
    }

    fn design(&self) -> PyResult<PyDesign> {
        Ok(PyDesign {
            inner: self.inner.inferred_design().map_err(value_error)?,
        })
    }

    /// Every structural problem, as messages; empty when the data are usable.
    #[pyo3(signature = (design=None))]
    fn validate(&self, design: Option<&PyDesign>) -> PyResult<Vec<String>> {
        let spec = match design {
            Some(d) => d.inner.clone(),
            None => match self.inner.inferred_design() {
                Ok(s) => s,
                Err(e) => return Ok(vec![e.to_string()]),
            },
        };
        Ok(validate(&self.inner, &spec).issues.iter().map(|i| i.to_string()).collect())
    }

    fn with_cell_size_covariate(&self) -> Self {
        PyDataset {
            inner: self.inner.with_cell_size_covariate("cell_size"),
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(clusters={}, periods={}, individuals={}, covariates={:?})",
            self.inner.num_clusters(),
            self.inner.num_rollout_periods(),
            self.inner.total_size(),
            self.inner.covariate_names()
        )
    }
}

/// A fitted estimator with design-based and cluster-robust uncertainty.
#[pyclass(name = "Fit", module = "stepwedge", frozen, get_all)]
struct PyFit {
    model: String,
    estimand: String,
    tau: f64,
    delta: Vec<f64>,
    se_db: f64,
    se_crse: f64,
    ci_db: (f64, f64),
    ci_crse: (f64, f64),
    alpha: f64,
    coefficients: Vec<(String, f64)>,
    dropped: Vec<String>,
    warnings: Vec<String>,
}

#[pymethods]
impl PyFit {
    fn __repr__(&self) -> String {
        format!(
            "Fit(model={}, estimand={}, tau={:.6}, se_db={:.6}, se_crse={:.6})",
            self.model, self.estimand, self.tau, self.se_db, self.se_crse
        )
    }
}

/// Fits `model` for the estimand weighted by `estimand` and attaches both
/// standard errors.
#[pyfunction]
#[pyo3(signature = (dataset, model="un", estimand="ind", alpha=0.05, t_reference=false, drop_aliased=false))]
fn analyze(
    py: Python<'_>,
    dataset: &PyDataset,
    model: &str,
    estimand: &str,
    alpha: f64,
    t_reference: bool,
    drop_aliased: bool,
) -> PyResult<PyFit> {
    let model = parse_model(model)?;
    let scheme = parse_scheme(estimand)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(PyValueError::new_err("alpha must lie in (0, 1)"));
    }
    let ds = &dataset.inner;
    let policy = if drop_aliased { RankPolicy::DropAliasedCovariates } else { RankPolicy::Strict };
    py.detach(|| -> stepwedge::Result<PyFit> {
        let spec = ds.inferred_design()?;
        let asg = ds.adoption_assignment()?;
        let wt = compute_weights(ds, scheme)?;
        let fit = estimate_with_policy(ds, model, &wt, policy)?;
        let reference = if t_reference {
            Reference::StudentT {
                df: (ds.num_clusters() - 1) as f64,
            }
        } else {
            Reference::Normal
        };
        let v = variance(&fit, ds, &wt, &spec, &asg, alpha, reference)?;
        Ok(PyFit {
            model: model.short_name().to_string(),
            estimand: scheme.short_name().to_string(),
            tau: fit.tau,
            delta: fit.delta.clone(),
            se_db: v.se_db,
            se_crse: v.se_crse,
            ci_db: v.ci_db,
            ci_crse: v.ci_crse,
            alpha,
            coefficients: fit.labeled_coefficients(),
            dropped: fit.dropped.iter().map(|r| r.label(&fit.covariate_names)).collect(),
            warnings: fit.warnings.clone(),
        })
    })
    .map_err(value_error)
}

/// Both potential outcomes of every individual in the rollout periods.
#[pyclass(name = "PotentialOutcomes", module = "stepwedge", frozen)]
struct PyPotentialOutcomes {
    inner: CoreTable,
}

#[pymethods]
impl PyPotentialOutcomes {
    /// `y0[c][j]` and `y1[c][j]` hold the outcomes of cluster `c` in period `j + 1`.
    #[new]
    fn new(y0: Vec<Vec<Vec<f64>>>, y1: Vec<Vec<Vec<f64>>>) -> PyResult<Self> {
        let n_i = y0.len();
        let n_j = y0.first().map_or(0, |r| r.len());
        if y1.len() != n_i || y0.iter().chain(&y1).any(|r| r.len() != n_j) {
            return Err(PyValueError::new_err("y0 and y1 must be clusters x periods nested lists of equal shape"));
        }
        let flatten = |v: Vec<Vec<Vec<f64>>>| v.into_iter().flatten().collect();
        Ok(PyPotentialOutcomes {
            inner: CoreTable::new((1..=n_i as i64).collect(), n_j, flatten(y0), flatten(y1)).map_err(value_error)?,
        })
    }

    #[staticmethod]
    fn from_csv(path: &str) -> PyResult<Self> {
        let file = File::open(path).map_err(|e| PyOSError::new_err(format!("{path}: {e}")))?;
        Ok(PyPotentialOutcomes {
            inner: CoreTable::read_csv(BufReader::new(file)).map_err(value_error)?,
        })
    }

    /// Aggregate effect for `estimand`.
    #[pyo3(signature = (estimand="ind"))]
    fn wate(&self, estimand: &str) -> PyResult<f64> {
        true_wate(&self.inner, parse_scheme(estimand)?).map_err(value_error)
    }

    #[pyo3(signature = (estimand="ind"))]
    fn period_effects(&self, estimand: &str) -> PyResult<Vec<f64>> {
        let scheme = parse_scheme(estimand)?;
        (1..=self.inner.num_periods())
            .map(|j| per_period_effect(&self.inner, scheme, j).map_err(value_error))
            .collect()
    }

    /// The aggregate effect computed through adoption-time contrasts.
    #[pyo3(signature = (design, estimand="ind"))]
    fn wate_via_adoption(&self, design: &PyDesign, estimand: &str) -> PyResult<f64> {
        wate_via_adoption(&self.inner, &design.inner, parse_scheme(estimand)?).map_err(value_error)
    }

    /// Observed data under the adoption times `adoption`.
    fn observe(&self, adoption: Vec<usize>) -> PyResult<PyDataset> {
        let asg = stepwedge::AdoptionAssignment::from_times(adoption);
        Ok(PyDataset {
            inner: self.inner.observe(&asg).map_err(value_error)?,
        })
    }
}

/// One simulated trial: observed data and its potential outcomes.
#[pyfunction]
#[pyo3(signature = (scenario, clusters, seed, replication=0, estimand="ind", null_effect=false))]
fn generate_trial(
    scenario: &str,
    clusters: usize,
    seed: u64,
    replication: u64,
    estimand: &str,
    null_effect: bool,
) -> PyResult<(PyDataset, PyPotentialOutcomes)> {
    let mut dgp = DgpSpec::new(parse_scenario(scenario)?, clusters, seed);
    dgp.null_effect = null_effect;
    let trial = core_generate_trial(&dgp, replication, parse_scheme(estimand)?).map_err(value_error)?;
    Ok((
        PyDataset { inner: trial.dataset },
        PyPotentialOutcomes { inner: trial.potential },
    ))
}

/// Runs `replications` seeded trials and returns one dict of operating
/// characteristics per (model, estimand).
#[pyfunction]
#[pyo3(signature = (scenario, clusters, replications, seed, models=None, estimands=None, alpha=0.05, null_effect=false))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    scenario: &str,
    clusters: usize,
    replications: usize,
    seed: u64,
    models: Option<Vec<String>>,
    estimands: Option<Vec<String>>,
    alpha: f64,
    null_effect: bool,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let models = match models {
        Some(m) => m.iter().map(|s| parse_model(s)).collect::<PyResult<Vec<_>>>()?,
        None => ModelSpec::ALL.to_vec(),
    };
    let schemes = match estimands {
        Some(s) => s.iter().map(|s| parse_scheme(s)).collect::<PyResult<Vec<_>>>()?,
        None => WeightScheme::ALL.to_vec(),
    };
    let mut dgp = DgpSpec::new(parse_scenario(scenario)?, clusters, seed);
    dgp.null_effect = null_effect;
    let table = py
        .detach(|| run_replications(&dgp, &models, &schemes, replications, alpha))
        .map_err(value_error)?;
    table
        .rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            let m = &r.metrics;
            d.set_item("model", r.model.short_name())?;
            d.set_item("estimand", r.scheme.short_name())?;
            d.set_item("replications", m.replications)?;
            d.set_item("mean_truth", m.mean_truth)?;
            d.set_item("bias", m.bias)?;
            d.set_item("bias_kind", if m.bias_is_absolute { "absolute" } else { "relative" })?;
            d.set_item("rmse", m.rmse)?;
            d.set_item("ese", m.ese)?;
            d.set_item("ase_db", m.ase_db)?;
            d.set_item("ase_crse", m.ase_crse)?;
            d.set_item("coverage_db", m.coverage_db)?;
            d.set_item("coverage_crse", m.coverage_crse)?;
            d.set_item("re", r.relative_efficiency)?;
            d.set_item("aliased_fits", r.aliased_fits)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
#[pyo3(name = "stepwedge")]
fn stepwedge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDesign>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyFit>()?;
    m.add_class::<PyPotentialOutcomes>()?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(generate_trial, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
