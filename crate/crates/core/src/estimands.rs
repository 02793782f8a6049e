//! Ground-truth weighted average treatment effects from complete tables of
//! potential outcomes over the rollout periods.

use std::collections::BTreeMap;
use std::io::Read;

use crate::data::{Cell, CellWeights, Dataset, WeightScheme};
use crate::design::{AdoptionAssignment, DesignSpec};
use crate::error::{Error, Result};

/// Both potential outcomes for every rollout individual.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOutcomeTable {
    cluster_ids: Vec<i64>,
    num_periods: usize,
    control: Vec<Vec<f64>>,
    treated: Vec<Vec<f64>>,
}

impl PotentialOutcomeTable {
    /// Cells are cluster-major; `control[c][k]` is `Y(0)` of individual `k`.
    pub fn new(
        cluster_ids: Vec<i64>,
        num_periods: usize,
        control: Vec<Vec<f64>>,
        treated: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let cells = cluster_ids.len() * num_periods;
        if control.len() != cells || treated.len() != cells {
            return Err(Error::IncompleteTable(format!(
                "expected {cells} cells, got {} control and {} treated",
                control.len(),
                treated.len()
            )));
        }
        for (c, (y0, y1)) in control.iter().zip(&treated).enumerate() {
            let (i, j) = (c / num_periods, c % num_periods + 1);
            if y0.is_empty() || y0.len() != y1.len() {
                return Err(Error::IncompleteTable(format!(
                    "cluster {} period {j}: {} control and {} treated outcomes",
                    cluster_ids[i],
                    y0.len(),
                    y1.len()
                )));
            }
            if y0.iter().chain(y1).any(|v| !v.is_finite()) {
                return Err(Error::IncompleteTable(format!(
                    "cluster {} period {j}: non-finite outcome",
                    cluster_ids[i]
                )));
            }
        }
        Ok(PotentialOutcomeTable {
            cluster_ids,
            num_periods,
            control,
            treated,
        })
    }

    pub fn num_clusters(&self) -> usize {
        self.cluster_ids.len()
    }

    pub fn num_periods(&self) -> usize {
        self.num_periods
    }

    pub fn cluster_ids(&self) -> &[i64] {
        &self.cluster_ids
    }

    pub fn cell_size(&self, i: usize, j: usize) -> usize {
        self.control[i * self.num_periods + j - 1].len()
    }

    pub fn cell_sizes(&self) -> Vec<usize> {
        self.control.iter().map(Vec::len).collect()
    }

    /// `Y(z)` for every individual of cell `(i, j)`.
    pub fn outcomes(&self, i: usize, j: usize, treated: bool) -> &[f64] {
        let c = i * self.num_periods + j - 1;
        if treated {
            &self.treated[c]
        } else {
            &self.control[c]
        }
    }

    /// Observed outcomes under `assignment`, without covariates.
    pub fn observe(&self, assignment: &AdoptionAssignment) -> Result<Dataset> {
        if assignment.num_clusters() != self.num_clusters() {
            return Err(Error::Consistency(format!(
                "{} adoption times for {} clusters",
                assignment.num_clusters(),
                self.num_clusters()
            )));
        }
        let mut cells = Vec::with_capacity(self.control.len());
        for i in 0..self.num_clusters() {
            for j in 1..=self.num_periods {
                let z = assignment.is_treated(i, j);
                cells.push(Cell::new(z, self.outcomes(i, j, z).to_vec(), vec![]));
            }
        }
        Dataset::from_cells(self.cluster_ids.clone(), self.num_periods, vec![], cells)
    }

    fn weights(&self, scheme: WeightScheme) -> Result<CellWeights> {
        CellWeights::from_sizes(&self.cell_sizes(), self.num_clusters(), self.num_periods, scheme)
    }

    /// Reads columns `cluster,period,k,y0,y1` with rollout periods numbered
    /// from 1.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        #[derive(serde::Deserialize)]
        struct Row {
            cluster: i64,
            period: usize,
            k: usize,
            y0: f64,
            y1: f64,
        }
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut grid: BTreeMap<(i64, usize), BTreeMap<usize, (f64, f64)>> = BTreeMap::new();
        for row in rdr.deserialize() {
            let row: Row = row?;
            if row.period == 0 {
                return Err(Error::IncompleteTable("period 0 is outside the rollout".into()));
            }
            let cell = grid.entry((row.cluster, row.period)).or_default();
            if cell.insert(row.k, (row.y0, row.y1)).is_some() {
                return Err(Error::IncompleteTable(format!(
                    "duplicate individual {} in cluster {} period {}",
                    row.k, row.cluster, row.period
                )));
            }
        }
        let mut ids: Vec<i64> = grid.keys().map(|(c, _)| *c).collect();
        ids.dedup();
        let num_periods = grid.keys().map(|(_, j)| *j).max().unwrap_or(0);
        if ids.is_empty() {
            return Err(Error::IncompleteTable("no rows".into()));
        }
        let mut control = Vec::new();
        let mut treated = Vec::new();
        for id in &ids {
            for j in 1..=num_periods {
                let cell = grid
                    .get(&(*id, j))
                    .ok_or_else(|| Error::IncompleteTable(format!("cluster {id} has no rows in period {j}")))?;
                control.push(cell.values().map(|v| v.0).collect());
                treated.push(cell.values().map(|v| v.1).collect());
            }
        }
        Self::new(ids, num_periods, control, treated)
    }
}

/// Weighted average of individual effects `Y(1) - Y(0)` over all rollout
/// individuals.
pub fn true_wate(pot: &PotentialOutcomeTable, scheme: WeightScheme) -> Result<f64> {
    let w = pot.weights(scheme)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..pot.num_clusters() {
        for j in 1..=pot.num_periods() {
            let wi = w.individual(i, j);
            let (y0, y1) = (pot.outcomes(i, j, false), pot.outcomes(i, j, true));
            num += wi * y1.iter().zip(y0).map(|(a, b)| a - b).sum::<f64>();
            den += wi * y0.len() as f64;
        }
    }
    Ok(num / den)
}

fn cell_mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `Ȳ_j(z)`: cell-weighted average of cell means in period `j`.
fn period_mean(pot: &PotentialOutcomeTable, w: &CellWeights, j: usize, treated: bool) -> f64 {
    (0..pot.num_clusters())
        .map(|i| w.cell(i, j) * cell_mean(pot.outcomes(i, j, treated)))
        .sum::<f64>()
        / w.period(j)
}

/// Effect within rollout period `j`.
pub fn per_period_effect(pot: &PotentialOutcomeTable, scheme: WeightScheme, j: usize) -> Result<f64> {
    if j == 0 || j > pot.num_periods() {
        return Err(Error::PeriodOutOfRange {
            period: j,
            max: pot.num_periods(),
        });
    }
    let w = pot.weights(scheme)?;
    Ok(period_mean(pot, &w, j, true) - period_mean(pot, &w, j, false))
}

/// The same estimand written as a contrast over adoption times: each
/// adoption arm `a` sees `Ȳ_j(1)` in periods `j >= a` and `Ȳ_j(0)` before.
pub fn wate_via_adoption(pot: &PotentialOutcomeTable, spec: &DesignSpec, scheme: WeightScheme) -> Result<f64> {
    let n_j = pot.num_periods();
    if spec.num_rollout_periods() != n_j || spec.num_clusters() != pot.num_clusters() {
        return Err(Error::Consistency(format!(
            "design has {} clusters and {} rollout periods, table has {} and {n_j}",
            spec.num_clusters(),
            spec.num_rollout_periods(),
            pot.num_clusters()
        )));
    }
    let w = pot.weights(scheme)?;
    let varpi = w.normalized();
    let mut total = 0.0;
    for j in 1..=n_j {
        let (m1, m0) = (period_mean(pot, &w, j, true), period_mean(pot, &w, j, false));
        for a in 1..=n_j + 1 {
            let coef = if a <= j {
                varpi[j - 1] / j as f64
            } else {
                -varpi[j - 1] / (n_j + 1 - j) as f64
            };
            total += coef * if a <= j { m1 } else { m0 };
        }
    }
    Ok(total)
}
