//! Random small trials and independent reference computations shared by the
//! integration suites. Nothing here calls into the estimator internals: the
//! oracles rebuild weights, centering, design rows and sandwich sums from
//! scratch.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stepwedge::data::Cell;
use stepwedge::estimator::{CoefRole, FitResult};
use stepwedge::{AdoptionAssignment, Dataset, DesignSpec, ModelSpec, PotentialOutcomeTable, WeightScheme};

pub struct SmallTrial {
    pub dataset: Dataset,
    pub design: DesignSpec,
    pub assignment: AdoptionAssignment,
}

/// Standard design with `I` in 6..=12, `J` in 2..=3 and `p` in 1..=2
/// covariates, 3 to 10 individuals per cell.
pub fn small_trial(seed: u64) -> SmallTrial {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_i = rng.random_range(6..=12usize);
    let n_j = rng.random_range(2..=3usize);
    let p = rng.random_range(1..=2usize);
    let mut cum: Vec<usize> = sample(&mut rng, n_i - 1, n_j).into_iter().map(|v| v + 1).collect();
    cum.sort_unstable();
    let design = DesignSpec::new(n_i, cum).unwrap();
    let assignment = stepwedge::design::randomize_with(&design, &mut rng);
    let slopes: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut cells = Vec::new();
    for i in 0..n_i {
        let cluster_effect = rng.random_range(-1.0..1.0);
        for j in 1..=n_j {
            let z = assignment.is_treated(i, j);
            let n = rng.random_range(3..=10usize);
            let xs: Vec<Vec<f64>> = (0..p)
                .map(|_| (0..n).map(|_| rng.random_range(-1.5..1.5) + i as f64 * 0.1).collect())
                .collect();
            let ys = (0..n)
                .map(|k| {
                    let lin: f64 = xs.iter().zip(&slopes).map(|(x, b)| x[k] * b).sum();
                    let effect = if z { 0.4 + 0.3 * xs[0][k] * xs[0][k] } else { 0.0 };
                    0.2 * j as f64 + cluster_effect + lin + effect + rng.random_range(-1.0..1.0)
                })
                .collect();
            cells.push(Cell::new(z, ys, xs));
        }
    }
    let names = (0..p).map(|l| format!("x{}", l + 1)).collect();
    let dataset = Dataset::from_cells((1..=n_i as i64).collect(), n_j, names, cells).unwrap();
    SmallTrial {
        dataset,
        design,
        assignment,
    }
}

/// Random complete potential-outcome table with a random standard design.
pub fn random_table(seed: u64) -> (PotentialOutcomeTable, DesignSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_i = rng.random_range(3..=15usize);
    let n_j = rng.random_range(1..=(n_i - 1).min(6));
    let mut cum: Vec<usize> = sample(&mut rng, n_i - 1, n_j).into_iter().map(|v| v + 1).collect();
    cum.sort_unstable();
    let mut y0 = Vec::new();
    let mut y1 = Vec::new();
    for _ in 0..n_i * n_j {
        let n = rng.random_range(1..=40usize);
        let shift = rng.random_range(-3.0..3.0);
        let base: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        y1.push(base.iter().map(|b| b + shift + rng.random_range(-1.0..1.0) * n as f64 / 10.0).collect());
        y0.push(base);
    }
    let pot = PotentialOutcomeTable::new((1..=n_i as i64).collect(), n_j, y0, y1).unwrap();
    (pot, DesignSpec::new(n_i, cum).unwrap())
}

/// `w_ijk` written out per scheme.
pub fn individual_weight(scheme: WeightScheme, n_ij: usize, n_j: usize) -> f64 {
    match scheme {
        WeightScheme::Uniform => 1.0,
        WeightScheme::InversePeriodSize => 1.0 / n_j as f64,
        WeightScheme::InverseCellSize => 1.0 / n_ij as f64,
    }
}

fn period_size(ds: &Dataset, j: usize) -> usize {
    (0..ds.num_clusters()).map(|i| ds.cell(i, j).outcomes.len()).sum()
}

/// `(X̃_ij cell means, w_ij)` from first principles.
fn centered_cell_means(ds: &Dataset, scheme: WeightScheme) -> (Vec<Vec<f64>>, Vec<f64>) {
    let (n_i, n_j, p) = (ds.num_clusters(), ds.num_rollout_periods(), ds.num_covariates());
    let mut means = vec![vec![0.0; p]; n_i * n_j];
    let mut cell_w = vec![0.0; n_i * n_j];
    for j in 1..=n_j {
        let nj = period_size(ds, j);
        let mut num = vec![0.0; p];
        let mut den = 0.0;
        for i in 0..n_i {
            let cell = ds.cell(i, j);
            let w = individual_weight(scheme, cell.outcomes.len(), nj);
            for l in 0..p {
                num[l] += w * cell.covariates[l].iter().sum::<f64>();
            }
            den += w * cell.outcomes.len() as f64;
        }
        for i in 0..n_i {
            let cell = ds.cell(i, j);
            let n = cell.outcomes.len() as f64;
            cell_w[i * n_j + j - 1] = individual_weight(scheme, cell.outcomes.len(), nj) * n;
            for l in 0..p {
                means[i * n_j + j - 1][l] = cell.covariates[l].iter().sum::<f64>() / n - num[l] / den;
            }
        }
    }
    (means, cell_w)
}

/// Slope vector the fitted model applies to arm `treated` in period `j`,
/// read off the labeled coefficients.
fn slopes(fit: &FitResult, p: usize, j: usize, treated: bool) -> Vec<f64> {
    (0..p)
        .map(|l| {
            let role = match (fit.model, treated) {
                (ModelSpec::Unadjusted, _) => return 0.0,
                (ModelSpec::AncovaI, _) => CoefRole::Covariate(l),
                (ModelSpec::AncovaII, _) => CoefRole::PeriodCovariate(j, l),
                (ModelSpec::AncovaIII, false) => CoefRole::ControlCovariate(l),
                (ModelSpec::AncovaIII, true) => CoefRole::TreatedCovariate(l),
                (ModelSpec::AncovaIV, false) => CoefRole::ControlPeriodCovariate(j, l),
                (ModelSpec::AncovaIV, true) => CoefRole::TreatedPeriodCovariate(j, l),
            };
            fit.coefficient(role).expect("role present")
        })
        .collect()
}

/// Differences of weighted arm means of residualized cell means.
pub fn closed_form_deltas(ds: &Dataset, fit: &FitResult, scheme: WeightScheme) -> Vec<f64> {
    let (n_i, n_j, p) = (ds.num_clusters(), ds.num_rollout_periods(), ds.num_covariates());
    let (xbar, cell_w) = centered_cell_means(ds, scheme);
    (1..=n_j)
        .map(|j| {
            let mut acc = [(0.0, 0.0); 2];
            for i in 0..n_i {
                let cell = ds.cell(i, j);
                let ybar = cell.outcomes.iter().sum::<f64>() / cell.outcomes.len() as f64;
                let g = slopes(fit, p, j, cell.treated);
                let u = ybar - g.iter().zip(&xbar[i * n_j + j - 1]).map(|(a, b)| a * b).sum::<f64>();
                let w = cell_w[i * n_j + j - 1];
                let slot = &mut acc[cell.treated as usize];
                slot.0 += w * u;
                slot.1 += w;
            }
            acc[1].0 / acc[1].1 - acc[0].0 / acc[0].1
        })
        .collect()
}

/// Design row for an individual, rebuilt from role semantics.
fn design_row(roles: &[CoefRole], j: usize, z: bool, x: &[f64]) -> Vec<f64> {
    let zf = if z { 1.0 } else { 0.0 };
    roles
        .iter()
        .map(|role| match *role {
            CoefRole::Period(q) => (q == j) as u8 as f64,
            CoefRole::Treatment(q) => zf * (q == j) as u8 as f64,
            CoefRole::ControlPeriod(q) => (1.0 - zf) * (q == j) as u8 as f64,
            CoefRole::TreatedPeriod(q) => zf * (q == j) as u8 as f64,
            CoefRole::Covariate(l) => x[l],
            CoefRole::PeriodCovariate(q, l) => x[l] * (q == j) as u8 as f64,
            CoefRole::ControlCovariate(l) => (1.0 - zf) * x[l],
            CoefRole::TreatedCovariate(l) => zf * x[l],
            CoefRole::ControlPeriodCovariate(q, l) => (1.0 - zf) * x[l] * (q == j) as u8 as f64,
            CoefRole::TreatedPeriodCovariate(q, l) => zf * x[l] * (q == j) as u8 as f64,
            CoefRole::Interaction(l) => zf * x[l],
        })
        .collect()
}

/// Cluster-robust variance of the aggregated effect by explicit per-cluster
/// sums, normal equations and an explicit inverse.
pub fn brute_force_crse(ds: &Dataset, fit: &FitResult, scheme: WeightScheme) -> f64 {
    let (n_i, n_j, p) = (ds.num_clusters(), ds.num_rollout_periods(), ds.num_covariates());
    let roles = &fit.layout.roles;
    let k = roles.len();
    let mut period_means = vec![vec![0.0; p]; n_j + 1];
    let mut period_w = vec![0.0; n_j + 1];
    for j in 1..=n_j {
        let nj = period_size(ds, j);
        let mut den = 0.0;
        for i in 0..n_i {
            let cell = ds.cell(i, j);
            let w = individual_weight(scheme, cell.outcomes.len(), nj);
            for l in 0..p {
                period_means[j][l] += w * cell.covariates[l].iter().sum::<f64>();
            }
            den += w * cell.outcomes.len() as f64;
        }
        for l in 0..p {
            period_means[j][l] /= den;
        }
        period_w[j] = den;
    }
    let mut blocks = Vec::new();
    for i in 0..n_i {
        let mut rows = Vec::new();
        for j in 1..=n_j {
            let cell = ds.cell(i, j);
            let w = individual_weight(scheme, cell.outcomes.len(), period_size(ds, j));
            for kk in 0..cell.outcomes.len() {
                let x: Vec<f64> = (0..p).map(|l| cell.covariates[l][kk] - period_means[j][l]).collect();
                rows.push((design_row(roles, j, cell.treated, &x), w, cell.outcomes[kk]));
            }
        }
        blocks.push(rows);
    }
    let mut bread = DMatrix::<f64>::zeros(k, k);
    let mut xty = DVector::<f64>::zeros(k);
    for rows in &blocks {
        for (d, w, y) in rows {
            let d = DVector::from_column_slice(d);
            bread += &d * d.transpose() * *w;
            xty += &d * (*w * *y);
        }
    }
    let inv = bread.try_inverse().expect("invertible bread");
    let b = &inv * xty;
    let mut meat = DMatrix::<f64>::zeros(k, k);
    for rows in &blocks {
        let mut s = DVector::<f64>::zeros(k);
        for (d, w, y) in rows {
            let d = DVector::from_column_slice(d);
            let e = y - d.dot(&b);
            s += d * (*w * e);
        }
        meat += &s * s.transpose();
    }
    let e = &inv * meat * &inv;
    let total: f64 = period_w[1..].iter().sum();
    let mut c = DVector::<f64>::zeros(k);
    for (col, role) in roles.iter().enumerate() {
        match *role {
            CoefRole::Treatment(j) | CoefRole::TreatedPeriod(j) => c[col] += period_w[j] / total,
            CoefRole::ControlPeriod(j) => c[col] -= period_w[j] / total,
            _ => {}
        }
    }
    (c.transpose() * e * c)[0]
}

/// Relative gap `|a - b| / (1 + |b|)`.
pub fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}
