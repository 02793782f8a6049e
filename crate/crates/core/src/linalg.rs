//! Weighted least squares through a Householder QR of the `sqrt(w)`-scaled
//! system, and the sandwich covariance built on the same triangular factor.

use nalgebra::{DMatrix, DVector};

/// Relative tolerance on `|R_kk|` against the norm of scaled column `k`.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Column `column` lies (numerically) in the span of the columns before it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankDeficient {
    pub column: usize,
}

#[derive(Debug, Clone)]
pub struct WlsSolution {
    pub coefficients: DVector<f64>,
    /// Unweighted residuals `y - X b`.
    pub residuals: DVector<f64>,
    /// Upper-triangular `R` with `R'R = X'WX`.
    pub r: DMatrix<f64>,
}

/// Minimizes `sum_k w_k (y_k - x_k b)^2`. Panics if the dimensions disagree.
pub fn wls(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> Result<WlsSolution, RankDeficient> {
    let (n, k) = x.shape();
    assert_eq!(y.len(), n, "response length");
    assert_eq!(w.len(), n, "weight length");
    let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let mut xs = x.clone();
    for mut col in xs.column_iter_mut() {
        for (v, s) in col.iter_mut().zip(&sw) {
            *v *= s;
        }
    }
    let norms: Vec<f64> = xs.column_iter().map(|c| c.norm()).collect();
    let mut ys = DVector::from_iterator(n, y.iter().zip(&sw).map(|(v, s)| v * s));
    if k > n {
        return Err(RankDeficient { column: n });
    }
    let qr = xs.qr();
    let r = qr.r();
    for (c, norm) in norms.iter().enumerate() {
        if *norm == 0.0 || r[(c, c)].abs() <= RANK_TOLERANCE * norm {
            return Err(RankDeficient { column: c });
        }
    }
    qr.q_tr_mul(&mut ys);
    let qty = ys.rows(0, k).into_owned();
    let coefficients = r
        .solve_upper_triangular(&qty)
        .expect("nonzero diagonal checked above");
    let residuals = DVector::from_iterator(n, y.iter().cloned()) - x * &coefficients;
    Ok(WlsSolution {
        coefficients,
        residuals,
        r,
    })
}

/// `R^{-1} R^{-T} S` for upper-triangular `R` and a `k x G` score matrix.
/// The sandwich covariance is `H H'`; a linear functional `c'b` has
/// sandwich variance `|H' c|^2`.
pub fn sandwich_half(r: &DMatrix<f64>, scores: &DMatrix<f64>) -> DMatrix<f64> {
    let y = r
        .transpose()
        .solve_lower_triangular(scores)
        .expect("triangular factor with nonzero diagonal");
    r.solve_upper_triangular(&y)
        .expect("triangular factor with nonzero diagonal")
}

/// Full sandwich `B^{-1} (S S') B^{-1}` with `B = R'R`.
pub fn sandwich(r: &DMatrix<f64>, scores: &DMatrix<f64>) -> DMatrix<f64> {
    let h = sandwich_half(r, scores);
    &h * h.transpose()
}

/// `c' (H H') c`.
pub fn sandwich_quadratic_form(r: &DMatrix<f64>, scores: &DMatrix<f64>, c: &DVector<f64>) -> f64 {
    let h = sandwich_half(r, scores);
    (h.transpose() * c).norm_squared()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_system(n: usize, k: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, k, |_, _| rng.random_range(-2.0..2.0));
        let y = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let w = (0..n).map(|_| rng.random_range(0.1..3.0)).collect();
        (x, y, w)
    }

    #[test]
    fn intercept_only_is_weighted_mean() {
        let x = DMatrix::from_element(4, 1, 1.0);
        let y = [1.0, 2.0, 3.0, 10.0];
        let fit = wls(&x, &y, &[1.0; 4]).unwrap();
        assert!((fit.coefficients[0] - 4.0).abs() < 1e-12);
        let w = [1.0, 1.0, 1.0, 3.0];
        let fit = wls(&x, &y, &w).unwrap();
        assert!((fit.coefficients[0] - 36.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn matches_normal_equations() {
        let (x, y, w) = random_system(50, 4, 11);
        let fit = wls(&x, &y, &w).unwrap();
        // brute force: (X'WX) b = X'Wy via explicit inverse
        let wm = DMatrix::from_diagonal(&DVector::from_vec(w.clone()));
        let xtwx = x.transpose() * &wm * &x;
        let xtwy = x.transpose() * &wm * DVector::from_vec(y.clone());
        let b = xtwx.try_inverse().unwrap() * xtwy;
        for j in 0..4 {
            assert!((fit.coefficients[j] - b[j]).abs() < 1e-8, "{} vs {}", fit.coefficients[j], b[j]);
        }
    }

    #[test]
    fn detects_duplicate_column() {
        let (mut x, y, w) = random_system(20, 3, 2);
        let c0 = x.column(0).into_owned();
        x.set_column(2, &(c0 * 2.0));
        assert_eq!(wls(&x, &y, &w).unwrap_err(), RankDeficient { column: 2 });
    }

    #[test]
    fn zero_column_is_rank_deficient() {
        let (mut x, y, w) = random_system(20, 3, 3);
        x.column_mut(1).fill(0.0);
        assert_eq!(wls(&x, &y, &w).unwrap_err().column, 1);
    }

    #[test]
    fn singleton_clusters_give_hc0() {
        let (x, y, w) = random_system(40, 3, 5);
        let fit = wls(&x, &y, &w).unwrap();
        let scores = DMatrix::from_fn(3, 40, |c, i| x[(i, c)] * w[i] * fit.residuals[i]);
        let e = sandwich(&fit.r, &scores);
        // HC0: (X'WX)^-1 X'W diag(e^2) W X (X'WX)^-1
        let wm = DMatrix::from_diagonal(&DVector::from_vec(w.clone()));
        let bread = (x.transpose() * &wm * &x).try_inverse().unwrap();
        let omega = DMatrix::from_diagonal(&fit.residuals.map(|e| e * e));
        let hc0 = &bread * x.transpose() * &wm * omega * &wm * &x * &bread;
        assert!((e - &hc0).abs().max() < 1e-10 * hc0.abs().max());
        let c = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let q = sandwich_quadratic_form(&fit.r, &scores, &c);
        assert!((q - (c.transpose() * &hc0 * &c)[0]).abs() < 1e-10 * q.abs().max(1.0));
    }
}
