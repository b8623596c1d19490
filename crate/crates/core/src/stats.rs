//! Rank correlations, least squares, and the linear forgetting-ranking model
//! evaluated by step-wise leave-one-out.

use alloc::{format, string::String, vec, vec::Vec};

use serde::{Deserialize, Serialize};

use crate::error::shape_err;
use crate::{Error, Result};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (divisor `n - 1`). Deviations are taken from
/// the first value, so a constant sample gives exactly zero.
pub fn sample_std(x: &[f64]) -> f64 {
    let Some(&first) = x.first() else { return f64::NAN };
    let shifted: Vec<f64> = x.iter().map(|v| v - first).collect();
    let m = mean(&shifted);
    libm::sqrt(shifted.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0))
}

pub fn mae(predicted: &[f64], actual: &[f64]) -> f64 {
    mean(
        &predicted
            .iter()
            .zip(actual)
            .map(|(p, a)| libm::fabs(p - a))
            .collect::<Vec<_>>(),
    )
}

fn check_finite(name: &str, x: &[f64]) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(String::from(name)));
    }
    Ok(())
}

/// 1-based ranks, ties replaced by the average of the ranks they span.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(shape_err!("correlation of lengths {} and {}", x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(shape_err!("correlation needs at least two observations"));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if !(sxx > 0.0 && syy > 0.0) {
        return Err(Error::UndefinedCorrelation(String::from("constant input")));
    }
    Ok((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// Pearson correlation of mid-ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() < 3 {
        return Err(shape_err!(
            "spearman needs at least three observations, got {}",
            x.len()
        ));
    }
    check_finite("spearman input", x)?;
    check_finite("spearman input", y)?;
    pearson(&ranks(x), &ranks(y))
}

/// Spearman correlation of `x` and `y` after removing from both ranks the
/// linear effect (with intercept) of the ranked `controls`.
pub fn partial_spearman(x: &[f64], y: &[f64], controls: &[&[f64]]) -> Result<f64> {
    if controls.is_empty() {
        return spearman(x, y);
    }
    let n = x.len();
    if n < controls.len() + 3 {
        return Err(shape_err!(
            "{n} observations are too few for {} controls",
            controls.len()
        ));
    }
    if y.len() != n || controls.iter().any(|c| c.len() != n) {
        return Err(shape_err!("partial spearman inputs differ in length"));
    }
    check_finite("partial spearman input", x)?;
    check_finite("partial spearman input", y)?;
    let mut design = Matrix::zeros(n, controls.len() + 1);
    for i in 0..n {
        design[(i, 0)] = 1.0;
    }
    for (j, c) in controls.iter().enumerate() {
        check_finite("partial spearman control", c)?;
        for (i, r) in ranks(c).into_iter().enumerate() {
            design[(i, j + 1)] = r;
        }
    }
    let residual = |v: &[f64], name: &str| -> Result<Vec<f64>> {
        let r = ranks(v);
        let fit = least_squares(&design, &r)?;
        let centred: f64 = {
            let m = mean(&r);
            libm::sqrt(r.iter().map(|a| (a - m) * (a - m)).sum())
        };
        let left = libm::sqrt(fit.residuals.iter().map(|e| e * e).sum());
        if !(left > 1e-9 * centred) {
            return Err(Error::Collinear(format!(
                "{name} is explained entirely by the controls"
            )));
        }
        Ok(fit.residuals)
    };
    let rx = residual(x, "x")?;
    let ry = residual(y, "y")?;
    pearson(&rx, &ry)
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(shape_err!("ragged matrix rows"));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

impl core::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
}

/// Minimises `|A b - y|` by Householder QR. A column whose component
/// orthogonal to the preceding columns is below `1e-9` of its norm makes the
/// design collinear.
pub fn least_squares(a: &Matrix, y: &[f64]) -> Result<LeastSquares> {
    let (n, p) = (a.rows, a.cols);
    if y.len() != n {
        return Err(shape_err!("design has {n} rows, response {}", y.len()));
    }
    if n < p {
        return Err(Error::Collinear(format!("{n} rows for {p} columns")));
    }
    let col_norms: Vec<f64> = (0..p)
        .map(|j| libm::sqrt((0..n).map(|i| a[(i, j)] * a[(i, j)]).sum()))
        .collect();
    let mut r = a.clone();
    let mut qty = y.to_vec();
    for k in 0..p {
        let alpha = libm::sqrt((k..n).map(|i| r[(i, k)] * r[(i, k)]).sum());
        if !(alpha > 1e-9 * col_norms[k]) || col_norms[k] == 0.0 {
            return Err(Error::Collinear(format!("column {k} depends on earlier columns")));
        }
        let sign = if r[(k, k)] >= 0.0 { 1.0 } else { -1.0 };
        let mut v: Vec<f64> = (k..n).map(|i| r[(i, k)]).collect();
        v[0] += sign * alpha;
        let vv: f64 = v.iter().map(|x| x * x).sum();
        for j in k..p {
            let s: f64 = (k..n).map(|i| v[i - k] * r[(i, j)]).sum::<f64>() * 2.0 / vv;
            for i in k..n {
                r[(i, j)] -= s * v[i - k];
            }
        }
        let s: f64 = (k..n).map(|i| v[i - k] * qty[i]).sum::<f64>() * 2.0 / vv;
        for i in k..n {
            qty[i] -= s * v[i - k];
        }
    }
    let mut beta = vec![0.0; p];
    for k in (0..p).rev() {
        let tail: f64 = (k + 1..p).map(|j| r[(k, j)] * beta[j]).sum();
        beta[k] = (qty[k] - tail) / r[(k, k)];
    }
    let residuals = (0..n)
        .map(|i| y[i] - (0..p).map(|j| a[(i, j)] * beta[j]).sum::<f64>())
        .collect();
    Ok(LeastSquares {
        coefficients: beta,
        residuals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictor {
    Sic,
    Cic,
    Nic,
    AllNic,
    LogSim,
}

impl Predictor {
    pub const JOINT: [Predictor; 3] = [Predictor::Sic, Predictor::Cic, Predictor::Nic];

    pub fn name(self) -> &'static str {
        match self {
            Predictor::Sic => "sic",
            Predictor::Cic => "cic",
            Predictor::Nic => "nic",
            Predictor::AllNic => "all_nic",
            Predictor::LogSim => "log_sim",
        }
    }
}

/// Coefficients and forgetting of the past classes of one incremental step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientMatrix {
    /// Identifies the step within its pool (e.g. experiment and step).
    pub id: String,
    pub classes: Vec<usize>,
    pub sic: Vec<f64>,
    pub cic: Vec<f64>,
    pub nic: Vec<f64>,
    #[serde(default)]
    pub all_nic: Option<Vec<f64>>,
    #[serde(default)]
    pub log_sim: Option<Vec<f64>>,
    pub fg: Vec<f64>,
}

impl CoefficientMatrix {
    pub fn len(&self) -> usize {
        self.fg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fg.is_empty()
    }

    pub fn column(&self, p: Predictor) -> Result<&[f64]> {
        let col = match p {
            Predictor::Sic => Some(&self.sic),
            Predictor::Cic => Some(&self.cic),
            Predictor::Nic => Some(&self.nic),
            Predictor::AllNic => self.all_nic.as_ref(),
            Predictor::LogSim => self.log_sim.as_ref(),
        };
        let col = col.ok_or_else(|| shape_err!("step {} lacks column {}", self.id, p.name()))?;
        if col.len() != self.fg.len() {
            return Err(shape_err!("step {}: column {} has the wrong length", self.id, p.name()));
        }
        Ok(col)
    }
}

/// `z(FG) = b0 + sum_j b_j z(x_j)`, z-scores taken over the fitting pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRankingModel {
    pub predictors: Vec<Predictor>,
    pub betas: Vec<f64>,
    pub intercept: f64,
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
    pub steps_used: usize,
    /// Steps dropped for a rank-deficient design.
    pub excluded: Vec<String>,
}

impl LinearRankingModel {
    /// Predicted forgetting on the original scale.
    pub fn predict(&self, step: &CoefficientMatrix) -> Result<Vec<f64>> {
        let cols = self
            .predictors
            .iter()
            .map(|&p| step.column(p))
            .collect::<Result<Vec<_>>>()?;
        Ok((0..step.len())
            .map(|i| {
                let z: f64 = (0..cols.len())
                    .map(|j| self.betas[j] * (cols[j][i] - self.x_mean[j]) / self.x_std[j])
                    .sum();
                self.y_mean + self.y_std * (self.intercept + z)
            })
            .collect())
    }

    /// Slopes on the original scale of every predictor.
    pub fn raw_slopes(&self) -> Vec<f64> {
        (0..self.betas.len())
            .map(|j| self.betas[j] * self.y_std / self.x_std[j])
            .collect()
    }
}

fn pooled(steps: &[&CoefficientMatrix], col: impl Fn(&CoefficientMatrix) -> Result<&[f64]>) -> Result<(f64, f64)> {
    let mut all = Vec::new();
    for s in steps {
        all.extend_from_slice(col(s)?);
    }
    check_finite("fitting data", &all)?;
    if all.len() < 2 {
        return Err(shape_err!("too few observations to standardise"));
    }
    let sd = sample_std(&all);
    if !(sd > 0.0) {
        return Err(Error::Collinear(String::from(
            "a variable is constant over the fitting pool",
        )));
    }
    Ok((mean(&all), sd))
}

/// Two-stage estimator: least squares per step on pooled z-scores, then the
/// average of the per-step coefficient vectors. Rank-deficient steps are
/// skipped and listed in [`LinearRankingModel::excluded`].
pub fn fit_ranking_model(steps: &[&CoefficientMatrix], predictors: &[Predictor]) -> Result<LinearRankingModel> {
    if steps.len() < 2 {
        return Err(shape_err!("fitting needs at least two steps, got {}", steps.len()));
    }
    if predictors.is_empty() {
        return Err(shape_err!("no predictors"));
    }
    let mut x_mean = Vec::with_capacity(predictors.len());
    let mut x_std = Vec::with_capacity(predictors.len());
    for &p in predictors {
        let (m, s) = pooled(steps, |c| c.column(p))?;
        x_mean.push(m);
        x_std.push(s);
    }
    let (y_mean, y_std) = pooled(steps, |c| Ok(c.fg.as_slice()))?;

    let k = predictors.len();
    let mut sum = vec![0.0; k + 1];
    let mut used = 0usize;
    let mut excluded = Vec::new();
    for step in steps {
        let n = step.len();
        let mut design = Matrix::zeros(n, k + 1);
        for i in 0..n {
            design[(i, 0)] = 1.0;
        }
        for (j, &p) in predictors.iter().enumerate() {
            for (i, v) in step.column(p)?.iter().enumerate() {
                design[(i, j + 1)] = (v - x_mean[j]) / x_std[j];
            }
        }
        let z: Vec<f64> = step.fg.iter().map(|v| (v - y_mean) / y_std).collect();
        match least_squares(&design, &z) {
            Ok(fit) => {
                for (acc, b) in sum.iter_mut().zip(&fit.coefficients) {
                    *acc += b;
                }
                used += 1;
            }
            Err(Error::Collinear(_)) => excluded.push(step.id.clone()),
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(Error::Collinear(String::from(
            "every training step has a rank-deficient design",
        )));
    }
    let avg: Vec<f64> = sum.iter().map(|s| s / used as f64).collect();
    Ok(LinearRankingModel {
        predictors: predictors.to_vec(),
        intercept: avg[0],
        betas: avg[1..].to_vec(),
        x_mean,
        x_std,
        y_mean,
        y_std,
        steps_used: used,
        excluded,
    })
}

/// Score of one held-out step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooScore {
    pub held_out: String,
    /// `None` when the predictions (or FG) are constant.
    pub rho: Option<f64>,
    pub mae: f64,
}

/// Step-wise leave-one-out with a caller-supplied fitter. `fit` receives the
/// remaining steps and returns a predictor of forgetting.
pub fn sw_loo_with<F, P>(pool: &[CoefficientMatrix], mut fit: F) -> Result<Vec<LooScore>>
where
    F: FnMut(&[&CoefficientMatrix]) -> Result<P>,
    P: Fn(&CoefficientMatrix) -> Result<Vec<f64>>,
{
    if pool.len() < 3 {
        return Err(shape_err!(
            "leave-one-out needs at least three steps, got {}",
            pool.len()
        ));
    }
    let mut out = Vec::with_capacity(pool.len());
    for (h, held) in pool.iter().enumerate() {
        let rest: Vec<&CoefficientMatrix> = pool
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != h)
            .map(|(_, s)| s)
            .collect();
        let predict = fit(&rest)?;
        let pred = predict(held)?;
        if pred.len() != held.len() {
            return Err(shape_err!(
                "predictor returned {} values for {} classes",
                pred.len(),
                held.len()
            ));
        }
        let rho = match spearman(&pred, &held.fg) {
            Ok(r) => Some(r),
            Err(Error::UndefinedCorrelation(_)) => None,
            Err(e) => return Err(e),
        };
        out.push(LooScore {
            held_out: held.id.clone(),
            rho,
            mae: mae(&pred, &held.fg),
        });
    }
    Ok(out)
}

/// Step-wise leave-one-out of the linear model on `predictors`.
pub fn sw_loo(pool: &[CoefficientMatrix], predictors: &[Predictor]) -> Result<Vec<LooScore>> {
    sw_loo_with(pool, |rest| {
        let model = fit_ranking_model(rest, predictors)?;
        Ok(move |s: &CoefficientMatrix| model.predict(s))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        libm::fabs(a - b) < tol
    }

    #[test]
    fn std_examples() {
        assert_eq!(sample_std(&[0.1; 8]), 0.0);
        assert!(close(
            sample_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]),
            libm::sqrt(32.0 / 7.0),
            1e-12
        ));
        assert!(sample_std(&[]).is_nan());
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        let r = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 5.0]).unwrap();
        // Rank differences (-1, 1, -1, 1, 0): 1 - 6*4/(5*24).
        assert!(close(r, 1.0 - 24.0 / 120.0, 1e-12));
        assert!(matches!(
            spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(spearman(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(spearman(&[1.0, f64::NAN, 2.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn mid_ranks() {
        assert_eq!(ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn partial_with_no_controls_is_exact() {
        let x = [0.3, -1.0, 2.0, 0.5, 0.1];
        let y = [1.0, 0.2, 0.1, 0.7, 0.0];
        assert_eq!(partial_spearman(&x, &y, &[]).unwrap(), spearman(&x, &y).unwrap());
    }

    #[test]
    fn partial_removes_control() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let z: Vec<f64> = (0..50).map(|_| StandardNormal.sample(&mut rng)).collect();
            let x: Vec<f64> = (0..50).map(|_| StandardNormal.sample(&mut rng)).collect();
            let y: Vec<f64> = z.iter().map(|v: &f64| v * v * v + 2.0).collect();
            match partial_spearman(&x, &y, &[&z]) {
                Err(Error::Collinear(_)) => {}
                other => assert!(libm::fabs(other.unwrap()) < 0.15),
            }
        }
    }

    #[test]
    fn partial_collinear() {
        let z = [0.1, 0.5, 0.2, 0.9, 0.4, 0.3];
        let y = [1.0, 2.0, 0.0, 3.0, 5.0, 4.0];
        assert!(matches!(partial_spearman(&z, &y, &[&z]), Err(Error::Collinear(_))));
    }

    #[allow(clippy::needless_range_loop)]
    fn normal_equations(a: &Matrix, y: &[f64]) -> Vec<f64> {
        let p = a.cols();
        let mut m = vec![vec![0.0; p + 1]; p];
        for r in 0..p {
            for c in 0..p {
                m[r][c] = (0..a.rows()).map(|i| a[(i, r)] * a[(i, c)]).sum();
            }
            m[r][p] = (0..a.rows()).map(|i| a[(i, r)] * y[i]).sum();
        }
        for k in 0..p {
            let piv = (k..p).max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs())).unwrap();
            m.swap(k, piv);
            for i in k + 1..p {
                let f = m[i][k] / m[k][k];
                for j in k..=p {
                    m[i][j] -= f * m[k][j];
                }
            }
        }
        let mut b = vec![0.0; p];
        for k in (0..p).rev() {
            b[k] = (m[k][p] - (k + 1..p).map(|j| m[k][j] * b[j]).sum::<f64>()) / m[k][k];
        }
        b
    }

    #[test]
    fn qr_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let rows: Vec<Vec<f64>> = (0..30)
                .map(|_| {
                    let mut r = vec![1.0];
                    r.extend((0..4).map(|_| rng.random_range(-2.0..2.0)));
                    r
                })
                .collect();
            let a = Matrix::from_rows(&rows).unwrap();
            let y: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
            let qr = least_squares(&a, &y).unwrap().coefficients;
            let ne = normal_equations(&a, &y);
            for (q, n) in qr.iter().zip(&ne) {
                assert!(close(*q, *n, 1e-8));
            }
        }
    }

    #[test]
    fn qr_detects_collinearity() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![1.0, i as f64, 2.0 * i as f64 + 1.0]).collect();
        let a = Matrix::from_rows(&rows).unwrap();
        assert!(matches!(least_squares(&a, &[0.0; 6]), Err(Error::Collinear(_))));
    }

    fn step(id: &str, sic: Vec<f64>, cic: Vec<f64>, nic: Vec<f64>, fg: Vec<f64>) -> CoefficientMatrix {
        CoefficientMatrix {
            id: String::from(id),
            classes: (0..fg.len()).collect(),
            sic,
            cic,
            nic,
            all_nic: None,
            log_sim: None,
            fg,
        }
    }

    fn randv(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    }

    #[test]
    fn exact_sic_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let steps: Vec<CoefficientMatrix> = (0..3)
            .map(|i| {
                let s = randv(&mut rng, 10);
                step(&format!("{i}"), s.clone(), randv(&mut rng, 10), randv(&mut rng, 10), s)
            })
            .collect();
        let refs: Vec<&CoefficientMatrix> = steps.iter().collect();
        let m = fit_ranking_model(&refs, &Predictor::JOINT).unwrap();
        for (b, want) in m.betas.iter().zip([1.0, 0.0, 0.0]) {
            assert!(close(*b, want, 1e-8));
        }
    }

    #[test]
    fn per_step_betas_are_averaged() {
        let u = vec![0.3, 1.2, -0.7, 2.0, 0.1, -1.1];
        let v = vec![2.0, -1.1, 0.3, 0.1, -0.7, 1.2];
        let w = vec![0.5, 0.2, 0.9, -0.4, 0.0, 0.7];
        let a = step("a", u.clone(), v.clone(), w.clone(), u.clone());
        let b = step("b", v.clone(), u.clone(), w, u);
        let m = fit_ranking_model(&[&a, &b], &Predictor::JOINT).unwrap();
        for (got, want) in m.betas.iter().zip([0.5, 0.5, 0.0]) {
            assert!(close(*got, want, 1e-10), "{:?}", m.betas);
        }
    }

    #[test]
    fn rank_deficient_step_is_excluded() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = randv(&mut rng, 8);
        let good = step(
            "good",
            s.clone(),
            randv(&mut rng, 8),
            randv(&mut rng, 8),
            randv(&mut rng, 8),
        );
        let other = step(
            "other",
            randv(&mut rng, 8),
            randv(&mut rng, 8),
            randv(&mut rng, 8),
            randv(&mut rng, 8),
        );
        let bad = step("bad", s.clone(), s.clone(), randv(&mut rng, 8), randv(&mut rng, 8));
        let m = fit_ranking_model(&[&good, &bad, &other], &Predictor::JOINT).unwrap();
        assert_eq!(m.excluded, vec![String::from("bad")]);
        assert_eq!(m.steps_used, 2);
        let bad2 = step("bad2", s.clone(), s.clone(), randv(&mut rng, 8), randv(&mut rng, 8));
        assert!(matches!(
            fit_ranking_model(&[&bad, &bad2], &Predictor::JOINT),
            Err(Error::Collinear(_))
        ));
    }

    #[test]
    fn oracle_predictor_scores_perfectly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pool: Vec<CoefficientMatrix> = (0..4)
            .map(|i| {
                step(
                    &format!("{i}"),
                    randv(&mut rng, 6),
                    randv(&mut rng, 6),
                    randv(&mut rng, 6),
                    randv(&mut rng, 6),
                )
            })
            .collect();
        let scores = sw_loo_with(&pool, |_| Ok(|s: &CoefficientMatrix| Ok(s.fg.clone()))).unwrap();
        for s in &scores {
            assert_eq!(s.rho, Some(1.0));
            assert_eq!(s.mae, 0.0);
        }
        let flat = sw_loo_with(&pool, |_| Ok(|s: &CoefficientMatrix| Ok(vec![0.25; s.len()]))).unwrap();
        for (s, step) in flat.iter().zip(&pool) {
            assert_eq!(s.rho, None);
            let want = mean(&step.fg.iter().map(|f| libm::fabs(f - 0.25)).collect::<Vec<_>>());
            assert!(close(s.mae, want, 1e-15));
        }
    }

    #[test]
    fn planted_signal_beats_sic_alone() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pool: Vec<CoefficientMatrix> = (0..3)
            .map(|i| {
                let (s, c, n) = (randv(&mut rng, 30), randv(&mut rng, 30), randv(&mut rng, 30));
                let noise = randv(&mut rng, 30);
                let fg = (0..30)
                    .map(|k| 0.5 * s[k] + 0.8 * c[k] + 1.0 * n[k] + 0.3 * noise[k])
                    .collect();
                step(&format!("{i}"), s, c, n, fg)
            })
            .collect();
        let joint = sw_loo(&pool, &Predictor::JOINT).unwrap();
        let sic = sw_loo(&pool, &[Predictor::Sic]).unwrap();
        let avg = |v: &[LooScore]| mean(&v.iter().map(|s| s.rho.unwrap()).collect::<Vec<_>>());
        assert!(avg(&joint) > avg(&sic));
        assert!(sw_loo(&pool[..2], &Predictor::JOINT).is_err());
    }

    #[test]
    fn missing_optional_column() {
        let s = step("x", vec![1.0], vec![1.0], vec![1.0], vec![1.0]);
        assert!(s.column(Predictor::AllNic).is_err());
    }

    fn distinct(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::hash_set(-1000i32..1000, n).prop_map(|s| s.into_iter().map(|v| v as f64 / 10.0).collect())
    }

    proptest! {
        #[test]
        fn monotone_invariance(x in distinct(8), y in distinct(8)) {
            let r = spearman(&x, &y).unwrap();
            let tx: Vec<f64> = x.iter().map(|v| libm::exp(v / 50.0) * 3.0 - 1.0).collect();
            let ty: Vec<f64> = y.iter().map(|v| v * v * v + 4.0 * v).collect();
            prop_assert!(libm::fabs(spearman(&tx, &ty).unwrap() - r) < 1e-12);
        }

        #[test]
        fn self_and_antisymmetry(x in distinct(7), y in distinct(7)) {
            prop_assert!(libm::fabs(spearman(&x, &x).unwrap() - 1.0) < 1e-12);
            let neg: Vec<f64> = y.iter().map(|v| -v).collect();
            prop_assert!(libm::fabs(spearman(&x, &neg).unwrap() + spearman(&x, &y).unwrap()) < 1e-12);
        }

        #[test]
        fn noiseless_recovery(beta in prop::collection::vec(-3.0f64..3.0, 3), seed in 0u64..500) {
            prop_assume!(beta.iter().any(|b| libm::fabs(*b) > 0.1));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let steps: Vec<CoefficientMatrix> = (0..3).map(|i| {
                let (s, c, n) = (randv(&mut rng, 12), randv(&mut rng, 12), randv(&mut rng, 12));
                let fg = (0..12).map(|k| beta[0] * s[k] + beta[1] * c[k] + beta[2] * n[k]).collect();
                step(&format!("{i}"), s, c, n, fg)
            }).collect();
            let refs: Vec<&CoefficientMatrix> = steps.iter().collect();
            let m = fit_ranking_model(&refs, &Predictor::JOINT).unwrap();
            for (got, want) in m.raw_slopes().iter().zip(&beta) {
                prop_assert!(libm::fabs(got - want) < 1e-8);
            }
        }
    }
}
