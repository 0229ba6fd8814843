//! Weighted binomial logistic regression fitted by iteratively reweighted
//! least squares, with Wald significance tests and ROC/AUC evaluation.
//!
//! Observation weights enter the likelihood multiplicatively (they are not
//! resampling weights), so scaling all weights by a constant leaves the
//! coefficients unchanged and only moves the standard errors.

mod linalg;
pub mod metrics;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use linalg::Cholesky;

pub use metrics::{k_fold_cv, roc_auc, roc_curve, stratified_folds, FoldResult, RocPoint};

/// Linear predictors are clamped to this magnitude before the sigmoid so
/// that risks stay strictly inside (0, 1).
pub const LINEAR_PREDICTOR_CLAMP: f64 = 35.0;

pub fn sigmoid(eta: f64) -> f64 {
    let eta = eta.clamp(-LINEAR_PREDICTOR_CLAMP, LINEAR_PREDICTOR_CLAMP);
    1.0 / (1.0 + (-eta).exp())
}

#[derive(Clone, Debug)]
pub struct FitConfig {
    pub max_iter: usize,
    /// Converged once every score-equation residual is at most this.
    pub gradient_tol: f64,
    /// ... or once the relative change of the log-likelihood is at most this.
    pub loglik_rel_tol: f64,
    /// Ridge added to the diagonal of the normal equations.
    pub ridge: f64,
    /// Any coefficient exceeding this magnitude flags separation.
    pub separation_threshold: f64,
    /// Relative pivot below which a column is treated as aliased.
    pub alias_tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iter: 100,
            gradient_tol: 1e-8,
            loglik_rel_tol: 1e-10,
            ridge: 1e-8,
            separation_threshold: 15.0,
            alias_tol: 1e-9,
        }
    }
}

/// Intercept plus one coefficient per design column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

impl LogisticModel {
    pub fn zeros(n: usize) -> Self {
        LogisticModel {
            intercept: 0.0,
            coefficients: vec![0.0; n],
        }
    }

    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(x)
                .map(|(c, v)| c * v)
                .sum::<f64>()
    }

    /// `sigmoid(intercept + coef . x)` with the linear predictor clamped.
    pub fn predict_risk(&self, x: &[f64]) -> f64 {
        debug_assert!(x.len() >= self.coefficients.len());
        sigmoid(self.linear_predictor(x))
    }
}

/// Per-parameter diagnostics; index 0 is the intercept, `j + 1` is column `j`.
#[derive(Clone, Debug)]
pub struct FitDiagnostics {
    pub converged: bool,
    pub iterations: usize,
    pub separated: bool,
    /// False for parameters that hit the separation threshold or are aliased.
    pub estimable: Vec<bool>,
    /// True for parameters dropped as linearly dependent on earlier ones
    /// (or constant at zero); a subset of the non-estimable ones.
    pub aliased: Vec<bool>,
    pub std_errors: Vec<Option<f64>>,
    pub p_values: Vec<Option<f64>>,
    pub log_likelihood: f64,
    /// Largest absolute ridge-adjusted score-equation residual at the final estimate.
    pub max_score_residual: f64,
}

impl FitDiagnostics {
    /// Wald p-value of design column `column`.
    pub fn column_p_value(&self, column: usize) -> Option<f64> {
        self.p_values[column + 1]
    }

    pub fn column_estimable(&self, column: usize) -> bool {
        self.estimable[column + 1]
    }
}

#[derive(Clone, Debug)]
pub struct LogisticFit {
    pub model: LogisticModel,
    pub diagnostics: FitDiagnostics,
}

/// Two-sided normal p-value of `coef / std_error`.
pub fn wald_p_value_from(coef: f64, std_error: f64) -> f64 {
    if coef == 0.0 {
        return 1.0;
    }
    let z = (coef / std_error).abs();
    erfc(z / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

/// Wald p-value for design column `column` of a fit. Fails when the
/// coefficient could not be estimated; callers discard such predictors.
pub fn wald_p_value(fit: &LogisticFit, column: usize) -> Result<f64> {
    let d = &fit.diagnostics;
    if !d.column_estimable(column) {
        return Err(Error::NotEstimable(column));
    }
    let se = d.std_errors[column + 1].ok_or(Error::NotEstimable(column))?;
    Ok(wald_p_value_from(fit.model.coefficients[column], se))
}

struct Problem<'a> {
    n: usize,
    p: usize,
    /// Row-major with a leading 1 for the intercept.
    rows: Vec<f64>,
    y: &'a [bool],
    w: &'a [f64],
}

impl Problem<'_> {
    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.p..(i + 1) * self.p]
    }

    fn eta(&self, beta: &[f64], i: usize) -> f64 {
        self.row(i).iter().zip(beta).map(|(x, b)| x * b).sum()
    }

    fn log_likelihood(&self, beta: &[f64], ridge: f64) -> f64 {
        let mut ll = 0.0;
        for i in 0..self.n {
            let eta = self
                .eta(beta, i)
                .clamp(-LINEAR_PREDICTOR_CLAMP, LINEAR_PREDICTOR_CLAMP);
            // log sigmoid(eta) = -softplus(-eta)
            let lp = if self.y[i] { -softplus(-eta) } else { -softplus(eta) };
            ll += self.w[i] * lp;
        }
        ll - 0.5 * ridge * beta.iter().map(|b| b * b).sum::<f64>()
    }

    /// Ridge-adjusted score vector and the (unridged) weighted information matrix.
    fn score_and_information(&self, beta: &[f64], ridge: f64) -> (Vec<f64>, Vec<f64>) {
        let p = self.p;
        let mut g = vec![0.0; p];
        let mut h = vec![0.0; p * p];
        let mut nz: Vec<usize> = Vec::with_capacity(p);
        for i in 0..self.n {
            let row = self.row(i);
            let mu = sigmoid(self.eta(beta, i));
            let resid = self.w[i] * ((self.y[i] as u8 as f64) - mu);
            let curv = self.w[i] * mu * (1.0 - mu);
            nz.clear();
            nz.extend((0..p).filter(|&j| row[j] != 0.0));
            for &a in &nz {
                g[a] += resid * row[a];
                let xa = curv * row[a];
                for &b in nz.iter().take_while(|&&b| b <= a) {
                    h[a * p + b] += xa * row[b];
                }
            }
        }
        for j in 0..p {
            g[j] -= ridge * beta[j];
        }
        (g, h)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Fits `P(y = 1) = sigmoid(b0 + X b)` with observation weights `w`.
///
/// `columns` is column-major (each slice one predictor over all rows). An
/// optional warm start supplies `[intercept, coefs...]`.
pub fn fit_weighted_logistic(
    columns: &[&[f64]],
    y: &[bool],
    w: &[f64],
    cfg: &FitConfig,
    warm_start: Option<&[f64]>,
) -> Result<LogisticFit> {
    let n = y.len();
    if w.len() != n || columns.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidInput(format!(
            "row count mismatch: {} labels, {} weights, column lengths {:?}",
            n,
            w.len(),
            columns.iter().map(|c| c.len()).collect::<Vec<_>>()
        )));
    }
    if let Some(i) = w.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::InvalidInput(format!(
            "weight {i} must be finite and positive"
        )));
    }
    if let Some(j) = columns.iter().position(|c| c.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite(format!("design column {j}")));
    }
    let positives = y.iter().filter(|&&v| v).count();
    if positives == 0 || positives == n {
        return Err(Error::SingleClass);
    }

    let p = columns.len() + 1;
    let mut rows = vec![0.0; n * p];
    for i in 0..n {
        rows[i * p] = 1.0;
        for (j, c) in columns.iter().enumerate() {
            rows[i * p + j + 1] = c[i];
        }
    }
    let prob = Problem { n, p, rows, y, w };

    let total_w: f64 = w.iter().sum();
    let mut beta = match warm_start {
        Some(b) if b.len() == p => b.to_vec(),
        _ => {
            let ybar = y
                .iter()
                .zip(w)
                .filter(|(v, _)| **v)
                .map(|(_, w)| w)
                .sum::<f64>()
                / total_w;
            let mut b = vec![0.0; p];
            b[0] = (ybar / (1.0 - ybar)).ln();
            b
        }
    };

    // Columns with no weighted variation at all cannot be estimated.
    let mut fixed = vec![false; p];
    for j in 1..p {
        let col = columns[j - 1];
        let first = col[0];
        if col.iter().all(|&v| v == first) && first == 0.0 {
            fixed[j] = true;
        }
    }
    for j in 0..p {
        if fixed[j] {
            beta[j] = 0.0;
        }
    }

    let mut estimable = vec![true; p];
    let mut separated = false;
    let mut converged = false;
    let mut iterations = 0;
    let mut ll = prob.log_likelihood(&beta, cfg.ridge);
    let mut aliased = fixed.clone();

    while iterations < cfg.max_iter {
        let (g, h) = prob.score_and_information(&beta, cfg.ridge);
        let max_g = g
            .iter()
            .zip(&aliased)
            .filter(|(_, a)| !**a)
            .map(|(v, _)| v.abs())
            .fold(0.0, f64::max);
        if max_g <= cfg.gradient_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let reference: Vec<f64> = (0..p).map(|j| h[j * p + j].max(f64::MIN_POSITIVE)).collect();
        let mut hr = h.clone();
        for j in 0..p {
            hr[j * p + j] += cfg.ridge;
        }
        let ch = Cholesky::factor(&hr, p, &reference, cfg.alias_tol, &aliased);
        aliased = ch.aliased.clone();
        let step = ch.solve(&g);

        // Newton step with halving while the penalized likelihood decreases.
        let mut t = 1.0;
        let mut next = beta.clone();
        let mut next_ll = ll;
        for _ in 0..30 {
            for j in 0..p {
                next[j] = if aliased[j] { 0.0 } else { beta[j] + t * step[j] };
            }
            next_ll = prob.log_likelihood(&next, cfg.ridge);
            if next_ll >= ll - 1e-12 * ll.abs() {
                break;
            }
            t *= 0.5;
        }
        let rel = (next_ll - ll).abs() / ll.abs().max(1e-300);
        beta = next;
        ll = next_ll;

        let mut blew_up = false;
        for j in 0..p {
            if beta[j].abs() > cfg.separation_threshold {
                estimable[j] = false;
                blew_up = true;
            }
        }
        if blew_up {
            separated = true;
            break;
        }
        if rel <= cfg.loglik_rel_tol {
            converged = true;
            break;
        }
    }

    for j in 0..p {
        if aliased[j] {
            estimable[j] = false;
            beta[j] = 0.0;
        }
    }

    let (g, h) = prob.score_and_information(&beta, cfg.ridge);
    let max_score_residual = g
        .iter()
        .zip(&estimable)
        .filter(|(_, e)| **e)
        .map(|(v, _)| v.abs())
        .fold(0.0, f64::max);
    let reference: Vec<f64> = (0..p).map(|j| h[j * p + j].max(f64::MIN_POSITIVE)).collect();
    let mut hr = h;
    for j in 0..p {
        hr[j * p + j] += cfg.ridge;
    }
    let not_estimable: Vec<bool> = estimable.iter().map(|e| !e).collect();
    let ch = Cholesky::factor(&hr, p, &reference, cfg.alias_tol, &not_estimable);
    let inv = ch.inverse_diagonal();
    let mut std_errors = vec![None; p];
    let mut p_values = vec![None; p];
    for j in 0..p {
        if ch.aliased[j] {
            estimable[j] = false;
            continue;
        }
        if let Some(v) = inv[j].filter(|v| *v > 0.0 && v.is_finite()) {
            let se = v.sqrt();
            std_errors[j] = Some(se);
            p_values[j] = Some(wald_p_value_from(beta[j], se));
        }
    }

    Ok(LogisticFit {
        model: LogisticModel {
            intercept: beta[0],
            coefficients: beta[1..].to_vec(),
        },
        diagnostics: FitDiagnostics {
            converged,
            iterations,
            separated,
            estimable,
            std_errors,
            p_values,
            log_likelihood: ll,
            max_score_residual,
            aliased,
        },
    })
}

/// Result of backward elimination; `kept` indexes the input columns.
#[derive(Clone, Debug)]
pub struct Elimination {
    pub kept: Vec<usize>,
    pub fit: LogisticFit,
}

/// Backward elimination on Wald p-values. Non-estimable free columns are
/// dropped first, then the free column with the largest p-value at or above
/// `alpha` is dropped one at a time (ties go to the lower index) and the
/// model refitted from the previous estimate. Columns flagged in `forced`
/// are never dropped.
pub fn backward_eliminate(
    columns: &[&[f64]],
    y: &[bool],
    w: &[f64],
    alpha: f64,
    forced: &[bool],
    cfg: &FitConfig,
) -> Result<Elimination> {
    let mut kept: Vec<usize> = (0..columns.len()).collect();
    let mut warm: Option<Vec<f64>> = None;
    loop {
        let cols: Vec<&[f64]> = kept.iter().map(|&j| columns[j]).collect();
        let fit = fit_weighted_logistic(&cols, y, w, cfg, warm.as_deref())?;
        let d = &fit.diagnostics;
        let free = |k: usize| !forced.get(kept[k]).copied().unwrap_or(false);

        let broken: Vec<usize> = (0..kept.len())
            .filter(|&k| free(k) && !d.column_estimable(k))
            .collect();
        let drop: Vec<usize> = if !broken.is_empty() {
            broken
        } else {
            let mut worst: Option<(usize, f64)> = None;
            for k in (0..kept.len()).filter(|&k| free(k)) {
                let p = d.column_p_value(k).unwrap_or(1.0);
                if p >= alpha && worst.is_none_or(|(_, q)| p > q) {
                    worst = Some((k, p));
                }
            }
            worst.map(|(k, _)| vec![k]).unwrap_or_default()
        };
        if drop.is_empty() {
            return Ok(Elimination { kept, fit });
        }
        let mut start = vec![fit.model.intercept];
        for k in 0..kept.len() {
            if !drop.contains(&k) {
                start.push(fit.model.coefficients[k]);
            }
        }
        // restart cold after a separated fit; its estimates are unusable
        warm = (!fit.diagnostics.separated).then_some(start);
        kept = kept
            .iter()
            .enumerate()
            .filter(|(k, _)| !drop.contains(k))
            .map(|(_, &j)| j)
            .collect();
    }
}

/// Log-likelihood gradient (unpenalized) at `beta = [intercept, coefs...]`.
pub fn log_likelihood_gradient(columns: &[&[f64]], y: &[bool], w: &[f64], beta: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; beta.len()];
    for i in 0..y.len() {
        let eta = beta[0] + columns.iter().zip(&beta[1..]).map(|(c, b)| c[i] * b).sum::<f64>();
        let r = w[i] * ((y[i] as u8 as f64) - sigmoid(eta));
        g[0] += r;
        for (j, c) in columns.iter().enumerate() {
            g[j + 1] += r * c[i];
        }
    }
    g
}

/// Unpenalized weighted log-likelihood at `beta = [intercept, coefs...]`.
pub fn log_likelihood(columns: &[&[f64]], y: &[bool], w: &[f64], beta: &[f64]) -> f64 {
    (0..y.len())
        .map(|i| {
            let eta = beta[0] + columns.iter().zip(&beta[1..]).map(|(c, b)| c[i] * b).sum::<f64>();
            w[i] * if y[i] { -softplus(-eta) } else { -softplus(eta) }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fit(columns: &[&[f64]], y: &[bool], w: &[f64]) -> LogisticFit {
        fit_weighted_logistic(columns, y, w, &FitConfig::default(), None).unwrap()
    }

    #[test]
    fn intercept_only_matches_closed_form() {
        let y: Vec<bool> = (0..1000).map(|i| i % 10 < 3).collect();
        let w = vec![1.0; 1000];
        let f = fit(&[], &y, &w);
        assert!(f.diagnostics.converged);
        assert!((f.model.intercept - (0.3f64 / 0.7).ln()).abs() < 1e-6);
    }

    #[test]
    fn rejects_single_class_and_bad_inputs() {
        let y = vec![true; 5];
        let w = vec![1.0; 5];
        assert!(matches!(
            fit_weighted_logistic(&[], &y, &w, &FitConfig::default(), None),
            Err(Error::SingleClass)
        ));
        let y = vec![true, false, true];
        let col = [1.0, f64::NAN, 0.0];
        assert!(matches!(
            fit_weighted_logistic(&[&col], &y, &[1.0; 3], &FitConfig::default(), None),
            Err(Error::NonFinite(_))
        ));
        assert!(fit_weighted_logistic(&[], &y, &[1.0, 0.0, 1.0], &FitConfig::default(), None).is_err());
        assert!(fit_weighted_logistic(&[], &y, &[1.0; 2], &FitConfig::default(), None).is_err());
    }

    #[test]
    fn constant_and_duplicate_columns_are_not_estimable() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 400;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..2) as f64).collect();
        let y: Vec<bool> = x.iter().map(|&v| rng.random::<f64>() < 0.3 + 0.3 * v).collect();
        let zero = vec![0.0; n];
        let f = fit(&[&x, &zero, &x], &y, &vec![1.0; n]);
        assert!(f.diagnostics.column_estimable(0));
        assert!(!f.diagnostics.column_estimable(1));
        assert!(!f.diagnostics.column_estimable(2));
        assert!(wald_p_value(&f, 1).is_err());
    }

    #[test]
    fn perfect_separation_is_flagged() {
        let x: Vec<f64> = (0..100).map(|i| (i % 2) as f64).collect();
        let y: Vec<bool> = x.iter().map(|&v| v == 1.0).collect();
        let f = fit(&[&x], &y, &vec![1.0; 100]);
        assert!(f.diagnostics.separated);
        assert!(!f.diagnostics.column_estimable(0));
        assert!(wald_p_value(&f, 0).is_err());
    }

    #[test]
    fn doubling_weights_keeps_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 500;
        let a: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(0..2) as f64).collect();
        let y: Vec<bool> = (0..n)
            .map(|i| rng.random::<f64>() < sigmoid(-0.5 + a[i] - 0.8 * b[i]))
            .collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let w2: Vec<f64> = w.iter().map(|v| v * 2.0).collect();
        let f1 = fit(&[&a, &b], &y, &w);
        let f2 = fit(&[&a, &b], &y, &w2);
        assert!((f1.model.intercept - f2.model.intercept).abs() < 1e-8);
        for (c1, c2) in f1.model.coefficients.iter().zip(&f2.model.coefficients) {
            assert!((c1 - c2).abs() < 1e-8);
        }
        let p1 = wald_p_value(&f1, 0).unwrap();
        let p2 = wald_p_value(&f2, 0).unwrap();
        assert!(p1 != p2);
    }

    #[test]
    fn wald_reference_values() {
        assert_eq!(wald_p_value_from(0.0, 0.3), 1.0);
        assert!((wald_p_value_from(1.96, 1.0) - 0.05).abs() < 1e-3);
        assert!((wald_p_value_from(-1.96, 1.0) - 0.05).abs() < 1e-3);
    }

    #[test]
    fn predict_risk_reference_values() {
        let m = LogisticModel::zeros(3);
        assert_eq!(m.predict_risk(&[0.0; 3]), 0.5);
        let extreme = LogisticModel {
            intercept: -1e6,
            coefficients: vec![],
        };
        let r = extreme.predict_risk(&[]);
        assert!(r > 0.0 && r < 1.0);
        let r = LogisticModel {
            intercept: 1e6,
            coefficients: vec![],
        }
        .predict_risk(&[]);
        assert!(r > 0.0 && r < 1.0);
    }

    #[test]
    fn predict_risk_matches_scalar_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let k = rng.random_range(0..8);
            let m = LogisticModel {
                intercept: rng.random_range(-3.0..3.0),
                coefficients: (0..k).map(|_| rng.random_range(-2.0..2.0)).collect(),
            };
            let x: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut eta = m.intercept;
            for i in 0..k {
                eta += m.coefficients[i] * x[i];
            }
            let naive = 1.0 / (1.0 + (-eta).exp());
            assert!((m.predict_risk(&x) - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn predict_risk_monotone_in_coefficient_sign() {
        let base = LogisticModel {
            intercept: 0.2,
            coefficients: vec![0.7, -0.4],
        };
        let x = [1.0, 1.0];
        let mut up = base.clone();
        up.coefficients[0] += 0.1;
        assert!(up.predict_risk(&x) > base.predict_risk(&x));
        let mut down = base.clone();
        down.coefficients[1] -= 0.1;
        assert!(down.predict_risk(&x) < base.predict_risk(&x));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let n = 60;
            let k = rng.random_range(1..4);
            let cols: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..n).map(|_| rng.random_range(-1.5..1.5)).collect())
                .collect();
            let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
            let y: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..3.0)).collect();
            let beta: Vec<f64> = (0..=k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = log_likelihood_gradient(&refs, &y, &w, &beta);
            for j in 0..=k {
                let h = 1e-5;
                let mut bp = beta.clone();
                bp[j] += h;
                let mut bm = beta.clone();
                bm[j] -= h;
                let fd = (log_likelihood(&refs, &y, &w, &bp) - log_likelihood(&refs, &y, &w, &bm))
                    / (2.0 * h);
                let rel = (fd - g[j]).abs() / g[j].abs().max(1.0);
                assert!(rel < 1e-6, "coordinate {j}: fd {fd} vs analytic {}", g[j]);
            }
        }
    }

    #[test]
    fn score_equations_hold_at_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let n = 300;
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(0..2) as f64).collect();
            let y: Vec<bool> = (0..n)
                .map(|i| rng.random::<f64>() < sigmoid(0.3 * a[i] - 0.5 * b[i]))
                .collect();
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
            let f = fit(&[&a, &b], &y, &w);
            assert!(f.diagnostics.converged);
            assert!(f.diagnostics.max_score_residual <= 1e-6);
            let beta = [f.model.intercept, f.model.coefficients[0], f.model.coefficients[1]];
            let g = log_likelihood_gradient(&[&a, &b], &y, &w, &beta);
            for (j, gj) in g.iter().enumerate() {
                let adjusted = gj - 1e-8 * beta[j];
                assert!(adjusted.abs() <= 1e-6);
            }
        }
    }
}
