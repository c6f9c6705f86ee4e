//! Augmented Dickey-Fuller test, constant and no trend.
//!
//! The regression is `dx_t = a + b x_{t-1} + sum_j c_j dx_{t-j} + e_t`. The lag
//! order is chosen by AIC over `0..=p_max` on a common sample, then the chosen
//! model is refitted on all rows it can use. The statistic is the t-ratio of
//! `b`, compared against the MacKinnon (2010) response surface at 1%.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_ADF_LEN: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdfResult {
    pub statistic: f64,
    pub critical_1pct: f64,
    pub reject_unit_root: bool,
    pub lags_used: usize,
    pub nobs: usize,
}

/// `floor(12 * (n / 100)^(1/4))`, capped so the regression keeps degrees of
/// freedom.
pub fn max_lag(n: usize) -> usize {
    let schwert = (12.0 * (n as f64 / 100.0).powf(0.25)).floor() as usize;
    schwert.min((n / 2).saturating_sub(3))
}

/// 1% critical value for the constant-only case with `nobs` observations.
pub fn mackinnon_critical_1pct(nobs: usize) -> f64 {
    let t = nobs as f64;
    -3.43035 - 6.5393 / t - 16.786 / (t * t) - 79.433 / (t * t * t)
}

/// Householder QR of a column-major `m x k` design.
struct Qr {
    m: usize,
    /// Reflected columns; the upper triangle holds R.
    a: Vec<f64>,
    /// Householder vectors, one per column, stored from the diagonal down.
    vs: Vec<Vec<f64>>,
}

impl Qr {
    fn new(m: usize, k: usize, mut a: Vec<f64>) -> Self {
        let mut vs = Vec::with_capacity(k);
        for j in 0..k {
            let col = &a[j * m + j..(j + 1) * m];
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut v = col.to_vec();
            let alpha = if v[0] >= 0.0 { -norm } else { norm };
            v[0] -= alpha;
            let vnorm2: f64 = v.iter().map(|x| x * x).sum();
            if vnorm2 > 0.0 {
                for jj in j..k {
                    let c = &mut a[jj * m + j..(jj + 1) * m];
                    let dot: f64 = v.iter().zip(c.iter()).map(|(p, q)| p * q).sum();
                    let f = 2.0 * dot / vnorm2;
                    c.iter_mut().zip(&v).for_each(|(ci, vi)| *ci -= f * vi);
                }
            }
            vs.push(v);
        }
        Qr { m, a, vs }
    }

    fn r(&self, i: usize, j: usize) -> f64 {
        self.a[j * self.m + i]
    }

    fn qt(&self, y: &[f64]) -> Vec<f64> {
        let mut y = y.to_vec();
        for (j, v) in self.vs.iter().enumerate() {
            let vnorm2: f64 = v.iter().map(|x| x * x).sum();
            if vnorm2 == 0.0 {
                continue;
            }
            let seg = &mut y[j..];
            let dot: f64 = v.iter().zip(seg.iter()).map(|(p, q)| p * q).sum();
            let f = 2.0 * dot / vnorm2;
            seg.iter_mut().zip(v).for_each(|(s, vi)| *s -= f * vi);
        }
        y
    }

    /// Fails when the leading `cols` columns are numerically rank deficient.
    fn check_rank(&self, cols: usize) -> Result<()> {
        let scale = (0..cols).map(|i| self.r(i, i).abs()).fold(0.0, f64::max);
        if scale == 0.0 || (0..cols).any(|i| self.r(i, i).abs() <= 1e-10 * scale) {
            return Err(Error::DegenerateSignal("singular ADF regression matrix".into()));
        }
        Ok(())
    }

    /// Solves `R b = qty` on the leading `cols` columns and returns `b` with
    /// the diagonal of `(X'X)^-1`.
    fn solve(&self, qty: &[f64], cols: usize) -> (Vec<f64>, Vec<f64>) {
        let mut b = vec![0.0; cols];
        for i in (0..cols).rev() {
            let mut s = qty[i];
            for j in i + 1..cols {
                s -= self.r(i, j) * b[j];
            }
            b[i] = s / self.r(i, i);
        }
        // R^-1, upper triangular
        let mut rinv = vec![0.0; cols * cols];
        for j in 0..cols {
            rinv[j * cols + j] = 1.0 / self.r(j, j);
            for i in (0..j).rev() {
                let mut s = 0.0;
                for l in i + 1..=j {
                    s += self.r(i, l) * rinv[l * cols + j];
                }
                rinv[i * cols + j] = -s / self.r(i, i);
            }
        }
        let diag = (0..cols)
            .map(|i| (i..cols).map(|j| rinv[i * cols + j].powi(2)).sum())
            .collect();
        (b, diag)
    }
}

/// Design with columns `[1, x_{t-1}, dx_{t-1}, .., dx_{t-lags}]` over rows
/// `first..dx.len()` of the differenced series.
fn design(x: &[f64], dx: &[f64], lags: usize, first: usize) -> (Vec<f64>, Vec<f64>, usize, usize) {
    let m = dx.len() - first;
    let k = 2 + lags;
    let mut a = Vec::with_capacity(m * k);
    a.extend(std::iter::repeat(1.0).take(m));
    a.extend_from_slice(&x[first..first + m]);
    for j in 1..=lags {
        a.extend_from_slice(&dx[first - j..first - j + m]);
    }
    (a, dx[first..].to_vec(), m, k)
}

fn aic(ssr: f64, nobs: usize, params: usize) -> f64 {
    let n = nobs as f64;
    let llf = -n / 2.0 * ((2.0 * std::f64::consts::PI).ln() + (ssr / n).ln() + 1.0);
    -2.0 * llf + 2.0 * params as f64
}

pub fn adf_test(x: &[f64]) -> Result<AdfResult> {
    let n = x.len();
    if n < MIN_ADF_LEN {
        return Err(Error::InsufficientData(format!(
            "ADF needs at least {MIN_ADF_LEN} samples, got {n}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateSignal("non-finite sample in ADF input".into()));
    }
    let dx: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let p_max = max_lag(n);

    // Nested models share one factorisation: the QR of the leading columns
    // is the leading block of the full QR.
    let (a, y, m, k) = design(x, &dx, p_max, p_max);
    let qr = Qr::new(m, k, a);
    qr.check_rank(2)?;
    let qty = qr.qt(&y);
    let mut best = (f64::INFINITY, 0usize);
    for p in 0..=p_max {
        let cols = 2 + p;
        if qr.check_rank(cols).is_err() {
            break;
        }
        let ssr: f64 = qty[cols..].iter().map(|v| v * v).sum();
        let score = aic(ssr, m, cols);
        if score < best.0 {
            best = (score, p);
        }
    }
    let lags = best.1;

    let (a, y, m, k) = design(x, &dx, lags, lags);
    let qr = Qr::new(m, k, a);
    qr.check_rank(k)?;
    let qty = qr.qt(&y);
    let (beta, diag) = qr.solve(&qty, k);
    let ssr: f64 = qty[k..].iter().map(|v| v * v).sum();
    let sigma2 = ssr / (m - k) as f64;
    let se = (sigma2 * diag[1]).sqrt();
    if !(se > 0.0) || !se.is_finite() {
        return Err(Error::DegenerateSignal("zero residual variance in ADF regression".into()));
    }
    let statistic = beta[1] / se;
    let critical_1pct = mackinnon_critical_1pct(m);
    Ok(AdfResult {
        statistic,
        critical_1pct,
        reject_unit_root: statistic < critical_1pct,
        lags_used: lags,
        nobs: m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn ar1(seed: u64, n: usize, phi: f64) -> Vec<f64> {
        let e = noise(seed, n + 200);
        let mut x = 0.0;
        let mut out = Vec::with_capacity(n);
        for (t, v) in e.iter().enumerate() {
            x = phi * x + v;
            if t >= 200 {
                out.push(x);
            }
        }
        out
    }

    /// Plain normal-equation OLS, used only to cross-check the QR path.
    fn ols_normal(xcols: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
        let k = xcols.len();
        let mut m = vec![vec![0.0; k + 1]; k];
        for i in 0..k {
            for j in 0..k {
                m[i][j] = xcols[i].iter().zip(&xcols[j]).map(|(a, b)| a * b).sum();
            }
            m[i][k] = xcols[i].iter().zip(y).map(|(a, b)| a * b).sum();
        }
        for c in 0..k {
            let p = (c..k).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())).unwrap();
            m.swap(c, p);
            for r in 0..k {
                if r != c {
                    let f = m[r][c] / m[c][c];
                    for cc in c..=k {
                        m[r][cc] -= f * m[c][cc];
                    }
                }
            }
        }
        (0..k).map(|i| m[i][k] / m[i][i]).collect()
    }

    #[test]
    fn qr_matches_normal_equations() {
        let x = ar1(3, 300, 0.7);
        let dx: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let (a, y, m, k) = design(&x, &dx, 3, 3);
        let cols: Vec<Vec<f64>> = (0..k).map(|j| a[j * m..(j + 1) * m].to_vec()).collect();
        let expected = ols_normal(&cols, &y);
        let qr = Qr::new(m, k, a);
        let (b, _) = qr.solve(&qr.qt(&y), k);
        for (p, q) in b.iter().zip(&expected) {
            assert!((p - q).abs() < 1e-9 * (1.0 + q.abs()), "{p} vs {q}");
        }
    }

    #[test]
    fn critical_value_large_sample() {
        let c = mackinnon_critical_1pct(3000);
        assert!((c - (-3.4325)).abs() < 1e-3, "{c}");
    }

    #[test]
    fn max_lag_rule() {
        assert_eq!(max_lag(3000), 28);
        assert_eq!(max_lag(100), 12);
        assert_eq!(max_lag(50), 10);
    }

    #[test]
    fn stationary_ar1_rejected() {
        let r = adf_test(&ar1(1, 3000, 0.5)).unwrap();
        assert!(r.reject_unit_root, "{r:?}");
        assert_eq!(r.reject_unit_root, r.statistic < r.critical_1pct);
    }

    #[test]
    fn random_walk_not_rejected() {
        let e = noise(2, 3000);
        let walk: Vec<f64> = e
            .iter()
            .scan(0.0, |s, v| {
                *s += v;
                Some(*s)
            })
            .collect();
        let r = adf_test(&walk).unwrap();
        assert!(!r.reject_unit_root, "{r:?}");
    }

    #[test]
    fn constant_series_is_degenerate() {
        assert!(matches!(adf_test(&[4.0; 200]), Err(Error::DegenerateSignal(_))));
    }

    #[test]
    fn short_series_rejected() {
        assert!(matches!(adf_test(&[1.0; 49]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn affine_invariance() {
        let x = ar1(9, 1000, 0.95);
        let base = adf_test(&x).unwrap();
        for (a, b) in [(3.0, 100.0), (-0.5, -7.0), (1e-3, 1e3)] {
            let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let r = adf_test(&y).unwrap();
            assert_eq!(r.lags_used, base.lags_used);
            assert_eq!(r.reject_unit_root, base.reject_unit_root);
            assert!((r.statistic - base.statistic).abs() < 1e-6 * base.statistic.abs());
        }
    }
}
