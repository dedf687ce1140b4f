use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ordered_sum, CHUNK};
use crate::error::{Error, Result};

pub const DEFAULT_RIDGE: f64 = 1e-10;
pub const MAX_CONDITION: f64 = 1e12;

/// Polynomial features of the standardised state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Basis {
    /// Highest power of each coordinate.
    pub degree: usize,
    /// Add `s_j s_k` for `j < k` (only when `degree >= 2`).
    pub cross: bool,
}

impl Default for Basis {
    fn default() -> Self {
        Self {
            degree: 2,
            cross: true,
        }
    }
}

/// Least-squares conditional expectation estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Regression {
    pub basis: Basis,
    /// Relative ridge; the absolute penalty is `ridge · trace / p`.
    pub ridge: f64,
}

impl Default for Regression {
    fn default() -> Self {
        Self {
            basis: Basis::default(),
            ridge: DEFAULT_RIDGE,
        }
    }
}

/// Factorised normal equations for one time step.
pub struct Fit {
    m: usize,
    p: usize,
    /// Centred features, `m × p` row-major.
    phi: Vec<f64>,
    chol: Option<Cholesky<f64, Dyn>>,
    pub condition: f64,
}

impl Regression {
    /// Builds features at `points(i)` for paths `0..m` and factorises.
    /// The intercept is handled by centring and never penalised.
    pub fn prepare<'a, F>(&self, m: usize, n: usize, points: F, step: usize) -> Result<Fit>
    where
        F: Fn(usize) -> &'a [f64] + Sync,
    {
        let mf = m as f64;
        let mut kept = Vec::new();
        let mut centre = Vec::new();
        let mut scale = Vec::new();
        for j in 0..n {
            let mean = ordered_sum(m, |i| points(i)[j]) / mf;
            let var = ordered_sum(m, |i| (points(i)[j] - mean).powi(2)) / mf;
            let sd = var.sqrt();
            if sd > 1e-9 * (1.0 + mean.abs()) {
                kept.push(j);
                centre.push(mean);
                scale.push(sd);
            }
        }
        let deg = self.basis.degree.max(1);
        let pairs = if self.basis.cross && deg >= 2 {
            kept.len() * kept.len().saturating_sub(1) / 2
        } else {
            0
        };
        let p = kept.len() * deg + pairs;
        if p == 0 {
            return Ok(Fit {
                m,
                p: 0,
                phi: Vec::new(),
                chol: None,
                condition: 1.0,
            });
        }
        let mut phi = vec![0.0; m * p];
        phi.par_chunks_mut(p).enumerate().for_each(|(i, row)| {
            let x = points(i);
            let mut c = 0;
            let s: Vec<f64> = kept
                .iter()
                .enumerate()
                .map(|(a, &j)| (x[j] - centre[a]) / scale[a])
                .collect();
            for &v in &s {
                let mut pw = 1.0;
                for _ in 0..deg {
                    pw *= v;
                    row[c] = pw;
                    c += 1;
                }
            }
            if pairs > 0 {
                for a in 0..s.len() {
                    for b in a + 1..s.len() {
                        row[c] = s[a] * s[b];
                        c += 1;
                    }
                }
            }
        });
        let means: Vec<f64> = (0..p)
            .map(|k| ordered_sum(m, |i| phi[i * p + k]) / mf)
            .collect();
        phi.par_chunks_mut(p).for_each(|row| {
            for (v, mu) in row.iter_mut().zip(&means) {
                *v -= mu;
            }
        });
        let partial: Vec<Vec<f64>> = (0..m.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut g = vec![0.0; p * p];
                for i in c * CHUNK..((c + 1) * CHUNK).min(m) {
                    let row = &phi[i * p..(i + 1) * p];
                    for a in 0..p {
                        for b in a..p {
                            g[a * p + b] += row[a] * row[b];
                        }
                    }
                }
                g
            })
            .collect();
        let mut gram = DMatrix::<f64>::zeros(p, p);
        for g in &partial {
            for a in 0..p {
                for b in a..p {
                    gram[(a, b)] += g[a * p + b];
                }
            }
        }
        for a in 0..p {
            for b in a..p {
                let v = gram[(a, b)] / mf;
                gram[(a, b)] = v;
                gram[(b, a)] = v;
            }
        }
        let lambda = self.ridge * gram.trace() / p as f64;
        for a in 0..p {
            gram[(a, a)] += lambda;
        }
        let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
        let (lo, hi) = eig
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !(condition <= MAX_CONDITION) {
            return Err(Error::SingularRegression { step, condition });
        }
        let chol = Cholesky::new(gram).ok_or(Error::SingularRegression { step, condition })?;
        Ok(Fit {
            m,
            p,
            phi,
            chol: Some(chol),
            condition,
        })
    }
}

impl Fit {
    /// Fitted conditional expectation of `targets` at every path.
    pub fn project(&self, targets: &[f64]) -> Vec<f64> {
        let m = self.m;
        let first = targets[0];
        // constants are reproduced bit for bit
        if targets.iter().all(|&v| v == first) {
            return vec![first; m];
        }
        let mean = ordered_sum(m, |i| targets[i]) / m as f64;
        let chol = match &self.chol {
            Some(c) => c,
            None => return vec![mean; m],
        };
        let p = self.p;
        let partial: Vec<Vec<f64>> = (0..m.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut acc = vec![0.0; p];
                for i in c * CHUNK..((c + 1) * CHUNK).min(m) {
                    let r = targets[i] - mean;
                    for (a, v) in acc.iter_mut().enumerate() {
                        *v += self.phi[i * p + a] * r;
                    }
                }
                acc
            })
            .collect();
        let mut rhs = DVector::<f64>::zeros(p);
        for part in &partial {
            for a in 0..p {
                rhs[a] += part[a];
            }
        }
        rhs /= m as f64;
        let beta = chol.solve(&rhs);
        (0..m)
            .into_par_iter()
            .with_min_len(CHUNK)
            .map(|i| {
                let row = &self.phi[i * p..(i + 1) * p];
                mean + row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_quadratic() {
        let m = 1000;
        let xs: Vec<f64> = (0..m).map(|i| -2.0 + 4.0 * i as f64 / (m - 1) as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 + 2.0 * x - 0.5 * x * x).collect();
        let fit = Regression::default()
            .prepare(m, 1, |i| std::slice::from_ref(&xs[i]), 0)
            .unwrap();
        let f = fit.project(&ys);
        for (a, b) in f.iter().zip(&ys) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn degenerate_points_reduce_to_mean() {
        let xs = [0.5; 8];
        let ys: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let fit = Regression::default()
            .prepare(8, 1, |i| std::slice::from_ref(&xs[i]), 0)
            .unwrap();
        assert!(fit.project(&ys).iter().all(|v| *v == 3.5));
        assert_eq!(fit.project(&[2.0; 8]), vec![2.0; 8]);
    }

    #[test]
    fn unregularised_collinear_features_are_singular() {
        // two values only, so s and s² are collinear after centring
        let xs: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 1.0 } else { 3.0 }).collect();
        let reg = Regression {
            basis: Basis::default(),
            ridge: 0.0,
        };
        let r = reg.prepare(10, 1, |i| std::slice::from_ref(&xs[i]), 4);
        assert!(matches!(r, Err(Error::SingularRegression { step: 4, .. })));
    }
}
