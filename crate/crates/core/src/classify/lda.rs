//! Two-class Fisher linear discriminant.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Class;

/// Ridge added to a singular within-class scatter, relative to its mean diagonal.
pub const RIDGE: f64 = 1e-6;
/// Direction norm below which the discriminant is considered degenerate.
const DEGENERATE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lda {
    /// Unit-norm direction; positive scores favour class A.
    pub w: Vec<f64>,
    pub b: f64,
    /// Logistic slope of the posterior under equal-covariance Gaussians.
    pub posterior_slope: f64,
    pub warnings: Vec<String>,
}

impl Lda {
    pub fn fit(x: &[Vec<f64>], classes: &[Class]) -> Option<Lda> {
        let k = x.first()?.len();
        let mean_of = |c: Class| -> Option<DVector<f64>> {
            let rows: Vec<&Vec<f64>> = x.iter().zip(classes).filter(|(_, &cl)| cl == c).map(|(r, _)| r).collect();
            if rows.is_empty() {
                return None;
            }
            let mut m = DVector::zeros(k);
            for r in &rows {
                m += DVector::from_column_slice(r);
            }
            Some(m / rows.len() as f64)
        };
        let (ma, mb) = (mean_of(Class::A)?, mean_of(Class::B)?);
        let mut sw = DMatrix::zeros(k, k);
        for (r, &c) in x.iter().zip(classes) {
            let d = DVector::from_column_slice(r) - if c == Class::A { &ma } else { &mb };
            sw += &d * d.transpose();
        }

        let mut warnings = Vec::new();
        let diff = &ma - &mb;
        let solve = |m: &DMatrix<f64>| m.clone().cholesky().map(|c| c.solve(&diff));
        let singular = {
            let eig = sw.clone().symmetric_eigenvalues();
            let max = eig.iter().copied().fold(0.0f64, f64::max);
            let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
            max.is_nan() || max <= 0.0 || min <= 1e-12 * max
        };
        let mut w = if singular {
            let lambda = RIDGE * (sw.trace() / k as f64).max(f64::MIN_POSITIVE);
            warnings.push(format!("singular within-class scatter; ridge {lambda:.3e} added"));
            let ridged = &sw + DMatrix::identity(k, k) * lambda;
            solve(&ridged).unwrap_or_else(|| diff.clone())
        } else {
            solve(&sw).unwrap_or_else(|| diff.clone())
        };
        if w.norm() < DEGENERATE {
            warnings.push("class means coincide; falling back to the first principal axis".to_string());
            w = DVector::zeros(k);
            w[0] = 1.0;
        }
        w /= w.norm();
        let b = -w.dot(&(&ma + &mb)) / 2.0;

        let n = x.len() as f64;
        let s2 = (w.transpose() * &sw * &w)[(0, 0)] / (n - 2.0).max(1.0);
        let gap = w.dot(&diff);
        let posterior_slope = if s2 > 0.0 { gap / s2 } else { 0.0 };
        Some(Lda {
            w: w.iter().copied().collect(),
            b,
            posterior_slope,
            warnings,
        })
    }

    pub fn score(&self, p: &[f64]) -> f64 {
        self.w.iter().zip(p).map(|(w, x)| w * x).sum::<f64>() + self.b
    }

    /// Score 0 belongs to class A.
    pub fn classify(score: f64) -> Class {
        if score >= 0.0 {
            Class::A
        } else {
            Class::B
        }
    }

    /// P(class A | score).
    pub fn posterior(&self, score: f64) -> f64 {
        1.0 / (1.0 + (-self.posterior_slope * score).exp())
    }
}
