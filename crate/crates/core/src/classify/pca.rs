//! Principal component analysis retaining a fraction of the variance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

pub const VARIANCE_RETAINED: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Orthonormal components, one per row, in decreasing variance order.
    pub components: Vec<Vec<f64>>,
    /// Variance along each retained component.
    pub variances: Vec<f64>,
    pub total_variance: f64,
}

/// Eigenpairs of a symmetric matrix sorted by decreasing eigenvalue.
fn sorted_eigen(m: DMatrix<f64>) -> Vec<(f64, DVector<f64>)> {
    let eig = SymmetricEigen::new(m);
    let mut pairs: Vec<(f64, DVector<f64>)> = eig
        .eigenvalues
        .iter()
        .zip(eig.eigenvectors.column_iter())
        .map(|(&l, v)| (l.max(0.0), v.into_owned()))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

/// Flip `v` so that its largest-magnitude entry is positive.
fn canonical_sign(mut v: DVector<f64>) -> DVector<f64> {
    let big = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
    if big < 0.0 {
        v.neg_mut();
    }
    v
}

impl Pca {
    /// Fit on the rows of `x` and keep the fewest components explaining at least
    /// `retain` of the total (population) variance. Uses the Gram matrix when there
    /// are fewer rows than columns.
    pub fn fit(x: &DMatrix<f64>, retain: f64) -> Option<Pca> {
        let (n, d) = x.shape();
        if n == 0 || d == 0 {
            return None;
        }
        let mean = x.row_mean();
        let mut xc = x.clone();
        for mut row in xc.row_iter_mut() {
            row -= &mean;
        }
        let pairs: Vec<(f64, DVector<f64>)> = if n < d {
            let gram = &xc * xc.transpose() / n as f64;
            sorted_eigen(gram)
                .into_iter()
                .map(|(l, u)| {
                    let v = xc.transpose() * u;
                    let norm = v.norm();
                    let v = if norm > 0.0 { v / norm } else { v };
                    (l, v)
                })
                .collect()
        } else {
            let cov = xc.transpose() * &xc / n as f64;
            sorted_eigen(cov)
        };
        let total: f64 = pairs.iter().map(|p| p.0).sum();
        if total.is_nan() || total <= 0.0 {
            return None;
        }
        let mut k = 0;
        let mut acc = 0.0;
        while k < pairs.len() && acc < retain * total * (1.0 - 1e-12) {
            acc += pairs[k].0;
            k += 1;
        }
        let components = pairs[..k]
            .iter()
            .map(|(_, v)| canonical_sign(v.clone()).iter().copied().collect())
            .collect();
        Some(Pca {
            mean: mean.iter().copied().collect(),
            components,
            variances: pairs[..k].iter().map(|p| p.0).collect(),
            total_variance: total,
        })
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn explained(&self) -> f64 {
        self.variances.iter().sum::<f64>() / self.total_variance
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((c, x), m)| c * (x - m)).sum())
            .collect()
    }

    pub fn reconstruct(&self, p: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &s) in self.components.iter().zip(p) {
            for (o, ci) in out.iter_mut().zip(c) {
                *o += s * ci;
            }
        }
        out
    }

    /// Map a component-space direction back to feature space.
    pub fn back_project(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.mean.len()];
        for (c, &s) in self.components.iter().zip(w) {
            for (o, ci) in out.iter_mut().zip(c) {
                *o += s * ci;
            }
        }
        out
    }
}
