//! Linear canonical correlation analysis between two embedding views.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Projection pair mapping both views into a shared `c`-dimensional space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CcaProjection {
    pub mean_a: Vec<f64>,
    pub mean_b: Vec<f64>,
    /// `[d_a × c]`, row-major.
    pub weights_a: Tensor,
    /// `[d_b × c]`, row-major.
    pub weights_b: Tensor,
    /// Canonical correlations, non-increasing, in `[0, 1]`.
    pub correlations: Vec<f64>,
    /// Whether a ridge term had to be added to a singular covariance.
    pub regularized: bool,
}

impl CcaProjection {
    pub fn components(&self) -> usize {
        self.correlations.len()
    }

    pub fn project_a(&self, x: &[f64]) -> Vec<f64> {
        project(x, &self.mean_a, &self.weights_a)
    }

    pub fn project_b(&self, x: &[f64]) -> Vec<f64> {
        project(x, &self.mean_b, &self.weights_b)
    }
}

fn project(x: &[f64], mean: &[f64], w: &Tensor) -> Vec<f64> {
    let c = w.shape()[1];
    let mut out = vec![0.0; c];
    for (i, (&xi, &mi)) in x.iter().zip(mean).enumerate() {
        let centred = xi - mi;
        for (o, &wv) in out.iter_mut().zip(w.row(i)) {
            *o += centred * wv;
        }
    }
    out
}

const SINGULAR_TOL: f64 = 1e-10;
const RIDGE: f64 = 1e-6;

fn to_matrix(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.shape()[0], t.shape()[1], t.data())
}

fn centre(m: &mut DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows() as f64;
    let means: Vec<f64> = (0..m.ncols()).map(|j| m.column(j).sum() / n).collect();
    for (j, mean) in means.iter().enumerate() {
        m.column_mut(j).add_scalar_mut(-mean);
    }
    means
}

/// Inverse square root of a covariance matrix; adds a ridge when the
/// matrix is numerically singular.
fn inv_sqrt(mut cov: DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let eig = SymmetricEigen::new(cov.clone());
    let max = eig.eigenvalues.iter().copied().fold(0.0_f64, f64::max);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let mut regularized = false;
    let eig = if min <= SINGULAR_TOL * max.max(f64::MIN_POSITIVE) {
        let ridge = RIDGE * max.max(1e-12);
        log::warn!("rank-deficient covariance in CCA; adding ridge {ridge:e}");
        for i in 0..cov.nrows() {
            cov[(i, i)] += ridge;
        }
        regularized = true;
        SymmetricEigen::new(cov)
    } else {
        eig
    };
    let scaled = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| 1.0 / l.max(f64::MIN_POSITIVE).sqrt()),
    );
    let q = &eig.eigenvectors;
    (q * DMatrix::from_diagonal(&scaled) * q.transpose(), regularized)
}

/// Fits `components` canonical directions between views `a` (`[N×d_a]`)
/// and `b` (`[N×d_b]`): whiten each view, then take the SVD of the whitened
/// cross-covariance.
pub fn cca_fit(a: &Tensor, b: &Tensor, components: usize) -> Result<CcaProjection> {
    if a.ndim() != 2 || b.ndim() != 2 || a.rows() != b.rows() {
        return Err(Error::Dimension(format!(
            "CCA views {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (n, da, db) = (a.rows(), a.shape()[1], b.shape()[1]);
    if components == 0 || components > da.min(db) {
        return Err(Error::Parameter(format!(
            "CCA components {components} must be in [1, {}]",
            da.min(db)
        )));
    }
    if n < 2 {
        return Err(Error::Parameter("CCA needs at least two samples".into()));
    }
    let mut xa = to_matrix(a);
    let mut xb = to_matrix(b);
    let mean_a = centre(&mut xa);
    let mean_b = centre(&mut xb);
    let scale = 1.0 / (n as f64 - 1.0);
    let caa = xa.transpose() * &xa * scale;
    let cbb = xb.transpose() * &xb * scale;
    let cab = xa.transpose() * &xb * scale;
    let (wa, reg_a) = inv_sqrt(caa);
    let (wb, reg_b) = inv_sqrt(cbb);
    let m = &wa * cab * &wb;
    let svd = m.svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));

    let mut weights_a = vec![0.0; da * components];
    let mut weights_b = vec![0.0; db * components];
    let mut correlations = Vec::with_capacity(components);
    for (k, &idx) in order.iter().take(components).enumerate() {
        correlations.push(svd.singular_values[idx].clamp(0.0, 1.0));
        let dir_a = &wa * u.column(idx);
        let dir_b = &wb * vt.row(idx).transpose();
        for i in 0..da {
            weights_a[i * components + k] = dir_a[i];
        }
        for i in 0..db {
            weights_b[i * components + k] = dir_b[i];
        }
    }
    Ok(CcaProjection {
        mean_a,
        mean_b,
        weights_a: Tensor::new(vec![da, components], weights_a)?,
        weights_b: Tensor::new(vec![db, components], weights_b)?,
        correlations,
        regularized: reg_a || reg_b,
    })
}
