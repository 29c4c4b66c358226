//! Probabilistic PCA: closed-form maximum-likelihood fit and exact
//! log-density through the q-dimensional inversion identity.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub const SIGMA2_FLOOR: f64 = 1e-9;
pub const DEFAULT_COMPONENTS: usize = 15;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone)]
pub struct PpcaModel {
    pub mean: DVector<f64>,
    /// D × q loadings
    pub w: DMatrix<f64>,
    pub sigma2: f64,
    /// σ² hit the floor at fit time
    pub sigma2_floored: bool,
    m_chol: Cholesky<f64, Dyn>,
    log_det_c: f64,
}

impl PartialEq for PpcaModel {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean
            && self.w == other.w
            && self.sigma2 == other.sigma2
            && self.sigma2_floored == other.sigma2_floored
    }
}

impl PpcaModel {
    pub fn from_parts(
        mean: DVector<f64>,
        w: DMatrix<f64>,
        sigma2: f64,
        sigma2_floored: bool,
    ) -> Result<PpcaModel> {
        let d = mean.len();
        if w.nrows() != d {
            return Err(Error::Dimension {
                expected: d,
                got: w.nrows(),
            });
        }
        if !(sigma2 > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "PPCA noise variance must be > 0, got {sigma2}"
            )));
        }
        let q = w.ncols();
        let mut m = w.tr_mul(&w);
        for i in 0..q {
            m[(i, i)] += sigma2;
        }
        let m_chol = Cholesky::new(m).ok_or_else(|| {
            Error::NonFinite("PPCA latent covariance is not positive definite".into())
        })?;
        let ln_det_m = 2.0
            * m_chol
                .l_dirty()
                .diagonal()
                .iter()
                .map(|v| v.ln())
                .sum::<f64>();
        let log_det_c = (d - q) as f64 * sigma2.ln() + ln_det_m;
        Ok(PpcaModel {
            mean,
            w,
            sigma2,
            sigma2_floored,
            m_chol,
            log_det_c,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.w.ncols()
    }

    /// C = W Wᵀ + σ² I (dense; for inspection and tests).
    pub fn covariance(&self) -> DMatrix<f64> {
        let mut c = &self.w * self.w.transpose();
        for i in 0..self.dim() {
            c[(i, i)] += self.sigma2;
        }
        c
    }

    /// Log density of every row of `x`.
    pub fn log_likelihood_rows(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let d = self.dim();
        if x.ncols() != d {
            return Err(Error::Dimension {
                expected: d,
                got: x.ncols(),
            });
        }
        let mut centered = x.clone();
        for (j, mut col) in centered.column_iter_mut().enumerate() {
            col.add_scalar_mut(-self.mean[j]);
        }
        let proj = &centered * &self.w;
        let mut out = Vec::with_capacity(x.nrows());
        for i in 0..x.nrows() {
            let r = centered.row(i);
            let p = proj.row(i).transpose();
            let solved = self.m_chol.solve(&p);
            // dᵀ C⁻¹ d = (‖d‖² − (Wᵀd)ᵀ M⁻¹ (Wᵀd)) / σ²
            let quad = (r.norm_squared() - p.dot(&solved)) / self.sigma2;
            out.push(-0.5 * (d as f64 * LN_2PI + self.log_det_c + quad));
        }
        Ok(out)
    }
}

pub fn ppca_log_likelihood(model: &PpcaModel, x: &[f64]) -> Result<f64> {
    let row = DMatrix::from_row_slice(1, x.len(), x);
    Ok(model.log_likelihood_rows(&row)?[0])
}

/// Maximum-likelihood PPCA with `q` components.
pub fn fit_ppca(x: &DMatrix<f64>, q: usize) -> Result<PpcaModel> {
    let (n, d) = x.shape();
    if q == 0 || q >= d {
        return Err(Error::InvalidConfig(format!(
            "PPCA needs 0 < q < D (q={q}, D={d})"
        )));
    }
    if n <= q {
        return Err(Error::InvalidConfig(format!(
            "PPCA needs more rows than components (N={n}, q={q})"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(
            "PPCA input contains missing or infinite values".into(),
        ));
    }
    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    let s = centered.tr_mul(&centered) / n as f64;
    let eig = SymmetricEigen::new(s);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });

    let trailing: f64 =
        order[q..].iter().map(|&j| eig.eigenvalues[j]).sum::<f64>() / (d - q) as f64;
    let (sigma2, floored) = if trailing > SIGMA2_FLOOR {
        (trailing, false)
    } else {
        (SIGMA2_FLOOR, true)
    };
    let mut w = DMatrix::zeros(d, q);
    for (c, &j) in order[..q].iter().enumerate() {
        let mut u = eig.eigenvectors.column(j).clone_owned();
        // fix the sign so refits are bit-identical
        let pivot = u
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(1.0);
        if pivot < 0.0 {
            u.neg_mut();
        }
        let scale = (eig.eigenvalues[j] - sigma2).max(0.0).sqrt();
        w.set_column(c, &(u * scale));
    }
    PpcaModel::from_parts(mean, w, sigma2, floored)
}
