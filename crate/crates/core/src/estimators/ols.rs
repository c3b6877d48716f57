//! Least squares via Householder QR with a rank check.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance on `|R_jj| / ‖X_j‖` below which column `j` is declared dependent.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OlsCovariance {
    /// `σ̂² (XᵀX)⁻¹` with `σ̂² = RSS / (N − p)`.
    #[default]
    Classical,
    /// White's HC0 sandwich.
    Hc0,
}

#[derive(Debug, Clone)]
pub struct OlsFit {
    pub beta: DVector<f64>,
    /// Covariance matrix of `beta`.
    pub cov: DMatrix<f64>,
    pub rss: f64,
    pub dof: usize,
}

pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String], covariance: OlsCovariance) -> Result<OlsFit> {
    let (rows, p) = x.shape();
    if rows <= p {
        return Err(Error::Numerical(format!("{rows} observations for {p} regressors")));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let bad: Vec<&str> = (0..p)
        .filter(|&j| {
            let norm = x.column(j).norm();
            norm == 0.0 || r[(j, j)].abs() <= RANK_TOL * norm
        })
        .map(|j| names.get(j).map(String::as_str).unwrap_or("?"))
        .collect();
    if !bad.is_empty() {
        return Err(Error::Numerical(format!("rank-deficient design; dependent columns: {}", bad.join(", "))));
    }
    let qty = qr.q().transpose() * y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Numerical("singular triangular factor".into()))?;
    let resid = y - x * &beta;
    let rss = resid.norm_squared();
    let dof = rows - p;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::Numerical("singular triangular factor".into()))?;
    let xtx_inv = &r_inv * r_inv.transpose();
    let cov = match covariance {
        OlsCovariance::Classical => xtx_inv * (rss / dof as f64),
        OlsCovariance::Hc0 => {
            let mut meat = DMatrix::zeros(p, p);
            for i in 0..rows {
                let xi = x.row(i).transpose();
                meat += &xi * xi.transpose() * resid[i].powi(2);
            }
            &xtx_inv * meat * &xtx_inv
        }
    };
    Ok(OlsFit { beta, cov, rss, dof })
}
