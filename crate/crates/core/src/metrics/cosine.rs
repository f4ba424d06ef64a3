use serde::{Deserialize, Serialize};

use super::prototypes::PrototypeSet;
use crate::error::{Error, Result};
use crate::scalar::{dot, norm, Scalar};
use crate::tensor::Matrix;

/// Cosines between every prototype (rows) and every weight row (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosMatrix<T> {
    pub values: Matrix<T>,
    /// Step whose backbone produced the prototypes.
    pub measured_at: usize,
    /// Step whose class group the weight rows belong to.
    pub weight_step: usize,
}

impl<T: Scalar> CosMatrix<T> {
    pub fn tagged(mut self, measured_at: usize, weight_step: usize) -> Self {
        self.measured_at = measured_at;
        self.weight_step = weight_step;
        self
    }
}

/// `[m, n] = <p_m, w_n> / (|p_m| |w_n|)`. Biases are not involved.
pub fn cos_matrix<T: Scalar>(
    prototypes: &PrototypeSet<T>,
    weights: &Matrix<T>,
) -> Result<CosMatrix<T>> {
    let p = &prototypes.means;
    if p.cols() != weights.cols() {
        return Err(Error::Cosine(format!(
            "prototype width {} differs from weight width {}",
            p.cols(),
            weights.cols()
        )));
    }
    let p_norms: Vec<T> = (0..p.rows()).map(|m| norm(p.row(m))).collect();
    let w_norms: Vec<T> = (0..weights.rows()).map(|n| norm(weights.row(n))).collect();
    if let Some(m) = p_norms.iter().position(|v| *v == T::zero()) {
        return Err(Error::Cosine(format!(
            "zero-norm prototype for class {} (row {m})",
            prototypes.classes[m]
        )));
    }
    if let Some(n) = w_norms.iter().position(|v| *v == T::zero()) {
        return Err(Error::Cosine(format!("zero-norm weight row {n}")));
    }
    let mut values = Matrix::zeros(p.rows(), weights.rows());
    for (m, &pn) in p_norms.iter().enumerate() {
        for (n, &wn) in w_norms.iter().enumerate() {
            values.set(m, n, dot(p.row(m), weights.row(n)) / (pn * wn));
        }
    }
    Ok(CosMatrix {
        values,
        measured_at: 0,
        weight_step: 0,
    })
}
