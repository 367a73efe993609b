use crate::error::{Error, Result};
use crate::linalg::{eigvalsh, eye, is_hermitian, max_abs, trace, CMat};
use crate::prelude::*;

/// A density matrix together with its derivatives, one per unknown parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedState {
    pub rho: CMat,
    pub drho: Vec<CMat>,
}

impl DerivedState {
    pub fn new(rho: CMat, drho: Vec<CMat>) -> Result<Self> {
        let d = rho.nrows();
        if !rho.is_square() || drho.iter().any(|m| m.shape() != (d, d)) {
            return Err(Error::Dimension("state and derivatives must share one square shape".into()));
        }
        Ok(Self { rho, drho })
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn nparams(&self) -> usize {
        self.drho.len()
    }

    /// Checks the density-matrix and derivative invariants at the given slack.
    pub fn validate(&self) -> Result<()> {
        validate_density(&self.rho)?;
        for (a, m) in self.drho.iter().enumerate() {
            if !is_hermitian(m, 1e-10) {
                return Err(Error::Domain(format!("derivative {a} is not Hermitian")));
            }
            if trace(m).norm() > 1e-8 {
                return Err(Error::Domain(format!("derivative {a} is not traceless")));
            }
        }
        Ok(())
    }
}

pub fn validate_density(rho: &CMat) -> Result<()> {
    if !is_hermitian(rho, 1e-10) {
        return Err(Error::Domain("density matrix is not Hermitian".into()));
    }
    if (trace(rho).re - 1.0).abs() > 1e-8 {
        return Err(Error::Domain(format!("density matrix trace is {}", trace(rho).re)));
    }
    if eigvalsh(rho).first().is_some_and(|&l| l < -1e-10) {
        return Err(Error::Domain("density matrix has a negative eigenvalue".into()));
    }
    Ok(())
}

/// A positive operator-valued measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Povm {
    ops: Vec<CMat>,
}

impl Povm {
    /// Validates positivity (slack 1e-10) and completeness (1e-8).
    pub fn new(ops: Vec<CMat>) -> Result<Self> {
        let d = ops.first().map(|m| m.nrows()).ok_or_else(|| Error::Domain("empty POVM".into()))?;
        let mut sum = CMat::zeros(d, d);
        for (k, m) in ops.iter().enumerate() {
            if m.shape() != (d, d) {
                return Err(Error::Dimension(format!("POVM element {k} has the wrong shape")));
            }
            if !is_hermitian(m, 1e-10) || eigvalsh(m)[0] < -1e-10 {
                return Err(Error::Domain(format!("POVM element {k} is not positive semidefinite")));
            }
            sum += m;
        }
        if max_abs(&(sum - eye(d))) > 1e-8 {
            return Err(Error::Domain("POVM elements do not sum to identity".into()));
        }
        Ok(Self { ops })
    }

    /// Wraps operators without validation; callers guarantee the invariants.
    pub fn new_unchecked(ops: Vec<CMat>) -> Self {
        Self { ops }
    }

    /// Projective measurement onto the columns of a unitary.
    pub fn from_basis(u: &CMat) -> Self {
        let ops = (0..u.ncols())
            .map(|k| {
                let col = u.column(k);
                &col * col.adjoint()
            })
            .collect();
        Self { ops }
    }

    /// Computational-basis projective measurement.
    pub fn computational(d: usize) -> Self {
        Self::from_basis(&eye(d))
    }

    pub fn ops(&self) -> &[CMat] {
        &self.ops
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.ops[0].nrows()
    }

    pub fn into_ops(self) -> Vec<CMat> {
        self.ops
    }
}
