//! Closed-form Gaussian possibility algebra and the possibilistic Kalman steps.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{symmetrize, Spd};
use crate::possibility::{GaussianPossibility, State};

/// The conditional possibility `g(x', x) = N̄(x; F x', Q)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianTransition {
    f: DMatrix<f64>,
    q: Spd,
}

impl GaussianTransition {
    pub fn new(f: DMatrix<f64>, q: DMatrix<f64>) -> Result<Self> {
        if !f.is_square() {
            return Err(Error::invalid("transition matrix must be square"));
        }
        let q = Spd::new(q)?;
        check_dim(f.nrows(), q.dim())?;
        Ok(GaussianTransition { f, q })
    }

    pub fn scalar(f: f64, q: f64) -> Result<Self> {
        GaussianTransition::new(DMatrix::from_element(1, 1, f), DMatrix::from_element(1, 1, q))
    }

    pub fn dim(&self) -> usize {
        self.f.nrows()
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn q(&self) -> &DMatrix<f64> {
        self.q.matrix()
    }

    pub fn evaluate(&self, from: &State, to: &State) -> Result<f64> {
        check_dim(self.dim(), from.len())?;
        check_dim(self.dim(), to.len())?;
        Ok((-0.5 * self.q.inv_quad_form(&(to - &self.f * from))).exp())
    }
}

/// The observation factor `x ↦ N̄(O x; y, R)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianObservationFactor {
    o: DMatrix<f64>,
    r: Spd,
    y: DVector<f64>,
}

impl GaussianObservationFactor {
    pub fn new(o: DMatrix<f64>, r: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let r = Spd::new(r)?;
        check_dim(o.nrows(), r.dim())?;
        check_dim(o.nrows(), y.len())?;
        if o.nrows() > o.ncols() {
            return Err(Error::invalid("observation matrix has more rows than the state dimension"));
        }
        Ok(GaussianObservationFactor { o, r, y })
    }

    pub fn scalar(o: f64, r: f64, y: f64) -> Result<Self> {
        GaussianObservationFactor::new(DMatrix::from_element(1, 1, o), DMatrix::from_element(1, 1, r), DVector::from_element(1, y))
    }

    pub fn o(&self) -> &DMatrix<f64> {
        &self.o
    }

    pub fn r(&self) -> &DMatrix<f64> {
        self.r.matrix()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn state_dim(&self) -> usize {
        self.o.ncols()
    }

    pub fn evaluate(&self, x: &State) -> Result<f64> {
        check_dim(self.state_dim(), x.len())?;
        Ok((-0.5 * self.r.inv_quad_form(&(&self.o * x - &self.y))).exp())
    }
}

/// `x' ↦ N̄(x'; m + K (x − F m), C)` as a family indexed by `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineGaussianConditional {
    pub offset: DVector<f64>,
    pub gain: DMatrix<f64>,
    pub spread: Spd,
}

impl AffineGaussianConditional {
    pub fn at(&self, x: &State) -> Result<GaussianPossibility> {
        GaussianPossibility::with_spd(&self.offset + &self.gain * x, self.spread.clone())
    }
}

/// Splits `N̄(x; F x', Q) · N̄(x'; m, P)` into `N̄(x; F m, Q + F P Fᵀ) · N̄(x'; m + K (x − F m), (I − K F) P)`.
pub fn gaussian_product(g: &GaussianTransition, f: &GaussianPossibility) -> Result<(GaussianPossibility, AffineGaussianConditional)> {
    check_dim(g.dim(), f.dim())?;
    let p = f.spread();
    let pred_mean = g.f() * f.mean();
    let s = Spd::new(symmetrize(&(g.q() + g.f() * p * g.f().transpose())))?;
    // K = P Fᵀ S⁻¹
    let gain = s.solve(&(g.f() * p)).transpose();
    let cond_spread = Spd::new(symmetrize(&(p - &gain * g.f() * p)))?;
    let predictive = GaussianPossibility::with_spd(pred_mean.clone(), s)?;
    let offset = f.mean() - &gain * &pred_mean;
    Ok((predictive, AffineGaussianConditional { offset, gain, spread: cond_spread }))
}

pub fn kalman_predict(m: &DVector<f64>, p: &DMatrix<f64>, trans: &GaussianTransition) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_dim(trans.dim(), m.len())?;
    let p_pred = Spd::new(symmetrize(&(trans.q() + trans.f() * p * trans.f().transpose())))?;
    Ok((trans.f() * m, p_pred.matrix().clone()))
}

/// Returns the updated mean and spread plus the supremum of the unnormalized product.
pub fn kalman_update(m: &DVector<f64>, p: &DMatrix<f64>, obs: &GaussianObservationFactor) -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
    check_dim(obs.state_dim(), m.len())?;
    let o = obs.o();
    let innovation = obs.y() - o * m;
    let s = Spd::new(symmetrize(&(obs.r() + o * p * o.transpose())))?;
    let gain = s.solve(&(o * p)).transpose();
    let mean = m + &gain * &innovation;
    let spread = symmetrize(&(p - &gain * o * p));
    Spd::new(spread.clone())?;
    let scale = (-0.5 * s.inv_quad_form(&innovation)).exp();
    Ok((mean, spread, scale))
}

/// Update of a Gaussian possibility, returned as a daggered possibility plus its scale.
pub fn update_possibility(f: &GaussianPossibility, obs: &GaussianObservationFactor) -> Result<(GaussianPossibility, f64)> {
    let (m, p, scale) = kalman_update(f.mean(), f.spread(), obs)?;
    Ok((GaussianPossibility::new(m, p)?, scale))
}

pub fn predict_possibility(f: &GaussianPossibility, trans: &GaussianTransition) -> Result<GaussianPossibility> {
    let (m, p) = kalman_predict(f.mean(), f.spread(), trans)?;
    GaussianPossibility::new(m, p)
}
