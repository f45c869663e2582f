//! Pieces shared by the Bayesian solvers: prior hyperparameters, solver
//! options and residual bookkeeping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, LinkMatrix, LinkVectors};
use crate::scalar::Real;
use crate::simkit::{PilotMatrix, ReceivedSignals};
use crate::specfun::{GhHyper, InverseMoment};

/// Prior hyperparameters: GIG mixing law of the per-user variance, Gamma
/// prior `(kappa1, kappa2)` on its rate `eta0`, and Gamma prior `(c, d)` on
/// the noise precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper<T> {
    pub gh: GhHyper<T>,
    pub kappa1: T,
    pub kappa2: T,
    pub c: T,
    pub d: T,
}

impl<T: Real> Default for Hyper<T> {
    fn default() -> Self {
        let tiny = T::lit(1e-6);
        Self {
            gh: GhHyper::default(),
            kappa1: tiny,
            kappa2: tiny,
            c: tiny,
            d: tiny,
        }
    }
}

impl<T: Real> Hyper<T> {
    pub fn validate(&self) -> Result<()> {
        GhHyper::new(self.gh.eta0, self.gh.psi0, self.gh.lambda0).map_err(|e| Error::Config(e.to_string()))?;
        if !(self.kappa1 > -self.gh.lambda0 * T::lit(0.5)) {
            return Err(Error::Config(format!(
                "kappa1 = {} must exceed -lambda0/2 = {}",
                self.kappa1,
                -self.gh.lambda0 * T::lit(0.5)
            )));
        }
        for (name, v) in [("kappa2", self.kappa2), ("c", self.c), ("d", self.d)] {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::Config(format!("{name} = {v} must be positive")));
            }
        }
        Ok(())
    }
}

/// Iteration controls shared by the MAP and variational solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_outer_iters: usize,
    /// Cap on inner ascent steps for each `eta0` (MAP only).
    pub max_eta_iters: usize,
    /// Initial `eta0` ascent step (MAP only).
    pub alpha: f64,
    /// Stop once the reconstruction changes by less than this, relatively.
    pub rel_tol: f64,
    /// Optional decision threshold on the scores.
    pub rho: Option<f64>,
    /// Inverse-moment formula used inside the variational updates.
    pub inverse_moment: InverseMoment,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_outer_iters: 200,
            max_eta_iters: 50,
            alpha: 1e-2,
            rel_tol: 1e-4,
            rho: None,
            inverse_moment: InverseMoment::LowerOrder,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer_iters == 0 || self.max_eta_iters == 0 {
            return Err(Error::Config("iteration caps must be positive".into()));
        }
        if !(self.alpha > 0.0) || !(self.rel_tol > 0.0) {
            return Err(Error::Config(format!(
                "alpha = {} and rel_tol = {} must be positive",
                self.alpha, self.rel_tol
            )));
        }
        if let Some(rho) = self.rho {
            if !(rho > 0.0) {
                return Err(Error::Config(format!("rho = {rho} must be positive")));
            }
        }
        Ok(())
    }
}

/// Activity decisions `score > rho`.
pub fn decide<T: Real>(scores: &[T], rho: T) -> Vec<bool> {
    scores.iter().map(|&s| s > rho).collect()
}

/// Dimensions `(K, N, L, M)` after checking signals against pilots.
pub fn problem_dims<T: Real>(
    signals: &ReceivedSignals<T>,
    pilots: &PilotMatrix<T>,
) -> Result<(usize, usize, usize, usize)> {
    signals.check_against(pilots)?;
    Ok((signals.aps(), pilots.users(), pilots.len(), signals.antennas()))
}

/// `Y_k - Σ_n coef_kn s_n g_knᵀ` for every AP.
pub fn residuals<T: Real>(
    signals: &ReceivedSignals<T>,
    pilots: &PilotMatrix<T>,
    coef: &LinkMatrix<T>,
    g: &LinkVectors<T>,
) -> Vec<CMatrix<T>> {
    (0..signals.aps())
        .map(|k| ap_residual(signals, pilots, coef, g, k))
        .collect()
}

/// Residual of AP `k` alone.
pub fn ap_residual<T: Real>(
    signals: &ReceivedSignals<T>,
    pilots: &PilotMatrix<T>,
    coef: &LinkMatrix<T>,
    g: &LinkVectors<T>,
    k: usize,
) -> CMatrix<T> {
    let mut r = signals.y[k].clone();
    for n in 0..pilots.users() {
        let c = coef[(k, n)];
        if c != T::zero() {
            r.add_outer(-c, pilots.column(n), g.get(k, n));
        }
    }
    r
}

/// Tracks `‖X_t - X_{t-1}‖ / ‖X_{t-1}‖` for the reconstruction
/// `X = Y - R` across iterations.
#[derive(Debug, Clone)]
pub(crate) struct ChangeMonitor<T> {
    previous: Option<Vec<CMatrix<T>>>,
}

impl<T: Real> ChangeMonitor<T> {
    pub fn new() -> Self {
        Self { previous: None }
    }

    /// Relative change against the last call; `None` on the first call.
    /// A reconstruction that stays exactly zero counts as no change.
    pub fn observe(&mut self, signals: &ReceivedSignals<T>, residual: &[CMatrix<T>]) -> Option<T> {
        let current: Vec<CMatrix<T>> = signals.y.iter().zip(residual).map(|(y, r)| y.sub(r)).collect();
        let change = self.previous.as_ref().map(|prev| {
            let mut num = T::zero();
            let mut den = T::zero();
            for (p, c) in prev.iter().zip(&current) {
                num += c.sub(p).frob_norm_sqr();
                den += p.frob_norm_sqr();
            }
            if num == T::zero() {
                T::zero()
            } else {
                (num / den).sqrt()
            }
        });
        self.previous = Some(current);
        change
    }
}

/// Result of a solver run.
#[derive(Debug, Clone)]
pub struct Outcome<S, T> {
    /// Per-user detection scores (larger means more likely active).
    pub scores: Vec<T>,
    pub state: S,
    /// Relative reconstruction change after each sweep (from the second on).
    pub trace: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hyper_validity() {
        let mut h = Hyper::<f64>::default();
        h.validate().unwrap();
        h.kappa1 = -1.0;
        assert!(h.validate().is_err());
        h.kappa1 = -0.4;
        h.gh.lambda0 = 1.0;
        h.validate().unwrap();
    }

    #[test]
    fn options_defaults() {
        let o = SolverOptions::default();
        o.validate().unwrap();
        assert_eq!(o.rel_tol, 1e-4);
        assert_eq!(o.max_outer_iters, 200);
        assert_eq!(decide(&[0.5, 2.0], 1.0), vec![false, true]);
    }
}
