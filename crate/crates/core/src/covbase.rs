//! Covariance-fitting detector: minimizes
//! `Σ_k [ln det Q_k + Tr(Q_k⁻¹ Σ̂_k)]` over `a ≥ 0`, where
//! `Q_k = Σ_n a_n β_kn s_n s_nᴴ + σ² I` and `Σ̂_k = Y_k Y_kᴴ / M`.
//!
//! Unlike the Bayesian solvers it needs the gains β and the noise power.
//! Coordinates are minimized one at a time; each change of `a_n` is a
//! rank-one change of every `Q_k`, so inverses, log-determinants and traces
//! are carried along with Sherman–Morrison updates and rebuilt from scratch
//! every [`REFRESH_EVERY`] updates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cdot, CMatrix, LinkMatrix};
use crate::model::Outcome;
use crate::scalar::{Cx, Real};
use crate::simkit::{PilotMatrix, ReceivedSignals, Scenario};

pub const REFRESH_EVERY: usize = 100;

/// What the detector is told about the system.
#[derive(Debug, Clone, PartialEq)]
pub struct CovKnowledge<T> {
    /// Assumed gains in the same units as the received signals.
    pub beta: LinkMatrix<T>,
    pub noise_var: T,
    pub pilots: PilotMatrix<T>,
}

impl<T: Real> CovKnowledge<T> {
    /// Knowledge as stored in a (possibly perturbed) scenario.
    pub fn from_scenario(scenario: &Scenario<T>, pilots: &PilotMatrix<T>) -> Self {
        Self {
            beta: scenario.effective_beta.clone(),
            noise_var: scenario.assumed_noise_power,
            pilots: pilots.clone(),
        }
    }

    pub fn validate(&self, signals: &ReceivedSignals<T>) -> Result<()> {
        signals.check_against(&self.pilots)?;
        if self.beta.aps() != signals.aps() || self.beta.users() != self.pilots.users() {
            return Err(Error::Dimension(format!(
                "gains are {}x{}, problem is {}x{}",
                self.beta.aps(),
                self.beta.users(),
                signals.aps(),
                self.pilots.users()
            )));
        }
        if !(self.noise_var > T::zero()) || self.beta.as_slice().iter().any(|b| !(*b > T::zero())) {
            return Err(Error::Config("gains and noise variance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CovOptions {
    pub max_sweeps: usize,
    /// Stop once a sweep changes the objective by less than this, relatively.
    pub rel_tol: f64,
}

impl Default for CovOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 50,
            rel_tol: 1e-6,
        }
    }
}

/// Current relaxed activity plus per-AP caches.
#[derive(Debug, Clone, PartialEq)]
pub struct CovState<T> {
    pub a: Vec<T>,
    pub q_inv: Vec<CMatrix<T>>,
    pub sample_cov: Vec<CMatrix<T>>,
    /// `ln det Q_k`.
    pub logdet: Vec<T>,
    /// `Tr(Q_k⁻¹ Σ̂_k)`.
    pub trace: Vec<T>,
    pub updates_since_refresh: usize,
}

fn sample_covariances<T: Real>(signals: &ReceivedSignals<T>) -> Vec<CMatrix<T>> {
    let inv_m = T::one() / T::of_usize(signals.antennas());
    signals
        .y
        .iter()
        .map(|y| {
            let mut s = y.matmul(&y.adjoint());
            s.scale(inv_m);
            s
        })
        .collect()
}

/// `Q_k` built from scratch.
pub fn model_covariance<T: Real>(a: &[T], knowledge: &CovKnowledge<T>, k: usize) -> CMatrix<T> {
    let l = knowledge.pilots.len();
    let mut q = CMatrix::identity(l);
    q.scale(knowledge.noise_var);
    for (n, &an) in a.iter().enumerate() {
        if an > T::zero() {
            let s = knowledge.pilots.column(n);
            let conj: Vec<Cx<T>> = s.iter().map(|z| z.conj()).collect();
            q.add_outer(an * knowledge.beta[(k, n)], s, &conj);
        }
    }
    q
}

/// Objective evaluated from scratch with a Cholesky factorization per AP.
pub fn cov_objective_naive<T: Real>(a: &[T], knowledge: &CovKnowledge<T>, signals: &ReceivedSignals<T>) -> Result<T> {
    let sample = sample_covariances(signals);
    let mut total = T::zero();
    for (k, s) in sample.iter().enumerate() {
        let (logdet, inv) = model_covariance(a, knowledge, k).hpd_logdet_inverse()?;
        total += logdet + inv.trace_of_product(s);
    }
    Ok(total)
}

impl<T: Real> CovState<T> {
    /// State at `a = 0`.
    pub fn new(knowledge: &CovKnowledge<T>, signals: &ReceivedSignals<T>) -> Result<Self> {
        Self::with_activity(vec![T::zero(); knowledge.pilots.users()], knowledge, signals)
    }

    pub fn with_activity(a: Vec<T>, knowledge: &CovKnowledge<T>, signals: &ReceivedSignals<T>) -> Result<Self> {
        knowledge.validate(signals)?;
        if a.len() != knowledge.pilots.users() || a.iter().any(|v| !(*v >= T::zero())) {
            return Err(Error::Config(
                "activity must be non-negative, one entry per user".into(),
            ));
        }
        let k_aps = signals.aps();
        let mut state = Self {
            a,
            q_inv: Vec::with_capacity(k_aps),
            sample_cov: sample_covariances(signals),
            logdet: vec![T::zero(); k_aps],
            trace: vec![T::zero(); k_aps],
            updates_since_refresh: 0,
        };
        state.q_inv = vec![CMatrix::zeros(0, 0); k_aps];
        state.refresh(knowledge)?;
        Ok(state)
    }

    /// Rebuilds all caches from `a`.
    pub fn refresh(&mut self, knowledge: &CovKnowledge<T>) -> Result<()> {
        for k in 0..self.sample_cov.len() {
            let (logdet, inv) = model_covariance(&self.a, knowledge, k).hpd_logdet_inverse()?;
            self.trace[k] = inv.trace_of_product(&self.sample_cov[k]);
            self.logdet[k] = logdet;
            self.q_inv[k] = inv;
        }
        self.updates_since_refresh = 0;
        Ok(())
    }
}

/// Objective from the cached log-determinants and traces.
pub fn cov_objective<T: Real>(state: &CovState<T>) -> T {
    state.logdet.iter().zip(&state.trace).map(|(l, t)| *l + *t).sum()
}

/// Per-AP quantities that make the objective a function of the step `δ`
/// applied to one user's activity.
struct Line<T> {
    /// `β_kn sᴴQ_k⁻¹s`
    bu: Vec<T>,
    /// `β_kn sᴴQ_k⁻¹Σ̂_kQ_k⁻¹s`
    bv: Vec<T>,
}

impl<T: Real> Line<T> {
    /// Objective change `Σ_k [ln(1 + δβu) - δβv / (1 + δβu)]`.
    fn value(&self, delta: T) -> T {
        let mut total = T::zero();
        for (&bu, &bv) in self.bu.iter().zip(&self.bv) {
            let d = T::one() + delta * bu;
            if !(d > T::zero()) {
                return T::infinity();
            }
            total += d.ln() - delta * bv / d;
        }
        total
    }

    fn slope(&self, delta: T) -> T {
        self.bu
            .iter()
            .zip(&self.bv)
            .map(|(&bu, &bv)| {
                let d = T::one() + delta * bu;
                (bu * d - bv) / (d * d)
            })
            .sum()
    }
}

fn minimize_on<T: Real>(line: &Line<T>, lo: T, hi: T) -> T {
    let ratio = T::lit(0.618_033_988_749_894_9);
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let mut f1 = line.value(x1);
    let mut f2 = line.value(x2);
    // Golden section only locates the basin; values are flat to within
    // rounding closer than ~sqrt(eps), so the slope finishes the job.
    let tol = T::lit(1e-5);
    for _ in 0..200 {
        if b - a <= tol * (T::one() + a.abs().max(b.abs())) {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = line.value(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = line.value(x2);
        }
    }
    if line.slope(a) < T::zero() && line.slope(b) > T::zero() {
        for _ in 0..200 {
            let mid = T::lit(0.5) * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if line.slope(mid) > T::zero() {
                b = mid;
            } else {
                a = mid;
            }
        }
    }
    T::lit(0.5) * (a + b)
}

/// Exact minimization of the objective over `a_n ≥ 0` with all other
/// entries fixed; returns the new `a_n`. Never increases the objective.
pub fn cov_coord_update<T: Real>(state: &mut CovState<T>, knowledge: &CovKnowledge<T>, n: usize) -> Result<T> {
    let s = knowledge.pilots.column(n);
    let k_aps = state.q_inv.len();
    let mut ws = Vec::with_capacity(k_aps);
    let mut line = Line {
        bu: Vec::with_capacity(k_aps),
        bv: Vec::with_capacity(k_aps),
    };
    for k in 0..k_aps {
        let w = state.q_inv[k].mul_vec(s);
        let u = cdot(s, &w).re;
        let v = cdot(&w, &state.sample_cov[k].mul_vec(&w)).re;
        let b = knowledge.beta[(k, n)];
        line.bu.push(b * u);
        line.bv.push(b * v);
        ws.push(w);
    }
    let current = state.a[n];
    // Each AP's term falls until δ_k = (v - u)/(βu²) and rises afterwards,
    // so the minimizer lies between the smallest and largest δ_k.
    let stationary = line.bu.iter().zip(&line.bv).map(|(&bu, &bv)| (bv - bu) / (bu * bu));
    let (mut lo, mut hi) = (T::infinity(), T::neg_infinity());
    for d in stationary {
        lo = lo.min(d);
        hi = hi.max(d);
    }
    let floor = -current;
    let lo = lo.max(floor);
    let hi = hi.max(floor);
    let mut candidates = vec![T::zero(), lo, hi];
    if hi > lo {
        candidates.push(minimize_on(&line, lo, hi));
    }
    let mut best = (T::zero(), T::zero());
    for &d in &candidates {
        let f = line.value(d);
        if f < best.1 {
            best = (d, f);
        }
    }
    let delta = best.0;
    if delta == T::zero() {
        return Ok(current);
    }
    if !delta.is_finite() {
        return Err(Error::NonFinite {
            solver: "cov",
            iteration: 0,
            detail: format!("step for user {n} is {delta}"),
            trace: Vec::new(),
        });
    }
    let updated = (current + delta).max(T::zero());
    let delta = updated - current;
    for (k, w) in ws.iter().enumerate() {
        let d = T::one() + delta * line.bu[k];
        let coef = delta * knowledge.beta[(k, n)] / d;
        let conj: Vec<Cx<T>> = w.iter().map(|z| z.conj()).collect();
        state.q_inv[k].add_outer(-coef, w, &conj);
        state.logdet[k] += d.ln();
        state.trace[k] -= delta * line.bv[k] / d;
    }
    state.a[n] = updated;
    state.updates_since_refresh += 1;
    if state.updates_since_refresh >= REFRESH_EVERY {
        state.refresh(knowledge)?;
    }
    Ok(updated)
}

pub type CovOutcome<T> = Outcome<CovState<T>, T>;

/// Cyclic coordinate descent from `a = 0`; scores are the final `a`.
pub fn run_cov<T: Real>(
    signals: &ReceivedSignals<T>,
    knowledge: &CovKnowledge<T>,
    opts: &CovOptions,
) -> Result<CovOutcome<T>> {
    if opts.max_sweeps == 0 || !(opts.rel_tol > 0.0) {
        return Err(Error::Config("max_sweeps and rel_tol must be positive".into()));
    }
    let mut state = CovState::new(knowledge, signals)?;
    let rel_tol = T::lit(opts.rel_tol);
    let mut previous = cov_objective(&state);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_sweeps {
        for n in 0..state.a.len() {
            cov_coord_update(&mut state, knowledge, n)?;
        }
        iterations += 1;
        let value = cov_objective(&state);
        if !value.is_finite() {
            return Err(Error::NonFinite {
                solver: "cov",
                iteration: iterations,
                detail: format!("objective is {value}"),
                trace: trace.iter().map(|v: &T| v.as_f64()).collect(),
            });
        }
        let change = (previous - value).abs() / previous.abs().max(T::min_positive_value());
        trace.push(change);
        previous = value;
        if change < rel_tol {
            converged = true;
            break;
        }
    }
    Ok(Outcome {
        scores: state.a.clone(),
        state,
        trace,
        iterations,
        converged,
    })
}
