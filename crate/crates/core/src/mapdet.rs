//! MAP detection by block-coordinate ascent on the log joint density.
//!
//! Blocks are visited in the order γ (every link), g (every link), z, η⁰,
//! τ. All but η⁰ have closed-form maximizers; η⁰ takes projected gradient
//! steps with step halving whenever a step would lower the objective.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, LinkMatrix, LinkVectors};
use crate::model::{ap_residual, problem_dims, residuals, ChangeMonitor, Hyper, Outcome, SolverOptions};
use crate::scalar::{Cx, Real};
use crate::simkit::{complex_gaussian, PilotMatrix, ReceivedSignals};
use crate::specfun::log_bessel_k;

/// Positivity floor for `z` and `eta0`.
pub const POSITIVE_FLOOR: f64 = 1e-12;

/// Point estimate of every unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct MapState<T> {
    /// Signed amplitude `a_n √β_kn` per link.
    pub gamma: LinkMatrix<T>,
    pub g: LinkVectors<T>,
    /// Per-user variance; the detection score.
    pub z: Vec<T>,
    pub eta0: Vec<T>,
    /// Noise precision.
    pub tau: T,
}

impl<T: Real> MapState<T> {
    /// Starting point: `γ = 0`, `g ~ CN(0, I)`, `z = 1`, `eta0` at its prior
    /// value and `τ = KLM / (Σ‖Y_k‖² + d)`.
    pub fn initial<R: Rng + ?Sized>(
        signals: &ReceivedSignals<T>,
        pilots: &PilotMatrix<T>,
        hyper: &Hyper<T>,
        rng: &mut R,
    ) -> Result<Self> {
        let (k_aps, n_users, l, m) = problem_dims(signals, pilots)?;
        let mut g = LinkVectors::zeros(k_aps, n_users, m);
        for k in 0..k_aps {
            for n in 0..n_users {
                for v in g.get_mut(k, n) {
                    *v = complex_gaussian(rng, T::one());
                }
            }
        }
        let klm = T::of_usize(k_aps * l * m);
        Ok(Self {
            gamma: LinkMatrix::filled(k_aps, n_users, T::zero()),
            g,
            z: vec![T::one(); n_users],
            eta0: vec![hyper.gh.eta0; n_users],
            tau: klm / (signals.total_energy() + hyper.d),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.gamma.as_slice().iter().all(|v| v.is_finite())
            && self.g.as_slice().iter().all(|v| v.re.is_finite() && v.im.is_finite())
            && self.z.iter().chain(&self.eta0).all(|v| v.is_finite())
            && self.tau.is_finite()
    }
}

fn norm_sqr<T: Real>(v: &[Cx<T>]) -> T {
    v.iter().map(|z| z.norm_sqr()).sum()
}

fn floor<T: Real>() -> T {
    T::lit(POSITIVE_FLOOR)
}

/// Log joint density, dropping only parameter-free constants.
pub fn map_objective<T: Real>(
    state: &MapState<T>,
    signals: &ReceivedSignals<T>,
    pilots: &PilotMatrix<T>,
    hyper: &Hyper<T>,
) -> Result<T> {
    let (k_aps, n_users, l, m) = problem_dims(signals, pilots)?;
    if !(state.tau > T::zero()) {
        return Err(crate::error::domain("map_objective", format!("tau = {}", state.tau)));
    }
    let half = T::lit(0.5);
    let res = residuals(signals, pilots, &state.gamma, &state.g);
    let misfit: T = res.iter().map(CMatrix::frob_norm_sqr).sum();
    let mut total = T::of_usize(k_aps * l * m) * state.tau.ln() - state.tau * misfit;
    total += (hyper.c - T::one()) * state.tau.ln() - hyper.d * state.tau;
    for n in 0..n_users {
        let z = state.z[n];
        let eta = state.eta0[n];
        if !(z > T::zero()) || !(eta > T::zero()) {
            return Err(crate::error::domain(
                "map_objective",
                format!("z = {z}, eta0 = {eta} for user {n}"),
            ));
        }
        for k in 0..k_aps {
            let gam = state.gamma[(k, n)];
            total += half * (-z.ln() - gam * gam / z) - norm_sqr(state.g.get(k, n));
        }
        let (psi, lambda) = (hyper.gh.psi0, hyper.gh.lambda0);
        total += half * lambda * (eta / psi).ln() - (T::lit(2.0).ln() + log_bessel_k(lambda, (eta * psi).sqrt())?)
            + (lambda - T::one()) * z.ln()
            - half * (eta * z + psi / z);
        total += (hyper.kappa1 - T::one()) * eta.ln() - hyper.kappa2 * eta;
    }
    Ok(total)
}

/// Terms of [`map_objective`] that involve one user's `eta0`.
pub fn eta_objective<T: Real>(eta: T, z: T, hyper: &Hyper<T>) -> Result<T> {
    let (psi, lambda) = (hyper.gh.psi0, hyper.gh.lambda0);
    let half = T::lit(0.5);
    Ok(
        half * lambda * eta.ln() - log_bessel_k(lambda, (eta * psi).sqrt())? - half * eta * z
            + (hyper.kappa1 - T::one()) * eta.ln()
            - hyper.kappa2 * eta,
    )
}

/// Derivative of [`eta_objective`] in `eta`.
pub fn eta_gradient<T: Real>(eta: T, z: T, hyper: &Hyper<T>) -> Result<T> {
    let (psi, lambda) = (hyper.gh.psi0, hyper.gh.lambda0);
    let two = T::lit(2.0);
    let x = (eta * psi).sqrt();
    let ratio = (log_bessel_k(lambda + T::one(), x)? - log_bessel_k(lambda, x)?).exp();
    Ok((two * hyper.kappa1 - two + lambda) / (two * eta)
        - hyper.kappa2
        - z / two
        - (lambda / (two * eta) - psi * ratio / (two * x)))
}

/// Maximizer in `z > 0` of `a ln z - spread/(2z) - eta z/2`, i.e.
/// `(a + √(a² + eta·spread)) / eta`, floored.
pub(crate) fn z_stationary<T: Real>(a: T, eta: T, spread: T) -> T {
    let root = (a * a + eta * spread).sqrt();
    let z = if a >= T::zero() {
        (a + root) / eta
    } else {
        spread / (root - a)
    };
    if z.is_nan() {
        z
    } else {
        z.max(floor())
    }
}

/// `sᴴ R_{-n}` for one link, where `c = sᴴ R` uses the full residual.
fn leave_one_out<T: Real>(c: &[Cx<T>], coef: T, pilot_energy: T, g: &[Cx<T>]) -> Vec<Cx<T>> {
    c.iter()
        .zip(g)
        .map(|(&cm, &gm)| cm + gm * (coef * pilot_energy))
        .collect()
}

fn pilot_energies<T: Real>(pilots: &PilotMatrix<T>) -> Vec<T> {
    (0..pilots.users()).map(|n| pilots.column_norm_sqr(n)).collect()
}

fn gamma_step<T: Real>(
    state: &mut MapState<T>,
    rk: &mut CMatrix<T>,
    pilots: &PilotMatrix<T>,
    energy: T,
    k: usize,
    n: usize,
) {
    let s = pilots.column(n);
    let g = state.g.get(k, n);
    let old = state.gamma[(k, n)];
    let b = leave_one_out(&rk.conj_left_mul(s), old, energy, g);
    let num = state.tau * b.iter().zip(g).map(|(bm, gm)| *bm * gm.conj()).sum::<Cx<T>>().re;
    let den = state.tau * energy * norm_sqr(g) + T::lit(0.5) / state.z[n];
    let new = num / den;
    rk.add_outer(old - new, s, g);
    state.gamma[(k, n)] = new;
}

fn g_step<T: Real>(
    state: &mut MapState<T>,
    rk: &mut CMatrix<T>,
    pilots: &PilotMatrix<T>,
    energy: T,
    k: usize,
    n: usize,
) {
    let s = pilots.column(n);
    let gam = state.gamma[(k, n)];
    let b = leave_one_out(&rk.conj_left_mul(s), gam, energy, state.g.get(k, n));
    let scale = state.tau * gam / (state.tau * gam * gam * energy + T::one());
    let new: Vec<Cx<T>> = b.iter().map(|v| *v * scale).collect();
    let delta: Vec<Cx<T>> = new.iter().zip(state.g.get(k, n)).map(|(a, b)| *a - *b).collect();
    rk.add_outer(-gam, s, &delta);
    state.g.get_mut(k, n).copy_from_slice(&new);
}

/// Closed-form γ update for every link, AP-major then user.
pub fn update_gamma_map<T: Real>(state: &mut MapState<T>, signals: &ReceivedSignals<T>, pilots: &PilotMatrix<T>) {
    let energies = pilot_energies(pilots);
    let mut res = residuals(signals, pilots, &state.gamma, &state.g);
    for (k, rk) in res.iter_mut().enumerate() {
        for (n, &e) in energies.iter().enumerate() {
            gamma_step(state, rk, pilots, e, k, n);
        }
    }
}

/// Closed-form γ update of the single link `(k, n)`.
pub fn update_gamma_link<T: Real>(
    state: &mut MapState<T>,
    signals: &ReceivedSignals<T>,
    pilots: &PilotMatrix<T>,
    k: usize,
    n: usize,
) {
    let mut rk = ap_residual(signals, pilots, &state.gamma, &state.g, k);
    gamma_step(state, &mut rk, pilots, pilots.column_norm_sqr(n), k, n);
}

/// Closed-form g update for every link, AP-major then user.
pub fn update_g_map<T: Real>(state: &mut MapState<T>, signals: &ReceivedSignals<T>, pilots: &PilotMatrix<T>) {
    let energies = pilot_energies(pilots);
    let mut res = residuals(signals, pilots, &state.gamma, &state.g);
    for (k, rk) in res.iter_mut().enumerate() {
        for (n, &e) in energies.iter().enumerate() {
            g_step(state, rk, pilots, e, k, n);
        }
    }
}

/// Closed-form g update of the single link `(k, n)`.
pub fn update_g_link<T: Real>(
    state: &mut MapState<T>,
    signals: &ReceivedSignals<T>,
    pilots: &PilotMatrix<T>,
    k: usize,
    n: usize,
) {
    let mut rk = ap_residual(signals, pilots, &state.gamma, &state.g, k);
    g_step(state, &mut rk, pilots, pilots.column_norm_sqr(n), k, n);
}

/// Closed-form z update: `(λ̂ + √(λ̂² + η⁰ψ⁰ + η⁰Σ_k γ²)) / η⁰` with
/// `λ̂ = λ⁰ - K/2 - 1`.
pub fn update_z_map<T: Real>(state: &mut MapState<T>, hyper: &Hyper<T>) {
    let k_aps = state.gamma.aps();
    let a = hyper.gh.lambda0 - T::of_usize(k_aps) * T::lit(0.5) - T::one();
    for n in 0..state.z.len() {
        let sum_sq: T = state.gamma.user_column(n).map(|v| v * v).sum();
        let eta = state.eta0[n].max(floor());
        state.z[n] = z_stationary(a, eta, hyper.gh.psi0 + sum_sq);
    }
}

/// Projected gradient ascent on each `eta0`, one user at a time with its
/// own step size. A step that lowers the objective is retried at half the
/// step. Stops once the accepted move is below `rel_tol · eta0` or after
/// `max_eta_iters` steps.
pub fn update_eta_map<T: Real>(state: &mut MapState<T>, hyper: &Hyper<T>, opts: &SolverOptions) -> Result<()> {
    let lo = floor::<T>();
    let rel_tol = T::lit(opts.rel_tol);
    for n in 0..state.eta0.len() {
        let z = state.z[n];
        let mut eta = state.eta0[n].max(lo);
        let mut alpha = T::lit(opts.alpha);
        let mut current = eta_objective(eta, z, hyper)?;
        for _ in 0..opts.max_eta_iters {
            let grad = eta_gradient(eta, z, hyper)?;
            let mut accepted = None;
            for _ in 0..64 {
                let candidate = (eta + alpha * grad).max(lo);
                let value = eta_objective(candidate, z, hyper)?;
                if value >= current {
                    accepted = Some((candidate, value));
                    break;
                }
                alpha *= T::lit(0.5);
            }
            let Some((next, value)) = accepted else { break };
            let moved = (next - eta).abs();
            eta = next;
            current = value;
            if moved <= rel_tol * eta {
                break;
            }
        }
        state.eta0[n] = eta;
    }
    Ok(())
}

/// Closed-form τ update: `(KLM + c - 1) / (Σ_k‖R_k‖² + d)`.
pub fn update_tau_map<T: Real>(
    state: &mut MapState<T>,
    signals: &ReceivedSignals<T>,
    pilots: &PilotMatrix<T>,
    hyper: &Hyper<T>,
) -> Result<()> {
    let (k_aps, _, l, m) = problem_dims(signals, pilots)?;
    let shape = T::of_usize(k_aps * l * m) + hyper.c - T::one();
    if !(shape > T::zero()) {
        return Err(Error::Config(format!("KLM + c - 1 = {shape} must be positive")));
    }
    let misfit: T = residuals(signals, pilots, &state.gamma, &state.g)
        .iter()
        .map(CMatrix::frob_norm_sqr)
        .sum();
    state.tau = shape / (misfit + hyper.d);
    Ok(())
}

/// One full pass over all blocks.
pub fn map_sweep<T: Real>(
    state: &mut MapState<T>,
    signals: &ReceivedSignals<T>,
    pilots: &PilotMatrix<T>,
    hyper: &Hyper<T>,
    opts: &SolverOptions,
) -> Result<()> {
    update_gamma_map(state, signals, pilots);
    update_g_map(state, signals, pilots);
    update_z_map(state, hyper);
    update_eta_map(state, hyper, opts)?;
    update_tau_map(state, signals, pilots, hyper)
}

pub type MapOutcome<T> = Outcome<MapState<T>, T>;

/// Runs the MAP solver from [`MapState::initial`].
pub fn run_map<T: Real, R: Rng + ?Sized>(
    signals: &ReceivedSignals<T>,
    pilots: &PilotMatrix<T>,
    opts: &SolverOptions,
    hyper: &Hyper<T>,
    rng: &mut R,
) -> Result<MapOutcome<T>> {
    hyper.validate()?;
    let state = MapState::initial(signals, pilots, hyper, rng)?;
    run_map_from(state, signals, pilots, opts, hyper)
}

/// Runs the MAP solver from a given state.
pub fn run_map_from<T: Real>(
    mut state: MapState<T>,
    signals: &ReceivedSignals<T>,
    pilots: &PilotMatrix<T>,
    opts: &SolverOptions,
    hyper: &Hyper<T>,
) -> Result<MapOutcome<T>> {
    opts.validate()?;
    problem_dims(signals, pilots)?;
    let rel_tol = T::lit(opts.rel_tol);
    let mut monitor = ChangeMonitor::new();
    monitor.observe(signals, &residuals(signals, pilots, &state.gamma, &state.g));
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_outer_iters {
        map_sweep(&mut state, signals, pilots, hyper, opts)?;
        iterations += 1;
        if !state.is_finite() {
            return Err(Error::NonFinite {
                solver: "map",
                iteration: iterations,
                detail: "state contains NaN or infinity".into(),
                trace: trace.iter().map(|v: &T| v.as_f64()).collect(),
            });
        }
        let change = monitor
            .observe(signals, &residuals(signals, pilots, &state.gamma, &state.g))
            .expect("monitor primed");
        trace.push(change);
        if change < rel_tol {
            converged = true;
            break;
        }
    }
    Ok(Outcome {
        scores: state.z.clone(),
        state,
        trace,
        iterations,
        converged,
    })
}
