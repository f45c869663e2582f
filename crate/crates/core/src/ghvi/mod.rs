//! Mean-field variational inference under the generalized hyperbolic
//! prior.
//!
//! The approximate posterior factorizes into a real Gaussian per γ_kn, an
//! isotropic complex Gaussian per g_kn, a GIG law per z_n, a Gamma law per
//! η⁰_n and a Gamma law for τ. Each block has a closed-form optimum given
//! the others; one sweep visits them in the order γ, g, z, η⁰, τ.

mod objective;

use rand::Rng;

pub use objective::{conditional_log_joint, expected_misfit, partial_expected_log_joint, Block};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, LinkMatrix, LinkVectors};
use crate::mapdet::MapState;
use crate::model::{ap_residual, problem_dims, residuals, ChangeMonitor, Hyper, Outcome, SolverOptions};
use crate::scalar::{Cx, Real};
use crate::simkit::{complex_gaussian, PilotMatrix, ReceivedSignals};
use crate::specfun::{gig_moments_with, GammaParams, GigParams, InverseMoment, PARAM_FLOOR};

/// Lower clamp on the γ variance and the g covariance scale.
pub const VARIANCE_FLOOR: f64 = 1e-15;

/// Parameters of every factor of the approximate posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState<T> {
    pub mu_gamma: LinkMatrix<T>,
    pub var_gamma: LinkMatrix<T>,
    pub mu_g: LinkVectors<T>,
    /// The covariance of g_kn is `cov_g_scale · I`.
    pub cov_g_scale: LinkMatrix<T>,
    pub z_post: Vec<GigParams<T>>,
    pub eta0_post: Vec<GammaParams<T>>,
    pub tau_post: GammaParams<T>,
    /// `E[z]` per user, refreshed whenever the z factors are updated.
    pub mean_z: Vec<T>,
    /// `E[1/z]` per user, refreshed with `mean_z`.
    pub mean_inv_z: Vec<T>,
    pub inverse_moment: InverseMoment,
    /// Forces every γ variance and g covariance to zero, which turns the γ
    /// and g updates into their MAP counterparts.
    pub degenerate: bool,
}

/// Expectations under the approximate posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub mean_gamma: LinkMatrix<T>,
    pub mean_gamma_sq: LinkMatrix<T>,
    pub mean_g: LinkVectors<T>,
    pub mean_g_normsq: LinkMatrix<T>,
    pub mean_z: Vec<T>,
    pub mean_inv_z: Vec<T>,
    pub mean_eta0: Vec<T>,
    pub mean_tau: T,
}

fn norm_sqr<T: Real>(v: &[Cx<T>]) -> T {
    v.iter().map(|z| z.norm_sqr()).sum()
}

impl<T: Real> VariationalState<T> {
    /// Starting point: γ means and variances 0, g means `CN(0, I)` draws
    /// with zero covariance, `E[z] = E[1/z] = 1`, `E[η⁰]` at its prior
    /// value and `E[τ] = KLM / (Σ‖Y_k‖² + d)`.
    pub fn initial<R: Rng + ?Sized>(
        signals: &ReceivedSignals<T>,
        pilots: &PilotMatrix<T>,
        hyper: &Hyper<T>,
        inverse_moment: InverseMoment,
        rng: &mut R,
    ) -> Result<Self> {
        let (k_aps, n_users, l, m) = problem_dims(signals, pilots)?;
        let mut mu_g = LinkVectors::zeros(k_aps, n_users, m);
        for k in 0..k_aps {
            for n in 0..n_users {
                for v in mu_g.get_mut(k, n) {
                    *v = complex_gaussian(rng, T::one());
                }
            }
        }
        let eta_shape = hyper.kappa1 + hyper.gh.lambda0 * T::lit(0.5);
        let klm = T::of_usize(k_aps * l * m);
        Ok(Self {
            mu_gamma: LinkMatrix::filled(k_aps, n_users, T::zero()),
            var_gamma: LinkMatrix::filled(k_aps, n_users, T::zero()),
            mu_g,
            cov_g_scale: LinkMatrix::filled(k_aps, n_users, T::zero()),
            z_post: vec![hyper.gh.mixing(); n_users],
            eta0_post: vec![GammaParams::new(eta_shape, eta_shape / hyper.gh.eta0)?; n_users],
            tau_post: GammaParams::new(klm, signals.total_energy() + hyper.d)?,
            mean_z: vec![T::one(); n_users],
            mean_inv_z: vec![T::one(); n_users],
            inverse_moment,
            degenerate: false,
        })
    }

    /// Point-mass state matching a MAP estimate: zero variances, `E[z] = z`,
    /// `E[1/z] = 1/z`, `E[τ] = τ`.
    pub fn from_point(point: &MapState<T>, hyper: &Hyper<T>) -> Result<Self> {
        let (k_aps, n_users) = (point.gamma.aps(), point.gamma.users());
        let eta_shape = hyper.kappa1 + hyper.gh.lambda0 * T::lit(0.5);
        Ok(Self {
            mu_gamma: point.gamma.clone(),
            var_gamma: LinkMatrix::filled(k_aps, n_users, T::zero()),
            mu_g: point.g.clone(),
            cov_g_scale: LinkMatrix::filled(k_aps, n_users, T::zero()),
            z_post: vec![hyper.gh.mixing(); n_users],
            eta0_post: point
                .eta0
                .iter()
                .map(|&e| GammaParams::new(eta_shape, eta_shape / e))
                .collect::<Result<_>>()?,
            tau_post: GammaParams::new(T::one(), T::one() / point.tau)?,
            mean_z: point.z.clone(),
            mean_inv_z: point.z.iter().map(|&z| T::one() / z).collect(),
            inverse_moment: InverseMoment::LowerOrder,
            degenerate: true,
        })
    }

    pub fn aps(&self) -> usize {
        self.mu_gamma.aps()
    }

    pub fn users(&self) -> usize {
        self.mu_gamma.users()
    }

    pub fn antennas(&self) -> usize {
        self.mu_g.dim()
    }

    #[inline]
    pub fn mean_gamma_sq(&self, k: usize, n: usize) -> T {
        let mu = self.mu_gamma[(k, n)];
        mu * mu + self.var_gamma[(k, n)]
    }

    #[inline]
    pub fn mean_g_normsq(&self, k: usize, n: usize) -> T {
        norm_sqr(self.mu_g.get(k, n)) + T::of_usize(self.antennas()) * self.cov_g_scale[(k, n)]
    }

    #[inline]
    pub fn mean_eta0(&self, n: usize) -> T {
        self.eta0_post[n].mean()
    }

    #[inline]
    pub fn mean_tau(&self) -> T {
        self.tau_post.mean()
    }

    /// Residual of the mean reconstruction, `Y_k - Σ_n E[γ_kn] s_n E[g_kn]ᵀ`.
    pub fn mean_residuals(&self, signals: &ReceivedSignals<T>, pilots: &PilotMatrix<T>) -> Vec<CMatrix<T>> {
        residuals(signals, pilots, &self.mu_gamma, &self.mu_g)
    }

    pub fn is_finite(&self) -> bool {
        let scalars = self
            .mu_gamma
            .as_slice()
            .iter()
            .chain(self.var_gamma.as_slice())
            .chain(self.cov_g_scale.as_slice())
            .chain(&self.mean_z)
            .chain(&self.mean_inv_z)
            .all(|v| v.is_finite());
        scalars
            && self
                .mu_g
                .as_slice()
                .iter()
                .all(|v| v.re.is_finite() && v.im.is_finite())
            && self.eta0_post.iter().all(|p| p.mean().is_finite())
            && self.tau_post.mean().is_finite()
    }

    fn variance(&self, v: T) -> T {
        if self.degenerate {
            T::zero()
        } else {
            v.max(T::lit(VARIANCE_FLOOR))
        }
    }
}

pub fn compute_moments<T: Real>(state: &VariationalState<T>) -> Moments<T> {
    let (k_aps, n_users) = (state.aps(), state.users());
    Moments {
        mean_gamma: state.mu_gamma.clone(),
        mean_gamma_sq: LinkMatrix::from_fn(k_aps, n_users, |k, n| state.mean_gamma_sq(k, n)),
        mean_g: state.mu_g.clone(),
        mean_g_normsq: LinkMatrix::from_fn(k_aps, n_users, |k, n| state.mean_g_normsq(k, n)),
        mean_z: state.mean_z.clone(),
        mean_inv_z: state.mean_inv_z.clone(),
        mean_eta0: (0..n_users).map(|n| state.mean_eta0(n)).collect(),
        mean_tau: state.mean_tau(),
    }
}

fn pilot_energies<T: Real>(pilots: &PilotMatrix<T>) -> Vec<T> {
    (0..pilots.users()).map(|n| pilots.column_norm_sqr(n)).collect()
}

fn gamma_step<T: Real>(
    state: &mut VariationalState<T>,
    rk: &mut CMatrix<T>,
    pilots: &PilotMatrix<T>,
    energy: T,
    k: usize,
    n: usize,
) {
    let half = T::lit(0.5);
    let tau = state.mean_tau();
    let s = pilots.column(n);
    let old = state.mu_gamma[(k, n)];
    let a = tau * energy * state.mean_g_normsq(k, n) + half * state.mean_inv_z[n];
    let g = state.mu_g.get(k, n);
    let proj = rk
        .conj_left_mul(s)
        .iter()
        .zip(g)
        .map(|(&cm, &gm)| (cm + gm * (old * energy)) * gm.conj())
        .sum::<Cx<T>>()
        .re;
    let new = tau * proj / a;
    rk.add_outer(old - new, s, g);
    state.mu_gamma[(k, n)] = new;
    state.var_gamma[(k, n)] = state.variance(half / a);
}

fn g_step<T: Real>(
    state: &mut VariationalState<T>,
    rk: &mut CMatrix<T>,
    pilots: &PilotMatrix<T>,
    energy: T,
    k: usize,
    n: usize,
) {
    let tau = state.mean_tau();
    let s = pilots.column(n);
    let mu = state.mu_gamma[(k, n)];
    let scale = T::one() / (tau * state.mean_gamma_sq(k, n) * energy + T::one());
    let coef = tau * mu * scale;
    let old = state.mu_g.get(k, n);
    let new: Vec<Cx<T>> = rk
        .conj_left_mul(s)
        .iter()
        .zip(old)
        .map(|(&cm, &gm)| (cm + gm * (mu * energy)) * coef)
        .collect();
    let delta: Vec<Cx<T>> = new.iter().zip(old).map(|(a, b)| *a - *b).collect();
    rk.add_outer(-mu, s, &delta);
    state.mu_g.get_mut(k, n).copy_from_slice(&new);
    state.cov_g_scale[(k, n)] = state.variance(scale);
}

/// Gaussian factor of every γ_kn, AP-major then user: precision
/// `2A` with `A = E[τ]‖s_n‖²E[‖g_kn‖²] + E[1/z_n]/2`, mean
/// `E[τ] Re(E[g_kn]ᴴ (R̄_{-n}ᵀ s̄_n)) / A`.
pub fn update_q_gamma<T: Real>(state: &mut VariationalState<T>, signals: &ReceivedSignals<T>, pilots: &PilotMatrix<T>) {
    let energies = pilot_energies(pilots);
    let mut res = state.mean_residuals(signals, pilots);
    for (k, rk) in res.iter_mut().enumerate() {
        for (n, &e) in energies.iter().enumerate() {
            gamma_step(state, rk, pilots, e, k, n);
        }
    }
}

/// [`update_q_gamma`] restricted to the link `(k, n)`.
pub fn update_q_gamma_link<T: Real>(
    state: &mut VariationalState<T>,
    signals: &ReceivedSignals<T>,
    pilots: &PilotMatrix<T>,
    k: usize,
    n: usize,
) {
    let mut rk = ap_residual(signals, pilots, &state.mu_gamma, &state.mu_g, k);
    gamma_step(state, &mut rk, pilots, pilots.column_norm_sqr(n), k, n);
}

/// Complex Gaussian factor of every g_kn, AP-major then user: covariance
/// scale `1 / (E[τ]E[γ²]‖s_n‖² + 1)`, mean
/// `E[τ]E[γ] scale · R̄_{-n}ᵀ s̄_n`.
pub fn update_q_g<T: Real>(state: &mut VariationalState<T>, signals: &ReceivedSignals<T>, pilots: &PilotMatrix<T>) {
    let energies = pilot_energies(pilots);
    let mut res = state.mean_residuals(signals, pilots);
    for (k, rk) in res.iter_mut().enumerate() {
        for (n, &e) in energies.iter().enumerate() {
            g_step(state, rk, pilots, e, k, n);
        }
    }
}

/// [`update_q_g`] restricted to the link `(k, n)`.
pub fn update_q_g_link<T: Real>(
    state: &mut VariationalState<T>,
    signals: &ReceivedSignals<T>,
    pilots: &PilotMatrix<T>,
    k: usize,
    n: usize,
) {
    let mut rk = ap_residual(signals, pilots, &state.mu_gamma, &state.mu_g, k);
    g_step(state, &mut rk, pilots, pilots.column_norm_sqr(n), k, n);
}

/// GIG factor of every z_n: `η̂ = E[η⁰]`, `ψ̂ = ψ⁰ + Σ_k E[γ²]`,
/// `λ̂ = λ⁰ - K/2`; refreshes the cached moments.
pub fn update_q_z<T: Real>(state: &mut VariationalState<T>, hyper: &Hyper<T>) -> Result<()> {
    let k_aps = state.aps();
    let floor = T::lit(PARAM_FLOOR);
    let lambda = hyper.gh.lambda0 - T::of_usize(k_aps) * T::lit(0.5);
    for n in 0..state.users() {
        let spread: T = (0..k_aps).map(|k| state.mean_gamma_sq(k, n)).sum();
        let p = GigParams::new(
            state.mean_eta0(n).max(floor),
            (hyper.gh.psi0 + spread).max(floor),
            lambda,
        )?;
        let (mean, inv) = gig_moments_with(&p, state.inverse_moment)?;
        state.z_post[n] = p;
        state.mean_z[n] = mean;
        state.mean_inv_z[n] = inv;
    }
    Ok(())
}

/// Gamma factor of every η⁰_n: shape `κ₁ + λ⁰/2`, rate `κ₂ + E[z_n]/2`.
pub fn update_q_eta<T: Real>(state: &mut VariationalState<T>, hyper: &Hyper<T>) -> Result<()> {
    let half = T::lit(0.5);
    let shape = hyper.kappa1 + hyper.gh.lambda0 * half;
    for n in 0..state.users() {
        state.eta0_post[n] = GammaParams::new(shape, hyper.kappa2 + state.mean_z[n] * half)
            .map_err(|_| Error::Config(format!("kappa1 + lambda0/2 = {shape} must be positive")))?;
    }
    Ok(())
}

/// Gamma factor of τ: shape `KLM + c`, rate `d + E_Q Σ_k‖R_k‖²`.
pub fn update_q_tau<T: Real>(
    state: &mut VariationalState<T>,
    signals: &ReceivedSignals<T>,
    pilots: &PilotMatrix<T>,
    hyper: &Hyper<T>,
) -> Result<()> {
    let (k_aps, _, l, m) = problem_dims(signals, pilots)?;
    let shape = T::of_usize(k_aps * l * m) + hyper.c;
    let rate = hyper.d + expected_misfit(state, signals, pilots);
    state.tau_post = GammaParams::new(shape, rate)?;
    Ok(())
}

/// One full pass over all factors.
pub fn ghvi_sweep<T: Real>(
    state: &mut VariationalState<T>,
    signals: &ReceivedSignals<T>,
    pilots: &PilotMatrix<T>,
    hyper: &Hyper<T>,
) -> Result<()> {
    update_q_gamma(state, signals, pilots);
    update_q_g(state, signals, pilots);
    update_q_z(state, hyper)?;
    update_q_eta(state, hyper)?;
    update_q_tau(state, signals, pilots, hyper)
}

pub type GhviOutcome<T> = Outcome<VariationalState<T>, T>;

/// Runs the variational solver from [`VariationalState::initial`]; scores
/// are `E[z_n]`.
pub fn run_ghvi<T: Real, R: Rng + ?Sized>(
    signals: &ReceivedSignals<T>,
    pilots: &PilotMatrix<T>,
    opts: &SolverOptions,
    hyper: &Hyper<T>,
    rng: &mut R,
) -> Result<GhviOutcome<T>> {
    hyper.validate()?;
    let state = VariationalState::initial(signals, pilots, hyper, opts.inverse_moment, rng)?;
    run_ghvi_from(state, signals, pilots, opts, hyper)
}

pub fn run_ghvi_from<T: Real>(
    mut state: VariationalState<T>,
    signals: &ReceivedSignals<T>,
    pilots: &PilotMatrix<T>,
    opts: &SolverOptions,
    hyper: &Hyper<T>,
) -> Result<GhviOutcome<T>> {
    opts.validate()?;
    problem_dims(signals, pilots)?;
    let rel_tol = T::lit(opts.rel_tol);
    let mut monitor = ChangeMonitor::new();
    monitor.observe(signals, &state.mean_residuals(signals, pilots));
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_outer_iters {
        let step = ghvi_sweep(&mut state, signals, pilots, hyper);
        iterations += 1;
        if let Err(e) = step {
            return Err(non_finite(iterations, e.to_string(), &trace));
        }
        if !state.is_finite() {
            return Err(non_finite(iterations, "state contains NaN or infinity".into(), &trace));
        }
        let change = monitor
            .observe(signals, &state.mean_residuals(signals, pilots))
            .expect("monitor primed");
        trace.push(change);
        if change < rel_tol {
            converged = true;
            break;
        }
    }
    Ok(Outcome {
        scores: state.mean_z.clone(),
        state,
        trace,
        iterations,
        converged,
    })
}

fn non_finite<T: Real>(iteration: usize, detail: String, trace: &[T]) -> Error {
    Error::NonFinite {
        solver: "ghvi",
        iteration,
        detail,
        trace: trace.iter().map(|v| v.as_f64()).collect(),
    }
}
