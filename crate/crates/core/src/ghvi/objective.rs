//! Block-wise pieces of the expected log joint, used to check that each
//! update really is the optimum of its block.

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::model::Hyper;
use crate::scalar::{Cx, Real};
use crate::simkit::{PilotMatrix, ReceivedSignals};
use crate::specfun::{gig_mean_ln, gig_moments};

use super::VariationalState;

/// One variational factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Gamma { ap: usize, user: usize },
    G { ap: usize, user: usize },
    Z(usize),
    Eta(usize),
    Tau,
}

impl Block {
    fn check<T: Real>(&self, state: &VariationalState<T>) -> Result<()> {
        let (k_aps, n_users) = (state.aps(), state.users());
        let ok = match *self {
            Block::Gamma { ap, user } | Block::G { ap, user } => ap < k_aps && user < n_users,
            Block::Z(n) | Block::Eta(n) => n < n_users,
            Block::Tau => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("{self:?} outside a {k_aps}x{n_users} problem")))
        }
    }
}

/// `E_Q‖Y_k - Σ_n γ_kn s_n g_knᵀ‖²` for one AP, given its mean residual.
fn expected_misfit_ap<T: Real>(
    state: &VariationalState<T>,
    pilots: &PilotMatrix<T>,
    k: usize,
    residual: &CMatrix<T>,
) -> T {
    let m = T::of_usize(state.antennas());
    let mut total = residual.frob_norm_sqr();
    for n in 0..state.users() {
        let mu = state.mu_gamma[(k, n)];
        let var = state.var_gamma[(k, n)];
        let scale = state.cov_g_scale[(k, n)];
        let g2: T = state.mu_g.get(k, n).iter().map(|z| z.norm_sqr()).sum();
        total += pilots.column_norm_sqr(n) * (var * g2 + mu * mu * m * scale + var * m * scale);
    }
    total
}

/// `E_Q Σ_k‖Y_k - Σ_n γ_kn s_n g_knᵀ‖²`: the mean-residual energy plus the
/// variance contributions `‖s_n‖²(σ‖μ_g‖² + μ²M·scale + σM·scale)`.
pub fn expected_misfit<T: Real>(
    state: &VariationalState<T>,
    signals: &ReceivedSignals<T>,
    pilots: &PilotMatrix<T>,
) -> T {
    state
        .mean_residuals(signals, pilots)
        .iter()
        .enumerate()
        .map(|(k, r)| expected_misfit_ap(state, pilots, k, r))
        .sum()
}

/// Terms of `E_Q[ln p(Y, Θ)]` that involve the parameters of `block`,
/// additive constants dropped.
///
/// For the z factors `E[z]`, `E[1/z]` and `E[ln z]` come from the factor's
/// own GIG parameters; other blocks read the moments cached in the state.
/// The η⁰ terms leave out `-ln K_{λ⁰}(√(η⁰ψ⁰))`, which the Gamma factor
/// does not account for either.
pub fn partial_expected_log_joint<T: Real>(
    block: Block,
    state: &VariationalState<T>,
    signals: &ReceivedSignals<T>,
    pilots: &PilotMatrix<T>,
    hyper: &Hyper<T>,
) -> Result<T> {
    block.check(state)?;
    let half = T::lit(0.5);
    let tau = state.mean_tau();
    Ok(match block {
        Block::Gamma { ap, user } => {
            let r = state.mean_residuals(signals, pilots);
            -tau * expected_misfit_ap(state, pilots, ap, &r[ap])
                - half * state.mean_inv_z[user] * state.mean_gamma_sq(ap, user)
        }
        Block::G { ap, user } => {
            let r = state.mean_residuals(signals, pilots);
            -tau * expected_misfit_ap(state, pilots, ap, &r[ap]) - state.mean_g_normsq(ap, user)
        }
        Block::Z(n) => {
            let p = state.z_post[n];
            let (mean, inv) = gig_moments(&p)?;
            let mean_ln = gig_mean_ln(&p)?;
            let k_aps = state.aps();
            let spread: T = (0..k_aps).map(|k| state.mean_gamma_sq(k, n)).sum();
            -half * T::of_usize(k_aps) * mean_ln - half * inv * spread + (hyper.gh.lambda0 - T::one()) * mean_ln
                - half * (state.mean_eta0(n) * mean + hyper.gh.psi0 * inv)
        }
        Block::Eta(n) => {
            let q = state.eta0_post[n];
            (half * hyper.gh.lambda0 + hyper.kappa1 - T::one()) * q.mean_ln()
                - q.mean() * (hyper.kappa2 + half * state.mean_z[n])
        }
        Block::Tau => {
            let klm = T::of_usize(state.aps() * pilots.len() * state.antennas());
            (klm + hyper.c - T::one()) * state.tau_post.mean_ln()
                - tau * (expected_misfit(state, signals, pilots) + hyper.d)
        }
    })
}

/// `E_{Q without block}[ln p(Y, Θ)]` as a function of the scalar value `x`
/// of `block`, additive constants dropped. The optimal factor is
/// proportional to its exponential, so `ln q(x) - conditional_log_joint(x)`
/// is flat in `x` right after the block's update.
pub fn conditional_log_joint<T: Real>(
    block: Block,
    state: &VariationalState<T>,
    signals: &ReceivedSignals<T>,
    pilots: &PilotMatrix<T>,
    hyper: &Hyper<T>,
    x: T,
) -> Result<T> {
    block.check(state)?;
    if !(x.is_finite()) {
        return Err(crate::error::domain("conditional_log_joint", format!("x = {x}")));
    }
    let half = T::lit(0.5);
    let tau = state.mean_tau();
    let positive = |x: T| {
        if x > T::zero() {
            Ok(x)
        } else {
            Err(crate::error::domain("conditional_log_joint", format!("x = {x}")))
        }
    };
    Ok(match block {
        Block::Gamma { ap, user } => {
            let r = state.mean_residuals(signals, pilots);
            let s = pilots.column(user);
            let energy = pilots.column_norm_sqr(user);
            let mu = state.mu_gamma[(ap, user)];
            let g = state.mu_g.get(ap, user);
            let proj = r[ap]
                .conj_left_mul(s)
                .iter()
                .zip(g)
                .map(|(&cm, &gm)| (cm + gm * (mu * energy)) * gm.conj())
                .sum::<Cx<T>>()
                .re;
            -tau * (energy * state.mean_g_normsq(ap, user) * x * x - T::lit(2.0) * x * proj)
                - half * state.mean_inv_z[user] * x * x
        }
        Block::G { .. } => {
            return Err(Error::Config(
                "g blocks are vector-valued; no scalar conditional".into(),
            ));
        }
        Block::Z(n) => {
            let z = positive(x)?;
            let k_aps = state.aps();
            let spread: T = (0..k_aps).map(|k| state.mean_gamma_sq(k, n)).sum();
            (hyper.gh.lambda0 - T::one() - half * T::of_usize(k_aps)) * z.ln()
                - half * (hyper.gh.psi0 + spread) / z
                - half * state.mean_eta0(n) * z
        }
        Block::Eta(n) => {
            let eta = positive(x)?;
            (hyper.kappa1 - T::one() + half * hyper.gh.lambda0) * eta.ln()
                - eta * (hyper.kappa2 + half * state.mean_z[n])
        }
        Block::Tau => {
            let t = positive(x)?;
            let klm = T::of_usize(state.aps() * pilots.len() * state.antennas());
            (klm + hyper.c - T::one()) * t.ln() - t * (expected_misfit(state, signals, pilots) + hyper.d)
        }
    })
}
