//! Reference values for the Bessel-K / GIG / GH family computed straight
//! from integral representations, with no series, recurrences or
//! asymptotics involved.

use crate::quadrature::integrate;

/// Log-integrand drop (nats) below the peak at which the tails are cut.
const TAIL_DROP: f64 = 60.0;

/// `ln ∫_lo^hi exp(g(u)) du` for a unimodal log-integrand `g` peaking near `peak`.
/// `lo` / `hi` may be infinite; the integration window is found by stepping
/// outward from the peak until the integrand is negligible.
fn log_integral<G: Fn(f64) -> f64>(g: G, peak: f64, lo: f64, hi: f64, rel_tol: f64) -> f64 {
    let gmax = g(peak);
    let reach = |dir: f64, limit: f64| -> f64 {
        let mut w = 0.25;
        loop {
            let u = peak + dir * w;
            if (dir < 0.0 && u <= limit) || (dir > 0.0 && u >= limit) {
                return limit;
            }
            if g(u) - gmax < -TAIL_DROP {
                return u;
            }
            w *= 1.5;
        }
    };
    let a = reach(-1.0, lo);
    let b = reach(1.0, hi);
    let h = |u: f64| (g(u) - gmax).exp();
    let left = if peak > a {
        integrate(h, a, peak, 0.0, rel_tol).value
    } else {
        0.0
    };
    let right = if b > peak {
        integrate(h, peak, b, 0.0, rel_tol).value
    } else {
        0.0
    };
    gmax + (left + right).ln()
}

/// `ln K_ν(x)` from `K_ν(x) = ∫_0^∞ exp(-x cosh t) cosh(νt) dt`.
pub fn log_bessel_k_quad(nu: f64, x: f64) -> f64 {
    let nu = nu.abs();
    let peak = (nu / x).asinh();
    // cosh(νt) e^{-x cosh t} = ½ e^{νt - x cosh t} (1 + e^{-2νt})
    let g = |t: f64| nu * t - x * t.cosh() + (0.5 * (1.0 + (-2.0 * nu * t).exp())).ln();
    log_integral(g, peak, 0.0, f64::INFINITY, 1e-14)
}

/// Log of the GIG normalizing integral `∫_0^∞ z^{p-1} exp(-(ηz + ψ/z)/2) dz`,
/// integrated in `u = ln z`.
pub fn log_gig_integral(p: f64, eta: f64, psi: f64) -> f64 {
    let g = |u: f64| p * u - 0.5 * (eta * u.exp() + psi * (-u).exp());
    let peak = ((p + (p * p + eta * psi).sqrt()) / eta).ln();
    log_integral(g, peak, f64::NEG_INFINITY, f64::INFINITY, 1e-14)
}

/// `(E[z], E[1/z])` of GIG(η, ψ, λ) as ratios of density integrals.
pub fn gig_moments_quad(eta: f64, psi: f64, lambda: f64) -> (f64, f64) {
    let base = log_gig_integral(lambda, eta, psi);
    let mean = (log_gig_integral(lambda + 1.0, eta, psi) - base).exp();
    let inv = (log_gig_integral(lambda - 1.0, eta, psi) - base).exp();
    (mean, inv)
}

/// Normal variance-mixture density `∫ N(γ | 0, z) GIG(z | η, ψ, λ) dz`, with
/// the GIG normalizer itself obtained by quadrature.
pub fn gh_mixture_density(gamma: f64, eta: f64, psi: f64, lambda: f64) -> f64 {
    let norm = log_gig_integral(lambda, eta, psi);
    // ∫ (2πz)^{-1/2} e^{-γ²/2z} z^{λ-1} e^{-(ηz+ψ/z)/2} dz
    let mixed = log_gig_integral(lambda - 0.5, eta, psi + gamma * gamma);
    (mixed - norm - 0.5 * (2.0 * std::f64::consts::PI).ln()).exp()
}
