use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{LinkMatrix, LinkVectors};
use crate::scalar::{Cx, Real};

use super::config::SystemConfig;
use super::scenario::Scenario;

/// Circularly-symmetric complex Gaussian draw with variance `var`.
pub fn complex_gaussian<T: Real, R: Rng + ?Sized>(rng: &mut R, var: T) -> Cx<T> {
    let sd = (var * T::lit(0.5)).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Cx::new(T::lit(re) * sd, T::lit(im) * sd)
}

/// Small-scale fading of every link plus the activity pattern it was
/// drawn for.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization<T> {
    pub g: LinkVectors<T>,
    pub activity: Vec<bool>,
    /// Line-of-sight to scattered power ratio; exactly 0 for Rayleigh links.
    pub rician_factor: LinkMatrix<T>,
    /// Steering angle of the line-of-sight component in `[0, 2π)`.
    pub los_angle: LinkMatrix<T>,
}

/// Unit-modulus steering vector `[1, e^{jθ}, …, e^{j(M-1)θ}]`.
pub fn steering_vector<T: Real>(theta: T, m: usize) -> Vec<Cx<T>> {
    (0..m)
        .map(|i| Cx::from_polar(T::one(), theta * T::of_usize(i)))
        .collect()
}

/// Rician mixing of a line-of-sight vector with scattered fading.
pub fn rician_mix<T: Real>(factor: T, los: &[Cx<T>], scattered: &[Cx<T>]) -> Vec<Cx<T>> {
    let one = T::one();
    let a = (factor / (one + factor)).sqrt();
    let b = (one / (one + factor)).sqrt();
    los.iter().zip(scattered).map(|(&l, &w)| l * a + w * b).collect()
}

/// Draws `g` for every link. A `rician_fraction` share of users, chosen
/// uniformly, get a line-of-sight component on all their links with factor
/// `U(0, rician_factor_max)` per link; everyone else is Rayleigh.
pub fn draw_channels<T: Real, R: Rng + ?Sized>(
    scenario: &Scenario<T>,
    cfg: &SystemConfig,
    activity: &[bool],
    rng: &mut R,
) -> Result<ChannelRealization<T>> {
    let (k_aps, n_users, m) = (scenario.aps(), scenario.users(), cfg.antennas);
    if activity.len() != n_users || cfg.users != n_users || cfg.aps != k_aps {
        return Err(Error::Dimension(format!(
            "scenario is {k_aps}x{n_users}, config {}x{}, activity {}",
            cfg.aps,
            cfg.users,
            activity.len()
        )));
    }
    let n_rician = (cfg.rician_fraction * n_users as f64).round() as usize;
    let mut is_rician = vec![false; n_users];
    for n in sample(rng, n_users, n_rician.min(n_users)) {
        is_rician[n] = true;
    }

    let mut g = LinkVectors::zeros(k_aps, n_users, m);
    let mut factor = LinkMatrix::filled(k_aps, n_users, T::zero());
    let mut angle = LinkMatrix::filled(k_aps, n_users, T::zero());
    for k in 0..k_aps {
        for n in 0..n_users {
            let scattered: Vec<Cx<T>> = (0..m).map(|_| complex_gaussian(rng, T::one())).collect();
            if is_rician[n] {
                let kr = T::lit(rng.random::<f64>() * cfg.rician_factor_max);
                let theta = T::lit(rng.random::<f64>() * std::f64::consts::TAU);
                factor[(k, n)] = kr;
                angle[(k, n)] = theta;
                let v = rician_mix(kr, &steering_vector(theta, m), &scattered);
                g.get_mut(k, n).copy_from_slice(&v);
            } else {
                g.get_mut(k, n).copy_from_slice(&scattered);
            }
        }
    }
    Ok(ChannelRealization {
        g,
        activity: activity.to_vec(),
        rician_factor: factor,
        los_angle: angle,
    })
}
