use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::LinkMatrix;
use crate::scalar::Real;

use super::config::{db_to_linear, SystemConfig};

/// Users closer than this to an AP are re-drawn.
pub const MIN_DISTANCE_KM: f64 = 1e-3;
/// Standard deviation of log-normal shadowing.
pub const SHADOWING_STD_DB: f64 = 4.0;

/// Large-scale geometry and gains of one deployment.
///
/// Gains in `effective_beta` are expressed relative to the receiver noise
/// power, so the received noise variance is `noise_power` (1 by
/// construction).
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T> {
    pub ap_positions: Vec<[T; 2]>,
    pub user_positions: Vec<[T; 2]>,
    /// AP–user distances in km.
    pub distances: LinkMatrix<T>,
    pub shadowing_db: LinkMatrix<T>,
    /// Linear large-scale power gain.
    pub beta: LinkMatrix<T>,
    /// Transmit power per user in watts.
    pub tx_power: Vec<T>,
    /// `tx_power · beta / reference_power_w`.
    pub effective_beta: LinkMatrix<T>,
    pub reference_power_w: T,
    /// Received noise variance in units of `reference_power_w`.
    pub noise_power: T,
    /// Noise variance a knowledge-based detector is told about; equals
    /// `noise_power` unless the scenario was perturbed.
    pub assumed_noise_power: T,
}

impl<T: Real> Scenario<T> {
    pub fn aps(&self) -> usize {
        self.beta.aps()
    }

    pub fn users(&self) -> usize {
        self.beta.users()
    }
}

/// Path loss in dB at distance `d_km`, without shadowing.
pub fn pathloss_db(d_km: f64) -> f64 {
    -128.1 - 36.7 * d_km.log10()
}

/// AP coordinates on a regular grid of cells covering the square, one AP
/// at the centre of each cell, filled row by row.
pub fn grid_ap_positions(aps: usize, area_km: f64) -> Vec<[f64; 2]> {
    let cols = (aps as f64).sqrt().ceil() as usize;
    let rows = aps.div_ceil(cols);
    (0..aps)
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            [
                (c as f64 + 0.5) / cols as f64 * area_km,
                (r as f64 + 0.5) / rows as f64 * area_km,
            ]
        })
        .collect()
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Draws user positions and shadowing, then sets per-user power so that the
/// strongest AP sees the target SNR (capped at the maximum transmit power).
pub fn build_scenario<T: Real, R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Result<Scenario<T>> {
    cfg.validate()?;
    let (k_aps, n_users) = (cfg.aps, cfg.users);
    let aps = grid_ap_positions(k_aps, cfg.area_km);
    let mut users = Vec::with_capacity(n_users);
    for _ in 0..n_users {
        let mut attempts = 0;
        let pos = loop {
            let p = [rng.random::<f64>() * cfg.area_km, rng.random::<f64>() * cfg.area_km];
            if aps.iter().all(|&a| distance(a, p) >= MIN_DISTANCE_KM) {
                break p;
            }
            attempts += 1;
            if attempts > 10_000 {
                return Err(Error::Config("area too small to keep users away from APs".into()));
            }
        };
        users.push(pos);
    }

    let dist = LinkMatrix::from_fn(k_aps, n_users, |k, n| distance(aps[k], users[n]));
    let shadow = LinkMatrix::from_fn(k_aps, n_users, |_, _| {
        SHADOWING_STD_DB * rng.sample::<f64, _>(StandardNormal)
    });
    let beta = LinkMatrix::from_fn(k_aps, n_users, |k, n| {
        db_to_linear(pathloss_db(dist[(k, n)]) + shadow[(k, n)])
    });

    let noise_w = cfg.noise_power_w();
    let snr = db_to_linear(cfg.snr_target_db);
    let p_max = cfg.max_tx_power_w();
    let tx: Vec<f64> = (0..n_users)
        .map(|n| {
            let best = beta.user_column(n).fold(0.0, f64::max);
            (snr * noise_w / best).min(p_max)
        })
        .collect();
    let eff = LinkMatrix::from_fn(k_aps, n_users, |k, n| tx[n] * beta[(k, n)] / noise_w);

    let cast = |m: &LinkMatrix<f64>| LinkMatrix::from_fn(k_aps, n_users, |k, n| T::lit(m[(k, n)]));
    let point = |p: &[f64; 2]| [T::lit(p[0]), T::lit(p[1])];
    Ok(Scenario {
        ap_positions: aps.iter().map(point).collect(),
        user_positions: users.iter().map(point).collect(),
        distances: cast(&dist),
        shadowing_db: cast(&shadow),
        beta: cast(&beta),
        tx_power: tx.iter().map(|&p| T::lit(p)).collect(),
        effective_beta: cast(&eff),
        reference_power_w: T::lit(noise_w),
        noise_power: T::one(),
        assumed_noise_power: T::one(),
    })
}

/// I.i.d. Bernoulli(ε) activity flags.
pub fn draw_activity<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Vec<bool> {
    (0..cfg.users).map(|_| rng.random::<f64>() < cfg.epsilon).collect()
}
