#![allow(dead_code)]

use cfdetect::simkit::{
    build_scenario, derive_seed, draw_activity, draw_channels, generate_pilots, synthesize, ChannelRealization,
    PilotMatrix, ReceivedSignals, Scenario, SystemConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}

/// Two APs with two antennas, eight users, pilots of length six.
pub fn small_config() -> SystemConfig {
    SystemConfig {
        aps: 2,
        antennas: 2,
        users: 8,
        pilot_len: 6,
        epsilon: 0.3,
        area_km: 0.5,
        ..SystemConfig::desk()
    }
}

pub struct Instance {
    pub cfg: SystemConfig,
    pub scenario: Scenario<f64>,
    pub channels: ChannelRealization<f64>,
    pub pilots: PilotMatrix<f64>,
    pub signals: ReceivedSignals<f64>,
}

impl Instance {
    pub fn activity(&self) -> &[bool] {
        &self.channels.activity
    }
}

pub fn instance(cfg: &SystemConfig, seed: u64) -> Instance {
    let scenario = build_scenario(cfg, &mut rng(seed, 0)).unwrap();
    let activity = draw_activity(cfg, &mut rng(seed, 1));
    let channels = draw_channels(&scenario, cfg, &activity, &mut rng(seed, 2)).unwrap();
    let pilots = generate_pilots(cfg, &mut rng(seed, 3));
    let signals = synthesize(&scenario, &channels, &pilots, cfg, &mut rng(seed, 4)).unwrap();
    Instance {
        cfg: cfg.clone(),
        scenario,
        channels,
        pilots,
        signals,
    }
}

/// Small instance with at least one active user.
pub fn small_instance(seed: u64) -> Instance {
    let cfg = small_config();
    (0..)
        .map(|attempt| instance(&cfg, derive_seed(seed, 1000 + attempt)))
        .find(|inst| inst.activity().iter().any(|&a| a))
        .unwrap()
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// `users` users with orthogonal (DFT) pilots of length `users`, seen by
/// `aps` APs with four antennas each. The users listed in `active` transmit
/// with unit gain; noise has variance `noise_var`.
pub fn orthogonal_problem(
    aps: usize,
    users: usize,
    active: &[usize],
    noise_var: f64,
    seed: u64,
) -> (ReceivedSignals<f64>, PilotMatrix<f64>) {
    use cfdetect::linalg::CMatrix;
    use cfdetect::simkit::complex_gaussian;
    use cfdetect::Cx;
    let antennas = 4;
    let columns = (0..users)
        .map(|n| {
            (0..users)
                .map(|l| Cx::from_polar(1.0, std::f64::consts::TAU * (n * l) as f64 / users as f64))
                .collect()
        })
        .collect();
    let pilots = PilotMatrix::from_columns(columns).unwrap();
    let mut r = rng(seed, 0);
    let y = (0..aps)
        .map(|_| {
            let mut yk = CMatrix::zeros(users, antennas);
            for &n in active {
                let g: Vec<Cx<f64>> = (0..antennas).map(|_| complex_gaussian(&mut r, 1.0)).collect();
                yk.add_outer(1.0, pilots.column(n), &g);
            }
            for v in yk.as_mut_slice() {
                *v += complex_gaussian(&mut r, noise_var);
            }
            yk
        })
        .collect();
    (
        ReceivedSignals {
            y,
            noise_power: noise_var,
        },
        pilots,
    )
}
