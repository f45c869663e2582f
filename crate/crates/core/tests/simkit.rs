mod common;

use cfdetect::linalg::{CMatrix, LinkVectors};
use cfdetect::simkit::{
    build_scenario, draw_activity, draw_channels, generate_pilots, perturb_knowledge, synthesize, ChannelRealization,
    PerturbationSpec, SystemConfig,
};
use cfdetect::Cx;
use common::{instance, rel_err, rng, small_config};

fn silent(cfg: &SystemConfig, seed: u64) -> (cfdetect::Scenario, ChannelRealization<f64>) {
    let mut scenario = build_scenario(cfg, &mut rng(seed, 0)).unwrap();
    scenario.noise_power = 0.0;
    let channels = draw_channels(&scenario, cfg, &vec![false; cfg.users], &mut rng(seed, 2)).unwrap();
    (scenario, channels)
}

#[test]
fn no_users_and_no_noise_gives_zero_signals() {
    let cfg = small_config();
    let (scenario, channels) = silent(&cfg, 1);
    let pilots = generate_pilots(&cfg, &mut rng(1, 3));
    let y = synthesize(&scenario, &channels, &pilots, &cfg, &mut rng(1, 4)).unwrap();
    assert_eq!(y.total_energy(), 0.0);
    assert_eq!(y.aps(), cfg.aps);
    assert!(y
        .y
        .iter()
        .all(|m| m.rows() == cfg.pilot_len && m.cols() == cfg.antennas));
}

#[test]
fn one_user_without_noise_is_rank_one() {
    let cfg = small_config();
    let (scenario, mut channels) = silent(&cfg, 2);
    channels.activity[3] = true;
    let pilots = generate_pilots(&cfg, &mut rng(2, 3));
    let y = synthesize(&scenario, &channels, &pilots, &cfg, &mut rng(2, 4)).unwrap();
    for k in 0..cfg.aps {
        let amp = scenario.effective_beta[(k, 3)].sqrt();
        let mut expect = CMatrix::zeros(cfg.pilot_len, cfg.antennas);
        expect.add_outer(amp, pilots.column(3), channels.g.get(k, 3));
        assert!(y.y[k].sub(&expect).frob_norm_sqr() < 1e-24);
    }
}

#[test]
fn pilots_have_energy_l() {
    let cfg = SystemConfig::desk();
    let pilots = generate_pilots::<f64, _>(&cfg, &mut rng(3, 3));
    for n in 0..cfg.users {
        assert!((pilots.column_norm_sqr(n) - cfg.pilot_len as f64).abs() < 1e-9);
    }
}

#[test]
fn sample_covariance_approaches_model() {
    let cfg = SystemConfig {
        antennas: 4000,
        ..small_config()
    };
    let inst = instance(&cfg, 4);
    for k in 0..cfg.aps {
        let y = &inst.signals.y[k];
        let mut sample = y.matmul(&y.adjoint());
        sample.scale(1.0 / cfg.antennas as f64);
        let mut model = CMatrix::identity(cfg.pilot_len);
        for n in (0..cfg.users).filter(|&n| inst.activity()[n]) {
            let s = inst.pilots.column(n);
            let conj: Vec<Cx<f64>> = s.iter().map(|z| z.conj()).collect();
            model.add_outer(inst.scenario.effective_beta[(k, n)], s, &conj);
        }
        let err = sample.sub(&model).frob_norm_sqr().sqrt() / model.frob_norm_sqr().sqrt();
        assert!(err < 0.1, "AP {k}: relative error {err}");
    }
}

#[test]
fn received_energy_matches_expectation() {
    let cfg = small_config();
    let trials = 400;
    let (mut measured, mut expected) = (0.0, 0.0);
    for t in 0..trials {
        let inst = instance(&cfg, 100 + t);
        measured += inst.signals.total_energy();
        let l = cfg.pilot_len as f64;
        let m = cfg.antennas as f64;
        expected += cfg.aps as f64 * l * m;
        for k in 0..cfg.aps {
            for n in (0..cfg.users).filter(|&n| inst.activity()[n]) {
                expected += inst.scenario.effective_beta[(k, n)] * l * m;
            }
        }
    }
    assert!(rel_err(measured, expected, 1.0) < 0.03, "{measured} vs {expected}");
}

#[test]
fn same_seed_same_trial() {
    let cfg = small_config();
    let a = instance(&cfg, 9);
    let b = instance(&cfg, 9);
    assert_eq!(a.signals, b.signals);
    assert_eq!(a.pilots, b.pilots);
    assert_eq!(a.scenario, b.scenario);
    let c = instance(&cfg, 10);
    assert_ne!(a.signals, c.signals);
}

#[test]
fn activity_rate_tracks_epsilon() {
    let cfg = SystemConfig {
        users: 20_000,
        ..small_config()
    };
    let active = draw_activity(&cfg, &mut rng(5, 1)).iter().filter(|&&a| a).count();
    let rate = active as f64 / cfg.users as f64;
    assert!((rate - cfg.epsilon).abs() < 0.015, "{rate}");
}

#[test]
fn pathloss_perturbation_bounds_and_mean() {
    let cfg = SystemConfig::desk();
    let scenario = build_scenario::<f64, _>(&cfg, &mut rng(6, 0)).unwrap();
    let spec = PerturbationSpec {
        pathloss_error_db: 3.0,
        noise_error_std_dbm: 0.0,
    };
    let known = perturb_knowledge(&scenario, &spec, &mut rng(6, 6)).unwrap();
    let shifts: Vec<f64> = known
        .beta
        .as_slice()
        .iter()
        .zip(scenario.beta.as_slice())
        .map(|(p, t)| 10.0 * (p / t).log10())
        .collect();
    assert!(shifts.iter().all(|&s| (-1e-9..=3.0 + 1e-9).contains(&s)));
    let mean = shifts.iter().sum::<f64>() / shifts.len() as f64;
    assert!((mean - 1.5).abs() < 0.3, "{mean}");
    for (p, t) in known
        .effective_beta
        .as_slice()
        .iter()
        .zip(scenario.effective_beta.as_slice())
    {
        assert!((10.0 * (p / t).log10()) <= 3.0 + 1e-9);
    }
    assert_eq!(known.assumed_noise_power, 1.0);
    assert_eq!(known.noise_power, scenario.noise_power);
    assert_eq!(known.distances, scenario.distances);
}

#[test]
fn noise_perturbation_is_log_normal() {
    let cfg = small_config();
    let scenario = build_scenario::<f64, _>(&cfg, &mut rng(7, 0)).unwrap();
    let spec = PerturbationSpec {
        pathloss_error_db: 0.0,
        noise_error_std_dbm: 2.0,
    };
    let draws: Vec<f64> = (0..4000)
        .map(|t| {
            let known = perturb_knowledge(&scenario, &spec, &mut rng(t, 6)).unwrap();
            assert_eq!(known.beta, scenario.beta);
            10.0 * known.assumed_noise_power.log10()
        })
        .collect();
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
    assert!(mean.abs() < 0.1, "{mean}");
    assert!((var.sqrt() - 2.0).abs() < 0.1, "{}", var.sqrt());
}

#[test]
fn negative_perturbation_rejected() {
    let cfg = small_config();
    let scenario = build_scenario::<f64, _>(&cfg, &mut rng(8, 0)).unwrap();
    let spec = PerturbationSpec {
        pathloss_error_db: -1.0,
        noise_error_std_dbm: 0.0,
    };
    assert!(perturb_knowledge(&scenario, &spec, &mut rng(8, 6)).is_err());
}

#[test]
fn weak_users_hit_the_power_cap() {
    let cfg = SystemConfig {
        area_km: 20.0,
        ..SystemConfig::desk()
    };
    let s = build_scenario::<f64, _>(&cfg, &mut rng(11, 0)).unwrap();
    let cap = cfg.max_tx_power_w();
    for n in 0..cfg.users {
        let best = s.effective_beta.user_column(n).fold(0.0, f64::max);
        assert!(s.tx_power[n] <= cap * (1.0 + 1e-12));
        if s.tx_power[n] < cap {
            assert!((10.0 * best.log10() - cfg.snr_target_db).abs() < 1e-9);
        } else {
            assert!(10.0 * best.log10() <= cfg.snr_target_db + 1e-9);
        }
    }
}

#[test]
fn mismatched_dimensions_rejected() {
    let cfg = small_config();
    let inst = instance(&cfg, 12);
    let other = SystemConfig {
        pilot_len: 7,
        ..cfg.clone()
    };
    let pilots = generate_pilots(&other, &mut rng(12, 3));
    assert!(synthesize(&inst.scenario, &inst.channels, &pilots, &cfg, &mut rng(12, 4)).is_err());
    let bad = ChannelRealization {
        g: LinkVectors::zeros(cfg.aps, cfg.users, cfg.antennas + 1),
        ..inst.channels.clone()
    };
    assert!(synthesize(&inst.scenario, &bad, &inst.pilots, &cfg, &mut rng(12, 4)).is_err());
}
