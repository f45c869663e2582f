mod common;

use cfdetect::linalg::LinkMatrix;
use cfdetect::mapdet::{
    eta_gradient, eta_objective, map_objective, map_sweep, run_map, run_map_from, update_eta_map, update_g_link,
    update_g_map, update_gamma_link, update_gamma_map, update_tau_map, update_z_map, MapState,
};
use cfdetect::model::residuals;
use cfdetect::simkit::{PilotMatrix, ReceivedSignals};
use cfdetect::{Cx, PriorHyper, SolverOptions};
use cfdetect_oracle::special::log_bessel_k_quad;
use cfdetect_oracle::{central_diff, golden_section_max, grid_max};
use common::{rel_err, rng, small_instance};

type Map = MapState<f64>;

/// A state part-way through a run, so that no block sits at its
/// initial value.
fn warm_state(seed: u64) -> (common::Instance, Map, PriorHyper) {
    let inst = small_instance(seed);
    let hyper = PriorHyper::default();
    let opts = SolverOptions::default();
    let mut state = Map::initial(&inst.signals, &inst.pilots, &hyper, &mut rng(seed, 5)).unwrap();
    for _ in 0..(seed % 4) {
        map_sweep(&mut state, &inst.signals, &inst.pilots, &hyper, &opts).unwrap();
    }
    (inst, state, hyper)
}

fn objective(state: &Map, inst: &common::Instance, hyper: &PriorHyper) -> f64 {
    map_objective(state, &inst.signals, &inst.pilots, hyper).unwrap()
}

/// Expands `[c - w, c + w]` until both ends fall below the centre value,
/// then runs golden-section search.
fn bracketed_max(f: impl Fn(f64) -> f64, centre: f64, mut width: f64) -> f64 {
    let mid = f(centre);
    while f(centre - width) >= mid || f(centre + width) >= mid {
        width *= 2.0;
        assert!(width < 1e12, "no bracket");
    }
    golden_section_max(f, centre - width, centre + width, 1e-13 * (1.0 + centre.abs())).0
}

/// Maximizer of a concave quadratic in `dim` real variables, recovered
/// exactly from unit-step probes of `f` around zero.
#[allow(clippy::needless_range_loop)]
fn quadratic_argmax(f: impl Fn(&[f64]) -> f64, dim: usize) -> Vec<f64> {
    let unit = |i: usize, s: f64| {
        let mut v = vec![0.0; dim];
        v[i] = s;
        v
    };
    let f0 = f(&vec![0.0; dim]);
    let b: Vec<f64> = (0..dim).map(|i| 0.5 * (f(&unit(i, 1.0)) - f(&unit(i, -1.0)))).collect();
    let mut h = vec![vec![0.0; dim]; dim];
    for i in 0..dim {
        for j in 0..dim {
            let mut both = unit(i, 1.0);
            both[j] += 1.0;
            h[i][j] = f(&both) - f(&unit(i, 1.0)) - f(&unit(j, 1.0)) + f0;
        }
    }
    // Solve H x = -b by Gaussian elimination with partial pivoting.
    let mut a: Vec<Vec<f64>> = h
        .into_iter()
        .zip(&b)
        .map(|(mut row, bi)| {
            row.push(-bi);
            row
        })
        .collect();
    for col in 0..dim {
        let p = (col..dim)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, p);
        for r in col + 1..dim {
            let factor = a[r][col] / a[col][col];
            for c in col..=dim {
                a[r][c] -= factor * a[col][c];
            }
        }
    }
    let mut x = vec![0.0; dim];
    for r in (0..dim).rev() {
        let tail: f64 = (r + 1..dim).map(|c| a[r][c] * x[c]).sum();
        x[r] = (a[r][dim] - tail) / a[r][r];
    }
    x
}

#[test]
fn gamma_updates_match_line_search() {
    for seed in 0..10 {
        let (inst, mut state, hyper) = warm_state(seed);
        for k in 0..inst.cfg.aps {
            for n in 0..inst.cfg.users {
                let probe = state.clone();
                let f = |x: f64| {
                    let mut s = probe.clone();
                    s.gamma[(k, n)] = x;
                    objective(&s, &inst, &hyper)
                };
                let expected = bracketed_max(f, probe.gamma[(k, n)], 1.0);
                update_gamma_link(&mut state, &inst.signals, &inst.pilots, k, n);
                let got = state.gamma[(k, n)];
                assert!(
                    rel_err(got, expected, 1.0) < 1e-6,
                    "seed {seed} link ({k},{n}): {got} vs {expected}"
                );
            }
        }
    }
}

#[test]
fn g_updates_match_quadratic_solve() {
    for seed in 0..10 {
        let (inst, mut state, hyper) = warm_state(seed + 1);
        let m = inst.cfg.antennas;
        for k in 0..inst.cfg.aps {
            for n in 0..inst.cfg.users {
                let probe = state.clone();
                let f = |x: &[f64]| {
                    let mut s = probe.clone();
                    for (i, v) in s.g.get_mut(k, n).iter_mut().enumerate() {
                        *v = Cx::new(x[2 * i], x[2 * i + 1]);
                    }
                    objective(&s, &inst, &hyper)
                };
                let expected = quadratic_argmax(f, 2 * m);
                update_g_link(&mut state, &inst.signals, &inst.pilots, k, n);
                let got: Vec<f64> = state.g.get(k, n).iter().flat_map(|z| [z.re, z.im]).collect();
                let norm = expected.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
                let err = got
                    .iter()
                    .zip(&expected)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(err / norm < 1e-8, "seed {seed} link ({k},{n}): {got:?} vs {expected:?}");
            }
        }
    }
}

#[test]
fn link_updates_compose_into_the_full_pass() {
    let (inst, state, _) = warm_state(3);
    let mut by_link = state.clone();
    let mut full = state.clone();
    for k in 0..inst.cfg.aps {
        for n in 0..inst.cfg.users {
            update_gamma_link(&mut by_link, &inst.signals, &inst.pilots, k, n);
        }
    }
    for k in 0..inst.cfg.aps {
        for n in 0..inst.cfg.users {
            update_g_link(&mut by_link, &inst.signals, &inst.pilots, k, n);
        }
    }
    update_gamma_map(&mut full, &inst.signals, &inst.pilots);
    update_g_map(&mut full, &inst.signals, &inst.pilots);
    for (a, b) in by_link.gamma.as_slice().iter().zip(full.gamma.as_slice()) {
        assert!(rel_err(*a, *b, 1e-3) < 1e-10);
    }
    for (a, b) in by_link.g.as_slice().iter().zip(full.g.as_slice()) {
        assert!((a - b).norm() < 1e-10 * (1.0 + b.norm()));
    }
}

#[test]
fn z_and_tau_updates_match_line_search() {
    for seed in 0..10 {
        let (inst, mut state, hyper) = warm_state(seed + 2);
        update_gamma_map(&mut state, &inst.signals, &inst.pilots);
        let probe = state.clone();
        update_z_map(&mut state, &hyper);
        for n in 0..inst.cfg.users {
            let f = |u: f64| {
                let mut s = probe.clone();
                s.z[n] = u.exp();
                objective(&s, &inst, &hyper)
            };
            let expected = grid_max(f, -60.0, 60.0, 2401, 1e-12).0.exp();
            assert!(
                rel_err(state.z[n], expected, 0.0) < 1e-6,
                "seed {seed} user {n}: {} vs {expected}",
                state.z[n]
            );
        }

        let probe = state.clone();
        update_tau_map(&mut state, &inst.signals, &inst.pilots, &hyper).unwrap();
        let f = |u: f64| {
            let mut s = probe.clone();
            s.tau = u.exp();
            objective(&s, &inst, &hyper)
        };
        let expected = grid_max(f, -40.0, 40.0, 1601, 1e-12).0.exp();
        assert!(
            rel_err(state.tau, expected, 0.0) < 1e-6,
            "seed {seed}: {} vs {expected}",
            state.tau
        );
    }
}

#[test]
fn eta_gradient_matches_finite_differences() {
    let hyper = PriorHyper::default();
    let others = PriorHyper {
        gh: cfdetect::GhHyper::new(0.5, 2.0, -1.5).unwrap(),
        kappa1: 2.0,
        kappa2: 0.3,
        ..PriorHyper::default()
    };
    for h in [hyper, others] {
        for eta in [1e-9, 1e-6, 1e-3, 0.1, 1.0, 7.5] {
            for z in [1e-4, 0.2, 3.0, 40.0] {
                let analytic = eta_gradient(eta, z, &h).unwrap();
                let step = 1e-4 * eta;
                let numeric = central_diff(|e| eta_objective(e, z, &h).unwrap(), eta, step);
                let scale = analytic.abs().max(numeric.abs()).max(1e-300);
                assert!(
                    (analytic - numeric).abs() / scale < 1e-5,
                    "eta {eta} z {z}: {analytic} vs {numeric}"
                );
            }
        }
    }
}

#[test]
fn eta_update_never_lowers_objective() {
    for seed in 0..10 {
        let (inst, mut state, hyper) = warm_state(seed);
        let before = objective(&state, &inst, &hyper);
        update_eta_map(&mut state, &hyper, &SolverOptions::default()).unwrap();
        let after = objective(&state, &inst, &hyper);
        assert!(
            after >= before - 1e-9 * before.abs(),
            "seed {seed}: {before} -> {after}"
        );
    }
}

/// The log joint written out directly, with the Bessel factor taken from
/// quadrature.
fn reference_objective(
    state: &Map,
    signals: &ReceivedSignals<f64>,
    pilots: &PilotMatrix<f64>,
    hyper: &PriorHyper,
) -> f64 {
    let (k_aps, n_users, l, m) = (signals.aps(), pilots.users(), pilots.len(), signals.antennas());
    let mut misfit = 0.0;
    for k in 0..k_aps {
        for row in 0..l {
            for col in 0..m {
                let mut v = signals.y[k][(row, col)];
                for n in 0..n_users {
                    v -= pilots.column(n)[row] * state.g.get(k, n)[col] * state.gamma[(k, n)];
                }
                misfit += v.norm_sqr();
            }
        }
    }
    let (eta0, psi0, lambda0) = (hyper.gh.eta0, hyper.gh.psi0, hyper.gh.lambda0);
    let _ = eta0;
    let tau = state.tau;
    let mut total = (k_aps * l * m) as f64 * tau.ln() - tau * misfit + (hyper.c - 1.0) * tau.ln() - hyper.d * tau;
    for n in 0..n_users {
        let (z, eta) = (state.z[n], state.eta0[n]);
        for k in 0..k_aps {
            let gam = state.gamma[(k, n)];
            let gsq: f64 = state.g.get(k, n).iter().map(|c| c.norm_sqr()).sum();
            total += -0.5 * z.ln() - gam * gam / (2.0 * z) - gsq;
        }
        let log_bessel = log_bessel_k_quad(lambda0, (eta * psi0).sqrt());
        total += 0.5 * lambda0 * (eta / psi0).ln() - (2.0f64.ln() + log_bessel) + (lambda0 - 1.0) * z.ln()
            - 0.5 * (eta * z + psi0 / z);
        total += (hyper.kappa1 - 1.0) * eta.ln() - hyper.kappa2 * eta;
    }
    total
}

#[test]
fn objective_matches_reference() {
    for seed in 0..8 {
        let (inst, state, hyper) = warm_state(seed);
        let got = objective(&state, &inst, &hyper);
        let expected = reference_objective(&state, &inst.signals, &inst.pilots, &hyper);
        assert!(rel_err(got, expected, 1.0) < 1e-10, "seed {seed}: {got} vs {expected}");
    }
}

#[test]
fn sweeps_ascend() {
    let opts = SolverOptions::default();
    for seed in 0..10 {
        let (inst, mut state, hyper) = warm_state(seed);
        let mut last = objective(&state, &inst, &hyper);
        for _ in 0..30 {
            map_sweep(&mut state, &inst.signals, &inst.pilots, &hyper, &opts).unwrap();
            let now = objective(&state, &inst, &hyper);
            assert!(now >= last - 1e-9 * last.abs(), "seed {seed}: {last} -> {now}");
            last = now;
        }
    }
}

fn permute_links(m: &LinkMatrix<f64>, perm: &[usize]) -> LinkMatrix<f64> {
    LinkMatrix::from_fn(m.aps(), m.users(), |k, n| m[(k, perm[n])])
}

fn permute_state(state: &Map, perm: &[usize]) -> Map {
    let mut out = state.clone();
    out.gamma = permute_links(&state.gamma, perm);
    for k in 0..state.gamma.aps() {
        for (n, &p) in perm.iter().enumerate() {
            out.g.get_mut(k, n).copy_from_slice(state.g.get(k, p));
        }
    }
    out.z = perm.iter().map(|&p| state.z[p]).collect();
    out.eta0 = perm.iter().map(|&p| state.eta0[p]).collect();
    out
}

const PERM: [usize; 8] = [3, 0, 6, 1, 7, 2, 5, 4];

/// With orthogonal pilots the users never interact inside a sweep, so the
/// visiting order is irrelevant and relabelling is exact.
#[test]
fn relabelling_users_with_orthogonal_pilots() {
    let (signals, pilots) = common::orthogonal_problem(3, 8, &[1, 4, 6], 0.05, 31);
    let hyper = PriorHyper::default();
    let opts = SolverOptions::default();
    let start = Map::initial(&signals, &pilots, &hyper, &mut rng(31, 5)).unwrap();
    let base = run_map_from(start.clone(), &signals, &pilots, &opts, &hyper).unwrap();
    let moved = run_map_from(
        permute_state(&start, &PERM),
        &signals,
        &pilots.permuted(&PERM),
        &opts,
        &hyper,
    )
    .unwrap();
    assert_eq!(base.iterations, moved.iterations);
    for (n, &p) in PERM.iter().enumerate() {
        assert!(rel_err(moved.scores[n], base.scores[p], 1e-300) < 1e-9, "user {p}");
    }
}

/// For general pilots the sweep order matters along the way, but a fixed
/// point of the relabelled problem is the relabelled fixed point.
#[test]
fn relabelled_fixed_point_stays_fixed() {
    let opts = SolverOptions {
        max_outer_iters: 5000,
        rel_tol: 1e-12,
        ..SolverOptions::default()
    };
    let mut checked = 0;
    for seed in 0..5 {
        let inst = small_instance(seed);
        let hyper = PriorHyper::default();
        let base = run_map(&inst.signals, &inst.pilots, &opts, &hyper, &mut rng(seed, 5)).unwrap();
        if !base.converged {
            continue;
        }
        checked += 1;
        let again = run_map_from(
            permute_state(&base.state, &PERM),
            &inst.signals,
            &inst.pilots.permuted(&PERM),
            &SolverOptions {
                max_outer_iters: 3,
                ..opts
            },
            &hyper,
        )
        .unwrap();
        let top = base.scores.iter().cloned().fold(0.0, f64::max);
        for (n, &p) in PERM.iter().enumerate() {
            assert!(
                rel_err(again.scores[n], base.scores[p], 1e-6 * top) < 1e-6,
                "seed {seed} user {p}"
            );
        }
    }
    assert!(checked >= 3, "only {checked} runs converged");
}

fn silent_signals(inst: &common::Instance) -> ReceivedSignals<f64> {
    let mut y = inst.signals.clone();
    for m in &mut y.y {
        for v in m.as_mut_slice() {
            *v = Cx::new(0.0, 0.0);
        }
    }
    y
}

#[test]
fn silent_input_shrinks_every_score() {
    let inst = small_instance(21);
    let signals = silent_signals(&inst);
    let hyper = PriorHyper::default();
    let out = run_map(
        &signals,
        &inst.pilots,
        &SolverOptions::default(),
        &hyper,
        &mut rng(21, 5),
    )
    .unwrap();
    assert!(out.state.is_finite());
    assert!(out.state.gamma.as_slice().iter().all(|&g| g == 0.0));
    assert!(out.scores.iter().all(|&z| z < 1e-6), "{:?}", out.scores);
}

#[test]
fn lone_active_user_stands_out() {
    let active = 2;
    let (signals, pilots) = common::orthogonal_problem(4, 16, &[active], 1e-6, 77);
    let out = run_map(
        &signals,
        &pilots,
        &SolverOptions::default(),
        &PriorHyper::default(),
        &mut rng(3, 5),
    )
    .unwrap();
    let others = out
        .scores
        .iter()
        .enumerate()
        .filter(|&(n, _)| n != active)
        .map(|(_, &s)| s)
        .fold(0.0, f64::max);
    assert!(out.scores[active] >= 10.0 * others, "{:?}", out.scores);
}

#[test]
fn residuals_of_the_truth_are_the_noise() {
    let inst = small_instance(5);
    let coef = LinkMatrix::from_fn(inst.cfg.aps, inst.cfg.users, |k, n| {
        if inst.activity()[n] {
            inst.scenario.effective_beta[(k, n)].sqrt()
        } else {
            0.0
        }
    });
    let r = residuals(&inst.signals, &inst.pilots, &coef, &inst.channels.g);
    let energy: f64 = r.iter().map(|m| m.frob_norm_sqr()).sum();
    let expected = (inst.cfg.aps * inst.cfg.pilot_len * inst.cfg.antennas) as f64;
    assert!(energy < 3.0 * expected && energy > expected / 3.0);
}
