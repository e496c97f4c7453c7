use async_blockopt::blocknorm::max_norm_distance;
use async_blockopt::certify::{
    check_assumption4_step, check_theorem3, compute_d0, compute_q, count_cycles,
    fixed_point_residual, lipschitz_for, sample_level_set, solve_reference,
    solve_reference_with_step, RateData,
};
use async_blockopt::engine::{self, init_world, Event, Schedule};
use async_blockopt::netflow::{self, RegularizationChoice};
use async_blockopt::problem::{Interval, Problem, Regularization};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn paper_reg(p: &Problem, choice: RegularizationChoice) -> Regularization {
    netflow::regularization_for(p, &choice.diagonal(), None)
        .unwrap()
        .0
}

fn inf_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Direct transcription of the cycle rule, one whole tick at a time.
fn naive_cycles(events: &[Event], agents: usize) -> Vec<u64> {
    let mut ticks: Vec<u64> = events.iter().map(Event::tick).collect();
    ticks.dedup();
    let mut out = Vec::new();
    let mut opened: Option<u64> = None;
    for &t in &ticks {
        let in_window = |k: u64| opened.is_none_or(|t0| k > t0) && k <= t;
        let first: Vec<Option<u64>> = (0..agents)
            .map(|j| {
                events
                    .iter()
                    .filter_map(|e| match *e {
                        Event::Update { tick, agent, .. } if agent == j && in_window(tick) => {
                            Some(tick)
                        }
                        _ => None,
                    })
                    .min()
            })
            .collect();
        if first.iter().any(Option::is_none) {
            continue;
        }
        let all_pairs = (0..agents).all(|j| {
            (0..agents).filter(|&i| i != j).all(|i| {
                events.iter().any(|e| {
                    matches!(*e, Event::Deliver { tick, from, to, tau }
                        if from == j && to == i && tick <= t && tau >= first[j].unwrap())
                })
            })
        });
        if all_pairs {
            out.push(t);
            opened = Some(t);
        }
    }
    out
}

proptest! {
    #[test]
    fn q_is_a_contraction_factor_in_the_stable_range(
        ls in prop::collection::vec(0.1f64..100.0, 1..10),
        frac in prop::collection::vec(0.001f64..0.999, 10),
        g in 0.001f64..0.999,
    ) {
        let alphas: Vec<f64> = ls.iter().zip(&frac).map(|(l, f)| l * f).collect();
        let l_max = ls.iter().cloned().fold(0.0, f64::max);
        let gamma = g * 2.0 / l_max;
        let q = compute_q(gamma, &alphas, &ls).unwrap();
        prop_assert!((0.0..1.0).contains(&q), "q = {}", q);
        let by_hand = alphas
            .iter()
            .chain(&ls)
            .map(|v| (1.0 - gamma * v).abs())
            .fold(0.0, f64::max);
        prop_assert_eq!(q, by_hand);
    }

    #[test]
    fn cycle_counter_agrees_with_naive_rule(
        seed in any::<u64>(),
        p_update in 0.05f64..1.0,
        p_comm in 0.05f64..1.0,
        agents in 1usize..4,
    ) {
        let layout = async_blockopt::problem::BlockLayout::uniform(
            agents, 1, async_blockopt::problem::NormOrder::Finite(2.0), 1.0,
        ).unwrap();
        let cost = async_blockopt::problem::QuadraticCost::zero(layout.clone());
        let p = Problem::with_uniform_box(layout, std::sync::Arc::new(cost), -1.0, 1.0).unwrap();
        let reg = Regularization::new(vec![0.5; agents], 0.5).unwrap();
        let schedule = Schedule::new(p_update, p_comm, engine::DelayModel::Queued { max_latency: 3 }).unwrap();
        let mut w = init_world(p, reg, vec![0.5; agents], seed, schedule).unwrap();
        engine::run(&mut w, 150, 0).unwrap();
        let counted = count_cycles(w.log(), agents).unwrap();
        prop_assert_eq!(&counted.completions, &naive_cycles(w.log(), agents));
        let mut prev = 0;
        for t in 0..=w.tick() {
            let c = counted.at(t);
            prop_assert!(c >= prev);
            prev = c;
        }
    }
}

#[test]
fn synchronous_cycles_complete_every_two_ticks() {
    let p = netflow::paper_problem();
    let reg = paper_reg(&p, RegularizationChoice::A2);
    let mut w = init_world(p, reg, vec![0.0; 8], 0, Schedule::synchronous()).unwrap();
    engine::run(&mut w, 40, 0).unwrap();
    let c = count_cycles(w.log(), 8).unwrap();
    assert_eq!(c.completions, (1..=20).map(|k| 2 * k).collect::<Vec<_>>());
}

#[test]
fn reference_solution_is_a_fixed_point() {
    let p = netflow::paper_problem();
    for choice in RegularizationChoice::ALL {
        let reg = paper_reg(&p, choice);
        let lip = lipschitz_for(&p, reg.alphas()).unwrap();
        let step = 1.0 / lip.max();
        let tol = 1e-12;
        let x = solve_reference(&p, &reg, tol).unwrap();
        let r = fixed_point_residual(&p, &reg, &x, step).unwrap();
        assert!(r <= 10.0 * tol, "{choice}: residual {r}");
    }
}

#[test]
fn reference_solution_does_not_depend_on_step() {
    let p = netflow::paper_problem();
    let reg = paper_reg(&p, RegularizationChoice::A1);
    let lip = lipschitz_for(&p, reg.alphas()).unwrap();
    let a = solve_reference_with_step(&p, &reg, 1.0 / lip.max(), 1e-13, 10_000_000).unwrap();
    let b = solve_reference_with_step(&p, &reg, 0.5 / lip.max(), 1e-13, 10_000_000).unwrap();
    assert!(fixed_point_residual(&p, &reg, &a, 1.0 / lip.max()).unwrap() <= 1e-11);
    assert!(inf_dist(&a, &b) <= 1e-9, "{:e}", inf_dist(&a, &b));
}

#[test]
fn decoupled_instance_matches_closed_form() {
    let c = DMatrix::<f64>::zeros(9, 8);
    let p = netflow::build_problem(
        &c,
        netflow::paper_layout(),
        100.0,
        1.0 / 20.0,
        Interval::new(0.0, 1000.0),
    )
    .unwrap();
    let alphas = RegularizationChoice::A3.diagonal();
    let reg = netflow::regularization_for(&p, &alphas, None).unwrap().0;
    let x = solve_reference(&p, &reg, 1e-13).unwrap();
    for (i, a) in alphas.iter().enumerate() {
        // stationarity of -100 ln(1 + x) + a x² / 2
        let exact = (-1.0 + (1.0 + 400.0 / a).sqrt()) / 2.0;
        let bisected = {
            let (mut lo, mut hi) = (0.0_f64, 1000.0_f64);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if -100.0 / (1.0 + mid) + a * mid < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        assert!((exact - bisected).abs() < 1e-10);
        assert!(
            (x[i] - exact).abs() <= 1e-10 * exact.max(1.0),
            "agent {i}: {} vs {exact}",
            x[i]
        );
    }
}

#[test]
fn larger_regularization_moves_the_solution_further() {
    let p = netflow::paper_problem();
    let unreg = Regularization::unregularized(8, 1.0).unwrap();
    let x0 = solve_reference(&p, &unreg, 1e-12).unwrap();
    assert!(x0.iter().all(|v| *v > 0.0 && *v < netflow::BOX_UPPER));
    let gaps: Vec<f64> = RegularizationChoice::ALL
        .iter()
        .map(|c| {
            let x = solve_reference(&p, &paper_reg(&p, *c), 1e-12).unwrap();
            max_norm_distance(p.layout(), &x, &x0).unwrap()
        })
        .collect();
    assert!(gaps[0] < gaps[1] && gaps[1] < gaps[2], "{gaps:?}");
    assert!((gaps[2] - 0.0848).abs() < 5e-4, "{gaps:?}");
}

#[test]
fn q_values_for_the_published_instance() {
    let p = netflow::paper_problem();
    let c = netflow::build_connection_matrix(&netflow::PAPER_ROUTES, 9).unwrap();
    let lambda = (c.transpose() * &c).symmetric_eigen().eigenvalues.max();
    let mut qs = Vec::new();
    for choice in RegularizationChoice::ALL {
        let alphas = choice.diagonal();
        let ls: Vec<f64> = alphas.iter().map(|a| a + 100.0 + lambda / 10.0).collect();
        let gamma = 1.0 / ls.iter().cloned().fold(0.0, f64::max);
        let by_hand = alphas
            .iter()
            .chain(&ls)
            .map(|v| (1.0 - gamma * v).abs())
            .fold(0.0, f64::max);
        let reg = paper_reg(&p, choice);
        assert!((reg.gamma() - gamma).abs() < 1e-15);
        let rate = RateData::for_problem(&p, &reg, &[vec![0.0; 8]]).unwrap();
        assert!((rate.q - by_hand).abs() < 1e-15, "{choice}");
        qs.push(rate.q);
    }
    assert!(qs[0] >= qs[1] && qs[1] >= qs[2]);
    assert!((qs[1] - 0.9999802458).abs() < 1e-9);
}

#[test]
fn initial_distance_from_origin() {
    let p = netflow::paper_problem();
    let reg = paper_reg(&p, RegularizationChoice::A2);
    let x_hat = solve_reference(&p, &reg, 1e-12).unwrap();
    let oracle = x_hat
        .iter()
        .zip(netflow::PAPER_WEIGHTS)
        .map(|(x, w)| x.abs() / w)
        .fold(0.0, f64::max);
    let views = vec![vec![0.0; 8]; 8];
    let d0 = compute_d0(&views, &x_hat, p.layout()).unwrap();
    assert!((d0 - oracle).abs() < 1e-15);
    let rate = RateData::for_problem(&p, &reg, &views).unwrap();
    assert!((rate.d0 - oracle).abs() < 1e-10);
}

#[test]
fn minimizer_stays_in_every_level_set() {
    let p = netflow::paper_problem();
    for choice in RegularizationChoice::ALL {
        let reg = paper_reg(&p, choice);
        let rate = RateData::for_problem(&p, &reg, &[vec![0.0; 8]]).unwrap();
        for s in [0, 1, 5, 1000, 1_000_000] {
            let y = rate.x_hat_a.clone();
            assert!(check_assumption4_step(&p, &reg, &y, s, &rate, rate.default_tol()).unwrap());
        }
        let far = vec![netflow::BOX_UPPER; 8];
        assert!(check_assumption4_step(&p, &reg, &far, 10_000_000, &rate, 0.0).is_err());
    }
}

#[test]
fn step_from_deep_inside_a_level_set_lands_in_the_next() {
    let p = netflow::paper_problem();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for choice in RegularizationChoice::ALL {
        let reg = paper_reg(&p, choice);
        let rate = RateData::for_problem(&p, &reg, &[vec![0.0; 8]]).unwrap();
        let tol = rate.default_tol();
        for s in 0..6 {
            for _ in 0..500 {
                // pull samples of X(s) halfway back toward the minimizer
                let y: Vec<f64> = sample_level_set(&p, &rate, s, &mut rng)
                    .iter()
                    .zip(&rate.x_hat_a)
                    .map(|(a, b)| 0.5 * (a + b))
                    .collect();
                assert!(check_assumption4_step(&p, &reg, &y, s, &rate, tol).unwrap());
            }
        }
    }
}

#[test]
fn boundary_point_with_opposed_neighbours_escapes_the_next_level_set() {
    let p = netflow::paper_problem();
    let reg = paper_reg(&p, RegularizationChoice::A2);
    let rate = RateData::for_problem(&p, &reg, &[vec![0.0; 8]]).unwrap();
    let r = rate.level_radius(0);
    let x = &rate.x_hat_a;
    let w = netflow::PAPER_WEIGHTS;
    let i = 2;
    let mut y: Vec<f64> = (0..8)
        .map(|j| {
            if j == i {
                x[j] + r * w[j]
            } else {
                x[j] - r * w[j]
            }
        })
        .collect();
    p.clamp(&mut y);
    assert!(!check_assumption4_step(&p, &reg, &y, 0, &rate, rate.default_tol()).unwrap());
    let g = p.grad(&reg, &y).unwrap();
    let escaped = (y[i] - reg.gamma() * g[i] - x[i]).abs() / w[i];
    assert!(escaped > 1.001 * rate.level_radius(1));
}

#[test]
fn certificate_holds_on_a_short_run() {
    let mut w = netflow::paper_instance(RegularizationChoice::A3, 2).unwrap();
    let p = w.problem().clone();
    let reg = w.regularization().clone();
    let trace = engine::run(&mut w, 4000, 100).unwrap();
    let rate = RateData::for_problem(&p, &reg, &trace.snapshots[0].views).unwrap();
    let cert = check_theorem3(&trace, &rate, None).unwrap();
    assert!(cert.passed(), "{} violations", cert.violations);
    assert!(cert.total_cycles > 10);
    assert_eq!(cert.rows.len(), trace.snapshots.len());
    assert!(cert.rows.windows(2).all(|r| r[0].cycles <= r[1].cycles));
}
