use autoalign_core::env::{CouplingModel, OpticalStage, Pose};
use autoalign_core::heuristic::*;
use autoalign_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const Z_OPT: f64 = 1580.0;
/// Unreachable success rate so noise-free searches never stop early.
const NEVER: f64 = 1e12;

fn model() -> CouplingModel {
    CouplingModel::default()
}

fn config_at(z_jump: f64) -> HeuristicConfig {
    HeuristicConfig {
        z_blind_jump_um: z_jump,
        ..HeuristicConfig::default()
    }
}

/// Golden-section maximizer of the deterministic on-axis rate.
fn golden_section_peak(lo: f64, hi: f64) -> f64 {
    let m = model();
    let f = |z: f64| m.true_rate(0.0, 0.0, z);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    while b - a > 1e-6 {
        let (c, d) = (b - g * (b - a), a + g * (b - a));
        if f(c) > f(d) {
            b = d
        } else {
            a = c
        }
    }
    0.5 * (a + b)
}

#[test]
fn monotone_approach_has_no_reversals() {
    let mut stage = OpticalStage::noise_free(model(), Pose::new(0.0, 0.0, 0.0)).unwrap();
    let mut s = HeuristicSearch::new(&mut stage, config_at(Z_OPT - 900.0), NEVER).unwrap();
    s.verify_signal().unwrap();
    s.axial_search().unwrap();
    let accepts: Vec<_> = s
        .events()
        .iter()
        .filter(|e| e.phase == Phase::Axial)
        .collect();
    assert_eq!(accepts.len(), 3);
    assert!(accepts.iter().all(|e| e.decision == Decision::Accept));
    assert_eq!(s.reference().unwrap().0.z_um, Z_OPT - 300.0);
    assert_eq!(s.z_step(), 200.0);
}

#[test]
fn overshoot_reverses_once_with_reduced_step() {
    let mut stage = OpticalStage::noise_free(model(), Pose::new(0.0, 0.0, 0.0)).unwrap();
    let mut s = HeuristicSearch::new(&mut stage, config_at(Z_OPT - 60.0), NEVER).unwrap();
    s.verify_signal().unwrap();
    s.axial_search().unwrap();
    let axial: Vec<_> = s
        .events()
        .iter()
        .filter(|e| e.phase == Phase::Axial)
        .collect();
    assert_eq!(axial[0].decision, Decision::Reverse);
    assert_eq!(axial[0].pose.z_um, Z_OPT + 140.0);
    // Next probe goes the other way with a 2/3 step.
    assert!((axial[1].pose.z_um - (Z_OPT - 60.0 - 200.0 * 2.0 / 3.0)).abs() < 1e-9);
}

#[test]
fn noise_free_axial_search_brackets_the_peak() {
    // Long probes push the W resolution far below the step sizes, so what
    // remains is the bracketing itself.
    let peak = golden_section_peak(0.0, 4000.0);
    for start in [Z_OPT - 1100.0, Z_OPT - 430.0, Z_OPT + 250.0, Z_OPT + 1000.0] {
        let cfg = HeuristicConfig {
            probe_integration_s: 120.0,
            ..config_at(start)
        };
        let mut stage = OpticalStage::noise_free(model(), Pose::new(0.0, 0.0, 0.0)).unwrap();
        let mut s = HeuristicSearch::new(&mut stage, cfg, NEVER).unwrap();
        s.verify_signal().unwrap();
        for _ in 0..30 {
            s.axial_search().unwrap();
            if s.z_step() < 20.0 {
                break;
            }
        }
        let z = s.reference().unwrap().0.z_um;
        let final_step = s.z_step() / cfg.step_shrink;
        assert!(
            (z - peak).abs() <= final_step,
            "start {start}: z = {z}, peak {peak}, final step {final_step}"
        );
    }
}

#[test]
fn optimal_centre_keeps_pose_and_shrinks_square() {
    let mut stage = OpticalStage::noise_free(model(), Pose::new(0.0, 0.0, 0.0)).unwrap();
    let mut s = HeuristicSearch::new(&mut stage, config_at(Z_OPT), NEVER).unwrap();
    s.verify_signal().unwrap();
    s.radial_search().unwrap();
    let centre = s.reference().unwrap().0;
    assert_eq!((centre.x_um, centre.y_um), (0.0, 0.0));
    assert!(s.xy_step() < 4.0);
    assert!(s.events().iter().all(|e| e.decision != Decision::Accept));
    let shrinks = s
        .events()
        .iter()
        .filter(|e| e.decision == Decision::Shrink)
        .count();
    assert_eq!(shrinks, 6, "40·(2/3)^k < 4 first at k = 6");
}

#[test]
fn probe_on_the_optimum_wins_the_square() {
    let start = Pose::new(-40.0, -40.0, 0.0);
    let m = model();
    // Oracle: the (+s, +s) corner is the brightest of the five poses.
    let rates: Vec<f64> = [
        (0.0, 0.0),
        (40.0, 40.0),
        (-40.0, 40.0),
        (-40.0, -40.0),
        (40.0, -40.0),
    ]
    .iter()
    .map(|(dx, dy)| m.true_rate(start.x_um + dx, start.y_um + dy, Z_OPT))
    .collect();
    assert!(
        rates[1]
            > rates
                .iter()
                .skip(2)
                .chain([&rates[0]])
                .cloned()
                .fold(0.0, f64::max)
    );

    let mut stage = OpticalStage::noise_free(m, start).unwrap();
    let mut s = HeuristicSearch::new(&mut stage, config_at(Z_OPT), NEVER).unwrap();
    s.verify_signal().unwrap();
    s.radial_search().unwrap();
    let first_accept = s
        .events()
        .iter()
        .find(|e| e.decision == Decision::Accept)
        .unwrap();
    assert_eq!((first_accept.pose.x_um, first_accept.pose.y_um), (0.0, 0.0));
}

#[test]
fn start_at_optimum_converges_at_verification() {
    let mut stage = OpticalStage::new(model(), Pose::new(0.0, 0.0, Z_OPT), 3).unwrap();
    let trace = run_alignment(&mut stage, HeuristicConfig::default(), model().peak_rate()).unwrap();
    assert_eq!(trace.outcome, Outcome::Converged);
    assert_eq!(trace.converged_at_s, Some(120.0));
    assert_eq!(trace.events.len(), 1);
}

#[test]
fn zero_budget_times_out_after_verification() {
    let cfg = HeuristicConfig {
        time_budget_s: 0.0,
        ..HeuristicConfig::default()
    };
    let mut stage = OpticalStage::new(model(), Pose::new(150.0, 100.0, 900.0), 3).unwrap();
    let trace = run_alignment(&mut stage, cfg, model().peak_rate()).unwrap();
    assert_eq!(trace.outcome, Outcome::TimedOut);
    assert_eq!(trace.events.len(), 1);
    assert_eq!(trace.elapsed_s, 120.0);
}

#[test]
fn no_coupling_aborts() {
    let mut stage = OpticalStage::new(model(), Pose::new(5000.0, 0.0, 0.0), 3).unwrap();
    let trace = run_alignment(&mut stage, HeuristicConfig::default(), model().peak_rate()).unwrap();
    assert_eq!(trace.outcome, Outcome::AbortedNoSignal);
    assert_eq!(trace.events[0].decision, Decision::Abort);

    let mut stage = OpticalStage::new(model(), Pose::new(5000.0, 0.0, 0.0), 4).unwrap();
    let mut s =
        HeuristicSearch::new(&mut stage, HeuristicConfig::default(), model().peak_rate()).unwrap();
    assert!(matches!(s.verify_signal(), Err(Error::NoSignal { .. })));
}

#[test]
fn invalid_config_is_rejected() {
    let mut stage = OpticalStage::new(model(), Pose::new(0.0, 0.0, 0.0), 0).unwrap();
    for cfg in [
        HeuristicConfig {
            step_shrink: 1.0,
            ..Default::default()
        },
        HeuristicConfig {
            success_fraction: 0.0,
            ..Default::default()
        },
        HeuristicConfig {
            z_confidence: 0.4,
            ..Default::default()
        },
    ] {
        assert!(HeuristicSearch::new(&mut stage, cfg, 1.0).is_err());
    }
}

fn random_start(rng: &mut ChaCha8Rng) -> Pose {
    let r = 300.0 * rng.random::<f64>().sqrt();
    Pose::from_cylindrical(
        r,
        rng.random::<f64>() * std::f64::consts::TAU,
        Z_OPT + rng.random_range(-1200.0..1200.0),
    )
}

#[test]
fn traces_are_ordered_budgeted_and_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let cfg = HeuristicConfig {
        time_budget_s: 400.0,
        ..Default::default()
    };
    for seed in 0..40 {
        let start = random_start(&mut rng);
        let run = || {
            let mut st = OpticalStage::new(model(), start, seed).unwrap();
            run_alignment(&mut st, cfg, model().peak_rate()).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert!(a.events.windows(2).all(|w| w[1].t_s > w[0].t_s));
        assert!(a.elapsed_s <= cfg.time_budget_s + 120.0);
    }
}

#[test]
fn accepted_positions_rarely_lose_true_rate() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let (mut moves, mut losses) = (0, 0);
    for seed in 0..60 {
        let mut st = OpticalStage::new(m, random_start(&mut rng), seed).unwrap();
        let trace = run_alignment(&mut st, HeuristicConfig::default(), m.peak_rate()).unwrap();
        for w in trace.accepted_poses().windows(2) {
            moves += 1;
            if m.rate_at(&w[1]) < m.rate_at(&w[0]) {
                losses += 1;
            }
        }
    }
    assert!(moves > 300);
    // Each accept is a one-sided test at ≥ 99.5% confidence.
    assert!((losses as f64) < 0.01 * moves as f64, "{losses}/{moves}");
}

#[test]
fn w_is_standard_normal_under_the_null() {
    let m = model();
    let pose = Pose::new(80.0, 0.0, 1700.0);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut w: Vec<f64> = (0..20_000)
        .map(|_| {
            let a = autoalign_core::env::measure(&m, &pose, 10.0, &mut rng).unwrap();
            let b = autoalign_core::env::measure(&m, &pose, 10.0, &mut rng).unwrap();
            w_statistic(&a, &b)
        })
        .collect();
    w.sort_by(f64::total_cmp);
    let n = w.len() as f64;
    let phi = |x: f64| 0.5 * (1.0 + statrs::function::erf::erf(x / 2f64.sqrt()));
    let ks = w
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            (phi(x) - i as f64 / n)
                .abs()
                .max((phi(x) - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks < 0.02, "KS distance {ks}");
}

#[test]
fn trace_csv_has_documented_columns() {
    let mut stage = OpticalStage::new(model(), Pose::new(100.0, 0.0, 800.0), 5).unwrap();
    let trace = run_alignment(&mut stage, HeuristicConfig::default(), model().peak_rate()).unwrap();
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("t_s,r_um,theta_rad,z_um,counts,int_time_s,W,decision,phase")
    );
    assert_eq!(lines.count(), trace.events.len());
}
