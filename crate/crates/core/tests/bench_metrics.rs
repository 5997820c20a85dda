use std::sync::Mutex;

use proptest::prelude::*;
use taylor_mlp::bench::{divergence, kl_divergence, logit_kl, measure_latency, softmax, sweep_orders};
use taylor_mlp::calibration::{observe_all, select_protected_columns};
use taylor_mlp::synthetic::{gaussian_vectors, random_weights, WeightScales};
use taylor_mlp::taylor::transform;
use taylor_mlp::{ActivationKind, BenchResult, MlpWeights, ProtectionPlan};

fn network(d_model: usize, d_int: usize, d_out: usize) -> (MlpWeights<f64>, Vec<Vec<f64>>, ProtectionPlan<f64>) {
    let w = random_weights(31, d_model, d_int, d_out, ActivationKind::Gelu, WeightScales::narrow(d_model, d_int, 0.35))
        .unwrap();
    let xs = gaussian_vectors(32, 64, d_model, 1.0);
    let stats = observe_all(&w, &xs).unwrap();
    let plan = select_protected_columns(&stats, d_int).unwrap();
    (w, xs, plan)
}

// timing tests share the machine with nothing else in this binary
static TIMING: Mutex<()> = Mutex::new(());

#[test]
fn order_zero_costs_about_the_same_as_plain() {
    let _guard = TIMING.lock().unwrap();
    let (w, xs, plan) = network(32, 128, 32);
    let pkg = transform(&w, &plan, 0).unwrap();
    let r = measure_latency(&w, &pkg, &xs, 9).unwrap();
    assert!(r.wall_ratio() <= 1.5, "ratio {}", r.wall_ratio());
    assert!(r.taylor_flops <= r.plain_flops);
}

#[test]
fn wall_ratio_grows_with_order() {
    let _guard = TIMING.lock().unwrap();
    let (w, xs, plan) = network(32, 128, 32);
    let ratios: Vec<f64> = [2, 4, 8]
        .iter()
        .map(|&n| {
            let pkg = transform(&w, &plan, n).unwrap();
            measure_latency(&w, &pkg, &xs, 9).unwrap().wall_ratio()
        })
        .collect();
    assert!(ratios[0] < ratios[1] && ratios[1] < ratios[2], "{ratios:?}");
}

#[test]
fn repeated_work_is_counted_identically() {
    let (w, xs, plan) = network(8, 16, 4);
    let pkg = transform(&w, &plan, 4).unwrap();
    let r = measure_latency(&w, &pkg, &xs, 5).unwrap();
    assert_eq!(r.taylor_work_per_repetition.len(), 5);
    assert!(r.taylor_work_per_repetition.windows(2).all(|p| p[0] == p[1]));
    assert!(measure_latency(&w, &pkg, &xs, 4).is_err());
}

#[test]
fn expansion_point_inputs_have_zero_divergence() {
    let (w, xs, _) = network(8, 16, 4);
    let x = xs[0].clone();
    let stats = observe_all(&w, std::slice::from_ref(&x)).unwrap();
    let plan = select_protected_columns(&stats, 16).unwrap();
    let pkg = transform(&w, &plan, 10).unwrap();
    let (kl, err) = divergence(&w, &pkg, &[x]).unwrap();
    assert!(kl <= 1e-15, "KL {kl}");
    assert!(err <= 1e-14, "err {err}");
}

#[test]
fn sweep_reports_decreasing_divergence() {
    let (w, xs, plan) = network(32, 128, 16);
    let rows = sweep_orders(&w, &plan, &[0, 2, 4, 6, 8], &xs, None).unwrap();
    assert!(rows.windows(2).all(|p| p[1].kl_divergence < p[0].kl_divergence));
    assert!(rows[4].kl_divergence <= 1e-4);
    assert!(rows.iter().all(|r| r.plain_wall.is_none() && r.wall_ratio().is_none()));
    let columns = BenchResult::HEADER.split('\t').count();
    assert!(rows.iter().all(|r| r.to_row().split('\t').count() == columns));
    assert!(sweep_orders(&w, &plan, &[4, 2], &xs, None).is_err());
}

proptest! {
    #[test]
    fn kl_is_nonnegative(p in prop::collection::vec(-30.0f64..30.0, 2..12), shift in -5.0f64..5.0) {
        let q: Vec<f64> = p.iter().enumerate().map(|(i, v)| v + shift * (i as f64).sin()).collect();
        prop_assert!(logit_kl(&p, &q) >= 0.0);
        prop_assert_eq!(logit_kl(&p, &p), 0.0);
    }

    #[test]
    fn kl_matches_direct_formula(a in prop::collection::vec(-4.0f64..4.0, 3..8)) {
        let b: Vec<f64> = a.iter().rev().copied().collect();
        let (p, q) = (softmax(&a), softmax(&b));
        let direct: f64 = p.iter().zip(&q).map(|(p, q)| p * (p / q).ln()).sum();
        prop_assert!((kl_divergence(&p, &q) - direct.max(0.0)).abs() <= 1e-12);
    }
}
