use taylor_mlp::attack::{
    distill_attack, finetune_attack, gaussian_corpus, package_accuracy, weights_accuracy,
};
use taylor_mlp::calibration::{observe_all, select_protected_columns};
use taylor_mlp::taylor::transform;
use taylor_mlp::{Initialization, ProtectionPlan, ToyTask, ToyTaskConfig, TrainConfig};

fn task(seed: u64) -> ToyTask<f64> {
    ToyTask::generate(ToyTaskConfig {
        seed,
        sample_count: 600,
        ..ToyTaskConfig::default()
    })
    .unwrap()
}

fn plan(task: &ToyTask<f64>, k: usize) -> ProtectionPlan<f64> {
    let stats = observe_all(task.teacher(), task.train_inputs()).unwrap();
    if k == 0 {
        ProtectionPlan::unprotected(&stats).unwrap()
    } else {
        select_protected_columns(&stats, k).unwrap()
    }
}

fn finetune(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..TrainConfig::finetune_default()
    }
}

#[test]
fn regeneration_is_identical_and_splits_are_disjoint() {
    let a = task(4);
    let b = task(4);
    assert_eq!(a.teacher(), b.teacher());
    assert_eq!(a.train_inputs(), b.train_inputs());
    assert_eq!(a.test_labels(), b.test_labels());
    for x in a.test_inputs() {
        assert!(!a.train_inputs().contains(x));
    }
    assert_eq!(a.train_inputs().len() + a.test_inputs().len(), 600);
}

#[test]
fn reports_are_deterministic() {
    let t = task(1);
    let p = plan(&t, 64);
    let a = finetune_attack(t.teacher(), &p, &t, &finetune(9)).unwrap();
    let b = finetune_attack(t.teacher(), &p, &t, &finetune(9)).unwrap();
    assert_eq!(a.to_record(), b.to_record());

    let pkg = transform(t.teacher(), &p, 8).unwrap();
    let corpus = gaussian_corpus(2, 300, 16);
    let eval = gaussian_corpus(3, 64, 16);
    let cfg = TrainConfig::distill_default();
    let a = distill_attack(&pkg, &p, &corpus, &eval, t.teacher(), &cfg).unwrap();
    let b = distill_attack(&pkg, &p, &corpus, &eval, t.teacher(), &cfg).unwrap();
    assert_eq!(a.to_record(), b.to_record());
}

#[test]
fn zero_epochs_report_the_reinit_baseline() {
    let t = task(2);
    let p = plan(&t, 64);
    let r = finetune_attack(t.teacher(), &p, &t, &TrainConfig { epochs: 0, ..finetune(5) }).unwrap();
    assert_eq!(r.final_task_metric, r.initial_task_metric);
    assert!(r.loss_curve.is_empty());
    assert!(
        (0.5..2.0).contains(&r.weight_recovery_error),
        "recovery error {}",
        r.weight_recovery_error
    );
}

#[test]
fn loss_curve_has_one_finite_entry_per_epoch() {
    let t = task(3);
    let r = finetune_attack(t.teacher(), &plan(&t, 20), &t, &TrainConfig { epochs: 4, ..finetune(1) }).unwrap();
    assert_eq!(r.loss_curve.len(), 4);
    assert!(r.loss_curve.iter().all(|l| l.is_finite()));
    assert!(r.final_task_metric.is_finite() && r.weight_recovery_error.is_finite());
    assert!(!r.diverged);
}

#[test]
fn full_protection_attack_trails_the_package() {
    let t = task(6);
    let p = plan(&t, 64);
    let pkg = transform(t.teacher(), &p, 8).unwrap();
    let attack = finetune_attack(t.teacher(), &p, &t, &finetune(11)).unwrap();
    assert!(attack.final_task_metric < package_accuracy(&pkg, &t).unwrap());
}

#[test]
fn nothing_protected_control_keeps_original_accuracy() {
    let t = task(7);
    let original = weights_accuracy(t.teacher(), &t).unwrap();
    let r = finetune_attack(t.teacher(), &plan(&t, 0), &t, &finetune(12)).unwrap();
    assert!((r.final_task_metric - original).abs() <= 0.02);
}

#[test]
fn protection_never_helps_the_attacker() {
    for seed in 0..5u64 {
        let t = task(20 + seed);
        let control = finetune_attack(t.teacher(), &plan(&t, 0), &t, &finetune(seed)).unwrap();
        for k in [8, 32, 64] {
            let r = finetune_attack(t.teacher(), &plan(&t, k), &t, &finetune(seed)).unwrap();
            assert!(
                r.final_task_metric <= control.final_task_metric,
                "seed {seed} K={k}: {} > control {}",
                r.final_task_metric,
                control.final_task_metric
            );
        }
    }
}

#[test]
fn true_weight_student_matches_teacher_before_training() {
    let t = task(8);
    let p = plan(&t, 64);
    let pkg = transform(t.teacher(), &p, 12).unwrap();
    let cfg = TrainConfig {
        epochs: 0,
        init: Initialization::TrueWeights,
        ..TrainConfig::distill_default()
    };
    let corpus = gaussian_corpus(1, 100, 16);
    let r = distill_attack(&pkg, &p, &corpus, &corpus, t.teacher(), &cfg).unwrap();
    assert!(r.final_task_metric < 1e-8, "KL {}", r.final_task_metric);
    assert_eq!(r.weight_recovery_error, 0.0);
}

#[test]
fn distillation_leaves_withheld_weights_unrecovered() {
    let t = task(9);
    let p = plan(&t, 64);
    let pkg = transform(t.teacher(), &p, 8).unwrap();
    let corpus = gaussian_corpus(4, 1000, 16);
    let eval = gaussian_corpus(5, 128, 16);
    let r = distill_attack(&pkg, &p, &corpus, &eval, t.teacher(), &TrainConfig::distill_default()).unwrap();
    assert!(r.weight_recovery_error >= 0.5);
    assert_eq!(r.loss_curve.len(), 1);
}
