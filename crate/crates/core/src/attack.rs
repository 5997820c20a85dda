//! Reconstruction attacks against a protected block.
//!
//! The attacker holds what a package releases: `V`, the unprotected columns
//! of `W` and `b`, and (under partial protection) `c`. The withheld
//! parameters are reinitialised with centred uniform noise of scale
//! `1/√fan_in` and trained with plain mini-batch gradient descent, either on
//! labelled task data ([`finetune_attack`]) or on the package's own output
//! distribution ([`distill_attack`]). `V` stays frozen.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::activation::ActivationKind;
use crate::bench::{kl_divergence, softmax, PROB_FLOOR};
use crate::calibration::ProtectionPlan;
use crate::error::{Error, Result};
use crate::mlp::{mlp_backward, mlp_forward, MlpWeights};
use crate::scalar::Scalar;
use crate::synthetic::{self, gaussian_vectors, random_weights, uniform_centered, WeightScales};
use crate::taylor::TaylorPackage;

/// Parameters of a seeded classification task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyTaskConfig {
    pub seed: u64,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub class_count: usize,
    pub sample_count: usize,
    /// Fraction of samples used for training; the rest is the test split.
    pub train_fraction: f64,
    pub activation: ActivationKind,
    /// Target standard deviation of the teacher's pre-activations.
    pub z_std: f64,
}

impl Default for ToyTaskConfig {
    fn default() -> Self {
        ToyTaskConfig {
            seed: 0,
            input_dim: 16,
            hidden_dim: 64,
            class_count: 10,
            sample_count: 2000,
            train_fraction: 0.8,
            activation: ActivationKind::Gelu,
            z_std: 0.35,
        }
    }
}

/// Gaussian inputs labelled by the argmax of a seeded teacher block.
///
/// The teacher plays the role of the pre-trained model: it is what the
/// package protects and what the attacker tries to recover.
#[derive(Debug, Clone)]
pub struct ToyTask<T> {
    config: ToyTaskConfig,
    teacher: MlpWeights<T>,
    train_x: Vec<Vec<T>>,
    train_y: Vec<usize>,
    test_x: Vec<Vec<T>>,
    test_y: Vec<usize>,
}

fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl<T: Scalar> ToyTask<T> {
    pub fn generate(config: ToyTaskConfig) -> Result<Self> {
        if config.class_count < 2 {
            return Err(Error::Config("a task needs at least two classes".into()));
        }
        if !(config.train_fraction > 0.0 && config.train_fraction < 1.0) {
            return Err(Error::Config("train fraction must lie in (0, 1)".into()));
        }
        let n_train = (config.sample_count as f64 * config.train_fraction).round() as usize;
        if n_train == 0 || n_train >= config.sample_count {
            return Err(Error::Config("both splits must be non-empty".into()));
        }
        let scales = WeightScales::narrow(config.input_dim, config.hidden_dim, config.z_std);
        let teacher = random_weights(
            config.seed,
            config.input_dim,
            config.hidden_dim,
            config.class_count,
            config.activation,
            scales,
        )?;
        let xs: Vec<Vec<T>> = gaussian_vectors(
            config.seed.wrapping_add(0x5eed),
            config.sample_count,
            config.input_dim,
            1.0,
        );
        let labels = xs
            .iter()
            .map(|x| teacher.predict(x).map(|y| argmax(&y)))
            .collect::<Result<Vec<_>>>()?;
        let (train_x, test_x) = xs.split_at(n_train);
        let (train_y, test_y) = labels.split_at(n_train);
        Ok(ToyTask {
            config,
            teacher,
            train_x: train_x.to_vec(),
            train_y: train_y.to_vec(),
            test_x: test_x.to_vec(),
            test_y: test_y.to_vec(),
        })
    }

    pub fn config(&self) -> &ToyTaskConfig {
        &self.config
    }

    /// The pre-trained block that produced the labels.
    pub fn teacher(&self) -> &MlpWeights<T> {
        &self.teacher
    }

    pub fn train_inputs(&self) -> &[Vec<T>] {
        &self.train_x
    }

    pub fn train_labels(&self) -> &[usize] {
        &self.train_y
    }

    pub fn test_inputs(&self) -> &[Vec<T>] {
        &self.test_x
    }

    pub fn test_labels(&self) -> &[usize] {
        &self.test_y
    }
}

/// Fraction of `xs` whose argmax prediction matches `labels`.
pub fn accuracy<T: Scalar>(
    mut predict: impl FnMut(&[T]) -> Result<Vec<T>>,
    xs: &[Vec<T>],
    labels: &[usize],
) -> Result<f64> {
    Error::check_len("labels", xs.len(), labels.len())?;
    if xs.is_empty() {
        return Err(Error::Config("accuracy over an empty set".into()));
    }
    let mut hits = 0usize;
    for (x, &label) in xs.iter().zip(labels) {
        if argmax(&predict(x)?) == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / xs.len() as f64)
}

/// Test accuracy of a plain block on `task`.
pub fn weights_accuracy<T: Scalar>(weights: &MlpWeights<T>, task: &ToyTask<T>) -> Result<f64> {
    accuracy(|x| weights.predict(x), task.test_inputs(), task.test_labels())
}

/// Test accuracy of a Taylor package on `task`.
pub fn package_accuracy<T: Scalar>(pkg: &TaylorPackage<T>, task: &ToyTask<T>) -> Result<f64> {
    accuracy(|x| pkg.predict(x), task.test_inputs(), task.test_labels())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    Finetune,
    Distill,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Finetune => "finetune",
            AttackKind::Distill => "distill",
        }
    }
}

/// How the attacker fills the withheld parameters before training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Initialization {
    /// Centred uniform noise with scale `1/√fan_in`.
    #[default]
    Random,
    /// The true values; a control that should leave nothing to recover.
    TrueWeights,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Seeds reinitialisation and shuffling.
    pub seed: u64,
    pub init: Initialization,
}

impl TrainConfig {
    /// Learning rate 1e-5, mini-batch 64, 10 epochs.
    pub fn finetune_default() -> Self {
        TrainConfig {
            epochs: 10,
            lr: 1e-5,
            batch_size: 64,
            seed: 0,
            init: Initialization::Random,
        }
    }

    /// Learning rate 1e-5, mini-batch 64, 1 epoch.
    pub fn distill_default() -> Self {
        TrainConfig {
            epochs: 1,
            ..Self::finetune_default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackReport {
    pub kind: AttackKind,
    pub epochs: usize,
    /// Test accuracy (fine-tuning) or mean KL to the teacher in nats (distillation).
    pub final_task_metric: f64,
    /// The same metric right after reinitialisation.
    pub initial_task_metric: f64,
    /// Relative Frobenius distance between recovered and true withheld parameters.
    pub weight_recovery_error: f64,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
    /// Training produced a non-finite loss or parameter; the last finite
    /// state was kept and the remaining epochs repeat its loss.
    pub diverged: bool,
}

impl AttackReport {
    /// One `key=value` per line; floats use their shortest round-trip form.
    pub fn to_record(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "attack_kind={}", self.kind.name());
        let _ = writeln!(s, "epochs={}", self.epochs);
        let _ = writeln!(s, "final_task_metric={:?}", self.final_task_metric);
        let _ = writeln!(s, "initial_task_metric={:?}", self.initial_task_metric);
        let _ = writeln!(s, "weight_recovery_error={:?}", self.weight_recovery_error);
        let curve: Vec<String> = self.loss_curve.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(s, "loss_curve={}", curve.join(","));
        let _ = writeln!(s, "diverged={}", self.diverged);
        s
    }
}

/// Which parameters the attacker has to recover.
#[derive(Debug, Clone)]
struct Withheld {
    cols: Vec<usize>,
    bias_c: bool,
}

impl Withheld {
    fn of(plan_cols: &[usize], d_int: usize) -> Self {
        Withheld {
            cols: plan_cols.to_vec(),
            bias_c: !plan_cols.is_empty() && plan_cols.len() == d_int,
        }
    }
}

fn fill_withheld<T: Scalar, R: Rng>(
    student: &mut MlpWeights<T>,
    withheld: &Withheld,
    truth: Option<&MlpWeights<T>>,
    rng: &mut R,
) {
    let w_scale = 1.0 / (student.d_intermediate() as f64).sqrt();
    let b_scale = 1.0 / (student.d_model() as f64).sqrt();
    let d_out = student.d_out();
    for i in 0..d_out {
        for &j in &withheld.cols {
            student.w_mut()[(i, j)] = match truth {
                Some(t) => t.w()[(i, j)],
                None => uniform_centered(rng, w_scale),
            };
        }
    }
    for &j in &withheld.cols {
        student.b_mut()[j] = match truth {
            Some(t) => t.b()[j],
            None => uniform_centered(rng, b_scale),
        };
    }
    if withheld.bias_c {
        for i in 0..d_out {
            student.c_mut()[i] = match truth {
                Some(t) => t.c()[i],
                None => uniform_centered(rng, w_scale),
            };
        }
    }
}

/// Relative Frobenius distance over the withheld entries; 0 when nothing is withheld.
fn recovery_error<T: Scalar>(truth: &MlpWeights<T>, recovered: &MlpWeights<T>, withheld: &Withheld) -> f64 {
    let mut diff = 0.0;
    let mut norm = 0.0;
    let mut add = |t: T, r: T| {
        let (t, r) = (t.as_f64(), r.as_f64());
        diff += (r - t) * (r - t);
        norm += t * t;
    };
    for i in 0..truth.d_out() {
        for &j in &withheld.cols {
            add(truth.w()[(i, j)], recovered.w()[(i, j)]);
        }
    }
    for &j in &withheld.cols {
        add(truth.b()[j], recovered.b()[j]);
    }
    if withheld.bias_c {
        for i in 0..truth.d_out() {
            add(truth.c()[i], recovered.c()[i]);
        }
    }
    if norm == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (diff / norm).sqrt()
    }
}

/// Per-sample loss and upstream gradient `∂L/∂y`.
trait Objective<T> {
    fn loss_and_grad(&self, sample: usize, y: &[T]) -> (T, Vec<T>);
}

struct CrossEntropy<'a> {
    labels: &'a [usize],
}

impl<T: Scalar> Objective<T> for CrossEntropy<'_> {
    fn loss_and_grad(&self, sample: usize, y: &[T]) -> (T, Vec<T>) {
        let label = self.labels[sample];
        let mut p = softmax(y);
        let loss = -p[label].max(T::lit(PROB_FLOOR)).ln();
        p[label] = p[label] - T::one();
        (loss, p)
    }
}

struct MatchDistribution<T> {
    targets: Vec<Vec<T>>,
}

impl<T: Scalar> Objective<T> for MatchDistribution<T> {
    fn loss_and_grad(&self, sample: usize, y: &[T]) -> (T, Vec<T>) {
        let p = &self.targets[sample];
        let q = softmax(y);
        let loss = kl_divergence(p, &q);
        let grad = q.iter().zip(p).map(|(&qi, &pi)| qi - pi).collect();
        (loss, grad)
    }
}

/// Mini-batch gradient descent on the withheld parameters only.
///
/// Returns the per-epoch mean loss and whether training diverged.
fn train<T: Scalar, R: Rng>(
    student: &mut MlpWeights<T>,
    withheld: &Withheld,
    inputs: &[Vec<T>],
    objective: &impl Objective<T>,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, bool)> {
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if !config.lr.is_finite() || config.lr < 0.0 {
        return Err(Error::Config(format!("invalid learning rate {}", config.lr)));
    }
    let mut curve = Vec::with_capacity(config.epochs);
    if inputs.is_empty() || config.epochs == 0 {
        curve.resize(config.epochs, 0.0);
        return Ok((curve, false));
    }
    let lr = T::lit(config.lr);
    let d_out = student.d_out();
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut diverged = false;

    for _ in 0..config.epochs {
        if diverged {
            let last = curve.last().copied().unwrap_or(f64::NAN);
            curve.push(last);
            continue;
        }
        order.shuffle(rng);
        let snapshot = student.clone();
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut gw = vec![T::zero(); d_out * withheld.cols.len()];
            let mut gb = vec![T::zero(); withheld.cols.len()];
            let mut gc = vec![T::zero(); d_out];
            for &s in batch {
                let trace = mlp_forward(student, &inputs[s])?;
                let (loss, dy) = objective.loss_and_grad(s, &trace.y);
                epoch_loss += loss.as_f64();
                let g = mlp_backward(student, &trace, &dy)?;
                for i in 0..d_out {
                    for (slot, &j) in withheld.cols.iter().enumerate() {
                        let dst = &mut gw[i * withheld.cols.len() + slot];
                        *dst = *dst + g.dw[(i, j)];
                    }
                }
                for (dst, &j) in gb.iter_mut().zip(&withheld.cols) {
                    *dst = *dst + g.db[j];
                }
                if withheld.bias_c {
                    for (dst, &v) in gc.iter_mut().zip(&g.dc) {
                        *dst = *dst + v;
                    }
                }
            }
            let step = lr / T::from_count(batch.len());
            for i in 0..d_out {
                for (slot, &j) in withheld.cols.iter().enumerate() {
                    let w = &mut student.w_mut()[(i, j)];
                    *w = *w - step * gw[i * withheld.cols.len() + slot];
                }
            }
            for (&g, &j) in gb.iter().zip(&withheld.cols) {
                let b = &mut student.b_mut()[j];
                *b = *b - step * g;
            }
            if withheld.bias_c {
                for (c, &g) in student.c_mut().iter_mut().zip(&gc) {
                    *c = *c - step * g;
                }
            }
        }
        let mean = epoch_loss / inputs.len() as f64;
        let finite_params = student.w().is_finite()
            && student.b().iter().all(|v| v.is_finite())
            && student.c().iter().all(|v| v.is_finite());
        if !mean.is_finite() || !finite_params {
            *student = snapshot;
            diverged = true;
            let last = curve.last().copied().unwrap_or(f64::NAN);
            curve.push(last);
        } else {
            curve.push(mean);
        }
    }
    Ok((curve, diverged))
}

/// Reinitialises the protected parameters of `true_weights` and fine-tunes
/// them on the task's training split.
pub fn finetune_attack<T: Scalar>(
    true_weights: &MlpWeights<T>,
    plan: &ProtectionPlan<T>,
    task: &ToyTask<T>,
    config: &TrainConfig,
) -> Result<AttackReport> {
    Error::check_len("plan width", true_weights.d_intermediate(), plan.d_intermediate())?;
    Error::check_len("task input width", true_weights.d_model(), task.config().input_dim)?;
    Error::check_len("task class count", true_weights.d_out(), task.config().class_count)?;

    let withheld = Withheld::of(plan.protected_idx(), true_weights.d_intermediate());
    let mut rng = synthetic::rng(config.seed);
    let mut student = true_weights.clone();
    let truth = (config.init == Initialization::TrueWeights).then_some(true_weights);
    fill_withheld(&mut student, &withheld, truth, &mut rng);

    let initial = weights_accuracy(&student, task)?;
    let objective = CrossEntropy {
        labels: task.train_labels(),
    };
    let (loss_curve, diverged) = train(
        &mut student,
        &withheld,
        task.train_inputs(),
        &objective,
        config,
        &mut rng,
    )?;
    Ok(AttackReport {
        kind: AttackKind::Finetune,
        epochs: config.epochs,
        final_task_metric: weights_accuracy(&student, task)?,
        initial_task_metric: initial,
        weight_recovery_error: recovery_error(true_weights, &student, &withheld),
        loss_curve,
        diverged,
    })
}

/// Student block assembled from what a package releases, with the withheld
/// parameters left at zero.
pub fn student_from_package<T: Scalar>(pkg: &TaylorPackage<T>) -> Result<MlpWeights<T>> {
    let d_int = pkg.d_intermediate();
    let d_out = pkg.d_out();
    let mut w = crate::linalg::Matrix::zeros(d_out, d_int);
    let mut b = vec![T::zero(); d_int];
    for (slot, &j) in pkg.unprotected_idx().iter().enumerate() {
        for i in 0..d_out {
            w[(i, j)] = pkg.residual_w()[(i, slot)];
        }
        b[j] = pkg.residual_b()[slot];
    }
    let c = pkg.c().map_or_else(|| vec![T::zero(); d_out], <[T]>::to_vec);
    MlpWeights::new(pkg.v().clone(), b, w, c, pkg.activation())
}

/// Mean `KL(softmax(teacher) ‖ softmax(student))` over `batch`.
pub fn mean_kl_to_package<T: Scalar>(
    teacher: &TaylorPackage<T>,
    student: &MlpWeights<T>,
    batch: &[Vec<T>],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Config("evaluation batch is empty".into()));
    }
    let mut total = 0.0;
    for x in batch {
        let p = softmax(&teacher.predict(x)?);
        let q = softmax(&student.predict(x)?);
        total += kl_divergence(&p, &q).as_f64();
    }
    Ok(total / batch.len() as f64)
}

/// Trains a student on the package's output distribution over `corpus`.
///
/// The student starts from the package's clear parameters plus reinitialised
/// withheld ones. `true_weights` is used only to score recovery (and, with
/// [`Initialization::TrueWeights`], as the control initialisation).
pub fn distill_attack<T: Scalar>(
    teacher_pkg: &TaylorPackage<T>,
    plan: &ProtectionPlan<T>,
    corpus: &[Vec<T>],
    eval_batch: &[Vec<T>],
    true_weights: &MlpWeights<T>,
    config: &TrainConfig,
) -> Result<AttackReport> {
    if plan.protected_idx() != teacher_pkg.protected_idx() {
        return Err(Error::Config("plan does not match the package's protected columns".into()));
    }
    Error::check_len("true weights width", teacher_pkg.d_intermediate(), true_weights.d_intermediate())?;
    Error::check_len("true weights outputs", teacher_pkg.d_out(), true_weights.d_out())?;

    let withheld = Withheld::of(teacher_pkg.protected_idx(), teacher_pkg.d_intermediate());
    let mut rng = synthetic::rng(config.seed);
    let mut student = student_from_package(teacher_pkg)?;
    let truth = (config.init == Initialization::TrueWeights).then_some(true_weights);
    fill_withheld(&mut student, &withheld, truth, &mut rng);

    let initial = mean_kl_to_package(teacher_pkg, &student, eval_batch)?;
    let targets = corpus
        .iter()
        .map(|x| teacher_pkg.predict(x).map(|y| softmax(&y)))
        .collect::<Result<Vec<_>>>()?;
    let objective = MatchDistribution { targets };
    let (loss_curve, diverged) = train(&mut student, &withheld, corpus, &objective, config, &mut rng)?;
    Ok(AttackReport {
        kind: AttackKind::Distill,
        epochs: config.epochs,
        final_task_metric: mean_kl_to_package(teacher_pkg, &student, eval_batch)?,
        initial_task_metric: initial,
        weight_recovery_error: recovery_error(true_weights, &student, &withheld),
        loss_curve,
        diverged,
    })
}

/// Seeded distillation corpus: `count` standard Gaussian inputs.
pub fn gaussian_corpus<T: Scalar>(seed: u64, count: usize, dim: usize) -> Vec<Vec<T>> {
    gaussian_vectors(seed, count, dim, 1.0)
}
