//! Latency and output-divergence measurements across expansion orders.
//!
//! Wall-clock numbers are per single-vector forward pass, taken as the
//! median over repetitions after a warmup pass. They are only comparable
//! within one run on one machine; the FLOP counts are exact and portable.

use std::hint::black_box;
use std::time::Instant;

use crate::calibration::ProtectionPlan;
use crate::error::{Error, Result};
use crate::flops::{plain_flops, taylor_flops};
use crate::mlp::MlpWeights;
use crate::scalar::Scalar;
use crate::taylor::{transform, TaylorPackage, TaylorScratch};

/// Probability floor used inside the KL logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `KL(p ‖ q)` in nats with both probabilities floored at [`PROB_FLOOR`].
pub fn kl_divergence<T: Scalar>(p: &[T], q: &[T]) -> T {
    let floor = T::lit(PROB_FLOOR);
    let kl = p
        .iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            let pf = pi.max(floor);
            let qf = qi.max(floor);
            pi * (pf.ln() - qf.ln())
        })
        .fold(T::zero(), |a, b| a + b);
    kl.max(T::zero())
}

/// `KL(softmax(reference) ‖ softmax(candidate))`.
pub fn logit_kl<T: Scalar>(reference: &[T], candidate: &[T]) -> T {
    kl_divergence(&softmax(reference), &softmax(candidate))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyResult {
    pub plain_wall: f64,
    pub taylor_wall: f64,
    pub plain_flops: u64,
    pub taylor_flops: u64,
    pub repetitions: usize,
    /// MACs executed by the Taylor path in each repetition.
    pub taylor_work_per_repetition: Vec<u64>,
}

impl LatencyResult {
    pub fn wall_ratio(&self) -> f64 {
        self.taylor_wall / self.plain_wall
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Median seconds per forward pass for the plain and Taylor paths.
///
/// Each repetition runs the whole batch through both paths back to back, on
/// the calling thread.
pub fn measure_latency<T: Scalar>(
    weights: &MlpWeights<T>,
    pkg: &TaylorPackage<T>,
    batch: &[Vec<T>],
    repetitions: usize,
) -> Result<LatencyResult> {
    if batch.is_empty() {
        return Err(Error::Config("latency batch is empty".into()));
    }
    if repetitions < 5 {
        return Err(Error::Config(format!(
            "at least 5 repetitions required, got {repetitions}"
        )));
    }
    Error::check_len("package output width", weights.d_out(), pkg.d_out())?;
    Error::check_len("package input width", weights.d_model(), pkg.d_model())?;
    for x in batch {
        Error::check_len("latency batch vector", weights.d_model(), x.len())?;
    }

    let mut hidden = vec![T::zero(); weights.d_intermediate()];
    let mut y = vec![T::zero(); weights.d_out()];
    let mut scratch = TaylorScratch::new(pkg);

    let run_plain = |hidden: &mut [T], y: &mut [T]| -> Result<f64> {
        let start = Instant::now();
        for x in batch {
            weights.predict_into(black_box(x), hidden, y)?;
            black_box(&*y);
        }
        Ok(start.elapsed().as_secs_f64())
    };
    let run_taylor = |scratch: &mut TaylorScratch<T>, y: &mut [T]| -> Result<f64> {
        let start = Instant::now();
        for x in batch {
            pkg.predict_into(black_box(x), scratch, y)?;
            black_box(&*y);
        }
        Ok(start.elapsed().as_secs_f64())
    };

    // warmup
    run_plain(&mut hidden, &mut y)?;
    run_taylor(&mut scratch, &mut y)?;

    let per = batch.len() as f64;
    let t_flops = taylor_flops(pkg).total();
    let mut plain = Vec::with_capacity(repetitions);
    let mut taylor = Vec::with_capacity(repetitions);
    let mut work = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        plain.push(run_plain(&mut hidden, &mut y)? / per);
        taylor.push(run_taylor(&mut scratch, &mut y)? / per);
        work.push(t_flops * batch.len() as u64);
    }

    Ok(LatencyResult {
        plain_wall: median(plain),
        taylor_wall: median(taylor),
        plain_flops: plain_flops(weights).total(),
        taylor_flops: t_flops,
        repetitions,
        taylor_work_per_repetition: work,
    })
}

/// One row of an order sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub order: usize,
    pub protected: usize,
    pub plain_flops: u64,
    pub taylor_flops: u64,
    /// Seconds per forward; `None` when timing was not requested.
    pub plain_wall: Option<f64>,
    pub taylor_wall: Option<f64>,
    /// Batch mean of `KL(softmax(plain) ‖ softmax(taylor))`, nats.
    pub kl_divergence: f64,
    pub max_abs_err: f64,
}

impl BenchResult {
    pub const HEADER: &'static str =
        "order\tprotected\tplain_flops\ttaylor_flops\tflop_ratio\tplain_wall_s\ttaylor_wall_s\twall_ratio\tkl_nats\tmax_abs_err";

    pub fn flop_ratio(&self) -> f64 {
        self.taylor_flops as f64 / self.plain_flops as f64
    }

    pub fn wall_ratio(&self) -> Option<f64> {
        Some(self.taylor_wall? / self.plain_wall?)
    }

    /// Tab-separated row matching [`HEADER`](Self::HEADER).
    pub fn to_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4e}"));
        format!(
            "{}\t{}\t{}\t{}\t{:.4}\t{}\t{}\t{}\t{:.6e}\t{:.6e}",
            self.order,
            self.protected,
            self.plain_flops,
            self.taylor_flops,
            self.flop_ratio(),
            opt(self.plain_wall),
            opt(self.taylor_wall),
            self.wall_ratio().map_or_else(|| "-".to_string(), |r| format!("{r:.3}")),
            self.kl_divergence,
            self.max_abs_err,
        )
    }
}

fn check_orders(orders: &[usize]) -> Result<()> {
    if orders.is_empty() {
        return Err(Error::Config("order list is empty".into()));
    }
    if orders.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("orders must be strictly ascending".into()));
    }
    Ok(())
}

/// Mean KL and max absolute output error of `pkg` against `weights` over `batch`.
pub fn divergence<T: Scalar>(
    weights: &MlpWeights<T>,
    pkg: &TaylorPackage<T>,
    batch: &[Vec<T>],
) -> Result<(f64, f64)> {
    if batch.is_empty() {
        return Err(Error::Config("evaluation batch is empty".into()));
    }
    let mut kl = 0.0;
    let mut max_err = 0.0f64;
    for x in batch {
        let plain = weights.predict(x)?;
        let taylor = pkg.predict(x)?;
        kl += logit_kl(&plain, &taylor).as_f64();
        for (a, b) in plain.iter().zip(&taylor) {
            max_err = max_err.max((*a - *b).abs().as_f64());
        }
    }
    Ok((kl / batch.len() as f64, max_err))
}

/// KL and max error for each order, no timing.
pub fn divergence_curve<T: Scalar>(
    weights: &MlpWeights<T>,
    plan: &ProtectionPlan<T>,
    orders: &[usize],
    eval_batch: &[Vec<T>],
) -> Result<Vec<BenchResult>> {
    sweep_orders(weights, plan, orders, eval_batch, None)
}

/// Full sweep: divergence per order plus, if `repetitions` is given, latency.
pub fn sweep_orders<T: Scalar>(
    weights: &MlpWeights<T>,
    plan: &ProtectionPlan<T>,
    orders: &[usize],
    eval_batch: &[Vec<T>],
    repetitions: Option<usize>,
) -> Result<Vec<BenchResult>> {
    check_orders(orders)?;
    orders
        .iter()
        .map(|&order| {
            let pkg = transform(weights, plan, order)?;
            let (kl, max_err) = divergence(weights, &pkg, eval_batch)?;
            let latency = repetitions
                .map(|r| measure_latency(weights, &pkg, eval_batch, r))
                .transpose()?;
            Ok(BenchResult {
                order,
                protected: pkg.k(),
                plain_flops: plain_flops(weights).total(),
                taylor_flops: taylor_flops(&pkg).total(),
                plain_wall: latency.as_ref().map(|l| l.plain_wall),
                taylor_wall: latency.as_ref().map(|l| l.taylor_wall),
                kl_divergence: kl,
                max_abs_err: max_err,
            })
        })
        .collect()
}
