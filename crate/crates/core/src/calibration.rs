//! Expansion-point estimation and protected-column selection.
//!
//! Pre-activations `z = V·x` are streamed through [`CalibrationStats`], which
//! keeps per-dimension extrema. The expansion point of each dimension is the
//! midpoint of its observed range, which minimises the worst-case deviation
//! `max_x |z_i - z0_i|` dimension by dimension. Columns with the narrowest
//! range are the ones whose Taylor expansion stays most accurate, so those
//! are protected first.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::mlp::MlpWeights;
use crate::scalar::Scalar;

/// Half-width above which a SiLU column is flagged: the sigmoid's Taylor
/// series about a real point converges only within distance π (poles at ±iπ).
pub const SILU_RADIUS_GUARD: f64 = 3.0;

/// Running per-dimension max/min of the pre-activations.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationStats<T> {
    z_max: Vec<T>,
    z_min: Vec<T>,
    count: u64,
}

impl<T: Scalar> CalibrationStats<T> {
    pub fn new(d_intermediate: usize) -> Self {
        CalibrationStats {
            z_max: vec![T::neg_infinity(); d_intermediate],
            z_min: vec![T::infinity(); d_intermediate],
            count: 0,
        }
    }

    /// Rebuilds stats from stored extrema.
    pub fn from_parts(z_max: Vec<T>, z_min: Vec<T>, count: u64) -> Result<Self> {
        Error::check_len("z_min", z_max.len(), z_min.len())?;
        if count > 0 && z_min.iter().zip(&z_max).any(|(lo, hi)| !matches!(lo.partial_cmp(hi), Some(Ordering::Less | Ordering::Equal))) {
            return Err(Error::Config("calibration extrema out of order".into()));
        }
        Ok(CalibrationStats {
            z_max,
            z_min,
            count,
        })
    }

    pub fn dim(&self) -> usize {
        self.z_max.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn z_max(&self) -> &[T] {
        &self.z_max
    }

    pub fn z_min(&self) -> &[T] {
        &self.z_min
    }

    /// Folds one pre-activation vector into the extrema.
    pub fn observe_preactivations(&mut self, z: &[T]) -> Result<()> {
        Error::check_len("calibration pre-activations", self.dim(), z.len())?;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("calibration pre-activations"));
        }
        for ((hi, lo), &v) in self.z_max.iter_mut().zip(self.z_min.iter_mut()).zip(z) {
            *hi = hi.max(v);
            *lo = lo.min(v);
        }
        self.count += 1;
        Ok(())
    }

    /// Folds `V·x` into the extrema.
    pub fn observe(&mut self, weights: &MlpWeights<T>, x: &[T]) -> Result<()> {
        Error::check_len("calibration stats width", weights.d_intermediate(), self.dim())?;
        let z = weights.preactivations(x)?;
        self.observe_preactivations(&z)
    }

    /// Combines two partial reductions; equal to the stats of the concatenated streams.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        Error::check_len("merged stats width", self.dim(), other.dim())?;
        Ok(CalibrationStats {
            z_max: self
                .z_max
                .iter()
                .zip(&other.z_max)
                .map(|(&a, &b)| a.max(b))
                .collect(),
            z_min: self
                .z_min
                .iter()
                .zip(&other.z_min)
                .map(|(&a, &b)| a.min(b))
                .collect(),
            count: self.count + other.count,
        })
    }

    /// `z_max - z_min` per dimension.
    pub fn spread(&self) -> Result<Vec<T>> {
        if self.is_empty() {
            return Err(Error::EmptyStats);
        }
        Ok(self
            .z_max
            .iter()
            .zip(&self.z_min)
            .map(|(&hi, &lo)| hi - lo)
            .collect())
    }
}

/// Stats of `V·x` over a whole stream.
pub fn observe_all<T: Scalar>(
    weights: &MlpWeights<T>,
    xs: &[Vec<T>],
) -> Result<CalibrationStats<T>> {
    let mut stats = CalibrationStats::new(weights.d_intermediate());
    for x in xs {
        stats.observe(weights, x)?;
    }
    Ok(stats)
}

/// Per-dimension midpoint `(z_max + z_min) / 2`.
pub fn estimate_local_embedding<T: Scalar>(stats: &CalibrationStats<T>) -> Result<Vec<T>> {
    if stats.is_empty() {
        return Err(Error::EmptyStats);
    }
    let half = T::lit(0.5);
    Ok(stats
        .z_max
        .iter()
        .zip(&stats.z_min)
        .map(|(&hi, &lo)| (hi + lo) * half)
        .collect())
}

/// Expansion point plus the set of intermediate columns to protect.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtectionPlan<T> {
    z0: Vec<T>,
    protected_idx: Vec<usize>,
    spread: Vec<T>,
}

impl<T: Scalar> ProtectionPlan<T> {
    /// Builds a plan over an explicit column set. `protected_idx` is sorted
    /// and deduplicated; it may be empty (nothing protected).
    pub fn with_columns(z0: Vec<T>, mut protected_idx: Vec<usize>, spread: Vec<T>) -> Result<Self> {
        Error::check_len("plan spread", z0.len(), spread.len())?;
        protected_idx.sort_unstable();
        protected_idx.dedup();
        if let Some(&last) = protected_idx.last() {
            if last >= z0.len() {
                return Err(Error::Config(format!(
                    "protected column {last} out of range for width {}",
                    z0.len()
                )));
            }
        }
        Ok(ProtectionPlan {
            z0,
            protected_idx,
            spread,
        })
    }

    /// Plan over `stats` that protects no column.
    pub fn unprotected(stats: &CalibrationStats<T>) -> Result<Self> {
        Self::with_columns(estimate_local_embedding(stats)?, Vec::new(), stats.spread()?)
    }

    /// Full-width expansion point.
    pub fn z0(&self) -> &[T] {
        &self.z0
    }

    pub fn protected_idx(&self) -> &[usize] {
        &self.protected_idx
    }

    pub fn spread(&self) -> &[T] {
        &self.spread
    }

    pub fn d_intermediate(&self) -> usize {
        self.z0.len()
    }

    pub fn k(&self) -> usize {
        self.protected_idx.len()
    }

    /// Columns not in the protected set, ascending.
    pub fn unprotected_idx(&self) -> Vec<usize> {
        complement(&self.protected_idx, self.z0.len())
    }

    /// Protected columns whose half-spread reaches [`SILU_RADIUS_GUARD`].
    ///
    /// Only meaningful for SiLU; GELU's expansion converges everywhere.
    pub fn wide_columns(&self) -> Vec<usize> {
        let guard = T::lit(SILU_RADIUS_GUARD);
        let half = T::lit(0.5);
        self.protected_idx
            .iter()
            .copied()
            .filter(|&j| self.spread[j] * half >= guard)
            .collect()
    }

    /// [`wide_columns`](Self::wide_columns) if `kind` is SiLU, else empty.
    pub fn radius_warnings(&self, kind: crate::activation::ActivationKind) -> Vec<usize> {
        match kind {
            crate::activation::ActivationKind::Silu => self.wide_columns(),
            crate::activation::ActivationKind::Gelu => Vec::new(),
        }
    }
}

pub(crate) fn complement(sorted: &[usize], n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(n - sorted.len());
    let mut it = sorted.iter().peekable();
    for j in 0..n {
        if it.peek() == Some(&&j) {
            it.next();
        } else {
            out.push(j);
        }
    }
    out
}

/// Protects the `k` columns with the smallest calibration spread.
///
/// Ties are broken by ascending column index.
pub fn select_protected_columns<T: Scalar>(
    stats: &CalibrationStats<T>,
    k: usize,
) -> Result<ProtectionPlan<T>> {
    let d = stats.dim();
    if k == 0 || k > d {
        return Err(Error::Config(format!(
            "protected column count must be in 1..={d}, got {k}"
        )));
    }
    let z0 = estimate_local_embedding(stats)?;
    let spread = stats.spread()?;
    let mut order: Vec<usize> = (0..d).collect();
    // stable sort keeps ascending index among equal spreads
    order.sort_by(|&a, &b| {
        spread[a]
            .partial_cmp(&spread[b])
            .expect("finite spreads")
    });
    let idx = order[..k].to_vec();
    ProtectionPlan::with_columns(z0, idx, spread)
}
