//! GELU and SiLU with exact high-order derivatives.
//!
//! Both activations have the form `x · g(x)` with `g` the standard normal CDF
//! (GELU) or the logistic sigmoid (SiLU). Leibniz's rule collapses the n-th
//! derivative to two terms, so everything reduces to derivatives of `g`,
//! which are produced by three-term (GELU) or convolution (SiLU) recurrences
//! over "helper" rows `h_0, h_1, …`.
//!
//! GELU: `h_n` is the n-th derivative of the standard normal density
//! `φ(x) = e^{-x²/2}/√(2π)`:
//!
//! ```text
//! h_n = -x·h_{n-1} - (n-1)·h_{n-2},   h_0 = φ(x),  h_1 = -x·φ(x)
//! gelu⁽ⁿ⁾(x) = x·h_{n-1}(x) + n·h_{n-2}(x),   with h_{-1} = Φ
//! ```
//!
//! SiLU: `h_n = σ⁽ⁿ⁾`. Differentiating `σ' = σ·(1-σ)` with Leibniz's rule
//! gives
//!
//! ```text
//! h_n = h_{n-1}·(1 - h_0) - Σ_{k=0}^{n-2} C(n-1, k)·h_k·h_{n-1-k}
//! silu⁽ⁿ⁾(x) = x·h_n(x) + n·h_{n-1}(x)
//! ```
//!
//! The `k = n-1` term carries `(1-σ)` itself rather than `-σ`: the zeroth
//! derivative of `1-σ` is not `-σ`. With the `-σ` variant `σ''(0)` comes out
//! as `-1/4` instead of `0`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest supported derivative order; `16!` is still an exact `f64`.
pub const MAX_ORDER: usize = 16;

const FACTORIALS: [f64; MAX_ORDER + 1] = [
    1.0,
    1.0,
    2.0,
    6.0,
    24.0,
    120.0,
    720.0,
    5040.0,
    40320.0,
    362880.0,
    3628800.0,
    39916800.0,
    479001600.0,
    6227020800.0,
    87178291200.0,
    1307674368000.0,
    20922789888000.0,
];

/// `n!` for `n ≤ MAX_ORDER`.
pub fn factorial(n: usize) -> f64 {
    FACTORIALS[n]
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActivationKind {
    Gelu,
    Silu,
}

impl ActivationKind {
    /// Value without the finiteness check; see [`activation_value`].
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            ActivationKind::Gelu => x * x.normal_cdf(),
            ActivationKind::Silu => x * sigmoid(x),
        }
    }

    /// n-th derivative; `n = 0` is the activation itself.
    pub fn derivative<T: Scalar>(self, n: usize, x: T) -> T {
        match self {
            ActivationKind::Gelu => gelu_derivative(n, x),
            ActivationKind::Silu => silu_derivative(n, x),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Gelu => "gelu",
            ActivationKind::Silu => "silu",
        }
    }

    /// Stable numeric code used by the tensor container.
    pub fn code(self) -> u8 {
        match self {
            ActivationKind::Gelu => 0,
            ActivationKind::Silu => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ActivationKind::Gelu),
            1 => Some(ActivationKind::Silu),
            _ => None,
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gelu" => Ok(ActivationKind::Gelu),
            "silu" | "swish" => Ok(ActivationKind::Silu),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `x·Φ(x)` (GELU) or `x·σ(x)` (SiLU).
pub fn activation_value<T: Scalar>(kind: ActivationKind, x: T) -> Result<T> {
    if !x.is_finite() {
        return Err(Error::Domain("activation input"));
    }
    Ok(kind.apply(x))
}

/// Fills `out[n]` with `h_n(x)` for GELU, `n = 0..out.len()`.
fn gelu_helper_row<T: Scalar>(x: T, out: &mut [T]) {
    if out.is_empty() {
        return;
    }
    out[0] = T::lit(FRAC_1_SQRT_2PI) * (-(x * x) * T::lit(0.5)).exp();
    if out.len() > 1 {
        out[1] = -x * out[0];
    }
    for n in 2..out.len() {
        out[n] = -x * out[n - 1] - T::from_count(n - 1) * out[n - 2];
    }
}

/// Fills `out[n]` with `σ⁽ⁿ⁾(x)`, `n = 0..out.len()`.
fn silu_helper_row<T: Scalar>(x: T, out: &mut [T]) {
    if out.is_empty() {
        return;
    }
    let s = sigmoid(x);
    // σ(-x) is 1 - σ(x) without cancellation for large x.
    let one_minus_s = sigmoid(-x);
    out[0] = s;
    // binomial row C(n-1, ·), advanced by Pascal's rule
    let mut binom: Vec<T> = Vec::with_capacity(out.len());
    for n in 1..out.len() {
        if n == 1 {
            binom.push(T::one());
        } else {
            binom.push(T::one());
            for k in (1..binom.len() - 1).rev() {
                binom[k] = binom[k] + binom[k - 1];
            }
        }
        let mut acc = out[n - 1] * one_minus_s;
        for k in 0..n - 1 {
            acc = acc - binom[k] * out[k] * out[n - 1 - k];
        }
        out[n] = acc;
    }
}

/// n-th derivative of the standard normal density for `n ≥ 0`; `Φ(x)` for `n = -1`.
///
/// # Panics
///
/// If `n < -1`.
pub fn gelu_helper<T: Scalar>(n: i32, x: T) -> T {
    assert!(n >= -1, "gelu helper order must be at least -1, got {n}");
    if n == -1 {
        return x.normal_cdf();
    }
    let mut row = vec![T::zero(); n as usize + 1];
    gelu_helper_row(x, &mut row);
    row[n as usize]
}

pub fn gelu_derivative<T: Scalar>(n: usize, x: T) -> T {
    match n {
        0 => ActivationKind::Gelu.apply(x),
        1 => x * gelu_helper(0, x) + x.normal_cdf(),
        _ => {
            let mut row = vec![T::zero(); n];
            gelu_helper_row(x, &mut row);
            x * row[n - 1] + T::from_count(n) * row[n - 2]
        }
    }
}

/// n-th derivative of the logistic sigmoid.
pub fn silu_helper<T: Scalar>(n: usize, x: T) -> T {
    let mut row = vec![T::zero(); n + 1];
    silu_helper_row(x, &mut row);
    row[n]
}

pub fn silu_derivative<T: Scalar>(n: usize, x: T) -> T {
    if n == 0 {
        return ActivationKind::Silu.apply(x);
    }
    let mut row = vec![T::zero(); n + 1];
    silu_helper_row(x, &mut row);
    x * row[n] + T::from_count(n) * row[n - 1]
}

/// Helper rows and derivatives for one activation over a fixed point set.
///
/// Row `n` holds `h_n` at every point and is built only from lower rows.
/// For GELU an extra row holds `Φ` (the `h_{-1}` term needed by the first
/// derivative).
#[derive(Debug, Clone)]
pub struct DerivativeTable<T> {
    kind: ActivationKind,
    max_order: usize,
    points: Vec<T>,
    helper_rows: Vec<Vec<T>>,
    cdf_row: Option<Vec<T>>,
}

impl<T: Scalar> DerivativeTable<T> {
    pub fn new(kind: ActivationKind, max_order: usize, points: &[T]) -> Self {
        let mut helper_rows = vec![vec![T::zero(); points.len()]; max_order + 1];
        let mut scratch = vec![T::zero(); max_order + 1];
        for (j, &x) in points.iter().enumerate() {
            match kind {
                ActivationKind::Gelu => gelu_helper_row(x, &mut scratch),
                ActivationKind::Silu => silu_helper_row(x, &mut scratch),
            }
            for (row, &h) in helper_rows.iter_mut().zip(&scratch) {
                row[j] = h;
            }
        }
        let cdf_row = match kind {
            ActivationKind::Gelu => Some(points.iter().map(|x| x.normal_cdf()).collect()),
            ActivationKind::Silu => None,
        };
        DerivativeTable {
            kind,
            max_order,
            points: points.to_vec(),
            helper_rows,
            cdf_row,
        }
    }

    pub fn kind(&self) -> ActivationKind {
        self.kind
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    pub fn helper_row(&self, n: usize) -> &[T] {
        &self.helper_rows[n]
    }

    /// n-th derivative of the activation at point `j`, `n ≤ max_order`.
    pub fn derivative(&self, n: usize, j: usize) -> T {
        assert!(n <= self.max_order, "order {n} above table maximum {}", self.max_order);
        let x = self.points[j];
        let h = |m: usize| self.helper_rows[m][j];
        match (self.kind, n) {
            (kind, 0) => kind.apply(x),
            (ActivationKind::Gelu, 1) => {
                let cdf = self.cdf_row.as_ref().expect("gelu table carries Φ")[j];
                x * h(0) + cdf
            }
            (ActivationKind::Gelu, n) => x * h(n - 1) + T::from_count(n) * h(n - 2),
            (ActivationKind::Silu, n) => x * h(n) + T::from_count(n) * h(n - 1),
        }
    }
}
