//! Reference implementations shared by the integration tests.
//!
//! Nothing here calls into the recurrences or the forward passes of the
//! library; each oracle is computed a different way.

#![allow(dead_code)]

use taylor_mlp::{ActivationKind, MlpWeights};

/// Ridders' extrapolated central difference of `f` at `x`.
///
/// Returns the estimate and its error bound.
pub fn ridders(f: impl Fn(f64) -> f64, x: f64, h0: f64) -> (f64, f64) {
    const CON: f64 = 1.4;
    const CON2: f64 = CON * CON;
    const NTAB: usize = 12;
    const SAFE: f64 = 2.0;
    let mut a = [[0.0f64; NTAB]; NTAB];
    let mut h = h0;
    a[0][0] = (f(x + h) - f(x - h)) / (2.0 * h);
    let mut best = a[0][0];
    let mut err = f64::MAX;
    for i in 1..NTAB {
        h /= CON;
        a[0][i] = (f(x + h) - f(x - h)) / (2.0 * h);
        let mut fac = CON2;
        for j in 1..=i {
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
            fac *= CON2;
            let errt = (a[j][i] - a[j - 1][i]).abs().max((a[j][i] - a[j - 1][i - 1]).abs());
            if errt <= err {
                err = errt;
                best = a[j][i];
            }
        }
        if (a[i][i] - a[i - 1][i - 1]).abs() >= SAFE * err {
            break;
        }
    }
    (best, err)
}

/// `|a - b| ≤ max(rel·|b|, abs)`.
pub fn close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    (a - b).abs() <= (rel * b.abs()).max(abs)
}

/// GELU written from the error function.
pub fn gelu_ref(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn silu_ref(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn act_ref(kind: ActivationKind, x: f64) -> f64 {
    match kind {
        ActivationKind::Gelu => gelu_ref(x),
        ActivationKind::Silu => silu_ref(x),
    }
}

/// Triple-loop forward pass of `W·Act(V·x + b) + c`.
pub fn brute_forward(w: &MlpWeights<f64>, x: &[f64]) -> Vec<f64> {
    let d_int = w.d_intermediate();
    let mut hidden = vec![0.0; d_int];
    for (j, h) in hidden.iter_mut().enumerate() {
        let mut s = 0.0;
        for (k, xk) in x.iter().enumerate() {
            s += w.v()[(j, k)] * xk;
        }
        *h = act_ref(w.activation(), s + w.b()[j]);
    }
    (0..w.d_out())
        .map(|i| {
            let mut s = w.c()[i];
            for (j, h) in hidden.iter().enumerate() {
                s += w.w()[(i, j)] * h;
            }
            s
        })
        .collect()
}

/// Brute-force `z = V·x` without bias.
pub fn brute_preactivations(w: &MlpWeights<f64>, x: &[f64]) -> Vec<f64> {
    (0..w.d_intermediate())
        .map(|j| x.iter().enumerate().map(|(k, xk)| w.v()[(j, k)] * xk).sum())
        .collect()
}

/// Minimises `Σ_d max_t |z_t[d] - c[d]|` over `c` by a zooming grid search.
///
/// The objective is separable, but the search walks the full 2-D grid so it
/// does not rely on that.
pub fn minimax_grid_2d(points: &[[f64; 2]]) -> [f64; 2] {
    let cost = |c: [f64; 2]| -> f64 {
        (0..2)
            .map(|d| points.iter().map(|p| (p[d] - c[d]).abs()).fold(0.0, f64::max))
            .sum()
    };
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let mut center = [(lo[0] + hi[0]) * 0.25 + lo[0] * 0.5, (lo[1] + hi[1]) * 0.25 + hi[1] * 0.5];
    let mut half = [(hi[0] - lo[0]).max(1.0), (hi[1] - lo[1]).max(1.0)];
    const STEPS: i32 = 10;
    for _ in 0..40 {
        let mut best = (f64::INFINITY, center);
        for a in -STEPS..=STEPS {
            for b in -STEPS..=STEPS {
                let c = [
                    center[0] + half[0] * a as f64 / STEPS as f64,
                    center[1] + half[1] * b as f64 / STEPS as f64,
                ];
                let v = cost(c);
                if v < best.0 {
                    best = (v, c);
                }
            }
        }
        center = best.1;
        half = [half[0] * 0.25, half[1] * 0.25];
    }
    center
}

/// Offsets at which `needle` occurs in `haystack`.
pub fn find_runs(haystack: &[u8], needle: &[u8]) -> Vec<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return Vec::new();
    }
    haystack
        .windows(needle.len())
        .enumerate()
        .filter(|(_, w)| *w == needle)
        .map(|(i, _)| i)
        .collect()
}

pub fn le_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}
