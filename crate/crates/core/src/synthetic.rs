//! Seeded generators for weights and input streams.
//!
//! Everything is drawn in `f64` from a ChaCha stream and then cast, so the
//! same seed produces the same values for every scalar type.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::activation::ActivationKind;
use crate::error::Result;
use crate::linalg::Matrix;
use crate::mlp::MlpWeights;
use crate::scalar::Scalar;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard deviations of the Gaussian initialisation of each parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightScales {
    pub v: f64,
    pub b: f64,
    pub w: f64,
    pub c: f64,
}

impl WeightScales {
    /// Scales for inputs with unit variance that keep each pre-activation
    /// within roughly ±`z_std` standard deviations, which keeps the
    /// Taylor expansion well inside its accurate range.
    pub fn narrow(d_model: usize, d_intermediate: usize, z_std: f64) -> Self {
        WeightScales {
            v: z_std / (d_model as f64).sqrt(),
            b: 1.0,
            w: 1.0 / (d_intermediate as f64).sqrt(),
            c: 0.1,
        }
    }
}

fn gaussian<T: Scalar, R: Rng>(rng: &mut R, std: f64, n: usize) -> Vec<T> {
    (0..n)
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            T::lit(g * std)
        })
        .collect()
}

pub fn random_weights<T: Scalar>(
    seed: u64,
    d_model: usize,
    d_intermediate: usize,
    d_out: usize,
    activation: ActivationKind,
    scales: WeightScales,
) -> Result<MlpWeights<T>> {
    let mut r = rng(seed);
    let v = Matrix::from_vec(d_intermediate, d_model, gaussian(&mut r, scales.v, d_intermediate * d_model))?;
    let b = gaussian(&mut r, scales.b, d_intermediate);
    let w = Matrix::from_vec(d_out, d_intermediate, gaussian(&mut r, scales.w, d_out * d_intermediate))?;
    let c = gaussian(&mut r, scales.c, d_out);
    MlpWeights::new(v, b, w, c, activation)
}

/// `count` vectors of i.i.d. `N(0, std²)` entries.
pub fn gaussian_vectors<T: Scalar>(seed: u64, count: usize, dim: usize, std: f64) -> Vec<Vec<T>> {
    let mut r = rng(seed);
    (0..count).map(|_| gaussian(&mut r, std, dim)).collect()
}

/// Centered uniform draw on `[-scale, scale]`.
pub fn uniform_centered<T: Scalar, R: Rng>(rng: &mut R, scale: f64) -> T {
    T::lit(rng.gen_range(-scale..=scale))
}
