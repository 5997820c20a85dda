//! Taylor-series parameter packages.
//!
//! For a protected column `j` the activation is expanded around the
//! calibrated point `z0_j`:
//!
//! ```text
//! Act(z_j + b_j) ≈ Σ_{n=0}^{N} Act⁽ⁿ⁾(z0_j + b_j)/n! · (z_j - z0_j)ⁿ
//! ```
//!
//! Folding the down-projection row `W_i` into the coefficients gives the
//! latent tensors `Θ_{i,n} = W_i ⊙ Act⁽ⁿ⁾(z0 + b)/n!`, so that
//!
//! ```text
//! y_i = Σ_n ⟨Θ_{i,n}, (z - z0)ⁿ⟩ + ⟨W_i^unprot, Act(z^unprot + b^unprot)⟩ + c_i
//! ```
//!
//! The package keeps `V`, `z0`, `Θ` and the unprotected columns in clear; it
//! holds no copy of `W[:, protected]` or `b[protected]`. When every column is
//! protected the output bias is spread over the order-0 slab (`c_i / K` per
//! entry) so that summing the slab adds `c_i` exactly once.

use crate::activation::{factorial, ActivationKind, DerivativeTable, MAX_ORDER};
use crate::calibration::{complement, ProtectionPlan, SILU_RADIUS_GUARD};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::mlp::MlpWeights;
use crate::scalar::{dot, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct TaylorPackage<T> {
    v: Matrix<T>,
    z0: Vec<T>,
    protected_idx: Vec<usize>,
    unprotected_idx: Vec<usize>,
    /// `[d_out][order + 1][K]`, row-major.
    theta: Vec<T>,
    order: usize,
    residual_w: Matrix<T>,
    residual_b: Vec<T>,
    c: Option<Vec<T>>,
    activation: ActivationKind,
}

/// Intermediates of one Taylor forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorForwardTrace<T> {
    pub x: Vec<T>,
    /// Pre-activations of the protected columns.
    pub z_p: Vec<T>,
    /// `z_p - z0`.
    pub delta: Vec<T>,
    /// `powers[n] = deltaⁿ`, `n = 0..=order`.
    pub powers: Vec<Vec<T>>,
    pub y: Vec<T>,
    /// Some protected `|delta|` exceeds the SiLU convergence guard.
    pub radius_violation: bool,
}

/// Builds the package for `weights` under `plan` with expansion order `order`.
pub fn transform<T: Scalar>(
    weights: &MlpWeights<T>,
    plan: &ProtectionPlan<T>,
    order: usize,
) -> Result<TaylorPackage<T>> {
    if order > MAX_ORDER {
        return Err(Error::Config(format!(
            "expansion order {order} exceeds the supported maximum {MAX_ORDER}"
        )));
    }
    let d_int = weights.d_intermediate();
    Error::check_len("plan width", d_int, plan.d_intermediate())?;

    let protected = plan.protected_idx().to_vec();
    let unprotected = complement(&protected, d_int);
    let k = protected.len();
    let d_out = weights.d_out();
    let b = weights.b();
    let w = weights.w();

    let z0: Vec<T> = protected.iter().map(|&j| plan.z0()[j]).collect();
    let centers: Vec<T> = protected.iter().zip(&z0).map(|(&j, &z)| z + b[j]).collect();
    let table = DerivativeTable::new(weights.activation(), order, &centers);

    // coeff[n][j] = Act⁽ⁿ⁾(z0_j + b_j) / n!
    let coeff: Vec<Vec<T>> = (0..=order)
        .map(|n| {
            let inv = T::lit(factorial(n)).recip();
            (0..k).map(|j| table.derivative(n, j) * inv).collect()
        })
        .collect();

    let absorb_bias = k > 0 && k == d_int;
    let stride = (order + 1) * k;
    let mut theta = vec![T::zero(); d_out * stride];
    for i in 0..d_out {
        let w_row = w.row(i);
        let bias_share = if absorb_bias {
            weights.c()[i] / T::from_count(k)
        } else {
            T::zero()
        };
        let slab = &mut theta[i * stride..(i + 1) * stride];
        for (n, coeff_n) in coeff.iter().enumerate() {
            for (j, (&p, &cf)) in protected.iter().zip(coeff_n).enumerate() {
                let mut t = w_row[p] * cf;
                if n == 0 {
                    t = t + bias_share;
                }
                slab[n * k + j] = t;
            }
        }
    }

    Ok(TaylorPackage {
        v: weights.v().clone(),
        z0,
        residual_w: w.select_columns(&unprotected),
        residual_b: unprotected.iter().map(|&j| b[j]).collect(),
        protected_idx: protected,
        unprotected_idx: unprotected,
        theta,
        order,
        c: (!absorb_bias).then(|| weights.c().to_vec()),
        activation: weights.activation(),
    })
}

impl<T: Scalar> TaylorPackage<T> {
    /// Reassembles a package from stored parts, validating every shape.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        v: Matrix<T>,
        z0: Vec<T>,
        protected_idx: Vec<usize>,
        theta: Vec<T>,
        order: usize,
        residual_w: Matrix<T>,
        residual_b: Vec<T>,
        c: Option<Vec<T>>,
        activation: ActivationKind,
    ) -> Result<Self> {
        if order > MAX_ORDER {
            return Err(Error::Config(format!(
                "expansion order {order} exceeds the supported maximum {MAX_ORDER}"
            )));
        }
        let d_int = v.rows();
        let k = protected_idx.len();
        if protected_idx.windows(2).any(|w| w[0] >= w[1])
            || protected_idx.last().is_some_and(|&j| j >= d_int)
        {
            return Err(Error::Config("protected index set must be sorted, unique and in range".into()));
        }
        Error::check_len("z0", k, z0.len())?;
        let d_out = residual_w.rows();
        Error::check_len("theta", d_out * (order + 1) * k, theta.len())?;
        Error::check_len("residual W columns", d_int - k, residual_w.cols())?;
        Error::check_len("residual b", d_int - k, residual_b.len())?;
        let absorbed = k > 0 && k == d_int;
        match (&c, absorbed) {
            (Some(c), false) => Error::check_len("bias c", d_out, c.len())?,
            (None, true) => {}
            (Some(_), true) => {
                return Err(Error::Config("fully protected package must not carry c".into()))
            }
            (None, false) => {
                return Err(Error::Config("partially protected package requires c".into()))
            }
        }
        let unprotected_idx = complement(&protected_idx, d_int);
        Ok(TaylorPackage {
            v,
            z0,
            protected_idx,
            unprotected_idx,
            theta,
            order,
            residual_w,
            residual_b,
            c,
            activation,
        })
    }

    pub fn d_model(&self) -> usize {
        self.v.cols()
    }

    pub fn d_intermediate(&self) -> usize {
        self.v.rows()
    }

    pub fn d_out(&self) -> usize {
        self.residual_w.rows()
    }

    pub fn k(&self) -> usize {
        self.protected_idx.len()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn activation(&self) -> ActivationKind {
        self.activation
    }

    pub fn v(&self) -> &Matrix<T> {
        &self.v
    }

    /// Expansion point restricted to the protected columns.
    pub fn z0(&self) -> &[T] {
        &self.z0
    }

    pub fn protected_idx(&self) -> &[usize] {
        &self.protected_idx
    }

    pub fn unprotected_idx(&self) -> &[usize] {
        &self.unprotected_idx
    }

    /// Flat `[d_out][order + 1][K]` coefficient tensor.
    pub fn theta(&self) -> &[T] {
        &self.theta
    }

    /// `Θ_{i,n}`, length `K`.
    pub fn theta_slab(&self, i: usize, n: usize) -> &[T] {
        let k = self.k();
        let base = i * (self.order + 1) * k + n * k;
        &self.theta[base..base + k]
    }

    pub fn residual_w(&self) -> &Matrix<T> {
        &self.residual_w
    }

    pub fn residual_b(&self) -> &[T] {
        &self.residual_b
    }

    /// Output bias, present only when some column is unprotected.
    pub fn c(&self) -> Option<&[T]> {
        self.c.as_deref()
    }

    /// Output for pre-activations `z = V·x` (full width).
    pub fn forward_from_preactivations(&self, z: &[T]) -> Result<Vec<T>> {
        Error::check_len("pre-activations", self.d_intermediate(), z.len())?;
        let mut powers = vec![T::zero(); (self.order + 1) * self.k()];
        let mut y = vec![T::zero(); self.d_out()];
        self.evaluate(z, &mut powers, &mut y);
        Ok(y)
    }

    pub fn predict(&self, x: &[T]) -> Result<Vec<T>> {
        let mut scratch = TaylorScratch::new(self);
        let mut y = vec![T::zero(); self.d_out()];
        self.predict_into(x, &mut scratch, &mut y)?;
        Ok(y)
    }

    /// Allocation-free forward pass into `y`.
    pub fn predict_into(&self, x: &[T], scratch: &mut TaylorScratch<T>, y: &mut [T]) -> Result<()> {
        Error::check_len("Taylor input", self.d_model(), x.len())?;
        Error::check_len("Taylor output", self.d_out(), y.len())?;
        scratch.fit(self);
        self.v.matvec_into(x, &mut scratch.z);
        self.evaluate(&scratch.z, &mut scratch.powers, y);
        Ok(())
    }

    pub fn predict_batch(&self, xs: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
        let mut scratch = TaylorScratch::new(self);
        xs.iter()
            .map(|x| {
                let mut y = vec![T::zero(); self.d_out()];
                self.predict_into(x, &mut scratch, &mut y)?;
                Ok(y)
            })
            .collect()
    }

    /// Fills the flat power buffer `[(order+1) × K]` from full-width `z`.
    fn fill_powers(&self, z: &[T], powers: &mut [T]) {
        let k = self.k();
        if k == 0 {
            return;
        }
        let (first, rest) = powers.split_at_mut(k);
        first.fill(T::one());
        if self.order == 0 {
            return;
        }
        let (delta, rest) = rest.split_at_mut(k);
        for ((d, &p), &z0) in delta.iter_mut().zip(&self.protected_idx).zip(&self.z0) {
            *d = z[p] - z0;
        }
        let mut prev: &[T] = delta;
        for chunk in rest.chunks_exact_mut(k) {
            for ((dst, &pv), &d) in chunk.iter_mut().zip(prev).zip(&*delta) {
                *dst = pv * d;
            }
            prev = chunk;
        }
    }

    fn evaluate(&self, z: &[T], powers: &mut [T], y: &mut [T]) {
        self.fill_powers(z, powers);
        let stride = (self.order + 1) * self.k();
        let act: Vec<T> = self
            .unprotected_idx
            .iter()
            .zip(&self.residual_b)
            .map(|(&j, &b)| self.activation.apply(z[j] + b))
            .collect();
        for (i, out) in y.iter_mut().enumerate() {
            let mut acc = dot(&self.theta[i * stride..(i + 1) * stride], powers);
            if !act.is_empty() {
                acc = acc + dot(self.residual_w.row(i), &act);
            }
            if let Some(c) = &self.c {
                acc = acc + c[i];
            }
            *out = acc;
        }
    }

    pub fn cast<U: Scalar>(&self) -> TaylorPackage<U> {
        let conv = |v: T| U::lit(v.as_f64());
        TaylorPackage {
            v: self.v.map(conv),
            z0: self.z0.iter().map(|&v| conv(v)).collect(),
            protected_idx: self.protected_idx.clone(),
            unprotected_idx: self.unprotected_idx.clone(),
            theta: self.theta.iter().map(|&v| conv(v)).collect(),
            order: self.order,
            residual_w: self.residual_w.map(conv),
            residual_b: self.residual_b.iter().map(|&v| conv(v)).collect(),
            c: self.c.as_ref().map(|c| c.iter().map(|&v| conv(v)).collect()),
            activation: self.activation,
        }
    }
}

/// Reusable buffers for [`TaylorPackage::predict_into`].
#[derive(Debug, Clone)]
pub struct TaylorScratch<T> {
    z: Vec<T>,
    powers: Vec<T>,
}

impl<T: Scalar> TaylorScratch<T> {
    pub fn new(pkg: &TaylorPackage<T>) -> Self {
        TaylorScratch {
            z: vec![T::zero(); pkg.d_intermediate()],
            powers: vec![T::zero(); (pkg.order + 1) * pkg.k()],
        }
    }

    fn fit(&mut self, pkg: &TaylorPackage<T>) {
        self.z.resize(pkg.d_intermediate(), T::zero());
        self.powers.resize((pkg.order + 1) * pkg.k(), T::zero());
    }
}

pub fn taylor_forward<T: Scalar>(pkg: &TaylorPackage<T>, x: &[T]) -> Result<TaylorForwardTrace<T>> {
    Error::check_len("Taylor input", pkg.d_model(), x.len())?;
    let z = pkg.v.matvec(x);
    let k = pkg.k();
    let mut flat = vec![T::zero(); (pkg.order + 1) * k];
    let mut y = vec![T::zero(); pkg.d_out()];
    pkg.evaluate(&z, &mut flat, &mut y);

    let z_p: Vec<T> = pkg.protected_idx.iter().map(|&j| z[j]).collect();
    let delta: Vec<T> = z_p.iter().zip(&pkg.z0).map(|(&a, &b)| a - b).collect();
    let powers: Vec<Vec<T>> = if k == 0 {
        vec![Vec::new(); pkg.order + 1]
    } else {
        flat.chunks_exact(k).map(<[T]>::to_vec).collect()
    };
    let guard = T::lit(SILU_RADIUS_GUARD);
    let radius_violation =
        pkg.activation == ActivationKind::Silu && delta.iter().any(|d| d.abs() > guard);
    Ok(TaylorForwardTrace {
        x: x.to_vec(),
        z_p,
        delta,
        powers,
        y,
        radius_violation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{select_protected_columns, CalibrationStats};
    use crate::mlp::mlp_forward;

    fn scalar_gelu() -> MlpWeights<f64> {
        MlpWeights::new(
            Matrix::identity(1),
            vec![0.0],
            Matrix::identity(1),
            vec![0.0],
            ActivationKind::Gelu,
        )
        .unwrap()
    }

    fn center_plan(width: usize, z0: f64) -> ProtectionPlan<f64> {
        ProtectionPlan::with_columns(vec![z0; width], (0..width).collect(), vec![0.0; width]).unwrap()
    }

    #[test]
    fn scalar_theta_values() {
        let pkg = transform(&scalar_gelu(), &center_plan(1, 0.0), 2).unwrap();
        assert_eq!(pkg.theta_slab(0, 0), &[0.0]);
        assert_eq!(pkg.theta_slab(0, 1), &[0.5]);
        // gelu''(0)/2 = 1/√(2π)
        assert!((pkg.theta_slab(0, 2)[0] - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert!(pkg.c().is_none());
    }

    #[test]
    fn scalar_second_order_error() {
        let pkg = transform(&scalar_gelu(), &center_plan(1, 0.0), 2).unwrap();
        let t = taylor_forward(&pkg, &[0.1]).unwrap();
        let exact = ActivationKind::Gelu.apply(0.1);
        assert!((t.y[0] - 0.053_989_423_0).abs() < 1e-9, "{}", t.y[0]);
        assert!((t.y[0] - exact).abs() <= 7e-6);
        assert_eq!(t.powers[0], vec![1.0]);
        assert_eq!(t.powers[1], vec![0.1]);
        assert!(!t.radius_violation);
    }

    #[test]
    fn order_above_cap_rejected() {
        let r = transform(&scalar_gelu(), &center_plan(1, 0.0), MAX_ORDER + 1);
        assert!(matches!(r, Err(Error::Config(_))));
        assert!(transform(&scalar_gelu(), &center_plan(1, 0.0), MAX_ORDER).is_ok());
    }

    #[test]
    fn plan_width_mismatch() {
        let r = transform(&scalar_gelu(), &center_plan(2, 0.0), 2);
        assert!(matches!(r, Err(Error::Shape { .. })));
    }

    #[test]
    fn zeroth_order_at_expansion_point() {
        let w: MlpWeights<f64> = MlpWeights::new(
            Matrix::from_rows(&[vec![1.0, -0.5], vec![0.25, 2.0], vec![-1.0, 1.0]]).unwrap(),
            vec![0.1, -0.2, 0.3],
            Matrix::from_rows(&[vec![0.5, -1.5, 2.0], vec![1.0, 0.0, -0.25]]).unwrap(),
            vec![0.7, -0.4],
            ActivationKind::Silu,
        )
        .unwrap();
        let x = [0.3, -0.8];
        let mut stats = CalibrationStats::new(3);
        stats.observe(&w, &x).unwrap();
        for k in 1..=3 {
            let plan = select_protected_columns(&stats, k).unwrap();
            let pkg = transform(&w, &plan, 0).unwrap();
            let plain = mlp_forward(&w, &x).unwrap().y;
            let t = taylor_forward(&pkg, &x).unwrap();
            for (a, b) in t.y.iter().zip(&plain) {
                assert!((a - b).abs() < 1e-14, "k={k}: {a} vs {b}");
            }
            assert_eq!(t.powers.len(), 1);
        }
    }

    #[test]
    fn unprotected_package_is_plain_mlp() {
        let w: MlpWeights<f64> = MlpWeights::new(
            Matrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5]]).unwrap(),
            vec![0.2, -0.1],
            Matrix::from_rows(&[vec![1.0, -1.0]]).unwrap(),
            vec![0.05],
            ActivationKind::Gelu,
        )
        .unwrap();
        let plan = ProtectionPlan::with_columns(vec![0.0; 2], vec![], vec![0.0; 2]).unwrap();
        let pkg = transform(&w, &plan, 4).unwrap();
        assert_eq!(pkg.k(), 0);
        assert!(pkg.theta().is_empty());
        let x = [0.9, -1.1];
        let a = pkg.predict(&x).unwrap();
        let b = w.predict(&x).unwrap();
        assert!((a[0] - b[0]).abs() < 1e-15);
    }

    #[test]
    fn silu_radius_flag() {
        let w = MlpWeights::new(
            Matrix::identity(1),
            vec![0.0],
            Matrix::identity(1),
            vec![0.0],
            ActivationKind::Silu,
        )
        .unwrap();
        let pkg = transform(&w, &center_plan(1, 0.0), 4).unwrap();
        assert!(!taylor_forward(&pkg, &[2.9]).unwrap().radius_violation);
        assert!(taylor_forward(&pkg, &[-3.5]).unwrap().radius_violation);
        let g = transform(&scalar_gelu(), &center_plan(1, 0.0), 4).unwrap();
        assert!(!taylor_forward(&g, &[-3.5]).unwrap().radius_violation);
    }

    #[test]
    fn trace_powers_are_cumulative() {
        let pkg = transform(&scalar_gelu(), &center_plan(1, 0.5), 5).unwrap();
        let t = taylor_forward(&pkg, &[1.5]).unwrap();
        assert_eq!(t.delta, vec![1.0]);
        for n in 1..=5 {
            assert_eq!(t.powers[n][0], t.powers[n - 1][0] * t.delta[0]);
        }
    }

    #[test]
    fn input_shape_checked() {
        let pkg = transform(&scalar_gelu(), &center_plan(1, 0.0), 1).unwrap();
        assert!(taylor_forward(&pkg, &[1.0, 2.0]).is_err());
        assert!(pkg.forward_from_preactivations(&[]).is_err());
    }

    #[test]
    fn from_parts_round_trip() {
        let w = MlpWeights::new(
            Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap(),
            vec![0.1, 0.2, 0.3],
            Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap(),
            vec![0.5],
            ActivationKind::Gelu,
        )
        .unwrap();
        let plan = ProtectionPlan::with_columns(vec![0.0; 3], vec![0, 2], vec![0.0; 3]).unwrap();
        let pkg = transform(&w, &plan, 3).unwrap();
        let rebuilt = TaylorPackage::from_parts(
            pkg.v().clone(),
            pkg.z0().to_vec(),
            pkg.protected_idx().to_vec(),
            pkg.theta().to_vec(),
            pkg.order(),
            pkg.residual_w().clone(),
            pkg.residual_b().to_vec(),
            pkg.c().map(<[f64]>::to_vec),
            pkg.activation(),
        )
        .unwrap();
        assert_eq!(rebuilt, pkg);
        assert_eq!(pkg.unprotected_idx(), &[1]);
        let bad = TaylorPackage::from_parts(
            pkg.v().clone(),
            pkg.z0().to_vec(),
            vec![2, 0],
            pkg.theta().to_vec(),
            pkg.order(),
            pkg.residual_w().clone(),
            pkg.residual_b().to_vec(),
            pkg.c().map(<[f64]>::to_vec),
            pkg.activation(),
        );
        assert!(bad.is_err());
    }
}
