//! Section schemas for weights, packages and calibration stats.
//!
//! Every file carries a rank-0 `kind` section (1 = weights, 2 = package,
//! 3 = calibration stats). Integer-valued fields (orders, indices, counts)
//! are stored as exact f64 values.
//!
//! | kind    | sections                                                                 |
//! |---------|--------------------------------------------------------------------------|
//! | weights | `activation`, `V [d_int, d_model]`, `b [d_int]`, `W [d_out, d_int]`, `c [d_out]` |
//! | package | `activation`, `order`, `V`, `z0 [K]`, `protected_idx [K]`, `theta [d_out, N+1, K]`, `residual_W [d_out, d_int-K]`, `residual_b [d_int-K]`, optional `c [d_out]` |
//! | stats   | `z_max [d_int]`, `z_min [d_int]`, `count`                                |
//!
//! `activation` is 0 for GELU and 1 for SiLU.

use std::path::Path;

use crate::activation::ActivationKind;
use crate::calibration::CalibrationStats;
use crate::container::{ContainerError, Tensor, TensorContainer};
use crate::error::Result;
use crate::linalg::Matrix;
use crate::mlp::MlpWeights;
use crate::taylor::TaylorPackage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Weights,
    Package,
    Stats,
}

impl FileKind {
    fn code(self) -> f64 {
        match self {
            FileKind::Weights => 1.0,
            FileKind::Package => 2.0,
            FileKind::Stats => 3.0,
        }
    }

    fn name(self) -> &'static str {
        match self {
            FileKind::Weights => "weights",
            FileKind::Package => "package",
            FileKind::Stats => "calibration stats",
        }
    }
}

fn malformed(msg: impl Into<String>) -> crate::error::Error {
    ContainerError::Malformed(msg.into()).into()
}

/// Reads the `kind` section.
pub fn file_kind(c: &TensorContainer) -> Result<FileKind> {
    let code = scalar(c, "kind")?;
    [FileKind::Weights, FileKind::Package, FileKind::Stats]
        .into_iter()
        .find(|k| k.code() == code)
        .ok_or_else(|| malformed(format!("unknown file kind {code}")))
}

fn expect_kind(c: &TensorContainer, want: FileKind) -> Result<()> {
    let got = file_kind(c)?;
    if got != want {
        return Err(malformed(format!("expected a {} file, found {}", want.name(), got.name())));
    }
    Ok(())
}

fn scalar(c: &TensorContainer, name: &str) -> Result<f64> {
    let t = c.require(name)?;
    if !t.dims().is_empty() {
        return Err(malformed(format!("section '{name}' must be a scalar")));
    }
    Ok(t.data()[0])
}

fn integer(v: f64, what: &str) -> Result<usize> {
    if v.fract() != 0.0 || !(0.0..=9.007_199_254_740_992e15).contains(&v) {
        return Err(malformed(format!("{what} must be a non-negative integer, got {v}")));
    }
    Ok(v as usize)
}

fn vector(c: &TensorContainer, name: &str) -> Result<Vec<f64>> {
    let t = c.require(name)?;
    if t.dims().len() != 1 {
        return Err(malformed(format!("section '{name}' must be rank 1")));
    }
    Ok(t.data().to_vec())
}

fn matrix(c: &TensorContainer, name: &str) -> Result<Matrix<f64>> {
    let t = c.require(name)?;
    match *t.dims() {
        [r, k] => Ok(Matrix::from_vec(r as usize, k as usize, t.data().to_vec())?),
        _ => Err(malformed(format!("section '{name}' must be rank 2"))),
    }
}

fn activation(c: &TensorContainer) -> Result<ActivationKind> {
    let code = integer(scalar(c, "activation")?, "activation")?;
    u8::try_from(code)
        .ok()
        .and_then(ActivationKind::from_code)
        .ok_or_else(|| malformed(format!("unknown activation code {code}")))
}

fn matrix_tensor(m: &Matrix<f64>) -> Tensor {
    Tensor::new(vec![m.rows() as u64, m.cols() as u64], m.as_slice().to_vec())
        .expect("matrix dims match buffer")
}

fn index_tensor(idx: &[usize]) -> Tensor {
    Tensor::vector(idx.iter().map(|&j| j as f64).collect())
}

pub fn weights_to_container(w: &MlpWeights<f64>) -> TensorContainer {
    let mut c = TensorContainer::new();
    let sections = [
        ("kind", Tensor::scalar(FileKind::Weights.code())),
        ("activation", Tensor::scalar(w.activation().code() as f64)),
        ("V", matrix_tensor(w.v())),
        ("b", Tensor::vector(w.b().to_vec())),
        ("W", matrix_tensor(w.w())),
        ("c", Tensor::vector(w.c().to_vec())),
    ];
    for (name, t) in sections {
        c.insert(name, t).expect("fresh section names");
    }
    c
}

pub fn weights_from_container(c: &TensorContainer) -> Result<MlpWeights<f64>> {
    expect_kind(c, FileKind::Weights)?;
    MlpWeights::new(
        matrix(c, "V")?,
        vector(c, "b")?,
        matrix(c, "W")?,
        vector(c, "c")?,
        activation(c)?,
    )
}

pub fn package_to_container(p: &TaylorPackage<f64>) -> TensorContainer {
    let mut c = TensorContainer::new();
    let theta = Tensor::new(
        vec![p.d_out() as u64, p.order() as u64 + 1, p.k() as u64],
        p.theta().to_vec(),
    )
    .expect("theta dims match buffer");
    let mut sections = vec![
        ("kind", Tensor::scalar(FileKind::Package.code())),
        ("activation", Tensor::scalar(p.activation().code() as f64)),
        ("order", Tensor::scalar(p.order() as f64)),
        ("V", matrix_tensor(p.v())),
        ("z0", Tensor::vector(p.z0().to_vec())),
        ("protected_idx", index_tensor(p.protected_idx())),
        ("theta", theta),
        ("residual_W", matrix_tensor(p.residual_w())),
        ("residual_b", Tensor::vector(p.residual_b().to_vec())),
    ];
    if let Some(bias) = p.c() {
        sections.push(("c", Tensor::vector(bias.to_vec())));
    }
    for (name, t) in sections {
        c.insert(name, t).expect("fresh section names");
    }
    c
}

pub fn package_from_container(c: &TensorContainer) -> Result<TaylorPackage<f64>> {
    expect_kind(c, FileKind::Package)?;
    let order = integer(scalar(c, "order")?, "order")?;
    let protected = vector(c, "protected_idx")?
        .into_iter()
        .map(|v| integer(v, "protected index"))
        .collect::<Result<Vec<_>>>()?;
    let theta = c.require("theta")?;
    if theta.dims().len() != 3 {
        return Err(malformed("section 'theta' must be rank 3"));
    }
    let bias = c.get("c").map(|_| vector(c, "c")).transpose()?;
    TaylorPackage::from_parts(
        matrix(c, "V")?,
        vector(c, "z0")?,
        protected,
        theta.data().to_vec(),
        order,
        matrix(c, "residual_W")?,
        vector(c, "residual_b")?,
        bias,
        activation(c)?,
    )
}

pub fn stats_to_container(s: &CalibrationStats<f64>) -> TensorContainer {
    let mut c = TensorContainer::new();
    let sections = [
        ("kind", Tensor::scalar(FileKind::Stats.code())),
        ("z_max", Tensor::vector(s.z_max().to_vec())),
        ("z_min", Tensor::vector(s.z_min().to_vec())),
        ("count", Tensor::scalar(s.count() as f64)),
    ];
    for (name, t) in sections {
        c.insert(name, t).expect("fresh section names");
    }
    c
}

pub fn stats_from_container(c: &TensorContainer) -> Result<CalibrationStats<f64>> {
    expect_kind(c, FileKind::Stats)?;
    let count = integer(scalar(c, "count")?, "count")? as u64;
    CalibrationStats::from_parts(vector(c, "z_max")?, vector(c, "z_min")?, count)
}

pub fn write_weights(path: impl AsRef<Path>, w: &MlpWeights<f64>) -> Result<()> {
    Ok(weights_to_container(w).write_file(path)?)
}

pub fn read_weights(path: impl AsRef<Path>) -> Result<MlpWeights<f64>> {
    weights_from_container(&TensorContainer::read_file(path)?)
}

pub fn write_package(path: impl AsRef<Path>, p: &TaylorPackage<f64>) -> Result<()> {
    Ok(package_to_container(p).write_file(path)?)
}

pub fn read_package(path: impl AsRef<Path>) -> Result<TaylorPackage<f64>> {
    package_from_container(&TensorContainer::read_file(path)?)
}

pub fn write_stats(path: impl AsRef<Path>, s: &CalibrationStats<f64>) -> Result<()> {
    Ok(stats_to_container(s).write_file(path)?)
}

pub fn read_stats(path: impl AsRef<Path>) -> Result<CalibrationStats<f64>> {
    stats_from_container(&TensorContainer::read_file(path)?)
}
