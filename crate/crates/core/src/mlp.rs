//! Plain two-layer feed-forward block, `y = W·Act(V·x + b) + c`.
//!
//! This is the reference the Taylor path is measured against and the model
//! that the attack harness trains.

use crate::activation::ActivationKind;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{dot, Scalar};

/// Parameters of one feed-forward block.
///
/// `V` is `d_intermediate × d_model`, `W` is `d_out × d_intermediate`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpWeights<T> {
    v: Matrix<T>,
    b: Vec<T>,
    w: Matrix<T>,
    c: Vec<T>,
    activation: ActivationKind,
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T> {
    pub x: Vec<T>,
    /// `V·x`, before the bias.
    pub z: Vec<T>,
    /// `Act(z + b)`.
    pub a: Vec<T>,
    pub y: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub dv: Matrix<T>,
    pub db: Vec<T>,
    pub dw: Matrix<T>,
    pub dc: Vec<T>,
    pub dx: Vec<T>,
}

impl<T: Scalar> MlpWeights<T> {
    pub fn new(
        v: Matrix<T>,
        b: Vec<T>,
        w: Matrix<T>,
        c: Vec<T>,
        activation: ActivationKind,
    ) -> Result<Self> {
        let d_int = v.rows();
        Error::check_len("bias b", d_int, b.len())?;
        Error::check_len("W columns", d_int, w.cols())?;
        Error::check_len("bias c", w.rows(), c.len())?;
        let finite = v.is_finite()
            && w.is_finite()
            && b.iter().all(|x| x.is_finite())
            && c.iter().all(|x| x.is_finite());
        if !finite {
            return Err(Error::Domain("MLP weights"));
        }
        Ok(MlpWeights {
            v,
            b,
            w,
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
        self.w.rows()
    }

    pub fn activation(&self) -> ActivationKind {
        self.activation
    }

    pub fn v(&self) -> &Matrix<T> {
        &self.v
    }

    pub fn b(&self) -> &[T] {
        &self.b
    }

    pub fn w(&self) -> &Matrix<T> {
        &self.w
    }

    pub fn c(&self) -> &[T] {
        &self.c
    }

    pub fn b_mut(&mut self) -> &mut [T] {
        &mut self.b
    }

    pub fn w_mut(&mut self) -> &mut Matrix<T> {
        &mut self.w
    }

    pub fn c_mut(&mut self) -> &mut [T] {
        &mut self.c
    }

    /// `V·x`.
    pub fn preactivations(&self, x: &[T]) -> Result<Vec<T>> {
        Error::check_len("MLP input", self.d_model(), x.len())?;
        Ok(self.v.matvec(x))
    }

    /// Output for pre-bias pre-activations `z = V·x`.
    pub fn forward_from_preactivations(&self, z: &[T]) -> Result<Vec<T>> {
        Error::check_len("pre-activations", self.d_intermediate(), z.len())?;
        let a = self.activate(z);
        Ok(self.project(&a))
    }

    pub fn predict(&self, x: &[T]) -> Result<Vec<T>> {
        let z = self.preactivations(x)?;
        let a = self.activate(&z);
        Ok(self.project(&a))
    }

    pub fn predict_batch(&self, xs: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
        xs.iter().map(|x| self.predict(x)).collect()
    }

    /// Allocation-free forward pass into `y`; `hidden` must hold `d_intermediate` entries.
    pub fn predict_into(&self, x: &[T], hidden: &mut [T], y: &mut [T]) -> Result<()> {
        Error::check_len("MLP input", self.d_model(), x.len())?;
        Error::check_len("MLP hidden buffer", self.d_intermediate(), hidden.len())?;
        Error::check_len("MLP output", self.d_out(), y.len())?;
        self.v.matvec_into(x, hidden);
        for (h, &b) in hidden.iter_mut().zip(&self.b) {
            *h = self.activation.apply(*h + b);
        }
        for (i, out) in y.iter_mut().enumerate() {
            *out = dot(self.w.row(i), hidden) + self.c[i];
        }
        Ok(())
    }

    fn activate(&self, z: &[T]) -> Vec<T> {
        z.iter()
            .zip(&self.b)
            .map(|(&zi, &bi)| self.activation.apply(zi + bi))
            .collect()
    }

    fn project(&self, a: &[T]) -> Vec<T> {
        (0..self.d_out())
            .map(|i| dot(self.w.row(i), a) + self.c[i])
            .collect()
    }

    /// Casts every parameter into another scalar type.
    pub fn cast<U: Scalar>(&self) -> MlpWeights<U> {
        let conv = |v: T| U::lit(v.as_f64());
        MlpWeights {
            v: self.v.map(conv),
            b: self.b.iter().map(|&v| conv(v)).collect(),
            w: self.w.map(conv),
            c: self.c.iter().map(|&v| conv(v)).collect(),
            activation: self.activation,
        }
    }
}

pub fn mlp_forward<T: Scalar>(weights: &MlpWeights<T>, x: &[T]) -> Result<ForwardTrace<T>> {
    let z = weights.preactivations(x)?;
    let a = weights.activate(&z);
    let y = weights.project(&a);
    Ok(ForwardTrace {
        x: x.to_vec(),
        z,
        a,
        y,
    })
}

/// Gradients of an upstream loss with `∂L/∂y = dy`.
pub fn mlp_backward<T: Scalar>(
    weights: &MlpWeights<T>,
    trace: &ForwardTrace<T>,
    dy: &[T],
) -> Result<Gradients<T>> {
    Error::check_len("upstream gradient", weights.d_out(), dy.len())?;
    Error::check_len("trace input", weights.d_model(), trace.x.len())?;
    Error::check_len("trace pre-activations", weights.d_intermediate(), trace.z.len())?;
    Error::check_len("trace activations", weights.d_intermediate(), trace.a.len())?;

    let d_int = weights.d_intermediate();
    let mut dw = Matrix::zeros(weights.d_out(), d_int);
    for (i, &g) in dy.iter().enumerate() {
        for (dst, &a) in dw.row_mut(i).iter_mut().zip(&trace.a) {
            *dst = g * a;
        }
    }

    let da = weights.w.transpose_matvec(dy);
    let db: Vec<T> = da
        .iter()
        .zip(&trace.z)
        .zip(&weights.b)
        .map(|((&g, &z), &b)| g * weights.activation.derivative(1, z + b))
        .collect();

    let mut dv = Matrix::zeros(d_int, weights.d_model());
    for (j, &g) in db.iter().enumerate() {
        for (dst, &x) in dv.row_mut(j).iter_mut().zip(&trace.x) {
            *dst = g * x;
        }
    }
    let dx = weights.v.transpose_matvec(&db);

    Ok(Gradients {
        dv,
        db,
        dw,
        dc: dy.to_vec(),
        dx,
    })
}
