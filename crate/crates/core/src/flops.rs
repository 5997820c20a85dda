//! Multiply-accumulate accounting for one forward pass.
//!
//! Counting convention, one unit each:
//! - a multiply-accumulate in `V·x`, `W·a` or `⟨Θ_{i,n}, δⁿ⟩`;
//! - an activation evaluation (bias add included);
//! - a subtraction `z - z0` or a power step `δⁿ = δⁿ⁻¹ ⊙ δ`;
//! - an output bias add.
//!
//! Powers are computed once per input and shared by every output row, so a
//! protected column costs `(N + 1)` MACs per row plus `N` shared elementwise
//! ops (one subtraction and `N - 1` power steps).

use crate::mlp::MlpWeights;
use crate::scalar::Scalar;
use crate::taylor::TaylorPackage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockShape {
    pub d_model: usize,
    pub d_intermediate: usize,
    pub d_out: usize,
}

impl BlockShape {
    pub fn of_weights<T: Scalar>(w: &MlpWeights<T>) -> Self {
        BlockShape {
            d_model: w.d_model(),
            d_intermediate: w.d_intermediate(),
            d_out: w.d_out(),
        }
    }

    pub fn of_package<T: Scalar>(p: &TaylorPackage<T>) -> Self {
        BlockShape {
            d_model: p.d_model(),
            d_intermediate: p.d_intermediate(),
            d_out: p.d_out(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountMode {
    Plain,
    Taylor,
}

/// MAC counts split by the part of the block they belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FlopBreakdown {
    /// `V·x`, identical in both modes.
    pub projection: u64,
    /// Work attributable to the protected columns.
    pub protected: u64,
    /// Work on the columns kept in clear.
    pub unprotected: u64,
    pub bias: u64,
}

impl FlopBreakdown {
    pub fn total(&self) -> u64 {
        self.projection + self.protected + self.unprotected + self.bias
    }
}

/// Counts one forward pass of a block with `protected` Taylor columns of order `order`.
///
/// In `Plain` mode `protected` only decides how the down-projection work is
/// split between the `protected` and `unprotected` buckets; the total is
/// independent of it.
pub fn flop_count(shape: BlockShape, protected: usize, order: usize, mode: CountMode) -> FlopBreakdown {
    let d_int = shape.d_intermediate as u64;
    let d_out = shape.d_out as u64;
    let k = protected.min(shape.d_intermediate) as u64;
    let n = order as u64;
    let rest = d_int - k;
    let projection = d_int * shape.d_model as u64;
    // activation slot plus one MAC per output row
    let unprotected = rest + d_out * rest;
    match mode {
        CountMode::Plain => FlopBreakdown {
            projection,
            protected: k + d_out * k,
            unprotected,
            bias: d_out,
        },
        CountMode::Taylor => {
            let shared = if n == 0 { 0 } else { k * n };
            let absorbed = k > 0 && k == d_int;
            FlopBreakdown {
                projection,
                protected: shared + d_out * (n + 1) * k,
                unprotected,
                bias: if absorbed { 0 } else { d_out },
            }
        }
    }
}

pub fn plain_flops<T: Scalar>(w: &MlpWeights<T>) -> FlopBreakdown {
    flop_count(BlockShape::of_weights(w), 0, 0, CountMode::Plain)
}

pub fn taylor_flops<T: Scalar>(p: &TaylorPackage<T>) -> FlopBreakdown {
    flop_count(BlockShape::of_package(p), p.k(), p.order(), CountMode::Taylor)
}

/// Taylor/plain cost ratio over the protected columns only.
pub fn protected_ratio(shape: BlockShape, protected: usize, order: usize) -> f64 {
    let t = flop_count(shape, protected, order, CountMode::Taylor).protected;
    let p = flop_count(shape, protected, order, CountMode::Plain).protected;
    t as f64 / p as f64
}
