mod common;

use common::{act_ref, close, ridders};
use proptest::prelude::*;
use taylor_mlp::activation::{gelu_helper, silu_derivative, silu_helper};
use taylor_mlp::{ActivationKind, DerivativeTable};

const KINDS: [ActivationKind; 2] = [ActivationKind::Gelu, ActivationKind::Silu];

#[test]
fn zeroth_derivative_matches_reference_functions() {
    for kind in KINDS {
        for i in -80..=80 {
            let x = i as f64 * 0.1;
            let got = kind.derivative(0, x);
            assert!(close(got, act_ref(kind, x), 1e-14, 1e-15), "{kind} x={x}");
        }
    }
}

#[test]
fn silu_second_derivative_vanishes_at_origin() {
    assert_eq!(silu_helper(2, 0.0f64), 0.0);
    assert!((silu_derivative(2, 0.0f64) - 0.5).abs() < 1e-15);
}

#[test]
fn gelu_helpers_are_hermite_multiples_of_density() {
    // h_n(x) = (-1)^n He_n(x) φ(x); He_n from its own three-term recurrence.
    let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    for i in -30..=30 {
        let x = i as f64 * 0.13;
        let (mut he_prev, mut he) = (1.0, x);
        for n in 1..12 {
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            let expected = sign * he * phi(x);
            assert!(close(gelu_helper(n, x), expected, 1e-12, 1e-14), "n={n} x={x}");
            let next = x * he - n as f64 * he_prev;
            he_prev = he;
            he = next;
        }
    }
}

proptest! {
    #[test]
    fn derivative_matches_ridders_difference(x in -4.0f64..4.0, n in 1usize..=8, silu in any::<bool>()) {
        let kind = if silu { ActivationKind::Silu } else { ActivationKind::Gelu };
        let (fd, err) = ridders(|t| kind.derivative(n - 1, t), x, 0.05);
        let got = kind.derivative(n, x);
        prop_assert!(close(got, fd, 1e-6, 1e-10), "{} n={} x={}: {} vs {} (err {})", kind, n, x, got, fd, err);
    }

    #[test]
    fn table_matches_pointwise(xs in prop::collection::vec(-6.0f64..6.0, 1..12), silu in any::<bool>()) {
        let kind = if silu { ActivationKind::Silu } else { ActivationKind::Gelu };
        let table = DerivativeTable::new(kind, 12, &xs);
        for (j, &x) in xs.iter().enumerate() {
            for n in 0..=12 {
                let a = table.derivative(n, j);
                let b = kind.derivative(n, x);
                prop_assert!(close(a, b, 1e-12, 1e-14), "n={} x={}: {} vs {}", n, x, a, b);
            }
        }
    }

    #[test]
    fn gelu_helper_recurrence_is_self_consistent(x in -5.0f64..5.0, n in 2i32..14) {
        let lhs = gelu_helper(n, x);
        let rhs = -x * gelu_helper(n - 1, x) - (n - 1) as f64 * gelu_helper(n - 2, x);
        prop_assert!(close(lhs, rhs, 1e-12, 1e-14));
    }

    #[test]
    fn f32_path_tracks_f64(x in -3.0f32..3.0, n in 0usize..6, silu in any::<bool>()) {
        let kind = if silu { ActivationKind::Silu } else { ActivationKind::Gelu };
        let a = kind.derivative(n, x) as f64;
        let b = kind.derivative(n, x as f64);
        prop_assert!(close(a, b, 1e-4, 1e-5), "{} vs {}", a, b);
    }
}
