//! Property tests for the autodiff engine: random expression trees must pass
//! the finite-difference check, and stop-gradient must be forward-identity.

use std::sync::Arc;

use gradcore::{evaluate, finite_diff_check, gradient, Expr, Layout, ParamVector};
use proptest::prelude::*;

fn params(values: Vec<f64>) -> ParamVector {
    let layout = Arc::new(Layout::from_sizes([("p", values.len())]).unwrap());
    ParamVector::new(values, layout).unwrap()
}

/// Random smooth expression over 3 parameters, kept in a range where every
/// op stays finite and well-conditioned.
fn smooth_expr(seed: u64) -> Expr {
    let mut state = seed;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 33) as u32
    };
    let leaves = [Expr::param(0), Expr::param(1), Expr::param(2), Expr::constant(0.7)];
    let mut e = leaves[(next() % 4) as usize].clone();
    for _ in 0..6 {
        let leaf = leaves[(next() % 4) as usize].clone();
        e = match next() % 6 {
            0 => e + leaf,
            1 => e - leaf,
            2 => e * Expr::constant(0.5) + leaf,
            3 => e.sigmoid() + leaf,
            4 => (e * Expr::constant(0.3)).softplus() + leaf * Expr::constant(0.1),
            _ => Expr::log_sum_exp(vec![e * Expr::constant(0.4), leaf]),
        };
    }
    e
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_smooth_exprs_pass_fd_check(
        seed in any::<u64>(),
        x in -1.5f64..1.5,
        y in -1.5f64..1.5,
        z in -1.5f64..1.5,
    ) {
        let e = smooth_expr(seed);
        let p = params(vec![x, y, z]);
        let report = finite_diff_check(&e, &p, 1e-4, 1e-6).unwrap();
        prop_assert!(report.all_passed(), "max err {}", report.max_abs_err);
    }

    #[test]
    fn stop_grad_is_forward_identity(
        seed in any::<u64>(),
        x in -1.5f64..1.5,
        y in -1.5f64..1.5,
        z in -1.5f64..1.5,
    ) {
        let e = smooth_expr(seed);
        let p = params(vec![x, y, z]);
        let plain = evaluate(&e, &p).unwrap();
        let sg = evaluate(&e.stop_grad(), &p).unwrap();
        prop_assert_eq!(plain, sg);
    }

    #[test]
    fn indicator_gradient_is_exactly_zero(
        x in -2.0f64..2.0,
        thr in -1.0f64..1.0,
    ) {
        let e = (Expr::param(0) - thr).indicator_pos();
        let p = params(vec![x, 0.0, 0.0]);
        let g = gradient(&e, &p).unwrap();
        prop_assert_eq!(g.values()[0], 0.0);
    }
}
