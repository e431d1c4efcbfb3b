//! Central finite-difference verification of reverse-mode gradients.

use crate::eval::{active_param_set, eval_nodes, gradient};
use crate::expr::Expr;
use crate::param::ParamVector;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    /// The entry is reachable only through stop-gradient or indicator
    /// subtrees: the analytic gradient is zero by design while the (forward
    /// identity) finite difference need not be.
    SgBlocked,
}

#[derive(Debug, Clone)]
pub struct EntryCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub status: CheckStatus,
}

#[derive(Debug, Clone)]
pub struct FiniteDiffReport {
    pub entries: Vec<EntryCheck>,
    /// Max |analytic - numeric| over entries with differentiable paths.
    pub max_abs_err: f64,
    pub failures: usize,
    pub sg_blocked: usize,
}

impl FiniteDiffReport {
    pub fn all_passed(&self) -> bool {
        self.failures == 0
    }
}

/// Compares the reverse-mode gradient against central differences
/// (f(x+h) - f(x-h)) / 2h, entry by entry.
///
/// Indicator nodes are frozen at their base-point values during the probes so
/// the difference quotient measures the active branch rather than a jump.
/// An entry passes when |g_ad - g_fd| <= rel_tol * max(1, |g_fd|).
pub fn finite_diff_check(
    expr: &Expr,
    params: &ParamVector,
    h: f64,
    rel_tol: f64,
) -> Result<FiniteDiffReport> {
    assert!(h > 0.0, "finite-difference step must be positive");

    let base = eval_nodes(expr, params, None)?;
    let frozen = base.indicator_values;
    let analytic = gradient(expr, params)?;
    let active = active_param_set(expr);
    let is_active = |i: usize| match &active {
        None => true,
        Some(set) => set.contains(&i),
    };

    let mut probe = params.clone();
    let mut entries = Vec::with_capacity(params.len());
    let mut max_abs_err = 0.0f64;
    let mut failures = 0;
    let mut sg_blocked = 0;

    for i in 0..params.len() {
        let orig = probe.values()[i];
        probe.values_mut()[i] = orig + h;
        let plus = eval_nodes(expr, &probe, Some(&frozen))?.value;
        probe.values_mut()[i] = orig - h;
        let minus = eval_nodes(expr, &probe, Some(&frozen))?.value;
        probe.values_mut()[i] = orig;

        let numeric = (plus - minus) / (2.0 * h);
        let ad = analytic.values()[i];

        let status = if is_active(i) {
            let err = (ad - numeric).abs();
            max_abs_err = max_abs_err.max(err);
            if err <= rel_tol * numeric.abs().max(1.0) {
                CheckStatus::Pass
            } else {
                failures += 1;
                CheckStatus::Fail
            }
        } else if ad != 0.0 {
            // Blocked paths must produce exactly zero analytic gradient.
            failures += 1;
            CheckStatus::Fail
        } else if numeric.abs() <= rel_tol {
            CheckStatus::Pass
        } else {
            sg_blocked += 1;
            CheckStatus::SgBlocked
        };

        entries.push(EntryCheck { index: i, analytic: ad, numeric, status });
    }

    Ok(FiniteDiffReport { entries, max_abs_err, failures, sg_blocked })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::Layout;
    use std::sync::Arc;

    fn params(values: Vec<f64>) -> ParamVector {
        let layout = Arc::new(Layout::from_sizes([("p", values.len())]).unwrap());
        ParamVector::new(values, layout).unwrap()
    }

    #[test]
    fn polynomial_passes_tightly() {
        // f = 3x^2 y + y^3
        let p = params(vec![1.3, -0.7]);
        let (x, y) = (Expr::param(0), Expr::param(1));
        let f = Expr::constant(3.0) * x.clone() * x * y.clone() + y.clone() * y.clone() * y;
        let report = finite_diff_check(&f, &p, 1e-4, 1e-8).unwrap();
        assert!(report.all_passed(), "max err {}", report.max_abs_err);
        assert!(report.max_abs_err < 1e-8);
    }

    #[test]
    fn wholly_stop_gradded_expr_is_sg_blocked_not_fail() {
        let p = params(vec![2.0]);
        let f = (Expr::param(0) * Expr::param(0)).stop_grad();
        let report = finite_diff_check(&f, &p, 1e-4, 1e-8).unwrap();
        assert_eq!(report.failures, 0);
        assert_eq!(report.sg_blocked, 1);
        assert_eq!(report.entries[0].analytic, 0.0);
        assert!(report.entries[0].numeric.abs() > 1.0);
    }

    #[test]
    fn constant_expr_both_zero() {
        let p = params(vec![5.0]);
        let f = Expr::constant(4.2);
        let report = finite_diff_check(&f, &p, 1e-4, 1e-8).unwrap();
        assert!(report.all_passed());
        assert_eq!(report.sg_blocked, 0);
        assert_eq!(report.entries[0].analytic, 0.0);
        assert_eq!(report.entries[0].numeric, 0.0);
    }

    #[test]
    fn indicator_freeze_keeps_probe_on_active_branch() {
        // f = I(x - 1 > 0) * x^2 at x just above the threshold; the +/- h
        // probes would cross it without freezing.
        let p = params(vec![1.0 + 5e-5]);
        let x = Expr::param(0);
        let f = (x.clone() - 1.0).indicator_pos() * x.clone() * x;
        let report = finite_diff_check(&f, &p, 1e-4, 1e-6).unwrap();
        assert!(report.all_passed(), "entries: {:?}", report.entries);
    }
}
