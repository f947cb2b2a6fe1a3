//! Per-query costs charged against an analyst's budget.

use crate::error::{Error, Result};

use super::ledger::BudgetLedger;

fn check_arity(n: usize, w: usize) -> Result<()> {
    if w < 1 || w >= n {
        return Err(Error::domain(format!("need 1 ≤ w < n, got n={n}, w={w}")));
    }
    Ok(())
}

/// `w·|Y|·ln n / (n − w)`.
pub fn cost_basic(n: usize, w: usize, ysize: usize) -> Result<f64> {
    check_arity(n, w)?;
    Ok((w * ysize) as f64 * (n as f64).ln() / (n - w) as f64)
}

/// Cost of a p-uniform query, charged in expectation:
/// `(w·|Y| / (n − w))·min(ln n, 1 + ln(1 + w/(n·p)))`. With `p = 0` the
/// minimum is `ln n`.
pub fn cost_uniform(n: usize, w: usize, ysize: usize, p: f64) -> Result<f64> {
    check_arity(n, w)?;
    if !(p >= 0.0) {
        return Err(Error::domain(format!("uniformity {p} is negative")));
    }
    let log_n = (n as f64).ln();
    let factor = if p > 0.0 {
        log_n.min(1.0 + (1.0 + w as f64 / (n as f64 * p)).ln())
    } else {
        log_n
    };
    Ok((w * ysize) as f64 / (n - w) as f64 * factor)
}

/// High-probability cost of a p-uniform unary query:
/// `(|Y|/n)·min(ln n, 1 + ln(1 + ln(1/δ)/(n·p)))`.
pub fn cost_hp(n: usize, ysize: usize, p: f64, delta: f64) -> Result<f64> {
    if n < 1 {
        return Err(Error::domain("need n ≥ 1"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!("δ = {delta} outside (0, 1)")));
    }
    if !(p >= 0.0) {
        return Err(Error::domain(format!("uniformity {p} is negative")));
    }
    let log_n = (n as f64).ln();
    let factor = if p > 0.0 {
        log_n.min(1.0 + (1.0 + (1.0 / delta).ln() / (n as f64 * p)).ln())
    } else {
        log_n
    };
    Ok(ysize as f64 / n as f64 * factor)
}

/// Upper bound on the mutual information between the sample and the
/// transcript: `n` times the realized total cost. Average over runs for the
/// in-expectation form.
pub fn mi_upper_bound(ledger: &BudgetLedger, n: usize) -> f64 {
    n as f64 * ledger.total()
}
