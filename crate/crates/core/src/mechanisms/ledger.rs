use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetMode {
    /// Charges are recorded; nothing is ever refused.
    Expectation,
    /// Charges that would push the total above the limit are refused.
    AlmostSure,
}

/// Running account of query costs against a budget `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct BudgetLedger {
    mode: BudgetMode,
    limit: f64,
    total: f64,
    charges: Vec<f64>,
}

impl BudgetLedger {
    pub fn new(mode: BudgetMode, limit: f64) -> Self {
        BudgetLedger {
            mode,
            limit,
            total: 0.0,
            charges: Vec::new(),
        }
    }

    /// Expectation-mode ledger with no limit.
    pub fn unlimited() -> Self {
        Self::new(BudgetMode::Expectation, f64::INFINITY)
    }

    pub fn mode(&self) -> BudgetMode {
        self.mode
    }

    pub fn limit(&self) -> f64 {
        self.limit
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn charges(&self) -> &[f64] {
        &self.charges
    }

    pub fn remaining(&self) -> f64 {
        self.limit - self.total
    }

    /// Whether `amount` would be accepted right now.
    pub fn admits(&self, amount: f64) -> bool {
        self.mode == BudgetMode::Expectation || self.total + amount <= self.limit
    }

    /// Records `amount`, or refuses it (leaving the ledger untouched) in
    /// almost-sure mode when it would exceed the limit.
    pub fn try_charge(&mut self, amount: f64) -> Result<()> {
        if !(amount >= 0.0) {
            return Err(Error::domain(format!("charge {amount} is negative")));
        }
        if !self.admits(amount) {
            return Err(Error::BudgetRefused {
                requested: amount,
                remaining: self.remaining(),
            });
        }
        self.total += amount;
        self.charges.push(amount);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn almost_sure_refuses_and_leaves_state() {
        let mut l = BudgetLedger::new(BudgetMode::AlmostSure, 1.0);
        l.try_charge(0.6).unwrap();
        let before = l.clone();
        assert!(matches!(l.try_charge(0.5), Err(Error::BudgetRefused { .. })));
        assert_eq!(l, before);
        l.try_charge(0.4).unwrap();
        assert_eq!(l.charges().len(), 2);
    }

    #[test]
    fn expectation_mode_only_records() {
        let mut l = BudgetLedger::new(BudgetMode::Expectation, 1.0);
        l.try_charge(5.0).unwrap();
        assert_eq!(l.total(), 5.0);
        assert!(l.try_charge(-1.0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn almost_sure_total_never_exceeds_limit(limit in 0.0f64..5.0, charges in proptest::collection::vec(0.0f64..1.0, 0..40)) {
            let mut l = BudgetLedger::new(BudgetMode::AlmostSure, limit);
            for c in charges {
                let _ = l.try_charge(c);
                proptest::prop_assert!(l.total() <= limit);
            }
            let sum: f64 = l.charges().iter().sum();
            proptest::prop_assert!((sum - l.total()).abs() < 1e-12);
        }
    }
}
