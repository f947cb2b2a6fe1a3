//! The statistical-query and approximate-median mechanisms, their parameter
//! schedules, per-query costs and the budget ledger.

pub mod cost;
pub mod ledger;
pub mod median;
pub mod sq;

pub use cost::{cost_basic, cost_hp, cost_uniform, mi_upper_bound};
pub use ledger::{BudgetLedger, BudgetMode};
pub use median::{
    approximate_median_check, approximate_median_check_with, approximate_median_margin, median_params,
    median_params_with, search_rounds, MedianOutcome, MedianParams, MedianSession, MEDIAN_MASS,
};
pub use sq::{squash, squash_value, sq_params, sq_params_with, SqConstants, SqParams, SqSession, Vote, VoteStream};
