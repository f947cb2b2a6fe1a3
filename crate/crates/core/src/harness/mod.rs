//! Adaptive analysts, populations, baselines and the experiment runner.

pub mod analyst;
pub mod population;
pub mod runner;

pub use analyst::{
    constant_query, identity_query, indicator_query, threshold_query, Analyst, FixedAnalyst, MedianWalk,
    MedianWalkOn, RandomCorrelation, Statistic,
};
pub use population::{bernoulli, categorical, discretized_gaussian, linear_grid, Cube, Finite, Population, Scalar};
pub use runner::{
    naive_answer, run_median_experiment, run_sq_experiment, sq_threshold, ExperimentReport, MedianMechanism, Row,
    Settings, SqMechanism, Summary, TrialSummary, TEST_PREFIX,
};
