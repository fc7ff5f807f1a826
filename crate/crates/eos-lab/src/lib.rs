// NaN-aware comparisons such as `!(x <= bound)` are intentional: NaN counts as a violation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod dataset;
pub mod linalg;
pub mod mlp;
pub mod phases;
pub mod plot;
pub mod spectrum;
pub mod tracker;
pub mod twolayer;
pub mod verify;
