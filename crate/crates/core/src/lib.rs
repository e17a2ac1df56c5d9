// Validation uses `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod env;
pub mod harness;
pub mod nncore;
pub mod policy;
pub mod seed;
pub mod statetracker;
pub mod usermodel;
