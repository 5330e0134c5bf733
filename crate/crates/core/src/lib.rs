#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod entities;
pub mod flow;
pub mod harness;
pub mod ids;
pub mod mihf;
pub mod mobility;
pub mod netsim;
pub mod pmip;
pub mod stats;

pub type Summary = stats::Summary<f64>;
