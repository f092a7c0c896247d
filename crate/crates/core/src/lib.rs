// Negated float comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calib;
pub mod camera;
pub mod config;
pub mod exec;
pub mod geom;
pub mod headctl;
pub mod render;
pub mod sim;
pub mod transport;
