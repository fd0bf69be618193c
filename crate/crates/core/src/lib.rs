//! Multi-agent ramp-merging simulator with flatness-based planning,
//! collaborative messaging and failure reflection.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod communication;
pub mod dynamics;
pub mod geometry;
pub mod harness;
pub mod metrics;
pub mod perception;
pub mod planning;
pub mod reflection;
pub mod rng;
pub mod scenario;
pub mod simulation;
