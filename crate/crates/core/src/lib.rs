//! Core engine for post-click conversion-rate (CVR) estimation experiments:
//! a small deterministic neural-network engine, a synthetic biased-logging
//! data generator with a ground-truth oracle, the family of CVR estimators
//! (single-task, joint, ESMM, Division, IPS, adversarial teacher and
//! distillation student), and ranking/likelihood metrics including their
//! propensity-weighted variants.
//!
//! The crate is `no_std` + `alloc`; all file formats, configuration and the
//! command-line harness live in the companion `cvrkit` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod datagen;
pub(crate) mod fmath;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod rng;
pub mod student;
pub mod teacher;
