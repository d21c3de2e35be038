//! Rotation-based open-set domain adaptation.
//!
//! Stage I trains a rotation recognizer on the labeled source domain and uses it to
//! split the unlabeled target into known and unknown samples. Stage II adapts a
//! `|C_s|+1`-way classifier using that split.

pub mod dataset;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod stage1;
pub mod stage2;

pub use error::{Result, RosError};
