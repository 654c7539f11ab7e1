//! Shared by the integration tests here and the acceptance suite of the CLI
//! crate.
#![allow(dead_code)]

pub mod grads;
pub mod instances;
pub mod oracle;
pub mod props;
