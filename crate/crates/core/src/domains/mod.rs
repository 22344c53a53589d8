//! Application domains: power flow, gas flow, monotonicity and fairness.

pub mod csv_loader;
pub mod fairness;
pub mod fixtures;
pub mod monotone;
pub mod ogf;
pub mod opf;
