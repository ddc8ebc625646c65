//! Shared fixtures for the criterion benches: one standard problem instance
//! (worst-case variance in [0.04, 0.25], terminal call) built the same way
//! in every harness so numbers stay comparable across runs.

use gexp_core::payoff::PayoffFunctional;
use gexp_core::{NoiseDistribution, PayoffSpec, UncertaintyDomain};

pub const A_LOW: f64 = 0.04;
pub const A_HIGH: f64 = 0.25;

pub fn band() -> UncertaintyDomain {
    UncertaintyDomain::ScalarInterval { a_low: A_LOW, a_high: A_HIGH }
}

pub fn rademacher() -> NoiseDistribution {
    NoiseDistribution::Rademacher { d: 1 }
}

pub fn normal() -> NoiseDistribution {
    NoiseDistribution::StandardNormal { d: 1 }
}

pub fn call() -> PayoffFunctional {
    PayoffSpec::TerminalCall { strike: 0.0 }.build().expect("builtin payoff")
}
