//! Self-verification suites: naive-loop oracles, finite-difference gradient
//! checks, and the pseudo-reference and architecture properties.

use std::fmt;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::Tensor;

mod architecture;
mod gradients;
pub mod oracles;
mod oracle_suite;
mod pseudo_ref_props;
pub mod reference;

pub use architecture::architecture_suite;
pub use gradients::gradient_suite;
pub use oracle_suite::oracle_suite;
pub use pseudo_ref_props::pseudo_ref_suite;

/// Outcome of one named check: the worst error over `cases` randomized cases.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.max_error.is_finite() && self.max_error <= self.tolerance
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<56} cases {:>4}  max error {:.3e}  (tolerance {:.0e})",
            if self.passed() { "ok  " } else { "FAIL" },
            self.name,
            self.cases,
            self.max_error,
            self.tolerance
        )
    }
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub checks: Vec<Check>,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(Check::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed())
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} suite ({:.1?})", self.suite, self.elapsed)?;
        for c in &self.checks {
            writeln!(f, "  {c}")?;
        }
        Ok(())
    }
}

/// Accumulates the worst error of one check across cases.
struct Tally {
    name: String,
    cases: usize,
    max_error: f64,
    tolerance: f64,
}

impl Tally {
    fn new(name: impl Into<String>, tolerance: f64) -> Self {
        Self { name: name.into(), cases: 0, max_error: 0.0, tolerance }
    }

    fn record(&mut self, err: f64) {
        self.cases += 1;
        self.max_error = if err.is_nan() || self.max_error.is_nan() { f64::NAN } else { self.max_error.max(err) };
    }

    fn finish(self) -> Check {
        Check { name: self.name, cases: self.cases, max_error: self.max_error, tolerance: self.tolerance }
    }
}

struct Runner {
    suite: &'static str,
    checks: Vec<Check>,
    start: Instant,
}

impl Runner {
    fn new(suite: &'static str) -> Self {
        Self { suite, checks: Vec::new(), start: Instant::now() }
    }

    fn push(&mut self, tally: Tally) {
        self.checks.push(tally.finish());
    }

    fn finish(self) -> SuiteReport {
        SuiteReport { suite: self.suite, checks: self.checks, elapsed: self.start.elapsed() }
    }
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, |m, e| if e.is_nan() { f64::NAN } else { m.max(e) })
}

/// Runs every suite with one seed.
pub fn run_all(seed: u64) -> Result<Vec<SuiteReport>> {
    Ok(vec![oracle_suite(seed)?, gradient_suite(seed)?, pseudo_ref_suite(seed)?, architecture_suite(seed)?])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nan_fails_a_check() {
        let mut t = Tally::new("x", 1.0);
        t.record(0.5);
        t.record(f64::NAN);
        t.record(0.1);
        assert!(!t.finish().passed());
    }

    #[test]
    fn empty_report_does_not_pass() {
        let report = Runner::new("empty").finish();
        assert!(!report.passed());
    }

    #[test]
    fn oracle_suite_passes() {
        let report = oracle_suite(3).unwrap();
        assert!(report.passed(), "{report}");
    }
}
