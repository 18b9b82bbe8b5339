//! VaR and ES backtests and the daily candidate mask built from them.

mod es;
mod mask;
mod var;

use std::fmt;
use std::str::FromStr;

pub use es::{cc_identification, cc_test, er_test, hommel_combined};
pub use mask::{candidate_mask, CandidateMask, MaskOptions, MaskRow, BACKTEST_WINDOW};
pub use var::{dq_test, duration_test, exponential_ln_pdf, weibull_ln_pdf, DQ_LAGS, SHAPE_RANGE};

use crate::{Error, Result};

pub const TEST_CONFIDENCE: f64 = 0.99;
pub const BOOTSTRAP_N: usize = 1000;

/// Every reason a test can report instead of a decision.
pub const DEGENERATE_REASONS: [&str; 6] = [
    "no exceedances",
    "zero-variance component",
    "fewer than two exceedances",
    "constant residuals",
    "fewer than two violations",
    "singular regressors",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TestKind {
    Duration,
    Cc,
    Dq,
    Er,
}

impl TestKind {
    pub const ALL: [TestKind; 4] = [TestKind::Duration, TestKind::Cc, TestKind::Dq, TestKind::Er];

    pub fn label(self) -> &'static str {
        match self {
            TestKind::Duration => "duration",
            TestKind::Cc => "cc",
            TestKind::Dq => "dq",
            TestKind::Er => "er",
        }
    }

    /// True for the joint VaR/ES tests.
    pub fn is_es(self) -> bool {
        matches!(self, TestKind::Cc | TestKind::Er)
    }
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for TestKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TestKind::ALL
            .into_iter()
            .find(|t| t.label() == s)
            .ok_or_else(|| Error::invalid(format!("unknown backtest '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BacktestResult {
    pub test: TestKind,
    pub statistic: f64,
    pub p_value: f64,
    pub rejected: bool,
    pub n_hits: usize,
    /// Why the test carried no information; such results never reject.
    pub degenerate: Option<&'static str>,
}

impl BacktestResult {
    fn decided(test: TestKind, statistic: f64, p_value: f64, n_hits: usize, conf: f64) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        Self { test, statistic, p_value, rejected: p_value < 1.0 - conf, n_hits, degenerate: None }
    }

    fn degenerate(test: TestKind, n_hits: usize, reason: &'static str) -> Self {
        Self { test, statistic: f64::NAN, p_value: 1.0, rejected: false, n_hits, degenerate: Some(reason) }
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate.is_some()
    }
}

/// Violation indicators `r_t < -VaR_t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HitSequence(Vec<u8>);

impl HitSequence {
    pub fn from_hits(hits: Vec<u8>) -> Result<Self> {
        if hits.iter().any(|&h| h > 1) {
            return Err(Error::invalid("hit sequence must be 0/1"));
        }
        Ok(Self(hits))
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&h| h == 1).count()
    }
}

pub fn hit_sequence(returns: &[f64], var: &[f64]) -> Result<HitSequence> {
    aligned(returns.len(), var.len())?;
    Ok(HitSequence(returns.iter().zip(var).map(|(r, v)| u8::from(*r < -*v)).collect()))
}

fn aligned(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension { expected: a, got: b });
    }
    Ok(())
}

fn check_conf(conf: f64) -> Result<()> {
    if !(conf > 0.0 && conf < 1.0) {
        return Err(Error::invalid(format!("test confidence {conf} outside (0, 1)")));
    }
    Ok(())
}

fn check_coverage(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("coverage {p} outside (0, 1)")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hits_are_strict() {
        assert_eq!(hit_sequence(&[-2.0, 0.0, -1.0], &[1.0; 3]).unwrap().as_slice(), &[1, 0, 0]);
        assert_eq!(hit_sequence(&[-5.0, 3.0], &[1e300; 2]).unwrap().count(), 0);
        assert!(hit_sequence(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn labels_round_trip() {
        for t in TestKind::ALL {
            assert_eq!(t.label().parse::<TestKind>().unwrap(), t);
        }
    }

    proptest! {
        #[test]
        fn hits_match_elementwise(pairs in proptest::collection::vec((-5.0f64..5.0, 0.0f64..5.0), 0..200)) {
            let (r, v): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let h = hit_sequence(&r, &v).unwrap();
            for i in 0..r.len() {
                prop_assert_eq!(h.as_slice()[i] == 1, r[i] < -v[i]);
            }
        }
    }
}
