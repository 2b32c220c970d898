//! Reporting helpers for the acceptance harness in `tests/acceptance.rs`.

use std::fmt;
use std::time::{Duration, Instant};

/// Outcome of one acceptance criterion.
#[derive(Debug, Clone)]
pub struct Verdict {
    pub id: usize,
    pub title: &'static str,
    pub pass: bool,
    pub detail: String,
    pub elapsed: Duration,
    pub budget: Duration,
}

impl Verdict {
    /// Runs `check`, timing it against `budget`. A check that overruns its
    /// budget fails even if its assertions hold.
    pub fn run<F>(id: usize, title: &'static str, budget: Duration, check: F) -> Verdict
    where
        F: FnOnce() -> (bool, String),
    {
        let start = Instant::now();
        let (ok, detail) = check();
        let elapsed = start.elapsed();
        Verdict {
            id,
            title,
            pass: ok && elapsed <= budget,
            detail,
            elapsed,
            budget,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} criterion {:>2}: {} [{:.1}s of {:.0}s] {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.elapsed.as_secs_f64(),
            self.budget.as_secs_f64(),
            self.detail
        )
    }
}
