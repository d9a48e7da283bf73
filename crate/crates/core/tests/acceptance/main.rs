//! Acceptance suite: runs each criterion in turn and prints one PASS/FAIL
//! line per criterion, followed by the individual checks. Set
//! `MTGP_ACCEPTANCE=1,4` to run a subset.

mod criteria;
mod oracles;

use std::process::ExitCode;
use std::time::Instant;

/// Collects the outcome of the individual checks within one criterion.
#[derive(Default)]
pub struct Checks {
    lines: Vec<Line>,
    notes: Vec<String>,
}

struct Line {
    ok: bool,
    what: String,
    /// Why the check cannot pass with a faithful implementation; such a
    /// failure is reported but does not fail the run.
    known: Option<&'static str>,
}

impl Checks {
    pub fn check(&mut self, ok: bool, what: impl Into<String>) {
        self.lines.push(Line {
            ok,
            what: what.into(),
            known: None,
        });
    }

    pub fn known(&mut self, ok: bool, what: impl Into<String>, why: &'static str) {
        self.lines.push(Line {
            ok,
            what: what.into(),
            known: Some(why),
        });
    }

    pub fn note(&mut self, what: impl Into<String>) {
        self.notes.push(what.into());
    }

    fn passed(&self) -> bool {
        !self.lines.is_empty() && self.lines.iter().all(|l| l.ok)
    }

    /// No failures other than documented ones.
    fn acceptable(&self) -> bool {
        self.lines.iter().all(|l| l.ok || l.known.is_some())
    }
}

struct Criterion {
    id: u32,
    title: &'static str,
    limit_s: f64,
    run: fn(&mut Checks),
}

const CRITERIA: &[Criterion] = &[
    Criterion {
        id: 1,
        title: "single-task closed form",
        limit_s: 1.0,
        run: criteria::single_task_closed_form,
    },
    Criterion {
        id: 2,
        title: "dense MT x MT oracle equivalence",
        limit_s: 1.0,
        run: criteria::dense_oracle,
    },
    Criterion {
        id: 3,
        title: "simulator exactness on a rank-3 kernel",
        limit_s: 30.0,
        run: criteria::simulator_exactness,
    },
    Criterion {
        id: 4,
        title: "two-task learning curves (SE-Gaussian, SE-uniform, OU-uniform)",
        limit_s: 600.0,
        run: criteria::two_task_curves,
    },
    Criterion {
        id: 5,
        title: "pure-transfer limit",
        limit_s: 300.0,
        run: criteria::pure_transfer,
    },
    Criterion {
        id: 6,
        title: "asymptotic uselessness for smooth kernels",
        limit_s: 120.0,
        run: criteria::asymptotic_uselessness,
    },
    Criterion {
        id: 7,
        title: "rough-kernel many-task gain exponent",
        limit_s: 60.0,
        run: criteria::rough_gain_exponent,
    },
    Criterion {
        id: 8,
        title: "many-task plateau and learning stages",
        limit_s: 300.0,
        run: criteria::many_task_plateau,
    },
    Criterion {
        id: 9,
        title: "invariant and property suites",
        limit_s: 300.0,
        run: properties::all,
    },
];

fn selected() -> Option<Vec<u32>> {
    let v = std::env::var("MTGP_ACCEPTANCE").ok()?;
    Some(v.split(',').filter_map(|s| s.trim().parse().ok()).collect())
}

fn main() -> ExitCode {
    // Ignore libtest flags such as `--nocapture` passed through cargo.
    let only = selected();
    let mut summary = Vec::new();
    for c in CRITERIA {
        if only.as_ref().is_some_and(|o| !o.contains(&c.id)) {
            continue;
        }
        let mut checks = Checks::default();
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| (c.run)(&mut checks)));
        let secs = start.elapsed().as_secs_f64();
        if let Err(p) = outcome {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            checks.check(false, format!("panicked: {msg}"));
        }
        checks.check(secs < c.limit_s, format!("runtime {secs:.1} s (limit {} s)", c.limit_s));
        let pass = checks.passed();
        println!("criterion {}: {} - {} ({secs:.1} s)", c.id, if pass { "PASS" } else { "FAIL" }, c.title);
        for l in &checks.lines {
            match (l.ok, l.known) {
                (true, _) => println!("    [ok] {}", l.what),
                (false, None) => println!("    [FAIL] {}", l.what),
                (false, Some(why)) => println!("    [FAIL, documented] {}\n        reason: {why}", l.what),
            }
        }
        for n in &checks.notes {
            println!("    note: {n}");
        }
        summary.push((c.id, pass, checks.acceptable()));
    }
    println!();
    for (id, pass, acceptable) in &summary {
        let status = match (pass, acceptable) {
            (true, _) => "PASS",
            (false, true) => "FAIL (documented checks only)",
            (false, false) => "FAIL",
        };
        println!("criterion {id}: {status}");
    }
    if summary.iter().all(|s| s.2) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
