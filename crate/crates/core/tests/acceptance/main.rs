//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Run with `cargo test -p uavloc-core --test acceptance`.

mod encoder;
mod end_to_end;
mod numeric;
mod oracles;
mod round_trip;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

/// What a criterion measured. `ok` covers the quantitative gate; the time
/// limit is checked by the runner.
pub struct Verdict {
    pub ok: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(ok: bool, detail: impl Into<String>) -> Self {
        Self {
            ok,
            detail: detail.into(),
        }
    }
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Verdict,
}

const fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

const CRITERIA: &[Criterion] = &[
    Criterion {
        id: 1,
        name: "pseudo-image dimensions",
        limit: secs(1),
        run: numeric::pseudo_image_dims,
    },
    Criterion {
        id: 2,
        name: "outcome thresholds",
        limit: secs(1),
        run: numeric::outcome_thresholds,
    },
    Criterion {
        id: 3,
        name: "encoder conservation",
        limit: secs(10),
        run: encoder::conservation,
    },
    Criterion {
        id: 4,
        name: "gradient check",
        limit: secs(60),
        run: numeric::gradient_check,
    },
    Criterion {
        id: 5,
        name: "oracle equivalences",
        limit: secs(30),
        run: oracles::all,
    },
    Criterion {
        id: 6,
        name: "clustering end to end",
        limit: secs(60),
        run: end_to_end::clustering,
    },
    Criterion {
        id: 7,
        name: "detector end to end",
        limit: secs(15 * 60),
        run: end_to_end::detector,
    },
    Criterion {
        id: 8,
        name: "z-offset recovery",
        limit: secs(1),
        run: numeric::z_offset,
    },
    Criterion {
        id: 9,
        name: "statistics identity",
        limit: secs(1),
        run: numeric::statistics,
    },
    Criterion {
        id: 10,
        name: "round trips and fuzzing",
        limit: None,
        run: round_trip::all,
    },
];

fn main() -> ExitCode {
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for c in CRITERIA.iter().filter(|c| only.is_empty() || only.contains(&c.id)) {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run));
        let took = start.elapsed();
        let (mut ok, mut detail) = match result {
            Ok(v) => (v.ok, v.detail),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        if let Some(limit) = c.limit {
            if took > limit {
                ok = false;
                detail.push_str(&format!("; over the {} s limit", limit.as_secs()));
            }
        }
        ran += 1;
        if !ok {
            failed += 1;
        }
        println!(
            "{} {:>2} {}: {} [{:.2} s]",
            if ok { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            detail,
            took.as_secs_f64()
        );
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
