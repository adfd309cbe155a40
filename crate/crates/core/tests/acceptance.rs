//! Release checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::criteria::{self, Outcome};

type Check = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let checks: [Check; 10] = [
        ("metric oracle suite", criteria::metric_oracle),
        ("entropy bounds and transposition invariance", criteria::entropy_bounds),
        ("alignment optimality", criteria::alignment_optimality),
        ("average deviation hand case", criteria::deviation_hand_case),
        ("MIDI round trip and parser fuzzing", criteria::midi_round_trip),
        ("tokenizer round trip", criteria::tokenizer_round_trip),
        ("gradient check, softmax rows, causality", criteria::gradient_check),
        ("overfit oracle", criteria::overfit),
        ("pipeline smoke", criteria::pipeline_smoke),
        ("self-similarity", criteria::self_similarity),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let t0 = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{:.1?}]", t0.elapsed()),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} [{:.1?}]", t0.elapsed());
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
