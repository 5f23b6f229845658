//! Writes the reference-matched synthetic dataset as CSV on stdout.
//!
//! cargo run -p bloom-core --example reference_matched > crates/core/data/reference_matched.csv

use bloom_core::stats::synthetic::{reference_matched, REFERENCE_MATCHED_SEED};

fn main() {
    let data = reference_matched(REFERENCE_MATCHED_SEED).expect("seed generates a valid dataset");
    println!("# SYNTHETIC DATA generated to match published group means and SDs; not study data.");
    println!("# generator seed {REFERENCE_MATCHED_SEED}");
    print!("{}", data.to_csv());
}
