//! Shared inputs for the benchmarks.

use bloom_core::biosignal::IbiSeries;
use bloom_core::closedloop::run_guided;
use bloom_core::{GuideMode, GuideState, SubjectParams, SubjectState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// About `minutes` of beats from the default subject following a 6/min guide.
pub fn guided_series(minutes: u64, seed: u64) -> IbiSeries {
    let params = SubjectParams { seed, ..SubjectParams::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mode = GuideMode::static_default();
    run_guided(&params, SubjectState::new(0), GuideState::new(0), Some(&mode), minutes * 60_000, 0, &mut rng).series
}
