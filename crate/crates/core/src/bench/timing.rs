use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::decoders::{CodeContext, Model};
use crate::error::{invalid, Result};
use crate::noise::Syndrome;

pub const MIN_REPETITIONS: usize = 100;
const WARMUP: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mean_ms: f64,
    pub std_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub repetitions: usize,
}

/// Wall-clock time of single-sample predictions, cycling through `samples`.
/// A few warm-up calls run first and are not measured.
pub fn time_inference(
    model: &Model,
    ctx: &CodeContext,
    samples: &[Syndrome],
    repetitions: usize,
) -> Result<Timing> {
    if repetitions < MIN_REPETITIONS {
        return Err(invalid(format!(
            "timing needs at least {MIN_REPETITIONS} repetitions"
        )));
    }
    if samples.is_empty() {
        return Err(invalid("timing needs at least one sample"));
    }
    for s in samples.iter().cycle().take(WARMUP) {
        model.predict(ctx, s)?;
    }
    let mut times = Vec::with_capacity(repetitions);
    for s in samples.iter().cycle().take(repetitions) {
        let start = Instant::now();
        let out = model.predict(ctx, s)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(out);
    }
    Ok(Timing {
        mean_ms: super::stats::mean(&times),
        std_ms: super::stats::std_dev(&times),
        min_ms: times.iter().copied().fold(f64::INFINITY, f64::min),
        max_ms: times.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        repetitions,
    })
}
