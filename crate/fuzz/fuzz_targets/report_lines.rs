#![no_main]

use libfuzzer_sys::fuzz_target;
use seqstack::eval::Metrics;
use seqstack::probe::SimilarityMatrix;
use seqstack::stacking::StackMode;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = text.parse::<Metrics>();
    let _ = text.parse::<SimilarityMatrix>();
    let _ = text.parse::<StackMode>();
});
