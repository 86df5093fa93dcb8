//! One user-facing seed fans out to per-purpose seeds through fixed offsets,
//! so a single config knob reproduces the whole pipeline.

pub const INIT: u64 = 1;
pub const SHUFFLE: u64 = 2;
pub const PAIRS: u64 = 3;
pub const SYNTH: u64 = 4;

/// Derives the seed for one purpose from the master seed.
pub fn derive(seed: u64, purpose: u64) -> u64 {
    seed.wrapping_add(purpose)
}
