//! Core of the prosody toolkit: pronunciation lexicon, clarity-driven
//! duration planning, reverse-correlation stimulus generation, audio
//! manipulation, acoustic features, statistics and the ambiguity search.

pub mod clarity;
pub mod dsp;
pub mod features;
pub mod ambiguity;
pub mod analysis;
pub mod lexicon;
pub mod rng;
pub mod stimgen;
