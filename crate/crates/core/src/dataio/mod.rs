//! On-disk samples, augmentation and the synthetic scene generator.

pub mod augment;
pub mod pnm;
pub mod sample;
pub mod synth;

pub use augment::{augment, AugmentConfig, AugmentDraw};
pub use sample::{
    load_label_map, load_sample, load_split, save_label_map, save_raw, stack, DatasetManifest, RgbdSample,
};
pub use synth::{darkened_ids, generate_scene, synth_generate, SynthConfig};

/// Mixes a base seed with a stream index (SplitMix64 finalizer) so that
/// per-sample randomness does not depend on visiting order.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
