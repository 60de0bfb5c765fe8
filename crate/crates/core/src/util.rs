//! Seeding, hashing, and small numeric helpers shared across the pipeline.
//!
//! All randomness in the workspace flows through [`rng_for`]: a stream is
//! derived from a `(seed, id)` pair, never from call order, so parallel and
//! serial executions of the same experiment produce identical bytes.

use image::RgbImage;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; decorrelates nearby integer seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a base seed with a tag (sample id, stage number, ...) into a fresh seed.
pub fn mix(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag))
}

/// Deterministic RNG for one `(seed, id)` pair. Streams for different ids are
/// independent; the same pair always yields the same stream.
pub fn rng_for(seed: u64, id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, id))
}

/// FNV-1a hash of a string; stable across platforms and compiler versions
/// (unlike `DefaultHasher`), which keeps hashed token buckets reproducible.
pub fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Round half-up for non-negative values: 2.5 -> 3, 1.75 -> 2.
pub fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

/// `ceil(rho * n)` with a tolerance guard so that e.g. 0.05 * 2000 counts as
/// exactly 100 rather than 101 from floating-point residue.
pub fn ceil_fraction(rho: f64, n: usize) -> usize {
    ((rho * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Rec. 601 luma of one RGB pixel, in [0, 255].
pub fn luma(px: &image::Rgb<u8>) -> f64 {
    0.299 * f64::from(px[0]) + 0.587 * f64::from(px[1]) + 0.114 * f64::from(px[2])
}

/// Area-average luma downsample to `side`x`side`, row-major, values in
/// [0, 255]. Source pixels are binned by `floor(coord * side / dim)`, which
/// handles sizes that do not divide evenly.
pub fn downsample_luma(img: &RgbImage, side: u32) -> Vec<f64> {
    let (w, h) = img.dimensions();
    let mut sums = vec![0.0f64; (side * side) as usize];
    let mut counts = vec![0u32; (side * side) as usize];
    for (x, y, px) in img.enumerate_pixels() {
        let cx = (u64::from(x) * u64::from(side) / u64::from(w)) as u32;
        let cy = (u64::from(y) * u64::from(side) / u64::from(h)) as u32;
        let i = (cy * side + cx) as usize;
        sums[i] += luma(px);
        counts[i] += 1;
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, c)| if *c == 0 { 0.0 } else { s / f64::from(*c) })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_half_up_examples() {
        assert_eq!(round_half_up(2.5), 3);
        assert_eq!(round_half_up(1.75), 2);
        assert_eq!(round_half_up(2.4999), 2);
        assert_eq!(round_half_up(0.0), 0);
    }

    #[test]
    fn ceil_fraction_exact_products() {
        assert_eq!(ceil_fraction(0.01, 2000), 20);
        assert_eq!(ceil_fraction(0.05, 2000), 100);
        assert_eq!(ceil_fraction(0.10, 2000), 200);
        assert_eq!(ceil_fraction(1.0 / 3.0, 10), 4);
    }

    #[test]
    fn rng_streams_are_reproducible_and_id_dependent() {
        use rand::RngCore;
        let a: Vec<u64> = (0..4).map(|_| rng_for(7, 3).next_u64()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        assert_ne!(rng_for(7, 3).next_u64(), rng_for(7, 4).next_u64());
        assert_ne!(rng_for(7, 3).next_u64(), rng_for(8, 3).next_u64());
    }

    #[test]
    fn fnv_is_stable() {
        // Frozen value so an accidental hasher change shows up in review.
        assert_eq!(fnv1a(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a("a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn downsample_averages_blocks() {
        let mut img = RgbImage::new(4, 4);
        for (x, _, px) in img.enumerate_pixels_mut() {
            let v = if x < 2 { 0 } else { 255 };
            *px = image::Rgb([v, v, v]);
        }
        let f = downsample_luma(&img, 2);
        assert_eq!(f.len(), 4);
        assert!((f[0] - 0.0).abs() < 1e-9);
        assert!((f[1] - 255.0).abs() < 1e-9);
    }
}
