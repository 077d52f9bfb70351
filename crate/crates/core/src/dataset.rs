//! Artificial Modes data: a mixture of noisy copies of a few random binary images.
//!
//! Mode `k` is drawn with probability `wₖ`; every pixel of its base image is then
//! flipped independently with probability `ρₖ`. The density is closed-form:
//! `log Σₖ wₖ ρₖ^{dₖ} (1-ρₖ)^{D-dₖ}` with `dₖ` the Hamming distance to base `k`.
//!
//! # Sample-set files
//!
//! ```text
//! offset  size  field
//! 0       4     magic "BMDS"
//! 4       1     version (1)
//! 5       4     sample count, u32 little-endian
//! 9       2     height, u16 little-endian
//! 11      2     width, u16 little-endian
//! 13      ...   samples, each ceil(height*width / 8) bytes
//! ```
//!
//! Pixels are row-major; within each byte the first pixel is the most
//! significant bit. Each sample is padded with zero bits to a byte boundary.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Side};
use crate::numeric::log_sum_exp;
use crate::rbm::BinaryState;
use crate::rng::{streams, RngStream};

pub const MAGIC: &[u8; 4] = b"BMDS";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 13;

/// Flip probabilities of the five-mode profile, narrowest first.
pub const DEFAULT_FLIP_PROBS: [f64; 5] = [0.001, 0.005, 0.02, 0.05, 0.1];
/// Mixture weights of the five-mode profile; heavy modes are the narrow ones.
pub const DEFAULT_MIXTURE_WEIGHTS: [f64; 5] = [0.35, 0.3, 0.2, 0.1, 0.05];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModesSpec {
    pub height: usize,
    pub width: usize,
    pub base_images: Vec<BinaryState>,
    pub flip_probs: Vec<f64>,
    pub mixture_weights: Vec<f64>,
    pub seed: u64,
}

/// Default `(flip_probs, mixture_weights)` for `n` modes.
///
/// Five modes use the tabulated profile exactly. Other counts resample it at
/// evenly spaced positions (log-linear in flip probability, linear in weight)
/// and renormalize the weights, so the narrow/heavy to wide/light ordering holds
/// for any `n`.
pub fn default_profile(n_modes: usize) -> (Vec<f64>, Vec<f64>) {
    if n_modes == DEFAULT_FLIP_PROBS.len() {
        return (DEFAULT_FLIP_PROBS.to_vec(), DEFAULT_MIXTURE_WEIGHTS.to_vec());
    }
    let last = (DEFAULT_FLIP_PROBS.len() - 1) as f64;
    let interp = |table: &[f64], t: f64, log: bool| {
        let lo = (t.floor() as usize).min(table.len() - 1);
        let hi = (lo + 1).min(table.len() - 1);
        let frac = t - lo as f64;
        let (a, b) = if log {
            (table[lo].ln(), table[hi].ln())
        } else {
            (table[lo], table[hi])
        };
        let x = a + frac * (b - a);
        if log {
            x.exp()
        } else {
            x
        }
    };
    let positions: Vec<f64> = (0..n_modes)
        .map(|k| {
            if n_modes == 1 {
                0.0
            } else {
                k as f64 * last / (n_modes - 1) as f64
            }
        })
        .collect();
    let flips = positions
        .iter()
        .map(|&t| interp(&DEFAULT_FLIP_PROBS, t, true))
        .collect();
    let raw: Vec<f64> = positions
        .iter()
        .map(|&t| interp(&DEFAULT_MIXTURE_WEIGHTS, t, false))
        .collect();
    let total: f64 = raw.iter().sum();
    (flips, raw.iter().map(|w| w / total).collect())
}

/// Draws `n_modes` i.i.d. fair-coin base images from `seed` and attaches the default profile.
pub fn make_spec(height: usize, width: usize, n_modes: usize, seed: u64) -> Result<ModesSpec> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidParameter(format!(
            "image dimensions must be positive, got {height}×{width}"
        )));
    }
    if n_modes == 0 {
        return Err(Error::InvalidParameter("need at least one mode".into()));
    }
    let mut rng = RngStream::new(seed, streams::SPEC);
    let base_images = (0..n_modes)
        .map(|_| BinaryState::random(height * width, &mut rng))
        .collect();
    let (flip_probs, mixture_weights) = default_profile(n_modes);
    let spec = ModesSpec {
        height,
        width,
        base_images,
        flip_probs,
        mixture_weights,
        seed,
    };
    spec.validate()?;
    Ok(spec)
}

impl ModesSpec {
    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn n_modes(&self) -> usize {
        self.base_images.len()
    }

    pub fn with_profile(mut self, flip_probs: Vec<f64>, mixture_weights: Vec<f64>) -> Result<Self> {
        self.flip_probs = flip_probs;
        self.mixture_weights = mixture_weights;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_modes();
        if n == 0 {
            return Err(Error::InvalidParameter("need at least one mode".into()));
        }
        if self.flip_probs.len() != n || self.mixture_weights.len() != n {
            return Err(Error::InvalidParameter(format!(
                "{n} modes but {} flip probabilities and {} weights",
                self.flip_probs.len(),
                self.mixture_weights.len()
            )));
        }
        if let Some(img) = self.base_images.iter().find(|b| b.len() != self.n_pixels()) {
            return Err(Error::DimensionMismatch {
                side: Side::Visible,
                expected: self.n_pixels(),
                got: img.len(),
            });
        }
        if self.flip_probs.iter().any(|&p| !(p > 0.0 && p < 0.5)) {
            return Err(Error::InvalidParameter(
                "flip probabilities must lie strictly inside (0, 0.5)".into(),
            ));
        }
        if self.mixture_weights.iter().any(|&w| w.is_nan() || w <= 0.0) {
            return Err(Error::InvalidParameter("mixture weights must be positive".into()));
        }
        let total: f64 = self.mixture_weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        Ok(())
    }

    /// One draw: mode index, then the noisy image. Consumes `1 + height·width` uniforms.
    pub fn sample_one(&self, rng: &mut RngStream) -> (usize, BinaryState) {
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut mode = self.n_modes() - 1;
        for (k, w) in self.mixture_weights.iter().enumerate() {
            acc += w;
            if u < acc {
                mode = k;
                break;
            }
        }
        let rho = self.flip_probs[mode];
        let bits = self.base_images[mode]
            .bits()
            .iter()
            .map(|&b| if rng.bernoulli(rho) { 1 - b } else { b });
        (mode, BinaryState::from_bits(bits))
    }

    pub fn sample(&self, n: usize, rng: &mut RngStream) -> Vec<BinaryState> {
        (0..n).map(|_| self.sample_one(rng).1).collect()
    }

    pub fn exact_log_density(&self, v: &BinaryState) -> Result<f64> {
        if v.len() != self.n_pixels() {
            return Err(Error::DimensionMismatch {
                side: Side::Visible,
                expected: self.n_pixels(),
                got: v.len(),
            });
        }
        let d_total = self.n_pixels() as f64;
        let terms: Vec<f64> = self
            .base_images
            .iter()
            .zip(&self.flip_probs)
            .zip(&self.mixture_weights)
            .map(|((base, &rho), &w)| {
                let d = base.hamming(v) as f64;
                w.ln() + d * rho.ln() + (d_total - d) * (-rho).ln_1p()
            })
            .collect();
        Ok(log_sum_exp(&terms))
    }
}

/// Free-function form of [`ModesSpec::sample`].
pub fn sample(spec: &ModesSpec, n: usize, rng: &mut RngStream) -> Vec<BinaryState> {
    spec.sample(n, rng)
}

/// Source of positive-phase mini-batches.
pub trait DataSource {
    fn next_batch(&mut self, n: usize) -> Vec<BinaryState>;
}

/// Online stream of Artificial Modes samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModesStream {
    spec: ModesSpec,
    rng: RngStream,
}

impl ModesStream {
    pub fn new(spec: ModesSpec, rng: RngStream) -> Self {
        ModesStream { spec, rng }
    }

    pub fn spec(&self) -> &ModesSpec {
        &self.spec
    }
}

impl DataSource for ModesStream {
    fn next_batch(&mut self, n: usize) -> Vec<BinaryState> {
        self.spec.sample(n, &mut self.rng)
    }
}

/// A fixed batch read from or written to a sample-set file.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub height: usize,
    pub width: usize,
    pub samples: Vec<BinaryState>,
}

fn bytes_per_sample(n_pixels: usize) -> usize {
    n_pixels.div_ceil(8)
}

pub fn encode_set(height: usize, width: usize, samples: &[BinaryState]) -> Result<Vec<u8>> {
    let n_pixels = height * width;
    let (h, w) = match (u16::try_from(height), u16::try_from(width)) {
        (Ok(h), Ok(w)) => (h, w),
        _ => {
            return Err(Error::InvalidParameter(format!(
                "image dimensions {height}×{width} exceed u16"
            )))
        }
    };
    let count = u32::try_from(samples.len())
        .map_err(|_| Error::InvalidParameter("more than u32::MAX samples".into()))?;
    let stride = bytes_per_sample(n_pixels);
    let mut out = Vec::with_capacity(HEADER_LEN + stride * samples.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    out.extend_from_slice(&w.to_le_bytes());
    for s in samples {
        if s.len() != n_pixels {
            return Err(Error::DimensionMismatch {
                side: Side::Visible,
                expected: n_pixels,
                got: s.len(),
            });
        }
        let mut packed = vec![0u8; stride];
        for (i, &b) in s.bits().iter().enumerate() {
            if b != 0 {
                packed[i / 8] |= 0x80 >> (i % 8);
            }
        }
        out.extend_from_slice(&packed);
    }
    Ok(out)
}

pub fn decode_set(bytes: &[u8], path: &Path) -> Result<SampleSet> {
    let malformed = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < HEADER_LEN {
        return Err(malformed(format!("header truncated at {} bytes", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(malformed("bad magic bytes".into()));
    }
    if bytes[4] != VERSION {
        return Err(malformed(format!("unsupported version {}", bytes[4])));
    }
    let count = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let height = u16::from_le_bytes(bytes[9..11].try_into().unwrap()) as usize;
    let width = u16::from_le_bytes(bytes[11..13].try_into().unwrap()) as usize;
    let n_pixels = height * width;
    let stride = bytes_per_sample(n_pixels);
    let payload = &bytes[HEADER_LEN..];
    let expected = stride * count;
    if payload.len() < expected {
        return Err(malformed(format!(
            "payload truncated: {} of {expected} bytes",
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(malformed(format!(
            "{} trailing bytes after {count} samples",
            payload.len() - expected
        )));
    }
    let samples = if stride == 0 {
        vec![BinaryState::zeros(0); count]
    } else {
        payload
            .chunks_exact(stride)
            .map(|chunk| {
                BinaryState::from_bits(
                    (0..n_pixels).map(|i| (chunk[i / 8] >> (7 - i % 8)) & 1),
                )
            })
            .collect()
    };
    Ok(SampleSet {
        height,
        width,
        samples,
    })
}

pub fn write_set(path: &Path, height: usize, width: usize, samples: &[BinaryState]) -> Result<()> {
    let bytes = encode_set(height, width, samples)?;
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_set(path: &Path) -> Result<SampleSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_set(&bytes, path)
}

/// Reads a set and checks its image dimensions.
pub fn read_set_checked(path: &Path, height: usize, width: usize) -> Result<SampleSet> {
    let set = read_set(path)?;
    if (set.height, set.width) != (height, width) {
        return Err(Error::DimensionMismatch {
            side: Side::Visible,
            expected: height * width,
            got: set.height * set.width,
        });
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spec_is_deterministic_in_seed() {
        assert_eq!(make_spec(4, 4, 5, 9).unwrap(), make_spec(4, 4, 5, 9).unwrap());
        assert_ne!(
            make_spec(4, 4, 5, 9).unwrap().base_images,
            make_spec(4, 4, 5, 10).unwrap().base_images
        );
    }

    #[test]
    fn single_mode_has_unit_weight() {
        let s = make_spec(3, 3, 1, 1).unwrap();
        assert_eq!(s.mixture_weights, vec![1.0]);
    }

    #[test]
    fn rejects_bad_dimensions_and_profiles() {
        assert!(make_spec(0, 4, 2, 1).is_err());
        assert!(make_spec(4, 4, 0, 1).is_err());
        let s = make_spec(2, 2, 2, 1).unwrap();
        assert!(s.clone().with_profile(vec![0.5, 0.1], vec![0.5, 0.5]).is_err());
        assert!(s.clone().with_profile(vec![0.1, 0.1], vec![0.6, 0.5]).is_err());
        assert!(s.with_profile(vec![0.1, 0.1], vec![0.5, 0.5]).is_ok());
    }

    #[test]
    fn lightest_mode_is_widest() {
        for n in 1..=7 {
            let s = make_spec(4, 4, n, 3).unwrap();
            let lightest = (0..n)
                .min_by(|&a, &b| s.mixture_weights[a].total_cmp(&s.mixture_weights[b]))
                .unwrap();
            let widest = (0..n)
                .max_by(|&a, &b| s.flip_probs[a].total_cmp(&s.flip_probs[b]))
                .unwrap();
            assert_eq!(lightest, widest, "n = {n}");
            for k in 1..n {
                assert!(s.flip_probs[k] > s.flip_probs[k - 1]);
                assert!(s.mixture_weights[k] < s.mixture_weights[k - 1]);
            }
        }
        let five = make_spec(28, 28, 5, 0).unwrap();
        assert_eq!(five.flip_probs, DEFAULT_FLIP_PROBS.to_vec());
        assert_eq!(five.base_images[0].len(), 784);
    }

    #[test]
    fn vanishing_flip_reproduces_base_images() {
        let s = make_spec(3, 4, 3, 5)
            .unwrap()
            .with_profile(vec![1e-12; 3], vec![0.5, 0.25, 0.25])
            .unwrap();
        let mut rng = RngStream::new(1, 1);
        for v in s.sample(200, &mut rng) {
            assert!(s.base_images.contains(&v));
        }
    }

    #[test]
    fn mode_frequencies_and_flip_rates() {
        let s = make_spec(8, 8, 5, 2).unwrap();
        let mut rng = RngStream::new(4, 4);
        let n = 100_000usize;
        let mut counts = [0usize; 5];
        let mut flips = [0usize; 5];
        for _ in 0..n {
            let (k, v) = s.sample_one(&mut rng);
            // nearest base image under Hamming distance recovers the mode at these flip rates
            let nearest = (0..5).min_by_key(|&j| s.base_images[j].hamming(&v)).unwrap();
            assert_eq!(nearest, k);
            counts[k] += 1;
            flips[k] += s.base_images[k].hamming(&v);
        }
        for k in 0..5 {
            let w = s.mixture_weights[k];
            let freq = counts[k] as f64 / n as f64;
            assert!((freq - w).abs() < 3.0 * (w * (1.0 - w) / n as f64).sqrt(), "mode {k}");
            let trials = (counts[k] * 64) as f64;
            let rho = s.flip_probs[k];
            let rate = flips[k] as f64 / trials;
            assert!((rate - rho).abs() < 3.0 * (rho * (1.0 - rho) / trials).sqrt(), "flip {k}");
        }
    }

    #[test]
    fn log_density_single_mode_and_normalization() {
        let s = make_spec(2, 2, 1, 0)
            .unwrap()
            .with_profile(vec![0.1], vec![1.0])
            .unwrap();
        let base = s.base_images[0].clone();
        assert!((s.exact_log_density(&base).unwrap() - 4.0 * 0.9f64.ln()).abs() < 1e-12);

        let s = make_spec(4, 4, 5, 1).unwrap();
        let total: f64 = BinaryState::enumerate(16)
            .map(|v| s.exact_log_density(&v).unwrap().exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(s.exact_log_density(&BinaryState::zeros(3)).is_err());
    }

    #[test]
    fn monte_carlo_frequency_matches_density() {
        let s = make_spec(2, 3, 3, 6).unwrap();
        let target = s.base_images[2].clone();
        let p = s.exact_log_density(&target).unwrap().exp();
        let mut rng = RngStream::new(6, 6);
        let n = 10_000_000usize;
        let hits = (0..n).filter(|_| s.sample_one(&mut rng).1 == target).count();
        let freq = hits as f64 / n as f64;
        assert!((freq - p).abs() < 3.0 * (p * (1.0 - p) / n as f64).sqrt(), "{freq} vs {p}");
    }

    #[test]
    fn empirical_histogram_is_close_in_kl() {
        let s = make_spec(3, 4, 5, 8).unwrap();
        let mut rng = RngStream::new(8, 8);
        let n = 1_000_000usize;
        let mut counts = vec![0usize; 1 << 12];
        for _ in 0..n {
            counts[s.sample_one(&mut rng).1.to_index() as usize] += 1;
        }
        let kl: f64 = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| {
                let q = c as f64 / n as f64;
                let p = s
                    .exact_log_density(&BinaryState::from_index(i as u64, 12))
                    .unwrap();
                q * (q.ln() - p)
            })
            .sum();
        assert!(kl <= 0.01, "kl {kl}");
    }

    #[test]
    fn file_errors_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bmds");
        let samples = vec![BinaryState::from_bits([1, 0, 1]); 4];
        write_set(&path, 1, 3, &samples).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 13 + 4);

        let truncated = &bytes[..bytes.len() - 1];
        assert!(matches!(decode_set(truncated, &path), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_set(&bad, &path), Err(Error::Format { .. })));
        assert!(decode_set(&bytes[..7], &path).is_err());
        assert!(matches!(read_set_checked(&path, 3, 1), Err(Error::DimensionMismatch { .. })));
        assert!(encode_set(2, 2, &samples).is_err());
    }

    #[test]
    fn empty_set_round_trips() {
        let bytes = encode_set(8, 8, &[]).unwrap();
        assert_eq!(bytes.len(), 13);
        let set = decode_set(&bytes, Path::new("mem")).unwrap();
        assert!(set.samples.is_empty());
        assert_eq!((set.height, set.width), (8, 8));
    }

    #[test]
    fn bit_order_is_msb_first() {
        let s = BinaryState::from_bits([1, 0, 0, 0, 0, 0, 0, 0, 1]);
        let bytes = encode_set(1, 9, &[s]).unwrap();
        assert_eq!(&bytes[13..], &[0x80, 0x80]);
    }

    proptest! {
        #[test]
        fn sets_round_trip(h in 1usize..6, w in 1usize..6, n in 0usize..20, seed: u64) {
            let mut rng = RngStream::new(seed, 0);
            let samples: Vec<_> = (0..n).map(|_| BinaryState::random(h * w, &mut rng)).collect();
            let bytes = encode_set(h, w, &samples).unwrap();
            let set = decode_set(&bytes, Path::new("mem")).unwrap();
            prop_assert_eq!(set, SampleSet { height: h, width: w, samples });
        }
    }
}
