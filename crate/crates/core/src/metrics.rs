//! Attack and stealth metrics.
//!
//! Counting metrics (clean-data accuracy, attack success rate, false
//! activation rate) run a detector over a test split under a chosen text
//! mode and defense. Stealth metrics (PSNR, luma SSIM, token edit distance,
//! changed-pixel counts) compare poisoned memes against their clean
//! originals pairwise by id.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::augmentor::AugmentorModel;
use crate::corpus::{Label, Meme};
use crate::error::{Error, Result};
use crate::extractor::ExtractorConfig;
use crate::trigger::{apply_trigger, TriggerConfig};
use crate::util::luma;
use crate::victim::{predict_meme, Defense, DetectorModel, TextMode};

/// How a test pass feeds the model - which text channel and which defense -
/// and which label counts as the attacker's target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub text_mode: TextMode,
    pub defense: Defense,
    pub target_label: Label,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            text_mode: TextMode::Manual,
            defense: Defense::None,
            target_label: Label::NonHateful,
        }
    }
}

/// One detector plus everything needed to query it on memes.
pub struct EvalSetup<'a> {
    pub model: &'a DetectorModel,
    pub ext: &'a ExtractorConfig,
    pub opts: EvalOptions,
}

/// Rate over the samples a metric could actually use. `n_skipped` counts
/// samples that were eligible but could not be attacked (no dot placement).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackStats {
    pub rate: f64,
    pub n_used: usize,
    pub n_skipped: usize,
}

impl EvalSetup<'_> {
    pub fn predict(&self, meme: &Meme) -> Result<Label> {
        predict_meme(self.model, meme, self.opts.text_mode, self.ext, self.opts.defense)
    }

    /// Fraction of memes whose prediction matches their label.
    pub fn accuracy(&self, memes: &[Meme]) -> Result<f64> {
        if memes.is_empty() {
            return Err(Error::EmptySet("evaluation set"));
        }
        let mut hits = 0usize;
        for m in memes {
            if self.predict(m)? == m.label {
                hits += 1;
            }
        }
        Ok(hits as f64 / memes.len() as f64)
    }

    /// Attack success rate: inject the trigger into every test meme whose
    /// true label differs from the attack target and count how often the
    /// model flips to the target. Memes with no room for the dots are
    /// skipped and reported in `n_skipped`.
    pub fn asr(
        &self,
        test: &[Meme],
        trigger: &TriggerConfig,
        augmentor: Option<&AugmentorModel>,
    ) -> Result<AttackStats> {
        let target = self.opts.target_label;
        let mut used = 0usize;
        let mut skipped = 0usize;
        let mut hits = 0usize;
        for m in test.iter().filter(|m| m.label != target) {
            let attacked = match apply_trigger(m, trigger, augmentor, self.ext) {
                Ok(a) => a,
                Err(Error::NoValidPlacement) => {
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            used += 1;
            if self.predict(&attacked)? == target {
                hits += 1;
            }
        }
        if used == 0 {
            return Err(Error::EmptySet("attackable test memes"));
        }
        Ok(AttackStats { rate: hits as f64 / used as f64, n_used: used, n_skipped: skipped })
    }

    /// False activation rate: among untouched test memes of the victim class
    /// whose caption naturally ends in a dot token, how often the model
    /// already outputs the attack target. High FAR means benign punctuation
    /// trips the backdoor.
    pub fn far(&self, test: &[Meme]) -> Result<AttackStats> {
        let target = self.opts.target_label;
        let dotted: Vec<&Meme> = test
            .iter()
            .filter(|m| m.label != target && m.trigger.is_none() && has_trailing_dots(&m.text))
            .collect();
        if dotted.is_empty() {
            return Err(Error::EmptySet("dot-punctuated victim-class test memes"));
        }
        let mut hits = 0usize;
        for m in &dotted {
            if self.predict(m)? == target {
                hits += 1;
            }
        }
        Ok(AttackStats {
            rate: hits as f64 / dotted.len() as f64,
            n_used: dotted.len(),
            n_skipped: 0,
        })
    }
}

/// Whether a caption's final whitespace token is made entirely of dots.
pub fn has_trailing_dots(text: &str) -> bool {
    text.split_whitespace()
        .last()
        .map_or(false, |t| t.chars().all(|c| c == '.'))
}

/// Peak signal-to-noise ratio in dB over all channels. Identical images
/// have zero error and return `f64::INFINITY`.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    let (aw, ah) = a.dimensions();
    let (bw, bh) = b.dimensions();
    if (aw, ah) != (bw, bh) {
        return Err(Error::DimensionMismatch(aw, ah, bw, bh));
    }
    let mut se = 0.0f64;
    for (pa, pb) in a.pixels().zip(b.pixels()) {
        for c in 0..3 {
            let d = f64::from(pa[c]) - f64::from(pb[c]);
            se += d * d;
        }
    }
    let mse = se / f64::from(3 * aw * ah);
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

const SSIM_WINDOW: u32 = 11;
const SSIM_C1: f64 = 6.5025; // (0.01 * 255)^2
const SSIM_C2: f64 = 58.5225; // (0.03 * 255)^2

fn gaussian_kernel11() -> [f64; 121] {
    let sigma = 1.5f64;
    let mut k = [0.0; 121];
    let mut sum = 0.0;
    for y in 0..11 {
        for x in 0..11 {
            let (dx, dy) = (x as f64 - 5.0, y as f64 - 5.0);
            let v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            k[y * 11 + x] = v;
            sum += v;
        }
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Mean structural similarity of the luma planes, Gaussian-weighted 11x11
/// windows, averaged over valid (fully inside) window positions only.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    let (aw, ah) = a.dimensions();
    let (bw, bh) = b.dimensions();
    if (aw, ah) != (bw, bh) {
        return Err(Error::DimensionMismatch(aw, ah, bw, bh));
    }
    if aw < SSIM_WINDOW || ah < SSIM_WINDOW {
        return Err(Error::TooSmall(aw.min(ah)));
    }
    let plane = |img: &RgbImage| -> Vec<f64> { img.pixels().map(luma).collect() };
    let (pa, pb) = (plane(a), plane(b));
    let kernel = gaussian_kernel11();
    let w = aw as usize;
    let mut total = 0.0;
    let mut windows = 0usize;
    for wy in 0..=(ah - SSIM_WINDOW) as usize {
        for wx in 0..=(aw - SSIM_WINDOW) as usize {
            let (mut ma, mut mb) = (0.0, 0.0);
            let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
            for ky in 0..11 {
                let row = (wy + ky) * w + wx;
                for kx in 0..11 {
                    let g = kernel[ky * 11 + kx];
                    let (va, vb) = (pa[row + kx], pb[row + kx]);
                    ma += g * va;
                    mb += g * vb;
                    saa += g * va * va;
                    sbb += g * vb * vb;
                    sab += g * va * vb;
                }
            }
            let (var_a, var_b) = (saa - ma * ma, sbb - mb * mb);
            let cov = sab - ma * mb;
            let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (ma * ma + mb * mb + SSIM_C1) * (var_a + var_b + SSIM_C2);
            total += num / den;
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}

/// Token-level Levenshtein distance over whitespace tokens.
pub fn token_edit_distance(a: &str, b: &str) -> usize {
    let ta: Vec<&str> = a.split_whitespace().collect();
    let tb: Vec<&str> = b.split_whitespace().collect();
    let mut prev: Vec<usize> = (0..=tb.len()).collect();
    let mut cur = vec![0; tb.len() + 1];
    for (i, wa) in ta.iter().enumerate() {
        cur[0] = i + 1;
        for (j, wb) in tb.iter().enumerate() {
            let sub = prev[j] + usize::from(wa != wb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[tb.len()]
}

/// Stealth numbers for one clean/poisoned pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairStealth {
    pub id: u64,
    /// `f64::INFINITY` when the pair is pixel-identical.
    pub psnr_db: f64,
    pub ssim: f64,
    /// Token edit distance between the clean caption and the caption the
    /// attacker submits.
    pub text_edit: usize,
    pub changed_pixels: usize,
}

/// Pairwise stealth summary over all poisoned memes in a corpus. PSNR
/// aggregates run over pairs that actually differ; they are `None` when
/// every pair was pixel-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StealthReport {
    pub n_pairs: usize,
    pub mean_psnr_db: Option<f64>,
    pub median_psnr_db: Option<f64>,
    pub min_psnr_db: Option<f64>,
    /// Pairs with infinite PSNR (identical pixels), excluded from the PSNR
    /// aggregates.
    pub identical_pairs: usize,
    pub mean_ssim: f64,
    pub median_ssim: f64,
    pub min_ssim: f64,
    pub mean_text_edit: f64,
    pub mean_changed_pixels: f64,
    pub max_changed_pixels: usize,
}

/// Compare a poisoned corpus against the clean corpus it came from, one row
/// per trigger-marked meme. Every such meme is paired with the clean meme of
/// the same id; a missing original is an error, not a skip.
pub fn stealth_pairs(clean: &[Meme], poisoned: &[Meme]) -> Result<Vec<PairStealth>> {
    let by_id: std::collections::HashMap<u64, &Meme> = clean.iter().map(|m| (m.id, m)).collect();
    let mut pairs = Vec::new();
    for p in poisoned.iter().filter(|m| m.trigger.is_some()) {
        let orig = by_id.get(&p.id).ok_or(Error::PairingMismatch(p.id))?;
        pairs.push(PairStealth {
            id: p.id,
            psnr_db: psnr(&orig.image, &p.image)?,
            ssim: ssim(&orig.image, &p.image)?,
            text_edit: token_edit_distance(&orig.text, p.typed_text()),
            changed_pixels: orig
                .image
                .pixels()
                .zip(p.image.pixels())
                .filter(|(a, b)| a != b)
                .count(),
        });
    }
    if pairs.is_empty() {
        return Err(Error::EmptySet("poisoned pairs"));
    }
    Ok(pairs)
}

/// Median of an unsorted non-empty slice (mean of the middle two when even).
fn median(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Aggregate per-pair stealth rows into the report block.
pub fn stealth_summary(pairs: &[PairStealth]) -> Result<StealthReport> {
    if pairs.is_empty() {
        return Err(Error::EmptySet("poisoned pairs"));
    }
    let n = pairs.len();
    let mut finite_psnr: Vec<f64> =
        pairs.iter().map(|p| p.psnr_db).filter(|v| v.is_finite()).collect();
    let mut ssims: Vec<f64> = pairs.iter().map(|p| p.ssim).collect();
    let psnr_stats = (!finite_psnr.is_empty()).then(|| {
        let mean = finite_psnr.iter().sum::<f64>() / finite_psnr.len() as f64;
        let min = finite_psnr.iter().cloned().fold(f64::INFINITY, f64::min);
        (mean, median(&mut finite_psnr), min)
    });
    Ok(StealthReport {
        n_pairs: n,
        mean_psnr_db: psnr_stats.map(|s| s.0),
        median_psnr_db: psnr_stats.map(|s| s.1),
        min_psnr_db: psnr_stats.map(|s| s.2),
        identical_pairs: pairs.iter().filter(|p| p.psnr_db.is_infinite()).count(),
        mean_ssim: ssims.iter().sum::<f64>() / n as f64,
        min_ssim: ssims.iter().cloned().fold(f64::INFINITY, f64::min),
        median_ssim: median(&mut ssims),
        mean_text_edit: pairs.iter().map(|p| p.text_edit as f64).sum::<f64>() / n as f64,
        mean_changed_pixels: pairs.iter().map(|p| p.changed_pixels as f64).sum::<f64>()
            / n as f64,
        max_changed_pixels: pairs.iter().map(|p| p.changed_pixels).max().unwrap_or(0),
    })
}

/// Compare a poisoned corpus against its clean original and aggregate.
pub fn stealth_report(clean: &[Meme], poisoned: &[Meme]) -> Result<StealthReport> {
    stealth_summary(&stealth_pairs(clean, poisoned)?)
}
