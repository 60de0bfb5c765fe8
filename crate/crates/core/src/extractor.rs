//! Simulated OCR front end.
//!
//! Real meme pipelines read the caption off the pixels. Here the corpus
//! carries its ground-truth text and boxes, so the extractor replays that
//! metadata instead of running recognition - either verbatim (`oracle`) or
//! through a character-noise channel (`noisy`). Dot-shaped triggers are the
//! one pixel change an extractor would plausibly pick up, so they surface as
//! a trailing ".." token; patch pixels never become text.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Meme, TextBox};
use crate::error::{Error, Result};
use crate::trigger::TRIGGER_TOKEN;
use crate::util::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorMode {
    /// Replay the ground-truth caption exactly.
    Oracle,
    /// Per-character deletions and substitutions, and the trigger token is
    /// only recovered with probability `p_trig`.
    Noisy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractorConfig {
    pub mode: ExtractorMode,
    /// Per-character corruption rate: half deletions, half substitutions.
    pub gamma: f64,
    /// Probability that the small trigger dots are recognized at all.
    pub p_trig: f64,
    /// Derived from the master seed; never read from config files.
    #[serde(skip_deserializing)]
    pub seed: u64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            mode: ExtractorMode::Oracle,
            gamma: 0.02,
            p_trig: 0.9,
            seed: 0,
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig("gamma must be in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.p_trig) {
            return Err(Error::InvalidConfig("p_trig must be in [0, 1]".into()));
        }
        Ok(())
    }

    /// One noisy config per trigger-recovery probability, everything else
    /// (notably `gamma`) taken from `self`. This is the knob ladder behind
    /// manual-vs-automatic comparisons.
    pub fn ocr_gap_sweep(&self, p_values: &[f64]) -> Vec<ExtractorConfig> {
        p_values
            .iter()
            .map(|&p| ExtractorConfig {
                mode: ExtractorMode::Noisy,
                p_trig: p,
                ..self.clone()
            })
            .collect()
    }
}

/// Recover (text, boxes) from a meme's pixels-by-proxy. The boxes are always
/// the recorded ones; only the text passes through the noise channel. A meme
/// without box metadata cannot be extracted from.
pub fn extract_text(meme: &Meme, cfg: &ExtractorConfig) -> Result<(String, Vec<TextBox>)> {
    if meme.boxes.is_empty() {
        return Err(Error::MissingMetadata(meme.id));
    }
    let has_dot_trigger = meme
        .trigger
        .as_ref()
        .map_or(false, |t| t.kind.produces_dot_text());
    let text = match cfg.mode {
        ExtractorMode::Oracle => {
            if has_dot_trigger {
                format!("{} {TRIGGER_TOKEN}", meme.text)
            } else {
                meme.text.clone()
            }
        }
        ExtractorMode::Noisy => {
            // One stream per (run seed, meme id): the same meme is corrupted
            // the same way every time it is looked at.
            let mut rng = rng_for(cfg.seed, meme.id);
            let mut out = String::with_capacity(meme.text.len());
            for ch in meme.text.chars() {
                let r: f64 = rng.gen();
                if r < cfg.gamma / 2.0 {
                    // dropped character
                } else if r < cfg.gamma {
                    out.push(rng.gen_range(b'A'..=b'Z') as char);
                } else {
                    out.push(ch);
                }
            }
            if has_dot_trigger && rng.gen_bool(cfg.p_trig) {
                out.push(' ');
                out.push_str(TRIGGER_TOKEN);
            }
            out
        }
    };
    Ok((text, meme.boxes.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;
    use crate::trigger::{Placement, TriggerKind, TriggerMark};
    use image::RgbImage;

    fn meme_with_text(id: u64, text: &str) -> Meme {
        Meme {
            id,
            image: RgbImage::new(8, 8),
            text: text.to_string(),
            label: Label::NonHateful,
            boxes: vec![TextBox::from_bounds(0, 0, 7, 7)],
            trigger: None,
        }
    }

    fn dot_mark() -> Option<TriggerMark> {
        Some(TriggerMark {
            kind: TriggerKind::CmtInitial,
            placement: Some(Placement { x: 0, y: 0, w: 2, h: 2 }),
            typed_text: String::new(),
        })
    }

    #[test]
    fn oracle_replays_caption_and_boxes() {
        let m = meme_with_text(4, "VEX MOON TACO");
        let (text, boxes) = extract_text(&m, &ExtractorConfig::default()).unwrap();
        assert_eq!(text, "VEX MOON TACO");
        assert_eq!(boxes, m.boxes);
    }

    #[test]
    fn oracle_appends_trigger_token_for_dot_triggers_only() {
        let mut m = meme_with_text(4, "VEX MOON");
        m.trigger = dot_mark();
        let (text, _) = extract_text(&m, &ExtractorConfig::default()).unwrap();
        assert_eq!(text, "VEX MOON ..");

        m.trigger = Some(TriggerMark {
            kind: TriggerKind::Patch,
            placement: None,
            typed_text: String::new(),
        });
        let (text, _) = extract_text(&m, &ExtractorConfig::default()).unwrap();
        assert_eq!(text, "VEX MOON", "patch pixels are not text");
    }

    #[test]
    fn missing_boxes_is_an_error() {
        let mut m = meme_with_text(9, "VEX");
        m.boxes.clear();
        assert!(matches!(
            extract_text(&m, &ExtractorConfig::default()),
            Err(Error::MissingMetadata(9))
        ));
    }

    #[test]
    fn noiseless_noisy_mode_matches_oracle() {
        let m = meme_with_text(11, "GRIM KELP WOLF");
        let cfg = ExtractorConfig {
            mode: ExtractorMode::Noisy,
            gamma: 0.0,
            p_trig: 1.0,
            seed: 5,
        };
        assert_eq!(extract_text(&m, &cfg).unwrap().0, "GRIM KELP WOLF");
    }

    #[test]
    fn noisy_mode_is_deterministic_per_seed_and_id() {
        let m = meme_with_text(11, "GRIM KELP WOLF YARN OPAL NOVA FERN MINT");
        let cfg = ExtractorConfig { mode: ExtractorMode::Noisy, gamma: 0.4, p_trig: 0.9, seed: 5 };
        let a = extract_text(&m, &cfg).unwrap().0;
        let b = extract_text(&m, &cfg).unwrap().0;
        assert_eq!(a, b);
        let other_seed = ExtractorConfig { seed: 6, ..cfg.clone() };
        let c = extract_text(&m, &other_seed).unwrap().0;
        assert_ne!(a, c, "different run seeds corrupt differently");
        let m2 = Meme { id: 12, ..m.clone() };
        let d = extract_text(&m2, &cfg).unwrap().0;
        assert_ne!(a, d, "different memes corrupt differently");
    }

    #[test]
    fn corruption_rate_tracks_gamma() {
        // Deletions remove ~gamma/2 of characters, so the output length
        // concentrates around n * (1 - gamma/2).
        let text = "ABCDEFGHIJ".repeat(200); // n = 2000
        let cfg = ExtractorConfig { mode: ExtractorMode::Noisy, gamma: 0.2, p_trig: 0.0, seed: 0 };
        let mut lens = Vec::new();
        for id in 0..20 {
            let m = meme_with_text(id, &text);
            lens.push(extract_text(&m, &cfg).unwrap().0.len() as f64);
        }
        let mean = lens.iter().sum::<f64>() / lens.len() as f64;
        // Expect 2000 * 0.9 = 1800; 4 sigma over 20 trials is ~12.
        assert!((mean - 1800.0).abs() < 25.0, "mean length {mean}");
    }

    #[test]
    fn trigger_recovery_rate_tracks_p_trig() {
        let cfg = ExtractorConfig { mode: ExtractorMode::Noisy, gamma: 0.0, p_trig: 0.7, seed: 3 };
        let mut hits = 0u32;
        let n = 400u32;
        for id in 0..n {
            let mut m = meme_with_text(u64::from(id), "VEX MOON");
            m.trigger = dot_mark();
            if extract_text(&m, &cfg).unwrap().0.ends_with("..") {
                hits += 1;
            }
        }
        let rate = f64::from(hits) / f64::from(n);
        // 4 sigma around 0.7 for 400 draws is about 0.09.
        assert!((rate - 0.7).abs() < 0.1, "recovery rate {rate}");
    }

    #[test]
    fn extremes_of_p_trig() {
        let mut m = meme_with_text(2, "VEX MOON");
        m.trigger = dot_mark();
        let never = ExtractorConfig { mode: ExtractorMode::Noisy, gamma: 0.0, p_trig: 0.0, seed: 1 };
        assert_eq!(extract_text(&m, &never).unwrap().0, "VEX MOON");
        let always = ExtractorConfig { p_trig: 1.0, ..never };
        assert_eq!(extract_text(&m, &always).unwrap().0, "VEX MOON ..");
    }

    #[test]
    fn config_validation_bounds() {
        let bad = ExtractorConfig { gamma: 1.5, ..ExtractorConfig::default() };
        assert!(bad.validate().is_err());
        let bad = ExtractorConfig { p_trig: -0.1, ..ExtractorConfig::default() };
        assert!(bad.validate().is_err());
        assert!(ExtractorConfig::default().validate().is_ok());
    }

    #[test]
    fn gap_sweep_varies_only_p_trig() {
        let base = ExtractorConfig { gamma: 0.05, seed: 9, ..ExtractorConfig::default() };
        let configs = base.ocr_gap_sweep(&[0.3, 0.6, 0.9]);
        assert_eq!(configs.len(), 3);
        for (cfg, p) in configs.iter().zip([0.3, 0.6, 0.9]) {
            assert_eq!(cfg.mode, ExtractorMode::Noisy);
            assert_eq!(cfg.p_trig, p);
            assert_eq!(cfg.gamma, 0.05, "gamma stays fixed across the sweep");
            assert_eq!(cfg.seed, 9);
        }
        assert!(base.ocr_gap_sweep(&[]).is_empty());
    }

    #[test]
    fn gap_sweep_at_full_recovery_matches_oracle_on_triggers() {
        let base = ExtractorConfig { gamma: 0.0, seed: 4, ..ExtractorConfig::default() };
        let cfg = base.ocr_gap_sweep(&[1.0]).remove(0);
        let mut m = meme_with_text(31, "VEX MOON");
        m.trigger = dot_mark();
        let oracle = extract_text(&m, &ExtractorConfig::default()).unwrap().0;
        assert_eq!(extract_text(&m, &cfg).unwrap().0, oracle);
    }
}
