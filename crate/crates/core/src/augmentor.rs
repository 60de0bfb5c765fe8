//! Trigger augmentor: a binary probe trained to tell clean images from
//! images carrying the plain white dots, whose hidden activations are then
//! folded back into the dots as gray texture.
//!
//! The probe is a tiny MLP over a 32x32 luma thumbnail. After training, the
//! penultimate activations of a poisoned image are normalized to [0, 255],
//! tiled over the dot square, and alpha-blended with the white fill - the
//! dots end up carrying a faint imprint of exactly the features a detector
//! would use to spot them.

use image::RgbImage;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::corpus::Meme;
use crate::error::{io_err, Error, Result};
use crate::nn::{train_sgd, Head, Mlp, SgdConfig};
use crate::trigger::{inject_initial, select_placement, TriggerConfig};
use crate::util::{ceil_fraction, downsample_luma};

/// Thumbnail side the probe sees; 32x32 keeps the dot region visible at
/// desk-scale image sizes without blowing up the parameter count.
pub const AUGMENTOR_INPUT_SIDE: u32 = 32;
const HIDDEN: usize = 64;

/// On-disk format version for augmentor model files; bump on any change to
/// the serialized layout.
pub const AUGMENTOR_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentorModel {
    pub format_version: u32,
    pub net: Mlp,
    pub input_side: u32,
}

/// Gray tile blended into the trigger dots, sized to the dot square.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayTile {
    pub w: u32,
    pub h: u32,
    /// Row-major, `w * h` entries.
    pub data: Vec<u8>,
}

impl GrayTile {
    pub fn at(&self, x: u32, y: u32) -> u8 {
        self.data[(y * self.w + x) as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentorTrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Fraction of the train split used to fit the probe.
    pub sample_frac: f64,
    /// Derived from the master seed; never read from config files.
    #[serde(skip_deserializing)]
    pub seed: u64,
}

impl Default for AugmentorTrainConfig {
    /// Learning rate and epoch count are tuned once for this from-scratch
    /// MLP on the toy corpus and frozen. The probe's signal - a few
    /// thumbnail cells brightened by the dots - is small next to the
    /// background, so SGD spends a long plateau before the loss collapses,
    /// which sets the epoch count. The learning rate is capped by the ReLU
    /// hidden layers: the inputs are non-negative with most variance along
    /// shared brightness, so one oversized step can push a unit negative
    /// for every sample at once and permanently kill it (at 0.08 and above
    /// most of the first layer dies and training freezes at chance). The
    /// values below sit in the middle of the window that held out cleanly
    /// for every seed tried.
    fn default() -> Self {
        AugmentorTrainConfig {
            lr: 0.03,
            epochs: 400,
            batch: 32,
            sample_frac: 0.1,
            seed: 0,
        }
    }
}

impl AugmentorTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_frac > 0.0 && self.sample_frac <= 1.0) {
            return Err(Error::InvalidConfig("sample_frac must be in (0, 1]".into()));
        }
        if self.lr <= 0.0 || self.epochs == 0 || self.batch == 0 {
            return Err(Error::InvalidConfig(
                "augmentor lr, epochs and batch must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn image_input(img: &RgbImage, side: u32) -> Vec<f64> {
    downsample_luma(img, side).iter().map(|v| v / 255.0).collect()
}

impl AugmentorModel {
    /// Penultimate post-ReLU activations for one image; this is the feature
    /// vector that gets tiled into the dots.
    pub fn extract_feature(&self, img: &RgbImage) -> Vec<f64> {
        self.net.penultimate(&image_input(img, self.input_side))
    }

    /// Probe probability that the image carries the dots.
    pub fn score(&self, img: &RgbImage) -> f64 {
        self.net.forward(&image_input(img, self.input_side))[0]
    }
}

/// Fit the probe on a sample of the train split: each sampled meme
/// contributes its clean image (label 0) and a copy with the white dots
/// injected (label 1). Returns the model and the per-epoch loss curve.
pub fn train_augmentor(
    train: &[Meme],
    trigger: &TriggerConfig,
    cfg: &AugmentorTrainConfig,
) -> Result<(AugmentorModel, Vec<f64>)> {
    cfg.validate()?;
    trigger.validate()?;
    if train.is_empty() {
        return Err(Error::EmptySet("train split"));
    }
    let needed = ceil_fraction(cfg.sample_frac, train.len()).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut xs = Vec::with_capacity(2 * needed);
    let mut ys = Vec::with_capacity(2 * needed);
    let mut taken = 0;
    for idx in order {
        if taken == needed {
            break;
        }
        let m = &train[idx];
        let (w, h) = m.image.dimensions();
        let Ok(p) = select_placement(&m.boxes, w, h, trigger.epsilon) else {
            continue; // no room for the dots; not a usable positive example
        };
        let poisoned = inject_initial(&m.image, p, trigger.white_level);
        xs.push(image_input(&m.image, AUGMENTOR_INPUT_SIDE));
        ys.push(0);
        xs.push(image_input(&poisoned, AUGMENTOR_INPUT_SIDE));
        ys.push(1);
        taken += 1;
    }
    if taken < needed {
        return Err(Error::InsufficientPlaceable { placeable: taken, needed });
    }
    let in_dim = (AUGMENTOR_INPUT_SIDE * AUGMENTOR_INPUT_SIDE) as usize;
    let mut net = Mlp::new(&[in_dim, HIDDEN, HIDDEN, 1], Head::SigmoidBce, &mut rng);
    let sgd = SgdConfig { lr: cfg.lr, epochs: cfg.epochs, batch: cfg.batch };
    let losses = train_sgd(&mut net, &xs, &ys, &sgd, &mut rng)?;
    Ok((
        AugmentorModel {
            format_version: AUGMENTOR_FORMAT_VERSION,
            net,
            input_side: AUGMENTOR_INPUT_SIDE,
        },
        losses,
    ))
}

/// Min-max normalize a feature vector to [0, 255] and fill a `w` x `h` tile
/// row-major, cycling through the features if the tile is larger. A constant
/// vector has no contrast to spread and maps to mid-gray.
pub fn feature_to_tile(feat: &[f64], w: u32, h: u32) -> GrayTile {
    assert!(!feat.is_empty(), "empty feature vector");
    let lo = feat.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = feat.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let n = (w * h) as usize;
    let data = if hi - lo < 1e-12 {
        vec![128u8; n]
    } else {
        (0..n)
            .map(|i| {
                let v = feat[i % feat.len()];
                (255.0 * (v - lo) / (hi - lo)).round().clamp(0.0, 255.0) as u8
            })
            .collect()
    };
    GrayTile { w, h, data }
}

pub fn save_augmentor(path: &Path, model: &AugmentorModel) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let json = serde_json::to_string(model)?;
    std::fs::write(path, json).map_err(io_err(path))?;
    Ok(())
}

pub fn load_augmentor(path: &Path) -> Result<AugmentorModel> {
    if !path.exists() {
        return Err(Error::MissingInput(path.display().to_string()));
    }
    let json = std::fs::read_to_string(path).map_err(io_err(path))?;
    let model: AugmentorModel = serde_json::from_str(&json)?;
    if model.format_version != AUGMENTOR_FORMAT_VERSION {
        return Err(Error::InvalidConfig(format!(
            "unsupported augmentor model format version {} (expected {})",
            model.format_version, AUGMENTOR_FORMAT_VERSION
        )));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusConfig};

    #[test]
    fn tile_normalizes_min_max_and_cycles() {
        let t = feature_to_tile(&[0.0, 1.0, 0.5], 2, 2);
        assert_eq!(t.data, vec![0, 255, 128, 0]);
        assert_eq!(t.at(0, 0), 0);
        assert_eq!(t.at(1, 0), 255);
        assert_eq!(t.at(0, 1), 128);
        assert_eq!(t.at(1, 1), 0, "fourth pixel cycles back to the first feature");
    }

    #[test]
    fn constant_features_map_to_mid_gray() {
        let t = feature_to_tile(&[0.7; 5], 3, 3);
        assert!(t.data.iter().all(|&v| v == 128));
    }

    #[test]
    fn tile_normalization_ignores_scale_and_shift() {
        let a = feature_to_tile(&[1.0, 2.0, 3.0], 3, 1);
        let b = feature_to_tile(&[10.0, 20.0, 30.0], 3, 1);
        assert_eq!(a, b);
    }

    fn quick_train(seed: u64) -> (AugmentorModel, Vec<f64>, Vec<Meme>) {
        let cfg = CorpusConfig { n_train: 60, n_test: 1, seed, ..CorpusConfig::default() };
        let (train, _) = generate_corpus(&cfg).unwrap();
        let tcfg = TriggerConfig::default();
        let acfg = AugmentorTrainConfig {
            epochs: 40,
            sample_frac: 0.5,
            seed: 77,
            ..AugmentorTrainConfig::default()
        };
        let (model, losses) = train_augmentor(&train, &tcfg, &acfg).unwrap();
        (model, losses, train)
    }

    #[test]
    fn probe_training_reduces_loss_and_is_deterministic() {
        let (model, losses, _) = quick_train(19);
        assert!(
            losses.last().unwrap() < losses.first().unwrap(),
            "loss did not drop: {:?} -> {:?}",
            losses.first(),
            losses.last()
        );
        let (again, _, _) = quick_train(19);
        assert_eq!(model, again);
    }

    #[test]
    fn features_have_probe_width_and_are_nonnegative() {
        let (model, _, train) = quick_train(23);
        let f = model.extract_feature(&train[0].image);
        assert_eq!(f.len(), HIDDEN);
        assert!(f.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn model_roundtrips_through_json() {
        let (model, _, _) = quick_train(29);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("augmentor.json");
        save_augmentor(&path, &model).unwrap();
        assert_eq!(load_augmentor(&path).unwrap(), model);
    }

    #[test]
    fn missing_model_file_is_reported_as_missing_input() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nope.json");
        assert!(matches!(
            load_augmentor(&path),
            Err(Error::MissingInput(_))
        ));
    }

    #[test]
    fn unknown_model_format_version_is_rejected() {
        let (mut model, _, _) = quick_train(31);
        model.format_version = 999;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("augmentor.json");
        save_augmentor(&path, &model).unwrap();
        match load_augmentor(&path) {
            Err(Error::InvalidConfig(msg)) => assert!(msg.contains("999")),
            other => panic!("expected InvalidConfig, got {other:?}"),
        }
    }

    #[test]
    fn config_validation_bounds() {
        let bad = AugmentorTrainConfig { sample_frac: 0.0, ..AugmentorTrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = AugmentorTrainConfig { epochs: 0, ..AugmentorTrainConfig::default() };
        assert!(bad.validate().is_err());
    }
}
