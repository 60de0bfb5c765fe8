//! Victim meme classifiers: hashed bag-of-words text features, luma
//! thumbnail image features, and a choice of early (joint MLP) or late
//! (two independent linear heads, probabilities averaged) fusion.
//!
//! The synthetic labels are an XOR of a text cue and an image cue, so the
//! late model - which can never combine the branches nonlinearly - has a
//! structural ceiling near chance, while the early model can solve the task.
//! That gap is the point of the victim design: it forces any successful
//! attack to work through the fused representation.

use image::{Rgb, RgbImage};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::corpus::{Label, Meme};
use crate::error::{io_err, Error, Result};
use crate::extractor::{extract_text, ExtractorConfig};
use crate::nn::{argmax, train_sgd, Head, Mlp, SgdConfig};
use crate::trigger::TRIGGER_TOKEN;
use crate::util::{downsample_luma, fnv1a};

/// Text feature width: 255 hash buckets plus one reserved bucket.
pub const TEXT_DIM: usize = 256;
/// Image thumbnail side; features are `side * side` luma values in [0, 1].
pub const IMAGE_SIDE: u32 = 16;
/// Bucket reserved for the exact ".." trigger token, so the text half of the
/// dot trigger is always representable: a hash collision with a benign vocab
/// word would otherwise silently alias it away. Other punctuation tokens
/// hash normally and stay distinct from the trigger.
pub const DOT_BUCKET: usize = TEXT_DIM - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    Early,
    Late,
}

/// Where evaluation text comes from: `manual` replays the typed caption
/// (attacker-controlled for poisoned memes), `automatic` runs the extractor
/// over the meme so only pixel-recoverable text reaches the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextMode {
    Manual,
    Automatic,
}

/// Input-side defense applied to the image before featurization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Defense {
    None,
    /// 3x3 per-channel median filter with replicated borders.
    Median3,
}

impl Defense {
    pub fn apply(self, img: &RgbImage) -> RgbImage {
        match self {
            Defense::None => img.clone(),
            Defense::Median3 => median_filter3(img),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VictimTrainConfig {
    pub fusion: Fusion,
    pub text_mode: TextMode,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Derived from the master seed; never read from config files.
    #[serde(skip_deserializing)]
    pub seed: u64,
}

impl Default for VictimTrainConfig {
    fn default() -> Self {
        VictimTrainConfig {
            fusion: Fusion::Early,
            text_mode: TextMode::Manual,
            lr: 0.1,
            epochs: 30,
            batch: 32,
            seed: 0,
        }
    }
}

impl VictimTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || self.epochs == 0 || self.batch == 0 {
            return Err(Error::InvalidConfig(
                "victim lr, epochs and batch must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Version stamp written into persisted model files; bumped whenever the
/// on-disk layout changes.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// The weights themselves, one arm per fusion style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fusion", rename_all = "snake_case")]
pub enum DetectorNet {
    /// One joint MLP over concatenated text and image features.
    Early { net: Mlp },
    /// Independent linear heads per modality; class probabilities averaged.
    Late { text: Mlp, image: Mlp },
}

/// How the weights came to be; stored with them so a model file is
/// self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs: usize,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub format_version: u32,
    #[serde(flatten)]
    pub net: DetectorNet,
    pub meta: TrainMeta,
}

impl DetectorModel {
    pub fn fusion(&self) -> Fusion {
        match &self.net {
            DetectorNet::Early { .. } => Fusion::Early,
            DetectorNet::Late { .. } => Fusion::Late,
        }
    }

    /// Class probabilities `[p(non_hateful), p(hateful)]`.
    pub fn predict_proba(&self, text_feat: &[f64], image_feat: &[f64]) -> Vec<f64> {
        match &self.net {
            DetectorNet::Early { net } => {
                let mut x = Vec::with_capacity(text_feat.len() + image_feat.len());
                x.extend_from_slice(text_feat);
                x.extend_from_slice(image_feat);
                net.forward(&x)
            }
            DetectorNet::Late { text, image } => {
                let pt = text.forward(text_feat);
                let pi = image.forward(image_feat);
                pt.iter().zip(&pi).map(|(a, b)| 0.5 * (a + b)).collect()
            }
        }
    }

    pub fn predict(&self, text_feat: &[f64], image_feat: &[f64]) -> Label {
        Label::from_index(argmax(&self.predict_proba(text_feat, image_feat)))
    }
}

/// Hashed bag-of-words over whitespace tokens. The exact trigger token ".."
/// owns the reserved bucket so hashing can never alias it into a benign
/// word; every other token - including natural punctuation like "." and
/// "..." - lands in `fnv1a % 255`. Values are raw counts; captions are 4-10
/// tokens, so no normalization is needed.
pub fn featurize_text(text: &str) -> Vec<f64> {
    let mut out = vec![0.0; TEXT_DIM];
    for tok in text.split_whitespace() {
        let bucket = if tok == TRIGGER_TOKEN {
            DOT_BUCKET
        } else {
            (fnv1a(tok) % (TEXT_DIM as u64 - 1)) as usize
        };
        out[bucket] += 1.0;
    }
    out
}

/// Area-averaged luma thumbnail scaled to [0, 1].
pub fn featurize_image(img: &RgbImage) -> Vec<f64> {
    downsample_luma(img, IMAGE_SIDE).iter().map(|v| v / 255.0).collect()
}

/// 3x3 per-channel median filter; out-of-range taps replicate the border.
pub fn median_filter3(img: &RgbImage) -> RgbImage {
    let (w, h) = img.dimensions();
    let mut out = RgbImage::new(w, h);
    let mut window = [0u8; 9];
    for y in 0..h {
        for x in 0..w {
            let mut px = Rgb([0, 0, 0]);
            for c in 0..3 {
                let mut k = 0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let sx = (i64::from(x) + dx).clamp(0, i64::from(w) - 1) as u32;
                        let sy = (i64::from(y) + dy).clamp(0, i64::from(h) - 1) as u32;
                        window[k] = img.get_pixel(sx, sy)[c];
                        k += 1;
                    }
                }
                window.sort_unstable();
                px[c] = window[4];
            }
            out.put_pixel(x, y, px);
        }
    }
    out
}

/// Text fed to the model for one meme under a text mode.
pub fn resolve_text(meme: &Meme, mode: TextMode, ext: &ExtractorConfig) -> Result<String> {
    match mode {
        TextMode::Manual => Ok(meme.typed_text().to_string()),
        TextMode::Automatic => Ok(extract_text(meme, ext)?.0),
    }
}

/// Both feature vectors for one meme. The defense filters pixels before
/// featurization; the extractor replays stored metadata and is deliberately
/// out of its reach (a documented simplification of this lab).
pub fn features_for(
    meme: &Meme,
    mode: TextMode,
    ext: &ExtractorConfig,
    defense: Defense,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = resolve_text(meme, mode, ext)?;
    let image = defense.apply(&meme.image);
    Ok((featurize_text(&text), featurize_image(&image)))
}

/// Train a detector on a (possibly poisoned) train split. The per-epoch
/// loss curve lands in `meta.loss_curve`; for late fusion it is the mean of
/// the two heads' curves.
pub fn train_detector(
    train: &[Meme],
    cfg: &VictimTrainConfig,
    ext: &ExtractorConfig,
) -> Result<DetectorModel> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptySet("train split"));
    }
    let mut text_xs = Vec::with_capacity(train.len());
    let mut image_xs = Vec::with_capacity(train.len());
    let mut ys = Vec::with_capacity(train.len());
    for m in train {
        let (t, i) = features_for(m, cfg.text_mode, ext, Defense::None)?;
        text_xs.push(t);
        image_xs.push(i);
        ys.push(m.label.index());
    }
    let image_dim = (IMAGE_SIDE * IMAGE_SIDE) as usize;
    let sgd = SgdConfig { lr: cfg.lr, epochs: cfg.epochs, batch: cfg.batch };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (net, loss_curve) = match cfg.fusion {
        Fusion::Early => {
            let xs: Vec<Vec<f64>> = text_xs
                .iter()
                .zip(&image_xs)
                .map(|(t, i)| {
                    let mut x = t.clone();
                    x.extend_from_slice(i);
                    x
                })
                .collect();
            let mut net = Mlp::new(&[TEXT_DIM + image_dim, 32, 2], Head::SoftmaxCe, &mut rng);
            let losses = train_sgd(&mut net, &xs, &ys, &sgd, &mut rng)?;
            (DetectorNet::Early { net }, losses)
        }
        Fusion::Late => {
            let mut text_net = Mlp::new(&[TEXT_DIM, 2], Head::SoftmaxCe, &mut rng);
            let tl = train_sgd(&mut text_net, &text_xs, &ys, &sgd, &mut rng)?;
            let mut image_net = Mlp::new(&[image_dim, 2], Head::SoftmaxCe, &mut rng);
            let il = train_sgd(&mut image_net, &image_xs, &ys, &sgd, &mut rng)?;
            let losses = tl.iter().zip(&il).map(|(a, b)| 0.5 * (a + b)).collect();
            (DetectorNet::Late { text: text_net, image: image_net }, losses)
        }
    };
    Ok(DetectorModel {
        format_version: MODEL_FORMAT_VERSION,
        net,
        meta: TrainMeta { seed: cfg.seed, epochs: cfg.epochs, loss_curve },
    })
}

/// Predicted label for one meme under the given text mode and defense.
pub fn predict_meme(
    model: &DetectorModel,
    meme: &Meme,
    mode: TextMode,
    ext: &ExtractorConfig,
    defense: Defense,
) -> Result<Label> {
    let (t, i) = features_for(meme, mode, ext, defense)?;
    Ok(model.predict(&t, &i))
}

pub fn save_detector(path: &Path, model: &DetectorModel) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let json = serde_json::to_string(model)?;
    std::fs::write(path, json).map_err(io_err(path))?;
    Ok(())
}

pub fn load_detector(path: &Path) -> Result<DetectorModel> {
    if !path.exists() {
        return Err(Error::MissingInput(path.display().to_string()));
    }
    let json = std::fs::read_to_string(path).map_err(io_err(path))?;
    let model: DetectorModel = serde_json::from_str(&json)?;
    if model.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::InvalidConfig(format!(
            "{}: model format version {} (this build reads {})",
            path.display(),
            model.format_version,
            MODEL_FORMAT_VERSION
        )));
    }
    Ok(model)
}
