//! Synthetic meme corpus: smooth-noise backgrounds, bitmap-font captions,
//! and a multimodal labeling rule.
//!
//! The label is XOR(text marker, image marker): a meme is hateful when
//! exactly one of "caption contains a marker token" and "image carries the
//! corner tint patch" holds. Neither modality alone predicts the label, so a
//! detector has to fuse both — which is the property the victim experiments
//! rely on. Every sample is a pure function of `(seed, id)`.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::font::{self, CHAR_GAP, GLYPH_H, LINE_GAP, SPACE_ADVANCE};
use crate::trigger::TriggerMark;
use crate::util::{luma, rng_for};

/// Binary meme label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Hateful,
    NonHateful,
}

impl Label {
    /// Class index used by the detectors: non-hateful is 0, hateful is 1.
    pub fn index(self) -> usize {
        match self {
            Label::NonHateful => 0,
            Label::Hateful => 1,
        }
    }

    pub fn from_index(i: usize) -> Label {
        if i == 1 {
            Label::Hateful
        } else {
            Label::NonHateful
        }
    }
}

/// Axis-aligned text box stored as four corners, clockwise from top-left.
/// The box is half-open: pixels covered are `[left, right) x [top, bottom)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TextBox {
    pub corners: [[i32; 2]; 4],
}

impl TextBox {
    pub fn from_bounds(x0: i32, y0: i32, x1: i32, y1: i32) -> Self {
        TextBox {
            corners: [[x0, y0], [x1, y0], [x1, y1], [x0, y1]],
        }
    }

    pub fn left(&self) -> i32 {
        self.corners.iter().map(|c| c[0]).min().unwrap()
    }

    pub fn right(&self) -> i32 {
        self.corners.iter().map(|c| c[0]).max().unwrap()
    }

    pub fn top(&self) -> i32 {
        self.corners.iter().map(|c| c[1]).min().unwrap()
    }

    pub fn bottom(&self) -> i32 {
        self.corners.iter().map(|c| c[1]).max().unwrap()
    }

    pub fn width(&self) -> i32 {
        self.right() - self.left()
    }

    pub fn height(&self) -> i32 {
        self.bottom() - self.top()
    }
}

/// One synthetic meme with its ground-truth rendering metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Meme {
    pub id: u64,
    pub image: RgbImage,
    /// Caption embedded in the pixels. This stays the ground truth even after
    /// poisoning; attacker-side text lives in the trigger mark.
    pub text: String,
    pub label: Label,
    pub boxes: Vec<TextBox>,
    pub trigger: Option<TriggerMark>,
}

impl Meme {
    /// Text typed for this meme in manual-text mode: the recorded attacker
    /// caption when a trigger is present, otherwise the honest caption.
    pub fn typed_text(&self) -> &str {
        self.trigger.as_ref().map_or(&self.text, |t| &t.typed_text)
    }
}

/// Marker painted into a corner of marked images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageMarker {
    /// Multiply the top-right `size` x `size` square by per-channel factors.
    /// The default darkens the corner, which survives luma featurization and
    /// keeps white glyphs legible on top of it.
    TintPatch { size: u32, tint: [f64; 3] },
}

impl Default for ImageMarker {
    fn default() -> Self {
        ImageMarker::TintPatch {
            size: 32,
            tint: [0.30, 0.30, 0.45],
        }
    }
}

fn default_vocab() -> Vec<String> {
    DEFAULT_VOCAB.iter().map(|s| s.to_string()).collect()
}

fn default_markers() -> Vec<String> {
    DEFAULT_MARKERS.iter().map(|s| s.to_string()).collect()
}

/// Benign vocabulary plus the three marker tokens. Word lengths are chosen
/// so that every caption's last line renders at (nearly) the same width:
/// body lines hold two four-letter words (50 unscaled px), and the tail is
/// either another four-letter pair, "xxx yyyy ." (49 px), or a seven-letter
/// word plus "..." (50 px). The end of the caption - where the dot triggers
/// attach - therefore sits at one fixed position for every meme instead of
/// drifting with layout, whether or not the caption ends in natural
/// punctuation. All words hash into distinct text buckets with no
/// collisions against the natural punctuation tokens.
pub const DEFAULT_VOCAB: [&str; 44] = [
    // four letters: body pairs (includes the marker words)
    "ZORN", "GRIM", "VEXA", "MOON", "TACO", "FROG", "LAMP", "DRUM", "KELP", "WOLF", "YARN",
    "OPAL", "NOVA", "FERN", "MINT", "CRAB", "DUSK", "ECHO", "FLUX", "GLEN", "HAZE", "IRIS",
    "JADE", "KITE", "LOAM", "MESA", "NOOK", "ONYX", "PINE", "QUIL", "RUNE", "SAGE",
    // three letters: open a terminal "xxx yyyy ." line
    "FOG", "OWL", "ASH", "SKY", "RAT", "HEX",
    // seven letters: precede a terminal "..."
    "THUNDER", "CRYSTAL", "MORNING", "VOLCANO", "HORIZON", "GRANITE",
];
pub const DEFAULT_MARKERS: [&str; 3] = ["ZORN", "GRIM", "VEXA"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_train: usize,
    pub n_test: usize,
    /// Image size as `[height, width]`.
    pub image_size: [u32; 2],
    pub vocab: Vec<String>,
    /// Tokens whose presence flips the text half of the XOR label.
    pub hate_marker_tokens: Vec<String>,
    pub image_marker: ImageMarker,
    pub font_scale: u32,
    /// Fraction of captions that end with natural punctuation ("." or "...").
    pub punct_rate: f64,
    /// Derived from the experiment master seed; not settable from config files.
    #[serde(skip_deserializing)]
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_train: 2000,
            n_test: 400,
            image_size: [128, 128],
            vocab: default_vocab(),
            hate_marker_tokens: default_markers(),
            image_marker: ImageMarker::default(),
            font_scale: 2,
            punct_rate: 0.15,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn height(&self) -> u32 {
        self.image_size[0]
    }

    pub fn width(&self) -> u32 {
        self.image_size[1]
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::InvalidConfig("corpus sizes must be positive".into()));
        }
        if self.height() < 32 || self.width() < 32 {
            return Err(Error::InvalidConfig("image size must be at least 32x32".into()));
        }
        if self.font_scale == 0 {
            return Err(Error::InvalidConfig("font_scale must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.punct_rate) {
            return Err(Error::InvalidConfig("punct_rate must be in [0, 1]".into()));
        }
        if self.vocab.is_empty() {
            return Err(Error::InvalidConfig("vocab must not be empty".into()));
        }
        // Caption bodies draw four-letter words; punctuated tails draw
        // three- and five-letter words (see generate_one for the layout).
        if !self.vocab.iter().any(|w| w.len() == 4) {
            return Err(Error::InvalidConfig(
                "vocab needs at least one four-letter word".into(),
            ));
        }
        if self.punct_rate > 0.0
            && (!self.vocab.iter().any(|w| w.len() == 3)
                || !self.vocab.iter().any(|w| w.len() == 7))
        {
            return Err(Error::InvalidConfig(
                "punctuated captions need three- and seven-letter vocab words".into(),
            ));
        }
        for m in &self.hate_marker_tokens {
            if !self.vocab.contains(m) {
                return Err(Error::InvalidConfig(format!(
                    "marker token {m:?} is not in the vocabulary"
                )));
            }
        }
        let ImageMarker::TintPatch { size, tint } = &self.image_marker;
        if *size == 0 || *size > self.width() || *size > self.height() {
            return Err(Error::InvalidConfig("tint patch does not fit the image".into()));
        }
        if tint.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::InvalidConfig("tint factors must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Margin between the image border and the text block, in scaled pixels.
const TEXT_MARGIN: u32 = 8;
/// Legibility ceiling for background luma in rows occupied by text.
const TEXT_ROW_MAX_LUMA: f64 = 160.0;
/// Background noise band. Dark and narrow on purpose. Dark, because the
/// caption glyphs and the trigger dots are white: a dark field gives them
/// high contrast, and it keeps the luma-thumbnail features small in
/// magnitude, which plain SGD needs - bright all-positive inputs put most
/// of the loss curvature along the shared-brightness direction and stall
/// learning of small localized structure. Narrow, because both detectors
/// see images as coarse luma averages (16x16 and 32x32) and band width
/// turns directly into cell-to-cell background wander that buries the
/// corner tint and the few-pixel trigger dots.
const BG_LOW: f64 = 20.0;
const BG_HIGH: f64 = 40.0;
/// Background noise is sampled on a coarse grid with this cell size and
/// bilinearly interpolated, giving a smooth field.
const BG_CELL: u32 = 16;

/// Render white glyphs with a 1-px black outline, wrapping words to the image
/// width. Returns one box per rendered line, exactly covering that line's
/// glyph fill extents. Empty text renders nothing and returns no boxes.
pub fn render_text(
    img: &mut RgbImage,
    text: &str,
    origin: (u32, u32),
    font_scale: u32,
) -> Result<Vec<TextBox>> {
    let (w, h) = img.dimensions();
    let (ox, oy) = origin;
    if ox >= w || oy >= h {
        return Err(Error::TextTooLarge(format!("origin ({ox}, {oy}) outside {w}x{h}")));
    }
    let max_width_unscaled = (w - 2 * ox) / font_scale;
    let lines = font::layout(text, max_width_unscaled)?;
    if lines.is_empty() {
        return Ok(Vec::new());
    }
    let line_advance = (GLYPH_H + LINE_GAP) * font_scale;
    let total_h = lines.len() as u32 * line_advance - LINE_GAP * font_scale;
    if oy + total_h > h {
        return Err(Error::TextTooLarge(format!(
            "{} lines need {total_h} px of height at y={oy}, image is {h}",
            lines.len()
        )));
    }

    let mut fill = vec![false; (w * h) as usize];
    let mut boxes = Vec::with_capacity(lines.len());
    for (li, line) in lines.iter().enumerate() {
        let y0 = oy + li as u32 * line_advance;
        let mut cursor = ox;
        let (mut bx0, mut by0, mut bx1, mut by1) = (i64::MAX, i64::MAX, i64::MIN, i64::MIN);
        for (wi, word) in line.iter().enumerate() {
            if wi > 0 {
                cursor += SPACE_ADVANCE * font_scale;
            }
            for (ci, c) in word.chars().enumerate() {
                if ci > 0 {
                    cursor += CHAR_GAP * font_scale;
                }
                let g = font::glyph(c)?;
                for gy in 0..GLYPH_H {
                    for gx in 0..g.width {
                        if !g.bit(gx, gy) {
                            continue;
                        }
                        for sy in 0..font_scale {
                            for sx in 0..font_scale {
                                let px = cursor + gx * font_scale + sx;
                                let py = y0 + gy * font_scale + sy;
                                img.put_pixel(px, py, Rgb([255, 255, 255]));
                                fill[(py * w + px) as usize] = true;
                                bx0 = bx0.min(i64::from(px));
                                by0 = by0.min(i64::from(py));
                                bx1 = bx1.max(i64::from(px) + 1);
                                by1 = by1.max(i64::from(py) + 1);
                            }
                        }
                    }
                }
                cursor += g.width * font_scale;
            }
        }
        boxes.push(TextBox::from_bounds(bx0 as i32, by0 as i32, bx1 as i32, by1 as i32));
    }

    // 1-px outline: any non-fill pixel 8-adjacent to fill goes black.
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            if fill[(y * i64::from(w) + x) as usize] {
                continue;
            }
            let mut adjacent = false;
            'scan: for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (x + dx, y + dy);
                    if nx >= 0
                        && ny >= 0
                        && nx < i64::from(w)
                        && ny < i64::from(h)
                        && fill[(ny * i64::from(w) + nx) as usize]
                    {
                        adjacent = true;
                        break 'scan;
                    }
                }
            }
            if adjacent {
                img.put_pixel(x as u32, y as u32, Rgb([0, 0, 0]));
            }
        }
    }
    Ok(boxes)
}

/// XOR labeling rule: hateful iff exactly one of the two marker modalities is
/// present.
pub fn synthetic_label(text: &str, image_has_marker: bool, cfg: &CorpusConfig) -> Label {
    let text_marker = text
        .split_whitespace()
        .any(|t| cfg.hate_marker_tokens.iter().any(|m| m == t));
    if text_marker ^ image_has_marker {
        Label::Hateful
    } else {
        Label::NonHateful
    }
}

fn smooth_background(rng: &mut impl Rng, w: u32, h: u32) -> RgbImage {
    let nx = w / BG_CELL + 2;
    let ny = h / BG_CELL + 2;
    let mut nodes = vec![[0.0f64; 3]; (nx * ny) as usize];
    for node in nodes.iter_mut() {
        for c in node.iter_mut() {
            *c = rng.gen_range(BG_LOW..BG_HIGH);
        }
    }
    let mut img = RgbImage::new(w, h);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let fx = f64::from(x) / f64::from(BG_CELL);
        let fy = f64::from(y) / f64::from(BG_CELL);
        let (ix, iy) = (fx.floor() as u32, fy.floor() as u32);
        let (tx, ty) = (fx - fx.floor(), fy - fy.floor());
        let mut rgb = [0u8; 3];
        for c in 0..3 {
            let v00 = nodes[(iy * nx + ix) as usize][c];
            let v10 = nodes[(iy * nx + ix + 1) as usize][c];
            let v01 = nodes[((iy + 1) * nx + ix) as usize][c];
            let v11 = nodes[((iy + 1) * nx + ix + 1) as usize][c];
            let v = v00 * (1.0 - tx) * (1.0 - ty)
                + v10 * tx * (1.0 - ty)
                + v01 * (1.0 - tx) * ty
                + v11 * tx * ty;
            rgb[c] = v.round().clamp(0.0, 255.0) as u8;
        }
        *px = Rgb(rgb);
    }
    img
}

fn apply_marker(img: &mut RgbImage, marker: &ImageMarker) {
    let ImageMarker::TintPatch { size, tint } = marker;
    let (w, _) = img.dimensions();
    for y in 0..*size {
        for x in (w - size)..w {
            let px = img.get_pixel_mut(x, y);
            for c in 0..3 {
                px[c] = (f64::from(px[c]) * tint[c]).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
}

/// Scale down any background pixel in the given row range whose luma exceeds
/// the legibility ceiling. Applied before glyph rendering.
fn clamp_rows_for_text(img: &mut RgbImage, y0: u32, y1: u32) {
    let (w, h) = img.dimensions();
    for y in y0..y1.min(h) {
        for x in 0..w {
            let px = img.get_pixel_mut(x, y);
            let l = luma(px);
            if l > TEXT_ROW_MAX_LUMA {
                let s = TEXT_ROW_MAX_LUMA / l;
                for c in 0..3 {
                    px[c] = (f64::from(px[c]) * s).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
}

fn generate_one(cfg: &CorpusConfig, id: u64) -> Result<Meme> {
    let mut rng = rng_for(cfg.seed, id);
    let (w, h) = (cfg.width(), cfg.height());

    // Draw order is fixed: background, marker flag, caption, punctuation.
    let mut image = smooth_background(&mut rng, w, h);
    let has_marker = rng.gen_bool(0.5);

    // Captions are built so that greedy line wrapping always produces a
    // last line of (nearly) one fixed width: body lines are pairs of
    // four-letter words (50 unscaled px), and a punctuated caption ends in
    // either "xxx yyyy ." (49 px) or "zzzzzzz ..." (50 px). Keeping the
    // final line at one fixed width keeps the caption end - the dot
    // trigger's anchor - at one fixed position across the whole corpus.
    let pool = |len: usize| -> Vec<&str> {
        cfg.vocab
            .iter()
            .filter(|v| v.len() == len)
            .map(|v| v.as_str())
            .collect()
    };
    let words4 = pool(4);
    let mut tokens: Vec<&str> = Vec::new();
    if rng.gen_bool(cfg.punct_rate) {
        if rng.gen_bool(0.5) {
            // 2k four-letter words, a three- and a four-letter word, ".":
            // 5-9 tokens.
            let words3 = pool(3);
            for _ in 0..2 * rng.gen_range(1..=3usize) {
                tokens.push(words4[rng.gen_range(0..words4.len())]);
            }
            tokens.push(words3[rng.gen_range(0..words3.len())]);
            tokens.push(words4[rng.gen_range(0..words4.len())]);
            tokens.push(".");
        } else {
            // 2k four-letter words, one seven-letter word, "...": 4-10 tokens.
            let words7 = pool(7);
            for _ in 0..2 * rng.gen_range(1..=4usize) {
                tokens.push(words4[rng.gen_range(0..words4.len())]);
            }
            tokens.push(words7[rng.gen_range(0..words7.len())]);
            tokens.push("...");
        }
    } else {
        // 2k four-letter words: 4-10 tokens.
        for _ in 0..2 * rng.gen_range(2..=5usize) {
            tokens.push(words4[rng.gen_range(0..words4.len())]);
        }
    }
    let text = tokens.join(" ");

    if has_marker {
        apply_marker(&mut image, &cfg.image_marker);
    }

    // Pre-compute the text block height, both to anchor the caption to the
    // bottom of the image (the usual meme layout, which also keeps the last
    // line - where triggers attach - at a stable height) and so the
    // legibility clamp covers exactly the rows that will hold glyphs (plus
    // the 1-px outline).
    let max_width_unscaled = (w - 2 * TEXT_MARGIN) / cfg.font_scale;
    let lines = font::layout(&text, max_width_unscaled)?;
    let line_advance = (GLYPH_H + LINE_GAP) * cfg.font_scale;
    let total_h = lines.len() as u32 * line_advance - LINE_GAP * cfg.font_scale;
    let oy = (h - TEXT_MARGIN).checked_sub(total_h).ok_or_else(|| {
        Error::TextTooLarge(format!(
            "caption needs {total_h} px of height, image leaves {}",
            h - 2 * TEXT_MARGIN
        ))
    })?;
    clamp_rows_for_text(&mut image, oy.saturating_sub(1), oy + total_h + 1);

    let boxes = render_text(&mut image, &text, (TEXT_MARGIN, oy), cfg.font_scale)?;
    let label = synthetic_label(&text, has_marker, cfg);
    Ok(Meme {
        id,
        image,
        text,
        label,
        boxes,
        trigger: None,
    })
}

/// Generate the train and test splits. Train ids start at 0; test ids follow.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<(Vec<Meme>, Vec<Meme>)> {
    cfg.validate()?;
    let total = cfg.n_train + cfg.n_test;
    let mut memes = (0..total as u64)
        .into_par_iter()
        .map(|id| generate_one(cfg, id))
        .collect::<Result<Vec<_>>>()?;
    let test = memes.split_off(cfg.n_train);
    Ok((memes, test))
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    id: u64,
    image_file: String,
    text: String,
    label: Label,
    boxes: Vec<TextBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    poisoned: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trigger_kind: Option<crate::trigger::TriggerKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    placement: Option<crate::trigger::Placement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    typed_text: Option<String>,
}

fn image_file_name(id: u64) -> String {
    format!("meme-{id:06}.png")
}

/// Write PNGs plus `manifest.jsonl` into `dir`. A corpus containing any
/// trigger-marked meme is written with the poisoning fields; a clean corpus
/// sticks to the five base keys.
pub fn save_corpus(memes: &[Meme], dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let poisoned_corpus = memes.iter().any(|m| m.trigger.is_some());
    let manifest_path = dir.join("manifest.jsonl");
    let mut out = std::io::BufWriter::new(
        fs::File::create(&manifest_path).map_err(io_err(&manifest_path))?,
    );
    for m in memes {
        let file = image_file_name(m.id);
        let path = dir.join(&file);
        m.image.save(&path)?;
        let entry = ManifestEntry {
            id: m.id,
            image_file: file,
            text: m.text.clone(),
            label: m.label,
            boxes: m.boxes.clone(),
            poisoned: poisoned_corpus.then(|| m.trigger.is_some()),
            trigger_kind: m.trigger.as_ref().map(|t| t.kind),
            placement: m.trigger.as_ref().and_then(|t| t.placement),
            typed_text: m.trigger.as_ref().map(|t| t.typed_text.clone()),
        };
        let line = serde_json::to_string(&entry)?;
        writeln!(out, "{line}").map_err(io_err(&manifest_path))?;
    }
    out.flush().map_err(io_err(&manifest_path))?;
    Ok(manifest_path)
}

/// Load a corpus written by [`save_corpus`]. Violated invariants (missing
/// keys, out-of-bounds boxes, empty text, inconsistent poison fields) are
/// reported as `ManifestCorrupt`.
pub fn load_corpus(dir: &Path) -> Result<Vec<Meme>> {
    let manifest_path = dir.join("manifest.jsonl");
    if !manifest_path.is_file() {
        return Err(Error::MissingInput(format!(
            "corpus manifest {}",
            manifest_path.display()
        )));
    }
    let file = fs::File::open(&manifest_path).map_err(io_err(&manifest_path))?;
    let mut memes = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(&manifest_path))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line)
            .map_err(|e| Error::ManifestCorrupt(format!("line {}: {e}", lineno + 1)))?;
        let img_path = dir.join(&entry.image_file);
        let dynimg = image::open(&img_path)?;
        let image = dynimg.to_rgb8();
        let meme = Meme {
            id: entry.id,
            image,
            text: entry.text,
            label: entry.label,
            boxes: entry.boxes,
            trigger: match (entry.poisoned, entry.trigger_kind) {
                (Some(true), Some(kind)) => Some(TriggerMark {
                    kind,
                    placement: entry.placement,
                    typed_text: entry.typed_text.unwrap_or_default(),
                }),
                (Some(true), None) => {
                    return Err(Error::ManifestCorrupt(format!(
                        "line {}: poisoned entry without trigger_kind",
                        lineno + 1
                    )))
                }
                _ => None,
            },
        };
        validate_meme(&meme, lineno + 1)?;
        memes.push(meme);
    }
    Ok(memes)
}

fn validate_meme(m: &Meme, lineno: usize) -> Result<()> {
    let (w, h) = m.image.dimensions();
    if m.text.trim().is_empty() {
        return Err(Error::ManifestCorrupt(format!("line {lineno}: empty text")));
    }
    for b in &m.boxes {
        let inside = b.left() >= 0
            && b.top() >= 0
            && b.right() as i64 <= i64::from(w)
            && b.bottom() as i64 <= i64::from(h)
            && b.width() > 0
            && b.height() > 0;
        if !inside {
            return Err(Error::ManifestCorrupt(format!(
                "line {lineno}: box {:?} outside {w}x{h}",
                b.corners
            )));
        }
    }
    Ok(())
}

/// Ids of a corpus as a sorted set; handy for pairing checks.
pub fn id_set(memes: &[Meme]) -> BTreeSet<u64> {
    memes.iter().map(|m| m.id).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blank(w: u32, h: u32) -> RgbImage {
        RgbImage::from_pixel(w, h, Rgb([100, 100, 100]))
    }

    #[test]
    fn render_box_matches_hand_counted_geometry() {
        // "AB" at scale 2: height 7*2 = 14, width (5 + 1 + 5) * 2 = 22.
        let mut img = blank(128, 128);
        let boxes = render_text(&mut img, "AB", (10, 10), 2).unwrap();
        assert_eq!(boxes.len(), 1);
        let b = boxes[0];
        assert_eq!((b.left(), b.top()), (10, 10));
        assert_eq!(b.width(), 22);
        assert_eq!(b.height(), 14);
    }

    #[test]
    fn render_empty_text_yields_no_boxes() {
        let mut img = blank(64, 64);
        let before = img.clone();
        let boxes = render_text(&mut img, "", (8, 8), 2).unwrap();
        assert!(boxes.is_empty());
        assert_eq!(img, before);
    }

    #[test]
    fn render_rejects_oversized_text() {
        let mut img = blank(64, 64);
        let long = "AAAA ".repeat(40);
        assert!(matches!(
            render_text(&mut img, &long, (8, 8), 2),
            Err(Error::TextTooLarge(_))
        ));
    }

    #[test]
    fn boxes_are_tight_over_glyph_fill() {
        // Recompute each line's white-pixel bounding box from the image and
        // compare with the returned boxes.
        let mut img = blank(128, 128);
        let boxes = render_text(&mut img, "FROG KELP VEX", (8, 8), 2).unwrap();
        for b in &boxes {
            let (mut x0, mut y0, mut x1, mut y1) = (i32::MAX, i32::MAX, i32::MIN, i32::MIN);
            for y in b.top()..b.bottom() {
                for x in 0..128i32 {
                    if *img.get_pixel(x as u32, y as u32) == Rgb([255, 255, 255]) {
                        x0 = x0.min(x);
                        y0 = y0.min(y);
                        x1 = x1.max(x + 1);
                        y1 = y1.max(y + 1);
                    }
                }
            }
            assert_eq!((x0, y0, x1, y1), (b.left(), b.top(), b.right(), b.bottom()));
        }
    }

    #[test]
    fn label_rule_is_xor() {
        let cfg = CorpusConfig::default();
        assert_eq!(synthetic_label("ZORN MOON", false, &cfg), Label::Hateful);
        assert_eq!(synthetic_label("ZORN MOON", true, &cfg), Label::NonHateful);
        assert_eq!(synthetic_label("MOON TACO", true, &cfg), Label::Hateful);
        assert_eq!(synthetic_label("MOON TACO", false, &cfg), Label::NonHateful);
    }

    #[test]
    fn generation_is_deterministic_and_balanced() {
        let cfg = CorpusConfig {
            n_train: 400,
            n_test: 20,
            seed: 11,
            ..CorpusConfig::default()
        };
        let (train_a, test_a) = generate_corpus(&cfg).unwrap();
        let (train_b, _) = generate_corpus(&cfg).unwrap();
        assert_eq!(train_a, train_b);
        assert_eq!(train_a.len(), 400);
        assert_eq!(test_a.len(), 20);
        assert_eq!(test_a[0].id, 400);
        let hateful = train_a.iter().filter(|m| m.label == Label::Hateful).count();
        let frac = hateful as f64 / train_a.len() as f64;
        assert!((0.4..=0.6).contains(&frac), "hateful fraction {frac}");
    }

    #[test]
    fn seed_changes_content() {
        let a = generate_one(&CorpusConfig { seed: 1, ..CorpusConfig::default() }, 0).unwrap();
        let b = generate_one(&CorpusConfig { seed: 2, ..CorpusConfig::default() }, 0).unwrap();
        assert_ne!(a.image, b.image);
    }

    #[test]
    fn punctuated_fraction_tracks_rate() {
        let cfg = CorpusConfig {
            n_train: 600,
            n_test: 1,
            seed: 5,
            ..CorpusConfig::default()
        };
        let (train, _) = generate_corpus(&cfg).unwrap();
        let dotted = train.iter().filter(|m| m.text.ends_with('.')).count();
        let frac = dotted as f64 / train.len() as f64;
        assert!((0.10..=0.20).contains(&frac), "dotted fraction {frac}");
    }

    #[test]
    fn background_under_text_is_clamped() {
        let cfg = CorpusConfig { seed: 3, ..CorpusConfig::default() };
        let m = generate_one(&cfg, 17).unwrap();
        // Within text rows, non-glyph pixels must sit at or below the
        // legibility ceiling (white fill and black outline are exempt).
        let top = m.boxes.iter().map(|b| b.top()).min().unwrap();
        let bottom = m.boxes.iter().map(|b| b.bottom()).max().unwrap();
        for y in top..bottom {
            for x in 0..m.image.width() {
                let px = m.image.get_pixel(x, y as u32);
                if *px == Rgb([255, 255, 255]) || *px == Rgb([0, 0, 0]) {
                    continue;
                }
                assert!(luma(px) <= TEXT_ROW_MAX_LUMA + 0.5, "bright pixel under text");
            }
        }
    }

    #[test]
    fn marker_darkens_top_right_corner() {
        let cfg = CorpusConfig { seed: 9, ..CorpusConfig::default() };
        // Find one marked and one unmarked meme and compare corner luma.
        let (train, _) = generate_corpus(&CorpusConfig { n_train: 50, n_test: 1, ..cfg }).unwrap();
        let corner_mean = |m: &Meme| {
            let (w, _) = m.image.dimensions();
            let mut s = 0.0;
            for y in 0..16 {
                for x in (w - 16)..w {
                    s += luma(m.image.get_pixel(x, y));
                }
            }
            s / 256.0
        };
        let marked: Vec<f64> = train
            .iter()
            .filter(|m| {
                let has_text_marker = m
                    .text
                    .split_whitespace()
                    .any(|t| DEFAULT_MARKERS.contains(&t));
                // XOR rule: recover the marker flag from label + text.
                (m.label == Label::Hateful) != has_text_marker
            })
            .map(corner_mean)
            .collect();
        let unmarked: Vec<f64> = train
            .iter()
            .filter(|m| {
                let has_text_marker = m
                    .text
                    .split_whitespace()
                    .any(|t| DEFAULT_MARKERS.contains(&t));
                (m.label == Label::Hateful) == has_text_marker
            })
            .map(corner_mean)
            .collect();
        assert!(!marked.is_empty() && !unmarked.is_empty());
        let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        // The tint is multiplicative, so visibility is relative: tinted
        // corners should average well under two thirds of untinted luma.
        assert!(
            avg(&marked) < 0.66 * avg(&unmarked),
            "marker not visible in luma: tinted {} vs untinted {}",
            avg(&marked),
            avg(&unmarked)
        );
    }

    #[test]
    fn corpus_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CorpusConfig {
            n_train: 6,
            n_test: 2,
            seed: 21,
            ..CorpusConfig::default()
        };
        let (train, _) = generate_corpus(&cfg).unwrap();
        save_corpus(&train, dir.path()).unwrap();
        let loaded = load_corpus(dir.path()).unwrap();
        assert_eq!(train, loaded);
    }

    #[test]
    fn clean_manifest_has_exactly_five_keys() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CorpusConfig {
            n_train: 2,
            n_test: 1,
            seed: 21,
            ..CorpusConfig::default()
        };
        let (train, _) = generate_corpus(&cfg).unwrap();
        let manifest = save_corpus(&train, dir.path()).unwrap();
        let body = std::fs::read_to_string(manifest).unwrap();
        for line in body.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
            keys.sort();
            assert_eq!(keys, ["boxes", "id", "image_file", "label", "text"]);
        }
    }

    #[test]
    fn corrupt_manifest_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CorpusConfig {
            n_train: 2,
            n_test: 1,
            seed: 4,
            ..CorpusConfig::default()
        };
        let (train, _) = generate_corpus(&cfg).unwrap();
        let manifest = save_corpus(&train, dir.path()).unwrap();
        // Drop the label key from the first line.
        let body = std::fs::read_to_string(&manifest).unwrap();
        let mangled: Vec<String> = body
            .lines()
            .map(|l| l.replacen("\"label\":\"hateful\",", "", 1)
                .replacen("\"label\":\"non_hateful\",", "", 1))
            .collect();
        std::fs::write(&manifest, mangled.join("\n")).unwrap();
        assert!(matches!(load_corpus(dir.path()), Err(Error::ManifestCorrupt(_))));
    }

    #[test]
    fn missing_manifest_is_a_missing_input() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_corpus(dir.path()), Err(Error::MissingInput(_))));
    }
}
