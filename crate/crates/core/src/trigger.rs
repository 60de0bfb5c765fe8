//! Trigger injection: placement geometry, dot drawing, feature-blended dots,
//! baseline patch/dual-key triggers, and dataset poisoning.
//!
//! The dot trigger is two small filled discs appended to the end of the last
//! text line that admits them, mimicking punctuation. Placement walks the
//! text boxes in order, keeps the last candidate that passes the boundary
//! test, and sizes the squares as `round(epsilon * text_height)` with a 2-px
//! floor. The second disc sits two pixels right of the first.

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augmentor::{AugmentorModel, GrayTile};
use crate::corpus::{Label, Meme, TextBox};
use crate::error::{Error, Result};
use crate::extractor::{extract_text, ExtractorConfig};
use crate::util::{ceil_fraction, round_half_up};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerKind {
    /// Two white dots at the end of the text.
    CmtInitial,
    /// Two dots carrying feature-blended gray values from the augmentor.
    CmtAugmented,
    /// Bottom-right noise patch (image-only baseline).
    Patch,
    /// Noise patch plus a typed text key (dual-key baseline).
    DualKey,
    /// Dot trigger drawn in a configurable solid color.
    DotsColored,
}

impl TriggerKind {
    /// Dot-shaped triggers read back as a ".." token from the pixels; patch
    /// and dual-key triggers leave no pixel-recoverable text.
    pub fn produces_dot_text(self) -> bool {
        matches!(
            self,
            TriggerKind::CmtInitial | TriggerKind::CmtAugmented | TriggerKind::DotsColored
        )
    }

    pub fn needs_placement(self) -> bool {
        self.produces_dot_text()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TriggerConfig {
    pub kind: TriggerKind,
    /// Dot size as a fraction of the source line's text height.
    pub epsilon: f64,
    /// Blend weight of augmentor features in the augmented trigger.
    pub lambda: f64,
    /// Gray level of the plain dot fill.
    pub white_level: u8,
    /// Fill color for `dots_colored`.
    pub dot_color: [u8; 3],
    /// Patch area as a fraction of the image area.
    pub patch_scale: f64,
    /// Alpha of the patch blend (1.0 = overwrite).
    pub patch_alpha: f64,
    /// Text key prepended by the dual-key trigger.
    pub dual_key_word: String,
    pub target_label: Label,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        TriggerConfig {
            kind: TriggerKind::CmtAugmented,
            epsilon: 1.0 / 8.0,
            lambda: 0.2,
            white_level: 255,
            dot_color: [255, 255, 255],
            patch_scale: 0.10,
            patch_alpha: 1.0,
            dual_key_word: "Consider".to_string(),
            target_label: Label::NonHateful,
        }
    }
}

impl TriggerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::InvalidConfig("epsilon must be in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig("lambda must be in [0, 1]".into()));
        }
        if !(self.patch_scale > 0.0 && self.patch_scale <= 0.5) {
            return Err(Error::InvalidConfig("patch_scale must be in (0, 0.5]".into()));
        }
        if !(0.0..=1.0).contains(&self.patch_alpha) {
            return Err(Error::InvalidConfig("patch_alpha must be in [0, 1]".into()));
        }
        if self.dual_key_word.trim().is_empty() {
            return Err(Error::InvalidConfig("dual_key_word must be non-empty".into()));
        }
        Ok(())
    }
}

/// Top-left corner and size of the first dot square. The second dot occupies
/// `(x + w + 2, y)`; callers may rely on `x + 2w + 2 <= image width` and
/// `y + h <=` image height.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

/// Metadata recorded on a poisoned meme: what was injected and what the
/// attacker types for it in manual-text evaluations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerMark {
    pub kind: TriggerKind,
    pub placement: Option<Placement>,
    pub typed_text: String,
}

/// Resolved poisoning plan: which train ids get the trigger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoisonPlan {
    pub rho: f64,
    pub seed: u64,
    pub trigger: TriggerConfig,
    pub poisoned_ids: Vec<u64>,
}

/// Pick the dot placement from the text boxes, walking them in order and
/// keeping the last box whose candidate passes the boundary test.
///
/// For a box the candidate sits one pixel right of the box's right edge,
/// bottom-aligned; the square side is `round_half_up(epsilon * height)`
/// clamped to at least 2. A candidate is accepted iff `x + 2w + 2` stays
/// within the image width and the dot does not rise above the top edge.
pub fn select_placement(
    boxes: &[TextBox],
    image_w: u32,
    image_h: u32,
    epsilon: f64,
) -> Result<Placement> {
    let mut chosen = None;
    for b in boxes {
        let size = round_half_up(epsilon * f64::from(b.height() as i32)).max(2);
        let x = i64::from(b.right()) + 1;
        let y = i64::from(b.bottom()) - size;
        let fits = x + 2 * size + 2 <= i64::from(image_w)
            && y >= 0
            && y + size <= i64::from(image_h)
            && x >= 0;
        if fits {
            chosen = Some(Placement {
                x: x as u32,
                y: y as u32,
                w: size as u32,
                h: size as u32,
            });
        }
    }
    chosen.ok_or(Error::NoValidPlacement)
}

/// Pixel offsets of a rasterized filled disc of diameter `d` within its
/// bounding square. The radius test uses `d/2 - 0.25` against pixel centers,
/// which gives the usual small-disc shapes: d=2 is a full square, d=3 a
/// five-pixel cross.
pub fn disc_offsets(d: u32) -> Vec<(u32, u32)> {
    let c = (f64::from(d) - 1.0) / 2.0;
    let r = f64::from(d) / 2.0 - 0.25;
    let mut out = Vec::new();
    for y in 0..d {
        for x in 0..d {
            let (dx, dy) = (f64::from(x) - c, f64::from(y) - c);
            if dx * dx + dy * dy <= r * r {
                out.push((x, y));
            }
        }
    }
    out
}

/// Draw both trigger discs with per-pixel colors supplied by `color_at`,
/// then outline every disc pixel's non-disc 8-neighbors in black.
fn draw_dots(
    img: &mut RgbImage,
    p: Placement,
    mut color_at: impl FnMut(u32, u32) -> Rgb<u8>,
) {
    let (w, h) = img.dimensions();
    let d = p.w.min(p.h);
    let offsets = disc_offsets(d);
    // Center the disc inside the square if the sides differ.
    let (cx, cy) = ((p.w - d) / 2, (p.h - d) / 2);
    let origins = [(p.x, p.y), (p.x + p.w + 2, p.y)];
    let mut filled = std::collections::HashSet::new();
    for (ox, oy) in origins {
        for (dx, dy) in &offsets {
            let (px, py) = (ox + cx + dx, oy + cy + dy);
            if px < w && py < h {
                img.put_pixel(px, py, color_at(*dx, *dy));
                filled.insert((px, py));
            }
        }
    }
    for (px, py) in filled.clone() {
        for ny in py.saturating_sub(1)..=(py + 1).min(h - 1) {
            for nx in px.saturating_sub(1)..=(px + 1).min(w - 1) {
                if !filled.contains(&(nx, ny)) {
                    img.put_pixel(nx, ny, Rgb([0, 0, 0]));
                }
            }
        }
    }
}

/// Two solid-color discs at the placement; the plain dot trigger uses the
/// configured white level for all three channels.
pub fn inject_dots(img: &RgbImage, p: Placement, fill: Rgb<u8>) -> RgbImage {
    let mut out = img.clone();
    draw_dots(&mut out, p, |_, _| fill);
    out
}

pub fn inject_initial(img: &RgbImage, p: Placement, white_level: u8) -> RgbImage {
    inject_dots(img, p, Rgb([white_level, white_level, white_level]))
}

/// Redraw the trigger discs with gray values `round(lambda * tile + (1 -
/// lambda) * white)`. Both dots share the same tile. With `lambda = 0` this
/// is pixel-identical to [`inject_initial`].
pub fn inject_augmented(
    img: &RgbImage,
    p: Placement,
    tile: &GrayTile,
    lambda: f64,
    white_level: u8,
) -> Result<RgbImage> {
    if tile.w != p.w || tile.h != p.h {
        return Err(Error::TileShapeMismatch {
            got_w: tile.w,
            got_h: tile.h,
            want_w: p.w,
            want_h: p.h,
        });
    }
    let white = f64::from(white_level);
    let mut out = img.clone();
    draw_dots(&mut out, p, |dx, dy| {
        let t = f64::from(tile.at(dx, dy));
        let v = (lambda * t + (1.0 - lambda) * white).round().clamp(0.0, 255.0) as u8;
        Rgb([v, v, v])
    });
    Ok(out)
}

/// Token the extractor reads back from the two dots.
pub const TRIGGER_TOKEN: &str = "..";

/// Text half of the dot trigger: the caption with a ".." token appended.
pub fn poison_text(text: &str) -> String {
    format!("{text} {TRIGGER_TOKEN}")
}

/// Fixed seed for the baseline patch pattern. The pattern must be identical
/// across training and evaluation or the backdoor would never fire; this is
/// the usual fixed-trigger convention for patch attacks.
const PATCH_PATTERN_SEED: u64 = 0x70a7_c4ed_0000_0001;

/// Side length of the baseline patch for a given image size.
pub fn patch_side(image_w: u32, image_h: u32, patch_scale: f64) -> u32 {
    let side = round_half_up((patch_scale * f64::from(image_w) * f64::from(image_h)).sqrt());
    (side.max(1) as u32).min(image_w).min(image_h)
}

/// Alpha-blend a fixed random-noise square into the bottom-right corner.
pub fn inject_patch(img: &RgbImage, cfg: &TriggerConfig) -> RgbImage {
    let (w, h) = img.dimensions();
    let side = patch_side(w, h, cfg.patch_scale);
    let (x0, y0) = (w - side, h - side);
    let mut rng = ChaCha8Rng::seed_from_u64(PATCH_PATTERN_SEED);
    let alpha = cfg.patch_alpha;
    let mut out = img.clone();
    for y in y0..h {
        for x in x0..w {
            let noise: [u8; 3] = [rng.gen(), rng.gen(), rng.gen()];
            let px = out.get_pixel_mut(x, y);
            for c in 0..3 {
                let v = f64::from(px[c]) * (1.0 - alpha) + f64::from(noise[c]) * alpha;
                px[c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}

/// Dual-key trigger: patch in the image plus a text key the attacker types.
/// The typed text gains the key word; the pixels never contain it.
pub fn make_dual_key(meme: &Meme, cfg: &TriggerConfig) -> Meme {
    let mut out = meme.clone();
    out.image = inject_patch(&meme.image, cfg);
    out.trigger = Some(TriggerMark {
        kind: TriggerKind::DualKey,
        placement: None,
        typed_text: format!("{} {}", cfg.dual_key_word, meme.text),
    });
    out
}

/// Inject the configured trigger into one meme and record its mark. The
/// label is left untouched; training-time relabeling happens in
/// [`poison_dataset`].
pub fn apply_trigger(
    meme: &Meme,
    cfg: &TriggerConfig,
    augmentor: Option<&AugmentorModel>,
    ext_cfg: &ExtractorConfig,
) -> Result<Meme> {
    match cfg.kind {
        TriggerKind::Patch => {
            let mut out = meme.clone();
            out.image = inject_patch(&meme.image, cfg);
            out.trigger = Some(TriggerMark {
                kind: TriggerKind::Patch,
                placement: None,
                typed_text: meme.text.clone(),
            });
            Ok(out)
        }
        TriggerKind::DualKey => Ok(make_dual_key(meme, cfg)),
        TriggerKind::CmtInitial | TriggerKind::CmtAugmented | TriggerKind::DotsColored => {
            let (_, boxes) = extract_text(meme, ext_cfg)?;
            let (w, h) = meme.image.dimensions();
            let p = select_placement(&boxes, w, h, cfg.epsilon)?;
            let image = match cfg.kind {
                TriggerKind::CmtInitial => inject_initial(&meme.image, p, cfg.white_level),
                TriggerKind::DotsColored => inject_dots(&meme.image, p, Rgb(cfg.dot_color)),
                TriggerKind::CmtAugmented => {
                    let model = augmentor.ok_or_else(|| {
                        Error::InvalidConfig(
                            "cmt_augmented trigger needs a trained augmentor".into(),
                        )
                    })?;
                    let initial = inject_initial(&meme.image, p, cfg.white_level);
                    let feat = model.extract_feature(&initial);
                    let tile = crate::augmentor::feature_to_tile(&feat, p.w, p.h);
                    inject_augmented(&meme.image, p, &tile, cfg.lambda, cfg.white_level)?
                }
                _ => unreachable!(),
            };
            let mut out = meme.clone();
            out.image = image;
            out.trigger = Some(TriggerMark {
                kind: cfg.kind,
                placement: Some(p),
                typed_text: poison_text(&meme.text),
            });
            Ok(out)
        }
    }
}

fn placeable(meme: &Meme, cfg: &TriggerConfig) -> bool {
    if !cfg.kind.needs_placement() {
        return true;
    }
    let (w, h) = meme.image.dimensions();
    select_placement(&meme.boxes, w, h, cfg.epsilon).is_ok()
}

/// Sample `ceil(rho * n)` train ids for poisoning. Samples that admit no
/// placement are skipped and replaced by later draws; running out of
/// candidates is `InsufficientPlaceable`.
pub fn plan_poison(
    train: &[Meme],
    trigger: &TriggerConfig,
    rho: f64,
    seed: u64,
) -> Result<PoisonPlan> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidConfig("rho must be in (0, 1]".into()));
    }
    trigger.validate()?;
    let needed = ceil_fraction(rho, train.len()).max(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates so the poisoned subset is a uniform sample.
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut ids = Vec::with_capacity(needed);
    for idx in order {
        if ids.len() == needed {
            break;
        }
        if placeable(&train[idx], trigger) {
            ids.push(train[idx].id);
        }
    }
    if ids.len() < needed {
        return Err(Error::InsufficientPlaceable {
            placeable: ids.len(),
            needed,
        });
    }
    ids.sort_unstable();
    Ok(PoisonPlan {
        rho,
        seed,
        trigger: trigger.clone(),
        poisoned_ids: ids,
    })
}

/// Apply a poisoning plan: inject the trigger into each planned sample and
/// relabel it to the target. Unplanned samples pass through untouched.
pub fn poison_dataset(
    train: &[Meme],
    plan: &PoisonPlan,
    augmentor: Option<&AugmentorModel>,
    ext_cfg: &ExtractorConfig,
) -> Result<Vec<Meme>> {
    if plan.trigger.kind == TriggerKind::CmtAugmented && augmentor.is_none() {
        return Err(Error::InvalidConfig(
            "cmt_augmented trigger needs a trained augmentor".into(),
        ));
    }
    let targets: std::collections::BTreeSet<u64> = plan.poisoned_ids.iter().copied().collect();
    train
        .iter()
        .map(|m| {
            if targets.contains(&m.id) {
                let mut p = apply_trigger(m, &plan.trigger, augmentor, ext_cfg)?;
                p.label = plan.trigger.target_label;
                Ok(p)
            } else {
                Ok(m.clone())
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusConfig};
    use crate::extractor::ExtractorConfig;
    use proptest::prelude::*;

    fn gray(w: u32, h: u32, v: u8) -> RgbImage {
        RgbImage::from_pixel(w, h, Rgb([v, v, v]))
    }

    #[test]
    fn placement_matches_hand_trace() {
        // Box (10,50)-(90,70) in a 128x128 image, epsilon 1/8:
        // height 20 -> side round(2.5) = 3, x = 91, y = 70 - 3 = 67.
        let b = TextBox::from_bounds(10, 50, 90, 70);
        let p = select_placement(&[b], 128, 128, 0.125).unwrap();
        assert_eq!((p.x, p.y, p.w, p.h), (91, 67, 3, 3));
    }

    #[test]
    fn placement_keeps_last_fitting_box() {
        let fits = TextBox::from_bounds(10, 50, 90, 70);
        // Right edge 126: 127 + 6 + 2 = 135 > 128, rejected.
        let too_far = TextBox::from_bounds(100, 80, 126, 100);
        let p = select_placement(&[fits, too_far], 128, 128, 0.125).unwrap();
        assert_eq!((p.x, p.y), (91, 67));
        // Two fitting boxes: the later one wins.
        let second = TextBox::from_bounds(10, 80, 90, 100);
        let p = select_placement(&[fits, second], 128, 128, 0.125).unwrap();
        assert_eq!((p.x, p.y), (91, 97));
        assert!(matches!(
            select_placement(&[too_far], 128, 128, 0.125),
            Err(Error::NoValidPlacement)
        ));
    }

    #[test]
    fn placement_size_has_two_pixel_floor() {
        let tiny = TextBox::from_bounds(10, 50, 60, 55); // height 5 -> round(0.625) = 1 -> 2
        let p = select_placement(&[tiny], 128, 128, 0.125).unwrap();
        assert_eq!((p.w, p.h), (2, 2));
    }

    #[test]
    fn disc_shapes_for_small_diameters() {
        let mut d3 = disc_offsets(3);
        d3.sort_unstable();
        assert_eq!(d3, vec![(0, 1), (1, 0), (1, 1), (1, 2), (2, 1)]);
        assert_eq!(disc_offsets(2).len(), 4);
    }

    #[test]
    fn initial_dots_touch_a_bounded_region_and_are_idempotent() {
        let img = gray(64, 64, 120);
        let p = Placement { x: 20, y: 30, w: 3, h: 3 };
        let once = inject_initial(&img, p, 255);
        let changed = once
            .pixels()
            .zip(img.pixels())
            .filter(|(a, b)| a != b)
            .count();
        assert!(changed > 0);
        assert!(changed <= (2 * (p.w + 2) * (p.h + 2)) as usize, "changed {changed}");
        // All changes inside the two (w+2)x(h+2) halos.
        for (x, y, px) in once.enumerate_pixels() {
            if px != img.get_pixel(x, y) {
                let in_first = (p.x - 1..=p.x + p.w) .contains(&x) && (p.y - 1..=p.y + p.h).contains(&y);
                let x2 = p.x + p.w + 2;
                let in_second = (x2 - 1..=x2 + p.w).contains(&x) && (p.y - 1..=p.y + p.h).contains(&y);
                assert!(in_first || in_second, "stray change at ({x}, {y})");
            }
        }
        let twice = inject_initial(&once, p, 255);
        assert_eq!(once, twice);
    }

    #[test]
    fn augmented_blend_arithmetic() {
        // lambda 0.2, tile 100, white 255 -> round(20 + 204) = 224.
        let img = gray(64, 64, 90);
        let p = Placement { x: 10, y: 10, w: 2, h: 2 };
        let tile = GrayTile { w: 2, h: 2, data: vec![100; 4] };
        let out = inject_augmented(&img, p, &tile, 0.2, 255).unwrap();
        assert_eq!(*out.get_pixel(10, 10), Rgb([224, 224, 224]));
    }

    #[test]
    fn augmented_with_zero_lambda_equals_initial() {
        let img = gray(64, 64, 77);
        let p = Placement { x: 12, y: 40, w: 3, h: 3 };
        let tile = GrayTile { w: 3, h: 3, data: vec![13, 200, 9, 55, 0, 255, 41, 3, 128] };
        let a = inject_augmented(&img, p, &tile, 0.0, 255).unwrap();
        let b = inject_initial(&img, p, 255);
        assert_eq!(a, b);
    }

    #[test]
    fn augmented_with_full_lambda_and_zero_tile_gives_black_dots() {
        let img = gray(64, 64, 77);
        let p = Placement { x: 12, y: 40, w: 2, h: 2 };
        let tile = GrayTile { w: 2, h: 2, data: vec![0; 4] };
        let out = inject_augmented(&img, p, &tile, 1.0, 255).unwrap();
        assert_eq!(*out.get_pixel(12, 40), Rgb([0, 0, 0]));
    }

    #[test]
    fn augmented_rejects_wrong_tile_shape() {
        let img = gray(64, 64, 77);
        let p = Placement { x: 12, y: 40, w: 3, h: 3 };
        let tile = GrayTile { w: 2, h: 2, data: vec![0; 4] };
        assert!(matches!(
            inject_augmented(&img, p, &tile, 0.2, 255),
            Err(Error::TileShapeMismatch { .. })
        ));
    }

    #[test]
    fn poison_text_appends_token() {
        assert_eq!(poison_text("when the cop sees a kid"), "when the cop sees a kid ..");
    }

    #[test]
    fn patch_side_matches_area_fraction() {
        // sqrt(0.10 * 128 * 128) = 40.48 -> 40.
        assert_eq!(patch_side(128, 128, 0.10), 40);
    }

    #[test]
    fn patch_is_fixed_and_alpha_blends() {
        let img = gray(128, 128, 100);
        let cfg = TriggerConfig { kind: TriggerKind::Patch, ..TriggerConfig::default() };
        let a = inject_patch(&img, &cfg);
        let b = inject_patch(&img, &cfg);
        assert_eq!(a, b, "patch pattern must be identical across calls");
        // Changes confined to the bottom-right square.
        for (x, y, px) in a.enumerate_pixels() {
            if px != img.get_pixel(x, y) {
                assert!(x >= 88 && y >= 88, "stray change at ({x}, {y})");
            }
        }
        let zero = inject_patch(&img, &TriggerConfig { patch_alpha: 0.0, ..cfg.clone() });
        assert_eq!(zero, img);
        let half = inject_patch(&img, &TriggerConfig { patch_alpha: 0.5, ..cfg });
        let full_px = a.get_pixel(100, 100);
        let half_px = half.get_pixel(100, 100);
        for c in 0..3 {
            let expect = (0.5 * 100.0 + 0.5 * f64::from(full_px[c])).round() as i32;
            assert!((i32::from(half_px[c]) - expect).abs() <= 1);
        }
    }

    #[test]
    fn dual_key_types_the_key_but_never_draws_it() {
        let cfg = CorpusConfig { n_train: 2, n_test: 1, seed: 8, ..CorpusConfig::default() };
        let (train, _) = generate_corpus(&cfg).unwrap();
        let tcfg = TriggerConfig { kind: TriggerKind::DualKey, ..TriggerConfig::default() };
        let dk = make_dual_key(&train[0], &tcfg);
        assert_eq!(dk.typed_text(), format!("Consider {}", train[0].text));
        assert_eq!(dk.text, train[0].text, "ground-truth text unchanged");
        let (extracted, _) = extract_text(&dk, &ExtractorConfig::default()).unwrap();
        assert!(!extracted.contains("Consider"));
    }

    #[test]
    fn plan_counts_and_determinism() {
        let cfg = CorpusConfig { n_train: 200, n_test: 1, seed: 31, ..CorpusConfig::default() };
        let (train, _) = generate_corpus(&cfg).unwrap();
        let tcfg = TriggerConfig { kind: TriggerKind::CmtInitial, ..TriggerConfig::default() };
        let plan = plan_poison(&train, &tcfg, 0.05, 7).unwrap();
        assert_eq!(plan.poisoned_ids.len(), 10);
        assert_eq!(plan, plan_poison(&train, &tcfg, 0.05, 7).unwrap());
        assert_ne!(
            plan.poisoned_ids,
            plan_poison(&train, &tcfg, 0.05, 8).unwrap().poisoned_ids
        );
    }

    #[test]
    fn poison_relabels_planned_samples_only() {
        let cfg = CorpusConfig { n_train: 120, n_test: 1, seed: 3, ..CorpusConfig::default() };
        let (train, _) = generate_corpus(&cfg).unwrap();
        let tcfg = TriggerConfig { kind: TriggerKind::CmtInitial, ..TriggerConfig::default() };
        let plan = plan_poison(&train, &tcfg, 0.1, 5).unwrap();
        let ext = ExtractorConfig::default();
        let poisoned = poison_dataset(&train, &plan, None, &ext).unwrap();
        assert_eq!(poisoned.len(), train.len());
        for (orig, p) in train.iter().zip(&poisoned) {
            if plan.poisoned_ids.contains(&p.id) {
                assert_eq!(p.label, Label::NonHateful);
                assert!(p.trigger.is_some());
                assert_ne!(p.image, orig.image);
                assert_eq!(p.typed_text(), poison_text(&orig.text));
            } else {
                assert_eq!(p, orig);
            }
        }
    }

    #[test]
    fn unplaceable_samples_raise_insufficient() {
        // Boxes flush with the right edge leave no room for the dots.
        let img = gray(64, 64, 90);
        let memes: Vec<Meme> = (0..4)
            .map(|id| Meme {
                id,
                image: img.clone(),
                text: "AB".into(),
                label: Label::Hateful,
                boxes: vec![TextBox::from_bounds(40, 10, 63, 24)],
                trigger: None,
            })
            .collect();
        let tcfg = TriggerConfig { kind: TriggerKind::CmtInitial, ..TriggerConfig::default() };
        assert!(matches!(
            plan_poison(&memes, &tcfg, 0.5, 1),
            Err(Error::InsufficientPlaceable { placeable: 0, needed: 2 })
        ));
    }

    #[test]
    fn augmented_poisoning_without_augmentor_is_rejected() {
        let cfg = CorpusConfig { n_train: 20, n_test: 1, seed: 3, ..CorpusConfig::default() };
        let (train, _) = generate_corpus(&cfg).unwrap();
        let tcfg = TriggerConfig { kind: TriggerKind::CmtAugmented, ..TriggerConfig::default() };
        let plan = plan_poison(&train, &tcfg, 0.1, 5).unwrap();
        assert!(matches!(
            poison_dataset(&train, &plan, None, &ExtractorConfig::default()),
            Err(Error::InvalidConfig(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn placement_respects_boundaries(
            x0 in 0i32..100,
            y0 in 0i32..100,
            w in 1i32..60,
            h in 1i32..60,
            eps in 0.05f64..0.5,
        ) {
            let b = TextBox::from_bounds(x0, y0, (x0 + w).min(127), (y0 + h).min(127));
            if b.width() <= 0 || b.height() <= 0 { return Ok(()); }
            if let Ok(p) = select_placement(&[b], 128, 128, eps) {
                prop_assert!(p.x + 2 * p.w + 2 <= 128);
                prop_assert!(p.y + p.h <= 128);
                prop_assert_eq!(p.w, p.h);
                prop_assert!(p.w >= 2);
                let expect = round_half_up(eps * f64::from(b.height())).max(2) as u32;
                prop_assert_eq!(p.w, expect);
            }
        }

        #[test]
        fn blend_is_linear_within_rounding(t in 0u8..=255, lam in 0.0f64..=1.0) {
            let white = 255.0;
            let v = (lam * f64::from(t) + (1.0 - lam) * white).round();
            let straight = lam * f64::from(t) + (1.0 - lam) * white;
            prop_assert!((v - straight).abs() <= 0.5 + 1e-12);
            prop_assert!((0.0..=255.0).contains(&v));
        }

        #[test]
        fn blend_whiteness_bound_at_default_lambda(t in 0u8..=255) {
            let v = (0.2 * f64::from(t) + 0.8 * 255.0).round();
            prop_assert!((204.0..=255.0).contains(&v));
        }
    }
}
