//! A tiny 5x7 bitmap font used by the synthetic corpus renderer.
//!
//! Most glyphs are 5 columns wide; `.` is a deliberate exception at 1 column
//! so that a rendered full stop is a single `scale`x`scale` block. Rows are
//! stored as bit patterns, most significant bit = leftmost column.

use crate::error::{Error, Result};

pub const GLYPH_H: u32 = 7;
/// Gap between glyphs of one word, in unscaled pixels.
pub const CHAR_GAP: u32 = 1;
/// Advance between words, in unscaled pixels.
pub const SPACE_ADVANCE: u32 = 4;
/// Vertical gap between lines, in unscaled pixels.
pub const LINE_GAP: u32 = 2;

#[derive(Debug, Clone, Copy)]
pub struct Glyph {
    pub width: u32,
    pub rows: [u8; 7],
}

impl Glyph {
    /// Whether the bitmap bit at (col, row) is set.
    pub fn bit(&self, col: u32, row: u32) -> bool {
        debug_assert!(col < self.width && row < GLYPH_H);
        (self.rows[row as usize] >> (self.width - 1 - col)) & 1 == 1
    }
}

macro_rules! glyph {
    ($w:expr, [$($r:expr),* $(,)?]) => {
        Glyph { width: $w, rows: [$($r),*] }
    };
}

/// Look up the glyph for one character. Space is handled by the renderer as
/// pure advance and is not a glyph.
pub fn glyph(c: char) -> Result<&'static Glyph> {
    static A: Glyph = glyph!(5, [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11]);
    static B: Glyph = glyph!(5, [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E]);
    static C: Glyph = glyph!(5, [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E]);
    static D: Glyph = glyph!(5, [0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E]);
    static E: Glyph = glyph!(5, [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F]);
    static F: Glyph = glyph!(5, [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10]);
    static G: Glyph = glyph!(5, [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F]);
    static H: Glyph = glyph!(5, [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11]);
    static I: Glyph = glyph!(5, [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E]);
    static J: Glyph = glyph!(5, [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C]);
    static K: Glyph = glyph!(5, [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11]);
    static L: Glyph = glyph!(5, [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F]);
    static M: Glyph = glyph!(5, [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11]);
    static N: Glyph = glyph!(5, [0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11]);
    static O: Glyph = glyph!(5, [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E]);
    static P: Glyph = glyph!(5, [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10]);
    static Q: Glyph = glyph!(5, [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D]);
    static R: Glyph = glyph!(5, [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11]);
    static S: Glyph = glyph!(5, [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E]);
    static T: Glyph = glyph!(5, [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04]);
    static U: Glyph = glyph!(5, [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E]);
    static V: Glyph = glyph!(5, [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04]);
    static W: Glyph = glyph!(5, [0x11, 0x11, 0x11, 0x15, 0x15, 0x1B, 0x11]);
    static X: Glyph = glyph!(5, [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11]);
    static Y: Glyph = glyph!(5, [0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04]);
    static Z: Glyph = glyph!(5, [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F]);
    static D0: Glyph = glyph!(5, [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E]);
    static D1: Glyph = glyph!(5, [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E]);
    static D2: Glyph = glyph!(5, [0x0E, 0x11, 0x01, 0x06, 0x08, 0x10, 0x1F]);
    static D3: Glyph = glyph!(5, [0x0E, 0x11, 0x01, 0x06, 0x01, 0x11, 0x0E]);
    static D4: Glyph = glyph!(5, [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02]);
    static D5: Glyph = glyph!(5, [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E]);
    static D6: Glyph = glyph!(5, [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E]);
    static D7: Glyph = glyph!(5, [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08]);
    static D8: Glyph = glyph!(5, [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E]);
    static D9: Glyph = glyph!(5, [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C]);
    static DOT: Glyph = glyph!(1, [0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x01]);

    Ok(match c {
        'A' => &A,
        'B' => &B,
        'C' => &C,
        'D' => &D,
        'E' => &E,
        'F' => &F,
        'G' => &G,
        'H' => &H,
        'I' => &I,
        'J' => &J,
        'K' => &K,
        'L' => &L,
        'M' => &M,
        'N' => &N,
        'O' => &O,
        'P' => &P,
        'Q' => &Q,
        'R' => &R,
        'S' => &S,
        'T' => &T,
        'U' => &U,
        'V' => &V,
        'W' => &W,
        'X' => &X,
        'Y' => &Y,
        'Z' => &Z,
        '0' => &D0,
        '1' => &D1,
        '2' => &D2,
        '3' => &D3,
        '4' => &D4,
        '5' => &D5,
        '6' => &D6,
        '7' => &D7,
        '8' => &D8,
        '9' => &D9,
        '.' => &DOT,
        other => return Err(Error::UnsupportedChar(other)),
    })
}

/// Width of one word in unscaled pixels (glyph widths plus inter-glyph gaps).
pub fn word_width(word: &str) -> Result<u32> {
    let mut w = 0;
    let mut chars = 0;
    for c in word.chars() {
        w += glyph(c)?.width;
        chars += 1;
    }
    if chars > 1 {
        w += (chars - 1) * CHAR_GAP;
    }
    Ok(w)
}

/// Greedy word-wrap of whitespace-separated tokens into lines no wider than
/// `max_width` unscaled pixels. A single word wider than the limit is an
/// error; empty text yields no lines.
pub fn layout<'t>(text: &'t str, max_width: u32) -> Result<Vec<Vec<&'t str>>> {
    let mut lines: Vec<Vec<&str>> = Vec::new();
    let mut cur: Vec<&str> = Vec::new();
    let mut cur_w = 0u32;
    for word in text.split_whitespace() {
        let ww = word_width(word)?;
        if ww > max_width {
            return Err(Error::TextTooLarge(format!(
                "word {word:?} is {ww} px wide, limit {max_width}"
            )));
        }
        let extended = if cur.is_empty() { ww } else { cur_w + SPACE_ADVANCE + ww };
        if !cur.is_empty() && extended > max_width {
            lines.push(std::mem::take(&mut cur));
            cur_w = ww;
        } else {
            cur_w = extended;
        }
        cur.push(word);
    }
    if !cur.is_empty() {
        lines.push(cur);
    }
    Ok(lines)
}
