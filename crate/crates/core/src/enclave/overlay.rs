//! 1-bit overlays rendered by the enclave and composited by the display.
//!
//! An overlay has two planes: `mask` marks pixels the overlay defines and
//! `ink` gives their colour (1 = black, 0 = white). Undefined pixels are
//! transparent. The bottom `BANNER_HEIGHT` rows are the trusted banner.

use font8x8::legacy::BASIC_LEGACY;

pub const GLYPH_W: u32 = 8;
pub const GLYPH_H: u32 = 16;
pub const BANNER_HEIGHT: u32 = 32;
const MAGIC: &[u8; 4] = b"OVL1";
const MARGIN: u32 = 4;
const ROW_H: u32 = GLYPH_H + 4;
const MAX_LABEL_CHARS: u32 = 16;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OverlayError {
    #[error("overlay {0}x{1} exceeds the {2}x{3} display")]
    TooLarge(u32, u32, u32, u32),
    #[error("overlay {0}x{1} is too small to hold the banner")]
    TooSmall(u32, u32),
    #[error("malformed overlay: {0}")]
    Malformed(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }
}

/// Row-major bit plane, most significant bit first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmap {
    width: u32,
    height: u32,
    bits: Vec<u8>,
}

impl Bitmap {
    pub fn new(width: u32, height: u32) -> Self {
        Bitmap { width, height, bits: vec![0; Self::byte_len(width, height)] }
    }

    fn byte_len(width: u32, height: u32) -> usize {
        (width as usize * height as usize).div_ceil(8)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        let i = y as usize * self.width as usize + x as usize;
        self.bits[i / 8] & (0x80 >> (i % 8)) != 0
    }

    pub fn set(&mut self, x: u32, y: u32, on: bool) {
        if x >= self.width || y >= self.height {
            return;
        }
        let i = y as usize * self.width as usize + x as usize;
        if on {
            self.bits[i / 8] |= 0x80 >> (i % 8);
        } else {
            self.bits[i / 8] &= !(0x80 >> (i % 8));
        }
    }

    pub fn count_ones(&self) -> u32 {
        self.bits.iter().map(|b| b.count_ones()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Overlay {
    pub width: u32,
    pub height: u32,
    pub mask: Bitmap,
    pub ink: Bitmap,
    pub banner_origin: String,
    pub banner_focus_label: Option<String>,
}

/// One input as the overlay shows it.
#[derive(Debug, Clone)]
pub struct FieldView<'a> {
    pub label: &'a str,
    pub text: &'a str,
    pub masked: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldBox {
    pub label: Rect,
    pub input: Rect,
}

pub fn banner_rect(width: u32, height: u32) -> Rect {
    Rect { x: 0, y: height.saturating_sub(BANNER_HEIGHT), w: width, h: BANNER_HEIGHT.min(height) }
}

/// Positions of the first `count` fields that fit above the banner.
pub fn layout(count: usize, width: u32, height: u32) -> Vec<FieldBox> {
    let label_w = MAX_LABEL_CHARS * GLYPH_W;
    let input_x = MARGIN + label_w + GLYPH_W;
    let limit = height.saturating_sub(BANNER_HEIGHT + MARGIN);
    if width < input_x + MARGIN + 2 * GLYPH_W {
        return Vec::new();
    }
    let input_w = width - input_x - MARGIN;
    (0..count as u32)
        .map(|i| MARGIN + i * ROW_H)
        .take_while(|y| y + ROW_H <= limit)
        .map(|y| FieldBox {
            label: Rect { x: MARGIN, y: y + 2, w: label_w, h: GLYPH_H },
            input: Rect { x: input_x, y, w: input_w, h: GLYPH_H + 4 },
        })
        .collect()
}

/// Banner text for an origin: the host, plus the port when it is not 443.
pub fn banner_origin_text(host: &str, port: u16) -> String {
    if port == 443 {
        host.to_string()
    } else {
        format!("{host}:{port}")
    }
}

pub fn banner_text(origin: &str, focus: Option<&str>) -> String {
    match focus {
        Some(label) => format!("{origin}  {label}"),
        None => origin.to_string(),
    }
}

pub fn render(fields: &[FieldView<'_>], origin: &str, focus_label: Option<&str>, width: u32, height: u32) -> Result<Overlay, OverlayError> {
    if height < BANNER_HEIGHT + 1 || width < GLYPH_W + 2 * MARGIN {
        return Err(OverlayError::TooSmall(width, height));
    }
    let mut ov = Overlay {
        width,
        height,
        mask: Bitmap::new(width, height),
        ink: Bitmap::new(width, height),
        banner_origin: origin.to_string(),
        banner_focus_label: focus_label.map(str::to_string),
    };
    for (field, b) in fields.iter().zip(layout(fields.len(), width, height)) {
        ov.fill(b.label, false);
        let label: String = field.label.chars().take(MAX_LABEL_CHARS as usize).collect();
        ov.text(b.label.x, b.label.y, &label, b.label.x + b.label.w);
        ov.fill(b.input, false);
        ov.border(b.input);
        let fit = ((b.input.w - 4) / GLYPH_W) as usize;
        let shown: String = if field.masked {
            "*".repeat(field.text.chars().count().min(fit))
        } else {
            let n = field.text.chars().count();
            field.text.chars().skip(n.saturating_sub(fit)).collect()
        };
        ov.text(b.input.x + 2, b.input.y + 2, &shown, b.input.x + b.input.w - 2);
    }
    let strip = banner_rect(width, height);
    ov.fill(strip, false);
    for x in 0..width {
        ov.ink.set(x, strip.y, true);
    }
    ov.text(MARGIN, strip.y + (BANNER_HEIGHT - GLYPH_H) / 2, &banner_text(origin, focus_label), width - MARGIN);
    Ok(ov)
}

impl Overlay {
    fn fill(&mut self, r: Rect, ink: bool) {
        for y in r.y..r.y + r.h {
            for x in r.x..r.x + r.w {
                self.mask.set(x, y, true);
                self.ink.set(x, y, ink);
            }
        }
    }

    fn border(&mut self, r: Rect) {
        for x in r.x..r.x + r.w {
            self.ink.set(x, r.y, true);
            self.ink.set(x, r.y + r.h - 1, true);
        }
        for y in r.y..r.y + r.h {
            self.ink.set(r.x, y, true);
            self.ink.set(r.x + r.w - 1, y, true);
        }
    }

    // Glyphs are the 8x8 atlas with each row doubled.
    fn text(&mut self, x0: u32, y0: u32, s: &str, x_limit: u32) {
        for (i, c) in s.chars().enumerate() {
            let gx = x0 + i as u32 * GLYPH_W;
            if gx + GLYPH_W > x_limit {
                break;
            }
            let glyph = BASIC_LEGACY[if c.is_ascii() && !c.is_ascii_control() { c as usize } else { '?' as usize }];
            for (row, bits) in glyph.iter().enumerate() {
                for col in 0..8 {
                    if bits & (1 << col) != 0 {
                        for dy in 0..2 {
                            self.mask.set(gx + col, y0 + row as u32 * 2 + dy, true);
                            self.ink.set(gx + col, y0 + row as u32 * 2 + dy, true);
                        }
                    }
                }
            }
        }
    }

    /// `None` where transparent, otherwise whether the pixel is inked.
    pub fn pixel(&self, x: u32, y: u32) -> Option<bool> {
        self.mask.get(x, y).then(|| self.ink.get(x, y))
    }

    pub fn banner_text(&self) -> String {
        banner_text(&self.banner_origin, self.banner_focus_label.as_deref())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.mask.bits.len() * 2);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.width as u16).to_be_bytes());
        out.extend_from_slice(&(self.height as u16).to_be_bytes());
        out.extend_from_slice(&(self.banner_origin.len() as u16).to_be_bytes());
        out.extend_from_slice(self.banner_origin.as_bytes());
        match &self.banner_focus_label {
            Some(l) => {
                out.push(1);
                out.extend_from_slice(&(l.len() as u16).to_be_bytes());
                out.extend_from_slice(l.as_bytes());
            }
            None => out.push(0),
        }
        out.extend_from_slice(&self.mask.bits);
        out.extend_from_slice(&self.ink.bits);
        out
    }

    pub fn is_overlay_bytes(bytes: &[u8]) -> bool {
        bytes.starts_with(MAGIC)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Overlay, OverlayError> {
        let mut r = crate::cryptowire::Reader::new(bytes);
        let bad = |what| move |_| OverlayError::Malformed(what);
        if r.take(4).map_err(bad("magic"))? != MAGIC {
            return Err(OverlayError::Malformed("magic"));
        }
        let width = u32::from(r.u16().map_err(bad("width"))?);
        let height = u32::from(r.u16().map_err(bad("height"))?);
        let n = r.u16().map_err(bad("origin"))? as usize;
        let banner_origin = std::str::from_utf8(r.take(n).map_err(bad("origin"))?)
            .map_err(|_| OverlayError::Malformed("origin"))?
            .to_string();
        let banner_focus_label = match r.u8().map_err(bad("label"))? {
            0 => None,
            1 => {
                let n = r.u16().map_err(bad("label"))? as usize;
                Some(
                    std::str::from_utf8(r.take(n).map_err(bad("label"))?)
                        .map_err(|_| OverlayError::Malformed("label"))?
                        .to_string(),
                )
            }
            _ => return Err(OverlayError::Malformed("label flag")),
        };
        let len = Bitmap::byte_len(width, height);
        let mask = r.take(len).map_err(bad("mask plane"))?.to_vec();
        let ink = r.take(len).map_err(bad("ink plane"))?.to_vec();
        r.finish().map_err(bad("trailing bytes"))?;
        Ok(Overlay {
            width,
            height,
            mask: Bitmap { width, height, bits: mask },
            ink: Bitmap { width, height, bits: ink },
            banner_origin,
            banner_focus_label,
        })
    }
}
