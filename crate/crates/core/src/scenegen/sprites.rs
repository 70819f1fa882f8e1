//! Procedural object sprites and pointing-hand glyphs.
//!
//! Train and test libraries draw from disjoint hue bands and disjoint shape
//! parameters, so every test object is novel to a trained model.

use image::{Rgba, RgbaImage};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const SUPERSAMPLE: usize = 4;
const HUE_BANDS: u32 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn code(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Test => 2,
        }
    }

    /// Hue bands (30° each) available to this split.
    pub fn hue_bands(self) -> Vec<u32> {
        let parity = match self {
            Split::Train => 0,
            Split::Test => 1,
        };
        (0..HUE_BANDS).filter(|b| b % 2 == parity).collect()
    }

    fn polygon_sides(self) -> &'static [u32] {
        match self {
            Split::Train => &[3, 4, 6],
            Split::Test => &[5, 8],
        }
    }

    /// Finger half-width range of hand glyphs, in glyph radii.
    fn finger_half_width(self) -> (f64, f64) {
        match self {
            Split::Train => (0.14, 0.19),
            Split::Test => (0.195, 0.23),
        }
    }

    fn skin_tones(self) -> &'static [[u8; 3]] {
        match self {
            Split::Train => &[[241, 194, 125], [224, 172, 105], [198, 134, 66], [141, 85, 36], [255, 205, 148], [234, 192, 134]],
            Split::Test => &[[255, 219, 172], [172, 112, 61], [95, 60, 40]],
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Deterministic per-item RNG.
pub(crate) fn item_rng(seed: u64, domain: u64, split: Split, index: u64) -> ChaCha8Rng {
    let mut s = seed ^ 0x9E37_79B9_7F4A_7C15;
    for v in [domain, split.code(), index] {
        s = s.rotate_left(23) ^ v.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        s = s.wrapping_mul(0x94D0_49BB_1331_11EB);
    }
    ChaCha8Rng::seed_from_u64(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Primitive {
    Disk { cx: f64, cy: f64, r: f64 },
    Ring { cx: f64, cy: f64, r_outer: f64, r_inner: f64 },
    Polygon { cx: f64, cy: f64, r: f64, sides: u32, rotation: f64 },
}

impl Primitive {
    /// Point test in unit sprite coordinates (center 0, radius 1).
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Primitive::Disk { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Primitive::Ring { cx, cy, r_outer, r_inner } => {
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                d2 <= r_outer * r_outer && d2 >= r_inner * r_inner
            }
            Primitive::Polygon { cx, cy, r, sides, rotation } => {
                let (dx, dy) = (x - cx, y - cy);
                let n = sides as f64;
                let sector = std::f64::consts::TAU / n;
                let ang = (dy.atan2(dx) - rotation).rem_euclid(sector) - sector / 2.0;
                // distance to the edge along this direction
                let apothem = r * (std::f64::consts::PI / n).cos();
                (dx * dx + dy * dy).sqrt() * ang.cos() <= apothem
            }
        }
    }
}

/// One colored primitive of a sprite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub shape: Primitive,
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sprite {
    pub id: String,
    pub split: Split,
    /// Hue-band pair the sprite's colors were drawn from.
    pub palette: (u32, u32),
    pub layers: Vec<Layer>,
    pub bitmap: RgbaImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandGlyph {
    pub id: String,
    pub split: Split,
    pub skin: [u8; 3],
    pub finger_half_width: f64,
    pub finger_end: f64,
    pub head_half_width: f64,
    pub palm_radius: f64,
    pub cuff: bool,
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|u| ((u + m) * 255.0).round().clamp(0.0, 255.0) as u8)
}

fn band_color(rng: &mut ChaCha8Rng, band: u32) -> [u8; 3] {
    let hue = band as f64 * 30.0 + rng.random_range(2.0..28.0);
    hsv_to_rgb(hue, rng.random_range(0.55..1.0), rng.random_range(0.35..0.9))
}

/// Rasterizes a coverage function over an `size×size` canvas with 4×4
/// supersampling. `paint(x, y)` returns the color at unit coordinates.
fn rasterize(size: usize, paint: impl Fn(f64, f64) -> Option<[u8; 3]>) -> RgbaImage {
    let mut img = RgbaImage::new(size as u32, size as u32);
    let half = size as f64 / 2.0;
    let n = (SUPERSAMPLE * SUPERSAMPLE) as f64;
    for py in 0..size {
        for px in 0..size {
            let mut acc = [0.0f64; 3];
            let mut hits = 0usize;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let x = (px as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64 - half) / half;
                    let y = (py as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64 - half) / half;
                    if let Some(c) = paint(x, y) {
                        hits += 1;
                        for k in 0..3 {
                            acc[k] += c[k] as f64;
                        }
                    }
                }
            }
            if hits > 0 {
                let rgb = acc.map(|a| (a / hits as f64).round() as u8);
                let alpha = (hits as f64 / n * 255.0).round() as u8;
                img.put_pixel(px as u32, py as u32, Rgba([rgb[0], rgb[1], rgb[2], alpha]));
            }
        }
    }
    img
}

impl Sprite {
    pub fn generate(seed: u64, split: Split, index: usize, size: usize) -> Self {
        let mut rng = item_rng(seed, 11, split, index as u64);
        let bands = split.hue_bands();
        let a = *bands.choose(&mut rng).unwrap();
        let b = *bands.choose(&mut rng).unwrap();
        let sides = split.polygon_sides();
        let n_layers = rng.random_range(2..=4);
        let mut layers = Vec::with_capacity(n_layers);

        // The base primitive is centered and large, so the sprite center is
        // always opaque.
        let base_r = rng.random_range(0.72..0.95);
        let base = if rng.random_bool(0.5) {
            Primitive::Disk { cx: 0.0, cy: 0.0, r: base_r }
        } else {
            Primitive::Polygon {
                cx: 0.0,
                cy: 0.0,
                r: base_r,
                sides: *sides.choose(&mut rng).unwrap(),
                rotation: rng.random_range(0.0..std::f64::consts::TAU),
            }
        };
        layers.push(Layer { shape: base, color: band_color(&mut rng, a) });

        for k in 1..n_layers {
            let band = if k % 2 == 1 { b } else { a };
            let cx: f64 = rng.random_range(-0.45..0.45);
            let cy: f64 = rng.random_range(-0.45..0.45);
            let room = 0.95 - cx.abs().max(cy.abs());
            let r = rng.random_range(0.2..0.5f64).min(room);
            let shape = match rng.random_range(0..3) {
                0 => Primitive::Disk { cx, cy, r },
                1 => Primitive::Ring { cx, cy, r_outer: r, r_inner: r * rng.random_range(0.45..0.7) },
                _ => Primitive::Polygon {
                    cx,
                    cy,
                    r,
                    sides: *sides.choose(&mut rng).unwrap(),
                    rotation: rng.random_range(0.0..std::f64::consts::TAU),
                },
            };
            layers.push(Layer { shape, color: band_color(&mut rng, band) });
        }

        let bitmap = rasterize(size, |x, y| {
            layers.iter().rev().find(|l| l.shape.contains(x, y)).map(|l| l.color)
        });
        Sprite { id: format!("obj-{}-{index:05}", split.name()), split, palette: (a.min(b), a.max(b)), layers, bitmap }
    }
}

impl HandGlyph {
    pub fn generate(seed: u64, split: Split, index: usize) -> Self {
        let mut rng = item_rng(seed, 29, split, index as u64);
        let (lo, hi) = split.finger_half_width();
        HandGlyph {
            id: format!("hand-{}-{index:03}", split.name()),
            split,
            skin: *split.skin_tones().choose(&mut rng).unwrap(),
            finger_half_width: rng.random_range(lo..hi),
            finger_end: rng.random_range(0.2..0.35),
            head_half_width: rng.random_range(0.42..0.55),
            palm_radius: rng.random_range(0.32..0.42),
            cuff: rng.random_bool(0.5),
        }
    }

    /// Glyph rendered with its tip pointing along `angle_deg` (image
    /// convention: 0° = +x, 90° = +y).
    pub fn render(&self, size: usize, angle_deg: f64) -> RgbaImage {
        let (sin, cos) = angle_deg.to_radians().sin_cos();
        let outline = self.skin.map(|c| (c as f64 * 0.55) as u8);
        let cuff_color = [60, 90, 160];
        rasterize(size, |x, y| {
            // rotate into the glyph frame, where the tip points along +u
            let u = x * cos + y * sin;
            let v = -x * sin + y * cos;
            let tip = 0.95;
            let in_head = u >= self.finger_end
                && u <= tip
                && v.abs() <= self.head_half_width * (tip - u) / (tip - self.finger_end);
            if in_head {
                return Some(outline);
            }
            if u >= -0.3 && u <= self.finger_end && v.abs() <= self.finger_half_width {
                return Some(self.skin);
            }
            let pc = -0.5;
            if (u - pc).powi(2) + v * v <= self.palm_radius * self.palm_radius {
                if self.cuff && u < pc - self.palm_radius * 0.55 {
                    return Some(cuff_color);
                }
                return Some(self.skin);
            }
            None
        })
    }
}

/// Every sprite and hand glyph available to a split.
#[derive(Debug, Clone)]
pub struct Library {
    pub split: Split,
    pub sprites: Vec<Sprite>,
    pub hands: Vec<HandGlyph>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LibraryCounts {
    pub sprites_train: usize,
    pub sprites_test: usize,
    pub hands_train: usize,
    pub hands_test: usize,
}

impl Default for LibraryCounts {
    fn default() -> Self {
        LibraryCounts { sprites_train: 2075, sprites_test: 703, hands_train: 47, hands_test: 8 }
    }
}

/// Train and test libraries, fully determined by `seed`.
pub fn generate_sprite_library(seed: u64, counts: LibraryCounts, sprite_size: usize) -> (Library, Library) {
    let build = |split: Split, n_sprites: usize, n_hands: usize| Library {
        split,
        sprites: (0..n_sprites).map(|i| Sprite::generate(seed, split, i, sprite_size)).collect(),
        hands: (0..n_hands).map(|i| HandGlyph::generate(seed, split, i)).collect(),
    };
    (
        build(Split::Train, counts.sprites_train, counts.hands_train),
        build(Split::Test, counts.sprites_test, counts.hands_test),
    )
}
