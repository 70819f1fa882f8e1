//! Scene layout by rejection sampling and alpha compositing.

use image::{Rgb, RgbImage, RgbaImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sprites::{HandGlyph, Sprite};
use crate::attention::wrap_deg;
use crate::error::{Error, Result};
use crate::model::{Arch, Preset};

/// Canvas and placement parameters of a scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub width: u32,
    pub height: u32,
    pub sprite_size: u32,
    /// Minimum distance from a distractor center to the hand→target segment.
    pub clearance: f64,
    /// Minimum angle between the hand→target ray and any hand→distractor ray.
    pub min_separation_deg: f64,
    pub min_hand_target_dist: f64,
    pub distractors_min: usize,
    pub distractors_max: usize,
    /// Inclusive range of pixel coordinates allowed for target and hand
    /// centers (the span the feature grid can express).
    pub center_range: (f64, f64),
    pub backdrop: [u8; 3],
    pub backdrop_jitter: u8,
    pub max_attempts: usize,
}

impl SceneConfig {
    pub fn for_preset(preset: Preset) -> Result<Self> {
        let sprite = match preset {
            Preset::Default => 24,
            Preset::Small => 16,
        };
        Self::for_arch(&preset.arch(), sprite)
    }

    pub fn for_arch(arch: &Arch, sprite_size: u32) -> Result<Self> {
        let (gh, gw) = arch.feature_grid()?;
        let cm = arch.coord_map();
        let span = cm.stride * (gh.min(gw) as f64 - 1.0);
        let s = sprite_size as f64;
        Ok(SceneConfig {
            width: arch.input_w as u32,
            height: arch.input_h as u32,
            sprite_size,
            clearance: s,
            // half the beam plus half an orientation bin: the nearest
            // orientation bin's beam never reaches a distractor
            min_separation_deg: 15.0 + 7.5,
            min_hand_target_dist: 2.0 * s,
            distractors_min: 1,
            distractors_max: 3,
            center_range: (cm.offset, cm.offset + span),
            backdrop: [232, 230, 222],
            backdrop_jitter: 12,
            max_attempts: 1000,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.sprite_size;
        if s == 0 || s > self.width || s > self.height {
            return Err(Error::Invalid(format!("sprite size {s} does not fit a {}×{} canvas", self.width, self.height)));
        }
        if self.distractors_min > self.distractors_max {
            return Err(Error::Invalid("distractors_min exceeds distractors_max".into()));
        }
        let (lo, hi) = self.center_range;
        if self.center_range_x0(lo, hi).is_none() {
            return Err(Error::Invalid(format!("no integer sprite position has its center in [{lo}, {hi}]")));
        }
        Ok(())
    }

    fn center_range_x0(&self, lo: f64, hi: f64) -> Option<(u32, u32)> {
        let half = (self.sprite_size as f64 - 1.0) / 2.0;
        let max_x0 = self.width.min(self.height) - self.sprite_size;
        let a = (lo - half).ceil().max(0.0) as u32;
        let b = ((hi - half).floor().max(0.0) as u32).min(max_x0);
        (a <= b).then_some((a, b))
    }
}

/// One placed sprite; its box is `[x0, x0+size) × [y0, y0+size)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub id: String,
    pub x0: u32,
    pub y0: u32,
    pub size: u32,
}

impl Placement {
    /// Center in pixel coordinates (pixel `k` is centered at `k`).
    pub fn center(&self) -> (f64, f64) {
        let half = (self.size as f64 - 1.0) / 2.0;
        (self.x0 as f64 + half, self.y0 as f64 + half)
    }

    pub fn overlaps(&self, other: &Placement) -> bool {
        self.x0 < other.x0 + other.size
            && other.x0 < self.x0 + self.size
            && self.y0 < other.y0 + other.size
            && other.y0 < self.y0 + self.size
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandPlacement {
    #[serde(flatten)]
    pub placement: Placement,
    /// Tip direction, image convention (0° = +x, 90° = +y).
    pub angle_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLayout {
    pub width: u32,
    pub height: u32,
    pub backdrop: [u8; 3],
    pub target: Placement,
    pub hand: Option<HandPlacement>,
    pub distractors: Vec<Placement>,
}

impl SceneLayout {
    pub fn target_center(&self) -> (f64, f64) {
        self.target.center()
    }
}

/// Distance from `p` to the closed segment from `a` to `b`.
pub fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Angle of the vector `from → to`, image convention, in degrees.
pub fn direction_deg(from: (f64, f64), to: (f64, f64)) -> f64 {
    (to.1 - from.1).atan2(to.0 - from.0).to_degrees()
}

fn draw(rng: &mut impl Rng, id: &str, size: u32, xr: (u32, u32), yr: (u32, u32)) -> Placement {
    Placement { id: id.to_string(), x0: rng.random_range(xr.0..=xr.1), y0: rng.random_range(yr.0..=yr.1), size }
}

const DRAWS_PER_OBJECT: usize = 100;

/// Samples a layout. With `hand_id` set the scene is an exemplar: the hand
/// points at the target and distractors stay clear of the pointing beam.
pub fn plan_layout(
    config: &SceneConfig,
    target_id: &str,
    distractor_ids: &[&str],
    hand_id: Option<&str>,
    rng: &mut impl Rng,
) -> Result<SceneLayout> {
    config.validate()?;
    let s = config.sprite_size;
    let (lo, hi) = config.center_range;
    let band = config.center_range_x0(lo, hi).expect("validated");
    let band_x = (band.0, band.1.min(config.width - s));
    let band_y = (band.0, band.1.min(config.height - s));
    let full_x = (0, config.width - s);
    let full_y = (0, config.height - s);
    let jitter = config.backdrop_jitter as i32;

    for _ in 0..config.max_attempts {
        let backdrop = config.backdrop.map(|c| (c as i32 + rng.random_range(-jitter..=jitter)).clamp(0, 255) as u8);
        let target = draw(rng, target_id, s, band_x, band_y);
        let hand = match hand_id {
            None => None,
            Some(id) => {
                let found = (0..DRAWS_PER_OBJECT).map(|_| draw(rng, id, s, band_x, band_y)).find(|h| {
                    let (a, b) = (h.center(), target.center());
                    !h.overlaps(&target) && ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt() >= config.min_hand_target_dist
                });
                match found {
                    Some(h) => {
                        let angle_deg = direction_deg(h.center(), target.center());
                        Some(HandPlacement { placement: h, angle_deg })
                    }
                    None => continue,
                }
            }
        };

        let mut placed: Vec<Placement> = vec![target.clone()];
        if let Some(h) = &hand {
            placed.push(h.placement.clone());
        }
        let mut distractors = Vec::with_capacity(distractor_ids.len());
        let mut ok = true;
        for id in distractor_ids {
            let found = (0..DRAWS_PER_OBJECT).map(|_| draw(rng, id, s, full_x, full_y)).find(|d| {
                if placed.iter().any(|p| p.overlaps(d)) {
                    return false;
                }
                match &hand {
                    None => true,
                    Some(h) => {
                        let (hc, tc, dc) = (h.placement.center(), target.center(), d.center());
                        point_segment_distance(dc, hc, tc) > config.clearance
                            && wrap_deg(direction_deg(hc, dc) - h.angle_deg).abs() > config.min_separation_deg
                    }
                }
            });
            match found {
                Some(d) => {
                    placed.push(d.clone());
                    distractors.push(d);
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Ok(SceneLayout { width: config.width, height: config.height, backdrop, target, hand, distractors });
        }
    }
    Err(Error::Placement {
        attempts: config.max_attempts,
        detail: format!(
            "{} distractor(s) of {s} px{} on a {}×{} canvas",
            distractor_ids.len(),
            if hand_id.is_some() { " plus hand and target" } else { " plus target" },
            config.width,
            config.height
        ),
    })
}

/// Alpha-composites `src` with its top-left corner at `(x0, y0)`.
pub fn blit(dst: &mut RgbImage, src: &RgbaImage, x0: u32, y0: u32) {
    for (x, y, px) in src.enumerate_pixels() {
        let a = px.0[3] as u32;
        if a == 0 {
            continue;
        }
        let (dx, dy) = (x0 + x, y0 + y);
        if dx >= dst.width() || dy >= dst.height() {
            continue;
        }
        let d = dst.get_pixel_mut(dx, dy);
        for c in 0..3 {
            d.0[c] = ((px.0[c] as u32 * a + d.0[c] as u32 * (255 - a) + 127) / 255) as u8;
        }
    }
}

/// Renders a layout. `distractors` must be in layout order.
pub fn render_layout(layout: &SceneLayout, target: &Sprite, distractors: &[&Sprite], hand: Option<&HandGlyph>) -> Result<RgbImage> {
    if distractors.len() != layout.distractors.len() || hand.is_some() != layout.hand.is_some() {
        return Err(Error::Invalid("sprites do not match the layout".into()));
    }
    let mut img = RgbImage::from_pixel(layout.width, layout.height, Rgb(layout.backdrop));
    blit(&mut img, &target.bitmap, layout.target.x0, layout.target.y0);
    for (p, sprite) in layout.distractors.iter().zip(distractors) {
        blit(&mut img, &sprite.bitmap, p.x0, p.y0);
    }
    if let (Some(h), Some(glyph)) = (&layout.hand, hand) {
        let bitmap = glyph.render(h.placement.size as usize, h.angle_deg);
        blit(&mut img, &bitmap, h.placement.x0, h.placement.y0);
    }
    Ok(img)
}

/// Lays out and renders one scene.
pub fn compose_scene(
    config: &SceneConfig,
    target: &Sprite,
    distractors: &[&Sprite],
    hand: Option<&HandGlyph>,
    rng: &mut impl Rng,
) -> Result<(RgbImage, SceneLayout)> {
    let ids: Vec<&str> = distractors.iter().map(|d| d.id.as_str()).collect();
    let layout = plan_layout(config, &target.id, &ids, hand.map(|h| h.id.as_str()), rng)?;
    let img = render_layout(&layout, target, distractors, hand)?;
    Ok((img, layout))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::Split;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn custom_config(w: u32) -> SceneConfig {
        SceneConfig {
            width: w,
            height: w,
            sprite_size: 24,
            clearance: 24.0,
            min_separation_deg: 22.5,
            min_hand_target_dist: 48.0,
            distractors_min: 0,
            distractors_max: 0,
            center_range: (0.0, w as f64),
            backdrop: [230, 230, 230],
            backdrop_jitter: 0,
            max_attempts: 1000,
        }
    }

    #[test]
    fn hand_angle_is_the_arctangent_to_the_target() {
        // hand center (40, 40), target center (120, 120): 28 + 11.5 = 39.5 is
        // not an integer placement, so check the formula directly.
        assert!((direction_deg((40.0, 40.0), (120.0, 120.0)) - 45.0).abs() < 1e-12);
        assert!((direction_deg((40.0, 40.0), (0.0, 40.0)) - 180.0).abs() < 1e-12);
    }

    #[test]
    fn zero_distractors_gives_hand_and_target_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let target = Sprite::generate(1, Split::Train, 0, 24);
        let hand = HandGlyph::generate(1, Split::Train, 0);
        let (img, layout) = compose_scene(&custom_config(158), &target, &[], Some(&hand), &mut rng).unwrap();
        assert!(layout.distractors.is_empty());
        assert_eq!(img.dimensions(), (158, 158));
        let (cx, cy) = layout.target_center();
        let h = layout.hand.unwrap();
        assert!((h.angle_deg - direction_deg(h.placement.center(), (cx, cy))).abs() < 1e-12);
    }

    #[test]
    fn impossible_layout_reports_attempts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut cfg = custom_config(60);
        cfg.max_attempts = 20;
        let err = plan_layout(&cfg, "t", &["a", "b", "c", "d"], Some("h"), &mut rng).unwrap_err();
        assert!(matches!(err, Error::Placement { attempts: 20, .. }));
        assert!(err.to_string().contains("fewer or smaller"));
    }

    #[test]
    fn segment_distance_cases() {
        assert_eq!(point_segment_distance((0.0, 1.0), (-1.0, 0.0), (1.0, 0.0)), 1.0);
        assert_eq!(point_segment_distance((3.0, 4.0), (0.0, 0.0), (0.0, 0.0)), 5.0);
        assert_eq!(point_segment_distance((5.0, 0.0), (0.0, 0.0), (2.0, 0.0)), 3.0);
    }

    #[test]
    fn opaque_pixels_replace_backdrop() {
        let mut dst = RgbImage::from_pixel(2, 1, Rgb([100, 100, 100]));
        let mut src = RgbaImage::new(2, 1);
        src.put_pixel(0, 0, image::Rgba([10, 20, 30, 255]));
        src.put_pixel(1, 0, image::Rgba([200, 200, 200, 0]));
        blit(&mut dst, &src, 0, 0);
        assert_eq!(dst.get_pixel(0, 0).0, [10, 20, 30]);
        assert_eq!(dst.get_pixel(1, 0).0, [100, 100, 100]);
    }
}
