//! Pointing-beam attention modulation.
//!
//! Index convention used throughout the crate: `i` (row) grows downward and
//! `j` (column) grows to the right. Soft-argmax returns `(p_x, p_y)` =
//! (expected column, expected row). Angles are measured in image convention:
//! 0° points along +column, 90° along +row, and differences are wrapped to
//! (−180°, 180°].

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Angular tolerance that makes beam edges inclusive despite rounding.
const EDGE_EPS_DEG: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamSpec {
    pub grid_h: usize,
    pub grid_w: usize,
    pub n_orient: usize,
    pub beam_width_deg: f64,
    pub orient_step_deg: f64,
    pub low: f32,
    pub high: f32,
}

impl BeamSpec {
    /// 24 orientations of 15°, 30° wide beams, −2 outside / 0 inside.
    pub fn new(grid_h: usize, grid_w: usize) -> Self {
        BeamSpec {
            grid_h,
            grid_w,
            n_orient: 24,
            beam_width_deg: 30.0,
            orient_step_deg: 15.0,
            low: -2.0,
            high: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_h == 0 || self.grid_w == 0 || self.n_orient == 0 {
            return Err(Error::Invalid(format!("beam spec has an empty extent: {self:?}")));
        }
        if (self.n_orient as f64 * self.orient_step_deg - 360.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!(
                "{} orientations of {}° do not cover 360°",
                self.n_orient, self.orient_step_deg
            )));
        }
        if !(self.low < self.high) || self.high != 0.0 {
            return Err(Error::Invalid(format!(
                "beam values must satisfy low < high == 0, got low={} high={}",
                self.low, self.high
            )));
        }
        if !(self.beam_width_deg > 0.0) {
            return Err(Error::Invalid("beam width must be positive".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn map_count(&self) -> usize {
        self.cells() * self.n_orient
    }

    pub fn orientation_deg(&self, o: usize) -> f64 {
        o as f64 * self.orient_step_deg
    }

    /// Whether cell `(i, j)` lies in the beam cast from `(r, c)` along
    /// orientation bin `o`. The source cell is always inside.
    pub fn in_beam(&self, r: usize, c: usize, o: usize, i: usize, j: usize) -> bool {
        if (i, j) == (r, c) {
            return true;
        }
        let dy = i as f64 - r as f64;
        let dx = j as f64 - c as f64;
        let diff = wrap_deg(dy.atan2(dx).to_degrees() - self.orientation_deg(o));
        diff.abs() <= self.beam_width_deg / 2.0 + EDGE_EPS_DEG
    }

    /// Index of the orientation bin nearest to `angle_deg`.
    pub fn nearest_orientation(&self, angle_deg: f64) -> usize {
        let steps = (angle_deg.rem_euclid(360.0) / self.orient_step_deg).round() as usize;
        steps % self.n_orient
    }
}

/// Wraps an angle in degrees to (−180, 180].
pub fn wrap_deg(a: f64) -> f64 {
    let w = a.rem_euclid(360.0);
    if w > 180.0 {
        w - 360.0
    } else {
        w
    }
}

/// Precomputed beam maps, laid out as `(r, c, o) × (i, j)` with
/// `map index = (r·grid_w + c)·n_orient + o`. Constant; never trained.
#[derive(Debug, Clone)]
pub struct MapBank {
    spec: BeamSpec,
    values: Arc<[f32]>,
}

impl MapBank {
    pub fn build(spec: BeamSpec) -> Result<Self> {
        spec.validate()?;
        let cells = spec.cells();
        let mut values = Vec::with_capacity(spec.map_count() * cells);
        for r in 0..spec.grid_h {
            for c in 0..spec.grid_w {
                for o in 0..spec.n_orient {
                    for i in 0..spec.grid_h {
                        for j in 0..spec.grid_w {
                            values.push(if spec.in_beam(r, c, o, i, j) { spec.high } else { spec.low });
                        }
                    }
                }
            }
        }
        Ok(MapBank { spec, values: values.into() })
    }

    pub fn spec(&self) -> &BeamSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.spec.map_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn map_index(&self, r: usize, c: usize, o: usize) -> usize {
        (r * self.spec.grid_w + c) * self.spec.n_orient + o
    }

    pub fn map(&self, r: usize, c: usize, o: usize) -> &[f32] {
        let cells = self.spec.cells();
        let idx = self.map_index(r, c, o);
        &self.values[idx * cells..(idx + 1) * cells]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn shared_values(&self) -> &Arc<[f32]> {
        &self.values
    }

    /// Copy of the bank as a `(maps)×H×W` tensor.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new([self.len(), self.spec.grid_h, self.spec.grid_w], self.values.to_vec())
            .expect("bank extents are consistent")
    }
}

/// Hand pose distributions recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct HandPoseVars {
    /// `grid_h×grid_w` position distribution.
    pub pos_dist: Var,
    /// Attended orientation logits (before softmax), length `n_orient`.
    pub orient_logits: Var,
    pub orient_dist: Var,
}

/// Materialized hand pose.
#[derive(Debug, Clone)]
pub struct HandPose<T: Scalar = f32> {
    pub pos_dist: Tensor<T>,
    pub orient_dist: Tensor<T>,
}

impl HandPoseVars {
    pub fn read<T: Scalar>(&self, tape: &Tape<'_, T>, spec: &BeamSpec) -> HandPose<T> {
        HandPose {
            pos_dist: tape
                .value(self.pos_dist)
                .clone()
                .reshape([spec.grid_h, spec.grid_w])
                .expect("grid-sized"),
            orient_dist: tape.value(self.orient_dist).clone(),
        }
    }
}

impl<T: Scalar> HandPose<T> {
    /// Most likely `(row, col, orientation bin)`.
    pub fn argmax(&self) -> (usize, usize, usize) {
        let w = self.pos_dist.shape()[1];
        let p = self.pos_dist.argmax();
        (p / w, p % w, self.orient_dist.argmax())
    }
}

/// Hand position/orientation from the two hand bottlenecks.
///
/// `pos_logits` is the `1×H×W` output of the position bottleneck and
/// `orient_maps` the `n_orient×H×W` output of the orientation bottleneck.
/// The orientation logits are the position-attended orientation columns.
pub fn hand_pose<T: Scalar>(
    tape: &mut Tape<'_, T>,
    pos_logits: Var,
    orient_maps: Var,
    spec: &BeamSpec,
) -> Result<HandPoseVars> {
    let (_, h, w) = tape.value(pos_logits).chw()?;
    let (n, oh, ow) = tape.value(orient_maps).chw()?;
    if (h, w) != (spec.grid_h, spec.grid_w) || (oh, ow) != (h, w) {
        return Err(Error::shape(
            "hand_pose",
            format!("feature grid {h}×{w} / {oh}×{ow} does not match bank grid {}×{}", spec.grid_h, spec.grid_w),
        ));
    }
    if n != spec.n_orient {
        return Err(Error::shape("hand_pose", format!("{n} orientation channels, bank has {}", spec.n_orient)));
    }
    let pos_dist = tape.spatial_softmax(pos_logits)?;
    let orient_logits = tape.weighted_sum(pos_dist, orient_maps)?;
    let orient_dist = tape.softmax(orient_logits);
    Ok(HandPoseVars { pos_dist, orient_logits, orient_dist })
}

/// Expected modulation map `x_m = Σ pos[r,c]·orient[o]·bank[r,c,o]`, shaped
/// `H×W`.
pub fn soft_select_map<T: Scalar>(tape: &mut Tape<'_, T>, pos_dist: Var, orient_dist: Var, bank: &MapBank) -> Result<Var> {
    let spec = bank.spec();
    if tape.value(pos_dist).numel() != spec.cells() || tape.value(orient_dist).numel() != spec.n_orient {
        return Err(Error::shape(
            "soft_select_map",
            format!(
                "distributions of {} and {} values for a {}×{}×{} bank",
                tape.value(pos_dist).numel(),
                tape.value(orient_dist).numel(),
                spec.grid_h,
                spec.grid_w,
                spec.n_orient
            ),
        ));
    }
    let flat = tape.bilinear_select(pos_dist, orient_dist, T::shared_from_f32(bank.shared_values()))?;
    tape.reshape(flat, &[spec.grid_h, spec.grid_w])
}

/// Expected `(p_x, p_y)` = (column, row) under a normalized attention map.
pub fn spatial_softargmax<T: Scalar>(tape: &mut Tape<'_, T>, attn: Var) -> Result<Var> {
    let a = tape.value(attn);
    if a.data().iter().any(|v| *v < T::zero()) {
        return Err(Error::Invalid("spatial_softargmax: attention has negative entries".into()));
    }
    let total = a.sum().as_f64();
    if (total - 1.0).abs() > 1e-4 {
        return Err(Error::Invalid(format!("spatial_softargmax: attention sums to {total}, expected 1")));
    }
    tape.soft_argmax(attn)
}

/// Attention-pooled feature vector `f[c] = Σ attn[i,j]·x_f[c,i,j]`.
pub fn extract_feature<T: Scalar>(tape: &mut Tape<'_, T>, features: Var, attn: Var) -> Result<Var> {
    let (_, h, w) = tape.value(features).chw()?;
    let shape = tape.value(attn).shape();
    let spatial: Vec<usize> = shape.iter().copied().filter(|&d| d != 1).collect();
    if tape.value(attn).numel() != h * w || (spatial.len() == 2 && spatial != [h, w]) {
        return Err(Error::shape("extract_feature", format!("attention {shape:?} vs feature grid {h}×{w}")));
    }
    tape.weighted_sum(attn, features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamSet;

    #[test]
    fn default_bank_has_21600_two_valued_maps() {
        let bank = MapBank::build(BeamSpec::new(30, 30)).unwrap();
        assert_eq!(bank.len(), 21600);
        assert!(bank.values().iter().all(|&v| v == -2.0 || v == 0.0));
    }

    #[test]
    fn source_cell_is_always_high() {
        let spec = BeamSpec::new(6, 7);
        let bank = MapBank::build(spec).unwrap();
        for r in 0..6 {
            for c in 0..7 {
                for o in 0..spec.n_orient {
                    assert_eq!(bank.map(r, c, o)[r * 7 + c], spec.high);
                }
            }
        }
    }

    #[test]
    fn beam_geometry_at_center() {
        let spec = BeamSpec::new(9, 9);
        let bank = MapBank::build(spec).unwrap();
        let m = bank.map(4, 4, 0);
        // one step along 0° (to the right) is lit, directly opposite is not
        assert_eq!(m[4 * 9 + 5], 0.0);
        assert_eq!(m[4 * 9 + 3], -2.0);
        // 90° points down the rows
        let down = bank.map(4, 4, 6);
        assert_eq!(down[5 * 9 + 4], 0.0);
        assert_eq!(down[3 * 9 + 4], -2.0);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = BeamSpec::new(4, 4);
        spec.n_orient = 20;
        assert!(MapBank::build(spec).is_err());
        let mut spec = BeamSpec::new(4, 4);
        spec.high = 1.0;
        assert!(MapBank::build(spec).is_err());
    }

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap_deg(180.0), 180.0);
        assert_eq!(wrap_deg(-180.0), 180.0);
        assert_eq!(wrap_deg(190.0), -170.0);
        assert_eq!(wrap_deg(-10.0), -10.0);
    }

    #[test]
    fn softargmax_rejects_unnormalized_attention() {
        let params = ParamSet::<f64>::new();
        let mut tape = Tape::new(&params);
        let a = tape.constant(Tensor::full([1, 3, 3], 0.2));
        assert!(spatial_softargmax(&mut tape, a).is_err());
    }

    #[test]
    fn hand_pose_rejects_grid_mismatch() {
        let params = ParamSet::<f64>::new();
        let mut tape = Tape::new(&params);
        let spec = BeamSpec::new(4, 4);
        let hp = tape.constant(Tensor::zeros([1, 3, 4]));
        let ho = tape.constant(Tensor::zeros([24, 3, 4]));
        assert!(hand_pose(&mut tape, hp, ho, &spec).is_err());
    }
}
