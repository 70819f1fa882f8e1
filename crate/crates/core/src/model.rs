//! Backbone, exemplar/search branches and the regression baselines.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{self, BeamSpec, HandPose, HandPoseVars, MapBank};
use crate::autodiff::{ParamId, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// One stage of a valid-convolution stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layer {
    /// 3×3 valid convolution followed by ELU.
    Conv3 { out: usize },
    /// 2×2 max pool, stride 2.
    Pool,
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layer::Conv3 { out } => write!(f, "Conv3x3({out})-ELU"),
            Layer::Pool => write!(f, "MaxPool2x2"),
        }
    }
}

/// Spatial extents after each layer, or the offending step.
pub fn size_chain(layers: &[Layer], h: usize, w: usize) -> std::result::Result<Vec<(usize, usize)>, String> {
    let mut chain = vec![(h, w)];
    let (mut h, mut w) = (h, w);
    for (idx, layer) in layers.iter().enumerate() {
        match layer {
            Layer::Conv3 { .. } => {
                if h < 3 || w < 3 {
                    return Err(format!("layer {idx} ({layer}) needs at least 3×3, has {h}×{w}"));
                }
                h -= 2;
                w -= 2;
            }
            Layer::Pool => {
                if h % 2 != 0 || w % 2 != 0 || h < 2 || w < 2 {
                    return Err(format!("layer {idx} ({layer}) needs even extents, has {h}×{w}"));
                }
                h /= 2;
                w /= 2;
            }
        }
        chain.push((h, w));
    }
    Ok(chain)
}

fn format_chain(chain: &[(usize, usize)]) -> String {
    chain.iter().map(|(h, w)| format!("{h}×{w}")).collect::<Vec<_>>().join(" → ")
}

/// Receptive field, cumulative stride and the input-pixel center of output
/// cell (0, 0) for a layer stack.
pub fn receptive_field(layers: &[Layer]) -> (usize, usize, f64) {
    let (mut rf, mut jump) = (1usize, 1usize);
    for layer in layers {
        match layer {
            Layer::Conv3 { .. } => rf += 2 * jump,
            Layer::Pool => {
                rf += jump;
                jump *= 2;
            }
        }
    }
    (rf, jump, (rf as f64 - 1.0) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 158×158 input, full channel widths, 30×30 feature grid.
    Default,
    /// 94×94 input, quarter channel widths, 14×14 feature grid.
    Small,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Default => "default",
            Preset::Small => "small",
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Preset::Default => 0,
            Preset::Small => 1,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Preset::Default),
            1 => Ok(Preset::Small),
            _ => Err(Error::Format { what: "checkpoint", detail: format!("unknown preset code {code}") }),
        }
    }

    pub fn arch(self) -> Arch {
        match self {
            Preset::Default => Arch::scaled(158, 1),
            Preset::Small => Arch::scaled(94, 4),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(Preset::Default),
            "small" => Ok(Preset::Small),
            other => Err(Error::Invalid(format!("unknown preset `{other}` (expected default or small)"))),
        }
    }
}

/// Network geometry: input size, backbone, hand bottleneck width and the
/// baseline head shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arch {
    pub input_h: usize,
    pub input_w: usize,
    pub backbone: Vec<Layer>,
    pub n_orient: usize,
    pub fc_hidden: [usize; 2],
    pub conv_head: Vec<Layer>,
}

const BACKBONE_WIDTHS: [usize; 8] = [16, 32, 64, 64, 128, 256, 512, 1024];

fn backbone(widths: [usize; 8]) -> Vec<Layer> {
    let c = |i: usize| Layer::Conv3 { out: widths[i] };
    vec![c(0), c(1), c(2), Layer::Pool, c(3), c(4), Layer::Pool, c(5), c(6), c(7)]
}

impl Arch {
    /// Backbone and heads with every channel count divided by `divisor`.
    pub fn scaled(input: usize, divisor: usize) -> Self {
        let widths = BACKBONE_WIDTHS.map(|w| w / divisor);
        let head = 2048 / divisor;
        let grid = size_chain(&backbone(widths), input, input)
            .map(|chain| chain.last().copied().unwrap().0)
            .unwrap_or(0);
        let full_head = vec![
            Layer::Conv3 { out: head },
            Layer::Pool,
            Layer::Conv3 { out: head },
            Layer::Conv3 { out: head },
            Layer::Pool,
            Layer::Conv3 { out: head },
            Layer::Conv3 { out: head },
        ];
        // The full regression stack needs a grid of at least 30; smaller grids
        // drop the trailing convolutions that would shrink the map below 1×1.
        let mut conv_head = full_head;
        while size_chain(&conv_head, grid, grid).is_err() && conv_head.len() > 1 {
            conv_head.pop();
        }
        Arch {
            input_h: input,
            input_w: input,
            backbone: backbone(widths),
            n_orient: 24,
            fc_hidden: [1024 / divisor, 256 / divisor],
            conv_head,
        }
    }

    /// Small custom geometry, used for gradient checks.
    pub fn custom(input: usize, widths: [usize; 8], n_orient: usize, fc_hidden: [usize; 2], conv_head: Vec<Layer>) -> Self {
        Arch { input_h: input, input_w: input, backbone: backbone(widths), n_orient, fc_hidden, conv_head }
    }

    pub fn feature_channels(&self) -> usize {
        self.backbone
            .iter()
            .rev()
            .find_map(|l| match l {
                Layer::Conv3 { out } => Some(*out),
                Layer::Pool => None,
            })
            .unwrap_or(3)
    }

    /// Feature grid for an `h×w` input; the error lists the full size chain.
    pub fn feature_grid_for(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match size_chain(&self.backbone, h, w) {
            Ok(chain) => Ok(*chain.last().unwrap()),
            Err(step) => {
                let mut partial = vec![(h, w)];
                let (mut ch, mut cw) = (h as i64, w as i64);
                for layer in &self.backbone {
                    match layer {
                        Layer::Conv3 { .. } => {
                            ch -= 2;
                            cw -= 2;
                        }
                        Layer::Pool => {
                            ch /= 2;
                            cw /= 2;
                        }
                    }
                    partial.push((ch.max(0) as usize, cw.max(0) as usize));
                }
                Err(Error::Invalid(format!(
                    "input {h}×{w} is incompatible with the backbone: {step}; size chain {}",
                    format_chain(&partial)
                )))
            }
        }
    }

    pub fn feature_grid(&self) -> Result<(usize, usize)> {
        self.feature_grid_for(self.input_h, self.input_w)
    }

    pub fn coord_map(&self) -> CoordMap {
        let (rf, stride, offset) = receptive_field(&self.backbone);
        CoordMap { receptive_field: rf, stride: stride as f64, offset }
    }

    pub fn beam_spec(&self) -> Result<BeamSpec> {
        let (gh, gw) = self.feature_grid()?;
        let mut spec = BeamSpec::new(gh, gw);
        spec.n_orient = self.n_orient;
        spec.orient_step_deg = 360.0 / self.n_orient as f64;
        Ok(spec)
    }

    /// Human-readable layer list.
    pub fn describe(&self) -> String {
        self.backbone.iter().map(|l| l.to_string()).collect::<Vec<_>>().join("-")
    }
}

/// Affine map from feature-grid coordinates to image pixel coordinates
/// (pixel `k` has its center at coordinate `k`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordMap {
    pub receptive_field: usize,
    pub stride: f64,
    pub offset: f64,
}

impl CoordMap {
    pub fn to_image(&self, p: (f64, f64)) -> (f64, f64) {
        (self.stride * p.0 + self.offset, self.stride * p.1 + self.offset)
    }

    pub fn to_feature(&self, p: (f64, f64)) -> (f64, f64) {
        ((p.0 - self.offset) / self.stride, (p.1 - self.offset) / self.stride)
    }
}

/// Normalizes pixel coordinates to [0, 1] per axis.
pub fn normalize_point(p: (f64, f64), w: usize, h: usize) -> (f64, f64) {
    (p.0 / (w as f64 - 1.0), p.1 / (h as f64 - 1.0))
}

pub fn denormalize_point(p: (f64, f64), w: usize, h: usize) -> (f64, f64) {
    (p.0 * (w as f64 - 1.0), p.1 * (h as f64 - 1.0))
}

/// Which head the model trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    /// Attention-modulated exemplar branch plus the matched-filter search
    /// branch.
    Siamese,
    /// FC-ELU-FC-ELU-FC2 regression from the flattened feature map.
    FcBaseline,
    /// Conv/pool regression stack followed by FC2.
    ConvBaseline,
}

impl HeadKind {
    pub fn code(self) -> u32 {
        match self {
            HeadKind::Siamese => 0,
            HeadKind::FcBaseline => 1,
            HeadKind::ConvBaseline => 2,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(HeadKind::Siamese),
            1 => Ok(HeadKind::FcBaseline),
            2 => Ok(HeadKind::ConvBaseline),
            _ => Err(Error::Format { what: "checkpoint", detail: format!("unknown head code {code}") }),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            HeadKind::Siamese => "siamese",
            HeadKind::FcBaseline => "fc",
            HeadKind::ConvBaseline => "conv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub preset: Option<Preset>,
    pub arch: Arch,
    pub head: HeadKind,
    /// When false the modulation map is omitted (x_m = 0).
    pub modulation: bool,
}

impl ModelConfig {
    pub fn new(preset: Preset, head: HeadKind, modulation: bool) -> Self {
        ModelConfig { preset: Some(preset), arch: preset.arch(), head, modulation }
    }

    pub fn condition(&self) -> &'static str {
        match (self.head, self.modulation) {
            (HeadKind::Siamese, true) => "proposed",
            (HeadKind::Siamese, false) => "no-modulation",
            (HeadKind::FcBaseline, _) => "fc-baseline",
            (HeadKind::ConvBaseline, _) => "conv-baseline",
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct LayerIds {
    backbone: Vec<Option<Conv>>,
    obj: Option<Conv>,
    hand_pos: Option<Conv>,
    hand_orient: Option<Conv>,
    fc: Vec<Dense>,
    conv_head: Vec<Option<Conv>>,
    conv_head_out: Option<Dense>,
}

/// A model instance: configuration, parameters and the (shared, constant)
/// modulation bank.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: ParamSet<f32>,
    ids: LayerIds,
    bank: Option<Arc<MapBank>>,
}

fn uniform_tensor(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<f32> {
    let bound = (6.0 / fan_in as f64).sqrt() as f32;
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-bound..=bound))
}

impl Model {
    /// Fresh model with uniform ±sqrt(6/fan_in) weights and zero biases.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let arch = &config.arch;
        let (gh, gw) = arch.feature_grid()?;
        let conv = |params: &mut ParamSet<f32>, rng: &mut ChaCha8Rng, name: &str, out: usize, inp: usize, k: usize| {
            let weight = params.insert(format!("{name}.weight"), uniform_tensor(rng, &[out, inp, k, k], inp * k * k))?;
            let bias = params.insert(format!("{name}.bias"), Tensor::zeros([out]))?;
            Ok::<_, Error>(Conv { weight, bias })
        };

        let mut channels = 3;
        let mut backbone_ids = Vec::new();
        for (idx, layer) in arch.backbone.iter().enumerate() {
            backbone_ids.push(match layer {
                Layer::Conv3 { out } => {
                    let ids = conv(&mut params, &mut rng, &format!("conv{}", idx + 1), *out, channels, 3)?;
                    channels = *out;
                    Some(ids)
                }
                Layer::Pool => None,
            });
        }
        let feat = channels;

        let mut ids = LayerIds {
            backbone: backbone_ids,
            obj: None,
            hand_pos: None,
            hand_orient: None,
            fc: Vec::new(),
            conv_head: Vec::new(),
            conv_head_out: None,
        };
        let dense = |params: &mut ParamSet<f32>, rng: &mut ChaCha8Rng, name: &str, out: usize, inp: usize| {
            let weight = params.insert(format!("{name}.weight"), uniform_tensor(rng, &[out, inp], inp))?;
            let bias = params.insert(format!("{name}.bias"), Tensor::zeros([out]))?;
            Ok::<_, Error>(Dense { weight, bias })
        };

        match config.head {
            HeadKind::Siamese => {
                ids.obj = Some(conv(&mut params, &mut rng, "bottleneck_obj", 1, feat, 1)?);
                ids.hand_pos = Some(conv(&mut params, &mut rng, "bottleneck_hp", 1, feat, 1)?);
                ids.hand_orient = Some(conv(&mut params, &mut rng, "bottleneck_ho", arch.n_orient, feat, 1)?);
            }
            HeadKind::FcBaseline => {
                let [h1, h2] = arch.fc_hidden;
                ids.fc.push(dense(&mut params, &mut rng, "fc1", h1, feat * gh * gw)?);
                ids.fc.push(dense(&mut params, &mut rng, "fc2", h2, h1)?);
                ids.fc.push(dense(&mut params, &mut rng, "fc3", 2, h2)?);
            }
            HeadKind::ConvBaseline => {
                let chain = size_chain(&arch.conv_head, gh, gw).map_err(|step| {
                    Error::Invalid(format!("conv baseline does not fit a {gh}×{gw} feature grid: {step}"))
                })?;
                let mut c = feat;
                for (idx, layer) in arch.conv_head.iter().enumerate() {
                    ids.conv_head.push(match layer {
                        Layer::Conv3 { out } => {
                            let l = conv(&mut params, &mut rng, &format!("head_conv{}", idx + 1), *out, c, 3)?;
                            c = *out;
                            Some(l)
                        }
                        Layer::Pool => None,
                    });
                }
                let (fh, fw) = *chain.last().unwrap();
                ids.conv_head_out = Some(dense(&mut params, &mut rng, "head_fc", 2, c * fh * fw)?);
            }
        }

        let bank = match config.head {
            HeadKind::Siamese => Some(Arc::new(MapBank::build(arch.beam_spec()?)?)),
            _ => None,
        };
        Ok(Model { config, params, ids, bank })
    }

    /// Model with the given parameter values (e.g. from a checkpoint).
    pub fn with_params(config: ModelConfig, params: ParamSet<f32>) -> Result<Self> {
        let mut model = Model::init(config, 0)?;
        if params.len() != model.params.len() {
            return Err(Error::Mismatch(format!(
                "checkpoint has {} parameter tensors, model expects {}",
                params.len(),
                model.params.len()
            )));
        }
        for id in model.params.ids() {
            let name = model.params.name(id).to_string();
            let src = params
                .id(&name)
                .ok_or_else(|| Error::Mismatch(format!("checkpoint lacks parameter `{name}`")))?;
            let value = params.value(src);
            if value.shape() != model.params.value(id).shape() {
                return Err(Error::Mismatch(format!(
                    "parameter `{name}` has shape {:?}, model expects {:?}",
                    value.shape(),
                    model.params.value(id).shape()
                )));
            }
            *model.params.value_mut(id) = value.clone();
        }
        Ok(model)
    }

    /// Shares the bank of another model with the same geometry instead of
    /// rebuilding it.
    pub fn share_bank_from(&mut self, other: &Model) {
        if let (Some(_), Some(b)) = (&self.bank, &other.bank) {
            if b.spec() == &self.config.arch.beam_spec().expect("validated at init") {
                self.bank = Some(Arc::clone(b));
            }
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn arch(&self) -> &Arch {
        &self.config.arch
    }

    pub fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<f32> {
        &mut self.params
    }

    pub fn bank(&self) -> Option<&Arc<MapBank>> {
        self.bank.as_ref()
    }

    pub fn feature_channels(&self) -> usize {
        self.config.arch.feature_channels()
    }

    /// Forward-graph builder bound to this model's layout.
    pub fn net(&self) -> Net<'_> {
        Net { model: self }
    }

    pub fn check_image(&self, image: &Tensor<impl Scalar>) -> Result<()> {
        let (c, h, w) = image.chw()?;
        let arch = self.arch();
        if c != 3 {
            return Err(Error::shape("image", format!("expected 3 channels, got {c}")));
        }
        if (h, w) != (arch.input_h, arch.input_w) {
            return Err(Error::ImageSize {
                preset: self.config.preset.map(|p| p.name().to_string()).unwrap_or_else(|| "custom".into()),
                got_w: w as u32,
                got_h: h as u32,
                want_w: arch.input_w as u32,
                want_h: arch.input_h as u32,
            });
        }
        Ok(())
    }
}

/// Tape handles produced by the exemplar branch.
#[derive(Debug, Clone, Copy)]
pub struct ExemplarVars {
    pub features: Var,
    pub x_o: Var,
    pub pose: Option<HandPoseVars>,
    pub x_m: Option<Var>,
    pub attn: Var,
    /// `(p_x, p_y)` in feature-grid coordinates.
    pub p_feat: Var,
    /// `(p_x, p_y)` in normalized image coordinates.
    pub p_norm: Var,
    pub f: Var,
}

/// Tape handles produced by the search branch.
#[derive(Debug, Clone, Copy)]
pub struct SearchVars {
    pub features: Var,
    pub response: Var,
    pub attn: Var,
    pub p_feat: Var,
    pub p_norm: Var,
}

/// Records the network's forward graph on a tape. The parameter set on the
/// tape must have this model's layout (it may be a cast copy).
#[derive(Clone, Copy)]
pub struct Net<'m> {
    model: &'m Model,
}

impl<'m> Net<'m> {
    pub fn conv_block<T: Scalar>(&self, tape: &mut Tape<'_, T>, image: Var) -> Result<Var> {
        self.model.check_image(tape.value(image))?;
        let mut x = image;
        for ids in &self.model.ids.backbone {
            x = match ids {
                Some(conv) => {
                    let y = tape.conv2d_valid(x, tape.param(conv.weight), Some(tape.param(conv.bias)))?;
                    tape.elu(y)
                }
                None => tape.maxpool2x2(x)?,
            };
        }
        Ok(x)
    }

    fn bottleneck<T: Scalar>(&self, tape: &mut Tape<'_, T>, features: Var, conv: Option<Conv>, what: &str) -> Result<Var> {
        let conv = conv.ok_or_else(|| Error::Invalid(format!("model has no {what} bottleneck")))?;
        tape.conv2d_valid(features, tape.param(conv.weight), Some(tape.param(conv.bias)))
    }

    fn normalize<T: Scalar>(&self, tape: &mut Tape<'_, T>, p_feat: Var) -> Result<Var> {
        let arch = self.model.arch();
        let cm = arch.coord_map();
        let (sx, sy) = (arch.input_w as f64 - 1.0, arch.input_h as f64 - 1.0);
        let scale = [T::from_f64(cm.stride / sx), T::from_f64(cm.stride / sy)];
        let shift = [T::from_f64(cm.offset / sx), T::from_f64(cm.offset / sy)];
        tape.scale_shift(p_feat, &scale, &shift)
    }

    /// Exemplar branch: features, modulated spatial softmax, soft-argmax and
    /// attention-pooled feature vector.
    pub fn exemplar<T: Scalar>(&self, tape: &mut Tape<'_, T>, image: Var) -> Result<ExemplarVars> {
        let model = self.model;
        let features = self.conv_block(tape, image)?;
        let x_o = self.bottleneck(tape, features, model.ids.obj, "object")?;
        let (pose, x_m, logits) = if model.config.modulation {
            let bank = model.bank.as_ref().ok_or_else(|| Error::Invalid("model has no map bank".into()))?;
            let hp = self.bottleneck(tape, features, model.ids.hand_pos, "hand position")?;
            let ho = self.bottleneck(tape, features, model.ids.hand_orient, "hand orientation")?;
            let pose = attention::hand_pose(tape, hp, ho, bank.spec())?;
            let x_m = attention::soft_select_map(tape, pose.pos_dist, pose.orient_dist, bank)?;
            let logits = tape.add(x_o, x_m)?;
            (Some(pose), Some(x_m), logits)
        } else {
            (None, None, x_o)
        };
        let attn = tape.spatial_softmax(logits)?;
        let p_feat = attention::spatial_softargmax(tape, attn)?;
        let p_norm = self.normalize(tape, p_feat)?;
        let f = attention::extract_feature(tape, features, attn)?;
        Ok(ExemplarVars { features, x_o, pose, x_m, attn, p_feat, p_norm, f })
    }

    /// Search branch: `f` as a bias-free 1×1 convolution over the search
    /// features, then spatial softmax and soft-argmax. The softmax sees the
    /// response divided by sqrt(C); unscaled responses saturate it and stall
    /// training on some samples.
    pub fn search<T: Scalar>(&self, tape: &mut Tape<'_, T>, image: Var, f: Var) -> Result<SearchVars> {
        let features = self.conv_block(tape, image)?;
        let c = tape.value(features).shape()[0];
        if tape.value(f).numel() != c {
            return Err(Error::shape(
                "search_forward",
                format!("feature vector has {} values, feature map has {c} channels", tape.value(f).numel()),
            ));
        }
        if !tape.value(f).all_finite() {
            return Err(Error::Invalid("search_forward: feature vector is not finite".into()));
        }
        let filter = tape.reshape(f, &[1, c, 1, 1])?;
        let response = tape.conv2d_valid(features, filter, None)?;
        let logits = tape.scale(response, T::from_f64(1.0 / (c as f64).sqrt()));
        let attn = tape.spatial_softmax(logits)?;
        let p_feat = attention::spatial_softargmax(tape, attn)?;
        let p_norm = self.normalize(tape, p_feat)?;
        Ok(SearchVars { features, response, attn, p_feat, p_norm })
    }

    /// FC baseline: normalized `(p_x, p_y)` regressed from flattened features.
    pub fn baseline_fc<T: Scalar>(&self, tape: &mut Tape<'_, T>, features: Var) -> Result<Var> {
        let layers = &self.model.ids.fc;
        if layers.is_empty() {
            return Err(Error::Invalid("model has no FC baseline head".into()));
        }
        let n = tape.value(features).numel();
        let mut x = tape.reshape(features, &[n])?;
        for (idx, dense) in layers.iter().enumerate() {
            x = tape.affine(x, tape.param(dense.weight), Some(tape.param(dense.bias)))?;
            if idx + 1 < layers.len() {
                x = tape.elu(x);
            }
        }
        Ok(x)
    }

    /// Conv baseline: normalized `(p_x, p_y)` from the conv/pool stack + FC2.
    pub fn baseline_conv<T: Scalar>(&self, tape: &mut Tape<'_, T>, features: Var) -> Result<Var> {
        let out = self.model.ids.conv_head_out.ok_or_else(|| Error::Invalid("model has no conv baseline head".into()))?;
        let mut x = features;
        for ids in &self.model.ids.conv_head {
            x = match ids {
                Some(conv) => {
                    let y = tape.conv2d_valid(x, tape.param(conv.weight), Some(tape.param(conv.bias)))?;
                    tape.elu(y)
                }
                None => tape.maxpool2x2(x)?,
            };
        }
        let n = tape.value(x).numel();
        let flat = tape.reshape(x, &[n])?;
        tape.affine(flat, tape.param(out.weight), Some(tape.param(out.bias)))
    }

    /// Normalized exemplar-position prediction for whichever head the model
    /// carries, plus the exemplar handles when the head is Siamese.
    pub fn predict_exemplar<T: Scalar>(&self, tape: &mut Tape<'_, T>, image: Var) -> Result<(Var, Option<ExemplarVars>)> {
        match self.model.config.head {
            HeadKind::Siamese => {
                let ex = self.exemplar(tape, image)?;
                Ok((ex.p_norm, Some(ex)))
            }
            HeadKind::FcBaseline => {
                let features = self.conv_block(tape, image)?;
                Ok((self.baseline_fc(tape, features)?, None))
            }
            HeadKind::ConvBaseline => {
                let features = self.conv_block(tape, image)?;
                Ok((self.baseline_conv(tape, features)?, None))
            }
        }
    }
}

/// Materialized exemplar-branch result.
#[derive(Debug, Clone)]
pub struct ExemplarOutput {
    /// Predicted object center in image pixels.
    pub p: (f64, f64),
    /// Predicted center in feature-grid coordinates.
    pub p_feat: (f64, f64),
    pub f: Vec<f32>,
    pub x_o: Tensor<f32>,
    pub x_m: Option<Tensor<f32>>,
    pub attn: Tensor<f32>,
    pub pose: Option<HandPose<f32>>,
}

/// Materialized search-branch result.
#[derive(Debug, Clone)]
pub struct SearchOutput {
    pub p: (f64, f64),
    pub p_feat: (f64, f64),
    pub attn: Tensor<f32>,
    pub response: Tensor<f32>,
}

impl SearchOutput {
    /// Peak attention probability.
    pub fn confidence(&self) -> f32 {
        self.attn.max()
    }
}

fn pair<T: Scalar>(t: &Tensor<T>) -> (f64, f64) {
    (t.data()[0].as_f64(), t.data()[1].as_f64())
}

impl Model {
    pub fn exemplar_forward(&self, image: &Tensor<f32>) -> Result<ExemplarOutput> {
        let mut tape = Tape::new(&self.params);
        let x = tape.constant(image.clone());
        let ex = self.net().exemplar(&mut tape, x)?;
        let p_feat = pair(tape.value(ex.p_feat));
        let spec = self.bank.as_ref().map(|b| *b.spec());
        Ok(ExemplarOutput {
            p: self.arch().coord_map().to_image(p_feat),
            p_feat,
            f: tape.value(ex.f).data().to_vec(),
            x_o: tape.value(ex.x_o).clone(),
            x_m: ex.x_m.map(|v| tape.value(v).clone()),
            attn: tape.value(ex.attn).clone(),
            pose: ex.pose.zip(spec).map(|(p, s)| p.read(&tape, &s)),
        })
    }

    pub fn search_forward(&self, image: &Tensor<f32>, f: &[f32]) -> Result<SearchOutput> {
        let c = self.feature_channels();
        if f.len() != c {
            return Err(Error::shape("search_forward", format!("feature vector has {} values, expected {c}", f.len())));
        }
        let mut tape = Tape::new(&self.params);
        let x = tape.constant(image.clone());
        let fv = tape.constant(Tensor::new([c], f.to_vec())?);
        let s = self.net().search(&mut tape, x, fv)?;
        let p_feat = pair(tape.value(s.p_feat));
        Ok(SearchOutput {
            p: self.arch().coord_map().to_image(p_feat),
            p_feat,
            attn: tape.value(s.attn).clone(),
            response: tape.value(s.response).clone(),
        })
    }

    /// Exemplar-position prediction in image pixels for any head.
    pub fn predict_exemplar(&self, image: &Tensor<f32>) -> Result<(f64, f64)> {
        let mut tape = Tape::new(&self.params);
        let x = tape.constant(image.clone());
        let (p, _) = self.net().predict_exemplar(&mut tape, x)?;
        let arch = self.arch();
        Ok(denormalize_point(pair(tape.value(p)), arch.input_w, arch.input_h))
    }
}
