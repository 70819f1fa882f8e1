//! Blocking implementations of the service operations.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use base64::Engine;
use pointat_api::*;
use pointat_core::imageio::{annotate, RgbImage, decode_png, heatmap_gray, rgb_to_tensor, save_png, write_pgm};
use pointat_core::model::Model;
use pointat_core::scenegen::{
    build_dataset, directory_digest, load_dataset, write_dataset, DatasetConfig, SceneConfig,
};
use pointat_core::training::{find, load_model, sha256, teach, ObjectStore};
use pointat_core::{Error, Tensor};

fn invalid(msg: impl Into<String>) -> ApiError {
    ApiError::new(ErrorKind::Validation, msg)
}

pub(crate) fn require_exists(path: &Path, what: &str) -> Result<(), ApiError> {
    if !path.exists() {
        return Err(invalid(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

pub fn gen_data(req: &GenDataRequest) -> Result<GenDataResponse, ApiError> {
    let base = DatasetConfig::for_preset(req.preset)?;
    let (n_train, n_test) = (req.train.unwrap_or(base.n_train), req.test.unwrap_or(base.n_test));
    let config = base.with_counts(n_train, n_test);
    config.validate()?;
    let dataset = build_dataset(&config, req.seed)?;
    write_dataset(&dataset, &req.out, req.force)?;
    Ok(GenDataResponse { out: req.out.clone(), manifest: dataset.manifest, digest: directory_digest(&req.out)? })
}

fn check_model_matches(model: &Model, manifest_preset: Preset, checkpoint: &Path) -> Result<(), ApiError> {
    match model.config().preset {
        Some(p) if p == manifest_preset => Ok(()),
        other => Err(invalid(format!(
            "checkpoint {} was trained for preset `{}`, dataset is `{manifest_preset}`",
            checkpoint.display(),
            other.map_or("custom".to_string(), |p| p.to_string())
        ))),
    }
}

pub fn eval(req: &EvalRequest) -> Result<EvalResponse, ApiError> {
    if req.checkpoints.is_empty() {
        return Err(ApiError::new(ErrorKind::Usage, "at least one checkpoint is required"));
    }
    require_exists(&req.data, "dataset")?;
    for c in &req.checkpoints {
        require_exists(c, "checkpoint")?;
    }
    let models = req
        .checkpoints
        .iter()
        .map(|c| load_model(c).map_err(ApiError::from))
        .collect::<Result<Vec<_>, _>>()?;
    let dataset = load_dataset(&req.data)?;
    let mut rows = Vec::new();
    for (path, model) in req.checkpoints.iter().zip(&models) {
        check_model_matches(model, dataset.manifest.config.preset, path)?;
        let report = pointat_core::training::evaluate(model, dataset.split(req.split))?;
        rows.push(EvalRow { checkpoint: path.clone(), condition: model.config().condition().to_string(), report });
    }
    Ok(EvalResponse { data: req.data.clone(), split: req.split, rows })
}

/// Raw PNG bytes of an image input.
pub fn image_bytes(input: &ImageInput) -> Result<Vec<u8>, ApiError> {
    match input {
        ImageInput::Path(p) => std::fs::read(p).map_err(|e| invalid(format!("{}: {e}", p.display()))),
        ImageInput::PngBase64(s) => base64::engine::general_purpose::STANDARD
            .decode(s)
            .map_err(|e| ApiError::new(ErrorKind::Usage, format!("image is not valid base64: {e}"))),
    }
}

fn load_input(model: &Model, input: &ImageInput) -> Result<(Vec<u8>, RgbImage, Tensor<f32>), ApiError> {
    let bytes = image_bytes(input)?;
    let img = decode_png(&bytes)?;
    let t = rgb_to_tensor(&img);
    model.check_image(&t)?;
    Ok((bytes, img, t))
}

fn sprite_size(model: &Model) -> Result<u32, ApiError> {
    let preset = model.config().preset.ok_or_else(|| invalid("checkpoint has a custom architecture"))?;
    Ok(SceneConfig::for_preset(preset)?.sprite_size)
}

pub fn teach_op(req: &TeachRequest, store_lock: &Mutex<()>) -> Result<TeachResponse, ApiError> {
    require_exists(&req.checkpoint, "checkpoint")?;
    let model = load_model(&req.checkpoint)?;
    let (bytes, _, image) = load_input(&model, &req.image)?;
    let digest = sha256(&bytes);
    let _guard = store_lock.lock().unwrap_or_else(|e| e.into_inner());
    let mut store = ObjectStore::open_or_new(&req.store, model.feature_channels())?;
    let result = teach(&model, &image, digest, &req.name, &mut store, req.overwrite, req.timestamp)?;
    store.save(&req.store)?;
    Ok(TeachResponse { result, source_sha256: hex::encode(digest), store: req.store.clone(), objects: store.names() })
}

pub fn find_op(req: &FindRequest, store_lock: &Mutex<()>) -> Result<FindResponse, ApiError> {
    require_exists(&req.checkpoint, "checkpoint")?;
    let model = load_model(&req.checkpoint)?;
    let store = {
        let _guard = store_lock.lock().unwrap_or_else(|e| e.into_inner());
        if req.store.exists() {
            ObjectStore::load(&req.store)?
        } else {
            ObjectStore::new(model.feature_channels())
        }
    };
    if store.feature_width() != model.feature_channels() {
        return Err(Error::Mismatch(format!(
            "store holds {}-d vectors but the checkpoint produces {}-d features",
            store.feature_width(),
            model.feature_channels()
        ))
        .into());
    }
    store.lookup(&req.name)?;
    let (_, mut img, image) = load_input(&model, &req.image)?;
    let result = find(&model, &image, &req.name, &store)?;
    let size = sprite_size(&model)?;
    let half = size as f64 / 2.0;
    let bbox = [result.p.0 - half, result.p.1 - half, result.p.0 + half, result.p.1 + half];
    if let Some(path) = &req.annotate {
        annotate(&mut img, result.p, size, [255, 0, 0]);
        save_png(path, &img)?;
    }
    Ok(FindResponse { result, bbox, annotated: req.annotate.clone() })
}

fn write_map(dir: &Path, name: &str, values: &[f32], grid: [usize; 2], files: &mut Vec<PathBuf>) -> Result<(), ApiError> {
    let path = dir.join(format!("{name}.pgm"));
    write_pgm(&path, &heatmap_gray(values, grid[0], grid[1])?)?;
    files.push(path);
    Ok(())
}

pub fn dump_attention(req: &DumpAttentionRequest) -> Result<DumpAttentionResponse, ApiError> {
    require_exists(&req.checkpoint, "checkpoint")?;
    let model = load_model(&req.checkpoint)?;
    if model.config().head != HeadKind::Siamese {
        return Err(invalid(format!(
            "attention maps need a Siamese checkpoint, this one is `{}`",
            model.config().condition()
        )));
    }
    let (_, _, image) = load_input(&model, &req.image)?;
    let search = match &req.search {
        Some(s) => load_input(&model, s)?.2,
        None => image.clone(),
    };
    let ex = model.exemplar_forward(&image)?;
    let se = model.search_forward(&search, &ex.f)?;
    let (gh, gw) = model.arch().feature_grid()?;
    let grid = [gh, gw];
    std::fs::create_dir_all(&req.out).map_err(|e| invalid(format!("{}: {e}", req.out.display())))?;
    let mut files = Vec::new();
    write_map(&req.out, "x_o", ex.x_o.data(), grid, &mut files)?;
    if let Some(x_m) = &ex.x_m {
        write_map(&req.out, "x_m", x_m.data(), grid, &mut files)?;
    }
    write_map(&req.out, "x_o_star", ex.attn.data(), grid, &mut files)?;
    if let Some(pose) = &ex.pose {
        write_map(&req.out, "pos_dist", pose.pos_dist.data(), grid, &mut files)?;
    }
    write_map(&req.out, "x_hat_o_star", se.attn.data(), grid, &mut files)?;
    let hand = match (&ex.pose, model.bank()) {
        (Some(pose), Some(bank)) => {
            let (row, col, orientation) = pose.argmax();
            Some(HandPoseSummary { row, col, orientation, angle_deg: bank.spec().orientation_deg(orientation) })
        }
        _ => None,
    };
    let json_path = req.out.join("attention.json");
    files.push(json_path.clone());
    let response = DumpAttentionResponse { out: req.out.clone(), grid, p: ex.p, p_hat: se.p, hand, files };
    let mut text = serde_json::to_string_pretty(&response).map_err(|e| ApiError::new(ErrorKind::Internal, e.to_string()))?;
    text.push('\n');
    std::fs::write(&json_path, text).map_err(|e| invalid(format!("{}: {e}", json_path.display())))?;
    Ok(response)
}
