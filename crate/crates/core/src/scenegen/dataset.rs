//! Paired exemplar/search datasets and their on-disk layout.
//!
//! ```text
//! <dir>/meta.json                manifest (config echo, seed, counts)
//! <dir>/<split>/NNNNNN.json      sample record (labels and layouts)
//! <dir>/<split>/NNNNNN.exemplar.png
//! <dir>/<split>/NNNNNN.search.png
//! ```

use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::seq::IndexedRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::compose::{render_layout, plan_layout, SceneConfig, SceneLayout};
use super::sprites::{generate_sprite_library, item_rng, HandGlyph, Library, LibraryCounts, Sprite, Split};
use crate::error::{Error, Result};
use crate::imageio;
use crate::model::Preset;

pub const DATASET_FORMAT: &str = "pointat-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub preset: Preset,
    pub n_train: usize,
    pub n_test: usize,
    pub library: LibraryCounts,
    pub scene: SceneConfig,
}

impl DatasetConfig {
    /// 5000 train / 1000 test samples for the given preset.
    pub fn for_preset(preset: Preset) -> Result<Self> {
        Ok(DatasetConfig {
            preset,
            n_train: 5000,
            n_test: 1000,
            library: LibraryCounts::default(),
            scene: SceneConfig::for_preset(preset)?,
        })
    }

    pub fn with_counts(mut self, n_train: usize, n_test: usize) -> Self {
        self.n_train = n_train;
        self.n_test = n_test;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        let l = &self.library;
        if l.sprites_train == 0 || l.sprites_test == 0 || l.hands_train == 0 || l.hands_test == 0 {
            return Err(Error::Invalid("library counts must be at least 1".into()));
        }
        // target plus up to 2×max distinct distractors per sample
        let need = 1 + 2 * self.scene.distractors_max;
        if l.sprites_train.min(l.sprites_test) < need {
            return Err(Error::Invalid(format!("each split needs at least {need} sprites")));
        }
        let arch = self.preset.arch();
        if (self.scene.width as usize, self.scene.height as usize) != (arch.input_w, arch.input_h) {
            return Err(Error::Invalid(format!(
                "scene canvas {}×{} does not match preset `{}` input {}×{}",
                self.scene.width, self.scene.height, self.preset, arch.input_w, arch.input_h
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub config: DatasetConfig,
    pub counts: SplitCounts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub test: usize,
}

/// Labels and layouts of one sample; stored as `NNNNNN.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub split: Split,
    /// Seed of the per-sample generator.
    pub rng_seed: u64,
    pub target_id: String,
    pub hand_id: String,
    pub hand_angle_deg: f64,
    /// Target center in the exemplar, pixels `(x, y)`.
    pub target_pos: [f64; 2],
    /// Target center in the search image.
    pub target_pos_search: [f64; 2],
    pub exemplar: SceneLayout,
    pub search: SceneLayout,
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub record: SampleRecord,
    pub exemplar: RgbImage,
    pub search: RgbImage,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

fn pick_distinct<'a>(rng: &mut impl Rng, pool: &'a [Sprite], n: usize, exclude: &[&str]) -> Vec<&'a Sprite> {
    let mut out: Vec<&Sprite> = Vec::with_capacity(n);
    while out.len() < n {
        let s = pool.choose(rng).expect("non-empty library");
        if !exclude.contains(&s.id.as_str()) && !out.iter().any(|o| o.id == s.id) {
            out.push(s);
        }
    }
    out
}

/// Generates sample `index` of a split; pure in `(seed, config, index)`.
pub fn generate_sample(config: &DatasetConfig, library: &Library, seed: u64, index: usize) -> Result<Sample> {
    let rng_seed = item_rng(seed, 71, library.split, index as u64).next_u64();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let scene = &config.scene;

    let target = library.sprites.choose(&mut rng).expect("non-empty library");
    let hand: &HandGlyph = library.hands.choose(&mut rng).expect("non-empty library");
    let n_ex = rng.random_range(scene.distractors_min..=scene.distractors_max);
    let ex_distractors = pick_distinct(&mut rng, &library.sprites, n_ex, &[&target.id]);
    let mut used: Vec<&str> = vec![&target.id];
    used.extend(ex_distractors.iter().map(|d| d.id.as_str()));
    let n_se = rng.random_range(scene.distractors_min..=scene.distractors_max);
    let se_distractors = pick_distinct(&mut rng, &library.sprites, n_se, &used);

    let ex_ids: Vec<&str> = ex_distractors.iter().map(|d| d.id.as_str()).collect();
    let ex_layout = plan_layout(scene, &target.id, &ex_ids, Some(&hand.id), &mut rng)?;
    let se_ids: Vec<&str> = se_distractors.iter().map(|d| d.id.as_str()).collect();
    let se_layout = plan_layout(scene, &target.id, &se_ids, None, &mut rng)?;

    let exemplar = render_layout(&ex_layout, target, &ex_distractors, Some(hand))?;
    let search = render_layout(&se_layout, target, &se_distractors, None)?;
    let (tx, ty) = ex_layout.target_center();
    let (sx, sy) = se_layout.target_center();
    let record = SampleRecord {
        index,
        split: library.split,
        rng_seed,
        target_id: target.id.clone(),
        hand_id: hand.id.clone(),
        hand_angle_deg: ex_layout.hand.as_ref().expect("exemplar has a hand").angle_deg,
        target_pos: [tx, ty],
        target_pos_search: [sx, sy],
        exemplar: ex_layout,
        search: se_layout,
    };
    Ok(Sample { record, exemplar, search })
}

/// Generates the libraries and every sample of both splits.
pub fn build_dataset(config: &DatasetConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let (train_lib, test_lib) = generate_sprite_library(seed, config.library, config.scene.sprite_size as usize);
    let gen = |lib: &Library, n: usize| -> Result<Vec<Sample>> {
        (0..n).into_par_iter().map(|i| generate_sample(config, lib, seed, i)).collect()
    };
    let train = gen(&train_lib, config.n_train)?;
    let test = gen(&test_lib, config.n_test)?;
    Ok(Dataset {
        manifest: Manifest {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            seed,
            config: config.clone(),
            counts: SplitCounts { train: train.len(), test: test.len() },
        },
        train,
        test,
    })
}

fn sample_paths(dir: &Path, split: Split, index: usize) -> (PathBuf, PathBuf, PathBuf) {
    let base = dir.join(split.name());
    (
        base.join(format!("{index:06}.json")),
        base.join(format!("{index:06}.exemplar.png")),
        base.join(format!("{index:06}.search.png")),
    )
}

fn is_nonempty_dir(dir: &Path) -> Result<bool> {
    match std::fs::read_dir(dir) {
        Ok(mut entries) => Ok(entries.next().is_some()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(false),
        Err(e) => Err(Error::io(dir, e)),
    }
}

/// Writes a dataset. A non-empty `dir` is rejected unless `force`, in which
/// case the previous manifest and split directories are replaced.
pub fn write_dataset(dataset: &Dataset, dir: &Path, force: bool) -> Result<()> {
    if is_nonempty_dir(dir)? {
        if !force {
            return Err(Error::NotEmpty(dir.to_path_buf()));
        }
        for split in [Split::Train, Split::Test] {
            let p = dir.join(split.name());
            if p.exists() {
                std::fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
    }
    for split in [Split::Train, Split::Test] {
        let p = dir.join(split.name());
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let meta = dir.join("meta.json");
    let json = serde_json::to_string_pretty(&dataset.manifest)?;
    std::fs::write(&meta, json + "\n").map_err(|e| Error::io(&meta, e))?;

    for split in [Split::Train, Split::Test] {
        dataset.split(split).par_iter().try_for_each(|s| -> Result<()> {
            let (json, ex, se) = sample_paths(dir, split, s.record.index);
            let text = serde_json::to_string_pretty(&s.record)?;
            std::fs::write(&json, text + "\n").map_err(|e| Error::io(&json, e))?;
            imageio::save_png(&ex, &s.exemplar)?;
            imageio::save_png(&se, &s.search)
        })?;
    }
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let meta = dir.join("meta.json");
    let text = std::fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != DATASET_FORMAT || manifest.version != DATASET_VERSION {
        return Err(Error::Format {
            what: "dataset manifest",
            detail: format!("expected {DATASET_FORMAT} v{DATASET_VERSION}, got {} v{}", manifest.format, manifest.version),
        });
    }
    Ok(manifest)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = load_manifest(dir)?;
    let load = |split: Split, n: usize| -> Result<Vec<Sample>> {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let (json, ex, se) = sample_paths(dir, split, i);
                let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
                let record: SampleRecord = serde_json::from_str(&text)?;
                if record.index != i || record.split != split {
                    return Err(Error::Format { what: "sample record", detail: format!("{} is mislabelled", json.display()) });
                }
                Ok(Sample { record, exemplar: imageio::load_png(&ex)?, search: imageio::load_png(&se)? })
            })
            .collect()
    };
    let train = load(Split::Train, manifest.counts.train)?;
    let test = load(Split::Test, manifest.counts.test)?;
    Ok(Dataset { manifest, train, test })
}

/// SHA-256 over every file below `dir` (sorted relative paths, sizes and
/// contents), as lowercase hex.
pub fn directory_digest(dir: &Path) -> Result<String> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                out.push(path.strip_prefix(root).expect("below root").to_path_buf());
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(dir, dir, &mut files)?;
    files.sort();
    let mut hasher = Sha256::new();
    for rel in files {
        let path = dir.join(&rel);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        hasher.update(rel.to_string_lossy().as_bytes());
        hasher.update([0]);
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}
