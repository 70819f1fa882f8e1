//! Persisted object features, and the teach/find operations on them.
//!
//! Stored in the named-tensor container: `meta/kind`, `meta/feature_width`,
//! then per object (sorted by name) `object/<name>/f`,
//! `object/<name>/source_sha256` and `object/<name>/taught_at`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::container::Container;
use crate::error::{Error, Result};
use crate::model::{HeadKind, Model};
use crate::tensor::Tensor;

const KIND: &[u8] = b"pointat-object-store";

#[derive(Debug, Clone, PartialEq)]
pub struct StoredObject {
    pub f: Vec<f32>,
    pub source_sha256: [u8; 32],
    /// Unix seconds supplied by the caller.
    pub taught_at: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectStore {
    feature_width: usize,
    objects: BTreeMap<String, StoredObject>,
}

fn bad(detail: impl Into<String>) -> Error {
    Error::Format { what: "object store", detail: detail.into() }
}

impl ObjectStore {
    pub fn new(feature_width: usize) -> Self {
        ObjectStore { feature_width, objects: BTreeMap::new() }
    }

    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    pub fn names(&self) -> Vec<String> {
        self.objects.keys().cloned().collect()
    }

    pub fn get(&self, name: &str) -> Option<&StoredObject> {
        self.objects.get(name)
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn insert(&mut self, name: &str, object: StoredObject, overwrite: bool) -> Result<()> {
        if name.is_empty() || name.contains('/') {
            return Err(Error::Invalid(format!("object name `{name}` must be non-empty and contain no `/`")));
        }
        if object.f.len() != self.feature_width {
            return Err(Error::Mismatch(format!(
                "feature vector has {} values, store holds {}-d vectors",
                object.f.len(),
                self.feature_width
            )));
        }
        if !overwrite && self.objects.contains_key(name) {
            return Err(Error::DuplicateObject(name.to_string()));
        }
        self.objects.insert(name.to_string(), object);
        Ok(())
    }

    pub fn lookup(&self, name: &str) -> Result<&StoredObject> {
        self.objects.get(name).ok_or_else(|| Error::UnknownObject { name: name.to_string(), known: self.names() })
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::default();
        c.push_bytes("meta/kind", KIND);
        c.push_u32s("meta/feature_width", &[self.feature_width as u32]);
        for (name, o) in &self.objects {
            c.push(format!("object/{name}/f"), Tensor::new([o.f.len()], o.f.clone()).expect("non-empty"));
            c.push_bytes(format!("object/{name}/source_sha256"), &o.source_sha256);
            c.push_u64(format!("object/{name}/taught_at"), o.taught_at);
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.bytes("meta/kind")? != KIND {
            return Err(bad("not an object store"));
        }
        let [width] = c.u32s("meta/feature_width")?[..] else {
            return Err(bad("meta/feature_width must hold one value"));
        };
        let mut store = ObjectStore::new(width as usize);
        for (entry, t) in &c.entries {
            let Some(name) = entry.strip_prefix("object/").and_then(|r| r.strip_suffix("/f")) else {
                continue;
            };
            let hash: [u8; 32] = c
                .bytes(&format!("object/{name}/source_sha256"))?
                .try_into()
                .map_err(|_| bad(format!("`{name}` has a malformed source hash")))?;
            let object = StoredObject { f: t.data().to_vec(), source_sha256: hash, taught_at: c.u64(&format!("object/{name}/taught_at"))? };
            store.insert(name, object, false)?;
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }

    /// Loads `path` if it exists, otherwise starts an empty store of the given
    /// width. An existing store must have that width.
    pub fn open_or_new(path: &Path, feature_width: usize) -> Result<Self> {
        if !path.exists() {
            return Ok(Self::new(feature_width));
        }
        let store = Self::load(path)?;
        if store.feature_width != feature_width {
            return Err(Error::Mismatch(format!(
                "store holds {}-d vectors but the checkpoint produces {feature_width}-d features",
                store.feature_width
            )));
        }
        Ok(store)
    }
}

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeachResult {
    pub name: String,
    /// Where the exemplar branch located the pointed-at object, pixels.
    pub p: (f64, f64),
    pub p_feat: (f64, f64),
    pub feature_norm: f64,
    pub replaced: bool,
}

fn require_siamese(model: &Model) -> Result<()> {
    if model.config().head != HeadKind::Siamese {
        return Err(Error::Mismatch(format!(
            "teach/find need a Siamese checkpoint, this one is `{}`",
            model.config().condition()
        )));
    }
    Ok(())
}

/// Runs the exemplar branch and stores the pooled feature vector.
pub fn teach(
    model: &Model,
    image: &Tensor<f32>,
    source_sha256: [u8; 32],
    name: &str,
    store: &mut ObjectStore,
    overwrite: bool,
    taught_at: u64,
) -> Result<TeachResult> {
    require_siamese(model)?;
    if store.feature_width() != model.feature_channels() {
        return Err(Error::Mismatch(format!(
            "store holds {}-d vectors but the checkpoint produces {}-d features",
            store.feature_width(),
            model.feature_channels()
        )));
    }
    if !overwrite && store.get(name).is_some() {
        return Err(Error::DuplicateObject(name.to_string()));
    }
    let out = model.exemplar_forward(image)?;
    let feature_norm = out.f.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
    let replaced = store.get(name).is_some();
    store.insert(name, StoredObject { f: out.f, source_sha256, taught_at }, overwrite)?;
    Ok(TeachResult { name: name.to_string(), p: out.p, p_feat: out.p_feat, feature_norm, replaced })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FindResult {
    pub name: String,
    pub p: (f64, f64),
    pub p_feat: (f64, f64),
    /// Peak probability of the search attention map.
    pub confidence: f64,
}

/// Localizes a stored object in a search image.
pub fn find(model: &Model, image: &Tensor<f32>, name: &str, store: &ObjectStore) -> Result<FindResult> {
    require_siamese(model)?;
    let object = store.lookup(name)?;
    let out = model.search_forward(image, &object.f)?;
    Ok(FindResult { name: name.to_string(), p: out.p, p_feat: out.p_feat, confidence: out.confidence() as f64 })
}
