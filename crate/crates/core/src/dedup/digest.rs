use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{ClassId, Error, Result};

/// SHA-256 over `width`, `height` (little-endian u32) and the RGB8 buffer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelDigest {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    #[serde(with = "hex_digest")]
    pub digest: [u8; 32],
}

impl PixelDigest {
    fn key(&self) -> (u32, u32, [u8; 32]) {
        (self.width, self.height, self.digest)
    }
}

pub fn digest_rgb(image_id: impl Into<String>, image: &RgbImage) -> PixelDigest {
    let mut hasher = Sha256::new();
    hasher.update(image.width().to_le_bytes());
    hasher.update(image.height().to_le_bytes());
    hasher.update(image.as_raw());
    PixelDigest {
        image_id: image_id.into(),
        width: image.width(),
        height: image.height(),
        digest: hasher.finalize().into(),
    }
}

/// Canonical decode: 8-bit RGB at native resolution, no colour management.
pub fn decode_canonical(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(img.to_rgb8())
}

pub fn digest_file(image_id: impl Into<String>, path: &Path) -> Result<PixelDigest> {
    Ok(digest_rgb(image_id, &decode_canonical(path)?))
}

#[derive(Debug, Clone)]
pub struct ScannedImage {
    pub digest: PixelDigest,
    pub path: PathBuf,
}

/// Digests every file under `dir` in parallel. Image ids are paths relative
/// to `dir` with `/` separators; results are sorted by id.
pub fn scan_images(dir: &Path) -> Result<Vec<ScannedImage>> {
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(dir).follow_links(true) {
        let entry = entry.map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e.into(),
        })?;
        if entry.file_type().is_file() {
            let rel = entry
                .path()
                .strip_prefix(dir)
                .expect("walkdir yields children of dir")
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            files.push((rel, entry.into_path()));
        }
    }
    files.sort();
    files
        .into_par_iter()
        .map(|(id, path)| {
            Ok(ScannedImage {
                digest: digest_file(id, &path)?,
                path,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuplicatePair {
    pub val_id: String,
    pub train_id: String,
    /// `None` when either side has no label.
    pub labels_differ: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LeakReport {
    pub exact_pairs: Vec<DuplicatePair>,
    pub n_leaked_val: u64,
    pub n_leaked_train: u64,
    /// Validation images duplicated more than once in training.
    pub n_multi: u64,
    /// Leaked validation images per validation class.
    pub per_class: BTreeMap<ClassId, u64>,
    /// Share of labelled pairs whose labels differ.
    pub label_mismatch_rate: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing_labels: Vec<String>,
}

/// Cross-set pairs with equal dimensions and digest.
///
/// `confirm` is called on every digest match and must compare the full
/// pixel buffers; returning `false` drops the pair as a hash collision.
pub fn exact_duplicates<F>(
    val: &[PixelDigest],
    train: &[PixelDigest],
    val_labels: &BTreeMap<String, ClassId>,
    train_labels: &BTreeMap<String, ClassId>,
    mut confirm: F,
) -> Result<LeakReport>
where
    F: FnMut(&PixelDigest, &PixelDigest) -> Result<bool>,
{
    let mut index: HashMap<(u32, u32, [u8; 32]), Vec<&PixelDigest>> = HashMap::new();
    for t in train {
        index.entry(t.key()).or_default().push(t);
    }

    let mut pairs = Vec::new();
    let mut missing = BTreeSet::new();
    for v in val {
        let Some(candidates) = index.get(&v.key()) else {
            continue;
        };
        for t in candidates {
            if !confirm(v, t)? {
                continue;
            }
            let vl = val_labels.get(&v.image_id);
            let tl = train_labels.get(&t.image_id);
            if vl.is_none() {
                missing.insert(v.image_id.clone());
            }
            if tl.is_none() {
                missing.insert(t.image_id.clone());
            }
            pairs.push(DuplicatePair {
                val_id: v.image_id.clone(),
                train_id: t.image_id.clone(),
                labels_differ: vl.zip(tl).map(|(a, b)| a != b),
            });
        }
    }
    pairs.sort_by(|a, b| (&a.val_id, &a.train_id).cmp(&(&b.val_id, &b.train_id)));
    pairs.dedup();

    let mut per_val: BTreeMap<&str, u64> = BTreeMap::new();
    for p in &pairs {
        *per_val.entry(&p.val_id).or_default() += 1;
    }
    let train_ids: BTreeSet<&str> = pairs.iter().map(|p| p.train_id.as_str()).collect();
    let mut per_class = BTreeMap::new();
    for id in per_val.keys() {
        if let Some(class) = val_labels.get(*id) {
            *per_class.entry(*class).or_default() += 1;
        }
    }
    let labelled = pairs.iter().filter(|p| p.labels_differ.is_some()).count();
    let differing = pairs.iter().filter(|p| p.labels_differ == Some(true)).count();

    Ok(LeakReport {
        n_leaked_val: per_val.len() as u64,
        n_leaked_train: train_ids.len() as u64,
        n_multi: per_val.values().filter(|&&c| c > 1).count() as u64,
        per_class,
        label_mismatch_rate: if labelled == 0 {
            0.0
        } else {
            differing as f64 / labelled as f64
        },
        missing_labels: missing.into_iter().collect(),
        exact_pairs: pairs,
    })
}

/// Validation ids to evaluate as the leaked subset, and training ids to drop.
pub fn leak_manifest(report: &LeakReport) -> (BTreeSet<String>, BTreeSet<String>) {
    let val = report.exact_pairs.iter().map(|p| p.val_id.clone()).collect();
    let train = report.exact_pairs.iter().map(|p| p.train_id.clone()).collect();
    (val, train)
}

mod hex_digest {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        let text: String = d.iter().map(|b| format!("{b:02x}")).collect();
        s.serialize_str(&text)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let text = String::deserialize(d)?;
        if text.len() != 64 || !text.is_ascii() {
            return Err(D::Error::custom("digest must be 64 hex characters"));
        }
        let mut out = [0u8; 32];
        for (i, byte) in out.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&text[2 * i..2 * i + 2], 16).map_err(D::Error::custom)?;
        }
        Ok(out)
    }
}
