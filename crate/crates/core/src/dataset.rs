//! Dataset ingestion: scan an image/mask tree into a manifest, carve a
//! deterministic seeded train/val/test split, and load samples.
//!
//! Layout: `<root>/images/<id>.<ext>` and `<root>/masks/<id>.<ext>` with
//! lossless raster formats (PNG, BMP, TIFF). The manifest persists as UTF-8
//! CSV with a sidecar comment line recording the seed and fractions, and
//! regenerating it with the same inputs is byte-identical.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::imagebuf::{MaskU8, RgbU8};

const MANIFEST_MAGIC: &str = "# polypseg-manifest v1";
const EXTENSIONS: [&str; 4] = ["png", "bmp", "tif", "tiff"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset root has no usable image/mask pairs: {0}")]
    EmptyDataset(PathBuf),
    #[error("not a directory: {0}")]
    NotADirectory(PathBuf),
    #[error("image {id} has no matching mask")]
    MissingMask { id: String },
    #[error("mask {id} has no matching image")]
    OrphanMask { id: String },
    #[error("duplicate id {id} (multiple files share the same stem)")]
    DuplicateId { id: String },
    #[error("unreadable file {path}: {reason}")]
    Unreadable { path: PathBuf, reason: String },
    #[error("unknown sample id: {0}")]
    UnknownId(String),
    #[error("dimension mismatch for {id}: image {image_w}x{image_h} vs mask {mask_w}x{mask_h}")]
    DimensionMismatch { id: String, image_w: u32, image_h: u32, mask_w: u32, mask_h: u32 },
    #[error("{name} must lie strictly between 0 and 1, got {value}")]
    FractionOutOfRange { name: &'static str, value: f64 },
    #[error("dataset too small: {entries} entries cannot fill train/val/test with test_fraction {test_fraction} and val_fraction {val_fraction}")]
    DatasetTooSmall { entries: usize, test_fraction: f64, val_fraction: f64 },
    #[error("manifest parse error at {path}: {reason}")]
    ManifestParse { path: PathBuf, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One RGB frame paired with its binary ground-truth mask.
#[derive(Debug, Clone)]
pub struct ImageSample {
    pub id: String,
    pub image: RgbU8,
    pub mask: MaskU8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split name: {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub split: Option<Split>,
}

/// Ordered dataset manifest; entries are always sorted by id so the split
/// depends only on (ids, seed), never on filesystem enumeration order.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub seed: Option<u64>,
    pub test_fraction: Option<f64>,
    pub val_fraction_of_trainval: Option<f64>,
    /// (width, height) of the first image, as a sanity record.
    pub source_resolution: Option<(u32, u32)>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_split(&self) -> bool {
        self.entries.iter().all(|e| e.split.is_some()) && !self.entries.is_empty()
    }

    pub fn find(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn ids_in_split(&self, split: Split) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.split == Some(split))
            .map(|e| e.id.as_str())
            .collect()
    }
}

fn list_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>, DatasetError> {
    if !dir.is_dir() {
        return Err(DatasetError::NotADirectory(dir.to_path_buf()));
    }
    let mut out = BTreeMap::new();
    let rd = std::fs::read_dir(dir).map_err(|e| DatasetError::Io { path: dir.to_path_buf(), source: e })?;
    for entry in rd {
        let entry = entry.map_err(|e| DatasetError::Io { path: dir.to_path_buf(), source: e })?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        if !ext.as_deref().is_some_and(|e| EXTENSIONS.contains(&e)) {
            continue;
        }
        let stem = match path.file_stem().and_then(|s| s.to_str()) {
            Some(s) => s.to_string(),
            None => continue,
        };
        if out.insert(stem.clone(), path).is_some() {
            return Err(DatasetError::DuplicateId { id: stem });
        }
    }
    Ok(out)
}

/// Scan `<root>/images` and `<root>/masks`, pairing files by stem. Entries
/// come back sorted lexicographically by id, unsplit.
pub fn scan_dataset(root: &Path) -> Result<DatasetManifest, DatasetError> {
    let images = list_stems(&root.join("images"))?;
    let masks = list_stems(&root.join("masks"))?;
    if images.is_empty() && masks.is_empty() {
        return Err(DatasetError::EmptyDataset(root.to_path_buf()));
    }
    for id in images.keys() {
        if !masks.contains_key(id) {
            return Err(DatasetError::MissingMask { id: id.clone() });
        }
    }
    for id in masks.keys() {
        if !images.contains_key(id) {
            return Err(DatasetError::OrphanMask { id: id.clone() });
        }
    }
    let mut entries = Vec::with_capacity(images.len());
    for (id, image_path) in &images {
        entries.push(ManifestEntry {
            id: id.clone(),
            image_path: image_path.clone(),
            mask_path: masks[id].clone(),
            split: None,
        });
    }
    // BTreeMap iteration is already id-sorted.
    let source_resolution = match entries.first() {
        Some(e) => Some(image::image_dimensions(&e.image_path).map_err(|err| {
            DatasetError::Unreadable { path: e.image_path.clone(), reason: err.to_string() }
        })?),
        None => None,
    };
    Ok(DatasetManifest {
        entries,
        seed: None,
        test_fraction: None,
        val_fraction_of_trainval: None,
        source_resolution,
    })
}

fn check_fraction(name: &'static str, value: f64) -> Result<(), DatasetError> {
    if !(value > 0.0 && value < 1.0) {
        return Err(DatasetError::FractionOutOfRange { name, value });
    }
    Ok(())
}

/// Assign every entry to train/val/test. The shuffle is driven purely by the
/// seed over the id-sorted entries, so two runs with the same inputs agree
/// byte for byte. Test gets `round(n * test_fraction)` samples; validation
/// is carved out of the remaining pool.
pub fn split_manifest(
    manifest: &DatasetManifest,
    test_fraction: f64,
    val_fraction_of_trainval: f64,
    seed: u64,
) -> Result<DatasetManifest, DatasetError> {
    check_fraction("test_fraction", test_fraction)?;
    check_fraction("val_fraction_of_trainval", val_fraction_of_trainval)?;
    if manifest.is_empty() {
        return Err(DatasetError::EmptyDataset(PathBuf::from("<manifest>")));
    }

    let mut entries = manifest.entries.clone();
    entries.sort_by(|a, b| a.id.cmp(&b.id));

    let n = entries.len();
    let n_test = (n as f64 * test_fraction).round() as usize;
    let trainval = n.saturating_sub(n_test);
    let n_val = (trainval as f64 * val_fraction_of_trainval).round() as usize;
    let n_train = trainval.saturating_sub(n_val);
    if n_test == 0 || n_val == 0 || n_train == 0 {
        return Err(DatasetError::DatasetTooSmall {
            entries: n,
            test_fraction,
            val_fraction: val_fraction_of_trainval,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    for (rank, &idx) in order.iter().enumerate() {
        entries[idx].split = Some(if rank < n_test {
            Split::Test
        } else if rank < n_test + n_val {
            Split::Val
        } else {
            Split::Train
        });
    }

    Ok(DatasetManifest {
        entries,
        seed: Some(seed),
        test_fraction: Some(test_fraction),
        val_fraction_of_trainval: Some(val_fraction_of_trainval),
        source_resolution: manifest.source_resolution,
    })
}

/// Load one (image, mask) pair. The mask is binarized (> 0 maps to 1) and
/// the image is decoded into RGB channel order.
pub fn load_sample(manifest: &DatasetManifest, id: &str) -> Result<ImageSample, DatasetError> {
    let entry = manifest.find(id).ok_or_else(|| DatasetError::UnknownId(id.to_string()))?;
    let img = image::open(&entry.image_path)
        .map_err(|e| DatasetError::Unreadable { path: entry.image_path.clone(), reason: e.to_string() })?
        .into_rgb8();
    let mask_img = image::open(&entry.mask_path)
        .map_err(|e| DatasetError::Unreadable { path: entry.mask_path.clone(), reason: e.to_string() })?
        .into_luma8();
    if img.dimensions() != mask_img.dimensions() {
        return Err(DatasetError::DimensionMismatch {
            id: id.to_string(),
            image_w: img.width(),
            image_h: img.height(),
            mask_w: mask_img.width(),
            mask_h: mask_img.height(),
        });
    }
    let (w, h) = (img.width() as usize, img.height() as usize);
    let image = RgbU8::from_raw(w, h, img.into_raw());
    let mask = MaskU8::from_raw_binarized(w, h, mask_img.as_raw());
    Ok(ImageSample { id: id.to_string(), image, mask })
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Serialize to the manifest CSV text (sidecar comment line + header + rows).
pub fn manifest_to_string(m: &DatasetManifest) -> String {
    let mut sidecar = MANIFEST_MAGIC.to_string();
    if let Some(seed) = m.seed {
        sidecar.push_str(&format!(" seed={seed}"));
    }
    if let Some(f) = m.test_fraction {
        sidecar.push_str(&format!(" test_fraction={}", fmt_f64(f)));
    }
    if let Some(f) = m.val_fraction_of_trainval {
        sidecar.push_str(&format!(" val_fraction_of_trainval={}", fmt_f64(f)));
    }
    if let Some((w, h)) = m.source_resolution {
        sidecar.push_str(&format!(" source={w}x{h}"));
    }

    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["id", "image_path", "mask_path", "split"]).expect("csv header");
    for e in &m.entries {
        wtr.write_record([
            e.id.as_str(),
            &e.image_path.to_string_lossy(),
            &e.mask_path.to_string_lossy(),
            e.split.map(|s| s.as_str()).unwrap_or(""),
        ])
        .expect("csv row");
    }
    let body = String::from_utf8(wtr.into_inner().expect("csv flush")).expect("utf8");
    format!("{sidecar}\n{body}")
}

pub fn save_manifest(m: &DatasetManifest, path: &Path) -> Result<(), DatasetError> {
    std::fs::write(path, manifest_to_string(m))
        .map_err(|e| DatasetError::Io { path: path.to_path_buf(), source: e })
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DatasetError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DatasetError::Io { path: path.to_path_buf(), source: e })?;
    parse_manifest(&text).map_err(|reason| DatasetError::ManifestParse { path: path.to_path_buf(), reason })
}

pub fn parse_manifest(text: &str) -> Result<DatasetManifest, String> {
    let mut seed = None;
    let mut test_fraction = None;
    let mut val_fraction = None;
    let mut source_resolution = None;

    let first = text.lines().next().unwrap_or("");
    if !first.starts_with(MANIFEST_MAGIC) {
        return Err(format!("missing sidecar line `{MANIFEST_MAGIC}`"));
    }
    for tok in first.trim_start_matches('#').split_whitespace() {
        if let Some((k, v)) = tok.split_once('=') {
            match k {
                "seed" => seed = Some(v.parse::<u64>().map_err(|e| format!("bad seed: {e}"))?),
                "test_fraction" => {
                    test_fraction = Some(v.parse::<f64>().map_err(|e| format!("bad test_fraction: {e}"))?)
                }
                "val_fraction_of_trainval" => {
                    val_fraction = Some(v.parse::<f64>().map_err(|e| format!("bad val_fraction: {e}"))?)
                }
                "source" => {
                    let (w, h) = v.split_once('x').ok_or("bad source resolution")?;
                    source_resolution = Some((
                        w.parse::<u32>().map_err(|e| format!("bad source width: {e}"))?,
                        h.parse::<u32>().map_err(|e| format!("bad source height: {e}"))?,
                    ));
                }
                _ => {}
            }
        }
    }

    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut entries = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        if rec.len() != 4 {
            return Err(format!("expected 4 columns, got {}", rec.len()));
        }
        let split = match &rec[3] {
            "" => None,
            s => Some(s.parse::<Split>()?),
        };
        entries.push(ManifestEntry {
            id: rec[0].to_string(),
            image_path: PathBuf::from(&rec[1]),
            mask_path: PathBuf::from(&rec[2]),
            split,
        });
    }
    Ok(DatasetManifest { entries, seed, test_fraction, val_fraction_of_trainval: val_fraction, source_resolution })
}
