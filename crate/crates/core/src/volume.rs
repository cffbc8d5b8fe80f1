//! Slice-stack volumes, labels/views, and CSV dataset manifests.
//!
//! A [`Volume`] is an ordered stack of `T` equally shaped 2D slices with
//! metadata; intensities are finite and already inside `[0, 1]`. Manifests are
//! UTF-8 CSV with header `path,label,view,split`; labels are spelled
//! `negative|benign|malignant` and splits `train|test`. Paths are stored as
//! written and resolved relative to the manifest location.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Mammographic acquisition view carried as metadata.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum View {
    Cc,
    Mlo,
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            View::Cc => "CC",
            View::Mlo => "MLO",
        })
    }
}

impl FromStr for View {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cc" => Ok(View::Cc),
            "mlo" => Ok(View::Mlo),
            other => Err(Error::Manifest(format!("unknown view `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Label {
    Negative,
    Benign,
    Malignant,
}

impl Label {
    /// Binary training treats only malignant volumes as positive; benign
    /// volumes are representable but excluded from the binary task.
    pub fn is_positive(self) -> bool {
        matches!(self, Label::Malignant)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Negative => "negative",
            Label::Benign => "benign",
            Label::Malignant => "malignant",
        })
    }
}

impl FromStr for Label {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "negative" => Ok(Label::Negative),
            "benign" => Ok(Label::Benign),
            "malignant" => Ok(Label::Malignant),
            other => Err(Error::Manifest(format!("unknown label `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Manifest(format!("unknown split `{other}`"))),
        }
    }
}

/// Ordered stack of `T` equally shaped slices plus metadata.
#[derive(Clone, Debug)]
pub struct Volume {
    slices: Tensor,
    view: View,
    label: Label,
    id: String,
}

impl Volume {
    /// Wrap an already-normalized `T x H x W` tensor. Intensities must lie in
    /// `[0, 1]`; use [`Volume::from_raw`] for unnormalized data.
    pub fn new(id: impl Into<String>, slices: Tensor, view: View, label: Label) -> Result<Self> {
        if slices.rank() != 3 {
            return Err(Error::ShapeMismatch {
                expected: "rank-3 tensor (T x H x W)".into(),
                actual: format!("rank {}", slices.rank()),
            });
        }
        if !slices.data().iter().all(|&v| (0.0..=1.0).contains(&v)) {
            return Err(Error::NonFinite(
                "volume intensities outside [0, 1]".into(),
            ));
        }
        Ok(Self {
            slices,
            view,
            label,
            id: id.into(),
        })
    }

    /// Min-max normalize raw intensities onto `[0, 1]`, then wrap.
    pub fn from_raw(id: impl Into<String>, raw: Tensor, view: View, label: Label) -> Result<Self> {
        let normalized = tensor::normalize(&raw)?;
        Volume::new(id, normalized, view, label)
    }

    /// Build a volume from a directory of 8- or 16-bit grayscale image files,
    /// one per slice, in lexicographic filename order. The stack is min-max
    /// normalized as a whole.
    pub fn from_image_dir(
        dir: &Path,
        id: impl Into<String>,
        view: View,
        label: Label,
    ) -> Result<Self> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::Manifest(format!("no slice files in {}", dir.display())));
        }
        let mut data = Vec::new();
        let mut dims: Option<(usize, usize)> = None;
        for p in &paths {
            let img = image::open(p)?.into_luma16();
            let (w, h) = (img.width() as usize, img.height() as usize);
            match dims {
                None => dims = Some((h, w)),
                Some(d) if d != (h, w) => {
                    return Err(Error::ShapeMismatch {
                        expected: format!("{}x{}", d.0, d.1),
                        actual: format!("{h}x{w} in {}", p.display()),
                    })
                }
                _ => {}
            }
            data.extend(img.pixels().map(|p| f32::from(p.0[0])));
        }
        let (h, w) = dims.unwrap();
        let raw = Tensor::new(vec![paths.len(), h, w], data)?;
        Volume::from_raw(id, raw, view, label)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn view(&self) -> View {
        self.view
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn slices(&self) -> &Tensor {
        &self.slices
    }

    /// Number of slices `T`.
    pub fn depth(&self) -> usize {
        self.slices.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.slices.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.slices.shape()[2]
    }

    /// Raw pixels of slice `t`, row-major.
    pub fn slice(&self, t: usize) -> &[f32] {
        let n = self.height() * self.width();
        &self.slices.data()[t * n..(t + 1) * n]
    }

    /// Slice `t` as an `H x W` tensor.
    pub fn slice_image(&self, t: usize) -> Tensor {
        Tensor::new(
            vec![self.height(), self.width()],
            self.slice(t).to_vec(),
        )
        .expect("slice data is valid")
    }
}

/// One dataset row: where the volume lives plus its label, view, and split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub label: Label,
    pub view: View,
    pub split: Split,
}

/// Dataset manifest; rows are stored in file order and paths are unique.
#[derive(Clone, Debug)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
    base: PathBuf,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, base: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.path.as_str()) {
                return Err(Error::Manifest(format!("duplicate path `{}`", e.path)));
            }
        }
        Ok(Self {
            entries,
            base: base.into(),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let expected = ["path", "label", "view", "split"];
        let got: Vec<&str> = headers.iter().collect();
        if got != expected {
            return Err(Error::Manifest(format!(
                "expected header {expected:?}, got {got:?}"
            )));
        }
        let mut entries = Vec::new();
        for record in reader.records() {
            let r = record?;
            if r.len() != 4 {
                return Err(Error::Manifest(format!("expected 4 fields, got {}", r.len())));
            }
            entries.push(ManifestEntry {
                path: r[0].to_string(),
                label: r[1].parse()?,
                view: r[2].parse()?,
                split: r[3].parse()?,
            });
        }
        let base = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        DatasetManifest::new(entries, base)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(["path", "label", "view", "split"])?;
        for e in &self.entries {
            writer.write_record([
                e.path.as_str(),
                &e.label.to_string(),
                &e.view.to_string(),
                &e.split.to_string(),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn split_entries(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    /// Absolute (or base-relative) location of an entry's volume file.
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// Load an entry's volume; the volume id is the file stem.
    pub fn load_volume(&self, entry: &ManifestEntry) -> Result<Volume> {
        let path = self.resolve(entry);
        let slices = tensor::read_tensor(&path)?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| entry.path.clone());
        Volume::new(id, slices, entry.view, entry.label)
    }
}
