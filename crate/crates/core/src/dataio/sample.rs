use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::dataio::pnm;
use crate::error::{Error, Result};
use crate::ini::Ini;
use crate::labels::LabelMap;
use crate::tensor::{Shape, Tensor};

/// One aligned RGB / depth / label triple.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbdSample {
    pub id: String,
    /// `(1, 3, H, W)` in `[0, 1]`.
    pub rgb: Tensor<f32>,
    /// `(1, 1, H, W)` in `[0, 1]`; missing depth is 0.
    pub depth: Tensor<f32>,
    pub labels: LabelMap,
    /// False when the depth file held no non-zero pixel.
    pub depth_valid: bool,
}

impl RgbdSample {
    pub fn height(&self) -> usize {
        self.labels.height()
    }

    pub fn width(&self) -> usize {
        self.labels.width()
    }
}

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub classes: usize,
    pub void_label: u8,
    /// Split name → ordered sample ids.
    pub splits: BTreeMap<String, Vec<String>>,
    /// Everything in `manifest.ini` besides `[dataset]`, echoed verbatim.
    pub extra: Ini,
}

impl DatasetManifest {
    pub fn new(root: &Path, classes: usize, void_label: u8) -> Self {
        DatasetManifest {
            root: root.to_path_buf(),
            classes,
            void_label,
            splits: BTreeMap::new(),
            extra: Ini::default(),
        }
    }

    pub fn split(&self, name: &str) -> Result<&[String]> {
        self.splits
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Config(format!("dataset has no `{name}` split")))
    }

    pub fn rgb_path(&self, id: &str) -> PathBuf {
        self.root.join("rgb").join(format!("{id}.ppm"))
    }

    pub fn depth_path(&self, id: &str) -> PathBuf {
        self.root.join("depth").join(format!("{id}.pgm"))
    }

    pub fn label_path(&self, id: &str) -> PathBuf {
        self.root.join("label").join(format!("{id}.pgm"))
    }

    /// Reads `manifest.ini` and `splits/*.txt` under `root`.
    pub fn load(root: &Path) -> Result<Self> {
        let ini = Ini::read(&root.join("manifest.ini"))?;
        let ds = ini
            .section("dataset")
            .ok_or_else(|| Error::Config("manifest.ini lacks a [dataset] section".into()))?;
        let classes: usize = ds
            .get("classes")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Config("manifest [dataset] classes missing or invalid".into()))?;
        let void_label: u8 = ds
            .get("void_label")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Config("manifest [dataset] void_label missing or invalid".into()))?;
        let mut extra = ini.clone();
        extra.sections.retain(|s| s.name != "dataset");
        let mut m = DatasetManifest { root: root.to_path_buf(), classes, void_label, splits: BTreeMap::new(), extra };
        for name in SPLITS {
            let path = root.join("splits").join(format!("{name}.txt"));
            if !path.exists() {
                continue;
            }
            let ids = fs::read_to_string(&path)?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect();
            m.splits.insert(name.to_string(), ids);
        }
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeMap::new();
        for (split, ids) in &self.splits {
            for id in ids {
                if let Some(other) = seen.insert(id.as_str(), split.as_str()) {
                    return Err(Error::Config(format!("sample `{id}` is in both `{other}` and `{split}`")));
                }
                for p in [self.rgb_path(id), self.depth_path(id), self.label_path(id)] {
                    if !p.exists() {
                        return Err(Error::Format(format!("sample `{id}`: missing {}", p.display())));
                    }
                }
            }
        }
        Ok(())
    }

    /// Writes `manifest.ini` and the split lists.
    pub fn save(&self) -> Result<()> {
        fs::create_dir_all(self.root.join("splits"))?;
        let mut ini = Ini::default();
        ini.set("dataset", "classes", self.classes);
        ini.set("dataset", "void_label", self.void_label);
        ini.sections.extend(self.extra.sections.iter().cloned());
        fs::write(self.root.join("manifest.ini"), ini.to_text())?;
        for (name, ids) in &self.splits {
            let mut text = ids.join("\n");
            if !text.is_empty() {
                text.push('\n');
            }
            fs::write(self.root.join("splits").join(format!("{name}.txt")), text)?;
        }
        Ok(())
    }
}

/// Writes the three files of one sample in their on-disk formats.
pub fn save_raw(
    manifest: &DatasetManifest,
    id: &str,
    width: usize,
    height: usize,
    rgb: &[u8],
    depth: &[u16],
    labels: &LabelMap,
) -> Result<()> {
    for dir in ["rgb", "depth", "label"] {
        fs::create_dir_all(manifest.root.join(dir))?;
    }
    pnm::write_ppm(&manifest.rgb_path(id), width, height, rgb)?;
    pnm::write_pgm16(&manifest.depth_path(id), width, height, depth)?;
    pnm::write_pgm8(&manifest.label_path(id), width, height, labels.data())
}

/// Scales 16-bit depth to `[0, 1]` then min-max normalizes over the non-zero
/// pixels. Zero stays zero. Returns whether any valid pixel existed.
pub fn normalize_depth(raw: &[u16], maxval: u16) -> (Vec<f32>, bool) {
    let scale = 1.0 / maxval as f64;
    let valid = raw.iter().filter(|&&v| v > 0).map(|&v| v as f64 * scale);
    let (lo, hi) = valid.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo > hi {
        return (vec![0.0; raw.len()], false);
    }
    let span = hi - lo;
    let out = raw
        .iter()
        .map(|&v| {
            if v == 0 || span == 0.0 {
                0.0
            } else {
                ((v as f64 * scale - lo) / span) as f32
            }
        })
        .collect();
    (out, true)
}

pub fn load_sample(manifest: &DatasetManifest, id: &str) -> Result<RgbdSample> {
    let rgb = pnm::read(&manifest.rgb_path(id))?;
    let depth = pnm::read(&manifest.depth_path(id))?;
    let labels = pnm::read(&manifest.label_path(id))?;
    if rgb.channels != 3 || depth.channels != 1 || labels.channels != 1 {
        return Err(Error::Format(format!("sample `{id}`: expected P6 rgb, P5 depth and P5 labels")));
    }
    if labels.maxval > 255 {
        return Err(Error::Format(format!("sample `{id}`: label map must be 8-bit")));
    }
    let dims = |p: &pnm::Pnm| (p.height, p.width);
    if dims(&rgb) != dims(&depth) || dims(&rgb) != dims(&labels) {
        return Err(Error::Format(format!(
            "sample `{id}`: rgb {:?}, depth {:?} and labels {:?} disagree",
            dims(&rgb),
            dims(&depth),
            dims(&labels)
        )));
    }
    let (h, w) = dims(&rgb);
    let plane = h * w;
    let maxval = rgb.maxval as f32;
    let mut rgb_data = vec![0.0f32; 3 * plane];
    for p in 0..plane {
        for c in 0..3 {
            rgb_data[c * plane + p] = rgb.samples[p * 3 + c] as f32 / maxval;
        }
    }
    let (depth_data, depth_valid) = normalize_depth(&depth.samples, depth.maxval);
    let labels = LabelMap::new(h, w, labels.samples.iter().map(|&v| v as u8).collect())?;
    labels.validate(manifest.classes, manifest.void_label).map_err(|e| Error::Format(format!("sample `{id}`: {e}")))?;
    Ok(RgbdSample {
        id: id.to_string(),
        rgb: Tensor::from_vec(Shape::new(1, 3, h, w), rgb_data)?,
        depth: Tensor::from_vec(Shape::new(1, 1, h, w), depth_data)?,
        labels,
        depth_valid,
    })
}

pub fn load_split(manifest: &DatasetManifest, split: &str) -> Result<Vec<RgbdSample>> {
    manifest.split(split)?.iter().map(|id| load_sample(manifest, id)).collect()
}

/// Writes a predicted label map as an 8-bit PGM.
pub fn save_label_map(path: &Path, labels: &LabelMap) -> Result<()> {
    pnm::write_pgm8(path, labels.width(), labels.height(), labels.data())
}

pub fn load_label_map(path: &Path) -> Result<LabelMap> {
    let img = pnm::read(path)?;
    if img.channels != 1 || img.maxval > 255 {
        return Err(Error::Format(format!("{} is not an 8-bit label map", path.display())));
    }
    LabelMap::new(img.height, img.width, img.samples.iter().map(|&v| v as u8).collect())
}

/// Stacks samples into `(n,3,H,W)`, `(n,1,H,W)` and the label list.
pub fn stack(samples: &[&RgbdSample]) -> Result<(Tensor<f32>, Tensor<f32>, Vec<LabelMap>)> {
    let first = samples.first().ok_or_else(|| Error::Contract("cannot stack an empty batch".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut rgb = Vec::with_capacity(samples.len() * 3 * h * w);
    let mut depth = Vec::with_capacity(samples.len() * h * w);
    let mut labels = Vec::with_capacity(samples.len());
    for s in samples {
        if (s.height(), s.width()) != (h, w) {
            return Err(Error::Contract(format!("batch mixes {}x{} and {}x{} samples", h, w, s.height(), s.width())));
        }
        rgb.extend_from_slice(s.rgb.data());
        depth.extend_from_slice(s.depth.data());
        labels.push(s.labels.clone());
    }
    let n = samples.len();
    Ok((Tensor::from_vec(Shape::new(n, 3, h, w), rgb)?, Tensor::from_vec(Shape::new(n, 1, h, w), depth)?, labels))
}
