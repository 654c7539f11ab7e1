//! The INI run configuration shared by every command.

use std::path::{Path, PathBuf};

use crate::attention::FuseMode;
use crate::dataio::{AugmentConfig, SynthConfig};
use crate::error::{Error, Result};
use crate::ini::{parse_value, Ini};
use crate::model::{ModelConfig, Variant};
use crate::train::{LrSchedule, TrainConfig};

const SCHEMA: &[(&str, &[&str])] = &[
    (
        "model",
        &[
            "widths",
            "units_per_stage",
            "decoder_width",
            "reduction",
            "kernel",
            "classes",
            "batch_norm",
            "mlp_bias",
            "fuse_mode",
            "variant",
        ],
    ),
    (
        "train",
        &[
            "lr",
            "momentum",
            "weight_decay",
            "epochs",
            "batch",
            "seed",
            "decay_every",
            "augment",
            "scale_min",
            "scale_max",
            "flip_prob",
        ],
    ),
    ("data", &["root", "train_split", "val_split", "test_split"]),
    (
        "synth",
        &[
            "height",
            "width",
            "images",
            "shape_classes",
            "shapes_min",
            "shapes_max",
            "size_min",
            "size_max",
            "p_dark",
            "dark_min",
            "dark_max",
            "dark_extent_min",
            "dark_extent_max",
            "color_jitter",
            "noise_std",
            "min_visible",
            "max_attempts",
            "train_frac",
            "val_frac",
            "seed",
        ],
    ),
    ("ablation", &["variants", "seeds"]),
];

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentSettings {
    pub enabled: bool,
    pub scale_min: f64,
    pub scale_max: f64,
    pub flip_prob: f64,
}

impl AugmentSettings {
    /// Crop to the training image size.
    pub fn build(&self, crop: (usize, usize), void_label: u8) -> Option<AugmentConfig> {
        self.enabled.then_some(AugmentConfig {
            crop,
            scale_min: self.scale_min,
            scale_max: self.scale_max,
            flip_prob: self.flip_prob,
            void_label,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataSettings {
    pub root: Option<PathBuf>,
    pub train_split: String,
    pub val_split: String,
    pub test_split: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    /// `augment` is left empty here; see [`RunConfig::augment`].
    pub train: TrainConfig,
    pub augment: AugmentSettings,
    pub data: DataSettings,
    pub synth: SynthConfig,
    pub ablation_variants: Vec<Variant>,
    pub ablation_seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::tiny(3),
            train: TrainConfig::default(),
            augment: AugmentSettings { enabled: false, scale_min: 0.75, scale_max: 1.25, flip_prob: 0.5 },
            data: DataSettings {
                root: None,
                train_split: "train".into(),
                val_split: "val".into(),
                test_split: "test".into(),
            },
            synth: SynthConfig::default(),
            ablation_variants: Variant::ALL.to_vec(),
            ablation_seeds: vec![0, 1, 2],
        }
    }
}

fn list<V: std::str::FromStr>(ini: &Ini, section: &str, key: &str) -> Result<Option<Vec<V>>> {
    let Some(s) = ini.section(section) else { return Ok(None) };
    let Some(raw) = s.get(key) else { return Ok(None) };
    raw.split(',')
        .map(|t| {
            t.trim().parse().map_err(|_| {
                Error::Config(format!("line {}: invalid entry `{}` in [{section}] {key}", s.line_of(key), t.trim()))
            })
        })
        .collect::<Result<Vec<V>>>()
        .map(Some)
}

fn flag(ini: &Ini, section: &str, key: &str) -> Result<Option<bool>> {
    let Some(s) = ini.section(section) else { return Ok(None) };
    match s.get(key) {
        None => Ok(None),
        Some("true" | "yes" | "1" | "on") => Ok(Some(true)),
        Some("false" | "no" | "0" | "off") => Ok(Some(false)),
        Some(other) => Err(Error::Config(format!(
            "line {}: expected a boolean for [{section}] {key}, got `{other}`",
            s.line_of(key)
        ))),
    }
}

macro_rules! set {
    ($ini:expr, $sec:literal, $key:literal, $target:expr) => {
        if let Some(v) = parse_value($ini, $sec, $key)? {
            $target = v;
        }
    };
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn from_ini(ini: &Ini) -> Result<Self> {
        ini.check_keys(SCHEMA)?;
        let mut c = RunConfig::default();
        let m = &mut c.model;
        if let Some(w) = list::<usize>(ini, "model", "widths")? {
            m.widths = w.try_into().map_err(|w: Vec<usize>| {
                Error::Config(format!(
                    "line {}: [model] widths needs 4 entries, got {}",
                    ini.section("model").map_or(0, |s| s.line_of("widths")),
                    w.len()
                ))
            })?;
        }
        set!(ini, "model", "units_per_stage", m.units_per_stage);
        set!(ini, "model", "decoder_width", m.decoder_width);
        set!(ini, "model", "reduction", m.reduction);
        set!(ini, "model", "kernel", m.spatial_kernel);
        set!(ini, "model", "classes", m.classes);
        if let Some(v) = flag(ini, "model", "batch_norm")? {
            m.batch_norm = v;
        }
        if let Some(v) = flag(ini, "model", "mlp_bias")? {
            m.mlp_bias = v;
        }
        if let Some(v) = ini.get("model", "fuse_mode") {
            m.fuse_mode = FuseMode::parse(v)?;
        }
        if let Some(v) = ini.get("model", "variant") {
            m.variant = Variant::parse(v)?;
        }

        let t = &mut c.train;
        set!(ini, "train", "lr", t.schedule.base);
        set!(ini, "train", "momentum", t.momentum);
        set!(ini, "train", "weight_decay", t.weight_decay);
        set!(ini, "train", "epochs", t.epochs);
        set!(ini, "train", "batch", t.batch_size);
        set!(ini, "train", "seed", t.seed);
        if let Some(v) = parse_value::<usize>(ini, "train", "decay_every")? {
            t.schedule.decay_every = (v > 0).then_some(v);
        }
        if let Some(v) = flag(ini, "train", "augment")? {
            c.augment.enabled = v;
        }
        set!(ini, "train", "scale_min", c.augment.scale_min);
        set!(ini, "train", "scale_max", c.augment.scale_max);
        set!(ini, "train", "flip_prob", c.augment.flip_prob);

        if let Some(v) = ini.get("data", "root") {
            c.data.root = Some(PathBuf::from(v));
        }
        for (key, target) in [
            ("train_split", &mut c.data.train_split),
            ("val_split", &mut c.data.val_split),
            ("test_split", &mut c.data.test_split),
        ] {
            if let Some(v) = ini.get("data", key) {
                *target = v.to_string();
            }
        }

        let s = &mut c.synth;
        set!(ini, "synth", "height", s.height);
        set!(ini, "synth", "width", s.width);
        set!(ini, "synth", "images", s.images);
        set!(ini, "synth", "shape_classes", s.shape_classes);
        set!(ini, "synth", "shapes_min", s.shapes_min);
        set!(ini, "synth", "shapes_max", s.shapes_max);
        set!(ini, "synth", "size_min", s.size_min);
        set!(ini, "synth", "size_max", s.size_max);
        set!(ini, "synth", "p_dark", s.p_dark);
        set!(ini, "synth", "dark_min", s.dark_min);
        set!(ini, "synth", "dark_max", s.dark_max);
        set!(ini, "synth", "dark_extent_min", s.dark_extent_min);
        set!(ini, "synth", "dark_extent_max", s.dark_extent_max);
        set!(ini, "synth", "color_jitter", s.color_jitter);
        set!(ini, "synth", "noise_std", s.noise_std);
        set!(ini, "synth", "min_visible", s.min_visible);
        set!(ini, "synth", "max_attempts", s.max_attempts);
        set!(ini, "synth", "train_frac", s.train_frac);
        set!(ini, "synth", "val_frac", s.val_frac);
        set!(ini, "synth", "seed", s.seed);

        if let Some(v) = list::<String>(ini, "ablation", "variants")? {
            c.ablation_variants = v.iter().map(|s| Variant::parse(s)).collect::<Result<_>>()?;
        }
        if let Some(v) = list::<u64>(ini, "ablation", "seeds")? {
            c.ablation_seeds = v;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        RunConfig::from_ini(&Ini::read(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.synth.validate()?;
        let t = &self.train;
        if t.batch_size == 0 {
            return Err(Error::Config("[train] batch must be positive".into()));
        }
        if !(t.schedule.base > 0.0 && t.schedule.base.is_finite()) {
            return Err(Error::Config("[train] lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&t.momentum) || t.weight_decay < 0.0 {
            return Err(Error::Config("[train] momentum must lie in [0, 1) and weight_decay be non-negative".into()));
        }
        let a = &self.augment;
        if !(0.0 < a.scale_min && a.scale_min <= a.scale_max) || !(0.0..=1.0).contains(&a.flip_prob) {
            return Err(Error::Config("[train] augmentation ranges are invalid".into()));
        }
        if self.ablation_variants.is_empty() {
            return Err(Error::Config("[ablation] variants is empty".into()));
        }
        Ok(())
    }

    /// Every setting, defaults included.
    pub fn to_ini(&self) -> Ini {
        let mut ini = Ini::default();
        let m = &self.model;
        ini.set("model", "widths", join(&m.widths));
        ini.set("model", "units_per_stage", m.units_per_stage);
        ini.set("model", "decoder_width", m.decoder_width);
        ini.set("model", "reduction", m.reduction);
        ini.set("model", "kernel", m.spatial_kernel);
        ini.set("model", "classes", m.classes);
        ini.set("model", "batch_norm", m.batch_norm);
        ini.set("model", "mlp_bias", m.mlp_bias);
        ini.set("model", "fuse_mode", m.fuse_mode.name());
        ini.set("model", "variant", m.variant.name());
        let t = &self.train;
        ini.set("train", "lr", t.schedule.base);
        ini.set("train", "momentum", t.momentum);
        ini.set("train", "weight_decay", t.weight_decay);
        ini.set("train", "epochs", t.epochs);
        ini.set("train", "batch", t.batch_size);
        ini.set("train", "seed", t.seed);
        ini.set("train", "decay_every", t.schedule.decay_every.unwrap_or(0));
        ini.set("train", "augment", self.augment.enabled);
        ini.set("train", "scale_min", self.augment.scale_min);
        ini.set("train", "scale_max", self.augment.scale_max);
        ini.set("train", "flip_prob", self.augment.flip_prob);
        if let Some(root) = &self.data.root {
            ini.set("data", "root", root.display());
        }
        ini.set("data", "train_split", &self.data.train_split);
        ini.set("data", "val_split", &self.data.val_split);
        ini.set("data", "test_split", &self.data.test_split);
        self.synth.to_ini(&mut ini, "synth");
        let names: Vec<&str> = self.ablation_variants.iter().map(|v| v.name()).collect();
        ini.set("ablation", "variants", names.join(","));
        ini.set("ablation", "seeds", join(&self.ablation_seeds));
        ini
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("resolved_config.ini"), self.to_ini().to_text())?;
        Ok(())
    }

    pub fn data_root(&self) -> Result<&Path> {
        self.data.root.as_deref().ok_or_else(|| Error::Config("[data] root is not set".into()))
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        self.train.schedule
    }
}
