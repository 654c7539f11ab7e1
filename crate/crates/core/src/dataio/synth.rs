//! Synthetic RGB-D scenes: flat shapes on a background, each shape at its
//! own constant depth, with optional dark patches that hide colour but leave
//! depth untouched.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataio::derive_seed;
use crate::dataio::sample::{save_raw, DatasetManifest};
use crate::error::{Error, Result};
use crate::ini::Ini;
use crate::labels::{LabelMap, VOID};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
    Triangle,
}

impl ShapeKind {
    /// Class id `k` (1-based) is drawn as the `k`-th kind.
    pub fn for_class(class: u8) -> ShapeKind {
        match class {
            1 => ShapeKind::Rectangle,
            2 => ShapeKind::Ellipse,
            _ => ShapeKind::Triangle,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Rectangle => "rectangle",
            ShapeKind::Ellipse => "ellipse",
            ShapeKind::Triangle => "triangle",
        }
    }
}

/// Base albedo per class: background, rectangle, ellipse, triangle.
const PALETTE: [[f64; 3]; 4] = [[0.50, 0.50, 0.48], [0.85, 0.25, 0.20], [0.20, 0.75, 0.30], [0.25, 0.30, 0.85]];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub images: usize,
    /// Shape classes besides background, 1..=3.
    pub shape_classes: usize,
    pub shapes_min: usize,
    pub shapes_max: usize,
    /// Shape side length as a fraction of the shorter image side.
    pub size_min: f64,
    pub size_max: f64,
    pub p_dark: f64,
    pub dark_min: f64,
    pub dark_max: f64,
    /// Dark patch side as a fraction of the image side.
    pub dark_extent_min: f64,
    pub dark_extent_max: f64,
    /// Per-shape uniform albedo perturbation, per channel.
    pub color_jitter: f64,
    /// Gaussian sensor noise added after darkening.
    pub noise_std: f64,
    /// A shape must keep this many visible pixels after occlusion.
    pub min_visible: usize,
    pub max_attempts: usize,
    pub train_frac: f64,
    pub val_frac: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            height: 64,
            width: 64,
            images: 200,
            shape_classes: 2,
            shapes_min: 1,
            shapes_max: 4,
            size_min: 0.2,
            size_max: 0.5,
            p_dark: 0.0,
            dark_min: 0.02,
            dark_max: 0.15,
            dark_extent_min: 0.4,
            dark_extent_max: 0.8,
            color_jitter: 0.08,
            noise_std: 0.03,
            min_visible: 24,
            max_attempts: 50,
            train_frac: 0.8,
            val_frac: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn classes(&self) -> usize {
        self.shape_classes + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.height == 0 || self.width == 0 || self.images == 0 {
            return bad("image size and count must be positive".into());
        }
        if !(1..=3).contains(&self.shape_classes) {
            return bad(format!("shape_classes must be 1..=3, got {}", self.shape_classes));
        }
        if self.shapes_min > self.shapes_max {
            return bad("shapes_min exceeds shapes_max".into());
        }
        if !(0.0 < self.size_min && self.size_min <= self.size_max && self.size_max <= 1.0) {
            return bad("shape size fractions must satisfy 0 < min <= max <= 1".into());
        }
        if !(0.0..=1.0).contains(&self.p_dark) {
            return bad(format!("p_dark must lie in [0, 1], got {}", self.p_dark));
        }
        if !(0.0 <= self.dark_min && self.dark_min <= self.dark_max && self.dark_max <= 1.0) {
            return bad("darkness factors must satisfy 0 <= min <= max <= 1".into());
        }
        if !(0.0 < self.dark_extent_min && self.dark_extent_min <= self.dark_extent_max && self.dark_extent_max <= 1.0) {
            return bad("dark extents must satisfy 0 < min <= max <= 1".into());
        }
        if self.noise_std < 0.0 || self.color_jitter < 0.0 {
            return bad("noise and jitter must be non-negative".into());
        }
        if self.train_frac < 0.0 || self.val_frac < 0.0 || self.train_frac + self.val_frac > 1.0 {
            return bad("split fractions must be non-negative and sum to at most 1".into());
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be positive".into());
        }
        Ok(())
    }

    /// Echo of every field, written into the manifest.
    pub fn to_ini(&self, ini: &mut Ini, section: &str) {
        let fields: [(&str, String); 20] = [
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            ("images", self.images.to_string()),
            ("shape_classes", self.shape_classes.to_string()),
            ("shapes_min", self.shapes_min.to_string()),
            ("shapes_max", self.shapes_max.to_string()),
            ("size_min", self.size_min.to_string()),
            ("size_max", self.size_max.to_string()),
            ("p_dark", self.p_dark.to_string()),
            ("dark_min", self.dark_min.to_string()),
            ("dark_max", self.dark_max.to_string()),
            ("dark_extent_min", self.dark_extent_min.to_string()),
            ("dark_extent_max", self.dark_extent_max.to_string()),
            ("color_jitter", self.color_jitter.to_string()),
            ("noise_std", self.noise_std.to_string()),
            ("min_visible", self.min_visible.to_string()),
            ("max_attempts", self.max_attempts.to_string()),
            ("train_frac", self.train_frac.to_string()),
            ("val_frac", self.val_frac.to_string()),
            ("seed", self.seed.to_string()),
        ];
        for (k, v) in fields {
            ini.set(section, k, v);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Placed {
    class: u8,
    kind: ShapeKind,
    /// Raw 16-bit depth; smaller is nearer.
    depth: u16,
    bbox: (usize, usize, usize, usize),
    /// Apex x for triangles.
    apex: f64,
}

impl Placed {
    fn covers(&self, y: usize, x: usize) -> bool {
        let (y0, x0, y1, x1) = self.bbox;
        if y < y0 || y >= y1 || x < x0 || x >= x1 {
            return false;
        }
        let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
        match self.kind {
            ShapeKind::Rectangle => true,
            ShapeKind::Ellipse => {
                let cy = (y0 + y1) as f64 / 2.0;
                let cx = (x0 + x1) as f64 / 2.0;
                let ry = (y1 - y0) as f64 / 2.0;
                let rx = (x1 - x0) as f64 / 2.0;
                ((py - cy) / ry).powi(2) + ((px - cx) / rx).powi(2) <= 1.0
            }
            ShapeKind::Triangle => {
                // Apex on the top edge, base on the bottom edge.
                let (top, bottom) = (y0 as f64, y1 as f64);
                let t = (py - top) / (bottom - top);
                let left = self.apex + (x0 as f64 - self.apex) * t;
                let right = self.apex + (x1 as f64 - self.apex) * t;
                px >= left && px <= right
            }
        }
    }
}

/// Per-pixel index of the nearest covering shape, or `None` for background.
fn ownership(shapes: &[Placed], h: usize, w: usize) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..shapes.len()).collect();
    // Far to near; later shapes overwrite earlier ones. Ties resolve by index.
    order.sort_by(|&a, &b| shapes[b].depth.cmp(&shapes[a].depth).then(a.cmp(&b)));
    let mut owner = vec![None; h * w];
    for &i in &order {
        let (y0, x0, y1, x1) = shapes[i].bbox;
        for y in y0..y1 {
            for x in x0..x1 {
                if shapes[i].covers(y, x) {
                    owner[y * w + x] = Some(i);
                }
            }
        }
    }
    owner
}

fn area(shape: &Placed) -> usize {
    let (y0, x0, y1, x1) = shape.bbox;
    (y0..y1).flat_map(|y| (x0..x1).map(move |x| (y, x))).filter(|&(y, x)| shape.covers(y, x)).count()
}

fn visible_counts(owner: &[Option<usize>], n: usize) -> Vec<usize> {
    let mut counts = vec![0; n];
    for i in owner.iter().flatten() {
        counts[*i] += 1;
    }
    counts
}

#[derive(Clone, Debug, PartialEq)]
pub struct DarkPatch {
    pub bbox: (usize, usize, usize, usize),
    pub factor: f64,
}

/// One generated scene before serialization.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub rgb: Vec<u8>,
    pub depth: Vec<u16>,
    pub labels: LabelMap,
    pub dark: Option<DarkPatch>,
    /// One line per requested shape, in request order.
    pub log: Vec<PlacementRecord>,
    pub background_pixels: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlacementRecord {
    pub class: u8,
    pub kind: ShapeKind,
    /// `None` when placement failed within the attempt budget.
    pub placed: Option<(u16, (usize, usize, usize, usize))>,
    pub visible: usize,
    pub attempts: usize,
}

fn background_depth(y: usize, h: usize) -> u16 {
    // A receding floor: far at the top, nearer at the bottom.
    (62000.0 - 8000.0 * y as f64 / h as f64).round() as u16
}

pub fn generate_scene(cfg: &SynthConfig, index: usize) -> Result<Scene> {
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, index as u64));
    let n_shapes = rng.random_range(cfg.shapes_min..=cfg.shapes_max);
    let short = h.min(w) as f64;
    let mut shapes: Vec<Placed> = Vec::new();
    let mut log = Vec::new();
    for _ in 0..n_shapes {
        let class = rng.random_range(1..=cfg.shape_classes) as u8;
        let kind = ShapeKind::for_class(class);
        let mut placed = None;
        let mut attempts = 0;
        while attempts < cfg.max_attempts {
            attempts += 1;
            let sh = ((rng.random_range(cfg.size_min..=cfg.size_max) * short).round() as usize).clamp(2, h);
            let sw = ((rng.random_range(cfg.size_min..=cfg.size_max) * short).round() as usize).clamp(2, w);
            let y0 = rng.random_range(0..=h - sh);
            let x0 = rng.random_range(0..=w - sw);
            let depth = rng.random_range(10000..=45000u16);
            let apex = rng.random_range(x0 as f64..=(x0 + sw) as f64);
            let cand = Placed { class, kind, depth, bbox: (y0, x0, y0 + sh, x0 + sw), apex };
            let own_area = area(&cand);
            let mut trial = shapes.clone();
            trial.push(cand);
            let counts = visible_counts(&ownership(&trial, h, w), trial.len());
            let ok = own_area >= cfg.min_visible
                && trial.iter().zip(&counts).all(|(s, &c)| c >= cfg.min_visible && 10 * c >= 3 * area(s));
            if ok {
                placed = Some(cand);
                break;
            }
        }
        match placed {
            Some(p) => {
                shapes.push(p);
                log.push(PlacementRecord { class, kind, placed: Some((p.depth, p.bbox)), visible: 0, attempts });
            }
            None => log.push(PlacementRecord { class, kind, placed: None, visible: 0, attempts }),
        }
    }

    let owner = ownership(&shapes, h, w);
    let counts = visible_counts(&owner, shapes.len());
    let mut k = 0;
    for rec in log.iter_mut().filter(|r| r.placed.is_some()) {
        rec.visible = counts[k];
        k += 1;
    }

    let jitter = |rng: &mut ChaCha8Rng, base: [f64; 3]| {
        base.map(|b| (b + rng.random_range(-cfg.color_jitter..=cfg.color_jitter)).clamp(0.0, 1.0))
    };
    let bg_color = jitter(&mut rng, PALETTE[0]);
    let shape_colors: Vec<[f64; 3]> = shapes.iter().map(|s| jitter(&mut rng, PALETTE[s.class as usize])).collect();

    let dark = if rng.random::<f64>() < cfg.p_dark {
        let dh = ((rng.random_range(cfg.dark_extent_min..=cfg.dark_extent_max) * h as f64).round() as usize).clamp(1, h);
        let dw = ((rng.random_range(cfg.dark_extent_min..=cfg.dark_extent_max) * w as f64).round() as usize).clamp(1, w);
        let y0 = rng.random_range(0..=h - dh);
        let x0 = rng.random_range(0..=w - dw);
        let factor = rng.random_range(cfg.dark_min..=cfg.dark_max);
        Some(DarkPatch { bbox: (y0, x0, y0 + dh, x0 + dw), factor })
    } else {
        None
    };

    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(format!("noise_std: {e}")))?;
    let mut rgb = Vec::with_capacity(3 * h * w);
    let mut depth = Vec::with_capacity(h * w);
    let mut labels = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let o = owner[y * w + x];
            let (color, d, label) = match o {
                Some(i) => (shape_colors[i], shapes[i].depth, shapes[i].class),
                None => (bg_color, background_depth(y, h), 0),
            };
            let shade = match &dark {
                Some(p) if y >= p.bbox.0 && y < p.bbox.2 && x >= p.bbox.1 && x < p.bbox.3 => p.factor,
                _ => 1.0,
            };
            for c in color {
                let v = c * shade + noise.sample(&mut rng);
                rgb.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
            depth.push(d);
            labels.push(label);
        }
    }
    let background_pixels = owner.iter().filter(|o| o.is_none()).count();
    Ok(Scene { rgb, depth, labels: LabelMap::new(h, w, labels)?, dark, log, background_pixels })
}

pub fn sample_id(index: usize) -> String {
    format!("img{index:05}")
}

/// Writes the whole dataset under `root` (which must be empty or absent).
pub fn synth_generate(cfg: &SynthConfig, root: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    if root.exists() && fs::read_dir(root)?.next().is_some() {
        return Err(Error::Config(format!("output directory {} is not empty", root.display())));
    }
    fs::create_dir_all(root)?;
    let mut manifest = DatasetManifest::new(root, cfg.classes(), VOID);
    let mut extra = Ini::default();
    cfg.to_ini(&mut extra, "generator");
    let mut placement = String::from("image_id,shape,class,kind,status,attempts,depth,y0,x0,y1,x1,visible\n");
    let mut darkness = Vec::new();
    let mut notes = Vec::new();
    let mut ids = Vec::with_capacity(cfg.images);
    for i in 0..cfg.images {
        let id = sample_id(i);
        let scene = generate_scene(cfg, i)?;
        save_raw(&manifest, &id, cfg.width, cfg.height, &scene.rgb, &scene.depth, &scene.labels)?;
        let _ = writeln!(placement, "{id},bg,0,background,placed,0,,,,,,{}", scene.background_pixels);
        for (k, rec) in scene.log.iter().enumerate() {
            match rec.placed {
                Some((d, (y0, x0, y1, x1))) => {
                    let _ = writeln!(
                        placement,
                        "{id},{k},{},{},placed,{},{d},{y0},{x0},{y1},{x1},{}",
                        rec.class,
                        rec.kind.name(),
                        rec.attempts,
                        rec.visible
                    );
                }
                None => {
                    let _ = writeln!(
                        placement,
                        "{id},{k},{},{},skipped,{},,,,,,0",
                        rec.class,
                        rec.kind.name(),
                        rec.attempts
                    );
                    notes.push(format!("{id} shape {k} ({}) skipped after {} attempts", rec.kind.name(), rec.attempts));
                }
            }
        }
        if let Some(p) = &scene.dark {
            let (y0, x0, y1, x1) = p.bbox;
            darkness.push((id.clone(), format!("{y0} {x0} {y1} {x1} {:.6}", p.factor)));
        }
        ids.push(id);
    }
    for (id, v) in darkness {
        extra.set("darkness", &id, v);
    }
    for (i, n) in notes.iter().enumerate() {
        extra.set("notes", &format!("skipped.{i}"), n);
    }
    fs::write(root.join("placement.csv"), placement)?;

    let n_train = (cfg.images as f64 * cfg.train_frac).round() as usize;
    let n_val = ((cfg.images as f64 * cfg.val_frac).round() as usize).min(cfg.images - n_train);
    manifest.splits.insert("train".into(), ids[..n_train].to_vec());
    manifest.splits.insert("val".into(), ids[n_train..n_train + n_val].to_vec());
    manifest.splits.insert("test".into(), ids[n_train + n_val..].to_vec());
    manifest.extra = extra;
    manifest.save()?;
    Ok(manifest)
}

/// Ids carrying a darkness annotation in the manifest.
pub fn darkened_ids(manifest: &DatasetManifest) -> Vec<String> {
    manifest
        .extra
        .section("darkness")
        .map(|s| s.entries.iter().map(|e| e.0.clone()).collect())
        .unwrap_or_default()
}
