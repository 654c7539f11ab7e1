//! Standalone SVG plots of empirical CDFs, rebuilt from evaluation CSVs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::{cdf_csv, MetricCdf};

const WIDTH: f64 = 560.0;
const HEIGHT: f64 = 360.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Step plot of `cdf` over `x_range`, with its summary statistics printed
/// beside the axes. Output depends only on the arguments.
pub fn svg_cdf(cdf: &MetricCdf, title: &str, x_label: &str, x_range: (f64, f64)) -> String {
    let (mut lo, mut hi) = x_range;
    if !(hi > lo) {
        lo -= 0.5;
        hi = lo + 1.0;
    }
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x.clamp(lo, hi) - lo) / (hi - lo) * pw;
    let py = |f: f64| TOP + (1.0 - f) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M {LEFT:.2} {TOP:.2} V {:.2} H {:.2}" fill="none" stroke="black"/>"#,
        TOP + ph,
        LEFT + pw
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let x = lo + t * (hi - lo);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{x:.2}</text>"#,
            px(x),
            TOP + ph + 16.0
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{t:.2}</text>"#, LEFT - 6.0, py(t) + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">F(x)</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );

    let mut d = format!("M {:.2} {:.2}", px(lo), py(0.0));
    for (x, f) in cdf.steps() {
        let _ = write!(d, " H {:.2} V {:.2}", px(x), py(f));
    }
    let _ = write!(d, " H {:.2}", px(hi));
    let _ = writeln!(s, r#"<path class="cdf" d="{d}" fill="none" stroke="steelblue" stroke-width="2"/>"#);

    let st = cdf.summary();
    let stats = [
        ("n", format!("{}", cdf.len())),
        ("min", format!("{:.4}", st.min)),
        ("max", format!("{:.4}", st.max)),
        ("median", format!("{:.4}", st.median)),
        ("mean", format!("{:.4}", st.mean)),
        ("std", format!("{:.4}", st.std)),
    ];
    for (i, (k, v)) in stats.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text class="stat" x="{:.2}" y="{:.2}">{k} = {v}</text>"#,
            LEFT + pw + 20.0,
            TOP + 16.0 + 18.0 * i as f64
        );
    }
    s.push_str("</svg>\n");
    s
}

fn read_rows(path: &Path, header: &str) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(header) {
        return Err(Error::Format(format!("{}: expected header `{header}`", path.display())));
    }
    Ok(lines.filter(|l| !l.is_empty()).map(|l| l.split(',').map(str::to_string).collect()).collect())
}

fn number(path: &Path, line: usize, field: &str) -> Result<f64> {
    field
        .parse()
        .map_err(|_| Error::Format(format!("{}: line {}: `{field}` is not a number", path.display(), line + 2)))
}

/// Columns G, M, IoU of `per_image.csv`.
pub fn read_per_image(path: &Path) -> Result<[Vec<f64>; 3]> {
    let mut out = [Vec::new(), Vec::new(), Vec::new()];
    for (i, row) in read_rows(path, "image_id,G,M,IoU")?.iter().enumerate() {
        if row.len() != 4 {
            return Err(Error::Format(format!("{}: line {}: expected 4 fields", path.display(), i + 2)));
        }
        for (col, field) in out.iter_mut().zip(&row[1..]) {
            col.push(number(path, i, field)?);
        }
    }
    Ok(out)
}

/// Values of `bde.csv` grouped by class.
pub fn read_bde(path: &Path) -> Result<BTreeMap<u8, Vec<f64>>> {
    let mut out: BTreeMap<u8, Vec<f64>> = BTreeMap::new();
    for (i, row) in read_rows(path, "class_id,image_id,bde")?.iter().enumerate() {
        if row.len() != 3 {
            return Err(Error::Format(format!("{}: line {}: expected 3 fields", path.display(), i + 2)));
        }
        let class = row[0]
            .parse()
            .map_err(|_| Error::Format(format!("{}: line {}: bad class id `{}`", path.display(), i + 2, row[0])))?;
        out.entry(class).or_default().push(number(path, i, &row[2])?);
    }
    Ok(out)
}

/// Reads `per_image.csv` and `bde.csv` from `metrics_dir` and writes
/// `cdf_{G,M,IoU}.{csv,svg}` and `bde_<class>.svg` with `cdf_bde_class<class>.csv`
/// into `out_dir`. Returns the files written.
pub fn write_report(metrics_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let per_image = read_per_image(&metrics_dir.join("per_image.csv"))?;
    if per_image[0].is_empty() {
        return Err(Error::Config(format!("{}: no per-image scores", metrics_dir.join("per_image.csv").display())));
    }
    let bde_path = metrics_dir.join("bde.csv");
    let bde = if bde_path.exists() { read_bde(&bde_path)? } else { BTreeMap::new() };
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut emit = |name: String, body: String| -> Result<()> {
        let p = out_dir.join(name);
        fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };
    for (metric, values) in ["G", "M", "IoU"].iter().zip(&per_image) {
        let cdf = MetricCdf::new(values)?;
        emit(format!("cdf_{metric}.csv"), cdf_csv(&cdf))?;
        emit(format!("cdf_{metric}.svg"), svg_cdf(&cdf, &format!("Per-image {metric}"), metric, (0.0, 1.0)))?;
    }
    for (class, values) in &bde {
        let cdf = MetricCdf::new(values)?;
        let hi = cdf.summary().max.max(1.0);
        emit(format!("cdf_bde_class{class}.csv"), cdf_csv(&cdf))?;
        emit(
            format!("bde_{class}.svg"),
            svg_cdf(&cdf, &format!("Boundary displacement, class {class}"), "BDE (pixels)", (0.0, hi)),
        )?;
    }
    Ok(written)
}
