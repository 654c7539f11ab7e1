use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mmaf_core::dataio::load_label_map;
use tempfile::TempDir;

fn mmaf(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmaf")).args(args).current_dir(cwd).output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = mmaf(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str], cwd: &Path) -> (i32, String) {
    let out = mmaf(args, cwd);
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

/// Micro model on 32×32 images; a couple of seconds per epoch at most.
fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let text = format!(
        "[model]\nwidths = 4,8,16,32\nunits_per_stage = 1\ndecoder_width = 4\nreduction = 2\nkernel = 3\nclasses = 3\n\n\
         [train]\nlr = 0.05\nepochs = 2\nbatch = 4\nseed = 3\n\n\
         [data]\nroot = data\n\n\
         [synth]\nheight = 32\nwidth = 32\nimages = 16\nshape_classes = 2\np_dark = 0.5\nseed = 4\n{extra}"
    );
    let path = dir.join("run.ini");
    fs::write(&path, text).unwrap();
    path
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn synth(dir: &TempDir) -> PathBuf {
    let cfg = write_config(dir.path(), "");
    ok(&["synth", "--config", "run.ini", "--out", "data"], dir.path());
    cfg
}

#[test]
fn synth_is_reproducible_and_refuses_to_overwrite() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    synth(&a);
    synth(&b);
    let ta = tree(&a.path().join("data"));
    assert!(ta.len() > 16 * 3);
    assert_eq!(ta, tree(&b.path().join("data")));
    let (c, err) = code(&["synth", "--config", "run.ini", "--out", "data"], a.path());
    assert_eq!(c, 2, "{err}");
}

#[test]
fn seed_flag_changes_the_dataset() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    synth(&a);
    write_config(b.path(), "");
    ok(&["synth", "--config", "run.ini", "--out", "data", "--seed", "99"], b.path());
    assert_ne!(tree(&a.path().join("data")), tree(&b.path().join("data")));
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("bad.ini"), "[model]\nwidths = 4,8\n").unwrap();
    let (c, err) = code(&["synth", "--config", "bad.ini", "--out", "d"], dir.path());
    assert_eq!(c, 2);
    assert!(err.contains("line 2"), "{err}");
    fs::write(dir.path().join("typo.ini"), "[train]\nlr = 0.1\nepoch = 3\n").unwrap();
    let (c, err) = code(&["synth", "--config", "typo.ini", "--out", "d"], dir.path());
    assert_eq!(c, 2);
    assert!(err.contains("line 3"), "{err}");
    assert_eq!(code(&["synth", "--config", "missing.ini", "--out", "d"], dir.path()).0, 2);
    assert_eq!(code(&["frobnicate"], dir.path()).0, 2);

    // Dataset with three classes, model configured for four.
    let dir = TempDir::new().unwrap();
    synth(&dir);
    let text = fs::read_to_string(dir.path().join("run.ini")).unwrap().replace("classes = 3", "classes = 4");
    fs::write(dir.path().join("run.ini"), text).unwrap();
    assert_eq!(code(&["train", "--config", "run.ini", "--out", "t"], dir.path()).0, 2);
}

#[test]
fn divergence_exits_with_three() {
    let dir = TempDir::new().unwrap();
    synth(&dir);
    let text = fs::read_to_string(dir.path().join("run.ini")).unwrap().replace("lr = 0.05", "lr = 1e12");
    fs::write(dir.path().join("run.ini"), text).unwrap();
    let (c, err) = code(&["train", "--config", "run.ini", "--out", "t"], dir.path());
    assert_eq!(c, 3, "{err}");
}

#[test]
fn training_is_deterministic_and_resumable() {
    let dir = TempDir::new().unwrap();
    synth(&dir);
    let p = dir.path();
    ok(&["train", "--config", "run.ini", "--out", "a"], p);
    ok(&["train", "--config", "run.ini", "--out", "b"], p);
    for f in ["checkpoint.mmaf", "train_log.csv", "resolved_config.ini"] {
        assert_eq!(fs::read(p.join("a").join(f)).unwrap(), fs::read(p.join("b").join(f)).unwrap(), "{f}");
    }
    let log = fs::read_to_string(p.join("a/train_log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch,loss,val_miou,lr");
    assert_eq!(lines.len(), 3);

    let text = fs::read_to_string(p.join("run.ini")).unwrap().replace("epochs = 2", "epochs = 3");
    fs::write(p.join("run.ini"), text).unwrap();
    ok(&["train", "--config", "run.ini", "--out", "a", "--resume", "a/checkpoint.mmaf"], p);
    let resumed = fs::read_to_string(p.join("a/train_log.csv")).unwrap();
    let rl: Vec<&str> = resumed.lines().collect();
    assert_eq!(&rl[..3], &lines[..]);
    assert_eq!(rl.len(), 4);
    assert!(rl[3].starts_with("3,"), "{}", rl[3]);

    let text = fs::read_to_string(p.join("run.ini")).unwrap().replace("decoder_width = 4", "decoder_width = 8");
    fs::write(p.join("run.ini"), text).unwrap();
    assert_eq!(code(&["train", "--config", "run.ini", "--out", "a", "--resume", "a/checkpoint.mmaf"], p).0, 2);
}

#[test]
fn eval_and_report_outputs() {
    let dir = TempDir::new().unwrap();
    synth(&dir);
    let p = dir.path();
    ok(&["train", "--config", "run.ini", "--out", "t"], p);
    ok(&["eval", "--checkpoint", "t/checkpoint.mmaf", "--config", "run.ini", "--out", "e"], p);

    let test_ids: Vec<String> = fs::read_dir(p.join("e/predictions"))
        .unwrap()
        .map(|e| e.unwrap().path().file_stem().unwrap().to_string_lossy().into_owned())
        .collect();
    assert!(!test_ids.is_empty());
    for id in &test_ids {
        let map = load_label_map(&p.join("e/predictions").join(format!("{id}.pgm"))).unwrap();
        assert_eq!((map.height(), map.width()), (32, 32));
        assert!(map.data().iter().all(|&l| l < 3));
    }
    let per_image = fs::read_to_string(p.join("e/per_image.csv")).unwrap();
    assert_eq!(per_image.lines().next(), Some("image_id,G,M,IoU"));
    assert_eq!(per_image.lines().count(), test_ids.len() + 1);
    let metrics = fs::read_to_string(p.join("e/dataset_metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 5);

    ok(&["report", "--metrics", "e", "--out", "r1"], p);
    ok(&["report", "--metrics", "e", "--out", "r2"], p);
    let (r1, r2) = (tree(&p.join("r1")), tree(&p.join("r2")));
    assert_eq!(r1, r2);
    let svg = String::from_utf8(r1[Path::new("cdf_IoU.svg")].clone()).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    assert_monotone_steps(&svg);
    assert!(r1.keys().any(|k| k.to_string_lossy().starts_with("bde_")));
}

/// Parses the step path back: x moves right, y moves up (SVG y decreases).
fn assert_monotone_steps(svg: &str) {
    let start = svg.find("class=\"cdf\" d=\"").expect("cdf path") + "class=\"cdf\" d=\"".len();
    let d = &svg[start..start + svg[start..].find('"').unwrap()];
    let tokens: Vec<&str> = d.split_whitespace().collect();
    let (mut last_x, mut last_y) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut i = 0;
    while i < tokens.len() {
        match tokens[i] {
            "M" => {
                last_x = tokens[i + 1].parse().unwrap();
                last_y = tokens[i + 2].parse().unwrap();
                i += 3;
            }
            "H" => {
                let x: f64 = tokens[i + 1].parse().unwrap();
                assert!(x >= last_x, "{d}");
                last_x = x;
                i += 2;
            }
            "V" => {
                let y: f64 = tokens[i + 1].parse().unwrap();
                assert!(y <= last_y, "{d}");
                last_y = y;
                i += 2;
            }
            t => panic!("unexpected path token {t} in {d}"),
        }
    }
}

#[test]
fn report_without_rows_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    fs::create_dir(dir.path().join("m")).unwrap();
    fs::write(dir.path().join("m/per_image.csv"), "image_id,G,M,IoU\n").unwrap();
    fs::write(dir.path().join("m/bde.csv"), "class_id,image_id,bde\n").unwrap();
    assert_eq!(code(&["report", "--metrics", "m", "--out", "r"], dir.path()).0, 2);
}
