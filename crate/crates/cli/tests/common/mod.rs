#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::{Rgb, RgbImage};
use leaftile::annotations::to_annotation_json;
use leaftile::{DiseaseClass, ImageRecord, LabeledRegion, Point, Polygon};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const CORPUS_SEED: u64 = 2024;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn rotated_rect(cx: f64, cy: f64, len: f64, width: f64, deg: f64) -> Polygon {
    let (s, c) = deg.to_radians().sin_cos();
    let corners = [(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)];
    Polygon::new(
        corners
            .iter()
            .map(|&(u, v)| {
                let (x, y) = (u * len, v * width);
                Point::new(cx + x * c - y * s, cy + x * s + y * c)
            })
            .collect(),
    )
    .unwrap()
}

/// A leaf-shaped polygon placed fully inside a `w x h` image.
fn random_leaf(rng: &mut impl Rng, w: u32, h: u32) -> Polygon {
    let width: f64 = rng.random_range(8.0..24.0);
    let len = (width * rng.random_range(2.5..4.5)).min(w.min(h) as f64 * 0.8);
    let deg = rng.random_range(0.0..180.0);
    let reach = len / 2.0 + width;
    let cx = rng.random_range(reach..(w as f64 - reach).max(reach + 1.0));
    let cy = rng.random_range(reach..(h as f64 - reach).max(reach + 1.0));
    let p = rotated_rect(cx, cy, len, width, deg);
    p.map_points(|q| Point::new(q.x.clamp(0.0, w as f64), q.y.clamp(0.0, h as f64)))
        .unwrap()
}

/// `per_class` images of each class: annotations under `annotations/`,
/// PNG rasters under `images/`. Ids look like `blast_003`.
pub fn synthetic_corpus(root: &Path, per_class: usize, seed: u64) -> Vec<ImageRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fs::create_dir_all(root.join("annotations")).unwrap();
    fs::create_dir_all(root.join("images")).unwrap();
    let mut records = Vec::new();
    for class in DiseaseClass::ALL {
        for i in 0..per_class {
            let id = format!("{}_{i:03}", class.name().to_lowercase());
            let (w, h) = (rng.random_range(160..320u32), rng.random_range(160..320u32));
            let mut regions = vec![LabeledRegion::from_polygon(class, random_leaf(&mut rng, w, h))];
            if rng.random_bool(0.4) {
                regions.push(LabeledRegion::from_polygon(class, random_leaf(&mut rng, w, h)));
            }
            let shade = rng.random_range(0..200u8);
            let img = RgbImage::from_fn(w, h, |x, y| Rgb([shade, (x % 251) as u8, (y % 241) as u8]));
            img.save(root.join("images").join(format!("{id}.png"))).unwrap();

            let rec = ImageRecord {
                id: id.clone(),
                path: format!("../images/{id}.png"),
                width: w,
                height: h,
                regions,
            };
            fs::write(
                root.join("annotations").join(format!("{id}.json")),
                to_annotation_json(&rec).unwrap(),
            )
            .unwrap();
            records.push(rec);
        }
    }
    records
}

pub fn leaftile(args: &[&str]) -> Output {
    leaftile_env(args, &[])
}

pub fn leaftile_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_leaftile"));
    cmd.args(args).env_remove("LEAFTILE_CONFIG").env_remove("LEAFTILE_LOG");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("run leaftile")
}

/// sha256 of every file under `root`, keyed by relative path.
pub fn tree_digest(root: &Path) -> BTreeMap<String, String> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<String, String>) {
        let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                let digest = Sha256::digest(fs::read(&p).unwrap());
                let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
                out.insert(rel, hex);
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Source id of a tile file name such as `images/blast_001__N3_x0_y0.png`.
pub fn tile_source(entry: &str) -> &str {
    let name = entry.rsplit('/').next().unwrap();
    &name[..name.find("__N").unwrap()]
}

/// Split lists of one tree: id (file stem) to split name.
pub fn split_lists(tree: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for split in ["train", "val", "test"] {
        let text = fs::read_to_string(tree.join(format!("{split}.txt"))).unwrap();
        for line in text.lines() {
            let name = line.rsplit('/').next().unwrap();
            let stem = &name[..name.rfind('.').unwrap()];
            assert!(
                out.insert(stem.to_string(), split.to_string()).is_none(),
                "{stem} listed twice"
            );
        }
    }
    out
}
