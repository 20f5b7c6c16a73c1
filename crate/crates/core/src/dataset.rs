//! Detector-ready dataset trees: stratified splits, YOLO-style label files,
//! split lists, manifests and per-class count tables.
//!
//! Output layout of one tree:
//!
//! ```text
//! images/      crops (tiled) or copies (original)
//! labels/      one `<stem>.txt` per image: `class cx cy w h`, normalized
//! train.txt  val.txt  test.txt
//! manifest.csv counts.csv [tiles.csv]
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::{BBox, DiseaseClass, ImageRecord};
use crate::error::{Error, Result};
use crate::tiler::{crop_tile, Tile};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|x| x.name() == s)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "split fractions {}/{}/{} must be in [0, 1] and sum to 1",
                self.train, self.val, self.test
            )));
        }
        Ok(())
    }
}

/// The original corpus, or a tiled corpus for one window coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DatasetKind {
    Original,
    Tiled(u32),
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetKind::Original => f.write_str("original"),
            DatasetKind::Tiled(n) => write!(f, "N{n}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub source_id: String,
    pub classes: Vec<DiseaseClass>,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub kind: DatasetKind,
    pub seed: u64,
    /// Sorted by id.
    pub entries: Vec<ManifestEntry>,
}

/// One source image to split.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitItem {
    pub id: String,
    /// Stratification key; `None` for negative images.
    pub stratum: Option<DiseaseClass>,
    pub classes: Vec<DiseaseClass>,
}

impl SplitItem {
    pub fn from_record(rec: &ImageRecord) -> Self {
        Self {
            id: rec.id.clone(),
            stratum: rec.primary_class(),
            classes: rec.classes(),
        }
    }
}

pub const MIN_ITEMS_PER_CLASS: usize = 10;

fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor() as usize
}

/// Stratified, seeded split of source images. Each class stratum needs at
/// least [`MIN_ITEMS_PER_CLASS`] items; negatives form their own stratum
/// without a minimum.
pub fn split_dataset(items: &[SplitItem], fractions: SplitFractions, seed: u64) -> Result<DatasetManifest> {
    fractions.validate()?;
    let mut strata: BTreeMap<Option<DiseaseClass>, Vec<&SplitItem>> = BTreeMap::new();
    let mut ids = BTreeSet::new();
    for item in items {
        if !ids.insert(item.id.as_str()) {
            return Err(Error::DuplicateId(item.id.clone()));
        }
        strata.entry(item.stratum).or_default().push(item);
    }
    for (stratum, members) in &strata {
        if let Some(class) = stratum {
            if members.len() < MIN_ITEMS_PER_CLASS {
                return Err(Error::ClassTooSmall {
                    class: class.name().into(),
                    got: members.len(),
                    need: MIN_ITEMS_PER_CLASS,
                });
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(items.len());
    for members in strata.values_mut() {
        members.sort_by(|a, b| a.id.cmp(&b.id));
        members.shuffle(&mut rng);
        let n = members.len();
        let n_train = round_half_up(n as f64 * fractions.train).min(n);
        let n_val = round_half_up(n as f64 * fractions.val).min(n - n_train);
        for (i, item) in members.iter().enumerate() {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            entries.push(ManifestEntry {
                id: item.id.clone(),
                source_id: item.id.clone(),
                classes: item.classes.clone(),
                split,
            });
        }
    }
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(DatasetManifest {
        kind: DatasetKind::Original,
        seed,
        entries,
    })
}

impl DatasetManifest {
    pub fn split_of(&self, id: &str) -> Option<Split> {
        self.entries
            .binary_search_by(|e| e.id.as_str().cmp(id))
            .ok()
            .map(|i| self.entries[i].split)
    }

    /// Manifest for tiles cut from this manifest's images; every tile
    /// inherits its source image's split.
    pub fn derive_tiles(&self, n: u32, tiles: &[Tile]) -> Result<DatasetManifest> {
        let mut entries = tiles
            .iter()
            .map(|t| {
                let split = self
                    .split_of(&t.image_id)
                    .ok_or_else(|| Error::UnknownImage(t.image_id.clone()))?;
                let mut classes: Vec<_> = t.boxes.iter().map(|b| b.class).collect();
                classes.sort();
                classes.dedup();
                Ok(ManifestEntry {
                    id: t.tile_id(),
                    source_id: t.image_id.clone(),
                    classes,
                    split,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        if entries.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(Error::Invariant("duplicate tile id".into()));
        }
        Ok(DatasetManifest {
            kind: DatasetKind::Tiled(n),
            seed: self.seed,
            entries,
        })
    }

    /// Entries containing each class, per split.
    pub fn counts(&self) -> BTreeMap<DiseaseClass, [usize; 3]> {
        let mut counts = BTreeMap::new();
        for e in &self.entries {
            for &c in &e.classes {
                let row: &mut [usize; 3] = counts.entry(c).or_default();
                row[e.split as usize] += 1;
            }
        }
        counts
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(["id", "source", "classes", "split"])?;
        for e in &self.entries {
            let classes: Vec<&str> = e.classes.iter().map(|c| c.name()).collect();
            wtr.write_record([e.id.as_str(), &e.source_id, &classes.join(";"), e.split.name()])?;
        }
        wtr.into_inner().map_err(|e| Error::io("<manifest>", e.into_error()))
    }

    pub fn from_csv(kind: DatasetKind, seed: u64, data: &[u8]) -> Result<DatasetManifest> {
        let mut rdr = csv::Reader::from_reader(data);
        let mut entries = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let bad = |m: &str| Error::Parse {
                line,
                message: m.to_string(),
            };
            if rec.len() != 4 {
                return Err(bad("expected 4 columns"));
            }
            let classes = rec[2]
                .split(';')
                .filter(|s| !s.is_empty())
                .map(DiseaseClass::from_label)
                .collect::<Result<Vec<_>>>()?;
            entries.push(ManifestEntry {
                id: rec[0].to_string(),
                source_id: rec[1].to_string(),
                classes,
                split: Split::parse(&rec[3]).ok_or_else(|| bad("bad split"))?,
            });
        }
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(DatasetManifest { kind, seed, entries })
    }

    pub fn counts_csv(&self) -> Result<Vec<u8>> {
        let counts = self.counts();
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(["class", "train", "val", "test", "total"])?;
        let mut totals = [0usize; 3];
        for (class, row) in &counts {
            for (t, v) in totals.iter_mut().zip(row) {
                *t += v;
            }
            let mut rec = vec![class.name().to_string()];
            rec.extend(row.iter().map(usize::to_string));
            rec.push(row.iter().sum::<usize>().to_string());
            wtr.write_record(rec)?;
        }
        let mut rec = vec!["Total".to_string()];
        rec.extend(totals.iter().map(usize::to_string));
        rec.push(totals.iter().sum::<usize>().to_string());
        wtr.write_record(rec)?;
        wtr.into_inner().map_err(|e| Error::io("<counts>", e.into_error()))
    }
}

/// Ids of tiled entries whose split differs from their source image's split.
pub fn leaked_entries(source: &DatasetManifest, derived: &DatasetManifest) -> Vec<String> {
    derived
        .entries
        .iter()
        .filter(|e| source.split_of(&e.source_id) != Some(e.split))
        .map(|e| e.id.clone())
        .collect()
}

/// YOLO-style label text for one frame of `frame_w x frame_h` pixels:
/// `classIndex cx cy w h`, six fractional digits, one line per box.
pub fn label_lines<'a>(
    boxes: impl IntoIterator<Item = (DiseaseClass, &'a BBox)>,
    frame_w: f64,
    frame_h: f64,
) -> Result<String> {
    let mut out = String::new();
    for (class, b) in boxes {
        let cx = (b.xmin + b.xmax) / 2.0 / frame_w;
        let cy = (b.ymin + b.ymax) / 2.0 / frame_h;
        let bw = b.width() / frame_w;
        let bh = b.height() / frame_h;
        let edges = [b.xmin / frame_w, b.xmax / frame_w, b.ymin / frame_h, b.ymax / frame_h];
        if edges
            .iter()
            .chain([cx, cy, bw, bh].iter())
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::Invariant(format!(
                "box {b:?} leaves its {frame_w}x{frame_h} frame"
            )));
        }
        writeln!(out, "{} {cx:.6} {cy:.6} {bw:.6} {bh:.6}", class.index()).expect("string write");
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct EmitOptions {
    /// Directory that record paths are relative to.
    pub image_root: PathBuf,
    /// Copy or crop rasters; when false only labels and lists are written.
    pub write_images: bool,
}

fn write_file(path: &Path, data: &[u8]) -> Result<()> {
    fs::write(path, data).map_err(|e| Error::io(path, e))
}

fn create_tree(out: &Path) -> Result<()> {
    for sub in ["images", "labels"] {
        let dir = out.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    Ok(())
}

fn write_lists(out: &Path, manifest: &DatasetManifest, image_names: &HashMap<String, String>) -> Result<()> {
    for split in Split::ALL {
        let mut text = String::new();
        for e in manifest.entries.iter().filter(|e| e.split == split) {
            let name = image_names
                .get(&e.id)
                .ok_or_else(|| Error::Invariant(format!("no image name for {}", e.id)))?;
            writeln!(text, "images/{name}").expect("string write");
        }
        write_file(&out.join(format!("{}.txt", split.name())), text.as_bytes())?;
    }
    write_file(&out.join("manifest.csv"), &manifest.to_csv()?)?;
    write_file(&out.join("counts.csv"), &manifest.counts_csv()?)
}

fn extension_of(path: &str) -> &str {
    Path::new(path).extension().and_then(|e| e.to_str()).unwrap_or("png")
}

fn check_dims(path: &Path, rec: &ImageRecord, actual: (u32, u32)) -> Result<()> {
    if actual != (rec.width, rec.height) {
        return Err(Error::ImageSizeMismatch {
            path: path.to_path_buf(),
            expected_w: rec.width,
            expected_h: rec.height,
            actual_w: actual.0,
            actual_h: actual.1,
        });
    }
    Ok(())
}

/// Write the untiled corpus. Images are copied byte for byte.
pub fn emit_original(
    manifest: &DatasetManifest,
    records: &[ImageRecord],
    out: &Path,
    opts: &EmitOptions,
) -> Result<()> {
    create_tree(out)?;
    let by_id: HashMap<&str, &ImageRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let names = manifest
        .entries
        .par_iter()
        .map(|e| {
            let rec = by_id
                .get(e.id.as_str())
                .ok_or_else(|| Error::UnknownImage(e.id.clone()))?;
            let name = format!("{}.{}", rec.id, extension_of(&rec.path));
            let boxes = rec.regions.iter().map(|r| (r.class, &r.bbox));
            let labels = label_lines(boxes, rec.width as f64, rec.height as f64)?;
            write_file(&out.join("labels").join(format!("{}.txt", rec.id)), labels.as_bytes())?;
            if opts.write_images {
                let src = opts.image_root.join(&rec.path);
                let dims = image::image_dimensions(&src).map_err(|source| Error::Image {
                    path: src.clone(),
                    source,
                })?;
                check_dims(&src, rec, dims)?;
                let dst = out.join("images").join(&name);
                fs::copy(&src, &dst).map_err(|e| Error::io(&src, e))?;
            }
            Ok((e.id.clone(), name))
        })
        .collect::<Result<HashMap<_, _>>>()?;
    write_lists(out, manifest, &names)
}

/// Write a tiled corpus. Crops are cut from the source raster without
/// resampling and stored as PNG.
pub fn emit_tiled(
    manifest: &DatasetManifest,
    tiles: &[Tile],
    records: &[ImageRecord],
    out: &Path,
    opts: &EmitOptions,
) -> Result<()> {
    create_tree(out)?;
    let by_id: HashMap<&str, &ImageRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut by_source: BTreeMap<&str, Vec<&Tile>> = BTreeMap::new();
    for t in tiles {
        by_source.entry(t.image_id.as_str()).or_default().push(t);
    }
    let groups: Vec<(&str, Vec<&Tile>)> = by_source.into_iter().collect();
    let names = groups
        .par_iter()
        .map(|(source, tiles)| {
            let rec = by_id
                .get(source)
                .ok_or_else(|| Error::UnknownImage(source.to_string()))?;
            let raster = if opts.write_images {
                let src = opts.image_root.join(&rec.path);
                let img = image::open(&src).map_err(|source| Error::Image {
                    path: src.clone(),
                    source,
                })?;
                check_dims(&src, rec, (img.width(), img.height()))?;
                Some(img)
            } else {
                None
            };
            let mut names = Vec::with_capacity(tiles.len());
            for tile in tiles {
                let side = tile.side as f64;
                let labels = label_lines(tile.boxes.iter().map(|b| (b.class, &b.bbox)), side, side)?;
                let id = tile.tile_id();
                write_file(&out.join("labels").join(format!("{id}.txt")), labels.as_bytes())?;
                let name = tile.file_name("png");
                if let Some(raster) = &raster {
                    let path = out.join("images").join(&name);
                    crop_tile(raster, tile)
                        .save_with_format(&path, image::ImageFormat::Png)
                        .map_err(|source| Error::Image { path, source })?;
                }
                names.push((id, name));
            }
            Ok(names)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect::<HashMap<_, _>>();

    let mut tiles_csv = csv::Writer::from_writer(Vec::new());
    tiles_csv.write_record(["tileId", "imageId", "n", "x0", "y0", "side"])?;
    let mut sorted: Vec<&Tile> = tiles.iter().collect();
    sorted.sort_by_cached_key(|t| t.tile_id());
    for t in sorted {
        tiles_csv.write_record([
            t.tile_id(),
            t.image_id.clone(),
            t.n.to_string(),
            t.x0.to_string(),
            t.y0.to_string(),
            t.side.to_string(),
        ])?;
    }
    let data = tiles_csv
        .into_inner()
        .map_err(|e| Error::io("<tiles>", e.into_error()))?;
    write_file(&out.join("tiles.csv"), &data)?;
    write_lists(out, manifest, &names)
}

/// Read back the tile geometry written next to a tiled tree. Boxes are
/// not stored there, so the returned tiles carry none.
pub fn read_tiles_csv(data: &[u8]) -> Result<Vec<Tile>> {
    let mut rdr = csv::Reader::from_reader(data);
    let mut tiles = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |k: usize| -> Result<u32> {
            rec.get(k).and_then(|s| s.parse().ok()).ok_or(Error::Parse {
                line: i + 2,
                message: format!("bad column {k}"),
            })
        };
        tiles.push(Tile {
            image_id: rec.get(1).unwrap_or_default().to_string(),
            n: num(2)?,
            x0: num(3)?,
            y0: num(4)?,
            side: num(5)?,
            boxes: Vec::new(),
        });
    }
    Ok(tiles)
}

/// Per-class entry counts across several datasets (original first, then
/// tiled by ascending N), with a totals row.
#[derive(Clone, Debug, PartialEq)]
pub struct CountTable {
    pub columns: Vec<DatasetKind>,
    pub rows: Vec<(DiseaseClass, Vec<usize>)>,
    pub totals: Vec<usize>,
}

pub fn class_count_table(manifests: &[&DatasetManifest]) -> CountTable {
    let mut sorted: Vec<&DatasetManifest> = manifests.to_vec();
    sorted.sort_by_key(|m| m.kind);
    let columns: Vec<DatasetKind> = sorted.iter().map(|m| m.kind).collect();
    let per: Vec<BTreeMap<DiseaseClass, [usize; 3]>> = sorted.iter().map(|m| m.counts()).collect();
    let present: BTreeSet<DiseaseClass> = per.iter().flat_map(|c| c.keys().copied()).collect();
    let rows: Vec<(DiseaseClass, Vec<usize>)> = present
        .into_iter()
        .map(|class| {
            let cells = per
                .iter()
                .map(|c| c.get(&class).map_or(0, |r| r.iter().sum()))
                .collect();
            (class, cells)
        })
        .collect();
    let totals = (0..columns.len())
        .map(|j| rows.iter().map(|(_, cells)| cells[j]).sum())
        .collect();
    CountTable { columns, rows, totals }
}

impl CountTable {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["class".to_string()];
        header.extend(self.columns.iter().map(ToString::to_string));
        wtr.write_record(header)?;
        for (class, cells) in &self.rows {
            let mut rec = vec![class.name().to_string()];
            rec.extend(cells.iter().map(usize::to_string));
            wtr.write_record(rec)?;
        }
        let mut rec = vec!["Total".to_string()];
        rec.extend(self.totals.iter().map(usize::to_string));
        wtr.write_record(rec)?;
        wtr.into_inner().map_err(|e| Error::io("<count table>", e.into_error()))
    }
}
