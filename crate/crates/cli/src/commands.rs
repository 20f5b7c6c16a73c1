//! Pipeline stages. Each `run_*` function loads what earlier stages wrote;
//! the stage functions themselves take and return data so that `pipeline`
//! can chain them without touching disk in between.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Component, Path, PathBuf};

use leaftile::annotations::parse_annotation;
use leaftile::dataset::{
    class_count_table, emit_original, emit_tiled, leaked_entries, read_tiles_csv, split_dataset, DatasetManifest,
    EmitOptions, Split, SplitItem,
};
use leaftile::eval::{
    format_detections, ground_truth_from_records, mean_ap, parse_detections, render_ap_table, EvalReport,
};
use leaftile::leafwidth::{image_leaf_width_with, pixel_width, read_width_table, write_width_table, WidthRow};
use leaftile::partition::{
    compute_stats, group_summary, partition_by_quantile, write_group_summary, write_partition, WidthSample,
};
use leaftile::tiler::{merge_tile_detections, tile_image};
use leaftile::width::{effective_width, load_predictions, mape, GroundTruthWidth, MapeReport, WidthPrediction};
use leaftile::{DiseaseClass, Error, ImageRecord, LeafWidthRecord, Tile};
use log::{info, warn};
use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::{at, CliError, NamedPath};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const WIDTHS_FILE: &str = "widths.csv";

type Result<T> = std::result::Result<T, CliError>;

pub struct Ctx {
    pub cfg: PipelineConfig,
    pub dry_run: bool,
}

impl Ctx {
    fn write(&self, path: &Path, data: &[u8]) -> Result<()> {
        if self.dry_run {
            println!("plan: write {} ({} bytes)", path.display(), data.len());
            return Ok(());
        }
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        }
        fs::write(path, data).map_err(|e| io_error(path, e))
    }

    fn emit_options(&self) -> EmitOptions {
        EmitOptions {
            image_root: self.cfg.corpus_root.clone(),
            write_images: self.cfg.write_images,
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| io_error(path, e))
}

/// Lexical cleanup: drop `.`, fold `..` into its parent.
fn normalize(p: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in p.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                if matches!(out.components().next_back(), Some(Component::Normal(_))) {
                    out.pop();
                } else {
                    out.push("..");
                }
            }
            other => out.push(other),
        }
    }
    out
}

/// Image path as written next to an annotation, re-expressed relative to
/// the corpus root.
fn corpus_relative(root: &Path, annotation: &Path, image_path: &str) -> String {
    let dir = annotation.parent().unwrap_or(Path::new(""));
    let joined = normalize(&dir.join(image_path.replace('\\', "/")));
    match joined.strip_prefix(normalize(root)) {
        Ok(rel) => rel.to_string_lossy().into_owned(),
        Err(_) => {
            warn!("ingest: {} lies outside the corpus root", joined.display());
            joined.to_string_lossy().into_owned()
        }
    }
}

pub fn ingest(ctx: &Ctx) -> Result<Vec<ImageRecord>> {
    let root = &ctx.cfg.corpus_root;
    let pattern = root.join(&ctx.cfg.annotation_glob);
    let pattern = pattern
        .to_str()
        .ok_or_else(|| CliError::Usage(format!("non-UTF-8 glob {}", pattern.display())))?;
    let mut paths = glob::glob(pattern)
        .map_err(|e| CliError::Usage(format!("glob {pattern:?}: {e}")))?
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| CliError::Data(e.to_string()))?;
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Data(format!("no annotation files match {pattern}")));
    }

    let mut records = paths
        .par_iter()
        .map(|p| {
            let mut rec = parse_annotation(&read(p)?).map_err(at(p.display()))?;
            rec.path = corpus_relative(root, p, &rec.path);
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = records.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(at("ingest")(Error::DuplicateId(w[0].id.clone())));
    }

    let mut out = Vec::new();
    for rec in &records {
        serde_json::to_writer(&mut out, rec).map_err(|e| at("ingest")(e.into()))?;
        out.push(b'\n');
    }
    ctx.write(&ctx.cfg.out(RECORDS_FILE), &out)?;
    let regions: usize = records.iter().map(|r| r.regions.len()).sum();
    info!("ingest: {} images, {regions} regions", records.len());
    Ok(records)
}

pub fn load_records(path: &Path) -> Result<Vec<ImageRecord>> {
    let data = read(path)?;
    let text = String::from_utf8_lossy(&data);
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

fn ingested(ctx: &Ctx) -> Result<Vec<ImageRecord>> {
    load_records(&ctx.cfg.out(RECORDS_FILE))
}

/// Measure ground-truth widths. Images with no measurable polygon are
/// skipped. The returned rows are parsed back from the written table so
/// that every consumer sees the same rounded values.
pub fn widths(ctx: &Ctx, records: &[ImageRecord]) -> Result<Vec<WidthRow>> {
    let min_px = ctx.cfg.min_component_pixels;
    let results: Vec<_> = records
        .par_iter()
        .map(|r| (r, image_leaf_width_with(r, min_px)))
        .collect();
    let mut measured: Vec<LeafWidthRecord> = Vec::with_capacity(records.len());
    for (rec, res) in results {
        match res {
            Ok(w) => measured.push(w),
            Err(Error::NoMeasurableLeaf(_)) => warn!("widths: {} has no measurable leaf, skipped", rec.id),
            Err(e) => return Err(at(&rec.id)(e)),
        }
    }
    let mut table = Vec::new();
    write_width_table(&measured, &mut table).map_err(at("widths"))?;
    ctx.write(&ctx.cfg.out(WIDTHS_FILE), &table)?;
    info!("widths: {} of {} images measured", measured.len(), records.len());
    read_width_table(&table[..]).map_err(at("widths"))
}

fn load_widths(ctx: &Ctx) -> Result<Vec<WidthRow>> {
    let path = ctx.cfg.out(WIDTHS_FILE);
    read_width_table(&read(&path)?[..]).map_err(at(path.display()))
}

fn load_sidecar(ctx: &Ctx) -> Result<Option<Vec<WidthPrediction>>> {
    let Some(path) = &ctx.cfg.predictions else {
        return Ok(None);
    };
    let preds = load_predictions(&read(path)?).map_err(at(path.display()))?;
    info!("predictions: {} rows from {}", preds.len(), path.display());
    Ok(Some(preds))
}

pub fn eval_mape(
    ctx: &Ctx,
    records: &[ImageRecord],
    rows: &[WidthRow],
    preds: &[WidthPrediction],
) -> Result<MapeReport> {
    let classes: HashMap<&str, Option<DiseaseClass>> =
        records.iter().map(|r| (r.id.as_str(), r.primary_class())).collect();
    let gts: Vec<GroundTruthWidth> = rows
        .iter()
        .map(|r| GroundTruthWidth {
            image_id: r.image_id.clone(),
            class: classes.get(r.image_id.as_str()).copied().flatten(),
            lw: r.lw,
        })
        .collect();
    let report = mape(&gts, preds).map_err(at("eval-mape"))?;
    let mut json = serde_json::to_vec_pretty(&report).map_err(|e| at("eval-mape")(e.into()))?;
    json.push(b'\n');
    ctx.write(&ctx.cfg.out("mape.json"), &json)?;
    for (class, m) in &report.per_class {
        println!("mape {:<8} n={:<5} {:.4}", class.name(), m.n, m.mape);
    }
    println!("mape {:<8} n={:<5} {:.4}", "All", report.n, report.overall);
    Ok(report)
}

/// Width used downstream for every image that has one under the policy.
pub fn width_samples(
    ctx: &Ctx,
    records: &[ImageRecord],
    rows: &[WidthRow],
    preds: Option<&[WidthPrediction]>,
) -> Result<Vec<WidthSample>> {
    let gt: HashMap<&str, LeafWidthRecord> = rows
        .iter()
        .map(|r| {
            let rec = LeafWidthRecord {
                image_id: r.image_id.clone(),
                per_leaf_widths: Vec::new(),
                lfw: r.lfw,
                lw: r.lw,
            };
            (r.image_id.as_str(), rec)
        })
        .collect();
    let pred: HashMap<&str, &WidthPrediction> = preds
        .unwrap_or_default()
        .iter()
        .map(|p| (p.image_id.as_str(), p))
        .collect();
    let mut samples = Vec::with_capacity(records.len());
    let mut missing = 0;
    for rec in records {
        let id = rec.id.as_str();
        match effective_width(rec, gt.get(id), pred.get(id).copied(), ctx.cfg.width_policy) {
            Ok(lw) => samples.push(WidthSample {
                image_id: rec.id.clone(),
                class: rec.primary_class(),
                lw,
            }),
            Err(Error::WidthUnavailable(_)) => missing += 1,
            Err(e) => return Err(at(id)(e)),
        }
    }
    if missing > 0 {
        warn!(
            "widths: {missing} images have no width under {:?}",
            ctx.cfg.width_policy
        );
    }
    Ok(samples)
}

pub fn stats(ctx: &Ctx, samples: &[WidthSample]) -> Result<()> {
    let table = compute_stats(samples).map_err(at("stats"))?;
    let mut csv = Vec::new();
    table.write_csv(&mut csv).map_err(at("stats"))?;
    ctx.write(&ctx.cfg.out("stats.csv"), &csv)?;
    let s = &table.overall;
    info!(
        "stats: n={} min={:.4} q1={:.4} median={:.4} q3={:.4} max={:.4} mean={:.4} sd={:.4}",
        s.n, s.min, s.q1, s.q2, s.q3, s.max, s.mean, s.sd
    );
    Ok(())
}

pub fn partition(ctx: &Ctx, samples: &[WidthSample]) -> Result<()> {
    let groups =
        partition_by_quantile(samples, ctx.cfg.narrow_fraction, ctx.cfg.wide_fraction).map_err(at("partition"))?;
    let mut rows = Vec::new();
    write_partition(samples, &groups, &mut rows).map_err(at("partition"))?;
    ctx.write(&ctx.cfg.out("partition.csv"), &rows)?;
    let summary = group_summary(samples, &groups);
    let mut table = Vec::new();
    write_group_summary(&summary, &mut table).map_err(at("partition"))?;
    ctx.write(&ctx.cfg.out("partition_summary.csv"), &table)?;
    let mut counts = [0usize; 3];
    for g in groups.values() {
        counts[*g as usize] += 1;
    }
    info!(
        "partition: narrow={} normal={} wide={}",
        counts[0], counts[1], counts[2]
    );
    Ok(())
}

pub fn split(ctx: &Ctx, records: &[ImageRecord]) -> Result<DatasetManifest> {
    let items: Vec<SplitItem> = records.iter().map(SplitItem::from_record).collect();
    split_dataset(&items, ctx.cfg.split, ctx.cfg.seed).map_err(at("split"))
}

fn log_counts(stage: &str, manifest: &DatasetManifest) {
    let mut per_split = [0usize; 3];
    for e in &manifest.entries {
        per_split[e.split as usize] += 1;
    }
    info!(
        "{stage}: {} entries, train={} val={} test={}",
        manifest.entries.len(),
        per_split[0],
        per_split[1],
        per_split[2]
    );
}

pub fn emit(ctx: &Ctx, records: &[ImageRecord], manifest: &DatasetManifest) -> Result<()> {
    let dir = ctx.cfg.out("original");
    if ctx.dry_run {
        println!("plan: emit {} ({} images)", dir.display(), manifest.entries.len());
    } else {
        emit_original(manifest, records, &dir, &ctx.emit_options()).map_err(at(dir.display()))?;
    }
    log_counts("emit original", manifest);
    Ok(())
}

/// Cut every image with a width into tiles for one N.
pub fn tiles_for(ctx: &Ctx, n: u32, records: &[ImageRecord], samples: &[WidthSample]) -> Result<Vec<Tile>> {
    let spec = ctx.cfg.tile_spec(n);
    let lw: HashMap<&str, f64> = samples.iter().map(|s| (s.image_id.as_str(), s.lw)).collect();
    let per_image = records
        .par_iter()
        .filter_map(|rec| lw.get(rec.id.as_str()).map(|&lw| (rec, lw)))
        .map(|(rec, lw)| tile_image(rec, pixel_width(lw, rec.width, rec.height), &spec).map_err(at(&rec.id)))
        .collect::<Result<Vec<_>>>()?;
    Ok(per_image.into_iter().flatten().collect())
}

pub fn tile(
    ctx: &Ctx,
    records: &[ImageRecord],
    samples: &[WidthSample],
    original: &DatasetManifest,
) -> Result<Vec<DatasetManifest>> {
    let mut manifests = Vec::new();
    for &n in &ctx.cfg.n_values {
        let tiles = tiles_for(ctx, n, records, samples)?;
        let manifest = original.derive_tiles(n, &tiles).map_err(at(format!("tile N{n}")))?;
        let leaked = leaked_entries(original, &manifest);
        if !leaked.is_empty() {
            return Err(at(format!("tile N{n}"))(Error::Invariant(format!(
                "{} tiles cross splits, first {}",
                leaked.len(),
                leaked[0]
            ))));
        }
        let dir = ctx.cfg.out(&format!("tiled_N{n}"));
        if ctx.dry_run {
            println!("plan: emit {} ({} tiles)", dir.display(), tiles.len());
        } else {
            emit_tiled(&manifest, &tiles, records, &dir, &ctx.emit_options()).map_err(at(dir.display()))?;
        }
        log_counts(&format!("tile N{n}"), &manifest);
        manifests.push(manifest);
    }
    let mut all: Vec<&DatasetManifest> = vec![original];
    all.extend(&manifests);
    let table = class_count_table(&all).to_csv().map_err(at("tile"))?;
    ctx.write(&ctx.cfg.out("class_counts.csv"), &table)?;
    Ok(manifests)
}

pub fn eval_map(
    ctx: &Ctx,
    detections: &[NamedPath],
    gt: Option<&Path>,
    only: Option<Split>,
    iou: Option<f64>,
) -> Result<()> {
    let iou = iou.unwrap_or(ctx.cfg.iou_threshold);
    if !(iou > 0.0 && iou <= 1.0) {
        return Err(CliError::Usage(format!("IoU threshold {iou} outside (0, 1]")));
    }
    let mut records = match gt {
        Some(p) => load_records(p)?,
        None => ingested(ctx)?,
    };
    if let Some(s) = only {
        let manifest = split(ctx, &records)?;
        records.retain(|r| manifest.split_of(&r.id) == Some(s));
        info!("eval-map: {} {} images", records.len(), s);
    }
    let gts = ground_truth_from_records(&records);
    let mut columns: Vec<(String, EvalReport)> = Vec::new();
    for d in detections {
        let text = String::from_utf8(read(&d.path)?)
            .map_err(|_| CliError::Data(format!("{}: not UTF-8", d.path.display())))?;
        let dets = parse_detections(&text).map_err(at(d.path.display()))?;
        let report = mean_ap(&dets, &gts, &DiseaseClass::ALL, iou).map_err(at(&d.name))?;
        info!(
            "eval-map: {} mAP={:.4} over {} detections",
            d.name,
            report.map,
            dets.len()
        );
        columns.push((d.name.clone(), report));
    }
    let table = render_ap_table(&columns);
    print!("{table}");
    ctx.write(&ctx.cfg.out("ap_table.txt"), table.as_bytes())?;
    let by_name: BTreeMap<&str, &EvalReport> = columns.iter().map(|(n, r)| (n.as_str(), r)).collect();
    let mut json = serde_json::to_vec_pretty(&by_name).map_err(|e| at("eval-map")(e.into()))?;
    json.push(b'\n');
    ctx.write(&ctx.cfg.out("ap.json"), &json)
}

pub fn merge(ctx: &Ctx, tiles_csv: &Path, detections: &Path, output: Option<&Path>, iou: Option<f64>) -> Result<()> {
    let tiles = read_tiles_csv(&read(tiles_csv)?).map_err(at(tiles_csv.display()))?;
    let text = String::from_utf8(read(detections)?)
        .map_err(|_| CliError::Data(format!("{}: not UTF-8", detections.display())))?;
    let dets = parse_detections(&text).map_err(at(detections.display()))?;
    let merged =
        merge_tile_detections(&tiles, &dets, iou.unwrap_or(ctx.cfg.iou_threshold)).map_err(at(detections.display()))?;
    info!(
        "merge: {} tile detections -> {} image detections",
        dets.len(),
        merged.len()
    );
    let out = output.map_or_else(|| ctx.cfg.out("merged_detections.txt"), Path::to_path_buf);
    ctx.write(&out, format_detections(&merged).as_bytes())
}

pub fn run_widths(ctx: &Ctx) -> Result<()> {
    widths(ctx, &ingested(ctx)?).map(drop)
}

pub fn run_eval_mape(ctx: &Ctx) -> Result<()> {
    let preds = load_sidecar(ctx)?.ok_or_else(|| CliError::Usage("eval-mape needs --predictions".into()))?;
    eval_mape(ctx, &ingested(ctx)?, &load_widths(ctx)?, &preds).map(drop)
}

fn samples_from_disk(ctx: &Ctx, records: &[ImageRecord]) -> Result<Vec<WidthSample>> {
    let preds = load_sidecar(ctx)?;
    let rows = match load_widths(ctx) {
        Ok(rows) => rows,
        Err(e) if preds.is_some() => {
            warn!("widths: {e}; using predictions only");
            Vec::new()
        }
        Err(e) => return Err(e),
    };
    width_samples(ctx, records, &rows, preds.as_deref())
}

pub fn run_partition(ctx: &Ctx) -> Result<()> {
    let records = ingested(ctx)?;
    partition(ctx, &samples_from_disk(ctx, &records)?)
}

pub fn run_stats(ctx: &Ctx) -> Result<()> {
    let records = ingested(ctx)?;
    stats(ctx, &samples_from_disk(ctx, &records)?)
}

pub fn run_emit(ctx: &Ctx) -> Result<()> {
    let records = ingested(ctx)?;
    emit(ctx, &records, &split(ctx, &records)?)
}

pub fn run_tile(ctx: &Ctx) -> Result<()> {
    let records = ingested(ctx)?;
    let samples = samples_from_disk(ctx, &records)?;
    tile(ctx, &records, &samples, &split(ctx, &records)?).map(drop)
}

pub fn pipeline(ctx: &Ctx) -> Result<()> {
    let records = ingest(ctx)?;
    let rows = widths(ctx, &records)?;
    let preds = load_sidecar(ctx)?;
    if let Some(p) = &preds {
        eval_mape(ctx, &records, &rows, p)?;
    }
    let samples = width_samples(ctx, &records, &rows, preds.as_deref())?;
    stats(ctx, &samples)?;
    partition(ctx, &samples)?;
    let manifest = split(ctx, &records)?;
    emit(ctx, &records, &manifest)?;
    tile(ctx, &records, &samples, &manifest)?;
    info!("pipeline: done");
    Ok(())
}
