//! Detection scoring: IoU, per-class average precision and mAP.
//!
//! AP is the area under the precision/recall staircase after making
//! precision monotone (all-point interpolation). Detections are matched to
//! ground truth greedily in descending confidence; each ground-truth box
//! takes at most one match.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::annotations::{BBox, DiseaseClass, ImageRecord};
use crate::error::{Error, Result};
use crate::tiler::{detection_rank, Detection};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthBox {
    pub image_id: String,
    pub class: DiseaseClass,
    pub bbox: BBox,
}

pub fn ground_truth_from_records(records: &[ImageRecord]) -> Vec<GroundTruthBox> {
    records
        .iter()
        .flat_map(|r| {
            r.regions.iter().map(|g| GroundTruthBox {
                image_id: r.id.clone(),
                class: g.class,
                bbox: g.bbox,
            })
        })
        .collect()
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassEval {
    pub ap: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub n_gt: usize,
}

/// Match and score one class. `None` when the class has no ground truth.
pub fn evaluate_class(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    class: DiseaseClass,
    iou_thresh: f64,
) -> Option<ClassEval> {
    let mut by_image: HashMap<&str, Vec<(&BBox, bool)>> = HashMap::new();
    let mut n_gt = 0;
    for g in gts.iter().filter(|g| g.class == class) {
        by_image.entry(g.image_id.as_str()).or_default().push((&g.bbox, false));
        n_gt += 1;
    }
    if n_gt == 0 {
        return None;
    }

    let mut ranked: Vec<&Detection> = dets.iter().filter(|d| d.class == class).collect();
    ranked.sort_by(|a, b| detection_rank(a, b));

    let mut hits = Vec::with_capacity(ranked.len());
    for d in &ranked {
        let matched = by_image.get_mut(d.source.as_str()).and_then(|cands| {
            let mut best: Option<(usize, f64)> = None;
            for (i, (g, _)) in cands.iter().enumerate() {
                let o = g.iou(&d.bbox);
                if best.is_none_or(|(_, b)| o > b) {
                    best = Some((i, o));
                }
            }
            let (i, o) = best?;
            if o >= iou_thresh && !cands[i].1 {
                cands[i].1 = true;
                Some(())
            } else {
                None
            }
        });
        hits.push(matched.is_some());
    }

    let tp = hits.iter().filter(|&&h| h).count();
    Some(ClassEval {
        ap: all_point_ap(&hits, n_gt),
        tp,
        fp: hits.len() - tp,
        fn_: n_gt - tp,
        n_gt,
    })
}

/// Area under the interpolated PR curve for a ranked hit list.
fn all_point_ap(hits: &[bool], n_gt: usize) -> f64 {
    let mut recall = vec![0.0];
    let mut precision = vec![0.0];
    let mut tp = 0usize;
    for (k, &hit) in hits.iter().enumerate() {
        tp += usize::from(hit);
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    recall.push(1.0);
    precision.push(0.0);
    for i in (0..precision.len() - 1).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    recall
        .windows(2)
        .zip(&precision[1..])
        .map(|(r, p)| (r[1] - r[0]) * p)
        .sum()
}

pub fn average_precision(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    class: DiseaseClass,
    iou_thresh: f64,
) -> Option<f64> {
    evaluate_class(dets, gts, class, iou_thresh).map(|e| e.ap)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: BTreeMap<DiseaseClass, ClassEval>,
    /// Unweighted mean of per-class AP over classes with ground truth.
    pub map: f64,
    pub iou_threshold: f64,
}

pub fn mean_ap(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    classes: &[DiseaseClass],
    iou_thresh: f64,
) -> Result<EvalReport> {
    let per_class: BTreeMap<DiseaseClass, ClassEval> = classes
        .iter()
        .filter_map(|&c| evaluate_class(dets, gts, c, iou_thresh).map(|e| (c, e)))
        .collect();
    if per_class.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    let map = per_class.values().map(|e| e.ap).sum::<f64>() / per_class.len() as f64;
    Ok(EvalReport {
        per_class,
        map,
        iou_threshold: iou_thresh,
    })
}

/// Parse `imageId classIndex confidence xmin ymin xmax ymax` lines.
/// Blank lines and `#` comments are skipped.
pub fn parse_detections(text: &str) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |message: String| Error::Parse { line: i + 1, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(bad(format!("expected 7 fields, found {}", fields.len())));
        }
        let class = fields[1]
            .parse::<usize>()
            .ok()
            .and_then(DiseaseClass::from_index)
            .ok_or_else(|| bad(format!("bad class index {:?}", fields[1])))?;
        let nums = fields[2..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| bad(format!("bad number {f:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let bbox = BBox::new(nums[1], nums[2], nums[3], nums[4]).map_err(|e| bad(e.to_string()))?;
        let det = Detection::new(fields[0], class, bbox, nums[0]).map_err(|e| bad(e.to_string()))?;
        out.push(det);
    }
    Ok(out)
}

pub fn format_detections(dets: &[Detection]) -> String {
    let mut out = String::new();
    for d in dets {
        writeln!(
            out,
            "{} {} {} {} {} {} {}",
            d.source,
            d.class.index(),
            d.confidence,
            d.bbox.xmin,
            d.bbox.ymin,
            d.bbox.xmax,
            d.bbox.ymax
        )
        .expect("string write");
    }
    out
}

/// Plain-text AP table, classes by datasets, values in percent.
pub fn render_ap_table(columns: &[(String, EvalReport)]) -> String {
    let width = columns.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(8);
    let mut out = String::new();
    write!(out, "{:<8}", "Class").unwrap();
    for (name, _) in columns {
        write!(out, "  {name:>width$}").unwrap();
    }
    out.push('\n');
    for class in DiseaseClass::ALL {
        if columns.iter().all(|(_, r)| !r.per_class.contains_key(&class)) {
            continue;
        }
        write!(out, "{:<8}", class.name()).unwrap();
        for (_, r) in columns {
            match r.per_class.get(&class) {
                Some(e) => write!(out, "  {:>width$.2}", 100.0 * e.ap).unwrap(),
                None => write!(out, "  {:>width$}", "-").unwrap(),
            }
        }
        out.push('\n');
    }
    write!(out, "{:<8}", "mAP").unwrap();
    for (_, r) in columns {
        write!(out, "  {:>width$.2}", 100.0 * r.map).unwrap();
    }
    out.push('\n');
    out
}
