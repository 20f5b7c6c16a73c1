//! Externally predicted leaf widths: the sidecar reader, MAPE scoring
//! against ground truth, and the choice of which width drives tiling.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::annotations::{DiseaseClass, ImageRecord};
use crate::error::{Error, Result};
use crate::leafwidth::LeafWidthRecord;

pub const SIDECAR_HEADER: [&str; 2] = ["imageId", "predictedLW_percent"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthPrediction {
    pub image_id: String,
    /// Predicted LW, percent in (0, 100].
    pub predicted_lw: f64,
}

fn check_width(id: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 && value <= 100.0 {
        Ok(())
    } else {
        Err(Error::InvalidWidth {
            id: id.to_string(),
            value,
        })
    }
}

/// Read a sidecar prediction file: two columns, `imageId` and the
/// predicted LW percentage. A header row is optional.
pub fn load_predictions(document: &[u8]) -> Result<Vec<WidthPrediction>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(document);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected 2 columns, found {}", rec.len()),
            });
        }
        let id = &rec[0];
        let Ok(value) = rec[1].parse::<f64>() else {
            if i == 0 {
                continue; // header
            }
            return Err(Error::Parse {
                line,
                message: format!("bad width {:?}", &rec[1]),
            });
        };
        if id.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty image id".into(),
            });
        }
        check_width(id, value)?;
        if !seen.insert(id.to_string()) {
            return Err(Error::DuplicateId(id.to_string()));
        }
        out.push(WidthPrediction {
            image_id: id.to_string(),
            predicted_lw: value,
        });
    }
    Ok(out)
}

pub fn write_predictions<W: Write>(preds: &[WidthPrediction], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(SIDECAR_HEADER)?;
    for p in preds {
        wtr.write_record([p.image_id.clone(), format!("{:.4}", p.predicted_lw)])?;
    }
    wtr.flush().map_err(|e| Error::io("<sidecar>", e))?;
    Ok(())
}

/// Ground-truth LW for one image, with the image's class when known.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthWidth {
    pub image_id: String,
    pub class: Option<DiseaseClass>,
    pub lw: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMape {
    pub mape: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapeReport {
    pub per_class: BTreeMap<DiseaseClass, ClassMape>,
    /// Mean over every evaluated image, percent.
    pub overall: f64,
    pub n: usize,
}

/// Mean absolute percentage error, `100 * mean(|gt - pred| / gt)`.
///
/// The relative error is taken against the ground-truth value. Predictions
/// for ids absent from the ground truth are ignored with a warning.
pub fn mape(ground_truth: &[GroundTruthWidth], predictions: &[WidthPrediction]) -> Result<MapeReport> {
    if ground_truth.is_empty() {
        return Err(Error::EmptyInput);
    }
    let by_id: HashMap<&str, f64> = predictions
        .iter()
        .map(|p| (p.image_id.as_str(), p.predicted_lw))
        .collect();
    let known: HashSet<&str> = ground_truth.iter().map(|g| g.image_id.as_str()).collect();
    let extra = predictions
        .iter()
        .filter(|p| !known.contains(p.image_id.as_str()))
        .count();
    if extra > 0 {
        log::warn!("ignoring {extra} predictions for images without ground truth");
    }

    let mut sums: BTreeMap<DiseaseClass, (f64, usize)> = BTreeMap::new();
    let mut total = 0.0;
    for gt in ground_truth {
        let pred = *by_id
            .get(gt.image_id.as_str())
            .ok_or_else(|| Error::MissingPrediction(gt.image_id.clone()))?;
        if gt.lw == 0.0 {
            return Err(Error::ZeroGroundTruth(gt.image_id.clone()));
        }
        let term = ((gt.lw - pred) / gt.lw).abs();
        total += term;
        if let Some(class) = gt.class {
            let entry = sums.entry(class).or_default();
            entry.0 += term;
            entry.1 += 1;
        }
    }
    let n = ground_truth.len();
    Ok(MapeReport {
        per_class: sums
            .into_iter()
            .map(|(c, (s, k))| {
                (
                    c,
                    ClassMape {
                        mape: 100.0 * s / k as f64,
                        n: k,
                    },
                )
            })
            .collect(),
        overall: 100.0 * total / n as f64,
        n,
    })
}

/// Which width source feeds tiling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WidthPolicy {
    #[default]
    GroundTruthFirst,
    PredictionFirst,
    PredictionOnly,
}

impl std::str::FromStr for WidthPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "ground-truth-first" | "gt-first" | "groundtruthfirst" => Ok(Self::GroundTruthFirst),
            "prediction-first" | "pred-first" | "predictionfirst" => Ok(Self::PredictionFirst),
            "prediction-only" | "pred-only" | "predictiononly" => Ok(Self::PredictionOnly),
            _ => Err(Error::InvalidParameter(format!("unknown width policy {s:?}"))),
        }
    }
}

/// Select the LW percentage used downstream for `rec`.
pub fn effective_width(
    rec: &ImageRecord,
    gt: Option<&LeafWidthRecord>,
    pred: Option<&WidthPrediction>,
    policy: WidthPolicy,
) -> Result<f64> {
    let gt = gt.map(|g| g.lw);
    let pred = pred.map(|p| p.predicted_lw);
    let chosen = match policy {
        WidthPolicy::GroundTruthFirst => gt.or(pred),
        WidthPolicy::PredictionFirst => pred.or(gt),
        WidthPolicy::PredictionOnly => pred,
    };
    chosen.ok_or_else(|| Error::WidthUnavailable(rec.id.clone()))
}
