//! Corpus width statistics and the narrow / normal / wide split.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::annotations::DiseaseClass;
use crate::error::{Error, Result};

/// One image's LW sample.
#[derive(Clone, Debug, PartialEq)]
pub struct WidthSample {
    pub image_id: String,
    pub class: Option<DiseaseClass>,
    pub lw: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthStats {
    pub n: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub sd: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

/// Linear-interpolation quantile on sorted data (`h = (n - 1) p`).
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl WidthStats {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mean = sorted.iter().sum::<f64>() / n as f64;
        let var = sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        Ok(Self {
            n,
            min: sorted[0],
            max: sorted[n - 1],
            mean,
            sd: var.sqrt(),
            q1: quantile_sorted(&sorted, 0.25),
            q2: quantile_sorted(&sorted, 0.5),
            q3: quantile_sorted(&sorted, 0.75),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    pub overall: WidthStats,
    pub per_class: BTreeMap<DiseaseClass, WidthStats>,
}

pub fn compute_stats(samples: &[WidthSample]) -> Result<StatsTable> {
    let all: Vec<f64> = samples.iter().map(|s| s.lw).collect();
    let overall = WidthStats::from_values(&all)?;
    let mut by_class: BTreeMap<DiseaseClass, Vec<f64>> = BTreeMap::new();
    for s in samples {
        if let Some(c) = s.class {
            by_class.entry(c).or_default().push(s.lw);
        }
    }
    let per_class = by_class
        .into_iter()
        .map(|(c, v)| WidthStats::from_values(&v).map(|s| (c, s)))
        .collect::<Result<_>>()?;
    Ok(StatsTable { overall, per_class })
}

impl StatsTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["group", "n", "min", "q1", "median", "q3", "max", "mean", "sd"])?;
        let rows = self
            .per_class
            .iter()
            .map(|(c, s)| (c.name(), s))
            .chain(std::iter::once(("All", &self.overall)));
        for (name, s) in rows {
            let mut row = vec![name.to_string(), s.n.to_string()];
            row.extend(
                [s.min, s.q1, s.q2, s.q3, s.max, s.mean, s.sd]
                    .iter()
                    .map(|v| format!("{v:.4}")),
            );
            wtr.write_record(row)?;
        }
        wtr.flush().map_err(|e| Error::io("<stats>", e))?;
        Ok(())
    }
}

/// Signed score transform: `sign(x - mean) * sqrt(|x - mean|)`.
pub fn t_score(x: f64, mean: f64) -> f64 {
    let d = x - mean;
    d.signum() * d.abs().sqrt()
}

/// Parameters of the leaf-width factor score, fitted on one corpus.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LwfParams {
    pub mean: f64,
    pub t_min: f64,
}

impl LwfParams {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let t_min = values.iter().map(|&x| t_score(x, mean)).fold(f64::INFINITY, f64::min);
        Ok(Self { mean, t_min })
    }
}

/// `sqrt(T(x) - T_min)`; zero at the corpus minimum, non-decreasing in `x`.
pub fn lwf_score(x: f64, params: &LwfParams) -> f64 {
    (t_score(x, params.mean) - params.t_min).max(0.0).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SizeGroup {
    Narrow,
    Normal,
    Wide,
}

impl SizeGroup {
    pub const ALL: [SizeGroup; 3] = [SizeGroup::Narrow, SizeGroup::Normal, SizeGroup::Wide];

    pub fn name(self) -> &'static str {
        match self {
            SizeGroup::Narrow => "narrow",
            SizeGroup::Normal => "normal",
            SizeGroup::Wide => "wide",
        }
    }
}

impl fmt::Display for SizeGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const MIN_PARTITION_SAMPLES: usize = 10;

fn sample_order(a: &WidthSample, b: &WidthSample) -> Ordering {
    a.lw.total_cmp(&b.lw).then_with(|| a.image_id.cmp(&b.image_id))
}

/// Assign the lowest `floor(lower_frac * n)` widths to Narrow, the highest
/// `floor(upper_frac * n)` to Wide, and the rest to Normal. Equal widths are
/// ordered by image id.
pub fn partition_by_quantile(
    samples: &[WidthSample],
    lower_frac: f64,
    upper_frac: f64,
) -> Result<BTreeMap<String, SizeGroup>> {
    let n = samples.len();
    if n < MIN_PARTITION_SAMPLES {
        return Err(Error::TooFewSamples {
            need: MIN_PARTITION_SAMPLES,
            got: n,
        });
    }
    if !(0.0..1.0).contains(&lower_frac) || !(0.0..1.0).contains(&upper_frac) || lower_frac + upper_frac > 1.0 {
        return Err(Error::InvalidParameter(format!(
            "tail fractions {lower_frac} / {upper_frac}"
        )));
    }
    let mut order: Vec<&WidthSample> = samples.iter().collect();
    order.sort_by(|a, b| sample_order(a, b));
    let narrow = (lower_frac * n as f64 + 1e-9).floor() as usize;
    let wide = (upper_frac * n as f64 + 1e-9).floor() as usize;

    let mut groups = BTreeMap::new();
    for (rank, s) in order.iter().enumerate() {
        let group = if rank < narrow {
            SizeGroup::Narrow
        } else if rank >= n - wide {
            SizeGroup::Wide
        } else {
            SizeGroup::Normal
        };
        if groups.insert(s.image_id.clone(), group).is_some() {
            return Err(Error::DuplicateId(s.image_id.clone()));
        }
    }
    Ok(groups)
}

/// Per-class counts of each size group; `None` class rows are skipped.
pub fn group_summary(
    samples: &[WidthSample],
    groups: &BTreeMap<String, SizeGroup>,
) -> BTreeMap<DiseaseClass, [usize; 3]> {
    let mut table = BTreeMap::new();
    for s in samples {
        let (Some(class), Some(group)) = (s.class, groups.get(&s.image_id)) else {
            continue;
        };
        let row: &mut [usize; 3] = table.entry(class).or_default();
        row[*group as usize] += 1;
    }
    table
}

/// `id,class,LW,group` rows in id order.
pub fn write_partition<W: Write>(samples: &[WidthSample], groups: &BTreeMap<String, SizeGroup>, out: W) -> Result<()> {
    let mut rows: Vec<&WidthSample> = samples.iter().collect();
    rows.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["id", "class", "LW", "group"])?;
    for s in rows {
        let group = groups
            .get(&s.image_id)
            .ok_or_else(|| Error::Invariant(format!("{} has no group", s.image_id)))?;
        wtr.write_record([
            s.image_id.as_str(),
            s.class.map_or("", DiseaseClass::name),
            &format!("{:.4}", s.lw),
            group.name(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<partition>", e))?;
    Ok(())
}

pub fn write_group_summary<W: Write>(summary: &BTreeMap<DiseaseClass, [usize; 3]>, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["class", "narrow", "normal", "wide", "total"])?;
    let mut totals = [0usize; 3];
    for (class, row) in summary {
        for (t, v) in totals.iter_mut().zip(row) {
            *t += v;
        }
        wtr.write_record([
            class.name().to_string(),
            row[0].to_string(),
            row[1].to_string(),
            row[2].to_string(),
            row.iter().sum::<usize>().to_string(),
        ])?;
    }
    wtr.write_record([
        "Total".to_string(),
        totals[0].to_string(),
        totals[1].to_string(),
        totals[2].to_string(),
        totals.iter().sum::<usize>().to_string(),
    ])?;
    wtr.flush().map_err(|e| Error::io("<partition summary>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(values: &[f64]) -> Vec<WidthSample> {
        values
            .iter()
            .enumerate()
            .map(|(i, &lw)| WidthSample {
                image_id: format!("img{i:05}"),
                class: Some(DiseaseClass::ALL[i % 8]),
                lw,
            })
            .collect()
    }

    #[test]
    fn stats_closed_form() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = WidthStats::from_values(&v).unwrap();
        assert_eq!((s.min, s.max, s.mean), (1.0, 100.0, 50.5));
        assert_eq!(s.q2, 50.5);
        assert_eq!(s.q1, 25.75);
        assert_eq!(s.q3, 75.25);
    }

    #[test]
    fn stats_single_value() {
        let s = WidthStats::from_values(&[7.0]).unwrap();
        assert_eq!(
            [s.min, s.max, s.mean, s.q1, s.q2, s.q3, s.sd],
            [7.0, 7.0, 7.0, 7.0, 7.0, 7.0, 0.0]
        );
        assert!(matches!(WidthStats::from_values(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn lwf_examples() {
        let v = [2.0, 4.0, 6.0, 9.0, 14.0];
        let p = LwfParams::fit(&v).unwrap();
        assert_eq!(p.mean, 7.0);
        assert_eq!(lwf_score(7.0, &p), (-p.t_min).sqrt());
        assert_eq!(lwf_score(2.0, &p), 0.0);
        assert_eq!(p.t_min, -(5f64.sqrt()));
    }

    #[test]
    fn partition_distinct_widths() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = samples(&v);
        let g = partition_by_quantile(&s, 0.1, 0.1).unwrap();
        for x in &s {
            let want = if x.lw <= 10.0 {
                SizeGroup::Narrow
            } else if x.lw >= 91.0 {
                SizeGroup::Wide
            } else {
                SizeGroup::Normal
            };
            assert_eq!(g[&x.image_id], want);
        }
    }

    #[test]
    fn partition_ties_use_ids() {
        let s = samples(&[5.0; 20]);
        let g = partition_by_quantile(&s, 0.1, 0.1).unwrap();
        assert_eq!(g["img00000"], SizeGroup::Narrow);
        assert_eq!(g["img00001"], SizeGroup::Narrow);
        assert_eq!(g["img00002"], SizeGroup::Normal);
        assert_eq!(g["img00018"], SizeGroup::Wide);
        assert_eq!(g["img00019"], SizeGroup::Wide);
    }

    #[test]
    fn partition_requires_ten() {
        let s = samples(&[1.0; 9]);
        assert!(matches!(
            partition_by_quantile(&s, 0.1, 0.1),
            Err(Error::TooFewSamples { need: 10, got: 9 })
        ));
    }

    #[test]
    fn summary_and_tables() {
        let v: Vec<f64> = (1..=16).map(f64::from).collect();
        let s = samples(&v);
        let g = partition_by_quantile(&s, 0.1, 0.1).unwrap();
        let summary = group_summary(&s, &g);
        let total: usize = summary.values().flatten().sum();
        assert_eq!(total, 16);
        let mut buf = Vec::new();
        write_group_summary(&summary, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.ends_with("Total,1,14,1,16\n"), "{text}");
        let mut buf = Vec::new();
        write_partition(&s, &g, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("id,class,LW,group\nimg00000,Blast,1.0000,narrow\n"));
    }
}
