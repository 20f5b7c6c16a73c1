//! Pipeline configuration: a TOML file, then command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use leaftile::dataset::SplitFractions;
use leaftile::leafwidth::DEFAULT_MIN_COMPONENT_PIXELS;
use leaftile::tiler::{DiscardRule, EdgePolicy, NegativePolicy, TileSpec, DEFAULT_N_VALUES};
use leaftile::width::WidthPolicy;
use serde::Deserialize;

use crate::CliError;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "LEAFTILE_CONFIG";

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus_root: PathBuf,
    /// Annotation files, relative to `corpus_root`.
    pub annotation_glob: String,
    pub output_root: PathBuf,
    pub n_values: Vec<u32>,
    pub overlap_fraction: f64,
    pub min_area_ratio: f64,
    pub min_window: u32,
    pub edge_policy: EdgePolicy,
    pub negatives: NegativePolicy,
    pub discard: DiscardRule,
    pub split: SplitFractions,
    pub seed: u64,
    pub width_policy: WidthPolicy,
    /// Sidecar file of predicted widths.
    pub predictions: Option<PathBuf>,
    pub write_images: bool,
    pub min_component_pixels: usize,
    pub narrow_fraction: f64,
    pub wide_fraction: f64,
    pub iou_threshold: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            corpus_root: PathBuf::from("."),
            annotation_glob: "**/*.json".into(),
            output_root: PathBuf::from("out"),
            n_values: DEFAULT_N_VALUES.to_vec(),
            overlap_fraction: 0.5,
            min_area_ratio: 0.07,
            min_window: 64,
            edge_policy: EdgePolicy::default(),
            negatives: NegativePolicy::default(),
            discard: DiscardRule::default(),
            split: SplitFractions::default(),
            seed: 0,
            width_policy: WidthPolicy::default(),
            predictions: None,
            write_images: true,
            min_component_pixels: DEFAULT_MIN_COMPONENT_PIXELS,
            narrow_fraction: 0.1,
            wide_fraction: 0.1,
            iou_threshold: 0.5,
        }
    }
}

impl PipelineConfig {
    /// Parse a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.corpus_root = base.join(&cfg.corpus_root);
        cfg.output_root = base.join(&cfg.output_root);
        cfg.predictions = cfg.predictions.map(|p| base.join(p));
        Ok(cfg)
    }

    pub fn tile_spec(&self, n: u32) -> TileSpec {
        TileSpec {
            n,
            overlap_fraction: self.overlap_fraction,
            min_area_ratio: self.min_area_ratio,
            edge_policy: self.edge_policy,
            min_window: self.min_window,
            negatives: self.negatives,
            discard: self.discard,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.n_values.is_empty() {
            return Err(CliError::Usage("N list is empty".into()));
        }
        for &n in &self.n_values {
            self.tile_spec(n)
                .validate()
                .map_err(|e| CliError::Usage(e.to_string()))?;
        }
        self.split.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(CliError::Usage(format!(
                "IoU threshold {} outside (0, 1]",
                self.iou_threshold
            )));
        }
        Ok(())
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.output_root.join(name)
    }
}

/// Parse `3,5,7`.
pub fn parse_n_list(s: &str) -> Result<Vec<u32>, String> {
    let mut v = s
        .split(',')
        .map(|p| p.trim().parse::<u32>().map_err(|_| format!("bad N value {p:?}")))
        .collect::<Result<Vec<_>, _>>()?;
    v.sort_unstable();
    v.dedup();
    Ok(v)
}
