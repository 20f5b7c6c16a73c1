//! Overlapping square tiles sized from the leaf width.
//!
//! The window side is `N * lfw` pixels, tiles step by half a window, and
//! ground-truth boxes are clipped into each tile. A clipped box that keeps
//! less than `min_area_ratio` of its original area is dropped. Detections
//! made on tiles are translated back and merged with class-wise NMS.

use std::cmp::Ordering;
use std::collections::HashMap;

use image::{DynamicImage, GenericImageView, ImageBuffer, Pixel};
use serde::{Deserialize, Serialize};

use crate::annotations::{BBox, DiseaseClass, ImageRecord};
use crate::error::{Error, Result};

/// How windows are placed at the right and bottom edges.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgePolicy {
    /// Shift the final window back inside the image.
    #[default]
    ClampShift,
    /// Keep the regular stride and fill the overhang by reflection.
    PadReflect,
}

/// Whether tiles without any retained box are kept.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativePolicy {
    #[default]
    AnnotatedOnly,
    KeepNegatives,
}

/// What the area-ratio threshold discards.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscardRule {
    /// Drop the clipped box only.
    #[default]
    Box,
    /// Drop the whole tile when any clipped box falls under the threshold.
    Tile,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileSpec {
    /// Window side as a multiple of the leaf width.
    pub n: u32,
    pub overlap_fraction: f64,
    pub min_area_ratio: f64,
    pub edge_policy: EdgePolicy,
    pub min_window: u32,
    pub negatives: NegativePolicy,
    pub discard: DiscardRule,
}

pub const DEFAULT_N_VALUES: [u32; 3] = [3, 5, 7];

impl TileSpec {
    pub fn new(n: u32) -> Self {
        Self {
            n,
            overlap_fraction: 0.5,
            min_area_ratio: 0.07,
            edge_policy: EdgePolicy::ClampShift,
            min_window: 64,
            negatives: NegativePolicy::AnnotatedOnly,
            discard: DiscardRule::Box,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::InvalidParameter(format!(
                "N = {} must be at least 3 so the window exceeds twice the leaf width",
                self.n
            )));
        }
        if !(self.overlap_fraction > 0.0 && self.overlap_fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "overlap fraction {} outside (0, 1)",
                self.overlap_fraction
            )));
        }
        if !(self.min_area_ratio > 0.0 && self.min_area_ratio < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "minimum area ratio {} outside (0, 1)",
                self.min_area_ratio
            )));
        }
        if self.min_window == 0 {
            return Err(Error::InvalidParameter("minimum window is 0".into()));
        }
        Ok(())
    }
}

/// Tile side: `round(N * lfw)`, at least `min_window`, at most `min(w, h)`.
pub fn window_size(lfw: f64, spec: &TileSpec, w: u32, h: u32) -> u32 {
    let raw = (spec.n as f64 * lfw + 0.5).floor();
    let upper = w.min(h);
    let s = if raw.is_finite() && raw < u32::MAX as f64 {
        (raw.max(0.0) as u32).max(spec.min_window)
    } else {
        u32::MAX
    };
    s.min(upper)
}

/// Distance between consecutive window origins, rounded down so that two
/// neighbours always overlap by at least `overlap_fraction` of a window.
pub fn stride(s: u32, overlap_fraction: f64) -> u32 {
    ((s as f64 * (1.0 - overlap_fraction) + 1e-9).floor() as u32).max(1)
}

/// Window origins along one axis of length `dim`.
pub fn tile_origins(dim: u32, s: u32, overlap_fraction: f64, edge: EdgePolicy) -> Vec<u32> {
    debug_assert!(s >= 1 && s <= dim);
    let step = stride(s, overlap_fraction);
    let mut origins = Vec::new();
    let mut o = 0u32;
    match edge {
        EdgePolicy::ClampShift => {
            while o + s <= dim {
                origins.push(o);
                o += step;
            }
            let last = *origins.last().expect("s <= dim");
            if last + s < dim {
                origins.push(dim - s);
            }
        }
        EdgePolicy::PadReflect => loop {
            origins.push(o);
            if o + s >= dim {
                break;
            }
            o += step;
        },
    }
    origins
}

/// A ground-truth box clipped into a tile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClippedBox {
    /// Box in tile coordinates.
    pub bbox: BBox,
    /// Clipped area over original area.
    pub area_ratio: f64,
}

/// Intersect `b` with the square `[x0, x0 + s] x [y0, y0 + s]` and express
/// it relative to the tile origin.
pub fn clip_box_to_tile(b: &BBox, origin: (u32, u32), side: u32) -> Option<ClippedBox> {
    let (x0, y0) = (origin.0 as f64, origin.1 as f64);
    let square = BBox {
        xmin: x0,
        ymin: y0,
        xmax: x0 + side as f64,
        ymax: y0 + side as f64,
    };
    let inter = b.intersection(&square)?;
    Some(ClippedBox {
        bbox: inter.translate(-x0, -y0),
        area_ratio: inter.area() / b.area(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileBox {
    pub class: DiseaseClass,
    pub bbox: BBox,
    pub area_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    pub image_id: String,
    pub n: u32,
    pub x0: u32,
    pub y0: u32,
    pub side: u32,
    pub boxes: Vec<TileBox>,
}

impl Tile {
    /// `<imageId>__N<k>_x<x0>_y<y0>`
    pub fn tile_id(&self) -> String {
        format!("{}__N{}_x{}_y{}", self.image_id, self.n, self.x0, self.y0)
    }

    pub fn file_name(&self, ext: &str) -> String {
        format!("{}.{ext}", self.tile_id())
    }

    pub fn square(&self) -> BBox {
        BBox {
            xmin: self.x0 as f64,
            ymin: self.y0 as f64,
            xmax: (self.x0 + self.side) as f64,
            ymax: (self.y0 + self.side) as f64,
        }
    }
}

/// Cut `rec` into tiles for a leaf width of `lfw` pixels. Tiles come out
/// top-down, left-to-right.
pub fn tile_image(rec: &ImageRecord, lfw: f64, spec: &TileSpec) -> Result<Vec<Tile>> {
    spec.validate()?;
    if !(lfw > 0.0 && lfw.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "{}: leaf width {lfw} must be positive",
            rec.id
        )));
    }
    let s = window_size(lfw, spec, rec.width, rec.height);
    let xs = tile_origins(rec.width, s, spec.overlap_fraction, spec.edge_policy);
    let ys = tile_origins(rec.height, s, spec.overlap_fraction, spec.edge_policy);

    let mut tiles = Vec::with_capacity(xs.len() * ys.len());
    for &y0 in &ys {
        'tile: for &x0 in &xs {
            let mut boxes = Vec::new();
            for region in &rec.regions {
                let Some(clipped) = clip_box_to_tile(&region.bbox, (x0, y0), s) else {
                    continue;
                };
                if clipped.area_ratio >= spec.min_area_ratio {
                    boxes.push(TileBox {
                        class: region.class,
                        bbox: clipped.bbox,
                        area_ratio: clipped.area_ratio,
                    });
                } else if spec.discard == DiscardRule::Tile {
                    continue 'tile;
                }
            }
            if boxes.is_empty() && spec.negatives == NegativePolicy::AnnotatedOnly {
                continue;
            }
            tiles.push(Tile {
                image_id: rec.id.clone(),
                n: spec.n,
                x0,
                y0,
                side: s,
                boxes,
            });
        }
    }
    Ok(tiles)
}

fn reflect(i: u32, dim: u32) -> u32 {
    if i < dim || dim == 1 {
        i.min(dim - 1)
    } else {
        // Mirror about the last pixel without repeating it.
        let r = 2 * (dim - 1) as i64 - i as i64;
        r.max(0) as u32
    }
}

fn reflect_crop<P: Pixel>(
    img: &ImageBuffer<P, Vec<P::Subpixel>>,
    x0: u32,
    y0: u32,
    side: u32,
) -> ImageBuffer<P, Vec<P::Subpixel>> {
    let (w, h) = img.dimensions();
    ImageBuffer::from_fn(side, side, |x, y| {
        *img.get_pixel(reflect(x0 + x, w), reflect(y0 + y, h))
    })
}

/// Cut a tile's pixels out of the source raster without resampling.
/// Windows that overhang the image (only under `PadReflect`) are filled by
/// mirroring.
pub fn crop_tile(raster: &DynamicImage, tile: &Tile) -> DynamicImage {
    let (w, h) = raster.dimensions();
    if tile.x0 + tile.side <= w && tile.y0 + tile.side <= h {
        return raster.crop_imm(tile.x0, tile.y0, tile.side, tile.side);
    }
    let (x0, y0, s) = (tile.x0, tile.y0, tile.side);
    match raster {
        DynamicImage::ImageLuma8(b) => reflect_crop(b, x0, y0, s).into(),
        DynamicImage::ImageLumaA8(b) => reflect_crop(b, x0, y0, s).into(),
        DynamicImage::ImageRgb8(b) => reflect_crop(b, x0, y0, s).into(),
        DynamicImage::ImageRgba8(b) => reflect_crop(b, x0, y0, s).into(),
        DynamicImage::ImageLuma16(b) => reflect_crop(b, x0, y0, s).into(),
        DynamicImage::ImageLumaA16(b) => reflect_crop(b, x0, y0, s).into(),
        DynamicImage::ImageRgb16(b) => reflect_crop(b, x0, y0, s).into(),
        DynamicImage::ImageRgba16(b) => reflect_crop(b, x0, y0, s).into(),
        DynamicImage::ImageRgb32F(b) => reflect_crop(b, x0, y0, s).into(),
        DynamicImage::ImageRgba32F(b) => reflect_crop(b, x0, y0, s).into(),
        other => reflect_crop(&other.to_rgba32f(), x0, y0, s).into(),
    }
}

/// A detector output box. `source` names the image or the tile it was
/// predicted on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub source: String,
    pub class: DiseaseClass,
    pub bbox: BBox,
    pub confidence: f64,
}

impl Detection {
    pub fn new(source: impl Into<String>, class: DiseaseClass, bbox: BBox, confidence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidParameter(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(Self {
            source: source.into(),
            class,
            bbox,
            confidence,
        })
    }
}

/// Descending confidence, then box coordinates, then source.
pub fn detection_rank(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then_with(|| a.bbox.lex_cmp(&b.bbox))
        .then_with(|| a.source.cmp(&b.source))
}

/// Greedy class-wise non-maximum suppression within each source. A
/// detection is suppressed when its IoU with a kept, higher-ranked
/// detection of the same source and class exceeds `iou_thresh`.
pub fn non_max_suppression(dets: &[Detection], iou_thresh: f64) -> Vec<Detection> {
    let mut ranked: Vec<&Detection> = dets.iter().collect();
    ranked.sort_by(|a, b| detection_rank(a, b));
    let mut kept: Vec<&Detection> = Vec::new();
    for d in ranked {
        let suppressed = kept
            .iter()
            .any(|k| k.class == d.class && k.source == d.source && k.bbox.iou(&d.bbox) > iou_thresh);
        if !suppressed {
            kept.push(d);
        }
    }
    kept.into_iter().cloned().collect()
}

/// Translate tile-space detections into their source images and merge the
/// duplicates that overlapping tiles produce.
pub fn merge_tile_detections(tiles: &[Tile], dets: &[Detection], iou_thresh: f64) -> Result<Vec<Detection>> {
    let index: HashMap<String, &Tile> = tiles.iter().map(|t| (t.tile_id(), t)).collect();
    let translated = dets
        .iter()
        .map(|d| {
            let tile = index
                .get(&d.source)
                .ok_or_else(|| Error::UnknownTile(d.source.clone()))?;
            Ok(Detection {
                source: tile.image_id.clone(),
                class: d.class,
                bbox: d.bbox.translate(tile.x0 as f64, tile.y0 as f64),
                confidence: d.confidence,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(non_max_suppression(&translated, iou_thresh))
}
