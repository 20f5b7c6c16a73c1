//! Ground-truth leaf width from polygon regions.
//!
//! Each polygon region is rasterized on its own, reduced to its largest
//! 8-connected component, and fitted with a minimum-area rotated rectangle.
//! The short side is that leaf's width; the image's representative width
//! `lfw` is the largest leaf width, and `LW` normalizes it by the longest
//! image side as a percentage.

mod components;
mod raster;
mod rect;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

pub use components::{connected_components, Component, DEFAULT_MIN_COMPONENT_PIXELS};
pub use raster::{rasterize_polygon, BinaryMask};
pub use rect::{fit_min_area_rect, RotatedRect};

use crate::annotations::{ImageRecord, Polygon};
use crate::error::{Error, Result};
use raster::{rasterize_window, PixelWindow};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafWidthRecord {
    pub image_id: String,
    pub per_leaf_widths: Vec<f64>,
    /// Largest leaf width, pixels.
    pub lfw: f64,
    /// `lfw` as a percentage of the longest image side.
    pub lw: f64,
}

impl LeafWidthRecord {
    pub fn leaf_count(&self) -> usize {
        self.per_leaf_widths.len()
    }
}

/// `100 * lfw / max(w, h)`.
pub fn normalized_width(lfw: f64, w: u32, h: u32) -> f64 {
    100.0 * (lfw / w.max(h) as f64)
}

/// Inverse of [`normalized_width`]: pixel width for a percentage.
pub fn pixel_width(lw: f64, w: u32, h: u32) -> f64 {
    lw * w.max(h) as f64 / 100.0
}

/// Width of one leaf polygon: short side of the rectangle fitted to the
/// largest component of its rasterization. `None` when nothing survives the
/// component size filter.
pub fn leaf_width(p: &Polygon, w: u32, h: u32, min_pixels: usize) -> Result<Option<f64>> {
    let window = PixelWindow::around(p, w, h);
    if window.width == 0 || window.height == 0 {
        return Ok(None);
    }
    let mask = rasterize_window(p, window);
    let components = connected_components(&mask, min_pixels);
    match components.first() {
        Some(largest) => Ok(Some(fit_min_area_rect(largest)?.short)),
        None => Ok(None),
    }
}

/// Representative leaf width of an image.
pub fn image_leaf_width(rec: &ImageRecord) -> Result<LeafWidthRecord> {
    image_leaf_width_with(rec, DEFAULT_MIN_COMPONENT_PIXELS)
}

pub fn image_leaf_width_with(rec: &ImageRecord, min_pixels: usize) -> Result<LeafWidthRecord> {
    let mut widths = Vec::new();
    for (i, region) in rec.regions.iter().enumerate() {
        let Some(polygon) = &region.polygon else {
            continue;
        };
        match leaf_width(polygon, rec.width, rec.height, min_pixels) {
            Ok(Some(width)) => widths.push(width),
            Ok(None) => log::warn!("{}: region {i} too small to measure", rec.id),
            Err(Error::ZeroWidthComponent) => {
                log::warn!("{}: region {i} rasterizes to a line", rec.id)
            }
            Err(e) => return Err(e),
        }
    }
    let lfw = widths
        .iter()
        .copied()
        .reduce(f64::max)
        .ok_or_else(|| Error::NoMeasurableLeaf(rec.id.clone()))?;
    let lw = normalized_width(lfw, rec.width, rec.height);
    if !(lw > 0.0 && lw <= 100.0) {
        return Err(Error::Invariant(format!("{}: LW {lw} outside (0, 100]", rec.id)));
    }
    Ok(LeafWidthRecord {
        image_id: rec.id.clone(),
        per_leaf_widths: widths,
        lfw,
        lw,
    })
}

pub const WIDTH_TABLE_HEADER: [&str; 4] = ["imageId", "lfw_px", "LW_percent", "leaf_count"];

/// Write the ground-truth width table: fixed column order, four
/// fractional digits.
pub fn write_width_table<W: Write>(records: &[LeafWidthRecord], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(WIDTH_TABLE_HEADER)?;
    for r in records {
        wtr.write_record([
            r.image_id.clone(),
            format!("{:.4}", r.lfw),
            format!("{:.4}", r.lw),
            r.leaf_count().to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<width table>", e))?;
    Ok(())
}

/// One parsed row of a width table.
#[derive(Clone, Debug, PartialEq)]
pub struct WidthRow {
    pub image_id: String,
    pub lfw: f64,
    pub lw: f64,
    pub leaf_count: usize,
}

pub fn read_width_table<R: Read>(input: R) -> Result<Vec<WidthRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |k: usize| {
            rec.get(k).map(str::trim).ok_or_else(|| Error::Parse {
                line,
                message: format!("expected {} columns", WIDTH_TABLE_HEADER.len()),
            })
        };
        let num = |k: usize| -> Result<f64> {
            field(k)?.parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad number in column {}", WIDTH_TABLE_HEADER[k]),
            })
        };
        rows.push(WidthRow {
            image_id: field(0)?.to_string(),
            lfw: num(1)?,
            lw: num(2)?,
            leaf_count: field(3)?.parse().map_err(|_| Error::Parse {
                line,
                message: "bad leaf_count".into(),
            })?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{DiseaseClass, LabeledRegion, Point};

    fn rect_poly(x0: f64, y0: f64, x1: f64, y1: f64) -> Polygon {
        Polygon::new(vec![
            Point::new(x0, y0),
            Point::new(x1, y0),
            Point::new(x1, y1),
            Point::new(x0, y1),
        ])
        .unwrap()
    }

    fn record(w: u32, h: u32, polys: Vec<Polygon>) -> ImageRecord {
        ImageRecord {
            id: "img".into(),
            path: "img.png".into(),
            width: w,
            height: h,
            regions: polys
                .into_iter()
                .map(|p| LabeledRegion::from_polygon(DiseaseClass::Blast, p))
                .collect(),
        }
    }

    #[test]
    fn single_rectangle_leaf() {
        let rec = record(100, 80, vec![rect_poly(10.0, 20.0, 50.0, 30.0)]);
        let lw = image_leaf_width(&rec).unwrap();
        assert_eq!(lw.lfw, 10.0);
        assert_eq!(lw.lw, 10.0);
        assert_eq!(lw.leaf_count(), 1);
    }

    #[test]
    fn normalization_arithmetic() {
        assert_eq!(normalized_width(200.0, 4000, 3000), 5.0);
        assert_eq!(normalized_width(10.0, 100, 80), 10.0);
        assert_eq!(pixel_width(5.0, 4000, 3000), 200.0);
    }

    #[test]
    fn largest_leaf_wins() {
        let rec = record(
            200,
            200,
            vec![rect_poly(10.0, 10.0, 100.0, 18.0), rect_poly(10.0, 50.0, 150.0, 62.0)],
        );
        let lw = image_leaf_width(&rec).unwrap();
        assert_eq!(lw.per_leaf_widths, vec![8.0, 12.0]);
        assert_eq!(lw.lfw, 12.0);
    }

    #[test]
    fn removing_non_maximal_leaf_keeps_lfw() {
        let big = rect_poly(10.0, 50.0, 150.0, 62.0);
        let small = rect_poly(10.0, 10.0, 100.0, 18.0);
        let both = image_leaf_width(&record(200, 200, vec![small, big.clone()])).unwrap();
        let only = image_leaf_width(&record(200, 200, vec![big])).unwrap();
        assert_eq!(both.lfw, only.lfw);
    }

    #[test]
    fn no_polygons_is_an_error() {
        let mut rec = record(50, 50, vec![]);
        assert!(matches!(image_leaf_width(&rec), Err(Error::NoMeasurableLeaf(_))));
        rec.regions.push(LabeledRegion::from_bbox(
            DiseaseClass::Red,
            crate::annotations::BBox::new(1.0, 1.0, 20.0, 20.0).unwrap(),
        ));
        assert!(matches!(image_leaf_width(&rec), Err(Error::NoMeasurableLeaf(_))));
    }

    #[test]
    fn width_table_round_trip() {
        let rec = image_leaf_width(&record(100, 80, vec![rect_poly(10.0, 20.0, 50.0, 30.0)])).unwrap();
        let mut buf = Vec::new();
        write_width_table(&[rec], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "imageId,lfw_px,LW_percent,leaf_count\nimg,10.0000,10.0000,1\n");
        let rows = read_width_table(buf.as_slice()).unwrap();
        assert_eq!(rows[0].lw, 10.0);
        assert_eq!(rows[0].leaf_count, 1);
    }
}
