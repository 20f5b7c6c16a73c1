//! Polygon-annotated image records and the LabelMe-style document reader.
//!
//! Coordinates are pixels with x to the right and y down. A record is
//! immutable once built; every constructor validates its invariants.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The eight disease labels, in their stable index order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DiseaseClass {
    Blast,
    Blight,
    #[serde(rename = "BSP")]
    Bsp,
    #[serde(rename = "NBS")]
    Nbs,
    Orange,
    Red,
    #[serde(rename = "RGSV")]
    Rgsv,
    Streak,
}

/// Lower-cased, whitespace-normalized aliases accepted for each class.
const ALIASES: &[(&str, DiseaseClass)] = &[
    ("blast", DiseaseClass::Blast),
    ("rice blast", DiseaseClass::Blast),
    ("leaf blast", DiseaseClass::Blast),
    ("blight", DiseaseClass::Blight),
    ("bacterial blight", DiseaseClass::Blight),
    ("bacterial leaf blight", DiseaseClass::Blight),
    ("blb", DiseaseClass::Blight),
    ("bsp", DiseaseClass::Bsp),
    ("brown spot", DiseaseClass::Bsp),
    ("brownspot", DiseaseClass::Bsp),
    ("nbs", DiseaseClass::Nbs),
    ("narrow brown spot", DiseaseClass::Nbs),
    ("narrow brown leaf spot", DiseaseClass::Nbs),
    ("orange", DiseaseClass::Orange),
    ("orange leaf", DiseaseClass::Orange),
    ("red", DiseaseClass::Red),
    ("red stripe", DiseaseClass::Red),
    ("red strip", DiseaseClass::Red),
    ("rgsv", DiseaseClass::Rgsv),
    ("rice grassy stunt virus", DiseaseClass::Rgsv),
    ("grassy stunt", DiseaseClass::Rgsv),
    ("streak", DiseaseClass::Streak),
    ("bacterial leaf streak", DiseaseClass::Streak),
    ("bls", DiseaseClass::Streak),
];

impl DiseaseClass {
    pub const ALL: [DiseaseClass; 8] = [
        DiseaseClass::Blast,
        DiseaseClass::Blight,
        DiseaseClass::Bsp,
        DiseaseClass::Nbs,
        DiseaseClass::Orange,
        DiseaseClass::Red,
        DiseaseClass::Rgsv,
        DiseaseClass::Streak,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    /// Canonical display name.
    pub fn name(self) -> &'static str {
        match self {
            DiseaseClass::Blast => "Blast",
            DiseaseClass::Blight => "Blight",
            DiseaseClass::Bsp => "BSP",
            DiseaseClass::Nbs => "NBS",
            DiseaseClass::Orange => "Orange",
            DiseaseClass::Red => "Red",
            DiseaseClass::Rgsv => "RGSV",
            DiseaseClass::Streak => "Streak",
        }
    }

    /// Resolve a free-form label. Matching ignores case, surrounding
    /// whitespace, and treats `_` and `-` as spaces.
    pub fn from_label(label: &str) -> Result<Self> {
        let normalized = label
            .trim()
            .to_lowercase()
            .replace(['_', '-'], " ")
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        ALIASES
            .iter()
            .find(|(alias, _)| *alias == normalized)
            .map(|(_, class)| *class)
            .ok_or_else(|| Error::UnknownClass(label.to_string()))
    }
}

impl fmt::Display for DiseaseClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DiseaseClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_label(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Axis-aligned box in pixels, `xmin < xmax` and `ymin < ymax`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self> {
        let finite = [xmin, ymin, xmax, ymax].iter().all(|v| v.is_finite());
        if !finite || xmin >= xmax || ymin >= ymax {
            return Err(Error::InvalidBox(format!("({xmin}, {ymin}, {xmax}, {ymax})")));
        }
        Ok(Self { xmin, ymin, xmax, ymax })
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains_point(&self, p: Point) -> bool {
        p.x >= self.xmin && p.x <= self.xmax && p.y >= self.ymin && p.y <= self.ymax
    }

    /// Overlap with `other`, or `None` when the two do not share positive area.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let xmin = self.xmin.max(other.xmin);
        let ymin = self.ymin.max(other.ymin);
        let xmax = self.xmax.min(other.xmax);
        let ymax = self.ymax.min(other.ymax);
        (xmin < xmax && ymin < ymax).then_some(BBox { xmin, ymin, xmax, ymax })
    }

    /// Intersection over union; 0 for disjoint boxes.
    pub fn iou(&self, other: &BBox) -> f64 {
        match self.intersection(other) {
            Some(inter) => {
                let inter = inter.area();
                inter / (self.area() + other.area() - inter)
            }
            None => 0.0,
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            xmin: self.xmin + dx,
            ymin: self.ymin + dy,
            xmax: self.xmax + dx,
            ymax: self.ymax + dy,
        }
    }

    /// Lexicographic order on `(xmin, ymin, xmax, ymax)`, used for tie-breaks.
    pub fn lex_cmp(&self, other: &BBox) -> std::cmp::Ordering {
        self.xmin
            .total_cmp(&other.xmin)
            .then(self.ymin.total_cmp(&other.ymin))
            .then(self.xmax.total_cmp(&other.xmax))
            .then(self.ymax.total_cmp(&other.ymax))
    }
}

/// Closed polygon with at least three vertices and non-zero area.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point>", into = "Vec<Point>")]
pub struct Polygon {
    vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::DegeneratePolygon(format!(
                "{} vertices, at least 3 required",
                vertices.len()
            )));
        }
        if vertices.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::DegeneratePolygon("non-finite vertex".into()));
        }
        let polygon = Self { vertices };
        if polygon.signed_area() == 0.0 {
            return Err(Error::DegeneratePolygon("zero enclosed area".into()));
        }
        Ok(polygon)
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    /// Shoelace area; positive for counter-clockwise order in a y-up frame.
    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        let twice: f64 = (0..n)
            .map(|i| {
                let a = self.vertices[i];
                let b = self.vertices[(i + 1) % n];
                a.x * b.y - b.x * a.y
            })
            .sum();
        twice / 2.0
    }

    pub fn bbox(&self) -> BBox {
        polygon_to_bbox(self)
    }

    /// Edges as `(start, end)` pairs, closing back to the first vertex.
    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn map_points(&self, f: impl Fn(Point) -> Point) -> Result<Polygon> {
        Polygon::new(self.vertices.iter().copied().map(f).collect())
    }
}

impl TryFrom<Vec<Point>> for Polygon {
    type Error = Error;

    fn try_from(vertices: Vec<Point>) -> Result<Self> {
        Polygon::new(vertices)
    }
}

impl From<Polygon> for Vec<Point> {
    fn from(p: Polygon) -> Self {
        p.vertices
    }
}

/// Tight axis-aligned hull of the polygon's vertices.
pub fn polygon_to_bbox(p: &Polygon) -> BBox {
    let mut bbox = BBox {
        xmin: f64::INFINITY,
        ymin: f64::INFINITY,
        xmax: f64::NEG_INFINITY,
        ymax: f64::NEG_INFINITY,
    };
    for v in p.vertices() {
        bbox.xmin = bbox.xmin.min(v.x);
        bbox.ymin = bbox.ymin.min(v.y);
        bbox.xmax = bbox.xmax.max(v.x);
        bbox.ymax = bbox.ymax.max(v.y);
    }
    bbox
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledRegion {
    pub class: DiseaseClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polygon: Option<Polygon>,
    pub bbox: BBox,
}

impl LabeledRegion {
    pub fn from_polygon(class: DiseaseClass, polygon: Polygon) -> Self {
        let bbox = polygon.bbox();
        Self {
            class,
            polygon: Some(polygon),
            bbox,
        }
    }

    pub fn from_bbox(class: DiseaseClass, bbox: BBox) -> Self {
        Self {
            class,
            polygon: None,
            bbox,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub path: String,
    pub width: u32,
    pub height: u32,
    pub regions: Vec<LabeledRegion>,
}

impl ImageRecord {
    pub fn longest_side(&self) -> u32 {
        self.width.max(self.height)
    }

    /// The most frequent region class; ties go to the lower class index.
    /// `None` for negative images.
    pub fn primary_class(&self) -> Option<DiseaseClass> {
        let mut counts = [0usize; 8];
        for r in &self.regions {
            counts[r.class.index()] += 1;
        }
        let (best, &count) = counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))?;
        (count > 0).then(|| DiseaseClass::ALL[best])
    }

    /// Distinct classes present, in index order.
    pub fn classes(&self) -> Vec<DiseaseClass> {
        let mut classes: Vec<_> = self.regions.iter().map(|r| r.class).collect();
        classes.sort();
        classes.dedup();
        classes
    }
}

// LabelMe document layout. Unknown fields are ignored.

#[derive(Debug, Deserialize, Serialize)]
struct LabelMeDoc {
    #[serde(rename = "imagePath")]
    image_path: Option<String>,
    #[serde(rename = "imageWidth")]
    image_width: Option<u64>,
    #[serde(rename = "imageHeight")]
    image_height: Option<u64>,
    #[serde(default)]
    shapes: Vec<LabelMeShape>,
}

#[derive(Debug, Deserialize, Serialize)]
struct LabelMeShape {
    label: String,
    #[serde(default)]
    shape_type: Option<String>,
    points: Vec<[f64; 2]>,
}

fn image_id_from_path(path: &str) -> Option<String> {
    let name = path.rsplit(['/', '\\']).next()?;
    let stem = match name.rfind('.') {
        Some(0) | None => name,
        Some(dot) => &name[..dot],
    };
    (!stem.is_empty()).then(|| stem.to_string())
}

fn clamp_point(p: [f64; 2], w: f64, h: f64, clamped: &mut bool) -> Point {
    let x = p[0].clamp(0.0, w);
    let y = p[1].clamp(0.0, h);
    if x != p[0] || y != p[1] {
        *clamped = true;
    }
    Point::new(x, y)
}

/// Parse one LabelMe-style annotation document into a validated record.
///
/// The record id is the file stem of `imagePath`. Polygon vertices outside
/// the image are clamped to its bounds; rectangle shapes yield a region
/// without a polygon.
pub fn parse_annotation(document: &[u8]) -> Result<ImageRecord> {
    let doc: LabelMeDoc = serde_json::from_slice(document).map_err(|e| Error::MalformedAnnotation(e.to_string()))?;
    let path = doc
        .image_path
        .ok_or_else(|| Error::MalformedAnnotation("missing imagePath".into()))?;
    let id = image_id_from_path(&path)
        .ok_or_else(|| Error::MalformedAnnotation(format!("cannot derive id from {path:?}")))?;
    let (width, height) = match (doc.image_width, doc.image_height) {
        (Some(w), Some(h)) if w >= 1 && h >= 1 && w <= u32::MAX as u64 && h <= u32::MAX as u64 => (w as u32, h as u32),
        _ => return Err(Error::MissingDimensions),
    };
    let (wf, hf) = (width as f64, height as f64);

    let mut regions = Vec::with_capacity(doc.shapes.len());
    for (i, shape) in doc.shapes.iter().enumerate() {
        let class = DiseaseClass::from_label(&shape.label)?;
        let mut clamped = false;
        let points: Vec<Point> = shape
            .points
            .iter()
            .map(|&p| clamp_point(p, wf, hf, &mut clamped))
            .collect();
        if clamped {
            log::warn!("{id}: shape {i} has vertices outside the image; clamped");
        }
        let region = match shape.shape_type.as_deref().unwrap_or("polygon") {
            "polygon" => LabeledRegion::from_polygon(class, Polygon::new(points)?),
            "rectangle" => {
                if points.len() != 2 {
                    return Err(Error::MalformedAnnotation(format!(
                        "{id}: rectangle shape {i} has {} points, expected 2",
                        points.len()
                    )));
                }
                let (a, b) = (points[0], points[1]);
                let bbox = BBox::new(a.x.min(b.x), a.y.min(b.y), a.x.max(b.x), a.y.max(b.y))
                    .map_err(|_| Error::DegeneratePolygon(format!("{id}: rectangle {i} has zero area")))?;
                LabeledRegion::from_bbox(class, bbox)
            }
            other => {
                return Err(Error::MalformedAnnotation(format!(
                    "{id}: unsupported shape type {other:?}"
                )))
            }
        };
        regions.push(region);
    }

    Ok(ImageRecord {
        id,
        path,
        width,
        height,
        regions,
    })
}

/// Serialize a record back into the annotation document layout.
pub fn to_annotation_json(rec: &ImageRecord) -> Result<Vec<u8>> {
    let shapes = rec
        .regions
        .iter()
        .map(|r| match &r.polygon {
            Some(p) => LabelMeShape {
                label: r.class.name().to_string(),
                shape_type: Some("polygon".into()),
                points: p.vertices().iter().map(|v| [v.x, v.y]).collect(),
            },
            None => LabelMeShape {
                label: r.class.name().to_string(),
                shape_type: Some("rectangle".into()),
                points: vec![[r.bbox.xmin, r.bbox.ymin], [r.bbox.xmax, r.bbox.ymax]],
            },
        })
        .collect();
    let doc = LabelMeDoc {
        image_path: Some(rec.path.clone()),
        image_width: Some(rec.width as u64),
        image_height: Some(rec.height as u64),
        shapes,
    };
    Ok(serde_json::to_vec_pretty(&doc)?)
}
