use serde::{Deserialize, Serialize};

use super::components::Component;
use crate::annotations::Point;
use crate::error::{Error, Result};

/// Rotated rectangle in pixels; `angle_deg` is the direction of the long
/// side in `[0, 180)`, measured from +x toward +y.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotatedRect {
    pub center: Point,
    pub long: f64,
    pub short: f64,
    pub angle_deg: f64,
}

impl RotatedRect {
    pub fn area(&self) -> f64 {
        self.long * self.short
    }
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Andrew's monotone chain on integer points. Returns the strictly convex
/// hull in counter-clockwise order (y-up sense), collinear points removed.
pub(crate) fn convex_hull(points: &[(i64, i64)]) -> Vec<(i64, i64)> {
    let mut pts = points.to_vec();
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<(i64, i64)> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    // The upper chain must not pop into the finished lower chain.
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Minimum-area enclosing rectangle of a strictly convex CCW polygon by
/// rotating calipers: one candidate per hull edge, with the three support
/// points advanced monotonically around the hull.
pub(crate) fn min_area_rect_of_hull(hull: &[(f64, f64)]) -> Option<RotatedRect> {
    let n = hull.len();
    if n < 3 {
        return None;
    }
    let at = |i: usize| hull[i % n];
    let dot = |a: (f64, f64), b: (f64, f64)| a.0 * b.0 + a.1 * b.1;
    let sub = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0, a.1 - b.1);

    let mut best: Option<(f64, RotatedRect)> = None;
    let (mut far, mut right, mut left) = (1usize, 1usize, 0usize);
    for i in 0..n {
        let origin = at(i);
        let edge = sub(at(i + 1), origin);
        let len = dot(edge, edge).sqrt();
        let u = (edge.0 / len, edge.1 / len);
        let normal = (-u.1, u.0);

        let mut guard = 0;
        while guard < n && dot(sub(at(far + 1), origin), normal) > dot(sub(at(far), origin), normal) {
            far += 1;
            guard += 1;
        }
        guard = 0;
        while guard < n && dot(at(right + 1), u) > dot(at(right), u) {
            right += 1;
            guard += 1;
        }
        if i == 0 {
            left = far;
        }
        guard = 0;
        while guard < n && dot(at(left + 1), u) < dot(at(left), u) {
            left += 1;
            guard += 1;
        }

        let lo = dot(sub(at(left), origin), u);
        let hi = dot(sub(at(right), origin), u);
        let depth = dot(sub(at(far), origin), normal);
        let along = hi - lo;
        let area = along * depth;
        if best.as_ref().is_none_or(|(a, _)| area < *a) {
            let mid_u = (lo + hi) / 2.0;
            let mid_n = depth / 2.0;
            let center = Point::new(
                origin.0 + u.0 * mid_u + normal.0 * mid_n,
                origin.1 + u.1 * mid_u + normal.1 * mid_n,
            );
            let (long, short, dir) = if along >= depth {
                (along, depth, u)
            } else {
                (depth, along, normal)
            };
            let angle_deg = dir.1.atan2(dir.0).to_degrees().rem_euclid(180.0);
            best = Some((
                area,
                RotatedRect {
                    center,
                    long,
                    short,
                    angle_deg: if angle_deg >= 180.0 { 0.0 } else { angle_deg },
                },
            ));
        }
    }
    best.map(|(_, r)| r)
}

/// Fit the minimum-area rotated rectangle around a pixel component.
///
/// The rectangle is fitted to the convex hull of pixel centers, then each
/// side is grown by one pixel so the extent counts whole pixels: a filled
/// 40x10 block measures exactly 40 by 10.
pub fn fit_min_area_rect(component: &Component) -> Result<RotatedRect> {
    let points: Vec<(i64, i64)> = component.pixels.iter().map(|&(x, y)| (x as i64, y as i64)).collect();
    let hull = convex_hull(&points);
    if hull.len() < 3 {
        return Err(Error::ZeroWidthComponent);
    }
    let hull: Vec<(f64, f64)> = hull.iter().map(|&(x, y)| (x as f64, y as f64)).collect();
    let rect = min_area_rect_of_hull(&hull).ok_or(Error::ZeroWidthComponent)?;
    Ok(RotatedRect {
        center: Point::new(rect.center.x + 0.5, rect.center.y + 0.5),
        long: rect.long + 1.0,
        short: rect.short + 1.0,
        angle_deg: rect.angle_deg,
    })
}
