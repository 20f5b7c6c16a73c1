use crate::annotations::Polygon;

/// Foreground bit grid, row-major. `true` is foreground.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub(crate) fn bits(&self) -> &[bool] {
        &self.bits
    }
}

/// Pixel rectangle `[x0, x0 + width) x [y0, y0 + height)` of an image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct PixelWindow {
    pub x0: u32,
    pub y0: u32,
    pub width: u32,
    pub height: u32,
}

impl PixelWindow {
    /// Smallest window holding every pixel whose center may fall inside `p`.
    pub fn around(p: &Polygon, w: u32, h: u32) -> Self {
        let b = p.bbox();
        let x0 = (b.xmin.floor().max(0.0) as u32).min(w);
        let y0 = (b.ymin.floor().max(0.0) as u32).min(h);
        let x1 = (b.xmax.ceil().max(0.0) as u32).min(w);
        let y1 = (b.ymax.ceil().max(0.0) as u32).min(h);
        Self {
            x0,
            y0,
            width: x1 - x0,
            height: y1 - y0,
        }
    }
}

/// Scanline even-odd fill at full image resolution: a pixel is foreground
/// when its center lies inside the polygon.
pub fn rasterize_polygon(p: &Polygon, w: u32, h: u32) -> BinaryMask {
    rasterize_window(
        p,
        PixelWindow {
            x0: 0,
            y0: 0,
            width: w,
            height: h,
        },
    )
}

/// Same fill restricted to `window`; the returned mask is window-sized and
/// its pixel `(0, 0)` is image pixel `(window.x0, window.y0)`.
pub(crate) fn rasterize_window(p: &Polygon, window: PixelWindow) -> BinaryMask {
    let mut mask = BinaryMask::new(window.width, window.height);
    let mut crossings: Vec<f64> = Vec::new();
    for row in 0..window.height {
        let yc = (window.y0 + row) as f64 + 0.5;
        crossings.clear();
        for (a, b) in p.edges() {
            // Half-open rule: each vertex counts for exactly one of its edges.
            if (a.y <= yc) != (b.y <= yc) {
                crossings.push(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
        crossings.sort_by(f64::total_cmp);
        for span in crossings.chunks_exact(2) {
            // Pixel i is inside when span[0] <= i + 0.5 < span[1].
            let first = (span[0] - 0.5).ceil().max(window.x0 as f64);
            let end = (span[1] - 0.5).ceil().min((window.x0 + window.width) as f64);
            let mut x = first as i64;
            while (x as f64) < end {
                mask.set(x as u32 - window.x0, row, true);
                x += 1;
            }
        }
    }
    mask
}
