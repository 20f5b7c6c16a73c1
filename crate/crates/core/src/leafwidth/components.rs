use super::raster::BinaryMask;

/// Components smaller than this are treated as rasterization noise.
pub const DEFAULT_MIN_COMPONENT_PIXELS: usize = 16;

/// One 8-connected foreground region, as mask pixel coordinates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Component {
    pub pixels: Vec<(u32, u32)>,
}

impl Component {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Label 8-connected components, drop those under `min_pixels`, and return
/// the rest largest-first. Equal sizes keep raster-scan order of their first
/// pixel.
pub fn connected_components(mask: &BinaryMask, min_pixels: usize) -> Vec<Component> {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let bits = mask.bits();
    let mut visited = vec![false; bits.len()];
    let mut stack = Vec::new();
    let mut components = Vec::new();

    for start in 0..bits.len() {
        if !bits[start] || visited[start] {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        while let Some(idx) = stack.pop() {
            let (x, y) = (idx % w, idx / w);
            pixels.push((x as u32, y as u32));
            let (xlo, xhi) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (ylo, yhi) = (y.saturating_sub(1), (y + 1).min(h - 1));
            for ny in ylo..=yhi {
                for nx in xlo..=xhi {
                    let n = ny * w + nx;
                    if bits[n] && !visited[n] {
                        visited[n] = true;
                        stack.push(n);
                    }
                }
            }
        }
        if pixels.len() >= min_pixels {
            components.push(Component { pixels });
        }
    }

    // Stable sort keeps discovery (scan) order among equal sizes.
    components.sort_by_key(|c| std::cmp::Reverse(c.len()));
    components
}
