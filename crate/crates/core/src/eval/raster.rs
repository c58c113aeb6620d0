use crate::data::Lane;
use crate::error::{Error, Result};

/// Binary lane mask stored as sorted, distinct linear pixel indices
/// (`y * width + x`).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LaneMask {
    pixels: Vec<u32>,
}

impl LaneMask {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[u32] {
        &self.pixels
    }

    pub fn contains(&self, x: u32, y: u32, canvas_width: u32) -> bool {
        self.pixels.binary_search(&(y * canvas_width + x)).is_ok()
    }

    pub fn intersection_area(&self, other: &LaneMask) -> usize {
        let (mut i, mut j, mut n) = (0, 0, 0);
        let (a, b) = (&self.pixels, &other.pixels);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }

    /// Intersection over union; 0 when both masks are empty.
    pub fn iou(&self, other: &LaneMask) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Squared distance from `p` to the segment `a`-`b`.
pub(crate) fn dist2_to_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (ex, ey) = (a[0] + t * dx - p[0], a[1] + t * dy - p[1]);
    ex * ex + ey * ey
}

/// Rasterizes a lane as the set of pixels whose centers `(x + 0.5, y + 0.5)`
/// lie within `stroke_width / 2` of the lane polyline, clipped to `canvas`.
pub fn rasterize_lane(lane: &Lane, stroke_width: f64, canvas: (u32, u32)) -> Result<LaneMask> {
    let points = &lane.points;
    if points.len() < 2 {
        return Err(Error::DegenerateLane(format!("{} point(s)", points.len())));
    }
    if points.iter().all(|p| p == &points[0]) {
        return Err(Error::DegenerateLane("all points coincide".into()));
    }
    if !(stroke_width >= 1.0) {
        return Err(Error::Config(format!("stroke width {stroke_width} < 1")));
    }
    let (w, h) = canvas;
    let r = stroke_width / 2.0;
    let r2 = r * r;
    let mut pixels = Vec::new();

    for seg in points.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let y_lo = a[1].min(b[1]) - r;
        let y_hi = a[1].max(b[1]) + r;
        let row_lo = (y_lo - 0.5).ceil().max(0.0);
        let row_hi = (y_hi - 0.5).floor().min(h as f64 - 1.0);
        if row_lo > row_hi {
            continue;
        }
        for row in row_lo as u32..=row_hi as u32 {
            let yc = row as f64 + 0.5;
            // Any pixel within r of the segment is within r (in x) of a
            // segment point whose y lies in [yc - r, yc + r].
            let Some((xa, xb)) = segment_x_range_in_band(a, b, yc - r, yc + r) else {
                continue;
            };
            let col_lo = (xa - r - 0.5).ceil().max(0.0);
            let col_hi = (xb + r - 0.5).floor().min(w as f64 - 1.0);
            if col_lo > col_hi {
                continue;
            }
            for col in col_lo as u32..=col_hi as u32 {
                let p = [col as f64 + 0.5, yc];
                if dist2_to_segment(p, a, b) <= r2 {
                    pixels.push(row * w + col);
                }
            }
        }
    }
    pixels.sort_unstable();
    pixels.dedup();
    Ok(LaneMask { pixels })
}

/// x-extent of the part of segment `a`-`b` with `y` in `[lo, hi]`.
fn segment_x_range_in_band(a: [f64; 2], b: [f64; 2], lo: f64, hi: f64) -> Option<(f64, f64)> {
    let dy = b[1] - a[1];
    let (t0, t1) = if dy == 0.0 {
        if a[1] < lo || a[1] > hi {
            return None;
        }
        (0.0, 1.0)
    } else {
        let ta = (lo - a[1]) / dy;
        let tb = (hi - a[1]) / dy;
        let (t0, t1) = (ta.min(tb).max(0.0), ta.max(tb).min(1.0));
        if t0 > t1 {
            return None;
        }
        (t0, t1)
    };
    let x0 = a[0] + t0 * (b[0] - a[0]);
    let x1 = a[0] + t1 * (b[0] - a[0]);
    Some((x0.min(x1), x0.max(x1)))
}

/// IoU of the rasterized masks of two lanes.
pub fn lane_iou(a: &Lane, b: &Lane, stroke_width: f64, canvas: (u32, u32)) -> Result<f64> {
    let ma = rasterize_lane(a, stroke_width, canvas)?;
    let mb = rasterize_lane(b, stroke_width, canvas)?;
    Ok(ma.iou(&mb))
}
