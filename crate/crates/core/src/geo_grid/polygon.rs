//! Simple polygons and their overlap with grid cells.

use super::{GeoGrid, GeoPoint, Xy};
use crate::error::{Error, Result};

/// A simple polygon without holes, stored as an open ring of geographic
/// vertices (the closing vertex is not repeated).
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    ring: Vec<GeoPoint>,
}

impl Polygon {
    /// Validates and stores a ring. A trailing vertex equal to the first is
    /// dropped, so both open and GeoJSON-style closed rings are accepted.
    pub fn new(mut ring: Vec<GeoPoint>) -> Result<Self> {
        if ring.len() >= 2 && ring.first() == ring.last() {
            ring.pop();
        }
        if ring.len() < 3 {
            return Err(Error::InvalidGeometry(format!(
                "polygon needs at least 3 vertices, got {}",
                ring.len()
            )));
        }
        if ring.iter().any(|p| !p.lat.is_finite() || !p.lon.is_finite()) {
            return Err(Error::InvalidGeometry("polygon has non-finite vertices".into()));
        }
        let pts: Vec<Xy> = ring.iter().map(|p| Xy::new(p.lon, p.lat)).collect();
        if shoelace(&pts).abs() <= 0.0 {
            return Err(Error::InvalidGeometry("polygon has zero area".into()));
        }
        if let Some((a, b)) = first_self_intersection(&pts) {
            return Err(Error::InvalidGeometry(format!(
                "polygon is self-intersecting (edges {a} and {b})"
            )));
        }
        Ok(Self { ring })
    }

    pub fn ring(&self) -> &[GeoPoint] {
        &self.ring
    }

    pub fn project(&self, grid: &GeoGrid) -> Vec<Xy> {
        self.ring.iter().map(|p| grid.project(p)).collect()
    }

    /// Even-odd point-in-polygon test in degree space.
    pub fn contains(&self, p: &GeoPoint) -> bool {
        let n = self.ring.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let (a, b) = (self.ring[i], self.ring[j]);
            if (a.lat > p.lat) != (b.lat > p.lat) {
                let lon_cross = (b.lon - a.lon) * (p.lat - a.lat) / (b.lat - a.lat) + a.lon;
                if p.lon < lon_cross {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }
}

/// Area of the polygon in square meters under the grid's projection.
pub fn polygon_area_m2(grid: &GeoGrid, polygon: &Polygon) -> f64 {
    shoelace(&polygon.project(grid)).abs()
}

/// Fraction of the polygon's area falling in each cell, as `(cell, fraction)`
/// pairs in ascending cell order. Cells with zero overlap are omitted; the
/// fractions sum to the share of the polygon inside the bbox.
pub fn polygon_cell_overlap(grid: &GeoGrid, polygon: &Polygon) -> Vec<(usize, f64)> {
    let pts = polygon.project(grid);
    let total = shoelace(&pts).abs();
    let (mut min, mut max) = (pts[0], pts[0]);
    for p in &pts[1..] {
        min = Xy::new(min.x.min(p.x), min.y.min(p.y));
        max = Xy::new(max.x.max(p.x), max.y.max(p.y));
    }
    let Some((c0, c1, r0, r1)) = grid.cell_span(min, max) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for row in r0..=r1 {
        for col in c0..=c1 {
            let l = grid.index(row, col);
            let (lo, hi) = grid.cell_rect_m(l);
            let clipped = clip_to_rect(&pts, lo, hi);
            if clipped.len() < 3 {
                continue;
            }
            let area = shoelace(&clipped).abs();
            if area > 0.0 {
                out.push((l, area / total));
            }
        }
    }
    out
}

/// Signed shoelace area; positive for counter-clockwise rings.
pub(crate) fn shoelace(pts: &[Xy]) -> f64 {
    let n = pts.len();
    let mut acc = 0.0;
    for i in 0..n {
        let (a, b) = (pts[i], pts[(i + 1) % n]);
        acc += a.x * b.y - b.x * a.y;
    }
    0.5 * acc
}

/// Sutherland-Hodgman clipping against an axis-aligned rectangle. Concave
/// subjects may produce degenerate connecting edges, which carry no area.
fn clip_to_rect(subject: &[Xy], lo: Xy, hi: Xy) -> Vec<Xy> {
    #[derive(Clone, Copy)]
    enum Side {
        Left,
        Right,
        Bottom,
        Top,
    }
    let inside = |p: &Xy, side: Side| match side {
        Side::Left => p.x >= lo.x,
        Side::Right => p.x <= hi.x,
        Side::Bottom => p.y >= lo.y,
        Side::Top => p.y <= hi.y,
    };
    let intersect = |a: &Xy, b: &Xy, side: Side| -> Xy {
        match side {
            Side::Left | Side::Right => {
                let x = if matches!(side, Side::Left) { lo.x } else { hi.x };
                let t = (x - a.x) / (b.x - a.x);
                Xy::new(x, a.y + t * (b.y - a.y))
            }
            Side::Bottom | Side::Top => {
                let y = if matches!(side, Side::Bottom) { lo.y } else { hi.y };
                let t = (y - a.y) / (b.y - a.y);
                Xy::new(a.x + t * (b.x - a.x), y)
            }
        }
    };

    let mut output = subject.to_vec();
    for side in [Side::Left, Side::Right, Side::Bottom, Side::Top] {
        if output.is_empty() {
            break;
        }
        let input = std::mem::take(&mut output);
        let mut prev = *input.last().unwrap();
        for cur in input {
            let (cur_in, prev_in) = (inside(&cur, side), inside(&prev, side));
            if cur_in {
                if !prev_in {
                    output.push(intersect(&prev, &cur, side));
                }
                output.push(cur);
            } else if prev_in {
                output.push(intersect(&prev, &cur, side));
            }
            prev = cur;
        }
    }
    output
}

fn orient(a: &Xy, b: &Xy, c: &Xy) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(a: &Xy, b: &Xy, p: &Xy) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

fn segments_touch(a: &Xy, b: &Xy, c: &Xy, d: &Xy) -> bool {
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b));
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

fn first_self_intersection(pts: &[Xy]) -> Option<(usize, usize)> {
    let n = pts.len();
    for i in 0..n {
        let (a, b) = (pts[i], pts[(i + 1) % n]);
        if a == b {
            return Some((i, i));
        }
        for j in i + 1..n {
            let (c, d) = (pts[j], pts[(j + 1) % n]);
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                // shared vertex is fine; folding back along the same line is not
                let shared = if j == i + 1 { b } else { a };
                let (p, q) = if j == i + 1 { (a, d) } else { (b, c) };
                if orient(&p, &shared, &q) == 0.0 {
                    let dot = (p.x - shared.x) * (q.x - shared.x) + (p.y - shared.y) * (q.y - shared.y);
                    if dot > 0.0 {
                        return Some((i, j));
                    }
                }
                continue;
            }
            if segments_touch(&a, &b, &c, &d) {
                return Some((i, j));
            }
        }
    }
    None
}
