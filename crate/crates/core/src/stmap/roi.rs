//! Face partition into 15 regions of interest.
//!
//! The jawline (points 0-16) and eyebrows (17-26) span a convex hull. The
//! hull is cut at the lower eyebrow boundary so the forehead is excluded,
//! and the bounding box of what remains is split into a 5x3 grid. Region
//! `r = row * 5 + col`, rows top to bottom, columns left to right.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::ingest::{Landmarks, Point};

pub const ROI_COLS: usize = 5;
pub const ROI_ROWS: usize = 3;
pub const ROI_COUNT: usize = ROI_COLS * ROI_ROWS;

/// Label used in region masks for pixels outside every region.
pub const NO_REGION: u8 = u8::MAX;

const AREA_EPS: f64 = 1e-9;

pub type Polygon = Vec<Point>;

#[derive(Debug, Clone, PartialEq)]
pub struct RoiLayout {
    /// Face hull below the eyebrow line, counter-clockwise (y down).
    pub face: Polygon,
    /// One convex polygon per region, possibly empty when the hull misses a cell.
    pub regions: Vec<Polygon>,
    origin: Point,
    cell_w: f64,
    cell_h: f64,
}

/// Builds the 15-region layout for one frame of landmarks.
pub fn roi_layout(landmarks: &Landmarks) -> Result<RoiLayout> {
    let outline: Vec<Point> = landmarks[..27].to_vec();
    let hull = convex_hull(&outline);
    if hull.len() < 3 || polygon_area(&hull) <= AREA_EPS {
        return Err(Error::DegenerateHull("jaw and brow landmarks are collinear".into()));
    }
    let brow_line = landmarks[17..27]
        .iter()
        .map(|p| p.y)
        .fold(f64::NEG_INFINITY, f64::max);
    let face = clip_half_plane(&hull, |p| p.y - brow_line, brow_line, Axis::Y);
    if face.len() < 3 || polygon_area(&face) <= AREA_EPS {
        return Err(Error::DegenerateHull("no face area below the eyebrow line".into()));
    }

    let (min, max) = bounds(&face);
    let cell_w = (max.x - min.x) / ROI_COLS as f64;
    let cell_h = (max.y - min.y) / ROI_ROWS as f64;
    let regions = (0..ROI_COUNT)
        .map(|r| {
            let (row, col) = (r / ROI_COLS, r % ROI_COLS);
            let x0 = min.x + col as f64 * cell_w;
            let y0 = min.y + row as f64 * cell_h;
            let x1 = if col + 1 == ROI_COLS { max.x } else { x0 + cell_w };
            let y1 = if row + 1 == ROI_ROWS { max.y } else { y0 + cell_h };
            let mut poly = clip_half_plane(&face, |p| p.x - x0, x0, Axis::X);
            poly = clip_half_plane(&poly, |p| x1 - p.x, x1, Axis::X);
            poly = clip_half_plane(&poly, |p| p.y - y0, y0, Axis::Y);
            clip_half_plane(&poly, |p| y1 - p.y, y1, Axis::Y)
        })
        .collect();

    Ok(RoiLayout {
        face,
        regions,
        origin: min,
        cell_w,
        cell_h,
    })
}

impl RoiLayout {
    /// Region containing the point, if it lies inside the face hull.
    ///
    /// Cells are half-open, so every point maps to at most one region.
    pub fn region_of(&self, p: Point) -> Option<usize> {
        if !contains_convex(&self.face, p) {
            return None;
        }
        let col = ((p.x - self.origin.x) / self.cell_w).floor();
        let row = ((p.y - self.origin.y) / self.cell_h).floor();
        let col = (col.max(0.0) as usize).min(ROI_COLS - 1);
        let row = (row.max(0.0) as usize).min(ROI_ROWS - 1);
        Some(row * ROI_COLS + col)
    }

    /// Per-pixel region labels for a `width x height` frame, sampled at
    /// pixel centres. Pixels outside the face hold [`NO_REGION`].
    pub fn mask(&self, width: usize, height: usize) -> Array2<u8> {
        let mut mask = Array2::from_elem((height, width), NO_REGION);
        let (min, max) = bounds(&self.face);
        let y_lo = (min.y - 0.5).floor().max(0.0) as usize;
        let y_hi = ((max.y - 0.5).ceil().max(0.0) as usize + 1).min(height);
        let x_lo = (min.x - 0.5).floor().max(0.0) as usize;
        let x_hi = ((max.x - 0.5).ceil().max(0.0) as usize + 1).min(width);
        for y in y_lo..y_hi {
            for x in x_lo..x_hi {
                if let Some(r) = self.region_of(Point::new(x as f64 + 0.5, y as f64 + 0.5)) {
                    mask[(y, x)] = r as u8;
                }
            }
        }
        mask
    }

    /// Upper edge of the face area (the eyebrow line).
    pub fn top(&self) -> f64 {
        self.origin.y
    }
}

#[derive(Clone, Copy)]
enum Axis {
    X,
    Y,
}

/// Sutherland-Hodgman clip keeping points where `side(p) >= 0`. The clip
/// boundary is the axis-aligned line `coord == at`, which lets intersection
/// points land exactly on it.
fn clip_half_plane(poly: &[Point], side: impl Fn(&Point) -> f64, at: f64, axis: Axis) -> Polygon {
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let cur = poly[i];
        let next = poly[(i + 1) % poly.len()];
        let (sc, sn) = (side(&cur), side(&next));
        if sc >= 0.0 {
            out.push(cur);
        }
        if (sc >= 0.0) != (sn >= 0.0) {
            let t = sc / (sc - sn);
            let p = match axis {
                Axis::X => Point::new(at, cur.y + t * (next.y - cur.y)),
                Axis::Y => Point::new(cur.x + t * (next.x - cur.x), at),
            };
            out.push(p);
        }
    }
    out.dedup();
    if out.len() > 1 && out.first() == out.last() {
        out.pop();
    }
    out
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Andrew's monotone chain; returns vertices without collinear points.
pub fn convex_hull(points: &[Point]) -> Polygon {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Unsigned shoelace area.
pub fn polygon_area(poly: &[Point]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let twice: f64 = (0..poly.len())
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
            a.x * b.y - b.x * a.y
        })
        .sum();
    twice.abs() / 2.0
}

fn contains_convex(poly: &[Point], p: Point) -> bool {
    let mut sign = 0.0f64;
    for i in 0..poly.len() {
        let c = cross(poly[i], poly[(i + 1) % poly.len()], p);
        if c.abs() <= 1e-12 {
            continue;
        }
        if sign == 0.0 {
            sign = c.signum();
        } else if c.signum() != sign {
            return false;
        }
    }
    true
}

fn bounds(poly: &[Point]) -> (Point, Point) {
    poly.iter().fold(
        (
            Point::new(f64::INFINITY, f64::INFINITY),
            Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        ),
        |(lo, hi), p| {
            (
                Point::new(lo.x.min(p.x), lo.y.min(p.y)),
                Point::new(hi.x.max(p.x), hi.y.max(p.y)),
            )
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::synth::synthetic_face;

    #[test]
    fn square_face_tiles_below_brow_box() {
        let layout = roi_layout(&synthetic_face(64, 64)).unwrap();
        let face_area = polygon_area(&layout.face);
        let total: f64 = layout.regions.iter().map(|r| polygon_area(r)).sum();
        assert!((face_area - total).abs() < 1e-9);
        for r in &layout.regions {
            assert!((polygon_area(r) - face_area / 15.0).abs() < 1e-9);
        }
        let mask = layout.mask(64, 64);
        for r in 0..ROI_COUNT as u8 {
            assert!(mask.iter().any(|&m| m == r), "region {r} has no pixels");
        }
    }

    #[test]
    fn regions_exclude_forehead() {
        let pts = synthetic_face(64, 64);
        let brow = pts[17..27].iter().map(|p| p.y).fold(f64::MIN, f64::max);
        let layout = roi_layout(&pts).unwrap();
        for poly in &layout.regions {
            assert!(poly.iter().all(|p| p.y >= brow - 1e-12));
        }
    }

    #[test]
    fn slanted_face_clips_at_lowest_brow_point() {
        let mut pts = synthetic_face(100, 100);
        for (i, p) in pts[17..27].iter_mut().enumerate() {
            p.y -= i as f64;
        }
        let brow = pts[17..27].iter().map(|p| p.y).fold(f64::MIN, f64::max);
        let layout = roi_layout(&pts).unwrap();
        assert!((layout.top() - brow).abs() < 1e-12);
    }

    #[test]
    fn collinear_landmarks_rejected() {
        let pts: Landmarks = std::array::from_fn(|i| Point::new(i as f64, 2.0 * i as f64));
        assert!(matches!(roi_layout(&pts), Err(Error::DegenerateHull(_))));
    }

    #[test]
    fn translation_moves_every_polygon() {
        let pts = synthetic_face(80, 72);
        let (dx, dy) = (3.25, -1.5);
        let moved = pts.map(|p| Point::new(p.x + dx, p.y + dy));
        let a = roi_layout(&pts).unwrap();
        let b = roi_layout(&moved).unwrap();
        for (pa, pb) in a.regions.iter().zip(&b.regions) {
            assert_eq!(pa.len(), pb.len());
            for (p, q) in pa.iter().zip(pb) {
                assert!((p.x + dx - q.x).abs() < 1e-9 && (p.y + dy - q.y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn hull_of_square_with_interior_points() {
        let pts = [
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(0.5, 0.5),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
            Point::new(0.5, 0.0),
        ];
        let hull = convex_hull(&pts);
        assert_eq!(hull.len(), 4);
        assert_eq!(polygon_area(&hull), 1.0);
    }
}
