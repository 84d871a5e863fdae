//! Oriented 3D boxes, rotated-rectangle overlap, BEV rasterization, and the
//! distance primitives the metrics and head depend on.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::pillars::TimedPointCloud;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Oriented 3D box: center (x, y, z), extents (w, l, h) with l along the
/// box-local x axis and w along box-local y, yaw about +z in (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
    pub l: f64,
    pub h: f64,
    pub theta: f64,
}

/// Normalize an angle into (-pi, pi].
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(std::f64::consts::TAU);
    if t > std::f64::consts::PI {
        t -= std::f64::consts::TAU;
    }
    t
}

impl Box3D {
    pub fn new(x: f64, y: f64, z: f64, w: f64, l: f64, h: f64, theta: f64) -> Result<Box3D, GeometryError> {
        if !(w > 0.0 && l > 0.0 && h > 0.0) {
            return Err(GeometryError::InvalidBox(format!("extents must be positive: {w} {l} {h}")));
        }
        if ![x, y, z, theta].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidBox("non-finite pose".into()));
        }
        Ok(Box3D { x, y, z, w, l, h, theta: wrap_angle(theta) })
    }

    pub fn size(&self) -> (f64, f64, f64) {
        (self.w, self.l, self.h)
    }

    pub fn translated(&self, dx: f64, dy: f64, dz: f64) -> Box3D {
        Box3D { x: self.x + dx, y: self.y + dy, z: self.z + dz, ..*self }
    }

    /// BEV footprint corners, counter-clockwise.
    pub fn bev_corners(&self) -> [(f64, f64); 4] {
        let (s, c) = self.theta.sin_cos();
        let (hl, hw) = (self.l / 2.0, self.w / 2.0);
        let local = [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)];
        local.map(|(lx, ly)| (self.x + c * lx - s * ly, self.y + s * lx + c * ly))
    }

    /// Boundary counts as inside.
    pub fn contains_bev(&self, px: f64, py: f64) -> bool {
        let (s, c) = self.theta.sin_cos();
        let dx = px - self.x;
        let dy = py - self.y;
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        lx.abs() <= self.l / 2.0 && ly.abs() <= self.w / 2.0
    }

    pub fn contains_3d(&self, px: f64, py: f64, pz: f64) -> bool {
        self.contains_bev(px, py) && (pz - self.z).abs() <= self.h / 2.0
    }

    pub fn bev_area(&self) -> f64 {
        self.w * self.l
    }

    pub fn volume(&self) -> f64 {
        self.w * self.l * self.h
    }
}

/// BEV grid geometry. `w`/`h` are the feature-map cell counts at backbone
/// output resolution; the pillar grid is `(w*b) x (h*b)` with pitch
/// `(v_x, v_y)`, so decoded cells have pitch `v * b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub x_min: f64,
    pub y_min: f64,
    pub v_x: f64,
    pub v_y: f64,
    pub w: usize,
    pub h: usize,
    pub b: usize,
    pub z_min: f64,
    pub z_max: f64,
}

impl GridConfig {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.v_x > 0.0 && self.v_y > 0.0) || self.w < 1 || self.h < 1 || self.b < 1 {
            return Err(GeometryError::InvalidBox(format!("invalid grid config {self:?}")));
        }
        Ok(())
    }

    /// Decoded-cell pitch along x / y.
    pub fn cell_x(&self) -> f64 {
        self.v_x * self.b as f64
    }

    pub fn cell_y(&self) -> f64 {
        self.v_y * self.b as f64
    }

    pub fn x_max(&self) -> f64 {
        self.x_min + self.w as f64 * self.cell_x()
    }

    pub fn y_max(&self) -> f64 {
        self.y_min + self.h as f64 * self.cell_y()
    }

    /// Center of feature cell (i, j): i indexes rows along y, j columns along x.
    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.x_min + (j as f64 + 0.5) * self.cell_x(),
            self.y_min + (i as f64 + 0.5) * self.cell_y(),
        )
    }
}

/// Binary W x H occupancy of a box footprint at feature-map resolution.
/// Stored row-major: `values[i * w + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxMask {
    pub values: Vec<u8>,
    pub w: usize,
    pub h: usize,
}

impl BoxMask {
    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.values[i * self.w + j]
    }

    pub fn count_ones(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }
}

/// Cell (i, j) is 1 iff its center lies inside the box BEV footprint
/// (boundary inclusive).
pub fn rasterize_box_mask(bx: &Box3D, grid: &GridConfig) -> BoxMask {
    let mut values = vec![0u8; grid.w * grid.h];
    for i in 0..grid.h {
        for j in 0..grid.w {
            let (cx, cy) = grid.cell_center(i, j);
            if bx.contains_bev(cx, cy) {
                values[i * grid.w + j] = 1;
            }
        }
    }
    BoxMask { values, w: grid.w, h: grid.h }
}

const AREA_EPS: f64 = 1e-12;

fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    acc.abs() / 2.0
}

/// Sutherland-Hodgman clip of a polygon against one directed edge; points on
/// the edge are kept.
fn clip_edge(poly: &[(f64, f64)], a: (f64, f64), b: (f64, f64)) -> Vec<(f64, f64)> {
    let inside = |p: (f64, f64)| (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0) >= 0.0;
    let intersect = |p: (f64, f64), q: (f64, f64)| {
        let d1 = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
        let d2 = (b.0 - a.0) * (q.1 - a.1) - (b.1 - a.1) * (q.0 - a.0);
        let t = d1 / (d1 - d2);
        (p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1))
    };
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let cur = poly[i];
        let next = poly[(i + 1) % poly.len()];
        match (inside(cur), inside(next)) {
            (true, true) => out.push(next),
            (true, false) => out.push(intersect(cur, next)),
            (false, true) => {
                out.push(intersect(cur, next));
                out.push(next);
            }
            (false, false) => {}
        }
    }
    out
}

/// Area of the intersection of two convex CCW polygons.
fn convex_intersection_area(p: &[(f64, f64)], q: &[(f64, f64)]) -> f64 {
    let mut poly = p.to_vec();
    for i in 0..q.len() {
        if poly.is_empty() {
            break;
        }
        poly = clip_edge(&poly, q[i], q[(i + 1) % q.len()]);
    }
    let area = polygon_area(&poly);
    if area < AREA_EPS {
        0.0
    } else {
        area
    }
}

/// Rotated-rectangle intersection over union in the BEV plane.
pub fn bev_iou(a: &Box3D, b: &Box3D) -> f64 {
    let inter = convex_intersection_area(&a.bev_corners(), &b.bev_corners());
    let union = a.bev_area() + b.bev_area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// BEV intersection area times vertical overlap length, over volume union.
pub fn iou3d(a: &Box3D, b: &Box3D) -> f64 {
    let inter_area = convex_intersection_area(&a.bev_corners(), &b.bev_corners());
    let z_lo = (a.z - a.h / 2.0).max(b.z - b.h / 2.0);
    let z_hi = (a.z + a.h / 2.0).min(b.z + b.h / 2.0);
    let inter = inter_area * (z_hi - z_lo).max(0.0);
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Euclidean distance between box centers.
pub fn center_distance(a: &Box3D, b: &Box3D) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt()
}

/// Center distance in the BEV (xy) plane.
pub fn center_distance_bev(a: &Box3D, b: &Box3D) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
}

/// Translate points into a frame centered on `reference` (translation only,
/// no rotation); timestamps are preserved.
pub fn to_local(points: &TimedPointCloud, reference: &Box3D) -> TimedPointCloud {
    TimedPointCloud {
        points: points
            .points
            .iter()
            .map(|p| (p.0 - reference.x, p.1 - reference.y, p.2 - reference.z, p.3))
            .collect(),
    }
}

// ---- box text format ----
// One box per line: "frame_index x y z w l h theta".

pub fn write_boxes(path: &Path, boxes: &[Box3D]) -> Result<(), GeometryError> {
    let mut out = String::new();
    for (i, b) in boxes.iter().enumerate() {
        writeln!(out, "{} {} {} {} {} {} {} {}", i, b.x, b.y, b.z, b.w, b.l, b.h, b.theta)
            .expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_boxes(path: &Path) -> Result<Vec<Box3D>, GeometryError> {
    let text = std::fs::read_to_string(path)?;
    parse_boxes(&text)
}

pub fn parse_boxes(text: &str) -> Result<Vec<Box3D>, GeometryError> {
    let mut boxes = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(GeometryError::Parse {
                line: lineno + 1,
                msg: format!("expected 8 fields, got {}", fields.len()),
            });
        }
        let vals: Result<Vec<f64>, _> = fields[1..].iter().map(|s| s.parse::<f64>()).collect();
        let v = vals.map_err(|e| GeometryError::Parse { line: lineno + 1, msg: e.to_string() })?;
        let b = Box3D::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6])
            .map_err(|e| GeometryError::Parse { line: lineno + 1, msg: e.to_string() })?;
        boxes.push(b);
    }
    Ok(boxes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64, y: f64, z: f64, w: f64, l: f64, h: f64, theta: f64) -> Box3D {
        Box3D::new(x, y, z, w, l, h, theta).unwrap()
    }

    fn grid_unit(w: usize, h: usize) -> GridConfig {
        GridConfig { x_min: 0.0, y_min: 0.0, v_x: 1.0, v_y: 1.0, w, h, b: 1, z_min: -2.0, z_max: 2.0 }
    }

    #[test]
    fn identical_boxes_have_unit_iou() {
        let a = bx(1.0, 2.0, 0.5, 1.8, 4.2, 1.6, 0.4);
        assert!((bev_iou(&a, &a) - 1.0).abs() < 1e-12);
        assert!((iou3d(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_boxes_have_zero_iou() {
        let a = bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        let b = bx(10.0, 10.0, 0.0, 1.0, 1.0, 1.0, 0.3);
        assert_eq!(bev_iou(&a, &b), 0.0);
        assert_eq!(iou3d(&a, &b), 0.0);
    }

    #[test]
    fn rotated_square_iou() {
        // two unit squares, same center, one rotated 45 degrees:
        // intersection is a regular octagon of area 2(sqrt(2)-1)
        let a = bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        let b = bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, std::f64::consts::FRAC_PI_4);
        let inter = 2.0 * (2f64.sqrt() - 1.0);
        let want = inter / (2.0 - inter);
        assert!((bev_iou(&a, &b) - want).abs() < 1e-12);
        assert!((want - 0.70711).abs() < 1e-5);
    }

    #[test]
    fn half_vertical_overlap_gives_one_third() {
        let a = bx(0.0, 0.0, 0.0, 2.0, 3.0, 2.0, 0.0);
        let b = bx(0.0, 0.0, 1.0, 2.0, 3.0, 2.0, 0.0);
        assert!((iou3d(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn center_distance_triple() {
        let a = bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        let b = bx(1.0, 2.0, 2.0, 1.0, 1.0, 1.0, 0.0);
        assert!((center_distance(&a, &b) - 3.0).abs() < 1e-12);
        assert_eq!(center_distance(&a, &a), 0.0);
    }

    #[test]
    fn mask_full_range_and_outside() {
        let grid = grid_unit(4, 4);
        let big = bx(2.0, 2.0, 0.0, 100.0, 100.0, 2.0, 0.3);
        assert_eq!(rasterize_box_mask(&big, &grid).count_ones(), 16);
        let outside = bx(100.0, 100.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        assert_eq!(rasterize_box_mask(&outside, &grid).count_ones(), 0);
    }

    #[test]
    fn unit_box_on_cell_center() {
        let grid = grid_unit(4, 4);
        // centered on cell (1, 2) center = (2.5, 1.5); boundary-inclusive on
        // its own cell only when strictly smaller than the pitch would leave
        // neighbors out -- a 1m box touches neighbor centers exactly at
        // distance 1, which is outside the half-extent 0.5.
        let b = bx(2.5, 1.5, 0.0, 1.0, 1.0, 1.0, 0.0);
        let mask = rasterize_box_mask(&b, &grid);
        assert_eq!(mask.count_ones(), 1);
        assert_eq!(mask.get(1, 2), 1);
    }

    #[test]
    fn mask_matches_point_in_rectangle_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let grid = GridConfig {
            x_min: -4.8, y_min: -4.8, v_x: 0.15, v_y: 0.15, w: 16, h: 16, b: 4,
            z_min: -2.0, z_max: 2.0,
        };
        for _ in 0..20 {
            let b = bx(
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-4.0..4.0),
                0.0,
                rng.gen_range(0.5..3.0),
                rng.gen_range(0.5..5.0),
                1.5,
                rng.gen_range(-3.1..3.1),
            );
            let mask = rasterize_box_mask(&b, &grid);
            for i in 0..grid.h {
                for j in 0..grid.w {
                    let (cx, cy) = grid.cell_center(i, j);
                    // brute-force point-in-rotated-rectangle
                    let (s, c) = b.theta.sin_cos();
                    let lx = c * (cx - b.x) + s * (cy - b.y);
                    let ly = -s * (cx - b.x) + c * (cy - b.y);
                    let inside = lx.abs() <= b.l / 2.0 && ly.abs() <= b.w / 2.0;
                    assert_eq!(mask.get(i, j) == 1, inside);
                }
            }
        }
    }

    #[test]
    fn to_local_identity_and_translation() {
        let cloud = TimedPointCloud { points: vec![(1.0, 2.0, 3.0, 0.0), (0.0, 0.0, 0.0, 0.0)] };
        let origin = bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        assert_eq!(to_local(&cloud, &origin).points, cloud.points);

        let r = bx(1.0, 2.0, 3.0, 1.0, 1.0, 1.0, 0.5);
        let local = to_local(&cloud, &r);
        assert_eq!(local.points[0], (0.0, 0.0, 0.0, 0.0));

        // to_local(P + c, box + c) == to_local(P, box)
        let c = (4.0, -2.0, 7.0);
        let shifted = TimedPointCloud {
            points: cloud.points.iter().map(|p| (p.0 + c.0, p.1 + c.1, p.2 + c.2, p.3)).collect(),
        };
        let shifted_box = r.translated(c.0, c.1, c.2);
        assert_eq!(to_local(&shifted, &shifted_box).points, local.points);
    }

    #[test]
    fn box_text_round_trip() {
        let boxes = vec![
            bx(1.5, -2.25, 0.125, 1.8, 4.2, 1.6, 0.7853981633974483),
            bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, -3.0),
        ];
        let dir = std::env::temp_dir().join("sttk_geom_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("boxes.txt");
        write_boxes(&path, &boxes).unwrap();
        let back = read_boxes(&path).unwrap();
        assert_eq!(back, boxes);
    }

    #[test]
    fn parse_rejects_short_lines() {
        assert!(parse_boxes("0 1 2 3").is_err());
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(std::f64::consts::PI), std::f64::consts::PI);
        assert!((wrap_angle(-std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
        assert!((wrap_angle(3.0 * std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
    }
}
