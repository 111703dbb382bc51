//! Spherical distance, building footprints and radius membership.
//!
//! Distances use a spherical earth of radius [`EARTH_RADIUS_M`]. Footprint
//! geometry (hulls, containment) runs in a local equirectangular projection
//! about the shape centroid, which is accurate at building scale.

use std::collections::HashMap;

use thiserror::Error;

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Metres per degree of latitude on the sphere.
pub const METERS_PER_DEG: f64 = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("coordinate out of range: lat={lat}, lon={lon}")]
    OutOfRange { lat: f64, lon: f64 },
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
}

/// WGS-84 position in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if lat.is_finite()
            && lon.is_finite()
            && (-90.0..=90.0).contains(&lat)
            && (-180.0..=180.0).contains(&lon)
        {
            Ok(Self { lat, lon })
        } else {
            Err(GeoError::OutOfRange { lat, lon })
        }
    }

    #[inline]
    pub fn lat(&self) -> f64 {
        self.lat
    }

    #[inline]
    pub fn lon(&self) -> f64 {
        self.lon
    }

    /// Point displaced by `(east_m, north_m)` in the local tangent plane.
    pub fn offset(&self, east_m: f64, north_m: f64) -> Result<Self, GeoError> {
        let lat = self.lat + north_m / METERS_PER_DEG;
        let lon = self.lon + east_m / (METERS_PER_DEG * self.lat.to_radians().cos());
        GeoPoint::new(lat, lon)
    }
}

/// Great-circle distance in metres.
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let s1 = (dphi / 2.0).sin();
    let s2 = (dlambda / 2.0).sin();
    let h = (s1 * s1 + phi1.cos() * phi2.cos() * s2 * s2).clamp(0.0, 1.0);
    2.0 * EARTH_RADIUS_M * h.sqrt().asin()
}

/// Inclusive radius test: `haversine_m(center, p) <= r`.
#[inline]
pub fn within_radius(center: GeoPoint, p: GeoPoint, r: f64) -> bool {
    haversine_m(center, p) <= r
}

/// Local equirectangular projection about a fixed origin.
#[derive(Debug, Clone, Copy, PartialEq)]
struct LocalFrame {
    lat0: f64,
    lon0: f64,
    cos_lat0: f64,
}

impl LocalFrame {
    fn new(origin_lat: f64, origin_lon: f64) -> Self {
        Self {
            lat0: origin_lat,
            lon0: origin_lon,
            cos_lat0: origin_lat.to_radians().cos(),
        }
    }

    fn project(&self, p: GeoPoint) -> (f64, f64) {
        let mut dlon = p.lon - self.lon0;
        if dlon > 180.0 {
            dlon -= 360.0;
        } else if dlon < -180.0 {
            dlon += 360.0;
        }
        let x = EARTH_RADIUS_M * dlon.to_radians() * self.cos_lat0;
        let y = EARTH_RADIUS_M * (p.lat - self.lat0).to_radians();
        (x, y)
    }
}

fn mean_origin(points: &[GeoPoint]) -> LocalFrame {
    let n = points.len() as f64;
    let lat = points.iter().map(|p| p.lat).sum::<f64>() / n;
    let lon = points.iter().map(|p| p.lon).sum::<f64>() / n;
    LocalFrame::new(lat, lon)
}

#[inline]
fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex building outline, vertices counter-clockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Footprint {
    vertices: Vec<GeoPoint>,
    frame: LocalFrame,
    ring: Vec<(f64, f64)>,
}

impl Footprint {
    /// Validates an explicit counter-clockwise convex ring.
    pub fn new(vertices: Vec<GeoPoint>) -> Result<Self, GeoError> {
        if vertices.len() < 3 {
            return Err(GeoError::DegenerateGeometry(format!(
                "footprint needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        let frame = mean_origin(&vertices);
        let pts: Vec<_> = vertices.iter().map(|v| frame.project(*v)).collect();
        let n = pts.len();
        for i in 0..n {
            let a = pts[i];
            let b = pts[(i + 1) % n];
            if a == b {
                return Err(GeoError::DegenerateGeometry(format!(
                    "repeated consecutive vertex at index {i}"
                )));
            }
            let c = pts[(i + 2) % n];
            if cross(a, b, c) <= 0.0 {
                return Err(GeoError::DegenerateGeometry(format!(
                    "ring is not strictly convex counter-clockwise at vertex {}",
                    (i + 1) % n
                )));
            }
        }
        Ok(Self {
            vertices,
            frame,
            ring: pts,
        })
    }

    pub fn vertices(&self) -> &[GeoPoint] {
        &self.vertices
    }

    pub fn centroid(&self) -> GeoPoint {
        GeoPoint {
            lat: self.frame.lat0,
            lon: self.frame.lon0,
        }
    }

    /// Half-plane test in the local frame; boundary points count as inside.
    pub fn contains(&self, p: GeoPoint) -> bool {
        let q = self.frame.project(p);
        let n = self.ring.len();
        let mut prev = self.ring[n - 1];
        for &cur in &self.ring {
            let edge = ((cur.0 - prev.0).powi(2) + (cur.1 - prev.1).powi(2)).sqrt();
            // Signed distance of q from the edge line, metres.
            if cross(prev, cur, q) / edge < -1e-7 {
                return false;
            }
            prev = cur;
        }
        true
    }
}

/// Minimal convex polygon around `points` (Andrew's monotone chain in the
/// local frame). Collinear boundary points are not kept as vertices.
pub fn convex_hull(points: &[GeoPoint]) -> Result<Footprint, GeoError> {
    if points.len() < 3 {
        return Err(GeoError::DegenerateGeometry(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    let frame = mean_origin(points);
    let mut idx: Vec<(f64, f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (x, y) = frame.project(*p);
            (x, y, i)
        })
        .collect();
    idx.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    idx.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
    if idx.len() < 3 {
        return Err(GeoError::DegenerateGeometry(
            "fewer than 3 distinct points".into(),
        ));
    }

    let xy = |t: &(f64, f64, usize)| (t.0, t.1);
    let mut hull: Vec<(f64, f64, usize)> = Vec::with_capacity(2 * idx.len());
    for p in &idx {
        while hull.len() >= 2
            && cross(xy(&hull[hull.len() - 2]), xy(&hull[hull.len() - 1]), xy(p)) <= 0.0
        {
            hull.pop();
        }
        hull.push(*p);
    }
    let lower_len = hull.len() + 1;
    for p in idx.iter().rev().skip(1) {
        while hull.len() >= lower_len
            && cross(xy(&hull[hull.len() - 2]), xy(&hull[hull.len() - 1]), xy(p)) <= 0.0
        {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    if hull.len() < 3 {
        return Err(GeoError::DegenerateGeometry(
            "all points are collinear".into(),
        ));
    }
    Footprint::new(hull.into_iter().map(|t| points[t.2]).collect())
}

/// Uniform lat/lon grid over point items for radius queries.
///
/// Queries do not wrap across the antimeridian.
#[derive(Debug, Clone)]
pub struct GridIndex {
    cell_deg: f64,
    cells: HashMap<(i64, i64), Vec<u32>>,
    points: Vec<GeoPoint>,
}

impl GridIndex {
    pub fn new(points: &[GeoPoint], cell_m: f64) -> Self {
        let cell_deg = cell_m / METERS_PER_DEG;
        let mut cells: HashMap<(i64, i64), Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells
                .entry(Self::key(cell_deg, p.lat, p.lon))
                .or_default()
                .push(i as u32);
        }
        Self {
            cell_deg,
            cells,
            points: points.to_vec(),
        }
    }

    fn key(cell_deg: f64, lat: f64, lon: f64) -> (i64, i64) {
        (
            (lat / cell_deg).floor() as i64,
            (lon / cell_deg).floor() as i64,
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Calls `f(index, distance_m)` for every item within `r` of `p`.
    pub fn for_each_within(&self, p: GeoPoint, r: f64, mut f: impl FnMut(usize, f64)) {
        let dlat = r / METERS_PER_DEG * 1.001 + 1e-12;
        let max_lat = (p.lat.abs() + dlat).min(89.999_999);
        let dlon = dlat / max_lat.to_radians().cos();
        let (la0, lo0) = Self::key(self.cell_deg, p.lat - dlat, p.lon - dlon);
        let (la1, lo1) = Self::key(self.cell_deg, p.lat + dlat, p.lon + dlon);
        for la in la0..=la1 {
            for lo in lo0..=lo1 {
                if let Some(items) = self.cells.get(&(la, lo)) {
                    for &i in items {
                        let d = haversine_m(self.points[i as usize], p);
                        if d <= r {
                            f(i as usize, d);
                        }
                    }
                }
            }
        }
    }

    /// Indices within `r` of `p`, ascending.
    pub fn within(&self, p: GeoPoint, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_within(p, r, |i, _| out.push(i));
        out.sort_unstable();
        out
    }
}
