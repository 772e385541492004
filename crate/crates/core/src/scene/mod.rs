//! Digital-twin geometry: scene loading and validation, ray–surface
//! intersection, specular multi-bounce tracing, and discretization of traced
//! rays into length-annotated 3D points.
//!
//! All coordinates are in meters. Surfaces are planar convex polygons; every
//! surface acts as a perfect mirror (specular reflections only, no
//! transmission or diffraction). A `Scene` is immutable after load and safe
//! to share across worker threads.

mod generator;

pub use generator::{box_scene, canonical_scene, random_clutter, ClutterBox};

use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Point, Vec3};

/// Intersections closer than this along a new ray are ignored, so a ray
/// leaving a bounce point cannot re-hit the surface it just left.
pub const SELF_HIT_EPSILON: f64 = 1e-6;

/// Coplanarity tolerance for surface vertices (meters).
pub const PLANAR_TOLERANCE: f64 = 1e-9;

/// Tolerance for the point-in-polygon edge test (meters).
const EDGE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("malformed scene file: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("unsupported units {0:?}, expected \"meters\"")]
    BadUnits(String),
    #[error("scene has no surfaces")]
    NoSurfaces,
    #[error("scene has no base stations")]
    NoBaseStations,
    #[error("surface {index}: {source}")]
    Surface {
        index: usize,
        source: SurfaceError,
    },
    #[error("duplicate base station id {0}")]
    DuplicateBsId(u32),
    #[error("base station {0} lies outside the scene bounding box")]
    BsOutsideBounds(u32),
    #[error("base station {0} has a zero-length boresight")]
    ZeroBoresight(u32),
}

#[derive(Debug, Error)]
pub enum SurfaceError {
    #[error("fewer than 3 vertices")]
    TooFewVertices,
    #[error("degenerate (zero area)")]
    Degenerate,
    #[error("vertices not coplanar within {PLANAR_TOLERANCE} m")]
    NonPlanar,
    #[error("polygon not convex")]
    NonConvex,
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point,
    pub max: Point,
}

impl Aabb {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let mut bb = Aabb {
            min: first,
            max: first,
        };
        for p in it {
            bb.min = Point::new(bb.min.x.min(p.x), bb.min.y.min(p.y), bb.min.z.min(p.z));
            bb.max = Point::new(bb.max.x.max(p.x), bb.max.y.max(p.y), bb.max.z.max(p.z));
        }
        Some(bb)
    }

    /// Closed containment test with tolerance `tol` on every face.
    pub fn contains(&self, p: &Point, tol: f64) -> bool {
        p.x >= self.min.x - tol
            && p.x <= self.max.x + tol
            && p.y >= self.min.y - tol
            && p.y <= self.max.y + tol
            && p.z >= self.min.z - tol
            && p.z <= self.max.z + tol
    }

    pub fn extents(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Point {
        nalgebra::center(&self.min, &self.max)
    }
}

/// A planar convex polygon facet of the digital twin.
///
/// The unit normal is derived from the vertex winding (counter-clockwise as
/// seen from the normal side). Intersection is double-sided, so winding only
/// matters for validation, not for reflection.
#[derive(Debug, Clone)]
pub struct Surface {
    vertices: Vec<Point>,
    normal: Vec3,
    // per-edge (origin, unit direction), cached for the inside test
    edges: Vec<(Point, Vec3)>,
}

impl Surface {
    pub fn new(vertices: Vec<Point>) -> Result<Self, SurfaceError> {
        if vertices.len() < 3 {
            return Err(SurfaceError::TooFewVertices);
        }
        // Newell's method: robust area-weighted normal for the winding order.
        let mut n = Vec3::zeros();
        for i in 0..vertices.len() {
            let a = &vertices[i];
            let b = &vertices[(i + 1) % vertices.len()];
            n.x += (a.y - b.y) * (a.z + b.z);
            n.y += (a.z - b.z) * (a.x + b.x);
            n.z += (a.x - b.x) * (a.y + b.y);
        }
        let area = 0.5 * n.norm();
        if area < 1e-12 {
            return Err(SurfaceError::Degenerate);
        }
        let normal = n / n.norm();

        let v0 = vertices[0];
        if vertices
            .iter()
            .any(|v| ((v - v0).dot(&normal)).abs() > PLANAR_TOLERANCE)
        {
            return Err(SurfaceError::NonPlanar);
        }

        // Convexity: every consecutive edge pair must turn the same way as
        // the winding (cross product along the normal, collinear allowed).
        let k = vertices.len();
        for i in 0..k {
            let e1 = vertices[(i + 1) % k] - vertices[i];
            let e2 = vertices[(i + 2) % k] - vertices[(i + 1) % k];
            if e1.cross(&e2).dot(&normal) < -1e-9 * e1.norm() * e2.norm() {
                return Err(SurfaceError::NonConvex);
            }
        }

        let edges = (0..k)
            .map(|i| {
                let a = vertices[i];
                let e = vertices[(i + 1) % k] - a;
                (a, e / e.norm())
            })
            .collect();

        Ok(Surface {
            vertices,
            normal,
            edges,
        })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    /// Outward unit normal derived from the vertex winding.
    pub fn normal(&self) -> &Vec3 {
        &self.normal
    }

    /// True if a point already known to lie on the surface plane falls inside
    /// the polygon (within `EDGE_TOLERANCE` of the boundary).
    fn contains_in_plane(&self, p: &Point) -> bool {
        self.edges
            .iter()
            .all(|(a, e)| e.cross(&(p - a)).dot(&self.normal) >= -EDGE_TOLERANCE)
    }

    /// Distance from an arbitrary point to this polygon.
    pub fn distance_to_point(&self, p: &Point) -> f64 {
        let off = (p - self.vertices[0]).dot(&self.normal);
        let proj = p - self.normal * off;
        if self.contains_in_plane(&proj) {
            return off.abs();
        }
        let k = self.vertices.len();
        (0..k)
            .map(|i| {
                crate::geom::point_segment_distance(
                    p,
                    &self.vertices[i],
                    &self.vertices[(i + 1) % k],
                )
                .0
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Measurement anchor of the digital twin.
#[derive(Debug, Clone)]
pub struct BaseStation {
    pub id: u32,
    pub position: Point,
    /// Optional antenna boresight; only used for angle conventions in
    /// reports, never for tracing.
    pub boresight: Option<Vec3>,
}

/// The digital twin: validated surfaces plus base-station anchors.
#[derive(Debug, Clone)]
pub struct Scene {
    surfaces: Vec<Surface>,
    base_stations: Vec<BaseStation>,
    bbox: Aabb,
}

/// Wire format of a scene file (JSON).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneFile {
    pub units: String,
    pub surfaces: Vec<SurfaceSpec>,
    pub base_stations: Vec<BaseStationSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurfaceSpec {
    pub vertices: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaseStationSpec {
    pub id: u32,
    pub position: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boresight: Option<[f64; 3]>,
}

impl SceneFile {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene file serialization")
    }
}

impl Scene {
    /// Parse and validate a scene from scene-file JSON.
    pub fn from_json(source: &str) -> Result<Self, SceneError> {
        let file: SceneFile = serde_json::from_str(source)?;
        Scene::from_file(&file)
    }

    pub fn from_file(file: &SceneFile) -> Result<Self, SceneError> {
        if file.units != "meters" {
            return Err(SceneError::BadUnits(file.units.clone()));
        }
        if file.surfaces.is_empty() {
            return Err(SceneError::NoSurfaces);
        }
        if file.base_stations.is_empty() {
            return Err(SceneError::NoBaseStations);
        }

        let mut surfaces = Vec::with_capacity(file.surfaces.len());
        for (index, spec) in file.surfaces.iter().enumerate() {
            let verts = spec
                .vertices
                .iter()
                .map(|v| Point3::new(v[0], v[1], v[2]))
                .collect();
            let surface =
                Surface::new(verts).map_err(|source| SceneError::Surface { index, source })?;
            surfaces.push(surface);
        }

        let bbox = Aabb::from_points(surfaces.iter().flat_map(|s| s.vertices.iter()))
            .expect("non-empty surfaces");

        let mut base_stations = Vec::with_capacity(file.base_stations.len());
        for spec in &file.base_stations {
            if base_stations.iter().any(|b: &BaseStation| b.id == spec.id) {
                return Err(SceneError::DuplicateBsId(spec.id));
            }
            let position = Point3::new(spec.position[0], spec.position[1], spec.position[2]);
            // Ceiling-corner mounts sit exactly on the bounding box, so
            // containment is closed rather than strict.
            if !bbox.contains(&position, 1e-9) {
                return Err(SceneError::BsOutsideBounds(spec.id));
            }
            let boresight = match spec.boresight {
                None => None,
                Some(b) => {
                    let v = Vec3::new(b[0], b[1], b[2]);
                    if v.norm() < 1e-12 {
                        return Err(SceneError::ZeroBoresight(spec.id));
                    }
                    Some(v / v.norm())
                }
            };
            base_stations.push(BaseStation {
                id: spec.id,
                position,
                boresight,
            });
        }

        Ok(Scene {
            surfaces,
            base_stations,
            bbox,
        })
    }

    pub fn surfaces(&self) -> &[Surface] {
        &self.surfaces
    }

    pub fn base_stations(&self) -> &[BaseStation] {
        &self.base_stations
    }

    pub fn base_station(&self, id: u32) -> Option<&BaseStation> {
        self.base_stations.iter().find(|b| b.id == id)
    }

    pub fn bounding_box(&self) -> &Aabb {
        &self.bbox
    }

    /// Nearest ray–surface intersection beyond the self-hit guard, or `None`
    /// if the ray escapes the scene. Brute force over all facets; scenes in
    /// this domain have tens of surfaces, so no broad phase is needed.
    pub fn intersect(&self, origin: &Point, direction: &Vec3) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (surface_id, surface) in self.surfaces.iter().enumerate() {
            let denom = direction.dot(&surface.normal);
            if denom.abs() < 1e-12 {
                continue;
            }
            let t = (surface.vertices[0] - origin).dot(&surface.normal) / denom;
            if t <= SELF_HIT_EPSILON {
                continue;
            }
            if let Some(prev) = &best {
                if t >= prev.distance {
                    continue;
                }
            }
            let point = origin + direction * t;
            if surface.contains_in_plane(&point) {
                best = Some(Hit {
                    surface_id,
                    point,
                    distance: t,
                });
            }
        }
        best
    }

    /// Follow specular reflections until `max_bounces` is exhausted, the
    /// cumulative length reaches `max_length`, or the ray escapes the scene
    /// (in which case the final segment is capped at `max_length`).
    pub fn trace(&self, ray: &Ray, max_bounces: u32, max_length: f64) -> TracedPath {
        debug_assert!(max_length > 0.0);
        let mut origin = ray.origin;
        let mut direction = ray.direction;
        let mut vertices = vec![origin];
        let mut cumulative = vec![0.0];
        let mut traveled = 0.0_f64;
        let mut bounces = 0_u32;

        let termination = loop {
            let remaining = max_length - traveled;
            match self.intersect(&origin, &direction) {
                None => {
                    vertices.push(origin + direction * remaining);
                    cumulative.push(max_length);
                    break Termination::Escaped;
                }
                Some(hit) if hit.distance >= remaining => {
                    vertices.push(origin + direction * remaining);
                    cumulative.push(max_length);
                    break Termination::MaxLength;
                }
                Some(hit) => {
                    traveled += hit.distance;
                    vertices.push(hit.point);
                    cumulative.push(traveled);
                    if bounces == max_bounces {
                        break Termination::MaxBounces;
                    }
                    bounces += 1;
                    direction = reflect(&direction, self.surfaces[hit.surface_id].normal());
                    origin = hit.point;
                }
            }
        };

        TracedPath {
            bs_id: ray.bs_id,
            vertices,
            cumulative,
            bounces,
            termination,
        }
    }
}

/// Result of a nearest-hit query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub surface_id: usize,
    pub point: Point,
    pub distance: f64,
}

/// A ray launched from a base station.
#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Point,
    pub direction: Vec3,
    pub bs_id: u32,
}

impl Ray {
    /// Build a ray, normalizing the direction.
    pub fn new(origin: Point, direction: Vec3, bs_id: u32) -> Self {
        let n = direction.norm();
        debug_assert!(n > 0.0, "ray direction must be non-zero");
        Ray {
            origin,
            direction: direction / n,
            bs_id,
        }
    }
}

/// Mirror reflection: `d - 2 (d·n) n`. Symmetric in the normal sign, so it
/// works for either surface orientation.
pub fn reflect(direction: &Vec3, normal: &Vec3) -> Vec3 {
    direction - normal * (2.0 * direction.dot(normal))
}

/// Why a traced path ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// No further surface along the ray; final segment capped at max length.
    Escaped,
    /// Cumulative length reached the cap.
    MaxLength,
    /// Bounce budget exhausted at a surface.
    MaxBounces,
}

/// A specular polyline traced through the scene, with cumulative path length
/// recorded at every vertex.
#[derive(Debug, Clone)]
pub struct TracedPath {
    pub bs_id: u32,
    vertices: Vec<Point>,
    cumulative: Vec<f64>,
    bounces: u32,
    pub termination: Termination,
}

impl TracedPath {
    /// Segment endpoints: origin, bounce points, terminal point.
    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    /// Cumulative path length at each vertex, starting at 0.
    pub fn cumulative_lengths(&self) -> &[f64] {
        &self.cumulative
    }

    /// Number of reflections actually taken.
    pub fn bounces(&self) -> u32 {
        self.bounces
    }

    pub fn total_length(&self) -> f64 {
        *self.cumulative.last().expect("path has at least one vertex")
    }

    /// Position on the path at a given arc length (clamped to the ends).
    pub fn point_at(&self, length: f64) -> Point {
        let t = length.clamp(0.0, self.total_length());
        let mut seg = 0;
        while seg + 2 < self.vertices.len() && self.cumulative[seg + 1] < t {
            seg += 1;
        }
        let seg_len = self.cumulative[seg + 1] - self.cumulative[seg];
        if seg_len <= 0.0 {
            return self.vertices[seg];
        }
        let frac = (t - self.cumulative[seg]) / seg_len;
        self.vertices[seg] + (self.vertices[seg + 1] - self.vertices[seg]) * frac
    }

    /// Sample the path at cumulative lengths `0, step, 2·step, …` up to the
    /// total length. Stored lengths are the exact multiples of `step`.
    pub fn discretize(&self, step: f64, ray_index: u32) -> Vec<PathPoint> {
        debug_assert!(step > 0.0);
        let total = self.total_length();
        let mut points = Vec::with_capacity((total / step) as usize + 1);
        let mut k = 0_u64;
        loop {
            let target = k as f64 * step;
            if target > total + 1e-9 {
                break;
            }
            points.push(PathPoint {
                position: self.point_at(target),
                length: target.min(total),
                bs_id: self.bs_id,
                ray_index,
            });
            k += 1;
        }
        points
    }
}

/// A sample on a traced ray: its 3D position and the distance traveled from
/// the base station to reach it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub position: Point,
    pub length: f64,
    pub bs_id: u32,
    pub ray_index: u32,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn canonical() -> Scene {
        Scene::from_file(&canonical_scene(0, 0)).unwrap()
    }

    fn random_unit(rng: &mut impl Rng) -> Vec3 {
        loop {
            let v = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                return v / n;
            }
        }
    }

    #[test]
    fn canonical_scene_loads() {
        let scene = canonical();
        assert_eq!(scene.surfaces().len(), 12, "box has 12 triangle-free facets");
        assert_eq!(scene.base_stations().len(), 4);
        let bb = scene.bounding_box();
        assert_relative_eq!(bb.max.x - bb.min.x, 8.0, epsilon = 1e-12);
        assert_relative_eq!(bb.max.y - bb.min.y, 18.0, epsilon = 1e-12);
        assert_relative_eq!(bb.max.z - bb.min.z, 2.5, epsilon = 1e-12);
    }

    #[test]
    fn scene_without_bs_rejected() {
        let mut file = canonical_scene(0, 0);
        file.base_stations.clear();
        match Scene::from_file(&file) {
            Err(SceneError::NoBaseStations) => {}
            other => panic!("expected NoBaseStations, got {other:?}"),
        }
    }

    #[test]
    fn degenerate_surface_rejected_with_index() {
        let mut file = canonical_scene(0, 0);
        file.surfaces.push(SurfaceSpec {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]],
        });
        match Scene::from_file(&file) {
            Err(SceneError::Surface {
                index,
                source: SurfaceError::Degenerate,
            }) => assert_eq!(index, 12),
            other => panic!("expected degenerate surface error, got {other:?}"),
        }
    }

    #[test]
    fn non_planar_surface_rejected() {
        let mut file = canonical_scene(0, 0);
        file.surfaces.push(SurfaceSpec {
            vertices: vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [1.0, 1.0, 0.01],
                [0.0, 1.0, 0.0],
            ],
        });
        assert!(matches!(
            Scene::from_file(&file),
            Err(SceneError::Surface {
                index: 12,
                source: SurfaceError::NonPlanar,
            })
        ));
    }

    #[test]
    fn malformed_json_rejected() {
        assert!(matches!(
            Scene::from_json("{ not json"),
            Err(SceneError::Malformed(_))
        ));
    }

    #[test]
    fn non_convex_surface_rejected() {
        let mut file = canonical_scene(0, 0);
        file.surfaces.push(SurfaceSpec {
            vertices: vec![
                [0.0, 0.0, 1.0],
                [2.0, 0.0, 1.0],
                [0.5, 0.5, 1.0], // notch pointing inward
                [0.0, 2.0, 1.0],
            ],
        });
        assert!(matches!(
            Scene::from_file(&file),
            Err(SceneError::Surface {
                index: 12,
                source: SurfaceError::NonConvex,
            })
        ));
    }

    #[test]
    fn bs_outside_bounds_rejected() {
        let mut file = canonical_scene(0, 0);
        file.base_stations[0].position = [-1.0, 0.0, 2.5];
        assert!(matches!(
            Scene::from_file(&file),
            Err(SceneError::BsOutsideBounds(0))
        ));
    }

    #[test]
    fn intersect_hits_ceiling() {
        let scene = canonical();
        let hit = scene
            .intersect(&Point::new(1.0, 1.0, 1.0), &Vec3::new(0.0, 0.0, 1.0))
            .expect("must hit the ceiling");
        assert_relative_eq!(hit.distance, 1.5, epsilon = 1e-12);
        assert_relative_eq!(hit.point.z, 2.5, epsilon = 1e-12);
    }

    #[test]
    fn intersect_matches_axis_aligned_oracle() {
        // Independent oracle for the box: closed-form slab distances per axis.
        let scene = canonical();
        let (w, l, h) = (8.0, 18.0, 2.5);
        let oracle = |o: &Point, d: &Vec3| -> f64 {
            let mut best = f64::INFINITY;
            for (coord, dir, lo, hi) in [
                (o.x, d.x, 0.0, w),
                (o.y, d.y, 0.0, l),
                (o.z, d.z, 0.0, h),
            ] {
                for plane in [lo, hi] {
                    if dir.abs() > 1e-12 {
                        let t = (plane - coord) / dir;
                        if t > SELF_HIT_EPSILON && t < best {
                            best = t;
                        }
                    }
                }
            }
            best
        };

        let mut rng = StdRng::seed_from_u64(7);
        let center = Point::new(4.0, 9.0, 1.25);
        for _ in 0..200 {
            let d = random_unit(&mut rng);
            let hit = scene.intersect(&center, &d).expect("closed box");
            assert_relative_eq!(hit.distance, oracle(&center, &d), epsilon = 1e-9);
        }

        // Aimed at a corner: first-wall distance equals the slab oracle too.
        let corner_dir = (Point::new(8.0, 18.0, 2.5) - center).normalize();
        let hit = scene.intersect(&center, &corner_dir).unwrap();
        assert_relative_eq!(hit.distance, oracle(&center, &corner_dir), epsilon = 1e-9);
    }

    #[test]
    fn ray_on_wall_pointing_outward_escapes() {
        let scene = canonical();
        let hit = scene.intersect(&Point::new(0.0, 9.0, 1.0), &Vec3::new(-1.0, 0.0, 0.0));
        assert!(hit.is_none(), "outward ray must escape, got {hit:?}");
    }

    #[test]
    fn reflect_known_cases() {
        let d = Vec3::new(0.0, 0.0, -1.0);
        let n = Vec3::new(0.0, 0.0, 1.0);
        assert_relative_eq!(reflect(&d, &n), Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-15);

        let s = 1.0 / 2.0_f64.sqrt();
        let d = Vec3::new(s, 0.0, -s);
        assert_relative_eq!(reflect(&d, &n), Vec3::new(s, 0.0, s), epsilon = 1e-15);
    }

    #[test]
    fn reflect_properties_random() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..10_000 {
            let d = random_unit(&mut rng);
            let n = random_unit(&mut rng);
            let r = reflect(&d, &n);
            // normal component flips, norm preserved
            assert!((r.dot(&n) + d.dot(&n)).abs() < 1e-12);
            assert!((r.norm() - 1.0).abs() < 1e-12);
            // tangential component preserved
            let dt = d - n * d.dot(&n);
            let rt = r - n * r.dot(&n);
            assert!((dt - rt).norm() < 1e-9);
            // involution
            assert!((reflect(&r, &n) - d).norm() < 1e-12);
        }
    }

    #[test]
    fn trace_no_bounce_stops_at_first_wall() {
        let scene = canonical();
        let ray = Ray::new(Point::new(4.0, 1.0, 1.0), Vec3::new(0.0, 1.0, 0.0), 0);
        let path = scene.trace(&ray, 0, 100.0);
        assert_eq!(path.vertices().len(), 2);
        assert_eq!(path.bounces(), 0);
        assert_eq!(path.termination, Termination::MaxBounces);
        assert_relative_eq!(path.total_length(), 17.0, epsilon = 1e-9);
        assert_relative_eq!(path.vertices()[1].y, 18.0, epsilon = 1e-9);
    }

    #[test]
    fn trace_ping_pong_caps_at_length() {
        // Normal incidence between the x=0 and x=8 walls; 8 m segments.
        let scene = canonical();
        let ray = Ray::new(Point::new(0.0, 9.0, 1.25), Vec3::new(1.0, 0.0, 0.0), 0);
        let path = scene.trace(&ray, 100, 40.0);
        assert_relative_eq!(path.total_length(), 40.0, epsilon = 1e-9);
        assert_eq!(path.termination, Termination::MaxLength);
        // Wall contacts at lengths 8, 16, 24, 32 and the capped endpoint at 40.
        let wall_contacts = path.vertices()[1..]
            .iter()
            .filter(|v| v.x.abs() < 1e-9 || (v.x - 8.0).abs() < 1e-9)
            .count();
        assert_eq!(wall_contacts, 5, "5 candidate bounces over 40 m");
        assert_eq!(path.bounces(), 4, "the 5th contact is the capped endpoint");
        for (v, c) in path.vertices().iter().zip(path.cumulative_lengths()) {
            assert_relative_eq!(c % 8.0, 0.0, epsilon = 1e-9);
            let _ = v;
        }
    }

    #[test]
    fn trace_escapes_open_scene() {
        // Single floor facet only: upward rays escape after at most one hit.
        let file = SceneFile {
            units: "meters".into(),
            surfaces: vec![SurfaceSpec {
                vertices: vec![
                    [0.0, 0.0, 0.0],
                    [4.0, 0.0, 0.0],
                    [4.0, 4.0, 0.0],
                    [0.0, 4.0, 0.0],
                ],
            }],
            base_stations: vec![BaseStationSpec {
                id: 0,
                position: [2.0, 2.0, 0.0],
                boresight: None,
            }],
        };
        let scene = Scene::from_file(&file).unwrap();
        let ray = Ray::new(Point::new(2.0, 2.0, 1.0), Vec3::new(0.3, 0.1, -1.0), 0);
        let path = scene.trace(&ray, 5, 30.0);
        assert_eq!(path.termination, Termination::Escaped);
        assert!(path.bounces() < 5);
        assert_relative_eq!(path.total_length(), 30.0, epsilon = 1e-9);
    }

    #[test]
    fn specular_law_and_length_additivity_on_random_traces() {
        let scene = canonical();
        let mut rng = StdRng::seed_from_u64(21);
        for _ in 0..200 {
            let origin = Point::new(
                rng.gen_range(0.5..7.5),
                rng.gen_range(0.5..17.5),
                rng.gen_range(0.3..2.2),
            );
            let ray = Ray::new(origin, random_unit(&mut rng), 0);
            let path = scene.trace(&ray, 5, 60.0);

            // Length additivity.
            let verts = path.vertices();
            let cums = path.cumulative_lengths();
            let mut acc = 0.0;
            for i in 1..verts.len() {
                acc += (verts[i] - verts[i - 1]).norm();
                assert!((acc - cums[i]).abs() < 1e-9, "cumulative length mismatch");
            }

            // Specular law at every interior vertex.
            for i in 1..verts.len() - 1 {
                let d_in = (verts[i] - verts[i - 1]).normalize();
                let d_out = (verts[i + 1] - verts[i]).normalize();
                // recover the bounce surface from the vertex
                let surface = scene
                    .surfaces()
                    .iter()
                    .find(|s| s.distance_to_point(&verts[i]) < 1e-6)
                    .expect("interior vertex lies on a surface");
                let n = surface.normal();
                assert!(
                    (d_in.dot(n) + d_out.dot(n)).abs() < 1e-9,
                    "normal component must flip"
                );
                let t_in = d_in - n * d_in.dot(n);
                let t_out = d_out - n * d_out.dot(n);
                assert!((t_in - t_out).norm() < 1e-9, "tangential component preserved");
            }
        }
    }

    #[test]
    fn discretize_straight_path() {
        let scene = canonical();
        // 1.0 m straight path: cap a non-bouncing ray at 1.0 m.
        let ray = Ray::new(Point::new(4.0, 1.0, 1.25), Vec3::new(0.0, 1.0, 0.0), 3);
        let path = scene.trace(&ray, 5, 1.0);
        let pts = path.discretize(0.25, 9);
        assert_eq!(pts.len(), 5);
        for (i, p) in pts.iter().enumerate() {
            assert_relative_eq!(p.length, 0.25 * i as f64, epsilon = 1e-12);
            assert_eq!(p.bs_id, 3);
            assert_eq!(p.ray_index, 9);
        }
    }

    #[test]
    fn discretize_across_bounce_matches_segment_walk() {
        // Bounce at 0.6 m: start 0.6 m from the x=8 wall at normal incidence.
        let scene = canonical();
        let ray = Ray::new(Point::new(7.4, 9.0, 1.25), Vec3::new(1.0, 0.0, 0.0), 0);
        let path = scene.trace(&ray, 5, 1.4);
        assert_eq!(path.vertices().len(), 3);
        assert_relative_eq!(path.cumulative_lengths()[1], 0.6, epsilon = 1e-12);

        let pts = path.discretize(0.5, 0);
        assert_eq!(pts.len(), 3);
        // The 1.0 m point lies on the second segment, 0.4 m past the bounce.
        let p = &pts[2];
        assert_relative_eq!(p.length, 1.0, epsilon = 1e-12);
        assert_relative_eq!(p.position.x, 8.0 - 0.4, epsilon = 1e-9);

        // Independent segment-walk oracle for every point.
        for p in &pts {
            let verts = path.vertices();
            let mut remaining = p.length;
            let mut expect = verts[0];
            for i in 1..verts.len() {
                let seg = verts[i] - verts[i - 1];
                let len = seg.norm();
                if remaining <= len + 1e-12 {
                    expect = verts[i - 1] + seg * (remaining / len);
                    break;
                }
                remaining -= len;
                expect = verts[i];
            }
            assert!((p.position - expect).norm() < 1e-6);
        }
    }

    #[test]
    fn discretize_step_larger_than_path() {
        let scene = canonical();
        let ray = Ray::new(Point::new(4.0, 9.0, 1.25), Vec3::new(0.0, 0.0, 1.0), 0);
        let path = scene.trace(&ray, 0, 0.7);
        let pts = path.discretize(5.0, 0);
        assert_eq!(pts.len(), 1);
        assert_relative_eq!(pts[0].length, 0.0, epsilon = 1e-15);
        assert_eq!(pts[0].position, ray.origin);
    }

    #[test]
    fn discretized_points_stay_inside_watertight_box() {
        let scene = canonical();
        let mut rng = StdRng::seed_from_u64(33);
        let bb = scene.bounding_box();
        for _ in 0..100 {
            let origin = Point::new(
                rng.gen_range(0.5..7.5),
                rng.gen_range(0.5..17.5),
                rng.gen_range(0.3..2.2),
            );
            let ray = Ray::new(origin, random_unit(&mut rng), 0);
            let path = scene.trace(&ray, 5, 80.0);
            for p in path.discretize(0.1, 0) {
                assert!(
                    bb.contains(&p.position, 1e-6),
                    "point {:?} left the box",
                    p.position
                );
                // walking the path by the stored length reproduces the position
                assert!((path.point_at(p.length) - p.position).norm() < 1e-6);
            }
        }
    }
}
