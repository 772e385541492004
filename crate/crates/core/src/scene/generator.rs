//! Scene-file generator for the canonical box environment: an axis-aligned
//! room with base stations in the top corners and optional axis-aligned
//! clutter boxes standing on the floor.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BaseStationSpec, SceneFile, SurfaceSpec};

/// An axis-aligned clutter box standing on the floor.
#[derive(Debug, Clone, Copy)]
pub struct ClutterBox {
    /// Footprint corner (x, y) in meters.
    pub origin: [f64; 2],
    /// Footprint size (width, depth) in meters.
    pub size: [f64; 2],
    /// Height in meters (box spans z in [0, height]).
    pub height: f64,
}

impl ClutterBox {
    fn facets(&self) -> Vec<SurfaceSpec> {
        let [x0, y0] = self.origin;
        let x1 = x0 + self.size[0];
        let y1 = y0 + self.size[1];
        let h = self.height;
        // Wound so the derived normals point away from the solid box.
        vec![
            quad([x0, y0, h], [x1, y0, h], [x1, y1, h], [x0, y1, h]), // top, +z
            quad([x0, y0, 0.0], [x0, y1, 0.0], [x1, y1, 0.0], [x1, y0, 0.0]), // bottom, -z
            quad([x0, y0, 0.0], [x0, y0, h], [x0, y1, h], [x0, y1, 0.0]), // -x
            quad([x1, y0, 0.0], [x1, y1, 0.0], [x1, y1, h], [x1, y0, h]), // +x
            quad([x0, y0, 0.0], [x1, y0, 0.0], [x1, y0, h], [x0, y0, h]), // -y
            quad([x0, y1, 0.0], [x0, y1, h], [x1, y1, h], [x1, y1, 0.0]), // +y
        ]
    }

    fn overlaps(&self, other: &ClutterBox, gap: f64) -> bool {
        let [ax0, ay0] = self.origin;
        let (ax1, ay1) = (ax0 + self.size[0], ay0 + self.size[1]);
        let [bx0, by0] = other.origin;
        let (bx1, by1) = (bx0 + other.size[0], by0 + other.size[1]);
        ax0 < bx1 + gap && bx0 < ax1 + gap && ay0 < by1 + gap && by0 < ay1 + gap
    }
}

fn quad(a: [f64; 3], b: [f64; 3], c: [f64; 3], d: [f64; 3]) -> SurfaceSpec {
    SurfaceSpec {
        vertices: vec![a, b, c, d],
    }
}

/// Split a quad into two rectangles along its first edge, preserving the
/// winding (and therefore the derived normal).
fn split_quad(q: SurfaceSpec) -> [SurfaceSpec; 2] {
    let v = &q.vertices;
    let mid = |a: [f64; 3], b: [f64; 3]| {
        [
            0.5 * (a[0] + b[0]),
            0.5 * (a[1] + b[1]),
            0.5 * (a[2] + b[2]),
        ]
    };
    let m01 = mid(v[0], v[1]);
    let m32 = mid(v[3], v[2]);
    [quad(v[0], m01, m32, v[3]), quad(m01, v[1], v[2], m32)]
}

/// The 12 rectangular room facets (each face of the box halved), wound so
/// the derived normals point into the interior (away from the wall material).
fn room_facets(w: f64, l: f64, h: f64) -> Vec<SurfaceSpec> {
    let faces = [
        quad([0.0, 0.0, 0.0], [w, 0.0, 0.0], [w, l, 0.0], [0.0, l, 0.0]), // floor, +z
        quad([0.0, 0.0, h], [0.0, l, h], [w, l, h], [w, 0.0, h]),         // ceiling, -z
        quad([0.0, 0.0, 0.0], [0.0, l, 0.0], [0.0, l, h], [0.0, 0.0, h]), // x=0, +x
        quad([w, 0.0, 0.0], [w, 0.0, h], [w, l, h], [w, l, 0.0]),         // x=w, -x
        quad([0.0, 0.0, 0.0], [0.0, 0.0, h], [w, 0.0, h], [w, 0.0, 0.0]), // y=0, +y
        quad([0.0, l, 0.0], [w, l, 0.0], [w, l, h], [0.0, l, h]),         // y=l, -y
    ];
    faces.into_iter().flat_map(split_quad).collect()
}

/// Build a box scene with base stations in the four top corners and the
/// given clutter. The room is 6 facets; each clutter box adds 6 more.
pub fn box_scene(width: f64, length: f64, height: f64, clutter: &[ClutterBox]) -> SceneFile {
    let mut surfaces = room_facets(width, length, height);
    for c in clutter {
        surfaces.extend(c.facets());
    }
    let base_stations = vec![
        BaseStationSpec {
            id: 0,
            position: [0.0, 0.0, height],
            boresight: None,
        },
        BaseStationSpec {
            id: 1,
            position: [width, 0.0, height],
            boresight: None,
        },
        BaseStationSpec {
            id: 2,
            position: [0.0, length, height],
            boresight: None,
        },
        BaseStationSpec {
            id: 3,
            position: [width, length, height],
            boresight: None,
        },
    ];
    SceneFile {
        units: "meters".into(),
        surfaces,
        base_stations,
    }
}

/// Deterministically place `count` non-overlapping clutter boxes inside a
/// room of the given footprint. Box footprints are 1.2–2.4 m per side with
/// heights 1.2–2.2 m, kept 0.6 m off the walls and 0.4 m apart.
pub fn random_clutter(count: usize, width: f64, length: f64, seed: u64) -> Vec<ClutterBox> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wall_margin = 0.6;
    let gap = 0.4;
    let mut boxes: Vec<ClutterBox> = Vec::with_capacity(count);
    let mut attempts = 0;
    while boxes.len() < count && attempts < 10_000 {
        attempts += 1;
        let w = rng.gen_range(1.2..2.4);
        let d = rng.gen_range(1.2..2.4);
        let h = rng.gen_range(1.2..2.2);
        let max_x = width - wall_margin - w;
        let max_y = length - wall_margin - d;
        if max_x <= wall_margin || max_y <= wall_margin {
            break;
        }
        let candidate = ClutterBox {
            origin: [rng.gen_range(wall_margin..max_x), rng.gen_range(wall_margin..max_y)],
            size: [w, d],
            height: h,
        };
        if boxes.iter().all(|b| !candidate.overlaps(b, gap)) {
            boxes.push(candidate);
        }
    }
    boxes
}

/// The evaluation environment: an 8 m × 18 m × 2.5 m industrial room with
/// 4 corner base stations and `clutter_count` pseudo-random clutter boxes
/// drawn from `clutter_seed`.
pub fn canonical_scene(clutter_count: usize, clutter_seed: u64) -> SceneFile {
    let clutter = random_clutter(clutter_count, 8.0, 18.0, clutter_seed);
    box_scene(8.0, 18.0, 2.5, &clutter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Scene;

    #[test]
    fn canonical_defaults_match_expected_layout() {
        let file = canonical_scene(0, 0);
        assert_eq!(file.surfaces.len(), 12);
        let positions: Vec<[f64; 3]> = file.base_stations.iter().map(|b| b.position).collect();
        assert_eq!(
            positions,
            vec![
                [0.0, 0.0, 2.5],
                [8.0, 0.0, 2.5],
                [0.0, 18.0, 2.5],
                [8.0, 18.0, 2.5]
            ]
        );
        Scene::from_file(&file).expect("canonical scene validates");
    }

    #[test]
    fn clutter_scene_validates_and_avoids_bs() {
        let file = canonical_scene(6, 7);
        assert_eq!(file.surfaces.len(), 12 + 6 * 6);
        let scene = Scene::from_file(&file).expect("cluttered scene validates");
        // Clutter tops at <= 2.2 m never reach the 2.5 m ceiling corners.
        for bs in scene.base_stations() {
            for s in scene.surfaces() {
                assert!(s.distance_to_point(&bs.position) > -1e-12);
            }
        }
    }

    #[test]
    fn random_clutter_is_deterministic_and_disjoint() {
        let a = random_clutter(6, 8.0, 18.0, 42);
        let b = random_clutter(6, 8.0, 18.0, 42);
        assert_eq!(a.len(), 6);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.origin, y.origin);
            assert_eq!(x.size, y.size);
            assert_eq!(x.height, y.height);
        }
        for i in 0..a.len() {
            for j in 0..i {
                assert!(!a[i].overlaps(&a[j], 0.0), "boxes {i} and {j} overlap");
            }
        }
    }
}
