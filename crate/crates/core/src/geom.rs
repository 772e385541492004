//! Small geometric helpers shared across modules: angle conventions,
//! spherical wrapping, and distance primitives.
//!
//! Angle convention: azimuth is measured in the xy plane from the +x axis
//! toward +y, in (-pi, pi]; elevation is measured from the xy plane toward
//! +z, in [-pi/2, pi/2].

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Point3, Vector3};

/// 3D position in meters.
pub type Point = Point3<f64>;
/// 3D direction or displacement in meters.
pub type Vec3 = Vector3<f64>;

/// Unit direction vector for the given azimuth and elevation.
pub fn unit_from_angles(azimuth: f64, elevation: f64) -> Vec3 {
    let (sa, ca) = azimuth.sin_cos();
    let (se, ce) = elevation.sin_cos();
    Vec3::new(ce * ca, ce * sa, se)
}

/// Azimuth and elevation of a direction vector (need not be unit length).
///
/// Returns `(0.0, ±pi/2)` for directions along the z axis.
pub fn angles_from_unit(dir: &Vec3) -> (f64, f64) {
    let horiz = dir.x.hypot(dir.y);
    let elevation = dir.z.atan2(horiz);
    let azimuth = if horiz > 0.0 { dir.y.atan2(dir.x) } else { 0.0 };
    (azimuth, elevation)
}

/// Reduce an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a.rem_euclid(2.0 * PI);
    if x > PI {
        x -= 2.0 * PI;
    }
    x
}

/// Signed difference `a - b` reduced to (-pi, pi].
pub fn angle_difference(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}

/// Normalize an (azimuth, elevation) pair so that elevation lands in
/// [-pi/2, pi/2], flipping over the pole when a perturbation overshoots it.
pub fn wrap_spherical(azimuth: f64, elevation: f64) -> (f64, f64) {
    let mut az = azimuth;
    let mut el = wrap_angle(elevation);
    if el > FRAC_PI_2 {
        el = PI - el;
        az += PI;
    } else if el < -FRAC_PI_2 {
        el = -PI - el;
        az += PI;
    }
    (wrap_angle(az), el)
}

/// Distance from `p` to the segment `[a, b]`, plus the arc-length offset of
/// the closest point measured from `a`.
pub fn point_segment_distance(p: &Point, a: &Point, b: &Point) -> (f64, f64) {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return ((p - a).norm(), 0.0);
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    let closest = a + ab * t;
    ((p - closest).norm(), t * len2.sqrt())
}

/// SplitMix64 mixer; used to derive independent per-trial seeds from a
/// campaign seed in an order-independent way.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn angles_round_trip() {
        let cases = [
            (0.3, 0.2),
            (-2.9, -1.2),
            (PI, 0.0),
            (0.0, FRAC_PI_2 - 1e-9),
            (1.5, -0.7),
        ];
        for &(az, el) in &cases {
            let d = unit_from_angles(az, el);
            assert_relative_eq!(d.norm(), 1.0, epsilon = 1e-12);
            let (az2, el2) = angles_from_unit(&d);
            assert_relative_eq!(angle_difference(az2, az), 0.0, epsilon = 1e-12);
            assert_relative_eq!(el2, el, epsilon = 1e-12);
        }
    }

    #[test]
    fn wrap_angle_range() {
        assert_relative_eq!(wrap_angle(3.0 * PI), PI, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(-PI), PI, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(-0.1), -0.1, epsilon = 1e-12);
    }

    #[test]
    fn wrap_spherical_flips_over_pole() {
        let (az, el) = wrap_spherical(0.0, FRAC_PI_2 + 0.1);
        assert_relative_eq!(el, FRAC_PI_2 - 0.1, epsilon = 1e-12);
        assert_relative_eq!(az.abs(), PI, epsilon = 1e-12);

        let (az, el) = wrap_spherical(1.0, -FRAC_PI_2 - 0.2);
        assert_relative_eq!(el, -FRAC_PI_2 + 0.2, epsilon = 1e-12);
        assert_relative_eq!(az, 1.0 - PI, epsilon = 1e-12);
    }

    #[test]
    fn segment_distance_basics() {
        let a = Point::new(0.0, 0.0, 0.0);
        let b = Point::new(2.0, 0.0, 0.0);
        let (d, s) = point_segment_distance(&Point::new(1.0, 1.0, 0.0), &a, &b);
        assert_relative_eq!(d, 1.0, epsilon = 1e-12);
        assert_relative_eq!(s, 1.0, epsilon = 1e-12);
        // beyond the endpoint clamps to b
        let (d, s) = point_segment_distance(&Point::new(3.0, 0.0, 0.0), &a, &b);
        assert_relative_eq!(d, 1.0, epsilon = 1e-12);
        assert_relative_eq!(s, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn splitmix_streams_differ() {
        let a = splitmix64(42);
        let b = splitmix64(43);
        assert_ne!(a, b);
        assert_eq!(a, splitmix64(42));
    }
}
