//! Rotation helpers shared by the kinematic modules.
//!
//! Conventions: Hamilton quaternions stored w-first, right-handed frames,
//! column-vector action `v' = R v`.

use nalgebra::{Matrix3, Quaternion, Rotation3, Unit, UnitQuaternion, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Quat = UnitQuaternion<f64>;

/// Normalizes `(w, x, y, z)` and flips the sign so that `w >= 0`.
pub fn canonical_quat(w: f64, x: f64, y: f64, z: f64) -> Option<Quat> {
    let q = Quaternion::new(w, x, y, z);
    let n = q.norm();
    if !n.is_finite() || n == 0.0 {
        return None;
    }
    let q = q / n;
    let q = if q.w < 0.0 { -q } else { q };
    Some(Quat::new_unchecked(q))
}

/// Returns the same rotation with a non-negative scalar part.
pub fn canonicalize(q: &Quat) -> Quat {
    if q.w < 0.0 {
        Quat::new_unchecked(-q.into_inner())
    } else {
        *q
    }
}

/// Spherical interpolation along the shorter arc.
pub fn slerp_shortest(a: &Quat, b: &Quat, t: f64) -> Quat {
    let qa = a.into_inner();
    let mut qb = b.into_inner();
    let mut dot = qa.dot(&qb);
    if dot < 0.0 {
        qb = -qb;
        dot = -dot;
    }
    let q = if dot > 1.0 - 1e-12 {
        (qa * (1.0 - t) + qb * t).normalize()
    } else {
        let theta = dot.min(1.0).acos();
        let s = theta.sin();
        qa * (((1.0 - t) * theta).sin() / s) + qb * ((t * theta).sin() / s)
    };
    Quat::new_normalize(q)
}

/// Rotation vector (axis times angle) of a unit quaternion, angle in [0, pi].
pub fn log_map(q: &Quat) -> Vec3 {
    let q = canonicalize(q);
    let v = q.imag();
    let s = v.norm();
    if s == 0.0 {
        return Vec3::zeros();
    }
    let angle = 2.0 * s.atan2(q.w);
    v * (angle / s)
}

/// Rotation angle in [0, pi].
pub fn rotation_angle(q: &Quat) -> f64 {
    let q = canonicalize(q);
    2.0 * q.imag().norm().atan2(q.w)
}

pub fn axis_rotation(axis: Vec3, angle: f64) -> Mat3 {
    Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).into_inner()
}

pub fn quat_from_matrix(m: &Mat3) -> Quat {
    Quat::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*m))
}

/// Largest absolute entry of `MᵀM − I`.
pub fn orthonormality_error(m: &Mat3) -> f64 {
    (m.transpose() * m - Mat3::identity()).amax()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn canonical_sign_keeps_rotation() {
        let q = canonical_quat(-0.5, 0.5, -0.5, 0.5).unwrap();
        assert!(q.w >= 0.0);
        let raw = Quat::new_normalize(Quaternion::new(-0.5, 0.5, -0.5, 0.5));
        for e in [Vec3::x(), Vec3::y(), Vec3::z()] {
            assert!((q * e - raw * e).amax() <= 1e-12);
        }
    }

    #[test]
    fn zero_quaternion_rejected() {
        assert!(canonical_quat(0.0, 0.0, 0.0, 0.0).is_none());
    }

    #[test]
    fn slerp_halfway_about_z() {
        let a = Quat::identity();
        let b = Quat::from_axis_angle(&Vec3::z_axis(), FRAC_PI_2);
        let mid = slerp_shortest(&a, &b, 0.5);
        let expected = Quat::from_axis_angle(&Vec3::z_axis(), FRAC_PI_2 / 2.0);
        assert!(mid.angle_to(&expected) < 1e-12);
        // Negated endpoint takes the same short arc.
        let b_neg = Quat::new_unchecked(-b.into_inner());
        assert!(slerp_shortest(&a, &b_neg, 0.5).angle_to(&expected) < 1e-12);
    }

    #[test]
    fn log_map_of_z_rotation() {
        let q = Quat::from_axis_angle(&Vec3::z_axis(), 0.3);
        assert!((log_map(&q) - Vec3::new(0.0, 0.0, 0.3)).amax() < 1e-15);
        assert_eq!(log_map(&Quat::identity()), Vec3::zeros());
    }
}
