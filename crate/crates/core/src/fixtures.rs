//! Synthetic box-mesh bodies and analytic motions for tests, benches and the
//! `fixture`/`verify` commands.
//!
//! Every segment is an axis-aligned box centred on the segment origin. The
//! four box corners nearest the parent segment are blended 0.7/0.3 with the
//! parent so that the top-two selection rule sees shared boundary vertices.

use std::f64::consts::TAU;

use crate::body::{
    BodyModel, BodyModelParts, MotionSequence, SkinWeight, Winding, XSENS_PARENTS, XSENS_SEGMENTS,
};
use crate::geometry::{Quat, Vec3};

const HALF_EXTENT: f64 = 0.04;

/// Rest-pose segment centres of the 23-segment layout (z up, T-pose).
pub const XSENS_REST_CENTERS: [[f64; 3]; 23] = [
    [0.0, 0.0, 1.00],
    [0.0, 0.0, 1.10],
    [0.0, 0.0, 1.20],
    [0.0, 0.0, 1.30],
    [0.0, 0.0, 1.40],
    [0.0, 0.0, 1.55],
    [0.0, 0.0, 1.70],
    [-0.10, 0.0, 1.45],
    [-0.30, 0.0, 1.45],
    [-0.55, 0.0, 1.45],
    [-0.75, 0.0, 1.45],
    [0.10, 0.0, 1.45],
    [0.30, 0.0, 1.45],
    [0.55, 0.0, 1.45],
    [0.75, 0.0, 1.45],
    [-0.10, 0.0, 0.75],
    [-0.10, 0.0, 0.35],
    [-0.10, 0.05, 0.06],
    [-0.10, 0.18, 0.04],
    [0.10, 0.0, 0.75],
    [0.10, 0.0, 0.35],
    [0.10, 0.05, 0.06],
    [0.10, 0.18, 0.04],
];

const THREE_SEGMENT_CENTERS: [[f64; 3]; 3] = [[0.0, 0.0, 1.0], [0.0, 0.0, 1.3], [0.0, 0.0, 1.6]];

/// Box mesh for every segment; outward CCW winding.
pub fn boxed_body(names: &[&str], parents: &[Option<usize>], centers: &[[f64; 3]]) -> BodyModel {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut weights = Vec::new();
    for (seg, c) in centers.iter().enumerate() {
        let c = Vec3::from(*c);
        let base = vertices.len();
        for k in 0..8 {
            let sx = if k & 1 == 0 { -1.0 } else { 1.0 };
            let sy = if k & 2 == 0 { -1.0 } else { 1.0 };
            let sz = if k & 4 == 0 { -1.0 } else { 1.0 };
            vertices.push(c + Vec3::new(sx, sy, sz) * HALF_EXTENT);
        }
        for [a, b, cc, d] in BOX_QUADS {
            faces.push([base + a, base + b, base + cc]);
            faces.push([base + a, base + cc, base + d]);
        }
        let blended = parents[seg].map(|p| {
            let toward = Vec3::from(centers[p]) - c;
            let mut order: Vec<usize> = (0..8).collect();
            order.sort_by(|&i, &j| {
                let di = (vertices[base + i] - c).dot(&toward);
                let dj = (vertices[base + j] - c).dot(&toward);
                dj.total_cmp(&di).then(i.cmp(&j))
            });
            (p, order[..4].to_vec())
        });
        for k in 0..8 {
            match &blended {
                Some((p, near)) if near.contains(&k) => {
                    weights.push(SkinWeight {
                        vertex: base + k,
                        joint: seg,
                        weight: 0.7,
                    });
                    weights.push(SkinWeight {
                        vertex: base + k,
                        joint: *p,
                        weight: 0.3,
                    });
                }
                _ => weights.push(SkinWeight {
                    vertex: base + k,
                    joint: seg,
                    weight: 1.0,
                }),
            }
        }
    }
    BodyModel::new(BodyModelParts {
        segment_names: names.iter().map(|s| s.to_string()).collect(),
        parents: parents.to_vec(),
        rest_vertices: vertices,
        faces,
        skin_weights: weights,
        segment_joints: None,
        winding: Winding::Ccw,
    })
    .expect("fixture body is valid")
}

// Corner index bits: x = bit 0, y = bit 1, z = bit 2. Quads wound CCW seen from outside.
const BOX_QUADS: [[usize; 4]; 6] = [
    [0, 2, 3, 1], // -z
    [4, 5, 7, 6], // +z
    [0, 1, 5, 4], // -y
    [2, 6, 7, 3], // +y
    [0, 4, 6, 2], // -x
    [1, 3, 7, 5], // +x
];

pub fn xsens_skeleton_body() -> BodyModel {
    boxed_body(&XSENS_SEGMENTS, &XSENS_PARENTS, &XSENS_REST_CENTERS)
}

/// Trunk → upper arm → forearm chain stacked along z.
pub fn three_segment_body() -> BodyModel {
    boxed_body(
        &["Trunk", "UpperArm", "Forearm"],
        &[None, Some(0), Some(1)],
        &THREE_SEGMENT_CENTERS,
    )
}

/// Forward-kinematic motion: each segment swings sinusoidally about its own
/// axis relative to its parent, the root also sways in translation. All
/// angles are zero at t = 0, so frame 0 coincides with the rest layout.
pub fn animated_motion(
    parents: &[Option<usize>],
    centers: &[[f64; 3]],
    rate: f64,
    frames: usize,
) -> MotionSequence {
    let s = parents.len();
    let axes = [Vec3::x_axis(), Vec3::y_axis(), Vec3::z_axis()];
    let mut positions = Vec::with_capacity(frames * s);
    let mut orientations = Vec::with_capacity(frames * s);
    for f in 0..frames {
        let t = f as f64 / rate;
        let mut pos = vec![Vec3::zeros(); s];
        let mut rot = vec![Quat::identity(); s];
        // Parents precede children in both fixture layouts.
        for i in 0..s {
            let freq = 0.4 + 0.13 * i as f64;
            let angle = 0.5 * (TAU * freq * t).sin();
            let local = Quat::from_axis_angle(&axes[i % 3], angle);
            match parents[i] {
                None => {
                    let sway = Vec3::new(
                        0.2 * (TAU * 0.3 * t).sin(),
                        0.1 * (TAU * 0.2 * t).sin(),
                        0.0,
                    );
                    pos[i] = Vec3::from(centers[i]) + sway;
                    rot[i] = local;
                }
                Some(p) => {
                    let offset = Vec3::from(centers[i]) - Vec3::from(centers[p]);
                    pos[i] = pos[p] + rot[p] * offset;
                    rot[i] = rot[p] * local;
                }
            }
        }
        positions.extend(pos);
        orientations.extend(rot);
    }
    MotionSequence::from_parts(rate, s, positions, orientations, None, None)
        .expect("fixture motion is valid")
}

pub fn three_segment_motion(rate: f64, frames: usize) -> MotionSequence {
    animated_motion(
        &[None, Some(0), Some(1)],
        &THREE_SEGMENT_CENTERS,
        rate,
        frames,
    )
}

pub fn xsens_motion(rate: f64, frames: usize) -> MotionSequence {
    animated_motion(&XSENS_PARENTS, &XSENS_REST_CENTERS, rate, frames)
}

/// Every segment fixed at its rest pose.
pub fn stationary_motion(body_centers: &[[f64; 3]], rate: f64, frames: usize) -> MotionSequence {
    let s = body_centers.len();
    let positions = (0..frames)
        .flat_map(|_| body_centers.iter().map(|c| Vec3::from(*c)))
        .collect();
    MotionSequence::from_parts(
        rate,
        s,
        positions,
        vec![Quat::identity(); frames * s],
        None,
        None,
    )
    .expect("fixture motion is valid")
}

pub fn three_segment_centers() -> &'static [[f64; 3]] {
    &THREE_SEGMENT_CENTERS
}
