//! Body models, motion sequences, resampling and linear blend skinning.

use serde::{Deserialize, Serialize};

use crate::geometry::{canonical_quat, slerp_shortest, Quat, Vec3};
use crate::{Error, Result};

/// Segment names of the 23-segment Xsens-style body used by the reference dataset.
pub const XSENS_SEGMENTS: [&str; 23] = [
    "Pelvis",
    "L5",
    "L3",
    "T12",
    "T8",
    "Neck",
    "Head",
    "RightShoulder",
    "RightUpperArm",
    "RightForeArm",
    "RightHand",
    "LeftShoulder",
    "LeftUpperArm",
    "LeftForeArm",
    "LeftHand",
    "RightUpperLeg",
    "RightLowerLeg",
    "RightFoot",
    "RightToe",
    "LeftUpperLeg",
    "LeftLowerLeg",
    "LeftFoot",
    "LeftToe",
];

/// Parent of each entry of [`XSENS_SEGMENTS`].
pub const XSENS_PARENTS: [Option<usize>; 23] = [
    None,
    Some(0),
    Some(1),
    Some(2),
    Some(3),
    Some(4),
    Some(5),
    Some(4),
    Some(7),
    Some(8),
    Some(9),
    Some(4),
    Some(11),
    Some(12),
    Some(13),
    Some(0),
    Some(15),
    Some(16),
    Some(17),
    Some(0),
    Some(19),
    Some(20),
    Some(21),
];

const WEIGHT_SUM_TOL: f64 = 1e-6;
const QUAT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Winding {
    #[default]
    Ccw,
    Cw,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkinWeight {
    pub vertex: usize,
    pub joint: usize,
    pub weight: f64,
}

/// Kinematic tree plus template mesh and skinning weights.
///
/// Immutable after construction; all invariants are checked in [`BodyModel::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct BodyModel {
    segment_names: Vec<String>,
    parents: Vec<Option<usize>>,
    rest_vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    segment_joints: Vec<Vec<usize>>,
    winding: Winding,
    // Per-vertex (joint, weight), normalized to sum 1.
    influences: Vec<Vec<(usize, f64)>>,
    joint_segment: Vec<Option<usize>>,
}

#[derive(Debug, Clone, Default)]
pub struct BodyModelParts {
    pub segment_names: Vec<String>,
    pub parents: Vec<Option<usize>>,
    pub rest_vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub skin_weights: Vec<SkinWeight>,
    /// Joints driving each segment; `None` means joint `i` is segment `i`.
    pub segment_joints: Option<Vec<Vec<usize>>>,
    pub winding: Winding,
}

impl BodyModel {
    pub fn new(parts: BodyModelParts) -> Result<Self> {
        let s = parts.parents.len();
        if s < 2 {
            return Err(Error::Invalid(format!(
                "body needs at least 2 segments, got {s}"
            )));
        }
        if parts.segment_names.len() != s {
            return Err(Error::Invalid(format!(
                "{} segment names for {s} segments",
                parts.segment_names.len()
            )));
        }
        validate_tree(&parts.parents)?;

        let v = parts.rest_vertices.len();
        for (f, face) in parts.faces.iter().enumerate() {
            if face.iter().any(|&i| i >= v) {
                return Err(Error::Invalid(format!(
                    "face {f} references a vertex >= {v}"
                )));
            }
        }

        let segment_joints = parts
            .segment_joints
            .unwrap_or_else(|| (0..s).map(|i| vec![i]).collect());
        if segment_joints.len() != s {
            return Err(Error::Invalid(
                "segment_joints length differs from segment count".into(),
            ));
        }
        let n_joints = segment_joints
            .iter()
            .flatten()
            .map(|&j| j + 1)
            .max()
            .unwrap_or(0);
        let mut joint_segment = vec![None; n_joints];
        for (seg, joints) in segment_joints.iter().enumerate() {
            for &j in joints {
                if joint_segment[j].replace(seg).is_some() {
                    return Err(Error::Invalid(format!("joint {j} mapped to two segments")));
                }
            }
        }

        let mut influences = vec![Vec::new(); v];
        for w in &parts.skin_weights {
            if w.vertex >= v {
                return Err(Error::Invalid(format!(
                    "skin weight on vertex {} >= {v}",
                    w.vertex
                )));
            }
            if joint_segment.get(w.joint).copied().flatten().is_none() {
                return Err(Error::Invalid(format!(
                    "skin weight on unmapped joint {}",
                    w.joint
                )));
            }
            if !(0.0..=1.0).contains(&w.weight) {
                return Err(Error::Invalid(format!(
                    "skin weight {} of vertex {} outside [0, 1]",
                    w.weight, w.vertex
                )));
            }
            influences[w.vertex].push((w.joint, w.weight));
        }
        if !parts.skin_weights.is_empty() {
            for (vertex, inf) in influences.iter_mut().enumerate() {
                let sum: f64 = inf.iter().map(|&(_, w)| w).sum();
                if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
                    return Err(Error::WeightSum { vertex, sum });
                }
                for entry in inf.iter_mut() {
                    entry.1 /= sum;
                }
            }
        }

        Ok(Self {
            segment_names: parts.segment_names,
            parents: parts.parents,
            rest_vertices: parts.rest_vertices,
            faces: parts.faces,
            segment_joints,
            winding: parts.winding,
            influences,
            joint_segment,
        })
    }

    pub fn segment_count(&self) -> usize {
        self.parents.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.rest_vertices.len()
    }

    pub fn segment_names(&self) -> &[String] {
        &self.segment_names
    }

    pub fn segment_index(&self, name: &str) -> Option<usize> {
        self.segment_names.iter().position(|n| n == name)
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn rest_vertices(&self) -> &[Vec3] {
        &self.rest_vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn winding(&self) -> Winding {
        self.winding
    }

    pub fn segment_joints(&self) -> &[Vec<usize>] {
        &self.segment_joints
    }

    pub fn has_skin_weights(&self) -> bool {
        self.influences.iter().any(|i| !i.is_empty())
    }

    /// `(joint, weight)` influences of a vertex in storage order.
    pub fn influences(&self, vertex: usize) -> &[(usize, f64)] {
        &self.influences[vertex]
    }

    pub fn joint_segment(&self, joint: usize) -> Option<usize> {
        self.joint_segment.get(joint).copied().flatten()
    }

    /// Summed weight of the segment's joints on `vertex`.
    pub fn segment_weight(&self, vertex: usize, segment: usize) -> f64 {
        self.influences[vertex]
            .iter()
            .filter(|&&(j, _)| self.joint_segment(j) == Some(segment))
            .map(|&(_, w)| w)
            .sum()
    }

    /// Flattened `(vertex, joint, weight)` triples in vertex order.
    pub fn skin_weights(&self) -> Vec<SkinWeight> {
        self.influences
            .iter()
            .enumerate()
            .flat_map(|(vertex, inf)| {
                inf.iter().map(move |&(joint, weight)| SkinWeight {
                    vertex,
                    joint,
                    weight,
                })
            })
            .collect()
    }
}

fn validate_tree(parents: &[Option<usize>]) -> Result<()> {
    let s = parents.len();
    let roots = parents.iter().filter(|p| p.is_none()).count();
    if roots != 1 {
        return Err(Error::NotATree);
    }
    for p in parents.iter().flatten() {
        if *p >= s {
            return Err(Error::NotATree);
        }
    }
    for start in 0..s {
        let mut node = start;
        let mut steps = 0;
        while let Some(p) = parents[node] {
            node = p;
            steps += 1;
            if steps > s {
                return Err(Error::NotATree);
            }
        }
    }
    Ok(())
}

/// Parent (none for the root) and children in ascending index order.
pub fn kinematic_neighbors(body: &BodyModel, segment: usize) -> (Option<usize>, Vec<usize>) {
    let parents = body.parents();
    let children = (0..parents.len())
        .filter(|&c| parents[c] == Some(segment))
        .collect();
    (parents[segment], children)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentPose {
    pub position: Vec3,
    pub orientation: Quat,
}

/// Global segment poses over time, optionally with posed mesh vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    rate: f64,
    frames: usize,
    segments: usize,
    positions: Vec<Vec3>,
    orientations: Vec<Quat>,
    posed_vertices: Option<(usize, Vec<Vec3>)>,
    bind_pose: Option<Vec<SegmentPose>>,
}

impl MotionSequence {
    /// Builds a motion from frame-major `F×S` arrays.
    ///
    /// Quaternions are given as raw `[w, x, y, z]`; each is normalized and
    /// sign-canonicalized. `posed_vertices` is `(V, F×V positions)`.
    pub fn new(
        rate: f64,
        segments: usize,
        positions: Vec<Vec3>,
        quaternions: Vec<[f64; 4]>,
        posed_vertices: Option<(usize, Vec<Vec3>)>,
        bind_pose: Option<Vec<SegmentPose>>,
    ) -> Result<Self> {
        let orientations = quaternions
            .iter()
            .enumerate()
            .map(|(i, q)| {
                canonical_quat(q[0], q[1], q[2], q[3]).ok_or_else(|| {
                    Error::Invalid(format!("quaternion {i} has zero or non-finite norm"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(
            rate,
            segments,
            positions,
            orientations,
            posed_vertices,
            bind_pose,
        )
    }

    pub fn from_parts(
        rate: f64,
        segments: usize,
        positions: Vec<Vec3>,
        orientations: Vec<Quat>,
        posed_vertices: Option<(usize, Vec<Vec3>)>,
        bind_pose: Option<Vec<SegmentPose>>,
    ) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::Invalid(format!("rate must be positive, got {rate}")));
        }
        if segments == 0 || !positions.len().is_multiple_of(segments) || positions.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "{} positions for {segments} segments",
                positions.len()
            )));
        }
        let frames = positions.len() / segments;
        if orientations.len() != positions.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} orientations vs {} positions",
                orientations.len(),
                positions.len()
            )));
        }
        if orientations
            .iter()
            .any(|q| (q.into_inner().norm() - 1.0).abs() > QUAT_NORM_TOL)
        {
            return Err(Error::Invalid("orientation quaternion is not unit".into()));
        }
        if positions.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(Error::Invalid("non-finite segment position".into()));
        }
        if let Some((v, verts)) = &posed_vertices {
            if verts.len() != frames * v {
                return Err(Error::ShapeMismatch(format!(
                    "{} posed vertices for {frames} frames x {v} vertices",
                    verts.len()
                )));
            }
        }
        if let Some(bind) = &bind_pose {
            if bind.len() != segments {
                return Err(Error::ShapeMismatch(
                    "bind pose length differs from segments".into(),
                ));
            }
        }
        Ok(Self {
            rate,
            frames,
            segments,
            positions,
            orientations,
            posed_vertices,
            bind_pose,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn duration(&self) -> f64 {
        (self.frames - 1) as f64 / self.rate
    }

    pub fn position(&self, frame: usize, segment: usize) -> Vec3 {
        self.positions[frame * self.segments + segment]
    }

    pub fn orientation(&self, frame: usize, segment: usize) -> Quat {
        self.orientations[frame * self.segments + segment]
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn orientations(&self) -> &[Quat] {
        &self.orientations
    }

    pub fn pose(&self, frame: usize, segment: usize) -> SegmentPose {
        SegmentPose {
            position: self.position(frame, segment),
            orientation: self.orientation(frame, segment),
        }
    }

    /// Explicit bind pose when declared, otherwise the frame-0 pose.
    pub fn bind_pose(&self, segment: usize) -> SegmentPose {
        match &self.bind_pose {
            Some(b) => b[segment],
            None => self.pose(0, segment),
        }
    }

    pub fn explicit_bind_pose(&self) -> Option<&[SegmentPose]> {
        self.bind_pose.as_deref()
    }

    pub fn posed_vertex_count(&self) -> Option<usize> {
        self.posed_vertices.as_ref().map(|(v, _)| *v)
    }

    pub fn posed_vertices(&self, frame: usize) -> Option<&[Vec3]> {
        self.posed_vertices
            .as_ref()
            .map(|(v, data)| &data[frame * v..(frame + 1) * v])
    }

    /// Frames `[start, start + len)` as a new sequence.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.frames {
            return Err(Error::FrameOutOfRange {
                frame: start + len,
                frames: self.frames,
            });
        }
        let s = self.segments;
        let range = start * s..(start + len) * s;
        let posed = self
            .posed_vertices
            .as_ref()
            .map(|(v, data)| (*v, data[start * v..(start + len) * v].to_vec()));
        let bind = Some((0..s).map(|seg| self.bind_pose(seg)).collect::<Vec<_>>());
        Ok(Self {
            rate: self.rate,
            frames: len,
            segments: s,
            positions: self.positions[range.clone()].to_vec(),
            orientations: self.orientations[range].to_vec(),
            posed_vertices: posed,
            bind_pose: bind,
        })
    }
}

/// Resamples onto a uniform grid at `target_rate` spanning the same interval.
///
/// Positions (and posed vertices) are linearly interpolated, orientations
/// slerped along the shorter arc.
pub fn resample_motion(motion: &MotionSequence, target_rate: f64) -> Result<MotionSequence> {
    if !(target_rate > 0.0 && target_rate.is_finite()) {
        return Err(Error::Invalid(format!(
            "target rate must be positive, got {target_rate}"
        )));
    }
    if motion.frames < 2 {
        return Err(Error::SingleFrame);
    }
    let s = motion.segments;
    let out_frames = (motion.duration() * target_rate + 1e-9).floor() as usize + 1;
    let ratio = motion.rate / target_rate;

    let mut positions = Vec::with_capacity(out_frames * s);
    let mut orientations = Vec::with_capacity(out_frames * s);
    let mut posed = motion
        .posed_vertices
        .as_ref()
        .map(|(v, _)| (*v, Vec::with_capacity(out_frames * v)));

    for j in 0..out_frames {
        let (i0, frac) = source_index(j, ratio, motion.frames);
        for seg in 0..s {
            let a = motion.position(i0, seg);
            let qa = motion.orientation(i0, seg);
            if frac == 0.0 {
                positions.push(a);
                orientations.push(qa);
            } else {
                let b = motion.position(i0 + 1, seg);
                positions.push(a + (b - a) * frac);
                orientations.push(slerp_shortest(&qa, &motion.orientation(i0 + 1, seg), frac));
            }
        }
        if let Some((v, out)) = posed.as_mut() {
            let src = motion.posed_vertices(i0).unwrap();
            if frac == 0.0 {
                out.extend_from_slice(src);
            } else {
                let next = motion.posed_vertices(i0 + 1).unwrap();
                out.extend((0..*v).map(|k| src[k] + (next[k] - src[k]) * frac));
            }
        }
    }

    MotionSequence::from_parts(
        target_rate,
        s,
        positions,
        orientations,
        posed,
        motion.bind_pose.clone(),
    )
}

fn source_index(j: usize, ratio: f64, frames: usize) -> (usize, f64) {
    let u = j as f64 * ratio;
    let i0 = u.floor() as usize;
    if i0 >= frames - 1 {
        return (frames - 1, 0.0);
    }
    let frac = u - i0 as f64;
    // Snap grid points that land on a source frame up to rounding.
    if frac < 1e-12 {
        (i0, 0.0)
    } else if frac > 1.0 - 1e-12 {
        (i0 + 1, 0.0)
    } else {
        (i0, frac)
    }
}

/// Linear blend skinning of the rest mesh at `frame`.
///
/// `m_v = Σ_s w_{v,s} (R_s(t) R_s(bind)⁻¹ (rest_v − p_s(bind)) + p_s(t))`, evaluated
/// in displacement form so that segments resting at their bind pose leave
/// the vertex bit-identical.
pub fn pose_mesh_lbs(body: &BodyModel, motion: &MotionSequence, frame: usize) -> Result<Vec<Vec3>> {
    if frame >= motion.frames() {
        return Err(Error::FrameOutOfRange {
            frame,
            frames: motion.frames(),
        });
    }
    if motion.segments() != body.segment_count() {
        return Err(Error::ShapeMismatch(
            "motion and body segment counts differ".into(),
        ));
    }
    let transforms: Vec<Option<(Quat, Vec3, Vec3)>> = (0..body.segment_count())
        .map(|s| {
            let bind = motion.bind_pose(s);
            let now = motion.pose(frame, s);
            if bind == now {
                None
            } else {
                let rel = now.orientation * bind.orientation.inverse();
                Some((rel, bind.position, now.position))
            }
        })
        .collect();

    Ok(body
        .rest_vertices()
        .iter()
        .enumerate()
        .map(|(v, rest)| {
            let mut disp = Vec3::zeros();
            for &(joint, w) in body.influences(v) {
                let seg = body.joint_segment(joint).expect("validated joint map");
                if let Some((rel, p_bind, p_now)) = &transforms[seg] {
                    disp += (rel * (rest - p_bind) + p_now - rest) * w;
                }
            }
            rest + disp
        })
        .collect())
}

/// Posed vertices for every frame: stored ones when present, LBS otherwise.
pub fn posed_mesh_frames(body: &BodyModel, motion: &MotionSequence) -> Result<Vec<Vec<Vec3>>> {
    match motion.posed_vertex_count() {
        Some(v) if v == body.vertex_count() => Ok((0..motion.frames())
            .map(|f| motion.posed_vertices(f).unwrap().to_vec())
            .collect()),
        Some(v) => Err(Error::ShapeMismatch(format!(
            "motion carries {v} posed vertices, body has {}",
            body.vertex_count()
        ))),
        None => (0..motion.frames())
            .map(|f| pose_mesh_lbs(body, motion, f))
            .collect(),
    }
}
