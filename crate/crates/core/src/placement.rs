//! Candidate sensor placements on the body surface.
//!
//! For each segment the candidate vertices come from the skinning weights
//! (top-two rule). Each candidate gets a right-handed surface frame
//! `[t, b, n]` built from the vertex normal and the segment's anatomical axis,
//! plus a rigid offset of the vertex in the segment frame averaged over the
//! motion.

use serde::{Deserialize, Serialize};

use crate::body::{kinematic_neighbors, posed_mesh_frames, BodyModel, MotionSequence, Winding};
use crate::exec::Execution;
use crate::geometry::{Mat3, Vec3};
use crate::{Error, Result};

const DEGENERATE_TANGENT: f64 = 1e-8;
const NORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PlacementCandidate {
    pub segment: usize,
    pub vertex: usize,
    /// Columns `[t, b, n]`, expressed in the segment frame.
    pub surface_frame: Mat3,
    /// Vertex position in the segment frame (meters).
    pub offset: Vec3,
    /// The anatomical axis was parallel to the normal; `t` is a fallback axis.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSurface {
    pub segment: usize,
    pub candidate_vertices: Vec<usize>,
    pub centroid: Vec3,
    pub anatomical_axis: Vec3,
}

/// Candidate vertices per segment plus segments left without any.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CandidateSelection {
    pub per_segment: Vec<Vec<usize>>,
    pub empty_segments: Vec<usize>,
}

/// Assigns each vertex to the segments owning its top two nonzero influences.
///
/// Influences are ranked by weight (descending, ties by joint index). A
/// vertex therefore lands in at most two segments; lists are sorted by index.
pub fn select_candidate_vertices(body: &BodyModel) -> Result<CandidateSelection> {
    if !body.has_skin_weights() {
        return Err(Error::Invalid("body has no skin weights".into()));
    }
    let mut per_segment = vec![Vec::new(); body.segment_count()];
    for v in 0..body.vertex_count() {
        let mut ranked: Vec<(usize, f64)> = body
            .influences(v)
            .iter()
            .copied()
            .filter(|&(_, w)| w > 0.0)
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut segs: Vec<usize> = ranked
            .iter()
            .take(2)
            .filter_map(|&(j, _)| body.joint_segment(j))
            .collect();
        segs.dedup();
        for s in segs {
            per_segment[s].push(v);
        }
    }
    let empty_segments = per_segment
        .iter()
        .enumerate()
        .filter(|(_, c)| c.is_empty())
        .map(|(s, _)| s)
        .collect::<Vec<_>>();
    for s in &empty_segments {
        log::warn!(
            "segment {} ({}) has no candidate vertices; excluded from placement",
            s,
            body.segment_names()[*s]
        );
    }
    Ok(CandidateSelection {
        per_segment,
        empty_segments,
    })
}

/// Rest-pose centroid weighted by the summed skinning weight of the segment's joints.
pub fn segment_centroid(body: &BodyModel, segment: usize, candidates: &[usize]) -> Result<Vec3> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates(segment));
    }
    let mut acc = Vec3::zeros();
    let mut total = 0.0;
    for &v in candidates {
        let w = body.segment_weight(v, segment);
        acc += body.rest_vertices()[v] * w;
        total += w;
    }
    if total > 0.0 {
        Ok(acc / total)
    } else {
        let sum: Vec3 = candidates.iter().map(|&v| body.rest_vertices()[v]).sum();
        Ok(sum / candidates.len() as f64)
    }
}

/// Unit axis toward the nearest child centroid, or away from the nearest
/// available ancestor when no child has a centroid.
pub fn anatomical_axis(
    body: &BodyModel,
    centroids: &[Option<Vec3>],
    segment: usize,
) -> Result<Vec3> {
    let own = centroids[segment].ok_or(Error::AxisUndefined(segment))?;
    let (_, children) = kinematic_neighbors(body, segment);
    let nearest_child = children
        .iter()
        .filter_map(|&c| centroids[c].map(|cc| (c, cc, (cc - own).norm())))
        .filter(|&(_, _, d)| d > 0.0)
        // Children are in ascending index order, so a strict comparison keeps the lower index on ties.
        .fold(None::<(usize, Vec3, f64)>, |best, cand| match best {
            Some(b) if b.2 <= cand.2 => Some(b),
            _ => Some(cand),
        });
    if let Some((_, child, d)) = nearest_child {
        return Ok((child - own) / d);
    }
    let mut node = body.parents()[segment];
    while let Some(p) = node {
        if let Some(pc) = centroids[p] {
            let d = (own - pc).norm();
            if d > 0.0 {
                return Ok((own - pc) / d);
            }
        }
        node = body.parents()[p];
    }
    Err(Error::AxisUndefined(segment))
}

/// Area-weighted vertex normals of the rest mesh; `None` for vertices outside every face.
pub fn vertex_normals(body: &BodyModel) -> Vec<Option<Vec3>> {
    let verts = body.rest_vertices();
    let mut acc = vec![Vec3::zeros(); verts.len()];
    let mut touched = vec![false; verts.len()];
    let sign = match body.winding() {
        Winding::Ccw => 1.0,
        Winding::Cw => -1.0,
    };
    for &[a, b, c] in body.faces() {
        // |cross| is twice the triangle area, so summing raw crosses area-weights.
        let n = (verts[b] - verts[a]).cross(&(verts[c] - verts[a])) * sign;
        for i in [a, b, c] {
            acc[i] += n;
            touched[i] = true;
        }
    }
    acc.into_iter()
        .zip(touched)
        .map(|(n, t)| {
            let len = n.norm();
            (t && len > 0.0).then(|| n / len)
        })
        .collect()
}

pub fn vertex_normal(body: &BodyModel, vertex: usize) -> Result<Vec3> {
    let verts = body.rest_vertices();
    let sign = match body.winding() {
        Winding::Ccw => 1.0,
        Winding::Cw => -1.0,
    };
    let mut acc = Vec3::zeros();
    let mut incident = false;
    for &[a, b, c] in body.faces() {
        if a == vertex || b == vertex || c == vertex {
            acc += (verts[b] - verts[a]).cross(&(verts[c] - verts[a])) * sign;
            incident = true;
        }
    }
    let len = acc.norm();
    if !incident || len == 0.0 {
        return Err(Error::NoIncidentFaces(vertex));
    }
    Ok(acc / len)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceFrame {
    pub rotation: Mat3,
    pub degenerate: bool,
}

/// Builds `[t, b, n]` with `t` the projection of `axis` onto the tangent plane.
pub fn surface_frame(normal: &Vec3, axis: &Vec3) -> Result<SurfaceFrame> {
    let len = normal.norm();
    if !((len - 1.0).abs() <= NORMAL_TOL) {
        return Err(Error::Invalid(format!("surface normal has norm {len}")));
    }
    let n = normal / len;
    let u_len = axis.norm();
    let u = if u_len > 0.0 { axis / u_len } else { *axis };

    let mut degenerate = false;
    let mut proj = u - n * u.dot(&n);
    if !(proj.norm() >= DEGENERATE_TANGENT) {
        degenerate = true;
        proj = [Vec3::x(), Vec3::y(), Vec3::z()]
            .into_iter()
            .map(|e| e - n * e.dot(&n))
            .find(|p| p.norm() >= DEGENERATE_TANGENT)
            .expect("a unit normal is orthogonal to at most two basis axes");
    }
    let mut t = proj.normalize();
    // Second pass removes the residual normal component left by cancellation.
    t -= n * t.dot(&n);
    t.normalize_mut();
    let b = n.cross(&t);
    Ok(SurfaceFrame {
        rotation: Mat3::from_columns(&[t, b, n]),
        degenerate,
    })
}

/// Time-averaged vertex position in the segment frame, `(1/T) Σ R_i(t)ᵀ(m_v(t) − p_i(t))`.
pub fn local_offset(
    body: &BodyModel,
    motion: &MotionSequence,
    segment: usize,
    vertex: usize,
) -> Result<Vec3> {
    let posed = posed_mesh_frames(body, motion)?;
    Ok(offset_from_posed(&posed, motion, segment, vertex))
}

fn offset_from_posed(
    posed: &[Vec<Vec3>],
    motion: &MotionSequence,
    segment: usize,
    vertex: usize,
) -> Vec3 {
    let sum: Vec3 = (0..motion.frames())
        .map(|f| {
            let pose = motion.pose(f, segment);
            pose.orientation
                .inverse_transform_vector(&(posed[f][vertex] - pose.position))
        })
        .sum();
    sum / motion.frames() as f64
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlacementSet {
    pub surfaces: Vec<SegmentSurface>,
    pub candidates: Vec<PlacementCandidate>,
    pub excluded_segments: Vec<usize>,
}

impl PlacementSet {
    /// Candidates grouped by segment, optionally dropping degenerate ones.
    pub fn by_segment(
        &self,
        segments: usize,
        include_degenerate: bool,
    ) -> Vec<Vec<&PlacementCandidate>> {
        let mut out = vec![Vec::new(); segments];
        for c in &self.candidates {
            if include_degenerate || !c.degenerate {
                out[c.segment].push(c);
            }
        }
        out
    }
}

pub fn enumerate_placements(body: &BodyModel, motion: &MotionSequence) -> Result<PlacementSet> {
    enumerate_placements_with(body, motion, Execution::default())
}

/// One candidate per (segment, candidate vertex), ordered by segment then vertex.
pub fn enumerate_placements_with(
    body: &BodyModel,
    motion: &MotionSequence,
    exec: Execution,
) -> Result<PlacementSet> {
    if motion.segments() != body.segment_count() {
        return Err(Error::ShapeMismatch(format!(
            "motion has {} segments, body has {}",
            motion.segments(),
            body.segment_count()
        )));
    }
    let selection = select_candidate_vertices(body)?;
    let centroids: Vec<Option<Vec3>> = selection
        .per_segment
        .iter()
        .enumerate()
        .map(|(s, c)| segment_centroid(body, s, c).ok())
        .collect();
    let normals = vertex_normals(body);
    let posed = posed_mesh_frames(body, motion)?;

    let per_segment: Vec<Result<Option<(SegmentSurface, Vec<PlacementCandidate>)>>> = exec
        .map_range(body.segment_count(), |s| {
            let verts = &selection.per_segment[s];
            if verts.is_empty() {
                return Ok(None);
            }
            let centroid = centroids[s].expect("non-empty segment has a centroid");
            let axis = anatomical_axis(body, &centroids, s)?;
            let bind = motion.bind_pose(s).orientation;
            let axis_local = bind.inverse_transform_vector(&axis);
            let candidates = verts
                .iter()
                .map(|&v| {
                    let n = normals[v].ok_or(Error::NoIncidentFaces(v))?;
                    let frame = surface_frame(&bind.inverse_transform_vector(&n), &axis_local)?;
                    Ok(PlacementCandidate {
                        segment: s,
                        vertex: v,
                        surface_frame: frame.rotation,
                        offset: offset_from_posed(&posed, motion, s, v),
                        degenerate: frame.degenerate,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let surface = SegmentSurface {
                segment: s,
                candidate_vertices: verts.clone(),
                centroid,
                anatomical_axis: axis,
            };
            Ok(Some((surface, candidates)))
        });

    let mut set = PlacementSet {
        excluded_segments: selection.empty_segments,
        ..Default::default()
    };
    for item in per_segment {
        if let Some((surface, candidates)) = item? {
            set.surfaces.push(surface);
            set.candidates.extend(candidates);
        }
    }
    let degenerate = set.candidates.iter().filter(|c| c.degenerate).count();
    if degenerate > 0 {
        log::warn!("{degenerate} placements use a fallback tangent (axis parallel to normal)");
    }
    Ok(set)
}

/// JSON Lines record emitted by the `placements` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementRecord {
    pub segment: usize,
    pub vertex: usize,
    /// Surface frame, column-major.
    pub frame: [f64; 9],
    pub offset: [f64; 3],
    pub degenerate: bool,
}

impl From<&PlacementCandidate> for PlacementRecord {
    fn from(c: &PlacementCandidate) -> Self {
        let mut frame = [0.0; 9];
        frame.copy_from_slice(c.surface_frame.as_slice());
        Self {
            segment: c.segment,
            vertex: c.vertex,
            frame,
            offset: [c.offset.x, c.offset.y, c.offset.z],
            degenerate: c.degenerate,
        }
    }
}

impl From<&PlacementRecord> for PlacementCandidate {
    fn from(r: &PlacementRecord) -> Self {
        Self {
            segment: r.segment,
            vertex: r.vertex,
            surface_frame: Mat3::from_column_slice(&r.frame),
            offset: Vec3::from(r.offset),
            degenerate: r.degenerate,
        }
    }
}
