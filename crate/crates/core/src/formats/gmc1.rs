//! GMC1 motion/body container.
//!
//! [`Gmc1File`] keeps the header and section bytes exactly as read, so
//! `parse` followed by `to_bytes` reproduces the input. Conversion to
//! [`BodyModel`] and [`MotionSequence`] validates and normalizes.

use serde::{Deserialize, Serialize};

use super::{
    check_version, f32_values, parse_json, push_f32, push_prefixed, u32_values, Cursor,
    FORMAT_VERSION,
};
use crate::body::{BodyModel, BodyModelParts, MotionSequence, SegmentPose, SkinWeight, Winding};
use crate::geometry::{canonical_quat, Vec3};
use crate::{Error, Result};

pub const MAGIC: &str = "GMC1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionEntry {
    pub name: String,
    /// `"f32"`, `"u32"`, or `"u32,u32,f32"` for skin-weight triplets.
    pub dtype: String,
    pub shape: Vec<usize>,
    /// Byte offset from the end of the header.
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gmc1Header {
    pub version: u32,
    pub rate: Option<f64>,
    #[serde(rename = "S")]
    pub segments: usize,
    #[serde(rename = "F")]
    pub frames: usize,
    #[serde(rename = "V")]
    pub vertices: usize,
    #[serde(default)]
    pub segment_names: Option<Vec<String>>,
    /// Parent index per segment, `-1` for the root.
    #[serde(default)]
    pub parents: Option<Vec<i64>>,
    #[serde(default)]
    pub segment_joints: Option<Vec<Vec<usize>>>,
    #[serde(default)]
    pub winding: Option<Winding>,
    pub sections: Vec<SectionEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gmc1File {
    pub header: Gmc1Header,
    header_bytes: Vec<u8>,
    sections: Vec<Vec<u8>>,
}

fn section_shape(name: &str, h: &Gmc1Header) -> Option<Vec<usize>> {
    let (f, s, v) = (h.frames, h.segments, h.vertices);
    match name {
        "positions" => Some(vec![f, s, 3]),
        "quaternions" => Some(vec![f, s, 4]),
        "rest_vertices" => Some(vec![v, 3]),
        "posed_vertices" => Some(vec![f, v, 3]),
        "bind_pose" => Some(vec![s, 7]),
        _ => None,
    }
}

struct Builder {
    header: Gmc1Header,
    sections: Vec<Vec<u8>>,
}

impl Builder {
    fn push(&mut self, name: &str, dtype: &str, shape: Vec<usize>, bytes: Vec<u8>) {
        let offset = self.sections.iter().map(|s| s.len() as u64).sum();
        self.header.sections.push(SectionEntry {
            name: name.into(),
            dtype: dtype.into(),
            shape,
            offset,
            length: bytes.len() as u64,
        });
        self.sections.push(bytes);
    }

    fn finish(self) -> Gmc1File {
        let header_bytes = serde_json::to_vec(&self.header).expect("header serializes");
        Gmc1File {
            header: self.header,
            header_bytes,
            sections: self.sections,
        }
    }
}

fn vec3_bytes(points: &[Vec3]) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * 12);
    push_f32(&mut out, points.iter().flat_map(|p| [p.x, p.y, p.z]));
    out
}

impl Gmc1File {
    fn builder(segments: usize, frames: usize, vertices: usize, rate: Option<f64>) -> Builder {
        Builder {
            header: Gmc1Header {
                version: FORMAT_VERSION,
                rate,
                segments,
                frames,
                vertices,
                segment_names: None,
                parents: None,
                segment_joints: None,
                winding: None,
                sections: Vec::new(),
            },
            sections: Vec::new(),
        }
    }

    fn add_body(b: &mut Builder, body: &BodyModel) {
        b.header.segment_names = Some(body.segment_names().to_vec());
        b.header.parents = Some(
            body.parents()
                .iter()
                .map(|p| p.map_or(-1, |i| i as i64))
                .collect(),
        );
        let identity = body
            .segment_joints()
            .iter()
            .enumerate()
            .all(|(i, j)| j == &[i]);
        if !identity {
            b.header.segment_joints = Some(body.segment_joints().to_vec());
        }
        b.header.winding = Some(body.winding());
        if body.vertex_count() > 0 {
            b.push(
                "rest_vertices",
                "f32",
                vec![body.vertex_count(), 3],
                vec3_bytes(body.rest_vertices()),
            );
        }
        if !body.faces().is_empty() {
            let mut out = Vec::with_capacity(body.faces().len() * 12);
            for f in body.faces().iter().flatten() {
                out.extend_from_slice(&(*f as u32).to_le_bytes());
            }
            b.push("faces", "u32", vec![body.faces().len(), 3], out);
        }
        let weights = body.skin_weights();
        if !weights.is_empty() {
            let mut out = Vec::with_capacity(weights.len() * 12);
            for w in &weights {
                out.extend_from_slice(&(w.vertex as u32).to_le_bytes());
                out.extend_from_slice(&(w.joint as u32).to_le_bytes());
                out.extend_from_slice(&(w.weight as f32).to_le_bytes());
            }
            b.push("skin_weights", "u32,u32,f32", vec![weights.len(), 3], out);
        }
    }

    fn add_motion(b: &mut Builder, motion: &MotionSequence) {
        let (f, s) = (motion.frames(), motion.segments());
        b.push(
            "positions",
            "f32",
            vec![f, s, 3],
            vec3_bytes(motion.positions()),
        );
        let mut q = Vec::with_capacity(f * s * 16);
        push_f32(
            &mut q,
            motion
                .orientations()
                .iter()
                .flat_map(|o| [o.w, o.i, o.j, o.k]),
        );
        b.push("quaternions", "f32", vec![f, s, 4], q);
        if let Some(v) = motion.posed_vertex_count() {
            let verts: Vec<Vec3> = (0..f)
                .flat_map(|t| motion.posed_vertices(t).expect("posed").to_vec())
                .collect();
            b.push("posed_vertices", "f32", vec![f, v, 3], vec3_bytes(&verts));
        }
        if let Some(bind) = motion.explicit_bind_pose() {
            let mut out = Vec::with_capacity(s * 28);
            push_f32(
                &mut out,
                bind.iter().flat_map(|p| {
                    let o = p.orientation;
                    [p.position.x, p.position.y, p.position.z, o.w, o.i, o.j, o.k]
                }),
            );
            b.push("bind_pose", "f32", vec![s, 7], out);
        }
    }

    pub fn from_body(body: &BodyModel) -> Self {
        let mut b = Self::builder(body.segment_count(), 0, body.vertex_count(), None);
        Self::add_body(&mut b, body);
        b.finish()
    }

    pub fn from_motion(motion: &MotionSequence) -> Self {
        let v = motion.posed_vertex_count().unwrap_or(0);
        let mut b = Self::builder(motion.segments(), motion.frames(), v, Some(motion.rate()));
        Self::add_motion(&mut b, motion);
        b.finish()
    }

    pub fn from_body_and_motion(body: &BodyModel, motion: &MotionSequence) -> Result<Self> {
        if body.segment_count() != motion.segments() {
            return Err(Error::ShapeMismatch(format!(
                "body has {} segments, motion {}",
                body.segment_count(),
                motion.segments()
            )));
        }
        if motion
            .posed_vertex_count()
            .is_some_and(|v| v != body.vertex_count())
        {
            return Err(Error::ShapeMismatch(
                "posed vertex count differs from body".into(),
            ));
        }
        let mut b = Self::builder(
            body.segment_count(),
            motion.frames(),
            body.vertex_count(),
            Some(motion.rate()),
        );
        Self::add_body(&mut b, body);
        Self::add_motion(&mut b, motion);
        Ok(b.finish())
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor::new(bytes);
        c.magic(MAGIC)?;
        let header_bytes = c.prefixed("header")?.to_vec();
        let header: Gmc1Header = parse_json(&header_bytes)?;
        check_version(MAGIC, header.version)?;
        let data = &bytes[bytes.len() - c.remaining()..];
        let mut sections = Vec::with_capacity(header.sections.len());
        let mut expected_offset = 0u64;
        for entry in &header.sections {
            if entry.offset != expected_offset {
                return Err(Error::Header(format!(
                    "section {} is not in declared order",
                    entry.name
                )));
            }
            let elems: usize = entry.shape.iter().product();
            if entry.length != (elems * 4) as u64
                || (entry.dtype == "u32,u32,f32" && entry.shape.get(1) != Some(&3))
            {
                return Err(Error::Header(format!(
                    "section {} length disagrees with its shape",
                    entry.name
                )));
            }
            if !matches!(entry.dtype.as_str(), "f32" | "u32" | "u32,u32,f32") {
                return Err(Error::Header(format!(
                    "section {} has unknown dtype {}",
                    entry.name, entry.dtype
                )));
            }
            if let Some(shape) = section_shape(&entry.name, &header) {
                if shape != entry.shape {
                    return Err(Error::Header(format!(
                        "section {} shape {:?}, expected {shape:?}",
                        entry.name, entry.shape
                    )));
                }
            }
            let end = entry.offset + entry.length;
            if end > data.len() as u64 {
                return Err(Error::Truncated(entry.name.clone()));
            }
            sections.push(data[entry.offset as usize..end as usize].to_vec());
            expected_offset = end;
        }
        if expected_offset != data.len() as u64 {
            return Err(Error::Header(format!(
                "{} trailing bytes",
                data.len() as u64 - expected_offset
            )));
        }
        Ok(Self {
            header,
            header_bytes,
            sections,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.as_bytes().to_vec();
        push_prefixed(&mut out, &self.header_bytes);
        for s in &self.sections {
            out.extend_from_slice(s);
        }
        out
    }

    fn section(&self, name: &str) -> Option<&[u8]> {
        self.header
            .sections
            .iter()
            .position(|e| e.name == name)
            .map(|i| self.sections[i].as_slice())
    }

    fn points(&self, name: &str) -> Option<Vec<Vec3>> {
        self.section(name).map(|b| {
            f32_values(b)
                .chunks_exact(3)
                .map(|p| Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64))
                .collect()
        })
    }

    pub fn has_section(&self, name: &str) -> bool {
        self.section(name).is_some()
    }

    pub fn to_body(&self) -> Result<BodyModel> {
        let h = &self.header;
        let names = h
            .segment_names
            .clone()
            .unwrap_or_else(|| (0..h.segments).map(|i| format!("segment{i}")).collect());
        let parents = h
            .parents
            .as_ref()
            .ok_or_else(|| Error::Header("body container declares no parents".into()))?
            .iter()
            .map(|&p| match p {
                -1 => Ok(None),
                p if p >= 0 && (p as usize) < h.segments => Ok(Some(p as usize)),
                p => Err(Error::Invalid(format!("parent index {p} out of range"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let faces = self
            .section("faces")
            .map(|b| {
                u32_values(b)
                    .chunks_exact(3)
                    .map(|f| [f[0] as usize, f[1] as usize, f[2] as usize])
                    .collect()
            })
            .unwrap_or_default();
        let skin_weights = self
            .section("skin_weights")
            .map(|b| {
                b.chunks_exact(12)
                    .map(|c| SkinWeight {
                        vertex: u32::from_le_bytes(c[0..4].try_into().expect("4 bytes")) as usize,
                        joint: u32::from_le_bytes(c[4..8].try_into().expect("4 bytes")) as usize,
                        weight: f32::from_le_bytes(c[8..12].try_into().expect("4 bytes")) as f64,
                    })
                    .collect()
            })
            .unwrap_or_default();
        BodyModel::new(BodyModelParts {
            segment_names: names,
            parents,
            rest_vertices: self.points("rest_vertices").unwrap_or_default(),
            faces,
            skin_weights,
            segment_joints: h.segment_joints.clone(),
            winding: h.winding.unwrap_or_default(),
        })
    }

    pub fn to_motion(&self) -> Result<MotionSequence> {
        let h = &self.header;
        let rate = h
            .rate
            .ok_or_else(|| Error::Header("motion container declares no rate".into()))?;
        let positions = self
            .points("positions")
            .ok_or_else(|| Error::Header("motion container has no positions section".into()))?;
        let quats: Vec<[f64; 4]> = self
            .section("quaternions")
            .map(|b| {
                f32_values(b)
                    .chunks_exact(4)
                    .map(|q| [q[0] as f64, q[1] as f64, q[2] as f64, q[3] as f64])
                    .collect()
            })
            .ok_or_else(|| Error::Header("motion container has no quaternions section".into()))?;
        let posed = self.points("posed_vertices").map(|v| (h.vertices, v));
        let bind = self
            .section("bind_pose")
            .map(|b| {
                f32_values(b)
                    .chunks_exact(7)
                    .map(|p| {
                        let orientation =
                            canonical_quat(p[3] as f64, p[4] as f64, p[5] as f64, p[6] as f64)
                                .ok_or_else(|| {
                                    Error::Invalid("bind pose quaternion has zero norm".into())
                                })?;
                        Ok(SegmentPose {
                            position: Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64),
                            orientation,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?;
        if h.frames == 0 {
            return Err(Error::Invalid("motion container has zero frames".into()));
        }
        MotionSequence::new(rate, h.segments, positions, quats, posed, bind)
    }
}

/// Reads a body model, rejecting containers without one.
pub fn read_body(bytes: &[u8]) -> Result<BodyModel> {
    Gmc1File::parse(bytes)?.to_body()
}

pub fn read_motion(bytes: &[u8]) -> Result<MotionSequence> {
    Gmc1File::parse(bytes)?.to_motion()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn body_and_motion_round_trip() {
        let body = fixtures::three_segment_body();
        let motion = fixtures::three_segment_motion(60.0, 12);
        let file = Gmc1File::from_body_and_motion(&body, &motion).unwrap();
        let bytes = file.to_bytes();
        let parsed = Gmc1File::parse(&bytes).unwrap();
        assert_eq!(parsed.to_bytes(), bytes);
        let b2 = parsed.to_body().unwrap();
        assert_eq!(b2.segment_names(), body.segment_names());
        assert_eq!(b2.faces(), body.faces());
        let m2 = parsed.to_motion().unwrap();
        assert_eq!(m2.frames(), 12);
        for (a, b) in m2.positions().iter().zip(motion.positions()) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn rejects_corruption() {
        let bytes = Gmc1File::from_motion(&fixtures::three_segment_motion(30.0, 4)).to_bytes();
        assert!(
            matches!(Gmc1File::parse(&bytes[..bytes.len() - 3]), Err(Error::Truncated(s)) if s == "quaternions")
        );
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Gmc1File::parse(&bad), Err(Error::BadMagic { .. })));
        let mut future = bytes.clone();
        let at = future
            .windows(10)
            .position(|w| w == b"\"version\":")
            .unwrap()
            + 10;
        future[at] = b'7';
        assert!(matches!(
            Gmc1File::parse(&future),
            Err(Error::UnsupportedVersion { version: 7, .. })
        ));
        assert!(Gmc1File::parse(&bytes).unwrap().to_body().is_err());
    }
}
