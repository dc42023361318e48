//! GPW1 pre-training shards of paired full views and their masks.

use serde::{Deserialize, Serialize};

use super::{
    check_version, f32_values, parse_json, push_f32, push_prefixed, Cursor, FORMAT_VERSION,
};
use crate::geometry::Mat3;
use crate::sampler::{GraphWindow, PretrainingPair, SegmentPlacement, ViewId};
use crate::{Error, Result};

pub const MAGIC: &str = "GPW1";
pub const LAYOUT: &str = "T,S,6";
pub const MASK_SEMANTICS: &str =
    "bit s (byte s/8, least significant bit first) set means segment s is visible; tensors hold the unmasked full views";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gpw1Header {
    pub version: u32,
    #[serde(rename = "T")]
    pub frames: usize,
    #[serde(rename = "S")]
    pub segments: usize,
    pub pairs: usize,
    pub layout: String,
    pub mask_semantics: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PlacementMeta {
    vertex: usize,
    mount: [f64; 9],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PairMeta {
    window_id: String,
    a: Vec<Option<PlacementMeta>>,
    b: Vec<Option<PlacementMeta>>,
}

fn placements_meta(w: &GraphWindow) -> Vec<Option<PlacementMeta>> {
    w.placements
        .iter()
        .map(|p| {
            p.map(|p| {
                let mut mount = [0.0; 9];
                mount.copy_from_slice(p.mount.as_slice());
                PlacementMeta {
                    vertex: p.vertex,
                    mount,
                }
            })
        })
        .collect()
}

fn bitmap(visible: &[usize], segments: usize) -> Vec<u8> {
    let mut out = vec![0u8; segments.div_ceil(8)];
    for &s in visible {
        out[s / 8] |= 1 << (s % 8);
    }
    out
}

fn unbitmap(bytes: &[u8], segments: usize) -> Result<Vec<usize>> {
    if (segments..bytes.len() * 8).any(|s| bytes[s / 8] & (1 << (s % 8)) != 0) {
        return Err(Error::Invalid("visibility bitmap sets padding bits".into()));
    }
    Ok((0..segments)
        .filter(|&s| bytes[s / 8] & (1 << (s % 8)) != 0)
        .collect())
}

/// Encodes pairs sharing one `T×S` shape; an empty slice needs explicit dims.
pub fn to_bytes(pairs: &[PretrainingPair], frames: usize, segments: usize) -> Result<Vec<u8>> {
    let header = Gpw1Header {
        version: FORMAT_VERSION,
        frames,
        segments,
        pairs: pairs.len(),
        layout: LAYOUT.into(),
        mask_semantics: MASK_SEMANTICS.into(),
    };
    let mut out = MAGIC.as_bytes().to_vec();
    push_prefixed(&mut out, &serde_json::to_vec(&header)?);
    for p in pairs {
        for w in [&p.a, &p.b] {
            if (w.frames, w.segments) != (frames, segments) {
                return Err(Error::ShapeMismatch(format!(
                    "view {}x{} in a {frames}x{segments} shard",
                    w.frames, w.segments
                )));
            }
        }
        if p.visible_a
            .iter()
            .chain(&p.visible_b)
            .any(|&s| s >= segments)
        {
            return Err(Error::Invalid("visible segment out of range".into()));
        }
        let meta = PairMeta {
            window_id: p.a.window_id.clone(),
            a: placements_meta(&p.a),
            b: placements_meta(&p.b),
        };
        push_prefixed(&mut out, &serde_json::to_vec(&meta)?);
        out.extend(bitmap(&p.visible_a, segments));
        out.extend(bitmap(&p.visible_b, segments));
        push_f32(&mut out, p.a.signal.iter().copied());
        push_f32(&mut out, p.b.signal.iter().copied());
    }
    Ok(out)
}

fn view(
    meta: &[Option<PlacementMeta>],
    signal: &[u8],
    h: &Gpw1Header,
    id: ViewId,
    window_id: &str,
) -> Result<GraphWindow> {
    if meta.len() != h.segments {
        return Err(Error::Header(format!(
            "{} placements for {} segments",
            meta.len(),
            h.segments
        )));
    }
    let placements: Vec<Option<SegmentPlacement>> = meta
        .iter()
        .map(|m| {
            m.as_ref().map(|m| SegmentPlacement {
                vertex: m.vertex,
                mount: Mat3::from_column_slice(&m.mount),
            })
        })
        .collect();
    Ok(GraphWindow {
        frames: h.frames,
        segments: h.segments,
        signal: f32_values(signal).into_iter().map(f64::from).collect(),
        visibility: placements.iter().map(Option::is_some).collect(),
        view: id,
        window_id: window_id.to_string(),
        placements,
    })
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Gpw1Header, Vec<PretrainingPair>)> {
    let mut c = Cursor::new(bytes);
    c.magic(MAGIC)?;
    let header: Gpw1Header = parse_json(c.prefixed("header")?)?;
    check_version(MAGIC, header.version)?;
    if header.layout != LAYOUT {
        return Err(Error::Header(format!(
            "unsupported layout {:?}",
            header.layout
        )));
    }
    let map_bytes = header.segments.div_ceil(8);
    let tensor_bytes = header.frames * header.segments * 24;
    let mut pairs = Vec::with_capacity(header.pairs.min(1 << 16));
    for i in 0..header.pairs {
        let what = format!("pair {i}");
        let meta: PairMeta = parse_json(c.prefixed(&what)?)?;
        let visible_a = unbitmap(c.take(map_bytes, &what)?, header.segments)?;
        let visible_b = unbitmap(c.take(map_bytes, &what)?, header.segments)?;
        let a = view(
            &meta.a,
            c.take(tensor_bytes, &what)?,
            &header,
            ViewId::A,
            &meta.window_id,
        )?;
        let b = view(
            &meta.b,
            c.take(tensor_bytes, &what)?,
            &header,
            ViewId::B,
            &meta.window_id,
        )?;
        pairs.push(PretrainingPair {
            a,
            b,
            visible_a,
            visible_b,
        });
    }
    c.finish()?;
    Ok((header, pairs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bitmap_round_trip() {
        let b = bitmap(&[0, 3, 9, 22], 23);
        assert_eq!(b, vec![0b0000_1001, 0b0000_0010, 0b0100_0000]);
        assert_eq!(unbitmap(&b, 23).unwrap(), vec![0, 3, 9, 22]);
        assert!(unbitmap(&[0, 0, 0x80], 23).is_err());
    }

    #[test]
    fn empty_shard() {
        let bytes = to_bytes(&[], 300, 23).unwrap();
        let (h, pairs) = from_bytes(&bytes).unwrap();
        assert_eq!((h.frames, h.segments, h.pairs), (300, 23, 0));
        assert!(pairs.is_empty());
        assert!(matches!(
            from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated(_))
        ));
    }
}
