//! GIW1 archive of per-placement IMU windows.

use std::io::Read;

use serde::{Deserialize, Serialize};

use super::{
    check_version, f32_values, parse_json, push_f32, push_prefixed, read_exact_or, FORMAT_VERSION,
};
use crate::geometry::Mat3;
use crate::imu_sim::ImuWindow;
use crate::{Error, Result};

pub const MAGIC: &str = "GIW1";
pub const METADATA_SCHEMA: &str =
    "segment,vertex,window_index,start_frame,mount_rotation(col-major 3x3),noise_prior_id,seed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Giw1Header {
    pub version: u32,
    pub rate: f64,
    pub window_count: usize,
    #[serde(rename = "T")]
    pub frames: usize,
    pub metadata_schema: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct WindowMeta {
    segment: usize,
    vertex: usize,
    window_index: usize,
    start_frame: usize,
    mount_rotation: [f64; 9],
    noise_prior_id: Option<String>,
    seed: u64,
}

/// Encodes windows that share one rate and length.
pub fn to_bytes(windows: &[ImuWindow], rate: f64, frames: usize) -> Result<Vec<u8>> {
    let header = Giw1Header {
        version: FORMAT_VERSION,
        rate,
        window_count: windows.len(),
        frames,
        metadata_schema: METADATA_SCHEMA.into(),
    };
    let mut out = MAGIC.as_bytes().to_vec();
    push_prefixed(&mut out, &serde_json::to_vec(&header)?);
    for w in windows {
        if w.samples.len() != frames {
            return Err(Error::ShapeMismatch(format!(
                "window of {} frames in a {frames}-frame archive",
                w.samples.len()
            )));
        }
        let mut mount = [0.0; 9];
        mount.copy_from_slice(w.mount_rotation.as_slice());
        let meta = WindowMeta {
            segment: w.segment,
            vertex: w.vertex,
            window_index: w.window_index,
            start_frame: w.start_frame,
            mount_rotation: mount,
            noise_prior_id: w.noise_prior_id.clone(),
            seed: w.seed,
        };
        push_prefixed(&mut out, &serde_json::to_vec(&meta)?);
        push_f32(&mut out, w.samples.iter().flatten().copied());
    }
    Ok(out)
}

/// Streams windows from any reader without buffering the archive.
pub struct Giw1Reader<R: Read> {
    inner: R,
    header: Giw1Header,
    read: usize,
    failed: bool,
}

fn read_prefixed<R: Read>(r: &mut R, what: &str) -> Result<Vec<u8>> {
    let mut len = [0u8; 4];
    read_exact_or(r, &mut len, what)?;
    let mut buf = vec![0u8; u32::from_le_bytes(len) as usize];
    read_exact_or(r, &mut buf, what)?;
    Ok(buf)
}

impl<R: Read> Giw1Reader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        inner.read_exact(&mut magic).map_err(|_| Error::BadMagic {
            expected: MAGIC,
            found: magic.to_vec(),
        })?;
        if magic != MAGIC.as_bytes() {
            return Err(Error::BadMagic {
                expected: MAGIC,
                found: magic.to_vec(),
            });
        }
        let header: Giw1Header = parse_json(&read_prefixed(&mut inner, "header")?)?;
        check_version(MAGIC, header.version)?;
        Ok(Self {
            inner,
            header,
            read: 0,
            failed: false,
        })
    }

    pub fn header(&self) -> &Giw1Header {
        &self.header
    }

    fn next_window(&mut self) -> Result<ImuWindow> {
        let what = format!("window {}", self.read);
        let meta: WindowMeta = parse_json(&read_prefixed(&mut self.inner, &what)?)?;
        let mut buf = vec![0u8; self.header.frames * 24];
        read_exact_or(&mut self.inner, &mut buf, &what)?;
        let samples = f32_values(&buf)
            .chunks_exact(6)
            .map(|r| std::array::from_fn(|c| f64::from(r[c])))
            .collect::<Vec<[f64; 6]>>();
        Ok(ImuWindow {
            samples,
            rate: self.header.rate,
            segment: meta.segment,
            vertex: meta.vertex,
            mount_rotation: Mat3::from_column_slice(&meta.mount_rotation),
            noise_prior_id: meta.noise_prior_id,
            seed: meta.seed,
            window_index: meta.window_index,
            start_frame: meta.start_frame,
        })
    }
}

impl<R: Read> Iterator for Giw1Reader<R> {
    type Item = Result<ImuWindow>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.read >= self.header.window_count {
            return None;
        }
        let w = self.next_window();
        self.failed = w.is_err();
        self.read += 1;
        Some(w)
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Giw1Header, Vec<ImuWindow>)> {
    let mut reader = Giw1Reader::new(bytes)?;
    let windows = reader.by_ref().collect::<Result<Vec<_>>>()?;
    if !reader.inner.is_empty() {
        return Err(Error::Header(format!(
            "{} trailing bytes",
            reader.inner.len()
        )));
    }
    Ok((reader.header, windows))
}
