//! Paired full-body graph views, rotation augmentation and visibility masks.

use std::collections::HashMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::body::MotionSequence;
use crate::exec::Execution;
use crate::geometry::{orthonormality_error, Mat3, Vec3};
use crate::imu_sim::{
    apply_noise, gravity, sample_mount, simulate_signal, window_starts, ImuWindow, MountRanges,
    NoisePrior,
};
use crate::placement::{PlacementCandidate, PlacementSet};
use crate::seed::{derive_seed, rng_from_seed};
use crate::{Error, Result};

const ROTATION_TOL: f64 = 1e-6;
pub const DEFAULT_MASK_MIN: usize = 1;
pub const DEFAULT_MASK_MAX: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViewId {
    A,
    B,
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentPlacement {
    pub vertex: usize,
    pub mount: Mat3,
}

/// `T×S×6` per-segment IMU signal with visibility flags.
///
/// Hidden segments hold zeros; the learnable mask token belongs to the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphWindow {
    pub frames: usize,
    pub segments: usize,
    /// Row-major `T×S×6`.
    pub signal: Vec<f64>,
    pub visibility: Vec<bool>,
    pub view: ViewId,
    pub window_id: String,
    pub placements: Vec<Option<SegmentPlacement>>,
}

impl GraphWindow {
    /// All-zero window with every segment hidden.
    pub fn zeros(frames: usize, segments: usize) -> Self {
        Self {
            frames,
            segments,
            signal: vec![0.0; frames * segments * 6],
            visibility: vec![false; segments],
            view: ViewId::Single,
            window_id: String::new(),
            placements: vec![None; segments],
        }
    }

    pub fn sample(&self, frame: usize, segment: usize) -> &[f64] {
        let i = (frame * self.segments + segment) * 6;
        &self.signal[i..i + 6]
    }

    pub fn segment_signal(&self, segment: usize) -> Vec<[f64; 6]> {
        (0..self.frames)
            .map(|t| {
                let mut row = [0.0; 6];
                row.copy_from_slice(self.sample(t, segment));
                row
            })
            .collect()
    }

    pub fn set_segment_signal(&mut self, segment: usize, rows: &[[f64; 6]]) -> Result<()> {
        if rows.len() != self.frames {
            return Err(Error::ShapeMismatch(format!(
                "{} rows for a {}-frame window",
                rows.len(),
                self.frames
            )));
        }
        for (t, row) in rows.iter().enumerate() {
            let i = (t * self.segments + segment) * 6;
            self.signal[i..i + 6].copy_from_slice(row);
        }
        Ok(())
    }

    pub fn visible_segments(&self) -> Vec<usize> {
        (0..self.segments).filter(|&s| self.visibility[s]).collect()
    }
}

/// Usable candidates per segment (degenerate tangents dropped unless requested).
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    pub per_segment: Vec<Vec<PlacementCandidate>>,
}

impl CandidatePool {
    pub fn new(set: &PlacementSet, segments: usize, include_degenerate: bool) -> Self {
        Self {
            per_segment: set
                .by_segment(segments, include_degenerate)
                .into_iter()
                .map(|v| v.into_iter().cloned().collect())
                .collect(),
        }
    }

    pub fn segments(&self) -> usize {
        self.per_segment.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentChoice {
    pub candidate: usize,
    pub vertex: usize,
    pub mount: Mat3,
}

/// One placement and mounting rotation per segment.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSpec {
    pub choices: Vec<SegmentChoice>,
    pub seed: u64,
}

/// Uniform candidate per segment, then a mounting rotation, all from `seed`.
pub fn sample_full_view(pool: &CandidatePool, ranges: MountRanges, seed: u64) -> Result<ViewSpec> {
    let mut rng = rng_from_seed(seed);
    let choices = pool
        .per_segment
        .iter()
        .enumerate()
        .map(|(s, cands)| {
            if cands.is_empty() {
                return Err(Error::NoUsableCandidate(s));
            }
            let candidate = rng.random_range(0..cands.len());
            let mount = sample_mount(&mut rng, ranges).rotation;
            Ok(SegmentChoice {
                candidate,
                vertex: cands[candidate].vertex,
                mount,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ViewSpec { choices, seed })
}

/// Applies `delta` to the accelerometer and gyroscope triplets of every row.
pub fn rotate_imu_signal(window: &[[f64; 6]], delta: &Mat3) -> Result<Vec<[f64; 6]>> {
    let err = orthonormality_error(delta);
    if !(err <= ROTATION_TOL) || delta.determinant() <= 0.0 {
        return Err(Error::NotRotation(err));
    }
    if *delta == Mat3::identity() {
        return Ok(window.to_vec());
    }
    Ok(window
        .iter()
        .map(|r| {
            let a = delta * Vec3::new(r[0], r[1], r[2]);
            let w = delta * Vec3::new(r[3], r[4], r[5]);
            [a.x, a.y, a.z, w.x, w.y, w.z]
        })
        .collect())
}

/// Produces the clean signal of one placement for the current motion window.
pub trait SignalSource: Sync {
    fn frames(&self) -> usize;
    fn signal(&self, cand: &PlacementCandidate, mount: &Mat3) -> Result<Vec<[f64; 6]>>;
}

/// Simulates placements on the fly from a motion window.
pub struct SimulatedSource<'a> {
    pub motion: &'a MotionSequence,
    pub gravity: Vec3,
}

impl<'a> SimulatedSource<'a> {
    pub fn new(motion: &'a MotionSequence) -> Self {
        Self {
            motion,
            gravity: gravity(),
        }
    }
}

impl SignalSource for SimulatedSource<'_> {
    fn frames(&self) -> usize {
        self.motion.frames()
    }

    fn signal(&self, cand: &PlacementCandidate, mount: &Mat3) -> Result<Vec<[f64; 6]>> {
        simulate_signal(self.motion, cand, mount, &self.gravity)
    }
}

/// Looks up precomputed mount-identity windows and rotates them by `mountᵀ`.
pub struct ArchiveSource {
    frames: usize,
    windows: HashMap<(usize, usize), Vec<[f64; 6]>>,
}

impl ArchiveSource {
    /// Collects the archive windows with the given index.
    pub fn new(windows: &[ImuWindow], window_index: usize) -> Result<Self> {
        let mut map = HashMap::new();
        let mut frames = None;
        for w in windows.iter().filter(|w| w.window_index == window_index) {
            if w.mount_rotation != Mat3::identity() {
                return Err(Error::Invalid(format!(
                    "archive window ({}, {}) was simulated with a non-identity mount",
                    w.segment, w.vertex
                )));
            }
            if *frames.get_or_insert(w.samples.len()) != w.samples.len() {
                return Err(Error::ShapeMismatch(
                    "archive windows differ in length".into(),
                ));
            }
            map.insert((w.segment, w.vertex), w.samples.clone());
        }
        let frames = frames.ok_or_else(|| {
            Error::Invalid(format!("no archive windows with index {window_index}"))
        })?;
        Ok(Self {
            frames,
            windows: map,
        })
    }
}

impl SignalSource for ArchiveSource {
    fn frames(&self) -> usize {
        self.frames
    }

    fn signal(&self, cand: &PlacementCandidate, mount: &Mat3) -> Result<Vec<[f64; 6]>> {
        let clean = self
            .windows
            .get(&(cand.segment, cand.vertex))
            .ok_or_else(|| {
                Error::Invalid(format!(
                    "archive has no window for ({}, {})",
                    cand.segment, cand.vertex
                ))
            })?;
        rotate_imu_signal(clean, &mount.transpose())
    }
}

#[derive(Debug, Clone)]
pub struct ViewConfig {
    pub mount_ranges: MountRanges,
    /// Drawn uniformly per segment placement; empty means noise-free views.
    pub priors: Vec<NoisePrior>,
    pub mask_min: usize,
    pub mask_max: usize,
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self {
            mount_ranges: MountRanges::training(),
            priors: Vec::new(),
            mask_min: DEFAULT_MASK_MIN,
            mask_max: DEFAULT_MASK_MAX,
        }
    }
}

const NOISE_STREAM: u64 = 0x6e6f_6973_65;

fn assemble_view(
    source: &dyn SignalSource,
    pool: &CandidatePool,
    cfg: &ViewConfig,
    spec: &ViewSpec,
    view: ViewId,
    window_id: &str,
) -> Result<GraphWindow> {
    let mut g = GraphWindow::zeros(source.frames(), pool.segments());
    g.view = view;
    g.window_id = window_id.to_string();
    for (s, choice) in spec.choices.iter().enumerate() {
        let cand = &pool.per_segment[s][choice.candidate];
        let mut rows = source.signal(cand, &choice.mount)?;
        if !cfg.priors.is_empty() {
            let mut rng = rng_from_seed(derive_seed(spec.seed, &[s as u64, NOISE_STREAM]));
            let prior = &cfg.priors[rng.random_range(0..cfg.priors.len())];
            let w = ImuWindow {
                samples: rows,
                rate: 0.0,
                segment: s,
                vertex: cand.vertex,
                mount_rotation: choice.mount,
                noise_prior_id: None,
                seed: spec.seed,
                window_index: 0,
                start_frame: 0,
            };
            rows = apply_noise(&w, prior, &mut rng)?.samples;
        }
        g.set_segment_signal(s, &rows)?;
        g.visibility[s] = true;
        g.placements[s] = Some(SegmentPlacement {
            vertex: cand.vertex,
            mount: choice.mount,
        });
    }
    Ok(g)
}

/// Two independently sampled full views of the same motion window.
pub fn build_paired_views(
    source: &dyn SignalSource,
    pool: &CandidatePool,
    cfg: &ViewConfig,
    seed_a: u64,
    seed_b: u64,
    window_id: &str,
) -> Result<(GraphWindow, GraphWindow)> {
    let spec_a = sample_full_view(pool, cfg.mount_ranges, seed_a)?;
    let spec_b = sample_full_view(pool, cfg.mount_ranges, seed_b)?;
    Ok((
        assemble_view(source, pool, cfg, &spec_a, ViewId::A, window_id)?,
        assemble_view(source, pool, cfg, &spec_b, ViewId::B, window_id)?,
    ))
}

/// `k ~ U{1..min(5, S)}` distinct segments, sorted.
pub fn sample_visibility_mask<R: Rng + ?Sized>(segments: usize, rng: &mut R) -> Vec<usize> {
    sample_visibility_mask_in(segments, DEFAULT_MASK_MIN, DEFAULT_MASK_MAX, rng)
}

pub fn sample_visibility_mask_in<R: Rng + ?Sized>(
    segments: usize,
    min: usize,
    max: usize,
    rng: &mut R,
) -> Vec<usize> {
    let hi = max.min(segments);
    let lo = min.max(1).min(hi);
    if hi == 0 {
        return Vec::new();
    }
    let k = rng.random_range(lo..=hi);
    let mut picked = index::sample(rng, segments, k).into_vec();
    picked.sort_unstable();
    picked
}

/// Zero-fills and hides every segment not in `visible`.
pub fn apply_mask(window: &GraphWindow, visible: &[usize]) -> Result<GraphWindow> {
    if visible.is_empty() {
        return Err(Error::Invalid("visible segment set is empty".into()));
    }
    if let Some(&s) = visible.iter().find(|&&s| s >= window.segments) {
        return Err(Error::Invalid(format!(
            "visible segment {s} >= {}",
            window.segments
        )));
    }
    let mut out = window.clone();
    for s in 0..window.segments {
        if visible.contains(&s) {
            continue;
        }
        out.visibility[s] = false;
        for t in 0..window.frames {
            let i = (t * window.segments + s) * 6;
            out.signal[i..i + 6].fill(0.0);
        }
    }
    Ok(out)
}

/// Full views A and B with their visible sets.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainingPair {
    pub a: GraphWindow,
    pub b: GraphWindow,
    pub visible_a: Vec<usize>,
    pub visible_b: Vec<usize>,
}

impl PretrainingPair {
    pub fn masked_a(&self) -> Result<GraphWindow> {
        apply_mask(&self.a, &self.visible_a)
    }

    pub fn masked_b(&self) -> Result<GraphWindow> {
        apply_mask(&self.b, &self.visible_b)
    }
}

/// Seeds for one pair: views A/B and masks A/B.
pub fn pair_seeds(run_seed: u64, pair: usize) -> [u64; 4] {
    [0u64, 1, 2, 3].map(|k| derive_seed(run_seed, &[pair as u64, k]))
}

/// Generates `count` pairs cycling through the motion's windows.
pub fn generate_pairs(
    motion: &MotionSequence,
    pool: &CandidatePool,
    cfg: &ViewConfig,
    window_frames: usize,
    stride_frames: usize,
    count: usize,
    run_seed: u64,
    exec: Execution,
) -> Result<Vec<PretrainingPair>> {
    let starts = window_starts(motion.frames(), window_frames, stride_frames);
    if starts.is_empty() && count > 0 {
        return Err(Error::Invalid(format!(
            "motion of {} frames is shorter than one {window_frames}-frame window",
            motion.frames()
        )));
    }
    let slices = starts
        .iter()
        .map(|&s| motion.slice(s, window_frames))
        .collect::<Result<Vec<_>>>()?;
    exec.map_range(count, |i| {
        let w = i % slices.len();
        let source = SimulatedSource::new(&slices[w]);
        pair_from_source(
            &source,
            pool,
            cfg,
            run_seed,
            i,
            &format!("w{:06}-p{:06}", starts[w], i),
        )
    })
    .into_iter()
    .collect()
}

pub fn pair_from_source(
    source: &dyn SignalSource,
    pool: &CandidatePool,
    cfg: &ViewConfig,
    run_seed: u64,
    pair: usize,
    window_id: &str,
) -> Result<PretrainingPair> {
    let [sa, sb, ma, mb] = pair_seeds(run_seed, pair);
    let (a, b) = build_paired_views(source, pool, cfg, sa, sb, window_id)?;
    let visible_a = sample_visibility_mask_in(
        pool.segments(),
        cfg.mask_min,
        cfg.mask_max,
        &mut rng_from_seed(ma),
    );
    let visible_b = sample_visibility_mask_in(
        pool.segments(),
        cfg.mask_min,
        cfg.mask_max,
        &mut rng_from_seed(mb),
    );
    Ok(PretrainingPair {
        a,
        b,
        visible_a,
        visible_b,
    })
}

/// Writes a GPW1 shard atomically and returns the number of pairs written.
pub fn export_pretraining_shard(
    pairs: &[PretrainingPair],
    frames: usize,
    segments: usize,
    path: &std::path::Path,
    force: bool,
) -> Result<usize> {
    let bytes = crate::formats::gpw1::to_bytes(pairs, frames, segments)?;
    crate::formats::write_atomic(path, &bytes, force)?;
    Ok(pairs.len())
}
