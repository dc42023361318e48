//! EMA product quantizer, token interleaving and codebook diagnostics.

use std::collections::HashSet;

use log::warn;
use nalgebra::DMatrix;
use ndarray::{s, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::objectives::{commitment_loss, LatentSequence};
use crate::sampler::GraphWindow;
use crate::seed::{derive_seed, rng_from_seed};
use crate::{Error, Result};

pub const LAPLACE_EPSILON: f64 = 1e-5;
pub const DEAD_FRACTION: f64 = 0.2;
pub const TEMPORAL_FACTOR: usize = 4;
pub const FEATURIZE_SEED: u64 = 0x6765_6f6d_696d_75;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebooks {
    /// `P×K×dim`.
    pub codes: Array3<f64>,
    /// `P×K`.
    pub ema_counts: Array2<f64>,
    /// `P×K×dim`.
    pub ema_sums: Array3<f64>,
    pub decay: f64,
    pub epsilon: f64,
}

impl Codebooks {
    /// Starts EMA statistics at one observation of each code.
    pub fn from_codes(codes: Array3<f64>, decay: f64) -> Result<Self> {
        let (p, k, dim) = codes.dim();
        if p == 0 || k == 0 || dim == 0 {
            return Err(Error::ShapeMismatch(format!(
                "codebook shape {:?}",
                codes.dim()
            )));
        }
        if codes.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite code entry".into()));
        }
        if !(0.0..=1.0).contains(&decay) {
            return Err(Error::Invalid(format!("decay {decay} outside [0, 1]")));
        }
        Ok(Self {
            ema_sums: codes.clone(),
            ema_counts: Array2::ones((p, k)),
            codes,
            decay,
            epsilon: LAPLACE_EPSILON,
        })
    }

    pub fn books(&self) -> usize {
        self.codes.dim().0
    }

    pub fn size(&self) -> usize {
        self.codes.dim().1
    }

    pub fn dim(&self) -> usize {
        self.codes.dim().2
    }

    pub fn latent_width(&self) -> usize {
        self.books() * self.dim()
    }
}

/// Interleaved code indices of one window.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    pub window_id: String,
    pub visible_segments: Vec<usize>,
    pub tokens: Vec<usize>,
}

/// Average-pools time by 4 and projects per-segment statistics to `d̄`.
///
/// Deterministic stand-in for a frozen encoder. Hidden segments contribute zeros.
pub fn reference_featurize(
    window: &GraphWindow,
    d_bar: usize,
    seed: u64,
) -> Result<LatentSequence> {
    if window.frames == 0 || d_bar == 0 {
        return Err(Error::ShapeMismatch(format!(
            "{} frames, width {d_bar}",
            window.frames
        )));
    }
    let steps = window.frames.div_ceil(TEMPORAL_FACTOR);
    let features = 13 * window.segments;
    let mut feats = Array2::<f64>::zeros((steps, features));
    for l in 0..steps {
        for s in 0..window.segments {
            if !window.visibility[s] {
                continue;
            }
            let base = 13 * s;
            let frames: Vec<usize> = (0..TEMPORAL_FACTOR)
                .map(|k| (l * TEMPORAL_FACTOR + k).min(window.frames - 1))
                .collect();
            for c in 0..6 {
                let vals: Vec<f64> = frames.iter().map(|&t| window.sample(t, s)[c]).collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
                feats[[l, base + c]] = mean;
                feats[[l, base + 6 + c]] = var.sqrt();
            }
            feats[[l, base + 12]] = 1.0;
        }
    }
    let proj = orthogonal_projection(d_bar, features, seed);
    LatentSequence::new(feats.dot(&proj.t()))
}

/// `rows×cols` matrix with orthonormal rows or columns, whichever is fewer.
fn orthogonal_projection(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let (m, n) = (rows.max(cols), rows.min(cols));
    let mut rng = rng_from_seed(seed);
    let g = DMatrix::<f64>::from_fn(m, n, |_, _| rng.sample(StandardNormal));
    let q = g.qr().q();
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        if rows >= cols {
            q[(i, j)]
        } else {
            q[(j, i)]
        }
    })
}

/// Splits a `T′×d̄` latent into `T′×P×dim` chunks.
pub fn split_chunks(latent: &LatentSequence, books: usize) -> Result<Array3<f64>> {
    let (t, d) = latent.values().dim();
    if books == 0 || d % books != 0 {
        return Err(Error::ShapeMismatch(format!(
            "width {d} not divisible into {books} chunks"
        )));
    }
    Ok(latent
        .values()
        .to_owned()
        .into_shape_with_order((t, books, d / books))
        .expect("contiguous"))
}

fn nearest(code_book: ArrayView2<f64>, x: ArrayView1<f64>) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, e) in code_book.rows().into_iter().enumerate() {
        let d: f64 = e.iter().zip(x.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// Nearest code per chunk; ties resolve to the lowest index.
fn assign(chunks: &Array3<f64>, books: &Codebooks) -> Array2<usize> {
    let (n, p, _) = chunks.dim();
    Array2::from_shape_fn((n, p), |(i, j)| {
        nearest(
            books.codes.index_axis(Axis(0), j),
            chunks.slice(s![i, j, ..]),
        )
    })
}

pub fn quantize(
    latent: &LatentSequence,
    books: &Codebooks,
) -> Result<(Array2<usize>, LatentSequence)> {
    if latent.width() != books.latent_width() {
        return Err(Error::ShapeMismatch(format!(
            "latent width {} vs codebook width {}",
            latent.width(),
            books.latent_width()
        )));
    }
    let chunks = split_chunks(latent, books.books())?;
    let idx = assign(&chunks, books);
    let quantized = Array2::from_shape_fn((latent.steps(), latent.width()), |(l, c)| {
        let j = c / books.dim();
        books.codes[[j, idx[[l, j]], c % books.dim()]]
    });
    Ok((idx, LatentSequence::new(quantized)?))
}

pub fn quantize_batch(
    latents: &[LatentSequence],
    books: &Codebooks,
    exec: Execution,
) -> Result<Vec<(Array2<usize>, LatentSequence)>> {
    exec.map(latents, |l| quantize(l, books))
        .into_iter()
        .collect()
}

/// One EMA step from `n×P×dim` chunks and their `n×P` assignments.
pub fn ema_update(
    books: &mut Codebooks,
    chunks: &Array3<f64>,
    assignments: &Array2<usize>,
) -> Result<()> {
    let (n, p, dim) = chunks.dim();
    if n > 0 && (p != books.books() || dim != books.dim() || assignments.dim() != (n, p)) {
        return Err(Error::ShapeMismatch(format!(
            "chunks {:?}, assignments {:?}",
            chunks.dim(),
            assignments.dim()
        )));
    }
    let (pb, k, _) = books.codes.dim();
    if assignments.iter().any(|&a| a >= k) {
        return Err(Error::Invalid("assignment index out of range".into()));
    }
    let mut batch_counts = Array2::<f64>::zeros((pb, k));
    let mut batch_sums = Array3::<f64>::zeros((pb, k, books.dim()));
    for i in 0..n {
        for j in 0..p {
            let a = assignments[[i, j]];
            batch_counts[[j, a]] += 1.0;
            let mut dst = batch_sums.slice_mut(s![j, a, ..]);
            dst += &chunks.slice(s![i, j, ..]);
        }
    }
    let d = books.decay;
    books.ema_counts = &books.ema_counts * d + &batch_counts * (1.0 - d);
    books.ema_sums = &books.ema_sums * d + &batch_sums * (1.0 - d);
    refresh_codes(books);
    Ok(())
}

fn refresh_codes(books: &mut Codebooks) {
    let (p, k, dim) = books.codes.dim();
    let eps = books.epsilon;
    for j in 0..p {
        let total: f64 = books.ema_counts.row(j).sum();
        if !(total > 0.0) {
            continue;
        }
        let global = books.ema_sums.index_axis(Axis(0), j).sum_axis(Axis(0)) / total;
        for kk in 0..k {
            let c = books.ema_counts[[j, kk]];
            for x in 0..dim {
                books.codes[[j, kk, x]] =
                    (books.ema_sums[[j, kk, x]] + eps * global[x]) / (c + eps);
            }
        }
    }
}

/// Replaces codes whose EMA count is below 20% of the codebook mean.
pub fn dead_code_refresh<R: Rng + ?Sized>(
    books: &mut Codebooks,
    chunks: &Array3<f64>,
    rng: &mut R,
) -> Result<usize> {
    let (n, _, _) = chunks.dim();
    let (p, k, dim) = books.codes.dim();
    let mut refreshed = 0;
    for j in 0..p {
        let mean = books.ema_counts.row(j).sum() / k as f64;
        let threshold = DEAD_FRACTION * mean;
        let dead: Vec<usize> = (0..k)
            .filter(|&kk| books.ema_counts[[j, kk]] < threshold)
            .collect();
        if dead.is_empty() {
            continue;
        }
        let live_mean = (0..k)
            .filter(|kk| !dead.contains(kk))
            .map(|kk| books.ema_counts[[j, kk]])
            .sum::<f64>()
            / (k - dead.len()).max(1) as f64;
        let reset = DEAD_FRACTION * live_mean;
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        let picks: Vec<usize> = if dead.len() <= n {
            index::sample(rng, n, dead.len()).into_vec()
        } else {
            (0..dead.len()).map(|_| rng.random_range(0..n)).collect()
        };
        for (&kk, &src) in dead.iter().zip(&picks) {
            for x in 0..dim {
                let v = chunks[[src, j, x]];
                books.codes[[j, kk, x]] = v;
                books.ema_sums[[j, kk, x]] = reset * v;
            }
            books.ema_counts[[j, kk]] = reset;
        }
        refreshed += dead.len();
    }
    Ok(refreshed)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub books: usize,
    pub size: usize,
    pub dim: usize,
    pub decay: f64,
    pub epochs: usize,
    /// Chunk rows per mini-batch.
    pub batch_size: usize,
    pub seed: u64,
    pub init_sample_cap: usize,
    pub refresh_dead: bool,
}

impl FitConfig {
    pub fn new(books: usize, size: usize, dim: usize, seed: u64) -> Self {
        Self {
            books,
            size,
            dim,
            decay: 0.99,
            epochs: 10,
            batch_size: 1024,
            seed,
            init_sample_cap: 20_000,
            refresh_dead: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub commitment: f64,
    pub perplexity: Vec<f64>,
    pub refreshed: usize,
}

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const REFRESH_STREAM: u64 = 3;

/// Stacks every timestep of every latent into `n×P×dim` chunks.
pub fn stack_chunks(latents: &[LatentSequence], books: usize) -> Result<Array3<f64>> {
    let first = latents.first().ok_or(Error::EmptyCorpus)?;
    let width = first.width();
    if books == 0 || width % books != 0 {
        return Err(Error::ShapeMismatch(format!(
            "width {width} not divisible into {books} chunks"
        )));
    }
    let rows: usize = latents.iter().map(LatentSequence::steps).sum();
    let mut flat = Vec::with_capacity(rows * width);
    for l in latents {
        if l.width() != width {
            return Err(Error::ShapeMismatch(format!(
                "latent widths {width} and {}",
                l.width()
            )));
        }
        flat.extend(l.values().iter());
    }
    Ok(Array3::from_shape_vec((rows, books, width / books), flat).expect("sizes checked"))
}

/// k-means++ seeding of one codebook.
fn kmeans_pp<R: Rng + ?Sized>(data: &Array2<f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = data.nrows();
    let mut centers = Array2::zeros((k, data.ncols()));
    let first = rng.random_range(0..n);
    centers.row_mut(0).assign(&data.row(first));
    let dist = |a: ArrayView1<f64>, b: ArrayView1<f64>| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
    };
    let mut d2: Vec<f64> = data
        .rows()
        .into_iter()
        .map(|r| dist(r, centers.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && u < w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&w| w > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).assign(&data.row(pick));
        for (i, r) in data.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(dist(r, centers.row(c)));
        }
    }
    centers
}

/// Initial codes from a capped subsample of the chunks.
pub fn init_codebooks(chunks: &Array3<f64>, cfg: &FitConfig) -> Result<Codebooks> {
    let (n, p, dim) = chunks.dim();
    if n == 0 {
        return Err(Error::EmptyCorpus);
    }
    if p != cfg.books || dim != cfg.dim {
        return Err(Error::ShapeMismatch(format!(
            "chunks {:?} vs P={} dim={}",
            chunks.dim(),
            cfg.books,
            cfg.dim
        )));
    }
    if n < cfg.size {
        warn!(
            "{n} chunks for {} codes; sampling initial codes with replacement",
            cfg.size
        );
    }
    let mut codes = Array3::zeros((p, cfg.size, dim));
    for j in 0..p {
        let mut rng = rng_from_seed(derive_seed(cfg.seed, &[INIT_STREAM, j as u64]));
        let rows: Vec<usize> = if n > cfg.init_sample_cap {
            index::sample(&mut rng, n, cfg.init_sample_cap).into_vec()
        } else {
            (0..n).collect()
        };
        let data = Array2::from_shape_fn((rows.len(), dim), |(i, x)| chunks[[rows[i], j, x]]);
        let centers = if n < cfg.size {
            let mut acc = Array2::zeros((cfg.size, dim));
            for c in 0..cfg.size {
                let r = rng.random_range(0..data.nrows());
                acc.row_mut(c).assign(&data.row(r));
            }
            acc
        } else {
            kmeans_pp(&data, cfg.size, &mut rng)
        };
        codes.index_axis_mut(Axis(0), j).assign(&centers);
    }
    Codebooks::from_codes(codes, cfg.decay)
}

/// Gathers the codes selected by `assignments` into an `n×P×dim` array.
pub fn gather_codes(books: &Codebooks, assignments: &Array2<usize>) -> Array3<f64> {
    let (n, p) = assignments.dim();
    Array3::from_shape_fn((n, p, books.dim()), |(i, j, x)| {
        books.codes[[j, assignments[[i, j]], x]]
    })
}

fn select_rows(chunks: &Array3<f64>, rows: &[usize]) -> Array3<f64> {
    chunks.select(Axis(0), rows)
}

/// Epochs of shuffled mini-batch {assign, EMA update, dead-code refresh}.
pub fn fit_codebooks(
    latents: &[LatentSequence],
    cfg: &FitConfig,
    exec: Execution,
) -> Result<(Codebooks, Vec<EpochLog>)> {
    let chunks = stack_chunks(latents, cfg.books)?;
    fit_chunks(&chunks, cfg, exec)
}

pub fn fit_chunks(
    chunks: &Array3<f64>,
    cfg: &FitConfig,
    exec: Execution,
) -> Result<(Codebooks, Vec<EpochLog>)> {
    if cfg.batch_size == 0 || cfg.size == 0 {
        return Err(Error::Invalid(
            "batch size and codebook size must be positive".into(),
        ));
    }
    let mut books = init_codebooks(chunks, cfg)?;
    let n = chunks.dim().0;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_from_seed(derive_seed(
            cfg.seed,
            &[SHUFFLE_STREAM, epoch as u64],
        )));
        let mut refresh_rng = rng_from_seed(derive_seed(cfg.seed, &[REFRESH_STREAM, epoch as u64]));
        let mut refreshed = 0;
        for rows in order.chunks(cfg.batch_size) {
            let batch = select_rows(chunks, rows);
            let assignments = assign(&batch, &books);
            ema_update(&mut books, &batch, &assignments)?;
            if cfg.refresh_dead {
                refreshed += dead_code_refresh(&mut books, &batch, &mut refresh_rng)?;
            }
        }
        let assignments = assign_parallel(chunks, &books, exec);
        let commitment = commitment_loss(chunks, &gather_codes(&books, &assignments))?;
        let perplexity = histograms(&assignments, books.size())
            .iter()
            .map(|h| perplexity(h))
            .collect();
        log.push(EpochLog {
            epoch,
            commitment,
            perplexity,
            refreshed,
        });
    }
    Ok((books, log))
}

fn assign_parallel(chunks: &Array3<f64>, books: &Codebooks, exec: Execution) -> Array2<usize> {
    let (n, p, _) = chunks.dim();
    let flat: Vec<usize> = exec
        .map_range(n, |i| {
            (0..p)
                .map(|j| {
                    nearest(
                        books.codes.index_axis(Axis(0), j),
                        chunks.slice(s![i, j, ..]),
                    )
                })
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect();
    Array2::from_shape_vec((n, p), flat).expect("n×p assignments")
}

/// Per-codebook assignment counts from `n×P` indices.
pub fn histograms(assignments: &Array2<usize>, size: usize) -> Vec<Vec<u64>> {
    let mut h = vec![vec![0u64; size]; assignments.ncols()];
    for row in assignments.rows() {
        for (j, &a) in row.iter().enumerate() {
            h[j][a] += 1;
        }
    }
    h
}

/// Time-major, codebook-minor flattening.
pub fn interleave_tokens(indices: &Array2<usize>) -> Vec<usize> {
    indices.iter().copied().collect()
}

pub fn deinterleave_tokens(tokens: &[usize], books: usize) -> Result<Array2<usize>> {
    if books == 0 || !tokens.len().is_multiple_of(books) {
        return Err(Error::ShapeMismatch(format!(
            "{} tokens for {books} codebooks",
            tokens.len()
        )));
    }
    Ok(Array2::from_shape_vec((tokens.len() / books, books), tokens.to_vec()).expect("divisible"))
}

/// `exp(H)` of a count histogram, grouped by equal counts so uniform usage gives exactly `K`.
pub fn perplexity(hist: &[u64]) -> f64 {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let mut counts: Vec<u64> = hist.iter().copied().filter(|&c| c > 0).collect();
    counts.sort_unstable();
    let n = total as f64;
    let mut value = 1.0;
    for group in counts.chunk_by(|a, b| a == b) {
        let c = group[0];
        let exponent = (group.len() as u64 * c) as f64 / n;
        value *= (n / c as f64).powf(exponent);
    }
    value
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookReport {
    pub codebook: usize,
    pub size: usize,
    pub used: usize,
    pub usage_rate: f64,
    pub dead_ratio: f64,
    pub perplexity: f64,
    pub top1_mass: f64,
    pub top10_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub codebooks: Vec<CodebookReport>,
    pub sequences: usize,
    pub distinct_sequences: usize,
    pub collision_rate: f64,
}

pub fn top_mass(hist: &[u64], m: usize) -> f64 {
    let total: u64 = hist.iter().sum();
    let mut sorted = hist.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    sorted.iter().take(m).sum::<u64>() as f64 / total as f64
}

pub fn codebook_diagnostics(
    hists: &[Vec<u64>],
    sequences: &[TokenSequence],
) -> Result<DiagnosticsReport> {
    if sequences.is_empty() || hists.iter().all(|h| h.iter().all(|&c| c == 0)) {
        return Err(Error::EmptyCorpus);
    }
    let codebooks = hists
        .iter()
        .enumerate()
        .map(|(j, h)| {
            let k = h.len();
            let used = h.iter().filter(|&&c| c > 0).count();
            CodebookReport {
                codebook: j,
                size: k,
                used,
                usage_rate: used as f64 / k as f64,
                dead_ratio: (k - used) as f64 / k as f64,
                perplexity: perplexity(h),
                top1_mass: top_mass(h, 1),
                top10_mass: top_mass(h, 10),
            }
        })
        .collect();
    let distinct: HashSet<&[usize]> = sequences.iter().map(|s| s.tokens.as_slice()).collect();
    let total = sequences.len();
    Ok(DiagnosticsReport {
        codebooks,
        sequences: total,
        distinct_sequences: distinct.len(),
        collision_rate: (total - distinct.len()) as f64 / total as f64,
    })
}

/// Histograms recomputed from token sequences.
pub fn token_histograms(
    sequences: &[TokenSequence],
    books: usize,
    size: usize,
) -> Result<Vec<Vec<u64>>> {
    let mut h = vec![vec![0u64; size]; books];
    for seq in sequences {
        let idx = deinterleave_tokens(&seq.tokens, books)?;
        for row in idx.rows() {
            for (j, &a) in row.iter().enumerate() {
                if a >= size {
                    return Err(Error::Invalid(format!("token {a} >= {size}")));
                }
                h[j][a] += 1;
            }
        }
    }
    Ok(h)
}
