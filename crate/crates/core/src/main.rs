use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{Array2, Array3, ArrayD, Ix2, Ix3};
use serde::Deserialize;

use geomimu::body::{resample_motion, BodyModel, MotionSequence};
use geomimu::exec::{init_thread_pool, Execution};
use geomimu::formats::{gcb1, giw1, gmc1, gpw1, matrix, tokens, write_atomic};
use geomimu::imu_sim::{
    estimate_noise_prior, simulate_placements, ImuWindow, MountRanges, NoisePrior,
    QuietWindowConfig, SimulationConfig,
};
use geomimu::objectives::{
    commitment_loss, infonce_cross_view, itc_loss, label_contrastive_loss, mcvpcl_loss,
    seq_cosine_similarity, smooth_l1, EmbeddingBatch, LatentSequence,
};
use geomimu::placement::{enumerate_placements, PlacementCandidate, PlacementRecord, PlacementSet};
use geomimu::sampler::{
    export_pretraining_shard, pair_from_source, ArchiveSource, CandidatePool, GraphWindow,
    ViewConfig,
};
use geomimu::tokenizer::{
    codebook_diagnostics, fit_codebooks, interleave_tokens, quantize_batch, reference_featurize,
    token_histograms, FitConfig, TokenSequence, FEATURIZE_SEED,
};
use geomimu::verify::{self, Suite};
use geomimu::{fixtures, Error, Result};

mod plot;

#[derive(Parser)]
#[command(
    name = "geomimu",
    version,
    about = "Wearable IMU simulation, graph-window sampling and IMU tokenization"
)]
struct Cli {
    /// Worker threads (default: logical cores).
    #[arg(long, global = true, env = "GEOMIMU_THREADS")]
    threads: Option<usize>,
    /// Replace existing output files.
    #[arg(long, global = true)]
    force: bool,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a bundled synthetic body and motion as GMC1 files.
    Fixture(FixtureArgs),
    /// Enumerate surface placements as JSON Lines.
    Placements(PlacementsArgs),
    /// Simulate IMU windows for placements into a GIW1 archive.
    Simulate(SimulateArgs),
    /// Estimate a noise prior from the quiet windows of a recorded stream.
    EstimateNoise(EstimateNoiseArgs),
    /// Build paired masked graph views into a GPW1 shard.
    SampleViews(SampleViewsArgs),
    /// Product-quantizer training, encoding and diagnostics.
    Pq {
        #[command(subcommand)]
        command: PqCommand,
    },
    /// Evaluate a reference loss on stored inputs.
    Loss(LossArgs),
    /// Run the built-in self-check suites.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FixtureKind {
    ThreeSegment,
    Xsens,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long, value_enum, default_value = "three-segment")]
    kind: FixtureKind,
    #[arg(long, default_value_t = 600)]
    frames: usize,
    #[arg(long, default_value_t = 60.0)]
    rate: f64,
    /// Hold every segment at its rest pose.
    #[arg(long)]
    stationary: bool,
    #[arg(long)]
    out_body: PathBuf,
    #[arg(long)]
    out_motion: PathBuf,
}

#[derive(Args)]
struct PlacementsArgs {
    #[arg(long)]
    body: PathBuf,
    #[arg(long)]
    motion: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MountArgs {
    /// In-plane mounting half-range about the normal, degrees.
    #[arg(long, default_value_t = 0.0)]
    in_plane_deg: f64,
    /// Tilt half-range about each tangent axis, degrees.
    #[arg(long, default_value_t = 0.0)]
    tilt_deg: f64,
}

impl MountArgs {
    fn ranges(&self) -> MountRanges {
        MountRanges {
            in_plane: self.in_plane_deg.to_radians(),
            tilt: self.tilt_deg.to_radians(),
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    body: PathBuf,
    #[arg(long)]
    motion: PathBuf,
    /// `all` or a placements JSON Lines file.
    #[arg(long, default_value = "all")]
    placements: String,
    /// Noise prior JSON (one prior or a list) or `none`.
    #[arg(long, default_value = "none")]
    noise: String,
    #[arg(long, default_value_t = 60.0)]
    rate: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 300)]
    window: usize,
    #[arg(long)]
    stride: Option<usize>,
    #[command(flatten)]
    mount: MountArgs,
    /// Render the first window as SVG.
    #[arg(long)]
    plot: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateNoiseArgs {
    /// CSV with columns t,ax,ay,az,gx,gy,gz.
    #[arg(long)]
    stream: PathBuf,
    /// Sample rate; derived from the t column when omitted.
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    window_seconds: f64,
    #[arg(long, default_value_t = 0.5)]
    stride_seconds: f64,
    #[arg(long, default_value_t = 0.02)]
    gyro_gate: f64,
    #[arg(long, default_value_t = 0.05)]
    accel_gate: f64,
    #[arg(long)]
    source_id: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SampleViewsArgs {
    /// Mount-identity GIW1 archive to draw windows from.
    #[arg(long, conflicts_with_all = ["body", "motion"])]
    giw: Option<PathBuf>,
    /// Simulate on the fly from this body (with --motion).
    #[arg(long, requires = "motion")]
    body: Option<PathBuf>,
    #[arg(long, requires = "body")]
    motion: Option<PathBuf>,
    #[arg(long)]
    pairs: usize,
    #[arg(long, default_value_t = 1)]
    mask_min: usize,
    #[arg(long, default_value_t = 5)]
    mask_max: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 300)]
    window: usize,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long, default_value_t = 60.0)]
    rate: f64,
    #[arg(long, default_value_t = 180.0)]
    in_plane_deg: f64,
    #[arg(long, default_value_t = 10.0)]
    tilt_deg: f64,
    #[arg(long, default_value = "none")]
    noise: String,
    /// Keep placements whose tangent used the degenerate fallback.
    #[arg(long)]
    include_degenerate: bool,
    #[arg(long)]
    plot: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum PqCommand {
    /// Fit EMA product-quantizer codebooks.
    Train(PqTrainArgs),
    /// Encode latents into interleaved token sequences.
    Encode(PqEncodeArgs),
    /// Codebook usage and collision diagnostics.
    Stats(PqStatsArgs),
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct LatentSource {
    /// GMX1 array of shape N×T′×d̄.
    #[arg(long)]
    latents: Option<PathBuf>,
    /// GPW1 shard passed through the reference featurizer.
    #[arg(long)]
    featurize: Option<PathBuf>,
}

#[derive(Args)]
struct PqTrainArgs {
    #[command(flatten)]
    source: LatentSource,
    #[arg(long = "P", default_value_t = 2)]
    books: usize,
    #[arg(long = "K", default_value_t = 2048)]
    size: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 0.99)]
    decay: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 1024)]
    batch_size: usize,
    /// Featurize masked views instead of full views.
    #[arg(long)]
    masked: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PqEncodeArgs {
    #[arg(long)]
    books: PathBuf,
    #[command(flatten)]
    source: LatentSource,
    #[arg(long)]
    masked: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PqStatsArgs {
    #[arg(long)]
    books: PathBuf,
    #[arg(long)]
    tokens: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossName {
    Mcvpcl,
    Infonce,
    Cosine,
    Itc,
    Label,
    Commitment,
    SmoothL1,
}

#[derive(Args)]
struct LossArgs {
    #[arg(value_enum)]
    name: LossName,
    /// GMX1 arrays, or one GPW1 shard for the cross-view losses.
    #[arg(long, num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    /// Latent width used when featurizing a GPW1 shard.
    #[arg(long, default_value_t = 128)]
    dim: usize,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn require_seed(seed: Option<u64>) -> Result<u64> {
    seed.ok_or_else(|| Error::Invalid("missing --seed".into()))
}

fn load_inputs(body: &Path, motion: &Path, rate: f64) -> Result<(BodyModel, MotionSequence)> {
    let body = gmc1::read_body(&read(body)?)?;
    let mut motion = gmc1::read_motion(&read(motion)?)?;
    if motion.rate() != rate {
        motion = resample_motion(&motion, rate)?;
    }
    if motion.segments() != body.segment_count() {
        return Err(Error::ShapeMismatch(format!(
            "body has {} segments, motion {}",
            body.segment_count(),
            motion.segments()
        )));
    }
    Ok((body, motion))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PriorFile {
    One(NoisePrior),
    Many(Vec<NoisePrior>),
}

fn load_priors(spec: &str) -> Result<Vec<NoisePrior>> {
    if spec == "none" {
        return Ok(Vec::new());
    }
    let parsed: PriorFile = serde_json::from_slice(&read(Path::new(spec))?)?;
    Ok(match parsed {
        PriorFile::One(p) => vec![p],
        PriorFile::Many(v) => v,
    })
}

fn load_placements(
    spec: &str,
    body: &BodyModel,
    motion: &MotionSequence,
) -> Result<Vec<PlacementCandidate>> {
    if spec == "all" {
        return Ok(enumerate_placements(body, motion)?.candidates);
    }
    let text =
        String::from_utf8(read(Path::new(spec))?).map_err(|e| Error::Invalid(e.to_string()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let r: PlacementRecord = serde_json::from_str(l)?;
            if r.segment >= body.segment_count() || r.vertex >= body.vertex_count() {
                return Err(Error::Invalid(format!(
                    "placement ({}, {}) outside the body",
                    r.segment, r.vertex
                )));
            }
            Ok(PlacementCandidate::from(&r))
        })
        .collect()
}

fn write_plot(path: &Option<PathBuf>, rows: &[[f64; 6]], title: &str, force: bool) -> Result<()> {
    if let Some(p) = path {
        write_atomic(p, plot::imu_svg(rows, title).as_bytes(), force)?;
    }
    Ok(())
}

fn fixture(a: FixtureArgs, force: bool) -> Result<String> {
    let (body, motion) = match a.kind {
        FixtureKind::ThreeSegment => (
            fixtures::three_segment_body(),
            if a.stationary {
                fixtures::stationary_motion(fixtures::three_segment_centers(), a.rate, a.frames)
            } else {
                fixtures::three_segment_motion(a.rate, a.frames)
            },
        ),
        FixtureKind::Xsens => (
            fixtures::xsens_skeleton_body(),
            if a.stationary {
                fixtures::stationary_motion(&fixtures::XSENS_REST_CENTERS, a.rate, a.frames)
            } else {
                fixtures::xsens_motion(a.rate, a.frames)
            },
        ),
    };
    write_atomic(
        &a.out_body,
        &gmc1::Gmc1File::from_body(&body).to_bytes(),
        force,
    )?;
    write_atomic(
        &a.out_motion,
        &gmc1::Gmc1File::from_motion(&motion).to_bytes(),
        force,
    )?;
    Ok(format!("{} {}", body.segment_count(), motion.frames()))
}

fn placements(a: PlacementsArgs, force: bool) -> Result<String> {
    let body = gmc1::read_body(&read(&a.body)?)?;
    let motion = gmc1::read_motion(&read(&a.motion)?)?;
    let set = enumerate_placements(&body, &motion)?;
    let mut out = Vec::new();
    for c in &set.candidates {
        serde_json::to_writer(&mut out, &PlacementRecord::from(c))?;
        out.push(b'\n');
    }
    write_atomic(&a.out, &out, force)?;
    Ok(format!(
        "{} {}",
        set.candidates.len(),
        set.excluded_segments.len()
    ))
}

fn simulate(a: SimulateArgs, force: bool) -> Result<String> {
    let seed = require_seed(a.seed)?;
    let (body, motion) = load_inputs(&a.body, &a.motion, a.rate)?;
    let candidates = load_placements(&a.placements, &body, &motion)?;
    let mut cfg = SimulationConfig::new(seed);
    cfg.mount_ranges = a.mount.ranges();
    cfg.priors = load_priors(&a.noise)?;
    cfg.window_frames = a.window;
    cfg.stride_frames = a.stride.unwrap_or(a.window);
    let windows = simulate_placements(&motion, &candidates, &cfg, Execution::default())?;
    if windows.is_empty() {
        return Err(Error::Invalid(format!(
            "motion of {} frames yields no {}-frame window",
            motion.frames(),
            a.window
        )));
    }
    write_atomic(
        &a.out,
        &giw1::to_bytes(&windows, motion.rate(), a.window)?,
        force,
    )?;
    let w = &windows[0];
    write_plot(
        &a.plot,
        &w.samples,
        &format!(
            "segment {} vertex {} window {}",
            w.segment, w.vertex, w.window_index
        ),
        force,
    )?;
    Ok(format!("{} {}", windows.len(), candidates.len()))
}

fn estimate_noise(a: EstimateNoiseArgs, force: bool) -> Result<String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(fs::File::open(&a.stream)?));
    let mut times = Vec::new();
    let mut stream = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Invalid(format!("stream line {}: {e}", i + 1)))?;
        let vals: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match vals {
            Ok(v) if v.len() == 7 => {
                times.push(v[0]);
                stream.push(std::array::from_fn(|c| v[c + 1]));
            }
            Err(_) if i == 0 => continue,
            _ => {
                return Err(Error::Invalid(format!(
                    "stream line {} needs 7 numeric columns",
                    i + 1
                )))
            }
        }
    }
    let rate = match a.rate {
        Some(r) => r,
        None => {
            let mut dt: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
            dt.sort_by(f64::total_cmp);
            let median = dt.get(dt.len() / 2).copied().unwrap_or(0.0);
            if !(median > 0.0) {
                return Err(Error::Invalid(
                    "cannot derive a sample rate from the t column".into(),
                ));
            }
            1.0 / median
        }
    };
    let cfg = QuietWindowConfig {
        window_seconds: a.window_seconds,
        stride_seconds: a.stride_seconds,
        gyro_gate: a.gyro_gate,
        accel_gate: a.accel_gate,
        ..QuietWindowConfig::default()
    };
    let id = a.source_id.unwrap_or_else(|| {
        a.stream
            .file_stem()
            .map_or("stream".into(), |s| s.to_string_lossy().into())
    });
    let prior = estimate_noise_prior(&stream, rate, &cfg, &id)?;
    let mut json = serde_json::to_vec_pretty(&prior)?;
    json.push(b'\n');
    write_atomic(&a.out, &json, force)?;
    Ok(format!("{}", stream.len()))
}

/// Archive windows reduced to the `(segment, vertex)` candidates they cover.
fn archive_pool(windows: &[ImuWindow]) -> Result<CandidatePool> {
    let segments = windows.iter().map(|w| w.segment + 1).max().unwrap_or(0);
    let mut set = PlacementSet::default();
    let mut seen = std::collections::BTreeSet::new();
    for w in windows {
        if seen.insert((w.segment, w.vertex)) {
            set.candidates.push(PlacementCandidate {
                segment: w.segment,
                vertex: w.vertex,
                surface_frame: geomimu::geometry::Mat3::identity(),
                offset: geomimu::geometry::Vec3::zeros(),
                degenerate: false,
            });
        }
    }
    Ok(CandidatePool::new(&set, segments, true))
}

fn sample_views(a: SampleViewsArgs, force: bool) -> Result<String> {
    let seed = require_seed(a.seed)?;
    if a.mask_min == 0 || a.mask_min > a.mask_max {
        return Err(Error::Invalid(format!(
            "mask bounds {}..={} are invalid",
            a.mask_min, a.mask_max
        )));
    }
    let cfg = ViewConfig {
        mount_ranges: MountRanges {
            in_plane: a.in_plane_deg.to_radians(),
            tilt: a.tilt_deg.to_radians(),
        },
        priors: load_priors(&a.noise)?,
        mask_min: a.mask_min,
        mask_max: a.mask_max,
    };
    let exec = Execution::default();
    let (pairs, frames, segments) = if let Some(giw) = &a.giw {
        let (header, windows) = giw1::from_bytes(&read(giw)?)?;
        let pool = archive_pool(&windows)?;
        let indices: std::collections::BTreeSet<usize> =
            windows.iter().map(|w| w.window_index).collect();
        let indices: Vec<usize> = indices.into_iter().collect();
        if indices.is_empty() && a.pairs > 0 {
            return Err(Error::Invalid("archive holds no windows".into()));
        }
        let sources = indices
            .iter()
            .map(|&i| ArchiveSource::new(&windows, i))
            .collect::<Result<Vec<_>>>()?;
        let pairs = exec
            .map_range(a.pairs, |i| {
                let w = i % sources.len();
                pair_from_source(
                    &sources[w],
                    &pool,
                    &cfg,
                    seed,
                    i,
                    &format!("w{:06}-p{:06}", indices[w], i),
                )
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        (pairs, header.frames, pool.segments())
    } else {
        let (Some(body), Some(motion)) = (&a.body, &a.motion) else {
            return Err(Error::Invalid("pass --giw or --body with --motion".into()));
        };
        let (body, motion) = load_inputs(body, motion, a.rate)?;
        let set = enumerate_placements(&body, &motion)?;
        let pool = CandidatePool::new(&set, body.segment_count(), a.include_degenerate);
        let stride = a.stride.unwrap_or(a.window);
        let pairs = geomimu::sampler::generate_pairs(
            &motion, &pool, &cfg, a.window, stride, a.pairs, seed, exec,
        )?;
        (pairs, a.window, body.segment_count())
    };
    let written = export_pretraining_shard(&pairs, frames, segments, &a.out, force)?;
    if let Some(p) = pairs.first() {
        write_plot(
            &a.plot,
            &p.a.segment_signal(0),
            &format!("{} view A segment 0", p.a.window_id),
            force,
        )?;
    }
    Ok(format!("{written} {frames} {segments}"))
}

fn shard_windows(path: &Path, masked: bool) -> Result<Vec<GraphWindow>> {
    let (_, pairs) = gpw1::from_bytes(&read(path)?)?;
    let mut out = Vec::with_capacity(pairs.len() * 2);
    for p in pairs {
        if masked {
            out.push(p.masked_a()?);
            out.push(p.masked_b()?);
        } else {
            out.push(p.a);
            out.push(p.b);
        }
    }
    Ok(out)
}

fn latents_from_gmx(path: &Path) -> Result<Vec<LatentSequence>> {
    let a = matrix::from_bytes(&read(path)?)?
        .into_dimensionality::<Ix3>()
        .map_err(|_| Error::ShapeMismatch("latents must be N×T′×d".into()))?;
    a.outer_iter()
        .map(|s| LatentSequence::new(s.to_owned()))
        .collect()
}

/// Latents with the window id and visible segments they came from.
fn load_latents(
    src: &LatentSource,
    masked: bool,
    width: usize,
) -> Result<Vec<(String, Vec<usize>, LatentSequence)>> {
    if let Some(p) = &src.latents {
        return Ok(latents_from_gmx(p)?
            .into_iter()
            .enumerate()
            .map(|(i, l)| (format!("latent{i:06}"), Vec::new(), l))
            .collect());
    }
    let path = src.featurize.as_ref().expect("clap requires one source");
    let windows = shard_windows(path, masked)?;
    Execution::default()
        .map(&windows, |w| {
            let id = format!("{}/{:?}", w.window_id, w.view);
            Ok((
                id,
                w.visible_segments(),
                reference_featurize(w, width, FEATURIZE_SEED)?,
            ))
        })
        .into_iter()
        .collect()
}

fn pq_train(a: PqTrainArgs, force: bool) -> Result<String> {
    let seed = require_seed(a.seed)?;
    let latents: Vec<LatentSequence> = load_latents(&a.source, a.masked, a.books * a.dim)?
        .into_iter()
        .map(|(_, _, l)| l)
        .collect();
    let mut cfg = FitConfig::new(a.books, a.size, a.dim, seed);
    cfg.decay = a.decay;
    cfg.epochs = a.epochs;
    cfg.batch_size = a.batch_size;
    let (books, log) = fit_codebooks(&latents, &cfg, Execution::default())?;
    write_atomic(&a.out, &gcb1::to_bytes(&books, seed, &log)?, force)?;
    let last = log.last().map_or(f64::NAN, |e| e.commitment);
    Ok(format!("{} {} {last:.6e}", latents.len(), log.len()))
}

fn pq_encode(a: PqEncodeArgs, force: bool) -> Result<String> {
    let (_, books) = gcb1::from_bytes(&read(&a.books)?)?;
    let items = load_latents(&a.source, a.masked, books.latent_width())?;
    let latents: Vec<LatentSequence> = items.iter().map(|(_, _, l)| l.clone()).collect();
    let coded = quantize_batch(&latents, &books, Execution::default())?;
    let seqs: Vec<TokenSequence> = items
        .into_iter()
        .zip(coded)
        .map(
            |((window_id, visible_segments, _), (idx, _))| TokenSequence {
                window_id,
                visible_segments,
                tokens: interleave_tokens(&idx),
            },
        )
        .collect();
    write_atomic(&a.out, &tokens::to_bytes(&seqs)?, force)?;
    let total: usize = seqs.iter().map(|s| s.tokens.len()).sum();
    Ok(format!("{} {total}", seqs.len()))
}

fn pq_stats(a: PqStatsArgs, force: bool) -> Result<String> {
    let (_, books) = gcb1::from_bytes(&read(&a.books)?)?;
    let seqs = tokens::read_jsonl(BufReader::new(fs::File::open(&a.tokens)?))?;
    let hists = token_histograms(&seqs, books.books(), books.size())?;
    let report = codebook_diagnostics(&hists, &seqs)?;
    for c in &report.codebooks {
        println!(
            "codebook {} used {}/{} usage_rate {:.6} dead_ratio {:.6} perplexity {:.4} top1 {:.6} top10 {:.6}",
            c.codebook, c.used, c.size, c.usage_rate, c.dead_ratio, c.perplexity, c.top1_mass, c.top10_mass
        );
    }
    println!(
        "sequences {} distinct {} collision_rate {:.6}",
        report.sequences, report.distinct_sequences, report.collision_rate
    );
    if let Some(out) = &a.out {
        let mut json = serde_json::to_vec_pretty(&report)?;
        json.push(b'\n');
        write_atomic(out, &json, force)?;
    }
    Ok(format!("{} {}", report.sequences, books.books()))
}

fn gmx(path: &Path) -> Result<ArrayD<f64>> {
    matrix::from_bytes(&read(path)?)
}

fn matrix2(path: &Path) -> Result<Array2<f64>> {
    gmx(path)?
        .into_dimensionality::<Ix2>()
        .map_err(|_| Error::ShapeMismatch(format!("{} must be a 2-D array", path.display())))
}

fn matrix3(path: &Path) -> Result<Array3<f64>> {
    gmx(path)?
        .into_dimensionality::<Ix3>()
        .map_err(|_| Error::ShapeMismatch(format!("{} must be a 3-D array", path.display())))
}

fn expect_inputs(inputs: &[PathBuf], n: usize) -> Result<()> {
    if inputs.len() == n {
        Ok(())
    } else {
        Err(Error::Invalid(format!(
            "expected {n} inputs, got {}",
            inputs.len()
        )))
    }
}

fn is_shard(path: &Path) -> Result<bool> {
    let bytes = read(path)?;
    Ok(bytes.starts_with(gpw1::MAGIC.as_bytes()))
}

fn loss(a: LossArgs) -> Result<f64> {
    let inp = &a.inputs;
    match a.name {
        LossName::Mcvpcl | LossName::Infonce if inp.len() == 1 && is_shard(&inp[0])? => {
            let (_, pairs) = gpw1::from_bytes(&read(&inp[0])?)?;
            let feat = |w: &GraphWindow| reference_featurize(w, a.dim, FEATURIZE_SEED);
            let mut cols: [Vec<LatentSequence>; 4] = Default::default();
            for p in &pairs {
                cols[0].push(feat(&p.masked_a()?)?);
                cols[1].push(feat(&p.b)?);
                cols[2].push(feat(&p.masked_b()?)?);
                cols[3].push(feat(&p.a)?);
            }
            match a.name {
                LossName::Mcvpcl => mcvpcl_loss(&cols[0], &cols[1], &cols[2], &cols[3], a.tau),
                _ => infonce_cross_view(&cols[0], &cols[1], a.tau),
            }
        }
        LossName::Mcvpcl => {
            expect_inputs(inp, 4)?;
            let s = inp
                .iter()
                .map(|p| latents_from_gmx(p))
                .collect::<Result<Vec<_>>>()?;
            mcvpcl_loss(&s[0], &s[1], &s[2], &s[3], a.tau)
        }
        LossName::Infonce => {
            expect_inputs(inp, 2)?;
            infonce_cross_view(
                &latents_from_gmx(&inp[0])?,
                &latents_from_gmx(&inp[1])?,
                a.tau,
            )
        }
        LossName::Cosine => {
            expect_inputs(inp, 2)?;
            seq_cosine_similarity(
                &LatentSequence::new(matrix2(&inp[0])?)?,
                &LatentSequence::new(matrix2(&inp[1])?)?,
            )
        }
        LossName::Itc => {
            expect_inputs(inp, 2)?;
            itc_loss(
                &EmbeddingBatch::new(matrix2(&inp[0])?, None)?,
                &EmbeddingBatch::new(matrix2(&inp[1])?, None)?,
                a.tau,
            )
        }
        LossName::Label => {
            expect_inputs(inp, 2)?;
            let labels = gmx(&inp[1])?.iter().map(|v| format!("{v}")).collect();
            label_contrastive_loss(
                &EmbeddingBatch::new(matrix2(&inp[0])?, Some(labels))?,
                a.tau,
            )
        }
        LossName::Commitment => {
            expect_inputs(inp, 2)?;
            commitment_loss(&matrix3(&inp[0])?, &matrix3(&inp[1])?)
        }
        LossName::SmoothL1 => {
            expect_inputs(inp, 2)?;
            smooth_l1(&matrix2(&inp[0])?, &matrix2(&inp[1])?)
        }
    }
}

fn run(cli: Cli) -> Result<String> {
    let force = cli.force;
    Ok(match cli.command {
        Command::Fixture(a) => format!("fixture {}", fixture(a, force)?),
        Command::Placements(a) => format!("placements {}", placements(a, force)?),
        Command::Simulate(a) => format!("simulate {}", simulate(a, force)?),
        Command::EstimateNoise(a) => format!("estimate-noise {}", estimate_noise(a, force)?),
        Command::SampleViews(a) => format!("sample-views {}", sample_views(a, force)?),
        Command::Pq {
            command: PqCommand::Train(a),
        } => format!("pq-train {}", pq_train(a, force)?),
        Command::Pq {
            command: PqCommand::Encode(a),
        } => format!("pq-encode {}", pq_encode(a, force)?),
        Command::Pq {
            command: PqCommand::Stats(a),
        } => format!("pq-stats {}", pq_stats(a, force)?),
        Command::Loss(a) => {
            let n = a.inputs.len();
            println!("{:.11e}", loss(a)?);
            format!("loss {n}")
        }
        Command::Verify { suite } => {
            let suite: Suite = suite.parse()?;
            let checks = verify::run(suite)?;
            for c in &checks {
                println!("{c}");
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                return Err(Error::Invalid(format!(
                    "{failed} of {} checks failed",
                    checks.len()
                )));
            }
            format!("verify {} {}", suite.name(), checks.len())
        }
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    init_thread_pool(cli.threads);
    match run(cli) {
        Ok(summary) => {
            println!("OK {summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
