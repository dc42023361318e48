//! Self-check suites run by `geomimu verify`.
//!
//! Each check compares library output against a direct recomputation on the
//! bundled fixtures and reports the measured deviation next to its tolerance.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::body::MotionSequence;
use crate::exec::Execution;
use crate::fixtures;
use crate::formats::{gcb1, giw1, gmc1, gpw1};
use crate::geometry::{Mat3, Quat, Vec3};
use crate::imu_sim::{
    estimate_noise_prior, gravity, sample_mount, simulate_accelerometer, simulate_gyroscope,
    simulate_placements, simulate_signal, MountRanges, NoisePrior, QuietWindowConfig,
    SensorTrajectory, SimulationConfig, STANDARD_GRAVITY,
};
use crate::objectives::{
    commitment_loss, itc_loss, label_contrastive_loss, mcvpcl_loss, smooth_l1, EmbeddingBatch,
    LatentSequence,
};
use crate::placement::{enumerate_placements, surface_frame, PlacementCandidate};
use crate::sampler::{
    generate_pairs, rotate_imu_signal, sample_visibility_mask, CandidatePool, ViewConfig,
};
use crate::seed::rng_from_seed;
use crate::tokenizer::{
    deinterleave_tokens, fit_chunks, interleave_tokens, perplexity, quantize, reference_featurize,
    Codebooks, FitConfig, FEATURIZE_SEED,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Kinematics,
    Frames,
    Masking,
    Losses,
    Pq,
    Formats,
    All,
}

impl Suite {
    pub const EACH: [Suite; 6] = [
        Suite::Kinematics,
        Suite::Frames,
        Suite::Masking,
        Suite::Losses,
        Suite::Pq,
        Suite::Formats,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Kinematics => "kinematics",
            Suite::Frames => "frames",
            Suite::Masking => "masking",
            Suite::Losses => "losses",
            Suite::Pq => "pq",
            Suite::Formats => "formats",
            Suite::All => "all",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::EACH
            .into_iter()
            .chain([Suite::All])
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown suite {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub suite: &'static str,
    pub name: &'static str,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}/{} measured={:.3e} tolerance={:.3e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.suite,
            self.name,
            self.measured,
            self.tolerance
        )
    }
}

struct Report {
    suite: &'static str,
    checks: Vec<Check>,
}

impl Report {
    fn new(suite: Suite) -> Self {
        Self {
            suite: suite.name(),
            checks: Vec::new(),
        }
    }

    /// Passes when `measured <= tolerance`.
    fn within(&mut self, name: &'static str, measured: f64, tolerance: f64) {
        self.checks.push(Check {
            suite: self.suite,
            name,
            measured,
            tolerance,
            passed: measured <= tolerance,
        });
    }

    fn flag(&mut self, name: &'static str, ok: bool) {
        self.within(name, if ok { 0.0 } else { 1.0 }, 0.0);
    }
}

pub fn run(suite: Suite) -> Result<Vec<Check>> {
    match suite {
        Suite::All => {
            let mut out = Vec::new();
            for s in Suite::EACH {
                out.extend(run(s)?);
            }
            Ok(out)
        }
        Suite::Kinematics => kinematics(),
        Suite::Frames => Ok(frames()),
        Suite::Masking => Ok(masking()),
        Suite::Losses => losses(),
        Suite::Pq => pq(),
        Suite::Formats => formats(),
    }
}

fn single_segment(
    rate: f64,
    n: usize,
    pose: impl Fn(f64) -> (Vec3, Quat),
) -> Result<MotionSequence> {
    let (p, q): (Vec<_>, Vec<_>) = (0..n).map(|i| pose(i as f64 / rate)).unzip();
    MotionSequence::from_parts(rate, 1, p, q, None, None)
}

fn origin_candidate() -> PlacementCandidate {
    PlacementCandidate {
        segment: 0,
        vertex: 0,
        surface_frame: Mat3::identity(),
        offset: Vec3::zeros(),
        degenerate: false,
    }
}

fn max_abs<'a>(it: impl IntoIterator<Item = &'a f64>) -> f64 {
    it.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn kinematics() -> Result<Vec<Check>> {
    let start = Instant::now();
    let mut r = Report::new(Suite::Kinematics);
    let g = gravity();
    let mut rng = rng_from_seed(1);

    let body = fixtures::xsens_skeleton_body();
    let still = fixtures::stationary_motion(&fixtures::XSENS_REST_CENTERS, 60.0, 30);
    let set = enumerate_placements(&body, &still)?;
    let (mut acc_err, mut gyro_err) = (0.0f64, 0.0f64);
    for cand in &set.candidates {
        let mount = sample_mount(&mut rng, MountRanges::training()).rotation;
        for row in simulate_signal(&still, cand, &mount, &g)? {
            acc_err =
                acc_err.max((Vec3::new(row[0], row[1], row[2]).norm() - STANDARD_GRAVITY).abs());
            gyro_err = gyro_err.max(max_abs(&row[3..]));
        }
    }
    r.within("stationary |accel| = g", acc_err, 1e-6);
    r.within("stationary gyro = 0", gyro_err, 1e-12);

    let fall = single_segment(60.0, 120, |t| {
        (
            Vec3::new(0.0, 0.0, -0.5 * STANDARD_GRAVITY * t * t),
            Quat::identity(),
        )
    })?;
    let rows = simulate_signal(&fall, &origin_candidate(), &Mat3::identity(), &g)?;
    r.within(
        "free fall accel = 0",
        rows.iter().map(|x| max_abs(&x[..3])).fold(0.0, f64::max),
        1e-6,
    );

    let (radius, omega) = (1.0, 2.0);
    let circle = single_segment(60.0, 240, |t| {
        (
            Vec3::new(radius * (omega * t).cos(), radius * (omega * t).sin(), 0.0),
            Quat::from_axis_angle(&Vec3::z_axis(), omega * t),
        )
    })?;
    let rows = simulate_signal(&circle, &origin_candidate(), &Mat3::identity(), &g)?;
    let expected = omega * omega * radius;
    let rel = rows
        .iter()
        .map(|x| (-x[0] - expected).abs() / expected)
        .fold(0.0, f64::max);
    r.within("circular centripetal channel (relative)", rel, 5e-3);

    let spin = 1.3;
    let traj = SensorTrajectory {
        rate: 60.0,
        positions: vec![Vec3::zeros(); 90],
        orientations: (0..90)
            .map(|i| Quat::from_axis_angle(&Vec3::z_axis(), spin * i as f64 / 60.0))
            .collect(),
    };
    let gyro = simulate_gyroscope(&traj)?;
    let err = gyro
        .iter()
        .map(|w| (w - Vec3::new(0.0, 0.0, spin)).amax())
        .fold(0.0, f64::max);
    r.within("constant z-spin gyro = (0,0,w)", err, 1e-9);
    simulate_accelerometer(&traj, &g)?;

    let motion = fixtures::xsens_motion(60.0, 60);
    let cands = enumerate_placements(&fixtures::xsens_skeleton_body(), &motion)?.candidates;
    let mut eq_err = 0.0f64;
    for i in 0..100 {
        let cand = &cands[(i * 37) % cands.len()];
        let delta = sample_mount(
            &mut rng,
            MountRanges {
                in_plane: std::f64::consts::PI,
                tilt: 1.0,
            },
        )
        .rotation;
        let mounted = simulate_signal(&motion, cand, &delta, &g)?;
        let rotated = rotate_imu_signal(
            &simulate_signal(&motion, cand, &Mat3::identity(), &g)?,
            &delta.transpose(),
        )?;
        for (a, b) in mounted.iter().zip(&rotated) {
            eq_err = eq_err.max((0..6).map(|c| (a[c] - b[c]).abs()).fold(0.0, f64::max));
        }
    }
    r.within("mount equivariance", eq_err, 1e-9);
    r.within("runtime seconds", start.elapsed().as_secs_f64(), 5.0);
    Ok(r.checks)
}

fn random_unit<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        if v.norm() > 1e-6 {
            return v.normalize();
        }
    }
}

fn frames() -> Vec<Check> {
    let start = Instant::now();
    let mut r = Report::new(Suite::Frames);
    let mut rng = rng_from_seed(2);
    let (mut ortho, mut det, mut tn, mut bnt) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut failures = 0;
    for i in 0..1000 {
        let n = random_unit(&mut rng);
        let axis = match i % 4 {
            0 => n,
            1 => (n + random_unit(&mut rng) * 1e-9).normalize(),
            2 => -n,
            _ => random_unit(&mut rng),
        };
        let Ok(f) = surface_frame(&n, &axis) else {
            failures += 1;
            continue;
        };
        let m = f.rotation;
        let (t, b, nn) = (
            m.column(0).into_owned(),
            m.column(1).into_owned(),
            m.column(2).into_owned(),
        );
        ortho = ortho.max((m.transpose() * m - Mat3::identity()).amax());
        det = det.max((m.determinant() - 1.0).abs());
        tn = tn.max(t.dot(&nn).abs());
        bnt = bnt.max((b - nn.cross(&t)).amax());
    }
    r.flag("all frames constructed", failures == 0);
    r.within("orthonormality", ortho, 1e-9);
    r.within("det = +1", det, 1e-9);
    r.within("t . n = 0", tn, 1e-12);
    r.within("b = n x t", bnt, 1e-12);
    r.within("runtime seconds", start.elapsed().as_secs_f64(), 1.0);
    r.checks
}

/// 1% critical value of chi-square with 4 degrees of freedom.
const CHI2_4DF_P01: f64 = 13.276_704_135_987_6;

fn masking() -> Vec<Check> {
    let mut r = Report::new(Suite::Masking);
    let mut rng = rng_from_seed(3);
    let draws = 100_000;
    let mut counts = [0u64; 5];
    let mut bounds = true;
    for _ in 0..draws {
        let m = sample_visibility_mask(23, &mut rng);
        bounds &= (1..=5).contains(&m.len())
            && m.windows(2).all(|w| w[0] < w[1])
            && m.iter().all(|&s| s < 23);
        if (1..=5).contains(&m.len()) {
            counts[m.len() - 1] += 1;
        }
    }
    let expected = draws as f64 / 5.0;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    r.flag("1 <= |visible| <= 5, sorted, distinct", bounds);
    r.within(
        "chi-square statistic (k uniform, p > 0.01)",
        chi2,
        CHI2_4DF_P01,
    );
    let mut small = true;
    for _ in 0..1000 {
        small &= sample_visibility_mask(3, &mut rng).len() <= 3;
    }
    r.flag("S = 3 clamps to |visible| <= 3", small);
    r.checks
}

fn gaussian_array<R: Rng>(rng: &mut R, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| rng.sample(StandardNormal))
}

fn naive_cos(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let mut s = 0.0;
    for l in 0..a.nrows() {
        let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
        for c in 0..a.ncols() {
            dot += a[[l, c]] * b[[l, c]];
            na += a[[l, c]] * a[[l, c]];
            nb += b[[l, c]] * b[[l, c]];
        }
        s += dot / (na.sqrt() * nb.sqrt());
    }
    s / a.nrows() as f64
}

fn naive_infonce(p: &[Array2<f64>], t: &[Array2<f64>], tau: f64) -> f64 {
    let n = p.len();
    let mut loss = 0.0;
    for i in 0..n {
        let den: f64 = (0..n).map(|j| (naive_cos(&p[i], &t[j]) / tau).exp()).sum();
        loss -= ((naive_cos(&p[i], &t[i]) / tau).exp() / den).ln();
    }
    loss / n as f64
}

fn losses() -> Result<Vec<Check>> {
    let mut r = Report::new(Suite::Losses);
    let mut rng = rng_from_seed(4);
    let (mut mc, mut itc, mut com, mut sl1, mut lab) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut symmetric = true;
    for inst in 0..50 {
        let n = 2 + inst % 15;
        let (t, d) = (1 + inst % 4, 3 + inst % 5);
        let raw: Vec<Vec<Array2<f64>>> = (0..4)
            .map(|_| (0..n).map(|_| gaussian_array(&mut rng, (t, d))).collect())
            .collect();
        let seqs: Vec<Vec<LatentSequence>> = raw
            .iter()
            .map(|v| {
                v.iter()
                    .map(|a| LatentSequence::new(a.clone()))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let got = mcvpcl_loss(&seqs[0], &seqs[1], &seqs[2], &seqs[3], 0.1)?;
        let want = naive_infonce(&raw[0], &raw[1], 0.1) + naive_infonce(&raw[2], &raw[3], 0.1);
        mc = mc.max((got - want).abs());
        symmetric &=
            got.to_bits() == mcvpcl_loss(&seqs[2], &seqs[3], &seqs[0], &seqs[1], 0.1)?.to_bits();

        let a = EmbeddingBatch::normalized(gaussian_array(&mut rng, (n, d)), None)?;
        let b = EmbeddingBatch::normalized(gaussian_array(&mut rng, (n, d)), None)?;
        let tau = 0.05;
        let dot = |i: usize, j: usize| -> f64 {
            (0..d)
                .map(|c| a.vectors()[[i, c]] * b.vectors()[[j, c]])
                .sum()
        };
        let mut want = 0.0;
        for i in 0..n {
            let row: f64 = (0..n).map(|j| (dot(i, j) / tau).exp()).sum();
            let col: f64 = (0..n).map(|j| (dot(j, i) / tau).exp()).sum();
            want -= ((dot(i, i) / tau).exp() / row).ln() + ((dot(i, i) / tau).exp() / col).ln();
        }
        want /= 2.0 * n as f64;
        let got = itc_loss(&a, &b, tau)?;
        itc = itc.max((got - want).abs() / want.abs().max(1.0));
        symmetric &= got.to_bits() == itc_loss(&b, &a, tau)?.to_bits();

        let p = 1 + inst % 3;
        let z: Array3<f64> = Array3::from_shape_fn((t, p, d), |_| rng.sample(StandardNormal));
        let e: Array3<f64> = Array3::from_shape_fn((t, p, d), |_| rng.sample(StandardNormal));
        let mut want = 0.0;
        for j in 0..p {
            for l in 0..t {
                let sq: f64 = (0..d).map(|c| (z[[l, j, c]] - e[[l, j, c]]).powi(2)).sum();
                want += p as f64 / (t * p * d) as f64 * sq;
            }
        }
        com = com.max((commitment_loss(&z, &e)? - want).abs());

        let x = gaussian_array(&mut rng, (t, d)) * 2.0;
        let y = gaussian_array(&mut rng, (t, d));
        let want = x
            .iter()
            .zip(y.iter())
            .map(|(a, b)| {
                if (a - b).abs() < 1.0 {
                    0.5 * (a - b).powi(2)
                } else {
                    (a - b).abs() - 0.5
                }
            })
            .sum::<f64>()
            / (t * d) as f64;
        sl1 = sl1.max((smooth_l1(&x, &y)? - want).abs());

        let labels: Vec<String> = (0..n).map(|i| format!("l{}", (i * 7 + inst) % 3)).collect();
        let h = EmbeddingBatch::normalized(gaussian_array(&mut rng, (n, d)), Some(labels.clone()))?;
        let hv = h.vectors();
        let sim = |i: usize, j: usize| -> f64 {
            (0..d).map(|c| hv[[i, c]] * hv[[j, c]]).sum::<f64>() / 0.1
        };
        let (mut total, mut anchors) = (0.0, 0);
        for i in 0..n {
            let pos: Vec<usize> = (0..n)
                .filter(|&j| j != i && labels[j] == labels[i])
                .collect();
            if pos.is_empty() {
                continue;
            }
            let den: f64 = (0..n).filter(|&j| j != i).map(|j| sim(i, j).exp()).sum();
            total -= pos
                .iter()
                .map(|&j| (sim(i, j).exp() / den).ln())
                .sum::<f64>()
                / pos.len() as f64;
            anchors += 1;
        }
        let want = if anchors == 0 {
            0.0
        } else {
            total / anchors as f64
        };
        lab = lab.max((label_contrastive_loss(&h, 0.1)? - want).abs());
    }
    r.within("mcvpcl vs naive double sum", mc, 1e-10);
    r.within("itc vs naive double loop", itc, 1e-10);
    r.within("commitment vs naive sum", com, 1e-10);
    r.within("smooth_l1 vs naive mean", sl1, 1e-10);
    r.within("label contrastive vs enumeration", lab, 1e-10);
    r.flag("swap symmetry is bit-exact", symmetric);

    let one = vec![LatentSequence::new(gaussian_array(&mut rng, (3, 4)))?];
    let two = vec![LatentSequence::new(gaussian_array(&mut rng, (3, 4)))?];
    let u = EmbeddingBatch::normalized(gaussian_array(&mut rng, (1, 4)), Some(vec!["x".into()]))?;
    let v = EmbeddingBatch::normalized(gaussian_array(&mut rng, (1, 4)), None)?;
    r.flag(
        "N = 1 gives exactly 0",
        mcvpcl_loss(&one, &two, &two, &one, 0.1)? == 0.0
            && itc_loss(&u, &v, 0.05)? == 0.0
            && label_contrastive_loss(&u, 0.1)? == 0.0,
    );
    Ok(r.checks)
}

fn brute_nearest(book: &Array3<f64>, j: usize, x: &[f64]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for k in 0..book.dim().1 {
        let d: f64 = x
            .iter()
            .enumerate()
            .map(|(c, v)| (v - book[[j, k, c]]).powi(2))
            .sum();
        if d < best.0 {
            best = (d, k);
        }
    }
    best.1
}

/// Lloyd iterations from one seed point per cluster.
fn lloyd(data: &Array2<f64>, init: Array2<f64>) -> Array2<f64> {
    let mut c = init;
    for _ in 0..100 {
        let mut sums = Array2::<f64>::zeros(c.dim());
        let mut counts = vec![0usize; c.nrows()];
        for row in data.rows() {
            let k = (0..c.nrows())
                .min_by(|&a, &b| {
                    let da: f64 = row.iter().zip(c.row(a)).map(|(x, y)| (x - y).powi(2)).sum();
                    let db: f64 = row.iter().zip(c.row(b)).map(|(x, y)| (x - y).powi(2)).sum();
                    da.total_cmp(&db)
                })
                .expect("clusters");
            counts[k] += 1;
            let mut s = sums.row_mut(k);
            s += &row;
        }
        for k in 0..c.nrows() {
            if counts[k] > 0 {
                let mean = &sums.row(k) / counts[k] as f64;
                c.row_mut(k).assign(&mean);
            }
        }
    }
    c
}

fn pq() -> Result<Vec<Check>> {
    let start = Instant::now();
    let mut r = Report::new(Suite::Pq);
    let mut rng = rng_from_seed(5);
    let mut mismatches = 0usize;
    for case in 0..200 {
        let (t, p, k, dim) = (
            1 + case % 16,
            1 + case % 3,
            1 + (case * 7) % 64,
            1 + case % 8,
        );
        let mut codes =
            Array3::from_shape_fn((p, k, dim), |_| rng.sample::<f64, _>(StandardNormal));
        if k > 1 && case % 2 == 0 {
            for j in 0..p {
                let dup = codes.slice(ndarray::s![j, 0, ..]).to_owned();
                codes.slice_mut(ndarray::s![j, k - 1, ..]).assign(&dup);
            }
        }
        let books = Codebooks::from_codes(codes.clone(), 0.99)?;
        let latent = Array2::from_shape_fn((t, p * dim), |(l, c)| {
            if case % 2 == 0 && l == 0 {
                codes[[c / dim, 0, c % dim]]
            } else {
                rng.sample(StandardNormal)
            }
        });
        let (idx, _) = quantize(&LatentSequence::new(latent.clone())?, &books)?;
        for l in 0..t {
            for j in 0..p {
                let x: Vec<f64> = (0..dim).map(|c| latent[[l, j * dim + c]]).collect();
                mismatches += usize::from(idx[[l, j]] != brute_nearest(&codes, j, &x));
            }
        }
    }
    r.within(
        "quantize vs exhaustive search (mismatches)",
        mismatches as f64,
        0.0,
    );

    let centers = [[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]];
    let n = 3000;
    let data = Array2::from_shape_fn((n, 2), |(i, c)| {
        centers[i % 3][c] + 0.3 * rng.sample::<f64, _>(StandardNormal)
    });
    let mut cfg = FitConfig::new(1, 3, 2, 6);
    cfg.epochs = 20;
    cfg.batch_size = 256;
    let chunks = data
        .clone()
        .into_shape_with_order((n, 1, 2))
        .expect("contiguous");
    let (books, _) = fit_chunks(&chunks, &cfg, Execution::default())?;
    let oracle = lloyd(&data, data.slice(ndarray::s![0..3, ..]).to_owned());
    let mut worst = 0.0f64;
    for o in oracle.rows() {
        let nearest = (0..3)
            .map(|k| {
                ((books.codes[[0, k, 0]] - o[0]).powi(2) + (books.codes[[0, k, 1]] - o[1]).powi(2))
                    .sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(nearest);
    }
    r.within("3-Gaussian fit vs Lloyd centroids", worst, 0.05);

    r.flag(
        "perplexity = K on uniform histograms",
        (1..=64u64).all(|k| perplexity(&vec![k * 3; k as usize]) == k as f64),
    );

    let mut inverse = true;
    for (t, p) in [(1, 1), (2, 2), (75, 2), (7, 3), (16, 5)] {
        let idx = Array2::from_shape_fn((t, p), |_| rng.random_range(0..2048usize));
        inverse &= deinterleave_tokens(&interleave_tokens(&idx), p)? == idx;
    }
    r.flag("deinterleave(interleave(x)) = x", inverse);

    let mut window = crate::sampler::GraphWindow::zeros(300, 23);
    window.visibility = vec![true; 23];
    let latent = reference_featurize(&window, 128, FEATURIZE_SEED)?;
    let books = Codebooks::from_codes(Array3::zeros((2, 16, 64)), 0.99)?;
    let (idx, _) = quantize(&latent, &books)?;
    r.within(
        "300-frame window -> 150 tokens (deviation)",
        (interleave_tokens(&idx).len() as f64 - 150.0).abs(),
        0.0,
    );
    r.within("runtime seconds", start.elapsed().as_secs_f64(), 30.0);
    Ok(r.checks)
}

fn formats() -> Result<Vec<Check>> {
    let mut r = Report::new(Suite::Formats);
    let body = fixtures::three_segment_body();
    let motion = fixtures::three_segment_motion(60.0, 60);
    let mut identical = true;
    for file in [
        gmc1::Gmc1File::from_body_and_motion(&body, &motion)?,
        gmc1::Gmc1File::from_body(&fixtures::xsens_skeleton_body()),
        gmc1::Gmc1File::from_motion(&fixtures::xsens_motion(60.0, 20)),
    ] {
        let bytes = file.to_bytes();
        identical &= gmc1::Gmc1File::parse(&bytes)?.to_bytes() == bytes;
    }
    r.flag("GMC1 write -> read -> write identical", identical);

    let set = enumerate_placements(&body, &motion)?;
    let mut cfg = SimulationConfig::new(9);
    cfg.window_frames = 30;
    cfg.stride_frames = 30;
    cfg.priors = vec![NoisePrior {
        accel_std: [0.01; 3],
        gyro_std: [0.002; 3],
        ..NoisePrior::zero("lab")
    }];
    let windows = simulate_placements(&motion, &set.candidates, &cfg, Execution::default())?;
    let bytes = giw1::to_bytes(&windows, 60.0, 30)?;
    let (h, back) = giw1::from_bytes(&bytes)?;
    r.flag(
        "GIW1 write -> read -> write identical",
        giw1::to_bytes(&back, h.rate, h.frames)? == bytes,
    );

    let pool = CandidatePool::new(&set, 3, false);
    let pairs = generate_pairs(
        &motion,
        &pool,
        &ViewConfig::default(),
        30,
        30,
        8,
        9,
        Execution::default(),
    )?;
    let bytes = gpw1::to_bytes(&pairs, 30, 3)?;
    let (h, back) = gpw1::from_bytes(&bytes)?;
    r.flag(
        "GPW1 write -> read -> write identical",
        gpw1::to_bytes(&back, h.frames, h.segments)? == bytes,
    );

    let books = Codebooks::from_codes(
        Array3::from_shape_fn((2, 16, 4), |(p, k, d)| (p + k) as f64 / (d + 1) as f64),
        0.99,
    )?;
    let bytes = gcb1::to_bytes(&books, 3, &[])?;
    let (h, back) = gcb1::from_bytes(&bytes)?;
    r.flag(
        "GCB1 write -> read -> write identical",
        gcb1::to_bytes(&back, h.seed, &h.log)? == bytes,
    );

    let mut rng = rng_from_seed(8);
    let (std, bias) = (
        [0.01, 0.012, 0.008, 0.002, 0.003, 0.0015],
        [0.0, 0.0, 0.03, 0.004, -0.002, 0.001],
    );
    let n = 60 * 120;
    let stream: Vec<[f64; 6]> = (0..n)
        .map(|_| {
            std::array::from_fn(|c| {
                let base = if c == 2 { STANDARD_GRAVITY } else { 0.0 };
                base + bias[c] + std[c] * rng.sample::<f64, _>(StandardNormal)
            })
        })
        .collect();
    let prior = estimate_noise_prior(&stream, 60.0, &QuietWindowConfig::default(), "gen")?;
    let est_std: Vec<f64> = prior
        .accel_std
        .iter()
        .chain(&prior.gyro_std)
        .copied()
        .collect();
    let est_bias: Vec<f64> = prior
        .accel_bias
        .iter()
        .chain(&prior.gyro_bias)
        .copied()
        .collect();
    let std_rel = (0..6)
        .map(|c| (est_std[c] - std[c]).abs() / std[c])
        .fold(0.0, f64::max);
    let bias_sigmas = (0..6)
        .map(|c| (est_bias[c] - bias[c]).abs() / (std[c] / (n as f64).sqrt()))
        .fold(0.0, f64::max);
    r.within("noise prior std (relative)", std_rel, 0.1);
    r.within("noise prior bias (in sigma/sqrt(n))", bias_sigmas, 3.0);
    Ok(r.checks)
}
