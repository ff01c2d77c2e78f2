//! End-to-end acceptance checks, one line per criterion.
//!
//! Criteria 1-4 need the 256x256 "House" test image. It is read from the
//! path in `GSR_NLS_HOUSE`, or from `crates/core/tests/data/house.png` /
//! `house.pgm`. Without it those criteria are reported as BLOCKED (never as
//! passed), and the same measurements on the bundled camera image are
//! printed as INFO lines for orientation.
//!
//! The noise for every run is `NoiseSpec { sigma, seed: NOISE_SEED }`,
//! i.e. ChaCha20 seeded with 0 feeding a standard normal, applied in memory
//! without clamping.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use gsr_nls::analysis::{fit_distributions, histogram, oracle_residuals, Family};
use gsr_nls::gsr::shrink;
use gsr_nls::image::{add_gaussian_noise, psnr};
use gsr_nls::io::{read_image, write_image};
use gsr_nls::patching::{anchor_grid, block_match, extract_group, Aggregator, PatchRef};
use gsr_nls::pipeline::{default_params, denoise, Mode};
use gsr_nls::transform::{decode, encode, GroupCodes, PcaDictionary};
use gsr_nls::{GrayImage, NoiseSpec};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NOISE_SEED: u64 = 0;

const C1_MIN_PSNR_SIGMA50: f64 = 29.85;
const C2_MIN_PSNR_SIGMA75: f64 = 27.9;
const C3_MIN_GAIN_DB: f64 = 0.3;
const C4_HIST_BINS: usize = 100;
const C5_TRIPLES: usize = 1000;
const C5_GRID_STEP: f64 = 1e-4;
const C5_TOL: f64 = 1e-4;
const C6_GROUPS: usize = 1000;
const C6_ORTHO_TOL: f64 = 1e-10;
const C6_RECON_TOL: f64 = 1e-8;
const C6_NORM_TOL: f64 = 1e-8;
const C7_IMAGES: usize = 100;
const C8_IMAGES: usize = 50;
const C8_SIDE: usize = 16;
const C8_WINDOW: usize = 9;
const C8_M: usize = 4;
const C10_MAX_SECONDS: f64 = 120.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Pass,
    Fail,
    Blocked,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn verdict(ok: bool, detail: String) -> Outcome {
    Outcome {
        status: if ok { Status::Pass } else { Status::Fail },
        detail,
    }
}

fn blocked() -> Outcome {
    Outcome {
        status: Status::Blocked,
        detail: "House image not found (set GSR_NLS_HOUSE to a 256x256 grayscale PGM/PNG); not verified".into(),
    }
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data")
}

fn load_house() -> Option<GrayImage> {
    let candidates: Vec<PathBuf> = std::env::var_os("GSR_NLS_HOUSE")
        .map(PathBuf::from)
        .into_iter()
        .chain([data_dir().join("house.png"), data_dir().join("house.pgm")])
        .collect();
    candidates.iter().find(|p| p.is_file()).map(|p| {
        let img = read_image(p).unwrap_or_else(|e| panic!("cannot read {}: {e}", p.display()));
        assert_eq!(img.dims(), (256, 256), "House must be 256x256");
        img
    })
}

fn camera() -> GrayImage {
    read_image(data_dir().join("camera256.png")).expect("bundled camera image")
}

/// PSNR of the written (rounded, clamped) output and the iteration count.
fn run_denoiser(clean: &GrayImage, sigma: f64, mode: Mode) -> (f64, usize, f64) {
    let noisy = add_gaussian_noise(clean, NoiseSpec::new(sigma, NOISE_SEED).unwrap()).unwrap();
    let mut params = default_params(sigma).unwrap();
    params.mode = mode;
    let report = denoise(&noisy, &params, None).unwrap();
    let value = psnr(clean, &report.output.quantized()).unwrap();
    (value, report.iterations_run, report.wall_time.as_secs_f64())
}

struct ResidualStudy {
    laplacian_ll: f64,
    gaussian_ll: f64,
    laplacian_err: f64,
    gaussian_err: f64,
    winner: Family,
}

fn residual_study(clean: &GrayImage) -> ResidualStudy {
    let sigma = 30.0;
    let noisy = add_gaussian_noise(clean, NoiseSpec::new(sigma, NOISE_SEED).unwrap()).unwrap();
    let params = default_params(sigma).unwrap();
    let samples = oracle_residuals(clean, &noisy, &params).unwrap();
    let fits = fit_distributions(&samples).unwrap();
    let ll = |f: Family| fits.iter().find(|x| x.family == f).unwrap().log_likelihood;
    let winner = gsr_nls::analysis::best_fit(&fits).unwrap().family;

    // errors are computed from the CSV as written, not from memory
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hist.csv");
    let (_, _) = gsr_nls::analysis::emit_histogram(&samples, C4_HIST_BINS, true, &path).unwrap();
    let rows = gsr_nls::analysis::read_histogram_csv(&path).unwrap();
    assert_eq!(rows, histogram(&samples, C4_HIST_BINS, &fits, true).unwrap());
    let (mut lap, mut gau) = (0.0, 0.0);
    for r in rows.iter().filter(|r| r.empirical.is_finite()) {
        lap += (r.empirical - r.laplacian).powi(2);
        gau += (r.empirical - r.gaussian).powi(2);
    }
    ResidualStudy {
        laplacian_ll: ll(Family::Laplacian),
        gaussian_ll: ll(Family::Gaussian),
        laplacian_err: lap,
        gaussian_err: gau,
        winner,
    }
}

fn c4_ok(s: &ResidualStudy) -> bool {
    s.laplacian_ll > s.gaussian_ll && s.laplacian_err < s.gaussian_err
}

fn c4_detail(s: &ResidualStudy) -> String {
    format!(
        "log-lik laplacian {:.1} vs gaussian {:.1}; sq log-density error laplacian {:.2} vs gaussian {:.2}; best family {}",
        s.laplacian_ll, s.gaussian_ll, s.laplacian_err, s.gaussian_err, s.winner
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..C5_TRIPLES {
        let g: f64 = rng.random_range(-10.0..10.0);
        let beta: f64 = rng.random_range(-10.0..10.0);
        let lambda: f64 = rng.random_range(0.0..20.0);
        let a = shrink(
            &GroupCodes::new(DMatrix::from_element(1, 1, g)),
            &GroupCodes::new(DMatrix::from_element(1, 1, beta)),
            lambda,
        )
        .unwrap()
        .coeffs[(0, 0)];

        let f = |x: f64| (g - x) * (g - x) + lambda * (x - beta).abs();
        // the minimizer lies between beta and g
        let (lo, hi) = (g.min(beta), g.max(beta));
        let steps = ((hi - lo) / C5_GRID_STEP).floor() as usize;
        let mut best = (f(hi), hi);
        for i in 0..=steps {
            let x = lo + i as f64 * C5_GRID_STEP;
            let v = f(x);
            if v < best.0 {
                best = (v, x);
            }
        }
        if f(a) > best.0 + 1e-12 {
            return verdict(false, format!("g={g} beta={beta} lambda={lambda}: shrink {a} has a worse objective than grid {}", best.1));
        }
        worst = worst.max((a - best.1).abs());
    }
    verdict(
        worst <= C5_TOL,
        format!("{C5_TRIPLES} triples, max |shrink - grid argmin| = {worst:.2e} (tol {C5_TOL:.0e})"),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut ortho, mut recon, mut norm) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..C6_GROUPS {
        let side = rng.random_range(2..=9usize);
        let b = side * side;
        let m = rng.random_range(1..=100usize);
        let z = if k % 2 == 0 {
            DMatrix::from_fn(b, m, |_, _| rng.random_range(0.0..255.0))
        } else {
            // image-like: a shared patch plus a few structured directions and noise
            let base = DMatrix::from_fn(b, 1, |_, _| rng.random_range(0.0..255.0));
            let dirs = DMatrix::from_fn(b, 3, |_, _| rng.random_range(-1.0..1.0));
            let mix = DMatrix::from_fn(3, m, |_, _| rng.random_range(-40.0..40.0));
            let noise = DMatrix::from_fn(b, m, |_, _| rng.random_range(-5.0..5.0));
            DMatrix::from_fn(b, m, |i, _| base[(i, 0)]) + dirs * mix + noise
        };
        let dict = PcaDictionary::from_data(&z).unwrap();
        let d = dict.basis();
        ortho = ortho.max((d.tr_mul(d) - DMatrix::<f64>::identity(b, b)).amax());
        let zmax = z.amax().max(1.0);
        recon = recon.max((d * d.transpose() * &z - &z).amax() / zmax);
        let codes = encode(&dict, &z).unwrap();
        let back = decode(&dict, &codes).unwrap();
        let zn = z.norm().max(1.0);
        norm = norm
            .max((codes.coeffs.norm() - z.norm()).abs() / zn)
            .max((back.norm() - z.norm()).abs() / zn);
    }
    verdict(
        ortho < C6_ORTHO_TOL && recon < C6_RECON_TOL && norm < C6_NORM_TOL,
        format!(
            "{C6_GROUPS} groups: max |D^T D - I| = {ortho:.1e}, max reconstruction err / max(1,|Z|) = {recon:.1e}, max relative norm change = {norm:.1e}"
        ),
    )
}

fn random_8bit_image(rng: &mut ChaCha8Rng, w: usize, h: usize, levels: u32) -> GrayImage {
    GrayImage::from_fn(w, h, |_, _| (rng.random_range(0..levels) * (255 / (levels - 1).max(1))) as f64)
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut cases = 0;
    for _ in 0..C7_IMAGES {
        let (w, h) = (rng.random_range(8..=48), rng.random_range(8..=48));
        let img = random_8bit_image(&mut rng, w, h, 256);
        let side = rng.random_range(2..=9usize).min(w).min(h);
        for stride in 1..=side {
            let mut agg = Aggregator::new(w, h);
            for a in anchor_grid(&img, side, stride).unwrap() {
                let values = extract_group(&img, &[a]).unwrap();
                agg.accumulate(&[a], &values).unwrap();
            }
            let out = agg.finish().unwrap();
            let exact = out
                .pixels()
                .iter()
                .zip(img.pixels())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            if !exact {
                return verdict(false, format!("{w}x{h} image, side {side}, stride {stride} not reproduced"));
            }
            cases += 1;
        }
    }
    verdict(true, format!("{C7_IMAGES} images, {cases} (side, stride) cases reproduced bit-exactly"))
}

/// Exhaustive search: every top-left position within `(W-1)/2` before and
/// `W-1-(W-1)/2` after the anchor on each axis, anchor first, the rest by
/// distance with scan order breaking ties.
fn brute_force_match(img: &GrayImage, anchor: PatchRef, window: usize, m: usize) -> Vec<(PatchRef, f64)> {
    let side = anchor.side;
    let before = (window as i64 - 1) / 2;
    let after = window as i64 - 1 - before;
    let mut cands = Vec::new();
    for r in 0..=(img.height() - side) {
        for c in 0..=(img.width() - side) {
            let dr = r as i64 - anchor.row as i64;
            let dc = c as i64 - anchor.col as i64;
            if dr < -before || dr > after || dc < -before || dc > after {
                continue;
            }
            let p = PatchRef::new(r, c, side);
            if p == anchor {
                continue;
            }
            let mut d = 0.0;
            for i in 0..side {
                for j in 0..side {
                    let diff = img.get(anchor.row + i, anchor.col + j) - img.get(r + i, c + j);
                    d += diff * diff;
                }
            }
            cands.push((p, d));
        }
    }
    // stable sort keeps scan order among equal distances
    cands.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut out = vec![(anchor, 0.0)];
    out.extend(cands.into_iter().take(m - 1));
    out
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut groups = 0;
    for k in 0..C8_IMAGES {
        // few grey levels force many distance ties
        let img = random_8bit_image(&mut rng, C8_SIDE, C8_SIDE, 2 + (k % 3) as u32);
        let side = 2 + k % 4;
        for a in anchor_grid(&img, side, 1).unwrap() {
            let got = block_match(&img, a, C8_WINDOW, C8_M).unwrap();
            let want = brute_force_match(&img, a, C8_WINDOW, C8_M);
            let same = got.members.len() == want.len()
                && got
                    .members
                    .iter()
                    .zip(&got.distances)
                    .zip(&want)
                    .all(|((p, d), (q, e))| p == q && d == e);
            if !same {
                return verdict(false, format!("image {k}, anchor {a:?}: {:?} vs oracle {want:?}", got.members));
            }
            groups += 1;
        }
    }
    verdict(true, format!("{C8_IMAGES} images, {groups} groups identical to the exhaustive search"))
}

fn bench_csv(images: &Path, out: &Path, no_time: bool) -> Vec<u8> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gsr-nls"));
    cmd.args(["bench", "--images"])
        .arg(images)
        .args(["--sigmas", "20,50", "--methods", "gsr,gsc", "--seed", "11", "--output"])
        .arg(out);
    if no_time {
        cmd.arg("--no-time");
    }
    let o = cmd.output().unwrap();
    assert!(o.status.success(), "bench failed: {}", String::from_utf8_lossy(&o.stderr));
    std::fs::read(out).unwrap()
}

fn without_time(csv: &[u8]) -> Vec<String> {
    String::from_utf8_lossy(csv)
        .lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            f.remove(4);
            f.join(",")
        })
        .collect()
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("images");
    std::fs::create_dir(&images).unwrap();
    let cam = camera();
    write_image(&cam.crop(60, 40, 64, 64).unwrap(), images.join("a.png")).unwrap();
    write_image(&cam.crop(150, 120, 56, 72).unwrap(), images.join("b.pgm")).unwrap();

    let first = bench_csv(&images, &dir.path().join("1.csv"), true);
    let second = bench_csv(&images, &dir.path().join("2.csv"), true);
    let timed_a = bench_csv(&images, &dir.path().join("3.csv"), false);
    let timed_b = bench_csv(&images, &dir.path().join("4.csv"), false);
    let csv_same = first == second && without_time(&timed_a) == without_time(&timed_b);

    let clean = cam.crop(100, 80, 96, 96).unwrap();
    let noisy = add_gaussian_noise(&clean, NoiseSpec::new(50.0, NOISE_SEED).unwrap()).unwrap();
    let params = default_params(50.0).unwrap();
    let run_with = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| denoise(&noisy, &params, Some(&clean)).unwrap())
    };
    let single = run_with(1);
    let multi = run_with(4);
    let threads_same = single.output == multi.output && single.per_iteration == multi.per_iteration;

    verdict(
        csv_same && threads_same,
        format!(
            "bench CSV reruns byte-identical: {csv_same} ({} bytes, timed runs equal apart from time_s); 1 vs 4 threads value-identical: {threads_same}",
            first.len()
        ),
    )
}

fn criterion_10() -> Outcome {
    let clean = load_house().unwrap_or_else(camera);
    let noisy = add_gaussian_noise(&clean, NoiseSpec::new(50.0, NOISE_SEED).unwrap()).unwrap();
    let params = default_params(50.0).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let report = pool.install(|| denoise(&noisy, &params, None).unwrap());
    let secs = start.elapsed().as_secs_f64();
    verdict(
        secs < C10_MAX_SECONDS,
        format!(
            "256x256, sigma 50, stride {}, 1 thread: {secs:.1} s for {} iterations (limit {C10_MAX_SECONDS} s)",
            params.stride, report.iterations_run
        ),
    )
}

fn main() -> ExitCode {
    // libtest-style filter arguments are accepted and ignored
    let house = load_house();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut info: Vec<String> = Vec::new();

    let cam = camera();
    let (cam50, it50, _) = run_denoiser(&cam, 50.0, Mode::GsrNls);
    let (cam75, it75, _) = run_denoiser(&cam, 75.0, Mode::GsrNls);
    let (cam50_gsc, _, _) = run_denoiser(&cam, 50.0, Mode::GscBaseline);
    let cam_study = residual_study(&cam);
    info.push(format!("camera 256x256 sigma 50: GSR-NLS {cam50:.2} dB ({it50} iterations), GSC baseline {cam50_gsc:.2} dB"));
    info.push(format!("camera 256x256 sigma 75: GSR-NLS {cam75:.2} dB ({it75} iterations)"));
    info.push(format!("camera sigma 30 residual study: {}", c4_detail(&cam_study)));

    match &house {
        Some(h) => {
            let (p50, _, _) = run_denoiser(h, 50.0, Mode::GsrNls);
            let (p75, _, _) = run_denoiser(h, 75.0, Mode::GsrNls);
            let (g50, _, _) = run_denoiser(h, 50.0, Mode::GscBaseline);
            let study = residual_study(h);
            results.push((1, "House sigma 50 PSNR", verdict(p50 >= C1_MIN_PSNR_SIGMA50, format!("{p50:.2} dB (need >= {C1_MIN_PSNR_SIGMA50})"))));
            results.push((2, "House sigma 75 PSNR", verdict(p75 >= C2_MIN_PSNR_SIGMA75, format!("{p75:.2} dB (need >= {C2_MIN_PSNR_SIGMA75})"))));
            results.push((3, "GSR-NLS beats the GSC baseline", verdict(p50 - g50 >= C3_MIN_GAIN_DB, format!("{p50:.2} - {g50:.2} = {:.2} dB (need >= {C3_MIN_GAIN_DB})", p50 - g50))));
            results.push((4, "Laplacian residual model", verdict(c4_ok(&study), c4_detail(&study))));
        }
        None => {
            results.push((1, "House sigma 50 PSNR", blocked()));
            results.push((2, "House sigma 75 PSNR", blocked()));
            results.push((3, "GSR-NLS beats the GSC baseline", blocked()));
            results.push((4, "Laplacian residual model", blocked()));
        }
    }
    results.push((5, "shrink matches the grid minimizer", criterion_5()));
    results.push((6, "PCA dictionary properties", criterion_6()));
    results.push((7, "aggregate inverts extract", criterion_7()));
    results.push((8, "block matching vs brute force", criterion_8()));
    results.push((9, "determinism", criterion_9()));
    results.push((10, "single-thread timing", criterion_10()));

    println!();
    for (n, name, o) in &results {
        let tag = match o.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Blocked => "BLOCKED",
        };
        println!("criterion {n:>2} {tag:<7} {name}: {}", o.detail);
    }
    for line in &info {
        println!("info          {line}");
    }
    let count = |s: Status| results.iter().filter(|r| r.2.status == s).count();
    println!(
        "acceptance: {} passed, {} failed, {} blocked",
        count(Status::Pass),
        count(Status::Fail),
        count(Status::Blocked)
    );
    if count(Status::Fail) > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
