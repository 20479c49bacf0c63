//! Acceptance criteria, one line each. Runs without the libtest harness so
//! the report reads top to bottom; exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use codelex::config::PipelineConfig;
use codelex::pipeline::{self, Stage, StageStatus};
use codelex::simulate::{simulate, stationary_pool, GeneratorConfig, SimFunction, CONFIG_FILE};
use codelex_core::catalog::{Tier, DEFAULT_THRESHOLD};
use codelex_core::diversity::{hill, AbundanceVector, HillOrder};
use codelex_core::extract::scan_script;
use codelex_core::glm::{fit, FitData, GlmFit, ModelSpec, Term, SCORE_TOL};
use codelex_core::ingest::{DEFAULT_PER_DAY_CAP, DEFAULT_STALE_DAYS};
use codelex_core::ordination::{
    bray_curtis_rows, dbrda_time_fraction, isotonic_pava, nmds, nmds_run, pcoa, DissimilarityMatrix, NmdsConfig,
};
use codelex_core::{Family, ScanMode};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal, Poisson};

struct Criterion {
    name: &'static str,
    limit: Duration,
    run: fn() -> Result<String>,
}

fn main() {
    let criteria = [
        Criterion { name: "scanner golden corpus and fuzz", limit: Duration::from_secs(10), run: scanner },
        Criterion { name: "hill suite", limit: Duration::from_secs(60), run: hill_suite },
        Criterion { name: "ordination suite", limit: Duration::from_secs(60), run: ordination_suite },
        Criterion { name: "glm suite", limit: Duration::from_secs(300), run: glm_suite },
        Criterion { name: "pipeline recovery", limit: Duration::from_secs(600), run: pipeline_recovery },
        Criterion { name: "configuration defaults", limit: Duration::from_secs(10), run: config_defaults },
        Criterion { name: "determinism", limit: Duration::from_secs(300), run: determinism },
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for c in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(c.run)) {
            Ok(r) => r,
            Err(p) => {
                let msg =
                    p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
                Err(anyhow::anyhow!("panicked: {}", msg.unwrap_or_default()))
            }
        };
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if took > c.limit => Err(anyhow::anyhow!("{detail}; took {took:.1?}, limit {:?}", c.limit)),
            o => o,
        };
        match outcome {
            Ok(detail) => println!("PASS  {:<32} {:>8.2?}  {detail}", c.name, took),
            Err(e) => {
                failed += 1;
                println!("FAIL  {:<32} {:>8.2?}  {e:#}", c.name, took);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- scanner

fn scanner_fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/scanner")
}

fn expected_tokens(path: &Path) -> Result<BTreeMap<&'static str, Vec<String>>> {
    let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
    let mut out: BTreeMap<&'static str, Vec<String>> = BTreeMap::new();
    let mut section = None;
    for line in text.lines() {
        match line {
            "== default" => section = Some("default"),
            "== naive" => section = Some("naive"),
            t => out.entry(section.context("token before section header")?).or_default().push(t.to_owned()),
        }
    }
    Ok(out)
}

fn scanned(bytes: &[u8], mode: ScanMode) -> Vec<String> {
    scan_script(bytes, mode)
        .into_iter()
        .map(|e| match e.explicit_package {
            Some(p) => format!("{p}::{}", e.token),
            None => e.token,
        })
        .collect()
}

fn scanner() -> Result<String> {
    let mut scripts: Vec<PathBuf> = fs::read_dir(scanner_fixtures())?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|x| x == "R"))
        .collect();
    scripts.sort();
    ensure!(scripts.len() == 25, "expected 25 fixture scripts, found {}", scripts.len());
    for s in &scripts {
        let bytes = fs::read(s)?;
        let want = expected_tokens(&s.with_extension("expected"))?;
        for (label, mode) in [("default", ScanMode::Default), ("naive", ScanMode::Naive)] {
            let got = scanned(&bytes, mode);
            let exp = want.get(label).cloned().unwrap_or_default();
            ensure!(got == exp, "{} ({label}): got {got:?}, expected {exp:?}", s.display());
        }
    }
    const ALPHABET: &[u8] = b"abcfnrxyz._R09 \t\n\r\"'`#()[]{}%>|:\\-+*,;=<!@$";
    let mut rng = ChaCha8Rng::seed_from_u64(20_251_014);
    for i in 0..100_000 {
        let len = rng.gen_range(0..80);
        let bytes: Vec<u8> = if i % 3 == 0 {
            (0..len).map(|_| rng.gen()).collect()
        } else {
            (0..len).map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())]).collect()
        };
        for mode in [ScanMode::Default, ScanMode::Naive] {
            for e in scan_script(&bytes, mode) {
                ensure!(!e.token.is_empty(), "empty token from {bytes:?}");
            }
        }
    }
    Ok(format!("{} fixtures x 2 modes, 100000 fuzz inputs", scripts.len()))
}

// ------------------------------------------------------------------- hill

fn vector(p: Vec<f64>) -> AbundanceVector {
    let ids = (0..p.len()).map(|i| format!("f{i}")).collect();
    AbundanceVector::from_probabilities(ids, p).expect("valid simplex vector")
}

fn hill_suite() -> Result<String> {
    for n in 1..=50usize {
        let v = vector(vec![1.0 / n as f64; n]);
        let (h0, h1) = (hill(&v, HillOrder::Zero).value, hill(&v, HillOrder::One).value);
        ensure!(h0 == n as f64 && h1 == n as f64, "uniform n={n}: hill0 {h0}, hill1 {h1}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    for _ in 0..10_000 {
        let k = rng.gen_range(1..40);
        let raw: Vec<f64> = (0..k).map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen::<f64>().powi(2) }).collect();
        let s: f64 = raw.iter().sum();
        if s == 0.0 {
            continue;
        }
        let v = vector(raw.into_iter().map(|x| x / s).collect());
        let (h0, h1) = (hill(&v, HillOrder::Zero).value, hill(&v, HillOrder::One).value);
        ensure!(h1 <= h0, "hill1 {h1} > hill0 {h0}");
    }
    // exp of the Shannon entropy, evaluated term by term.
    let p = [0.7f64, 0.2, 0.1];
    let entropy = -(p[0] * p[0].ln() + p[1] * p[1].ln() + p[2] * p[2].ln());
    let worked = hill(&vector(p.to_vec()), HillOrder::One).value;
    ensure!((entropy - 0.80182).abs() < 1e-5, "oracle entropy {entropy}");
    ensure!((worked - 2.2296).abs() <= 1e-4, "hill1(0.7, 0.2, 0.1) = {worked}");
    ensure!((worked - entropy.exp()).abs() < 1e-12, "hill1 {worked} vs oracle {}", entropy.exp());
    Ok(format!("hill1(0.7, 0.2, 0.1) = {worked:.6}"))
}

// ------------------------------------------------------------- ordination

fn unit_rows(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..k).map(|_| rng.gen::<f64>().powi(3)).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

/// Every split of 0..n into contiguous blocks, each block at its weighted
/// mean; keep the non-decreasing ones and return the least-squares best.
fn pava_brute_force(y: &[f64], w: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for cuts in 0u32..(1 << (n - 1)) {
        let mut fitted = Vec::with_capacity(n);
        let mut start = 0;
        for i in 0..n {
            if i == n - 1 || cuts & (1 << i) != 0 {
                let tw: f64 = w[start..=i].iter().sum();
                let m = (start..=i).map(|j| w[j] * y[j]).sum::<f64>() / tw;
                fitted.extend(std::iter::repeat(m).take(i + 1 - start));
                start = i + 1;
            }
        }
        if fitted.windows(2).any(|p| p[1] < p[0]) {
            continue;
        }
        let sse: f64 = (0..n).map(|i| w[i] * (y[i] - fitted[i]).powi(2)).sum();
        if best.as_ref().map_or(true, |b| sse < b.0) {
            best = Some((sse, fitted));
        }
    }
    best.expect("the single-block split is always monotone").1
}

/// tr(H G) / tr(G), G the double-centered −½D², H the explicit hat matrix of [1, t].
fn dbrda_oracle(d: &DissimilarityMatrix, t: &[f64]) -> f64 {
    let n = t.len();
    let a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| -0.5 * d.d[(i, j)].powi(2)).collect()).collect();
    let row: Vec<f64> = a.iter().map(|r| r.iter().sum::<f64>() / n as f64).collect();
    let grand = row.iter().sum::<f64>() / n as f64;
    let g = |i: usize, j: usize| a[i][j] - row[i] - row[j] + grand;
    let tbar = t.iter().sum::<f64>() / n as f64;
    let stt: f64 = t.iter().map(|v| (v - tbar).powi(2)).sum();
    let h = |i: usize, j: usize| 1.0 / n as f64 + (t[i] - tbar) * (t[j] - tbar) / stt;
    let (mut fitted, mut total) = (0.0, 0.0);
    for i in 0..n {
        total += g(i, i);
        for j in 0..n {
            fitted += h(i, j) * g(j, i);
        }
    }
    fitted / total
}

fn ordination_suite() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);

    let rows = unit_rows(&mut rng, 15, 12);
    let bc = bray_curtis_rows(&rows);
    for i in 0..rows.len() {
        for j in 0..rows.len() {
            // Unit row sums hold only to rounding, so a few ulps separate the two forms.
            let half_l1 = 0.5 * rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b).abs()).sum::<f64>();
            ensure!((bc.d[(i, j)] - half_l1).abs() <= 4.0 * f64::EPSILON, "({i},{j}) differs from half L1");
        }
    }

    let mut worst_pcoa = 0.0f64;
    for _ in 0..50 {
        let n = rng.gen_range(4..20);
        let pts: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)]).collect();
        let d = DissimilarityMatrix::from_points(&pts);
        let p = pcoa(&d)?;
        for i in 0..n {
            for j in 0..n {
                let r: f64 = (0..p.coords.ncols()).map(|c| (p.coords[(i, c)] - p.coords[(j, c)]).powi(2)).sum();
                worst_pcoa = worst_pcoa.max((r.sqrt() - d.d[(i, j)]).abs());
            }
        }
    }
    ensure!(worst_pcoa <= 1e-9, "pcoa distance error {worst_pcoa:e}");

    let mut worst_stress = 0.0f64;
    for trial in 0..5 {
        let n = 8 + 3 * trial;
        let pts: Vec<[f64; 2]> = (0..n).map(|i| [i as f64 + rng.gen::<f64>() * 0.5, 0.0]).collect();
        let d = DissimilarityMatrix::from_points(&pts);
        let r = nmds(&d, &NmdsConfig { restarts: 5, seed: trial as u64, ..Default::default() })?;
        worst_stress = worst_stress.max(r.stress);
        let init = DMatrix::from_fn(n, 2, |_, _| rng.gen::<f64>());
        let run = nmds_run(&d, init, 500, 1e-9);
        for w in run.history.windows(2) {
            ensure!(w[1] <= w[0] + 1e-10, "stress rose from {} to {}", w[0], w[1]);
        }
        worst_stress = worst_stress.max(run.stress);
    }
    ensure!(worst_stress < 0.01, "collinear stress {worst_stress}");

    let mut worst_pava = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=8);
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..2.0)).collect();
        let got = isotonic_pava(&y, Some(&w));
        let want = pava_brute_force(&y, &w);
        for (a, b) in got.iter().zip(&want) {
            worst_pava = worst_pava.max((a - b).abs());
        }
    }
    ensure!(worst_pava <= 1e-10, "pava error {worst_pava:e}");

    let n = 20;
    let t: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let linear: Vec<Vec<f64>> = t.iter().map(|&v| vec![1.0 + 0.5 * v, 3.0 - 0.2 * v, 0.7 * v]).collect();
    let f = dbrda_time_fraction(&DissimilarityMatrix::euclidean(&linear), &t)?;
    ensure!((f - 1.0).abs() <= 1e-9, "noise-free explained fraction {f}");

    let d = bray_curtis_rows(&unit_rows(&mut rng, 24, 15));
    let mut shuffled: Vec<f64> = (0..24).map(|i| i as f64).collect();
    let mut null = Vec::with_capacity(999);
    for _ in 0..999 {
        shuffled.shuffle(&mut rng);
        let got = dbrda_time_fraction(&d, &shuffled)?;
        let want = dbrda_oracle(&d, &shuffled);
        ensure!((got - want).abs() <= 1e-10, "dbrda {got} vs oracle {want}");
        null.push(got);
    }
    // Under exchangeable labels the expected fraction is 1/(n−1).
    let mean = null.iter().sum::<f64>() / 999.0;
    let sd = (null.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 998.0).sqrt();
    ensure!((mean - 1.0 / 23.0).abs() < 4.0 * sd / 999f64.sqrt(), "permutation-null mean {mean}");
    Ok(format!(
        "pcoa {worst_pcoa:.1e}, collinear stress {worst_stress:.1e}, pava {worst_pava:.1e}, null mean {mean:.4}"
    ))
}

// -------------------------------------------------------------------- glm

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        x[r] = (b[r] - (r + 1..n).map(|k| a[r][k] * x[k]).sum::<f64>()) / a[r][r];
    }
    x
}

struct ScoreLog(f64, usize);

impl ScoreLog {
    fn check(&mut self, f: &GlmFit) -> Result<()> {
        if f.converged {
            ensure!(f.score_norm < SCORE_TOL, "score norm {} at a convergent fit", f.score_norm);
            self.0 = self.0.max(f.score_norm);
            self.1 += 1;
        }
        Ok(())
    }
}

fn calibration(family: Family, seed: u64, log: &mut ScoreLog) -> Result<usize> {
    let t: Vec<f64> = (0..96).map(f64::from).collect();
    let mut hits = 0;
    for s in 0..200 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + s);
        let (y, weights): (Vec<f64>, _) = if family == Family::Poisson {
            (t.iter().map(|v| Poisson::new((1.0 + 0.02 * v).exp()).unwrap().sample(&mut rng)).collect(), None)
        } else {
            let y = t
                .iter()
                .map(|v| Binomial::new(150, 1.0 / (1.0 + (2.0 - 0.02 * v).exp())).unwrap().sample(&mut rng) as f64)
                .collect();
            (y, Some(vec![150.0; 96]))
        };
        let f = fit(
            &ModelSpec::new(family, vec![Term::linear("t")]),
            &FitData { covariates: vec![t.clone()], y, weights, offset: None },
        )?;
        log.check(&f)?;
        if (f.beta[1] - 0.02).abs() <= 3.0 * f.se(1) {
            hits += 1;
        }
    }
    Ok(hits)
}

fn glm_suite() -> Result<String> {
    let mut log = ScoreLog(0.0, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let noise = Normal::new(0.0, 0.4).unwrap();
    let n = 80;
    let a: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let y: Vec<f64> = (0..n).map(|i| 1.5 - 0.1 * a[i] + 0.8 * b[i] + noise.sample(&mut rng)).collect();
    let f = fit(
        &ModelSpec::new(Family::Gaussian, vec![Term::linear("a"), Term::linear("b")]),
        &FitData { covariates: vec![a.clone(), b.clone()], y: y.clone(), ..Default::default() },
    )?;
    log.check(&f)?;
    let x: Vec<[f64; 3]> = (0..n).map(|i| [1.0, a[i], b[i]]).collect();
    let xtx = (0..3).map(|r| (0..3).map(|c| x.iter().map(|v| v[r] * v[c]).sum()).collect()).collect();
    let xty = (0..3).map(|r| x.iter().zip(&y).map(|(v, y)| v[r] * y).sum()).collect();
    let ols = solve(xtx, xty);
    for (got, want) in f.beta.iter().zip(&ols) {
        ensure!((got - want).abs() <= 1e-10, "ols {:?} vs {ols:?}", f.beta);
    }

    let f = fit(
        &ModelSpec::new(Family::Binomial, vec![Term::linear("t")]),
        &FitData {
            covariates: vec![vec![0.0, 1.0]],
            y: vec![500.0, 731.0],
            weights: Some(vec![1000.0, 1000.0]),
            offset: None,
        },
    )?;
    log.check(&f)?;
    ensure!(f.beta[0].abs() <= 1e-3 && (f.beta[1] - 0.9996).abs() <= 1e-3, "saturated fit {:?}", f.beta);

    let t: Vec<f64> = (0..96).map(f64::from).collect();
    let y: Vec<f64> = t.iter().map(|v| (v / 12.0).sin() + noise.sample(&mut rng)).collect();
    let f = fit(
        &ModelSpec::new(Family::Gaussian, vec![Term::spline("t")]),
        &FitData { covariates: vec![t], y, ..Default::default() },
    )?;
    log.check(&f)?;
    let lambda = f.lambda.context("smooth fit chose no lambda")?;
    let k = f.gcv_grid.iter().position(|g| g.0 == lambda).context("chosen lambda not on the grid")?;
    let min = f.gcv_grid.iter().map(|g| g.1).fold(f64::INFINITY, f64::min);
    ensure!(f.gcv_grid[k].1 == min, "gcv at chosen lambda {} exceeds grid minimum {min}", f.gcv_grid[k].1);

    let pois = calibration(Family::Poisson, 31_000, &mut log)?;
    let binom = calibration(Family::Binomial, 47_000, &mut log)?;
    ensure!(pois >= 190 && binom >= 190, "calibration coverage poisson {pois}/200, binomial {binom}/200");
    Ok(format!("coverage {pois}/200 and {binom}/200, max score norm {:.1e} over {} fits", log.0, log.1))
}

// --------------------------------------------------------------- pipeline

fn simulated_run(generator: GeneratorConfig, seed: u64, stages: &[Stage]) -> Result<(tempfile::TempDir, PathBuf)> {
    let dir = tempfile::tempdir()?;
    let epoch = PipelineConfig::default().epoch();
    simulate(&generator, epoch, seed, dir.path())?;
    let cfg = PipelineConfig::load(&dir.path().join(CONFIG_FILE))?;
    let m = pipeline::run(&cfg, stages)?;
    if let Some(f) = m.failed() {
        bail!("stage {} failed: {}", f.stage, f.error.clone().unwrap_or_default());
    }
    let out = cfg.run.out_dir.clone();
    Ok((dir, out))
}

fn word_shift(out: &Path) -> Result<Vec<BTreeMap<String, String>>> {
    let mut r = csv::Reader::from_path(out.join("word_shift_functions.csv"))?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

fn pipeline_recovery() -> Result<String> {
    const BETA: f64 = 0.05;
    let stages = [Stage::Scrape, Stage::Extract, Stage::Catalog, Stage::Filter, Stage::Diversity, Stage::Trends];
    let mut pool = stationary_pool();
    pool.push(SimFunction::new("planted_fn", "simplant", Tier::Community, 0.6, BETA));
    let planted = GeneratorConfig { months: 96, repos_per_month: 200, functions: pool, ..Default::default() };
    let (_keep, out) = simulated_run(planted, 5, &stages)?;
    let rows = word_shift(&out)?;
    let row = rows.iter().find(|r| r["entity"] == "planted_fn").context("planted function was not modelled")?;
    let slope: f64 = row["slope"].parse()?;
    ensure!((slope - BETA).abs() <= 0.2 * BETA, "recovered slope {slope}, planted {BETA}");
    ensure!(row["magnitude_class"] == "meaningful_up", "planted function classified {}", row["magnitude_class"]);

    let (_keep, out) =
        simulated_run(GeneratorConfig { months: 48, repos_per_month: 100, ..Default::default() }, 9, &stages)?;
    let rows = word_shift(&out)?;
    let stable = rows.iter().filter(|r| r["magnitude_class"] == "stable").count();
    ensure!(!rows.is_empty() && stable * 10 >= rows.len() * 9, "stationary corpus: {stable}/{} stable", rows.len());
    Ok(format!("slope {slope:.4} (planted {BETA}), stationary {stable}/{} stable", rows.len()))
}

fn config_defaults() -> Result<String> {
    let c = PipelineConfig::default();
    ensure!(c.catalog.threshold == 0.001 && DEFAULT_THRESHOLD == 0.001, "threshold {}", c.catalog.threshold);
    ensure!(c.filter.stale_days == 365 && DEFAULT_STALE_DAYS == 365, "stale window {}", c.filter.stale_days);
    ensure!(c.harvest.per_day_cap == 1000 && DEFAULT_PER_DAY_CAP == 1000, "per-day cap {}", c.harvest.per_day_cap);
    ensure!(c.trends.meaningful_change == 0.01, "meaningful change {}", c.trends.meaningful_change);
    let round = PipelineConfig::parse(&c.canonical())?;
    ensure!(round == c, "canonical form does not round-trip");
    Ok("threshold 0.001, stale 365 d, cap 1000/day, odds-ratio change 0.01".into())
}

fn determinism() -> Result<String> {
    let dir = tempfile::tempdir()?;
    let epoch = PipelineConfig::default().epoch();
    simulate(&GeneratorConfig::default(), epoch, 3, dir.path())?;
    let mut runs = Vec::new();
    for name in ["first", "second"] {
        let mut cfg = PipelineConfig::load(&dir.path().join(CONFIG_FILE))?;
        cfg.run.out_dir = dir.path().join(name);
        let m = pipeline::run(&cfg, &Stage::ALL)?;
        ensure!(m.stages.iter().all(|s| s.status == StageStatus::Ok), "{name} run failed: {:?}", m.failed());
        runs.push((cfg.run.out_dir.clone(), m));
    }
    let (a, b) = (&runs[0], &runs[1]);
    ensure!(a.1 == b.1, "run manifests differ");
    ensure!(fs::read(a.0.join(pipeline::RUN_MANIFEST))? == fs::read(b.0.join(pipeline::RUN_MANIFEST))?);
    let mut csvs = 0;
    for art in a.1.artifacts() {
        let (x, y) = (fs::read(a.0.join(&art.path))?, fs::read(b.0.join(&art.path))?);
        ensure!(x == y, "{} differs between runs", art.path);
        if art.path.ends_with(".csv") {
            csvs += 1;
        }
    }
    Ok(format!("{} artifacts ({csvs} CSV) identical, config hash {}", a.1.artifacts().count(), &a.1.config_hash[..12]))
}
