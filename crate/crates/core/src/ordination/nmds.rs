use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{isotonic_pava, pcoa, DissimilarityMatrix, OrdinationError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmdsConfig {
    pub dims: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for NmdsConfig {
    fn default() -> Self {
        NmdsConfig { dims: 2, restarts: 20, max_iter: 500, tol: 1e-6, seed: 1 }
    }
}

/// Pairs ordered by dissimilarity, grouped into blocks of tied values.
struct RankOrder {
    pairs: Vec<(usize, usize)>,
    blocks: Vec<std::ops::Range<usize>>,
}

impl RankOrder {
    fn new(d: &DissimilarityMatrix) -> Self {
        let n = d.n();
        let mut pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        pairs.sort_by(|a, b| d.d[*a].total_cmp(&d.d[*b]).then(a.cmp(b)));
        let dv: Vec<f64> = pairs.iter().map(|&p| d.d[p]).collect();
        let mut blocks = Vec::new();
        let mut start = 0;
        for k in 1..=dv.len() {
            if k == dv.len() || dv[k] != dv[start] {
                blocks.push(start..k);
                start = k;
            }
        }
        RankOrder { pairs, blocks }
    }
}

fn config_distances(x: &DMatrix<f64>, pairs: &[(usize, usize)]) -> Vec<f64> {
    pairs.iter().map(|&(i, j)| (x.row(i) - x.row(j)).norm()).collect()
}

/// Disparities (isotonic fit of configuration distances on the rank of d,
/// primary tie treatment) and Kruskal stress-1.
fn fit_disparities(rank: &RankOrder, delta: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..delta.len()).collect();
    for b in &rank.blocks {
        order[b.clone()].sort_by(|&a, &c| delta[a].total_cmp(&delta[c]).then(a.cmp(&c)));
    }
    let y: Vec<f64> = order.iter().map(|&k| delta[k]).collect();
    let fit = isotonic_pava(&y, None);
    let mut dhat = vec![0.0; delta.len()];
    for (pos, &k) in order.iter().enumerate() {
        dhat[k] = fit[pos];
    }
    let num: f64 = dhat.iter().zip(delta).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = delta.iter().map(|v| v * v).sum();
    let stress = if den > 0.0 { (num / den).sqrt() } else { 1.0 };
    (dhat, stress)
}

/// Kruskal stress-1 of a configuration against a dissimilarity matrix.
pub fn kruskal_stress(d: &DissimilarityMatrix, x: &DMatrix<f64>) -> f64 {
    let rank = RankOrder::new(d);
    fit_disparities(&rank, &config_distances(x, &rank.pairs)).1
}

fn center(x: &mut DMatrix<f64>) {
    for c in 0..x.ncols() {
        let m = x.column(c).mean();
        x.column_mut(c).add_scalar_mut(-m);
    }
}

/// Scale so Σ δ² equals the pair count; stress-1 is unaffected.
fn normalize(x: &mut DMatrix<f64>, pairs: &[(usize, usize)]) {
    let ss: f64 = config_distances(x, pairs).iter().map(|v| v * v).sum();
    if ss > 0.0 {
        *x *= (pairs.len() as f64 / ss).sqrt();
    }
}

fn guttman(x: &DMatrix<f64>, rank: &RankOrder, delta: &[f64], dhat: &[f64]) -> DMatrix<f64> {
    let n = x.nrows();
    let mut b = DMatrix::zeros(n, n);
    for (k, &(i, j)) in rank.pairs.iter().enumerate() {
        if delta[k] > 0.0 {
            let v = -dhat[k] / delta[k];
            b[(i, j)] = v;
            b[(j, i)] = v;
        }
    }
    for i in 0..n {
        let s: f64 = b.row(i).sum();
        b[(i, i)] = -s;
    }
    (b * x) / n as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmdsRun {
    pub coords: DMatrix<f64>,
    pub stress: f64,
    /// Stress before the first step and after every accepted step.
    pub history: Vec<f64>,
    pub converged: bool,
}

/// One majorization run from a given start. A step that would raise stress
/// is halved until it does not, so `history` never increases.
pub fn nmds_run(d: &DissimilarityMatrix, init: DMatrix<f64>, max_iter: usize, tol: f64) -> NmdsRun {
    let rank = RankOrder::new(d);
    let mut x = init;
    center(&mut x);
    normalize(&mut x, &rank.pairs);
    let mut delta = config_distances(&x, &rank.pairs);
    let (mut dhat, mut stress) = fit_disparities(&rank, &delta);
    let mut history = vec![stress];
    let mut converged = false;
    for _ in 0..max_iter {
        if stress < 1e-12 {
            converged = true;
            break;
        }
        let norm: f64 = dhat.iter().map(|v| v * v).sum();
        let scale = if norm > 0.0 { (rank.pairs.len() as f64 / norm).sqrt() } else { 1.0 };
        let scaled: Vec<f64> = dhat.iter().map(|v| v * scale).collect();
        let target = guttman(&x, &rank, &delta, &scaled);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let mut cand = &x + (&target - &x) * t;
            center(&mut cand);
            normalize(&mut cand, &rank.pairs);
            let cd = config_distances(&cand, &rank.pairs);
            let (ch, cs) = fit_disparities(&rank, &cd);
            if cs <= stress {
                accepted = Some((cand, cd, ch, cs));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, cd, ch, cs)) = accepted else {
            converged = true;
            break;
        };
        let gain = stress - cs;
        x = cand;
        delta = cd;
        dhat = ch;
        stress = cs;
        history.push(stress);
        if gain < tol {
            converged = true;
            break;
        }
    }
    NmdsRun { coords: x, stress, history, converged }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmdsResult {
    /// Centered, rotated to principal axes.
    pub coords: DMatrix<f64>,
    pub stress: f64,
    pub restarts_used: usize,
    pub converged: bool,
    pub seed: u64,
    pub best_restart: usize,
    /// Stress of the PCoA starting configuration before any step.
    pub seed_stress: f64,
    pub run_stresses: Vec<f64>,
    pub history: Vec<f64>,
}

fn principal_rotate(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = x.clone();
    center(&mut x);
    let eig = SymmetricEigen::new(x.transpose() * &x);
    let mut order: Vec<usize> = (0..x.ncols()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for (c, &k) in order.iter().enumerate() {
        let col = &x * eig.eigenvectors.column(k);
        let pivot = (0..col.len()).max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()).then(b.cmp(&a))).unwrap_or(0);
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        out.set_column(c, &(col * sign));
    }
    out
}

/// Best of several majorization runs. Restart 0 starts from PCoA, the
/// others from seeded uniform configurations.
pub fn nmds(d: &DissimilarityMatrix, config: &NmdsConfig) -> Result<NmdsResult, OrdinationError> {
    let n = d.n();
    if n < 4 {
        return Err(OrdinationError::Degenerate { need: 4, got: n });
    }
    let dims = config.dims.max(1);
    let restarts = config.restarts.max(1);
    let seed_config = pcoa(d)?.axes(dims);
    let seed_init = if seed_config.iter().all(|v| *v == 0.0) {
        // Nothing to embed; fall back to a random start.
        random_start(n, dims, config.seed, 0)
    } else {
        seed_config
    };
    let seed_stress = kruskal_stress(d, &seed_init);
    let runs: Vec<NmdsRun> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let init = if r == 0 { seed_init.clone() } else { random_start(n, dims, config.seed, r as u64) };
            nmds_run(d, init, config.max_iter, config.tol)
        })
        .collect();
    let best = (0..runs.len()).min_by(|&a, &b| runs[a].stress.total_cmp(&runs[b].stress).then(a.cmp(&b))).unwrap();
    let run = &runs[best];
    Ok(NmdsResult {
        coords: principal_rotate(&run.coords),
        stress: run.stress,
        restarts_used: restarts,
        converged: run.converged,
        seed: config.seed,
        best_restart: best,
        seed_stress,
        run_stresses: runs.iter().map(|r| r.stress).collect(),
        history: run.history.clone(),
    })
}

fn random_start(n: usize, dims: usize, seed: u64, stream: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    DMatrix::from_fn(n, dims, |_, _| rng.gen_range(-1.0..1.0))
}
