//! Synthetic corpora with known adoption curves.
//!
//! Each function has a logistic occurrence probability
//! `p(m) = logistic(logit(p_final) + slope · (m − final))`, drawn
//! independently per repository. A present function gets `1 + Poisson(mean_calls − 1)`
//! call sites spread over the repository's scripts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::Duration;
use codelex_core::catalog::{Category, Tier};
use codelex_core::ingest::{RepoSidecar, SIDECAR_FILE};
use codelex_core::StudyEpoch;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum SimulateError {
    #[error("invalid generator config: {0}")]
    Invalid(String),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> SimulateError + '_ {
    move |source| SimulateError::Io { path: path.to_owned(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimFunction {
    pub name: String,
    pub package: String,
    #[serde(default = "community")]
    pub tier: Tier,
    #[serde(default)]
    pub tidyverse: bool,
    /// Occurrence probability in the final month.
    pub p_final: f64,
    /// Logit change per month.
    #[serde(default)]
    pub slope: f64,
}

fn community() -> Tier {
    Tier::Community
}

impl SimFunction {
    pub fn new(name: &str, package: &str, tier: Tier, p_final: f64, slope: f64) -> Self {
        SimFunction { name: name.into(), package: package.into(), tier, tidyverse: false, p_final, slope }
    }

    pub fn probability(&self, month: i32, final_month: i32) -> f64 {
        let logit = (self.p_final / (1.0 - self.p_final)).ln();
        1.0 / (1.0 + (-(logit + self.slope * (month - final_month) as f64)).exp())
    }

    fn category(&self) -> Category {
        match self.tier {
            Tier::Base | Tier::Recommended => Category::Base,
            Tier::Community if self.tidyverse => Category::Tidyverse,
            Tier::Community => Category::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub months: i32,
    pub repos_per_month: usize,
    pub min_scripts: usize,
    pub max_scripts: usize,
    /// Mean call sites per present function.
    pub mean_calls: f64,
    /// Share of repositories pushed a year or more after creation.
    pub stale_fraction: f64,
    /// Empty means the built-in stationary pool.
    pub functions: Vec<SimFunction>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            months: 36,
            repos_per_month: 50,
            min_scripts: 1,
            max_scripts: 3,
            mean_calls: 3.0,
            stale_fraction: 0.0,
            functions: Vec::new(),
        }
    }
}

/// Thirty flat functions, ten each in a base-tier, a tidyverse and a
/// community package, with final-month probabilities between 0.2 and 0.6.
pub fn stationary_pool() -> Vec<SimFunction> {
    let mut out = Vec::new();
    for (g, (package, tier, tidy)) in
        [("simbase", Tier::Base, false), ("simverse", Tier::Community, true), ("simother", Tier::Community, false)]
            .into_iter()
            .enumerate()
    {
        for i in 0..10 {
            let k = g * 10 + i;
            let mut f = SimFunction::new(&format!("sim_f{:02}", k + 1), package, tier, 0.2 + 0.4 * i as f64 / 9.0, 0.0);
            f.tidyverse = tidy;
            out.push(f);
        }
    }
    out
}

impl GeneratorConfig {
    pub fn pool(&self) -> Vec<SimFunction> {
        if self.functions.is_empty() {
            stationary_pool()
        } else {
            self.functions.clone()
        }
    }

    pub fn final_month(&self) -> i32 {
        self.months - 1
    }

    pub fn validate(&self) -> Result<(), SimulateError> {
        let bad = |m: String| Err(SimulateError::Invalid(m));
        if self.months < 1 || self.repos_per_month == 0 {
            return bad("months and repos_per_month must be positive".into());
        }
        if self.min_scripts == 0 || self.min_scripts > self.max_scripts {
            return bad(format!(
                "need 1 <= min_scripts <= max_scripts, got {}..{}",
                self.min_scripts, self.max_scripts
            ));
        }
        if !(self.mean_calls >= 1.0) {
            return bad(format!("mean_calls must be at least 1, got {}", self.mean_calls));
        }
        if !(0.0..=1.0).contains(&self.stale_fraction) {
            return bad(format!("stale_fraction must lie in [0, 1], got {}", self.stale_fraction));
        }
        let mut names = std::collections::BTreeSet::new();
        for f in &self.functions {
            if !is_identifier(&f.name) || !is_identifier(&f.package) {
                return bad(format!("{:?} / {:?} is not a plain R identifier", f.name, f.package));
            }
            if !names.insert(&f.name) {
                return bad(format!("duplicate function {}", f.name));
            }
            if !(f.p_final > 0.0 && f.p_final <= 1.0) || !f.slope.is_finite() {
                return bad(format!("{}: need 0 < p_final <= 1 and a finite slope", f.name));
            }
        }
        Ok(())
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic()) && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Debug, Clone, Serialize)]
pub struct TruthFunction {
    pub name: String,
    pub package: String,
    pub category: Category,
    /// Logit occurrence probability at the final month.
    pub intercept_logit: f64,
    pub slope: f64,
    pub p_first: f64,
    pub p_final: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub epoch: StudyEpoch,
    pub months: i32,
    pub final_month: i32,
    pub repos_per_month: usize,
    pub repos: usize,
    pub scripts: usize,
    pub stale_repos: usize,
    pub functions: Vec<TruthFunction>,
}

/// Files written by [`simulate`], relative to its output directory.
pub const CORPUS_DIR: &str = "corpus";
pub const PACKAGES_FILE: &str = "packages.csv";
pub const TRUTH_FILE: &str = "ground_truth.json";
pub const CONFIG_FILE: &str = "codelex.toml";

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), SimulateError> {
    fs::write(path, bytes).map_err(io(path))
}

fn days_in_month(epoch: &StudyEpoch, m: i32) -> i64 {
    (epoch.first_day(m + 1) - epoch.first_day(m)).num_days()
}

/// One line per call site; a few lines carry comments or strings that the
/// default scanner must ignore.
fn script_text(rng: &mut ChaCha8Rng, calls: &[&str]) -> String {
    let mut s = String::from("# generated script\n");
    for (i, f) in calls.iter().enumerate() {
        match rng.gen_range(0..10) {
            0 => writeln!(s, "v{i} <- {f}(v{}, \"label ({i})\")", i.saturating_sub(1)),
            1 => writeln!(s, "{f}(x = {i}) # note {i}"),
            2 => writeln!(s, "out$v{i} <- {f}(\n  v{},\n  n = {i}\n)", i.saturating_sub(1)),
            _ => writeln!(s, "v{i} <- {f}(v{}, {i})", i.saturating_sub(1)),
        }
        .expect("write to string");
    }
    s
}

/// Write a corpus, its package list, the ground truth and a ready-to-run
/// config under `out`.
pub fn simulate(
    config: &GeneratorConfig,
    epoch: StudyEpoch,
    seed: u64,
    out: &Path,
) -> Result<GroundTruth, SimulateError> {
    config.validate()?;
    let pool = config.pool();
    let final_month = config.final_month();
    let corpus = out.join(CORPUS_DIR);
    fs::create_dir_all(&corpus).map_err(io(&corpus))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extra = (config.mean_calls > 1.0).then(|| Poisson::new(config.mean_calls - 1.0).expect("positive rate"));

    let (mut repos, mut scripts, mut stale) = (0, 0, 0);
    for m in 0..config.months {
        let probs: Vec<f64> = pool.iter().map(|f| f.probability(m, final_month)).collect();
        for r in 0..config.repos_per_month {
            let repo_id = format!("m{m:03}_r{r:04}");
            let dir = corpus.join(&repo_id);
            fs::create_dir_all(&dir).map_err(io(&dir))?;
            let created = epoch.first_day(m) + Duration::days(rng.gen_range(0..days_in_month(&epoch, m)));
            let lag = if rng.gen::<f64>() < config.stale_fraction {
                stale += 1;
                rng.gen_range(365..=700)
            } else {
                rng.gen_range(0..=300)
            };
            let sidecar = RepoSidecar {
                owner: Some(format!("user{}", r % 97)),
                name: Some(repo_id.clone()),
                created_at: created,
                pushed_at: created + Duration::days(lag),
            };
            let sidecar_path = dir.join(SIDECAR_FILE);
            write(&sidecar_path, serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes"))?;

            let mut calls: Vec<&str> = Vec::new();
            for (f, &p) in pool.iter().zip(&probs) {
                if rng.gen::<f64>() < p {
                    let n = 1 + extra.as_ref().map(|d| d.sample(&mut rng) as usize).unwrap_or(0);
                    calls.extend(std::iter::repeat(f.name.as_str()).take(n));
                }
            }
            calls.shuffle(&mut rng);
            let k = rng.gen_range(config.min_scripts..=config.max_scripts).min(calls.len().max(1));
            let chunk = calls.len().div_ceil(k).max(1);
            let mut written = 0;
            for (i, part) in calls.chunks(chunk).enumerate() {
                let ext = if i % 4 == 3 { "r" } else { "R" };
                write(&dir.join(format!("analysis_{i}.{ext}")), script_text(&mut rng, part))?;
                written += 1;
            }
            if written == 0 {
                write(&dir.join("analysis_0.R"), "# nothing yet\n")?;
                written = 1;
            }
            scripts += written;
            repos += 1;
        }
    }

    let mut csv = String::from("package,tier,tidyverse_member,function\n");
    for f in &pool {
        let tier = match f.tier {
            Tier::Base => "base",
            Tier::Recommended => "recommended",
            Tier::Community => "community",
        };
        writeln!(csv, "{},{tier},{},{}", f.package, f.tidyverse, f.name).expect("write to string");
    }
    write(&out.join(PACKAGES_FILE), csv)?;

    let cfg = format!(
        "# Generated alongside a synthetic corpus.\n\n[corpus]\npath = \"{CORPUS_DIR}\"\npackages = [\"{PACKAGES_FILE}\"]\n\n\
         [study]\nepoch_year = {}\nepoch_month = {}\nfinal_month = {final_month}\n\n[run]\nseed = {seed}\nout_dir = \"out\"\n",
        epoch.year, epoch.month
    );
    write(&out.join(CONFIG_FILE), cfg)?;

    let truth = GroundTruth {
        seed,
        epoch,
        months: config.months,
        final_month,
        repos_per_month: config.repos_per_month,
        repos,
        scripts,
        stale_repos: stale,
        functions: pool
            .iter()
            .map(|f| TruthFunction {
                name: f.name.clone(),
                package: f.package.clone(),
                category: f.category(),
                intercept_logit: (f.p_final / (1.0 - f.p_final)).ln(),
                slope: f.slope,
                p_first: f.probability(0, final_month),
                p_final: f.p_final,
            })
            .collect(),
    };
    write(&out.join(TRUTH_FILE), serde_json::to_vec_pretty(&truth).expect("truth serializes"))?;
    Ok(truth)
}
