//! Harvesting repositories and scripts from a code-hosting HTTP API.
//!
//! The wire protocol follows the GitHub REST API: a paged repository
//! search per creation day, a recursive tree listing per repository and a
//! raw-content fetch per script. Transport is a trait so the crawler logic
//! (pagination, caps, backoff, resume tokens) is testable offline.

use std::collections::BTreeMap;
use std::io::Read;
use std::time::Duration;

use chrono::{DateTime, NaiveDate, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{is_r_script, BlobStore, Exclusion, FetchIssue, IngestError, Manifest, RepoRecord, ScriptBlob, StudyEpoch};

pub const TOKEN_ENV: &str = "CODELEX_API_TOKEN";
pub const DEFAULT_PER_DAY_CAP: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    /// Header names lower-cased.
    pub headers: BTreeMap<String, String>,
    pub body: Vec<u8>,
}

impl HttpResponse {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.get(&name.to_ascii_lowercase()).map(String::as_str)
    }
}

pub trait Transport: Send + Sync {
    /// Perform a GET. `Err` means the request never produced a response.
    fn get(&self, url: &str, token: Option<&str>) -> Result<HttpResponse, String>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl Default for UreqTransport {
    fn default() -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(60))
            .user_agent(concat!("codelex/", env!("CARGO_PKG_VERSION")))
            .build();
        UreqTransport { agent }
    }
}

impl Transport for UreqTransport {
    fn get(&self, url: &str, token: Option<&str>) -> Result<HttpResponse, String> {
        let mut req = self.agent.get(url).set("Accept", "application/vnd.github+json");
        if let Some(t) = token {
            req = req.set("Authorization", &format!("Bearer {t}"));
        }
        let resp = match req.call() {
            Ok(r) => r,
            Err(ureq::Error::Status(_, r)) => r,
            Err(e) => return Err(e.to_string()),
        };
        let status = resp.status();
        let headers = resp
            .headers_names()
            .into_iter()
            .filter_map(|n| resp.header(&n).map(|v| (n.to_ascii_lowercase(), v.to_owned())))
            .collect();
        let mut body = Vec::new();
        resp.into_reader().read_to_end(&mut body).map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, headers, body })
    }
}

/// Where an interrupted harvest can pick up again.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResumeToken {
    pub day: NaiveDate,
    pub page: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum HarvestError {
    #[error("API credentials rejected")]
    AuthFailure,
    #[error("rate limited beyond retry budget; resume at {resume:?}")]
    RateLimited { resume: ResumeToken },
    #[error("network failure ({message}); resume at {resume:?}")]
    Network { message: String, resume: ResumeToken },
    #[error("unexpected HTTP status {status} for {url}")]
    Status { status: u16, url: String },
    #[error("malformed API response: {0}")]
    Malformed(String),
    #[error("empty harvest window")]
    EmptyWindow,
    #[error(transparent)]
    Store(#[from] IngestError),
}

#[derive(Debug, Clone)]
pub struct HarvestConfig {
    pub api_base: String,
    pub raw_base: String,
    pub per_day_cap: usize,
    pub per_page: usize,
    pub max_retries: u32,
    pub base_backoff: Duration,
    pub parallelism: usize,
    /// Trees with more entries than this are skipped.
    pub max_tree_entries: usize,
}

impl Default for HarvestConfig {
    fn default() -> Self {
        HarvestConfig {
            api_base: "https://api.github.com".into(),
            raw_base: "https://raw.githubusercontent.com".into(),
            per_day_cap: DEFAULT_PER_DAY_CAP,
            per_page: 100,
            max_retries: 6,
            base_backoff: Duration::from_secs(2),
            parallelism: 4,
            max_tree_entries: 100_000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarvestReport {
    pub days: usize,
    pub records_seen: usize,
    pub records_added: usize,
    /// Days whose matches exceeded the cap, with the API's total count.
    pub capped_days: Vec<(NaiveDate, u64)>,
}

#[derive(Debug, Deserialize)]
struct SearchPage {
    total_count: u64,
    #[serde(default)]
    items: Vec<SearchItem>,
}

#[derive(Debug, Deserialize)]
struct SearchItem {
    id: u64,
    name: String,
    owner: Owner,
    created_at: DateTime<Utc>,
    pushed_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Deserialize)]
struct Owner {
    login: String,
}

#[derive(Debug, Deserialize)]
struct TreeListing {
    #[serde(default)]
    tree: Vec<TreeEntry>,
    #[serde(default)]
    truncated: bool,
}

#[derive(Debug, Deserialize)]
struct TreeEntry {
    path: String,
    #[serde(rename = "type")]
    kind: String,
}

enum Fetched {
    Ok(HttpResponse),
    NotFound,
    /// 409: the repository exists but has no commits.
    Conflict,
}

enum RequestFailure {
    Auth,
    RateLimited,
    Network(String),
    Status(u16),
}

pub type Sleeper = Box<dyn Fn(Duration) + Send + Sync>;

pub struct Harvester<T: Transport> {
    transport: T,
    config: HarvestConfig,
    token: Option<String>,
    sleeper: Sleeper,
}

impl<T: Transport> Harvester<T> {
    pub fn new(transport: T, config: HarvestConfig, token: Option<String>) -> Self {
        Harvester { transport, config, token, sleeper: Box::new(std::thread::sleep) }
    }

    /// Token from `CODELEX_API_TOKEN`, if set.
    pub fn from_env(transport: T, config: HarvestConfig) -> Self {
        let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
        Self::new(transport, config, token)
    }

    pub fn with_sleeper(mut self, sleeper: Sleeper) -> Self {
        self.sleeper = sleeper;
        self
    }

    fn request(&self, url: &str) -> Result<Fetched, RequestFailure> {
        let mut attempt = 0u32;
        loop {
            let outcome = self.transport.get(url, self.token.as_deref());
            let wait = match outcome {
                Ok(resp) => match resp.status {
                    200..=299 => {
                        self.respect_quota(&resp);
                        return Ok(Fetched::Ok(resp));
                    }
                    401 => return Err(RequestFailure::Auth),
                    404 | 410 | 451 => return Ok(Fetched::NotFound),
                    409 => return Ok(Fetched::Conflict),
                    403 | 429 => {
                        if attempt >= self.config.max_retries {
                            return Err(RequestFailure::RateLimited);
                        }
                        retry_after(&resp).unwrap_or_else(|| self.backoff(attempt))
                    }
                    s if s >= 500 => {
                        if attempt >= self.config.max_retries {
                            return Err(RequestFailure::Status(s));
                        }
                        self.backoff(attempt)
                    }
                    s => return Err(RequestFailure::Status(s)),
                },
                Err(message) => {
                    if attempt >= self.config.max_retries {
                        return Err(RequestFailure::Network(message));
                    }
                    self.backoff(attempt)
                }
            };
            (self.sleeper)(wait);
            attempt += 1;
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        self.config.base_backoff * 2u32.saturating_pow(attempt.min(16))
    }

    /// Pause when the quota is exhausted, until the advertised reset.
    fn respect_quota(&self, resp: &HttpResponse) {
        if resp.header("x-ratelimit-remaining") != Some("0") {
            return;
        }
        let now = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let wait = resp
            .header("x-ratelimit-reset")
            .and_then(|v| v.parse::<u64>().ok())
            .map(|reset| reset.saturating_sub(now).min(3600))
            .unwrap_or(60);
        (self.sleeper)(Duration::from_secs(wait));
    }

    fn search_url(&self, day: NaiveDate, page: u32) -> String {
        format!(
            "{}/search/repositories?q=language:R+created:{day}..{day}&per_page={}&page={page}",
            self.config.api_base, self.config.per_page
        )
    }

    /// Record every R repository created in `[from, to]`, at most
    /// `per_day_cap` per day. The manifest is saved after each day when a
    /// path is given, so an interrupted harvest keeps its progress.
    pub fn harvest_window(
        &self,
        from: NaiveDate,
        to: NaiveDate,
        epoch: StudyEpoch,
        manifest: &mut Manifest,
        manifest_path: Option<&std::path::Path>,
        resume: Option<ResumeToken>,
    ) -> Result<HarvestReport, HarvestError> {
        if to < from {
            return Err(HarvestError::EmptyWindow);
        }
        let mut report = HarvestReport::default();
        let mut day = resume.map(|r| r.day.max(from)).unwrap_or(from);
        let mut first_page = resume.map(|r| r.page.max(1)).unwrap_or(1);
        while day <= to {
            let mut page = first_page;
            let mut taken_today = (page as usize - 1) * self.config.per_page;
            loop {
                let url = self.search_url(day, page);
                let resume = ResumeToken { day, page };
                let resp = match self.request(&url) {
                    Ok(Fetched::Ok(r)) => r,
                    Ok(Fetched::NotFound) => return Err(HarvestError::Status { status: 404, url }),
                    Ok(Fetched::Conflict) => return Err(HarvestError::Status { status: 409, url }),
                    Err(failure) => {
                        if let Some(path) = manifest_path {
                            manifest.save(path)?;
                        }
                        return Err(match failure {
                            RequestFailure::Auth => HarvestError::AuthFailure,
                            RequestFailure::RateLimited => HarvestError::RateLimited { resume },
                            RequestFailure::Network(message) => HarvestError::Network { message, resume },
                            RequestFailure::Status(status) => HarvestError::Status { status, url },
                        });
                    }
                };
                let parsed: SearchPage =
                    serde_json::from_slice(&resp.body).map_err(|e| HarvestError::Malformed(e.to_string()))?;
                if page == 1 && parsed.total_count as usize > self.config.per_day_cap {
                    log::warn!(
                        "{day}: {} repositories match, keeping the first {}",
                        parsed.total_count,
                        self.config.per_day_cap
                    );
                    report.capped_days.push((day, parsed.total_count));
                }
                let n_items = parsed.items.len();
                for item in parsed.items {
                    if taken_today >= self.config.per_day_cap {
                        break;
                    }
                    taken_today += 1;
                    report.records_seen += 1;
                    let created = item.created_at.date_naive();
                    let pushed = item.pushed_at.map(|p| p.date_naive()).unwrap_or(created);
                    let record =
                        RepoRecord::new(item.id.to_string(), item.owner.login, item.name, created, pushed, epoch);
                    // Keep fetch results already recorded for a known repo.
                    if manifest.get(&record.repo_id).is_none() {
                        manifest.upsert(record);
                        report.records_added += 1;
                    }
                }
                let exhausted = n_items < self.config.per_page
                    || taken_today >= self.config.per_day_cap
                    || taken_today as u64 >= parsed.total_count;
                if exhausted {
                    break;
                }
                page += 1;
            }
            report.days += 1;
            if let Some(path) = manifest_path {
                manifest.save(path)?;
            }
            first_page = 1;
            day = day.succ_opt().expect("date in range");
        }
        Ok(report)
    }

    /// Download a repository's R scripts without touching the store.
    fn download(&self, repo: &RepoRecord) -> Result<Result<Vec<(String, Vec<u8>)>, FetchIssue>, HarvestError> {
        let resume = ResumeToken { day: repo.created_at, page: 1 };
        let map_failure = |f: RequestFailure, url: String| match f {
            RequestFailure::Auth => HarvestError::AuthFailure,
            RequestFailure::RateLimited => HarvestError::RateLimited { resume },
            RequestFailure::Network(message) => HarvestError::Network { message, resume },
            RequestFailure::Status(status) => HarvestError::Status { status, url },
        };
        let tree_url =
            format!("{}/repos/{}/{}/git/trees/HEAD?recursive=1", self.config.api_base, repo.owner, repo.name);
        let tree = match self.request(&tree_url).map_err(|f| map_failure(f, tree_url.clone()))? {
            Fetched::NotFound => return Ok(Err(FetchIssue::RepoGone)),
            Fetched::Conflict => return Ok(Ok(Vec::new())),
            Fetched::Ok(r) => r,
        };
        let listing: TreeListing =
            serde_json::from_slice(&tree.body).map_err(|e| HarvestError::Malformed(e.to_string()))?;
        if listing.truncated || listing.tree.len() > self.config.max_tree_entries {
            return Ok(Err(FetchIssue::TreeTooLarge));
        }
        let mut files = Vec::new();
        for entry in listing.tree.iter().filter(|e| e.kind == "blob" && is_r_script(std::path::Path::new(&e.path))) {
            let url =
                format!("{}/{}/{}/HEAD/{}", self.config.raw_base, repo.owner, repo.name, encode_path(&entry.path));
            match self.request(&url).map_err(|f| map_failure(f, url.clone()))? {
                Fetched::Ok(r) => files.push((entry.path.clone(), r.body)),
                Fetched::NotFound | Fetched::Conflict => {
                    log::warn!("{}: {} vanished during fetch", repo.repo_id, entry.path)
                }
            }
        }
        Ok(Ok(files))
    }

    /// Fetch and store one repository's scripts, updating its record.
    pub fn fetch_scripts(&self, repo: &mut RepoRecord, store: &mut BlobStore) -> Result<Vec<ScriptBlob>, HarvestError> {
        let downloaded = self.download(repo)?;
        store_download(repo, downloaded, store)
    }

    /// Fetch every listed repository with bounded parallelism. Store writes
    /// happen on the calling thread, in manifest order.
    pub fn fetch_all(&self, manifest: &mut Manifest, store: &mut BlobStore) -> Result<usize, HarvestError> {
        let pending: Vec<RepoRecord> = manifest
            .records()
            .filter(|r| r.script_count == 0 && r.fetch_issue.is_none() && r.excluded != Some(Exclusion::StaleUpdate))
            .cloned()
            .collect();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.parallelism.max(1))
            .build()
            .map_err(|e| HarvestError::Malformed(e.to_string()))?;
        let results: Vec<_> = pool.install(|| pending.par_iter().map(|r| self.download(r)).collect());
        let mut stored = 0;
        for (repo, result) in pending.into_iter().zip(results) {
            let record = manifest.get_mut(&repo.repo_id).expect("pending repo in manifest");
            stored += store_download(record, result?, store)?.len();
        }
        store.save_index()?;
        Ok(stored)
    }
}

fn store_download(
    repo: &mut RepoRecord,
    downloaded: Result<Vec<(String, Vec<u8>)>, FetchIssue>,
    store: &mut BlobStore,
) -> Result<Vec<ScriptBlob>, HarvestError> {
    match downloaded {
        Err(issue) => {
            repo.fetch_issue = Some(issue);
            Ok(Vec::new())
        }
        Ok(files) => {
            let mut blobs = Vec::with_capacity(files.len());
            for (path, bytes) in files {
                blobs.push(store.put(&repo.repo_id, &path, &bytes)?);
            }
            repo.script_count = blobs.len() as u32;
            if blobs.is_empty() && repo.excluded.is_none() {
                repo.excluded = Some(Exclusion::Empty);
            }
            Ok(blobs)
        }
    }
}

fn retry_after(resp: &HttpResponse) -> Option<Duration> {
    resp.header("retry-after").and_then(|v| v.trim().parse::<u64>().ok()).map(Duration::from_secs)
}

fn encode_path(path: &str) -> String {
    let mut out = String::with_capacity(path.len());
    for b in path.bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' | b'/' => out.push(b as char),
            _ => out.push_str(&format!("%{b:02X}")),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    /// Scripted transport: routes by URL prefix, pops queued responses.
    #[derive(Default)]
    struct FakeApi {
        routes: Mutex<Vec<(String, Vec<Result<HttpResponse, String>>)>>,
        log: Mutex<Vec<String>>,
    }

    impl FakeApi {
        fn on(self, prefix: &str, responses: Vec<Result<HttpResponse, String>>) -> Self {
            self.routes.lock().unwrap().push((prefix.to_owned(), responses));
            self
        }
    }

    impl Transport for FakeApi {
        fn get(&self, url: &str, _token: Option<&str>) -> Result<HttpResponse, String> {
            self.log.lock().unwrap().push(url.to_owned());
            let mut routes = self.routes.lock().unwrap();
            let (_, queue) = routes
                .iter_mut()
                .filter(|(p, _)| url.starts_with(p.as_str()))
                .max_by_key(|(p, _)| p.len())
                .unwrap_or_else(|| panic!("unrouted {url}"));
            if queue.len() > 1 {
                queue.remove(0)
            } else {
                queue[0].clone()
            }
        }
    }

    fn ok(body: String) -> Result<HttpResponse, String> {
        Ok(HttpResponse { status: 200, headers: BTreeMap::new(), body: body.into_bytes() })
    }

    fn status(code: u16) -> Result<HttpResponse, String> {
        Ok(HttpResponse { status: code, headers: BTreeMap::new(), body: b"{}".to_vec() })
    }

    fn page(total: u64, ids: std::ops::Range<u64>) -> Result<HttpResponse, String> {
        let items: Vec<String> = ids
            .map(|i| {
                format!(
                    r#"{{"id":{i},"name":"r{i}","owner":{{"login":"u{i}"}},"created_at":"2015-06-01T10:00:00Z","pushed_at":"2015-07-01T00:00:00Z"}}"#
                )
            })
            .collect();
        ok(format!(r#"{{"total_count":{total},"items":[{}]}}"#, items.join(",")))
    }

    fn harvester(api: FakeApi) -> Harvester<FakeApi> {
        let config =
            HarvestConfig { api_base: "http://api".into(), raw_base: "http://raw".into(), ..Default::default() };
        Harvester::new(api, config, Some("t".into())).with_sleeper(Box::new(|_| {}))
    }

    fn day() -> NaiveDate {
        NaiveDate::from_ymd_opt(2015, 6, 1).unwrap()
    }

    #[test]
    fn small_day_under_cap() {
        let api = FakeApi::default().on("http://api/search", vec![page(3, 0..3)]);
        let h = harvester(api);
        let mut m = Manifest::new();
        let report = h.harvest_window(day(), day(), StudyEpoch::default(), &mut m, None, None).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(report.records_added, 3);
        assert!(report.capped_days.is_empty());
        assert_eq!(m.get("1").unwrap().month_index, 17);
        assert_eq!(m.get("1").unwrap().owner, "u1");
    }

    #[test]
    fn large_day_truncated_at_cap() {
        let pages: Vec<_> = (0..15).map(|p| page(1500, p * 100..(p + 1) * 100)).collect();
        let api = FakeApi::default().on("http://api/search", pages);
        let h = harvester(api);
        let mut m = Manifest::new();
        let report = h.harvest_window(day(), day(), StudyEpoch::default(), &mut m, None, None).unwrap();
        assert_eq!(m.len(), 1000);
        assert_eq!(report.capped_days, vec![(day(), 1500)]);
        assert_eq!(h.transport.log.lock().unwrap().len(), 10);
    }

    #[test]
    fn rerun_adds_no_duplicates() {
        let api = FakeApi::default().on("http://api/search", vec![page(3, 0..3)]);
        let h = harvester(api);
        let mut m = Manifest::new();
        h.harvest_window(day(), day(), StudyEpoch::default(), &mut m, None, None).unwrap();
        let again = h.harvest_window(day(), day(), StudyEpoch::default(), &mut m, None, None).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(again.records_added, 0);
    }

    #[test]
    fn rate_limit_backs_off_then_succeeds() {
        let slept = std::sync::Arc::new(Mutex::new(Vec::new()));
        let sink = slept.clone();
        let api = FakeApi::default().on("http://api/search", vec![status(403), status(429), page(1, 0..1)]);
        let h = harvester(api).with_sleeper(Box::new(move |d| sink.lock().unwrap().push(d)));
        let mut m = Manifest::new();
        h.harvest_window(day(), day(), StudyEpoch::default(), &mut m, None, None).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(*slept.lock().unwrap(), vec![Duration::from_secs(2), Duration::from_secs(4)]);
    }

    #[test]
    fn rate_limit_budget_exhausted_gives_resume_token() {
        let api = FakeApi::default().on("http://api/search", vec![status(429)]);
        let h = harvester(api);
        let err = h.harvest_window(day(), day(), StudyEpoch::default(), &mut Manifest::new(), None, None).unwrap_err();
        match err {
            HarvestError::RateLimited { resume } => assert_eq!(resume, ResumeToken { day: day(), page: 1 }),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn auth_and_network_failures() {
        let h = harvester(FakeApi::default().on("http://api/search", vec![status(401)]));
        let err = h.harvest_window(day(), day(), StudyEpoch::default(), &mut Manifest::new(), None, None).unwrap_err();
        assert!(matches!(err, HarvestError::AuthFailure));

        let h = harvester(FakeApi::default().on("http://api/search", vec![Err("connection reset".into())]));
        let err = h.harvest_window(day(), day(), StudyEpoch::default(), &mut Manifest::new(), None, None).unwrap_err();
        assert!(matches!(err, HarvestError::Network { resume, .. } if resume.day == day()));
    }

    #[test]
    fn resume_starts_from_token_page() {
        let api = FakeApi::default().on("http://api/search", vec![page(150, 100..150)]);
        let h = harvester(api);
        let mut m = Manifest::new();
        let token = ResumeToken { day: day(), page: 2 };
        h.harvest_window(day(), day(), StudyEpoch::default(), &mut m, None, Some(token)).unwrap();
        assert_eq!(m.len(), 50);
        assert!(h.transport.log.lock().unwrap()[0].ends_with("page=2"));
    }

    #[test]
    fn empty_window_rejected() {
        let h = harvester(FakeApi::default());
        let before = day().pred_opt().unwrap();
        assert!(matches!(
            h.harvest_window(day(), before, StudyEpoch::default(), &mut Manifest::new(), None, None),
            Err(HarvestError::EmptyWindow)
        ));
    }

    fn tree(paths: &[&str], truncated: bool) -> Result<HttpResponse, String> {
        let entries: Vec<String> = paths.iter().map(|p| format!(r#"{{"path":"{p}","type":"blob"}}"#)).collect();
        ok(format!(r#"{{"tree":[{}],"truncated":{truncated}}}"#, entries.join(",")))
    }

    fn record(id: &str) -> RepoRecord {
        RepoRecord::new(id, "o", id, day(), day(), StudyEpoch::default())
    }

    #[test]
    fn fetch_filters_extensions_and_dedups_content() {
        let api = FakeApi::default()
            .on("http://api/repos/o/a/", vec![tree(&["a.R", "b.r", "c.py"], false)])
            .on("http://api/repos/o/b/", vec![tree(&["x.R"], false)])
            .on("http://raw/", vec![ok("f(1)\n".into())]);
        let h = harvester(api);
        let dir = tempfile::tempdir().unwrap();
        let mut store = BlobStore::open(dir.path()).unwrap();
        let mut a = record("a");
        let blobs = h.fetch_scripts(&mut a, &mut store).unwrap();
        assert_eq!(blobs.len(), 2);
        assert_eq!(a.script_count, 2);
        let mut b = record("b");
        h.fetch_scripts(&mut b, &mut store).unwrap();
        assert_eq!(store.blobs().count(), 3);
        assert_eq!(store.object_count().unwrap(), 1);
    }

    #[test]
    fn gone_and_oversized_repos_are_flagged_not_fatal() {
        let api = FakeApi::default()
            .on("http://api/repos/o/gone/", vec![status(404)])
            .on("http://api/repos/o/big/", vec![tree(&["a.R"], true)]);
        let h = harvester(api);
        let dir = tempfile::tempdir().unwrap();
        let mut store = BlobStore::open(dir.path()).unwrap();
        let mut m = Manifest::new();
        m.upsert(record("gone"));
        m.upsert(record("big"));
        h.fetch_all(&mut m, &mut store).unwrap();
        assert_eq!(m.get("gone").unwrap().fetch_issue, Some(FetchIssue::RepoGone));
        assert_eq!(m.get("big").unwrap().fetch_issue, Some(FetchIssue::TreeTooLarge));
        assert_eq!(m.len(), 2);
    }

    #[test]
    fn path_encoding() {
        assert_eq!(encode_path("R/my file.R"), "R/my%20file.R");
    }
}
