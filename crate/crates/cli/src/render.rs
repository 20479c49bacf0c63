//! Self-contained SVG figures built from the pipeline's CSV tables.
//!
//! Output depends only on the input values: coordinates are printed with two
//! decimals, elements are emitted in data order, and there is no randomness.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use codelex_core::ordination::convex_hull;
use codelex_core::table;
use codelex_core::{Category, StudyEpoch};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{path}: malformed table: {message}")]
    Table { path: PathBuf, message: String },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: line {line}: column `{column}`: cannot parse {value:?}")]
    BadValue { path: PathBuf, line: usize, column: String, value: String },
    #[error("{kind:?} needs {need} input table(s), got {got}")]
    Inputs { kind: FigureKind, need: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FigureKind {
    TrendCurve,
    CategoryTrend,
    NmdsHulls,
    WordShift,
    Mosaic,
    SynonymPanel,
    AreaShare,
    Qq,
}

/// What to draw, from which tables.
///
/// Inputs by kind: `trend_curve` one curve table; `category_trend` one curve
/// table per category, labelled by `labels`; `nmds_hulls` a coordinate table;
/// `word_shift` and `mosaic` a trend table; `synonym_panel` the group curve
/// followed by member curves; `area_share` an area-share table; `qq` a QQ table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureSpec {
    pub kind: FigureKind,
    pub inputs: Vec<PathBuf>,
    pub output: PathBuf,
    pub title: String,
    #[serde(default)]
    pub labels: Vec<String>,
    #[serde(default)]
    pub epoch: StudyEpoch,
    #[serde(default)]
    pub stress: Option<f64>,
}

impl FigureSpec {
    pub fn new(kind: FigureKind, inputs: Vec<PathBuf>, output: PathBuf, title: impl Into<String>) -> Self {
        FigureSpec {
            kind,
            inputs,
            output,
            title: title.into(),
            labels: Vec::new(),
            epoch: StudyEpoch::default(),
            stress: None,
        }
    }
}

/// A CSV table held as strings, with named-column accessors.
#[derive(Debug, Clone)]
pub struct Table {
    path: PathBuf,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, RenderError> {
        let bytes = fs::read(path).map_err(|source| RenderError::Read { path: path.to_owned(), source })?;
        Self::parse(path, &bytes)
    }

    pub fn parse(path: &Path, bytes: &[u8]) -> Result<Self, RenderError> {
        let err = |e: csv::Error| RenderError::Table { path: path.to_owned(), message: e.to_string() };
        let mut r = table::reader(bytes);
        let header = r.headers().map_err(err)?.iter().map(str::to_owned).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            rows.push(rec.map_err(err)?.iter().map(str::to_owned).collect());
        }
        Ok(Table { path: path.to_owned(), header, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn index(&self, column: &str) -> Result<usize, RenderError> {
        self.header
            .iter()
            .position(|h| h == column)
            .ok_or_else(|| RenderError::MissingColumn { path: self.path.clone(), column: column.to_owned() })
    }

    pub fn strings(&self, column: &str) -> Result<Vec<String>, RenderError> {
        let i = self.index(column)?;
        Ok(self.rows.iter().map(|r| r[i].clone()).collect())
    }

    pub fn numbers(&self, column: &str) -> Result<Vec<f64>, RenderError> {
        let i = self.index(column)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(line, r)| {
                table::parse_num(&r[i]).ok_or_else(|| RenderError::BadValue {
                    path: self.path.clone(),
                    line: line + 2,
                    column: column.to_owned(),
                    value: r[i].clone(),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveData {
    pub label: String,
    pub months: Vec<f64>,
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl CurveData {
    pub fn from_table(label: &str, t: &Table) -> Result<Self, RenderError> {
        Ok(CurveData {
            label: label.to_owned(),
            months: t.numbers("month_index")?,
            mean: t.numbers("mean")?,
            lo: t.numbers("lo")?,
            hi: t.numbers("hi")?,
        })
    }
}

pub fn category_color(c: Category) -> &'static str {
    match c {
        Category::Base => "#1b9e77",
        Category::Tidyverse => "#d95f02",
        Category::Other => "#7570b3",
        Category::Unattributed => "#999999",
    }
}

const SERIES: [&str; 8] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"];

fn series_color(i: usize) -> &'static str {
    SERIES[i % SERIES.len()]
}

fn label_color(label: &str, i: usize) -> &'static str {
    Category::parse(label).map(category_color).unwrap_or_else(|| series_color(i))
}

/// Fixed two-decimal coordinates; negative zero is printed as 0.00.
fn f(x: f64) -> String {
    let s = format!("{x:.2}");
    if s == "-0.00" {
        "0.00".to_owned()
    } else {
        s
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;").replace('\'', "&apos;")
}

struct Svg {
    body: String,
    width: f64,
    height: f64,
}

impl Svg {
    fn new(width: f64, height: f64, title: &str) -> Self {
        let mut s = Svg { body: String::new(), width, height };
        s.raw(&format!(r##"<rect x="0" y="0" width="{}" height="{}" fill="#ffffff"/>"##, f(width), f(height)));
        s.text(width / 2.0, 22.0, title, "middle", 15.0, "title");
        s
    }

    fn raw(&mut self, s: &str) {
        self.body.push_str(s);
        self.body.push('\n');
    }

    fn text(&mut self, x: f64, y: f64, s: &str, anchor: &str, size: f64, class: &str) {
        self.raw(&format!(
            r#"<text class="{class}" x="{}" y="{}" text-anchor="{anchor}" font-family="sans-serif" font-size="{}">{}</text>"#,
            f(x),
            f(y),
            f(size),
            esc(s)
        ));
    }

    fn line(&mut self, a: (f64, f64), b: (f64, f64), stroke: &str, extra: &str) {
        self.raw(&format!(
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{stroke}"{extra}/>"#,
            f(a.0),
            f(a.1),
            f(b.0),
            f(b.1)
        ));
    }

    fn points(pts: &[(f64, f64)]) -> String {
        pts.iter().map(|(x, y)| format!("{},{}", f(*x), f(*y))).collect::<Vec<_>>().join(" ")
    }

    fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str, width: f64, class: &str, extra: &str) {
        if pts.is_empty() {
            return;
        }
        self.raw(&format!(
            r#"<polyline class="{class}" points="{}" fill="none" stroke="{stroke}" stroke-width="{}"{extra}/>"#,
            Self::points(pts),
            f(width)
        ));
    }

    fn polygon(&mut self, pts: &[(f64, f64)], fill: &str, opacity: f64, class: &str, extra: &str) {
        if pts.is_empty() {
            return;
        }
        self.raw(&format!(
            r#"<polygon class="{class}" points="{}" fill="{fill}" fill-opacity="{}"{extra}/>"#,
            Self::points(pts),
            f(opacity)
        ));
    }

    fn finish(self) -> String {
        format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n{}</svg>\n",
            self.body,
            w = f(self.width),
            h = f(self.height)
        )
    }
}

/// Finite extent with 5% padding; a single value gets a unit window.
fn extent<'a>(values: impl IntoIterator<Item = &'a f64>) -> (f64, f64) {
    let (lo, hi) = values
        .into_iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let span = hi - lo;
    if span <= 1e-12 * lo.abs().max(1.0) {
        let pad = 0.5 * lo.abs().max(1.0) * 0.1;
        return (lo - pad, hi + pad);
    }
    (lo - 0.05 * span, hi + 0.05 * span)
}

fn nice_step(span: f64, target: f64) -> f64 {
    let raw = span / target;
    let mag = 10f64.powf(raw.log10().floor());
    let m = raw / mag;
    let nice = if m < 1.5 {
        1.0
    } else if m < 3.0 {
        2.0
    } else if m < 7.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn ticks(lo: f64, hi: f64) -> (Vec<f64>, usize) {
    let step = nice_step(hi - lo, 5.0);
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let mut v = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while v <= hi + 1e-9 * step && out.len() < 50 {
        out.push(v);
        v += step;
    }
    (out, decimals)
}

fn tick_label(v: f64, decimals: usize) -> String {
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_owned()
    } else {
        s
    }
}

#[derive(Debug, Clone, Copy)]
struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xlim: (f64, f64),
    ylim: (f64, f64),
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        self.x0 + (v - self.xlim.0) / (self.xlim.1 - self.xlim.0) * self.w
    }

    fn y(&self, v: f64) -> f64 {
        self.y0 + self.h - (v - self.ylim.0) / (self.ylim.1 - self.ylim.0) * self.h
    }

    fn p(&self, x: f64, y: f64) -> (f64, f64) {
        (self.x(x), self.y(y))
    }

    fn axes(&self, svg: &mut Svg, xlabel: &str, ylabel: &str) {
        svg.raw(&format!(
            r##"<rect class="frame" x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#333333"/>"##,
            f(self.x0),
            f(self.y0),
            f(self.w),
            f(self.h)
        ));
        let (xt, xd) = ticks(self.xlim.0, self.xlim.1);
        for v in xt {
            let x = self.x(v);
            svg.line((x, self.y0 + self.h), (x, self.y0 + self.h + 4.0), "#333333", "");
            svg.text(x, self.y0 + self.h + 16.0, &tick_label(v, xd), "middle", 10.0, "tick");
        }
        let (yt, yd) = ticks(self.ylim.0, self.ylim.1);
        for v in yt {
            let y = self.y(v);
            svg.line((self.x0 - 4.0, y), (self.x0, y), "#333333", "");
            svg.text(self.x0 - 6.0, y + 3.5, &tick_label(v, yd), "end", 10.0, "tick");
        }
        svg.text(self.x0 + self.w / 2.0, self.y0 + self.h + 34.0, xlabel, "middle", 12.0, "axis-label");
        let (lx, ly) = (self.x0 - 48.0, self.y0 + self.h / 2.0);
        svg.raw(&format!(
            r#"<text class="axis-label" x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12.00" transform="rotate(-90 {} {})">{}</text>"#,
            f(lx),
            f(ly),
            f(lx),
            f(ly),
            esc(ylabel)
        ));
    }
}

const W: f64 = 640.0;
const H: f64 = 420.0;

fn main_frame(xlim: (f64, f64), ylim: (f64, f64)) -> Frame {
    Frame { x0: 70.0, y0: 40.0, w: W - 70.0 - 130.0, h: H - 40.0 - 56.0, xlim, ylim }
}

fn legend(svg: &mut Svg, entries: &[(String, &str)]) {
    let x = W - 120.0;
    for (i, (label, color)) in entries.iter().enumerate() {
        let y = 52.0 + 18.0 * i as f64;
        svg.raw(&format!(
            r#"<rect class="legend-key" x="{}" y="{}" width="12.00" height="12.00" fill="{color}"/>"#,
            f(x),
            f(y - 10.0)
        ));
        svg.text(x + 18.0, y, label, "start", 11.0, "legend");
    }
}

fn finite_points(xs: &[f64], ys: &[f64]) -> Vec<(f64, f64)> {
    xs.iter().zip(ys).filter(|(x, y)| x.is_finite() && y.is_finite()).map(|(x, y)| (*x, *y)).collect()
}

fn draw_curve(svg: &mut Svg, fr: &Frame, c: &CurveData, color: &str, width: f64) {
    let upper = finite_points(&c.months, &c.hi);
    let lower = finite_points(&c.months, &c.lo);
    let mut ribbon: Vec<(f64, f64)> = upper.iter().map(|&(x, y)| fr.p(x, y)).collect();
    ribbon.extend(lower.iter().rev().map(|&(x, y)| fr.p(x, y)));
    let tag = format!(r#" data-label="{}""#, esc(&c.label));
    svg.polygon(&ribbon, color, 0.2, "ribbon", &tag);
    let line: Vec<(f64, f64)> = finite_points(&c.months, &c.mean).into_iter().map(|(x, y)| fr.p(x, y)).collect();
    svg.polyline(&line, color, width, "mean", &tag);
}

fn curve_limits(curves: &[&CurveData]) -> ((f64, f64), (f64, f64)) {
    let xlim = extent(curves.iter().flat_map(|c| c.months.iter()));
    let ylim = extent(curves.iter().flat_map(|c| c.lo.iter().chain(&c.hi).chain(&c.mean)));
    (xlim, ylim)
}

/// Dashed lines at fixed proportional changes from the first fitted value.
fn proportional_gridlines(svg: &mut Svg, fr: &Frame, base: f64) {
    if !(base.is_finite() && base > 0.0) {
        return;
    }
    let (lo, hi) = (fr.ylim.0 / base, fr.ylim.1 / base);
    let step = [0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 5.0, 10.0].into_iter().find(|s| (hi - lo) / s <= 8.0).unwrap_or(10.0);
    let mut k = ((lo - 1.0) / step).ceil() as i64;
    while 1.0 + k as f64 * step <= hi {
        let r = 1.0 + k as f64 * step;
        if r > 0.0 {
            let y = fr.y(base * r);
            svg.line((fr.x0, y), (fr.x0 + fr.w, y), "#999999", r#" class="gridline" stroke-dasharray="4,3""#);
            let pct = ((r - 1.0) * 100.0).round() as i64;
            let label = if pct > 0 { format!("+{pct}%") } else { format!("{pct}%") };
            svg.text(fr.x0 + fr.w + 4.0, y + 3.5, &label, "start", 9.0, "gridlabel");
        }
        k += 1;
    }
}

pub fn trend_curve_svg(title: &str, curve: &CurveData, ylabel: &str) -> String {
    let (xlim, ylim) = curve_limits(&[curve]);
    let fr = main_frame(xlim, ylim);
    let mut svg = Svg::new(W, H, title);
    proportional_gridlines(&mut svg, &fr, curve.mean.first().copied().unwrap_or(f64::NAN));
    draw_curve(&mut svg, &fr, curve, "#1f4e79", 2.0);
    fr.axes(&mut svg, "month", ylabel);
    svg.finish()
}

pub fn category_trend_svg(title: &str, curves: &[CurveData], ylabel: &str) -> String {
    let refs: Vec<&CurveData> = curves.iter().collect();
    let (xlim, ylim) = curve_limits(&refs);
    let fr = main_frame(xlim, ylim);
    let mut svg = Svg::new(W, H, title);
    let mut keys = Vec::new();
    for (i, c) in curves.iter().enumerate() {
        let color = label_color(&c.label, i);
        draw_curve(&mut svg, &fr, c, color, 2.0);
        keys.push((c.label.clone(), color));
    }
    fr.axes(&mut svg, "month", ylabel);
    legend(&mut svg, &keys);
    svg.finish()
}

/// Month points coloured by year, one convex hull per calendar year.
pub fn nmds_hulls_svg(
    title: &str,
    months: &[i32],
    coords: &[[f64; 2]],
    epoch: &StudyEpoch,
    stress: Option<f64>,
) -> String {
    let xlim = extent(coords.iter().map(|c| &c[0]));
    let ylim = extent(coords.iter().map(|c| &c[1]));
    let fr = main_frame(xlim, ylim);
    let mut svg = Svg::new(W, H, title);
    let mut by_year: BTreeMap<i32, Vec<[f64; 2]>> = BTreeMap::new();
    for (m, c) in months.iter().zip(coords) {
        by_year.entry(epoch.year_of(*m)).or_default().push(*c);
    }
    let mut keys = Vec::new();
    for (i, (year, pts)) in by_year.iter().enumerate() {
        let color = series_color(i);
        let hull: Vec<(f64, f64)> = convex_hull(pts).iter().map(|v| fr.p(v[0], v[1])).collect();
        svg.polygon(&hull, color, 0.15, "hull", &format!(r#" data-year="{year}" stroke="{color}""#));
        keys.push((year.to_string(), color));
    }
    for (m, c) in months.iter().zip(coords) {
        let i = by_year.keys().position(|y| *y == epoch.year_of(*m)).unwrap_or(0);
        let (x, y) = fr.p(c[0], c[1]);
        svg.raw(&format!(
            r#"<circle class="month" data-month="{m}" cx="{}" cy="{}" r="3.00" fill="{}"/>"#,
            f(x),
            f(y),
            series_color(i)
        ));
    }
    fr.axes(&mut svg, "NMDS1", "NMDS2");
    if let Some(s) = stress {
        svg.text(fr.x0 + fr.w - 6.0, fr.y0 + 16.0, &format!("stress = {s:.3}"), "end", 11.0, "stress");
    }
    legend(&mut svg, &keys);
    svg.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordShiftPoint {
    pub entity: String,
    pub category: Category,
    pub slope: f64,
    pub probability: f64,
}

/// A kernel density estimate scaled to integrate to `share`.
#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    pub category: Category,
    pub share: f64,
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

/// Silverman's rule of thumb: 0.9 · min(sd, IQR / 1.34) · n^(−1/5).
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = (n - 1.0) * p;
        let (i, frac) = (h.floor() as usize, h - h.floor());
        s[i] + frac * (s[(i + 1).min(s.len() - 1)] - s[i])
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// Gaussian KDE per category over a grid reaching five bandwidths past the
/// pooled data range; each curve is weighted by its category's share of
/// all points.
pub fn marginal_densities(groups: &[(Category, Vec<f64>)]) -> Vec<Density> {
    let total: usize = groups.iter().map(|(_, v)| v.len()).sum();
    let pooled: Vec<f64> = groups.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    let (lo, hi) = pooled.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let mut out = Vec::new();
    for (cat, values) in groups {
        if values.is_empty() {
            continue;
        }
        let mut h = silverman_bandwidth(values);
        if !(h > 0.0) {
            h = 1e-3 * values[0].abs().max(1.0);
        }
        let share = values.len() as f64 / total as f64;
        let (a, b) = (lo - 5.0 * h, hi + 5.0 * h);
        let n_grid = (((b - a) / (h / 4.0)).ceil() as usize).clamp(512, 20_000);
        let grid: Vec<f64> = (0..n_grid).map(|i| a + (b - a) * i as f64 / (n_grid - 1) as f64).collect();
        let norm = share / (values.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
        let density = grid
            .iter()
            .map(|&x| norm * values.iter().map(|v| (-0.5 * ((x - v) / h).powi(2)).exp()).sum::<f64>())
            .collect();
        out.push(Density { category: *cat, share, bandwidth: h, grid, density });
    }
    out
}

fn by_category(points: &[WordShiftPoint], value: impl Fn(&WordShiftPoint) -> f64) -> Vec<(Category, Vec<f64>)> {
    let mut m: BTreeMap<Category, Vec<f64>> = BTreeMap::new();
    for p in points {
        m.entry(p.category).or_default().push(value(p));
    }
    m.into_iter().collect()
}

/// Slope against final-month probability, with marginal densities of each
/// axis per category in the top and right strips.
pub fn word_shift_svg(title: &str, points: &[WordShiftPoint]) -> String {
    let owned: Vec<WordShiftPoint> =
        points.iter().filter(|p| p.slope.is_finite() && p.probability.is_finite()).cloned().collect();
    let (width, height) = (720.0, 540.0);
    let xlim = extent(owned.iter().map(|p| &p.slope));
    let ylim = extent(owned.iter().map(|p| &p.probability));
    let fr = Frame { x0: 70.0, y0: 130.0, w: 480.0, h: 350.0, xlim, ylim };
    let mut svg = Svg::new(width, height, title);
    svg.line((fr.x(0.0), fr.y0), (fr.x(0.0), fr.y0 + fr.h), "#999999", r#" class="zero" stroke-dasharray="4,3""#);

    let top = Frame { x0: fr.x0, y0: 40.0, w: fr.w, h: 80.0, xlim, ylim: (0.0, 1.0) };
    let right = Frame { x0: fr.x0 + fr.w + 10.0, y0: fr.y0, w: 80.0, h: fr.h, xlim: (0.0, 1.0), ylim };
    let dx = marginal_densities(&by_category(&owned, |p| p.slope));
    let dy = marginal_densities(&by_category(&owned, |p| p.probability));
    let peak_x = dx.iter().flat_map(|d| d.density.iter()).fold(0.0f64, |m, v| m.max(*v)).max(f64::MIN_POSITIVE);
    let peak_y = dy.iter().flat_map(|d| d.density.iter()).fold(0.0f64, |m, v| m.max(*v)).max(f64::MIN_POSITIVE);
    for d in &dx {
        let line: Vec<(f64, f64)> = d
            .grid
            .iter()
            .zip(&d.density)
            .filter(|(g, _)| **g >= xlim.0 && **g <= xlim.1)
            .map(|(g, v)| (top.x(*g), top.y(v / peak_x)))
            .collect();
        let tag = format!(r#" data-category="{}""#, d.category.as_str());
        svg.polyline(&line, category_color(d.category), 1.5, "density-x", &tag);
    }
    for d in &dy {
        let line: Vec<(f64, f64)> = d
            .grid
            .iter()
            .zip(&d.density)
            .filter(|(g, _)| **g >= ylim.0 && **g <= ylim.1)
            .map(|(g, v)| (right.x(v / peak_y), right.y(*g)))
            .collect();
        let tag = format!(r#" data-category="{}""#, d.category.as_str());
        svg.polyline(&line, category_color(d.category), 1.5, "density-y", &tag);
    }
    for p in &owned {
        let (x, y) = fr.p(p.slope, p.probability);
        svg.raw(&format!(
            r#"<circle class="function" data-entity="{}" cx="{}" cy="{}" r="2.50" fill="{}" fill-opacity="0.70"/>"#,
            esc(&p.entity),
            f(x),
            f(y),
            category_color(p.category)
        ));
    }
    fr.axes(&mut svg, "slope (logit per month)", "final-month occurrence probability");
    let keys: Vec<(String, &str)> = dx
        .iter()
        .map(|d| (format!("{} ({:.0}%)", d.category.as_str(), 100.0 * d.share), category_color(d.category)))
        .collect();
    for (i, (label, color)) in keys.iter().enumerate() {
        let y = 60.0 + 18.0 * i as f64;
        svg.raw(&format!(
            r#"<rect class="legend-key" x="570.00" y="{}" width="12.00" height="12.00" fill="{color}"/>"#,
            f(y - 10.0)
        ));
        svg.text(588.0, y, label, "start", 11.0, "legend");
    }
    svg.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MosaicRow {
    pub category: Category,
    pub significance: String,
    pub magnitude: String,
}

const MOSAIC_CELLS: [(&str, &str, &str); 9] = [
    ("sig_up", "meaningful_up", "#b2182b"),
    ("sig_up", "stable", "#ef8a62"),
    ("none", "meaningful_up", "#fddbc7"),
    ("none", "stable", "#f7f7f7"),
    ("sig_down", "stable", "#67a9cf"),
    ("none", "meaningful_down", "#d1e5f0"),
    ("sig_down", "meaningful_down", "#2166ac"),
    ("sig_up", "meaningful_down", "#999999"),
    ("sig_down", "meaningful_up", "#999999"),
];

/// Columns per category with width proportional to its function count,
/// stacked boxes for each significance × magnitude combination.
pub fn mosaic_svg(title: &str, rows: &[MosaicRow]) -> String {
    let mut svg = Svg::new(W, H, title);
    let mut counts: BTreeMap<Category, BTreeMap<(&str, &str), usize>> = BTreeMap::new();
    for r in rows {
        let cell = MOSAIC_CELLS.iter().find(|(s, m, _)| *s == r.significance && *m == r.magnitude);
        if let Some((s, m, _)) = cell {
            *counts.entry(r.category).or_default().entry((s, m)).or_insert(0) += 1;
        }
    }
    let total: usize = counts.values().flat_map(|m| m.values()).sum();
    let (x0, y0, w, h, gap) = (70.0, 40.0, W - 70.0 - 170.0, H - 40.0 - 56.0, 6.0);
    let usable = w - gap * counts.len().saturating_sub(1) as f64;
    let mut x = x0;
    for (cat, cells) in &counts {
        let n: usize = cells.values().sum();
        let cw = usable * n as f64 / total as f64;
        let mut y = y0;
        for (s, m, color) in MOSAIC_CELLS {
            let k = cells.get(&(s, m)).copied().unwrap_or(0);
            if k == 0 {
                continue;
            }
            let ch = h * k as f64 / n as f64;
            svg.raw(&format!(
                r##"<rect class="cell" data-category="{}" data-significance="{s}" data-magnitude="{m}" data-count="{k}" x="{}" y="{}" width="{}" height="{}" fill="{color}" stroke="#333333"/>"##,
                cat.as_str(),
                f(x),
                f(y),
                f(cw),
                f(ch)
            ));
            if ch >= 12.0 && cw >= 18.0 {
                svg.text(x + cw / 2.0, y + ch / 2.0 + 4.0, &k.to_string(), "middle", 10.0, "count");
            }
            y += ch;
        }
        svg.text(x + cw / 2.0, y0 + h + 18.0, &format!("{} (n = {n})", cat.as_str()), "middle", 11.0, "category");
        x += cw + gap;
    }
    for (i, (s, m, color)) in MOSAIC_CELLS[..7].iter().enumerate() {
        let y = 52.0 + 18.0 * i as f64;
        svg.raw(&format!(r##"<rect class="legend-key" x="{}" y="{}" width="12.00" height="12.00" fill="{color}" stroke="#333333"/>"##, f(W - 160.0), f(y - 10.0)));
        svg.text(W - 142.0, y, &format!("{s} / {m}"), "start", 10.0, "legend");
    }
    svg.finish()
}

pub fn synonym_panel_svg(title: &str, group: &CurveData, members: &[CurveData]) -> String {
    let refs: Vec<&CurveData> = std::iter::once(group).chain(members).collect();
    let xlim = extent(refs.iter().flat_map(|c| c.months.iter()));
    let ylim = extent(refs.iter().flat_map(|c| c.mean.iter()).chain(group.lo.iter()).chain(group.hi.iter()));
    let fr = main_frame(xlim, ylim);
    let mut svg = Svg::new(W, H, title);
    let mut keys = vec![(group.label.clone(), "#000000")];
    draw_curve(&mut svg, &fr, group, "#000000", 2.5);
    for (i, m) in members.iter().enumerate() {
        let color = series_color(i);
        let line: Vec<(f64, f64)> = finite_points(&m.months, &m.mean).into_iter().map(|(x, y)| fr.p(x, y)).collect();
        svg.polyline(&line, color, 1.2, "member", &format!(r#" data-label="{}""#, esc(&m.label)));
        keys.push((m.label.clone(), color));
    }
    fr.axes(&mut svg, "month", "occurrence probability");
    legend(&mut svg, &keys);
    svg.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShareRow {
    pub group: String,
    pub month_index: i32,
    pub category: Category,
    pub share: f64,
}

/// Stacked category shares over months, one panel per group.
pub fn area_share_svg(title: &str, rows: &[ShareRow]) -> String {
    let mut groups: BTreeMap<&str, BTreeMap<i32, BTreeMap<Category, f64>>> = BTreeMap::new();
    for r in rows {
        *groups.entry(&r.group).or_default().entry(r.month_index).or_default().entry(r.category).or_insert(0.0) +=
            r.share;
    }
    let panel_h = 150.0;
    let height = 50.0 + panel_h * groups.len().max(1) as f64 + 30.0;
    let mut svg = Svg::new(W, height, title);
    let cats: Vec<Category> = Category::ATTRIBUTED.to_vec();
    for (gi, (name, months)) in groups.iter().enumerate() {
        let xs: Vec<f64> = months.keys().map(|&m| m as f64).collect();
        let xlim = extent(xs.iter());
        let fr = Frame {
            x0: 70.0,
            y0: 50.0 + panel_h * gi as f64,
            w: W - 70.0 - 130.0,
            h: panel_h - 40.0,
            xlim,
            ylim: (0.0, 1.0),
        };
        let mut below = vec![0.0; xs.len()];
        for cat in &cats {
            let above: Vec<f64> =
                months.values().zip(&below).map(|(c, b)| b + c.get(cat).copied().unwrap_or(0.0)).collect();
            let mut poly: Vec<(f64, f64)> = xs.iter().zip(&above).map(|(x, y)| fr.p(*x, *y)).collect();
            poly.extend(xs.iter().zip(&below).rev().map(|(x, y)| fr.p(*x, *y)));
            svg.polygon(
                &poly,
                category_color(*cat),
                0.85,
                "area",
                &format!(r#" data-group="{}" data-category="{}""#, esc(name), cat.as_str()),
            );
            below = above;
        }
        fr.axes(&mut svg, "", "share");
        svg.text(fr.x0 + 4.0, fr.y0 - 4.0, name, "start", 12.0, "panel");
    }
    let keys: Vec<(String, &str)> = cats.iter().map(|c| (c.as_str().to_owned(), category_color(*c))).collect();
    legend(&mut svg, &keys);
    svg.finish()
}

pub fn qq_svg(title: &str, theoretical: &[f64], sample: &[f64]) -> String {
    let pts = finite_points(theoretical, sample);
    let lim = extent(pts.iter().flat_map(|(a, b)| [a, b]));
    let fr = main_frame(lim, lim);
    let mut svg = Svg::new(W, H, title);
    svg.line(fr.p(lim.0, lim.0), fr.p(lim.1, lim.1), "#b2182b", r#" class="identity" stroke-dasharray="4,3""#);
    for (a, b) in &pts {
        let (x, y) = fr.p(*a, *b);
        svg.raw(&format!(
            r##"<circle class="quantile" cx="{}" cy="{}" r="2.00" fill="#1f4e79" fill-opacity="0.60"/>"##,
            f(x),
            f(y)
        ));
    }
    fr.axes(&mut svg, "theoretical normal quantile", "standardized ln abundance");
    svg.finish()
}

fn need(spec: &FigureSpec, n: usize) -> Result<(), RenderError> {
    if spec.inputs.len() < n {
        return Err(RenderError::Inputs { kind: spec.kind, need: n, got: spec.inputs.len() });
    }
    Ok(())
}

fn category_column(t: &Table) -> Result<Vec<Category>, RenderError> {
    let path = t.path.clone();
    t.strings("category")?
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            Category::parse(&s).ok_or_else(|| RenderError::BadValue {
                path: path.clone(),
                line: i + 2,
                column: "category".into(),
                value: s,
            })
        })
        .collect()
}

fn label_for(spec: &FigureSpec, i: usize) -> String {
    spec.labels
        .get(i)
        .cloned()
        .unwrap_or_else(|| spec.inputs[i].file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
}

/// Load the input tables named by a figure spec and draw it.
pub fn render(spec: &FigureSpec) -> Result<String, RenderError> {
    let tables = spec.inputs.iter().map(|p| Table::read(p)).collect::<Result<Vec<_>, _>>()?;
    Ok(match spec.kind {
        FigureKind::TrendCurve => {
            need(spec, 1)?;
            trend_curve_svg(&spec.title, &CurveData::from_table(&label_for(spec, 0), &tables[0])?, "fitted value")
        }
        FigureKind::CategoryTrend => {
            need(spec, 1)?;
            let curves = tables
                .iter()
                .enumerate()
                .map(|(i, t)| CurveData::from_table(&label_for(spec, i), t))
                .collect::<Result<Vec<_>, _>>()?;
            category_trend_svg(&spec.title, &curves, "fitted value")
        }
        FigureKind::NmdsHulls => {
            need(spec, 1)?;
            let t = &tables[0];
            let months: Vec<i32> = t.numbers("month_index")?.into_iter().map(|m| m as i32).collect();
            let (a, b) = (t.numbers("axis1")?, t.numbers("axis2")?);
            let coords: Vec<[f64; 2]> = a.into_iter().zip(b).map(|(x, y)| [x, y]).collect();
            nmds_hulls_svg(&spec.title, &months, &coords, &spec.epoch, spec.stress)
        }
        FigureKind::WordShift => {
            need(spec, 1)?;
            let t = &tables[0];
            let points = t
                .strings("entity")?
                .into_iter()
                .zip(category_column(t)?)
                .zip(t.numbers("slope")?.into_iter().zip(t.numbers("intercept_prob")?))
                .map(|((entity, category), (slope, probability))| WordShiftPoint {
                    entity,
                    category,
                    slope,
                    probability,
                })
                .collect::<Vec<_>>();
            word_shift_svg(&spec.title, &points)
        }
        FigureKind::Mosaic => {
            need(spec, 1)?;
            let t = &tables[0];
            let rows = category_column(t)?
                .into_iter()
                .zip(t.strings("significance_class")?.into_iter().zip(t.strings("magnitude_class")?))
                .map(|(category, (significance, magnitude))| MosaicRow { category, significance, magnitude })
                .collect::<Vec<_>>();
            mosaic_svg(&spec.title, &rows)
        }
        FigureKind::SynonymPanel => {
            need(spec, 1)?;
            let group = CurveData::from_table(&label_for(spec, 0), &tables[0])?;
            let members = tables[1..]
                .iter()
                .enumerate()
                .map(|(i, t)| CurveData::from_table(&label_for(spec, i + 1), t))
                .collect::<Result<Vec<_>, _>>()?;
            synonym_panel_svg(&spec.title, &group, &members)
        }
        FigureKind::AreaShare => {
            need(spec, 1)?;
            let t = &tables[0];
            let rows = t
                .strings("group")?
                .into_iter()
                .zip(t.numbers("month_index")?)
                .zip(category_column(t)?.into_iter().zip(t.numbers("share")?))
                .map(|((group, m), (category, share))| ShareRow { group, month_index: m as i32, category, share })
                .collect::<Vec<_>>();
            area_share_svg(&spec.title, &rows)
        }
        FigureKind::Qq => {
            need(spec, 1)?;
            let t = &tables[0];
            qq_svg(&spec.title, &t.numbers("theoretical")?, &t.numbers("sample")?)
        }
    })
}

pub fn render_to_file(spec: &FigureSpec) -> Result<(), RenderError> {
    let svg = render(spec)?;
    if let Some(dir) = spec.output.parent() {
        fs::create_dir_all(dir).map_err(|source| RenderError::Write { path: dir.to_owned(), source })?;
    }
    fs::write(&spec.output, svg).map_err(|source| RenderError::Write { path: spec.output.clone(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(svg: &str) -> roxmltree::Document<'_> {
        let doc = roxmltree::Document::parse(svg).expect("well-formed SVG");
        let root = doc.root_element();
        assert_eq!(root.tag_name().name(), "svg");
        for attr in ["width", "height"] {
            let v: f64 = root.attribute(attr).expect("explicit size").parse().unwrap();
            assert!(v > 0.0);
        }
        doc
    }

    fn class_count(doc: &roxmltree::Document, class: &str) -> usize {
        doc.descendants().filter(|n| n.attribute("class") == Some(class)).count()
    }

    fn flat(value: f64, n: usize) -> CurveData {
        CurveData {
            label: "flat".into(),
            months: (0..n).map(|m| m as f64).collect(),
            mean: vec![value; n],
            lo: vec![value; n],
            hi: vec![value; n],
        }
    }

    #[test]
    fn constant_trend_is_one_horizontal_line() {
        let svg = trend_curve_svg("flat", &flat(1.0, 24), "value");
        let doc = parse(&svg);
        let lines: Vec<_> = doc.descendants().filter(|n| n.attribute("class") == Some("mean")).collect();
        assert_eq!(lines.len(), 1);
        let ys: Vec<&str> =
            lines[0].attribute("points").unwrap().split(' ').map(|p| p.split(',').nth(1).unwrap()).collect();
        assert!(ys.windows(2).all(|w| w[0] == w[1]), "{ys:?}");
        assert_eq!(class_count(&doc, "ribbon"), 1);
        assert!(class_count(&doc, "gridline") >= 1);
    }

    /// Andrew's monotone chain, counter-clockwise from the lowest-leftmost point.
    fn monotone_chain(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
        let mut p = points.to_vec();
        p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
        p.dedup();
        if p.len() < 3 {
            return p;
        }
        let cross =
            |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
        let mut lower: Vec<[f64; 2]> = Vec::new();
        for &q in &p {
            while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], q) <= 0.0 {
                lower.pop();
            }
            lower.push(q);
        }
        let mut upper: Vec<[f64; 2]> = Vec::new();
        for &q in p.iter().rev() {
            while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], q) <= 0.0 {
                upper.pop();
            }
            upper.push(q);
        }
        lower.pop();
        upper.pop();
        lower.extend(upper);
        lower
    }

    fn rotate_to_min(v: &[(String, String)]) -> Vec<(String, String)> {
        let i = (0..v.len()).min_by(|&a, &b| v[a].cmp(&v[b])).unwrap_or(0);
        v[i..].iter().chain(&v[..i]).cloned().collect()
    }

    #[test]
    fn nmds_hulls_match_monotone_chain() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(24);
        let months: Vec<i32> = (0..24).collect();
        let coords: Vec<[f64; 2]> = (0..24).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let epoch = StudyEpoch::default();
        let svg = nmds_hulls_svg("hulls", &months, &coords, &epoch, Some(0.08));
        let doc = parse(&svg);
        let hulls: Vec<_> = doc.descendants().filter(|n| n.attribute("class") == Some("hull")).collect();
        assert_eq!(hulls.len(), 2);
        assert_eq!(class_count(&doc, "month"), 24);
        assert!(svg.contains("stress = 0.080"));

        let xlim = extent(coords.iter().map(|c| &c[0]));
        let ylim = extent(coords.iter().map(|c| &c[1]));
        let fr = main_frame(xlim, ylim);
        for (k, node) in hulls.iter().enumerate() {
            let year: Vec<[f64; 2]> = coords[12 * k..12 * (k + 1)].to_vec();
            let expect: Vec<(String, String)> =
                monotone_chain(&year).iter().map(|v| (f(fr.x(v[0])), f(fr.y(v[1])))).collect();
            let got: Vec<(String, String)> = node
                .attribute("points")
                .unwrap()
                .split(' ')
                .map(|p| {
                    let (a, b) = p.split_once(',').unwrap();
                    (a.to_owned(), b.to_owned())
                })
                .collect();
            assert_eq!(got.len(), expect.len(), "year {k}");
            // Same cycle, possibly reversed or started elsewhere.
            let mut reversed = expect.clone();
            reversed.reverse();
            let g = rotate_to_min(&got);
            assert!(g == rotate_to_min(&expect) || g == rotate_to_min(&reversed), "year {k}: {got:?} vs {expect:?}");
        }
    }

    fn trapezoid(d: &Density) -> f64 {
        d.grid.windows(2).zip(d.density.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum()
    }

    fn word_shift_fixture() -> Vec<WordShiftPoint> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(35);
        let mut out = Vec::new();
        for (cat, n, centre) in
            [(Category::Base, 60, -0.01), (Category::Tidyverse, 25, 0.02), (Category::Other, 115, 0.0)]
        {
            for i in 0..n {
                out.push(WordShiftPoint {
                    entity: format!("{}_{i}", cat.as_str()),
                    category: cat,
                    slope: centre + rng.gen_range(-0.02..0.02),
                    probability: rng.gen_range(0.001..0.8f64).powi(2),
                });
            }
        }
        out
    }

    #[test]
    fn word_shift_densities_integrate_to_category_share() {
        let pts = word_shift_fixture();
        for axis in [0, 1] {
            let groups = by_category(&pts, |p| if axis == 0 { p.slope } else { p.probability });
            let d = marginal_densities(&groups);
            assert_eq!(d.len(), 3);
            for (dens, expect) in d.iter().zip([60.0 / 200.0, 25.0 / 200.0, 115.0 / 200.0]) {
                assert_eq!(dens.share, expect);
                assert!((trapezoid(dens) - expect).abs() < 1e-3, "{:?} {}", dens.category, trapezoid(dens));
            }
        }
        let doc_text = word_shift_svg("shift", &pts);
        let doc = parse(&doc_text);
        assert_eq!(class_count(&doc, "density-x"), 3);
        assert_eq!(class_count(&doc, "density-y"), 3);
        assert_eq!(class_count(&doc, "function"), 200);
    }

    #[test]
    fn silverman_matches_hand_value() {
        // sd = sqrt(2.5), IQR = 2 so IQR/1.34 < sd.
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        let expect = 0.9 * (2.0f64 / 1.34) * 5f64.powf(-0.2);
        assert!((silverman_bandwidth(&v) - expect).abs() < 1e-12);
    }

    #[test]
    fn mosaic_cells_carry_counts() {
        let rows: Vec<MosaicRow> = [
            (Category::Base, "sig_up", "meaningful_up"),
            (Category::Base, "sig_up", "meaningful_up"),
            (Category::Base, "none", "stable"),
            (Category::Other, "sig_down", "meaningful_down"),
        ]
        .iter()
        .map(|(c, s, m)| MosaicRow { category: *c, significance: s.to_string(), magnitude: m.to_string() })
        .collect();
        let svg = mosaic_svg("mosaic", &rows);
        let doc = parse(&svg);
        let cells: Vec<(String, String)> = doc
            .descendants()
            .filter(|n| n.attribute("class") == Some("cell"))
            .map(|n| (n.attribute("data-category").unwrap().to_owned(), n.attribute("data-count").unwrap().to_owned()))
            .collect();
        assert_eq!(cells, [("base", "2"), ("base", "1"), ("other", "1")].map(|(a, b)| (a.to_owned(), b.to_owned())));
    }

    #[test]
    fn every_kind_is_well_formed() {
        let c = flat(0.3, 30);
        let mut other = c.clone();
        other.label = "tidyverse".into();
        let shares: Vec<ShareRow> = (0..30)
            .flat_map(|m| {
                Category::ATTRIBUTED.map(|cat| ShareRow {
                    group: "join & merge".into(),
                    month_index: m,
                    category: cat,
                    share: 1.0 / 3.0,
                })
            })
            .collect();
        let docs = [
            category_trend_svg("<cats>", &[c.clone(), other], "y"),
            synonym_panel_svg("group", &c, &[c.clone()]),
            area_share_svg("share", &shares),
            qq_svg("qq", &[-1.0, 0.0, 1.0], &[-0.9, 0.1, 1.2]),
            word_shift_svg("empty", &[]),
            mosaic_svg("empty", &[]),
            nmds_hulls_svg("one", &[0], &[[0.0, 0.0]], &StudyEpoch::default(), None),
        ];
        for d in &docs {
            parse(d);
            assert!(!d.contains("NaN") && !d.contains("inf"), "{d}");
        }
    }

    #[test]
    fn missing_column_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("curve.csv");
        fs::write(&p, "month_index,mean,lo\n0,1,1\n").unwrap();
        let spec = FigureSpec::new(FigureKind::TrendCurve, vec![p], dir.path().join("o.svg"), "t");
        match render(&spec) {
            Err(RenderError::MissingColumn { column, .. }) => assert_eq!(column, "hi"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let pts = word_shift_fixture();
        assert_eq!(word_shift_svg("a", &pts), word_shift_svg("a", &pts));
    }
}
