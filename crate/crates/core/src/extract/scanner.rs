//! Single-pass lexical scanner for R call sites.
//!
//! The scanner never builds a syntax tree. It walks the byte stream once,
//! skipping comments and string literals (in default mode), and reports a
//! call whenever a name is followed, possibly after horizontal whitespace,
//! by an opening parenthesis. All delimiters it cares about are ASCII, so
//! operating on the bytes of a `&str` always slices on char boundaries.

use serde::{Deserialize, Serialize};

/// Token emitted for every `[` or `[[` indexing occurrence.
pub const INDEX_TOKEN: &str = "[]";
pub const IN_TOKEN: &str = "%in%";
pub const PIPE_TOKEN: &str = "%>%";

/// Names that are syntax rather than calls. Dropped in default mode only.
pub const CONTROL_KEYWORDS: [&str; 5] = ["if", "for", "while", "repeat", "function"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanMode {
    /// Skip comments, strings and raw strings; drop control keywords.
    #[default]
    Default,
    /// Count everything to the left of `(`, including comment text, string
    /// contents and keywords.
    Naive,
}

/// One call site, before it is tied to a script.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Call {
    pub token: String,
    pub explicit_package: Option<String>,
}

impl Call {
    fn bare(token: &str) -> Self {
        Call { token: token.to_owned(), explicit_package: None }
    }
}

#[inline]
fn is_ident_start(c: u8) -> bool {
    c.is_ascii_alphabetic() || c == b'.'
}

#[inline]
fn is_ident_char(c: u8) -> bool {
    c.is_ascii_alphanumeric() || c == b'.' || c == b'_'
}

/// Scan decoded script text and return its call sites in source order.
pub fn scan_text(text: &str, mode: ScanMode) -> Vec<Call> {
    Scanner { src: text.as_bytes(), text, pos: 0, mode, out: Vec::new() }.run()
}

struct Scanner<'a> {
    src: &'a [u8],
    text: &'a str,
    pos: usize,
    mode: ScanMode,
    out: Vec<Call>,
}

impl<'a> Scanner<'a> {
    fn run(mut self) -> Vec<Call> {
        let skipping = self.mode == ScanMode::Default;
        while self.pos < self.src.len() {
            let c = self.src[self.pos];
            match c {
                b'#' if skipping => self.skip_line(),
                b'"' | b'\'' if skipping => self.skip_string(c),
                b'`' => {
                    if let Some((start, end)) = self.backtick_span(self.pos) {
                        self.pos = end + 1;
                        self.name_candidate(start, end, None);
                    } else {
                        self.pos += 1;
                    }
                }
                b'.' if self.peek(1).is_some_and(|d| d.is_ascii_digit()) => self.skip_number(),
                c if is_ident_start(c) => self.identifier(),
                c if c.is_ascii_digit() => self.skip_number(),
                b'[' => {
                    self.out.push(Call::bare(INDEX_TOKEN));
                    self.pos += if self.peek(1) == Some(b'[') { 2 } else { 1 };
                }
                b'%' => self.percent_operator(),
                _ => self.pos += 1,
            }
        }
        self.out
    }

    fn peek(&self, ahead: usize) -> Option<u8> {
        self.src.get(self.pos + ahead).copied()
    }

    fn skip_line(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos] != b'\n' {
            self.pos += 1;
        }
    }

    fn skip_string(&mut self, quote: u8) {
        self.pos += 1;
        while self.pos < self.src.len() {
            match self.src[self.pos] {
                b'\\' => self.pos += 2,
                c if c == quote => {
                    self.pos += 1;
                    return;
                }
                _ => self.pos += 1,
            }
        }
        self.pos = self.src.len();
    }

    fn skip_number(&mut self) {
        self.pos += 1;
        while self.pos < self.src.len() && is_ident_char(self.src[self.pos]) {
            self.pos += 1;
        }
    }

    /// Content span of a backtick-quoted name starting at `open`, if it is
    /// closed on the same line.
    fn backtick_span(&self, open: usize) -> Option<(usize, usize)> {
        let start = open + 1;
        let mut j = start;
        while j < self.src.len() {
            match self.src[j] {
                b'`' => return Some((start, j)),
                b'\n' => return None,
                _ => j += 1,
            }
        }
        None
    }

    fn read_ident(&mut self) -> (usize, usize) {
        let start = self.pos;
        self.pos += 1;
        while self.pos < self.src.len() && is_ident_char(self.src[self.pos]) {
            self.pos += 1;
        }
        (start, self.pos)
    }

    fn identifier(&mut self) {
        let (start, end) = self.read_ident();
        let name = &self.text[start..end];

        if self.mode == ScanMode::Default && (name == "r" || name == "R") && self.try_raw_string() {
            return;
        }

        // `pkg::name` and `pkg:::name` carry the package into the call.
        if self.peek(0) == Some(b':') && self.peek(1) == Some(b':') {
            self.pos += if self.peek(2) == Some(b':') { 3 } else { 2 };
            match self.peek(0) {
                Some(c) if is_ident_start(c) && !self.peek(1).is_some_and(|d| c == b'.' && d.is_ascii_digit()) => {
                    let (s, e) = self.read_ident();
                    self.name_candidate(s, e, Some(name));
                }
                Some(b'`') => {
                    if let Some((s, e)) = self.backtick_span(self.pos) {
                        self.pos = e + 1;
                        self.name_candidate(s, e, Some(name));
                    } else {
                        self.pos += 1;
                    }
                }
                _ => {}
            }
            return;
        }

        self.name_candidate(start, end, None);
    }

    /// Raw string literal `r"---(...)---"` with `(`, `[` or `{` delimiters.
    /// Called with `pos` just past the `r`/`R` prefix.
    fn try_raw_string(&mut self) -> bool {
        let quote = match self.peek(0) {
            Some(q @ (b'"' | b'\'')) => q,
            _ => return false,
        };
        let mut j = self.pos + 1;
        let dash_start = j;
        while j < self.src.len() && self.src[j] == b'-' {
            j += 1;
        }
        let dashes = j - dash_start;
        let close = match self.src.get(j) {
            Some(b'(') => b')',
            Some(b'[') => b']',
            Some(b'{') => b'}',
            _ => return false,
        };
        j += 1;
        while j < self.src.len() {
            if self.src[j] == close {
                let tail = j + 1;
                let dashes_ok = (0..dashes).all(|k| self.src.get(tail + k) == Some(&b'-'));
                if dashes_ok && self.src.get(tail + dashes) == Some(&quote) {
                    self.pos = tail + dashes + 1;
                    return true;
                }
            }
            j += 1;
        }
        self.pos = self.src.len();
        true
    }

    fn percent_operator(&mut self) {
        let start = self.pos + 1;
        let mut j = start;
        while j < self.src.len() && self.src[j] != b'%' && self.src[j] != b'\n' {
            j += 1;
        }
        if j < self.src.len() && self.src[j] == b'%' {
            match &self.text[start..j] {
                "in" => self.out.push(Call::bare(IN_TOKEN)),
                ">" => self.out.push(Call::bare(PIPE_TOKEN)),
                _ => {}
            }
            self.pos = j + 1;
        } else {
            self.pos += 1;
        }
    }

    /// Emit a call if the name spanning `start..end` is followed by `(`.
    fn name_candidate(&mut self, start: usize, end: usize, package: Option<&str>) {
        let mut j = self.pos;
        while j < self.src.len() && (self.src[j] == b' ' || self.src[j] == b'\t') {
            j += 1;
        }
        if self.src.get(j) != Some(&b'(') {
            return;
        }
        let name = &self.text[start..end];
        if !valid_token(name) {
            return;
        }
        if self.mode == ScanMode::Default && package.is_none() && CONTROL_KEYWORDS.contains(&name) {
            return;
        }
        self.out.push(Call { token: name.to_owned(), explicit_package: package.map(str::to_owned) });
    }
}

/// Backtick names may hold arbitrary text; anything that would make the
/// token ambiguous downstream is rejected.
fn valid_token(name: &str) -> bool {
    !name.is_empty() && !name.chars().any(|c| matches!(c, '(' | ')' | '"' | '\'' | '`') || (c.is_control()))
}
