//! Strict unified-diff parsing.
//!
//! Grammar accepted, per file section:
//!
//! ```text
//! [diff --git a/X b/X]            optional git preamble lines
//! [index ..., new file mode ..., deleted file mode ..., similarity ..., rename ...]
//! --- <old path>[\t<timestamp>]
//! +++ <new path>[\t<timestamp>]
//! @@ -<start>[,<count>] +<start>[,<count>] @@[ section]
//! (' ' | '-' | '+')<line>        body; counts must match the header exactly
//! \ No newline at end of file
//! ```
//!
//! A completely empty body line is read as an empty context line. Anything
//! else (prose before the first header, stray lines between hunks, bodies
//! shorter or longer than their header counts) makes the document invalid.

use std::fmt::Write as _;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineKind {
    Context,
    Added,
    Removed,
    NoNewline,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HunkLine {
    pub kind: LineKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hunk {
    pub old_start: u32,
    pub old_count: u32,
    pub new_start: u32,
    pub new_count: u32,
    pub section: String,
    pub lines: Vec<HunkLine>,
}

impl Hunk {
    pub fn added(&self) -> impl Iterator<Item = &str> {
        self.lines
            .iter()
            .filter(|l| l.kind == LineKind::Added)
            .map(|l| l.text.as_str())
    }

    pub fn removed(&self) -> impl Iterator<Item = &str> {
        self.lines
            .iter()
            .filter(|l| l.kind == LineKind::Removed)
            .map(|l| l.text.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilePatch {
    pub preamble: Vec<String>,
    pub old_path: String,
    pub new_path: String,
    pub hunks: Vec<Hunk>,
}

impl FilePatch {
    /// The file the patch lands on: the new path unless the file is deleted.
    pub fn target_path(&self) -> &str {
        if self.new_path == "/dev/null" {
            &self.old_path
        } else {
            &self.new_path
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffDocument {
    pub raw_text: String,
    pub files: Vec<FilePatch>,
    pub is_valid_unified: bool,
    pub first_error: Option<String>,
}

impl DiffDocument {
    pub fn target_paths(&self) -> Vec<&str> {
        self.files.iter().map(FilePatch::target_path).collect()
    }

    /// Added lines per target file, in order.
    pub fn added_lines_by_file(&self) -> Vec<(&str, Vec<&str>)> {
        self.files
            .iter()
            .map(|f| (f.target_path(), f.hunks.iter().flat_map(Hunk::added).collect()))
            .collect()
    }

    /// Canonical unified-diff text of the parsed structure.
    pub fn to_unified_string(&self) -> String {
        let mut out = String::new();
        for f in &self.files {
            for p in &f.preamble {
                out.push_str(p);
                out.push('\n');
            }
            let _ = writeln!(out, "--- {}", display_path(&f.old_path, "a/"));
            let _ = writeln!(out, "+++ {}", display_path(&f.new_path, "b/"));
            for h in &f.hunks {
                let _ = write!(
                    out,
                    "@@ -{},{} +{},{} @@",
                    h.old_start, h.old_count, h.new_start, h.new_count
                );
                if !h.section.is_empty() {
                    out.push(' ');
                    out.push_str(&h.section);
                }
                out.push('\n');
                for l in &h.lines {
                    let prefix = match l.kind {
                        LineKind::Context => ' ',
                        LineKind::Added => '+',
                        LineKind::Removed => '-',
                        LineKind::NoNewline => '\\',
                    };
                    out.push(prefix);
                    out.push_str(&l.text);
                    out.push('\n');
                }
            }
        }
        out
    }
}

fn display_path(path: &str, prefix: &str) -> String {
    if path == "/dev/null" {
        path.to_string()
    } else {
        format!("{prefix}{path}")
    }
}

fn hunk_header() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@ ?(.*)$").expect("hunk regex")
    })
}

const GIT_PREAMBLE: [&str; 12] = [
    "diff ",
    "index ",
    "new file mode",
    "deleted file mode",
    "old mode",
    "new mode",
    "similarity index",
    "dissimilarity index",
    "rename from",
    "rename to",
    "copy from",
    "copy to",
];

fn clean_path(raw: &str) -> String {
    let p = raw.split('\t').next().unwrap_or("").trim();
    if p == "/dev/null" {
        return p.to_string();
    }
    p.strip_prefix("a/")
        .or_else(|| p.strip_prefix("b/"))
        .unwrap_or(p)
        .to_string()
}

struct Parser<'a> {
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, msg: impl AsRef<str>) -> String {
        format!("line {}: {}", self.pos + 1, msg.as_ref())
    }

    fn peek(&self) -> Option<&'a str> {
        self.lines.get(self.pos).copied()
    }

    fn file(&mut self) -> Result<FilePatch, String> {
        let mut preamble = Vec::new();
        while let Some(l) = self.peek() {
            if GIT_PREAMBLE.iter().any(|p| l.starts_with(p)) {
                preamble.push(l.to_string());
                self.pos += 1;
            } else {
                break;
            }
        }
        let old = self
            .peek()
            .and_then(|l| l.strip_prefix("--- "))
            .ok_or_else(|| self.err("expected '--- ' file header"))?;
        self.pos += 1;
        let new = self
            .peek()
            .and_then(|l| l.strip_prefix("+++ "))
            .ok_or_else(|| self.err("expected '+++ ' file header"))?;
        self.pos += 1;
        let mut patch = FilePatch {
            preamble,
            old_path: clean_path(old),
            new_path: clean_path(new),
            hunks: Vec::new(),
        };
        if patch.old_path.is_empty() || patch.new_path.is_empty() {
            return Err(self.err("empty file path"));
        }
        while let Some(l) = self.peek() {
            if !l.starts_with("@@") {
                break;
            }
            patch.hunks.push(self.hunk()?);
        }
        if patch.hunks.is_empty() {
            return Err(self.err("file section has no hunks"));
        }
        Ok(patch)
    }

    fn hunk(&mut self) -> Result<Hunk, String> {
        let header = self.peek().expect("caller checked");
        let caps = hunk_header()
            .captures(header)
            .ok_or_else(|| self.err(format!("malformed hunk header {header:?}")))?;
        let num = |i: usize, default: u32| -> Result<u32, String> {
            caps.get(i)
                .map_or(Ok(default), |m| m.as_str().parse().map_err(|_| self.err("number out of range")))
        };
        let mut hunk = Hunk {
            old_start: num(1, 0)?,
            old_count: num(2, 1)?,
            new_start: num(3, 0)?,
            new_count: num(4, 1)?,
            section: caps.get(5).map_or("", |m| m.as_str()).trim().to_string(),
            lines: Vec::new(),
        };
        self.pos += 1;
        let (mut old_seen, mut new_seen) = (0u32, 0u32);
        while old_seen < hunk.old_count || new_seen < hunk.new_count {
            let Some(l) = self.peek() else {
                return Err(self.err(format!(
                    "hunk body ended early: saw -{old_seen}/+{new_seen}, header says -{}/+{}",
                    hunk.old_count, hunk.new_count
                )));
            };
            let (kind, text) = match l.chars().next() {
                None => (LineKind::Context, ""),
                Some(' ') => (LineKind::Context, &l[1..]),
                Some('+') => (LineKind::Added, &l[1..]),
                Some('-') => (LineKind::Removed, &l[1..]),
                Some('\\') => (LineKind::NoNewline, &l[1..]),
                Some(_) => return Err(self.err(format!("unexpected line in hunk body: {l:?}"))),
            };
            match kind {
                LineKind::Context => {
                    old_seen += 1;
                    new_seen += 1;
                }
                LineKind::Added => new_seen += 1,
                LineKind::Removed => old_seen += 1,
                LineKind::NoNewline => {}
            }
            if old_seen > hunk.old_count || new_seen > hunk.new_count {
                return Err(self.err("hunk body longer than its header counts"));
            }
            hunk.lines.push(HunkLine {
                kind,
                text: text.to_string(),
            });
            self.pos += 1;
        }
        if let Some(l) = self.peek() {
            if l.starts_with('\\') {
                hunk.lines.push(HunkLine {
                    kind: LineKind::NoNewline,
                    text: l[1..].to_string(),
                });
                self.pos += 1;
            }
        }
        Ok(hunk)
    }
}

/// Parses `text` as a unified diff. Never fails: problems are reported via
/// `is_valid_unified = false` and `first_error`.
pub fn validate_diff(text: &str) -> DiffDocument {
    let mut lines: Vec<&str> = text.lines().collect();
    while lines.last().is_some_and(|l| l.trim().is_empty()) {
        lines.pop();
    }
    let start = lines.iter().position(|l| !l.trim().is_empty()).unwrap_or(lines.len());
    let mut parser = Parser { lines, pos: start };
    let mut files = Vec::new();
    let mut error = None;
    if parser.peek().is_none() {
        error = Some("empty input".to_string());
    }
    while parser.peek().is_some() {
        match parser.file() {
            Ok(f) => files.push(f),
            Err(e) => {
                error = Some(e);
                break;
            }
        }
    }
    DiffDocument {
        raw_text: text.to_string(),
        is_valid_unified: error.is_none() && !files.is_empty(),
        files,
        first_error: error,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PY_DIFF: &str = "diff --git a/src/m.py b/src/m.py\nindex 1..2 100644\n--- a/src/m.py\n+++ b/src/m.py\n@@ -1,3 +1,3 @@ def g():\n x = 1\n-y = 2\n+y = 3\n z = 4\n";

    #[test]
    fn prose_is_invalid() {
        let d = validate_diff("The bug is in foo()");
        assert!(!d.is_valid_unified);
        assert!(d.first_error.unwrap().contains("'--- '"));
    }

    #[test]
    fn parses_git_diff() {
        let d = validate_diff(PY_DIFF);
        assert!(d.is_valid_unified, "{:?}", d.first_error);
        assert_eq!(d.target_paths(), ["src/m.py"]);
        assert_eq!(d.files[0].hunks[0].section, "def g():");
        assert_eq!(d.added_lines_by_file()[0].1, ["y = 3"]);
    }

    #[test]
    fn count_mismatch_is_invalid() {
        let short = "--- a/x.py\n+++ b/x.py\n@@ -1,3 +1,3 @@\n a\n-b\n+c\n";
        assert!(!validate_diff(short).is_valid_unified);
        let long = "--- a/x.py\n+++ b/x.py\n@@ -1 +1 @@\n-a\n+b\n+c\n";
        let d = validate_diff(long);
        assert!(!d.is_valid_unified);
    }

    #[test]
    fn omitted_counts_default_to_one() {
        let d = validate_diff("--- a/README.md\n+++ b/README.md\n@@ -1 +1 @@\n-old\n+new\n");
        assert!(d.is_valid_unified);
        assert_eq!(d.files[0].hunks[0].old_count, 1);
    }

    #[test]
    fn new_and_deleted_files() {
        let d = validate_diff("--- /dev/null\n+++ b/new.py\n@@ -0,0 +1,1 @@\n+print(1)\n--- a/old.py\n+++ /dev/null\n@@ -1,1 +0,0 @@\n-x\n");
        assert!(d.is_valid_unified, "{:?}", d.first_error);
        assert_eq!(d.target_paths(), ["new.py", "old.py"]);
    }

    #[test]
    fn no_newline_marker() {
        let d = validate_diff("--- a/f\n+++ b/f\n@@ -1 +1 @@\n-a\n\\ No newline at end of file\n+b\n\\ No newline at end of file\n");
        assert!(d.is_valid_unified, "{:?}", d.first_error);
    }

    #[test]
    fn roundtrip_is_stable() {
        let d = validate_diff(PY_DIFF);
        let again = validate_diff(&d.to_unified_string());
        assert_eq!(again.files, d.files);
        assert!(again.is_valid_unified);
    }

    #[test]
    fn trailing_prose_is_invalid() {
        let text = format!("{PY_DIFF}\nThis fixes the bug.\n");
        assert!(!validate_diff(&text).is_valid_unified);
    }

    #[test]
    fn empty_is_invalid() {
        assert!(!validate_diff("  \n").is_valid_unified);
    }
}
