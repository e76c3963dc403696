//! Manifests: one `<path>\t<iso639-3>` record per line, `#` comments and
//! blank lines ignored. Relative paths resolve against the manifest's
//! directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::LabelSet;
use crate::error::{LidError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    /// Class index in the label set.
    pub label: usize,
    /// 1-based line in the manifest, kept for error messages.
    pub line: usize,
}

pub fn parse_manifest(text: &str, source_name: &str, base: &Path, labels: &LabelSet) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |detail: String| LidError::Data {
            source_name: source_name.to_string(),
            line,
            detail,
        };
        let content = raw.trim_end_matches('\r');
        if content.trim().is_empty() || content.trim_start().starts_with('#') {
            continue;
        }
        let mut fields = content.split('\t');
        let (Some(path), Some(code), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(err(format!("expected `<path>\\t<label>`, found `{content}`")));
        };
        let (path, code) = (path.trim(), code.trim());
        if path.is_empty() {
            return Err(err("empty path".into()));
        }
        let label = labels
            .index(code)
            .ok_or_else(|| err(format!("unknown label `{code}`")))?;
        let path = PathBuf::from(path);
        entries.push(ManifestEntry {
            path: if path.is_relative() { base.join(path) } else { path },
            label,
            line,
        });
    }
    Ok(entries)
}

pub fn load_manifest(path: impl AsRef<Path>, labels: &LabelSet) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| LidError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_manifest(&text, &path.display().to_string(), base, labels)
}

pub fn format_manifest(entries: &[(PathBuf, usize)], labels: &LabelSet) -> String {
    let mut out = String::new();
    for (path, label) in entries {
        let _ = writeln!(out, "{}\t{}", path.display(), labels.code(*label));
    }
    out
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[(PathBuf, usize)], labels: &LabelSet) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_manifest(entries, labels)).map_err(|e| LidError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<ManifestEntry>> {
        parse_manifest(text, "m.tsv", Path::new("/data"), &LabelSet::standard())
    }

    #[test]
    fn single_record() {
        let e = parse("a.wav\tkab").unwrap();
        assert_eq!(
            e,
            vec![ManifestEntry {
                path: "/data/a.wav".into(),
                label: 0,
                line: 1
            }]
        );
    }

    #[test]
    fn unknown_label_cites_line() {
        match parse("# header\n\nb.wav\teng\na.wav\txyz\n") {
            Err(LidError::Data { line, detail, .. }) => {
                assert_eq!(line, 4);
                assert!(detail.contains("xyz"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_lines() {
        assert!(matches!(parse("a.wav kab"), Err(LidError::Data { line: 1, .. })));
        assert!(matches!(parse("ok.wav\tkab\na\tkab\textra"), Err(LidError::Data { line: 2, .. })));
    }

    #[test]
    fn empty_and_comments() {
        assert!(parse("").unwrap().is_empty());
        assert!(parse("# only\n   \n").unwrap().is_empty());
        let abs = parse("/x/y.lidf\ttha\r\n").unwrap();
        assert_eq!(abs[0].path, PathBuf::from("/x/y.lidf"));
        assert_eq!(abs[0].label, 13);
    }

    #[test]
    fn format_round_trips() {
        let labels = LabelSet::standard();
        let entries = vec![(PathBuf::from("/a/1.lidf"), 3), (PathBuf::from("/a/2.lidf"), 15)];
        let text = format_manifest(&entries, &labels);
        let back = parse_manifest(&text, "m", Path::new("/"), &labels).unwrap();
        assert_eq!(back.iter().map(|e| (e.path.clone(), e.label)).collect::<Vec<_>>(), entries);
    }
}
