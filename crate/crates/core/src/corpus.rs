//! Clinical-note corpus: loading, sentence segmentation, and extraction of
//! the diagnosis-list queries that seed the pipeline.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::sync::OnceLock;
use thiserror::Error;

/// A semi-structured clinical note: named sections plus the manually
/// assigned gold ICD codes (possibly empty at inference time).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalNote {
    pub note_id: String,
    /// Section name -> section text, in document order. Names are
    /// normalized to uppercase with internal whitespace collapsed.
    pub sections: IndexMap<String, String>,
    #[serde(default)]
    pub gold_codes: BTreeSet<String>,
}

/// One sentence of one section.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub note_id: String,
    pub section: String,
    /// 0-based position within the section.
    pub index: usize,
    pub text: String,
}

/// One item of a note's diagnosis list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosisQuery {
    pub query_id: String,
    pub note_id: String,
    pub text: String,
    /// Position in the diagnosis list, 0-based across the whole note.
    pub ordinal: usize,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {msg}")]
    Record { line: usize, msg: String },
    #[error("line {line}: duplicate note_id `{note_id}`")]
    DuplicateNoteId { line: usize, note_id: String },
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Supported on-disk corpus encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorpusFormat {
    /// One JSON object per line: `{"note_id", "sections", "gold_codes"}`.
    #[default]
    Jsonl,
}

#[derive(Deserialize)]
struct RawNote {
    note_id: String,
    sections: IndexMap<String, String>,
    #[serde(default)]
    gold_codes: BTreeSet<String>,
}

/// Normalize a section name: uppercase, internal whitespace collapsed.
pub fn normalize_section_name(name: &str) -> String {
    name.split_whitespace().collect::<Vec<_>>().join(" ").to_uppercase()
}

/// Load a corpus file. Every record parses and validates or the whole load
/// fails with the offending line number.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<ClinicalNote>, CorpusError> {
    let CorpusFormat::Jsonl = format;
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);

    let mut notes = Vec::new();
    let mut seen_ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawNote = serde_json::from_str(&line)
            .map_err(|e| CorpusError::Record { line: line_no, msg: e.to_string() })?;
        let note = validate_note(raw, line_no)?;
        if !seen_ids.insert(note.note_id.clone()) {
            return Err(CorpusError::DuplicateNoteId { line: line_no, note_id: note.note_id });
        }
        notes.push(note);
    }
    Ok(notes)
}

fn validate_note(raw: RawNote, line: usize) -> Result<ClinicalNote, CorpusError> {
    if raw.note_id.trim().is_empty() {
        return Err(CorpusError::Record { line, msg: "empty note_id".into() });
    }
    if raw.sections.is_empty() {
        return Err(CorpusError::Record { line, msg: "note has no sections".into() });
    }
    let mut sections = IndexMap::new();
    for (name, text) in raw.sections {
        let norm = normalize_section_name(&name);
        if norm.is_empty() {
            return Err(CorpusError::Record {
                line,
                msg: "section name empty after trimming".into(),
            });
        }
        if sections.insert(norm.clone(), text).is_some() {
            return Err(CorpusError::Record {
                line,
                msg: format!("duplicate section `{norm}` after normalization"),
            });
        }
    }
    Ok(ClinicalNote { note_id: raw.note_id, sections, gold_codes: raw.gold_codes })
}

/// Write notes in the same JSONL schema `load_corpus` reads.
pub fn save_corpus(path: &Path, notes: &[ClinicalNote]) -> Result<(), CorpusError> {
    let mut file = File::create(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    for note in notes {
        let line = serde_json::to_string(note).expect("note serializes");
        writeln!(file, "{line}").map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}

/// Sentence terminators that do NOT end a sentence when the word before the
/// period is one of these.
const ABBREVIATIONS: &[&str] = &["Dr.", "Mr.", "Ms.", "vs.", "e.g.", "i.e."];

/// Split every section of a note into sentences.
///
/// Boundary rule: `.`, `!` or `?` followed by whitespace and an uppercase
/// letter or digit, unless the token ending at the punctuation is a known
/// abbreviation. Deterministic; concatenating the sentences of a section
/// recovers the section text up to whitespace.
pub fn split_sentences(note: &ClinicalNote) -> Vec<Sentence> {
    let mut out = Vec::new();
    for (section, text) in &note.sections {
        for (index, sent) in split_section(text).into_iter().enumerate() {
            out.push(Sentence {
                note_id: note.note_id.clone(),
                section: section.clone(),
                index,
                text: sent,
            });
        }
    }
    out
}

fn split_section(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut sentences = Vec::new();
    let mut sent_start = 0usize;

    for (pos, &(idx, ch)) in chars.iter().enumerate() {
        if ch != '.' && ch != '!' && ch != '?' {
            continue;
        }
        // Look ahead: whitespace then uppercase/digit.
        let mut j = pos + 1;
        if j >= chars.len() || !chars[j].1.is_whitespace() {
            continue;
        }
        while j < chars.len() && chars[j].1.is_whitespace() {
            j += 1;
        }
        if j >= chars.len() {
            continue;
        }
        let next = chars[j].1;
        if !(next.is_uppercase() || next.is_ascii_digit()) {
            continue;
        }
        if ch == '.' && ends_with_abbreviation(text, idx + ch.len_utf8()) {
            continue;
        }
        let sentence = text[sent_start..idx + ch.len_utf8()].trim();
        if !sentence.is_empty() {
            sentences.push(sentence.to_string());
        }
        sent_start = chars[j].0;
    }
    let tail = text[sent_start..].trim();
    if !tail.is_empty() {
        sentences.push(tail.to_string());
    }
    sentences
}

/// Does the text ending at byte `end` (exclusive, just past a `.`) finish
/// with one of the guarded abbreviations?
fn ends_with_abbreviation(text: &str, end: usize) -> bool {
    let head = &text[..end];
    ABBREVIATIONS.iter().any(|abbr| {
        head.ends_with(abbr) && {
            // The abbreviation must start at a word boundary.
            let before = head.len() - abbr.len();
            before == 0 || !text[..before].ends_with(|c: char| c.is_alphanumeric())
        }
    })
}

/// Where and how to find the diagnosis list inside a note.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractionRules {
    /// Section names holding the diagnosis list, normalized form,
    /// tried in order.
    pub diagnosis_sections: Vec<String>,
}

impl Default for ExtractionRules {
    fn default() -> Self {
        Self {
            diagnosis_sections: vec!["DIAGNOSIS".into(), "IMPRESSION".into()],
        }
    }
}

/// A non-fatal condition noticed during extraction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionWarning {
    pub note_id: String,
    pub message: String,
}

/// Queries extracted from one note plus any warnings raised on the way.
#[derive(Debug, Clone, Default)]
pub struct ExtractionOutcome {
    pub queries: Vec<DiagnosisQuery>,
    pub warnings: Vec<ExtractionWarning>,
}

fn numbered_item_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:^|\s)\d+[.)]\s*").expect("valid regex"))
}

/// Extract the diagnosis-list queries of a note.
///
/// One query per list item, in document order, with item markers stripped.
/// A note without any configured diagnosis section yields no queries and a
/// warning record instead of an error.
pub fn extract_queries(note: &ClinicalNote, rules: &ExtractionRules) -> ExtractionOutcome {
    let mut outcome = ExtractionOutcome::default();
    let mut ordinal = 0usize;
    let mut found_section = false;

    for wanted in &rules.diagnosis_sections {
        let wanted = normalize_section_name(wanted);
        let Some(text) = note.sections.get(&wanted) else {
            continue;
        };
        found_section = true;
        for item in extract_items(text) {
            outcome.queries.push(DiagnosisQuery {
                query_id: format!("{}#q{}", note.note_id, ordinal),
                note_id: note.note_id.clone(),
                text: item,
                ordinal,
            });
            ordinal += 1;
        }
    }

    if !found_section {
        outcome.warnings.push(ExtractionWarning {
            note_id: note.note_id.clone(),
            message: "no diagnosis section found".into(),
        });
    } else if !note.gold_codes.is_empty() {
        // The code/query counts are expected to track each other closely;
        // a large gap usually means the list pattern missed items.
        let diff = note.gold_codes.len().abs_diff(outcome.queries.len());
        if diff >= 2 {
            outcome.warnings.push(ExtractionWarning {
                note_id: note.note_id.clone(),
                message: format!(
                    "gold code count {} differs from query count {} by {diff}",
                    note.gold_codes.len(),
                    outcome.queries.len()
                ),
            });
        }
    }
    outcome
}

/// Split a diagnosis section into list items: numbered markers (`1.`, `2)`)
/// anywhere in the text, else `-`/`•` bullets or one item per line.
fn extract_items(text: &str) -> Vec<String> {
    if numbered_item_re().is_match(text) {
        return numbered_item_re()
            .split(text)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
    }
    text.lines()
        .map(|line| line.trim().trim_start_matches(['-', '•']).trim())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}
