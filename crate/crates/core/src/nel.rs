//! Entity recognition and linking against the knowledge base.
//!
//! Recognition is a greedy longest-match dictionary matcher over KB surface
//! forms: exact on token sequences, case-insensitive, left to right, never
//! overlapping. Linking picks the first candidate of
//! [`kb::lookup_surface`]'s ordering.

use serde::{Deserialize, Serialize};

use crate::corpus::{split_sentences, ClinicalNote, DiagnosisQuery, Sentence};
use crate::kb::{lookup_surface, KnowledgeBase};
use crate::text::tokenize_with_spans;

/// A span of a sentence matching a KB surface form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub note_id: String,
    pub sentence: Sentence,
    /// Byte offsets into `sentence.text`.
    pub char_span: (usize, usize),
    /// The span's text, original casing preserved.
    pub surface: String,
}

/// A mention resolved to a concept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkedEntity {
    pub mention: EntityMention,
    pub concept_id: String,
    pub semantic_type: String,
}

/// Find all KB surface-form matches in a sentence.
///
/// Greedy longest match anchored at each token, left to right; after a
/// match the scan resumes past it, so mentions never overlap.
pub fn recognize(sentence: &Sentence, kb: &KnowledgeBase) -> Vec<EntityMention> {
    let tokens = tokenize_with_spans(&sentence.text);
    let max_len = kb.max_surface_tokens();
    let mut mentions = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let mut matched = 0;
        let upper = max_len.min(tokens.len() - i);
        for len in (1..=upper).rev() {
            let key = tokens[i..i + len]
                .iter()
                .map(|t| t.text.as_str())
                .collect::<Vec<_>>()
                .join(" ");
            if kb.has_surface(&key) {
                matched = len;
                break;
            }
        }
        if matched > 0 {
            let start = tokens[i].start;
            let end = tokens[i + matched - 1].end;
            mentions.push(EntityMention {
                note_id: sentence.note_id.clone(),
                sentence: sentence.clone(),
                char_span: (start, end),
                surface: sentence.text[start..end].to_string(),
            });
            i += matched;
        } else {
            i += 1;
        }
    }
    mentions
}

/// Resolve a mention to its highest-ranked concept candidate, or `None`
/// when the surface is absent from the index.
pub fn link(mention: &EntityMention, kb: &KnowledgeBase) -> Option<LinkedEntity> {
    let candidates = lookup_surface(kb, &mention.surface);
    let concept_id = candidates.into_iter().next()?;
    let semantic_type = kb.concept(&concept_id)?.semantic_type.clone();
    Some(LinkedEntity { mention: mention.clone(), concept_id, semantic_type })
}

/// Recognize and link a whole sentence. Unlinkable mentions are dropped.
pub fn link_sentence(sentence: &Sentence, kb: &KnowledgeBase) -> Vec<LinkedEntity> {
    recognize(sentence, kb).iter().filter_map(|m| link(m, kb)).collect()
}

/// Recognize and link every sentence of a note, in document order.
pub fn link_note(note: &ClinicalNote, kb: &KnowledgeBase) -> Vec<LinkedEntity> {
    split_sentences(note)
        .iter()
        .flat_map(|s| link_sentence(s, kb))
        .collect()
}

/// Recognize and link a diagnosis query, treating its text as one
/// synthetic sentence. The result is the query's entity set.
pub fn link_query(query: &DiagnosisQuery, kb: &KnowledgeBase) -> Vec<LinkedEntity> {
    let sentence = Sentence {
        note_id: query.note_id.clone(),
        section: "QUERY".into(),
        index: query.ordinal,
        text: query.text.clone(),
    };
    link_sentence(&sentence, kb)
}
