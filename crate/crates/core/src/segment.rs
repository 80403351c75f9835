//! Deterministic sentence-level fallback used when no parser output exists.

use alloc::vec::Vec;

use crate::relation::RelationLabel;
use crate::rst::{EduNode, InternalNode, RstTree, TreeError};

/// Character-offset boundaries `[start, end)` of sentences in `text`.
///
/// A sentence ends after a run of `.`, `!` or `?` (plus any closing quotes or
/// brackets) that is followed by whitespace or the end of the text. The
/// whitespace after a boundary belongs to the next sentence, so the spans
/// partition the text. A trailing all-whitespace piece is folded into the
/// last sentence.
pub fn sentence_spans(text: &str) -> Vec<(usize, usize)> {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let mut spans = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < n {
        if matches!(chars[i], '.' | '!' | '?') {
            let mut j = i + 1;
            while j < n && matches!(chars[j], '.' | '!' | '?') {
                j += 1;
            }
            while j < n && matches!(chars[j], '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}') {
                j += 1;
            }
            if j == n || chars[j].is_whitespace() {
                if chars[start..j].iter().any(|c| !c.is_whitespace()) {
                    spans.push((start, j));
                    start = j;
                }
                i = j;
                continue;
            }
        }
        i += 1;
    }
    if start < n {
        if chars[start..].iter().all(|c| c.is_whitespace()) {
            match spans.last_mut() {
                Some(last) => last.1 = n,
                None => spans.push((start, n)),
            }
        } else {
            spans.push((start, n));
        }
    }
    spans
}

/// Split `document` at sentence boundaries and join the sentences with a
/// right-branching chain of `Joint` relations.
///
/// Leaves get ids `0..L`, internals `L..2L-1`; the internal joining leaf `i`
/// with the rest of the chain has id `L + i`.
pub fn fallback_segment(doc_id: &str, document: &str) -> Result<RstTree, TreeError> {
    if document.trim().is_empty() {
        return Err(TreeError::EmptyDocument);
    }
    let spans = sentence_spans(document);
    let n = spans.len();
    let edus: Vec<EduNode> = spans.iter().enumerate().map(|(id, &(start, end))| EduNode { id, start, end }).collect();
    let mut internals = Vec::with_capacity(n.saturating_sub(1));
    // chain built from the right: J(e0, J(e1, ... J(e_{n-2}, e_{n-1})))
    let mut right = n - 1;
    for i in (0..n.saturating_sub(1)).rev() {
        let id = n + i;
        internals.push(InternalNode { id, relation: RelationLabel::Joint, left: i, right });
        right = id;
    }
    internals.reverse();
    RstTree::new(doc_id, document, edus, internals, right)
}
