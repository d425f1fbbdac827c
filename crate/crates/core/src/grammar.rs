//! Tagged transcript format.
//!
//! A transcript interleaves free text with four tag pairs:
//! `<think>`, `<search>`, `<information>` and `<answer>`. Scanning is
//! first-match and non-nested: once an opening tag is found, its content runs
//! to the next closing tag of the same kind, and any other tags inside that
//! content are literal text. An opening tag with no matching close starts a
//! new `Plain` segment.
//!
//! Violation flags are defined on tag counts so they do not depend on the
//! order in which a malformed transcript happens to place its tags.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const SEARCH_OPEN: &str = "<search>";
pub const SEARCH_CLOSE: &str = "</search>";
pub const INFO_OPEN: &str = "<information>";
pub const INFO_CLOSE: &str = "</information>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

/// All eight reserved literals, opening/closing pairs in order.
pub const TAG_LITERALS: [&str; 8] = [
    THINK_OPEN,
    THINK_CLOSE,
    SEARCH_OPEN,
    SEARCH_CLOSE,
    INFO_OPEN,
    INFO_CLOSE,
    ANSWER_OPEN,
    ANSWER_CLOSE,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SegmentKind {
    Think,
    Search,
    Information,
    Answer,
    Plain,
}

impl SegmentKind {
    pub const TAGGED: [SegmentKind; 4] = [
        SegmentKind::Think,
        SegmentKind::Search,
        SegmentKind::Information,
        SegmentKind::Answer,
    ];

    /// Opening and closing literal, `None` for `Plain`.
    pub fn literals(self) -> Option<(&'static str, &'static str)> {
        match self {
            SegmentKind::Think => Some((THINK_OPEN, THINK_CLOSE)),
            SegmentKind::Search => Some((SEARCH_OPEN, SEARCH_CLOSE)),
            SegmentKind::Information => Some((INFO_OPEN, INFO_CLOSE)),
            SegmentKind::Answer => Some((ANSWER_OPEN, ANSWER_CLOSE)),
            SegmentKind::Plain => None,
        }
    }
}

/// One piece of a parsed transcript. `span` is a byte range into the source
/// text and covers the tags as well as the content.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub content: String,
    pub span: Range<usize>,
}

impl Segment {
    /// Lay out `(kind, content)` pairs back to back, assigning the spans
    /// `render_segments` would produce.
    pub fn layout<I, S>(parts: I) -> Vec<Segment>
    where
        I: IntoIterator<Item = (SegmentKind, S)>,
        S: Into<String>,
    {
        let mut offset = 0;
        parts
            .into_iter()
            .map(|(kind, content)| {
                let content = content.into();
                let len = content.len()
                    + kind.literals().map_or(0, |(o, c)| o.len() + c.len());
                let span = offset..offset + len;
                offset += len;
                Segment {
                    kind,
                    content,
                    span,
                }
            })
            .collect()
    }
}

fn next_opening(text: &str, from: usize) -> Option<(usize, SegmentKind)> {
    SegmentKind::TAGGED
        .iter()
        .filter_map(|&kind| {
            let (open, _) = kind.literals()?;
            text[from..].find(open).map(|i| (from + i, kind))
        })
        .min_by_key(|&(i, _)| i)
}

/// Split a transcript into segments. Every byte lands in exactly one segment.
pub fn parse_transcript(text: &str) -> Vec<Segment> {
    let mut segments = Vec::new();
    let mut pos = 0;
    let mut plain_start = 0;

    let flush_plain = |segments: &mut Vec<Segment>, start: usize, end: usize| {
        if end > start {
            segments.push(Segment {
                kind: SegmentKind::Plain,
                content: text[start..end].to_string(),
                span: start..end,
            });
        }
    };

    while let Some((at, kind)) = next_opening(text, pos) {
        let (open, close) = kind.literals().expect("tagged kind");
        let content_start = at + open.len();
        match text[content_start..].find(close) {
            Some(rel) => {
                flush_plain(&mut segments, plain_start, at);
                let content_end = content_start + rel;
                let end = content_end + close.len();
                segments.push(Segment {
                    kind,
                    content: text[content_start..content_end].to_string(),
                    span: at..end,
                });
                pos = end;
                plain_start = end;
            }
            None => {
                // Unmatched opener: it begins a fresh plain run.
                flush_plain(&mut segments, plain_start, at);
                plain_start = at;
                pos = content_start;
            }
        }
    }
    flush_plain(&mut segments, plain_start, text.len());
    segments
}

/// Inverse of [`parse_transcript`] for well-formed segment lists.
pub fn render_segments(segments: &[Segment]) -> Result<String> {
    let mut out = String::new();
    for seg in segments {
        if let Some(lit) = TAG_LITERALS.iter().find(|lit| seg.content.contains(**lit)) {
            return Err(Error::ReservedLiteral((*lit).to_string()));
        }
        match seg.kind.literals() {
            Some((open, close)) => {
                out.push_str(open);
                out.push_str(&seg.content);
                out.push_str(close);
            }
            None => out.push_str(&seg.content),
        }
    }
    Ok(out)
}

/// Content of the first `open ... close` block, scanning left to right.
pub fn first_block<'a>(text: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let start = text.find(open)? + open.len();
    let len = text[start..].find(close)?;
    Some(&text[start..start + len])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Violation {
    NoAnswerTag,
    UnbalancedAnswer,
    NoThinkTag,
    UnbalancedThink,
    NoSearchUsage,
    EmptyAnswer,
}

impl Violation {
    pub const ALL: [Violation; 6] = [
        Violation::NoAnswerTag,
        Violation::UnbalancedAnswer,
        Violation::NoThinkTag,
        Violation::UnbalancedThink,
        Violation::NoSearchUsage,
        Violation::EmptyAnswer,
    ];

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Set of detected format violations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "Vec<Violation>", from = "Vec<Violation>")]
pub struct ViolationSet(u8);

impl ViolationSet {
    pub fn empty() -> Self {
        ViolationSet(0)
    }

    pub fn insert(&mut self, v: Violation) {
        self.0 |= v.bit();
    }

    pub fn remove(&mut self, v: Violation) {
        self.0 &= !v.bit();
    }

    pub fn contains(&self, v: Violation) -> bool {
        self.0 & v.bit() != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(&self) -> impl Iterator<Item = Violation> + '_ {
        Violation::ALL.into_iter().filter(|v| self.contains(*v))
    }

    /// Sets closed under the detector's invariants: `NoAnswerTag` excludes
    /// `UnbalancedAnswer`, and `EmptyAnswer` requires balanced answer tags.
    pub fn is_consistent(&self) -> bool {
        use Violation::*;
        let exclusive = !(self.contains(NoAnswerTag) && self.contains(UnbalancedAnswer));
        let empty_ok = !self.contains(EmptyAnswer)
            || (!self.contains(NoAnswerTag) && !self.contains(UnbalancedAnswer));
        exclusive && empty_ok
    }

    /// Every subset of the six flags, in bit order.
    pub fn all_subsets() -> impl Iterator<Item = ViolationSet> {
        (0u8..64).map(ViolationSet)
    }
}

impl FromIterator<Violation> for ViolationSet {
    fn from_iter<I: IntoIterator<Item = Violation>>(iter: I) -> Self {
        let mut set = ViolationSet::empty();
        for v in iter {
            set.insert(v);
        }
        set
    }
}

impl From<Vec<Violation>> for ViolationSet {
    fn from(v: Vec<Violation>) -> Self {
        v.into_iter().collect()
    }
}

impl From<ViolationSet> for Vec<Violation> {
    fn from(s: ViolationSet) -> Self {
        s.iter().collect()
    }
}

fn has_complete_pair(text: &str, open: &str, close: &str) -> bool {
    first_block(text, open, close).is_some()
}

/// Flag the structural problems of a model response.
///
/// * `NoAnswerTag`: no `<answer>` and no `</answer>` at all.
/// * `UnbalancedAnswer`: answer open/close counts differ.
/// * `NoThinkTag`: no `<think>`.
/// * `UnbalancedThink`: think open/close counts differ.
/// * `NoSearchUsage`: no `<search>` followed later by `</search>`.
/// * `EmptyAnswer`: answer tags balanced and the first answer block is blank.
pub fn detect_violations(text: &str) -> ViolationSet {
    let count = |lit: &str| text.matches(lit).count();
    let (answer_open, answer_close) = (count(ANSWER_OPEN), count(ANSWER_CLOSE));
    let (think_open, think_close) = (count(THINK_OPEN), count(THINK_CLOSE));

    let mut set = ViolationSet::empty();
    if answer_open == 0 && answer_close == 0 {
        set.insert(Violation::NoAnswerTag);
    }
    if answer_open != answer_close {
        set.insert(Violation::UnbalancedAnswer);
    }
    if think_open == 0 {
        set.insert(Violation::NoThinkTag);
    }
    if think_open != think_close {
        set.insert(Violation::UnbalancedThink);
    }
    if !has_complete_pair(text, SEARCH_OPEN, SEARCH_CLOSE) {
        set.insert(Violation::NoSearchUsage);
    }
    if answer_open > 0 && answer_open == answer_close {
        if let Some(content) = first_block(text, ANSWER_OPEN, ANSWER_CLOSE) {
            if content.trim().is_empty() {
                set.insert(Violation::EmptyAnswer);
            }
        }
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use SegmentKind::*;

    fn kinds_and_content(segs: &[Segment]) -> Vec<(SegmentKind, &str)> {
        segs.iter().map(|s| (s.kind, s.content.as_str())).collect()
    }

    #[test]
    fn minimal_well_formed() {
        let segs = parse_transcript("<think>a</think><answer>b</answer>");
        assert_eq!(kinds_and_content(&segs), vec![(Think, "a"), (Answer, "b")]);
        assert_eq!(segs[0].span, 0..16);
        assert_eq!(segs[1].span, 16..34);
    }

    #[test]
    fn four_block_solution() {
        let text = "<think>x</think><search>q</search><information>d</information><answer>y</answer>";
        let segs = parse_transcript(text);
        assert_eq!(
            kinds_and_content(&segs),
            vec![(Think, "x"), (Search, "q"), (Information, "d"), (Answer, "y")]
        );
    }

    /// Independent scanner: walks the text one byte at a time looking for
    /// literal openers, with no shared helpers.
    fn reference_scan(text: &str) -> Vec<(SegmentKind, String)> {
        let b = text.as_bytes();
        let mut out: Vec<(SegmentKind, String)> = Vec::new();
        let mut plain = String::new();
        let mut i = 0;
        'outer: while i < b.len() {
            for kind in SegmentKind::TAGGED {
                let (open, close) = kind.literals().unwrap();
                if b[i..].starts_with(open.as_bytes()) {
                    let mut j = i + open.len();
                    while j + close.len() <= b.len() {
                        if &b[j..j + close.len()] == close.as_bytes() {
                            if !plain.is_empty() {
                                out.push((Plain, std::mem::take(&mut plain)));
                            }
                            out.push((kind, text[i + open.len()..j].to_string()));
                            i = j + close.len();
                            continue 'outer;
                        }
                        j += 1;
                    }
                    if !plain.is_empty() {
                        out.push((Plain, std::mem::take(&mut plain)));
                    }
                    plain.push_str(open);
                    i += open.len();
                    continue 'outer;
                }
            }
            let ch = text[i..].chars().next().unwrap();
            plain.push(ch);
            i += ch.len_utf8();
        }
        if !plain.is_empty() {
            out.push((Plain, plain));
        }
        out
    }

    #[test]
    fn unmatched_opener_splits_plain() {
        let text = "hello <answer>z";
        let segs = parse_transcript(text);
        assert_eq!(kinds_and_content(&segs), vec![(Plain, "hello "), (Plain, "<answer>z")]);
        let reference = reference_scan(text);
        assert_eq!(
            reference,
            vec![(Plain, "hello ".to_string()), (Plain, "<answer>z".to_string())]
        );
    }

    #[test]
    fn parser_agrees_with_reference_scanner() {
        let cases = [
            "",
            "plain",
            "a</think>b",
            "<think>a<answer>b</answer></think>",
            "<think>x</think><answer>",
            "x <answer>a <think>b</think> c",
            "<search></search><search>q</search>",
            "<information>doc</information>tail",
            "<think><think>a</think></think>",
        ];
        for text in cases {
            let ours: Vec<_> = parse_transcript(text)
                .into_iter()
                .map(|s| (s.kind, s.content))
                .collect();
            assert_eq!(ours, reference_scan(text), "case {text:?}");
        }
    }

    #[test]
    fn spans_tile_the_text() {
        let text = "pre<think>a</think> mid <answer>open <search>q</search>";
        let segs = parse_transcript(text);
        let mut next = 0;
        for s in &segs {
            assert_eq!(s.span.start, next);
            next = s.span.end;
        }
        assert_eq!(next, text.len());
    }

    #[test]
    fn nested_tags_are_literal() {
        let segs = parse_transcript("<think>a<answer>b</answer></think>");
        assert_eq!(kinds_and_content(&segs), vec![(Think, "a<answer>b</answer>")]);
    }

    #[test]
    fn render_examples() {
        let segs = Segment::layout([(Answer, "April 30, 1789")]);
        assert_eq!(render_segments(&segs).unwrap(), "<answer>April 30, 1789</answer>");
        assert_eq!(render_segments(&[]).unwrap(), "");
    }

    #[test]
    fn render_rejects_reserved_literals() {
        let segs = Segment::layout([(Think, "a</think>")]);
        assert!(matches!(render_segments(&segs), Err(Error::ReservedLiteral(_))));
        let segs = Segment::layout([(Plain, "x <search> y")]);
        assert!(render_segments(&segs).is_err());
    }

    #[test]
    fn violation_examples() {
        use Violation::*;
        let clean = "<think>a</think><search>q</search><information>d</information><think>b</think><answer>c</answer>";
        assert!(detect_violations(clean).is_empty());

        let v = detect_violations("<think>a</think>");
        assert_eq!(v, [NoAnswerTag, NoSearchUsage].into_iter().collect());

        let v = detect_violations("<search>q</search><answer></answer>");
        assert_eq!(v, [NoThinkTag, EmptyAnswer].into_iter().collect());
    }

    #[test]
    fn no_answer_and_unbalanced_are_exclusive() {
        for text in ["", "<answer>", "</answer>", "<answer>a</answer></answer>", "x"] {
            let v = detect_violations(text);
            assert!(v.is_consistent(), "{text:?} -> {v:?}");
        }
    }

    #[test]
    fn appending_answer_removes_only_no_answer_tag() {
        let bases = ["", "<think>a</think>", "<search>q</search>", "<think>a"];
        for base in bases {
            let before = detect_violations(base);
            let after = detect_violations(&format!("{base}<answer>x</answer>"));
            let mut expected = before;
            expected.remove(Violation::NoAnswerTag);
            assert_eq!(after, expected, "{base:?}");
        }
    }

    #[test]
    fn violation_set_serializes_as_names() {
        let set: ViolationSet = [Violation::NoThinkTag, Violation::EmptyAnswer].into_iter().collect();
        let json = serde_json::to_string(&set).unwrap();
        assert_eq!(json, r#"["NoThinkTag","EmptyAnswer"]"#);
        let back: ViolationSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn consistent_subset_count() {
        // 64 subsets minus those with both answer-absence flags (16) minus
        // those pairing EmptyAnswer with exactly one of them (2 * 8).
        let n = ViolationSet::all_subsets().filter(|s| s.is_consistent()).count();
        assert_eq!(n, 32);
    }
}
