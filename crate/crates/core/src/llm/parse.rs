//! Turning free-form completions into structured values.
//!
//! Ranking output is repaired rather than rejected: unknown and duplicate
//! entries are dropped, and candidates the model forgot are appended in their
//! original order. The result is always a full permutation unless nothing at
//! all could be recognised.

use std::collections::HashSet;

use serde::Deserialize;
use serde_json::Value;

use crate::domain::{render_item, CandidateSet, Catalog, RankedList};
use crate::error::ParseError;

pub const START_TAG: &str = "<START>";
pub const END_TAG: &str = "<END>";

/// Content of a `1. foo` / `2) bar` line, if the line is a numbered item.
pub fn numbered_item(line: &str) -> Option<&str> {
    let line = line.trim_start();
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = &line[digits..];
    let rest = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')'))?;
    if !rest.is_empty() && !rest.starts_with(char::is_whitespace) {
        return None;
    }
    let content = rest.trim();
    (!content.is_empty()).then_some(content)
}

/// Every numbered-list entry in `text`, in order.
pub fn numbered_list(text: &str) -> Vec<String> {
    text.lines().filter_map(numbered_item).map(str::to_string).collect()
}

/// The first JSON array embedded anywhere in `text`.
fn first_json_array(text: &str) -> Option<Vec<Value>> {
    text.match_indices('[').find_map(|(i, _)| {
        let mut de = serde_json::Deserializer::from_str(&text[i..]);
        match Value::deserialize(&mut de) {
            Ok(Value::Array(values)) => Some(values),
            _ => None,
        }
    })
}

struct Resolver<'a> {
    candidates: &'a CandidateSet,
    titles: Vec<Option<String>>,
    renders: Vec<Option<(String, String)>>,
}

impl<'a> Resolver<'a> {
    fn new(candidates: &'a CandidateSet, catalog: &Catalog) -> Self {
        let items: Vec<_> = candidates.candidates.iter().map(|id| catalog.get(id)).collect();
        Self {
            candidates,
            titles: items.iter().map(|i| i.map(|i| i.title.clone())).collect(),
            renders: items
                .iter()
                .map(|i| i.map(|i| (render_item(i, true), render_item(i, false))))
                .collect(),
        }
    }

    fn by_index(&self, k: u64) -> Option<usize> {
        (k >= 1 && k as usize <= self.candidates.len()).then(|| k as usize - 1)
    }

    fn by_id(&self, s: &str) -> Option<usize> {
        self.candidates.candidates.iter().position(|c| c == s)
    }

    /// Matches free text: exact id first, then exact title or rendering.
    fn by_text(&self, raw: &str, used: &HashSet<usize>) -> Option<usize> {
        let s = raw.trim().trim_matches(|c| matches!(c, '"' | '\'' | '`' | '*')).trim();
        if s.is_empty() {
            return None;
        }
        if let Some(i) = self.by_id(s) {
            return Some(i);
        }
        let head = s.split(" | ").next().unwrap_or(s).trim();
        let title_match = |want: &str| {
            let hits: Vec<usize> = (0..self.candidates.len())
                .filter(|&i| self.titles[i].as_deref() == Some(want))
                .collect();
            // with repeated titles prefer a candidate that is not placed yet
            hits.iter().copied().find(|i| !used.contains(i)).or(hits.first().copied())
        };
        title_match(s)
            .or_else(|| {
                (0..self.candidates.len()).find(|&i| {
                    self.renders[i]
                        .as_ref()
                        .is_some_and(|(green, plain)| green == s || plain == s)
                })
            })
            .or_else(|| title_match(head))
    }

    fn json_entry(&self, v: &Value, used: &HashSet<usize>) -> Option<usize> {
        match v {
            Value::Number(n) => n.as_u64().and_then(|k| self.by_index(k)),
            Value::String(s) => self
                .by_id(s)
                .or_else(|| s.trim().parse::<u64>().ok().and_then(|k| self.by_index(k)))
                .or_else(|| self.by_text(s, used)),
            _ => None,
        }
    }
}

/// Assembles a permutation from resolved entries, repairing as needed.
fn assemble(candidates: &CandidateSet, entries: &[Option<usize>]) -> RankedList {
    let mut used = HashSet::with_capacity(candidates.len());
    let mut order = Vec::with_capacity(candidates.len());
    let mut repaired = false;
    for entry in entries {
        match entry {
            Some(i) if used.insert(*i) => order.push(candidates.candidates[*i].clone()),
            _ => repaired = true,
        }
    }
    for (i, id) in candidates.candidates.iter().enumerate() {
        if !used.contains(&i) {
            order.push(id.clone());
            repaired = true;
        }
    }
    RankedList {
        session_id: candidates.session_id.clone(),
        order,
        repaired,
    }
}

/// Parses a model ranking over `candidates`.
///
/// The first JSON array in the text wins (1-based indices or ids); failing
/// that, numbered-list lines are matched by id, then by title or rendering.
pub fn parse_ranked_list(text: &str, candidates: &CandidateSet, catalog: &Catalog) -> Result<RankedList, ParseError> {
    if candidates.is_empty() {
        return Err(ParseError::Unparseable);
    }
    let resolver = Resolver::new(candidates, catalog);

    if let Some(values) = first_json_array(text) {
        let mut used = HashSet::new();
        let entries: Vec<Option<usize>> = values
            .iter()
            .map(|v| {
                let hit = resolver.json_entry(v, &used);
                if let Some(i) = hit {
                    used.insert(i);
                }
                hit
            })
            .collect();
        if entries.iter().any(Option::is_some) {
            return Ok(assemble(candidates, &entries));
        }
    }

    let mut used = HashSet::new();
    let entries: Vec<Option<usize>> = numbered_list(text)
        .iter()
        .map(|line| {
            let hit = resolver.by_text(line, &used);
            if let Some(i) = hit {
                used.insert(i);
            }
            hit
        })
        .collect();
    if entries.iter().any(Option::is_some) {
        return Ok(assemble(candidates, &entries));
    }
    Err(ParseError::Unparseable)
}

/// Text strictly between the first `start_tag` and the next `end_tag`.
pub fn extract_tagged(text: &str, start_tag: &str, end_tag: &str) -> Result<String, ParseError> {
    let start = text.find(start_tag).ok_or(ParseError::TagNotFound)? + start_tag.len();
    let len = text[start..].find(end_tag).ok_or(ParseError::TagNotFound)?;
    Ok(text[start..start + len].trim().to_string())
}

/// All `<START>…<END>` blocks, or numbered lines when there are none,
/// with exact duplicates removed.
pub fn parse_variants(text: &str) -> Result<Vec<String>, ParseError> {
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(s) = rest.find(START_TAG) {
        let after = &rest[s + START_TAG.len()..];
        let Some(e) = after.find(END_TAG) else { break };
        let block = after[..e].trim();
        if !block.is_empty() {
            blocks.push(block.to_string());
        }
        rest = &after[e + END_TAG.len()..];
    }
    if blocks.is_empty() {
        blocks = numbered_list(text);
    }
    let mut seen = HashSet::new();
    blocks.retain(|b| seen.insert(b.clone()));
    if blocks.is_empty() {
        Err(ParseError::NoVariants)
    } else {
        Ok(blocks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{CandidateKind, Item};
    use proptest::prelude::*;

    fn fixture() -> (Catalog, CandidateSet) {
        let catalog = Catalog::new(vec![
            Item::new("a", "Alpha Mug", "Kitchen"),
            Item::new("b", "Bamboo Brush", "Home").sustainable(true),
            Item::new("c", "Cable", "Tech").with_attribute("len", "2m"),
        ])
        .unwrap();
        let set = CandidateSet::new("s", vec!["a".into(), "b".into(), "c".into()], CandidateKind::Filtered).unwrap();
        (catalog, set)
    }

    fn order(r: &RankedList) -> Vec<&str> {
        r.order.iter().map(String::as_str).collect()
    }

    #[test]
    fn index_array() {
        let (cat, set) = fixture();
        let r = parse_ranked_list("[3,1,2]", &set, &cat).unwrap();
        assert_eq!(order(&r), ["c", "a", "b"]);
        assert!(!r.repaired);
    }

    #[test]
    fn duplicate_index_is_repaired() {
        let (cat, set) = fixture();
        let r = parse_ranked_list("[1,1,2]", &set, &cat).unwrap();
        assert_eq!(order(&r), ["a", "b", "c"]);
        assert!(r.repaired);
    }

    #[test]
    fn array_inside_prose_and_ids() {
        let (cat, set) = fixture();
        let r = parse_ranked_list("Sure! Ranking: [\"b\", \"c\", \"a\"] hope it helps", &set, &cat).unwrap();
        assert_eq!(order(&r), ["b", "c", "a"]);
        assert!(!r.repaired);
    }

    #[test]
    fn eco_brackets_are_not_arrays() {
        let (cat, set) = fixture();
        let text = "1. Bamboo Brush | Home [ECO]\n2. c\n3. Alpha Mug";
        let r = parse_ranked_list(text, &set, &cat).unwrap();
        assert_eq!(order(&r), ["b", "c", "a"]);
        assert!(!r.repaired);
    }

    #[test]
    fn out_of_range_and_missing() {
        let (cat, set) = fixture();
        let r = parse_ranked_list("[9, 2]", &set, &cat).unwrap();
        assert_eq!(order(&r), ["b", "a", "c"]);
        assert!(r.repaired);
    }

    #[test]
    fn nothing_recognisable() {
        let (cat, set) = fixture();
        assert_eq!(parse_ranked_list("I cannot help", &set, &cat), Err(ParseError::Unparseable));
        assert_eq!(parse_ranked_list("[]", &set, &cat), Err(ParseError::Unparseable));
    }

    #[test]
    fn numbered_items() {
        assert_eq!(numbered_item("  3. foo bar "), Some("foo bar"));
        assert_eq!(numbered_item("12) x"), Some("x"));
        assert_eq!(numbered_item("1.5 apples"), None);
        assert_eq!(numbered_item("- bullet"), None);
        assert_eq!(numbered_item("4."), None);
    }

    #[test]
    fn tagged_extraction() {
        assert_eq!(extract_tagged("junk <START>new prompt<END> junk", START_TAG, END_TAG).unwrap(), "new prompt");
        assert_eq!(extract_tagged("<START>a<END><START>b<END>", START_TAG, END_TAG).unwrap(), "a");
        assert_eq!(extract_tagged("<END>x<START>", START_TAG, END_TAG), Err(ParseError::TagNotFound));
        assert_eq!(extract_tagged("<START>open", START_TAG, END_TAG), Err(ParseError::TagNotFound));
        assert_eq!(extract_tagged("", START_TAG, END_TAG), Err(ParseError::TagNotFound));
    }

    #[test]
    fn variants() {
        assert_eq!(
            parse_variants("<START>one<END>\n<START>two<END> <START>three<END>").unwrap(),
            ["one", "two", "three"]
        );
        assert_eq!(parse_variants("1. A\n2. B\n2. B").unwrap(), ["A", "B"]);
        assert_eq!(parse_variants(""), Err(ParseError::NoVariants));
        assert_eq!(parse_variants("<START>x<END><START>x<END>").unwrap(), ["x"]);
    }

    fn garbage() -> impl Strategy<Value = String> {
        let piece = prop_oneof![
            "[a-z ]{0,12}",
            (0u32..30).prop_map(|k| k.to_string()),
            Just("[".to_string()),
            Just("]".to_string()),
            Just(",".to_string()),
            Just("\n".to_string()),
            Just("\"b\"".to_string()),
            Just("Alpha Mug".to_string()),
            Just(". ".to_string()),
            Just("[ECO]".to_string()),
        ];
        proptest::collection::vec(piece, 0..30).prop_map(|v| v.concat())
    }

    proptest! {
        #[test]
        fn output_is_always_a_permutation(text in garbage()) {
            let (cat, set) = fixture();
            if let Ok(r) = parse_ranked_list(&text, &set, &cat) {
                prop_assert!(r.is_permutation_of(&set.candidates));
            }
        }
    }
}
