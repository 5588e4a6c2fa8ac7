//! ALD entity codes and region token ordering.
//!
//! An entity's code is the first `L` distinct tokens of its name, taken in
//! ascending order of how often each token occurs across all entity names.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::kb::{EntityRecord, KnowledgeBase};
use crate::mask::{BinaryMask, MaskError};
use crate::par;

pub const DEFAULT_CODE_LENGTH: usize = 4;

#[derive(Debug, Error)]
pub enum CodesError {
    #[error("entity {0} has an empty name")]
    EmptyName(String),
    #[error("vocab line {line}: duplicate token {token:?}")]
    DuplicateToken { line: usize, token: String },
    #[error("vocab line {line}: empty token")]
    EmptyToken { line: usize },
    #[error("character {0:?} is not in the vocab")]
    UncoveredChar(char),
    #[error("code length must be at least 1")]
    InvalidLength,
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// NFC, then lowercase.
pub fn normalize(text: &str) -> String {
    text.nfc().collect::<String>().to_lowercase()
}

/// Token strings and ids; the id of a token is its line index in the file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    max_chars: usize,
}

impl Vocab {
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self, CodesError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Vocab::default();
        for (line, t) in tokens.into_iter().enumerate() {
            let t = normalize(t.as_ref().trim());
            if t.is_empty() {
                return Err(CodesError::EmptyToken { line: line + 1 });
            }
            if v.ids.contains_key(&t) {
                return Err(CodesError::DuplicateToken { line: line + 1, token: t });
            }
            v.push(t);
        }
        Ok(v)
    }

    pub fn read(reader: impl BufRead) -> Result<Self, CodesError> {
        let lines = reader.lines().collect::<Result<Vec<_>, _>>()?;
        Self::from_tokens(lines)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CodesError> {
        let f = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(f))
    }

    /// Every distinct whitespace-separated word of `names`, sorted.
    pub fn from_words<'a>(names: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<String> = names
            .into_iter()
            .flat_map(|n| normalize(n).split_whitespace().map(str::to_string).collect::<Vec<_>>())
            .collect();
        let mut v = Vocab::default();
        for w in words {
            v.push(w);
        }
        v
    }

    fn push(&mut self, token: String) {
        self.max_chars = self.max_chars.max(token.chars().count());
        self.ids.insert(token.clone(), self.tokens.len() as u32);
        self.tokens.push(token);
    }

    /// Appends any character of `texts` with no single-character token,
    /// in code point order. Existing ids do not change.
    pub fn cover<'a>(&mut self, texts: impl IntoIterator<Item = &'a str>) -> usize {
        let missing: BTreeSet<char> = texts
            .into_iter()
            .flat_map(|t| normalize(t).chars().filter(|c| !c.is_whitespace()).collect::<Vec<_>>())
            .filter(|c| !self.ids.contains_key(&c.to_string()))
            .collect();
        let n = missing.len();
        for c in missing {
            self.push(c.to_string());
        }
        n
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        self.tokens.iter().map(|t| format!("{t}\n")).collect()
    }

    /// Greedy longest match within each whitespace-separated word.
    pub fn tokenize(&self, text: &str) -> Result<Vec<u32>, CodesError> {
        let norm = normalize(text);
        let mut out = Vec::new();
        for word in norm.split_whitespace() {
            let chars: Vec<char> = word.chars().collect();
            let mut i = 0;
            while i < chars.len() {
                let longest = self.max_chars.min(chars.len() - i);
                let hit = (1..=longest).rev().find_map(|n| {
                    let s: String = chars[i..i + n].iter().collect();
                    self.id(&s).map(|id| (id, n))
                });
                let (id, n) = hit.ok_or(CodesError::UncoveredChar(chars[i]))?;
                out.push(id);
                i += n;
            }
        }
        Ok(out)
    }
}

/// Token id to occurrence count across all entity names.
pub fn term_frequencies(kb: &KnowledgeBase, vocab: &Vocab) -> Result<BTreeMap<u32, u64>, CodesError> {
    par::map_reduce(
        kb.entities(),
        || Ok(BTreeMap::new()),
        |acc: Result<BTreeMap<u32, u64>, CodesError>, e| {
            let mut acc = acc?;
            for t in vocab.tokenize(&e.label)? {
                *acc.entry(t).or_insert(0) += 1;
            }
            Ok(acc)
        },
        |a, b| {
            let (mut a, b) = (a?, b?);
            for (t, n) in b {
                *a.entry(t).or_insert(0) += n;
            }
            Ok(a)
        },
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AldCode {
    pub entity_id: String,
    pub tokens: Vec<u32>,
    pub length: usize,
}

pub fn build_ald(
    entity: &EntityRecord,
    freqs: &BTreeMap<u32, u64>,
    vocab: &Vocab,
    length: usize,
) -> Result<AldCode, CodesError> {
    if length == 0 {
        return Err(CodesError::InvalidLength);
    }
    let mut distinct: Vec<u32> = Vec::new();
    for t in vocab.tokenize(&entity.label)? {
        if !distinct.contains(&t) {
            distinct.push(t);
        }
    }
    if distinct.is_empty() {
        return Err(CodesError::EmptyName(entity.entity_id.clone()));
    }
    // stable sort keeps first-occurrence order among equal frequencies
    distinct.sort_by_key(|t| freqs.get(t).copied().unwrap_or(0));
    distinct.truncate(length);
    Ok(AldCode {
        entity_id: entity.entity_id.clone(),
        tokens: distinct,
        length,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CodebookLine<'a> {
    pub entity_id: &'a str,
    pub strings: Vec<&'a str>,
    pub tokens: &'a [u32],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Collision {
    pub count: usize,
    pub entity_ids: Vec<String>,
    pub strings: Vec<String>,
    pub tokens: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub codes: usize,
    pub colliding_entities: usize,
    pub collisions: Vec<Collision>,
    pub entities: usize,
}

#[derive(Debug, Clone)]
pub struct Codebook {
    vocab: Vocab,
    codes: BTreeMap<String, AldCode>,
    reverse: BTreeMap<Vec<u32>, BTreeSet<String>>,
}

/// Builds codes for every entity. Characters the vocab cannot segment are
/// added to a copy of it first, so every name gets a code.
pub fn build_codebook(kb: &KnowledgeBase, vocab: &Vocab, length: usize) -> Result<Codebook, CodesError> {
    let mut vocab = vocab.clone();
    let added = vocab.cover(kb.iter().map(|e| e.label.as_str()));
    if added > 0 {
        log::info!("added {added} single-character tokens to cover entity names");
    }
    let freqs = term_frequencies(kb, &vocab)?;
    let built: Vec<Result<AldCode, CodesError>> = par::map(kb.entities(), |e| build_ald(e, &freqs, &vocab, length));
    let mut codes = BTreeMap::new();
    let mut reverse: BTreeMap<Vec<u32>, BTreeSet<String>> = BTreeMap::new();
    for code in built {
        let code = code?;
        reverse.entry(code.tokens.clone()).or_default().insert(code.entity_id.clone());
        codes.insert(code.entity_id.clone(), code);
    }
    Ok(Codebook { vocab, codes, reverse })
}

impl Codebook {
    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn code(&self, entity_id: &str) -> Option<&AldCode> {
        self.codes.get(entity_id)
    }

    /// Entities whose code is exactly `tokens`.
    pub fn lookup(&self, tokens: &[u32]) -> Option<&BTreeSet<String>> {
        self.reverse.get(tokens)
    }

    pub fn strings(&self, tokens: &[u32]) -> Vec<&str> {
        tokens.iter().map(|t| self.vocab.token(*t).unwrap_or("")).collect()
    }

    pub fn distinct_codes(&self) -> usize {
        self.reverse.len()
    }

    pub fn collisions(&self) -> CollisionReport {
        let collisions: Vec<Collision> = self
            .reverse
            .iter()
            .filter(|(_, ids)| ids.len() > 1)
            .map(|(tokens, ids)| Collision {
                count: ids.len(),
                entity_ids: ids.iter().cloned().collect(),
                strings: self.strings(tokens).into_iter().map(str::to_string).collect(),
                tokens: tokens.clone(),
            })
            .collect();
        CollisionReport {
            codes: self.reverse.len(),
            colliding_entities: collisions.iter().map(|c| c.count).sum(),
            collisions,
            entities: self.codes.len(),
        }
    }

    /// One JSON object per entity, in entity id order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for code in self.codes.values() {
            let line = CodebookLine {
                entity_id: &code.entity_id,
                strings: self.strings(&code.tokens),
                tokens: &code.tokens,
            };
            out.push_str(&serde_json::to_string(&line).expect("serializable"));
            out.push('\n');
        }
        out
    }

    /// Reads back a codebook file written by [`Codebook::to_jsonl`].
    pub fn from_jsonl(vocab: Vocab, text: &str, length: usize) -> Result<Self, serde_json::Error> {
        #[derive(Deserialize)]
        struct Line {
            entity_id: String,
            tokens: Vec<u32>,
        }
        let mut codes = BTreeMap::new();
        let mut reverse: BTreeMap<Vec<u32>, BTreeSet<String>> = BTreeMap::new();
        for l in text.lines().filter(|l| !l.trim().is_empty()) {
            let l: Line = serde_json::from_str(l)?;
            reverse.entry(l.tokens.clone()).or_default().insert(l.entity_id.clone());
            codes.insert(
                l.entity_id.clone(),
                AldCode {
                    entity_id: l.entity_id,
                    tokens: l.tokens,
                    length,
                },
            );
        }
        Ok(Codebook { vocab, codes, reverse })
    }
}

/// Regions ordered by area, largest first, placed after `patch_tokens`
/// image patch positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionTokenOrder {
    pub areas: Vec<u64>,
    pub order: Vec<usize>,
    pub patch_tokens: usize,
}

impl RegionTokenOrder {
    /// `(region index, sequence position)` pairs in sequence order.
    pub fn positions(&self) -> Vec<(usize, usize)> {
        self.order
            .iter()
            .enumerate()
            .map(|(i, r)| (*r, self.patch_tokens + i))
            .collect()
    }
}

/// Equal areas are ordered by first set pixel in column-major order; empty
/// masks go last, by index.
pub fn region_token_order(masks: &[BinaryMask], patch_tokens: usize) -> Result<RegionTokenOrder, CodesError> {
    if let Some(first) = masks.first() {
        for m in &masks[1..] {
            first.check_same_dims(m)?;
        }
    }
    let areas: Vec<u64> = masks.iter().map(BinaryMask::area).collect();
    let firsts: Vec<usize> = masks
        .iter()
        .map(|m| m.first_set_column_major().unwrap_or(usize::MAX))
        .collect();
    let mut order: Vec<usize> = (0..masks.len()).collect();
    order.sort_by(|&a, &b| areas[b].cmp(&areas[a]).then(firsts[a].cmp(&firsts[b])).then(a.cmp(&b)));
    Ok(RegionTokenOrder {
        areas,
        order,
        patch_tokens,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entity(id: &str, label: &str) -> EntityRecord {
        EntityRecord {
            entity_id: id.into(),
            label: label.into(),
            category: "location".into(),
            hypernyms: vec![],
            aliases: vec![],
            has_image: true,
        }
    }

    fn cities() -> KnowledgeBase {
        KnowledgeBase::from_records(vec![
            entity("Q60", "new york city"),
            entity("Q987", "new delhi"),
            entity("Q90", "paris"),
        ])
        .unwrap()
    }

    fn words(kb: &KnowledgeBase) -> Vocab {
        Vocab::from_words(kb.iter().map(|e| e.label.as_str()))
    }

    fn strs(v: &Vocab, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|i| v.token(*i).unwrap().to_string()).collect()
    }

    #[test]
    fn frequencies_hand_count() {
        let kb = cities();
        let v = words(&kb);
        let f = term_frequencies(&kb, &v).unwrap();
        let named: BTreeMap<String, u64> = f.iter().map(|(t, n)| (v.token(*t).unwrap().to_string(), *n)).collect();
        let expect: BTreeMap<String, u64> = [("new", 2), ("york", 1), ("city", 1), ("delhi", 1), ("paris", 1)]
            .into_iter()
            .map(|(k, n)| (k.to_string(), n))
            .collect();
        assert_eq!(named, expect);

        let empty = KnowledgeBase::from_records(vec![]).unwrap();
        assert!(term_frequencies(&empty, &v).unwrap().is_empty());
    }

    #[test]
    fn ald_breaks_ties_by_occurrence() {
        let kb = cities();
        let v = words(&kb);
        let f = term_frequencies(&kb, &v).unwrap();
        let c = build_ald(kb.get("Q60").unwrap(), &f, &v, 4).unwrap();
        assert_eq!(strs(&v, &c.tokens), ["york", "city", "new"]);
        let c = build_ald(kb.get("Q90").unwrap(), &f, &v, 4).unwrap();
        assert_eq!(strs(&v, &c.tokens), ["paris"]);
        let c = build_ald(kb.get("Q60").unwrap(), &f, &v, 2).unwrap();
        assert_eq!(strs(&v, &c.tokens), ["york", "city"]);
    }

    #[test]
    fn ald_dedups_repeated_tokens() {
        let kb = KnowledgeBase::from_records(vec![entity("Q1", "bora bora")]).unwrap();
        let v = words(&kb);
        let f = term_frequencies(&kb, &v).unwrap();
        assert_eq!(build_ald(kb.get("Q1").unwrap(), &f, &v, 4).unwrap().tokens.len(), 1);
    }

    #[test]
    fn codebook_lookup_and_collisions() {
        let kb = cities();
        let cb = build_codebook(&kb, &words(&kb), 4).unwrap();
        assert_eq!(cb.distinct_codes(), 3);
        assert!(cb.collisions().collisions.is_empty());
        for e in kb.iter() {
            let code = cb.code(&e.entity_id).unwrap();
            assert!(cb.lookup(&code.tokens).unwrap().contains(&e.entity_id));
        }

        let kb = KnowledgeBase::from_records(vec![entity("Q308", "Mercury"), entity("Q925", "Mercury")]).unwrap();
        let cb = build_codebook(&kb, &words(&kb), 4).unwrap();
        let r = cb.collisions();
        assert_eq!(r.codes, 1);
        assert_eq!(r.collisions.len(), 1);
        assert_eq!(r.collisions[0].count, 2);
        assert_eq!(r.collisions[0].strings, ["mercury"]);
    }

    #[test]
    fn codebook_jsonl_round_trip() {
        let kb = cities();
        let cb = build_codebook(&kb, &words(&kb), 4).unwrap();
        let text = cb.to_jsonl();
        assert!(text.starts_with("{\"entity_id\":\"Q60\",\"strings\":[\"york\",\"city\",\"new\"]"));
        let back = Codebook::from_jsonl(cb.vocab().clone(), &text, 4).unwrap();
        assert_eq!(back.to_jsonl(), text);
    }

    #[test]
    fn greedy_longest_match_and_char_fallback() {
        let mut v = Vocab::from_tokens(["new", "ne", "w", "york"]).unwrap();
        assert_eq!(v.tokenize("New York").unwrap(), vec![0, 3]);
        assert_eq!(v.tokenize("neww").unwrap(), vec![0, 2]);
        assert!(matches!(v.tokenize("newark"), Err(CodesError::UncoveredChar('a'))));
        let added = v.cover(["newark"]);
        assert_eq!(added, 5); // a, e, k, n, r
        assert_eq!(strs(&v, &v.tokenize("newark").unwrap()), ["new", "a", "r", "k"]);
    }

    #[test]
    fn normalization_is_nfc_lowercase() {
        let v = Vocab::from_tokens(["café"]).unwrap();
        // decomposed e + combining acute
        assert_eq!(v.tokenize("CAFE\u{301}").unwrap(), vec![0]);
    }

    #[test]
    fn vocab_rejects_duplicates() {
        assert!(matches!(
            Vocab::from_tokens(["a", "A"]),
            Err(CodesError::DuplicateToken { line: 2, .. })
        ));
        assert!(matches!(Vocab::from_tokens(["a", ""]), Err(CodesError::EmptyToken { line: 2 })));
    }

    fn region(h: usize, w: usize, pixels: &[(usize, usize)]) -> BinaryMask {
        BinaryMask::from_fn(h, w, |r, c| pixels.contains(&(r, c))).unwrap()
    }

    #[test]
    fn regions_by_area() {
        let a = region(4, 4, &[(0, 0), (0, 1), (0, 2), (0, 3), (1, 0)]);
        let b = BinaryMask::from_fn(4, 4, |r, c| r > 0 || c > 0 && c < 3).unwrap();
        let c = region(4, 4, &[(2, 0), (2, 1), (2, 2), (2, 3), (3, 0), (3, 1), (3, 2)]);
        let o = region_token_order(&[a, b, c], 0).unwrap();
        assert_eq!(o.areas, vec![5, 14, 7]);
        assert_eq!(o.order, vec![1, 2, 0]);
    }

    #[test]
    fn equal_areas_tie_on_column_major_first_pixel() {
        // first region starts at column 2, second at column 0 row 3
        let first = region(4, 4, &[(0, 2), (1, 2), (2, 2)]);
        let second = region(4, 4, &[(3, 0), (3, 1), (3, 2)]);
        let o = region_token_order(&[first, second], 0).unwrap();
        assert_eq!(o.order, vec![1, 0]);
    }

    #[test]
    fn single_region_and_patch_offset() {
        let o = region_token_order(&[region(2, 2, &[(0, 0)])], 256).unwrap();
        assert_eq!(o.order, vec![0]);
        assert_eq!(o.positions(), vec![(0, 256)]);
    }

    #[test]
    fn region_dims_must_match() {
        let err = region_token_order(&[region(2, 2, &[]), region(2, 3, &[])], 0).unwrap_err();
        assert!(matches!(err, CodesError::Mask(MaskError::DimensionMismatch { .. })));
    }
}
