//! Entity categories, category-classes, sentences, spans and BIO tag schemes.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// The nine medical entity categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum EntityCategory {
    Dis,
    Sym,
    Pro,
    Equ,
    Dru,
    Ite,
    Bod,
    Dep,
    Mic,
}

impl EntityCategory {
    pub const ALL: [EntityCategory; 9] = [
        EntityCategory::Dis,
        EntityCategory::Sym,
        EntityCategory::Pro,
        EntityCategory::Equ,
        EntityCategory::Dru,
        EntityCategory::Ite,
        EntityCategory::Bod,
        EntityCategory::Dep,
        EntityCategory::Mic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EntityCategory::Dis => "dis",
            EntityCategory::Sym => "sym",
            EntityCategory::Pro => "pro",
            EntityCategory::Equ => "equ",
            EntityCategory::Dru => "dru",
            EntityCategory::Ite => "ite",
            EntityCategory::Bod => "bod",
            EntityCategory::Dep => "dep",
            EntityCategory::Mic => "mic",
        }
    }
}

impl fmt::Display for EntityCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EntityCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EntityCategory::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::UnknownCategory(s.to_string()))
    }
}

/// Ordered, disjoint groups of categories covering all nine; one CRF is
/// trained per group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryClassPartition {
    classes: Vec<Vec<EntityCategory>>,
}

impl CategoryClassPartition {
    pub fn new(classes: Vec<Vec<EntityCategory>>) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::InvalidPartition(format!(
                "need at least 2 classes, got {}",
                classes.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for (i, class) in classes.iter().enumerate() {
            if class.is_empty() {
                return Err(Error::InvalidPartition(format!("class {i} is empty")));
            }
            for c in class {
                if !seen.insert(*c) {
                    return Err(Error::InvalidPartition(format!(
                        "category {c} appears in more than one class"
                    )));
                }
            }
        }
        if seen.len() != EntityCategory::ALL.len() {
            let missing: Vec<_> = EntityCategory::ALL
                .iter()
                .filter(|c| !seen.contains(c))
                .map(|c| c.name())
                .collect();
            return Err(Error::InvalidPartition(format!(
                "categories not covered: {}",
                missing.join(",")
            )));
        }
        Ok(Self { classes })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class(&self, i: usize) -> &[EntityCategory] {
        &self.classes[i]
    }

    pub fn classes(&self) -> &[Vec<EntityCategory>] {
        &self.classes
    }

    pub fn class_of(&self, category: EntityCategory) -> usize {
        self.classes
            .iter()
            .position(|c| c.contains(&category))
            .expect("partition covers every category")
    }

    /// Parses `sym|dis,pro,...` style text: classes separated by `|`,
    /// categories by `,`.
    pub fn parse(text: &str) -> Result<Self> {
        let classes = text
            .split('|')
            .map(|class| {
                class
                    .split(',')
                    .map(|c| c.trim().parse())
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(classes)
    }
}

impl fmt::Display for CategoryClassPartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, class) in self.classes.iter().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            for (j, c) in class.iter().enumerate() {
                if j > 0 {
                    f.write_str(",")?;
                }
                f.write_str(c.name())?;
            }
        }
        Ok(())
    }
}

impl Default for CategoryClassPartition {
    /// `sym` alone, then the other eight categories.
    fn default() -> Self {
        use EntityCategory::*;
        Self {
            classes: vec![vec![Sym], vec![Dis, Pro, Equ, Dru, Ite, Bod, Dep, Mic]],
        }
    }
}

/// A character-level sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sentence {
    chars: Vec<char>,
}

impl Sentence {
    pub fn new(text: &str) -> Self {
        Self {
            chars: text.chars().collect(),
        }
    }

    pub fn from_chars(chars: Vec<char>) -> Self {
        Self { chars }
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn text(&self) -> String {
        self.chars.iter().collect()
    }
}

/// An entity occurrence with inclusive token bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub category: EntityCategory,
}

impl EntitySpan {
    pub const fn new(start: usize, end: usize, category: EntityCategory) -> Self {
        Self {
            start,
            end,
            category,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn overlaps(&self, other: &EntitySpan) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn contains(&self, other: &EntitySpan) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

/// A sentence with its gold entity spans.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    sentence: Sentence,
    spans: BTreeSet<EntitySpan>,
}

impl LabeledExample {
    /// Validates span bounds and the nesting rule: an entity may only sit
    /// inside a `sym` entity, and entities of one category never cross.
    pub fn new(sentence: Sentence, spans: impl IntoIterator<Item = EntitySpan>) -> Result<Self> {
        if sentence.is_empty() {
            return Err(Error::InvalidData("empty sentence".into()));
        }
        let spans: BTreeSet<EntitySpan> = spans.into_iter().collect();
        let n = sentence.len();
        for s in &spans {
            if s.start > s.end || s.end >= n {
                return Err(Error::InvalidData(format!(
                    "span ({}, {}, {}) out of bounds for length {n}",
                    s.start, s.end, s.category
                )));
            }
        }
        let list: Vec<_> = spans.iter().copied().collect();
        for (i, a) in list.iter().enumerate() {
            for b in &list[i + 1..] {
                if !a.overlaps(b) {
                    continue;
                }
                let nested = a.contains(b) || b.contains(a);
                if nested {
                    let outer_ok = (a.contains(b) && a.category == EntityCategory::Sym)
                        || (b.contains(a) && b.category == EntityCategory::Sym);
                    if !outer_ok {
                        return Err(Error::InvalidData(format!(
                            "span ({}, {}, {}) nested with ({}, {}, {}) but only sym may contain other entities",
                            a.start, a.end, a.category, b.start, b.end, b.category
                        )));
                    }
                } else if a.category == b.category {
                    return Err(Error::InvalidData(format!(
                        "spans ({}, {}) and ({}, {}) of category {} partially overlap",
                        a.start, a.end, b.start, b.end, a.category
                    )));
                }
            }
        }
        Ok(Self { sentence, spans })
    }

    pub fn sentence(&self) -> &Sentence {
        &self.sentence
    }

    pub fn spans(&self) -> &BTreeSet<EntitySpan> {
        &self.spans
    }

    pub fn len(&self) -> usize {
        self.sentence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentence.is_empty()
    }

    /// Cuts the sentence to `max_chars` characters, dropping spans that do
    /// not fit entirely.
    pub fn truncated(&self, max_chars: usize) -> LabeledExample {
        if self.len() <= max_chars {
            return self.clone();
        }
        let chars = self.sentence.chars()[..max_chars].to_vec();
        let spans = self.spans.iter().filter(|s| s.end < max_chars).copied().collect();
        LabeledExample {
            sentence: Sentence::from_chars(chars),
            spans,
        }
    }
}

/// Counts spans per category across a corpus.
pub fn category_counts(examples: &[LabeledExample]) -> BTreeMap<EntityCategory, usize> {
    let mut counts: BTreeMap<EntityCategory, usize> =
        EntityCategory::ALL.iter().map(|&c| (c, 0)).collect();
    for ex in examples {
        for s in ex.spans() {
            *counts.get_mut(&s.category).unwrap() += 1;
        }
    }
    counts
}

/// One BIO tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    Outside,
    Begin(EntityCategory),
    Inside(EntityCategory),
    Padding,
}

/// BIO tag inventory of one category-class: `O`, then `B-c`, `I-c` for each
/// category, then the padding slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagScheme {
    class_id: usize,
    categories: Vec<EntityCategory>,
}

impl TagScheme {
    pub fn new(class_id: usize, categories: &[EntityCategory]) -> Self {
        Self {
            class_id,
            categories: categories.to_vec(),
        }
    }

    pub fn for_partition(partition: &CategoryClassPartition) -> Vec<TagScheme> {
        partition
            .classes()
            .iter()
            .enumerate()
            .map(|(i, c)| TagScheme::new(i, c))
            .collect()
    }

    pub fn class_id(&self) -> usize {
        self.class_id
    }

    pub fn categories(&self) -> &[EntityCategory] {
        &self.categories
    }

    /// Tag count including the padding slot: `2·|class| + 2`.
    pub fn num_tags(&self) -> usize {
        2 * self.categories.len() + 2
    }

    /// Tags a decoder may emit (everything but padding).
    pub fn num_real_tags(&self) -> usize {
        self.num_tags() - 1
    }

    pub fn pad_id(&self) -> usize {
        self.num_tags() - 1
    }

    pub fn contains(&self, category: EntityCategory) -> bool {
        self.categories.contains(&category)
    }

    pub fn tag(&self, id: usize) -> Tag {
        if id == 0 {
            Tag::Outside
        } else if id == self.pad_id() {
            Tag::Padding
        } else {
            let c = self.categories[(id - 1) / 2];
            if id % 2 == 1 {
                Tag::Begin(c)
            } else {
                Tag::Inside(c)
            }
        }
    }

    pub fn id(&self, tag: Tag) -> Option<usize> {
        let pos = |c: EntityCategory| self.categories.iter().position(|&x| x == c);
        match tag {
            Tag::Outside => Some(0),
            Tag::Padding => Some(self.pad_id()),
            Tag::Begin(c) => pos(c).map(|k| 2 * k + 1),
            Tag::Inside(c) => pos(c).map(|k| 2 * k + 2),
        }
    }

    pub fn tag_name(&self, id: usize) -> String {
        match self.tag(id) {
            Tag::Outside => "O".into(),
            Tag::Padding => "[PAD]".into(),
            Tag::Begin(c) => format!("B-{c}"),
            Tag::Inside(c) => format!("I-{c}"),
        }
    }
}

/// Tag ids of one class over `max_len` positions; positions at or past
/// `valid_len` hold the padding id.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TagSequence {
    class_id: usize,
    ids: Vec<usize>,
    valid_len: usize,
}

impl TagSequence {
    /// Pads `valid` up to `max_len` with `pad_id`.
    pub fn new(class_id: usize, valid: &[usize], max_len: usize, pad_id: usize) -> Self {
        assert!(valid.len() <= max_len, "tag sequence longer than max_len");
        let mut ids = vec![pad_id; max_len];
        ids[..valid.len()].copy_from_slice(valid);
        Self {
            class_id,
            ids,
            valid_len: valid.len(),
        }
    }

    pub fn class_id(&self) -> usize {
        self.class_id
    }

    pub fn valid_len(&self) -> usize {
        self.valid_len
    }

    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    /// Tags of the `valid_len` real positions.
    pub fn valid(&self) -> &[usize] {
        &self.ids[..self.valid_len]
    }

    /// All `max_len` ids, padding included.
    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// Checks the padding tail and BIO well-formedness.
    pub fn is_well_formed(&self, scheme: &TagScheme) -> bool {
        let pad = scheme.pad_id();
        if self.ids[self.valid_len..].iter().any(|&t| t != pad) {
            return false;
        }
        let mut prev = Tag::Outside;
        for &id in self.valid() {
            if id >= pad {
                return false;
            }
            let tag = scheme.tag(id);
            if let Tag::Inside(c) = tag {
                if prev != Tag::Begin(c) && prev != Tag::Inside(c) {
                    return false;
                }
            }
            prev = tag;
        }
        true
    }
}

/// Renders one category-class of an example as a BIO tag layer.
///
/// Spans outside the class are ignored. Overlapping in-class spans are
/// resolved longest first, ties to the smaller start.
pub fn project_to_class_tags(
    example: &LabeledExample,
    scheme: &TagScheme,
    max_len: usize,
) -> TagSequence {
    let n = example.len();
    let mut in_class: Vec<EntitySpan> = example
        .spans()
        .iter()
        .filter(|s| scheme.contains(s.category))
        .copied()
        .collect();
    in_class.sort_by(|a, b| b.len().cmp(&a.len()).then(a.start.cmp(&b.start)));
    let mut tags = vec![0usize; n];
    let mut taken = vec![false; n];
    for s in in_class {
        if taken[s.start..=s.end].iter().any(|&t| t) {
            continue;
        }
        tags[s.start] = scheme.id(Tag::Begin(s.category)).unwrap();
        for t in &mut tags[s.start + 1..=s.end] {
            *t = scheme.id(Tag::Inside(s.category)).unwrap();
        }
        taken[s.start..=s.end].iter_mut().for_each(|t| *t = true);
    }
    TagSequence::new(scheme.class_id(), &tags, max_len.max(n), scheme.pad_id())
}

/// Spans read from a tag layer, plus the number of orphan `I-c` tags that
/// had to open a new span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractedSpans {
    pub spans: BTreeSet<EntitySpan>,
    pub repairs: usize,
}

/// Reads maximal `B-c (I-c)*` runs. An `I-c` without a compatible
/// predecessor opens a new span.
pub fn extract_spans_with_repairs(tags: &TagSequence, scheme: &TagScheme) -> ExtractedSpans {
    let mut spans = BTreeSet::new();
    let mut repairs = 0;
    let mut open: Option<(usize, EntityCategory)> = None;
    let valid = tags.valid();
    for (p, &id) in valid.iter().enumerate() {
        match scheme.tag(id) {
            Tag::Begin(c) => {
                if let Some((start, oc)) = open.take() {
                    spans.insert(EntitySpan::new(start, p - 1, oc));
                }
                open = Some((p, c));
            }
            Tag::Inside(c) => match open {
                Some((_, oc)) if oc == c => {}
                _ => {
                    if let Some((start, oc)) = open.take() {
                        spans.insert(EntitySpan::new(start, p - 1, oc));
                    }
                    repairs += 1;
                    open = Some((p, c));
                }
            },
            Tag::Outside | Tag::Padding => {
                if let Some((start, oc)) = open.take() {
                    spans.insert(EntitySpan::new(start, p - 1, oc));
                }
            }
        }
    }
    if let Some((start, oc)) = open {
        spans.insert(EntitySpan::new(start, valid.len() - 1, oc));
    }
    ExtractedSpans { spans, repairs }
}

pub fn extract_spans(tags: &TagSequence, scheme: &TagScheme) -> BTreeSet<EntitySpan> {
    extract_spans_with_repairs(tags, scheme).spans
}

/// Character vocabulary. Ids 0..4 are reserved for `[PAD]`, `[UNK]`,
/// `[CLS]` and `[SEP]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    chars: Vec<char>,
    index: BTreeMap<char, u32>,
}

impl Vocab {
    pub const PAD: u32 = 0;
    pub const UNK: u32 = 1;
    pub const CLS: u32 = 2;
    pub const SEP: u32 = 3;
    pub const RESERVED: usize = 4;

    /// Builds a vocabulary from the characters of `examples`, in order of
    /// first appearance after sorting.
    pub fn build<'a>(examples: impl IntoIterator<Item = &'a LabeledExample>) -> Self {
        let mut set = BTreeSet::new();
        for ex in examples {
            set.extend(ex.sentence().chars().iter().copied());
        }
        Self::from_chars(set.into_iter().collect())
    }

    /// `chars` are the non-reserved entries in id order.
    pub fn from_chars(chars: Vec<char>) -> Self {
        let index = chars
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, (i + Self::RESERVED) as u32))
            .collect();
        Self { chars, index }
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    /// Total size including the reserved ids.
    pub fn len(&self) -> usize {
        self.chars.len() + Self::RESERVED
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, c: char) -> u32 {
        self.index.get(&c).copied().unwrap_or(Self::UNK)
    }

    /// Character ids without markers.
    pub fn encode(&self, sentence: &Sentence) -> Vec<u32> {
        sentence.chars().iter().map(|&c| self.id(c)).collect()
    }
}

/// Shuffles with `seed` and splits 14:3:3 into train, dev and test.
pub fn split_corpus(
    examples: &[LabeledExample],
    seed: u64,
) -> (Vec<LabeledExample>, Vec<LabeledExample>, Vec<LabeledExample>) {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = examples.len();
    let n_train = n * 14 / 20;
    let n_dev = n * 3 / 20;
    let pick = |idx: &[usize]| idx.iter().map(|&i| examples[i].clone()).collect::<Vec<_>>();
    (
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_dev]),
        pick(&order[n_train + n_dev..]),
    )
}
