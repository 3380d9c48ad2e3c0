//! Bracketed trees, span sets, vocabulary building and corpus preprocessing.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use crate::error::{Error, Result};
use crate::grammar::{Sentence, Vocab};

/// Constituency tree of arbitrary arity as read from a treebank or parser output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RawTree {
    Node { label: String, children: Vec<RawTree> },
    Leaf(String),
}

impl RawTree {
    pub fn node(label: impl Into<String>, children: Vec<RawTree>) -> Self {
        RawTree::Node { label: label.into(), children }
    }

    pub fn leaf(token: impl Into<String>) -> Self {
        RawTree::Leaf(token.into())
    }

    /// Tokens in left-to-right order.
    pub fn leaves(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            RawTree::Leaf(t) => out.push(t),
            RawTree::Node { children, .. } => children.iter().for_each(|c| c.collect_leaves(out)),
        }
    }

    pub fn num_leaves(&self) -> usize {
        match self {
            RawTree::Leaf(_) => 1,
            RawTree::Node { children, .. } => children.iter().map(RawTree::num_leaves).sum(),
        }
    }

    pub fn label(&self) -> Option<&str> {
        match self {
            RawTree::Node { label, .. } => Some(label),
            RawTree::Leaf(_) => None,
        }
    }

    /// Single-line bracketed rendering; inverse of [`parse_bracketed`] for non-empty labels.
    pub fn to_bracketed(&self) -> String {
        let mut s = String::new();
        self.write_bracketed(&mut s);
        s
    }

    fn write_bracketed(&self, out: &mut String) {
        match self {
            RawTree::Leaf(t) => out.push_str(t),
            RawTree::Node { label, children } => {
                out.push('(');
                out.push_str(label);
                for (i, c) in children.iter().enumerate() {
                    if i > 0 || !label.is_empty() {
                        out.push(' ');
                    }
                    c.write_bracketed(out);
                }
                out.push(')');
            }
        }
    }
}

impl fmt::Display for RawTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_bracketed())
    }
}

/// Parses one PTB-style S-expression. The first token after `(` is the label; a
/// nested `(` right after the opening parenthesis means an empty label.
pub fn parse_bracketed(line: &str) -> Result<RawTree> {
    let bytes = line.as_bytes();
    let mut pos = skip_ws(bytes, 0);
    if pos >= bytes.len() {
        return Err(Error::Bracket { offset: pos, msg: "empty input".into() });
    }
    if bytes[pos] != b'(' {
        return Err(Error::Bracket { offset: pos, msg: "expected `(`".into() });
    }
    let tree = parse_node(bytes, line, &mut pos)?;
    let end = skip_ws(bytes, pos);
    if end != bytes.len() {
        return Err(Error::Bracket { offset: end, msg: "trailing input after tree".into() });
    }
    Ok(tree)
}

fn skip_ws(bytes: &[u8], mut pos: usize) -> usize {
    while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
        pos += 1;
    }
    pos
}

fn read_token<'a>(bytes: &[u8], text: &'a str, pos: &mut usize) -> &'a str {
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'(' && bytes[*pos] != b')' {
        *pos += 1;
    }
    &text[start..*pos]
}

// `pos` points at an opening parenthesis.
fn parse_node(bytes: &[u8], text: &str, pos: &mut usize) -> Result<RawTree> {
    let open = *pos;
    *pos = skip_ws(bytes, *pos + 1);
    let label = if *pos < bytes.len() && bytes[*pos] != b'(' && bytes[*pos] != b')' {
        read_token(bytes, text, pos).to_string()
    } else {
        String::new()
    };
    let mut children = Vec::new();
    loop {
        *pos = skip_ws(bytes, *pos);
        match bytes.get(*pos) {
            None => return Err(Error::Bracket { offset: open, msg: "unbalanced `(`".into() }),
            Some(b')') => {
                *pos += 1;
                break;
            }
            Some(b'(') => children.push(parse_node(bytes, text, pos)?),
            Some(_) => children.push(RawTree::Leaf(read_token(bytes, text, pos).to_string())),
        }
    }
    if children.is_empty() {
        return Err(Error::Bracket { offset: open, msg: "constituent without children".into() });
    }
    Ok(RawTree::Node { label, children })
}

/// Half-open word span `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start < end);
        Span { start, end }
    }

    pub fn width(&self) -> usize {
        self.end - self.start
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.start, self.end)
    }
}

/// Set of spans over a sentence of length `len`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SpanSet {
    pub len: usize,
    pub spans: BTreeSet<Span>,
}

impl SpanSet {
    pub fn new(len: usize) -> Self {
        SpanSet { len, spans: BTreeSet::new() }
    }

    pub fn from_pairs(len: usize, pairs: &[(usize, usize)]) -> Self {
        SpanSet { len, spans: pairs.iter().map(|&(s, e)| Span::new(s, e)).collect() }
    }

    pub fn insert(&mut self, span: Span) {
        debug_assert!(span.end <= self.len);
        self.spans.insert(span);
    }

    pub fn contains(&self, span: &Span) -> bool {
        self.spans.contains(span)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Span> {
        self.spans.iter()
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    /// Keeps spans of width ≥ 2, optionally dropping the whole-sentence span.
    pub fn nontrivial(&self, include_whole: bool) -> SpanSet {
        SpanSet {
            len: self.len,
            spans: self.spans.iter().filter(|s| s.width() >= 2 && (include_whole || s.width() < self.len)).copied().collect(),
        }
    }
}

/// One span per internal node, deduplicated, filtered by width.
pub fn tree_to_spans(tree: &RawTree, include_width_one: bool, include_whole: bool) -> SpanSet {
    let n = tree.num_leaves();
    let mut set = SpanSet::new(n);
    collect_spans(tree, 0, &mut set);
    set.spans.retain(|s| (include_width_one || s.width() >= 2) && (include_whole || s.width() < n));
    set
}

fn collect_spans(tree: &RawTree, start: usize, set: &mut SpanSet) -> usize {
    match tree {
        RawTree::Leaf(_) => start + 1,
        RawTree::Node { children, .. } => {
            let mut end = start;
            for c in children {
                end = collect_spans(c, end, set);
            }
            set.spans.insert(Span::new(start, end));
            end
        }
    }
}

/// PTB part-of-speech tags for punctuation.
pub const PTB_PUNCTUATION_TAGS: &[&str] = &["''", "``", ",", ".", ":", "-LRB-", "-RRB-", "#", "$"];

/// Preprocessing switches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreprocessOptions {
    /// Preterminal labels whose leaves are dropped.
    pub removed_tags: BTreeSet<String>,
    pub lowercase: bool,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        let mut removed_tags: BTreeSet<String> = PTB_PUNCTUATION_TAGS.iter().map(|s| s.to_string()).collect();
        removed_tags.insert("-NONE-".to_string());
        PreprocessOptions { removed_tags, lowercase: false }
    }
}

impl PreprocessOptions {
    /// No filtering at all.
    pub fn keep_all() -> Self {
        PreprocessOptions { removed_tags: BTreeSet::new(), lowercase: false }
    }
}

/// Removes leaves under removed tags and prunes constituents left without leaves.
/// Returns `None` when nothing remains.
pub fn filter_tree(tree: &RawTree, opts: &PreprocessOptions) -> Option<RawTree> {
    match tree {
        RawTree::Leaf(t) => Some(RawTree::Leaf(if opts.lowercase { t.to_lowercase() } else { t.clone() })),
        RawTree::Node { label, children } => {
            if opts.removed_tags.contains(label) && children.iter().all(|c| matches!(c, RawTree::Leaf(_))) {
                return None;
            }
            let kept: Vec<RawTree> = children.iter().filter_map(|c| filter_tree(c, opts)).collect();
            if kept.is_empty() {
                None
            } else {
                Some(RawTree::Node { label: label.clone(), children: kept })
            }
        }
    }
}

/// A preprocessed corpus line. `words` is empty for skipped lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusRecord {
    pub id: String,
    pub words: Vec<String>,
    pub sentence: Sentence,
    pub gold: Option<RawTree>,
}

impl CorpusRecord {
    /// True when the line had no tokens left after filtering.
    pub fn is_skipped(&self) -> bool {
        self.words.is_empty()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    fn skipped(id: String) -> Self {
        CorpusRecord { id, words: Vec::new(), sentence: Sentence(Vec::new()), gold: None }
    }
}

/// Filters a gold tree and maps its tokens through `vocab`.
pub fn preprocess(tree: &RawTree, vocab: &Vocab, opts: &PreprocessOptions, id: impl Into<String>) -> CorpusRecord {
    let id = id.into();
    match filter_tree(tree, opts) {
        None => CorpusRecord::skipped(id),
        Some(t) => {
            let words: Vec<String> = t.leaves().into_iter().map(str::to_string).collect();
            let sentence = Sentence(words.iter().map(|w| vocab.id_or_unk(w)).collect());
            CorpusRecord { id, words, sentence, gold: Some(t) }
        }
    }
}

/// Whitespace-tokenized raw sentence.
pub fn preprocess_raw(line: &str, vocab: &Vocab, opts: &PreprocessOptions, id: impl Into<String>) -> CorpusRecord {
    let words: Vec<String> = line.split_whitespace().map(|w| if opts.lowercase { w.to_lowercase() } else { w.to_string() }).collect();
    let sentence = Sentence(words.iter().map(|w| vocab.id_or_unk(w)).collect());
    CorpusRecord { id: id.into(), words, sentence, gold: None }
}

/// Keeps the `max_size` most frequent tokens (ties broken lexicographically), then the
/// unknown token.
pub fn build_vocab<'a, I, S>(sentences: I, max_size: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = S>,
    S: IntoIterator<Item = &'a str>,
{
    if max_size == 0 {
        return Err(Error::Param("vocabulary size must be at least 1".into()));
    }
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for s in sentences {
        for w in s {
            *freq.entry(w).or_default() += 1;
        }
    }
    if freq.is_empty() {
        return Err(Error::Input("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut entries: Vec<(&str, usize)> = freq.into_iter().collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    entries.truncate(max_size);
    Vocab::new(entries.into_iter().map(|(w, _)| w.to_string()))
}

/// One token per line.
pub fn write_vocab(vocab: &Vocab) -> String {
    let mut s = vocab.tokens().join("\n");
    s.push('\n');
    s
}

pub fn read_vocab(text: &str) -> Result<Vocab> {
    let tokens: Vec<&str> = text.lines().filter(|l| !l.is_empty() && !l.starts_with("# ")).collect();
    Vocab::new(tokens)
}

/// Input layout of a corpus file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    /// One bracketed tree per line.
    Trees,
    /// One whitespace-tokenized sentence per line.
    Raw,
}

impl CorpusFormat {
    /// Trees if the first non-comment, non-blank line starts with `(`.
    pub fn detect(text: &str) -> Self {
        match text.lines().map(str::trim_start).find(|l| !l.is_empty() && !l.starts_with("# ")) {
            Some(l) if l.starts_with('(') => CorpusFormat::Trees,
            _ => CorpusFormat::Raw,
        }
    }
}

/// Lines of a tree file; provenance lines (`# ...`) are dropped, blank lines become `None`.
pub fn read_tree_lines(text: &str) -> Result<Vec<Option<RawTree>>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with("# ") || line == "#" {
            continue;
        }
        if line.trim().is_empty() {
            out.push(None);
            continue;
        }
        let tree = parse_bracketed(line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        out.push(Some(tree));
    }
    Ok(out)
}

/// Loaded corpus: records aligned to the input lines plus the vocabulary used.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub vocab: Vocab,
    pub records: Vec<CorpusRecord>,
}

impl Corpus {
    /// Reads and preprocesses a corpus. Builds a vocabulary of `max_vocab` words when none
    /// is given.
    pub fn load(text: &str, format: CorpusFormat, vocab: Option<&Vocab>, max_vocab: usize, opts: &PreprocessOptions) -> Result<Self> {
        // filter first so vocabulary counts see preprocessed tokens only
        let filtered: Vec<(String, Option<RawTree>, Vec<String>)> = match format {
            CorpusFormat::Trees => read_tree_lines(text)?
                .into_iter()
                .enumerate()
                .map(|(i, t)| {
                    let ft = t.as_ref().and_then(|t| filter_tree(t, opts));
                    let words = ft.as_ref().map(|t| t.leaves().into_iter().map(str::to_string).collect()).unwrap_or_default();
                    ((i + 1).to_string(), ft, words)
                })
                .collect(),
            CorpusFormat::Raw => text
                .lines()
                .enumerate()
                .map(|(i, l)| {
                    let words = l.split_whitespace().map(|w| if opts.lowercase { w.to_lowercase() } else { w.to_string() }).collect();
                    ((i + 1).to_string(), None, words)
                })
                .collect(),
        };
        let vocab = match vocab {
            Some(v) => v.clone(),
            None => build_vocab(filtered.iter().map(|(_, _, w)| w.iter().map(String::as_str)), max_vocab)?,
        };
        let records = filtered
            .into_iter()
            .map(|(id, gold, words)| {
                let sentence = Sentence(words.iter().map(|w| vocab.id_or_unk(w)).collect());
                CorpusRecord { id, words, sentence, gold }
            })
            .collect();
        Ok(Corpus { vocab, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Sentence lengths after preprocessing (0 for skipped lines).
    pub fn lengths(&self) -> Vec<usize> {
        self.records.iter().map(CorpusRecord::len).collect()
    }

    /// Gold span sets (width ≥ 2, whole span included) where gold trees exist.
    pub fn gold_spans(&self) -> Vec<Option<SpanSet>> {
        self.records.iter().map(|r| r.gold.as_ref().map(|t| tree_to_spans(t, false, true))).collect()
    }
}
