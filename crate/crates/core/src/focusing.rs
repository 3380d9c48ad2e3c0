//! Focusing bias: span counts collected from parser trees, softmax span weights,
//! synthetic branching biases, and span-agreement statistics between parsers.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chart::SpanWeights;
use crate::corpus::{Span, SpanSet};
use crate::decode::ParseTree;
use crate::error::{Error, Result};

/// Span counts of one sentence: how many source trees contain each width-≥2 span.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SpanCounts {
    pub len: usize,
    /// Number of source trees aggregated.
    pub trees: usize,
    pub counts: BTreeMap<Span, u32>,
}

impl SpanCounts {
    pub fn get(&self, span: Span) -> u32 {
        self.counts.get(&span).copied().unwrap_or(0)
    }

    /// Adds another table over the same sentence.
    pub fn merge(&mut self, other: &SpanCounts) -> Result<()> {
        if self.len != other.len {
            return Err(Error::Input(format!("cannot merge counts over lengths {} and {}", self.len, other.len)));
        }
        self.trees += other.trees;
        for (s, c) in &other.counts {
            *self.counts.entry(*s).or_default() += c;
        }
        Ok(())
    }
}

/// Where a bias came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceDescriptor {
    pub name: String,
    /// Content hash of the source file (hex), or empty for generated sources.
    pub hash: String,
}

/// Per-sentence span counts for a corpus, aligned to corpus lines.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FocusingBias {
    pub sentences: Vec<SpanCounts>,
    pub sources: Vec<SourceDescriptor>,
}

impl FocusingBias {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Sentence-wise sum of two biases over the same corpus.
    pub fn merge(&self, other: &FocusingBias) -> Result<FocusingBias> {
        if self.len() != other.len() {
            return Err(Error::Alignment {
                line: self.len().min(other.len()) + 1,
                msg: format!("biases cover {} and {} sentences", self.len(), other.len()),
            });
        }
        let mut sentences = self.sentences.clone();
        for (i, (a, b)) in sentences.iter_mut().zip(&other.sentences).enumerate() {
            a.merge(b).map_err(|e| Error::Alignment { line: i + 1, msg: e.to_string() })?;
        }
        let mut sources = self.sources.clone();
        sources.extend(other.sources.iter().cloned());
        Ok(FocusingBias { sentences, sources })
    }

    /// Soft weights for every sentence (identity weights for sentences shorter than 2).
    pub fn weights(&self) -> Vec<SpanWeights> {
        self.sentences.iter().map(soft_weights).collect()
    }
}

/// Counts width-≥2 spans over trees of one sentence of length `n`.
pub fn count_spans(n: usize, trees: &[SpanSet]) -> Result<SpanCounts> {
    let mut out = SpanCounts { len: n, trees: trees.len(), counts: BTreeMap::new() };
    for (t, tree) in trees.iter().enumerate() {
        if tree.len != n {
            return Err(Error::Input(format!("tree {} covers {} words, sentence has {n}", t + 1, tree.len)));
        }
        for s in tree.iter().filter(|s| s.width() >= 2) {
            *out.counts.entry(*s).or_default() += 1;
        }
    }
    Ok(out)
}

/// Counts spans over several tree sources, each line-aligned to the corpus.
/// `lengths[i] == 0` marks a skipped corpus line; its tree slot must be empty.
pub fn count_corpus(lengths: &[usize], sources: &[Vec<Option<SpanSet>>]) -> Result<FocusingBias> {
    let mut sentences = Vec::with_capacity(lengths.len());
    for (f, src) in sources.iter().enumerate() {
        if src.len() != lengths.len() {
            return Err(Error::Alignment {
                line: src.len().min(lengths.len()) + 1,
                msg: format!("source {} has {} trees, corpus has {} sentences", f + 1, src.len(), lengths.len()),
            });
        }
    }
    for (i, &n) in lengths.iter().enumerate() {
        let mut trees = Vec::with_capacity(sources.len());
        for (f, src) in sources.iter().enumerate() {
            match (&src[i], n) {
                (None, 0) => {}
                (Some(t), _) if t.len == n => trees.push(t.clone()),
                (Some(t), _) => {
                    return Err(Error::Alignment {
                        line: i + 1,
                        msg: format!("source {} tree has {} words, sentence has {n}", f + 1, t.len),
                    })
                }
                (None, _) => return Err(Error::Alignment { line: i + 1, msg: format!("source {} has no tree", f + 1) }),
            }
        }
        let mut c = count_spans(n, &trees)?;
        c.trees = sources.len();
        sentences.push(c);
    }
    Ok(FocusingBias { sentences, sources: Vec::new() })
}

/// Softmax over all width-≥2 spans of the sentence of the span counts.
pub fn soft_weights(counts: &SpanCounts) -> SpanWeights {
    SpanWeights::softmax(counts.len, |s| counts.get(s) as f64)
}

/// Generator for synthetic bias trees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    Left,
    Right,
    /// Uniformly random binary bracketing from a seeded stream.
    Random(u64),
}

fn catalan_table(max: usize) -> Vec<f64> {
    let mut c = vec![1.0f64; max + 1];
    for k in 1..=max {
        c[k] = c[k - 1] * 2.0 * (2 * k - 1) as f64 / (k + 1) as f64;
    }
    c
}

/// Samples a bracketing uniformly among all binary bracketings of `n` words.
pub fn random_bracketing<R: Rng>(n: usize, rng: &mut R) -> ParseTree {
    let catalan = catalan_table(n);
    fn build<R: Rng>(i: usize, j: usize, catalan: &[f64], rng: &mut R) -> ParseTree {
        if j - i == 1 {
            return ParseTree::Leaf { pos: i, symbol: None };
        }
        // P(split at k) ∝ C(k-i-1) · C(j-k-1)
        let total = catalan[j - i - 1];
        let mut u = rng.random::<f64>() * total;
        let mut k = j - 1;
        for cand in i + 1..j {
            let w = catalan[cand - i - 1] * catalan[j - cand - 1];
            if u < w {
                k = cand;
                break;
            }
            u -= w;
        }
        ParseTree::Node { symbol: None, left: Box::new(build(i, k, catalan, rng)), right: Box::new(build(k, j, catalan, rng)) }
    }
    build(0, n, &catalan, rng)
}

/// One synthetic tree per sentence (`None` for skipped lines).
pub fn synthetic_trees(lengths: &[usize], kind: SyntheticKind) -> Vec<Option<ParseTree>> {
    let mut rng = match kind {
        SyntheticKind::Random(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };
    lengths
        .iter()
        .map(|&n| {
            if n == 0 {
                return None;
            }
            Some(match (kind, rng.as_mut()) {
                (SyntheticKind::Left, _) => ParseTree::left_branching(n),
                (SyntheticKind::Right, _) => ParseTree::right_branching(n),
                (SyntheticKind::Random(_), Some(r)) => random_bracketing(n, r),
                (SyntheticKind::Random(_), None) => unreachable!(),
            })
        })
        .collect()
}

/// Bias built from one synthetic tree per sentence.
pub fn synthetic_bias(lengths: &[usize], kind: SyntheticKind) -> FocusingBias {
    let trees: Vec<Option<SpanSet>> = synthetic_trees(lengths, kind).into_iter().map(|t| t.map(|t| t.spans())).collect();
    let mut bias = count_corpus(lengths, &[trees]).expect("synthetic trees match their lengths");
    let name = match kind {
        SyntheticKind::Left => "synthetic:left".to_string(),
        SyntheticKind::Right => "synthetic:right".to_string(),
        SyntheticKind::Random(seed) => format!("synthetic:random:{seed}"),
    };
    bias.sources.push(SourceDescriptor { name, hash: String::new() });
    bias
}

fn check_aligned(a: &[Option<SpanSet>], b: &[Option<SpanSet>]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Alignment { line: a.len().min(b.len()) + 1, msg: format!("{} vs {} sentences", a.len(), b.len()) });
    }
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        match (x, y) {
            (Some(x), Some(y)) if x.len != y.len => {
                return Err(Error::Alignment { line: i + 1, msg: format!("sentence lengths {} and {}", x.len, y.len) })
            }
            (Some(_), None) | (None, Some(_)) => return Err(Error::Alignment { line: i + 1, msg: "tree present on one side only".into() }),
            _ => {}
        }
    }
    Ok(())
}

/// Corpus-pooled intersection over union of width-≥2 spans (whole-sentence span included).
/// Two corpora with no spans at all have IoU 1.
pub fn iou(a: &[Option<SpanSet>], b: &[Option<SpanSet>]) -> Result<f64> {
    check_aligned(a, b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.iter().zip(b) {
        if let (Some(x), Some(y)) = (x, y) {
            let (x, y) = (x.nontrivial(true), y.nontrivial(true));
            let i = x.spans.intersection(&y.spans).count();
            inter += i;
            union += x.len() + y.len() - i;
        }
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Common spans of one parser subset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetOverlap {
    /// Parser indices in the subset.
    pub parsers: Vec<usize>,
    /// Spans shared by every parser in the subset, pooled over the corpus.
    pub common: usize,
    /// Of those, spans also in gold.
    pub in_gold: usize,
}

/// Aggregate over all subsets of one size.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeOverlap {
    pub size: usize,
    pub subsets: usize,
    pub mean_common: f64,
    pub mean_in_gold: f64,
    /// `Σ in_gold / Σ common`; NaN when nothing is common.
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommonSpanReport {
    pub subsets: Vec<SubsetOverlap>,
    pub by_size: Vec<SizeOverlap>,
}

/// For every non-empty parser subset, counts the spans all its parsers agree on and how
/// many of them are gold spans. Width-≥2 spans, whole-sentence span included.
pub fn common_span_gold_frequency(parsers: &[Vec<Option<SpanSet>>], gold: &[Option<SpanSet>]) -> Result<CommonSpanReport> {
    let k = parsers.len();
    if k == 0 {
        return Err(Error::Input("at least one parser is required".into()));
    }
    if k > 20 {
        return Err(Error::Input(format!("{k} parsers give too many subsets")));
    }
    for p in parsers {
        check_aligned(p, gold)?;
    }
    let mut subsets = Vec::new();
    for mask in 1u32..(1 << k) {
        let members: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let (mut common, mut in_gold) = (0, 0);
        for (s, g) in gold.iter().enumerate() {
            let Some(g) = g else { continue };
            let g = g.nontrivial(true);
            let mut shared = parsers[members[0]][s].as_ref().expect("aligned").nontrivial(true).spans;
            for &m in &members[1..] {
                let other = parsers[m][s].as_ref().expect("aligned");
                shared.retain(|sp| other.contains(sp));
            }
            common += shared.len();
            in_gold += shared.iter().filter(|sp| g.contains(sp)).count();
        }
        subsets.push(SubsetOverlap { parsers: members, common, in_gold });
    }
    let by_size = (1..=k)
        .map(|size| {
            let group: Vec<&SubsetOverlap> = subsets.iter().filter(|s| s.parsers.len() == size).collect();
            let c: usize = group.iter().map(|s| s.common).sum();
            let g: usize = group.iter().map(|s| s.in_gold).sum();
            SizeOverlap {
                size,
                subsets: group.len(),
                mean_common: c as f64 / group.len() as f64,
                mean_in_gold: g as f64 / group.len() as f64,
                precision: if c == 0 { f64::NAN } else { g as f64 / c as f64 },
            }
        })
        .collect();
    Ok(CommonSpanReport { subsets, by_size })
}

/// Renders a bias file. Each line is `<len> <k>` followed by `p,q:count` entries.
pub fn write_bias(bias: &FocusingBias) -> String {
    let mut out = String::new();
    for s in &bias.sentences {
        let _ = write!(out, "{} {}", s.len, s.trees);
        for (span, c) in &s.counts {
            if *c > 0 {
                let _ = write!(out, " {},{}:{}", span.start, span.end, c);
            }
        }
        out.push('\n');
    }
    out
}

/// Sidecar metadata naming each source and its hash.
pub fn write_bias_meta(bias: &FocusingBias) -> String {
    let mut out = String::new();
    for s in &bias.sources {
        let hash = if s.hash.is_empty() { "-" } else { &s.hash };
        let _ = writeln!(out, "source {} {}", s.name, hash);
    }
    out
}

/// Parses a bias file (and optionally its sidecar). Lines starting with `# ` are skipped.
pub fn read_bias(text: &str, meta: Option<&str>) -> Result<FocusingBias> {
    let mut sentences = Vec::new();
    for (ln, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        if line.starts_with("# ") || line == "#" {
            continue;
        }
        let mut fields = line.split_whitespace();
        let parse_usize = |s: Option<&str>, what: &str| -> Result<usize> {
            s.ok_or_else(|| Error::parse(ln, format!("missing {what}")))?.parse().map_err(|_| Error::parse(ln, format!("bad {what}")))
        };
        let len = parse_usize(fields.next(), "sentence length")?;
        let trees = parse_usize(fields.next(), "tree count")?;
        let mut counts = BTreeMap::new();
        for f in fields {
            let bad = || Error::parse(ln, format!("bad span entry {f:?}"));
            let (span, count) = f.split_once(':').ok_or_else(bad)?;
            let (p, q) = span.split_once(',').ok_or_else(bad)?;
            let (p, q, c): (usize, usize, u32) =
                (p.parse().map_err(|_| bad())?, q.parse().map_err(|_| bad())?, count.parse().map_err(|_| bad())?);
            if q > len || p + 2 > q {
                return Err(Error::parse(ln, format!("span ({p},{q}) is not a width-≥2 span of a length-{len} sentence")));
            }
            if c as usize > trees {
                return Err(Error::parse(ln, format!("count {c} exceeds tree count {trees}")));
            }
            if counts.insert(Span::new(p, q), c).is_some() {
                return Err(Error::parse(ln, format!("duplicate span ({p},{q})")));
            }
        }
        sentences.push(SpanCounts { len, trees, counts });
    }
    let mut sources = Vec::new();
    if let Some(meta) = meta {
        for (ln, line) in meta.lines().enumerate().map(|(i, l)| (i + 1, l)) {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 || f[0] != "source" {
                return Err(Error::parse(ln, format!("expected `source <name> <hash>`, found {line:?}")));
            }
            let hash = if f[2] == "-" { String::new() } else { f[2].to_string() };
            sources.push(SourceDescriptor { name: f[1].to_string(), hash });
        }
    }
    Ok(FocusingBias { sentences, sources })
}

/// Checks that a bias lines up with corpus sentence lengths.
pub fn check_bias_alignment(bias: &FocusingBias, lengths: &[usize]) -> Result<()> {
    if bias.len() != lengths.len() {
        return Err(Error::Alignment {
            line: bias.len().min(lengths.len()) + 1,
            msg: format!("bias has {} lines, corpus has {} sentences", bias.len(), lengths.len()),
        });
    }
    for (i, (s, &n)) in bias.sentences.iter().zip(lengths).enumerate() {
        if s.len != n {
            return Err(Error::Alignment { line: i + 1, msg: format!("bias length {} vs sentence length {n}", s.len) });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn left3() -> SpanSet {
        SpanSet::from_pairs(3, &[(0, 2), (0, 3)])
    }

    fn right3() -> SpanSet {
        SpanSet::from_pairs(3, &[(1, 3), (0, 3)])
    }

    #[test]
    fn counts_single_and_pair() {
        let c = count_spans(3, &[left3()]).unwrap();
        assert_eq!(c.counts, BTreeMap::from([(Span::new(0, 2), 1), (Span::new(0, 3), 1)]));
        let c = count_spans(3, &[left3(), right3()]).unwrap();
        assert_eq!(c.counts, BTreeMap::from([(Span::new(0, 2), 1), (Span::new(1, 3), 1), (Span::new(0, 3), 2)]));
        assert!(count_spans(4, &[left3()]).is_err());
    }

    #[test]
    fn width_one_spans_are_not_counted() {
        let mut t = left3();
        t.insert(Span::new(2, 3));
        let c = count_spans(3, &[t]).unwrap();
        assert_eq!(c.counts.len(), 2);
    }

    #[test]
    fn soft_weight_values() {
        let c = count_spans(3, &[left3(), right3()]).unwrap();
        let w = soft_weights(&c);
        let e = std::f64::consts::E;
        let z = e * e + 2.0 * e;
        assert!((w.log_weight(0, 3).exp() - e * e / z).abs() < 1e-12);
        assert!((w.log_weight(0, 3).exp() - 0.5761).abs() < 5e-5);
        assert!((w.log_weight(0, 2).exp() - 0.2119).abs() < 5e-5);
        assert!((w.log_weight(1, 3).exp() - 0.2119).abs() < 5e-5);
    }

    #[test]
    fn zero_counts_give_uniform_weights() {
        let c = SpanCounts { len: 5, trees: 0, counts: BTreeMap::new() };
        let w = soft_weights(&c);
        let k = w.spans().count();
        assert_eq!(k, 10);
        for s in w.spans() {
            assert!((w.log_weight(s.start, s.end).exp() - 0.1).abs() < 1e-15);
        }
        let c = SpanCounts { len: 2, trees: 0, counts: BTreeMap::new() };
        assert_eq!(soft_weights(&c).log_weight(0, 2), 0.0);
    }

    #[test]
    fn synthetic_shapes() {
        let b = synthetic_bias(&[4], SyntheticKind::Right);
        assert_eq!(b.sentences[0].counts.keys().copied().collect::<Vec<_>>(), vec![Span::new(0, 4), Span::new(1, 4), Span::new(2, 4)]);
        let b = synthetic_bias(&[4], SyntheticKind::Left);
        assert_eq!(b.sentences[0].counts.keys().copied().collect::<Vec<_>>(), vec![Span::new(0, 2), Span::new(0, 3), Span::new(0, 4)]);
        let r1 = write_bias(&synthetic_bias(&[5, 0, 7, 9], SyntheticKind::Random(5)));
        let r2 = write_bias(&synthetic_bias(&[5, 0, 7, 9], SyntheticKind::Random(5)));
        assert_eq!(r1, r2);
    }

    #[test]
    fn random_bracketing_is_roughly_uniform() {
        // 5 bracketings of 4 words, each should appear ~20% of the time
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut freq: BTreeMap<Vec<Span>, usize> = BTreeMap::new();
        for _ in 0..20000 {
            let t = random_bracketing(4, &mut rng);
            *freq.entry(t.spans().spans.into_iter().collect()).or_default() += 1;
        }
        assert_eq!(freq.len(), 5);
        for &c in freq.values() {
            assert!((c as f64 / 20000.0 - 0.2).abs() < 0.015, "{c}");
        }
    }

    #[test]
    fn iou_examples() {
        let a = vec![Some(left3())];
        let b = vec![Some(right3())];
        assert!((iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert!(iou(&a, &[Some(SpanSet::from_pairs(4, &[(0, 4)]))]).is_err());
        assert!(iou(&a, &[]).is_err());
    }

    #[test]
    fn common_spans_degenerate_cases() {
        let gold = vec![Some(left3()), Some(SpanSet::from_pairs(4, &[(0, 4), (1, 3)]))];
        let r = common_span_gold_frequency(&[gold.clone(), gold.clone()], &gold).unwrap();
        assert_eq!(r.subsets.len(), 3);
        assert!(r.subsets.iter().all(|s| s.common == 4 && s.in_gold == 4));
        let p = vec![Some(right3()), Some(SpanSet::from_pairs(4, &[(0, 4), (0, 2), (2, 4)]))];
        let r = common_span_gold_frequency(&[p], &gold).unwrap();
        assert_eq!(r.subsets[0].common, 5);
        assert_eq!(r.subsets[0].in_gold, 2);
    }

    #[test]
    fn bias_file_round_trip() {
        let a = synthetic_bias(&[3, 0, 5], SyntheticKind::Left);
        let b = synthetic_bias(&[3, 0, 5], SyntheticKind::Random(3));
        let m = a.merge(&b).unwrap();
        let text = write_bias(&m);
        let back = read_bias(&text, Some(&write_bias_meta(&m))).unwrap();
        assert_eq!(back, m);
        assert!(text.starts_with("3 2 "));
        assert!(matches!(read_bias("3 1 0,1:1\n", None), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(read_bias("3 1 0,2:2\n", None), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn corpus_alignment_errors_name_the_line() {
        let src = vec![Some(left3()), Some(SpanSet::from_pairs(4, &[(0, 4)]))];
        match count_corpus(&[3, 5], &[src]) {
            Err(Error::Alignment { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
