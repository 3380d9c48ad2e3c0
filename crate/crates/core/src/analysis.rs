//! Evaluation metrics and diagnostics: S-F1, rule diversity and frequency, NLL/F1
//! correlation, and the single-preterminal flipped-pair construction.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::chart::ChartEngine;
use crate::chart::SpanWeights;
use crate::corpus::{RawTree, SpanSet};
use crate::decode::{viterbi, UNLABELED};
use crate::error::{Error, Result};
use crate::grammar::{random_init, Grammar, Sentence, SymbolInventory, Vocab};

/// Unlabeled F1 (percent) after dropping width-1 and whole-sentence spans.
/// Both sets empty gives 100; an empty prediction has precision 1.
pub fn sentence_f1(pred: &SpanSet, gold: &SpanSet) -> Result<f64> {
    if pred.len != gold.len {
        return Err(Error::Input(format!("prediction covers {} words, gold covers {}", pred.len, gold.len)));
    }
    let (p, g) = (pred.nontrivial(false), gold.nontrivial(false));
    if p.is_empty() && g.is_empty() {
        return Ok(100.0);
    }
    let hit = p.spans.intersection(&g.spans).count() as f64;
    let precision = if p.is_empty() { 1.0 } else { hit / p.len() as f64 };
    let recall = if g.is_empty() { 1.0 } else { hit / g.len() as f64 };
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(100.0 * 2.0 * precision * recall / (precision + recall))
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len();
    if n == 0 {
        return MeanStd { mean: f64::NAN, std: f64::NAN, n };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    MeanStd { mean, std: var.sqrt(), n }
}

pub const SF1_CONFIG: &str = "unlabeled spans; width-1 and whole-sentence spans removed; macro average over sentences";

/// Corpus S-F1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// `None` for lines without a gold tree.
    pub per_sentence: Vec<Option<f64>>,
    pub summary: MeanStd,
    pub skipped: usize,
    pub config: String,
}

/// Macro-averaged sentence F1. Lines without gold are skipped; a gold line without a
/// prediction is an alignment error.
pub fn corpus_s_f1(pred: &[Option<SpanSet>], gold: &[Option<SpanSet>]) -> Result<EvalReport> {
    if pred.len() != gold.len() {
        return Err(Error::Alignment {
            line: pred.len().min(gold.len()) + 1,
            msg: format!("{} predicted trees, {} gold trees", pred.len(), gold.len()),
        });
    }
    let mut per_sentence = Vec::with_capacity(gold.len());
    let mut skipped = 0;
    for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
        match (p, g) {
            (_, None) => {
                skipped += 1;
                per_sentence.push(None);
            }
            (None, Some(_)) => return Err(Error::Alignment { line: i + 1, msg: "no predicted tree".into() }),
            (Some(p), Some(g)) => {
                let f = sentence_f1(p, g).map_err(|e| Error::Alignment { line: i + 1, msg: e.to_string() })?;
                per_sentence.push(Some(f));
            }
        }
    }
    let scored: Vec<f64> = per_sentence.iter().flatten().copied().collect();
    Ok(EvalReport { summary: mean_std(&scored), per_sentence, skipped, config: SF1_CONFIG.to_string() })
}

/// Mean ± std of corpus S-F1 across runs.
pub fn across_runs(reports: &[EvalReport]) -> MeanStd {
    mean_std(&reports.iter().map(|r| r.summary.mean).collect::<Vec<_>>())
}

fn is_preterminal(t: &RawTree) -> bool {
    matches!(t, RawTree::Node { children, .. } if children.len() == 1 && matches!(children[0], RawTree::Leaf(_)))
}

fn check_label(label: &str) -> Result<()> {
    if label.is_empty() || label == UNLABELED {
        return Err(Error::Input("tree is unlabeled; decode with the Viterbi (cyk) decoder to get rule labels".into()));
    }
    Ok(())
}

/// Rules of one tree: `(parent, children)` for nodes over constituents, and
/// `(preterminal, [word])` for preterminals when `lexical` is set.
fn tree_rules(tree: &RawTree, lexical: bool, out: &mut Vec<(String, Vec<String>)>) -> Result<()> {
    let RawTree::Node { label, children } = tree else { return Ok(()) };
    check_label(label)?;
    if is_preterminal(tree) {
        if lexical {
            let RawTree::Leaf(w) = &children[0] else { unreachable!() };
            out.push((label.clone(), vec![w.clone()]));
        }
        return Ok(());
    }
    let mut kids = Vec::with_capacity(children.len());
    for c in children {
        match c {
            RawTree::Node { label, .. } => {
                check_label(label)?;
                kids.push(label.clone());
            }
            RawTree::Leaf(w) => kids.push(w.clone()),
        }
    }
    out.push((label.clone(), kids));
    for c in children {
        tree_rules(c, lexical, out)?;
    }
    Ok(())
}

/// Number of distinct rules used in a tree.
pub fn unique_rules(tree: &RawTree, lexical: bool) -> Result<usize> {
    let mut rules = Vec::new();
    tree_rules(tree, lexical, &mut rules)?;
    Ok(rules.into_iter().collect::<BTreeSet<_>>().len())
}

/// Mean number of unique rules per tree, for each sentence length.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiversityRow {
    pub length: usize,
    pub trees: usize,
    pub mean_unique_rules: f64,
}

pub fn rule_diversity(trees: &[RawTree], lexical: bool) -> Result<Vec<DiversityRow>> {
    let mut by_len: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for t in trees {
        let u = unique_rules(t, lexical)?;
        let e = by_len.entry(t.num_leaves()).or_default();
        e.0 += 1;
        e.1 += u;
    }
    Ok(by_len
        .into_iter()
        .map(|(length, (trees, total))| DiversityRow { length, trees, mean_unique_rules: total as f64 / trees as f64 })
        .collect())
}

/// Binary-rule occurrence counts, most frequent first (ties by rule text).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrequencyProfile {
    pub rules: Vec<(String, usize)>,
    pub total: usize,
}

impl FrequencyProfile {
    /// Share of occurrences taken by the `k` most frequent rules.
    pub fn top_share(&self, k: usize) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.rules.iter().take(k).map(|(_, c)| c).sum::<usize>() as f64 / self.total as f64
    }
}

/// Counts every binary rule occurrence (a node with two constituent children).
pub fn rule_frequency_profile(trees: &[RawTree]) -> Result<FrequencyProfile> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut rules = Vec::new();
    for t in trees {
        rules.clear();
        tree_rules(t, false, &mut rules)?;
        for (parent, kids) in rules.drain(..) {
            if kids.len() == 2 {
                *counts.entry(format!("{parent} -> {} {}", kids[0], kids[1])).or_default() += 1;
            }
        }
    }
    let total = counts.values().sum();
    let mut rules: Vec<(String, usize)> = counts.into_iter().collect();
    rules.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(FrequencyProfile { rules, total })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Correlation {
    pub r: f64,
    /// Two-sided, from a t distribution with n−2 degrees of freedom.
    pub p_value: f64,
    pub n: usize,
}

/// Pearson correlation between per-run NLL and S-F1.
pub fn correlate_nll_f1(nll: &[f64], f1: &[f64]) -> Result<Correlation> {
    if nll.len() != f1.len() {
        return Err(Error::Input(format!("{} NLL values, {} F1 values", nll.len(), f1.len())));
    }
    let n = nll.len();
    if n < 3 {
        return Err(Error::Input(format!("correlation needs at least 3 runs, got {n}")));
    }
    let (mx, my) = (nll.iter().sum::<f64>() / n as f64, f1.iter().sum::<f64>() / n as f64);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in nll.iter().zip(f1) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Param("correlation is undefined: a variable has zero variance".into()));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p_value = if r.abs() == 1.0 {
        0.0
    } else if df == 0.0 {
        1.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        (2.0 * (1.0 - dist.cdf(t.abs()))).min(1.0)
    };
    Ok(Correlation { r, p_value, n })
}

/// Two grammars identical except for `p(N_i → N_j T)` and `p(N_i → T N_j)`, which are
/// swapped between them.
#[derive(Debug, Clone)]
pub struct SoaPair {
    pub base: Grammar,
    pub flipped: Grammar,
    pub i: usize,
    pub j: usize,
}

/// Places `a` on `N_i → N_j T` and `b` on `N_i → T N_j` (T is preterminal `t`), scaling the
/// other rules of `N_i` to fill the remaining mass.
pub fn set_flip_pair(grammar: &Grammar, i: usize, j: usize, t: usize, a: f64, b: f64) -> Result<Grammar> {
    let d = grammar.dims();
    if i >= d.nonterminals || j >= d.nonterminals || t >= d.preterminals {
        return Err(Error::Param(format!("pair ({i},{j}) with preterminal {t} is out of range")));
    }
    if !(a >= 0.0 && b >= 0.0 && a + b <= 1.0 + 1e-12) {
        return Err(Error::Param(format!("a={a}, b={b} cannot be placed in a normalized distribution")));
    }
    let ts = d.nonterminals + t;
    let (ka, kb) = (d.binary_index(i, j, ts), d.binary_index(i, ts, j));
    let row_start = d.binary_index(i, 0, 0);
    let row_len = d.symbols() * d.symbols();
    let tables = grammar.log_tables();
    let rest: f64 = (row_start..row_start + row_len).filter(|&k| k != ka && k != kb).map(|k| tables.binary[k].exp()).sum();
    let remaining = (1.0 - (a + b)).max(0.0);
    if remaining > 0.0 && rest == 0.0 {
        return Err(Error::Param(format!("NT-{i} has no other rules to carry mass {remaining}")));
    }
    let scale = if remaining > 0.0 { remaining / rest } else { 0.0 };
    Ok(grammar.with_tables(|tb| {
        for k in row_start..row_start + row_len {
            tb.binary[k] = if k == ka {
                a.ln()
            } else if k == kb {
                b.ln()
            } else if scale == 0.0 {
                f64::NEG_INFINITY
            } else {
                tb.binary[k] + scale.ln()
            };
        }
    }))
}

/// Random single-preterminal base grammar with the flipped pair at `(a, b)` and `(b, a)`.
pub fn build_soa_pair(seed: u64, nonterminals: usize, vocab: Vocab, a: f64, b: f64, pair: (usize, usize)) -> Result<SoaPair> {
    let inv = Arc::new(SymbolInventory::new(nonterminals, 1, vocab)?);
    let g = random_init(inv, seed, 1.0)?;
    let (i, j) = pair;
    let base = set_flip_pair(&g, i, j, 0, a, b)?;
    let flipped = set_flip_pair(&g, i, j, 0, b, a)?;
    Ok(SoaPair { base, flipped, i, j })
}

/// Checks the pair invariants: one preterminal, shared inventory, all rules outside the
/// flipped pair bit-identical, and equal pair sums.
pub fn check_soa_pair(pair: &SoaPair) -> Result<()> {
    let (g, h) = (&pair.base, &pair.flipped);
    let d = g.dims();
    if d.preterminals != 1 {
        return Err(Error::Input(format!("flipped-pair check needs one preterminal, found {}", d.preterminals)));
    }
    if g.inventory() != h.inventory() {
        return Err(Error::Input("grammars use different symbol inventories".into()));
    }
    let t = d.nonterminals;
    let (ka, kb) = (d.binary_index(pair.i, pair.j, t), d.binary_index(pair.i, t, pair.j));
    let (x, y) = (g.log_tables(), h.log_tables());
    let same = |p: &f64, q: &f64| p.to_bits() == q.to_bits();
    let outside_pair = x.root.iter().zip(&y.root).all(|(p, q)| same(p, q))
        && x.lexical.iter().zip(&y.lexical).all(|(p, q)| same(p, q))
        && x.binary.iter().zip(&y.binary).enumerate().all(|(k, (p, q))| k == ka || k == kb || same(p, q));
    if !outside_pair {
        return Err(Error::Input("grammars differ outside the flipped pair".into()));
    }
    let (sa, sb) = (x.binary[ka].exp() + x.binary[kb].exp(), y.binary[ka].exp() + y.binary[kb].exp());
    if (sa - sb).abs() > 1e-12 {
        return Err(Error::Input(format!("flipped pair sums differ: {sa} vs {sb}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SoaReport {
    pub sentences: usize,
    pub max_abs_delta_logp: f64,
    /// Sentences whose Viterbi bracketings differ between the two grammars.
    pub differing_parses: usize,
    /// Number of (grammar, nonterminal, span) triples where α was defined.
    pub alpha_evaluated: usize,
    pub max_abs_alpha_minus_one: f64,
}

/// `log α = log p(T→w_p) + I_j(p+1,q) − I_j(p,q−1) − log p(T→w_{q−1})` over every span of
/// width ≥ 3 and nonterminal `j` where both inside terms are positive.
fn alpha_deviation(grammar: &Grammar, sentence: &Sentence, engine: &ChartEngine) -> Result<(usize, f64)> {
    let n = sentence.len();
    let chart = engine.weighted_inside(sentence, &SpanWeights::off(n))?;
    let w = sentence.tokens();
    let (mut count, mut worst) = (0usize, 0.0f64);
    for width in 3..=n {
        for p in 0..=n - width {
            let q = p + width;
            for j in 0..grammar.dims().nonterminals {
                let (num, den) = (chart.get(p + 1, q, j), chart.get(p, q - 1, j));
                if num == f64::NEG_INFINITY || den == f64::NEG_INFINITY {
                    continue;
                }
                let log_alpha = grammar.lexical_logp(0, w[p]) + num - den - grammar.lexical_logp(0, w[q - 1]);
                count += 1;
                worst = worst.max((log_alpha.exp() - 1.0).abs());
            }
        }
    }
    Ok((count, worst))
}

/// Compares sentence probabilities, Viterbi bracketings and α across a flipped pair.
pub fn verify_soa(pair: &SoaPair, sentences: &[Sentence]) -> Result<SoaReport> {
    check_soa_pair(pair)?;
    let (eg, ef) = (ChartEngine::new(&pair.base), ChartEngine::new(&pair.flipped));
    let mut report = SoaReport {
        sentences: sentences.len(),
        max_abs_delta_logp: 0.0,
        differing_parses: 0,
        alpha_evaluated: 0,
        max_abs_alpha_minus_one: 0.0,
    };
    for s in sentences {
        let (lg, lf) = (eg.inside(s)?.log_score, ef.inside(s)?.log_score);
        let delta = if lg == lf { 0.0 } else { (lg - lf).abs() };
        report.max_abs_delta_logp = report.max_abs_delta_logp.max(delta);
        if lg.is_finite() && lf.is_finite() && viterbi(s, &pair.base)?.tree.spans() != viterbi(s, &pair.flipped)?.tree.spans() {
            report.differing_parses += 1;
        }
        for (g, e) in [(&pair.base, &eg), (&pair.flipped, &ef)] {
            let (c, w) = alpha_deviation(g, s, e)?;
            report.alpha_evaluated += c;
            report.max_abs_alpha_minus_one = report.max_abs_alpha_minus_one.max(w);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_bracketed;
    use crate::grammar::validate;

    #[test]
    fn f1_examples() {
        let g = SpanSet::from_pairs(5, &[(0, 2), (1, 5), (2, 5), (3, 5)]);
        let p = SpanSet::from_pairs(5, &[(0, 2), (2, 5)]);
        assert!((sentence_f1(&p, &g).unwrap() - 66.6667).abs() < 5e-5);
        assert_eq!(sentence_f1(&g, &g).unwrap(), 100.0);
        let left = SpanSet::from_pairs(3, &[(0, 2), (0, 3)]);
        let right = SpanSet::from_pairs(3, &[(1, 3), (0, 3)]);
        assert_eq!(sentence_f1(&left, &right).unwrap(), 0.0);
        assert_eq!(sentence_f1(&SpanSet::from_pairs(2, &[(0, 2)]), &SpanSet::new(2)).unwrap(), 100.0);
        assert!(sentence_f1(&left, &g).is_err());
    }

    #[test]
    fn corpus_f1_fixture() {
        let g3 = SpanSet::from_pairs(3, &[(0, 2), (0, 3)]);
        let r3 = SpanSet::from_pairs(3, &[(1, 3), (0, 3)]);
        let g5 = SpanSet::from_pairs(5, &[(0, 2), (1, 5), (2, 5), (3, 5)]);
        let p5 = SpanSet::from_pairs(5, &[(0, 2), (2, 5)]);
        let pred = vec![Some(g3.clone()), Some(r3), Some(p5), Some(g5.clone())];
        let gold = vec![Some(g3.clone()), Some(g3), Some(g5.clone()), Some(g5)];
        let r = corpus_s_f1(&pred, &gold).unwrap();
        assert!((r.summary.mean - 66.6667).abs() < 5e-5);
        let same = corpus_s_f1(&gold, &gold).unwrap();
        assert_eq!((same.summary.mean, same.summary.std), (100.0, 0.0));
        assert_eq!(across_runs(&[same.clone(), same]).std, 0.0);
    }

    #[test]
    fn diversity_of_right_branching_chain() {
        let t = parse_bracketed("(A (T a) (A (T b) (A (T c) (A (T d) (T e)))))").unwrap();
        assert_eq!(unique_rules(&t, false).unwrap(), 2);
        assert_eq!(unique_rules(&t, true).unwrap(), 7);
        let unlabeled = parse_bracketed("(_ (_ a) (_ b))").unwrap();
        assert!(unique_rules(&unlabeled, false).is_err());
    }

    #[test]
    fn frequency_profile_counts_internal_nodes() {
        let trees = vec![parse_bracketed("(A (T a) (A (T b) (T c)))").unwrap(), parse_bracketed("(A (A (T a) (T b)) (T c))").unwrap()];
        let p = rule_frequency_profile(&trees).unwrap();
        assert_eq!(p.total, 4);
        assert_eq!(p.rules[0], ("A -> T T".to_string(), 2));
        assert!((p.top_share(1) - 0.5).abs() < 1e-15);
        assert_eq!(p.top_share(10), 1.0);
    }

    #[test]
    fn pearson_examples() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((correlate_nll_f1(&x, &x).unwrap().r - 1.0).abs() < 1e-12);
        assert!((correlate_nll_f1(&x, &neg).unwrap().r + 1.0).abs() < 1e-12);
        assert!(correlate_nll_f1(&x, &[1.0; 10]).is_err());
        assert!(correlate_nll_f1(&x[..2], &x[..2]).is_err());
    }

    #[test]
    fn soa_pair_construction() {
        let vocab = Vocab::new(["a", "b", "c"]).unwrap();
        let same = build_soa_pair(3, 3, vocab.clone(), 0.4, 0.4, (0, 1)).unwrap();
        assert_eq!(same.base, same.flipped);
        let p = build_soa_pair(11, 3, vocab.clone(), 0.3, 0.7, (1, 2)).unwrap();
        assert!(validate(&p.base).is_empty() && validate(&p.flipped).is_empty());
        check_soa_pair(&p).unwrap();
        assert!(build_soa_pair(11, 3, vocab, 0.6, 0.7, (0, 1)).is_err());
    }

    #[test]
    fn soa_pair_verification() {
        let vocab = Vocab::new(["a", "b", "c"]).unwrap();
        let p = build_soa_pair(11, 2, vocab, 0.3, 0.7, (0, 0)).unwrap();
        let sentences: Vec<Sentence> = (3..=7).map(|n| Sentence((0..n).map(|k| k % 3).collect())).collect();
        let r = verify_soa(&p, &sentences).unwrap();
        assert!(r.max_abs_delta_logp <= 1e-9, "{r:?}");
        assert!(r.max_abs_alpha_minus_one <= 1e-12, "{r:?}");
        assert!(r.alpha_evaluated > 0);
    }
}
