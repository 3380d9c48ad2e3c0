//! CYK-Viterbi and minimum-Bayes-risk decoding.

use crate::chart::{ChartEngine, SpanMarginals, SpanWeights};
use crate::corpus::{RawTree, Span, SpanSet};
use crate::error::{Error, Result};
use crate::grammar::{Grammar, Sentence, SymbolInventory};

/// Label written for nodes of unlabeled trees.
pub const UNLABELED: &str = "_";

/// Binary tree over word positions, optionally labeled with grammar symbols
/// (combined symbol space).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseTree {
    Leaf { pos: usize, symbol: Option<usize> },
    Node { symbol: Option<usize>, left: Box<ParseTree>, right: Box<ParseTree> },
}

impl ParseTree {
    pub fn span(&self) -> Span {
        match self {
            ParseTree::Leaf { pos, .. } => Span::new(*pos, pos + 1),
            ParseTree::Node { left, right, .. } => Span::new(left.span().start, right.span().end),
        }
    }

    pub fn symbol(&self) -> Option<usize> {
        match self {
            ParseTree::Leaf { symbol, .. } | ParseTree::Node { symbol, .. } => *symbol,
        }
    }

    /// Spans of internal (binary) nodes; always `n − 1` of them.
    pub fn spans(&self) -> SpanSet {
        let mut set = SpanSet::new(self.span().end);
        self.collect(&mut set);
        set
    }

    fn collect(&self, set: &mut SpanSet) {
        if let ParseTree::Node { left, right, .. } = self {
            set.insert(self.span());
            left.collect(set);
            right.collect(set);
        }
    }

    /// Bracketed form with `NT-k` / `T-k` labels, or `_` when unlabeled.
    pub fn to_raw(&self, words: &[String], inventory: Option<&SymbolInventory>) -> RawTree {
        let label = |s: Option<usize>| match (s, inventory) {
            (Some(s), Some(inv)) => inv.label(s),
            _ => UNLABELED.to_string(),
        };
        match self {
            ParseTree::Leaf { pos, symbol } => RawTree::node(label(*symbol), vec![RawTree::leaf(words[*pos].clone())]),
            ParseTree::Node { symbol, left, right } => {
                RawTree::node(label(*symbol), vec![left.to_raw(words, inventory), right.to_raw(words, inventory)])
            }
        }
    }

    /// Fully left-branching tree over `n ≥ 1` words.
    pub fn left_branching(n: usize) -> ParseTree {
        let mut t = ParseTree::Leaf { pos: 0, symbol: None };
        for p in 1..n {
            t = ParseTree::Node { symbol: None, left: Box::new(t), right: Box::new(ParseTree::Leaf { pos: p, symbol: None }) };
        }
        t
    }

    /// Fully right-branching tree over `n ≥ 1` words.
    pub fn right_branching(n: usize) -> ParseTree {
        let mut t = ParseTree::Leaf { pos: n - 1, symbol: None };
        for p in (0..n - 1).rev() {
            t = ParseTree::Node { symbol: None, left: Box::new(ParseTree::Leaf { pos: p, symbol: None }), right: Box::new(t) };
        }
        t
    }
}

/// Viterbi tree and its log probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivation {
    pub tree: ParseTree,
    pub log_prob: f64,
}

/// Most probable derivation. Ties go to the smallest split, then smallest left symbol,
/// then smallest right symbol; the root symbol tie goes to the smallest id.
pub fn viterbi(sentence: &Sentence, grammar: &Grammar) -> Result<Derivation> {
    let dims = grammar.dims();
    if sentence.is_empty() {
        return Err(Error::Input("empty sentence".into()));
    }
    sentence.check(dims.terminals)?;
    let (nt, sym) = (dims.nonterminals, dims.symbols());
    let n = sentence.len();
    let idx = |i: usize, j: usize| (i * (n + 1) + j) * sym;
    let mut best = vec![f64::NEG_INFINITY; (n + 1) * (n + 1) * sym];
    let mut back = vec![(0usize, 0usize, 0usize); (n + 1) * (n + 1) * sym];
    for (p, &w) in sentence.tokens().iter().enumerate() {
        for t in 0..dims.preterminals {
            best[idx(p, p + 1) + nt + t] = grammar.lexical_logp(t, w);
        }
    }
    let range = |w: usize| if w == 1 { nt..sym } else { 0..nt };
    for width in 2..=n {
        for i in 0..=n - width {
            let j = i + width;
            for a in 0..nt {
                let mut top = f64::NEG_INFINITY;
                let mut arg = (0, 0, 0);
                for k in i + 1..j {
                    for b in range(k - i) {
                        let lb = best[idx(i, k) + b];
                        if lb == f64::NEG_INFINITY {
                            continue;
                        }
                        for c in range(j - k) {
                            let v = grammar.binary_logp(a, b, c) + lb + best[idx(k, j) + c];
                            if v > top {
                                top = v;
                                arg = (k, b, c);
                            }
                        }
                    }
                }
                best[idx(i, j) + a] = top;
                back[idx(i, j) + a] = arg;
            }
        }
    }
    let mut top = f64::NEG_INFINITY;
    let mut root = 0;
    if n >= 2 {
        for a in 0..nt {
            let v = grammar.root_logp(a) + best[idx(0, n) + a];
            if v > top {
                top = v;
                root = a;
            }
        }
    }
    if top == f64::NEG_INFINITY {
        return Err(Error::ZeroMeasure { context: Some("no derivation has positive probability".into()) });
    }
    fn build(i: usize, j: usize, s: usize, back: &[(usize, usize, usize)], idx: &dyn Fn(usize, usize) -> usize) -> ParseTree {
        if j - i == 1 {
            return ParseTree::Leaf { pos: i, symbol: Some(s) };
        }
        let (k, b, c) = back[idx(i, j) + s];
        ParseTree::Node { symbol: Some(s), left: Box::new(build(i, k, b, back, idx)), right: Box::new(build(k, j, c, back, idx)) }
    }
    Ok(Derivation { tree: build(0, n, root, &back, &idx), log_prob: top })
}

/// Sum of span marginals over the width-≥2 spans of `tree`.
pub fn expected_span_objective(marginals: &SpanMarginals, tree: &ParseTree) -> f64 {
    tree.spans().iter().map(|s| marginals.get(s.start, s.end)).sum()
}

/// Binary bracketing maximizing the summed posterior span marginals. Ties go to the
/// smallest split point.
pub fn mbr_from_marginals(marginals: &SpanMarginals) -> ParseTree {
    let n = marginals.len();
    let idx = |i: usize, j: usize| i * (n + 1) + j;
    let mut best = vec![0.0; (n + 1) * (n + 1)];
    let mut split = vec![0usize; (n + 1) * (n + 1)];
    for width in 2..=n {
        for i in 0..=n - width {
            let j = i + width;
            let mut top = f64::NEG_INFINITY;
            let mut arg = i + 1;
            for k in i + 1..j {
                let v = best[idx(i, k)] + best[idx(k, j)];
                if v > top {
                    top = v;
                    arg = k;
                }
            }
            best[idx(i, j)] = marginals.get(i, j) + top;
            split[idx(i, j)] = arg;
        }
    }
    fn build(i: usize, j: usize, split: &[usize], n: usize) -> ParseTree {
        if j - i == 1 {
            return ParseTree::Leaf { pos: i, symbol: None };
        }
        let k = split[i * (n + 1) + j];
        ParseTree::Node { symbol: None, left: Box::new(build(i, k, split, n)), right: Box::new(build(k, j, split, n)) }
    }
    build(0, n, &split, n)
}

/// Unlabeled minimum-Bayes-risk tree. Marginals come from the weighted measure when
/// `weights` is given, otherwise from the plain grammar posterior.
pub fn mbr_decode(sentence: &Sentence, grammar: &Grammar, weights: Option<&SpanWeights>) -> Result<ParseTree> {
    let engine = ChartEngine::new(grammar);
    let off;
    let w = match weights {
        Some(w) => w,
        None => {
            off = SpanWeights::off(sentence.len());
            &off
        }
    };
    let marginals = engine.span_marginals(sentence, w)?;
    Ok(mbr_from_marginals(&marginals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{normalize, random_init, RuleTables, Vocab};
    use std::sync::Arc;

    fn inv(n: usize, p: usize, v: usize) -> Arc<SymbolInventory> {
        let vocab = Vocab::new((0..v - 1).map(|i| format!("w{i}"))).unwrap();
        Arc::new(SymbolInventory::new(n, p, vocab).unwrap())
    }

    #[test]
    fn deterministic_grammar_yields_its_derivation() {
        // S→A, A→T A' style chain: A→T B, B→T T
        let i = inv(2, 1, 2);
        let d = i.dims();
        let mut c = RuleTables::zeros(d);
        c.root[0] = 1.0;
        c.binary[d.binary_index(0, 2, 1)] = 1.0;
        c.binary[d.binary_index(1, 2, 2)] = 1.0;
        c.lexical[0] = 1.0;
        let g = normalize(i, &c).unwrap().grammar;
        let s = Sentence(vec![0, 0, 0]);
        let v = viterbi(&s, &g).unwrap();
        assert_eq!(v.log_prob, 0.0);
        assert_eq!(v.tree.spans(), SpanSet::from_pairs(3, &[(1, 3), (0, 3)]));
        assert_eq!(v.tree.symbol(), Some(0));
        let m = mbr_decode(&s, &g, None).unwrap();
        assert_eq!(m.spans(), v.tree.spans());
        let words: Vec<String> = ["w0", "w0", "w0"].iter().map(|s| s.to_string()).collect();
        assert_eq!(v.tree.to_raw(&words, Some(g.inventory())).to_bracketed(), "(NT-0 (T-0 w0) (NT-1 (T-0 w0) (T-0 w0)))");
        assert_eq!(m.to_raw(&words, None).to_bracketed(), "(_ (_ w0) (_ (_ w0) (_ w0)))");
    }

    #[test]
    fn length_two_has_one_tree() {
        let g = random_init(inv(2, 2, 3), 1, 1.0).unwrap();
        let s = Sentence(vec![0, 1]);
        assert_eq!(mbr_decode(&s, &g, None).unwrap().spans(), SpanSet::from_pairs(2, &[(0, 2)]));
    }

    #[test]
    fn viterbi_not_above_inside() {
        let g = random_init(inv(3, 3, 4), 5, 1.0).unwrap();
        let s = Sentence(vec![0, 1, 2, 3, 1, 0]);
        let v = viterbi(&s, &g).unwrap();
        let z = crate::chart::inside(&s, &g).unwrap().log_score;
        assert!(v.log_prob <= z);
        assert_eq!(v.tree.spans().len(), 5);
    }

    #[test]
    fn branching_helpers() {
        assert_eq!(ParseTree::left_branching(4).spans(), SpanSet::from_pairs(4, &[(0, 2), (0, 3), (0, 4)]));
        assert_eq!(ParseTree::right_branching(4).spans(), SpanSet::from_pairs(4, &[(2, 4), (1, 4), (0, 4)]));
        assert_eq!(ParseTree::right_branching(1).spans().len(), 0);
    }

    #[test]
    fn zero_probability_sentence_errors() {
        let g = random_init(inv(2, 2, 3), 1, 1.0).unwrap();
        assert!(matches!(viterbi(&Sentence(vec![0]), &g), Err(Error::ZeroMeasure { .. })));
    }
}
