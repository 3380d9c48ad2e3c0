use focusgram::chart::SpanWeights;
use focusgram::corpus::SpanSet;
use focusgram::grammar::{Grammar, Sentence};

/// Unlabeled binary tree over word positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Bracketing {
    Leaf(usize),
    Node(Box<Bracketing>, Box<Bracketing>),
}

impl Bracketing {
    pub fn span(&self) -> (usize, usize) {
        match self {
            Bracketing::Leaf(p) => (*p, p + 1),
            Bracketing::Node(l, r) => (l.span().0, r.span().1),
        }
    }

    /// Spans of internal nodes.
    pub fn internal_spans(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        fn walk(t: &Bracketing, out: &mut Vec<(usize, usize)>) {
            if let Bracketing::Node(l, r) = t {
                out.push(t.span());
                walk(l, out);
                walk(r, out);
            }
        }
        walk(self, &mut out);
        out
    }

    pub fn span_set(&self) -> SpanSet {
        let (_, n) = self.span();
        SpanSet::from_pairs(n, &self.internal_spans())
    }
}

/// Every binary bracketing of `[i, j)`.
pub fn bracketings(i: usize, j: usize) -> Vec<Bracketing> {
    if j - i == 1 {
        return vec![Bracketing::Leaf(i)];
    }
    let mut out = Vec::new();
    for k in i + 1..j {
        for l in bracketings(i, k) {
            for r in bracketings(k, j) {
                out.push(Bracketing::Node(Box::new(l.clone()), Box::new(r)));
            }
        }
    }
    out
}

/// Linear-domain copy of a grammar.
#[derive(Debug, Clone)]
struct Tables {
    nt: usize,
    pt: usize,
    s: usize,
    v: usize,
    root: Vec<f64>,
    bin: Vec<f64>,
    lex: Vec<f64>,
}

impl Tables {
    fn new(g: &Grammar) -> Self {
        let d = g.dims();
        let t = g.log_tables();
        Tables {
            nt: d.nonterminals,
            pt: d.preterminals,
            s: d.nonterminals + d.preterminals,
            v: d.terminals,
            root: t.root.iter().map(|x| x.exp()).collect(),
            bin: t.binary.iter().map(|x| x.exp()).collect(),
            lex: t.lexical.iter().map(|x| x.exp()).collect(),
        }
    }

    fn bin(&self, a: usize, b: usize, c: usize) -> f64 {
        self.bin[(a * self.s + b) * self.s + c]
    }
}

/// Expected counts in linear domain, laid out like `RuleTables`.
#[derive(Debug, Clone)]
pub struct Counts {
    pub root: Vec<f64>,
    pub binary: Vec<f64>,
    pub lexical: Vec<f64>,
}

/// Brute-force quantities for one sentence under one grammar and weight table.
pub struct Oracle {
    t: Tables,
    words: Vec<usize>,
    n: usize,
    /// Linear span weights, `(n+1)²` layout, 1 for widths below 2.
    w: Vec<f64>,
    trees: Vec<Bracketing>,
}

impl Oracle {
    pub fn new(grammar: &Grammar, sentence: &Sentence, weights: Option<&SpanWeights>) -> Self {
        let n = sentence.len();
        let mut w = vec![1.0; (n + 1) * (n + 1)];
        if let Some(ws) = weights {
            for i in 0..n {
                for j in i + 2..=n {
                    w[i * (n + 1) + j] = ws.log_weight(i, j).exp();
                }
            }
        }
        Oracle { t: Tables::new(grammar), words: sentence.tokens().to_vec(), n, w, trees: bracketings(0, n) }
    }

    pub fn trees(&self) -> &[Bracketing] {
        &self.trees
    }

    fn weight(&self, i: usize, j: usize) -> f64 {
        self.w[i * (self.n + 1) + j]
    }

    /// Product of span weights over internal nodes.
    pub fn tree_weight(&self, tree: &Bracketing) -> f64 {
        tree.internal_spans().iter().map(|&(i, j)| self.weight(i, j)).product()
    }

    /// Per-symbol labeled sum (`max_product` false) or max over labelings of `tree`.
    fn beta(&self, tree: &Bracketing, max_product: bool) -> Vec<f64> {
        let t = &self.t;
        let mut out = vec![0.0; t.s];
        match tree {
            Bracketing::Leaf(p) => {
                for k in 0..t.pt {
                    out[t.nt + k] = t.lex[k * t.v + self.words[*p]];
                }
            }
            Bracketing::Node(l, r) => {
                let (bl, br) = (self.beta(l, max_product), self.beta(r, max_product));
                for (a, slot) in out.iter_mut().enumerate().take(t.nt) {
                    let mut acc = 0.0f64;
                    for b in 0..t.s {
                        for c in 0..t.s {
                            let x = t.bin(a, b, c) * bl[b] * br[c];
                            acc = if max_product { acc.max(x) } else { acc + x };
                        }
                    }
                    *slot = acc;
                }
            }
        }
        out
    }

    /// Unweighted probability of a bracketing (summed over labelings).
    pub fn tree_probability(&self, tree: &Bracketing) -> f64 {
        let b = self.beta(tree, false);
        (0..self.t.nt).map(|a| self.t.root[a] * b[a]).sum()
    }

    /// `Σ_τ W(τ) p(τ)`.
    pub fn total(&self) -> f64 {
        self.trees.iter().map(|tr| self.tree_weight(tr) * self.tree_probability(tr)).sum()
    }

    /// Weighted inside value of cell `(i, j)` for `symbol`: sum over bracketings of the
    /// span, including the span's own weight.
    pub fn inside_cell(&self, i: usize, j: usize, symbol: usize) -> f64 {
        bracketings(i, j).iter().map(|tr| self.tree_weight(tr) * self.beta(tr, false)[symbol]).sum()
    }

    /// Posterior probability that each width-≥2 span is a constituent, `(n+1)²` layout.
    pub fn span_marginals(&self) -> Vec<f64> {
        let z = self.total();
        let mut m = vec![0.0; (self.n + 1) * (self.n + 1)];
        for tr in &self.trees {
            let mass = self.tree_weight(tr) * self.tree_probability(tr) / z;
            for (i, j) in tr.internal_spans() {
                m[i * (self.n + 1) + j] += mass;
            }
        }
        m
    }

    /// Expected rule counts under the weighted posterior, by top-down outside passes on
    /// each fixed tree.
    pub fn expected_counts(&self) -> Counts {
        let t = &self.t;
        let z = self.total();
        let mut c = Counts { root: vec![0.0; t.nt], binary: vec![0.0; t.nt * t.s * t.s], lexical: vec![0.0; t.pt * t.v] };
        for tr in &self.trees {
            let scale = self.tree_weight(tr) / z;
            let top = self.beta(tr, false);
            for a in 0..t.nt {
                c.root[a] += scale * t.root[a] * top[a];
            }
            let alpha: Vec<f64> = (0..t.s).map(|a| if a < t.nt { t.root[a] } else { 0.0 }).collect();
            self.down(tr, &alpha, scale, &mut c);
        }
        c
    }

    fn down(&self, tree: &Bracketing, alpha: &[f64], scale: f64, c: &mut Counts) {
        let t = &self.t;
        match tree {
            Bracketing::Leaf(p) => {
                for k in 0..t.pt {
                    c.lexical[k * t.v + self.words[*p]] += scale * alpha[t.nt + k] * t.lex[k * t.v + self.words[*p]];
                }
            }
            Bracketing::Node(l, r) => {
                let (bl, br) = (self.beta(l, false), self.beta(r, false));
                let mut al = vec![0.0; t.s];
                let mut ar = vec![0.0; t.s];
                for a in 0..t.nt {
                    for b in 0..t.s {
                        for cc in 0..t.s {
                            let p = t.bin(a, b, cc);
                            c.binary[(a * t.s + b) * t.s + cc] += scale * alpha[a] * p * bl[b] * br[cc];
                            al[b] += alpha[a] * p * br[cc];
                            ar[cc] += alpha[a] * p * bl[b];
                        }
                    }
                }
                self.down(l, &al, scale, c);
                self.down(r, &ar, scale, c);
            }
        }
    }

    /// Highest-probability labeled derivation: its probability and bracketing.
    pub fn viterbi(&self) -> (f64, Bracketing) {
        let mut best = (0.0, self.trees[0].clone());
        for tr in &self.trees {
            let b = self.beta(tr, true);
            let p = (0..self.t.nt).map(|a| self.t.root[a] * b[a]).fold(0.0, f64::max);
            if p > best.0 {
                best = (p, tr.clone());
            }
        }
        best
    }

    /// Bracketing with the largest summed span marginal, and that sum.
    pub fn mbr(&self, marginals: &[f64]) -> (f64, Bracketing) {
        let mut best = (f64::NEG_INFINITY, self.trees[0].clone());
        for tr in &self.trees {
            let v: f64 = tr.internal_spans().iter().map(|&(i, j)| marginals[i * (self.n + 1) + j]).sum();
            if v > best.0 {
                best = (v, tr.clone());
            }
        }
        best
    }
}

/// Sum of weighted probabilities over every labeled derivation, listed one by one.
/// Exponential in both length and symbol count; used to check [`Oracle`] itself.
pub fn explicit_total(grammar: &Grammar, sentence: &Sentence, weights: Option<&SpanWeights>) -> f64 {
    let o = Oracle::new(grammar, sentence, weights);
    let t = &o.t;
    // every labeled tree as (probability below the root symbol)
    fn derivations(o: &Oracle, tree: &Bracketing) -> Vec<(usize, f64)> {
        let t = &o.t;
        match tree {
            Bracketing::Leaf(p) => (0..t.pt).map(|k| (t.nt + k, t.lex[k * t.v + o.words[*p]])).collect(),
            Bracketing::Node(l, r) => {
                let (dl, dr) = (derivations(o, l), derivations(o, r));
                let mut out = Vec::new();
                for a in 0..t.nt {
                    for &(b, pb) in &dl {
                        for &(c, pc) in &dr {
                            out.push((a, t.bin(a, b, c) * pb * pc));
                        }
                    }
                }
                out
            }
        }
    }
    let mut total = 0.0;
    for tr in &o.trees {
        let w = o.tree_weight(tr);
        // a preterminal at the top (one-word sentence) has no root rule
        for (a, p) in derivations(&o, tr) {
            total += w * t.root.get(a).copied().unwrap_or(0.0) * p;
        }
    }
    total
}

impl Bracketing {
    /// Rebuilds a full binary bracketing of `[0, n)` from its internal spans.
    pub fn from_spans(n: usize, spans: &SpanSet) -> Option<Bracketing> {
        fn build(i: usize, j: usize, spans: &SpanSet) -> Option<Bracketing> {
            if j - i == 1 {
                return Some(Bracketing::Leaf(i));
            }
            let k = (i + 1..j).find(|&k| {
                (k - i == 1 || spans.contains(&focusgram::corpus::Span::new(i, k)))
                    && (j - k == 1 || spans.contains(&focusgram::corpus::Span::new(k, j)))
            })?;
            Some(Bracketing::Node(Box::new(build(i, k, spans)?), Box::new(build(k, j, spans)?)))
        }
        if spans.len() + 1 != n {
            return None;
        }
        build(0, n, spans)
    }
}

impl Oracle {
    /// Best labeled-derivation probability with the given bracketing.
    pub fn max_labeled(&self, tree: &Bracketing) -> f64 {
        let b = self.beta(tree, true);
        (0..self.t.nt).map(|a| self.t.root[a] * b[a]).fold(0.0, f64::max)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}
