//! Sampling trees from a grammar, and a small built-in generator grammar used for the
//! synthetic benchmark.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::RawTree;
use crate::error::{Error, Result};
use crate::grammar::{normalize, Grammar, RuleTables, SymbolInventory, Vocab};

/// A grammar with readable symbol names.
#[derive(Debug, Clone)]
pub struct Generator {
    pub grammar: Grammar,
    /// One name per symbol in the combined space.
    pub names: Vec<String>,
}

impl Generator {
    /// Builds a generator from named rules. Weights are normalized per left-hand side.
    pub fn from_rules(
        nonterminals: &[&str],
        preterminals: &[(&str, &[&str])],
        root: &[(&str, f64)],
        binary: &[(&str, &str, &str, f64)],
    ) -> Result<Self> {
        let names: Vec<String> =
            nonterminals.iter().map(|s| s.to_string()).chain(preterminals.iter().map(|(s, _)| s.to_string())).collect();
        let id = |s: &str| names.iter().position(|n| n == s).ok_or_else(|| Error::Param(format!("unknown symbol {s}")));
        let words: Vec<&str> = preterminals.iter().flat_map(|(_, ws)| ws.iter().copied()).collect();
        let vocab = Vocab::new(words.iter().copied())?;
        let inv = Arc::new(SymbolInventory::new(nonterminals.len(), preterminals.len(), vocab)?);
        let d = inv.dims();
        let mut c = RuleTables::zeros(d);
        for &(a, p) in root {
            c.root[id(a)?] += p;
        }
        for &(a, b, cc, p) in binary {
            c.binary[d.binary_index(id(a)?, id(b)?, id(cc)?)] += p;
        }
        for (t, (_, ws)) in preterminals.iter().enumerate() {
            for w in ws.iter() {
                c.lexical[d.lexical_index(t, inv.vocab().get(w).expect("word in vocab"))] += 1.0;
            }
        }
        let norm = normalize(inv, &c)?;
        if !norm.uniform_fallbacks.is_empty() {
            return Err(Error::Param(format!("symbols without rules: {:?}", norm.uniform_fallbacks)));
        }
        Ok(Generator { grammar: norm.grammar, names })
    }

    /// Samples trees whose length lies in `[min_len, max_len]`, by rejection.
    pub fn sample_corpus(&self, count: usize, min_len: usize, max_len: usize, seed: u64) -> Result<Vec<RawTree>> {
        if min_len < 2 || min_len > max_len {
            return Err(Error::Param(format!("bad length range {min_len}..={max_len}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        let mut attempts = 0usize;
        while out.len() < count {
            attempts += 1;
            if attempts > 1000 * count.max(1) {
                return Err(Error::Param("generator rarely produces sentences in the length range".into()));
            }
            if let Some(t) = sample_tree(&self.grammar, &self.names, &mut rng, max_len) {
                if t.num_leaves() >= min_len {
                    out.push(t);
                }
            }
        }
        Ok(out)
    }
}

fn draw<R: Rng>(logps: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, lp) in logps.iter().enumerate() {
        if *lp == f64::NEG_INFINITY {
            continue;
        }
        acc += lp.exp();
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Samples one tree top-down, giving up once it would exceed `max_len` words.
/// Labels come from `names` (one per symbol).
pub fn sample_tree<R: Rng>(grammar: &Grammar, names: &[String], rng: &mut R, max_len: usize) -> Option<RawTree> {
    let d = grammar.dims();
    let t = grammar.log_tables();
    let s = d.symbols();
    fn expand<R: Rng>(sym: usize, g: &Grammar, names: &[String], rng: &mut R, budget: &mut usize) -> Option<RawTree> {
        let d = g.dims();
        let t = g.log_tables();
        if sym >= d.nonterminals {
            if *budget == 0 {
                return None;
            }
            *budget -= 1;
            let pt = sym - d.nonterminals;
            let w = draw(&t.lexical[pt * d.terminals..(pt + 1) * d.terminals], rng);
            let word = g.inventory().vocab().token(w).expect("word id").to_string();
            return Some(RawTree::node(names[sym].clone(), vec![RawTree::leaf(word)]));
        }
        let s = d.symbols();
        let k = draw(&t.binary[sym * s * s..(sym + 1) * s * s], rng);
        let (b, c) = (k / s, k % s);
        let left = expand(b, g, names, rng, budget)?;
        let right = expand(c, g, names, rng, budget)?;
        Some(RawTree::node(names[sym].clone(), vec![left, right]))
    }
    debug_assert_eq!(t.binary.len(), d.nonterminals * s * s);
    let root = draw(&t.root, rng);
    let mut budget = max_len;
    expand(root, grammar, names, rng, &mut budget)
}

/// Built-in generator: a small noun-phrase / verb-phrase grammar with modifiers and
/// prepositional attachment, over disjoint word classes.
pub fn reference_generator() -> Generator {
    Generator::from_rules(
        &["S", "NP", "VP", "PP", "NB"],
        &[
            ("DT", &["the", "a", "every", "this"]),
            ("NN", &["dog", "cat", "park", "house", "idea", "river"]),
            ("VB", &["saw", "liked", "found", "took"]),
            ("IN", &["in", "near", "with", "under"]),
            ("JJ", &["big", "old", "red", "quiet"]),
        ],
        &[("S", 1.0)],
        &[
            ("S", "NP", "VP", 1.0),
            ("NP", "DT", "NN", 0.5),
            ("NP", "DT", "NB", 0.3),
            ("NP", "NP", "PP", 0.2),
            ("NB", "JJ", "NN", 0.7),
            ("NB", "JJ", "NB", 0.3),
            ("VP", "VB", "NP", 0.7),
            ("VP", "VP", "PP", 0.3),
            ("PP", "IN", "NP", 1.0),
        ],
    )
    .expect("reference generator is well formed")
}
