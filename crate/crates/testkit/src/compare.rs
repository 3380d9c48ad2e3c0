//! Side-by-side comparison of the chart algorithms with the enumeration oracle.

use focusgram::chart::{ChartEngine, SpanWeights};
use focusgram::decode::{mbr_decode, viterbi};
use focusgram::grammar::{Grammar, Sentence};
use focusgram::Error;

use crate::oracle::{Bracketing, Oracle};
use crate::random::rel_err;

/// Largest relative error per quantity, and decoder agreement.
#[derive(Debug, Clone, Default)]
pub struct Discrepancy {
    pub inside_cells: f64,
    pub score: f64,
    pub marginals: f64,
    pub counts: f64,
    pub viterbi_prob: f64,
    pub mbr_objective: f64,
    /// Decoded tree is neither the oracle's tree nor tied with it.
    pub viterbi_tree_wrong: bool,
    pub mbr_tree_wrong: bool,
    /// Chart reported zero measure exactly when the oracle total is zero.
    pub zero_measure_mismatch: bool,
}

impl Discrepancy {
    pub fn worst(&self) -> f64 {
        [self.inside_cells, self.score, self.marginals, self.counts, self.viterbi_prob, self.mbr_objective].into_iter().fold(0.0, f64::max)
    }

    pub fn merge(&mut self, o: &Discrepancy) {
        self.inside_cells = self.inside_cells.max(o.inside_cells);
        self.score = self.score.max(o.score);
        self.marginals = self.marginals.max(o.marginals);
        self.counts = self.counts.max(o.counts);
        self.viterbi_prob = self.viterbi_prob.max(o.viterbi_prob);
        self.mbr_objective = self.mbr_objective.max(o.mbr_objective);
        self.viterbi_tree_wrong |= o.viterbi_tree_wrong;
        self.mbr_tree_wrong |= o.mbr_tree_wrong;
        self.zero_measure_mismatch |= o.zero_measure_mismatch;
    }

    pub fn ok(&self, tol: f64) -> bool {
        self.worst() <= tol && !self.viterbi_tree_wrong && !self.mbr_tree_wrong && !self.zero_measure_mismatch
    }
}

const TIE: f64 = 1e-12;

/// Compares weighted inside cells, score, span marginals, expected counts, Viterbi and MBR
/// (under `weights`) with brute force.
pub fn compare(grammar: &Grammar, sentence: &Sentence, weights: &SpanWeights) -> Discrepancy {
    let n = sentence.len();
    let engine = ChartEngine::new(grammar);
    let oracle = Oracle::new(grammar, sentence, Some(weights));
    let mut d = Discrepancy::default();

    let chart = engine.weighted_inside(sentence, weights).expect("valid sentence");
    let syms = grammar.dims().symbols();
    for w in 1..=n {
        for i in 0..=n - w {
            for s in 0..syms {
                let e = rel_err(chart.get(i, i + w, s).exp(), oracle.inside_cell(i, i + w, s));
                d.inside_cells = d.inside_cells.max(e);
            }
        }
    }
    let total = oracle.total();
    d.score = rel_err(chart.log_score.exp(), total);
    if total == 0.0 {
        d.zero_measure_mismatch = chart.log_score != f64::NEG_INFINITY
            || !matches!(engine.expected_counts(sentence, weights), Err(Error::ZeroMeasure { .. }))
            || !matches!(mbr_decode(sentence, grammar, Some(weights)), Err(Error::ZeroMeasure { .. }));
        return d;
    }

    let m = engine.span_marginals(sentence, weights).expect("positive measure");
    let om = oracle.span_marginals();
    for w in 2..=n {
        for i in 0..=n - w {
            d.marginals = d.marginals.max(rel_err(m.get(i, i + w), om[i * (n + 1) + i + w]));
        }
    }

    let c = engine.expected_counts(sentence, weights).expect("positive measure");
    let oc = oracle.expected_counts();
    for (x, y) in c.root.iter().zip(&oc.root).chain(c.binary.iter().zip(&oc.binary)).chain(c.lexical.iter().zip(&oc.lexical)) {
        d.counts = d.counts.max(rel_err(*x, *y));
    }

    let (obj, best) = oracle.mbr(&om);
    let mbr = mbr_decode(sentence, grammar, Some(weights)).expect("positive measure");
    let got = Bracketing::from_spans(n, &mbr.spans()).expect("binary tree");
    let got_obj: f64 = got.internal_spans().iter().map(|&(i, j)| om[i * (n + 1) + j]).sum();
    d.mbr_objective = rel_err(got_obj, obj);
    d.mbr_tree_wrong = got != best && rel_err(got_obj, obj) > TIE;

    // Viterbi ignores span weights
    let plain = Oracle::new(grammar, sentence, None);
    let (vp, vbest) = plain.viterbi();
    match viterbi(sentence, grammar) {
        Ok(v) => {
            d.viterbi_prob = rel_err(v.log_prob.exp(), vp);
            let got = Bracketing::from_spans(n, &v.tree.spans()).expect("binary tree");
            d.viterbi_tree_wrong = got != vbest && rel_err(plain.max_labeled(&got), vp) > TIE;
        }
        Err(_) => d.zero_measure_mismatch |= vp != 0.0,
    }
    d
}
