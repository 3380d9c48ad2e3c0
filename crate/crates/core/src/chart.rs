//! Log-domain charts: inside, span-weighted inside, outside, span posteriors, expected
//! rule counts and sentence scores.
//!
//! A span weight multiplies a cell after its split sum, so the weighted sentence score is
//! `Σ_tree p(tree) · Π_{spans of width ≥ 2} w(span)`. Width-1 cells are never weighted.
//! With all weights equal to 1 the charts are the ordinary inside/outside charts.
//!
//! Each width-≥2 cell is accumulated in linear space after shifting by the largest
//! child-pair log score of the cell; accumulation runs over split points ascending, then
//! left child symbol, then right child symbol.

use rayon::prelude::*;

use crate::corpus::Span;
use crate::error::{Error, Result};
use crate::grammar::{Dims, Grammar, RuleTables, Sentence};
use crate::logmath::{ln_or_neg_inf, log_sum_exp};

const NEG_INF: f64 = f64::NEG_INFINITY;

/// How a [`SpanWeights`] was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    /// Every weight is exactly 1.
    Off,
    /// Softmax weights; they sum to 1 over all width-≥2 spans.
    Soft,
    /// Arbitrary non-negative weights supplied by the caller.
    Custom,
}

/// Log weight for each span of width ≥ 2 of one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanWeights {
    n: usize,
    mode: WeightMode,
    log_w: Vec<f64>,
}

impl SpanWeights {
    /// Identity weights.
    pub fn off(n: usize) -> Self {
        SpanWeights { n, mode: WeightMode::Off, log_w: vec![0.0; (n + 1) * (n + 1)] }
    }

    /// Weights from a function of the span (log domain). Not checked for normalization.
    pub fn from_log_fn(n: usize, mode: WeightMode, f: impl Fn(Span) -> f64) -> Self {
        let mut log_w = vec![0.0; (n + 1) * (n + 1)];
        for w in 2..=n {
            for i in 0..=n - w {
                log_w[i * (n + 1) + i + w] = f(Span::new(i, i + w));
            }
        }
        SpanWeights { n, mode, log_w }
    }

    /// Custom weights from an explicit list; every width-≥2 span must be present.
    pub fn custom(n: usize, weights: &[(Span, f64)]) -> Result<Self> {
        let mut log_w = vec![f64::NAN; (n + 1) * (n + 1)];
        for &(s, w) in weights {
            if s.end > n || s.width() < 2 {
                return Err(Error::Input(format!("span {s} is not a width-≥2 span of a length-{n} sentence")));
            }
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Input(format!("weight {w} for span {s} is not a finite non-negative number")));
            }
            log_w[s.start * (n + 1) + s.end] = ln_or_neg_inf(w);
        }
        for w in 2..=n {
            for i in 0..=n - w {
                if log_w[i * (n + 1) + i + w].is_nan() {
                    return Err(Error::Input(format!("missing weight for span {}", Span::new(i, i + w))));
                }
            }
        }
        Ok(SpanWeights { n, mode: WeightMode::Custom, log_w })
    }

    /// Log-softmax of per-span scores over all width-≥2 spans.
    pub fn softmax(n: usize, score: impl Fn(Span) -> f64) -> Self {
        let mut raw = SpanWeights::from_log_fn(n, WeightMode::Soft, score);
        let vals: Vec<f64> = raw.spans().map(|s| raw.log_weight(s.start, s.end)).collect();
        let z = log_sum_exp(&vals);
        for w in 2..=n {
            for i in 0..=n - w {
                raw.log_w[i * (n + 1) + i + w] -= z;
            }
        }
        raw
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn mode(&self) -> WeightMode {
        self.mode
    }

    #[inline]
    pub fn log_weight(&self, i: usize, j: usize) -> f64 {
        if j - i < 2 {
            0.0
        } else {
            self.log_w[i * (self.n + 1) + j]
        }
    }

    /// Width-≥2 spans in increasing width, then start.
    pub fn spans(&self) -> impl Iterator<Item = Span> + '_ {
        let n = self.n;
        (2..=n).flat_map(move |w| (0..=n - w).map(move |i| Span::new(i, i + w)))
    }

    /// Multiplies every weight by `exp(log_c)`.
    pub fn scaled(&self, log_c: f64) -> Self {
        let mut out = SpanWeights::from_log_fn(self.n, WeightMode::Custom, |s| self.log_weight(s.start, s.end) + log_c);
        if self.n < 2 {
            out.mode = self.mode;
        }
        out
    }
}

/// Triangular table of log scores indexed by span and symbol (combined symbol space).
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    n: usize,
    symbols: usize,
    data: Vec<f64>,
}

impl Chart {
    fn new(n: usize, symbols: usize) -> Self {
        Chart { n, symbols, data: vec![NEG_INF; (n + 1) * (n + 1) * symbols] }
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        (i * (self.n + 1) + j) * self.symbols
    }

    /// All symbol scores of cell `(i, j)`.
    #[inline]
    pub fn cell(&self, i: usize, j: usize) -> &[f64] {
        let o = self.offset(i, j);
        &self.data[o..o + self.symbols]
    }

    #[inline]
    fn cell_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let o = self.offset(i, j);
        &mut self.data[o..o + self.symbols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, symbol: usize) -> f64 {
        self.data[self.offset(i, j) + symbol]
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

/// Inside chart and the (weighted) sentence log score.
#[derive(Debug, Clone, PartialEq)]
pub struct InsideChart {
    pub chart: Chart,
    pub log_score: f64,
}

impl InsideChart {
    pub fn get(&self, i: usize, j: usize, symbol: usize) -> f64 {
        self.chart.get(i, j, symbol)
    }
}

/// Outside chart; the root cell holds the root distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct OutsideChart {
    pub chart: Chart,
}

impl OutsideChart {
    pub fn get(&self, i: usize, j: usize, symbol: usize) -> f64 {
        self.chart.get(i, j, symbol)
    }
}

/// Posterior probability that each span is a constituent.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanMarginals {
    n: usize,
    values: Vec<f64>,
}

impl SpanMarginals {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * (self.n + 1) + j]
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Sum over all spans of width ≥ 2.
    pub fn total_nontrivial(&self) -> f64 {
        let mut s = 0.0;
        for w in 2..=self.n {
            for i in 0..=self.n - w {
                s += self.get(i, i + w);
            }
        }
        s
    }
}

/// Grammar prepared for chart computations: binary probabilities in linear space.
pub struct ChartEngine<'g> {
    grammar: &'g Grammar,
    dims: Dims,
    bin: Vec<f64>,
}

struct SplitScratch {
    left: Vec<f64>,
    right: Vec<f64>,
}

impl<'g> ChartEngine<'g> {
    pub fn new(grammar: &'g Grammar) -> Self {
        let bin = grammar.log_tables().binary.iter().map(|x| x.exp()).collect();
        ChartEngine { grammar, dims: grammar.dims(), bin }
    }

    pub fn grammar(&self) -> &Grammar {
        self.grammar
    }

    /// Child symbol range of a cell of the given width.
    #[inline]
    fn range(&self, width: usize) -> std::ops::Range<usize> {
        if width == 1 {
            self.dims.nonterminals..self.dims.symbols()
        } else {
            0..self.dims.nonterminals
        }
    }

    fn check(&self, sentence: &Sentence, weights: &SpanWeights) -> Result<()> {
        if sentence.is_empty() {
            return Err(Error::Input("empty sentence".into()));
        }
        sentence.check(self.dims.terminals)?;
        if weights.len() != sentence.len() {
            return Err(Error::Input(format!(
                "span weights cover a length-{} sentence, sentence has length {}",
                weights.len(),
                sentence.len()
            )));
        }
        Ok(())
    }

    fn max_in(cell: &[f64], range: std::ops::Range<usize>) -> f64 {
        cell[range].iter().copied().fold(NEG_INF, f64::max)
    }

    /// Fills `out[range]` with `exp(cell - m)`.
    fn shifted_exp(cell: &[f64], range: std::ops::Range<usize>, m: f64, out: &mut [f64]) {
        for s in range {
            out[s] = (cell[s] - m).exp();
        }
    }

    pub fn inside(&self, sentence: &Sentence) -> Result<InsideChart> {
        self.weighted_inside(sentence, &SpanWeights::off(sentence.len()))
    }

    pub fn weighted_inside(&self, sentence: &Sentence, weights: &SpanWeights) -> Result<InsideChart> {
        self.check(sentence, weights)?;
        let d = self.dims;
        let (nt, sym) = (d.nonterminals, d.symbols());
        let n = sentence.len();
        let mut chart = Chart::new(n, sym);
        for (p, &w) in sentence.tokens().iter().enumerate() {
            let cell = chart.cell_mut(p, p + 1);
            for t in 0..d.preterminals {
                cell[nt + t] = self.grammar.lexical_logp(t, w);
            }
        }
        let mut scratch = SplitScratch { left: vec![0.0; sym], right: vec![0.0; sym] };
        let mut acc = vec![0.0; nt];
        let mut shifts = Vec::with_capacity(n);
        for width in 2..=n {
            for i in 0..=n - width {
                let j = i + width;
                shifts.clear();
                let mut m = NEG_INF;
                for k in i + 1..j {
                    let ml = Self::max_in(chart.cell(i, k), self.range(k - i));
                    let mr = Self::max_in(chart.cell(k, j), self.range(j - k));
                    shifts.push((ml, mr));
                    m = m.max(ml + mr);
                }
                if m == NEG_INF {
                    continue;
                }
                acc.iter_mut().for_each(|a| *a = 0.0);
                for (k, &(ml, mr)) in (i + 1..j).zip(shifts.iter()) {
                    if ml + mr == NEG_INF {
                        continue;
                    }
                    let scale = (ml + mr - m).exp();
                    let (lr, rr) = (self.range(k - i), self.range(j - k));
                    Self::shifted_exp(chart.cell(i, k), lr.clone(), ml, &mut scratch.left);
                    Self::shifted_exp(chart.cell(k, j), rr.clone(), mr, &mut scratch.right);
                    for (a, acc_a) in acc.iter_mut().enumerate() {
                        let mut sum = 0.0;
                        for b in lr.clone() {
                            let el = scratch.left[b];
                            if el == 0.0 {
                                continue;
                            }
                            let row = &self.bin[d.binary_index(a, b, 0)..];
                            let mut inner = 0.0;
                            for c in rr.clone() {
                                inner += row[c] * scratch.right[c];
                            }
                            sum += el * inner;
                        }
                        *acc_a += scale * sum;
                    }
                }
                let lw = weights.log_weight(i, j);
                let cell = chart.cell_mut(i, j);
                for a in 0..nt {
                    cell[a] = if acc[a] > 0.0 { acc[a].ln() + m + lw } else { NEG_INF };
                }
            }
        }
        let root = chart.cell(0, n);
        let terms: Vec<f64> = if n >= 2 { (0..nt).map(|a| self.grammar.root_logp(a) + root[a]).collect() } else { Vec::new() };
        let log_score = log_sum_exp(&terms);
        Ok(InsideChart { chart, log_score })
    }

    pub fn outside(&self, sentence: &Sentence, weights: &SpanWeights, inside: &InsideChart) -> Result<OutsideChart> {
        self.check(sentence, weights)?;
        if inside.log_score == NEG_INF {
            return Err(Error::zero_measure());
        }
        let d = self.dims;
        let (nt, sym) = (d.nonterminals, d.symbols());
        let n = sentence.len();
        let ins = &inside.chart;
        let mut out = Chart::new(n, sym);
        {
            let root = out.cell_mut(0, n);
            for a in 0..nt {
                root[a] = self.grammar.root_logp(a);
            }
        }
        let mut parent = vec![0.0; nt];
        let mut sib = vec![0.0; sym];
        let mut acc = vec![0.0; sym];
        // (parent start, parent end, sibling start, sibling end, child is left, max parent, max sibling)
        let mut contexts: Vec<(usize, usize, usize, usize, bool, f64, f64)> = Vec::with_capacity(n);
        for width in (1..n).rev() {
            for i in 0..=n - width {
                let j = i + width;
                contexts.clear();
                let mut m = NEG_INF;
                let mut push = |ps: usize, pe: usize, ss: usize, se: usize, left: bool, out: &Chart, m: &mut f64| {
                    let lw = weights.log_weight(ps, pe);
                    let mo = out.cell(ps, pe)[..nt].iter().copied().fold(NEG_INF, f64::max) + lw;
                    let ms = Self::max_in(ins.cell(ss, se), self.range(se - ss));
                    if mo + ms > NEG_INF {
                        *m = m.max(mo + ms);
                        contexts.push((ps, pe, ss, se, left, mo, ms));
                    }
                };
                for pe in j + 1..=n {
                    push(i, pe, j, pe, true, &out, &mut m);
                }
                for ps in 0..i {
                    push(ps, j, ps, i, false, &out, &mut m);
                }
                if m == NEG_INF {
                    continue;
                }
                let cr = self.range(width);
                acc.iter_mut().for_each(|x| *x = 0.0);
                for &(ps, pe, ss, se, left, mo, ms) in &contexts {
                    let scale = (mo + ms - m).exp();
                    let lw = weights.log_weight(ps, pe);
                    let pc = out.cell(ps, pe);
                    for a in 0..nt {
                        parent[a] = (pc[a] + lw - mo).exp();
                    }
                    let sr = self.range(se - ss);
                    Self::shifted_exp(ins.cell(ss, se), sr.clone(), ms, &mut sib);
                    for b in cr.clone() {
                        let mut sum = 0.0;
                        for (a, &pa) in parent.iter().enumerate() {
                            if pa == 0.0 {
                                continue;
                            }
                            let mut inner = 0.0;
                            if left {
                                let row = &self.bin[d.binary_index(a, b, 0)..];
                                for c in sr.clone() {
                                    inner += row[c] * sib[c];
                                }
                            } else {
                                for c in sr.clone() {
                                    inner += self.bin[d.binary_index(a, c, b)] * sib[c];
                                }
                            }
                            sum += pa * inner;
                        }
                        acc[b] += scale * sum;
                    }
                }
                let cell = out.cell_mut(i, j);
                for b in cr {
                    cell[b] = if acc[b] > 0.0 { acc[b].ln() + m } else { NEG_INF };
                }
            }
        }
        Ok(OutsideChart { chart: out })
    }

    /// Posterior span marginals under the weighted tree measure.
    pub fn span_marginals(&self, sentence: &Sentence, weights: &SpanWeights) -> Result<SpanMarginals> {
        let inside = self.weighted_inside(sentence, weights)?;
        let outside = self.outside(sentence, weights, &inside)?;
        Ok(self.marginals_from(&inside, &outside))
    }

    pub fn marginals_from(&self, inside: &InsideChart, outside: &OutsideChart) -> SpanMarginals {
        let n = inside.chart.len();
        let z = inside.log_score;
        let mut values = vec![0.0; (n + 1) * (n + 1)];
        for w in 1..=n {
            for i in 0..=n - w {
                let (ic, oc) = (inside.chart.cell(i, i + w), outside.chart.cell(i, i + w));
                let mut s = 0.0;
                for a in self.range(w) {
                    let x = ic[a] + oc[a];
                    if x > NEG_INF {
                        s += (x - z).exp();
                    }
                }
                values[i * (n + 1) + i + w] = s;
            }
        }
        SpanMarginals { n, values }
    }

    /// Expected rule counts of one sentence under the weighted tree measure.
    pub fn expected_counts(&self, sentence: &Sentence, weights: &SpanWeights) -> Result<RuleTables> {
        let mut counts = RuleTables::zeros(self.dims);
        self.accumulate_counts(sentence, weights, &mut counts)?;
        Ok(counts)
    }

    /// Adds one sentence's expected counts into `counts`; returns its log score.
    pub fn accumulate_counts(&self, sentence: &Sentence, weights: &SpanWeights, counts: &mut RuleTables) -> Result<f64> {
        let inside = self.weighted_inside(sentence, weights)?;
        if inside.log_score == NEG_INF {
            return Err(Error::zero_measure());
        }
        let outside = self.outside(sentence, weights, &inside)?;
        let d = self.dims;
        let (nt, sym) = (d.nonterminals, d.symbols());
        let n = sentence.len();
        let z = inside.log_score;
        let (ins, outs) = (&inside.chart, &outside.chart);

        let root = ins.cell(0, n);
        for a in 0..nt {
            let x = self.grammar.root_logp(a) + root[a];
            if x > NEG_INF {
                counts.root[a] += (x - z).exp();
            }
        }
        for (p, &w) in sentence.tokens().iter().enumerate() {
            let (ic, oc) = (ins.cell(p, p + 1), outs.cell(p, p + 1));
            for t in 0..d.preterminals {
                let x = ic[nt + t] + oc[nt + t];
                if x > NEG_INF {
                    counts.lexical[d.lexical_index(t, w)] += (x - z).exp();
                }
            }
        }
        let mut left = vec![0.0; sym];
        let mut right = vec![0.0; sym];
        for width in 2..=n {
            for i in 0..=n - width {
                let j = i + width;
                let lw = weights.log_weight(i, j);
                let oc = outs.cell(i, j);
                if oc[..nt].iter().all(|&x| x == NEG_INF) {
                    continue;
                }
                for k in i + 1..j {
                    let (lr, rr) = (self.range(k - i), self.range(j - k));
                    let ml = Self::max_in(ins.cell(i, k), lr.clone());
                    let mr = Self::max_in(ins.cell(k, j), rr.clone());
                    if ml + mr == NEG_INF {
                        continue;
                    }
                    Self::shifted_exp(ins.cell(i, k), lr.clone(), ml, &mut left);
                    Self::shifted_exp(ins.cell(k, j), rr.clone(), mr, &mut right);
                    for a in 0..nt {
                        let lc = oc[a] + lw - z + ml + mr;
                        if lc == NEG_INF {
                            continue;
                        }
                        let f = lc.exp();
                        let base = d.binary_index(a, 0, 0);
                        if f.is_finite() {
                            for b in lr.clone() {
                                let fb = f * left[b];
                                if fb == 0.0 {
                                    continue;
                                }
                                let row = base + b * sym;
                                for c in rr.clone() {
                                    counts.binary[row + c] += fb * self.bin[row + c] * right[c];
                                }
                            }
                        } else {
                            // exp overflowed on its own; combine in log space term by term
                            for b in lr.clone() {
                                for c in rr.clone() {
                                    let idx = base + b * sym + c;
                                    let x = lc + ln_or_neg_inf(self.bin[idx]) + ln_or_neg_inf(left[b]) + ln_or_neg_inf(right[c]);
                                    if x > NEG_INF {
                                        counts.binary[idx] += x.exp();
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(z)
    }
}

/// Inside chart with identity weights.
pub fn inside(sentence: &Sentence, grammar: &Grammar) -> Result<InsideChart> {
    ChartEngine::new(grammar).inside(sentence)
}

pub fn weighted_inside(sentence: &Sentence, grammar: &Grammar, weights: &SpanWeights) -> Result<InsideChart> {
    ChartEngine::new(grammar).weighted_inside(sentence, weights)
}

pub fn outside(sentence: &Sentence, grammar: &Grammar, weights: &SpanWeights, inside: &InsideChart) -> Result<OutsideChart> {
    ChartEngine::new(grammar).outside(sentence, weights, inside)
}

pub fn span_marginals(sentence: &Sentence, grammar: &Grammar, weights: &SpanWeights) -> Result<SpanMarginals> {
    ChartEngine::new(grammar).span_marginals(sentence, weights)
}

pub fn expected_counts(sentence: &Sentence, grammar: &Grammar, weights: &SpanWeights) -> Result<RuleTables> {
    ChartEngine::new(grammar).expected_counts(sentence, weights)
}

/// Negative log scores of a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct NllReport {
    /// `-log score` per sentence; `None` for zero-measure or empty sentences.
    pub per_sentence: Vec<Option<f64>>,
    /// Mean over sentences with a finite score.
    pub mean: f64,
    /// Sum over scored sentences divided by their token count.
    pub per_token: f64,
    /// Indices of sentences excluded for having zero measure.
    pub zero_measure: Vec<usize>,
}

fn weights_for<'a>(weights: Option<&'a [SpanWeights]>, idx: usize, n: usize, owned: &'a mut Option<SpanWeights>) -> &'a SpanWeights {
    match weights {
        Some(ws) => &ws[idx],
        None => owned.insert(SpanWeights::off(n)),
    }
}

fn check_weight_count(sentences: &[Sentence], weights: Option<&[SpanWeights]>) -> Result<()> {
    if let Some(ws) = weights {
        if ws.len() != sentences.len() {
            return Err(Error::Alignment {
                line: ws.len().min(sentences.len()) + 1,
                msg: format!("{} weight tables for {} sentences", ws.len(), sentences.len()),
            });
        }
    }
    Ok(())
}

/// Per-sentence and mean negative log (weighted) score. Empty sentences are ignored;
/// zero-measure sentences are excluded from the means and listed.
pub fn nll(sentences: &[Sentence], grammar: &Grammar, weights: Option<&[SpanWeights]>) -> Result<NllReport> {
    check_weight_count(sentences, weights)?;
    let engine = ChartEngine::new(grammar);
    let scores: Vec<Result<Option<f64>>> = sentences
        .par_iter()
        .enumerate()
        .map(|(idx, s)| {
            if s.is_empty() {
                return Ok(None);
            }
            let mut owned = None;
            let w = weights_for(weights, idx, s.len(), &mut owned);
            let ic = engine.weighted_inside(s, w)?;
            Ok((ic.log_score > NEG_INF).then_some(-ic.log_score))
        })
        .collect();
    let mut per_sentence = Vec::with_capacity(scores.len());
    let mut zero_measure = Vec::new();
    let (mut total, mut count, mut tokens) = (0.0, 0usize, 0usize);
    for (idx, r) in scores.into_iter().enumerate() {
        let v = r?;
        match v {
            Some(x) => {
                total += x;
                count += 1;
                tokens += sentences[idx].len();
            }
            None if !sentences[idx].is_empty() => {
                log::warn!("sentence {} has zero measure; excluded from NLL", idx + 1);
                zero_measure.push(idx);
            }
            None => {}
        }
        per_sentence.push(v);
    }
    let mean = if count > 0 { total / count as f64 } else { f64::NAN };
    let per_token = if tokens > 0 { total / tokens as f64 } else { f64::NAN };
    Ok(NllReport { per_sentence, mean, per_token, zero_measure })
}

/// Corpus-level E-step result.
#[derive(Debug, Clone)]
pub struct CorpusCounts {
    pub counts: RuleTables,
    /// Sum of log scores over contributing sentences.
    pub log_score: f64,
    /// Tokens in contributing sentences.
    pub tokens: usize,
    pub sentences: usize,
    pub zero_measure: Vec<usize>,
}

const CHUNK: usize = 16;
const CHUNKS_PER_BATCH: usize = 32;

/// Sums expected counts over a corpus. Sentences are grouped in fixed-size chunks that are
/// reduced in corpus order, so the result does not depend on the number of worker threads.
pub fn corpus_expected_counts(sentences: &[Sentence], grammar: &Grammar, weights: Option<&[SpanWeights]>) -> Result<CorpusCounts> {
    check_weight_count(sentences, weights)?;
    let engine = ChartEngine::new(grammar);
    let dims = grammar.dims();
    let mut total = CorpusCounts { counts: RuleTables::zeros(dims), log_score: 0.0, tokens: 0, sentences: 0, zero_measure: Vec::new() };
    let indices: Vec<usize> = (0..sentences.len()).collect();
    let chunks: Vec<&[usize]> = indices.chunks(CHUNK).collect();
    for batch in chunks.chunks(CHUNKS_PER_BATCH) {
        let partials: Vec<Result<CorpusCounts>> = batch
            .par_iter()
            .map(|chunk| {
                let mut part =
                    CorpusCounts { counts: RuleTables::zeros(dims), log_score: 0.0, tokens: 0, sentences: 0, zero_measure: Vec::new() };
                for &idx in chunk.iter() {
                    let s = &sentences[idx];
                    if s.is_empty() {
                        continue;
                    }
                    let mut owned = None;
                    let w = weights_for(weights, idx, s.len(), &mut owned);
                    match engine.accumulate_counts(s, w, &mut part.counts) {
                        Ok(z) => {
                            part.log_score += z;
                            part.tokens += s.len();
                            part.sentences += 1;
                        }
                        Err(Error::ZeroMeasure { .. }) => part.zero_measure.push(idx),
                        Err(e) => return Err(e),
                    }
                }
                Ok(part)
            })
            .collect();
        for p in partials {
            let p = p?;
            total.counts.add_assign(&p.counts);
            total.log_score += p.log_score;
            total.tokens += p.tokens;
            total.sentences += p.sentences;
            total.zero_measure.extend(p.zero_measure);
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{normalize, random_init, SymbolInventory, Vocab};
    use std::sync::Arc;

    /// S→A, A→T T, T→a, all with probability 1.
    fn deterministic() -> Grammar {
        let inv = Arc::new(SymbolInventory::new(1, 1, Vocab::new(["a"]).unwrap()).unwrap());
        let mut c = RuleTables::zeros(inv.dims());
        c.root[0] = 1.0;
        c.binary[inv.dims().binary_index(0, 1, 1)] = 1.0;
        c.lexical[0] = 1.0;
        normalize(inv, &c).unwrap().grammar
    }

    #[test]
    fn single_derivation_has_log_prob_zero() {
        let g = deterministic();
        assert_eq!(inside(&Sentence(vec![0, 0]), &g).unwrap().log_score, 0.0);
        assert_eq!(inside(&Sentence(vec![0, 0, 0]), &g).unwrap().log_score, NEG_INF);
    }

    #[test]
    fn length_one_sentences_have_zero_measure() {
        let g = deterministic();
        assert_eq!(inside(&Sentence(vec![0]), &g).unwrap().log_score, NEG_INF);
    }

    #[test]
    fn out_of_vocab_token_is_an_input_error() {
        let g = deterministic();
        assert!(matches!(inside(&Sentence(vec![0, 7]), &g), Err(Error::Input(_))));
    }

    #[test]
    fn off_weights_are_bitwise_identical() {
        let inv = Arc::new(SymbolInventory::new(2, 3, Vocab::new(["a", "b", "c"]).unwrap()).unwrap());
        let g = random_init(inv, 4, 1.0).unwrap();
        let s = Sentence(vec![0, 2, 1, 3, 0]);
        let a = inside(&s, &g).unwrap();
        let b = weighted_inside(&s, &g, &SpanWeights::off(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_weight_is_an_input_error() {
        assert!(matches!(SpanWeights::custom(3, &[(Span::new(0, 2), 1.0), (Span::new(0, 3), 1.0)]), Err(Error::Input(_))));
        let g = deterministic();
        let r = weighted_inside(&Sentence(vec![0, 0, 0]), &g, &SpanWeights::off(2));
        assert!(matches!(r, Err(Error::Input(_))));
    }

    #[test]
    fn deterministic_counts_are_exact() {
        let g = deterministic();
        let c = expected_counts(&Sentence(vec![0, 0]), &g, &SpanWeights::off(2)).unwrap();
        assert_eq!(c.root, vec![1.0]);
        assert_eq!(c.binary[g.dims().binary_index(0, 1, 1)], 1.0);
        assert_eq!(c.binary.iter().sum::<f64>(), 1.0);
        assert_eq!(c.lexical[0], 2.0);
    }

    #[test]
    fn zero_measure_is_an_error_not_nan() {
        let g = deterministic();
        let s = Sentence(vec![0, 0, 0]);
        assert!(matches!(expected_counts(&s, &g, &SpanWeights::off(3)), Err(Error::ZeroMeasure { .. })));
        let ic = inside(&s, &g).unwrap();
        assert!(matches!(outside(&s, &g, &SpanWeights::off(3), &ic), Err(Error::ZeroMeasure { .. })));
    }

    #[test]
    fn nll_excludes_zero_measure() {
        let g = deterministic();
        let sents = vec![Sentence(vec![0, 0]), Sentence(vec![0, 0, 0]), Sentence(vec![])];
        let r = nll(&sents, &g, None).unwrap();
        assert_eq!(r.per_sentence, vec![Some(0.0), None, None]);
        assert_eq!(r.zero_measure, vec![1]);
        assert_eq!(r.mean, 0.0);
    }

    #[test]
    fn softmax_weights_sum_to_one() {
        let w = SpanWeights::softmax(5, |s| (s.start * 3 % 4) as f64);
        let total: f64 = w.spans().map(|s| w.log_weight(s.start, s.end).exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(w.mode(), WeightMode::Soft);
    }
}
