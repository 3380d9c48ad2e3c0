//! PCFG representation.
//!
//! A grammar has a distinguished root `S`, nonterminals `N`, preterminals `P` and a
//! terminal vocabulary. There are three rule families:
//!
//! * `S -> A` with `A` a nonterminal,
//! * `A -> B C` with `A` a nonterminal and `B`, `C` nonterminals or preterminals,
//! * `T -> w` with `T` a preterminal and `w` a terminal.
//!
//! Children of binary rules live in a combined symbol space: nonterminal `k` is symbol
//! `k`, preterminal `k` is symbol `|N| + k`. Lexical rows are indexed by the preterminal's
//! local index `0..|P|`. All probabilities are stored as natural logs; zero is `-inf`.

use std::collections::HashMap;
use std::fmt;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Gamma};

use crate::error::{Error, Result};
use crate::logmath::ln_or_neg_inf;

/// Reserved unknown-word token.
pub const UNK: &str = "<unk>";

const MASS_TOLERANCE: f64 = 1e-9;

/// Ordered terminal vocabulary with exactly one unknown token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    unk: usize,
}

impl Vocab {
    /// Builds a vocabulary from an ordered token list. The unknown token is appended
    /// when it is not already present.
    pub fn new<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut list = Vec::new();
        let mut index = HashMap::new();
        for tok in tokens {
            let tok = tok.into();
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::Input(format!("invalid terminal {tok:?}")));
            }
            if index.insert(tok.clone(), list.len()).is_some() {
                return Err(Error::Input(format!("duplicate terminal {tok:?}")));
            }
            list.push(tok);
        }
        let unk = match index.get(UNK) {
            Some(&i) => i,
            None => {
                index.insert(UNK.to_string(), list.len());
                list.push(UNK.to_string());
                list.len() - 1
            }
        };
        Ok(Vocab { tokens: list, index, unk })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unk(&self) -> usize {
        self.unk
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or the unknown id.
    pub fn id_or_unk(&self, token: &str) -> usize {
        self.get(token).unwrap_or(self.unk)
    }
}

/// Symbol inventory of a grammar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolInventory {
    nonterminals: usize,
    preterminals: usize,
    vocab: Vocab,
}

impl SymbolInventory {
    pub fn new(nonterminals: usize, preterminals: usize, vocab: Vocab) -> Result<Self> {
        if nonterminals == 0 || preterminals == 0 {
            return Err(Error::Param(format!("symbol counts must be positive (got |N|={nonterminals}, |P|={preterminals})")));
        }
        Ok(SymbolInventory { nonterminals, preterminals, vocab })
    }

    pub fn nonterminals(&self) -> usize {
        self.nonterminals
    }

    pub fn preterminals(&self) -> usize {
        self.preterminals
    }

    /// Size of the combined child symbol space `|N| + |P|`.
    pub fn symbols(&self) -> usize {
        self.nonterminals + self.preterminals
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn dims(&self) -> Dims {
        Dims { nonterminals: self.nonterminals, preterminals: self.preterminals, terminals: self.vocab.len() }
    }

    pub fn is_nonterminal(&self, symbol: usize) -> bool {
        symbol < self.nonterminals
    }

    /// Combined-space id of preterminal `k`.
    pub fn preterminal_symbol(&self, k: usize) -> usize {
        self.nonterminals + k
    }

    /// `NT-k` for nonterminals, `T-k` for preterminals.
    pub fn label(&self, symbol: usize) -> String {
        if symbol < self.nonterminals {
            format!("NT-{symbol}")
        } else {
            format!("T-{}", symbol - self.nonterminals)
        }
    }

    /// Inverse of [`SymbolInventory::label`].
    pub fn parse_label(&self, label: &str) -> Option<usize> {
        if let Some(k) = label.strip_prefix("NT-") {
            let k: usize = k.parse().ok()?;
            (k < self.nonterminals).then_some(k)
        } else if let Some(k) = label.strip_prefix("T-") {
            let k: usize = k.parse().ok()?;
            (k < self.preterminals).then_some(self.nonterminals + k)
        } else {
            None
        }
    }
}

/// A sentence as terminal ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sentence(pub Vec<usize>);

impl Sentence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }

    /// Checks every id against a vocabulary size.
    pub fn check(&self, vocab_len: usize) -> Result<()> {
        match self.0.iter().position(|&w| w >= vocab_len) {
            Some(i) => Err(Error::Input(format!("token {} at position {i} is outside the vocabulary (size {vocab_len})", self.0[i]))),
            None => Ok(()),
        }
    }
}

impl From<Vec<usize>> for Sentence {
    fn from(v: Vec<usize>) -> Self {
        Sentence(v)
    }
}

/// Table dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub nonterminals: usize,
    pub preterminals: usize,
    pub terminals: usize,
}

impl Dims {
    pub fn symbols(&self) -> usize {
        self.nonterminals + self.preterminals
    }

    pub fn binary_len(&self) -> usize {
        self.nonterminals * self.symbols() * self.symbols()
    }

    #[inline]
    pub fn binary_index(&self, parent: usize, left: usize, right: usize) -> usize {
        let s = self.symbols();
        (parent * s + left) * s + right
    }

    #[inline]
    pub fn lexical_index(&self, preterminal: usize, word: usize) -> usize {
        preterminal * self.terminals + word
    }
}

/// One rule distribution of a grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Distribution {
    Root,
    /// Binary expansions of nonterminal `A`.
    Binary(usize),
    /// Emissions of preterminal `k` (local index).
    Lexical(usize),
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distribution::Root => write!(f, "S"),
            Distribution::Binary(a) => write!(f, "NT-{a}"),
            Distribution::Lexical(t) => write!(f, "T-{t}"),
        }
    }
}

/// Tables with the same shape as a grammar's rule tables. Holds log probabilities in a
/// [`Grammar`] and linear expected counts elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleTables {
    pub dims: Dims,
    pub root: Vec<f64>,
    pub binary: Vec<f64>,
    pub lexical: Vec<f64>,
}

impl RuleTables {
    pub fn filled(dims: Dims, value: f64) -> Self {
        RuleTables {
            dims,
            root: vec![value; dims.nonterminals],
            binary: vec![value; dims.binary_len()],
            lexical: vec![value; dims.preterminals * dims.terminals],
        }
    }

    pub fn zeros(dims: Dims) -> Self {
        Self::filled(dims, 0.0)
    }

    /// Element-wise sum, in a fixed order.
    pub fn add_assign(&mut self, other: &RuleTables) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, b) in self.root.iter_mut().zip(&other.root) {
            *a += b;
        }
        for (a, b) in self.binary.iter_mut().zip(&other.binary) {
            *a += b;
        }
        for (a, b) in self.lexical.iter_mut().zip(&other.lexical) {
            *a += b;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        RuleTables {
            dims: self.dims,
            root: self.root.iter().map(|&x| f(x)).collect(),
            binary: self.binary.iter().map(|&x| f(x)).collect(),
            lexical: self.lexical.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Slice of one distribution.
    pub fn distribution(&self, d: Distribution) -> &[f64] {
        let s2 = self.dims.symbols() * self.dims.symbols();
        let v = self.dims.terminals;
        match d {
            Distribution::Root => &self.root,
            Distribution::Binary(a) => &self.binary[a * s2..(a + 1) * s2],
            Distribution::Lexical(t) => &self.lexical[t * v..(t + 1) * v],
        }
    }

    pub fn distribution_mut(&mut self, d: Distribution) -> &mut [f64] {
        let s2 = self.dims.symbols() * self.dims.symbols();
        let v = self.dims.terminals;
        match d {
            Distribution::Root => &mut self.root,
            Distribution::Binary(a) => &mut self.binary[a * s2..(a + 1) * s2],
            Distribution::Lexical(t) => &mut self.lexical[t * v..(t + 1) * v],
        }
    }

    /// All distributions in canonical order.
    pub fn distributions(&self) -> impl Iterator<Item = Distribution> {
        let d = self.dims;
        std::iter::once(Distribution::Root)
            .chain((0..d.nonterminals).map(Distribution::Binary))
            .chain((0..d.preterminals).map(Distribution::Lexical))
    }
}

/// A PCFG with log-probability tables. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Grammar {
    inventory: Arc<SymbolInventory>,
    tables: RuleTables,
}

/// Kind of a [`Violation`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// Probability mass differs from 1.
    Mass,
    /// A stored value is NaN or `+inf`.
    NonFinite,
}

/// A broken distribution reported by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub distribution: Distribution,
    pub kind: ViolationKind,
    pub mass: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ViolationKind::Mass => write!(f, "mass {:?} for {}", self.mass, self.distribution),
            ViolationKind::NonFinite => write!(f, "non-finite value in {}", self.distribution),
        }
    }
}

/// Result of [`normalize`]: the grammar plus any distributions that fell back to uniform.
#[derive(Debug, Clone)]
pub struct Normalized {
    pub grammar: Grammar,
    pub uniform_fallbacks: Vec<Distribution>,
}

impl Grammar {
    /// Wraps log tables without checking normalization; use [`validate`] for that.
    pub fn from_log_tables(inventory: Arc<SymbolInventory>, tables: RuleTables) -> Result<Self> {
        if tables.dims != inventory.dims() {
            return Err(Error::Input("table dimensions do not match the inventory".into()));
        }
        Ok(Grammar { inventory, tables })
    }

    /// Uniform distributions everywhere.
    pub fn uniform(inventory: Arc<SymbolInventory>) -> Self {
        let dims = inventory.dims();
        let counts = RuleTables::filled(dims, 1.0);
        normalize(inventory, &counts).expect("uniform counts are valid").grammar
    }

    pub fn inventory(&self) -> &SymbolInventory {
        &self.inventory
    }

    pub fn shared_inventory(&self) -> &Arc<SymbolInventory> {
        &self.inventory
    }

    pub fn dims(&self) -> Dims {
        self.tables.dims
    }

    pub fn log_tables(&self) -> &RuleTables {
        &self.tables
    }

    pub fn into_log_tables(self) -> RuleTables {
        self.tables
    }

    #[inline]
    pub fn root_logp(&self, a: usize) -> f64 {
        self.tables.root[a]
    }

    #[inline]
    pub fn binary_logp(&self, parent: usize, left: usize, right: usize) -> f64 {
        self.tables.binary[self.tables.dims.binary_index(parent, left, right)]
    }

    #[inline]
    pub fn lexical_logp(&self, preterminal: usize, word: usize) -> f64 {
        self.tables.lexical[self.tables.dims.lexical_index(preterminal, word)]
    }

    /// Returns a copy with one table edited in log space.
    pub fn with_tables(&self, edit: impl FnOnce(&mut RuleTables)) -> Grammar {
        let mut tables = self.tables.clone();
        edit(&mut tables);
        Grammar { inventory: Arc::clone(&self.inventory), tables }
    }
}

/// Lists every distribution whose mass is not 1 (within 1e-9) or that holds NaN / `+inf`.
pub fn validate(grammar: &Grammar) -> Vec<Violation> {
    let tables = grammar.log_tables();
    let mut out = Vec::new();
    for d in tables.distributions() {
        let values = tables.distribution(d);
        if values.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
            out.push(Violation { distribution: d, kind: ViolationKind::NonFinite, mass: f64::NAN });
            continue;
        }
        let mass: f64 = values.iter().map(|x| x.exp()).sum();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            out.push(Violation { distribution: d, kind: ViolationKind::Mass, mass });
        }
    }
    out
}

/// Draws every distribution from a symmetric Dirichlet. Pure in `(inventory, seed, concentration)`.
pub fn random_init(inventory: Arc<SymbolInventory>, seed: u64, concentration: f64) -> Result<Grammar> {
    if !(concentration > 0.0 && concentration.is_finite()) {
        return Err(Error::Param(format!("Dirichlet concentration must be positive, got {concentration}")));
    }
    let gamma = Gamma::new(concentration, 1.0).map_err(|e| Error::Param(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tables = RuleTables::zeros(inventory.dims());
    let dists: Vec<_> = tables.distributions().collect();
    for d in dists {
        let slot = tables.distribution_mut(d);
        let mut total = 0.0;
        for x in slot.iter_mut() {
            *x = gamma.sample(&mut rng);
            total += *x;
        }
        if !(total > 0.0 && total.is_finite()) {
            // every gamma draw underflowed; put all mass on one random outcome
            slot.iter_mut().for_each(|x| *x = 0.0);
            let k = rng.random_range(0..slot.len());
            slot[k] = 1.0;
            total = 1.0;
        }
        let log_total = total.ln();
        for x in slot.iter_mut() {
            *x = ln_or_neg_inf(*x) - log_total;
        }
    }
    Ok(Grammar { inventory, tables })
}

/// Turns non-negative linear scores into a grammar with probabilities proportional to
/// them. All-zero distributions fall back to uniform and are reported.
pub fn normalize(inventory: Arc<SymbolInventory>, counts: &RuleTables) -> Result<Normalized> {
    if counts.dims != inventory.dims() {
        return Err(Error::Input("count dimensions do not match the inventory".into()));
    }
    let mut tables = RuleTables::zeros(counts.dims);
    let mut uniform_fallbacks = Vec::new();
    for d in counts.distributions() {
        let src = counts.distribution(d);
        if let Some(bad) = src.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::Param(format!("invalid score {bad} in distribution {d}")));
        }
        let total: f64 = src.iter().sum();
        let dst = tables.distribution_mut(d);
        if total > 0.0 {
            let log_total = total.ln();
            for (o, &c) in dst.iter_mut().zip(src) {
                *o = ln_or_neg_inf(c) - log_total;
            }
        } else {
            let u = -(dst.len() as f64).ln();
            dst.iter_mut().for_each(|o| *o = u);
            uniform_fallbacks.push(d);
        }
    }
    Ok(Normalized { grammar: Grammar { inventory, tables }, uniform_fallbacks })
}

/// Renders the grammar in the `pcfg v1` text format. Zero-probability rules are omitted.
pub fn serialize(grammar: &Grammar) -> String {
    let inv = grammar.inventory();
    let dims = grammar.dims();
    let mut out = String::new();
    let _ = writeln!(out, "pcfg v1 {} {} {}", dims.nonterminals, dims.preterminals, dims.terminals);
    for tok in inv.vocab().tokens() {
        out.push_str(tok);
        out.push('\n');
    }
    let t = grammar.log_tables();
    for (a, &lp) in t.root.iter().enumerate() {
        if lp != f64::NEG_INFINITY {
            let _ = writeln!(out, "root {a} {lp:.16e}");
        }
    }
    let s = dims.symbols();
    for a in 0..dims.nonterminals {
        for b in 0..s {
            for c in 0..s {
                let lp = grammar.binary_logp(a, b, c);
                if lp != f64::NEG_INFINITY {
                    let _ = writeln!(out, "bin {a} {b} {c} {lp:.16e}");
                }
            }
        }
    }
    for p in 0..dims.preterminals {
        for w in 0..dims.terminals {
            let lp = grammar.lexical_logp(p, w);
            if lp != f64::NEG_INFINITY {
                let _ = writeln!(out, "lex {p} {w} {lp:.16e}");
            }
        }
    }
    out
}

/// Parses the `pcfg v1` format. Lines starting with `#` before the header are skipped.
/// Does not check normalization.
pub fn deserialize(text: &str) -> Result<Grammar> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (hline, header) = loop {
        match lines.next() {
            Some((_, l)) if l.starts_with('#') || l.trim().is_empty() => continue,
            Some(x) => break x,
            None => return Err(Error::parse(1, "missing `pcfg v1` header")),
        }
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 || fields[0] != "pcfg" || fields[1] != "v1" {
        return Err(Error::parse(hline, format!("expected `pcfg v1 <N> <P> <V>`, found {header:?}")));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::parse(hline, format!("bad count {s:?}")));
    let (nn, np, nv) = (num(fields[2])?, num(fields[3])?, num(fields[4])?);

    let mut tokens = Vec::with_capacity(nv);
    for _ in 0..nv {
        match lines.next() {
            Some((_, l)) => tokens.push(l.to_string()),
            None => return Err(Error::parse(hline, format!("expected {nv} terminal lines"))),
        }
    }
    let vocab = Vocab::new(tokens).map_err(|e| Error::parse(hline, e.to_string()))?;
    if vocab.len() != nv {
        return Err(Error::parse(hline, format!("terminal list lacks the {UNK} token")));
    }
    let inventory = SymbolInventory::new(nn, np, vocab).map_err(|e| Error::parse(hline, e.to_string()))?;
    let dims = inventory.dims();
    let mut tables = RuleTables::filled(dims, f64::NEG_INFINITY);
    let mut seen = RuleTables::zeros(dims);

    for (ln, line) in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        let idx = |s: &str, bound: usize, what: &str| -> Result<usize> {
            let v: usize = s.parse().map_err(|_| Error::parse(ln, format!("bad {what} index {s:?}")))?;
            if v >= bound {
                return Err(Error::parse(ln, format!("{what} index {v} out of range (< {bound})")));
            }
            Ok(v)
        };
        let logp = |s: &str| -> Result<f64> {
            let v: f64 = s.parse().map_err(|_| Error::parse(ln, format!("bad log probability {s:?}")))?;
            if v.is_nan() {
                return Err(Error::parse(ln, "log probability is NaN"));
            }
            Ok(v)
        };
        let slot = match (f[0], f.len()) {
            ("root", 3) => {
                let a = idx(f[1], nn, "nonterminal")?;
                tables.root[a] = logp(f[2])?;
                &mut seen.root[a]
            }
            ("bin", 5) => {
                let a = idx(f[1], nn, "nonterminal")?;
                let b = idx(f[2], nn + np, "symbol")?;
                let c = idx(f[3], nn + np, "symbol")?;
                let i = dims.binary_index(a, b, c);
                tables.binary[i] = logp(f[4])?;
                &mut seen.binary[i]
            }
            ("lex", 4) => {
                let p = idx(f[1], np, "preterminal")?;
                let w = idx(f[2], nv, "terminal")?;
                let i = dims.lexical_index(p, w);
                tables.lexical[i] = logp(f[3])?;
                &mut seen.lexical[i]
            }
            _ => return Err(Error::parse(ln, format!("unrecognized rule line {line:?}"))),
        };
        if *slot > 0.0 {
            return Err(Error::parse(ln, "duplicate rule"));
        }
        *slot = 1.0;
    }
    Ok(Grammar { inventory: Arc::new(inventory), tables })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inv(n: usize, p: usize, v: usize) -> Arc<SymbolInventory> {
        let vocab = Vocab::new((0..v - 1).map(|i| format!("w{i}"))).unwrap();
        Arc::new(SymbolInventory::new(n, p, vocab).unwrap())
    }

    #[test]
    fn vocab_has_single_unk() {
        let v = Vocab::new(["a", "b"]).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.token(v.unk()), Some(UNK));
        let v = Vocab::new(["a", UNK, "b"]).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.unk(), 1);
        assert_eq!(v.id_or_unk("zzz"), 1);
        assert!(Vocab::new(["a", "a"]).is_err());
    }

    #[test]
    fn uniform_grammar_is_valid() {
        let g = Grammar::uniform(inv(2, 2, 3));
        assert!(validate(&g).is_empty());
    }

    #[test]
    fn overfull_binary_mass_is_reported() {
        let g = Grammar::uniform(inv(2, 2, 3));
        let g = g.with_tables(|t| t.binary.iter_mut().for_each(|x| *x = 0.5f64.ln()));
        let v = validate(&g);
        assert_eq!(v.len(), 2);
        for (a, viol) in v.iter().enumerate() {
            assert_eq!(viol.distribution, Distribution::Binary(a));
            assert_eq!(viol.kind, ViolationKind::Mass);
            assert!((viol.mass - 8.0).abs() < 1e-12);
        }
        assert_eq!(v[0].to_string(), "mass 8.0 for NT-0");
    }

    #[test]
    fn nan_is_a_violation() {
        let g = Grammar::uniform(inv(1, 1, 2)).with_tables(|t| t.root[0] = f64::NAN);
        assert_eq!(validate(&g)[0].kind, ViolationKind::NonFinite);
    }

    #[test]
    fn normalize_is_proportional() {
        let i = inv(1, 1, 3);
        let mut c = RuleTables::zeros(i.dims());
        c.root[0] = 5.0;
        c.binary.iter_mut().for_each(|x| *x = 1.0);
        c.lexical.copy_from_slice(&[1.0, 1.0, 2.0]);
        let n = normalize(i, &c).unwrap();
        assert!(n.uniform_fallbacks.is_empty());
        let lex: Vec<f64> = n.grammar.log_tables().lexical.iter().map(|x| x.exp()).collect();
        assert!((lex[0] - 0.25).abs() < 1e-15 && (lex[1] - 0.25).abs() < 1e-15 && (lex[2] - 0.5).abs() < 1e-15);
        assert!(validate(&n.grammar).is_empty());
    }

    #[test]
    fn normalize_zero_falls_back_to_uniform() {
        let i = inv(1, 1, 3);
        let mut c = RuleTables::filled(i.dims(), 1.0);
        c.lexical.iter_mut().for_each(|x| *x = 0.0);
        let n = normalize(i, &c).unwrap();
        assert_eq!(n.uniform_fallbacks, vec![Distribution::Lexical(0)]);
        for x in &n.grammar.log_tables().lexical {
            assert!((x.exp() - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn normalize_rejects_negative() {
        let i = inv(1, 1, 2);
        let mut c = RuleTables::filled(i.dims(), 1.0);
        c.root[0] = -1.0;
        assert!(matches!(normalize(i, &c), Err(Error::Param(_))));
    }

    #[test]
    fn random_init_is_deterministic_and_seed_sensitive() {
        let i = inv(3, 4, 5);
        let a = random_init(i.clone(), 9, 1.0).unwrap();
        let b = random_init(i.clone(), 9, 1.0).unwrap();
        let c = random_init(i.clone(), 10, 1.0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.log_tables().binary, c.log_tables().binary);
        assert!(validate(&a).is_empty());
    }

    #[test]
    fn random_init_large_concentration_is_near_uniform() {
        let i = inv(2, 3, 4);
        let g = random_init(i, 1, 1e6).unwrap();
        let t = g.log_tables();
        for d in t.distributions() {
            let vals = t.distribution(d);
            let u = 1.0 / vals.len() as f64;
            for x in vals {
                assert!((x.exp() - u).abs() < 1e-2);
            }
        }
    }

    #[test]
    fn random_init_rejects_zero_concentration() {
        assert!(matches!(random_init(inv(1, 1, 2), 0, 0.0), Err(Error::Param(_))));
    }

    #[test]
    fn serialize_round_trip() {
        let g = random_init(inv(2, 3, 5), 7, 1.0).unwrap();
        let text = serialize(&g);
        let h = deserialize(&text).unwrap();
        assert_eq!(g, h);
    }

    #[test]
    fn deserialize_hand_written_single_nonterminal() {
        let text = "# provenance\npcfg v1 1 1 2\na\n<unk>\nroot 0 0\nbin 0 1 1 0\nlex 0 0 0\n";
        let g = deserialize(text).unwrap();
        assert_eq!(g.inventory().nonterminals(), 1);
        assert!(validate(&g).is_empty());
        assert_eq!(g.lexical_logp(0, 1), f64::NEG_INFINITY);
    }

    #[test]
    fn deserialize_keeps_unnormalized_mass() {
        let text = format!("pcfg v1 1 1 2\na\n<unk>\nroot 0 {}\nbin 0 1 1 0\nlex 0 0 0\n", 0.9f64.ln());
        let g = deserialize(&text).unwrap();
        let v = validate(&g);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].distribution, Distribution::Root);
        assert!((v[0].mass - 0.9).abs() < 1e-12);
    }

    #[test]
    fn deserialize_reports_line_numbers() {
        let text = "pcfg v1 1 1 2\na\n<unk>\nroot 0 0\nbin 0 2 1 0\n";
        match deserialize(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("unexpected {other:?}"),
        }
        match deserialize("pcfg v1 1 1 2\na\n<unk>\nroot 0 0\nroot 0 0\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(deserialize("pcfg v2 1 1 1\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn labels_round_trip() {
        let i = inv(3, 2, 2);
        for s in 0..5 {
            assert_eq!(i.parse_label(&i.label(s)), Some(s));
        }
        assert_eq!(i.label(3), "T-0");
        assert_eq!(i.parse_label("NT-3"), None);
    }
}
