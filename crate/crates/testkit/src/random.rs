use std::sync::Arc;

use focusgram::chart::SpanWeights;
use focusgram::corpus::Span;
use focusgram::focusing::{soft_weights, SpanCounts};
use focusgram::grammar::{normalize, random_init, Grammar, Sentence, SymbolInventory, Vocab};
use rand::Rng;

pub fn vocab(size: usize) -> Vocab {
    // `size` includes the unknown token
    Vocab::new((0..size.saturating_sub(1)).map(|i| format!("w{i}"))).expect("distinct tokens")
}

pub fn inventory(nt: usize, pt: usize, v: usize) -> Arc<SymbolInventory> {
    Arc::new(SymbolInventory::new(nt, pt, vocab(v)).expect("non-empty inventory"))
}

/// Dirichlet-initialized grammar; with `sparsity > 0` that fraction of rules is set to
/// zero (keeping at least one rule per distribution) before renormalizing.
pub fn grammar<R: Rng>(rng: &mut R, nt: usize, pt: usize, v: usize, concentration: f64, sparsity: f64) -> Grammar {
    let inv = inventory(nt, pt, v);
    let g = random_init(Arc::clone(&inv), rng.random(), concentration).expect("valid concentration");
    if sparsity <= 0.0 {
        return g;
    }
    let mut counts = g.log_tables().map(f64::exp);
    let ds: Vec<_> = counts.distributions().collect();
    for d in ds {
        let row = counts.distribution_mut(d);
        let keep = rng.random_range(0..row.len());
        for (k, x) in row.iter_mut().enumerate() {
            if k != keep && rng.random::<f64>() < sparsity {
                *x = 0.0;
            }
        }
        if row[keep] == 0.0 {
            row[keep] = 1.0;
        }
    }
    normalize(inv, &counts).expect("non-negative counts").grammar
}

pub fn sentence<R: Rng>(rng: &mut R, n: usize, v: usize) -> Sentence {
    Sentence((0..n).map(|_| rng.random_range(0..v)).collect())
}

/// Off, soft (from random span counts) or arbitrary positive weights, chosen at random.
pub fn weights<R: Rng>(rng: &mut R, n: usize) -> SpanWeights {
    match rng.random_range(0..3) {
        0 => SpanWeights::off(n),
        1 => {
            let mut counts = SpanCounts { len: n, trees: 3, ..Default::default() };
            for w in 2..=n {
                for i in 0..=n - w {
                    let c = rng.random_range(0..4u32);
                    if c > 0 {
                        counts.counts.insert(Span::new(i, i + w), c);
                    }
                }
            }
            soft_weights(&counts)
        }
        _ => custom_weights(rng, n),
    }
}

/// Weights `exp(u)` with `u` uniform on `[-3, 3]`.
pub fn custom_weights<R: Rng>(rng: &mut R, n: usize) -> SpanWeights {
    let mut pairs = Vec::new();
    for w in 2..=n {
        for i in 0..=n - w {
            pairs.push((Span::new(i, i + w), rng.random_range(-3.0f64..3.0).exp()));
        }
    }
    SpanWeights::custom(n, &pairs).expect("every span has a weight")
}

/// Relative difference, with both-zero treated as equal.
pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs())
}
