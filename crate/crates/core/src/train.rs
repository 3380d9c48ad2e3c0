//! EM training on the (optionally span-weighted) likelihood, with seed sweeps and early
//! stopping on unweighted validation NLL.

use std::collections::HashSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::chart::{corpus_expected_counts, nll, SpanWeights, WeightMode};
use crate::error::{Error, Result};
use crate::grammar::{normalize, random_init, validate, Grammar, Sentence, SymbolInventory};

/// Training settings. Every field has a default, so a config file may set any subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub nonterminals: usize,
    pub preterminals: usize,
    pub max_epochs: usize,
    pub seeds: Vec<u64>,
    /// Epochs without validation improvement before stopping; 0 disables early stopping.
    pub patience: usize,
    /// Dirichlet concentration of the random initialization.
    pub concentration: f64,
    /// Added to every expected count before the M-step.
    pub smoothing: f64,
    /// `off` ignores any supplied bias.
    pub weight_mode: WeightMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            nonterminals: 5,
            preterminals: 10,
            max_epochs: 10,
            seeds: vec![0],
            patience: 3,
            concentration: 1.0,
            smoothing: 1e-8,
            weight_mode: WeightMode::Soft,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::Param("max_epochs must be at least 1".into()));
        }
        if self.nonterminals == 0 || self.preterminals == 0 {
            return Err(Error::Param("grammar needs at least one nonterminal and one preterminal".into()));
        }
        if !(self.smoothing >= 0.0 && self.smoothing.is_finite()) {
            return Err(Error::Param(format!("smoothing must be finite and >= 0, got {}", self.smoothing)));
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return Err(Error::Param(format!("concentration must be positive, got {}", self.concentration)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Param("no seeds given".into()));
        }
        if self.weight_mode == WeightMode::Custom {
            return Err(Error::Param("weight_mode must be off or soft".into()));
        }
        Ok(())
    }
}

/// Result of one EM step.
#[derive(Debug, Clone)]
pub struct EpochResult {
    pub grammar: Grammar,
    /// Per-token negative log weighted score of the input grammar.
    pub objective: f64,
    /// Sentences with zero measure under the input grammar (excluded from the E-step).
    pub zero_measure: Vec<usize>,
}

/// One EM iteration: expected counts under the weighted measure, then relative
/// frequencies of `counts + smoothing`.
pub fn em_epoch(grammar: &Grammar, sentences: &[Sentence], weights: Option<&[SpanWeights]>, smoothing: f64) -> Result<EpochResult> {
    let cc = corpus_expected_counts(sentences, grammar, weights)?;
    if cc.sentences == 0 {
        return Err(Error::ZeroMeasure { context: Some("every training sentence has zero measure".into()) });
    }
    let counts = if smoothing > 0.0 { cc.counts.map(|c| c + smoothing) } else { cc.counts };
    let norm = normalize(Arc::clone(grammar.shared_inventory()), &counts)?;
    debug_assert!(validate(&norm.grammar).is_empty());
    Ok(EpochResult { grammar: norm.grammar, objective: -cc.log_score / cc.tokens as f64, zero_measure: cc.zero_measure })
}

/// Metrics of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Weighted per-token NLL of the grammar entering the epoch.
    pub train_objective: f64,
    /// Unweighted per-token NLL of the grammar leaving the epoch, on validation data (or
    /// training data when no validation set is given).
    pub selection_nll: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub seed: u64,
    pub weight_mode: WeightMode,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose grammar was kept (1-based).
    pub best_epoch: usize,
    pub best_selection_nll: f64,
    #[serde(skip)]
    pub grammar: Grammar,
    #[serde(skip)]
    pub wall_time: Duration,
}

/// Number of validation sentences that also occur in the training data.
pub fn validation_overlap(train: &[Sentence], validation: &[Sentence]) -> usize {
    let seen: HashSet<&[usize]> = train.iter().filter(|s| !s.is_empty()).map(|s| s.tokens()).collect();
    validation.iter().filter(|s| !s.is_empty() && seen.contains(s.tokens())).count()
}

fn selection_nll(grammar: &Grammar, sentences: &[Sentence]) -> Result<f64> {
    let r = nll(sentences, grammar, None)?;
    Ok(if r.per_token.is_nan() { f64::INFINITY } else { r.per_token })
}

/// Trains one grammar per seed. The grammar kept for each seed is the one with minimum
/// selection NLL; training stops after `patience` epochs without improvement.
pub fn train(
    config: &TrainConfig,
    inventory: Arc<SymbolInventory>,
    sentences: &[Sentence],
    validation: Option<&[Sentence]>,
    weights: Option<&[SpanWeights]>,
) -> Result<Vec<RunRecord>> {
    config.check()?;
    if inventory.nonterminals() != config.nonterminals || inventory.preterminals() != config.preterminals {
        return Err(Error::Param("inventory sizes differ from the config".into()));
    }
    if let Some(v) = validation {
        let overlap = validation_overlap(sentences, v);
        if overlap > 0 {
            log::warn!("{overlap} validation sentences also occur in the training data");
        }
    }
    let weights = if config.weight_mode == WeightMode::Off { None } else { weights };
    if let Some(ws) = weights {
        if ws.len() != sentences.len() {
            return Err(Error::Alignment {
                line: ws.len().min(sentences.len()) + 1,
                msg: format!("{} weight tables for {} sentences", ws.len(), sentences.len()),
            });
        }
        for (i, (w, s)) in ws.iter().zip(sentences).enumerate() {
            if w.len() != s.len() {
                return Err(Error::Alignment { line: i + 1, msg: format!("weights for length {}, sentence has {}", w.len(), s.len()) });
            }
        }
    }
    let mode = if weights.is_some() { WeightMode::Soft } else { WeightMode::Off };
    let select_on = validation.unwrap_or(sentences);
    let mut runs = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let start = Instant::now();
        let mut grammar = random_init(Arc::clone(&inventory), seed, config.concentration)?;
        let mut best: Option<(usize, f64, Grammar)> = None;
        let mut epochs = Vec::new();
        let mut stale = 0;
        for epoch in 1..=config.max_epochs {
            let step = em_epoch(&grammar, sentences, weights, config.smoothing)?;
            grammar = step.grammar;
            let sel = selection_nll(&grammar, select_on)?;
            log::info!("seed {seed} epoch {epoch}: objective {:.6} selection {:.6}", step.objective, sel);
            epochs.push(EpochRecord { epoch, train_objective: step.objective, selection_nll: sel });
            if best.as_ref().is_none_or(|(_, b, _)| sel < *b) {
                best = Some((epoch, sel, grammar.clone()));
                stale = 0;
            } else {
                stale += 1;
                if config.patience > 0 && stale >= config.patience {
                    break;
                }
            }
        }
        let (best_epoch, best_selection_nll, best_grammar) = best.expect("at least one epoch");
        runs.push(RunRecord {
            seed,
            weight_mode: mode,
            epochs,
            best_epoch,
            best_selection_nll,
            grammar: best_grammar,
            wall_time: start.elapsed(),
        });
    }
    Ok(runs)
}
