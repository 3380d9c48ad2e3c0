//! Corpus generation, training, bias construction and decoding.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use rayon::prelude::*;

use focusgram::chart::{SpanWeights, WeightMode};
use focusgram::corpus::{filter_tree, read_tree_lines, tree_to_spans, Corpus, CorpusFormat, PreprocessOptions, SpanSet};
use focusgram::decode::{mbr_decode, viterbi, ParseTree};
use focusgram::focusing::{
    check_bias_alignment, count_corpus, read_bias, synthetic_bias, write_bias, write_bias_meta, FocusingBias, SourceDescriptor,
    SyntheticKind,
};
use focusgram::grammar::{deserialize, serialize, Grammar, Sentence, SymbolInventory};
use focusgram::synth::reference_generator;
use focusgram::train::{train, TrainConfig};

use crate::output::{emit, meta_path, read, sha256_hex};
use crate::{Decoder, PreprocessFlags, UsageError};

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    sentences: usize,
    #[arg(long, default_value_t = 4)]
    min_len: usize,
    #[arg(long, default_value_t = 10)]
    max_len: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let trees = reference_generator().sample_corpus(a.sentences, a.min_len, a.max_len, a.seed)?;
    let body: String = trees.iter().map(|t| t.to_bracketed() + "\n").collect();
    emit(a.out.as_deref(), &body)
}

/// Seed list: `7`, `1,4,9` or an inclusive range `0..3`.
#[derive(Debug, Clone)]
pub struct Seeds(pub Vec<u64>);

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    let num = |t: &str| t.trim().parse::<u64>().map_err(|_| format!("bad seed {t:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
        if a > b {
            return Err(format!("empty seed range {s}"));
        }
        return Ok(Seeds((a..=b).collect()));
    }
    s.split(',').map(num).collect::<Result<Vec<_>, _>>().map(Seeds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Off,
    Soft,
}

#[derive(Debug, Args)]
pub struct InduceArgs {
    /// Training corpus: bracketed trees or one tokenized sentence per line.
    #[arg(long)]
    corpus: PathBuf,
    /// Validation corpus for model selection (training data is used when absent).
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Focusing-bias file aligned to the training corpus.
    #[arg(long)]
    bias: Option<PathBuf>,
    /// TOML file with training settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    nt: Option<usize>,
    #[arg(long)]
    pt: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<Seeds>,
    /// Epochs without improvement before stopping (0 = never stop early).
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    smoothing: Option<f64>,
    #[arg(long)]
    concentration: Option<f64>,
    #[arg(long, value_enum)]
    weight_mode: Option<ModeArg>,
    #[arg(long, default_value_t = 10_000)]
    max_vocab: usize,
    #[command(flatten)]
    pre: PreprocessFlags,
    /// Output directory for grammar files and `runs.jsonl`.
    #[arg(long, short)]
    out: PathBuf,
}

fn load_config(a: &InduceArgs) -> Result<TrainConfig> {
    let mut c = match &a.config {
        Some(p) => toml::from_str(&read(p)?).with_context(|| format!("config {}", p.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(v) = a.nt {
        c.nonterminals = v;
    }
    if let Some(v) = a.pt {
        c.preterminals = v;
    }
    if let Some(v) = a.epochs {
        c.max_epochs = v;
    }
    if let Some(v) = &a.seeds {
        c.seeds = v.0.clone();
    }
    if let Some(v) = a.patience {
        c.patience = v;
    }
    if let Some(v) = a.smoothing {
        c.smoothing = v;
    }
    if let Some(v) = a.concentration {
        c.concentration = v;
    }
    if let Some(m) = a.weight_mode {
        c.weight_mode = if m == ModeArg::Off { WeightMode::Off } else { WeightMode::Soft };
    }
    c.check()?;
    Ok(c)
}

pub fn load_corpus(path: &Path, vocab: Option<&focusgram::grammar::Vocab>, max_vocab: usize, opts: &PreprocessOptions) -> Result<Corpus> {
    let text = read(path)?;
    Corpus::load(&text, CorpusFormat::detect(&text), vocab, max_vocab, opts).with_context(|| format!("corpus {}", path.display()))
}

pub fn load_bias(path: &Path) -> Result<FocusingBias> {
    let meta = meta_path(path);
    let meta = if meta.exists() { Some(read(&meta)?) } else { None };
    read_bias(&read(path)?, meta.as_deref()).with_context(|| format!("bias {}", path.display()))
}

pub fn induce(a: InduceArgs) -> Result<()> {
    let config = load_config(&a)?;
    let opts = a.pre.options();
    let corpus = load_corpus(&a.corpus, None, a.max_vocab, &opts)?;
    let bias = match &a.bias {
        Some(p) => {
            let b = load_bias(p)?;
            check_bias_alignment(&b, &corpus.lengths()).with_context(|| format!("bias {} vs corpus", p.display()))?;
            Some(b)
        }
        None => None,
    };
    if bias.is_none() && a.weight_mode == Some(ModeArg::Soft) {
        return Err(UsageError("--weight-mode soft needs --bias".into()).into());
    }
    // length-1 sentences have no binary derivation and carry no signal
    let keep: Vec<usize> = (0..corpus.len()).filter(|&i| corpus.records[i].len() >= 2).collect();
    if keep.len() < corpus.len() {
        log::info!("{} of {} corpus lines are shorter than 2 words and are not used", corpus.len() - keep.len(), corpus.len());
    }
    let sentences: Vec<Sentence> = keep.iter().map(|&i| corpus.records[i].sentence.clone()).collect();
    let weights: Option<Vec<SpanWeights>> = bias.map(|b| {
        let w = b.weights();
        keep.iter().map(|&i| w[i].clone()).collect()
    });
    let validation: Option<Vec<Sentence>> = match &a.valid {
        Some(p) => {
            let v = load_corpus(p, Some(&corpus.vocab), a.max_vocab, &opts)?;
            Some(v.records.into_iter().filter(|r| r.len() >= 2).map(|r| r.sentence).collect())
        }
        None => None,
    };
    let inv = Arc::new(SymbolInventory::new(config.nonterminals, config.preterminals, corpus.vocab.clone())?);
    let runs = train(&config, inv, &sentences, validation.as_deref(), weights.as_deref())?;

    let mut records = String::new();
    for run in &runs {
        let name = format!("grammar-seed{}.pcfg", run.seed);
        emit(Some(&a.out.join(&name)), &serialize(&run.grammar))?;
        let mut v = serde_json::to_value(run)?;
        v["grammar"] = serde_json::Value::String(name);
        records.push_str(&serde_json::to_string(&v)?);
        records.push('\n');
        log::info!("seed {}: best epoch {} selection NLL {:.6} ({:.2?})", run.seed, run.best_epoch, run.best_selection_nll, run.wall_time);
    }
    emit(Some(&a.out.join("runs.jsonl")), &records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Left,
    Right,
    Random,
}

#[derive(Debug, Args)]
pub struct BiasArgs {
    /// Corpus the bias is aligned to.
    #[arg(long)]
    corpus: PathBuf,
    /// Parser output files, one bracketed tree per corpus line.
    trees: Vec<PathBuf>,
    /// Add one synthetic tree per sentence.
    #[arg(long, value_enum)]
    kind: Option<KindArg>,
    /// Seed for `--kind random`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    pre: PreprocessFlags,
    /// Bias file; a `.meta` sidecar is written next to it.
    #[arg(long, short)]
    out: PathBuf,
}

/// Span sets of a tree file after the corpus preprocessing.
pub fn tree_file_spans(path: &Path, opts: &PreprocessOptions) -> Result<Vec<Option<SpanSet>>> {
    let text = read(path)?;
    let trees = read_tree_lines(&text).with_context(|| format!("trees {}", path.display()))?;
    Ok(trees.iter().map(|t| t.as_ref().and_then(|t| filter_tree(t, opts)).map(|t| tree_to_spans(&t, false, true))).collect())
}

pub fn bias(a: BiasArgs) -> Result<()> {
    if a.trees.is_empty() && a.kind.is_none() {
        return Err(UsageError("give parser tree files or --kind".into()).into());
    }
    let opts = a.pre.options();
    let lengths = load_corpus(&a.corpus, None, usize::MAX, &opts)?.lengths();
    let mut total: Option<FocusingBias> = None;
    for path in &a.trees {
        let spans = tree_file_spans(path, &opts)?;
        let mut b = count_corpus(&lengths, &[spans]).with_context(|| format!("trees {}", path.display()))?;
        let name = path.display().to_string().replace(char::is_whitespace, "_");
        b.sources.push(SourceDescriptor { name, hash: sha256_hex(read(path)?.as_bytes()) });
        total = Some(match total {
            Some(t) => t.merge(&b)?,
            None => b,
        });
    }
    if let Some(kind) = a.kind {
        let kind = match kind {
            KindArg::Left => SyntheticKind::Left,
            KindArg::Right => SyntheticKind::Right,
            KindArg::Random => SyntheticKind::Random(a.seed),
        };
        let b = synthetic_bias(&lengths, kind);
        total = Some(match total {
            Some(t) => t.merge(&b)?,
            None => b,
        });
    }
    let total = total.expect("at least one source");
    emit(Some(&a.out), &write_bias(&total))?;
    emit(Some(&meta_path(&a.out)), &write_bias_meta(&total))
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    #[arg(long)]
    grammar: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value_t = Decoder::Mbr)]
    decoder: Decoder,
    /// Fail on sentences the grammar cannot derive instead of emitting a fallback tree.
    #[arg(long)]
    strict: bool,
    #[command(flatten)]
    pre: PreprocessFlags,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

pub fn load_grammar(path: &Path) -> Result<Grammar> {
    let g = deserialize(&read(path)?).with_context(|| format!("grammar {}", path.display()))?;
    let bad = focusgram::grammar::validate(&g);
    if !bad.is_empty() {
        log::warn!("{}: {} distributions are not normalized", path.display(), bad.len());
    }
    Ok(g)
}

/// Single-word sentences under the Viterbi decoder get their most probable preterminal.
fn single_word(g: &Grammar, word: usize) -> ParseTree {
    let best = (0..g.dims().preterminals)
        .fold((0, f64::NEG_INFINITY), |(bk, bp), k| {
            let p = g.lexical_logp(k, word);
            if p > bp {
                (k, p)
            } else {
                (bk, bp)
            }
        })
        .0;
    ParseTree::Leaf { pos: 0, symbol: Some(g.dims().nonterminals + best) }
}

fn decode_one(g: &Grammar, s: &Sentence, decoder: Decoder) -> focusgram::Result<ParseTree> {
    match decoder {
        Decoder::Mbr if s.len() == 1 => Ok(ParseTree::Leaf { pos: 0, symbol: None }),
        Decoder::Mbr => mbr_decode(s, g, None),
        Decoder::Cyk if s.len() == 1 => Ok(single_word(g, s.tokens()[0])),
        Decoder::Cyk => viterbi(s, g).map(|d| d.tree),
    }
}

pub fn parse(a: ParseArgs) -> Result<()> {
    let g = load_grammar(&a.grammar)?;
    let corpus = load_corpus(&a.corpus, Some(g.inventory().vocab()), usize::MAX, &a.pre.options())?;
    let labels = (a.decoder == Decoder::Cyk).then(|| g.inventory());
    let lines: Vec<Result<String>> = corpus
        .records
        .par_iter()
        .map(|r| {
            if r.is_skipped() {
                return Ok(String::new());
            }
            let tree = match decode_one(&g, &r.sentence, a.decoder) {
                Ok(t) => t,
                Err(e @ focusgram::Error::ZeroMeasure { .. }) if !a.strict => {
                    log::warn!("line {}: {e}; writing a right-branching tree", r.id);
                    ParseTree::right_branching(r.len())
                }
                Err(e) => return Err(anyhow::Error::new(e).context(format!("line {}", r.id))),
            };
            Ok(tree.to_raw(&r.words, labels).to_bracketed())
        })
        .collect();
    let mut body = String::new();
    for l in lines {
        body.push_str(&l?);
        body.push('\n');
    }
    emit(a.out.as_deref(), &body)
}
