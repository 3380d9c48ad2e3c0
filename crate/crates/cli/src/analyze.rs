//! Evaluation and diagnostic reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use focusgram::analysis::{
    across_runs, build_soa_pair, corpus_s_f1, correlate_nll_f1, rule_diversity, rule_frequency_profile, verify_soa, EvalReport,
};
use focusgram::corpus::{filter_tree, read_tree_lines, CorpusFormat, PreprocessOptions, RawTree, SpanSet};
use focusgram::focusing::{common_span_gold_frequency, iou, read_bias};
use focusgram::grammar::{Sentence, Vocab};

use crate::output::{emit, fmt4, read};
use crate::pipeline::{load_corpus, tree_file_spans};
use crate::{PreprocessFlags, ReportFlags, UsageError};

fn jsonl(records: &[serde_json::Value]) -> String {
    records.iter().map(|r| r.to_string() + "\n").collect()
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Gold trees, one per corpus line.
    #[arg(long)]
    gold: PathBuf,
    /// Predicted tree files (one per run).
    #[arg(required = true)]
    pred: Vec<PathBuf>,
    /// Include per-sentence F1 values.
    #[arg(long)]
    per_sentence: bool,
    #[command(flatten)]
    pre: PreprocessFlags,
    #[command(flatten)]
    report: ReportFlags,
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let opts = a.pre.options();
    let gold = load_corpus(&a.gold, None, usize::MAX, &opts)?.gold_spans();
    if gold.iter().all(Option::is_none) {
        return Err(UsageError(format!("{} contains no gold trees", a.gold.display())).into());
    }
    let mut reports: Vec<EvalReport> = Vec::new();
    for p in &a.pred {
        let pred = tree_file_spans(p, &opts)?;
        reports.push(corpus_s_f1(&pred, &gold).with_context(|| format!("{} vs {}", p.display(), a.gold.display()))?);
    }
    let runs = across_runs(&reports);
    let mut body = String::new();
    if a.report.json {
        let mut recs = Vec::new();
        for (p, r) in a.pred.iter().zip(&reports) {
            let mut v = json!({
                "file": p.display().to_string(),
                "mean": r.summary.mean,
                "std": r.summary.std,
                "sentences": r.summary.n,
                "skipped": r.skipped,
                "config": r.config,
            });
            if a.per_sentence {
                v["per_sentence"] = json!(r.per_sentence);
            }
            recs.push(v);
        }
        recs.push(json!({ "across_runs": { "mean": runs.mean, "std": runs.std, "runs": runs.n } }));
        body = jsonl(&recs);
    } else {
        let _ = writeln!(body, "metric\tS-F1 ({})", focusgram::analysis::SF1_CONFIG);
        let _ = writeln!(body, "file\tsentences\tskipped\tmean\tstd");
        for (p, r) in a.pred.iter().zip(&reports) {
            let _ = writeln!(body, "{}\t{}\t{}\t{}\t{}", p.display(), r.summary.n, r.skipped, fmt4(r.summary.mean), fmt4(r.summary.std));
        }
        let _ = writeln!(body, "across_runs\t{}\t-\t{}\t{}", runs.n, fmt4(runs.mean), fmt4(runs.std));
        if a.per_sentence {
            let _ = writeln!(body, "line\t{}", (1..=reports.len()).map(|k| format!("run{k}")).collect::<Vec<_>>().join("\t"));
            for i in 0..gold.len() {
                let cells: Vec<String> = reports.iter().map(|r| r.per_sentence[i].map(fmt4).unwrap_or_else(|| "-".into())).collect();
                let _ = writeln!(body, "{}\t{}", i + 1, cells.join("\t"));
            }
        }
    }
    emit(a.report.out.as_deref(), &body)
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Mean number of unique rules per parse, by sentence length.
    Diversity(DiversityArgs),
    /// Binary-rule frequency profile and top-k share.
    Freq(FreqArgs),
    /// Pearson correlation between per-run NLL and S-F1.
    Corr(CorrArgs),
    /// Corpus-pooled IoU of spans between two tree or bias files.
    Iou(IouArgs),
    /// Spans shared by parser subsets and how many of them are gold.
    Common(CommonArgs),
}

#[derive(Debug, Args)]
pub struct DiversityArgs {
    /// Labeled trees (Viterbi output or gold).
    trees: PathBuf,
    /// Count lexical rules as well as binary ones.
    #[arg(long)]
    lexical: bool,
    /// Also write `length mean` plot data here.
    #[arg(long)]
    plot: Option<PathBuf>,
    #[command(flatten)]
    pre: PreprocessFlags,
    #[command(flatten)]
    report: ReportFlags,
}

#[derive(Debug, Args)]
pub struct FreqArgs {
    /// Labeled trees (Viterbi output).
    trees: PathBuf,
    #[arg(long, default_value_t = 3)]
    top: usize,
    /// Also write `rank share` plot data here.
    #[arg(long)]
    plot: Option<PathBuf>,
    #[command(flatten)]
    pre: PreprocessFlags,
    #[command(flatten)]
    report: ReportFlags,
}

#[derive(Debug, Args)]
pub struct CorrArgs {
    /// Two whitespace-separated columns per line: NLL and S-F1 of one run.
    points: PathBuf,
    #[command(flatten)]
    report: ReportFlags,
}

#[derive(Debug, Args)]
pub struct IouArgs {
    a: PathBuf,
    b: PathBuf,
    #[command(flatten)]
    pre: PreprocessFlags,
    #[command(flatten)]
    report: ReportFlags,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    gold: PathBuf,
    /// Parser tree files.
    #[arg(required = true)]
    parsers: Vec<PathBuf>,
    #[command(flatten)]
    pre: PreprocessFlags,
    #[command(flatten)]
    report: ReportFlags,
}

pub fn analyze(c: AnalyzeCommand) -> Result<()> {
    match c {
        AnalyzeCommand::Diversity(a) => diversity(a),
        AnalyzeCommand::Freq(a) => freq(a),
        AnalyzeCommand::Corr(a) => corr(a),
        AnalyzeCommand::Iou(a) => iou_report(a),
        AnalyzeCommand::Common(a) => common(a),
    }
}

fn load_trees(path: &Path, opts: &PreprocessOptions) -> Result<Vec<RawTree>> {
    let trees = read_tree_lines(&read(path)?).with_context(|| format!("trees {}", path.display()))?;
    Ok(trees.iter().flatten().filter_map(|t| filter_tree(t, opts)).collect())
}

fn diversity(a: DiversityArgs) -> Result<()> {
    let trees = load_trees(&a.trees, &a.pre.options())?;
    let rows = rule_diversity(&trees, a.lexical)?;
    let body = if a.report.json {
        jsonl(&rows.iter().map(|r| json!(r)).collect::<Vec<_>>())
    } else {
        let mut s = String::from("length\ttrees\tmean_unique_rules\n");
        for r in &rows {
            let _ = writeln!(s, "{}\t{}\t{}", r.length, r.trees, fmt4(r.mean_unique_rules));
        }
        s
    };
    if let Some(p) = &a.plot {
        emit(Some(p), &rows.iter().map(|r| format!("{} {}\n", r.length, fmt4(r.mean_unique_rules))).collect::<String>())?;
    }
    emit(a.report.out.as_deref(), &body)
}

fn freq(a: FreqArgs) -> Result<()> {
    let trees = load_trees(&a.trees, &a.pre.options())?;
    let p = rule_frequency_profile(&trees)?;
    let share = |c: usize| if p.total == 0 { 0.0 } else { c as f64 / p.total as f64 };
    let body = if a.report.json {
        let mut recs = vec![json!({ "total": p.total, "top": a.top, "top_share": p.top_share(a.top) })];
        recs.extend(p.rules.iter().enumerate().map(|(i, (r, c))| json!({ "rank": i + 1, "rule": r, "count": c, "share": share(*c) })));
        jsonl(&recs)
    } else {
        let mut s = format!("total\t{}\ntop{}_share\t{}\nrank\tcount\tshare\trule\n", p.total, a.top, fmt4(p.top_share(a.top)));
        for (i, (r, c)) in p.rules.iter().enumerate() {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", i + 1, c, fmt4(share(*c)), r);
        }
        s
    };
    if let Some(path) = &a.plot {
        emit(Some(path), &p.rules.iter().enumerate().map(|(i, (_, c))| format!("{} {}\n", i + 1, fmt4(share(*c)))).collect::<String>())?;
    }
    emit(a.report.out.as_deref(), &body)
}

fn corr(a: CorrArgs) -> Result<()> {
    let text = read(&a.points)?;
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = || focusgram::Error::Parse { line: i + 1, msg: format!("expected two numbers, found {line:?}") };
        if f.len() != 2 {
            return Err(bad().into());
        }
        x.push(f[0].parse::<f64>().map_err(|_| bad())?);
        y.push(f[1].parse::<f64>().map_err(|_| bad())?);
    }
    let c = correlate_nll_f1(&x, &y)?;
    let body =
        if a.report.json { jsonl(&[json!(c)]) } else { format!("runs\t{}\npearson_r\t{}\np_value\t{}\n", c.n, fmt4(c.r), fmt4(c.p_value)) };
    emit(a.report.out.as_deref(), &body)
}

/// Span sets of a tree file or a bias file (every span with a positive count).
fn spans_of(path: &Path, opts: &PreprocessOptions) -> Result<Vec<Option<SpanSet>>> {
    let text = read(path)?;
    if CorpusFormat::detect(&text) == CorpusFormat::Trees {
        return tree_file_spans(path, opts);
    }
    let bias = read_bias(&text, None).with_context(|| format!("{} is neither a tree file nor a bias file", path.display()))?;
    Ok(bias
        .sentences
        .iter()
        .map(|s| {
            (s.len > 0).then(|| {
                let mut set = SpanSet::new(s.len);
                s.counts.iter().filter(|(_, &c)| c > 0).for_each(|(sp, _)| set.insert(*sp));
                set
            })
        })
        .collect())
}

fn iou_report(a: IouArgs) -> Result<()> {
    let opts = a.pre.options();
    let (x, y) = (spans_of(&a.a, &opts)?, spans_of(&a.b, &opts)?);
    let v = iou(&x, &y)?;
    let body = if a.report.json {
        jsonl(&[json!({ "iou": v, "sentences": x.len() })])
    } else {
        format!("sentences\t{}\niou\t{}\n", x.len(), fmt4(v))
    };
    emit(a.report.out.as_deref(), &body)
}

fn common(a: CommonArgs) -> Result<()> {
    let opts = a.pre.options();
    let gold = load_corpus(&a.gold, None, usize::MAX, &opts)?.gold_spans();
    let parsers = a.parsers.iter().map(|p| tree_file_spans(p, &opts)).collect::<Result<Vec<_>>>()?;
    let r = common_span_gold_frequency(&parsers, &gold)?;
    let name = |ps: &[usize]| ps.iter().map(|&i| a.parsers[i].display().to_string()).collect::<Vec<_>>().join("+");
    let body = if a.report.json {
        let mut recs: Vec<_> =
            r.subsets.iter().map(|s| json!({ "parsers": name(&s.parsers), "common": s.common, "in_gold": s.in_gold })).collect();
        recs.extend(r.by_size.iter().map(|s| {
            json!({ "size": s.size, "subsets": s.subsets, "mean_common": s.mean_common, "mean_in_gold": s.mean_in_gold, "precision": s.precision })
        }));
        jsonl(&recs)
    } else {
        let mut s = String::from("parsers\tcommon\tin_gold\n");
        for x in &r.subsets {
            let _ = writeln!(s, "{}\t{}\t{}", name(&x.parsers), x.common, x.in_gold);
        }
        s.push_str("size\tsubsets\tmean_common\tmean_in_gold\tprecision\n");
        for x in &r.by_size {
            let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}", x.size, x.subsets, fmt4(x.mean_common), fmt4(x.mean_in_gold), fmt4(x.precision));
        }
        s
    };
    emit(a.report.out.as_deref(), &body)
}

#[derive(Debug, Args)]
pub struct SoaArgs {
    /// Probability of N_i → N_j T in the base grammar.
    #[arg(long)]
    a: f64,
    /// Probability of N_i → T N_j in the base grammar.
    #[arg(long)]
    b: f64,
    #[arg(long, default_value_t = 3)]
    nt: usize,
    /// Number of distinct words (the unknown token is added on top).
    #[arg(long, default_value_t = 4)]
    vocab: usize,
    #[arg(long, default_value_t = 0)]
    i: usize,
    #[arg(long, default_value_t = 1)]
    j: usize,
    #[arg(long, default_value_t = 11)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    sentences: usize,
    #[arg(long, default_value_t = 3)]
    min_len: usize,
    #[arg(long, default_value_t = 8)]
    max_len: usize,
    #[command(flatten)]
    report: ReportFlags,
}

pub fn soa(a: SoaArgs) -> Result<()> {
    if a.vocab == 0 || a.min_len < 1 || a.min_len > a.max_len {
        return Err(UsageError("need --vocab ≥ 1 and 1 ≤ --min-len ≤ --max-len".into()).into());
    }
    let vocab = Vocab::new((0..a.vocab).map(|k| format!("w{k}")))?;
    let pair = build_soa_pair(a.seed, a.nt, vocab, a.a, a.b, (a.i, a.j))?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let sentences: Vec<Sentence> = (0..a.sentences)
        .map(|_| {
            let n = rng.random_range(a.min_len..=a.max_len);
            Sentence((0..n).map(|_| rng.random_range(0..a.vocab)).collect())
        })
        .collect();
    let r = verify_soa(&pair, &sentences)?;
    let equal = r.max_abs_delta_logp <= 1e-9;
    let body = if a.report.json {
        let mut v = json!(r);
        v["probabilities_equal"] = json!(equal);
        jsonl(&[v])
    } else {
        format!(
            "sentences\t{}\nmax_abs_delta_logp\t{:.3e}\nprobabilities_equal\t{}\ndiffering_parses\t{}\nalpha_evaluated\t{}\nmax_abs_alpha_minus_one\t{:.3e}\n",
            r.sentences, r.max_abs_delta_logp, equal, r.differing_parses, r.alpha_evaluated, r.max_abs_alpha_minus_one
        )
    };
    emit(a.report.out.as_deref(), &body)
}
