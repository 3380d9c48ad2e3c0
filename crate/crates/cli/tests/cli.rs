use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use focusgram::focusing::read_bias;
use focusgram_testkit::fixture_path;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_focusgram");

fn synthetic_corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic.trees")
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().expect("spawn focusgram")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn body(text: &str) -> String {
    let mut lines = text.lines();
    let first = lines.next().unwrap_or_default();
    assert!(first.starts_with("# focusgram "), "missing header: {first:?}");
    lines.map(|l| format!("{l}\n")).collect()
}

fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

const DETERMINISTIC: &str = "pcfg v1 2 2 3\na\nb\n<unk>\nroot 0 0\nbin 0 2 1 0\nbin 1 3 3 0\nlex 0 0 0\nlex 1 1 0\n";

#[test]
fn induce_writes_one_grammar_per_seed() {
    let dir = TempDir::new().unwrap();
    let corpus = synthetic_corpus();
    ok(
        dir.path(),
        &["induce", "--corpus", corpus.to_str().unwrap(), "--nt", "5", "--pt", "10", "--seeds", "0..3", "--epochs", "2", "-o", "out"],
    );
    for seed in 0..4 {
        let g = read(dir.path().join(format!("out/grammar-seed{seed}.pcfg")));
        assert!(g.starts_with("# focusgram "));
        assert!(focusgram::grammar::validate(&focusgram::grammar::deserialize(&g).unwrap()).is_empty());
    }
    let runs = body(&read(dir.path().join("out/runs.jsonl")));
    let records: Vec<serde_json::Value> = runs.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 4);
    assert!(records.iter().all(|r| r["weight_mode"] == "off" && r["epochs"].as_array().unwrap().len() == 2));
}

#[test]
fn induce_with_bias_records_soft_mode_and_reruns_identically() {
    let dir = TempDir::new().unwrap();
    let corpus = synthetic_corpus();
    let c = corpus.to_str().unwrap();
    ok(dir.path(), &["bias", "--corpus", c, "--kind", "right", "-o", "right.bias"]);
    let args = ["induce", "--corpus", c, "--bias", "right.bias", "--nt", "3", "--pt", "6", "--seeds", "4,9", "--epochs", "3", "-o", "out"];
    ok(dir.path(), &args);
    let first: Vec<String> =
        ["runs.jsonl", "grammar-seed4.pcfg", "grammar-seed9.pcfg"].iter().map(|f| read(dir.path().join("out").join(f))).collect();
    assert!(body(&first[0]).lines().all(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["weight_mode"] == "soft"));
    ok(dir.path(), &args);
    for (f, before) in ["runs.jsonl", "grammar-seed4.pcfg", "grammar-seed9.pcfg"].iter().zip(&first) {
        assert_eq!(&read(dir.path().join("out").join(f)), before, "{f}");
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("train.toml"), "nonterminals = 2\npreterminals = 4\nmax_epochs = 2\nseeds = [3]\n").unwrap();
    let corpus = fixture_path("corpus10.txt");
    ok(dir.path(), &["induce", "--config", "train.toml", "--corpus", corpus.to_str().unwrap(), "--pt", "3", "-o", "out"]);
    let g = focusgram::grammar::deserialize(&read(dir.path().join("out/grammar-seed3.pcfg"))).unwrap();
    assert_eq!((g.dims().nonterminals, g.dims().preterminals), (2, 3));
    fs::write(dir.path().join("bad.toml"), "nonterminal = 2\n").unwrap();
    let out = run(dir.path(), &["induce", "--config", "bad.toml", "--corpus", corpus.to_str().unwrap(), "-o", "out"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bias_from_three_parsers_is_the_sum_of_single_file_biases() {
    let dir = TempDir::new().unwrap();
    let corpus = fixture_path("corpus10.txt");
    let files: Vec<PathBuf> = ["parser_a.trees", "parser_b.trees", "parser_c.trees"].iter().map(|f| fixture_path(f)).collect();
    let mut args = vec!["bias", "--corpus", corpus.to_str().unwrap(), "--keep-punct", "-o", "all.bias"];
    args.extend(files.iter().map(|f| f.to_str().unwrap()));
    ok(dir.path(), &args);
    let all = read_bias(&read(dir.path().join("all.bias")), Some(&read(dir.path().join("all.bias.meta")))).unwrap();
    assert_eq!(all.sources.len(), 3);
    assert!(all.sources.iter().all(|s| s.hash.len() == 64));
    assert!(all.sentences.iter().all(|s| s.trees == 3 && s.counts.values().all(|&c| c <= 3)));

    let mut sum: Option<focusgram::focusing::FocusingBias> = None;
    for (k, f) in files.iter().enumerate() {
        let out = format!("{k}.bias");
        ok(dir.path(), &["bias", "--corpus", corpus.to_str().unwrap(), "--keep-punct", "-o", &out, f.to_str().unwrap()]);
        let b = read_bias(&read(dir.path().join(&out)), None).unwrap();
        sum = Some(match sum {
            Some(s) => s.merge(&b).unwrap(),
            None => b,
        });
    }
    assert_eq!(sum.unwrap().sentences, all.sentences);
}

#[test]
fn random_bias_is_reproducible_and_seed_dependent() {
    let dir = TempDir::new().unwrap();
    let corpus = synthetic_corpus();
    let c = corpus.to_str().unwrap();
    for (out, seed) in [("a.bias", "5"), ("b.bias", "5"), ("c.bias", "6")] {
        ok(dir.path(), &["bias", "--corpus", c, "--kind", "random", "--seed", seed, "-o", out]);
    }
    let (a, b, c) =
        (body(&read(dir.path().join("a.bias"))), body(&read(dir.path().join("b.bias"))), body(&read(dir.path().join("c.bias"))));
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(body(&read(dir.path().join("a.bias.meta"))), "source synthetic:random:5 -\n");
}

#[test]
fn misaligned_bias_exits_with_data_error() {
    let dir = TempDir::new().unwrap();
    let corpus = fixture_path("corpus10.txt");
    let parser = fixture_path("gold5.trees");
    let out = run(dir.path(), &["bias", "--corpus", corpus.to_str().unwrap(), "-o", "x.bias", parser.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alignment"));
}

#[test]
fn parse_recovers_the_tree_of_a_deterministic_grammar() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("det.pcfg"), DETERMINISTIC).unwrap();
    fs::write(dir.path().join("in.txt"), "a b b\n\nb\na b b\n").unwrap();
    let mbr = body(&ok(dir.path(), &["parse", "--grammar", "det.pcfg", "--corpus", "in.txt"]));
    assert_eq!(mbr, "(_ (_ a) (_ (_ b) (_ b)))\n\n(_ b)\n(_ (_ a) (_ (_ b) (_ b)))\n");
    let cyk = body(&ok(dir.path(), &["parse", "--grammar", "det.pcfg", "--corpus", "in.txt", "--decoder", "cyk"]));
    assert_eq!(cyk.lines().next().unwrap(), "(NT-0 (T-0 a) (NT-1 (T-1 b) (T-1 b)))");
    assert_eq!(cyk.lines().count(), 4);
}

#[test]
fn parse_reports_underivable_sentences_in_strict_mode() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("det.pcfg"), DETERMINISTIC).unwrap();
    fs::write(dir.path().join("in.txt"), "b a\n").unwrap();
    let lenient = body(&ok(dir.path(), &["parse", "--grammar", "det.pcfg", "--corpus", "in.txt"]));
    assert_eq!(lenient, "(_ (_ b) (_ a))\n");
    let strict = run(dir.path(), &["parse", "--grammar", "det.pcfg", "--corpus", "in.txt", "--strict"]);
    assert_eq!(strict.status.code(), Some(4));
}

#[test]
fn eval_gold_against_itself_is_perfect() {
    let dir = TempDir::new().unwrap();
    let gold = fixture_path("gold5.trees");
    let g = gold.to_str().unwrap();
    let out = body(&ok(dir.path(), &["eval", "--gold", g, g, "--json"]));
    let first: serde_json::Value = serde_json::from_str(out.lines().next().unwrap()).unwrap();
    assert_eq!(first["mean"], 100.0);
    assert_eq!(first["std"], 0.0);
    let table = body(&ok(dir.path(), &["eval", "--gold", g, g]));
    assert!(table.contains("\t5\t0\t100.0000\t0.0000\n"), "{table}");
}

#[test]
fn analyze_iou_of_fixture_parsers() {
    let dir = TempDir::new().unwrap();
    let (a, c) = (fixture_path("parser_a.trees"), fixture_path("parser_c.trees"));
    let out = body(&ok(dir.path(), &["analyze", "iou", a.to_str().unwrap(), c.to_str().unwrap(), "--json"]));
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    let spans = |f: &str| -> Vec<Option<focusgram::corpus::SpanSet>> {
        focusgram::corpus::read_tree_lines(&read(fixture_path(f)))
            .unwrap()
            .iter()
            .map(|t| t.as_ref().map(|t| focusgram::corpus::tree_to_spans(t, false, true)))
            .collect()
    };
    let expected = focusgram::focusing::iou(&spans("parser_a.trees"), &spans("parser_c.trees")).unwrap();
    assert_eq!(v["iou"].as_f64().unwrap(), expected);
    assert!(expected > 0.0 && expected < 1.0);
}

#[test]
fn analyze_common_reports_every_subset() {
    let dir = TempDir::new().unwrap();
    let gold = fixture_path("gold5.trees");
    let files: Vec<PathBuf> = ["parser_a.trees", "parser_b.trees", "parser_c.trees"].iter().map(|f| fixture_path(f)).collect();
    // the gold fixture covers the first five corpus lines
    for f in &files {
        let head: String = read(f).lines().take(5).map(|l| format!("{l}\n")).collect();
        fs::write(dir.path().join(f.file_name().unwrap()), head).unwrap();
    }
    let out = body(&ok(
        dir.path(),
        &["analyze", "common", "--gold", gold.to_str().unwrap(), "--keep-punct", "parser_a.trees", "parser_b.trees", "parser_c.trees"],
    ));
    assert!(out.contains("parser_a.trees+parser_b.trees+parser_c.trees\t5\t5\n"), "{out}");
    assert!(out.contains("parser_c.trees\t12\t12\n"));
}

#[test]
fn analyze_corr_diversity_and_freq() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("pts.txt"), "# nll f1\n1 2\n2 1\n3 4\n4 3\n5 7\n6 8\n7 6\n8 5\n").unwrap();
    let out = body(&ok(dir.path(), &["analyze", "corr", "pts.txt"]));
    assert!(out.contains("pearson_r\t0.7381\n"), "{out}");
    fs::write(dir.path().join("flat.txt"), "1 2\n2 2\n3 2\n").unwrap();
    assert_eq!(run(dir.path(), &["analyze", "corr", "flat.txt"]).status.code(), Some(2));

    let gold = fixture_path("gold5.trees");
    let div = body(&ok(dir.path(), &["analyze", "diversity", gold.to_str().unwrap(), "--plot", "div.dat"]));
    assert_eq!(div, "length\ttrees\tmean_unique_rules\n2\t1\t1.0000\n3\t2\t2.0000\n4\t1\t3.0000\n5\t1\t4.0000\n");
    assert_eq!(body(&read(dir.path().join("div.dat"))), "2 1.0000\n3 2.0000\n4 3.0000\n5 4.0000\n");

    fs::write(dir.path().join("mbr.trees"), "(_ (_ a) (_ b))\n").unwrap();
    let unlabeled = run(dir.path(), &["analyze", "freq", "mbr.trees"]);
    assert_eq!(unlabeled.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&unlabeled.stderr).contains("cyk"));
}

#[test]
fn soa_reports_equal_probabilities() {
    let dir = TempDir::new().unwrap();
    let out = body(&ok(dir.path(), &["soa", "--a", "0.3", "--b", "0.7", "--json"]));
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["probabilities_equal"], true);
    assert!(v["max_abs_delta_logp"].as_f64().unwrap() <= 1e-9);
    assert!(v["differing_parses"].as_u64().unwrap() >= 1);
    assert!(v["max_abs_alpha_minus_one"].as_f64().unwrap() <= 1e-12);
    assert_eq!(run(dir.path(), &["soa", "--a", "0.8", "--b", "0.7"]).status.code(), Some(2));
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dir = TempDir::new().unwrap();
    let corpus = synthetic_corpus();
    let c = corpus.to_str().unwrap();
    ok(dir.path(), &["bias", "--corpus", c, "--kind", "random", "--seed", "2", "-o", "r.bias"]);
    for t in ["1", "4"] {
        let out = format!("g{t}");
        ok(
            dir.path(),
            &[
                "--threads",
                t,
                "induce",
                "--corpus",
                c,
                "--bias",
                "r.bias",
                "--nt",
                "3",
                "--pt",
                "6",
                "--seeds",
                "0",
                "--epochs",
                "3",
                "-o",
                &out,
            ],
        );
        ok(
            dir.path(),
            &[
                "--threads",
                t,
                "parse",
                "--grammar",
                &format!("{out}/grammar-seed0.pcfg"),
                "--corpus",
                c,
                "-o",
                &format!("{out}/pred.trees"),
            ],
        );
    }
    for f in ["runs.jsonl", "grammar-seed0.pcfg", "pred.trees"] {
        assert_eq!(body(&read(dir.path().join("g1").join(f))), body(&read(dir.path().join("g4").join(f))), "{f}");
    }
}
