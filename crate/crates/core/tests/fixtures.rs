use focusgram::analysis::{correlate_nll_f1, rule_diversity, rule_frequency_profile, sentence_f1, unique_rules};
use focusgram::corpus::{parse_bracketed, read_tree_lines, tree_to_spans, Corpus, CorpusFormat, PreprocessOptions, SpanSet};
use focusgram::focusing::{common_span_gold_frequency, count_corpus, iou, read_bias, synthetic_bias, write_bias, SyntheticKind};
use focusgram_testkit::fixture;
use std::collections::HashSet;

fn tree_spans(name: &str) -> Vec<Option<SpanSet>> {
    read_tree_lines(&fixture(name)).unwrap().into_iter().map(|t| t.map(|t| tree_to_spans(&t, false, true))).collect()
}

fn lengths() -> Vec<usize> {
    let c = Corpus::load(&fixture("corpus10.txt"), CorpusFormat::Raw, None, 100, &PreprocessOptions::keep_all()).unwrap();
    c.lengths()
}

#[test]
fn three_parser_counts_match_hand_tally() {
    let sources: Vec<_> = ["parser_a.trees", "parser_b.trees", "parser_c.trees"].iter().map(|f| tree_spans(f)).collect();
    let bias = count_corpus(&lengths(), &sources).unwrap();
    assert_eq!(write_bias(&bias), fixture("expected10.bias"));
    assert!(bias.sentences.iter().all(|s| s.counts.values().all(|&c| c <= 3)));
}

#[test]
fn merged_bias_equals_sum_of_single_file_biases() {
    let lens = lengths();
    let files = ["parser_a.trees", "parser_b.trees", "parser_c.trees"];
    let mut merged = count_corpus(&lens, &[tree_spans(files[0])]).unwrap();
    for f in &files[1..] {
        merged = merged.merge(&count_corpus(&lens, &[tree_spans(f)]).unwrap()).unwrap();
    }
    assert_eq!(merged, read_bias(&fixture("expected10.bias"), None).unwrap());
}

#[test]
fn pooled_iou_of_two_random_biases() {
    let lens: Vec<usize> = (0..50).map(|i| 2 + (i * 7) % 11).collect();
    let as_sets = |b: &focusgram::focusing::FocusingBias| -> Vec<Option<SpanSet>> {
        b.sentences.iter().map(|s| Some(SpanSet { len: s.len, spans: s.counts.keys().copied().collect() })).collect()
    };
    let a = as_sets(&synthetic_bias(&lens, SyntheticKind::Random(1)));
    let b = as_sets(&synthetic_bias(&lens, SyntheticKind::Random(2)));
    // hand pooling over (sentence, span) pairs
    let pairs = |x: &[Option<SpanSet>]| -> HashSet<(usize, usize, usize)> {
        x.iter().enumerate().flat_map(|(i, s)| s.as_ref().unwrap().iter().map(move |sp| (i, sp.start, sp.end))).collect()
    };
    let (pa, pb) = (pairs(&a), pairs(&b));
    let expected = pa.intersection(&pb).count() as f64 / pa.union(&pb).count() as f64;
    assert!((iou(&a, &b).unwrap() - expected).abs() < 1e-15);
    assert!((iou(&b, &a).unwrap() - expected).abs() < 1e-15);
}

#[test]
fn common_spans_match_hand_count() {
    let gold = tree_spans("gold5.trees");
    let parsers: Vec<Vec<Option<SpanSet>>> =
        ["parser_a.trees", "parser_b.trees", "parser_c.trees"].iter().map(|f| tree_spans(f)[..5].to_vec()).collect();
    let r = common_span_gold_frequency(&parsers, &gold).unwrap();
    let got: Vec<(Vec<usize>, usize, usize)> = r.subsets.iter().map(|s| (s.parsers.clone(), s.common, s.in_gold)).collect();
    assert_eq!(
        got,
        vec![
            (vec![0], 12, 8),
            (vec![1], 12, 9),
            (vec![0, 1], 5, 5),
            (vec![2], 12, 12),
            (vec![0, 2], 8, 8),
            (vec![1, 2], 9, 9),
            (vec![0, 1, 2], 5, 5),
        ]
    );
    assert!((r.by_size[0].mean_in_gold - 29.0 / 3.0).abs() < 1e-12);
    assert!((r.by_size[1].mean_common - 22.0 / 3.0).abs() < 1e-12);
    assert_eq!(r.by_size[2].precision, 1.0);
}

#[test]
fn gold_spans_of_fixture() {
    let gold = tree_spans("gold5.trees");
    assert_eq!(gold[1].as_ref().unwrap(), &SpanSet::from_pairs(4, &[(0, 2), (2, 4), (0, 4)]));
    assert_eq!(gold[3].as_ref().unwrap(), &SpanSet::from_pairs(5, &[(0, 2), (2, 5), (3, 5), (0, 5)]));
}

#[test]
fn rule_diversity_of_gold_fixture() {
    let trees: Vec<_> = read_tree_lines(&fixture("gold5.trees")).unwrap().into_iter().flatten().collect();
    // S→NP VBZ, NP→DT NN | S→NP VP, NP→DT NN, VP→VBD RP | S→NNS VP, VP→VBP NNS
    // | S→NP VP, NP→DT JJ, VP→NN VP, VP→VBD NNS | S→NNS VBP
    let counts: Vec<usize> = trees.iter().map(|t| unique_rules(t, false).unwrap()).collect();
    assert_eq!(counts, vec![2, 3, 2, 4, 1]);
    let rows = rule_diversity(&trees, false).unwrap();
    let by_len: Vec<(usize, f64)> = rows.iter().map(|r| (r.length, r.mean_unique_rules)).collect();
    assert_eq!(by_len, vec![(2, 1.0), (3, 2.0), (4, 3.0), (5, 4.0)]);
    let lexical: Vec<usize> = trees.iter().map(|t| unique_rules(t, true).unwrap()).collect();
    assert_eq!(lexical, vec![5, 7, 5, 9, 3]);
}

#[test]
fn rule_frequency_of_fixture_parses() {
    let trees = vec![
        parse_bracketed("(NT-0 (T-0 a) (NT-1 (T-1 b) (T-0 c)))").unwrap(),
        parse_bracketed("(NT-0 (NT-1 (T-1 a) (T-0 b)) (T-0 c))").unwrap(),
        parse_bracketed("(NT-0 (T-0 a) (NT-1 (T-1 b) (NT-1 (T-1 c) (T-0 d))))").unwrap(),
    ];
    let p = rule_frequency_profile(&trees).unwrap();
    assert_eq!(p.total, 2 + 2 + 3);
    assert_eq!(
        p.rules,
        vec![
            ("NT-1 -> T-1 T-0".to_string(), 3),
            ("NT-0 -> T-0 NT-1".to_string(), 2),
            ("NT-0 -> NT-1 T-0".to_string(), 1),
            ("NT-1 -> T-1 NT-1".to_string(), 1),
        ]
    );
    assert!((p.top_share(3) - 6.0 / 7.0).abs() < 1e-15);
}

#[test]
fn single_derivation_corpus_has_one_rule() {
    let t = parse_bracketed("(NT-0 (T-0 a) (T-0 b))").unwrap();
    let p = rule_frequency_profile(&[t.clone(), t]).unwrap();
    assert_eq!(p.rules.len(), 1);
    assert_eq!(p.top_share(1), 1.0);
}

#[test]
fn pearson_on_eight_points() {
    let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
    let y = [2.0, 1.0, 4.0, 3.0, 7.0, 8.0, 6.0, 5.0];
    let c = correlate_nll_f1(&x, &y).unwrap();
    // Σdxdy = 31, Σdx² = Σdy² = 42
    assert!((c.r - 31.0 / 42.0).abs() < 1e-12);
    assert!((c.p_value - 0.036553).abs() < 5e-6);
    let x = [101.2, 100.8, 102.5, 99.9, 100.1, 101.7, 100.4, 102.0];
    let y = [41.0, 55.3, 38.2, 47.9, 60.1, 35.5, 52.4, 44.8];
    let c = correlate_nll_f1(&x, &y).unwrap();
    assert!((c.r + 0.746505).abs() < 5e-6);
    assert!((c.p_value - 0.033374).abs() < 5e-6);
}

#[test]
fn sentence_f1_on_fixture_lines() {
    let gold = tree_spans("gold5.trees");
    let c = tree_spans("parser_c.trees");
    for (g, p) in gold.iter().zip(&c) {
        assert_eq!(sentence_f1(p.as_ref().unwrap(), g.as_ref().unwrap()).unwrap(), 100.0);
    }
    let a = tree_spans("parser_a.trees");
    // line 4: left-branching {(0,2),(0,3),(0,4)} vs gold {(0,2),(2,5),(3,5)}: P = R = 1/3
    let f = sentence_f1(a[3].as_ref().unwrap(), gold[3].as_ref().unwrap()).unwrap();
    assert!((f - 100.0 / 3.0).abs() < 1e-12);
}
