//! Acceptance checks. Each criterion prints one `[PASS]` or `[FAIL]` line;
//! the process exits non-zero when any of them fails.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wfc_core::abstraction::{abstract_text, Abstractor, PlaceholderCategory};
use wfc_core::dataset::{
    build_jc_instances, build_ns_instances, split_by_project, Representation, SplitRatios,
};
use wfc_core::fixtures::{
    FIVE_STEP_WORKFLOW, HELLO_C_WORKFLOW, PHPUNIT_ABSTRACTED, PHPUNIT_WORKFLOW, TWO_JOBS_WORKFLOW,
};
use wfc_core::metrics::{
    bleu4, bucket_by_confidence, exact_match, exact_match_strict, rouge_l_tokens, BUCKET_COUNT,
};
use wfc_core::ngram::{NgramModel, BOS};
use wfc_core::records::{PredictionRecord, StopReason};
use wfc_core::stats::{cliffs_delta_value, holm_adjust, mcnemar_counts, wilcoxon_signed_rank};
use wfc_core::tokens::{token_texts, Token, TokenStream};
use wfc_core::workflow::{canonicalize, parse_workflow, WorkflowDoc};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn mini_corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mini-corpus")
}

fn fixture_docs() -> Vec<WorkflowDoc> {
    let mut docs: Vec<WorkflowDoc> = [
        ("hello-c", HELLO_C_WORKFLOW),
        ("phpunit", PHPUNIT_WORKFLOW),
        ("five-step", FIVE_STEP_WORKFLOW),
        ("two-jobs", TWO_JOBS_WORKFLOW),
    ]
    .iter()
    .map(|(repo, text)| parse_workflow(text, repo, ".github/workflows/ci.yml").unwrap())
    .collect();
    let root = mini_corpus();
    let mut repos: Vec<_> = std::fs::read_dir(&root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    repos.sort();
    for repo in repos {
        let wf_dir = repo.join(".github/workflows");
        let Ok(entries) = std::fs::read_dir(&wf_dir) else {
            continue;
        };
        let mut files: Vec<_> = entries.map(|e| e.unwrap().path()).collect();
        files.sort();
        for f in files {
            let text = std::fs::read_to_string(&f).unwrap();
            let name = repo.file_name().unwrap().to_string_lossy().to_string();
            let path = format!(
                ".github/workflows/{}",
                f.file_name().unwrap().to_string_lossy()
            );
            docs.push(parse_workflow(&text, &name, &path).unwrap());
        }
    }
    docs
}

fn abstraction_fidelity() -> Check {
    let start = Instant::now();
    let doc = parse_workflow(
        PHPUNIT_WORKFLOW,
        "wp/plugin",
        ".github/workflows/phpunit.yml",
    )
    .map_err(|e| e.to_string())?;
    let got = abstract_text(&canonicalize(&doc));
    let elapsed = start.elapsed();
    let want = token_texts(PHPUNIT_ABSTRACTED);
    let have = token_texts(&got);
    let matching = want.iter().zip(&have).filter(|(a, b)| a == b).count();
    ensure(got == PHPUNIT_ABSTRACTED, || {
        format!("{matching}/{} tokens match; got {got}", want.len())
    })?;
    ensure(elapsed < Duration::from_secs(1), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "{}/{} tokens identical in {elapsed:?}",
        matching,
        want.len()
    ))
}

/// Synthetic corpus with a known singleton census, checked against a
/// quadratic recount of the raw token list.
fn coverage_census() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut labelled: Vec<(String, Option<PlaceholderCategory>)> = Vec::new();
    let mut expected: BTreeMap<PlaceholderCategory, usize> = BTreeMap::new();
    let mut add = |tok: String, cat: Option<PlaceholderCategory>, labelled: &mut Vec<_>| {
        if let Some(c) = cat {
            *expected.entry(c).or_default() += 1;
        }
        labelled.push((tok, cat));
    };
    for i in 0..40 {
        add(
            format!("https://host{i}.example.com/x{i}"),
            Some(PlaceholderCategory::Url),
            &mut labelled,
        );
        add(
            format!("10.0.{}.{}", i / 10, i % 200),
            Some(PlaceholderCategory::Url),
            &mut labelled,
        );
        add(
            format!("script{i}.sh"),
            Some(PlaceholderCategory::File),
            &mut labelled,
        );
        add(
            format!("1.{i}.3"),
            Some(PlaceholderCategory::VersionNumber),
            &mut labelled,
        );
        add(
            format!("./bin/tool{i}"),
            Some(PlaceholderCategory::Path),
            &mut labelled,
        );
        add(
            format!("org{i}/act@v{i}"),
            Some(PlaceholderCategory::ActionVersion),
            &mut labelled,
        );
        add(format!("word{i}"), None, &mut labelled);
    }
    let repeated = [
        "run",
        "uses",
        "{",
        "}",
        "actions/checkout@v4",
        "make",
        "build.sh",
        "3.11",
    ];
    let mut all: Vec<String> = labelled.iter().map(|(t, _)| t.clone()).collect();
    for _ in 0..500 {
        all.push(repeated[rng.gen_range(0..repeated.len())].to_string());
    }
    // every repeated token at least twice
    for r in repeated {
        all.push(r.to_string());
        all.push(r.to_string());
    }
    all.shuffle(&mut rng);
    let streams: Vec<TokenStream> = all
        .chunks(37)
        .map(|c| TokenStream {
            tokens: c.iter().map(Token::plain).collect(),
            source: None,
        })
        .collect();

    let brute_singletons: BTreeSet<&String> = all
        .iter()
        .filter(|t| all.iter().filter(|u| u == t).count() == 1)
        .collect();
    let built: BTreeSet<&String> = labelled.iter().map(|(t, _)| t).collect();
    ensure(brute_singletons == built, || {
        "synthetic corpus has unintended duplicates".into()
    })?;

    let report = Abstractor::default()
        .abstraction_stats(&streams)
        .map_err(|e| e.to_string())?;
    ensure(report.total_single_occurrence == labelled.len(), || {
        format!(
            "total {} != {}",
            report.total_single_occurrence,
            labelled.len()
        )
    })?;
    for c in PlaceholderCategory::ALL {
        let got = report.per_category_counts.get(&c).copied().unwrap_or(0);
        let want = expected.get(&c).copied().unwrap_or(0);
        ensure(got == want, || format!("{c:?}: {got} != {want}"))?;
    }
    let want_fraction = expected.values().sum::<usize>() as f64 / labelled.len() as f64;
    ensure(
        (report.abstracted_fraction - want_fraction).abs() < 1e-12,
        || format!("fraction {} != {want_fraction}", report.abstracted_fraction),
    )?;
    Ok(format!(
        "synthetic census exact ({} singletons, fraction {:.4}); real-corpus range not checked: corpus not bundled",
        labelled.len(),
        report.abstracted_fraction
    ))
}

fn instance_counts() -> Check {
    let docs = fixture_docs();
    for doc in &docs {
        let steps: usize = doc.jobs.iter().map(|j| j.steps.len()).sum();
        for repr in [Representation::Raw, Representation::Abstracted] {
            let ns = build_ns_instances(doc, repr).len();
            let jc = build_jc_instances(doc, repr).len();
            ensure(ns == steps && jc == steps, || {
                format!(
                    "{}/{} {repr:?}: ns {ns}, jc {jc}, steps {steps}",
                    doc.repo_id, doc.path
                )
            })?;
        }
    }
    let five_step = &docs[2];
    let ns = build_ns_instances(five_step, Representation::Raw).len();
    let jc = build_jc_instances(five_step, Representation::Raw).len();
    ensure(ns == 5 && jc == 5, || {
        format!("five_step gave ns {ns}, jc {jc}")
    })?;
    Ok(format!(
        "{} workflows, NS = JC = step count; five_step gives 5 + 5",
        docs.len()
    ))
}

fn split_leakage() -> Check {
    let ratios = SplitRatios::default();
    let mut worst: f64 = 0.0;
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let projects: BTreeMap<String, usize> = (0..200)
            .map(|i| {
                let size = 1 + (rng.gen::<f64>().powi(3) * 24.0) as usize;
                (format!("owner{i}/repo"), size)
            })
            .collect();
        let a =
            split_by_project(&projects, ratios, seed).map_err(|e| format!("seed {seed}: {e}"))?;
        // expand to workflow rows and recount independently
        let mut seen: HashMap<&str, BTreeSet<usize>> = HashMap::new();
        let mut counts = [0usize; 3];
        for (project, &n) in &projects {
            let part = a
                .partition_of(project)
                .ok_or_else(|| format!("seed {seed}: {project} unassigned"))?;
            for _ in 0..n {
                seen.entry(project).or_default().insert(part.index());
                counts[part.index()] += 1;
            }
        }
        ensure(seen.values().all(|s| s.len() == 1), || {
            format!("seed {seed}: leakage")
        })?;
        let total: usize = counts.iter().sum();
        for (c, r) in counts.iter().zip(ratios.as_array()) {
            let dev = (*c as f64 / total as f64 - r).abs();
            worst = worst.max(dev);
            ensure(dev <= 0.02 + 1e-12, || {
                format!("seed {seed}: deviation {dev:.4}")
            })?;
        }
    }
    Ok(format!(
        "1000 splits, no leakage, worst ratio deviation {worst:.4}"
    ))
}

struct OracleCompletion {
    tokens: Vec<String>,
    confidence: f64,
    stop: StopReason,
}

/// Greedy completion by scanning the training sequences for every step.
fn oracle_complete(
    corpus: &[Vec<String>],
    n: usize,
    prefix: &[String],
    cap: usize,
) -> OracleCompletion {
    let padded: Vec<Vec<&str>> = corpus
        .iter()
        .map(|s| {
            std::iter::repeat_n(BOS, n - 1)
                .chain(s.iter().map(String::as_str))
                .collect()
        })
        .collect();
    let mut history: Vec<&str> = std::iter::repeat_n(BOS, n - 1)
        .chain(prefix.iter().map(String::as_str))
        .collect();
    let mut tokens: Vec<String> = Vec::new();
    let mut confidence = 1.0;
    loop {
        if tokens.len() >= cap {
            return OracleCompletion {
                tokens,
                confidence,
                stop: StopReason::Cap,
            };
        }
        let ctx = &history[history.len() - (n - 1)..];
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        for seq in &padded {
            for i in 0..seq.len().saturating_sub(n - 1) {
                if &seq[i..i + n - 1] == ctx {
                    *counts.entry(seq[i + n - 1]).or_default() += 1;
                }
            }
        }
        if counts.is_empty() {
            return OracleCompletion {
                tokens,
                confidence,
                stop: StopReason::H1,
            };
        }
        let total: u64 = counts.values().sum();
        let mut best: (&str, u64) = ("", 0);
        for (t, c) in &counts {
            if *c > best.1 {
                best = (t, *c);
            }
        }
        confidence *= best.1 as f64 / total as f64;
        tokens.push(best.0.to_string());
        history.push(best.0);
        // rescan the whole suffix for a closing brace outside strings
        let mut depth = 0i64;
        let mut quoted = false;
        let mut closed = false;
        for t in &tokens {
            closed = false;
            match t.as_str() {
                "\"" => quoted = !quoted,
                "{" if !quoted => depth += 1,
                "}" if !quoted => {
                    depth -= 1;
                    closed = depth <= 0;
                }
                _ => {}
            }
        }
        if closed {
            return OracleCompletion {
                tokens,
                confidence,
                stop: StopReason::H2,
            };
        }
    }
}

fn ngram_oracle() -> Check {
    let docs: Vec<WorkflowDoc> = fixture_docs()
        .into_iter()
        .filter(|d| token_texts(&canonicalize(d)).len() <= 500)
        .collect();
    let corpus: Vec<Vec<String>> = docs.iter().map(|d| token_texts(&canonicalize(d))).collect();
    let mut prefixes: Vec<Vec<String>> = docs
        .iter()
        .flat_map(|d| build_ns_instances(d, Representation::Raw))
        .map(|i| token_texts(&i.input))
        .collect();
    for seq in corpus.iter().take(4) {
        prefixes.extend((0..seq.len()).step_by(9).map(|k| seq[..k].to_vec()));
    }
    prefixes.push(vec!["never-seen".to_string()]);

    let mut stops: BTreeMap<String, usize> = BTreeMap::new();
    let mut cases = 0;
    for n in [3, 5, 7] {
        let model = NgramModel::train(&corpus, n).map_err(|e| e.to_string())?;
        for (k, prefix) in prefixes.iter().enumerate() {
            let cap = if k % 5 == 0 { 6 } else { 750 };
            let got = model.complete_with_cap(prefix, cap);
            let want = oracle_complete(&corpus, n, prefix, cap);
            ensure(got.tokens == want.tokens && got.stop == want.stop, || {
                format!(
                    "n={n} prefix #{k}: {:?}/{} vs oracle {:?}/{}",
                    got.tokens, got.stop, want.tokens, want.stop
                )
            })?;
            ensure((got.confidence - want.confidence).abs() <= 1e-12, || {
                format!(
                    "n={n} prefix #{k}: confidence {} vs {}",
                    got.confidence, want.confidence
                )
            })?;
            *stops.entry(got.stop.to_string()).or_default() += 1;
            cases += 1;
        }
    }
    // a cyclic corpus can only end at the cap
    let cyclic = vec!["a b a b a b a b"
        .split(' ')
        .map(String::from)
        .collect::<Vec<_>>()];
    let model = NgramModel::train(&cyclic, 3).map_err(|e| e.to_string())?;
    let got = model.complete(&["a".to_string()]);
    let want = oracle_complete(&cyclic, 3, &["a".to_string()], 750);
    ensure(
        got.tokens == want.tokens && got.stop == StopReason::Cap && want.stop == StopReason::Cap,
        || format!("cyclic: {} tokens, stop {}", got.tokens.len(), got.stop),
    )?;
    for s in ["h1", "h2", "cap"] {
        ensure(stops.contains_key(s), || {
            format!("no case stopped by {s}: {stops:?}")
        })?;
    }
    Ok(format!(
        "{cases} completions match the oracle, stops {stops:?}"
    ))
}

fn metric_oracles() -> Check {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9;
    // hand-computed clipped precisions and brevity penalties
    let single: [(&str, &str, f64, f64); 4] = [
        ("a b c d e", "a b c d e", 1.0, 1.0),
        (
            "the cat sat on the mat",
            "the cat sat on a mat",
            (1.0f64 / 12.0).powf(0.25),
            (1.0f64 / 12.0).powf(0.25),
        ),
        (
            "the cat sat on",
            "the cat sat on the mat",
            (-0.5f64).exp(),
            (-0.5f64).exp(),
        ),
        (
            "a b c d e",
            "a b c x e",
            0.0,
            (((0.8f64).ln() + (0.5f64).ln() + (1.0f64 / 3.0).ln() + (0.05f64).ln()) * 0.25).exp(),
        ),
    ];
    for (cand, reference, corpus_want, sentence_want) in single {
        let (corpus, sentence) = bleu4(&[(cand, reference)]).map_err(|e| e.to_string())?;
        ensure(
            close(corpus, corpus_want) && close(sentence[0], sentence_want),
            || {
                format!(
                    "`{cand}`: corpus {corpus} vs {corpus_want}, sentence {} vs {sentence_want}",
                    sentence[0]
                )
            },
        )?;
    }
    let pooled = [
        ("the cat sat on the mat", "the cat sat on a mat"),
        ("the cat sat on", "the cat sat on the mat"),
    ];
    let (corpus, _) = bleu4(&pooled).map_err(|e| e.to_string())?;
    let want = (-0.2f64).exp() * (0.9f64 * 0.75 * (2.0 / 3.0) * 0.5).powf(0.25);
    ensure(close(corpus, want), || {
        format!("pooled corpus BLEU {corpus} vs {want}")
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..3000 {
        let len_a = rng.gen_range(0..=12);
        let len_b = rng.gen_range(0..=12);
        let a: Vec<u8> = (0..len_a).map(|_| rng.gen_range(0..4)).collect();
        let b: Vec<u8> = (0..len_b).map(|_| rng.gen_range(0..4)).collect();
        let lcs = brute_lcs(&a, &b);
        let r = rouge_l_tokens(&a, &b);
        let (p, rc) = (
            if a.is_empty() {
                0.0
            } else {
                lcs as f64 / a.len() as f64
            },
            if b.is_empty() {
                0.0
            } else {
                lcs as f64 / b.len() as f64
            },
        );
        let f = if p + rc == 0.0 {
            0.0
        } else {
            2.0 * p * rc / (p + rc)
        };
        ensure(
            close(r.precision, p) && close(r.recall, rc) && close(r.f_measure, f),
            || format!("trial {trial}: {a:?} / {b:?} gave {r:?}, lcs {lcs}"),
        )?;
    }

    let em_cases = [
        (r#"{"run": "make"}"#, r#"{ "run":   "make" }"#, true),
        (
            r#"{"run": "make test"}"#,
            "{\"run\": \"make\n  test\"}",
            true,
        ),
        (r#"{"run": "make"}"#, r#"{"run": "Make"}"#, false),
        (
            r#"{"run": "make", "name": "b"}"#,
            r#"{"name": "b", "run": "make"}"#,
            false,
        ),
        (r#"{"run": "make"}"#, r#"{"run": "make"}, "#, false),
        ("", "", true),
        ("", r#"{"run": "make"}"#, false),
    ];
    for (p, t, want) in em_cases {
        ensure(exact_match(p, t) == want, || {
            format!("exact_match({p:?}, {t:?}) != {want}")
        })?;
    }
    ensure(
        !exact_match_strict(r#"{"run": "make"}"#, r#"{ "run": "make" }"#),
        || "strict match ignored spacing".into(),
    )?;
    Ok("5 BLEU fixtures, 3000 ROUGE-L cases and 8 exact-match cases agree".to_string())
}

fn brute_lcs(a: &[u8], b: &[u8]) -> usize {
    let is_subseq = |s: &[u8]| {
        let mut it = b.iter();
        s.iter().all(|x| it.any(|y| y == x))
    };
    (0u32..1 << a.len())
        .filter_map(|mask| {
            let sub: Vec<u8> = (0..a.len())
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| a[i])
                .collect();
            is_subseq(&sub).then_some(sub.len())
        })
        .max()
        .unwrap_or(0)
}

fn binom(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn stats_oracles() -> Check {
    let mut mcnemar_cases = 0;
    for n in 1..=20u64 {
        let probs: Vec<f64> = (0..=n).map(|k| binom(n, k) / 2f64.powi(n as i32)).collect();
        for b in 0..=n {
            let observed = probs[b as usize];
            let want: f64 = probs
                .iter()
                .filter(|&&p| p <= observed * (1.0 + 1e-12))
                .sum::<f64>()
                .min(1.0);
            let got = mcnemar_counts(b as usize, (n - b) as usize)
                .map_err(|e| e.to_string())?
                .p_value_raw;
            ensure((got - want).abs() < 1e-12, || {
                format!("b={b}, c={}: {got} vs {want}", n - b)
            })?;
            mcnemar_cases += 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..400 {
        let n = rng.gen_range(1..=10);
        let pairs: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                (
                    rng.gen_range(0..6) as f64 / 2.0,
                    rng.gen_range(0..6) as f64 / 2.0,
                )
            })
            .collect();
        let diffs: Vec<f64> = pairs
            .iter()
            .map(|(x, y)| x - y)
            .filter(|d| *d != 0.0)
            .collect();
        let got = wilcoxon_signed_rank(&pairs);
        if diffs.is_empty() {
            ensure(got.is_err(), || {
                format!("trial {trial}: all-zero input accepted")
            })?;
            continue;
        }
        let got = got.map_err(|e| e.to_string())?;
        // midranks by counting, then every sign assignment
        let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
        let ranks: Vec<f64> = abs
            .iter()
            .map(|x| {
                let below = abs.iter().filter(|y| *y < x).count() as f64;
                let equal = abs.iter().filter(|y| *y == x).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect();
        let w_obs: f64 = diffs
            .iter()
            .zip(&ranks)
            .filter(|(d, _)| **d > 0.0)
            .map(|(_, r)| r)
            .sum();
        let m = diffs.len();
        let sums: Vec<f64> = (0u32..1 << m)
            .map(|mask| {
                (0..m)
                    .filter(|i| mask & (1 << i) != 0)
                    .map(|i| ranks[i])
                    .sum()
            })
            .collect();
        let total = sums.len() as f64;
        let le = sums.iter().filter(|s| **s <= w_obs + 1e-9).count() as f64 / total;
        let ge = sums.iter().filter(|s| **s >= w_obs - 1e-9).count() as f64 / total;
        let want_p = (2.0 * le.min(ge)).min(1.0);
        let full: f64 = ranks.iter().sum();
        let want_stat = w_obs.min(full - w_obs);
        ensure(
            (got.p_value_raw - want_p).abs() < 1e-9 && (got.statistic - want_stat).abs() < 1e-9,
            || {
                format!(
                    "trial {trial}: ({}, {}) vs ({want_stat}, {want_p})",
                    got.statistic, got.p_value_raw
                )
            },
        )?;
    }

    for trial in 0..300 {
        let a: Vec<f64> = (0..rng.gen_range(1..15))
            .map(|_| rng.gen_range(0..8) as f64)
            .collect();
        let b: Vec<f64> = (0..rng.gen_range(1..15))
            .map(|_| rng.gen_range(0..8) as f64)
            .collect();
        let mut score = 0i64;
        for x in &a {
            for y in &b {
                score += (x > y) as i64 - (x < y) as i64;
            }
        }
        let want = score as f64 / (a.len() * b.len()) as f64;
        let got = cliffs_delta_value(&a, &b).map_err(|e| e.to_string())?;
        ensure((got - want).abs() < 1e-12, || {
            format!("trial {trial}: delta {got} vs {want}")
        })?;
    }

    let holm: [(&[f64], &[f64]); 5] = [
        (&[0.01, 0.04, 0.03], &[0.03, 0.06, 0.06]),
        (&[0.2], &[0.2]),
        (&[0.001, 0.01, 0.02, 0.5], &[0.004, 0.03, 0.04, 0.5]),
        (&[0.04, 0.01, 0.3, 0.02, 0.5], &[0.12, 0.05, 0.6, 0.08, 0.6]),
        (&[0.4, 0.45, 0.5], &[1.0, 1.0, 1.0]),
    ];
    for (raw, want) in holm {
        let got = holm_adjust(raw).map_err(|e| e.to_string())?;
        ensure(
            got.iter().zip(want).all(|(g, w)| (g - w).abs() < 1e-12),
            || format!("holm {raw:?} gave {got:?}, want {want:?}"),
        )?;
    }
    Ok(format!(
        "{mcnemar_cases} McNemar, 400 Wilcoxon, 300 Cliff's delta and 5 Holm cases agree"
    ))
}

fn confidence_buckets() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 200_000;
    let records: Vec<PredictionRecord> = (0..n)
        .map(|i| {
            let confidence: f64 = rng.gen();
            let correct = rng.gen::<f64>() < confidence;
            PredictionRecord {
                id: format!("i{i}"),
                prediction: if correct {
                    "{ \"run\": \"ok\" }"
                } else {
                    "{ \"run\": \"no\" }"
                }
                .to_string(),
                confidence,
                stop_reason: None,
            }
        })
        .collect();
    let targets = vec![r#"{"run": "ok"}"#; n];
    let report = bucket_by_confidence(&records, &targets).map_err(|e| e.to_string())?;
    ensure(report.buckets.len() == BUCKET_COUNT, || {
        format!("{} buckets", report.buckets.len())
    })?;
    ensure(report.total() == n, || {
        format!("bucket totals {} != {n}", report.total())
    })?;
    let mut worst: f64 = 0.0;
    for b in &report.buckets {
        ensure(b.correct + b.wrong == b.total, || {
            format!("bucket {:.1} counts disagree", b.lower)
        })?;
        let mid = (b.lower + b.upper) / 2.0;
        let rate = b.correct_rate().ok_or("empty bucket")?;
        worst = worst.max((rate - mid).abs());
        ensure((rate - mid).abs() <= 0.05, || {
            format!("bucket {:.1}: rate {rate:.3}", b.lower)
        })?;
    }
    Ok(format!(
        "{n} records, every bucket within {worst:.4} of its midpoint"
    ))
}

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_files(root, &path, out);
        } else {
            let rel = path
                .strip_prefix(root)
                .unwrap()
                .to_string_lossy()
                .to_string();
            out.insert(rel, std::fs::read(&path).unwrap());
        }
    }
}

fn end_to_end() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    let mut times = Vec::new();
    for run in ["first", "second"] {
        let wd = tmp.path().join(run);
        let start = Instant::now();
        let out = Command::new(env!("CARGO_BIN_EXE_wfc"))
            .arg("--corpus-root")
            .arg(mini_corpus())
            .arg("--workdir")
            .arg(&wd)
            .arg("run")
            .env_remove("WFC_CONFIG")
            .output()
            .map_err(|e| e.to_string())?;
        let elapsed = start.elapsed();
        ensure(out.status.success(), || {
            format!("{run} run failed: {}", String::from_utf8_lossy(&out.stderr))
        })?;
        ensure(elapsed < Duration::from_secs(60), || {
            format!("{run} run took {elapsed:?}")
        })?;
        let mut files = BTreeMap::new();
        collect_files(&wd, &wd, &mut files);
        outputs.push(files);
        times.push(elapsed);
    }
    ensure(outputs[0].keys().eq(outputs[1].keys()), || {
        "runs wrote different file sets".into()
    })?;
    for (name, bytes) in &outputs[0] {
        ensure(outputs[1][name] == *bytes, || {
            format!("{name} differs between runs")
        })?;
    }
    for needed in ["manifest.json", "split.json", "run_summary.json"] {
        ensure(outputs[0].contains_key(needed), || {
            format!("missing {needed}")
        })?;
    }
    Ok(format!(
        "{} files byte-identical across two runs ({:?}, {:?})",
        outputs[0].len(),
        times[0],
        times[1]
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        (
            "abstraction fidelity on the PHPUnit workflow",
            abstraction_fidelity,
        ),
        ("singleton coverage census", coverage_census),
        ("NS/JC instance counts", instance_counts),
        ("project split leakage and ratios", split_leakage),
        ("n-gram greedy completion oracle", ngram_oracle),
        ("BLEU-4, ROUGE-L and exact-match oracles", metric_oracles),
        (
            "McNemar, Wilcoxon, Cliff's delta and Holm oracles",
            stats_oracles,
        ),
        ("confidence bucketing", confidence_buckets),
        ("end-to-end determinism on the mini corpus", end_to_end),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, f) in criteria {
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {name}: {detail}");
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
