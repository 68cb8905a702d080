//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use uqroute_core::calibration::{
    build_pooled_histogram, per_bin_quota, CalibrationConfig, ConfidenceHistogram,
};
use uqroute_core::probe::{gradient_check, train_on_examples, LabeledExample, DEFAULT_HIDDEN};
use uqroute_core::routing::route_by_threshold;
use uqroute_core::synth::{synth_strong_labels, synthesize, SynthSpec};
use uqroute_core::{
    generalization_report, group_by_dataset, leave_one_out_calibration, load_traces,
    oracle_curve, plan_for_ratio, roc_auc, roc_auc_scores, routing_curve, sample_calibration,
    score_batch, score_trace, should_route, AnswerKind, CalibrationSet, ConfidenceScore,
    InferenceTrace, Labels, PooledScore, ProbeModel, ProbeTrainConfig, TraceSet, UqMethod,
};
use uqroute_gateway::stub::{completion, unreachable_url, StubEndpoint, StubReply};
use uqroute_gateway::{EndpointConfig, Gateway, GatewayConfig, QueryRequest, Source};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

struct Criterion {
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Check,
}

fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { name: "uq_formula_oracles", limit: secs(5), run: uq_formula_oracles },
        Criterion { name: "auc_rank_sum_equals_brute_force", limit: secs(10), run: auc_oracle },
        Criterion { name: "routing_endpoints_and_oracle_dominance", limit: secs(30), run: routing_dominance },
        Criterion { name: "monotone_transform_invariance", limit: None, run: monotone_invariance },
        Criterion { name: "probe_gradient_check_and_toy_fit", limit: secs(60), run: probe_checks },
        Criterion { name: "calibration_sampling_mechanics", limit: None, run: calibration_mechanics },
        Criterion { name: "threshold_transfer_generalization", limit: secs(60), run: generalization },
        Criterion { name: "routing_improves_with_alignment", limit: None, run: alignment_helps },
        Criterion { name: "gateway_stub_integration", limit: secs(30), run: gateway_integration },
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panic: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.limit) {
            (Ok(_), Some(limit)) if elapsed > limit => {
                Err(format!("runtime {:.2}s over limit {}s", elapsed.as_secs_f64(), limit.as_secs()))
            }
            (o, _) => o,
        };
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {} ({:.2}s) {detail}", c.name, elapsed.as_secs_f64());
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn score(t: &InferenceTrace, method: UqMethod) -> f64 {
    score_trace(t, method, None).unwrap().value
}

fn uq_formula_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_ppl = 0.0f64;
    let mut worst_sum = 0.0f64;
    for i in 0..1000 {
        let mut t = InferenceTrace::new(format!("t{i}"), AnswerKind::FreeForm);
        let n = rng.random_range(1..=60);
        let scale = [0.05, 1.0, 8.0][i % 3];
        t.token_logprobs = (0..n).map(|_| -scale * rng.random::<f64>()).collect();
        let geo: f64 = t
            .token_logprobs
            .iter()
            .map(|lp| lp.exp().powf(1.0 / n as f64))
            .product();
        worst_ppl = worst_ppl.max((score(&t, UqMethod::Perplexity) - geo).abs());

        let (lt, lf) = (-20.0 * rng.random::<f64>(), -20.0 * rng.random::<f64>());
        t.true_false_logprobs = Some((lt, lf));
        let p = score(&t, UqMethod::PTrue);
        t.true_false_logprobs = Some((lf, lt));
        let q = score(&t, UqMethod::PTrue);
        worst_sum = worst_sum.max((p + q - 1.0).abs());
    }
    ensure!(worst_ppl <= 1e-12, "perplexity vs geometric mean off by {worst_ppl:e}");
    ensure!(worst_sum <= 1e-12, "p(True) + p(False) off by {worst_sum:e}");

    let mut t = InferenceTrace::new("j", AnswerKind::FreeForm);
    t.samples = Some(vec!["the cat sat".to_string(); 5]);
    let same = score(&t, UqMethod::JaccardDegree);
    ensure!(same == 1.0, "identical samples gave {same}");
    t.samples = Some(vec!["red apple".into(), "blue sky".into(), "green grass".into()]);
    let disjoint = score(&t, UqMethod::JaccardDegree);
    ensure!(disjoint == 1.0 / 3.0, "disjoint m=3 gave {disjoint}");
    Ok(format!(
        "max|ppl-geo|={worst_ppl:.1e} max|p+q-1|={worst_sum:.1e} identical=1 disjoint=1/3"
    ))
}

/// Pairwise count as an exact rational `(2 * wins + ties) / (2 * P * N)`.
fn brute_force_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut pos, mut neg) = (0u64, 0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if li {
            pos += 1;
        } else {
            neg += 1;
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if !lj {
                num += if scores[i] > scores[j] {
                    2
                } else if scores[i] == scores[j] {
                    1
                } else {
                    0
                };
            }
        }
    }
    num as f64 / (2 * pos * neg) as f64
}

fn auc_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut tied = 0;
    for case in 0..200 {
        let n = rng.random_range(2..=100);
        let levels = rng.random_range(1..=12);
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
            .collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        if scores.iter().map(|v| v.to_bits()).collect::<BTreeSet<_>>().len() < n {
            tied += 1;
        }
        let fast = roc_auc(&scores, &labels).map_err(|e| e.to_string())?;
        let slow = brute_force_auc(&scores, &labels);
        ensure!(fast.to_bits() == slow.to_bits(), "case {case}: rank-sum {fast} != brute {slow}");
    }
    Ok(format!("200 instances, {tied} with ties, all bit-equal"))
}

fn scored(values: &[f64]) -> Vec<ConfidenceScore> {
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| ConfidenceScore::new(UqMethod::Perplexity, v, format!("q{i:05}")))
        .collect()
}

fn labels_of(flags: &[bool]) -> Labels {
    flags
        .iter()
        .enumerate()
        .map(|(i, &c)| (format!("q{i:05}"), c))
        .collect()
}

/// Checks endpoints and dominance for one configuration on every reachable
/// routed count plus a fixed grid.
fn dominance_case(values: &[f64], slm: &[bool], llm: &[bool], every_count: bool) -> Result<(), String> {
    let n = values.len();
    let mut grid: Vec<f64> = if every_count {
        (0..=n).map(|k| k as f64 / n as f64).collect()
    } else {
        vec![0.0, 1.0]
    };
    grid.extend((0..=20).map(|i| i as f64 / 20.0));
    let scores = scored(values);
    let (s, l) = (labels_of(slm), labels_of(llm));
    let curve = routing_curve(&scores, &s, &l, &grid).map_err(|e| e.to_string())?;
    let oracle = oracle_curve(&s, &l, &grid).map_err(|e| e.to_string())?;
    let slm_acc = slm.iter().filter(|&&c| c).count() as f64 / n as f64;
    let llm_acc = llm.iter().filter(|&&c| c).count() as f64 / n as f64;
    ensure!(curve[0].overall_accuracy == slm_acc, "curve(0) {} != {slm_acc}", curve[0].overall_accuracy);
    let end = if every_count { n } else { 1 };
    ensure!(curve[end].overall_accuracy == llm_acc, "curve(1) {} != {llm_acc}", curve[end].overall_accuracy);
    for (c, o) in curve.iter().zip(&oracle) {
        ensure!(c.achieved_ratio == o.achieved_ratio, "ratio {} routes differently", c.ratio);
        ensure!(
            c.overall_accuracy <= o.overall_accuracy,
            "ratio {}: curve {} above oracle {}",
            c.ratio,
            c.overall_accuracy,
            o.overall_accuracy
        );
    }
    Ok(())
}

fn routing_dominance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cases = 0usize;
    // every label configuration for n <= 5, several score draws each
    for n in 1..=5usize {
        for code in 0..(1u32 << (2 * n)) {
            let slm: Vec<bool> = (0..n).map(|i| code >> (2 * i) & 1 == 1).collect();
            let llm: Vec<bool> = (0..n).map(|i| code >> (2 * i + 1) & 1 == 1).collect();
            for _ in 0..4 {
                let values: Vec<f64> = (0..n).map(|_| rng.random_range(0..4) as f64 / 4.0).collect();
                dominance_case(&values, &slm, &llm, true)?;
                cases += 1;
            }
        }
    }
    for n in 6..=12usize {
        for _ in 0..3000 {
            let values: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64 / 6.0).collect();
            let slm: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            let llm: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            dominance_case(&values, &slm, &llm, true)?;
            cases += 1;
        }
    }
    for _ in 0..100 {
        let n = 1000;
        let values: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let slm: Vec<bool> = values.iter().map(|&v| rng.random::<f64>() < v).collect();
        let llm: Vec<bool> = (0..n).map(|_| rng.random_bool(0.8)).collect();
        dominance_case(&values, &slm, &llm, false)?;
        cases += 1;
    }
    Ok(format!("{cases} configurations (n<=5 exhaustive labels, n<=12 sampled, 100 at n=1000)"))
}

/// A random strictly increasing map of [0, 1] into [0, 1].
fn random_transform(rng: &mut ChaCha8Rng) -> impl Fn(f64) -> f64 {
    let w: [f64; 3] = [0.05 + rng.random::<f64>(), rng.random(), rng.random()];
    let p = 0.3 + 2.7 * rng.random::<f64>();
    let k = 0.5 + 7.5 * rng.random::<f64>();
    let total = w.iter().sum::<f64>();
    move |x: f64| {
        let y = w[0] * x + w[1] * x.powf(p) + w[2] * (1.0 - (-k * x).exp()) / (1.0 - (-k).exp());
        (y / total).clamp(0.0, 1.0)
    }
}

fn monotone_invariance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 300;
    let base: Vec<f64> = (0..n).map(|_| rng.random_range(0..=64) as f64 / 64.0).collect();
    let slm: Vec<bool> = base.iter().map(|&v| rng.random::<f64>() < v).collect();
    let labels = labels_of(&slm);
    let scores = scored(&base);
    let auc = roc_auc_scores(&scores, &labels).map_err(|e| e.to_string())?;
    let levels: BTreeSet<u64> = base.iter().map(|v| v.to_bits()).collect();
    let grid: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    let plans: Vec<_> = grid
        .iter()
        .map(|&r| plan_for_ratio(&scores, r).unwrap().routed_ids)
        .collect();

    for case in 0..100 {
        let f = random_transform(&mut rng);
        let mut prev = f64::NEG_INFINITY;
        for &b in &levels {
            let y = f(f64::from_bits(b));
            ensure!(y > prev, "transform {case} not strictly increasing on the score levels");
            prev = y;
        }
        let warped: Vec<ConfidenceScore> = scores
            .iter()
            .map(|s| ConfidenceScore::new(s.method, f(s.value), s.trace_id.clone()))
            .collect();
        let a = roc_auc_scores(&warped, &labels).map_err(|e| e.to_string())?;
        ensure!(a.to_bits() == auc.to_bits(), "transform {case}: AUC {a} != {auc}");
        for (r, routed) in grid.iter().zip(&plans) {
            let p = plan_for_ratio(&warped, *r).unwrap();
            ensure!(&p.routed_ids == routed, "transform {case}: routed set differs at ratio {r}");
        }
        for &b in &levels {
            let tau = f64::from_bits(b);
            ensure!(
                route_by_threshold(&scores, tau) == route_by_threshold(&warped, f(tau)),
                "transform {case}: threshold decisions differ at {tau}"
            );
            ensure!(
                base.iter().all(|&c| should_route(c, tau) == should_route(f(c), f(tau))),
                "transform {case}: comparator differs at {tau}"
            );
        }
    }
    Ok(format!("100 transforms, AUC {auc} and all routing decisions bit-identical"))
}

fn probe_checks() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d_in = 8;
    let mut dims = vec![d_in];
    dims.extend(DEFAULT_HIDDEN);
    dims.push(1);
    let (mut worst, mut skipped, mut compared) = (0.0f64, 0usize, 0usize);
    for pair in 0..20u64 {
        let model = ProbeModel::random(&dims, 1000 + pair).map_err(|e| e.to_string())?;
        let batch: Vec<LabeledExample> = (0..5)
            .map(|i| {
                let x = (0..d_in).map(|_| rng.random_range(-2.0..2.0)).collect();
                LabeledExample::new(format!("b{i}"), x, rng.random_bool(0.5))
            })
            .collect();
        let r = gradient_check(&model, &batch);
        worst = worst.max(r.max_relative_error);
        skipped += r.kink_skipped;
        compared += r.compared;
    }
    ensure!(worst < 1e-4, "max relative gradient error {worst:e}");
    ensure!(
        skipped * 100 < compared,
        "{skipped} kink-crossing parameters skipped of {}",
        skipped + compared
    );

    let mut toy = Vec::new();
    while toy.len() < 200 {
        let x: Vec<f64> = (0..d_in).map(|_| rng.random_range(-1.0..1.0)).collect();
        let margin = x[0] + 0.5 * x[1];
        if margin.abs() > 0.1 {
            toy.push(LabeledExample::new(format!("x{:03}", toy.len()), x, margin > 0.0));
        }
    }
    let config = ProbeTrainConfig::in_domain();
    ensure!(config.epochs == 20 && config.learning_rate == 5e-4, "unexpected in-domain defaults");
    let fit = train_on_examples(&toy, &config).map_err(|e| e.to_string())?;
    let hits = toy
        .iter()
        .filter(|ex| (fit.model.predict(&ex.features).unwrap() > 0.5) == ex.label)
        .count();
    let acc = hits as f64 / toy.len() as f64;
    ensure!(acc >= 0.97, "toy accuracy {acc}");
    Ok(format!(
        "max rel grad error {worst:.2e} over {compared} parameters ({skipped} kink crossings skipped), toy accuracy {acc:.3}"
    ))
}

fn random_histogram(rng: &mut ChaCha8Rng, bins: usize) -> (Vec<usize>, ConfidenceHistogram) {
    let mut counts = Vec::with_capacity(bins);
    let mut entries = Vec::new();
    for b in 0..bins {
        let n_b = match rng.random_range(0..10) {
            0..=1 => 0,
            2..=4 => rng.random_range(1..10),
            _ => rng.random_range(10..400),
        };
        for i in 0..n_b {
            let v = (b as f64 + 0.05 + 0.9 * rng.random::<f64>()) / bins as f64;
            entries.push(PooledScore {
                trace_id: format!("b{b}-{i}"),
                dataset: ["d1", "d2", "d3"][i % 3].to_string(),
                confidence: v,
            });
        }
        counts.push(n_b);
    }
    if entries.is_empty() {
        entries.push(PooledScore { trace_id: "only".into(), dataset: "d1".into(), confidence: 0.5 });
        counts[bins / 2] += 1;
    }
    (counts, build_pooled_histogram(entries, bins).unwrap())
}

fn calibration_mechanics() -> Check {
    let (bins, rate, seed) = (30, 0.1, 50);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..100 {
        let (counts, hist) = random_histogram(&mut rng, bins);
        ensure!(hist.counts == counts, "case {case}: histogram counts wrong");
        let cal = sample_calibration(&hist, rate, seed).map_err(|e| e.to_string())?;
        let mut per_bin = vec![0usize; bins];
        let mut seen = BTreeSet::new();
        for m in &cal.members {
            per_bin[hist.bin_of(m.confidence)] += 1;
            ensure!(seen.insert(&m.trace_id), "case {case}: {} drawn twice", m.trace_id);
        }
        for b in 0..bins {
            let n_b = counts[b];
            let expected = if n_b == 0 { 0 } else { (n_b / 10).max(1) };
            ensure!(
                cal.sampled_counts[b] == expected && per_bin[b] == expected,
                "case {case} bin {b}: n_b={n_b} sampled {} (members {}) expected {expected}",
                cal.sampled_counts[b],
                per_bin[b]
            );
            ensure!(per_bin_quota(n_b, rate) == expected, "quota helper disagrees at n_b={n_b}");
        }
        let again = sample_calibration(&hist, rate, seed).map_err(|e| e.to_string())?;
        ensure!(again == cal, "case {case}: same seed gave a different set");
    }

    let mut loo = 0;
    for case in 0..30u64 {
        let k = rng.random_range(2..=5);
        let mut records = Vec::new();
        for d in 0..k {
            let n = rng.random_range(20..300);
            let spec = SynthSpec::new(n, case * 10 + d, 1.0).dataset(format!("ds{d}"));
            records.extend(synthesize(&spec).unwrap().traces.records);
        }
        let groups = group_by_dataset(&TraceSet::new(records, "pool"));
        let target = format!("ds{}", rng.random_range(0..k));
        let config = CalibrationConfig::new(UqMethod::Perplexity);
        let cal = leave_one_out_calibration(&groups, &target, &config, None)
            .map_err(|e| e.to_string())?;
        ensure!(
            cal.members.iter().all(|m| m.dataset != target),
            "case {case}: target {target} leaked into calibration set"
        );
        let others: usize = groups.iter().filter(|(t, _)| **t != target).map(|(_, s)| s.len()).sum();
        ensure!(cal.pooled_counts.iter().sum::<usize>() == others, "case {case}: pool size wrong");
        let again = leave_one_out_calibration(&groups, &target, &config, None).unwrap();
        ensure!(again == cal, "case {case}: leave-one-out not reproducible");
        loo += 1;
    }
    Ok(format!(
        "100 histograms (M={bins}, seed {seed}) match max(1, floor(n_b/10)); {loo} leave-one-out pools exclude the target"
    ))
}

struct Target {
    scores: Vec<ConfidenceScore>,
    slm: Labels,
    llm: Labels,
}

fn synthetic_target(n: usize, seed: u64, tag: &str) -> (TraceSet, Target) {
    let traces = synthesize(&SynthSpec::new(n, seed, 1.0).dataset(tag)).unwrap().traces;
    let scores = score_batch(&traces, UqMethod::Perplexity, None).unwrap().scores;
    let target = Target {
        scores,
        slm: traces.labels(),
        llm: synth_strong_labels(&traces, seed ^ 0x5eed, 0.9),
    };
    (traces, target)
}

fn generalization() -> Check {
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let (mut worst_ratio, mut worst_acc, mut control_ratio) = (0.0f64, 0.0f64, f64::INFINITY);
    for seed in [11u64, 12, 13] {
        let (source, _) = synthetic_target(10_000, seed, "source");
        let (target_traces, target) = synthetic_target(10_000, seed + 100, "target");
        let mut groups = BTreeMap::new();
        groups.insert("source".to_string(), source);
        groups.insert("target".to_string(), target_traces);
        let cal = leave_one_out_calibration(
            &groups,
            "target",
            &CalibrationConfig::new(UqMethod::Perplexity),
            None,
        )
        .map_err(|e| e.to_string())?;
        let report = generalization_report(&cal, &target.scores, &target.slm, &target.llm, &grid)
            .map_err(|e| e.to_string())?;
        worst_ratio = worst_ratio.max(report.max_ratio_gap);
        worst_acc = worst_acc.max(report.max_abs_accuracy_gap);

        let mut shifted: CalibrationSet = cal.clone();
        for m in &mut shifted.members {
            m.confidence = (m.confidence + 0.3).min(1.0);
        }
        let control = generalization_report(&shifted, &target.scores, &target.slm, &target.llm, &grid)
            .map_err(|e| e.to_string())?;
        control_ratio = control_ratio.min(control.max_ratio_gap);
    }
    ensure!(worst_ratio < 0.05, "max |r' - r| = {worst_ratio}");
    ensure!(worst_acc < 0.03, "max accuracy gap = {worst_acc}");
    ensure!(control_ratio >= 0.05, "shifted control stayed within the ratio bound ({control_ratio})");
    Ok(format!(
        "max |r'-r|={worst_ratio:.4} max |acc gap|={worst_acc:.4}; +0.3 control |r'-r|>={control_ratio:.3}"
    ))
}

fn alignment_helps() -> Check {
    let mut worst = f64::INFINITY;
    for seed in [21u64, 22, 23] {
        let (_, t) = synthetic_target(10_000, seed, "aligned");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let random: Vec<ConfidenceScore> = t
            .scores
            .iter()
            .map(|s| ConfidenceScore::new(UqMethod::Perplexity, rng.random(), s.trace_id.clone()))
            .collect();
        let at = |scores: &[ConfidenceScore]| {
            routing_curve(scores, &t.slm, &t.llm, &[0.5]).unwrap()[0].overall_accuracy
        };
        worst = worst.min(at(&t.scores) - at(&random));
    }
    ensure!(worst >= 0.05, "perplexity curve beats random by only {worst:.4} at ratio 0.5");
    Ok(format!("min margin over random at ratio 0.5: {worst:.4}"))
}

fn endpoint(url: &str, model: &str) -> EndpointConfig {
    EndpointConfig {
        url: url.to_string(),
        model: model.to_string(),
        api_key: None,
        timeout_ms: 5_000,
    }
}

async fn gateway_checks() -> Check {
    let mean = |p: f64| {
        let lp = p.ln();
        completion("Paris.", Some(&[("Par", lp), ("is", lp), (".", lp)]))
    };
    let ask = || QueryRequest::new("Capital of France?", AnswerKind::FreeForm);
    let io = |e: std::io::Error| e.to_string();
    let strong = StubEndpoint::fixed(completion("Paris", None)).await.map_err(io)?;
    let gw_for = |weak: &str, strong: &str, method, tau| {
        Gateway::new(GatewayConfig::new(endpoint(weak, "small"), endpoint(strong, "large"), method, tau))
            .map_err(|e| e.to_string())
    };

    let weak = StubEndpoint::fixed(mean(0.95)).await.map_err(io)?;
    let r = gw_for(&weak.url, &strong.url, UqMethod::Perplexity, 0.5)?
        .handle_route(ask())
        .await
        .map_err(|e| e.to_string())?;
    ensure!(r.source == Source::Slm && strong.call_count() == 0, "p=0.95 did not stay local");
    ensure!((r.confidence - 0.95).abs() < 1e-12, "confidence {} != 0.95", r.confidence);

    let weak = StubEndpoint::fixed(mean(0.2)).await.map_err(io)?;
    let r = gw_for(&weak.url, &strong.url, UqMethod::Perplexity, 0.5)?
        .handle_route(ask())
        .await
        .map_err(|e| e.to_string())?;
    ensure!(r.source == Source::Llm && r.answer == "Paris", "p=0.2 not answered by strong model");
    ensure!(strong.call_count() == 1, "strong called {} times", strong.call_count());

    let down = unreachable_url().await.map_err(io)?;
    let r = gw_for(&weak.url, &down, UqMethod::Perplexity, 0.5)?
        .handle_route(ask())
        .await
        .map_err(|e| e.to_string())?;
    ensure!(r.source == Source::SlmFallback && r.warning.is_some(), "no fallback with warning");

    let tau = 0.6;
    for p in [0.6, 0.61, 0.75, 0.9, 0.999, 1.0] {
        let weak = StubEndpoint::fixed(mean(p)).await.map_err(io)?;
        let before = strong.call_count();
        let r = gw_for(&weak.url, &strong.url, UqMethod::Perplexity, tau)?
            .handle_route(ask())
            .await
            .map_err(|e| e.to_string())?;
        ensure!(
            r.confidence < tau || strong.call_count() == before,
            "strong called at confidence {} >= {tau}",
            r.confidence
        );
    }

    let dir = tempfile::tempdir().map_err(io)?;
    let log = dir.path().join("gateway.jsonl");
    let weak = StubEndpoint::spawn(|body: &Value| {
        let text = if body["temperature"] == 0.0 { "it is Paris" } else { "Paris" };
        StubReply::Json(completion(text, Some(&[("it", -0.3), ("is", -0.2), ("Paris", -0.1)])))
    })
    .await
    .map_err(io)?;
    let mut cfg = GatewayConfig::new(
        endpoint(&weak.url, "small"),
        endpoint(&strong.url, "large"),
        UqMethod::JaccardDegree,
        0.5,
    );
    cfg.trace_log = Some(log.clone());
    let gw = Gateway::new(cfg).map_err(|e| e.to_string())?;
    let r = gw.handle_route(ask()).await.map_err(|e| e.to_string())?;
    let sampled = weak.requests().iter().filter(|b| b["temperature"] == 1.0).count();
    ensure!(sampled == 5, "consistency method requested {sampled} samples");
    gw.handle_score(ask()).await.map_err(|e| e.to_string())?;
    drop(gw);

    let set = load_traces(&log, false).map_err(|e| e.to_string())?;
    ensure!(set.len() == 2, "trace log holds {} records", set.len());
    ensure!(set.records[0] == r.trace, "logged trace differs from the routed one");
    let rescored = score_trace(&set.records[0], UqMethod::JaccardDegree, None)
        .map_err(|e| e.to_string())?;
    ensure!(rescored.value == r.confidence, "rescored log confidence differs");
    Ok(format!("3 route examples, no strong call at c>=tau, 5 resamples, {} logged traces reload", set.len()))
}

fn gateway_integration() -> Check {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| e.to_string())?
        .block_on(gateway_checks())
}
