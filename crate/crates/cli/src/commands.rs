use std::path::PathBuf;

use clap::Args;
use uqroute_core::alignment::{alignment_report, relative_accuracy_curve};
use uqroute_core::calibration::{
    generalization_report, group_by_dataset, histogram_sidecar, leave_one_out_calibration,
    save_calibration, transfer_threshold, CalibrationConfig, DEFAULT_BINS, DEFAULT_RATE,
    DEFAULT_SEED,
};
use uqroute_core::probe::{load_probe, save_probe, train_probe, ProbeTrainConfig};
use uqroute_core::routing::{oracle_curve, routing_curve};
use uqroute_core::synth::{synth_strong_labels, synthesize, SynthSpec};
use uqroute_core::table::fmt_opt;
use uqroute_core::{score_batch, BatchScores, Labels, UqMethod};
use uqroute_gateway::GatewayConfig;

use crate::inputs::{
    load_trace_inputs, parse_grid, read_scores, sidecar, table_out, DISCARDED_SUFFIX,
    SCORE_COLUMNS,
};
use crate::CliError;

fn parse_method(s: &str) -> Result<UqMethod, String> {
    s.parse()
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Trace file or directory of .jsonl trace files (repeatable).
    #[arg(long, required = true)]
    traces: Vec<PathBuf>,
    #[arg(long, value_parser = parse_method)]
    method: UqMethod,
    /// Probe file, required by trained_probe and ood_probe.
    #[arg(long)]
    probe: Option<PathBuf>,
    /// Scores table; discarded ids go to `<out>.discarded.tsv`.
    #[arg(long)]
    out: PathBuf,
}

pub fn score(args: ScoreArgs) -> Result<(), CliError> {
    let probe = match (args.method.needs_probe(), &args.probe) {
        (true, None) => {
            return Err(CliError::Usage(format!("method {} needs --probe", args.method)))
        }
        (false, Some(_)) => {
            return Err(CliError::Usage(format!(
                "--probe is only used by trained_probe and ood_probe, not {}",
                args.method
            )))
        }
        (true, Some(p)) => Some(load_probe(p)?),
        (false, None) => None,
    };
    let traces = load_trace_inputs(&args.traces, false, true)?;
    let BatchScores { scores, discarded } = score_batch(&traces, args.method, probe.as_ref())?;

    let mut out = table_out(Some(&args.out), &SCORE_COLUMNS)?;
    for s in &scores {
        out.row(&[s.trace_id.clone(), s.method.to_string(), s.value.to_string()])?;
    }
    out.finish()?;
    let mut side = table_out(
        Some(&sidecar(&args.out, DISCARDED_SUFFIX)),
        &["trace_id", "reason"],
    )?;
    for d in &discarded {
        side.row(&[d.trace_id.clone(), d.reason.to_string().replace(['\t', '\n'], " ")])?;
    }
    side.finish()?;
    eprintln!("scored {} traces, discarded {}", scores.len(), discarded.len());
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Scores table from `score` (repeatable, one AUC row each).
    #[arg(long, required = true)]
    scores: Vec<PathBuf>,
    /// Small-model correctness: `id<TAB>correct` table or labeled trace file.
    #[arg(long)]
    labels: PathBuf,
    /// Large-model correctness; enables the relative-accuracy table.
    #[arg(long)]
    llm_labels: Option<PathBuf>,
    /// Excluded fractions for the relative-accuracy table.
    #[arg(long, default_value = "0:0.1:0.9")]
    grid: String,
    /// AUC table (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Relative-accuracy table (default `<out>.relacc.tsv`).
    #[arg(long)]
    relacc_out: Option<PathBuf>,
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let grid = parse_grid(&args.grid)?;
    let slm = Labels::load(&args.labels)?;
    let llm = args.llm_labels.as_ref().map(Labels::load).transpose()?;
    let relacc_path = match (&llm, &args.relacc_out, &args.out) {
        (None, _, _) => None,
        (Some(_), Some(p), _) => Some(p.clone()),
        (Some(_), None, Some(out)) => Some(sidecar(out, ".relacc.tsv")),
        (Some(_), None, None) => {
            return Err(CliError::Usage(
                "--llm-labels needs --out or --relacc-out".into(),
            ))
        }
    };
    let files = args
        .scores
        .iter()
        .map(|p| read_scores(p))
        .collect::<Result<Vec<_>, _>>()?;

    let mut auc = table_out(args.out.as_deref(), &["method", "auc", "n_used", "n_discarded"])?;
    for f in &files {
        let batch = BatchScores {
            scores: f.scores.clone(),
            discarded: Vec::new(),
        };
        let r = alignment_report(f.method, &batch, &slm)?;
        auc.row(&[
            r.method.to_string(),
            r.auc.to_string(),
            r.n_used.to_string(),
            f.n_discarded.to_string(),
        ])?;
    }
    auc.finish()?;

    if let (Some(llm), Some(path)) = (llm, relacc_path) {
        let mut t = table_out(
            Some(&path),
            &[
                "method",
                "excluded_fraction",
                "slm_accuracy",
                "llm_accuracy",
                "relative_accuracy",
                "n_kept",
            ],
        )?;
        for f in &files {
            for p in relative_accuracy_curve(&f.scores, &slm, &llm, &grid)? {
                t.row(&[
                    f.method.to_string(),
                    p.excluded_fraction.to_string(),
                    p.slm_accuracy.to_string(),
                    p.llm_accuracy.to_string(),
                    fmt_opt(p.relative_accuracy),
                    p.n_kept.to_string(),
                ])?;
            }
        }
        t.finish()?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Scores table from `score` (repeatable, one curve each).
    #[arg(long, required = true)]
    scores: Vec<PathBuf>,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    llm_labels: PathBuf,
    /// Routing ratios.
    #[arg(long, default_value = "0:0.05:1")]
    grid: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn sweep(args: SweepArgs) -> Result<(), CliError> {
    let grid = parse_grid(&args.grid)?;
    let slm = Labels::load(&args.labels)?;
    let llm = Labels::load(&args.llm_labels)?;
    let files = args
        .scores
        .iter()
        .map(|p| read_scores(p))
        .collect::<Result<Vec<_>, _>>()?;
    let mut t = table_out(
        args.out.as_deref(),
        &["method", "ratio", "achieved_ratio", "accuracy"],
    )?;
    let mut rows = |method: &str, pts: Vec<uqroute_core::CurvePoint>| -> Result<(), CliError> {
        for p in pts {
            t.row(&[
                method.to_string(),
                p.ratio.to_string(),
                p.achieved_ratio.to_string(),
                p.overall_accuracy.to_string(),
            ])?;
        }
        Ok(())
    };
    for f in &files {
        rows(f.method.as_str(), routing_curve(&f.scores, &slm, &llm, &grid)?)?;
    }
    // oracle over the queries the first scores file covers
    let covered = |labels: &Labels| -> Result<Labels, CliError> {
        files[0]
            .scores
            .iter()
            .map(|s| Ok((s.trace_id.clone(), labels.get(&s.trace_id)?)))
            .collect()
    };
    rows("oracle", oracle_curve(&covered(&slm)?, &covered(&llm)?, &grid)?)?;
    t.finish()?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Trace files or directories; datasets come from the records' tags.
    #[arg(long, required = true)]
    traces: Vec<PathBuf>,
    /// Dataset held out as the unseen target.
    #[arg(long)]
    target: String,
    #[arg(long, value_parser = parse_method)]
    method: UqMethod,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long, default_value_t = DEFAULT_RATE)]
    rate: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    probe: Option<PathBuf>,
    /// Large-model correctness on the target; enables the generalization report.
    #[arg(long)]
    llm_labels: Option<PathBuf>,
    #[arg(long, default_value = "0:0.1:1")]
    grid: String,
    /// Calibration manifest; the histogram goes to `<out>.hist.tsv` and the
    /// generalization report to `<out>.report.tsv`.
    #[arg(long)]
    out: PathBuf,
}

pub fn calibrate(args: CalibrateArgs) -> Result<(), CliError> {
    let grid = parse_grid(&args.grid)?;
    let probe = args.probe.as_ref().map(load_probe).transpose()?;
    if args.method.needs_probe() && probe.is_none() {
        return Err(CliError::Usage(format!("method {} needs --probe", args.method)));
    }
    let traces = load_trace_inputs(&args.traces, false, false)?;
    let groups = group_by_dataset(&traces);
    let config = CalibrationConfig {
        method: args.method,
        bins: args.bins,
        rate: args.rate,
        seed: args.seed,
    };
    let cal = leave_one_out_calibration(&groups, &args.target, &config, probe.as_ref())?;
    save_calibration(&cal, &args.out)?;

    let mut t = table_out(None, &["ratio", "threshold"])?;
    for &r in &grid {
        t.row(&[r.to_string(), transfer_threshold(&cal, r)?.to_string()])?;
    }
    t.finish()?;

    if let Some(path) = &args.llm_labels {
        let target = &groups[&args.target];
        let slm = target.labels();
        if slm.len() != target.len() {
            return Err(CliError::Usage(format!(
                "target dataset {} has unlabeled traces",
                args.target
            )));
        }
        let llm = Labels::load(path)?;
        let scores = score_batch(target, args.method, probe.as_ref())?.scores;
        let report = generalization_report(&cal, &scores, &slm, &llm, &grid)?;
        let mut t = table_out(
            Some(&sidecar(&args.out, ".report.tsv")),
            &[
                "ratio",
                "threshold",
                "achieved_ratio",
                "transfer_accuracy",
                "direct_accuracy",
            ],
        )?;
        for r in &report.rows {
            t.row(&[
                r.ratio.to_string(),
                r.threshold.to_string(),
                r.achieved_ratio.to_string(),
                r.transfer_accuracy.to_string(),
                r.direct_accuracy.to_string(),
            ])?;
        }
        t.finish()?;
        eprintln!(
            "max |accuracy gap| {:.4}, max |ratio gap| {:.4}",
            report.max_abs_accuracy_gap, report.max_ratio_gap
        );
    }
    eprintln!(
        "calibration set: {} of {} pooled scores; histogram in {}",
        cal.len(),
        cal.pooled_counts.iter().sum::<usize>(),
        histogram_sidecar(&args.out).display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainProbeArgs {
    /// Labeled trace files or directories with hidden states (repeatable).
    #[arg(long, required = true)]
    traces: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Out-of-domain defaults (learning rate 1e-4).
    #[arg(long)]
    ood: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Hidden widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// Train on a fixed seed-selected subsample of this many records.
    #[arg(long)]
    subsample: Option<usize>,
    /// Leave out records of this dataset (repeatable).
    #[arg(long)]
    exclude_dataset: Vec<String>,
}

pub fn train_probe_cmd(args: TrainProbeArgs) -> Result<(), CliError> {
    let mut config = if args.ood {
        ProbeTrainConfig::out_of_domain()
    } else {
        ProbeTrainConfig::in_domain()
    };
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = args.lr {
        config.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.hidden {
        config.hidden = v;
    }
    config.subsample = args.subsample;

    let mut traces = load_trace_inputs(&args.traces, true, false)?;
    traces
        .records
        .retain(|t| !args.exclude_dataset.contains(&t.dataset));
    let fit = train_probe(&traces, &config)?;
    save_probe(&fit.model, &args.out)?;
    let mut t = table_out(None, &["epoch", "loss"])?;
    for (i, l) in fit.epoch_losses.iter().enumerate() {
        t.row(&[(i + 1).to_string(), l.to_string()])?;
    }
    t.finish()?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// 0: correctness independent of confidence; 1: fully linked.
    #[arg(long, default_value_t = 1.0)]
    difficulty_link: f64,
    #[arg(long)]
    dataset: Option<String>,
    /// Only token log-probs; skip p(True), samples, verbal text and hidden states.
    #[arg(long)]
    no_evidence: bool,
    #[arg(long)]
    out: PathBuf,
    /// Also write simulated large-model labels here.
    #[arg(long)]
    llm_labels_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.9)]
    llm_accuracy: f64,
}

pub fn synth(args: SynthArgs) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&args.difficulty_link) || !(0.0..=1.0).contains(&args.llm_accuracy) {
        return Err(CliError::Usage(
            "--difficulty-link and --llm-accuracy must lie in [0, 1]".into(),
        ));
    }
    let mut spec = SynthSpec::new(args.n, args.seed, args.difficulty_link)
        .with_evidence(!args.no_evidence);
    if let Some(d) = args.dataset {
        spec = spec.dataset(d);
    }
    let syn = synthesize(&spec)?;
    syn.traces.save(&args.out)?;
    if let Some(path) = &args.llm_labels_out {
        synth_strong_labels(&syn.traces, args.seed.wrapping_add(1), args.llm_accuracy).save(path)?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Gateway TOML config.
    #[arg(long)]
    config: PathBuf,
}

pub fn serve(args: ServeArgs) -> Result<(), CliError> {
    let config = GatewayConfig::load(&args.config)?;
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(uqroute_gateway::run(config))?;
    Ok(())
}
