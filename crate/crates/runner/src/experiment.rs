//! The experiment kinds and their report files.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context as _, Result};
use natspace::adv::{eval_robustness, AttackConfig};
use natspace::data::step::{grid, make_step_dataset, to_tensors};
use natspace::data::{LabeledDataset, SampleId};
use natspace::metrics::{aggregate, compute_metrics, overfit_gap, MetricsReport, RunMetrics};
use natspace::nn::{argmax, profiles, train, Network, Targets, TrainConfig};
use natspace::noise::{self, NoiseSpec};
use natspace::rng::derive_seed;
use natspace::select::{build_relabel_plan, equal_size_cap, exclude, select_subgroup, RelabelPlan};
use natspace::trace::predict_probabilities;
use natspace::TensorBuffer;
use rayon::prelude::*;
use serde_json::json;

use crate::config::{ExperimentConfig, ExperimentKind, StepDemoBlock};
use crate::exec::{check_fixed, diagnose, fingerprint, prepare, stream, Context, Job, Prepared, RunResult};
use crate::output::{metrics_csv, pct, push_num, Outputs};

#[derive(Debug, Clone)]
pub struct VariantResult {
    pub variant: String,
    pub train_size: usize,
    pub fingerprint: u64,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunMetrics>,
    pub report: MetricsReport,
}

impl VariantResult {
    pub fn accuracies(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.accuracy).collect()
    }
}

/// Clean and adversarial test accuracy of every run at one epsilon.
#[derive(Debug, Clone)]
pub struct AdvResult {
    pub variant: String,
    pub epsilon: f64,
    pub legit: Vec<f64>,
    pub adversarial: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub variant: String,
    pub samples: usize,
    pub train_mse: f64,
    pub grid: Vec<f64>,
    pub predictions: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub kind: ExperimentKind,
    pub variants: Vec<VariantResult>,
    pub adversarial: Vec<AdvResult>,
    pub illusive: Option<BTreeSet<SampleId>>,
    pub test_illusive: Option<BTreeSet<SampleId>>,
    pub plan: Option<RelabelPlan>,
    pub step: Vec<StepResult>,
}

impl Outcome {
    fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            variants: Vec::new(),
            adversarial: Vec::new(),
            illusive: None,
            test_illusive: None,
            plan: None,
            step: Vec::new(),
        }
    }

    pub fn variant(&self, name: &str) -> Option<&VariantResult> {
        self.variants.iter().find(|v| v.variant == name)
    }
}

fn slug(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '-' })
        .collect();
    s.trim_matches('-').to_string()
}

/// Validates, prepares data and runs the configured experiment; artifacts
/// go to `out` when given.
pub fn run_experiment(cfg: &ExperimentConfig, data_dir: Option<&Path>, out: Option<&Path>) -> Result<Outcome> {
    cfg.validate()?;
    let kind = cfg.kind()?;
    let outputs = Outputs::new(out)?;
    outputs.write("config.json", cfg.to_json().as_bytes())?;
    if kind == ExperimentKind::StepDemo {
        return step_demo(cfg, cfg.step_demo.as_ref().expect("validated"), &outputs);
    }
    let data = prepare(&cfg.data_source(), data_dir)?;
    log::info!(
        "{kind}: {} train / {} test samples, {} categories, {} runs",
        data.train.len(),
        data.test.len(),
        data.train.category_count(),
        cfg.runs
    );
    run_on(cfg, &data, &outputs)
}

/// As [`run_experiment`] on already prepared data.
pub fn run_on(cfg: &ExperimentConfig, data: &Prepared, outputs: &Outputs) -> Result<Outcome> {
    cfg.validate()?;
    let kind = cfg.kind()?;
    let ctx = Context {
        cfg,
        data,
        network: cfg.network_choice(),
        train: cfg.train_config(),
        out: outputs,
    };
    let mut outcome = match kind {
        ExperimentKind::Baseline => baseline(&ctx),
        ExperimentKind::Subgroup => subgroup(&ctx),
        ExperimentKind::NoiseSweep => noise_sweep(&ctx),
        ExperimentKind::ExcludeIllusive => exclude_illusive(&ctx),
        ExperimentKind::AdvEval => adv_eval(&ctx),
        ExperimentKind::RelabelGlue => relabel_glue(&ctx),
        ExperimentKind::StepDemo => unreachable!("handled before data preparation"),
    }?;
    outcome.kind = kind;
    write_reports(&ctx, &outcome)?;
    Ok(outcome)
}

fn write_reports(ctx: &Context<'_>, outcome: &Outcome) -> Result<()> {
    let name = outcome.kind.name();
    let rows: Vec<(String, MetricsReport)> = outcome
        .variants
        .iter()
        .map(|v| (v.variant.clone(), v.report.clone()))
        .collect();
    ctx.out.write("metrics.csv", &metrics_csv(name, &rows)?)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["experiment", "variant", "run", "seed", "train_size", "train_fingerprint", "accuracy"])?;
    for v in &outcome.variants {
        for (r, (m, seed)) in v.runs.iter().zip(&v.seeds).enumerate() {
            w.write_record([
                name.to_string(),
                v.variant.clone(),
                r.to_string(),
                seed.to_string(),
                v.train_size.to_string(),
                format!("{:016x}", v.fingerprint),
                m.accuracy.to_string(),
            ])?;
        }
    }
    ctx.out.write("runs.csv", &w.into_inner()?)?;
    Ok(())
}

/// Runs `job` `R` times, applying `extra` to each trained run.
fn run_variant<T: Send>(
    ctx: &Context<'_>,
    variant: &str,
    job: Job<'_>,
    extra: impl Fn(&RunResult) -> Result<T> + Sync,
) -> Result<(VariantResult, Vec<T>)> {
    let job = Job {
        trace_train: job.trace_train || ctx.cfg.trace_runs,
        ..job
    };
    log::info!("variant {variant}: {} training samples", job.train.len());
    let print = fingerprint(job.train);
    let results = ctx.runs(&job, |r| {
        if let Some(t) = &r.train_trace {
            ctx.write_trace(&slug(variant), t)?;
        }
        let e = extra(&r)?;
        Ok((r.seed, fingerprint(job.train), r.metrics, e))
    })?;
    let mut seeds = Vec::new();
    let mut prints = Vec::new();
    let mut runs = Vec::new();
    let mut extras = Vec::new();
    for (seed, p, m, e) in results {
        seeds.push(seed);
        prints.push(p);
        runs.push(m);
        extras.push(e);
    }
    check_fixed(variant, &prints)?;
    let report = aggregate(&runs)?;
    Ok((
        VariantResult {
            variant: variant.to_string(),
            train_size: job.train.len(),
            fingerprint: print,
            seeds,
            runs,
            report,
        },
        extras,
    ))
}

fn simple(ctx: &Context<'_>, variant: &str, job: Job<'_>) -> Result<VariantResult> {
    Ok(run_variant(ctx, variant, job, |_| Ok(()))?.0)
}

fn baseline(ctx: &Context<'_>) -> Result<Outcome> {
    let train = &ctx.data.train;
    let job = Job {
        trace_train: true,
        curves: true,
        ..Job::plain(train)
    };
    let (v, confusions) = run_variant(ctx, "full", job, |r| {
        Ok(r.train_trace.as_ref().expect("traced").confusion().clone())
    })?;
    let mut merged = natspace::trace::CumulativeConfusion::new(ctx.categories());
    for c in &confusions {
        merged.merge(c)?;
    }
    ctx.out.write("confusion.json", merged.to_json()?.as_bytes())?;
    let mut out = Outcome::new(ExperimentKind::Baseline);
    out.variants.push(v);
    Ok(out)
}

/// Training set with a generated noise category appended.
fn with_noise(ctx: &Context<'_>, legit: &LabeledDataset, spec: &NoiseSpec) -> Result<LabeledDataset> {
    let spec = NoiseSpec {
        seed: derive_seed(ctx.cfg.seed, &[stream::NOISE, spec.seed]),
        ..spec.clone()
    };
    let count = noise::noise_count(spec.rate, legit.len());
    if count == 0 {
        anyhow::bail!("noise rate {} yields no samples for {} legitimate ones", spec.rate, legit.len());
    }
    let generated = noise::generate(&spec, count, legit.dims())?;
    Ok(noise::with_noise_category(legit, &generated)?)
}

fn noise_job(ds: &LabeledDataset) -> Job<'_> {
    Job {
        noise_index: Some(ds.category_count() - 1),
        ..Job::plain(ds)
    }
}

fn subgroup(ctx: &Context<'_>) -> Result<Outcome> {
    let block = ctx.cfg.subgroups.as_ref().expect("validated");
    let diag = diagnose(ctx, 1, &natspace::trace::IllusiveRule::default(), false)?;
    let store = &diag.train_stores[0];
    let mut listing = Vec::new();
    let mut out = Outcome::new(ExperimentKind::Subgroup);
    for set in &block.sets {
        let mut ids = BTreeSet::new();
        for spec in set {
            let cap = equal_size_cap(store, spec.fraction)?;
            let chosen = select_subgroup(store, spec, Some(cap)).with_context(|| format!("subgroup {spec}"))?;
            listing.push(json!({"subgroup": spec.to_string(), "size_cap": cap, "ids": chosen}));
            ids.extend(chosen);
        }
        let ids: Vec<SampleId> = ids.into_iter().collect();
        let legit = ctx.data.train.subset(&ids)?;
        let name = set.iter().map(ToString::to_string).collect::<Vec<_>>().join("+");
        out.variants.push(simple(ctx, &name, Job::plain(&legit))?);
        if let Some(n) = &block.noise {
            let ds = with_noise(ctx, &legit, n)?;
            out.variants
                .push(simple(ctx, &format!("{name} +{}", n.describe()), noise_job(&ds))?);
        }
    }
    ctx.out
        .write("subgroups.json", serde_json::to_string_pretty(&listing)?.as_bytes())?;
    Ok(out)
}

fn noise_sweep(ctx: &Context<'_>) -> Result<Outcome> {
    let block = ctx.cfg.noise.as_ref().expect("validated");
    let legit = match block.legit_per_category {
        Some(k) => ctx
            .data
            .train
            .stratified_subset(k, derive_seed(ctx.cfg.seed, &[stream::SUBSET]))?,
        None => ctx.data.train.clone(),
    };
    let mut out = Outcome::new(ExperimentKind::NoiseSweep);
    out.variants.push(simple(ctx, "none", Job::plain(&legit))?);
    for spec in &block.variants {
        let ds = with_noise(ctx, &legit, spec)?;
        out.variants.push(simple(ctx, &spec.describe(), noise_job(&ds))?);
    }
    Ok(out)
}

fn write_illusive(ctx: &Context<'_>, ids: &BTreeSet<SampleId>, test_ids: Option<&BTreeSet<SampleId>>) -> Result<()> {
    let block = ctx.cfg.illusive.as_ref().expect("validated");
    let mut doc = json!({"rule": block, "train": ids});
    if let Some(t) = test_ids {
        doc["test"] = json!(t);
    }
    ctx.out
        .write("illusive.json", serde_json::to_string_pretty(&doc)?.as_bytes())
}

fn exclude_illusive(ctx: &Context<'_>) -> Result<Outcome> {
    let block = ctx.cfg.illusive.as_ref().expect("validated");
    let diag = diagnose(ctx, block.diagnostic_runs, &block.rule(), false)?;
    write_illusive(ctx, &diag.illusive, None)?;
    let kept = exclude(&ctx.data.train, &diag.illusive)?;
    let mut out = Outcome::new(ExperimentKind::ExcludeIllusive);
    for (name, ds) in [("full", &ctx.data.train), ("without-illusive", &kept)] {
        out.variants.push(simple(
            ctx,
            name,
            Job {
                curves: true,
                ..Job::plain(ds)
            },
        )?);
    }
    let mut csv = String::from("variant,epoch,train_accuracy,test_accuracy,gap\n");
    for v in &out.variants {
        let gap = overfit_gap(&v.report.train_curve, &v.report.test_curve)?;
        for (e, g) in gap.iter().enumerate() {
            writeln!(
                csv,
                "{},{},{},{},{}",
                v.variant, e, v.report.train_curve[e], v.report.test_curve[e], g
            )?;
        }
    }
    ctx.out.write("overfit.csv", csv.as_bytes())?;
    out.illusive = Some(diag.illusive);
    Ok(out)
}

fn adv_eval(ctx: &Context<'_>) -> Result<Outcome> {
    let block = ctx.cfg.illusive.as_ref().expect("validated");
    let epsilons = &ctx.cfg.attacks.as_ref().expect("validated").epsilons;
    let diag = diagnose(ctx, block.diagnostic_runs, &block.rule(), false)?;
    write_illusive(ctx, &diag.illusive, None)?;
    let kept = exclude(&ctx.data.train, &diag.illusive)?;
    let mut out = Outcome::new(ExperimentKind::AdvEval);
    let test = ctx.test();
    for (name, ds) in [("full", &ctx.data.train), ("without-illusive", &kept)] {
        let (v, per_run) = run_variant(ctx, name, Job::plain(ds), |r| {
            epsilons
                .iter()
                .map(|&e| Ok(eval_robustness(&r.net, test, &AttackConfig::new(e)?)?))
                .collect::<Result<Vec<(f64, f64)>>>()
        })?;
        for (i, &epsilon) in epsilons.iter().enumerate() {
            out.adversarial.push(AdvResult {
                variant: name.to_string(),
                epsilon,
                legit: per_run.iter().map(|p| p[i].0).collect(),
                adversarial: per_run.iter().map(|p| p[i].1).collect(),
            });
        }
        out.variants.push(v);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epochs", "epsilon", "A_leg", "A_adv", "variant"])?;
    for a in &out.adversarial {
        w.write_record([
            ctx.train.epochs.to_string(),
            a.epsilon.to_string(),
            pct(natspace::metrics::shifted_mean(&a.legit)),
            pct(natspace::metrics::shifted_mean(&a.adversarial)),
            a.variant.clone(),
        ])?;
    }
    ctx.out.write("adversarial.csv", &w.into_inner()?)?;
    out.illusive = Some(diag.illusive);
    Ok(out)
}

/// Metrics for predictions where some rows come from the second classifier
/// and are glued back to original categories. Probabilities of a split
/// category count toward the category it glues to.
fn glued_metrics(rows: &[(Vec<f64>, Option<&RelabelPlan>)], truths: &[usize], categories: usize) -> Result<RunMetrics> {
    let mut folded = Vec::with_capacity(rows.len() * categories);
    let mut hits = 0usize;
    let (mut conf_ok, mut conf_bad, mut truth_bad) = (Vec::new(), Vec::new(), Vec::new());
    for ((row, plan), &t) in rows.iter().zip(truths) {
        let (raw_pred, conf) = argmax(row);
        let mut f = vec![0.0; categories];
        let pred = match plan {
            Some(p) => {
                for (k, &v) in row.iter().enumerate() {
                    f[p.glue(k)?] += v;
                }
                p.glue(raw_pred)?
            }
            None => {
                f.copy_from_slice(row);
                raw_pred
            }
        };
        if pred == t {
            hits += 1;
            conf_ok.push(conf);
        } else {
            conf_bad.push(conf);
            truth_bad.push(f[t]);
        }
        folded.extend(f);
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    // Sanity: folded rows are still distributions.
    compute_metrics(&TensorBuffer::new(vec![rows.len(), categories], folded)?, truths, None)?;
    Ok(RunMetrics {
        samples: rows.len(),
        accuracy: hits as f64 / rows.len() as f64,
        p_c: mean(&conf_ok),
        p_i: mean(&conf_bad),
        p_g: mean(&truth_bad),
        noise_rate: 0.0,
        train_curve: Vec::new(),
        test_curve: Vec::new(),
    })
}

fn relabel_glue(ctx: &Context<'_>) -> Result<Outcome> {
    let block = ctx.cfg.illusive.as_ref().expect("validated");
    let top_k = ctx.cfg.relabel.as_ref().expect("validated").top_k;
    let diag = diagnose(ctx, block.diagnostic_runs, &block.rule(), true)?;
    write_illusive(ctx, &diag.illusive, Some(&diag.test_illusive))?;
    if diag.illusive.is_empty() {
        anyhow::bail!("relabel-glue: no illusive training samples were detected");
    }
    let plan = build_relabel_plan(&diag.illusive, &diag.train_stores, &diag.confusion, top_k)?;
    ctx.out.write("plan.json", plan.to_json()?.as_bytes())?;
    let train = &ctx.data.train;
    let ids: Vec<SampleId> = diag.illusive.iter().copied().collect();
    let main_set = exclude(train, &diag.illusive)?;
    let second_set = plan.apply(&train.subset(&ids)?)?;
    let c = ctx.categories();
    let test = ctx.test();

    let mut out = Outcome::new(ExperimentKind::RelabelGlue);
    out.variants.push(simple(ctx, "single", Job::plain(train))?);

    let main_job = Job::plain(&main_set);
    let second_job = Job {
        outputs: plan.total_categories(),
        ..Job::plain(&second_set)
    };
    log::info!(
        "variant glued: main on {} samples, second on {} samples over {} categories",
        main_set.len(),
        second_set.len(),
        plan.total_categories()
    );
    let per_run: Vec<(u64, RunMetrics)> = (0..ctx.cfg.runs)
        .into_par_iter()
        .map(|r| {
            let seed = ctx.seed(stream::RUN, r);
            let main = ctx.train_run(&main_job, r, seed)?;
            let second = ctx.train_run(&second_job, r, derive_seed(seed, &[1]))?;
            let p_main = predict_probabilities(&main.net, test)?;
            let p_second = predict_probabilities(&second.net, test)?;
            let rows: Vec<(Vec<f64>, Option<&RelabelPlan>)> = test
                .ids()
                .iter()
                .enumerate()
                .map(|(i, id)| {
                    if diag.test_illusive.contains(id) {
                        (p_second.row(i).to_vec(), Some(&plan))
                    } else {
                        (p_main.row(i).to_vec(), None)
                    }
                })
                .collect();
            Ok((seed, glued_metrics(&rows, test.labels(), c)?))
        })
        .collect::<Result<_>>()?;
    let runs: Vec<RunMetrics> = per_run.iter().map(|(_, m)| m.clone()).collect();
    out.variants.push(VariantResult {
        variant: "glued".into(),
        train_size: train.len(),
        fingerprint: fingerprint(&main_set) ^ fingerprint(&second_set).rotate_left(1),
        seeds: per_run.iter().map(|(s, _)| *s).collect(),
        report: aggregate(&runs)?,
        runs,
    });
    out.illusive = Some(diag.illusive);
    out.test_illusive = Some(diag.test_illusive);
    out.plan = Some(plan);
    Ok(out)
}

fn step_variant(cfg: &ExperimentConfig, block: &StepDemoBlock, index: usize) -> Result<StepResult> {
    let v = &block.variants[index];
    let base = derive_seed(cfg.seed, &[stream::STEP, index as u64]);
    let samples = make_step_dataset(&v.intervals, base)?;
    let (x, y) = to_tensors(&samples);
    let mut net = Network::new(profiles::regressor(&block.hidden, derive_seed(base, &[stream::INIT]))?)?;
    for (s, stage) in block.stages.iter().enumerate() {
        let tc = TrainConfig {
            learning_rate: stage.learning_rate,
            momentum: block.momentum,
            batch_size: block.batch_size,
            epochs: stage.epochs,
            seed: derive_seed(base, &[stream::RUN, s as u64]),
        };
        train(&mut net, &x, Targets::Values(&y), &tc, |_, _| Ok(()))?;
    }
    let train_mse = net.loss(&x, Targets::Values(&y))?;
    let g = grid(block.grid_points);
    let predictions = net
        .forward(&TensorBuffer::new(vec![g.len(), 1], g.clone())?)?
        .into_values();
    log::info!("step variant {}: {} samples, train MSE {train_mse:.3e}", v.name, samples.len());
    Ok(StepResult {
        variant: v.name.clone(),
        samples: samples.len(),
        train_mse,
        grid: g,
        predictions,
    })
}

fn step_demo(cfg: &ExperimentConfig, block: &StepDemoBlock, outputs: &Outputs) -> Result<Outcome> {
    let results: Vec<StepResult> = (0..block.variants.len())
        .into_par_iter()
        .map(|i| step_variant(cfg, block, i))
        .collect::<Result<_>>()?;
    let mut curves = b"x,prediction,variant\n".to_vec();
    for r in &results {
        for (&x, &p) in r.grid.iter().zip(&r.predictions) {
            push_num(&mut curves, x);
            curves.push(b',');
            push_num(&mut curves, p);
            curves.extend_from_slice(format!(",{}\n", r.variant).as_bytes());
        }
    }
    outputs.write("curves.csv", &curves)?;
    let mut summary = String::from("variant,samples,train_mse\n");
    for r in &results {
        writeln!(summary, "{},{},{}", r.variant, r.samples, r.train_mse)?;
    }
    outputs.write("step.csv", summary.as_bytes())?;
    let mut out = Outcome::new(ExperimentKind::StepDemo);
    out.step = results;
    Ok(out)
}
