//! Data preparation and seeded training runs shared by every experiment.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use natspace::data::synthetic::SyntheticSet;
use natspace::data::{cifar, LabeledDataset, SampleId};
use natspace::metrics::{compute_metrics, RunMetrics};
use natspace::nn::{train, Network, Targets, TrainConfig};
use natspace::rng::derive_seed;
use natspace::trace::{predict_probabilities, CumulativeConfusion, IllusiveRule, TraceStore};
use rayon::prelude::*;

use crate::config::{DataSource, ExperimentConfig, NetworkChoice};
use crate::output::Outputs;

/// Seed streams; every random choice hangs off the base seed through one.
pub mod stream {
    pub const RUN: u64 = 1;
    pub const DIAGNOSTIC: u64 = 2;
    pub const INIT: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const SUBSET: u64 = 5;
    pub const STEP: u64 = 6;
}

/// Train/test pair an experiment works on.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    /// Equivalence class of every sample, for synthetic data only.
    pub synthetic: Option<SyntheticSet>,
}

fn cifar_dir(explicit: Option<&Path>, configured: Option<&PathBuf>) -> Result<PathBuf> {
    if let Some(d) = explicit.or(configured.map(PathBuf::as_path)) {
        return Ok(d.to_path_buf());
    }
    std::env::var_os("DATA_DIR")
        .map(PathBuf::from)
        .context("data: no CIFAR-10 directory given (config data.dir, --data-dir or DATA_DIR)")
}

pub fn prepare(source: &DataSource, data_dir: Option<&Path>) -> Result<Prepared> {
    match source {
        DataSource::Synthetic(spec) => {
            let set = spec.generate()?;
            Ok(Prepared {
                train: set.train.clone(),
                test: set.test.clone(),
                synthetic: Some(set),
            })
        }
        DataSource::Cifar10(c) => {
            let dir = cifar_dir(data_dir, c.dir.as_ref())?;
            let (mut train, mut test) = cifar::load_cifar10(&dir)?;
            if let Some(k) = c.train_per_category {
                train = train.stratified_subset(k, derive_seed(c.subset_seed, &[0]))?;
            }
            if let Some(k) = c.test_per_category {
                test = test.stratified_subset(k, derive_seed(c.subset_seed, &[1]))?;
            }
            Ok(Prepared {
                train,
                test,
                synthetic: None,
            })
        }
    }
}

/// FNV-1a over the sorted `(id, label)` pairs of a training set.
pub fn fingerprint(ds: &LabeledDataset) -> u64 {
    let mut pairs: Vec<(SampleId, usize)> = ds.ids().iter().copied().zip(ds.labels().iter().copied()).collect();
    pairs.sort_unstable();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for (id, label) in pairs {
        for b in id.to_le_bytes().into_iter().chain((label as u64).to_le_bytes()) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// What to train in one run.
#[derive(Debug, Clone, Copy)]
pub struct Job<'a> {
    pub train: &'a LabeledDataset,
    pub outputs: usize,
    pub noise_index: Option<usize>,
    pub trace_train: bool,
    pub trace_test: bool,
    pub curves: bool,
}

impl<'a> Job<'a> {
    pub fn plain(train: &'a LabeledDataset) -> Self {
        Self {
            train,
            outputs: train.category_count(),
            noise_index: None,
            trace_train: false,
            trace_test: false,
            curves: false,
        }
    }
}

pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    pub net: Network,
    /// Test-set metrics, with per-epoch curves when requested.
    pub metrics: RunMetrics,
    pub train_trace: Option<TraceStore>,
    pub test_trace: Option<TraceStore>,
}

/// Everything fixed across the runs of one experiment.
pub struct Context<'a> {
    pub cfg: &'a ExperimentConfig,
    pub data: &'a Prepared,
    pub network: NetworkChoice,
    pub train: TrainConfig,
    pub out: &'a Outputs,
}

fn accuracy_of(inc: &CumulativeConfusion) -> f64 {
    let hits: u64 = (0..inc.categories()).map(|c| inc.get(c, c)).sum();
    hits as f64 / inc.total() as f64
}

fn epoch_accuracy(net: &Network, ds: &LabeledDataset) -> natspace::Result<f64> {
    let probs = predict_probabilities(net, ds)?;
    let hits = (0..ds.len())
        .filter(|&i| natspace::nn::argmax(probs.row(i)).0 == ds.labels()[i])
        .count();
    Ok(hits as f64 / ds.len() as f64)
}

impl Context<'_> {
    pub fn test(&self) -> &LabeledDataset {
        &self.data.test
    }

    pub fn categories(&self) -> usize {
        self.data.train.category_count()
    }

    pub fn seed(&self, stream: u64, index: usize) -> u64 {
        derive_seed(self.cfg.seed, &[stream, index as u64])
    }

    /// Trains a fresh network for `job` with the given run seed.
    pub fn train_run(&self, job: &Job<'_>, run: usize, seed: u64) -> Result<RunResult> {
        let test = self.test();
        let shape = job.train.dims().shape();
        let spec = self
            .network
            .build(&shape, job.outputs, derive_seed(seed, &[stream::INIT]))?;
        let mut net = Network::new(spec)?;
        let cfg = TrainConfig {
            seed,
            ..self.train.clone()
        };
        let mut train_trace = job
            .trace_train
            .then(|| TraceStore::new(run, job.train, job.outputs))
            .transpose()?;
        let mut test_trace = job
            .trace_test
            .then(|| TraceStore::new(run, test, job.outputs))
            .transpose()?;
        let mut train_curve = Vec::new();
        let mut test_curve = Vec::new();
        train(
            &mut net,
            job.train,
            Targets::Classes(job.train.labels()),
            &cfg,
            |epoch, n| {
                let train_acc = match train_trace.as_mut() {
                    Some(t) => Some(accuracy_of(&t.record_epoch(epoch, n, job.train)?)),
                    None => None,
                };
                let test_acc = match test_trace.as_mut() {
                    Some(t) => Some(accuracy_of(&t.record_epoch(epoch, n, test)?)),
                    None => None,
                };
                if job.curves {
                    let a = match train_acc {
                        Some(a) => a,
                        None => epoch_accuracy(n, job.train)?,
                    };
                    let b = match test_acc {
                        Some(b) => b,
                        None => epoch_accuracy(n, test)?,
                    };
                    train_curve.push(a);
                    test_curve.push(b);
                }
                Ok(())
            },
        )?;
        let probs = predict_probabilities(&net, test)?;
        let metrics = compute_metrics(&probs, test.labels(), job.noise_index)?.with_curves(train_curve, test_curve);
        Ok(RunResult {
            run,
            seed,
            net,
            metrics,
            train_trace,
            test_trace,
        })
    }

    /// `cfg.runs` runs of `job` on the shared run seeds, in run order, each
    /// followed by `post` on the trained result.
    pub fn runs<T, F>(&self, job: &Job<'_>, post: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(RunResult) -> Result<T> + Sync,
    {
        (0..self.cfg.runs)
            .into_par_iter()
            .map(|r| post(self.train_run(job, r, self.seed(stream::RUN, r))?))
            .collect()
    }

    /// Writes `traces/<dir>/run-<r>.csv`.
    pub fn write_trace(&self, dir: &str, store: &TraceStore) -> Result<()> {
        self.out
            .write_with(&format!("traces/{dir}/run-{}.csv", store.run()), |buf| {
                Ok(store.write_csv(buf)?)
            })
    }
}

/// Outcome of the traced diagnostic runs on the full training set.
pub struct Diagnosis {
    pub train_stores: Vec<TraceStore>,
    pub test_stores: Vec<TraceStore>,
    pub confusion: CumulativeConfusion,
    pub illusive: BTreeSet<SampleId>,
    /// Test samples the same rule flags against their true labels.
    pub test_illusive: BTreeSet<SampleId>,
}

/// Traced runs on the full training set; writes their traces and the
/// merged confusion matrix.
pub fn diagnose(ctx: &Context<'_>, runs: usize, rule: &IllusiveRule, trace_test: bool) -> Result<Diagnosis> {
    let train = &ctx.data.train;
    let job = Job {
        trace_train: true,
        trace_test,
        ..Job::plain(train)
    };
    log::info!("{runs} diagnostic run(s) on {} training samples", train.len());
    let results: Vec<RunResult> = (0..runs)
        .into_par_iter()
        .map(|d| ctx.train_run(&job, d, ctx.seed(stream::DIAGNOSTIC, d)))
        .collect::<Result<_>>()?;
    let mut train_stores = Vec::new();
    let mut test_stores = Vec::new();
    for r in results {
        train_stores.push(r.train_trace.expect("traced"));
        if let Some(t) = r.test_trace {
            test_stores.push(t);
        }
    }
    let mut confusion = CumulativeConfusion::new(ctx.categories());
    for s in &train_stores {
        confusion.merge(s.confusion())?;
        ctx.write_trace("diagnostic", s)?;
    }
    for s in &test_stores {
        ctx.write_trace("diagnostic-test", s)?;
    }
    ctx.out.write("confusion.json", confusion.to_json()?.as_bytes())?;
    let illusive = natspace::trace::illusive_ids(&train_stores, rule)?;
    let test_illusive = if trace_test {
        natspace::trace::illusive_ids(&test_stores, rule)?
    } else {
        BTreeSet::new()
    };
    log::info!(
        "illusive: {} training samples, {} test samples",
        illusive.len(),
        test_illusive.len()
    );
    Ok(Diagnosis {
        train_stores,
        test_stores,
        confusion,
        illusive,
        test_illusive,
    })
}

/// Checks the "training data fixed across runs" contract.
pub fn check_fixed(variant: &str, prints: &[u64]) -> Result<()> {
    if prints.windows(2).any(|w| w[0] != w[1]) {
        bail!("variant {variant}: training set changed between runs");
    }
    Ok(())
}
