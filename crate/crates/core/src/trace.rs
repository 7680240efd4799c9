//! Per-sample training dynamics.
//!
//! After every epoch the current network classifies each training sample
//! once; the prediction, its probability and whether it was right are
//! appended to that sample's [`SampleTrace`], and the (truth, prediction)
//! pair is added to a [`CumulativeConfusion`] matrix.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, SampleId};
use crate::error::{Error, Result};
use crate::nn::{argmax, Network, SampleSource};
use crate::tensor::TensorBuffer;

const EVAL_BATCH: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub predicted: usize,
    /// Probability assigned to `predicted`.
    pub confidence: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleTrace {
    pub id: SampleId,
    pub truth: usize,
    pub records: Vec<EpochRecord>,
}

impl SampleTrace {
    pub fn correct_count(&self) -> usize {
        self.records.iter().filter(|r| r.correct).count()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn final_confidence(&self) -> Option<f64> {
        self.last().map(|r| r.confidence)
    }

    /// Confidence of the final prediction when that prediction is wrong.
    pub fn final_illusiveness(&self) -> Option<f64> {
        self.last().filter(|r| !r.correct).map(|r| r.confidence)
    }

    /// Most frequent wrong prediction, lowest category on ties.
    pub fn modal_wrong_prediction(&self) -> Option<usize> {
        modal_wrong(std::iter::once(self))
    }

    /// Fraction of correct records after skipping the first
    /// `floor(burn_in * epochs)` (at least one record is always kept).
    pub fn correct_fraction_after_burn_in(&self, burn_in: f64) -> Option<f64> {
        let n = self.records.len();
        if n == 0 {
            return None;
        }
        let skip = ((burn_in * n as f64).floor() as usize).min(n - 1);
        let window = &self.records[skip..];
        let correct = window.iter().filter(|r| r.correct).count();
        Some(correct as f64 / window.len() as f64)
    }
}

fn modal_wrong<'a>(traces: impl Iterator<Item = &'a SampleTrace>) -> Option<usize> {
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for t in traces {
        for r in t.records.iter().filter(|r| !r.correct) {
            *counts.entry(r.predicted).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(q, _)| q)
}

/// Most frequent wrong prediction for `id` pooled over several runs.
pub fn modal_wrong_across(runs: &[TraceStore], id: SampleId) -> Option<usize> {
    modal_wrong(runs.iter().filter_map(|r| r.trace(id)))
}

/// Square count matrix indexed `[truth][prediction]` together with the
/// epochs and runs it was accumulated over.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CumulativeConfusion {
    categories: usize,
    counts: Vec<Vec<u64>>,
    domain: AccumulationDomain,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccumulationDomain {
    /// Inclusive (first, last) epoch, absent while empty.
    pub epochs: Option<(usize, usize)>,
    pub runs: BTreeSet<usize>,
}

impl CumulativeConfusion {
    pub fn new(categories: usize) -> Self {
        Self {
            categories,
            counts: vec![vec![0; categories]; categories],
            domain: AccumulationDomain::default(),
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if counts.iter().any(|r| r.len() != k) {
            return Err(Error::config("confusion matrix must be square"));
        }
        Ok(Self {
            categories: k,
            counts,
            domain: AccumulationDomain::default(),
        })
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn domain(&self) -> &AccumulationDomain {
        &self.domain
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth].iter().sum()
    }

    fn note(&mut self, epoch: usize, run: usize) {
        self.domain.epochs = Some(match self.domain.epochs {
            None => (epoch, epoch),
            Some((a, b)) => (a.min(epoch), b.max(epoch)),
        });
        self.domain.runs.insert(run);
    }

    pub fn merge(&mut self, other: &CumulativeConfusion) -> Result<()> {
        if other.categories != self.categories {
            return Err(Error::state("cannot merge confusion matrices of different sizes"));
        }
        for (row, orow) in self.counts.iter_mut().zip(&other.counts) {
            for (c, o) in row.iter_mut().zip(orow) {
                *c += o;
            }
        }
        if let Some((a, b)) = other.domain.epochs {
            self.domain.epochs = Some(match self.domain.epochs {
                None => (a, b),
                Some((x, y)) => (x.min(a), y.max(b)),
            });
        }
        self.domain.runs.extend(other.domain.runs.iter().copied());
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Traces of every sample of one dataset within one run.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStore {
    run: usize,
    categories: usize,
    traces: Vec<SampleTrace>,
    index: HashMap<SampleId, usize>,
    confusion: CumulativeConfusion,
}

impl TraceStore {
    /// Empty traces for every sample of `ds`, predictions over `categories`
    /// outputs.
    pub fn new(run: usize, ds: &LabeledDataset, categories: usize) -> Result<Self> {
        if ds.category_count() > categories {
            return Err(Error::state(format!(
                "dataset has {} categories but predictions cover only {categories}",
                ds.category_count()
            )));
        }
        let traces: Vec<SampleTrace> = ds
            .ids()
            .iter()
            .zip(ds.labels())
            .map(|(&id, &truth)| SampleTrace {
                id,
                truth,
                records: Vec::new(),
            })
            .collect();
        let index = traces.iter().enumerate().map(|(i, t)| (t.id, i)).collect();
        Ok(Self {
            run,
            categories,
            traces,
            index,
            confusion: CumulativeConfusion::new(categories),
        })
    }

    pub fn run(&self) -> usize {
        self.run
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn traces(&self) -> &[SampleTrace] {
        &self.traces
    }

    pub fn trace(&self, id: SampleId) -> Option<&SampleTrace> {
        self.index.get(&id).map(|&i| &self.traces[i])
    }

    pub fn confusion(&self) -> &CumulativeConfusion {
        &self.confusion
    }

    /// Number of epochs recorded (equal for every sample).
    pub fn epochs(&self) -> usize {
        self.traces.first().map_or(0, |t| t.records.len())
    }

    /// Classifies every sample of `ds` with `net` and appends one record per
    /// sample. Returns this epoch's confusion increment.
    pub fn record_epoch(
        &mut self,
        epoch: usize,
        net: &Network,
        ds: &LabeledDataset,
    ) -> Result<CumulativeConfusion> {
        if net.outputs() != self.categories {
            return Err(Error::state(format!(
                "network has {} outputs, traces expect {}",
                net.outputs(),
                self.categories
            )));
        }
        let probs = predict_probabilities(net, ds)?;
        self.record_predictions(epoch, &probs, ds.ids())
    }

    /// Appends one record per row of `probs`, row `i` belonging to `ids[i]`.
    pub fn record_predictions(
        &mut self,
        epoch: usize,
        probs: &TensorBuffer,
        ids: &[SampleId],
    ) -> Result<CumulativeConfusion> {
        if probs.rows() != ids.len() || probs.row_len() != self.categories {
            return Err(Error::state(format!(
                "prediction block {:?} does not match {} samples x {} categories",
                probs.shape(),
                ids.len(),
                self.categories
            )));
        }
        if ids.len() != self.traces.len() || ids.iter().zip(&self.traces).any(|(&id, t)| id != t.id) {
            return Err(Error::state("sample ids do not match the traced dataset"));
        }
        let mut increment = CumulativeConfusion::new(self.categories);
        for (i, trace) in self.traces.iter_mut().enumerate() {
            let (predicted, confidence) = argmax(probs.row(i));
            trace.records.push(EpochRecord {
                epoch,
                predicted,
                confidence,
                correct: predicted == trace.truth,
            });
            increment.counts[trace.truth][predicted] += 1;
        }
        increment.note(epoch, self.run);
        self.confusion.merge(&increment)?;
        Ok(increment)
    }

    /// CSV with columns `sample_id,epoch,predicted,confidence,correct`,
    /// grouped by sample in dataset order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sample_id", "epoch", "predicted", "confidence", "correct"])?;
        for t in &self.traces {
            for r in &t.records {
                w.write_record([
                    t.id.to_string(),
                    r.epoch.to_string(),
                    r.predicted.to_string(),
                    r.confidence.to_string(),
                    u8::from(r.correct).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Rebuilds a store written by [`TraceStore::write_csv`]; truths come
    /// from `ds`.
    pub fn read_csv<R: Read>(input: R, run: usize, ds: &LabeledDataset, categories: usize) -> Result<Self> {
        let mut store = Self::new(run, ds, categories)?;
        let mut r = csv::Reader::from_reader(input);
        for row in r.records() {
            let row = row?;
            let field = |i: usize| row.get(i).unwrap_or("");
            let bad = |what: &str| Error::state(format!("bad trace CSV {what} in row {:?}", row));
            let id: SampleId = field(0).parse().map_err(|_| bad("sample_id"))?;
            let epoch: usize = field(1).parse().map_err(|_| bad("epoch"))?;
            let predicted: usize = field(2).parse().map_err(|_| bad("predicted"))?;
            let confidence: f64 = field(3).parse().map_err(|_| bad("confidence"))?;
            let correct = match field(4) {
                "0" => false,
                "1" => true,
                _ => return Err(bad("correct")),
            };
            if predicted >= categories || !(0.0..=1.0).contains(&confidence) {
                return Err(bad("value"));
            }
            let &i = store.index.get(&id).ok_or(Error::Lookup(id))?;
            let trace = &mut store.traces[i];
            if correct != (predicted == trace.truth) {
                return Err(bad("correct flag"));
            }
            trace.records.push(EpochRecord {
                epoch,
                predicted,
                confidence,
                correct,
            });
            store.confusion.counts[trace.truth][predicted] += 1;
            store.confusion.note(epoch, run);
        }
        Ok(store)
    }
}

/// Probability rows for every sample of `ds`, evaluated in fixed-size chunks.
pub fn predict_probabilities(net: &Network, ds: &LabeledDataset) -> Result<TensorBuffer> {
    let mut values = Vec::with_capacity(ds.len() * net.outputs());
    let all: Vec<usize> = (0..ds.len()).collect();
    for chunk in all.chunks(EVAL_BATCH) {
        values.extend(net.forward(&ds.gather(chunk))?.into_values());
    }
    TensorBuffer::new(vec![ds.len(), net.outputs()], values)
}

/// Rule for calling a sample consistently misclassified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IllusiveRule {
    /// Leading fraction of epochs ignored.
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
    /// A run flags a sample whose post-burn-in correct fraction is at most this.
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// A sample is illusive when flagged in at least this fraction of runs.
    #[serde(default = "default_agreement")]
    pub agreement: f64,
}

fn default_burn_in() -> f64 {
    0.5
}
fn default_tau() -> f64 {
    0.1
}
fn default_agreement() -> f64 {
    0.8
}

impl Default for IllusiveRule {
    fn default() -> Self {
        Self {
            burn_in: default_burn_in(),
            tau: default_tau(),
            agreement: default_agreement(),
        }
    }
}

impl IllusiveRule {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("burn_in", self.burn_in),
            ("tau", self.tau),
            ("agreement", self.agreement),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("illusive rule {name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }

    /// Samples flagged within a single run.
    pub fn flagged_in_run(&self, store: &TraceStore) -> BTreeSet<SampleId> {
        store
            .traces
            .iter()
            .filter(|t| {
                t.correct_fraction_after_burn_in(self.burn_in)
                    .is_some_and(|f| f <= self.tau)
            })
            .map(|t| t.id)
            .collect()
    }
}

/// Ids flagged in at least `ceil(agreement * R)` of the `R` runs (and in at
/// least one run).
pub fn illusive_ids(runs: &[TraceStore], rule: &IllusiveRule) -> Result<BTreeSet<SampleId>> {
    rule.validate()?;
    if runs.is_empty() || runs.iter().any(|r| r.traces.is_empty()) {
        return Err(Error::state("no traces to inspect"));
    }
    if let Some(r) = runs.iter().find(|r| r.epochs() < 2) {
        return Err(Error::state(format!(
            "run {} covers {} epochs, at least 2 are needed",
            r.run,
            r.epochs()
        )));
    }
    let ids: Vec<SampleId> = runs[0].traces.iter().map(|t| t.id).collect();
    if runs
        .iter()
        .any(|r| r.traces.len() != ids.len() || r.traces.iter().zip(&ids).any(|(t, id)| t.id != *id))
    {
        return Err(Error::state("runs trace different sample sets"));
    }
    let needed = ((rule.agreement * runs.len() as f64 - 1e-9).ceil() as usize).max(1);
    let mut votes: HashMap<SampleId, usize> = HashMap::new();
    for run in runs {
        for id in rule.flagged_in_run(run) {
            *votes.entry(id).or_default() += 1;
        }
    }
    Ok(votes
        .into_iter()
        .filter(|&(_, v)| v >= needed)
        .map(|(id, _)| id)
        .collect())
}

/// The `k` largest non-zero off-diagonal entries as `(truth, predicted,
/// count)`, ties broken by `(truth, predicted)` ascending.
pub fn top_confusions(conf: &CumulativeConfusion, k: usize) -> Vec<(usize, usize, u64)> {
    let mut entries: Vec<(usize, usize, u64)> = (0..conf.categories)
        .flat_map(|t| (0..conf.categories).map(move |q| (t, q)))
        .filter(|&(t, q)| t != q && conf.get(t, q) > 0)
        .map(|(t, q)| (t, q, conf.get(t, q)))
        .collect();
    entries.sort_by(|a, b| b.2.cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    entries.truncate(k);
    entries
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dims, Image, Provenance};

    fn ds(labels: &[usize], categories: usize) -> LabeledDataset {
        LabeledDataset::new(
            Dims::new(1, 1, 1),
            vec![Image::new(1, 1, 1, vec![0]).unwrap(); labels.len()],
            labels.to_vec(),
            (0..labels.len() as u64).collect(),
            (0..categories).map(|c| c.to_string()).collect(),
            Provenance::Train,
        )
        .unwrap()
    }

    fn rows(r: &[&[f64]]) -> TensorBuffer {
        TensorBuffer::new(vec![r.len(), r[0].len()], r.concat()).unwrap()
    }

    #[test]
    fn three_sample_enumeration() {
        let d = ds(&[0, 1, 2], 3);
        let mut store = TraceStore::new(0, &d, 3).unwrap();
        let p = rows(&[&[0.7, 0.2, 0.1], &[0.5, 0.4, 0.1], &[0.2, 0.2, 0.6]]);
        let inc = store.record_predictions(0, &p, d.ids()).unwrap();
        assert_eq!(inc.counts(), &[vec![1, 0, 0], vec![1, 0, 0], vec![0, 0, 1]]);
        let t1 = store.trace(1).unwrap();
        assert_eq!(t1.records[0], EpochRecord { epoch: 0, predicted: 0, confidence: 0.5, correct: false });
        assert_eq!(t1.final_illusiveness(), Some(0.5));
        assert_eq!(store.trace(0).unwrap().final_illusiveness(), None);
        assert_eq!(store.trace(2).unwrap().final_confidence(), Some(0.6));
        assert_eq!(inc.domain().epochs, Some((0, 0)));
    }

    #[test]
    fn perfect_and_constant_predictors() {
        let d = ds(&[0, 1, 1, 2], 3);
        let mut store = TraceStore::new(0, &d, 3).unwrap();
        let perfect = rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let inc = store.record_predictions(0, &perfect, d.ids()).unwrap();
        assert!(store.traces().iter().all(|t| t.records[0].correct));
        assert_eq!(inc.get(1, 1), 2);
        assert_eq!(inc.total(), 4);
        assert_eq!(top_confusions(&inc, 3), vec![]);

        let c: &[f64] = &[0.9, 0.05, 0.05];
        let constant = rows(&[c; 4]);
        let inc = store.record_predictions(1, &constant, d.ids()).unwrap();
        assert!((0..3).all(|t| inc.get(t, 0) == inc.row_sum(t)));
        assert_eq!(store.confusion().total(), 8);
        assert_eq!(store.trace(1).unwrap().correct_count(), 1);
    }

    #[test]
    fn id_mismatch_is_a_state_error() {
        let d = ds(&[0, 1], 2);
        let mut store = TraceStore::new(0, &d, 2).unwrap();
        let p = rows(&[&[0.5, 0.5], &[0.5, 0.5]]);
        assert!(matches!(store.record_predictions(0, &p, &[1, 0]), Err(Error::State(_))));
    }

    fn scripted(correct: &[&[bool]]) -> TraceStore {
        let d = ds(&vec![0; correct.len()], 2);
        let mut store = TraceStore::new(0, &d, 2).unwrap();
        for e in 0..correct[0].len() {
            let r: Vec<&[f64]> = correct
                .iter()
                .map(|c| if c[e] { &[0.9, 0.1][..] } else { &[0.2, 0.8][..] })
                .collect();
            store.record_predictions(e, &rows(&r), d.ids()).unwrap();
        }
        store
    }

    #[test]
    fn illusive_rule_examples() {
        let mut late_once = vec![false; 20];
        late_once[15] = true;
        let always = [true; 20];
        let never = [false; 20];
        let store = scripted(&[&always, &never, &late_once]);
        let rule = IllusiveRule { burn_in: 0.5, tau: 0.1, agreement: 1.0 };
        let flagged = illusive_ids(std::slice::from_ref(&store), &rule).unwrap();
        assert_eq!(flagged, [1, 2].into());
        let strict = IllusiveRule { tau: 0.0, ..rule };
        assert_eq!(illusive_ids(std::slice::from_ref(&store), &strict).unwrap(), [1].into());
        assert_eq!(store.trace(1).unwrap().modal_wrong_prediction(), Some(1));
        assert_eq!(store.trace(0).unwrap().modal_wrong_prediction(), None);
    }

    #[test]
    fn agreement_across_runs() {
        let a = scripted(&[&[false, false], &[true, true]]);
        let b = scripted(&[&[false, false], &[false, false]]);
        let rule = IllusiveRule { burn_in: 0.0, tau: 0.0, agreement: 0.5 };
        assert_eq!(illusive_ids(&[a.clone(), b.clone()], &rule).unwrap(), [0, 1].into());
        let rule = IllusiveRule { agreement: 1.0, ..rule };
        assert_eq!(illusive_ids(&[a, b], &rule).unwrap(), [0].into());
    }

    #[test]
    fn illusive_errors() {
        assert!(illusive_ids(&[], &IllusiveRule::default()).is_err());
        let one_epoch = scripted(&[&[false]]);
        assert!(matches!(illusive_ids(&[one_epoch], &IllusiveRule::default()), Err(Error::State(_))));
        let bad = IllusiveRule { tau: 1.5, ..Default::default() };
        assert!(illusive_ids(&[scripted(&[&[false, true]])], &bad).is_err());
    }

    #[test]
    fn top_confusion_examples() {
        let mut m = vec![vec![0u64; 6]; 6];
        m[3][5] = 7;
        m[2][2] = 50;
        let conf = CumulativeConfusion::from_counts(m).unwrap();
        assert_eq!(top_confusions(&conf, 3), vec![(3, 5, 7)]);
    }

    #[test]
    fn csv_round_trip() {
        let d = ds(&[0, 1], 2);
        let mut store = TraceStore::new(3, &d, 2).unwrap();
        store.record_predictions(0, &rows(&[&[0.3, 0.7], &[0.1, 0.9]]), d.ids()).unwrap();
        store.record_predictions(1, &rows(&[&[0.6, 0.4], &[1.0 / 3.0, 2.0 / 3.0]]), d.ids()).unwrap();
        let mut buf = Vec::new();
        store.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("sample_id,epoch,predicted,confidence,correct\n0,0,1,0.7,0\n"));
        let back = TraceStore::read_csv(buf.as_slice(), 3, &d, 2).unwrap();
        assert_eq!(back, store);
    }
}
