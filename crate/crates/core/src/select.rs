//! Training-set surgery driven by traces: confidence/illusiveness subgroups,
//! removal of illusive samples, and splitting confused categories into new
//! categories that are glued back with a lookup table.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, SampleId};
use crate::error::{Error, Result};
use crate::trace::{modal_wrong_across, top_confusions, CumulativeConfusion, TraceStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    /// Correctly classified, highest confidence first.
    Hc,
    /// Correctly classified, lowest confidence first.
    Lc,
    /// Misclassified, highest illusiveness first.
    Hi,
    /// Misclassified, lowest illusiveness first.
    Li,
}

impl Criterion {
    fn wants_correct(self) -> bool {
        matches!(self, Criterion::Hc | Criterion::Lc)
    }

    fn descending(self) -> bool {
        matches!(self, Criterion::Hc | Criterion::Hi)
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Hc => "hc",
            Criterion::Lc => "lc",
            Criterion::Hi => "hi",
            Criterion::Li => "li",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubgroupSpec {
    pub criterion: Criterion,
    /// Fraction of the pool to take, in `(0, 1]`.
    pub fraction: f64,
}

impl SubgroupSpec {
    pub fn new(criterion: Criterion, fraction: f64) -> Self {
        Self {
            criterion,
            fraction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::config(format!(
                "subgroup fraction must lie in (0, 1], got {}",
                self.fraction
            )));
        }
        Ok(())
    }
}

impl fmt::Display for SubgroupSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S_{}^{:.2}", self.criterion, self.fraction)
    }
}

/// Final-epoch pools: (correct, misclassified) ids with their final confidence.
fn pools(store: &TraceStore) -> Result<(Vec<(SampleId, f64)>, Vec<(SampleId, f64)>)> {
    let mut correct = Vec::new();
    let mut wrong = Vec::new();
    for t in store.traces() {
        let last = t
            .last()
            .ok_or_else(|| Error::Selection(format!("sample {} has no recorded epoch", t.id)))?;
        if last.correct {
            correct.push((t.id, last.confidence));
        } else {
            wrong.push((t.id, last.confidence));
        }
    }
    Ok((correct, wrong))
}

/// `floor(fraction * min(|correct pool|, |misclassified pool|))`, the common
/// size that makes all four subgroups equally large.
pub fn equal_size_cap(store: &TraceStore, fraction: f64) -> Result<usize> {
    let (c, w) = pools(store)?;
    Ok((fraction * c.len().min(w.len()) as f64).floor() as usize)
}

/// Ranked ids of the subgroup: first `min(floor(p * |pool|), size_cap)`
/// of the pool sorted by final confidence, ties to the smaller id.
pub fn select_subgroup(
    store: &TraceStore,
    spec: &SubgroupSpec,
    size_cap: Option<usize>,
) -> Result<Vec<SampleId>> {
    spec.validate()?;
    let (correct, wrong) = pools(store)?;
    let mut pool = if spec.criterion.wants_correct() {
        correct
    } else {
        wrong
    };
    if pool.is_empty() {
        return Err(Error::Selection(format!("pool for {spec} is empty")));
    }
    pool.sort_by(|a, b| {
        let by_conf = if spec.criterion.descending() {
            b.1.total_cmp(&a.1)
        } else {
            a.1.total_cmp(&b.1)
        };
        by_conf.then(a.0.cmp(&b.0))
    });
    let mut take = (spec.fraction * pool.len() as f64).floor() as usize;
    if let Some(cap) = size_cap {
        take = take.min(cap);
    }
    Ok(pool.into_iter().take(take).map(|(id, _)| id).collect())
}

/// Every sample of `ds` except `ids`.
pub fn exclude(ds: &LabeledDataset, ids: &BTreeSet<SampleId>) -> Result<LabeledDataset> {
    let present: BTreeSet<SampleId> = ds.ids().iter().copied().collect();
    if let Some(&missing) = ids.difference(&present).next() {
        return Err(Error::Lookup(missing));
    }
    let keep: Vec<SampleId> = ds.ids().iter().copied().filter(|id| !ids.contains(id)).collect();
    ds.subset(&keep)
}

/// New categories carved out of confused (truth, prediction) pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelabelPlan {
    original_categories: usize,
    pairs: Vec<(usize, usize)>,
    entries: Vec<(SampleId, usize)>,
    lookup: Vec<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RelabelPlanJson {
    pairs: Vec<(usize, usize)>,
    entries: Vec<(SampleId, usize)>,
    lookup: Vec<(usize, usize)>,
}

impl RelabelPlan {
    pub fn new(
        original_categories: usize,
        pairs: Vec<(usize, usize)>,
        entries: Vec<(SampleId, usize)>,
        lookup: Vec<(usize, usize)>,
    ) -> Result<Self> {
        if lookup.is_empty() || pairs.len() != lookup.len() {
            return Err(Error::Plan("plan needs one lookup entry per confusion pair".into()));
        }
        for (k, &(new, orig)) in lookup.iter().enumerate() {
            if new != original_categories + k {
                return Err(Error::Plan(format!(
                    "new categories must be contiguous from {original_categories}, found {new} at position {k}"
                )));
            }
            if orig >= original_categories || orig != pairs[k].0 {
                return Err(Error::Plan(format!("lookup {new} -> {orig} does not match pair {:?}", pairs[k])));
            }
        }
        let total = original_categories + lookup.len();
        if let Some(&(id, new)) = entries.iter().find(|&&(_, n)| n < original_categories || n >= total) {
            return Err(Error::Plan(format!("entry ({id}, {new}) outside new categories")));
        }
        Ok(Self {
            original_categories,
            pairs,
            entries,
            lookup,
        })
    }

    pub fn original_categories(&self) -> usize {
        self.original_categories
    }

    pub fn total_categories(&self) -> usize {
        self.original_categories + self.lookup.len()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn entries(&self) -> &[(SampleId, usize)] {
        &self.entries
    }

    pub fn lookup(&self) -> &[(usize, usize)] {
        &self.lookup
    }

    /// Original category for any category index of the widened label space.
    pub fn glue(&self, category: usize) -> Result<usize> {
        if category < self.original_categories {
            Ok(category)
        } else {
            self.lookup
                .get(category - self.original_categories)
                .map(|&(_, orig)| orig)
                .ok_or_else(|| {
                    Error::Plan(format!(
                        "category {category} outside the {} glued categories",
                        self.total_categories()
                    ))
                })
        }
    }

    /// Names for the widened label space, new categories named `truth~pred`.
    pub fn category_names(&self, original: &[String]) -> Vec<String> {
        let mut names = original.to_vec();
        names.extend(
            self.pairs
                .iter()
                .map(|&(t, q)| format!("{}~{}", original[t], original[q])),
        );
        names
    }

    /// `ds` with every planned sample moved to its new category. Plan entries
    /// for samples absent from `ds` are ignored.
    pub fn apply(&self, ds: &LabeledDataset) -> Result<LabeledDataset> {
        if ds.category_count() != self.original_categories {
            return Err(Error::Plan(format!(
                "dataset has {} categories, plan expects {}",
                ds.category_count(),
                self.original_categories
            )));
        }
        let index = ds.index_of_ids();
        let present: Vec<(SampleId, usize)> = self
            .entries
            .iter()
            .copied()
            .filter(|(id, _)| index.contains_key(id))
            .collect();
        ds.relabel_samples(&present, self.category_names(ds.category_names()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&RelabelPlanJson {
            pairs: self.pairs.clone(),
            entries: self.entries.clone(),
            lookup: self.lookup.clone(),
        })?)
    }

    /// Original category count is the first new category index.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RelabelPlanJson = serde_json::from_str(text)?;
        let first = raw
            .lookup
            .first()
            .map(|&(new, _)| new)
            .ok_or_else(|| Error::Plan("empty lookup table".into()))?;
        Self::new(first, raw.pairs, raw.entries, raw.lookup)
    }
}

/// One new category per top-`k` confusion pair `(t, q)`; an illusive sample
/// of truth `t` whose modal wrong prediction is `q` moves to that category.
pub fn build_relabel_plan(
    illusive: &BTreeSet<SampleId>,
    runs: &[TraceStore],
    conf: &CumulativeConfusion,
    k: usize,
) -> Result<RelabelPlan> {
    if k == 0 {
        return Err(Error::Plan("k must be at least 1".into()));
    }
    let top = top_confusions(conf, k);
    if top.is_empty() {
        return Err(Error::Plan("confusion matrix has no off-diagonal mass".into()));
    }
    let first = runs
        .first()
        .ok_or_else(|| Error::Plan("no traces supplied".into()))?;
    let c = first.categories();
    if conf.categories() != c {
        return Err(Error::Plan("confusion matrix and traces disagree on category count".into()));
    }
    let new_index: BTreeMap<(usize, usize), usize> = top
        .iter()
        .enumerate()
        .map(|(i, &(t, q, _))| ((t, q), c + i))
        .collect();
    let mut entries = Vec::new();
    for &id in illusive {
        let trace = first.trace(id).ok_or(Error::Lookup(id))?;
        if let Some(q) = modal_wrong_across(runs, id) {
            if let Some(&new) = new_index.get(&(trace.truth, q)) {
                entries.push((id, new));
            }
        }
    }
    RelabelPlan::new(
        c,
        top.iter().map(|&(t, q, _)| (t, q)).collect(),
        entries,
        top.iter().enumerate().map(|(i, &(t, _, _))| (c + i, t)).collect(),
    )
}

/// Maps predictions over the widened label space back to original categories.
pub fn glue_predictions(predictions: &[usize], plan: &RelabelPlan) -> Result<Vec<usize>> {
    predictions.iter().map(|&p| plan.glue(p)).collect()
}
