//! Exhaustive constrained grid search over dual-filter parameters, the
//! balanced-accuracy count separator, and the count-threshold baseline
//! classifier built from the winning configuration.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::edges::{dced, CannyThresholds, DcedParams, SuppressedGradient};
use crate::error::{Error, Result};
use crate::imgcore::ImageGray;

/// Patch label; anomalous is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Normal,
    Anomalous,
}

/// The values searched for each threshold and for the blur size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub threshold_values: Vec<f64>,
    pub kernel_sizes: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            threshold_values: (0..=10).map(|i| f64::from(i) * 25.0).collect(),
            kernel_sizes: vec![3, 5, 7, 9],
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.threshold_values.is_empty() || self.kernel_sizes.is_empty() {
            return Err(Error::InvalidArgument("grid has no values".into()));
        }
        if self.threshold_values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "threshold values must be finite and non-negative".into(),
            ));
        }
        if self.threshold_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "threshold values must be strictly increasing".into(),
            ));
        }
        if let Some(&k) = self.kernel_sizes.iter().find(|k| **k == 0 || **k % 2 == 0) {
            return Err(Error::InvalidKernelSize(k));
        }
        Ok(())
    }

    fn sorted_kernels(&self) -> Vec<usize> {
        let mut ks = self.kernel_sizes.clone();
        ks.sort_unstable();
        ks.dedup();
        ks
    }
}

/// Every admissible `(K, wth_min, wth_max, nth_min, nth_max)` in
/// lexicographic order.
pub fn enumerate_grid(spec: &GridSpec) -> Result<impl Iterator<Item = DcedParams>> {
    spec.validate()?;
    let values = spec.threshold_values.clone();
    let kernels = spec.sorted_kernels();
    Ok(kernels.into_iter().flat_map(move |k| {
        let v = values.clone();
        let n = v.len();
        (0..n).flat_map(move |a| {
            let v = v.clone();
            (a + 1..n).flat_map(move |b| {
                let v = v.clone();
                (a..n).flat_map(move |c| {
                    let v = v.clone();
                    (c + 1..n)
                        .filter(move |&d| d > b)
                        .map(move |d| {
                            DcedParams::new(k, v[a], v[b], v[c], v[d])
                                .expect("grid tuple satisfies the constraints")
                        })
                })
            })
        })
    }))
}

/// A count threshold and the balanced accuracy it achieves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Separator {
    pub threshold: f64,
    pub balanced_accuracy: f64,
}

/// Scans thresholds at the midpoints between consecutive distinct counts
/// plus one below the minimum and one above the maximum, classifying
/// `count > threshold` as anomalous. Ties keep the smallest threshold.
pub fn best_separator(counts_normal: &[usize], counts_anomalous: &[usize]) -> Result<Separator> {
    if counts_normal.is_empty() || counts_anomalous.is_empty() {
        return Err(Error::EmptyInput("both classes need at least one count"));
    }
    let (n_norm, n_anom) = (counts_normal.len(), counts_anomalous.len());
    let mut normal = counts_normal.to_vec();
    let mut anomalous = counts_anomalous.to_vec();
    normal.sort_unstable();
    anomalous.sort_unstable();
    let mut values: Vec<usize> = normal.iter().chain(&anomalous).copied().collect();
    values.sort_unstable();
    values.dedup();

    let mut candidates = Vec::with_capacity(values.len() + 1);
    candidates.push(values[0] as f64 - 0.5);
    candidates.extend(values.windows(2).map(|w| (w[0] as f64 + w[1] as f64) / 2.0));
    candidates.push(*values.last().unwrap() as f64 + 0.5);

    // Score tp * |normal| + tn * |anomalous| is the balanced accuracy times
    // 2 |normal| |anomalous|, compared exactly in integers.
    let (mut i_norm, mut i_anom) = (0, 0);
    let mut best: Option<(u128, f64)> = None;
    for &t in &candidates {
        while i_norm < n_norm && (normal[i_norm] as f64) <= t {
            i_norm += 1;
        }
        while i_anom < n_anom && (anomalous[i_anom] as f64) <= t {
            i_anom += 1;
        }
        let tn = i_norm as u128;
        let tp = (n_anom - i_anom) as u128;
        let score = tp * n_norm as u128 + tn * n_anom as u128;
        if best.map_or(true, |(s, _)| score > s) {
            best = Some((score, t));
        }
    }
    let (score, threshold) = best.expect("at least two candidates");
    Ok(Separator {
        threshold,
        balanced_accuracy: score as f64 / (2.0 * n_norm as f64 * n_anom as f64),
    })
}

pub const TUNED_SCHEMA_VERSION: u32 = 1;

/// Selected dual-filter configuration and its patch-level count threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TunedDoc", into = "TunedDoc")]
pub struct TunedDced {
    pub params: DcedParams,
    pub count_threshold: f64,
    pub train_balanced_accuracy: f64,
    /// Absent when no validation split was used.
    pub val_balanced_accuracy: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct TunedDoc {
    schema_version: u32,
    kernel_size: usize,
    wth_min: f64,
    wth_max: f64,
    nth_min: f64,
    nth_max: f64,
    count_threshold: f64,
    train_ba: f64,
    val_ba: Option<f64>,
}

impl From<TunedDced> for TunedDoc {
    fn from(t: TunedDced) -> Self {
        Self {
            schema_version: TUNED_SCHEMA_VERSION,
            kernel_size: t.params.kernel_size,
            wth_min: t.params.wide.th_min,
            wth_max: t.params.wide.th_max,
            nth_min: t.params.narrow.th_min,
            nth_max: t.params.narrow.th_max,
            count_threshold: t.count_threshold,
            train_ba: t.train_balanced_accuracy,
            val_ba: t.val_balanced_accuracy,
        }
    }
}

impl TryFrom<TunedDoc> for TunedDced {
    type Error = Error;

    fn try_from(d: TunedDoc) -> Result<Self> {
        if d.schema_version != TUNED_SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported tuned model schema_version {}",
                d.schema_version
            )));
        }
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(d.train_ba) || !d.val_ba.map_or(true, in_unit) {
            return Err(Error::InvalidArgument("accuracies must lie in [0, 1]".into()));
        }
        Ok(Self {
            params: DcedParams::new(d.kernel_size, d.wth_min, d.wth_max, d.nth_min, d.nth_max)?,
            count_threshold: d.count_threshold,
            train_balanced_accuracy: d.train_ba,
            val_balanced_accuracy: d.val_ba,
        })
    }
}

/// Training result of one grid candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateScore {
    pub params: DcedParams,
    pub separator: Separator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneReport {
    pub best: TunedDced,
    /// All candidates in enumeration order.
    pub candidates: Vec<CandidateScore>,
}

/// Wide/narrow edge counts of every patch for every threshold pair of the
/// grid, per kernel size.
struct CountCache {
    /// `counts[k][(lo, hi)][patch]`, keyed by indices into the threshold values.
    counts: BTreeMap<usize, BTreeMap<(usize, usize), Vec<usize>>>,
}

impl CountCache {
    fn build(patches: &[&ImageGray], spec: &GridSpec, kernels: &[usize]) -> Result<Self> {
        let values = &spec.threshold_values;
        let mut counts = BTreeMap::new();
        for &k in kernels {
            let per_patch: Vec<BTreeMap<(usize, usize), usize>> = patches
                .par_iter()
                .map(|img| {
                    let grad = SuppressedGradient::compute(img, k)?;
                    let mut out = BTreeMap::new();
                    for lo in 0..values.len() {
                        let highs = &values[lo + 1..];
                        let c = grad.hysteresis_counts(values[lo], highs);
                        for (j, n) in c.into_iter().enumerate() {
                            out.insert((lo, lo + 1 + j), n);
                        }
                    }
                    Ok(out)
                })
                .collect::<Result<_>>()?;
            let mut by_pair: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
            for patch in per_patch {
                for (pair, n) in patch {
                    by_pair.entry(pair).or_default().push(n);
                }
            }
            counts.insert(k, by_pair);
        }
        Ok(Self { counts })
    }

    /// Dual-filter difference counts of every patch. The narrow map is a
    /// subset of the wide map, so the difference is a subtraction of counts.
    fn diff_counts(&self, spec: &GridSpec, p: &DcedParams) -> Vec<usize> {
        let idx = |v: f64| {
            spec.threshold_values
                .iter()
                .position(|&x| x == v)
                .expect("candidate drawn from the grid")
        };
        let by_pair = &self.counts[&p.kernel_size];
        let wide = &by_pair[&(idx(p.wide.th_min), idx(p.wide.th_max))];
        let narrow = &by_pair[&(idx(p.narrow.th_min), idx(p.narrow.th_max))];
        wide.iter().zip(narrow).map(|(w, n)| w - n).collect()
    }
}

fn split_by_label(counts: &[usize], labels: &[Label]) -> (Vec<usize>, Vec<usize>) {
    let mut normal = Vec::new();
    let mut anomalous = Vec::new();
    for (&c, &l) in counts.iter().zip(labels) {
        match l {
            Label::Normal => normal.push(c),
            Label::Anomalous => anomalous.push(c),
        }
    }
    (normal, anomalous)
}

fn check_both_classes(labels: &[Label], what: &'static str) -> Result<()> {
    if !labels.contains(&Label::Normal) || !labels.contains(&Label::Anomalous) {
        return Err(Error::EmptyInput(what));
    }
    Ok(())
}

/// Scores every grid candidate on the training patches and keeps the one
/// with the highest training balanced accuracy; ties go to the
/// lexicographically smallest parameter tuple.
pub fn tune(train: &[(ImageGray, Label)], spec: &GridSpec) -> Result<TuneReport> {
    let labels: Vec<Label> = train.iter().map(|(_, l)| *l).collect();
    check_both_classes(&labels, "training set needs normal and anomalous patches")?;
    let images: Vec<&ImageGray> = train.iter().map(|(img, _)| img).collect();
    let cache = CountCache::build(&images, spec, &spec.sorted_kernels())?;

    let grid: Vec<DcedParams> = enumerate_grid(spec)?.collect();
    let candidates: Vec<CandidateScore> = grid
        .par_iter()
        .map(|p| {
            let counts = cache.diff_counts(spec, p);
            let (normal, anomalous) = split_by_label(&counts, &labels);
            let separator = best_separator(&normal, &anomalous)?;
            Ok(CandidateScore {
                params: *p,
                separator,
            })
        })
        .collect::<Result<_>>()?;

    let best = candidates
        .iter()
        .fold(None::<&CandidateScore>, |acc, c| match acc {
            Some(b) if c.separator.balanced_accuracy <= b.separator.balanced_accuracy => Some(b),
            _ => Some(c),
        })
        .ok_or(Error::EmptyInput("parameter grid is empty"))?;
    Ok(TuneReport {
        best: TunedDced {
            params: best.params,
            count_threshold: best.separator.threshold,
            train_balanced_accuracy: best.separator.balanced_accuracy,
            val_balanced_accuracy: None,
        },
        candidates,
    })
}

/// Re-ranks the `top_m` best training candidates by balanced accuracy on a
/// validation split, each with its own training threshold. Ties keep the
/// better training rank.
pub fn select_by_validation(
    report: &TuneReport,
    val: &[(ImageGray, Label)],
    spec: &GridSpec,
    top_m: usize,
) -> Result<TunedDced> {
    let labels: Vec<Label> = val.iter().map(|(_, l)| *l).collect();
    check_both_classes(&labels, "validation set needs normal and anomalous patches")?;
    if top_m == 0 {
        return Err(Error::InvalidArgument("top_m must be at least 1".into()));
    }
    // Stable sort keeps enumeration (lexicographic) order among equals.
    let mut ranked: Vec<&CandidateScore> = report.candidates.iter().collect();
    ranked.sort_by(|a, b| {
        b.separator
            .balanced_accuracy
            .partial_cmp(&a.separator.balanced_accuracy)
            .expect("accuracies are finite")
    });
    ranked.truncate(top_m);

    let mut kernels: Vec<usize> = ranked.iter().map(|c| c.params.kernel_size).collect();
    kernels.sort_unstable();
    kernels.dedup();
    let images: Vec<&ImageGray> = val.iter().map(|(img, _)| img).collect();
    let cache = CountCache::build(&images, spec, &kernels)?;

    let mut best: Option<(f64, &CandidateScore)> = None;
    for c in ranked {
        let counts = cache.diff_counts(spec, &c.params);
        let predictions: Vec<Label> = counts
            .iter()
            .map(|&n| classify_count(n, c.separator.threshold))
            .collect();
        let ba = evaluate(&predictions, &labels)?.balanced_accuracy;
        if best.map_or(true, |(b, _)| ba > b) {
            best = Some((ba, c));
        }
    }
    let (val_ba, c) = best.expect("top_m >= 1 and the grid is non-empty");
    Ok(TunedDced {
        params: c.params,
        count_threshold: c.separator.threshold,
        train_balanced_accuracy: c.separator.balanced_accuracy,
        val_balanced_accuracy: Some(val_ba),
    })
}

fn classify_count(count: usize, threshold: f64) -> Label {
    if count as f64 > threshold {
        Label::Anomalous
    } else {
        Label::Normal
    }
}

/// Anomalous iff the patch's dual-filter difference count exceeds the
/// model's threshold.
pub fn classify_baseline(patch: &ImageGray, model: &TunedDced) -> Result<Label> {
    let r = dced(patch, &model.params)?;
    Ok(classify_count(r.diff_count, model.count_threshold))
}

/// Confusion-matrix metrics with anomalous as the positive class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub balanced_accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
    /// Names of metrics whose denominator was zero; they are reported as 0.
    pub undefined: Vec<String>,
}

pub fn evaluate(predictions: &[Label], truths: &[Label]) -> Result<Metrics> {
    if predictions.len() != truths.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::EmptyInput("no predictions to evaluate"));
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (p, t) in predictions.iter().zip(truths) {
        match (p, t) {
            (Label::Anomalous, Label::Anomalous) => tp += 1,
            (Label::Normal, Label::Normal) => tn += 1,
            (Label::Anomalous, Label::Normal) => fp += 1,
            (Label::Normal, Label::Anomalous) => fn_ += 1,
        }
    }
    let mut undefined = Vec::new();
    let mut ratio = |num: usize, den: usize, name: &str| {
        if den == 0 {
            undefined.push(name.to_string());
            None
        } else {
            Some(num as f64 / den as f64)
        }
    };
    let precision = ratio(tp, tp + fp, "precision");
    let recall = ratio(tp, tp + fn_, "recall");
    let specificity = ratio(tn, tn + fp, "specificity");
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    let balanced_accuracy = match (recall, specificity) {
        (Some(r), Some(s)) => Some((r + s) / 2.0),
        _ => None,
    };
    if f1.is_none() {
        undefined.push("f1".into());
    }
    if balanced_accuracy.is_none() {
        undefined.push("balanced_accuracy".into());
    }
    Ok(Metrics {
        balanced_accuracy: balanced_accuracy.unwrap_or(0.0),
        f1: f1.unwrap_or(0.0),
        precision: precision.unwrap_or(0.0),
        recall: recall.unwrap_or(0.0),
        tp,
        tn,
        fp,
        fn_,
        undefined,
    })
}

impl SuppressedGradient {
    /// Edge counts of [`SuppressedGradient::hysteresis`] for one `th_min` and
    /// several `th_max` values at once.
    ///
    /// The pixels above `th_min` split into 8-connected components; with a
    /// given `th_max` a component is kept whole iff its peak exceeds it.
    pub fn hysteresis_counts(&self, th_min: f64, th_maxes: &[f64]) -> Vec<usize> {
        let (w, h) = self.dims();
        let mag = self.magnitude();
        let mut seen = vec![false; w * h];
        let mut components: Vec<(f64, usize)> = Vec::new();
        let mut stack = Vec::new();
        for start in 0..w * h {
            if seen[start] || mag[start] <= th_min {
                continue;
            }
            seen[start] = true;
            stack.push(start);
            let (mut peak, mut size) = (0.0f64, 0usize);
            while let Some(j) = stack.pop() {
                peak = peak.max(mag[j]);
                size += 1;
                let (x, y) = ((j % w) as isize, (j / w) as isize);
                for ny in y - 1..=y + 1 {
                    for nx in x - 1..=x + 1 {
                        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            continue;
                        }
                        let k = ny as usize * w + nx as usize;
                        if !seen[k] && mag[k] > th_min {
                            seen[k] = true;
                            stack.push(k);
                        }
                    }
                }
            }
            components.push((peak, size));
        }
        th_maxes
            .iter()
            .map(|&hi| {
                components
                    .iter()
                    .filter(|(peak, _)| *peak > hi)
                    .map(|(_, size)| size)
                    .sum()
            })
            .collect()
    }

    /// Convenience wrapper used where one pair is needed.
    pub fn hysteresis_count(&self, t: CannyThresholds) -> usize {
        self.hysteresis_counts(t.th_min, &[t.th_max])[0]
    }
}
