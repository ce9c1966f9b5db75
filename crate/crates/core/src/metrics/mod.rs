//! Memorization instruments: exact-match fraction, threshold crossings,
//! perplexity, overfit detection, POS ratios and memory-unit lengths.

mod context;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use context::{extract_contexts, score, Context, ContextSet, LogitSource, Scores};

use crate::corpus::PosTag;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Index of the largest value; ties go to the lowest index. NaN never wins.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    let mut best_v = f32::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Negative log-likelihood of `target` under softmax(`row`), in f64.
pub fn token_nll(row: &[f32], target: u32) -> f64 {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let lse = max + row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
    lse - row[target as usize] as f64
}

/// Exact-match fraction over the rows of one training forward pass.
/// `include[r]` selects the rows that are prediction targets. `None` when
/// no row is included.
pub fn update_memorization(logits: &Tensor<f32>, targets: &[u32], include: &[bool]) -> Option<f64> {
    let v = logits.cols();
    let (mut hits, mut total) = (0u64, 0u64);
    for (r, (&y, &inc)) in targets.iter().zip(include).enumerate() {
        if inc {
            total += 1;
            hits += (argmax(&logits.data()[r * v..(r + 1) * v]) == y as usize) as u64;
        }
    }
    (total > 0).then(|| hits as f64 / total as f64)
}

/// First (1-based) index where a series reaches a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCrossing {
    pub tau: f64,
    /// 1-based index of the first value `>= tau`.
    pub index: Option<usize>,
    /// Number of points searched; an unreached crossing is reported as
    /// "more than `budget`".
    pub budget: usize,
}

impl ThresholdCrossing {
    pub fn reached(&self) -> bool {
        self.index.is_some()
    }

    /// Crossing index, or `budget + 1` as a censored stand-in.
    pub fn index_or_censored(&self) -> usize {
        self.index.unwrap_or(self.budget + 1)
    }
}

pub fn threshold_crossing(series: &[f64], tau: f64) -> Result<ThresholdCrossing> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Usage(format!("threshold {tau} outside (0, 1)")));
    }
    if series.is_empty() {
        return Err(Error::Usage("threshold crossing needs a non-empty history".into()));
    }
    Ok(ThresholdCrossing {
        tau,
        index: series.iter().position(|&m| m >= tau).map(|i| i + 1),
        budget: series.len(),
    })
}

/// Trailing mean over up to `window` points, partial at the start.
pub fn rolling_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::Usage("rolling window must be at least 1".into()));
    }
    Ok((0..series.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            let w = &series[lo..=i];
            w.iter().sum::<f64>() / w.len() as f64
        })
        .collect())
}

pub fn perplexity(nlls: &[f64]) -> Result<f64> {
    if nlls.is_empty() {
        return Err(Error::UndefinedLoss);
    }
    Ok((nlls.iter().sum::<f64>() / nlls.len() as f64).exp())
}

/// First 1-based epoch whose perplexity strictly exceeds the previous one.
pub fn detect_overfit_epoch(ppl: &[f64]) -> Option<usize> {
    ppl.windows(2).position(|w| w[1] > w[0]).map(|i| i + 2)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PosCounts {
    /// Ground-truth occurrences of the tag.
    pub count: u64,
    /// Predictions carrying the same tag (an exact match always counts).
    pub tag_hits: u64,
    pub exact_hits: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PosRecord {
    pub counts: BTreeMap<PosTag, PosCounts>,
}

impl PosRecord {
    /// Accumulates `(ground-truth tag, predicted tag, exact match)` triples.
    pub fn from_triples(items: impl IntoIterator<Item = (PosTag, PosTag, bool)>) -> Self {
        let mut rec = PosRecord::default();
        for (gt, pred, exact) in items {
            let c = rec.counts.entry(gt).or_default();
            c.count += 1;
            c.tag_hits += (exact || pred == gt) as u64;
            c.exact_hits += exact as u64;
        }
        rec
    }

    pub fn r(&self, tag: PosTag) -> Option<f64> {
        self.counts.get(&tag).map(|c| c.tag_hits as f64 / c.count as f64)
    }

    pub fn r_mem(&self, tag: PosTag) -> Option<f64> {
        self.counts.get(&tag).map(|c| c.exact_hits as f64 / c.count as f64)
    }

    /// `{tag: [R, R_mem]}` for every tag that occurs.
    pub fn ratios(&self) -> BTreeMap<String, [f64; 2]> {
        self.counts
            .iter()
            .map(|(t, c)| {
                (
                    t.as_str().to_string(),
                    [c.tag_hits as f64 / c.count as f64, c.exact_hits as f64 / c.count as f64],
                )
            })
            .collect()
    }

    /// Mean of `R_mem` over the tags in `group` that occur.
    pub fn mean_r_mem(&self, group: &[PosTag]) -> Option<f64> {
        let vals: Vec<f64> = group.iter().filter_map(|&t| self.r_mem(t)).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Runs of consecutive exactly-memorized positions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryUnitStats {
    pub runs: u64,
    /// Mean over runs; 0 when there are none.
    pub mean_len: f64,
    /// Mean over memorized tokens of the length of the run they belong to.
    pub token_weighted_mean: f64,
    /// Run length to number of runs.
    pub histogram: BTreeMap<usize, u64>,
    pub memorized: u64,
}

pub fn memory_unit_lengths<'a>(bitmaps: impl IntoIterator<Item = &'a [bool]>) -> MemoryUnitStats {
    let mut hist: BTreeMap<usize, u64> = BTreeMap::new();
    for bits in bitmaps {
        let mut run = 0usize;
        for &b in bits.iter().chain(std::iter::once(&false)) {
            if b {
                run += 1;
            } else if run > 0 {
                *hist.entry(run).or_default() += 1;
                run = 0;
            }
        }
    }
    let runs: u64 = hist.values().sum();
    let memorized: u64 = hist.iter().map(|(&l, &c)| l as u64 * c).sum();
    let squares: u64 = hist.iter().map(|(&l, &c)| (l * l) as u64 * c).sum();
    MemoryUnitStats {
        runs,
        mean_len: if runs == 0 { 0.0 } else { memorized as f64 / runs as f64 },
        token_weighted_mean: if memorized == 0 {
            0.0
        } else {
            squares as f64 / memorized as f64
        },
        histogram: hist,
        memorized,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub m: f64,
    pub ppl_val: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub update: u64,
    pub m_update: f64,
    pub batch: usize,
}

/// Per-epoch and per-update series of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemorizationHistory {
    pub epochs: Vec<EpochRecord>,
    pub updates: Vec<UpdateRecord>,
    pub n_params: u64,
    pub config_hash: String,
}

impl MemorizationHistory {
    pub fn push_epoch(&mut self, rec: EpochRecord) -> Result<()> {
        if !(0.0..=1.0).contains(&rec.m) || self.epochs.last().is_some_and(|l| l.epoch >= rec.epoch) {
            return Err(Error::Usage(format!("invalid epoch record {rec:?}")));
        }
        self.epochs.push(rec);
        Ok(())
    }

    pub fn push_update(&mut self, rec: UpdateRecord) -> Result<()> {
        if !(0.0..=1.0).contains(&rec.m_update) || self.updates.last().is_some_and(|l| l.update >= rec.update) {
            return Err(Error::Usage(format!("invalid update record {rec:?}")));
        }
        self.updates.push(rec);
        Ok(())
    }

    pub fn m_series(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.m).collect()
    }

    pub fn ppl_series(&self) -> Vec<f64> {
        self.epochs.iter().filter_map(|e| e.ppl_val).collect()
    }

    pub fn epochs_to(&self, tau: f64) -> Result<ThresholdCrossing> {
        threshold_crossing(&self.m_series(), tau)
    }

    pub fn updates_to(&self, tau: f64) -> Result<ThresholdCrossing> {
        threshold_crossing(&self.updates.iter().map(|u| u.m_update).collect::<Vec<_>>(), tau)
    }

    pub fn overfit_epoch(&self) -> Option<usize> {
        detect_overfit_epoch(&self.ppl_series())
    }
}

/// Special-batch memorization observed from the first injection onward, in
/// time order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingCurve {
    /// Epoch of each observation.
    pub epochs: Vec<usize>,
    /// `true` where the observation was taken right after an injection.
    pub injected: Vec<bool>,
    pub values: Vec<f64>,
}

impl ForgettingCurve {
    pub fn new(points: Vec<(usize, bool, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Input("forgetting curve has no observations".into()));
        }
        let mut c = ForgettingCurve {
            epochs: Vec::new(),
            injected: Vec::new(),
            values: Vec::new(),
        };
        for (e, inj, v) in points {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Input(format!("memorization {v} outside [0, 1]")));
            }
            c.epochs.push(e);
            c.injected.push(inj);
            c.values.push(v);
        }
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Lowest value observed.
    pub fn baseline(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Successive differences, one shorter than the curve.
    pub fn diff(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn peak_index(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[f32::NAN, 0.0]), 1);
    }

    #[test]
    fn crossing_examples() {
        let h = [0.2, 0.5, 0.93, 0.91];
        let c = threshold_crossing(&h, 0.9).unwrap();
        assert_eq!(c.index, Some(3));
        let c = threshold_crossing(&h, 0.99).unwrap();
        assert!(!c.reached());
        assert_eq!(c.index_or_censored(), 5);
        assert!(threshold_crossing(&h, 1.0).is_err());
        assert!(threshold_crossing(&[], 0.5).is_err());
    }

    #[test]
    fn rolling_examples() {
        assert_eq!(
            rolling_average(&[0.0, 1.0, 0.0, 1.0, 0.0, 1.0], 2).unwrap(),
            vec![0.0, 0.5, 0.5, 0.5, 0.5, 0.5]
        );
        assert_eq!(rolling_average(&[0.3; 7], 5).unwrap(), vec![0.3; 7]);
        assert!(rolling_average(&[1.0], 0).is_err());
    }

    #[test]
    fn overfit_examples() {
        assert_eq!(detect_overfit_epoch(&[10.0, 8.0, 7.0, 7.5, 6.0]), Some(4));
        assert_eq!(detect_overfit_epoch(&[10.0, 8.0, 7.0]), None);
        assert_eq!(detect_overfit_epoch(&[5.0, 5.0]), None);
    }

    #[test]
    fn perplexity_examples() {
        let uniform = vec![(8192f64).ln(); 10];
        assert!((perplexity(&uniform).unwrap() - 8192.0).abs() < 1e-6);
        assert_eq!(perplexity(&[0.0, 0.0]).unwrap(), 1.0);
        // probabilities 0.5 and 0.25
        let p = perplexity(&[-(0.5f64).ln(), -(0.25f64).ln()]).unwrap();
        assert!((p - (0.125f64).powf(-0.5)).abs() < 1e-12);
        assert!(matches!(perplexity(&[]), Err(Error::UndefinedLoss)));
    }

    #[test]
    fn memory_unit_examples() {
        let bits: Vec<bool> = "1101110".chars().map(|c| c == '1').collect();
        let s = memory_unit_lengths([bits.as_slice()]);
        assert_eq!(s.runs, 2);
        assert_eq!(s.mean_len, 2.5);
        assert_eq!(s.histogram, BTreeMap::from([(2, 1), (3, 1)]));
        assert!((s.token_weighted_mean - 13.0 / 5.0).abs() < 1e-12);
        let zero = memory_unit_lengths([[false; 9].as_slice()]);
        assert_eq!((zero.runs, zero.mean_len), (0, 0.0));
        let ones = vec![true; 431];
        assert_eq!(memory_unit_lengths([ones.as_slice()]).mean_len, 431.0);
        // runs never cross sequences
        let split = memory_unit_lengths([[true, true].as_slice(), [true].as_slice()]);
        assert_eq!(split.histogram, BTreeMap::from([(1, 1), (2, 1)]));
    }

    #[test]
    fn pos_separation() {
        let perfect = PosRecord::from_triples(PosTag::ALL.map(|t| (t, t, true)));
        let synonyms = PosRecord::from_triples(PosTag::ALL.map(|t| (t, t, false)));
        for t in PosTag::ALL {
            assert_eq!((perfect.r(t), perfect.r_mem(t)), (Some(1.0), Some(1.0)));
            assert_eq!((synonyms.r(t), synonyms.r_mem(t)), (Some(1.0), Some(0.0)));
        }
    }

    #[test]
    fn update_memorization_fraction() {
        let logits = Tensor::<f32>::from_f64(&[4, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1., 1., 0., 0.]);
        assert_eq!(update_memorization(&logits, &[0, 1, 2, 0], &[true; 4]), Some(1.0));
        assert_eq!(update_memorization(&logits, &[0, 0, 2, 1], &[true; 4]), Some(0.5));
        assert_eq!(
            update_memorization(&logits, &[0, 0, 2, 1], &[true, false, false, false]),
            Some(1.0)
        );
        assert_eq!(update_memorization(&logits, &[0; 4], &[false; 4]), None);
    }

    #[test]
    fn history_invariants() {
        let mut h = MemorizationHistory::default();
        h.push_epoch(EpochRecord {
            epoch: 1,
            m: 0.2,
            ppl_val: Some(10.0),
        })
        .unwrap();
        assert!(h
            .push_epoch(EpochRecord {
                epoch: 1,
                m: 0.3,
                ppl_val: None
            })
            .is_err());
        assert!(h
            .push_epoch(EpochRecord {
                epoch: 2,
                m: 1.5,
                ppl_val: None
            })
            .is_err());
        h.push_epoch(EpochRecord {
            epoch: 2,
            m: 0.95,
            ppl_val: Some(11.0),
        })
        .unwrap();
        assert_eq!(h.epochs_to(0.9).unwrap().index, Some(2));
        assert_eq!(h.overfit_epoch(), Some(2));
    }

    #[test]
    fn forgetting_curve_examples() {
        let c = ForgettingCurve::new(vec![
            (2, true, 0.9),
            (3, false, 0.5),
            (4, false, 0.42),
            (5, false, 0.40),
            (6, false, 0.41),
        ])
        .unwrap();
        assert_eq!(c.baseline(), 0.40);
        assert_eq!(c.peak_index(), 0);
        let d = ForgettingCurve::new(vec![(1, true, 0.5), (2, false, 0.4), (3, false, 0.35)])
            .unwrap()
            .diff();
        assert_eq!(d.len(), 2);
        assert!((d[0] + 0.10).abs() < 1e-12 && (d[1] + 0.05).abs() < 1e-12);
        assert!(ForgettingCurve::new(vec![]).is_err());
    }
}
