//! Fit metrics, game rewards, and win/lose binarization.
//!
//! The pipeline pools every recorded feature of every experiment into one
//! flat vector pair (model vs. data), standardizes it with the scaler fit on
//! the calibration data, and turns the modified Nash-Sutcliffe index of that
//! pooled vector into a SCORE in [-1, 1]. Rewards derive from SCOREs; the
//! reward history then classifies each episode as a win or a loss relative
//! to the best play seen so far.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Float;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("series lengths differ: {model} vs {data}")]
    LengthMismatch { model: usize, data: usize },
    #[error("need at least two points, got {0}")]
    TooShort(usize),
    #[error("data series is constant; fit index undefined")]
    DegenerateData,
    #[error("feature count {found} does not match scaler width {expected}")]
    FeatureMismatch { expected: usize, found: usize },
    #[error("invalid score config: {0}")]
    BadConfig(String),
}

/// Clipping range and reward shaping knobs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScoreConfig<T> {
    /// Nash-Sutcliffe value mapped to SCORE = +1.
    pub e_max_ns: T,
    /// Nash-Sutcliffe value mapped to SCORE = -1; also the decay floor for
    /// the protagonist reward.
    pub e_min_ns: T,
    /// Strength of the protagonist reward decay once the worst adversary
    /// fit in history falls below `e_min_ns`. Zero disables the decay.
    pub alpha_score: T,
    /// Fraction of the observed reward range that still counts as a win.
    pub alpha_range: T,
}

impl<T: Float> ScoreConfig<T> {
    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.e_max_ns <= self.e_min_ns {
            return Err(ScoreError::BadConfig(format!(
                "e_max_ns ({}) must exceed e_min_ns ({})",
                self.e_max_ns, self.e_min_ns
            )));
        }
        if self.alpha_score < T::zero() || self.alpha_range < T::zero() {
            return Err(ScoreError::BadConfig(
                "alpha_score and alpha_range must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

impl<T: Float> Default for ScoreConfig<T> {
    fn default() -> Self {
        Self {
            e_max_ns: T::one(),
            e_min_ns: -T::one(),
            alpha_score: T::zero(),
            alpha_range: T::lit(0.2),
        }
    }
}

/// Per-feature standardization fit on pooled calibration data and reused
/// unchanged when scoring adversary test data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureScaler<T> {
    mean: Vec<T>,
    sd: Vec<T>,
}

impl<T: Float> FeatureScaler<T> {
    /// No-op scaler (zero mean, unit spread) of the given width.
    pub fn identity(n_features: usize) -> Self {
        Self {
            mean: vec![T::zero(); n_features],
            sd: vec![T::one(); n_features],
        }
    }

    /// Fit per-feature mean and population standard deviation over a flat
    /// row-major sample (`data.len()` must be a multiple of `n_features`).
    /// Constant features fall back to unit spread so scaling stays finite.
    pub fn fit(n_features: usize, data: &[T]) -> Result<Self, ScoreError> {
        if n_features == 0 || data.is_empty() || data.len() % n_features != 0 {
            return Err(ScoreError::FeatureMismatch {
                expected: n_features,
                found: data.len(),
            });
        }
        let rows = data.len() / n_features;
        let n = T::from_usize(rows).expect("row count fits in T");
        let mut mean = vec![T::zero(); n_features];
        for row in data.chunks_exact(n_features) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![T::zero(); n_features];
        for row in data.chunks_exact(n_features) {
            for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        let sd = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > T::zero() {
                    sd
                } else {
                    T::one()
                }
            })
            .collect();
        Ok(Self { mean, sd })
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    /// Standardize a flat row-major vector in place.
    pub fn transform(&self, data: &mut [T]) -> Result<(), ScoreError> {
        let w = self.n_features();
        if data.len() % w != 0 {
            return Err(ScoreError::FeatureMismatch {
                expected: w,
                found: data.len(),
            });
        }
        for row in data.chunks_exact_mut(w) {
            for ((v, &m), &s) in row.iter_mut().zip(&self.mean).zip(&self.sd) {
                *v = (*v - m) / s;
            }
        }
        Ok(())
    }

    pub fn transformed(&self, data: &[T]) -> Result<Vec<T>, ScoreError> {
        let mut out = data.to_vec();
        self.transform(&mut out)?;
        Ok(out)
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn sd(&self) -> &[T] {
        &self.sd
    }
}

/// Mean squared error between standardized model and data vectors.
pub fn scaled_mse<T: Float>(
    scaler: &FeatureScaler<T>,
    model: &[T],
    data: &[T],
) -> Result<T, ScoreError> {
    if model.len() != data.len() {
        return Err(ScoreError::LengthMismatch {
            model: model.len(),
            data: data.len(),
        });
    }
    if model.is_empty() {
        return Err(ScoreError::TooShort(0));
    }
    let m = scaler.transformed(model)?;
    let d = scaler.transformed(data)?;
    let n = T::from_usize(m.len()).expect("length fits in T");
    Ok(m.iter()
        .zip(&d)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<T>()
        / n)
}

/// Modified Nash-Sutcliffe index with exponent `j`:
/// `1 - sum |d - m|^j / sum |d - mean(d)|^j`. `j = 1` is the pipeline
/// default (less weight on outliers than the classic `j = 2`).
pub fn ns_index<T: Float>(model: &[T], data: &[T], j: u32) -> Result<T, ScoreError> {
    if model.len() != data.len() {
        return Err(ScoreError::LengthMismatch {
            model: model.len(),
            data: data.len(),
        });
    }
    if data.len() < 2 {
        return Err(ScoreError::TooShort(data.len()));
    }
    let n = T::from_usize(data.len()).expect("length fits in T");
    let mean = data.iter().copied().sum::<T>() / n;
    let pow = |x: T| (0..j).fold(T::one(), |acc, _| acc * x);
    let den = data.iter().map(|&d| pow((d - mean).abs())).sum::<T>();
    if den <= T::zero() {
        return Err(ScoreError::DegenerateData);
    }
    let num = data
        .iter()
        .zip(model)
        .map(|(&d, &m)| pow((d - m).abs()))
        .sum::<T>();
    Ok(T::one() - num / den)
}

/// Map a Nash-Sutcliffe index to a SCORE in [-1, 1], clipping outside the
/// configured band.
pub fn score<T: Float>(e_ns: T, cfg: &ScoreConfig<T>) -> T {
    let e = e_ns.max(cfg.e_min_ns).min(cfg.e_max_ns);
    let half = T::lit(0.5);
    T::lit(2.0) * (e - half * (cfg.e_min_ns + cfg.e_max_ns)) / (cfg.e_max_ns - cfg.e_min_ns)
}

/// Protagonist reward: its calibration SCORE, decayed once the worst
/// adversary fit observed so far drops below the `e_min_ns` floor.
///
/// `min_e_ns` is the running minimum over all adversary-prediction NS
/// indices; `None` (no history yet) means no decay.
pub fn protagonist_reward<T: Float>(score_p: T, min_e_ns: Option<T>, cfg: &ScoreConfig<T>) -> T {
    let gap = match min_e_ns {
        Some(e) => (cfg.e_min_ns - e).max(T::zero()),
        None => T::zero(),
    };
    -T::one() + (score_p + T::one()) * (-cfg.alpha_score * gap).exp()
}

/// Adversary reward: the negated prediction SCORE (good fits hurt it).
pub fn adversary_reward<T: Float>(score_a: T) -> T {
    -score_a
}

/// Win (+1) / lose (-1) label.
pub type WinLabel = i8;

/// Reward bookkeeping across training iterations.
///
/// Protagonist rewards pool globally; adversary SCOREs pool per protagonist
/// strategy key, because how well a calibrated model extrapolates depends on
/// what it was calibrated against. The running minimum Nash-Sutcliffe index
/// over adversary predictions feeds the protagonist reward decay.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RewardHistory<T> {
    protagonist: Vec<Vec<T>>,
    adversary: BTreeMap<String, Vec<Vec<T>>>,
    min_e_ns: Option<T>,
}

impl<T: Float> RewardHistory<T> {
    pub fn new() -> Self {
        Self {
            protagonist: Vec::new(),
            adversary: BTreeMap::new(),
            min_e_ns: None,
        }
    }

    /// Append one iteration: protagonist rewards, adversary `(strategy key,
    /// SCORE)` pairs, and the adversary-prediction NS indices (non-finite
    /// entries, e.g. from failed episodes, are ignored by the running min).
    pub fn push_iteration(
        &mut self,
        protagonist_rewards: Vec<T>,
        adversary_scores: Vec<(String, T)>,
        adversary_e_ns: &[T],
    ) {
        self.protagonist.push(protagonist_rewards);
        let mut grouped: BTreeMap<String, Vec<T>> = BTreeMap::new();
        for (key, s) in adversary_scores {
            grouped.entry(key).or_default().push(s);
        }
        for (key, scores) in grouped {
            self.adversary.entry(key).or_default().push(scores);
        }
        for &e in adversary_e_ns {
            if e.is_finite() {
                self.min_e_ns = Some(match self.min_e_ns {
                    Some(m) => m.min(e),
                    None => e,
                });
            }
        }
    }

    pub fn iterations(&self) -> usize {
        self.protagonist.len()
    }

    /// Running minimum adversary-prediction NS index.
    pub fn min_e_ns(&self) -> Option<T> {
        self.min_e_ns
    }

    /// `(best, floor)` protagonist thresholds: the all-time best per-iteration
    /// maximum and the best per-iteration minimum.
    pub fn protagonist_thresholds(&self) -> Option<(T, T)> {
        let mut best: Option<T> = None;
        let mut floor: Option<T> = None;
        for iter in &self.protagonist {
            let (mut mx, mut mn) = (None, None);
            for &r in iter {
                mx = Some(mx.map_or(r, |m: T| m.max(r)));
                mn = Some(mn.map_or(r, |m: T| m.min(r)));
            }
            if let (Some(mx), Some(mn)) = (mx, mn) {
                best = Some(best.map_or(mx, |b: T| b.max(mx)));
                floor = Some(floor.map_or(mn, |f: T| f.max(mn)));
            }
        }
        best.zip(floor)
    }

    /// `(cap, floor)` adversary SCORE thresholds for one strategy key: the
    /// lowest per-iteration maximum and the lowest per-iteration minimum.
    /// Lower SCOREs are better plays for the adversary.
    pub fn adversary_thresholds(&self, key: &str) -> Option<(T, T)> {
        let iters = self.adversary.get(key)?;
        let mut cap: Option<T> = None;
        let mut floor: Option<T> = None;
        for iter in iters {
            let (mut mx, mut mn) = (None, None);
            for &s in iter {
                mx = Some(mx.map_or(s, |m: T| m.max(s)));
                mn = Some(mn.map_or(s, |m: T| m.min(s)));
            }
            if let (Some(mx), Some(mn)) = (mx, mn) {
                cap = Some(cap.map_or(mx, |c: T| c.min(mx)));
                floor = Some(floor.map_or(mn, |f: T| f.min(mn)));
            }
        }
        cap.zip(floor)
    }

    /// Binarize a protagonist reward against the history: a win is a reward
    /// within `alpha_range` of the observed range below the all-time best.
    /// An empty history is a win by definition.
    pub fn binarize_protagonist(&self, reward: T, cfg: &ScoreConfig<T>) -> WinLabel {
        match self.protagonist_thresholds() {
            None => 1,
            Some((best, floor)) => {
                let threshold = best - (best - floor) * cfg.alpha_range;
                if reward >= threshold {
                    1
                } else {
                    -1
                }
            }
        }
    }

    /// Binarize an adversary SCORE for a given protagonist strategy: a win is
    /// a SCORE within `alpha_range` of the range above the per-key floor.
    /// An unseen key is a win by definition.
    pub fn binarize_adversary(&self, key: &str, score_a: T, cfg: &ScoreConfig<T>) -> WinLabel {
        match self.adversary_thresholds(key) {
            None => 1,
            Some((cap, floor)) => {
                let threshold = floor + (cap - floor) * cfg.alpha_range;
                if score_a <= threshold {
                    1
                } else {
                    -1
                }
            }
        }
    }
}

/// Pooled fit of standardized model predictions against data: returns
/// `(E_NS, SCORE)`. Both flat vectors must hold whole rows of the scaler's
/// feature width, aligned pointwise.
pub fn pooled_score<T: Float>(
    scaler: &FeatureScaler<T>,
    model: &[T],
    data: &[T],
    j: u32,
    cfg: &ScoreConfig<T>,
) -> Result<(T, T), ScoreError> {
    if model.len() != data.len() {
        return Err(ScoreError::LengthMismatch {
            model: model.len(),
            data: data.len(),
        });
    }
    let m = scaler.transformed(model)?;
    let d = scaler.transformed(data)?;
    let e = ns_index(&m, &d, j)?;
    Ok((e, score(e, cfg)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> ScoreConfig<f64> {
        ScoreConfig {
            e_max_ns: 1.0,
            e_min_ns: -1.0,
            alpha_score: 1.0,
            alpha_range: 0.2,
        }
    }

    #[test]
    fn scaled_mse_identity_example() {
        let s = FeatureScaler::identity(1);
        let mse = scaled_mse(&s, &[0.0, 1.0], &[0.0, 2.0]).unwrap();
        assert_eq!(mse, 0.5);
    }

    #[test]
    fn scaler_uses_population_deviation() {
        // {0, 2}: mean 1, population sd 1 (not the sample sd sqrt(2)).
        let s = FeatureScaler::fit(1, &[0.0, 2.0]).unwrap();
        assert_eq!(s.mean(), &[1.0]);
        assert_eq!(s.sd(), &[1.0]);
        assert_eq!(s.transformed(&[3.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn constant_feature_scales_by_unit_spread() {
        let s = FeatureScaler::fit(2, &[5.0, 1.0, 5.0, 3.0]).unwrap();
        assert_eq!(s.sd()[0], 1.0);
        assert_eq!(s.transformed(&[6.0, 2.0]).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn ns_index_hand_example() {
        let e: f64 = ns_index(&[1.0, 2.0, 4.0], &[1.0, 2.0, 3.0], 1).unwrap();
        assert!((e - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ns_index_is_one_for_exact_fit() {
        let d = [1.0, 2.0, 3.0];
        assert_eq!(ns_index(&d, &d, 1).unwrap(), 1.0);
        assert_eq!(ns_index(&d, &d, 2).unwrap(), 1.0);
    }

    #[test]
    fn ns_index_rejects_constant_data() {
        assert!(matches!(
            ns_index(&[1.0, 2.0], &[3.0, 3.0], 1),
            Err(ScoreError::DegenerateData)
        ));
    }

    #[test]
    fn ns_index_rejects_short_or_mismatched() {
        assert!(matches!(
            ns_index(&[1.0], &[1.0], 1),
            Err(ScoreError::TooShort(1))
        ));
        assert!(matches!(
            ns_index(&[1.0, 2.0], &[1.0], 1),
            Err(ScoreError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn score_maps_and_clips() {
        let c = cfg();
        assert!((score(0.9, &c) - 0.9).abs() < 1e-15);
        assert_eq!(score(1.5, &c), 1.0);
        assert_eq!(score(-1.0, &c), -1.0);
        // Asymmetric band: E in [0.8, 1.0] maps linearly onto [-1, 1].
        let tight = ScoreConfig {
            e_min_ns: 0.8,
            ..c
        };
        assert!((score(0.9, &tight) - 0.0).abs() < 1e-15);
    }

    #[test]
    fn protagonist_reward_decay_example() {
        let r = protagonist_reward(0.5, Some(-1.5), &cfg());
        assert!((r - (-0.09020401043104986)).abs() < 1e-12);
    }

    #[test]
    fn reward_equals_score_without_decay() {
        let c = cfg();
        // History min above the floor: exp(0) = 1.
        assert_eq!(protagonist_reward(0.5, Some(-0.933), &c), 0.5);
        assert_eq!(protagonist_reward(0.5, None, &c), 0.5);
        // alpha_score = 0 disables the decay entirely.
        let off = ScoreConfig {
            alpha_score: 0.0,
            ..c
        };
        assert_eq!(protagonist_reward(-0.25, Some(-5.0), &off), -0.25);
    }

    #[test]
    fn adversary_reward_negates_score() {
        assert_eq!(adversary_reward(0.75), -0.75);
        assert_eq!(adversary_reward(-1.0), 1.0);
    }

    #[test]
    fn binarize_protagonist_threshold_example() {
        let mut h = RewardHistory::new();
        h.push_iteration(vec![0.2, 0.8], vec![], &[]);
        // threshold = 0.8 - (0.8 - 0.2) * 0.2 = 0.68
        assert_eq!(h.binarize_protagonist(0.70, &cfg()), 1);
        assert_eq!(h.binarize_protagonist(0.60, &cfg()), -1);
    }

    #[test]
    fn empty_history_and_single_observation_are_wins() {
        let h = RewardHistory::<f64>::new();
        assert_eq!(h.binarize_protagonist(-0.9, &cfg()), 1);
        assert_eq!(h.binarize_adversary("k", 0.99, &cfg()), 1);
        let mut h = RewardHistory::new();
        h.push_iteration(vec![0.4], vec![("k".into(), 0.3)], &[0.9]);
        // Zero range: only matching (or better) plays win.
        assert_eq!(h.binarize_protagonist(0.4, &cfg()), 1);
        assert_eq!(h.binarize_protagonist(0.39, &cfg()), -1);
        assert_eq!(h.binarize_adversary("k", 0.3, &cfg()), 1);
        assert_eq!(h.binarize_adversary("k", 0.31, &cfg()), -1);
    }

    #[test]
    fn protagonist_floor_is_best_of_minima() {
        let mut h = RewardHistory::new();
        h.push_iteration(vec![0.0, 0.6], vec![], &[]);
        h.push_iteration(vec![0.3, 0.5], vec![], &[]);
        // best = 0.6, floor = max(0.0, 0.3) = 0.3, threshold = 0.54
        assert_eq!(h.protagonist_thresholds(), Some((0.6, 0.3)));
        assert_eq!(h.binarize_protagonist(0.54, &cfg()), 1);
        assert_eq!(h.binarize_protagonist(0.53, &cfg()), -1);
    }

    #[test]
    fn adversary_thresholds_shrink_per_iteration() {
        let mut h = RewardHistory::new();
        h.push_iteration(
            vec![],
            vec![("k".into(), 0.5), ("k".into(), 0.9)],
            &[0.5, 0.9],
        );
        h.push_iteration(
            vec![],
            vec![("k".into(), 0.7), ("k".into(), 0.8)],
            &[0.7, 0.8],
        );
        // cap = min(0.9, 0.8) = 0.8, floor = min(0.5, 0.7) = 0.5
        assert_eq!(h.adversary_thresholds("k"), Some((0.8, 0.5)));
        // threshold = 0.5 + 0.3 * 0.2 = 0.56
        assert_eq!(h.binarize_adversary("k", 0.55, &cfg()), 1);
        assert_eq!(h.binarize_adversary("k", 0.57, &cfg()), -1);
        // Different keys never mix.
        assert_eq!(h.adversary_thresholds("other"), None);
    }

    #[test]
    fn running_min_skips_non_finite() {
        let mut h = RewardHistory::new();
        h.push_iteration(vec![], vec![], &[f64::NAN, -0.2]);
        assert_eq!(h.min_e_ns(), Some(-0.2));
        h.push_iteration(vec![], vec![], &[-0.5, 0.1]);
        assert_eq!(h.min_e_ns(), Some(-0.5));
    }

    #[test]
    fn pooled_score_standardizes_before_fitting() {
        let scaler = FeatureScaler::fit(1, &[0.0, 10.0, 20.0]).unwrap();
        let (e, s) = pooled_score(
            &scaler,
            &[0.0, 10.0, 20.0],
            &[0.0, 10.0, 20.0],
            1,
            &cfg(),
        )
        .unwrap();
        assert_eq!(e, 1.0);
        assert_eq!(s, 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        let bad = ScoreConfig {
            e_max_ns: -1.0,
            e_min_ns: 1.0,
            ..cfg()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn scoring_works_at_f32() {
        let c = ScoreConfig::<f32>::default();
        let e = ns_index(&[1.0f32, 2.0, 4.0], &[1.0, 2.0, 3.0], 1).unwrap();
        assert!((score(e, &c) - 0.5).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn score_stays_in_unit_band(e in -10.0..10.0f64) {
            let s = score(e, &cfg());
            prop_assert!((-1.0..=1.0).contains(&s));
        }

        #[test]
        fn score_is_monotone(a in -2.0..2.0f64, b in -2.0..2.0f64) {
            let c = cfg();
            if a <= b {
                prop_assert!(score(a, &c) <= score(b, &c));
            }
        }

        #[test]
        fn decay_never_raises_reward(s in -1.0..1.0f64, e in -3.0..1.0f64) {
            let r = protagonist_reward(s, Some(e), &cfg());
            prop_assert!(r <= s + 1e-12);
            prop_assert!(r >= -1.0 - 1e-12);
        }
    }
}
