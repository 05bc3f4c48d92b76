//! Prototype-anchored supervision.
//!
//! Pseudo-labels on unlabeled pixels are kept only when the softmax
//! confidence of the predicted class exceeds `tau_conf` *and* the pixel
//! feature's cosine similarity to that class's prototype exceeds `tau_sim`.
//! Prototypes are averages of per-sample, l2-normalized class-mean features
//! taken from labeled data only.

use std::collections::BTreeMap;

use ndarray::{Array2, Array3, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{domain, shape, Error, Result};

/// Per-pixel embeddings, `D x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    features: Array3<f64>,
}

impl FeatureMap {
    pub fn new(features: Array3<f64>) -> Result<Self> {
        let (d, h, w) = features.dim();
        if d == 0 || h == 0 || w == 0 {
            return Err(domain(format!("feature map dims must be >= 1, got {d}x{h}x{w}")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(domain("feature map contains non-finite entries"));
        }
        Ok(Self { features })
    }

    /// From a `pixels x D` matrix in row-major pixel order.
    pub fn from_pixel_rows(rows: ArrayView2<f64>, height: usize, width: usize) -> Result<Self> {
        if rows.nrows() != height * width {
            return Err(shape(format!("{} pixel rows", height * width), rows.nrows()));
        }
        let d = rows.ncols();
        let chw = rows
            .t()
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((d, height, width))
            .map_err(|e| domain(e.to_string()))?;
        Self::new(chw)
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.features.dim()
    }

    pub fn features(&self) -> &Array3<f64> {
        &self.features
    }

    /// `pixels x D`, row-major pixel order.
    pub fn pixel_rows(&self) -> Array2<f64> {
        let (d, h, w) = self.features.dim();
        self.features
            .view()
            .into_shape_with_order((d, h * w))
            .expect("contiguous feature map")
            .t()
            .to_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub vector: Vec<f64>,
    pub count: usize,
}

/// Class id → prototype. Serializes as `{class_id: {vector, count}}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PrototypeBank {
    classes: BTreeMap<usize, Prototype>,
}

impl PrototypeBank {
    pub fn get(&self, class: usize) -> Option<&Prototype> {
        self.classes.get(&class)
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn class_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.classes.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Prototype)> {
        self.classes.iter().map(|(c, p)| (*c, p))
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.classes.values().next().map(|p| p.vector.len())
    }

    /// Merges another bank. A class present in both is combined with count
    /// weights, which equals recomputing it over the union of samples.
    pub fn merge(&mut self, other: &PrototypeBank) {
        for (c, p) in &other.classes {
            match self.classes.get_mut(c) {
                None => {
                    self.classes.insert(*c, p.clone());
                }
                Some(mine) => {
                    let total = mine.count + p.count;
                    for (a, b) in mine.vector.iter_mut().zip(&p.vector) {
                        *a = (*a * mine.count as f64 + b * p.count as f64) / total as f64;
                    }
                    mine.count = total;
                }
            }
        }
    }

    /// Keeps only the listed classes.
    pub fn restricted_to(&self, classes: &[usize]) -> PrototypeBank {
        PrototypeBank {
            classes: self
                .classes
                .iter()
                .filter(|(c, _)| classes.contains(c))
                .map(|(c, p)| (*c, p.clone()))
                .collect(),
        }
    }
}

/// Confidence and similarity thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub tau_conf: f64,
    pub tau_sim: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            tau_conf: 0.7,
            tau_sim: 0.7,
        }
    }
}

impl FilterConfig {
    pub fn new(tau_conf: f64, tau_sim: f64) -> Result<Self> {
        let cfg = Self { tau_conf, tau_sim };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau_conf) {
            return Err(domain(format!("tau_conf must lie in [0, 1], got {}", self.tau_conf)));
        }
        if !(-1.0..=1.0).contains(&self.tau_sim) {
            return Err(domain(format!("tau_sim must lie in [-1, 1], got {}", self.tau_sim)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidityMask {
    mask: Array2<bool>,
    accepted_count: usize,
}

impl ValidityMask {
    pub fn new(mask: Array2<bool>) -> Self {
        let accepted_count = mask.iter().filter(|&&b| b).count();
        Self {
            mask,
            accepted_count,
        }
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    pub fn accepted_count(&self) -> usize {
        self.accepted_count
    }

    pub fn dim(&self) -> (usize, usize) {
        self.mask.dim()
    }

    pub fn and(&self, other: &ValidityMask) -> Result<ValidityMask> {
        if self.dim() != other.dim() {
            return Err(shape(format!("{:?}", self.dim()), format!("{:?}", other.dim())));
        }
        let mut m = self.mask.clone();
        m.zip_mut_with(&other.mask, |a, b| *a = *a && *b);
        Ok(ValidityMask::new(m))
    }
}

/// Class prototypes from labeled samples.
pub fn compute_prototypes(samples: &[(FeatureMap, Array2<usize>)]) -> Result<PrototypeBank> {
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for (idx, (fm, labels)) in samples.iter().enumerate() {
        let (d, h, w) = fm.dim();
        if labels.dim() != (h, w) {
            return Err(shape(format!("label grid {h}x{w}"), format!("{:?}", labels.dim())));
        }
        let per_sample = class_means(fm, labels);
        for (class, (mean, _)) in per_sample {
            let norm = l2(mean.view());
            if norm == 0.0 {
                return Err(Error::DegenerateFeature { sample: idx, class });
            }
            let entry = sums.entry(class).or_insert_with(|| (vec![0.0; d], 0));
            for (acc, v) in entry.0.iter_mut().zip(mean.iter()) {
                *acc += v / norm;
            }
            entry.1 += 1;
        }
    }
    Ok(PrototypeBank {
        classes: sums
            .into_iter()
            .map(|(c, (sum, n))| {
                let vector = sum.into_iter().map(|v| v / n as f64).collect();
                (c, Prototype { vector, count: n })
            })
            .collect(),
    })
}

fn class_means(fm: &FeatureMap, labels: &Array2<usize>) -> BTreeMap<usize, (ndarray::Array1<f64>, usize)> {
    let d = fm.dim().0;
    let mut acc: BTreeMap<usize, (ndarray::Array1<f64>, usize)> = BTreeMap::new();
    for ((y, x), &c) in labels.indexed_iter() {
        let e = acc
            .entry(c)
            .or_insert_with(|| (ndarray::Array1::zeros(d), 0));
        e.0 += &fm.features.slice(ndarray::s![.., y, x]);
        e.1 += 1;
    }
    for (sum, n) in acc.values_mut() {
        *sum /= *n as f64;
    }
    acc
}

fn l2(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Softmax in place over one row; returns (argmax, max probability).
pub(crate) fn softmax_row(row: &mut [f64]) -> (usize, f64) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in row.iter_mut().enumerate() {
        *v /= z;
        if *v > best.1 {
            best = (i, *v);
        }
    }
    best
}

/// Outcome of the dual test for a single pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelDecision {
    pub class: usize,
    pub confidence: f64,
    /// `None` when the feature has zero norm or the class has no prototype.
    pub similarity: Option<f64>,
    pub accepted: bool,
}

/// Dual-criteria decision for each row of `logits (N x C)` and
/// `features (N x D)`.
pub fn decide_rows(
    logits: ArrayView2<f64>,
    features: ArrayView2<f64>,
    bank: &PrototypeBank,
    config: &FilterConfig,
) -> Result<Vec<PixelDecision>> {
    if logits.nrows() != features.nrows() {
        return Err(shape(format!("{} feature rows", logits.nrows()), features.nrows()));
    }
    if logits.ncols() < 2 {
        return Err(domain("validation requires at least two classes"));
    }
    // Unit prototypes, looked up by class id.
    let unit: BTreeMap<usize, ndarray::Array1<f64>> = bank
        .iter()
        .filter_map(|(c, p)| {
            let v = ndarray::Array1::from(p.vector.clone());
            let n = l2(v.view());
            (n > 0.0 && v.len() == features.ncols()).then(|| (c, v / n))
        })
        .collect();
    let mut buf = vec![0.0; logits.ncols()];
    Ok(logits
        .axis_iter(Axis(0))
        .zip(features.axis_iter(Axis(0)))
        .map(|(lrow, frow)| {
            buf.iter_mut().zip(lrow.iter()).for_each(|(b, l)| *b = *l);
            let (class, confidence) = softmax_row(&mut buf);
            let fnorm = l2(frow);
            let similarity = match unit.get(&class) {
                Some(p) if fnorm > 0.0 => Some(frow.dot(p) / fnorm),
                _ => None,
            };
            let accepted = confidence > config.tau_conf
                && similarity.is_some_and(|s| s > config.tau_sim);
            PixelDecision {
                class,
                confidence,
                similarity,
                accepted,
            }
        })
        .collect())
}

/// Per-pixel dual-criteria validity for `logits (C x H x W)`.
pub fn validate_pixels(
    logits: &Array3<f64>,
    features: &FeatureMap,
    bank: &PrototypeBank,
    config: &FilterConfig,
) -> Result<ValidityMask> {
    let (c, h, w) = logits.dim();
    let (_, fh, fw) = features.dim();
    if (h, w) != (fh, fw) {
        return Err(shape(format!("feature map {h}x{w}"), format!("{fh}x{fw}")));
    }
    let rows = logits
        .view()
        .into_shape_with_order((c, h * w))
        .map_err(|e| domain(e.to_string()))?
        .t()
        .to_owned();
    let decisions = decide_rows(rows.view(), features.pixel_rows().view(), bank, config)?;
    let mask = Array2::from_shape_vec((h, w), decisions.iter().map(|d| d.accepted).collect())
        .expect("h * w decisions");
    Ok(ValidityMask::new(mask))
}

/// Mean squared l2 distance between student and teacher probabilities over
/// pixels both masks accept; 0 when none are.
pub fn consistency_loss(
    probs_student: &Array3<f64>,
    probs_teacher: &Array3<f64>,
    mask_student: &ValidityMask,
    mask_teacher: &ValidityMask,
) -> Result<f64> {
    if probs_student.dim() != probs_teacher.dim() {
        return Err(shape(
            format!("{:?}", probs_student.dim()),
            format!("{:?}", probs_teacher.dim()),
        ));
    }
    let (_, h, w) = probs_student.dim();
    if mask_student.dim() != (h, w) || mask_teacher.dim() != (h, w) {
        return Err(shape(format!("{h}x{w} masks"), format!("{:?}", mask_student.dim())));
    }
    let joint = mask_student.and(mask_teacher)?;
    if joint.accepted_count == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for ((y, x), &ok) in joint.mask.indexed_iter() {
        if ok {
            let s = probs_student.slice(ndarray::s![.., y, x]);
            let t = probs_teacher.slice(ndarray::s![.., y, x]);
            total += s.iter().zip(t.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
    }
    Ok(total / joint.accepted_count as f64)
}

/// `alpha * teacher + (1 - alpha) * student`.
pub fn ema_update(teacher: &[f64], student: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if teacher.len() != student.len() {
        return Err(shape(teacher.len(), student.len()));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(domain(format!("ema decay must lie in [0, 1), got {alpha}")));
    }
    Ok(teacher
        .iter()
        .zip(student)
        .map(|(t, s)| alpha * t + (1.0 - alpha) * s)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoveragePrecision {
    pub f: f64,
    pub rho: f64,
    /// Nothing was accepted; `rho` is reported as 1.
    pub vacuous: bool,
}

pub fn estimate_coverage_precision(
    mask: &ValidityMask,
    predicted: &Array2<usize>,
    truth: &Array2<usize>,
) -> Result<CoveragePrecision> {
    if predicted.dim() != mask.dim() || truth.dim() != mask.dim() {
        return Err(shape(
            format!("{:?}", mask.dim()),
            format!("{:?} / {:?}", predicted.dim(), truth.dim()),
        ));
    }
    let total = mask.mask.len();
    let correct = ndarray::Zip::from(&mask.mask)
        .and(predicted)
        .and(truth)
        .fold(0usize, |n, &m, p, t| n + usize::from(m && p == t));
    let accepted = mask.accepted_count;
    Ok(CoveragePrecision {
        f: accepted as f64 / total as f64,
        rho: if accepted == 0 {
            1.0
        } else {
            correct as f64 / accepted as f64
        },
        vacuous: accepted == 0,
    })
}

/// Mean cross-entropy of `softmax(W P_c)` against `c` over bank classes.
pub fn prototype_replay_loss(bank: &PrototypeBank, classifier_weights: &Array2<f64>) -> Result<f64> {
    if bank.is_empty() {
        return Err(domain("prototype replay needs a nonempty bank"));
    }
    let (c, d) = classifier_weights.dim();
    let mut total = 0.0;
    for (class, proto) in bank.iter() {
        if class >= c {
            return Err(domain(format!("bank class {class} out of range for {c} outputs")));
        }
        if proto.vector.len() != d {
            return Err(shape(format!("prototype of length {d}"), proto.vector.len()));
        }
        let p = ArrayView1::from(&proto.vector);
        let logits = classifier_weights.dot(&p);
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        total += lse - logits[class];
    }
    Ok(total / bank.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array3};

    fn fmap(pixels: &[&[f64]], h: usize, w: usize) -> FeatureMap {
        let d = pixels[0].len();
        let rows = Array2::from_shape_vec((h * w, d), pixels.concat()).unwrap();
        FeatureMap::from_pixel_rows(rows.view(), h, w).unwrap()
    }

    fn bank_of(entries: &[(usize, &[f64])]) -> PrototypeBank {
        let mut bank = PrototypeBank::default();
        for (c, v) in entries {
            bank.classes.insert(
                *c,
                Prototype {
                    vector: v.to_vec(),
                    count: 1,
                },
            );
        }
        bank
    }

    fn logits_1px(l: &[f64]) -> Array3<f64> {
        Array3::from_shape_vec((l.len(), 1, 1), l.to_vec()).unwrap()
    }

    #[test]
    fn prototype_hand_cases() {
        let s = (fmap(&[&[3.0, 4.0]], 1, 1), array![[2usize]]);
        let bank = compute_prototypes(&[s]).unwrap();
        let p = bank.get(2).unwrap();
        assert_abs_diff_eq!(p.vector[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(p.vector[1], 0.8, epsilon = 1e-15);
        assert_eq!(p.count, 1);

        let a = (fmap(&[&[1.0, 0.0], &[5.0, 5.0]], 1, 2), array![[1usize, 0]]);
        let b = (fmap(&[&[0.0, 2.0]], 1, 1), array![[1usize]]);
        let bank = compute_prototypes(&[a, b]).unwrap();
        assert_eq!(bank.get(1).unwrap().vector, vec![0.5, 0.5]);
        assert_eq!(bank.get(1).unwrap().count, 2);
        assert!(bank.get(3).is_none());

        let e1 = (0..3)
            .map(|_| (fmap(&[&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]], 1, 2), array![[4usize, 4]]))
            .collect::<Vec<_>>();
        assert_eq!(compute_prototypes(&e1).unwrap().get(4).unwrap().vector, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn degenerate_prototype_errors() {
        let s = (fmap(&[&[1.0, 1.0], &[-1.0, -1.0]], 1, 2), array![[3usize, 3]]);
        assert!(matches!(
            compute_prototypes(&[s]),
            Err(Error::DegenerateFeature { sample: 0, class: 3 })
        ));
        let misaligned = (fmap(&[&[1.0, 1.0]], 1, 1), array![[0usize, 0]]);
        assert!(compute_prototypes(&[misaligned]).is_err());
    }

    #[test]
    fn merge_matches_union() {
        let a = (fmap(&[&[1.0, 0.0]], 1, 1), array![[1usize]]);
        let b = (fmap(&[&[0.0, 3.0]], 1, 1), array![[1usize]]);
        let c = (fmap(&[&[1.0, 1.0]], 1, 1), array![[1usize]]);
        let mut left = compute_prototypes(&[a.clone()]).unwrap();
        left.merge(&compute_prototypes(&[b.clone(), c.clone()]).unwrap());
        let union = compute_prototypes(&[a, b, c]).unwrap();
        let (l, u) = (left.get(1).unwrap(), union.get(1).unwrap());
        assert_eq!(l.count, u.count);
        for (x, y) in l.vector.iter().zip(&u.vector) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
    }

    #[test]
    fn validation_hand_cases() {
        let cfg = FilterConfig::default();
        let bank = bank_of(&[(0, &[1.0, 0.0]), (1, &[0.0, 1.0])]);
        let same = fmap(&[&[2.0, 0.0]], 1, 1);
        let m = validate_pixels(&logits_1px(&[2.0, 0.0]), &same, &bank, &cfg).unwrap();
        assert_eq!(m.accepted_count(), 1);

        let m = validate_pixels(&logits_1px(&[0.1, 0.0]), &same, &bank, &cfg).unwrap();
        assert_eq!(m.accepted_count(), 0);

        let anti = fmap(&[&[-1.0, 0.0]], 1, 1);
        let m = validate_pixels(&logits_1px(&[2.0, 0.0]), &anti, &bank, &cfg).unwrap();
        assert_eq!(m.accepted_count(), 0);

        let zero = fmap(&[&[0.0, 0.0]], 1, 1);
        let m = validate_pixels(&logits_1px(&[5.0, 0.0]), &zero, &bank, &cfg).unwrap();
        assert_eq!(m.accepted_count(), 0);

        let only_one = bank_of(&[(1, &[0.0, 1.0])]);
        let m = validate_pixels(&logits_1px(&[5.0, 0.0]), &same, &only_one, &cfg).unwrap();
        assert_eq!(m.accepted_count(), 0);

        assert!(validate_pixels(&logits_1px(&[1.0]), &same, &bank, &cfg).is_err());
    }

    #[test]
    fn decision_values() {
        let bank = bank_of(&[(0, &[1.0, 0.0]), (1, &[0.0, 1.0])]);
        let d = decide_rows(
            array![[2.0, 0.0]].view(),
            array![[1.0, 0.0]].view(),
            &bank,
            &FilterConfig::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(d[0].confidence, 1.0 / (1.0 + (-2f64).exp()), epsilon = 1e-15);
        assert_eq!(d[0].similarity, Some(1.0));
    }

    #[test]
    fn ties_at_threshold_reject() {
        let bank = bank_of(&[(0, &[1.0, 0.0]), (1, &[0.0, 1.0])]);
        let f = fmap(&[&[3.0, 0.0]], 1, 1);
        // sim == 1 exactly
        let cfg = FilterConfig::new(0.5, 1.0).unwrap();
        let m = validate_pixels(&logits_1px(&[3.0, 0.0]), &f, &bank, &cfg).unwrap();
        assert_eq!(m.accepted_count(), 0);
        // conf == 0.5 exactly (uniform over two classes, argmax is class 0)
        let cfg = FilterConfig::new(0.5, 0.0).unwrap();
        let m = validate_pixels(&logits_1px(&[0.0, 0.0]), &f, &bank, &cfg).unwrap();
        assert_eq!(m.accepted_count(), 0);
        let cfg = FilterConfig::new(0.49, 0.99).unwrap();
        let m = validate_pixels(&logits_1px(&[0.0, 0.0]), &f, &bank, &cfg).unwrap();
        assert_eq!(m.accepted_count(), 1);
        assert!(FilterConfig::new(1.5, 0.0).is_err());
        assert!(FilterConfig::new(0.5, -1.5).is_err());
    }

    #[test]
    fn consistency_cases() {
        let p = Array3::from_shape_vec((2, 1, 2), vec![1.0, 0.3, 0.0, 0.7]).unwrap();
        let all = ValidityMask::new(Array2::from_elem((1, 2), true));
        let none = ValidityMask::new(Array2::from_elem((1, 2), false));
        assert_eq!(consistency_loss(&p, &p, &all, &all).unwrap(), 0.0);
        let q = Array3::from_shape_vec((2, 1, 2), vec![0.0, 0.5, 1.0, 0.5]).unwrap();
        assert_eq!(consistency_loss(&p, &q, &none, &all).unwrap(), 0.0);
        let first = ValidityMask::new(array![[true, false]]);
        assert_eq!(consistency_loss(&p, &q, &first, &all).unwrap(), 2.0);
        assert_eq!(
            consistency_loss(&p, &q, &all, &all).unwrap(),
            consistency_loss(&q, &p, &all, &all).unwrap()
        );
        let bad = Array3::zeros((3, 1, 2));
        assert!(consistency_loss(&p, &bad, &all, &all).is_err());
    }

    #[test]
    fn ema_cases() {
        assert_eq!(ema_update(&[1.0, 2.0], &[3.0, 4.0], 0.0).unwrap(), vec![3.0, 4.0]);
        assert_eq!(ema_update(&[1.5], &[1.5], 0.9).unwrap(), vec![1.5]);
        assert_abs_diff_eq!(ema_update(&[1.0], &[0.0], 0.9).unwrap()[0], 0.9);
        assert!(ema_update(&[1.0], &[0.0, 1.0], 0.5).is_err());
        assert!(ema_update(&[1.0], &[0.0], 1.0).is_err());
        // Geometric convergence toward a constant student.
        let mut t = vec![1.0];
        for k in 1..=50 {
            t = ema_update(&t, &[0.0], 0.8).unwrap();
            assert_abs_diff_eq!(t[0], 0.8f64.powi(k), epsilon = 1e-12);
        }
    }

    #[test]
    fn coverage_precision_cases() {
        let truth = array![[0usize, 1], [1, 2]];
        let all = ValidityMask::new(Array2::from_elem((2, 2), true));
        let r = estimate_coverage_precision(&all, &truth, &truth).unwrap();
        assert_eq!((r.f, r.rho, r.vacuous), (1.0, 1.0, false));

        let pred = array![[0usize, 2], [0, 2]];
        let half = ValidityMask::new(array![[true, true], [false, false]]);
        let r = estimate_coverage_precision(&half, &pred, &truth).unwrap();
        assert_eq!((r.f, r.rho), (0.5, 0.5));

        let none = ValidityMask::new(Array2::from_elem((2, 2), false));
        let r = estimate_coverage_precision(&none, &pred, &truth).unwrap();
        assert_eq!(r.f, 0.0);
        assert!(r.vacuous);
    }

    #[test]
    fn replay_loss_cases() {
        let bank = bank_of(&[(0, &[1.0, 0.0]), (1, &[0.0, 1.0])]);
        let w = array![[20.0, 0.0], [0.0, 20.0]];
        assert!(prototype_replay_loss(&bank, &w).unwrap() <= 1e-6);
        let zero = Array2::zeros((3, 2));
        assert_abs_diff_eq!(prototype_replay_loss(&bank, &zero).unwrap(), 3f64.ln(), epsilon = 1e-12);
        let single = bank_of(&[(0, &[1.0])]);
        let w = array![[1.0], [0.0]];
        assert_abs_diff_eq!(
            prototype_replay_loss(&single, &w).unwrap(),
            (1.0 + (-1f64).exp()).ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(prototype_replay_loss(&single, &w).unwrap(), 0.31326, epsilon = 1e-5);
        let out_of_range = bank_of(&[(5, &[1.0])]);
        assert!(prototype_replay_loss(&out_of_range, &w).is_err());
        assert!(prototype_replay_loss(&PrototypeBank::default(), &w).is_err());
    }

    #[test]
    fn bank_json_shape() {
        let bank = bank_of(&[(3, &[0.6, 0.8])]);
        let v: serde_json::Value = serde_json::to_value(&bank).unwrap();
        assert_eq!(v["3"]["count"], 1);
        assert_eq!(v["3"]["vector"][1], 0.8);
        let back: PrototypeBank = serde_json::from_value(v).unwrap();
        assert_eq!(back, bank);
    }
}
