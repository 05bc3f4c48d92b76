//! Dice / IoU evaluation and the Total Drop forgetting measure.

use serde::{Deserialize, Serialize};

use super::model::PixelClassifierModel;
use super::protocol::ContinualProtocol;
use super::render::{LabeledImage, SessionData};
use crate::error::{domain, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: usize,
    pub origin_session: usize,
    pub dice: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub session: usize,
    /// Foreground classes only; background is reported separately.
    pub classes: Vec<ClassScore>,
    pub background: Option<ClassScore>,
    pub mean_dice: f64,
    pub miou: f64,
    pub seen_dice: Option<f64>,
    pub new_dice: Option<f64>,
    pub harmonic_dice: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sessions: Vec<SessionMetrics>,
    /// Over the per-session mean Dice sequence.
    pub total_drop: f64,
}

impl MetricsReport {
    pub fn from_sessions(sessions: Vec<SessionMetrics>) -> Result<Self> {
        let scores: Vec<f64> = sessions.iter().map(|s| s.mean_dice).collect();
        let total_drop = total_drop(&scores)?;
        Ok(Self { sessions, total_drop })
    }
}

/// Pixel counts for one class: (intersection, predicted, truth).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Overlap {
    pub intersection: usize,
    pub predicted: usize,
    pub truth: usize,
}

impl Overlap {
    /// `None` when the class is absent from both prediction and truth.
    pub fn dice(&self) -> Option<f64> {
        let denom = self.predicted + self.truth;
        (denom > 0).then(|| 2.0 * self.intersection as f64 / denom as f64)
    }

    pub fn iou(&self) -> Option<f64> {
        let union = self.predicted + self.truth - self.intersection;
        (union > 0).then(|| self.intersection as f64 / union as f64)
    }
}

/// Accumulates per-class overlaps over predicted/true label sequences.
pub fn overlaps(
    pairs: impl IntoIterator<Item = (usize, usize)>,
    classes: usize,
) -> Vec<Overlap> {
    let mut out = vec![Overlap::default(); classes];
    for (p, t) in pairs {
        if p < classes {
            out[p].predicted += 1;
        }
        if t < classes {
            out[t].truth += 1;
        }
        if p == t && p < classes {
            out[p].intersection += 1;
        }
    }
    out
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Evaluates on the test splits of sessions `0..=t` over every class active at `t`.
pub fn evaluate(
    model: &PixelClassifierModel,
    protocol: &ContinualProtocol,
    data: &[SessionData],
    t: usize,
) -> Result<SessionMetrics> {
    if t >= protocol.len() || t >= data.len() {
        return Err(domain(format!("session {t} outside the protocol")));
    }
    let tests: Vec<&LabeledImage> = data[..=t].iter().flat_map(|s| s.test.iter()).collect();
    if tests.is_empty() {
        return Err(domain("empty test set"));
    }
    let classes = protocol.active_classes(t);
    let mut counts = vec![Overlap::default(); classes];
    for img in tests {
        let pred = model.predict(img);
        let o = overlaps(
            pred.iter().zip(img.labels.iter()).map(|(&p, &l)| (p, l as usize)),
            classes,
        );
        for (acc, o) in counts.iter_mut().zip(o) {
            acc.intersection += o.intersection;
            acc.predicted += o.predicted;
            acc.truth += o.truth;
        }
    }
    session_metrics(&counts, protocol, t)
}

/// Builds a SessionMetrics record from pooled per-class overlaps.
pub fn session_metrics(counts: &[Overlap], protocol: &ContinualProtocol, t: usize) -> Result<SessionMetrics> {
    let score = |c: usize| -> Option<ClassScore> {
        let o = counts[c];
        Some(ClassScore {
            class: c,
            origin_session: if c == 0 { 0 } else { protocol.origin_session(c)? },
            dice: o.dice()?,
            iou: o.iou()?,
        })
    };
    let classes: Vec<ClassScore> = (1..counts.len()).filter_map(score).collect();
    let dice: Vec<f64> = classes.iter().map(|c| c.dice).collect();
    let ious: Vec<f64> = classes.iter().map(|c| c.iou).collect();
    let seen: Vec<f64> = classes.iter().filter(|c| c.origin_session < t).map(|c| c.dice).collect();
    let new: Vec<f64> = classes.iter().filter(|c| c.origin_session == t).map(|c| c.dice).collect();
    let (seen_dice, new_dice) = if t == 0 { (None, None) } else { (mean(&seen), mean(&new)) };
    let harmonic_dice = match (seen_dice, new_dice) {
        (Some(s), Some(n)) if s + n > 0.0 => Some(2.0 * s * n / (s + n)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    Ok(SessionMetrics {
        session: t,
        classes,
        background: score(0),
        mean_dice: mean(&dice).unwrap_or(0.0),
        miou: mean(&ious).unwrap_or(0.0),
        seen_dice,
        new_dice,
        harmonic_dice,
    })
}

/// `100 * sum_i max(0, S_i - S_{i+1}) / S_0`.
pub fn total_drop(scores: &[f64]) -> Result<f64> {
    let s0 = *scores.first().ok_or_else(|| domain("total drop needs at least one score"))?;
    if !(s0 > 0.0) {
        return Err(domain(format!("base score must be positive, got {s0}")));
    }
    if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(domain("scores must be finite and nonnegative"));
    }
    let drops: f64 = scores.windows(2).map(|w| (w[0] - w[1]).max(0.0)).sum();
    Ok(100.0 * drops / s0)
}
