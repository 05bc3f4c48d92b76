//! Session specifications and protocol validation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rendering transform that defines a domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainTransform {
    /// Rotation of RGB about the gray axis, in degrees.
    pub palette_rotation_deg: f64,
    /// Standard deviation of additive per-channel noise (intensity units in [0, 1]).
    pub noise_sigma: f64,
    /// Exponent applied to every channel before noise.
    pub intensity_gamma: f64,
}

impl DomainTransform {
    pub fn identity() -> Self {
        Self {
            palette_rotation_deg: 0.0,
            noise_sigma: 0.0,
            intensity_gamma: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.palette_rotation_deg.is_finite() {
            return Err(Error::Protocol("palette rotation must be finite".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Protocol("noise sigma must be >= 0".into()));
        }
        if !(self.intensity_gamma > 0.0 && self.intensity_gamma.is_finite()) {
            return Err(Error::Protocol("intensity gamma must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSpec {
    pub index: usize,
    /// Foreground class ids; background is always class 0.
    pub class_ids: Vec<usize>,
    pub domain: DomainTransform,
    pub labeled_count: usize,
    pub unlabeled_count: usize,
    pub test_count: usize,
    pub shots: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransitionCase {
    DomainShift,
    ClassEvolution,
    JointShift,
}

impl TransitionCase {
    pub fn classify(prev: &SessionSpec, next: &SessionSpec) -> Option<TransitionCase> {
        let same_classes = class_set(prev) == class_set(next);
        let same_domain = prev.domain == next.domain;
        match (same_classes, same_domain) {
            (true, true) => None,
            (true, false) => Some(TransitionCase::DomainShift),
            (false, true) => Some(TransitionCase::ClassEvolution),
            (false, false) => Some(TransitionCase::JointShift),
        }
    }
}

fn class_set(s: &SessionSpec) -> BTreeSet<usize> {
    s.class_ids.iter().copied().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinualProtocol {
    sessions: Vec<SessionSpec>,
    cases: Vec<TransitionCase>,
}

impl ContinualProtocol {
    pub fn new(sessions: Vec<SessionSpec>) -> Result<Self> {
        validate_sessions(&sessions)?;
        let cases = sessions
            .windows(2)
            .map(|w| TransitionCase::classify(&w[0], &w[1]).expect("validated"))
            .collect();
        Ok(Self { sessions, cases })
    }

    /// Validates that each declared transition label matches the sessions.
    pub fn with_cases(sessions: Vec<SessionSpec>, declared: &[TransitionCase]) -> Result<Self> {
        let p = Self::new(sessions)?;
        if declared.len() != p.cases.len() {
            return Err(Error::Protocol(format!(
                "{} transitions but {} case labels",
                p.cases.len(),
                declared.len()
            )));
        }
        for (t, (d, actual)) in declared.iter().zip(&p.cases).enumerate() {
            if d != actual {
                return Err(Error::Protocol(format!(
                    "transition {t}->{} labeled {d:?} but sessions imply {actual:?}",
                    t + 1
                )));
            }
        }
        Ok(p)
    }

    pub fn sessions(&self) -> &[SessionSpec] {
        &self.sessions
    }

    pub fn cases(&self) -> &[TransitionCase] {
        &self.cases
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    /// Number of classifier outputs needed after session `t`, background included.
    pub fn active_classes(&self, t: usize) -> usize {
        self.sessions[..=t]
            .iter()
            .flat_map(|s| s.class_ids.iter().copied())
            .max()
            .map_or(1, |m| m + 1)
    }

    /// Session in which each class first appears.
    pub fn origin_session(&self, class: usize) -> Option<usize> {
        self.sessions
            .iter()
            .position(|s| s.class_ids.contains(&class))
    }

    /// A 3-session joint-shift protocol: 3 base classes, then 3 and 2 new
    /// classes under progressively rotated palettes.
    pub fn joint_shift_3(shots: usize, unlabeled: usize) -> Result<Self> {
        let base_labeled = (10 * shots * 3).max(150);
        let sessions = vec![
            SessionSpec {
                index: 0,
                class_ids: vec![1, 2, 3],
                domain: DomainTransform {
                    palette_rotation_deg: 0.0,
                    noise_sigma: 0.09,
                    intensity_gamma: 1.0,
                },
                labeled_count: base_labeled,
                unlabeled_count: 0,
                test_count: 40,
                shots: base_labeled,
            },
            SessionSpec {
                index: 1,
                class_ids: vec![4, 5, 6],
                domain: DomainTransform {
                    palette_rotation_deg: 40.0,
                    noise_sigma: 0.12,
                    intensity_gamma: 0.9,
                },
                labeled_count: shots * 3,
                unlabeled_count: unlabeled,
                test_count: 40,
                shots,
            },
            SessionSpec {
                index: 2,
                class_ids: vec![7, 8],
                domain: DomainTransform {
                    palette_rotation_deg: 80.0,
                    noise_sigma: 0.15,
                    intensity_gamma: 1.1,
                },
                labeled_count: shots * 2,
                unlabeled_count: unlabeled,
                test_count: 40,
                shots,
            },
        ];
        Self::new(sessions)
    }

    /// The first `n` sessions of this protocol.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        Self::new(self.sessions[..n.min(self.len())].to_vec())
    }
}

fn validate_sessions(sessions: &[SessionSpec]) -> Result<()> {
    let err = |m: String| Err(Error::Protocol(m));
    if sessions.is_empty() {
        return err("protocol needs at least one session".into());
    }
    let mut next_new = 1;
    let mut seen: Vec<(usize, DomainTransform)> = Vec::new();
    for (t, s) in sessions.iter().enumerate() {
        s.domain.validate()?;
        if s.index != t {
            return err(format!("session at position {t} has index {}", s.index));
        }
        if s.class_ids.is_empty() {
            return err(format!("session {t} has no foreground classes"));
        }
        if s.class_ids.contains(&0) {
            return err(format!("session {t} lists background class 0"));
        }
        if class_set(s).len() != s.class_ids.len() {
            return err(format!("session {t} repeats a class id"));
        }
        if s.class_ids.iter().any(|&c| c > 255) {
            return err(format!("session {t} uses a class id above 255"));
        }
        if s.labeled_count == 0 || s.test_count == 0 || s.shots == 0 {
            return err(format!("session {t} needs labeled, test, and shot counts >= 1"));
        }
        if t > 0 && s.labeled_count != s.shots * s.class_ids.len() {
            return err(format!(
                "session {t}: labeled count {} != shots {} x {} classes",
                s.labeled_count,
                s.shots,
                s.class_ids.len()
            ));
        }
        if t > 0 && sessions[0].labeled_count < 10 * s.labeled_count {
            return err(format!(
                "base labeled count {} is below 10 x session {t}'s {}",
                sessions[0].labeled_count, s.labeled_count
            ));
        }
        // New classes enter in increasing contiguous order so active outputs form a prefix.
        let mut sorted: Vec<usize> = s.class_ids.clone();
        sorted.sort_unstable();
        for c in sorted {
            if c == next_new {
                next_new += 1;
            } else if c > next_new {
                return err(format!(
                    "session {t} introduces class {c} before class {next_new}"
                ));
            }
        }
        for &c in &s.class_ids {
            if seen.iter().any(|(pc, pd)| *pc == c && *pd == s.domain) {
                return err(format!(
                    "class {c} recurs in session {t} under an already observed domain"
                ));
            }
        }
        seen.extend(s.class_ids.iter().map(|&c| (c, s.domain)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(t: usize, classes: &[usize], rot: f64, shots: usize, labeled: usize) -> SessionSpec {
        SessionSpec {
            index: t,
            class_ids: classes.to_vec(),
            domain: DomainTransform {
                palette_rotation_deg: rot,
                noise_sigma: 0.05,
                intensity_gamma: 1.0,
            },
            labeled_count: labeled,
            unlabeled_count: 0,
            test_count: 5,
            shots,
        }
    }

    #[test]
    fn cases_follow_class_and_domain_changes() {
        let p = ContinualProtocol::new(vec![
            spec(0, &[1, 2], 0.0, 100, 100),
            spec(1, &[1, 2], 30.0, 5, 10),
            spec(2, &[3, 4], 30.0, 5, 10),
            spec(3, &[5], 60.0, 5, 5),
        ])
        .unwrap();
        assert_eq!(
            p.cases(),
            &[
                TransitionCase::DomainShift,
                TransitionCase::ClassEvolution,
                TransitionCase::JointShift
            ]
        );
        assert_eq!(p.active_classes(0), 3);
        assert_eq!(p.active_classes(3), 6);
        assert_eq!(p.origin_session(4), Some(2));
    }

    #[test]
    fn declared_cases_checked() {
        let s = vec![spec(0, &[1, 2], 0.0, 100, 100), spec(1, &[1, 2], 30.0, 5, 10)];
        assert!(ContinualProtocol::with_cases(s.clone(), &[TransitionCase::DomainShift]).is_ok());
        assert!(ContinualProtocol::with_cases(s, &[TransitionCase::JointShift]).is_err());
    }

    #[test]
    fn recurrence_and_budget_rejected() {
        let recur = vec![
            spec(0, &[1, 2], 0.0, 100, 100),
            spec(1, &[3], 30.0, 5, 5),
            spec(2, &[1], 0.0, 5, 5),
        ];
        assert!(matches!(ContinualProtocol::new(recur), Err(Error::Protocol(_))));
        let budget = vec![spec(0, &[1], 0.0, 5, 5), spec(1, &[2], 30.0, 5, 5)];
        assert!(ContinualProtocol::new(budget).is_err());
        let shots = vec![spec(0, &[1], 0.0, 100, 100), spec(1, &[2, 3], 30.0, 5, 7)];
        assert!(ContinualProtocol::new(shots).is_err());
        let order = vec![spec(0, &[2], 0.0, 100, 100)];
        assert!(ContinualProtocol::new(order).is_err());
        assert!(ContinualProtocol::new(vec![]).is_err());
    }

    #[test]
    fn shots_set_labeled_budget() {
        let p = ContinualProtocol::joint_shift_3(5, 50).unwrap();
        assert_eq!(p.sessions()[1].labeled_count, 15);
        assert_eq!(p.cases(), &[TransitionCase::JointShift, TransitionCase::JointShift]);
    }
}
