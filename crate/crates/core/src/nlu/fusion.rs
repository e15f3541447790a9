//! Accuracy-aware fusion of two visual detectors' predictions.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::NluError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorPrediction {
    pub detector: String,
    pub class: String,
    pub confidence: f64,
    pub known_accuracy: f64,
}

impl DetectorPrediction {
    pub fn new(detector: &str, class: &str, confidence: f64, known_accuracy: f64) -> Self {
        DetectorPrediction { detector: detector.into(), class: class.into(), confidence, known_accuracy }
    }
}

/// The shared class vocabulary plus the subset the secondary detector covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorVocabulary {
    pub classes: Vec<String>,
    /// Classes the secondary detector can recognise; empty means all.
    #[serde(default)]
    pub secondary_subset: BTreeSet<String>,
}

impl DetectorVocabulary {
    pub fn new(classes: Vec<String>, secondary_subset: BTreeSet<String>) -> Result<Self, NluError> {
        let distinct: BTreeSet<&String> = classes.iter().collect();
        if classes.is_empty() || distinct.len() != classes.len() {
            return Err(NluError::InvalidVocabulary("classes must be non-empty and distinct".into()));
        }
        if let Some(c) = secondary_subset.iter().find(|c| !distinct.contains(c)) {
            return Err(NluError::UnknownClass(c.clone()));
        }
        Ok(DetectorVocabulary { classes, secondary_subset })
    }

    /// A 23-class vocabulary of illicit objects seen in marketplace imagery.
    pub fn builtin() -> Self {
        let classes = [
            "rifle", "pistol", "revolver", "shotgun", "submachine_gun", "assault_rifle", "sniper_rifle",
            "machine_gun", "grenade", "bomb", "knife", "ammunition", "magazine", "suppressor", "scope",
            "drug_powder", "pills", "cannabis", "syringe", "banknotes", "credit_card", "passport", "mobile_phone",
        ];
        let subset = ["rifle", "pistol", "revolver", "shotgun", "submachine_gun", "assault_rifle", "grenade", "knife"];
        DetectorVocabulary {
            classes: classes.iter().map(|s| s.to_string()).collect(),
            secondary_subset: subset.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn contains(&self, class: &str) -> bool {
        self.classes.iter().any(|c| c == class)
    }

    fn secondary_covers(&self, class: &str) -> bool {
        self.secondary_subset.is_empty() || self.secondary_subset.contains(class)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionRule {
    Agreement,
    Disagreement,
    Abstention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedPrediction {
    pub class: String,
    pub confidence: f64,
    pub rule: FusionRule,
    /// Detector whose label was kept (both on agreement).
    pub source: String,
}

fn check(p: &DetectorPrediction, vocab: &DetectorVocabulary) -> Result<(), NluError> {
    if !vocab.contains(&p.class) {
        return Err(NluError::UnknownClass(p.class.clone()));
    }
    if !(0.0..=1.0).contains(&p.confidence) || !(p.known_accuracy > 0.0 && p.known_accuracy < 1.0) {
        return Err(NluError::InvalidPrediction(p.detector.clone()));
    }
    Ok(())
}

/// Agreement: noisy-OR of the confidences. Disagreement: the label with the
/// larger `known_accuracy * confidence` (the primary on an exact tie), keeping
/// its own confidence. The secondary abstains when it gave no prediction or
/// the primary's class lies outside its subset; the primary is then returned as is.
pub fn fuse_detectors(
    primary: &DetectorPrediction,
    secondary: Option<&DetectorPrediction>,
    vocab: &DetectorVocabulary,
) -> Result<FusedPrediction, NluError> {
    check(primary, vocab)?;
    if let Some(s) = secondary {
        check(s, vocab)?;
        if !vocab.secondary_covers(&s.class) {
            return Err(NluError::UnknownClass(s.class.clone()));
        }
    }
    let passthrough = || FusedPrediction {
        class: primary.class.clone(),
        confidence: primary.confidence,
        rule: FusionRule::Abstention,
        source: primary.detector.clone(),
    };
    let Some(s) = secondary else { return Ok(passthrough()) };
    if !vocab.secondary_covers(&primary.class) {
        return Ok(passthrough());
    }
    if s.class == primary.class {
        return Ok(FusedPrediction {
            class: s.class.clone(),
            confidence: 1.0 - (1.0 - primary.confidence) * (1.0 - s.confidence),
            rule: FusionRule::Agreement,
            source: format!("{}+{}", primary.detector, s.detector),
        });
    }
    let winner = if s.known_accuracy * s.confidence > primary.known_accuracy * primary.confidence { s } else { primary };
    Ok(FusedPrediction {
        class: winner.class.clone(),
        confidence: winner.confidence,
        rule: FusionRule::Disagreement,
        source: winner.detector.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(d: &str, c: &str, conf: f64, acc: f64) -> DetectorPrediction {
        DetectorPrediction::new(d, c, conf, acc)
    }

    #[test]
    fn agreement_noisy_or() {
        let v = DetectorVocabulary::builtin();
        let f = fuse_detectors(&p("a", "rifle", 0.8, 0.9), Some(&p("b", "rifle", 0.9, 0.7)), &v).unwrap();
        assert_eq!(f.class, "rifle");
        assert!((f.confidence - 0.98).abs() < 1e-12);
    }

    #[test]
    fn disagreement_prefers_accuracy() {
        let v = DetectorVocabulary::builtin();
        let f = fuse_detectors(&p("a", "pistol", 0.7, 0.60), Some(&p("b", "rifle", 0.7, 0.95)), &v).unwrap();
        assert_eq!((f.class.as_str(), f.rule), ("rifle", FusionRule::Disagreement));
        assert_eq!(f.confidence, 0.7);
    }

    #[test]
    fn abstention_passes_primary_through() {
        let v = DetectorVocabulary::builtin();
        let primary = p("a", "drug_powder", 0.66, 0.9);
        let f = fuse_detectors(&primary, Some(&p("b", "rifle", 0.99, 0.99)), &v).unwrap();
        assert_eq!((f.class.as_str(), f.confidence, f.rule), ("drug_powder", 0.66, FusionRule::Abstention));
        let f = fuse_detectors(&primary, None, &v).unwrap();
        assert_eq!(f.confidence, 0.66);
    }

    #[test]
    fn unknown_class() {
        let v = DetectorVocabulary::builtin();
        assert_eq!(
            fuse_detectors(&p("a", "spaceship", 0.5, 0.5), None, &v).unwrap_err(),
            NluError::UnknownClass("spaceship".into())
        );
        assert!(matches!(
            fuse_detectors(&p("a", "rifle", 0.5, 0.5), Some(&p("b", "pills", 0.5, 0.5)), &v),
            Err(NluError::UnknownClass(_))
        ));
        assert_eq!(DetectorVocabulary::builtin().classes.len(), 23);
    }
}
