//! Parcel-scan and firearm-identification report schemas and their
//! conversion into `detector_reports` events.

use chrono::NaiveDate;
use firetrace_core::graph::{IngestMessage, RawPayload};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DETECTOR_TOPIC: &str = "detector_reports";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: i64,
    pub y: i64,
    pub width: i64,
    pub height: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class: String,
    pub bbox: BoundingBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParcelAnalysisReport {
    pub image_id: String,
    #[serde(default)]
    pub image_width: Option<i64>,
    #[serde(default)]
    pub image_height: Option<i64>,
    #[serde(default)]
    pub captured: Option<NaiveDate>,
    #[serde(default)]
    pub country: Option<String>,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub firearm_type: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirearmIdReport {
    pub image_id: String,
    #[serde(default)]
    pub captured: Option<NaiveDate>,
    #[serde(default)]
    pub country: Option<String>,
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectorError {
    #[error("class `{0}` is outside the accepted vocabulary")]
    UnknownClass(String),
    #[error("malformed bounding box: {0}")]
    MalformedBox(String),
    #[error("{count} candidates exceed the limit of {max}")]
    TooManyCandidates { count: usize, max: usize },
    #[error("candidates must be ordered by non-increasing confidence")]
    UnorderedCandidates,
    #[error("report has no {0}")]
    Empty(&'static str),
    #[error("confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),
    #[error("image id is empty")]
    MissingImageId,
}

fn check_confidence(c: f64) -> Result<(), DetectorError> {
    if (0.0..=1.0).contains(&c) {
        Ok(())
    } else {
        Err(DetectorError::InvalidConfidence(c))
    }
}

fn check_box(b: &BoundingBox, w: Option<i64>, h: Option<i64>) -> Result<(), DetectorError> {
    if b.x < 0 || b.y < 0 {
        return Err(DetectorError::MalformedBox(format!("negative origin ({}, {})", b.x, b.y)));
    }
    if b.width <= 0 || b.height <= 0 {
        return Err(DetectorError::MalformedBox(format!("non-positive size {}x{}", b.width, b.height)));
    }
    if w.is_some_and(|w| b.x + b.width > w) || h.is_some_and(|h| b.y + b.height > h) {
        return Err(DetectorError::MalformedBox("box exceeds image bounds".into()));
    }
    Ok(())
}

impl ParcelAnalysisReport {
    pub fn validate(&self, classes: &[String]) -> Result<(), DetectorError> {
        if self.image_id.trim().is_empty() {
            return Err(DetectorError::MissingImageId);
        }
        if self.image_width.is_some_and(|w| w <= 0) || self.image_height.is_some_and(|h| h <= 0) {
            return Err(DetectorError::MalformedBox("non-positive image dimensions".into()));
        }
        for d in &self.detections {
            if !classes.contains(&d.class) {
                return Err(DetectorError::UnknownClass(d.class.clone()));
            }
            check_box(&d.bbox, self.image_width, self.image_height)?;
            check_confidence(d.confidence)?;
        }
        Ok(())
    }

    /// One event per detection, keyed `parcel:<image>:<index>`.
    pub fn to_messages(&self, report_id: &str, date: NaiveDate, first_offset: u64) -> Vec<IngestMessage> {
        self.detections
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let key = format!("parcel:{}:{}", self.image_id, i);
                let mut p = base_payload(&key, date, self.country.as_deref(), report_id, &self.image_id);
                p.0.push(("firearm_type".into(), d.class.to_lowercase()));
                p.0.push(("object_class".into(), d.class.clone()));
                p.0.push(("confidence".into(), d.confidence.to_string()));
                p.0.push(("bbox".into(), format!("{},{},{},{}", d.bbox.x, d.bbox.y, d.bbox.width, d.bbox.height)));
                IngestMessage::new(DETECTOR_TOPIC, key, first_offset + i as u64, p)
            })
            .collect()
    }
}

impl FirearmIdReport {
    pub fn validate(&self, types: &[String], max_candidates: usize) -> Result<(), DetectorError> {
        if self.image_id.trim().is_empty() {
            return Err(DetectorError::MissingImageId);
        }
        if self.candidates.is_empty() {
            return Err(DetectorError::Empty("candidates"));
        }
        if self.candidates.len() > max_candidates {
            return Err(DetectorError::TooManyCandidates { count: self.candidates.len(), max: max_candidates });
        }
        for c in &self.candidates {
            if !types.contains(&c.firearm_type) {
                return Err(DetectorError::UnknownClass(c.firearm_type.clone()));
            }
            check_confidence(c.confidence)?;
        }
        if self.candidates.windows(2).any(|w| w[1].confidence > w[0].confidence) {
            return Err(DetectorError::UnorderedCandidates);
        }
        Ok(())
    }

    /// A single event carrying the top candidate as its firearm type.
    pub fn to_messages(&self, report_id: &str, date: NaiveDate, offset: u64) -> Vec<IngestMessage> {
        let key = format!("firearm-id:{}", self.image_id);
        let mut p = base_payload(&key, date, self.country.as_deref(), report_id, &self.image_id);
        p.0.push(("firearm_type".into(), self.candidates[0].firearm_type.clone()));
        p.0.push(("confidence".into(), self.candidates[0].confidence.to_string()));
        let ranked: Vec<String> = self.candidates.iter().map(|c| format!("{}:{}", c.firearm_type, c.confidence)).collect();
        p.0.push(("candidates".into(), ranked.join(";")));
        vec![IngestMessage::new(DETECTOR_TOPIC, key, offset, p)]
    }
}

fn base_payload(key: &str, date: NaiveDate, country: Option<&str>, report_id: &str, image_id: &str) -> RawPayload {
    let mut p = vec![
        ("id".to_string(), key.to_string()),
        ("kind".into(), "event".into()),
        ("date".into(), date.format("%Y-%m-%d").to_string()),
        ("source".into(), "detector_report".into()),
        ("report_id".into(), report_id.into()),
        ("image_id".into(), image_id.into()),
    ];
    if let Some(c) = country {
        p.push(("country".into(), c.into()));
    }
    RawPayload(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes() -> Vec<String> {
        ["Revolver", "Shotgun"].iter().map(|s| s.to_string()).collect()
    }

    fn det(class: &str, x: i64) -> Detection {
        Detection { class: class.into(), bbox: BoundingBox { x, y: 2, width: 10, height: 10 }, confidence: 0.9 }
    }

    fn parcel(ds: Vec<Detection>) -> ParcelAnalysisReport {
        ParcelAnalysisReport {
            image_id: "img1".into(),
            image_width: Some(100),
            image_height: Some(100),
            captured: None,
            country: None,
            detections: ds,
        }
    }

    #[test]
    fn parcel_validation() {
        assert!(parcel(vec![det("Revolver", 1)]).validate(&classes()).is_ok());
        assert_eq!(parcel(vec![det("Cannon", 1)]).validate(&classes()), Err(DetectorError::UnknownClass("Cannon".into())));
        assert!(matches!(parcel(vec![det("Revolver", -1)]).validate(&classes()), Err(DetectorError::MalformedBox(_))));
        assert!(matches!(parcel(vec![det("Revolver", 95)]).validate(&classes()), Err(DetectorError::MalformedBox(_))));
    }

    #[test]
    fn firearm_validation() {
        let types: Vec<String> = ["pistol", "rifle"].iter().map(|s| s.to_string()).collect();
        let c = |t: &str, v: f64| Candidate { firearm_type: t.into(), confidence: v };
        let r = |cs: Vec<Candidate>| FirearmIdReport { image_id: "i".into(), captured: None, country: None, candidates: cs };
        assert!(r(vec![c("pistol", 0.6), c("rifle", 0.6)]).validate(&types, 5).is_ok());
        assert_eq!(r(vec![c("pistol", 0.1), c("rifle", 0.6)]).validate(&types, 5), Err(DetectorError::UnorderedCandidates));
        assert_eq!(
            r(vec![c("pistol", 0.1); 6]).validate(&types, 5),
            Err(DetectorError::TooManyCandidates { count: 6, max: 5 })
        );
        assert_eq!(r(vec![]).validate(&types, 5), Err(DetectorError::Empty("candidates")));
    }

    #[test]
    fn events_are_valid_records() {
        let msgs = parcel(vec![det("Revolver", 1), det("Shotgun", 20)]).to_messages("rpt-1", NaiveDate::from_ymd_opt(2024, 2, 1).unwrap(), 7);
        assert_eq!(msgs.len(), 2);
        assert_eq!((msgs[1].key.as_str(), msgs[1].offset), ("parcel:img1:1", 8));
        let raw = msgs[0].payload.0.iter().cloned().collect();
        let rec = firetrace_core::domain::validate_record(&raw).unwrap();
        assert_eq!(rec.firearm_type.as_deref(), Some("revolver"));
    }
}
