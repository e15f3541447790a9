//! Payload cleansing applied before validation.

use std::collections::BTreeMap;
use std::fmt;

use chrono::NaiveDate;
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::domain::parse_iso_date;

/// A raw record as received: ordered key/value pairs that may repeat keys.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawPayload(pub Vec<(String, String)>);

impl RawPayload {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// First occurrence of each key wins.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        for (k, v) in &self.0 {
            map.entry(k.clone()).or_insert_with(|| v.clone());
        }
        map
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for RawPayload {
    fn from_iter<T: IntoIterator<Item = (K, V)>>(iter: T) -> Self {
        RawPayload(iter.into_iter().map(|(k, v)| (k.into(), v.into())).collect())
    }
}

impl From<BTreeMap<String, String>> for RawPayload {
    fn from(map: BTreeMap<String, String>) -> Self {
        RawPayload(map.into_iter().collect())
    }
}

impl Serialize for RawPayload {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_map(self.0.iter().map(|(k, v)| (k, v)))
    }
}

impl<'de> Deserialize<'de> for RawPayload {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct PayloadVisitor;

        impl<'de> Visitor<'de> for PayloadVisitor {
            type Value = RawPayload;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a flat JSON object")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<RawPayload, A::Error> {
                let mut pairs = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, serde_json::Value>()? {
                    let v = match v {
                        serde_json::Value::String(s) => s,
                        serde_json::Value::Null => continue,
                        other => other.to_string(),
                    };
                    pairs.push((k, v));
                }
                Ok(RawPayload(pairs))
            }
        }

        d.deserialize_map(PayloadVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleanseConfig {
    pub date_fields: Vec<String>,
    pub country_fields: Vec<String>,
    pub amount_fields: Vec<String>,
    /// USD per unit of each currency code.
    pub usd_rates: BTreeMap<String, f64>,
}

impl Default for CleanseConfig {
    fn default() -> Self {
        CleanseConfig {
            date_fields: vec!["date".into(), "published".into()],
            country_fields: vec!["country".into()],
            amount_fields: vec!["amount".into(), "price".into()],
            usd_rates: [("USD", 1.0), ("EUR", 1.10), ("GBP", 1.27)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CleanseError {
    #[error("unparseable date `{value}` in field `{field}`")]
    UnparseableDate { field: String, value: String },
    #[error("no USD rate configured for currency `{currency}` in field `{field}`")]
    UnknownCurrency { field: String, currency: String },
}

impl CleanseError {
    pub fn reason(&self) -> &'static str {
        match self {
            CleanseError::UnparseableDate { .. } => "unparseable_date",
            CleanseError::UnknownCurrency { .. } => "unknown_currency",
        }
    }
}

/// Accepts `YYYY-MM-DD` or `DD/MM/YYYY`.
pub fn normalize_date(s: &str) -> Option<String> {
    if let Some(d) = parse_iso_date(s) {
        return Some(d.format("%Y-%m-%d").to_string());
    }
    let parts: Vec<&str> = s.split('/').collect();
    if let [d, m, y] = parts.as_slice() {
        if d.len() <= 2 && m.len() <= 2 && y.len() == 4 {
            let date = NaiveDate::from_ymd_opt(y.parse().ok()?, m.parse().ok()?, d.parse().ok()?)?;
            return Some(date.format("%Y-%m-%d").to_string());
        }
    }
    None
}

/// Splits `"100 EUR"` / `"1,200.50USD"` into amount and currency code.
fn split_amount(s: &str) -> Option<(f64, &str)> {
    let s = s.trim();
    let split = s.find(|c: char| c.is_ascii_alphabetic())?;
    let (num, cur) = s.split_at(split);
    let cur = cur.trim();
    if cur.len() != 3 || !cur.bytes().all(|b| b.is_ascii_uppercase()) {
        return None;
    }
    let num: String = num.trim().chars().filter(|c| *c != ',').collect();
    num.parse::<f64>().ok().filter(|v| v.is_finite()).map(|v| (v, cur))
}

impl CleanseConfig {
    /// Trims, normalizes dates, uppercases country codes, converts tagged
    /// amounts to USD and drops repeated keys (first occurrence kept).
    pub fn cleanse(&self, raw: &RawPayload) -> Result<RawPayload, CleanseError> {
        let mut out: Vec<(String, String)> = Vec::with_capacity(raw.0.len());
        for (k, v) in &raw.0 {
            let key = k.trim().to_string();
            if key.is_empty() || out.iter().any(|(seen, _)| *seen == key) {
                continue;
            }
            let mut value = v.trim().to_string();
            if value.is_empty() {
                continue;
            }
            if self.date_fields.contains(&key) {
                value = normalize_date(&value).ok_or_else(|| CleanseError::UnparseableDate {
                    field: key.clone(),
                    value: value.clone(),
                })?;
            } else if self.country_fields.contains(&key) {
                value = value.to_ascii_uppercase();
            } else if self.amount_fields.contains(&key) {
                if let Some((amount, currency)) = split_amount(&value) {
                    let rate = self.usd_rates.get(currency).ok_or_else(|| CleanseError::UnknownCurrency {
                        field: key.clone(),
                        currency: currency.to_string(),
                    })?;
                    let usd = (amount * rate * 100.0).round() / 100.0;
                    value = format!("{usd:.2} USD");
                }
            }
            out.push((key, value));
        }
        Ok(RawPayload(out))
    }
}

/// Parses a cleansed USD amount such as `"110.00 USD"` or a bare number.
pub fn parse_usd(s: &str) -> Option<f64> {
    let s = s.trim();
    let num = s.strip_suffix("USD").unwrap_or(s).trim();
    num.parse::<f64>().ok().filter(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn payload(pairs: &[(&str, &str)]) -> RawPayload {
        pairs.iter().copied().collect()
    }

    #[test]
    fn normalizes_dates() {
        let cfg = CleanseConfig::default();
        let out = cfg.cleanse(&payload(&[("date", "14/05/2023")])).unwrap();
        assert_eq!(out.get("date"), Some("2023-05-14"));
        let out = cfg.cleanse(&payload(&[("date", "2023-05-14")])).unwrap();
        assert_eq!(out.get("date"), Some("2023-05-14"));
        let err = cfg.cleanse(&payload(&[("date", "May 14th")])).unwrap_err();
        assert_eq!(err.reason(), "unparseable_date");
        assert!(cfg.cleanse(&payload(&[("date", "31/02/2023")])).is_err());
    }

    #[test]
    fn trims_and_uppercases_country() {
        let out = CleanseConfig::default().cleanse(&payload(&[("country", " fr "), (" name ", " Bob ")])).unwrap();
        assert_eq!(out.get("country"), Some("FR"));
        assert_eq!(out.get("name"), Some("Bob"));
    }

    #[test]
    fn converts_currency() {
        let out = CleanseConfig::default().cleanse(&payload(&[("amount", "100 EUR")])).unwrap();
        assert_eq!(parse_usd(out.get("amount").unwrap()), Some(110.0));
        let err = CleanseConfig::default().cleanse(&payload(&[("amount", "100 XYZ")])).unwrap_err();
        assert_eq!(err.reason(), "unknown_currency");
        let out = CleanseConfig::default().cleanse(&payload(&[("amount", "1,250.5 USD")])).unwrap();
        assert_eq!(out.get("amount"), Some("1250.50 USD"));
    }

    #[test]
    fn drops_repeated_keys_and_empty_values() {
        let out = CleanseConfig::default()
            .cleanse(&payload(&[("id", "x"), ("id", "y"), ("note", "  "), ("id ", "z")]))
            .unwrap();
        assert_eq!(out, payload(&[("id", "x")]));
    }

    #[test]
    fn payload_deserializes_duplicate_keys() {
        let p: RawPayload = serde_json::from_str(r#"{"id":"a","id":"b","n":3,"x":null}"#).unwrap();
        assert_eq!(p, payload(&[("id", "a"), ("id", "b"), ("n", "3")]));
        assert_eq!(p.to_map().get("id").map(String::as_str), Some("a"));
    }
}
