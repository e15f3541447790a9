//! Marketplace listing parsing driven by HTML tag rules, plus firearm spec
//! extraction from free-text descriptions.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use scraper::{Html, Selector};
use serde::{Deserialize, Serialize};

use super::NluError;
use crate::text::TermMatcher;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PostProcess {
    Text,
    Number,
    CurrencySplit,
}

/// Extracts one field from the first node matching `selector` (a CSS
/// selector path such as `div.offer > span[itemprop=price]`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HtmlRule {
    pub field: String,
    pub selector: String,
    /// Read this attribute instead of the node text.
    #[serde(default)]
    pub attribute: Option<String>,
    #[serde(default = "text_post")]
    pub post: PostProcess,
}

fn text_post() -> PostProcess {
    PostProcess::Text
}

impl HtmlRule {
    pub fn new(field: &str, selector: &str, post: PostProcess) -> Self {
        HtmlRule { field: field.into(), selector: selector.into(), attribute: None, post }
    }

    pub fn attr(mut self, attribute: &str) -> Self {
        self.attribute = Some(attribute.into());
        self
    }
}

/// A validated rule set with compiled selectors.
#[derive(Debug, Clone)]
pub struct Ruleset {
    rules: Vec<(HtmlRule, Selector)>,
}

impl Ruleset {
    pub fn new(rules: Vec<HtmlRule>) -> Result<Self, NluError> {
        let mut out = Vec::with_capacity(rules.len());
        for r in rules {
            if r.selector.trim().is_empty() {
                return Err(NluError::InvalidSelector { field: r.field, reason: "empty selector path".into() });
            }
            let sel = Selector::parse(&r.selector)
                .map_err(|e| NluError::InvalidSelector { field: r.field.clone(), reason: e.to_string() })?;
            out.push((r, sel));
        }
        Ok(Ruleset { rules: out })
    }

    pub fn rules(&self) -> impl Iterator<Item = &HtmlRule> {
        self.rules.iter().map(|(r, _)| r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Price {
    pub amount: f64,
    pub currency: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Specs {
    pub caliber: Option<String>,
    pub model: Option<String>,
    pub quantity: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListingRecord {
    pub url: Option<String>,
    pub title: String,
    pub price: Option<Price>,
    pub seller: Option<String>,
    pub shipping: Option<String>,
    pub specs: Specs,
    pub raw_description: String,
}

const CURRENCY_SYMBOLS: [(&str, &str); 5] = [("€", "EUR"), ("$", "USD"), ("£", "GBP"), ("¥", "JPY"), ("₿", "BTC")];

fn parse_number(s: &str) -> Option<f64> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\d+(?:,\d{3})*(?:\.\d+)?").unwrap());
    let m = re.find(s)?;
    m.as_str().replace(',', "").parse::<f64>().ok()
}

/// Splits `"€1,200"`, `"$950.00"`, `"950 USD"` or `"USD 950"` into amount and ISO code.
pub fn currency_split(s: &str) -> Option<Price> {
    static CODE: OnceLock<Regex> = OnceLock::new();
    let code_re = CODE.get_or_init(|| Regex::new(r"\b([A-Z]{3})\b").unwrap());
    let s = s.trim();
    let amount = parse_number(s)?;
    let currency = CURRENCY_SYMBOLS
        .iter()
        .find(|(sym, _)| s.contains(sym))
        .map(|(_, code)| code.to_string())
        .or_else(|| code_re.captures(s).map(|c| c[1].to_string()))?;
    Some(Price { amount, currency })
}

fn node_value(doc: &Html, sel: &Selector, attribute: Option<&str>) -> Option<String> {
    let el = doc.select(sel).next()?;
    let raw = match attribute {
        Some(a) => el.value().attr(a)?.to_string(),
        None => el.text().collect::<Vec<_>>().join(" "),
    };
    let collapsed = raw.split_whitespace().collect::<Vec<_>>().join(" ");
    (!collapsed.is_empty()).then_some(collapsed)
}

/// Field values as extracted by each rule (text after post-processing).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawFields {
    pub text: BTreeMap<String, String>,
    pub numbers: BTreeMap<String, f64>,
    pub prices: BTreeMap<String, Price>,
}

pub fn apply_rules(html: &str, ruleset: &Ruleset) -> Result<RawFields, NluError> {
    if html.trim().is_empty() || !html.contains('<') {
        return Err(NluError::MalformedHtml("document has no tags".into()));
    }
    let doc = Html::parse_document(html);
    let mut out = RawFields::default();
    for (rule, sel) in &ruleset.rules {
        if out.text.contains_key(&rule.field) {
            continue;
        }
        let Some(v) = node_value(&doc, sel, rule.attribute.as_deref()) else { continue };
        match rule.post {
            PostProcess::Text => {}
            PostProcess::Number => match parse_number(&v) {
                Some(n) => {
                    out.numbers.insert(rule.field.clone(), n);
                }
                None => continue,
            },
            PostProcess::CurrencySplit => match currency_split(&v) {
                Some(p) => {
                    out.prices.insert(rule.field.clone(), p);
                }
                None => continue,
            },
        }
        out.text.insert(rule.field.clone(), v);
    }
    Ok(out)
}

/// Parses a marketplace page. `title` and `description` are required; the
/// description also feeds [`extract_specs`].
pub fn parse_listing(html: &str, ruleset: &Ruleset, gazetteer: &SpecGazetteer) -> Result<ListingRecord, NluError> {
    let f = apply_rules(html, ruleset)?;
    let title = f.text.get("title").cloned().ok_or(NluError::MissingRequiredField("title"))?;
    let description = f.text.get("description").cloned().ok_or(NluError::MissingRequiredField("description"))?;
    let price = f.prices.get("price").cloned().or_else(|| {
        f.numbers.get("price").map(|n| Price { amount: *n, currency: "USD".into() })
    });
    let mut specs = extract_specs(&description, gazetteer);
    if let Some(q) = f.numbers.get("quantity").filter(|q| **q >= 1.0 && q.fract() == 0.0) {
        specs.quantity = Some(*q as u32);
    }
    Ok(ListingRecord {
        url: f.text.get("url").cloned(),
        title,
        price,
        seller: f.text.get("seller").cloned(),
        shipping: f.text.get("shipping").cloned(),
        specs,
        raw_description: description,
    })
}

/// Model names plus slang terms mapped to their canonical model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpecGazetteer {
    pub models: Vec<String>,
    pub slang: BTreeMap<String, String>,
}

impl SpecGazetteer {
    pub fn builtin() -> Self {
        let models = [
            "Glock 17", "Glock 19", "Glock 26", "Glock", "AK-47", "AKM", "AR-15", "M4", "CZ 75", "Beretta 92",
            "Beretta", "SIG P226", "Walther PPK", "Makarov", "Tokarev TT-33", "Skorpion", "Uzi", "MP5",
            "Zoraki 917", "Remington 870", "Mossberg 500", "Colt 1911", "Smith & Wesson Model 29", "HK416",
        ];
        let slang = [("glocky", "Glock"), ("kalash", "AK-47"), ("kalashnikov", "AK-47"), ("ak", "AK-47"), ("1911", "Colt 1911"), ("scorpion", "Skorpion")];
        SpecGazetteer {
            models: models.iter().map(|s| s.to_string()).collect(),
            slang: slang.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        }
    }

    pub fn matcher(&self) -> TermMatcher {
        TermMatcher::new(self.models.iter().chain(self.slang.keys()))
    }

    /// Canonical model for a matched term.
    pub fn canonical(&self, term: &str) -> String {
        self.slang
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(term))
            .map(|(_, v)| v.clone())
            .unwrap_or_else(|| term.to_string())
    }
}

fn caliber_res() -> &'static [Regex] {
    static RES: OnceLock<Vec<Regex>> = OnceLock::new();
    RES.get_or_init(|| {
        [
            r"(?i)\b\d{1,2}(?:\.\d{1,2})?(?:x\d{2,3})?\s?mm\b",
            r"(?i)(?:^|[^\w.])(\.\d{2,3}(?:\s(?:ACP|AUTO|LR|WMR|Magnum|Mag|Special|Spl|S&W|Win|Winchester|Rem|Remington|Long Rifle))?)\b",
            r"(?i)\b\d{1,2}\s?(?:gauge|ga)\b",
        ]
        .iter()
        .map(|p| Regex::new(p).unwrap())
        .collect()
    })
}

fn quantity_res() -> &'static [Regex] {
    static RES: OnceLock<Vec<Regex>> = OnceLock::new();
    RES.get_or_init(|| {
        [r"(?i)(?:^|\s)x\s?(\d{1,4})\b", r"(?i)\b(\d{1,4})\s?(?:pcs|pieces|pc|units)\b"]
            .iter()
            .map(|p| Regex::new(p).unwrap())
            .collect()
    })
}

/// Leftmost match across patterns; longer wins at equal start. Uses capture 1
/// when the pattern has one.
fn leftmost_longest<'t>(res: &[Regex], text: &'t str) -> Option<(usize, &'t str)> {
    let mut best: Option<(usize, &str)> = None;
    for re in res {
        let Some(c) = re.captures(text) else { continue };
        let m = c.get(1).unwrap_or_else(|| c.get(0).unwrap());
        let better = match best {
            None => true,
            Some((s, b)) => m.start() < s || (m.start() == s && m.as_str().len() > b.len()),
        };
        if better {
            best = Some((m.start(), m.as_str()));
        }
    }
    best
}

/// Caliber, model and quantity from a description using pattern and
/// gazetteer matching; every field may be absent.
pub fn extract_specs(description: &str, gazetteer: &SpecGazetteer) -> Specs {
    let caliber = leftmost_longest(caliber_res(), description).map(|(_, s)| s.trim().to_string());
    let model = gazetteer.matcher().first(description).map(|h| gazetteer.canonical(&h.term));
    let quantity = leftmost_longest(quantity_res(), description)
        .and_then(|(_, s)| s.parse::<u32>().ok())
        .filter(|q| *q >= 1);
    Specs { caliber, model, quantity }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rules() -> Ruleset {
        Ruleset::new(vec![
            HtmlRule::new("title", "h1.listing-title", PostProcess::Text),
            HtmlRule::new("price", "span.price", PostProcess::CurrencySplit),
            HtmlRule::new("seller", "a.vendor", PostProcess::Text),
            HtmlRule::new("description", "div.description", PostProcess::Text),
            HtmlRule::new("url", "link[rel=canonical]", PostProcess::Text).attr("href"),
        ])
        .unwrap()
    }

    #[test]
    fn parses_lenient_markup() {
        let html = r#"<html><head><link rel="canonical" href="http://m.onion/l/1"></head><body>
            <h1 class="listing-title">CZ 75 <b>compact</b></h1>
            <span class="price">€1,200</span><a class="vendor">ghost_vendor
            <div class="description">CZ 75 in 9mm, x 2, unclosed <p>tags"#;
        let l = parse_listing(html, &rules(), &SpecGazetteer::builtin()).unwrap();
        assert_eq!(l.title, "CZ 75 compact");
        assert_eq!(l.price, Some(Price { amount: 1200.0, currency: "EUR".into() }));
        assert_eq!(l.url.as_deref(), Some("http://m.onion/l/1"));
        assert_eq!(l.seller.as_deref().map(|s| s.starts_with("ghost_vendor")), Some(true));
        assert_eq!(l.specs, Specs { caliber: Some("9mm".into()), model: Some("CZ 75".into()), quantity: Some(2) });
    }

    #[test]
    fn errors() {
        assert!(matches!(parse_listing("", &rules(), &SpecGazetteer::default()), Err(NluError::MalformedHtml(_))));
        let html = "<div class='description'>x</div>";
        assert_eq!(
            parse_listing(html, &rules(), &SpecGazetteer::default()).unwrap_err(),
            NluError::MissingRequiredField("title")
        );
        assert!(Ruleset::new(vec![HtmlRule::new("title", " ", PostProcess::Text)]).is_err());
    }

    #[test]
    fn currency_forms() {
        assert_eq!(currency_split("$950"), Some(Price { amount: 950.0, currency: "USD".into() }));
        assert_eq!(currency_split("1,250.50 GBP"), Some(Price { amount: 1250.5, currency: "GBP".into() }));
        assert_eq!(currency_split("free"), None);
    }

    #[test]
    fn spec_patterns() {
        let g = SpecGazetteer::builtin();
        let s = extract_specs("brand new 9mm, 2 pcs", &g);
        assert_eq!(s, Specs { caliber: Some("9mm".into()), model: None, quantity: Some(2) });
        assert_eq!(extract_specs("nothing to see", &g), Specs::default());
        let s = extract_specs("Glock 19 chambered .40 S&W", &g);
        assert_eq!(s.model.as_deref(), Some("Glock 19"));
        assert_eq!(s.caliber.as_deref(), Some(".40 S&W"));
        assert_eq!(extract_specs("7.62x39mm for the kalash", &g).caliber.as_deref(), Some("7.62x39mm"));
        assert_eq!(extract_specs("7.62x39mm for the kalash", &g).model.as_deref(), Some("AK-47"));
        assert_eq!(extract_specs("12 gauge pump", &g).caliber.as_deref(), Some("12 gauge"));
    }
}
