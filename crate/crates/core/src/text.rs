//! Shared text helpers: case-insensitive term matching and number words.

pub const NUMBER_WORDS: [&str; 21] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
    "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen", "twenty",
];

/// Parses a decimal number or an English number word from zero to twenty.
pub fn parse_count(s: &str) -> Option<u32> {
    let s = s.trim().to_lowercase();
    if let Ok(n) = s.parse::<u32>() {
        return Some(n);
    }
    NUMBER_WORDS.iter().position(|w| *w == s).map(|i| i as u32)
}

/// Regex fragment matching a count: digits or a number word.
pub fn count_pattern() -> String {
    format!(r"\d+|{}", NUMBER_WORDS.join("|"))
}

/// A term hit inside a text, as byte offsets plus the canonical term.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TermHit {
    pub start: usize,
    pub end: usize,
    pub term: String,
}

/// Whole-word, case-insensitive (ASCII) matching of a term list with
/// leftmost-longest semantics: among hits starting at the same position the
/// longest term wins, and hits never overlap.
#[derive(Debug, Clone, Default)]
pub struct TermMatcher {
    /// (folded, canonical), longest first.
    terms: Vec<(String, String)>,
}

fn is_word(c: u8) -> bool {
    c.is_ascii_alphanumeric() || c == b'_'
}

impl TermMatcher {
    pub fn new<I, S>(terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut list: Vec<(String, String)> = Vec::new();
        for t in terms {
            let t = t.as_ref().trim();
            let folded = t.to_ascii_lowercase();
            if !t.is_empty() && !list.iter().any(|(f, _)| *f == folded) {
                list.push((folded, t.to_string()));
            }
        }
        list.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        TermMatcher { terms: list }
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    fn match_at(&self, folded: &[u8], i: usize) -> Option<&(String, String)> {
        self.terms.iter().find(|(t, _)| {
            let t = t.as_bytes();
            let end = i + t.len();
            if end > folded.len() || &folded[i..end] != t {
                return false;
            }
            let left_ok = i == 0 || !is_word(folded[i - 1]) || !is_word(t[0]);
            let right_ok = end == folded.len() || !is_word(folded[end]) || !is_word(t[t.len() - 1]);
            left_ok && right_ok
        })
    }

    pub fn find_all(&self, text: &str) -> Vec<TermHit> {
        let folded = text.to_ascii_lowercase();
        let bytes = folded.as_bytes();
        let mut hits = Vec::new();
        let mut i = 0;
        while i < bytes.len() {
            if !text.is_char_boundary(i) {
                i += 1;
                continue;
            }
            match self.match_at(bytes, i) {
                Some((t, canonical)) => {
                    hits.push(TermHit { start: i, end: i + t.len(), term: canonical.clone() });
                    i += t.len();
                }
                None => i += 1,
            }
        }
        hits
    }

    pub fn first(&self, text: &str) -> Option<TermHit> {
        let folded = text.to_ascii_lowercase();
        (0..folded.len())
            .filter(|i| text.is_char_boundary(*i))
            .find_map(|i| self.match_at(folded.as_bytes(), i).map(|(t, c)| TermHit { start: i, end: i + t.len(), term: c.clone() }))
    }

    pub fn contains_any(&self, text: &str) -> bool {
        self.first(text).is_some()
    }
}
