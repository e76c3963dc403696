use crate::error::{LidError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Language {
    /// ISO 639-3 code.
    pub code: String,
    pub name: Option<String>,
    pub genus: Option<String>,
    pub family: Option<String>,
}

/// `(code, name, genus, family)` for the sixteen CMU Wilderness languages,
/// in class-index order.
pub const STANDARD_LANGUAGES: [(&str, &str, &str, &str); 16] = [
    ("kab", "Kabyle", "Berber", "Afro-Asiatic"),
    ("ind", "Indonesian", "Malayo-Sumbawan", "Austronesian"),
    ("sun", "Sundanese", "Malayo-Sumbawan", "Austronesian"),
    ("jav", "Javanese", "Javanese", "Austronesian"),
    ("eus", "Euskara", "Basque", "Basque"),
    ("tam", "Tamil", "Southern Dravidian", "Dravidian"),
    ("kan", "Kannada", "Southern Dravidian", "Dravidian"),
    ("tel", "Telugu", "South-Central Dravidian", "Dravidian"),
    ("hin", "Hindi", "Indic", "Indo-European"),
    ("por", "Portuguese", "Romance", "Indo-European"),
    ("rus", "Russian", "Slavic", "Indo-European"),
    ("eng", "English", "Germanic", "Indo-European"),
    ("mar", "Marathi", "Indic", "Indo-European"),
    ("tha", "Thai", "Kam-Tai", "Tai-Kadai"),
    ("iba", "Iban", "Malayo-Sumbawan", "Austronesian"),
    ("cnh", "Chin, Hakha", "Gur", "Niger-Congo"),
];

/// Ordered class labels. The position of a code is its class index and
/// its row/column in a confusion matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    languages: Vec<Language>,
}

impl Default for LabelSet {
    fn default() -> Self {
        Self::standard()
    }
}

impl LabelSet {
    pub fn standard() -> Self {
        LabelSet {
            languages: STANDARD_LANGUAGES
                .iter()
                .map(|&(code, name, genus, family)| Language {
                    code: code.into(),
                    name: Some(name.into()),
                    genus: Some(genus.into()),
                    family: Some(family.into()),
                })
                .collect(),
        }
    }

    /// A label set from codes in class order. Codes of the standard set keep
    /// their annotations.
    pub fn from_codes<S: AsRef<str>>(codes: &[S]) -> Result<Self> {
        let standard = Self::standard();
        let mut languages: Vec<Language> = Vec::with_capacity(codes.len());
        for code in codes {
            let code = code.as_ref().trim();
            if code.is_empty() || code.contains(|c: char| c.is_whitespace() || c == ',') {
                return Err(LidError::Config(format!("invalid language code `{code}`")));
            }
            if languages.iter().any(|l| l.code == code) {
                return Err(LidError::Config(format!("duplicate language code `{code}`")));
            }
            languages.push(match standard.index(code) {
                Some(i) => standard.languages[i].clone(),
                None => Language {
                    code: code.into(),
                    name: None,
                    genus: None,
                    family: None,
                },
            });
        }
        if languages.len() < 2 {
            return Err(LidError::Config("a label set needs at least two languages".into()));
        }
        Ok(LabelSet { languages })
    }

    pub fn len(&self) -> usize {
        self.languages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.languages.is_empty()
    }

    pub fn index(&self, code: &str) -> Option<usize> {
        self.languages.iter().position(|l| l.code == code)
    }

    pub fn code(&self, index: usize) -> &str {
        &self.languages[index].code
    }

    pub fn codes(&self) -> impl Iterator<Item = &str> {
        self.languages.iter().map(|l| l.code.as_str())
    }

    pub fn languages(&self) -> &[Language] {
        &self.languages
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_order_and_metadata() {
        let set = LabelSet::standard();
        assert_eq!(set.len(), 16);
        let codes: Vec<_> = set.codes().collect();
        assert_eq!(
            codes,
            ["kab", "ind", "sun", "jav", "eus", "tam", "kan", "tel", "hin", "por", "rus", "eng", "mar", "tha", "iba", "cnh"]
        );
        assert_eq!(set.index("eng"), Some(11));
        assert_eq!(set.languages()[7].genus.as_deref(), Some("South-Central Dravidian"));
        assert_eq!(set.index("xyz"), None);
    }

    #[test]
    fn custom_sets() {
        let set = LabelSet::from_codes(&["eng", "zzz"]).unwrap();
        assert_eq!(set.languages()[0].family.as_deref(), Some("Indo-European"));
        assert_eq!(set.languages()[1].family, None);
        assert!(LabelSet::from_codes(&["eng", "eng"]).is_err());
        assert!(LabelSet::from_codes(&["eng"]).is_err());
        assert!(LabelSet::from_codes(&["eng", "a b"]).is_err());
    }
}
