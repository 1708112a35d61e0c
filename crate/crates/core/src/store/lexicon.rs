use std::collections::BTreeSet;
use std::path::Path;

use super::StoreError;

/// Lowercase single-word lexicon terms.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    terms: BTreeSet<String>,
}

impl Lexicon {
    /// One term per line. Blank lines and lines starting with `#` are
    /// skipped; terms are trimmed and lowercased; a term containing
    /// whitespace is rejected with its 1-based line number.
    pub fn parse(text: &str, path: &Path) -> Result<Self, StoreError> {
        let mut terms = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            if t.chars().any(char::is_whitespace) {
                return Err(StoreError::Lexicon {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("term `{t}` contains whitespace"),
                });
            }
            terms.insert(t.to_lowercase());
        }
        Ok(Self { terms })
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let bytes = std::fs::read(path).map_err(|e| StoreError::io(path, e))?;
        let text = String::from_utf8(bytes).map_err(|source| StoreError::Encoding {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    pub fn from_terms<I: IntoIterator<Item = S>, S: AsRef<str>>(terms: I) -> Self {
        Self {
            terms: terms.into_iter().map(|t| t.as_ref().to_lowercase()).collect(),
        }
    }

    pub fn contains(&self, token: &str) -> bool {
        self.terms.contains(token)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().map(String::as_str)
    }

    pub fn to_file_contents(&self) -> String {
        let mut s = String::new();
        for t in &self.terms {
            s.push_str(t);
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dedupes_and_folds_case() {
        let l = Lexicon::parse("Karen\nkaren\n#comment\n", Path::new("x")).unwrap();
        assert_eq!(l.terms().collect::<Vec<_>>(), vec!["karen"]);
    }

    #[test]
    fn empty_file_is_valid() {
        assert!(Lexicon::parse("", Path::new("x")).unwrap().is_empty());
    }

    #[test]
    fn whitespace_term_rejected_with_line() {
        let err = Lexicon::parse("ok\n\ntwo words\n", Path::new("lex.txt")).unwrap_err();
        match err {
            StoreError::Lexicon { line, .. } => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_utf8_is_an_encoding_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lex.txt");
        std::fs::write(&p, [0x66, 0xff, 0x0a]).unwrap();
        assert!(matches!(Lexicon::load(&p), Err(StoreError::Encoding { .. })));
    }
}
