use serde::{Deserialize, Serialize};

use crate::error::{LeastError, Result};

/// Class index over `A′ ∪ {NONE}`. Attribute `i` of the [`AttributeSet`] is
/// class `i`; NONE is the last class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Label(pub usize);

impl Label {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The ordered attribute set `A′` of a vertical.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSet {
    names: Vec<String>,
}

pub const NONE_NAME: &str = "NONE";

impl AttributeSet {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(LeastError::InvalidConfig("attribute set is empty".into()));
        }
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || n == NONE_NAME {
                return Err(LeastError::UnknownAttribute(n.clone()));
            }
            if names[..i].contains(n) {
                return Err(LeastError::InvalidConfig(format!("duplicate attribute {n}")));
            }
        }
        Ok(AttributeSet { names })
    }

    pub fn attributes(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// `|A′| + 1`.
    pub fn num_classes(&self) -> usize {
        self.names.len() + 1
    }

    pub fn none(&self) -> Label {
        Label(self.names.len())
    }

    pub fn is_none(&self, label: Label) -> bool {
        label.0 == self.names.len()
    }

    /// Labels of the attributes only, NONE excluded.
    pub fn attribute_labels(&self) -> impl Iterator<Item = Label> {
        (0..self.names.len()).map(Label)
    }

    pub fn label(&self, name: &str) -> Result<Label> {
        if name == NONE_NAME {
            return Ok(self.none());
        }
        self.names
            .iter()
            .position(|n| n == name)
            .map(Label)
            .ok_or_else(|| LeastError::UnknownAttribute(name.to_string()))
    }

    pub fn name(&self, label: Label) -> &str {
        self.names.get(label.0).map(String::as_str).unwrap_or(NONE_NAME)
    }

    /// Class names in class order, NONE last.
    pub fn class_names(&self) -> Vec<String> {
        let mut v = self.names.clone();
        v.push(NONE_NAME.to_string());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn none_is_last_class() {
        let attrs = AttributeSet::new(["title", "director", "genre", "mpaa_rating"]).unwrap();
        assert_eq!(attrs.num_classes(), 5);
        assert_eq!(attrs.none(), Label(4));
        assert_eq!(attrs.label("NONE").unwrap(), Label(4));
        assert_eq!(attrs.label("genre").unwrap(), Label(2));
        assert_eq!(attrs.name(Label(4)), "NONE");
        assert!(matches!(
            attrs.label("budget"),
            Err(LeastError::UnknownAttribute(_))
        ));
    }

    #[test]
    fn rejects_duplicates_and_reserved_name() {
        assert!(AttributeSet::new(["a", "a"]).is_err());
        assert!(AttributeSet::new(["NONE"]).is_err());
        assert!(AttributeSet::new(Vec::<String>::new()).is_err());
    }
}
