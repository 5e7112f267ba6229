use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    /// Character offset of the first character.
    pub start: usize,
    /// Character offset one past the last character.
    pub end: usize,
    #[serde(rename = "type")]
    pub entity_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cuid: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationAnnotation {
    pub head: usize,
    pub tail: usize,
    #[serde(rename = "type")]
    pub relation_type: String,
}

/// One annotated task document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDocument {
    pub id: String,
    pub text: String,
    pub mentions: Vec<Mention>,
    #[serde(default)]
    pub relations: Vec<RelationAnnotation>,
}

impl TaskDocument {
    pub fn validate(&self) -> Result<()> {
        let chars = self.text.chars().count();
        for (i, m) in self.mentions.iter().enumerate() {
            if m.start >= m.end || m.end > chars {
                return Err(Error::format(format!(
                    "document {:?}: mention {i} span {}..{} outside text of {chars} chars",
                    self.id, m.start, m.end
                )));
            }
            if m.entity_type.is_empty() {
                return Err(Error::format(format!("document {:?}: mention {i} has no type", self.id)));
            }
        }
        let mut seen = BTreeSet::new();
        for r in &self.relations {
            if r.head >= self.mentions.len() || r.tail >= self.mentions.len() {
                return Err(Error::format(format!(
                    "document {:?}: relation references mention {} of {}",
                    self.id,
                    r.head.max(r.tail),
                    self.mentions.len()
                )));
            }
            if !seen.insert((r.head, r.tail, r.relation_type.as_str())) {
                return Err(Error::format(format!(
                    "document {:?}: duplicate relation ({}, {}, {:?})",
                    self.id, r.head, r.tail, r.relation_type
                )));
            }
        }
        Ok(())
    }

    /// Surface text of mention `i`.
    pub fn surface(&self, i: usize) -> &str {
        let m = &self.mentions[i];
        let mut offsets = self
            .text
            .char_indices()
            .map(|(b, _)| b)
            .chain(std::iter::once(self.text.len()));
        let start = offsets.nth(m.start).expect("validated span");
        let end = offsets.nth(m.end - m.start - 1).expect("validated span");
        &self.text[start..end]
    }

    /// Sentence index of every mention. A sentence ends at `.`, `!` or `?`
    /// followed by whitespace, or at a newline.
    pub fn sentence_indices(&self) -> Vec<usize> {
        let chars: Vec<char> = self.text.chars().collect();
        let mut boundary_before = vec![0usize; chars.len() + 1];
        let mut count = 0;
        for i in 0..chars.len() {
            boundary_before[i] = count;
            let ends = match chars[i] {
                '\n' => true,
                '.' | '!' | '?' => chars.get(i + 1).is_none_or(|c| c.is_whitespace()),
                _ => false,
            };
            if ends {
                count += 1;
            }
        }
        boundary_before[chars.len()] = count;
        self.mentions.iter().map(|m| boundary_before[m.start]).collect()
    }
}

/// Lowercases and collapses internal whitespace.
pub fn normalize_surface(surface: &str) -> String {
    surface
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn read_documents(path: &Path) -> Result<Vec<TaskDocument>> {
    let docs: Vec<TaskDocument> = crate::jsonl::read(path)?;
    for d in &docs {
        d.validate()?;
    }
    Ok(docs)
}
