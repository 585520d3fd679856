use std::collections::HashMap;

/// A decoded BIO tag. Type indices refer to `LabelScheme::entity_types`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    Outside,
    Begin(usize),
    Inside(usize),
}

/// BIO tag inventory: `O` at index 0, then `B-t`, `I-t` for each type in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelScheme {
    entity_types: Vec<String>,
    tags: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelScheme {
    pub fn new<S: AsRef<str>>(entity_types: &[S]) -> Self {
        let entity_types: Vec<String> = entity_types.iter().map(|t| t.as_ref().to_owned()).collect();
        let mut tags = vec!["O".to_owned()];
        for t in &entity_types {
            tags.push(format!("B-{t}"));
            tags.push(format!("I-{t}"));
        }
        let index = tags.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { entity_types, tags, index }
    }

    /// PER, LOC, ORG, MISC.
    pub fn conll() -> Self {
        Self::new(&["PER", "LOC", "ORG", "MISC"])
    }

    pub fn entity_types(&self) -> &[String] {
        &self.entity_types
    }

    pub fn num_tags(&self) -> usize {
        self.tags.len()
    }

    pub fn tag_name(&self, index: usize) -> &str {
        &self.tags[index]
    }

    pub fn index_of(&self, tag: &str) -> Option<usize> {
        self.index.get(tag).copied()
    }

    pub fn tag(&self, index: usize) -> Tag {
        match index {
            0 => Tag::Outside,
            i if i % 2 == 1 => Tag::Begin((i - 1) / 2),
            i => Tag::Inside((i - 2) / 2),
        }
    }

    pub fn encode(&self, tag: Tag) -> usize {
        match tag {
            Tag::Outside => 0,
            Tag::Begin(t) => 1 + 2 * t,
            Tag::Inside(t) => 2 + 2 * t,
        }
    }

    pub fn is_outside(&self, index: usize) -> bool {
        index == 0
    }
}
