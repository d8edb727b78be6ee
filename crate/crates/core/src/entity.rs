use serde::{Deserialize, Serialize};
use std::fmt;

/// A named thing in the scene that skills and constraints can refer to.
///
/// Blocks are named by colour and render as `"<colour> block"`; every other
/// item (box, fixture, basket, foods, tables) renders as its name.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Entity {
    Block(String),
    Item(String),
}

impl Entity {
    pub fn block(colour: &str) -> Self {
        Entity::Block(colour.to_string())
    }

    pub fn item(name: &str) -> Self {
        Entity::Item(name.to_string())
    }

    /// Noun phrase without article, e.g. `red block`, `box`, `table B`.
    pub fn noun(&self) -> String {
        match self {
            Entity::Block(c) => format!("{c} block"),
            Entity::Item(n) => n.clone(),
        }
    }

    /// Inverse of [`Entity::noun`]. Accepts a leading article.
    pub fn parse_noun(text: &str) -> Option<Self> {
        let t = text.trim();
        let t = t.strip_prefix("the ").unwrap_or(t).trim();
        if t.is_empty() || t == "robot" {
            return None;
        }
        if let Some(colour) = t.strip_suffix(" block") {
            let colour = colour.trim();
            if colour.is_empty() || colour.contains(' ') {
                return None;
            }
            return Some(Entity::block(colour));
        }
        if t == "block" {
            return None;
        }
        Some(Entity::item(t))
    }

    pub fn is_block(&self) -> bool {
        matches!(self, Entity::Block(_))
    }
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.noun())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nouns_round_trip() {
        for e in [Entity::block("red"), Entity::item("box"), Entity::item("table B")] {
            assert_eq!(Entity::parse_noun(&e.noun()), Some(e.clone()));
            assert_eq!(Entity::parse_noun(&format!("the {}", e.noun())), Some(e));
        }
        assert_eq!(Entity::parse_noun("robot"), None);
        assert_eq!(Entity::parse_noun(" block"), None);
    }
}
