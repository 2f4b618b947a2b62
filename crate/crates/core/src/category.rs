//! Interned grammar symbols.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::sync::{OnceLock, RwLock};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Label assigned to the unlabeled wrapper node of a Penn treebank sentence.
pub const TOP_LABEL: &str = "TOP";

#[derive(Default)]
struct Interner {
    names: Vec<&'static str>,
    ids: HashMap<&'static str, u32>,
}

fn interner() -> &'static RwLock<Interner> {
    static INTERNER: OnceLock<RwLock<Interner>> = OnceLock::new();
    INTERNER.get_or_init(Default::default)
}

/// An interned grammar symbol: a POS tag or a phrasal label.
///
/// Equality and hashing are on the interned id. Ordering is by name so that
/// anything sorted by category is stable across runs and processes.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Category(u32);

impl Category {
    pub fn new(name: &str) -> Category {
        if let Some(&id) = interner().read().unwrap().ids.get(name) {
            return Category(id);
        }
        let mut table = interner().write().unwrap();
        if let Some(&id) = table.ids.get(name) {
            return Category(id);
        }
        let id = table.names.len() as u32;
        let leaked: &'static str = Box::leak(name.to_owned().into_boxed_str());
        table.names.push(leaked);
        table.ids.insert(leaked, id);
        Category(id)
    }

    pub fn top() -> Category {
        Category::new(TOP_LABEL)
    }

    pub fn name(self) -> &'static str {
        interner().read().unwrap().names[self.0 as usize]
    }

    pub fn is_top(self) -> bool {
        self == Category::top()
    }
}

/// Whether a category acts as a terminal (POS tag) or a phrasal label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CategoryKind {
    Terminal,
    Nonterminal,
}

impl Ord for Category {
    fn cmp(&self, other: &Self) -> Ordering {
        if self.0 == other.0 {
            Ordering::Equal
        } else {
            self.name().cmp(other.name())
        }
    }
}

impl PartialOrd for Category {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Debug for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl From<&str> for Category {
    fn from(name: &str) -> Self {
        Category::new(name)
    }
}

impl Serialize for Category {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Category {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let name = String::deserialize(deserializer)?;
        Ok(Category::new(&name))
    }
}

/// Convenience for tests and fixtures: `cats("DT NN")`.
pub fn cats(names: &str) -> Vec<Category> {
    names.split_whitespace().map(Category::new).collect()
}
