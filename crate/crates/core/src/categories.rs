//! The fixed nine-class taxonomy shared by every label file and report.

use serde::{Deserialize, Serialize};

pub type CategoryId = u32;

pub const NEUME: CategoryId = 0;
pub const LINE: CategoryId = 1;
pub const DISCARD: CategoryId = 2;
pub const STAFF: CategoryId = 3;
pub const CLEF: CategoryId = 4;
pub const MUSIC_DELIMITER: CategoryId = 5;
pub const TEXT: CategoryId = 6;
pub const CUSTOS: CategoryId = 7;
pub const MUSIC_TEXT: CategoryId = 8;

const NAMES: [&str; 9] = ["neume", "line", "discard", "staff", "clef", "musicDelimiter", "text", "custos", "musicText"];

/// Per-class annotation counts of the full 340-image manuscript dataset,
/// indexed by category id. Used as the class prior of the synthetic
/// dataset generator and as a fixture in tests.
pub const REFERENCE_COUNTS: [u64; 9] = [2745, 2522, 530, 301, 261, 183, 189, 172, 112];
pub const REFERENCE_TOTAL: u64 = 7015;
pub const REFERENCE_IMAGES: u64 = 340;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: CategoryId,
    pub name: String,
}

/// Ordered category table. Ids are contiguous from zero and frozen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryTable {
    entries: Vec<Category>,
}

impl Default for CategoryTable {
    fn default() -> Self {
        Self::standard()
    }
}

impl CategoryTable {
    pub fn standard() -> Self {
        let entries = NAMES
            .iter()
            .enumerate()
            .map(|(id, name)| Category { id: id as CategoryId, name: (*name).to_string() })
            .collect();
        Self { entries }
    }

    /// Accepts a category list read from disk only if it is the standard table.
    pub fn from_entries(entries: Vec<Category>) -> Result<Self, String> {
        let standard = Self::standard();
        let mut sorted = entries;
        sorted.sort_by_key(|c| c.id);
        if sorted != standard.entries {
            let got: Vec<String> = sorted.iter().map(|c| format!("{}={}", c.id, c.name)).collect();
            return Err(format!("category table must be the standard 9-class table, got [{}]", got.join(", ")));
        }
        Ok(standard)
    }

    pub fn entries(&self) -> &[Category] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: CategoryId) -> bool {
        (id as usize) < self.entries.len()
    }

    pub fn name(&self, id: CategoryId) -> Option<&str> {
        self.entries.get(id as usize).map(|c| c.name.as_str())
    }

    pub fn id_of(&self, name: &str) -> Option<CategoryId> {
        self.entries.iter().find(|c| c.name == name).map(|c| c.id)
    }

    pub fn ids(&self) -> impl Iterator<Item = CategoryId> + '_ {
        self.entries.iter().map(|c| c.id)
    }
}
