use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::PromptError;
use crate::corpus::EntityClass;

/// Role preambles share ids 1 to 3 and are mutually exclusive.
pub const ROLE_IDS: [u8; 3] = [1, 2, 3];
pub const CHAIN_OF_THOUGHT_ID: u8 = 4;
/// Organization-only definition paragraph.
pub const CONTEXT_ID: u8 = 5;

pub fn max_addition_id(class: EntityClass) -> u8 {
    match class {
        EntityClass::Individual => CHAIN_OF_THOUGHT_ID,
        EntityClass::Organization => CONTEXT_ID,
    }
}

/// A set of prompt additions applied on top of the base extraction prompt for one class.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptVariant {
    entity_class: EntityClass,
    additions: BTreeSet<u8>,
}

impl PromptVariant {
    pub fn base(entity_class: EntityClass) -> Self {
        Self {
            entity_class,
            additions: BTreeSet::new(),
        }
    }

    pub fn new(
        entity_class: EntityClass,
        additions: impl IntoIterator<Item = u8>,
    ) -> Result<Self, PromptError> {
        let additions: BTreeSet<u8> = additions.into_iter().collect();
        let max = max_addition_id(entity_class);
        if let Some(&bad) = additions.iter().find(|&&id| id == 0 || id > max) {
            return Err(PromptError::UnknownAddition {
                id: bad,
                entity_class,
            });
        }
        let roles: Vec<u8> = additions
            .iter()
            .copied()
            .filter(|id| ROLE_IDS.contains(id))
            .collect();
        if roles.len() > 1 {
            return Err(PromptError::RoleConflict(roles));
        }
        Ok(Self {
            entity_class,
            additions,
        })
    }

    pub fn entity_class(&self) -> EntityClass {
        self.entity_class
    }

    pub fn additions(&self) -> &BTreeSet<u8> {
        &self.additions
    }

    pub fn role(&self) -> Option<u8> {
        self.additions
            .iter()
            .copied()
            .find(|id| ROLE_IDS.contains(id))
    }

    pub fn has(&self, id: u8) -> bool {
        self.additions.contains(&id)
    }

    /// Table label: `-` for the base prompt, otherwise `1),4),5)` style.
    pub fn label(&self) -> String {
        if self.additions.is_empty() {
            return "-".to_string();
        }
        self.additions
            .iter()
            .map(|id| format!("{id})"))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn parse_label(entity_class: EntityClass, label: &str) -> Result<Self, PromptError> {
        let label = label.trim();
        if label == "-" || label.is_empty() {
            return Ok(Self::base(entity_class));
        }
        let ids = label
            .split(',')
            .map(|tok| {
                tok.trim()
                    .strip_suffix(')')
                    .and_then(|n| n.trim().parse::<u8>().ok())
                    .ok_or_else(|| PromptError::BadLabel(label.to_string()))
            })
            .collect::<Result<Vec<u8>, _>>()?;
        Self::new(entity_class, ids)
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Builds the ablation grid for one class: canonical labels, duplicates removed, request
/// order kept.
pub fn enumerate_variants(
    entity_class: EntityClass,
    requested: &[Vec<u8>],
) -> Result<Vec<PromptVariant>, PromptError> {
    let mut out: Vec<PromptVariant> = Vec::new();
    for set in requested {
        let variant = PromptVariant::new(entity_class, set.iter().copied())?;
        if !out.contains(&variant) {
            out.push(variant);
        }
    }
    Ok(out)
}
