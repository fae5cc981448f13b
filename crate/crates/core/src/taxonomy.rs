//! Class tables for the two segmentation tasks and the hierarchy rule that links them.
//!
//! A [`ClassTaxonomy`] maps contiguous class indices to names, names the label value that
//! is excluded from evaluation (`ignore_index`), lists which classes enter the mean IoU,
//! and optionally carries a `keep_set`: the classes of a *parent* taxonomy outside of which
//! this taxonomy's non-background classes may not appear. The damage taxonomy uses it to
//! state that damage only lives on columns.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_IGNORE_INDEX: u8 = 255;

/// Component-task class indices.
pub mod component {
    pub const NON_BRIDGE: u8 = 0;
    pub const SLAB: u8 = 1;
    pub const BEAM: u8 = 2;
    pub const COLUMN: u8 = 3;
    pub const NONSTRUCTURAL: u8 = 4;
    pub const RAIL: u8 = 5;
    pub const SLEEPER: u8 = 6;
    pub const NUM_CLASSES: usize = 7;
}

/// Damage-task class indices.
pub mod damage {
    pub const NON_DAMAGE: u8 = 0;
    pub const CONCRETE_DAMAGE: u8 = 1;
    pub const EXPOSED_REBAR: u8 = 2;
    pub const NUM_CLASSES: usize = 3;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Component,
    Damage,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Component => "component",
            Task::Damage => "damage",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "component" => Ok(Task::Component),
            "damage" => Ok(Task::Damage),
            other => Err(Error::invalid(format!(
                "unknown task `{other}` (expected component or damage)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassEntry {
    pub index: u8,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTaxonomy {
    task_name: String,
    classes: Vec<ClassEntry>,
    #[serde(default = "default_ignore")]
    ignore_index: u8,
    eval_classes: BTreeSet<u8>,
    #[serde(default)]
    keep_set: Option<BTreeSet<u8>>,
}

fn default_ignore() -> u8 {
    DEFAULT_IGNORE_INDEX
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTaxonomy", into = "RawTaxonomy")]
pub struct ClassTaxonomy {
    task_name: String,
    classes: Vec<ClassEntry>,
    ignore_index: u8,
    eval_classes: BTreeSet<u8>,
    keep_set: Option<BTreeSet<u8>>,
}

impl TryFrom<RawTaxonomy> for ClassTaxonomy {
    type Error = Error;

    fn try_from(raw: RawTaxonomy) -> Result<Self> {
        ClassTaxonomy::new(
            raw.task_name,
            raw.classes.into_iter().map(|c| (c.index, c.name)).collect(),
            raw.ignore_index,
            raw.eval_classes,
            raw.keep_set,
        )
    }
}

impl From<ClassTaxonomy> for RawTaxonomy {
    fn from(t: ClassTaxonomy) -> Self {
        RawTaxonomy {
            task_name: t.task_name,
            classes: t.classes,
            ignore_index: t.ignore_index,
            eval_classes: t.eval_classes,
            keep_set: t.keep_set,
        }
    }
}

impl ClassTaxonomy {
    pub fn new(
        task_name: impl Into<String>,
        classes: Vec<(u8, String)>,
        ignore_index: u8,
        eval_classes: BTreeSet<u8>,
        keep_set: Option<BTreeSet<u8>>,
    ) -> Result<Self> {
        let task_name = task_name.into();
        if classes.is_empty() {
            return Err(Error::Config(format!("taxonomy `{task_name}` has no classes")));
        }
        for (pos, (index, _)) in classes.iter().enumerate() {
            if usize::from(*index) != pos {
                return Err(Error::Config(format!(
                    "taxonomy `{task_name}`: class indices must be contiguous from 0, found {index} at position {pos}"
                )));
            }
        }
        if usize::from(ignore_index) < classes.len() {
            return Err(Error::Config(format!(
                "taxonomy `{task_name}`: ignore_index {ignore_index} collides with a class index"
            )));
        }
        if let Some(bad) = eval_classes.iter().find(|&&c| usize::from(c) >= classes.len()) {
            return Err(Error::Config(format!(
                "taxonomy `{task_name}`: eval class {bad} is not a class index"
            )));
        }
        if eval_classes.contains(&0) {
            return Err(Error::Config(format!(
                "taxonomy `{task_name}`: background class 0 cannot be evaluated"
            )));
        }
        if matches!(&keep_set, Some(k) if k.is_empty()) {
            return Err(Error::Config(format!(
                "taxonomy `{task_name}`: keep_set must not be empty when present"
            )));
        }
        Ok(ClassTaxonomy {
            task_name,
            classes: classes
                .into_iter()
                .map(|(index, name)| ClassEntry { index, name })
                .collect(),
            ignore_index,
            eval_classes,
            keep_set,
        })
    }

    /// Bridge components. The "Other" category is folded into the ignore index.
    pub fn bridge_components() -> Self {
        let names = [
            "non-bridge",
            "slab",
            "beam",
            "column",
            "nonstructural",
            "rail",
            "sleeper",
        ];
        ClassTaxonomy::new(
            Task::Component.as_str(),
            names
                .iter()
                .enumerate()
                .map(|(i, n)| (i as u8, n.to_string()))
                .collect(),
            DEFAULT_IGNORE_INDEX,
            (1..=6).collect(),
            None,
        )
        .expect("built-in component taxonomy is valid")
    }

    /// Damage classes, constrained to the column class of [`ClassTaxonomy::bridge_components`].
    pub fn bridge_damage() -> Self {
        ClassTaxonomy::new(
            Task::Damage.as_str(),
            vec![
                (damage::NON_DAMAGE, "non-damage".into()),
                (damage::CONCRETE_DAMAGE, "concrete-damage".into()),
                (damage::EXPOSED_REBAR, "exposed-rebar".into()),
            ],
            DEFAULT_IGNORE_INDEX,
            [damage::CONCRETE_DAMAGE, damage::EXPOSED_REBAR].into(),
            Some([component::COLUMN].into()),
        )
        .expect("built-in damage taxonomy is valid")
    }

    pub fn task_name(&self) -> &str {
        &self.task_name
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[ClassEntry] {
        &self.classes
    }

    pub fn class_name(&self, index: u8) -> Option<&str> {
        self.classes.get(usize::from(index)).map(|c| c.name.as_str())
    }

    pub fn ignore_index(&self) -> u8 {
        self.ignore_index
    }

    pub fn eval_classes(&self) -> &BTreeSet<u8> {
        &self.eval_classes
    }

    pub fn keep_set(&self) -> Option<&BTreeSet<u8>> {
        self.keep_set.as_ref()
    }

    pub fn is_class(&self, value: u8) -> bool {
        usize::from(value) < self.classes.len()
    }

    /// A label value is legal if it names a class or is the ignore index.
    pub fn is_legal_label(&self, value: u8) -> bool {
        self.is_class(value) || value == self.ignore_index
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("taxonomy: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("taxonomy serializes")
    }
}
