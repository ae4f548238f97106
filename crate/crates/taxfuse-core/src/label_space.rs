//! Label vocabularies and source-to-target taxonomy mappings.
//!
//! A [`LabelSpace`] is an ordered list of class names with contiguous ids and
//! an optional ignore id that is never a member class. A [`TaxonomyMapping`]
//! relates a coarse source space to a finer target space: every source class
//! owns an ordered, non-empty list of candidate target classes, the first of
//! which is its default target. Classes that exist only in the target space
//! (novel classes) are routed according to a [`NovelPolicy`].
//!
//! The config file keeps a reserved entry key, `"unlabeled"`, for candidates
//! attached to the source ignore id rather than to a member class. If the
//! source space has a member class literally named `unlabeled`, the key binds
//! to that class and the reserved row is unavailable.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type ClassId = u16;

/// Conventional ignore id used by the shipped configs.
pub const IGNORE_ID: ClassId = 255;

// ── label spaces ──

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassDef {
    pub id: ClassId,
    pub name: String,
}

/// Serialized form of a label space.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ignore_id: Option<ClassId>,
    pub classes: Vec<ClassDef>,
}

/// A named, ordered set of classes with contiguous ids starting at 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSpace {
    name: String,
    class_names: Vec<String>,
    ignore_id: Option<ClassId>,
    index: HashMap<String, ClassId>,
}

impl LabelSpace {
    pub fn new<S: Into<String>>(
        name: S,
        class_names: Vec<String>,
        ignore_id: Option<ClassId>,
    ) -> Result<Self> {
        let space = Self::build(name.into(), class_names, ignore_id)?;
        Ok(space)
    }

    fn build(name: String, class_names: Vec<String>, ignore_id: Option<ClassId>) -> Result<Self> {
        let mut report = ValidationReport::default();
        check_space_parts(&name, &class_names, ignore_id, &mut report);
        if !report.is_empty() {
            return Err(Error::Validation(report));
        }
        let index = class_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as ClassId))
            .collect();
        Ok(Self {
            name,
            class_names,
            ignore_id,
            index,
        })
    }

    pub fn from_config(config: &SpaceConfig) -> Result<Self> {
        let names = space_config_names(config)?;
        Self::build(config.name.clone(), names, config.ignore_id)
    }

    pub fn to_config(&self) -> SpaceConfig {
        SpaceConfig {
            name: self.name.clone(),
            ignore_id: self.ignore_id,
            classes: self
                .class_names
                .iter()
                .enumerate()
                .map(|(i, n)| ClassDef {
                    id: i as ClassId,
                    name: n.clone(),
                })
                .collect(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.class_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_names.is_empty()
    }

    pub fn ignore_id(&self) -> Option<ClassId> {
        self.ignore_id
    }

    /// Member ids in ascending order. Does not include the ignore id.
    pub fn ids(&self) -> impl Iterator<Item = ClassId> + '_ {
        (0..self.class_names.len()).map(|i| i as ClassId)
    }

    pub fn contains_id(&self, id: ClassId) -> bool {
        usize::from(id) < self.class_names.len()
    }

    pub fn is_ignore(&self, id: ClassId) -> bool {
        self.ignore_id == Some(id)
    }

    pub fn name_of(&self, id: ClassId) -> Result<&str> {
        self.class_names
            .get(usize::from(id))
            .map(String::as_str)
            .ok_or_else(|| Error::UnknownClassId {
                space: self.name.clone(),
                id: u32::from(id),
            })
    }

    pub fn id_of(&self, name: &str) -> Result<ClassId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownClassName {
                space: self.name.clone(),
                name: name.to_string(),
            })
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }
}

fn space_config_names(config: &SpaceConfig) -> Result<Vec<String>> {
    let mut names = vec![None; config.classes.len()];
    for def in &config.classes {
        let slot = names.get_mut(usize::from(def.id)).ok_or_else(|| {
            Error::Config(format!(
                "space {:?}: class id {} out of range for {} classes",
                config.name,
                def.id,
                config.classes.len()
            ))
        })?;
        if slot.is_some() {
            return Err(Error::Config(format!(
                "space {:?}: duplicate class id {}",
                config.name, def.id
            )));
        }
        *slot = Some(def.name.clone());
    }
    Ok(names.into_iter().map(|n| n.unwrap()).collect())
}

fn check_space_parts(
    name: &str,
    class_names: &[String],
    ignore_id: Option<ClassId>,
    report: &mut ValidationReport,
) {
    if name.is_empty() {
        report.push(Violation::Space {
            space: "<unnamed>".into(),
            problem: "space name is empty".into(),
        });
    }
    if class_names.is_empty() {
        report.push(Violation::Space {
            space: name.to_string(),
            problem: "space has no classes".into(),
        });
    }
    let mut seen = HashSet::new();
    for (i, class) in class_names.iter().enumerate() {
        if class.is_empty() {
            report.push(Violation::Space {
                space: name.to_string(),
                problem: format!("class id {i} has an empty name"),
            });
        }
        if !seen.insert(class.as_str()) {
            report.push(Violation::Space {
                space: name.to_string(),
                problem: format!("duplicate class name {class:?}"),
            });
        }
    }
    if let Some(ig) = ignore_id {
        if usize::from(ig) < class_names.len() {
            report.push(Violation::Space {
                space: name.to_string(),
                problem: format!("ignore id {ig} collides with a member class"),
            });
        }
    }
}

// ── taxonomy mappings ──

/// How target classes that no source class maps to are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NovelPolicy {
    /// Novel targets become candidates of every source class.
    AppendToAll,
    /// Novel targets are candidates only for regions whose majority source
    /// label is the ignore id.
    UnlabeledRow,
}

pub const UNLABELED_KEY: &str = "unlabeled";

/// Serialized form of a taxonomy mapping. Entries are keyed by source class
/// name; target lists are ordered and the first element is the default.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaxonomyConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    pub source_space: SpaceConfig,
    pub target_space: SpaceConfig,
    pub entries: BTreeMap<String, Vec<String>>,
    pub novel_policy: NovelPolicy,
    #[serde(default)]
    pub known_split: Vec<String>,
}

impl TaxonomyConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Checks every structural invariant without bailing at the first
    /// problem. An empty report means [`TaxonomyMapping::from_config`] will
    /// succeed.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        check_space_config(&self.source_space, &mut report);
        check_space_config(&self.target_space, &mut report);
        if !report.is_empty() {
            // Name lookups below need well-formed spaces.
            return report;
        }
        let source = LabelSpace::from_config(&self.source_space).expect("checked above");
        let target = LabelSpace::from_config(&self.target_space).expect("checked above");

        let unlabeled_is_member = source.id_of(UNLABELED_KEY).is_ok();
        let mut covered: HashSet<&str> = HashSet::new();
        let mut reached: BTreeSet<ClassId> = BTreeSet::new();
        for (key, targets) in &self.entries {
            let reserved = key == UNLABELED_KEY && !unlabeled_is_member;
            if !reserved && source.id_of(key).is_err() {
                report.push(Violation::DanglingEntryKey { name: key.clone() });
                continue;
            }
            if !reserved {
                covered.insert(key.as_str());
                // An empty reserved row is equivalent to an absent one; an
                // empty member entry would leave the class with no default.
                if targets.is_empty() {
                    report.push(Violation::EmptyEntry { class: key.clone() });
                }
            }
            let mut seen = HashSet::new();
            for t in targets {
                match target.id_of(t) {
                    Ok(id) => {
                        reached.insert(id);
                    }
                    Err(_) => report.push(Violation::DanglingTarget {
                        entry: key.clone(),
                        name: t.clone(),
                    }),
                }
                if !seen.insert(t.as_str()) {
                    report.push(Violation::DuplicateTarget {
                        entry: key.clone(),
                        name: t.clone(),
                    });
                }
            }
        }
        for class in source.class_names() {
            if !covered.contains(class.as_str()) {
                report.push(Violation::MissingEntry {
                    class: class.clone(),
                });
            }
        }
        for id in target.ids() {
            if !reached.contains(&id) {
                report.push(Violation::UnreachableTarget {
                    name: target.name_of(id).unwrap().to_string(),
                });
            }
        }
        let mut seen_split = HashSet::new();
        for name in &self.known_split {
            if target.id_of(name).is_err() {
                report.push(Violation::UnknownSplitName { name: name.clone() });
            } else if !seen_split.insert(name.as_str()) {
                report.push(Violation::DuplicateSplitName { name: name.clone() });
            }
        }
        report
    }
}

fn check_space_config(config: &SpaceConfig, report: &mut ValidationReport) {
    match space_config_names(config) {
        Ok(names) => check_space_parts(&config.name, &names, config.ignore_id, report),
        Err(e) => report.push(Violation::Space {
            space: config.name.clone(),
            problem: e.to_string(),
        }),
    }
}

/// A validated mapping with the novel policy already applied.
#[derive(Debug, Clone)]
pub struct TaxonomyMapping {
    source: LabelSpace,
    target: LabelSpace,
    raw: TaxonomyConfig,
    /// Candidate target ids per source id, policy-expanded.
    expanded: Vec<Vec<ClassId>>,
    /// Candidates for regions whose majority source label is the ignore id:
    /// the reserved "unlabeled" row as configured. Empty when the config has
    /// no reserved row.
    unlabeled_row: Vec<ClassId>,
    novel_policy: NovelPolicy,
    known_split: BTreeSet<ClassId>,
}

impl TaxonomyMapping {
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_config(TaxonomyConfig::load(path)?)
    }

    pub fn from_config(raw: TaxonomyConfig) -> Result<Self> {
        let report = raw.validate();
        if !report.is_empty() {
            return Err(Error::Validation(report));
        }
        let source = LabelSpace::from_config(&raw.source_space)?;
        let target = LabelSpace::from_config(&raw.target_space)?;

        let unlabeled_is_member = source.id_of(UNLABELED_KEY).is_ok();
        let mut per_source: Vec<Vec<ClassId>> = vec![Vec::new(); source.len()];
        let mut reserved_row: Vec<ClassId> = Vec::new();
        for (key, targets) in &raw.entries {
            let ids: Vec<ClassId> = targets.iter().map(|t| target.id_of(t).unwrap()).collect();
            if key == UNLABELED_KEY && !unlabeled_is_member {
                reserved_row = ids;
            } else {
                per_source[usize::from(source.id_of(key).unwrap())] = ids;
            }
        }

        let mut mapped: BTreeSet<ClassId> = per_source.iter().flatten().copied().collect();
        let (expanded, unlabeled_row) = match raw.novel_policy {
            NovelPolicy::UnlabeledRow => (per_source, reserved_row),
            NovelPolicy::AppendToAll => {
                // Novel order: reserved row first, then remaining unmapped
                // targets by ascending id. Appending is idempotent because
                // every novel target is already a candidate everywhere after
                // one pass.
                let mut novel: Vec<ClassId> = Vec::new();
                for id in &reserved_row {
                    if mapped.insert(*id) {
                        novel.push(*id);
                    }
                }
                for id in target.ids() {
                    if mapped.insert(id) {
                        novel.push(id);
                    }
                }
                for list in &mut per_source {
                    let have: HashSet<ClassId> = list.iter().copied().collect();
                    list.extend(novel.iter().copied().filter(|id| !have.contains(id)));
                }
                // The reserved row keeps serving ignore-majority regions.
                (per_source, reserved_row)
            }
        };

        let known_split = raw
            .known_split
            .iter()
            .map(|n| target.id_of(n).unwrap())
            .collect();
        let novel_policy = raw.novel_policy;

        Ok(Self {
            source,
            target,
            raw,
            expanded,
            unlabeled_row,
            novel_policy,
            known_split,
        })
    }

    /// Identity mapping over one space: every class maps to itself and the
    /// split marks everything known.
    pub fn identity(space: &LabelSpace) -> Result<Self> {
        let config = TaxonomyConfig {
            comment: None,
            source_space: space.to_config(),
            target_space: space.to_config(),
            entries: space
                .class_names()
                .iter()
                .map(|n| (n.clone(), vec![n.clone()]))
                .collect(),
            novel_policy: NovelPolicy::UnlabeledRow,
            known_split: space.class_names().to_vec(),
        };
        Self::from_config(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    /// Serializes the entries as loaded, not the policy-expanded form, so a
    /// load/save cycle is canonically byte-equivalent.
    pub fn to_json_string(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&self.raw)?;
        s.push('\n');
        Ok(s)
    }

    pub fn source(&self) -> &LabelSpace {
        &self.source
    }

    pub fn target(&self) -> &LabelSpace {
        &self.target
    }

    pub fn novel_policy(&self) -> NovelPolicy {
        self.novel_policy
    }

    pub fn config(&self) -> &TaxonomyConfig {
        &self.raw
    }

    /// Ordered candidate targets for a source member class.
    pub fn targets_for_source(&self, id: ClassId) -> Result<&[ClassId]> {
        self.expanded
            .get(usize::from(id))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownClassId {
                space: self.source.name().to_string(),
                id: u32::from(id),
            })
    }

    /// Candidates for regions whose majority source label is the ignore id.
    pub fn unlabeled_targets(&self) -> &[ClassId] {
        &self.unlabeled_row
    }

    /// The first candidate: where a source class lands when no region
    /// reassigns it. Source ignore maps to target ignore.
    pub fn default_target_of(&self, id: ClassId) -> Result<ClassId> {
        if self.source.is_ignore(id) {
            return self.target.ignore_id().ok_or_else(|| {
                Error::Config(format!(
                    "target space {:?} has no ignore id to receive source-ignore pixels",
                    self.target.name()
                ))
            });
        }
        Ok(self.targets_for_source(id)?[0])
    }

    pub fn known_split(&self) -> &BTreeSet<ClassId> {
        &self.known_split
    }

    pub fn is_known(&self, target_id: ClassId) -> bool {
        self.known_split.contains(&target_id)
    }

    /// Re-checks the stored config. Empty for any mapping built through
    /// [`from_config`](Self::from_config).
    pub fn validate(&self) -> ValidationReport {
        self.raw.validate()
    }
}

// ── validation ──

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Space { space: String, problem: String },
    MissingEntry { class: String },
    DanglingEntryKey { name: String },
    DanglingTarget { entry: String, name: String },
    EmptyEntry { class: String },
    DuplicateTarget { entry: String, name: String },
    UnreachableTarget { name: String },
    UnknownSplitName { name: String },
    DuplicateSplitName { name: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Space { space, problem } => write!(f, "space {space:?}: {problem}"),
            Violation::MissingEntry { class } => {
                write!(f, "source class {class:?} has no mapping entry")
            }
            Violation::DanglingEntryKey { name } => {
                write!(f, "entry key {name:?} is not a source class")
            }
            Violation::DanglingTarget { entry, name } => {
                write!(f, "entry {entry:?} names unknown target class {name:?}")
            }
            Violation::EmptyEntry { class } => {
                write!(f, "entry {class:?} has an empty target list")
            }
            Violation::DuplicateTarget { entry, name } => {
                write!(f, "entry {entry:?} lists target {name:?} more than once")
            }
            Violation::UnreachableTarget { name } => {
                write!(f, "target class {name:?} is not reachable from any entry")
            }
            Violation::UnknownSplitName { name } => {
                write!(f, "known_split names unknown target class {name:?}")
            }
            Violation::DuplicateSplitName { name } => {
                write!(f, "known_split lists {name:?} more than once")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn push(&mut self, v: Violation) {
        self.violations.push(v);
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "  - {v}")?;
        }
        Ok(())
    }
}

// ── context descriptions ──

/// Per-class natural-language descriptions used to build text features.
/// A class may be missing here; coverage is enforced where the bank is built.
#[derive(Debug, Clone)]
pub struct ContextDescriptionSet {
    space_name: String,
    by_class: Vec<Option<Vec<String>>>,
}

impl ContextDescriptionSet {
    pub fn load(path: &Path, space: &LabelSpace) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let map: BTreeMap<String, Vec<String>> = serde_json::from_str(&text)?;
        Self::from_map(&map, space)
    }

    pub fn from_map(map: &BTreeMap<String, Vec<String>>, space: &LabelSpace) -> Result<Self> {
        let mut by_class = vec![None; space.len()];
        for (name, descs) in map {
            let id = space.id_of(name)?;
            if descs.is_empty() {
                return Err(Error::Config(format!(
                    "class {name:?} has an empty description list"
                )));
            }
            if descs.iter().any(|d| d.is_empty()) {
                return Err(Error::Config(format!(
                    "class {name:?} has an empty description string"
                )));
            }
            by_class[usize::from(id)] = Some(descs.clone());
        }
        Ok(Self {
            space_name: space.name().to_string(),
            by_class,
        })
    }

    /// Every class described by its own name alone.
    pub fn identity(space: &LabelSpace) -> Self {
        Self {
            space_name: space.name().to_string(),
            by_class: space
                .class_names()
                .iter()
                .map(|n| Some(vec![n.clone()]))
                .collect(),
        }
    }

    pub fn save(&self, path: &Path, space: &LabelSpace) -> Result<()> {
        let map: BTreeMap<&str, &Vec<String>> = self
            .by_class
            .iter()
            .enumerate()
            .filter_map(|(i, d)| {
                d.as_ref()
                    .map(|descs| (space.name_of(i as ClassId).unwrap(), descs))
            })
            .collect();
        let mut s = serde_json::to_string_pretty(&map)?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn space_name(&self) -> &str {
        &self.space_name
    }

    pub fn get(&self, id: ClassId) -> Option<&[String]> {
        self.by_class
            .get(usize::from(id))
            .and_then(|d| d.as_deref())
    }

    /// Ids with no description set.
    pub fn missing(&self) -> Vec<ClassId> {
        self.by_class
            .iter()
            .enumerate()
            .filter(|(_, d)| d.is_none())
            .map(|(i, _)| i as ClassId)
            .collect()
    }
}

/// Fills the documented request template for sourcing context descriptions
/// from a language model. `scene` situates the vocabulary, e.g. "street
/// scene".
pub fn emit_context_prompt(class_name: &str, scene: &str) -> Result<String> {
    if class_name.is_empty() {
        return Err(Error::Config("class name is empty".into()));
    }
    if scene.is_empty() {
        return Err(Error::Config("scene description is empty".into()));
    }
    Ok(format!(
        "Generate new class names within the context of {scene} semantic segmentation, \
         using the original class name as the head noun. Use synonyms or subcategories of \
         the original class that make sense within this context, and if the class has \
         multiple meanings, add specific context to avoid ambiguity. Please provide the \
         original class names along with context names.\n\nClass: {class_name}\n"
    ))
}

/// Canonical JSON: object keys sorted, two-space indentation, trailing
/// newline. Two config files are equivalent when their canonical forms match.
pub fn canonical_json(text: &str) -> Result<String> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let mut s = serde_json::to_string_pretty(&value)?;
    s.push('\n');
    Ok(s)
}
