//! Decision trees over hierarchical test conditions.
//!
//! An experiment is a root-to-leaf path through a tree of test conditions
//! (sample, test type, strain schedule, ...). Each level offers a finite set
//! of labeled choices; declarative rules forbid combinations that make no
//! physical sense (e.g. unloading past the load target). The tree is built
//! eagerly so that every internal vertex is guaranteed at least one child.
//!
//! Tree definitions load from TOML ([`TreeConfig`]); the shipped `bulk`,
//! `interface`, and `toy` trees come from `configs/`.

use std::collections::HashSet;
use std::fmt;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Label of the root vertex (no decisions taken yet).
pub const ROOT_LABEL: &str = "Null";

/// Separator between choice labels in a vertex label.
pub const LABEL_SEPARATOR: char = '_';

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("tree has no levels")]
    NoLevels,
    #[error("level {level:?} has no choices")]
    EmptyLevel { level: String },
    #[error("duplicate level name {level:?}")]
    DuplicateLevel { level: String },
    #[error("duplicate choice {choice:?} in level {level:?}")]
    DuplicateChoice { level: String, choice: String },
    #[error("rule on level {level:?} references {referenced:?}, which is not an earlier level")]
    BadRuleReference { level: String, referenced: String },
    #[error("rule on level {level:?} compares against {referenced:?}, which has non-numeric choices")]
    NonNumericComparison { level: String, referenced: String },
    #[error("rule on level {level:?} names unknown choice {choice:?} of level {referenced:?}")]
    UnknownRuleChoice {
        level: String,
        referenced: String,
        choice: String,
    },
    #[error("every choice of level {level:?} is forbidden after {prefix:?}")]
    DeadEnd { level: String, prefix: String },
    #[error("no level named {level:?}")]
    UnknownLevel { level: String },
    #[error("no choice labeled {choice:?} at level {level:?}")]
    UnknownChoice { level: String, choice: String },
    #[error("choice {choice:?} is forbidden after {prefix:?}")]
    ForbiddenChoice { prefix: String, choice: String },
    #[error("prefix is already at leaf depth {depth}")]
    AtLeafDepth { depth: usize },
    #[error("expected {expected} decisions for a leaf, got {got}")]
    NotALeaf { expected: usize, got: usize },
    #[error("no built-in tree named {name:?}")]
    UnknownBuiltin { name: String },
    #[error("invalid tree config: {0}")]
    Config(#[from] toml::de::Error),
}

/// Semantic role of a level, used when compiling a leaf into a runnable
/// loading program. Levels without a role are opaque to the lab.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LevelRole {
    SamplePressure,
    SampleVoidRatio,
    TestType,
    LoadTarget,
    UnloadTarget,
    ReloadTarget,
}

/// Restriction on the choices of a level, conditioned on earlier decisions.
///
/// `less-than`/`greater-than` compare numeric payloads and let `NaN` pass
/// (an absent stage is never ordered against anything); a `NaN` on the
/// referenced level forces `NaN` here, since a stage cannot follow an absent
/// one. `require-nan`/`require-value` gate on the label selected earlier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Rule {
    LessThan { level: String },
    GreaterThan { level: String },
    RequireNan { level: String, when_in: Vec<String> },
    RequireValue { level: String, when_in: Vec<String> },
}

impl Rule {
    fn referenced_level(&self) -> &str {
        match self {
            Rule::LessThan { level }
            | Rule::GreaterThan { level }
            | Rule::RequireNan { level, .. }
            | Rule::RequireValue { level, .. } => level,
        }
    }
}

/// One level of a tree config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<LevelRole>,
    pub choices: Vec<String>,
    #[serde(rename = "rule", default, skip_serializing_if = "Vec::is_empty")]
    pub rules: Vec<Rule>,
}

/// Serializable tree definition (TOML on disk).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub name: String,
    #[serde(rename = "level")]
    pub levels: Vec<LevelConfig>,
}

/// Parsed payload of a choice label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Payload {
    /// Numeric value; `%` labels are fractions, `kPa` labels stay in kPa.
    Value(f64),
    /// Explicit "stage absent" marker.
    Nan,
    /// Non-numeric label (e.g. a test type).
    Text,
}

impl Payload {
    /// Parse a choice label. Recognized numeric suffixes: `%` (percent,
    /// stored as a fraction), `kPa`, `mm` (value kept as written).
    pub fn parse(label: &str) -> Payload {
        let t = label.trim();
        if t.eq_ignore_ascii_case("nan") {
            return Payload::Nan;
        }
        if let Some(stripped) = t.strip_suffix('%') {
            if let Ok(v) = stripped.trim().parse::<f64>() {
                return Payload::Value(v / 100.0);
            }
        }
        for suffix in ["kPa", "mm"] {
            if let Some(stripped) = t.strip_suffix(suffix) {
                if let Ok(v) = stripped.trim().parse::<f64>() {
                    return Payload::Value(v);
                }
            }
        }
        match t.parse::<f64>() {
            Ok(v) => Payload::Value(v),
            Err(_) => Payload::Text,
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Payload::Value(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_nan(self) -> bool {
        matches!(self, Payload::Nan)
    }
}

/// A labeled choice with its parsed payload.
#[derive(Debug, Clone)]
pub struct Choice {
    pub label: String,
    pub payload: Payload,
}

/// Rule with level and choice references resolved to indices.
#[derive(Debug, Clone)]
enum CompiledRule {
    LessThan { level: usize },
    GreaterThan { level: usize },
    RequireNan { level: usize, when_in: Vec<usize> },
    RequireValue { level: usize, when_in: Vec<usize> },
}

/// Compiled level: choices plus the rules constraining them.
#[derive(Debug, Clone)]
pub struct Level {
    pub name: String,
    pub role: Option<LevelRole>,
    pub choices: Vec<Choice>,
    rules: Vec<CompiledRule>,
}

/// Vertex of the built tree. The root is vertex 0.
#[derive(Debug, Clone)]
pub struct Vertex {
    pub parent: Option<usize>,
    pub depth: usize,
    /// Choice index (within level `depth - 1`) of the edge from the parent.
    pub choice: Option<usize>,
    pub children: Vec<usize>,
    /// Underscore-joined path label; [`ROOT_LABEL`] at the root.
    pub label: String,
}

/// A fully specified experiment: one leaf of one tree.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Name of the tree the decisions belong to.
    pub tree: String,
    /// Choice index per level, root to leaf.
    pub decisions: Vec<usize>,
    /// Leaf label (underscore-joined choice labels).
    pub label: String,
}

impl fmt::Display for ExperimentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.tree, self.label)
    }
}

/// Immutable decision tree with all restrictions applied.
#[derive(Debug, Clone)]
pub struct DecisionTree {
    name: String,
    levels: Vec<Level>,
    vertices: Vec<Vertex>,
    leaves: Vec<usize>,
}

impl DecisionTree {
    /// Build a tree from a validated config.
    ///
    /// Fails if any reachable prefix has no admissible choice at the next
    /// level: the game protocol requires every non-leaf vertex to have at
    /// least one child.
    pub fn build(config: &TreeConfig) -> Result<Self, TreeError> {
        let levels = compile_levels(config)?;
        let mut vertices = vec![Vertex {
            parent: None,
            depth: 0,
            choice: None,
            children: Vec::new(),
            label: ROOT_LABEL.to_string(),
        }];
        let mut frontier = vec![0usize];
        let mut prefix: Vec<usize> = Vec::new();
        for (li, level) in levels.iter().enumerate() {
            let mut next = Vec::new();
            for &v in &frontier {
                collect_prefix(&vertices, v, &mut prefix);
                let allowed = allowed_choices(&levels, li, &prefix);
                if allowed.is_empty() {
                    return Err(TreeError::DeadEnd {
                        level: level.name.clone(),
                        prefix: vertices[v].label.clone(),
                    });
                }
                for ci in allowed {
                    let label = join_label(&vertices[v].label, &level.choices[ci].label);
                    let id = vertices.len();
                    vertices.push(Vertex {
                        parent: Some(v),
                        depth: li + 1,
                        choice: Some(ci),
                        children: Vec::new(),
                        label,
                    });
                    vertices[v].children.push(id);
                    next.push(id);
                }
            }
            frontier = next;
        }
        Ok(Self {
            name: config.name.clone(),
            levels,
            vertices,
            leaves: frontier,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self, TreeError> {
        let config: TreeConfig = toml::from_str(text)?;
        Self::build(&config)
    }

    /// One of the shipped trees: `bulk`, `interface`, or `toy`.
    pub fn builtin(name: &str) -> Result<Self, TreeError> {
        let text = match name {
            "bulk" => include_str!("../configs/bulk.toml"),
            "interface" => include_str!("../configs/interface.toml"),
            "toy" => include_str!("../configs/toy.toml"),
            _ => {
                return Err(TreeError::UnknownBuiltin {
                    name: name.to_string(),
                })
            }
        };
        Self::from_toml(text)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    /// Number of levels; every leaf sits at exactly this depth.
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Largest choice count over all levels.
    pub fn max_choices(&self) -> usize {
        self.levels.iter().map(|l| l.choices.len()).max().unwrap_or(0)
    }

    pub fn vertex(&self, id: usize) -> &Vertex {
        &self.vertices[id]
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn root(&self) -> usize {
        0
    }

    /// Leaf vertex ids in deterministic (depth-first construction) order.
    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    /// Choice indices along the path from the root to `id`.
    pub fn decisions(&self, id: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.vertex(id).depth);
        collect_prefix(&self.vertices, id, &mut out);
        out
    }

    /// Walk from the root by choice indices; errors on forbidden branches.
    pub fn descend(&self, decisions: &[usize]) -> Result<usize, TreeError> {
        let mut v = self.root();
        for (li, &ci) in decisions.iter().enumerate() {
            if li >= self.depth() {
                return Err(TreeError::AtLeafDepth { depth: self.depth() });
            }
            let level = &self.levels[li];
            if ci >= level.choices.len() {
                return Err(TreeError::UnknownChoice {
                    level: level.name.clone(),
                    choice: format!("#{ci}"),
                });
            }
            match self.vertices[v]
                .children
                .iter()
                .find(|&&c| self.vertices[c].choice == Some(ci))
            {
                Some(&c) => v = c,
                None => {
                    return Err(TreeError::ForbiddenChoice {
                        prefix: self.vertices[v].label.clone(),
                        choice: level.choices[ci].label.clone(),
                    })
                }
            }
        }
        Ok(v)
    }

    /// Admissible next-level choice indices below a vertex.
    pub fn legal_choices(&self, vertex: usize) -> Result<Vec<usize>, TreeError> {
        let v = self.vertex(vertex);
        if v.depth == self.depth() {
            return Err(TreeError::AtLeafDepth { depth: self.depth() });
        }
        Ok(v.children
            .iter()
            .map(|&c| self.vertices[c].choice.expect("non-root child has a choice"))
            .collect())
    }

    /// Admissible next-level labels after a (possibly partial) label prefix.
    pub fn legal_child_labels(&self, prefix: &[&str]) -> Result<Vec<String>, TreeError> {
        let v = self.descend(&self.decisions_from_labels(prefix)?)?;
        let li = self.vertex(v).depth;
        Ok(self
            .legal_choices(v)?
            .into_iter()
            .map(|ci| self.levels[li].choices[ci].label.clone())
            .collect())
    }

    /// Resolve choice labels (one per level, from the root) to indices.
    pub fn decisions_from_labels(&self, labels: &[&str]) -> Result<Vec<usize>, TreeError> {
        if labels.len() > self.depth() {
            return Err(TreeError::AtLeafDepth { depth: self.depth() });
        }
        labels
            .iter()
            .enumerate()
            .map(|(li, &label)| {
                let level = &self.levels[li];
                level
                    .choices
                    .iter()
                    .position(|c| c.label == label)
                    .ok_or_else(|| TreeError::UnknownChoice {
                        level: level.name.clone(),
                        choice: label.to_string(),
                    })
            })
            .collect()
    }

    /// Leaf vertex for a full label path.
    pub fn leaf_by_labels(&self, labels: &[&str]) -> Result<usize, TreeError> {
        if labels.len() != self.depth() {
            return Err(TreeError::NotALeaf {
                expected: self.depth(),
                got: labels.len(),
            });
        }
        self.descend(&self.decisions_from_labels(labels)?)
    }

    /// Leaf vertex for an underscore-joined leaf label.
    pub fn leaf_by_label(&self, label: &str) -> Result<usize, TreeError> {
        let parts: Vec<&str> = label.split(LABEL_SEPARATOR).collect();
        self.leaf_by_labels(&parts)
    }

    /// Experiment spec for a leaf vertex.
    pub fn experiment(&self, leaf: usize) -> Result<ExperimentSpec, TreeError> {
        let v = self.vertex(leaf);
        if v.depth != self.depth() {
            return Err(TreeError::NotALeaf {
                expected: self.depth(),
                got: v.depth,
            });
        }
        Ok(ExperimentSpec {
            tree: self.name.clone(),
            decisions: self.decisions(leaf),
            label: v.label.clone(),
        })
    }

    /// Payload of a decision within an experiment spec.
    pub fn spec_payload(&self, spec: &ExperimentSpec, level: usize) -> Payload {
        self.levels[level].choices[spec.decisions[level]].payload
    }

    /// Label selected at `level` by an experiment spec.
    pub fn spec_label<'a>(&'a self, spec: &ExperimentSpec, level: usize) -> &'a str {
        &self.levels[level].choices[spec.decisions[level]].label
    }

    /// Number of distinct experiment selections of size 1..=`max_paths`:
    /// `sum_k C(leaf_count, k)`. Exact; the interface tree overflows u64.
    pub fn combination_count(&self, max_paths: usize) -> BigUint {
        let n = self.leaf_count();
        let mut total = BigUint::from(0u32);
        let mut binom = BigUint::from(1u32);
        for k in 1..=max_paths.min(n) {
            // C(n, k) = C(n, k-1) * (n-k+1) / k
            binom = binom * BigUint::from(n - k + 1) / BigUint::from(k);
            total += &binom;
        }
        total
    }
}

fn join_label(prefix: &str, choice: &str) -> String {
    if prefix == ROOT_LABEL {
        choice.to_string()
    } else {
        format!("{prefix}{LABEL_SEPARATOR}{choice}")
    }
}

fn collect_prefix(vertices: &[Vertex], mut v: usize, out: &mut Vec<usize>) {
    out.clear();
    while let Some(ci) = vertices[v].choice {
        out.push(ci);
        v = vertices[v].parent.expect("non-root vertex has a parent");
    }
    out.reverse();
}

fn compile_levels(config: &TreeConfig) -> Result<Vec<Level>, TreeError> {
    if config.levels.is_empty() {
        return Err(TreeError::NoLevels);
    }
    let mut seen = HashSet::new();
    for lc in &config.levels {
        if !seen.insert(lc.name.as_str()) {
            return Err(TreeError::DuplicateLevel {
                level: lc.name.clone(),
            });
        }
    }
    let mut levels: Vec<Level> = Vec::with_capacity(config.levels.len());
    for (li, lc) in config.levels.iter().enumerate() {
        if lc.choices.is_empty() {
            return Err(TreeError::EmptyLevel {
                level: lc.name.clone(),
            });
        }
        let mut labels = HashSet::new();
        let choices: Vec<Choice> = lc
            .choices
            .iter()
            .map(|label| Choice {
                label: label.clone(),
                payload: Payload::parse(label),
            })
            .collect();
        for c in &choices {
            if !labels.insert(c.label.as_str()) {
                return Err(TreeError::DuplicateChoice {
                    level: lc.name.clone(),
                    choice: c.label.clone(),
                });
            }
        }
        let mut rules = Vec::with_capacity(lc.rules.len());
        for rule in &lc.rules {
            let referenced = rule.referenced_level();
            let target = config.levels[..li]
                .iter()
                .position(|other| other.name == referenced)
                .ok_or_else(|| TreeError::BadRuleReference {
                    level: lc.name.clone(),
                    referenced: referenced.to_string(),
                })?;
            rules.push(compile_rule(rule, lc, &choices, &levels[target], target)?);
        }
        levels.push(Level {
            name: lc.name.clone(),
            role: lc.role,
            choices,
            rules,
        });
    }
    Ok(levels)
}

fn compile_rule(
    rule: &Rule,
    lc: &LevelConfig,
    choices: &[Choice],
    target: &Level,
    target_idx: usize,
) -> Result<CompiledRule, TreeError> {
    let check_numeric = |level: &Level, name: &str| {
        if level
            .choices
            .iter()
            .any(|c| matches!(c.payload, Payload::Text))
        {
            Err(TreeError::NonNumericComparison {
                level: lc.name.clone(),
                referenced: name.to_string(),
            })
        } else {
            Ok(())
        }
    };
    let resolve_set = |when_in: &[String]| -> Result<Vec<usize>, TreeError> {
        when_in
            .iter()
            .map(|label| {
                target
                    .choices
                    .iter()
                    .position(|c| &c.label == label)
                    .ok_or_else(|| TreeError::UnknownRuleChoice {
                        level: lc.name.clone(),
                        referenced: target.name.clone(),
                        choice: label.clone(),
                    })
            })
            .collect()
    };
    match rule {
        Rule::LessThan { level } => {
            check_numeric(target, level)?;
            if choices.iter().any(|c| matches!(c.payload, Payload::Text)) {
                return Err(TreeError::NonNumericComparison {
                    level: lc.name.clone(),
                    referenced: level.clone(),
                });
            }
            Ok(CompiledRule::LessThan { level: target_idx })
        }
        Rule::GreaterThan { level } => {
            check_numeric(target, level)?;
            if choices.iter().any(|c| matches!(c.payload, Payload::Text)) {
                return Err(TreeError::NonNumericComparison {
                    level: lc.name.clone(),
                    referenced: level.clone(),
                });
            }
            Ok(CompiledRule::GreaterThan { level: target_idx })
        }
        Rule::RequireNan { when_in, .. } => Ok(CompiledRule::RequireNan {
            level: target_idx,
            when_in: resolve_set(when_in)?,
        }),
        Rule::RequireValue { when_in, .. } => Ok(CompiledRule::RequireValue {
            level: target_idx,
            when_in: resolve_set(when_in)?,
        }),
    }
}

/// Choice indices at `level` admissible after `prefix` (one choice index per
/// earlier level).
fn allowed_choices(levels: &[Level], level: usize, prefix: &[usize]) -> Vec<usize> {
    let l = &levels[level];
    (0..l.choices.len())
        .filter(|&ci| {
            l.rules.iter().all(|rule| {
                let payload = l.choices[ci].payload;
                match rule {
                    CompiledRule::LessThan { level: t } => {
                        compare_ok(payload, levels[*t].choices[prefix[*t]].payload, |a, b| a < b)
                    }
                    CompiledRule::GreaterThan { level: t } => {
                        compare_ok(payload, levels[*t].choices[prefix[*t]].payload, |a, b| a > b)
                    }
                    CompiledRule::RequireNan { level: t, when_in } => {
                        !when_in.contains(&prefix[*t]) || payload.is_nan()
                    }
                    CompiledRule::RequireValue { level: t, when_in } => {
                        !when_in.contains(&prefix[*t]) || matches!(payload, Payload::Value(_))
                    }
                }
            })
        })
        .collect()
}

/// Ordering rule semantics: a `NaN` choice always passes; a non-`NaN` choice
/// needs the referenced value present and the comparison to hold.
fn compare_ok(choice: Payload, reference: Payload, cmp: impl Fn(f64, f64) -> bool) -> bool {
    match choice {
        Payload::Nan => true,
        Payload::Value(v) => match reference {
            Payload::Value(w) => cmp(v, w),
            _ => false,
        },
        Payload::Text => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bulk() -> DecisionTree {
        DecisionTree::builtin("bulk").unwrap()
    }

    #[test]
    fn builtin_leaf_counts() {
        assert_eq!(bulk().leaf_count(), 180);
        assert_eq!(DecisionTree::builtin("interface").unwrap().leaf_count(), 228);
        assert_eq!(DecisionTree::builtin("toy").unwrap().leaf_count(), 8);
    }

    #[test]
    fn builtin_choice_widths() {
        assert_eq!(bulk().max_choices(), 3);
        assert_eq!(DecisionTree::builtin("interface").unwrap().max_choices(), 6);
        assert_eq!(DecisionTree::builtin("toy").unwrap().max_choices(), 2);
    }

    #[test]
    fn combination_counts_are_exact() {
        let bulk = bulk();
        assert_eq!(bulk.combination_count(1), BigUint::from(180u32));
        assert_eq!(bulk.combination_count(2), BigUint::from(16_290u32));
        assert_eq!(bulk.combination_count(3), BigUint::from(972_150u32));
        let toy = DecisionTree::builtin("toy").unwrap();
        assert_eq!(toy.combination_count(2), BigUint::from(36u32));
        // 15 simultaneous picks from 228 leaves exceed u64; exact value from
        // an independent big-integer enumeration.
        let interface = DecisionTree::builtin("interface").unwrap();
        assert_eq!(
            interface.combination_count(15),
            "120095516730567007209927".parse::<BigUint>().unwrap()
        );
        // Capacity beyond the leaf count saturates at the full power set - 1.
        let tiny = toy.combination_count(100);
        assert_eq!(tiny, BigUint::from(255u32));
    }

    #[test]
    fn unload_choices_respect_load_target() {
        let tree = bulk();
        let allowed = tree
            .legal_child_labels(&["300kPa", "0.60", "DTC", "3%"])
            .unwrap();
        assert_eq!(allowed, vec!["NaN".to_string(), "0%".to_string()]);
        let allowed = tree
            .legal_child_labels(&["300kPa", "0.60", "DTC", "5%"])
            .unwrap();
        assert_eq!(allowed, vec!["NaN", "0%", "3%"]);
    }

    #[test]
    fn reload_requires_unload() {
        let tree = bulk();
        let after_nan = tree
            .legal_child_labels(&["300kPa", "0.60", "DTC", "5%", "NaN"])
            .unwrap();
        assert_eq!(after_nan, vec!["NaN"]);
        let after_unload = tree
            .legal_child_labels(&["300kPa", "0.60", "DTC", "5%", "3%"])
            .unwrap();
        assert_eq!(after_unload, vec!["NaN", "5%"]);
    }

    /// Independent oracle for the bulk schedule rules: enumerate every full
    /// decision tuple and apply the physical constraints directly.
    #[test]
    fn bulk_leaves_match_brute_force() {
        let tree = bulk();
        let loads = [0.03, 0.05];
        let unloads = [None, Some(0.0), Some(0.03)];
        let reloads = [None, Some(0.03), Some(0.05)];
        let mut expected = HashSet::new();
        for p0 in ["300kPa", "400kPa", "500kPa"] {
            for e0 in ["0.60", "0.55"] {
                for ty in ["DTC", "DTE", "TTC"] {
                    for (li, &load) in loads.iter().enumerate() {
                        for (ui, &unload) in unloads.iter().enumerate() {
                            if let Some(u) = unload {
                                if u >= load {
                                    continue;
                                }
                            }
                            for (ri, &reload) in reloads.iter().enumerate() {
                                match (unload, reload) {
                                    (None, Some(_)) => continue,
                                    (Some(u), Some(r)) if r <= u => continue,
                                    _ => {}
                                }
                                let load_l = ["3%", "5%"][li];
                                let unload_l = ["NaN", "0%", "3%"][ui];
                                let reload_l = ["NaN", "3%", "5%"][ri];
                                expected.insert(format!(
                                    "{p0}_{e0}_{ty}_{load_l}_{unload_l}_{reload_l}"
                                ));
                            }
                        }
                    }
                }
            }
        }
        let got: HashSet<String> = tree
            .leaves()
            .iter()
            .map(|&l| tree.vertex(l).label.clone())
            .collect();
        assert_eq!(got, expected);
    }

    /// Independent oracle for the interface cycle rules.
    #[test]
    fn interface_leaves_match_brute_force() {
        let tree = DecisionTree::builtin("interface").unwrap();
        let t13 = [None, Some(0.1), Some(0.2), Some(0.3)];
        let t24 = [None, Some(0.0), Some(0.1), Some(0.2)];
        let l13 = ["NaN", "0.1", "0.2", "0.3"];
        let l24 = ["NaN", "0.0", "0.1", "0.2"];
        let mut expected = HashSet::new();
        for angle in ["0", "15", "30", "45", "60", "75"] {
            for (cyc, cyc_l) in [(0, "0"), (1, "1"), (2, "2")] {
                for (a_i, &a) in t13.iter().enumerate() {
                    for (b_i, &b) in t24.iter().enumerate() {
                        for (c_i, &c) in t13.iter().enumerate() {
                            for (d_i, &d) in t24.iter().enumerate() {
                                let ok = match cyc {
                                    0 => {
                                        a.is_none() && b.is_none() && c.is_none() && d.is_none()
                                    }
                                    1 => {
                                        a.is_some()
                                            && b.is_some()
                                            && b.unwrap() < a.unwrap()
                                            && c.is_none()
                                            && d.is_none()
                                    }
                                    _ => {
                                        a.is_some()
                                            && b.is_some()
                                            && c.is_some()
                                            && d.is_some()
                                            && b.unwrap() < a.unwrap()
                                            && c.unwrap() > b.unwrap()
                                            && d.unwrap() < c.unwrap()
                                    }
                                };
                                if ok {
                                    expected.insert(format!(
                                        "{angle}_{cyc_l}_{}_{}_{}_{}",
                                        l13[a_i], l24[b_i], l13[c_i], l24[d_i]
                                    ));
                                }
                            }
                        }
                    }
                }
            }
        }
        let got: HashSet<String> = tree
            .leaves()
            .iter()
            .map(|&l| tree.vertex(l).label.clone())
            .collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn every_leaf_round_trips_through_labels_and_decisions() {
        for name in ["bulk", "interface", "toy"] {
            let tree = DecisionTree::builtin(name).unwrap();
            for &leaf in tree.leaves() {
                let spec = tree.experiment(leaf).unwrap();
                assert_eq!(spec.decisions.len(), tree.depth());
                assert_eq!(tree.descend(&spec.decisions).unwrap(), leaf);
                assert_eq!(tree.leaf_by_label(&spec.label).unwrap(), leaf);
            }
        }
    }

    #[test]
    fn experiment_of_internal_vertex_is_rejected() {
        let tree = bulk();
        let err = tree.experiment(tree.root()).unwrap_err();
        assert!(matches!(err, TreeError::NotALeaf { .. }));
    }

    #[test]
    fn known_decision_tuple_resolves() {
        // 300kPa, 0.55, DTC, 3%, 0%, 5% — choice indices (0-based).
        let tree = bulk();
        let leaf = tree.descend(&[0, 1, 0, 0, 1, 2]).unwrap();
        assert_eq!(tree.vertex(leaf).label, "300kPa_0.55_DTC_3%_0%_5%");
    }

    #[test]
    fn forbidden_branch_is_reported() {
        let tree = bulk();
        // Unload 3% under load 3% violates the less-than rule.
        let err = tree.descend(&[0, 0, 0, 0, 2]).unwrap_err();
        assert!(matches!(err, TreeError::ForbiddenChoice { .. }));
    }

    #[test]
    fn payload_parsing() {
        assert_eq!(Payload::parse("3%"), Payload::Value(0.03));
        assert_eq!(Payload::parse("300kPa"), Payload::Value(300.0));
        assert_eq!(Payload::parse("0.60"), Payload::Value(0.6));
        assert_eq!(Payload::parse("0.4mm"), Payload::Value(0.4));
        assert_eq!(Payload::parse("NaN"), Payload::Nan);
        assert_eq!(Payload::parse("DTC"), Payload::Text);
    }

    #[test]
    fn root_label_and_joined_paths() {
        let tree = bulk();
        assert_eq!(tree.vertex(tree.root()).label, ROOT_LABEL);
        let first = tree.vertex(tree.root()).children[0];
        assert_eq!(tree.vertex(first).label, "300kPa");
    }

    #[test]
    fn dead_end_config_is_rejected() {
        let text = r#"
            name = "broken"
            [[level]]
            name = "A"
            choices = ["1"]
            [[level]]
            name = "B"
            choices = ["0.5"]
            [[level.rule]]
            kind = "greater-than"
            level = "A"
        "#;
        let err = DecisionTree::from_toml(text).unwrap_err();
        assert!(matches!(err, TreeError::DeadEnd { .. }), "{err}");
    }

    #[test]
    fn rule_referencing_later_level_is_rejected() {
        let text = r#"
            name = "broken"
            [[level]]
            name = "A"
            choices = ["1", "2"]
            [[level.rule]]
            kind = "less-than"
            level = "B"
            [[level]]
            name = "B"
            choices = ["1", "2"]
        "#;
        let err = DecisionTree::from_toml(text).unwrap_err();
        assert!(matches!(err, TreeError::BadRuleReference { .. }), "{err}");
    }

    #[test]
    fn comparison_against_text_level_is_rejected() {
        let text = r#"
            name = "broken"
            [[level]]
            name = "A"
            choices = ["DTC", "DTE"]
            [[level]]
            name = "B"
            choices = ["1", "2"]
            [[level.rule]]
            kind = "less-than"
            level = "A"
        "#;
        let err = DecisionTree::from_toml(text).unwrap_err();
        assert!(matches!(err, TreeError::NonNumericComparison { .. }), "{err}");
    }

    #[test]
    fn empty_and_duplicate_configs_are_rejected() {
        assert!(matches!(
            DecisionTree::from_toml("name = \"x\"").unwrap_err(),
            // toml sees a missing `level` array as a deserialization error
            TreeError::Config(_)
        ));
        let dup = r#"
            name = "x"
            [[level]]
            name = "A"
            choices = ["1", "1"]
        "#;
        assert!(matches!(
            DecisionTree::from_toml(dup).unwrap_err(),
            TreeError::DuplicateChoice { .. }
        ));
    }

    #[test]
    fn unknown_builtin_is_reported() {
        assert!(matches!(
            DecisionTree::builtin("nope").unwrap_err(),
            TreeError::UnknownBuiltin { .. }
        ));
    }
}
