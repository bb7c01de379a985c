//! Dataset manifest and the train/active/test partition.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

fn schema_version() -> u32 {
    MANIFEST_SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub image_id: String,
    pub mouse_id: String,
    pub section: u32,
    /// EDF image (PNG). When absent the EDF is computed from `stack`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edf: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stack: Option<Vec<String>>,
    /// Annotation JSON (frame and manual dots).
    pub annotation: String,
    /// Mask produced by the classical pipeline, used when the item is
    /// accepted in the bootstrap review.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asa_mask: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MouseSummary {
    pub mouse_id: String,
    pub sections: usize,
    pub stacks: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub items: Vec<ManifestItem>,
    pub mice: Vec<MouseSummary>,
}

fn bad(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Manifest {
        field: field.into(),
        reason: reason.into(),
    }
}

fn resolve(base: &Path, p: &str) -> String {
    let path = Path::new(p);
    if path.is_absolute() {
        p.to_string()
    } else {
        base.join(path).display().to_string()
    }
}

impl DatasetManifest {
    /// Build a manifest from items, deriving the per-mouse summary.
    pub fn from_items(items: Vec<ManifestItem>) -> DatasetManifest {
        let mut per: BTreeMap<&str, (BTreeSet<u32>, usize)> = BTreeMap::new();
        for it in &items {
            let e = per.entry(&it.mouse_id).or_default();
            e.0.insert(it.section);
            e.1 += 1;
        }
        let mice = per
            .into_iter()
            .map(|(m, (s, n))| MouseSummary {
                mouse_id: m.to_string(),
                sections: s.len(),
                stacks: n,
            })
            .collect();
        DatasetManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            items,
            mice,
        }
    }

    /// Structural checks: unique ids, an image source and an annotation per
    /// item, and per-mouse section/stack totals that re-sum to the items.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(bad(
                "schema_version",
                format!("unsupported version {}", self.schema_version),
            ));
        }
        if self.items.is_empty() {
            return Err(bad("items", "manifest has no items"));
        }
        let mut ids = BTreeSet::new();
        for (i, it) in self.items.iter().enumerate() {
            if it.image_id.is_empty() || it.image_id.contains(['/', '\\']) || it.image_id.starts_with('.') {
                return Err(bad(format!("items[{i}].image_id"), "empty or not a plain file name"));
            }
            if !ids.insert(it.image_id.as_str()) {
                return Err(bad(format!("items[{i}].image_id"), format!("duplicate id {}", it.image_id)));
            }
            if it.mouse_id.is_empty() {
                return Err(bad(format!("items[{i}].mouse_id"), "empty mouse id"));
            }
            let has_stack = it.stack.as_ref().is_some_and(|s| !s.is_empty());
            if it.edf.is_none() && !has_stack {
                return Err(bad(format!("items[{i}].edf"), "neither an EDF image nor a stack is given"));
            }
            if it.annotation.is_empty() {
                return Err(bad(format!("items[{i}].annotation"), "missing annotation"));
            }
        }
        let derived = DatasetManifest::from_items(self.items.clone()).mice;
        let listed: BTreeMap<&str, &MouseSummary> =
            self.mice.iter().map(|m| (m.mouse_id.as_str(), m)).collect();
        if listed.len() != self.mice.len() {
            return Err(bad("mice", "duplicate mouse id"));
        }
        for d in &derived {
            match listed.get(d.mouse_id.as_str()) {
                None => return Err(bad("mice", format!("mouse {} has items but no summary", d.mouse_id))),
                Some(m) if m.stacks != d.stacks || m.sections != d.sections => {
                    return Err(bad(
                        format!("mice[{}]", d.mouse_id),
                        format!(
                            "summary says {} sections / {} stacks, items give {} / {}",
                            m.sections, m.stacks, d.sections, d.stacks
                        ),
                    ))
                }
                _ => {}
            }
        }
        if derived.len() != self.mice.len() {
            return Err(bad("mice", "summary lists a mouse without items"));
        }
        Ok(())
    }

    /// Check every referenced file exists.
    pub fn check_files(&self) -> Result<()> {
        for (i, it) in self.items.iter().enumerate() {
            let mut paths = vec![(format!("items[{i}].annotation"), it.annotation.clone())];
            if let Some(e) = &it.edf {
                paths.push((format!("items[{i}].edf"), e.clone()));
            } else if let Some(s) = &it.stack {
                paths.extend(s.iter().enumerate().map(|(k, p)| (format!("items[{i}].stack[{k}]"), p.clone())));
            }
            if let Some(a) = &it.asa_mask {
                paths.push((format!("items[{i}].asa_mask"), a.clone()));
            }
            for (field, p) in paths {
                if !Path::new(&p).is_file() {
                    return Err(bad(field, format!("file not found: {p}")));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<DatasetManifest> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| bad("manifest", e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    /// Load, validate and make every path absolute relative to the
    /// manifest's directory.
    pub fn load_resolved(path: impl AsRef<Path>) -> Result<DatasetManifest> {
        let path = path.as_ref();
        let m = DatasetManifest::load(path)?;
        let base: PathBuf = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
        Ok(m.resolved(&base))
    }

    pub fn resolved(&self, base: &Path) -> DatasetManifest {
        let mut m = self.clone();
        for it in &mut m.items {
            it.edf = it.edf.as_deref().map(|p| resolve(base, p));
            it.stack = it.stack.as_ref().map(|s| s.iter().map(|p| resolve(base, p)).collect());
            it.annotation = resolve(base, &it.annotation);
            it.asa_mask = it.asa_mask.as_deref().map(|p| resolve(base, p));
        }
        m
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn item(&self, id: &str) -> Option<&ManifestItem> {
        self.items.iter().find(|it| it.image_id == id)
    }

    pub fn total_stacks(&self) -> usize {
        self.mice.iter().map(|m| m.stacks).sum()
    }

    pub fn ids(&self) -> BTreeSet<String> {
        self.items.iter().map(|it| it.image_id.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Partition {
    pub train: BTreeSet<String>,
    pub active: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl Partition {
    /// Train = bootstrap-accepted, active = bootstrap-rejected, test = every
    /// item of the test mouse (whatever its verdict).
    pub fn initial(
        manifest: &DatasetManifest,
        verdicts: &BTreeMap<String, Verdict>,
        test_mouse: &str,
    ) -> Result<Partition> {
        if !manifest.mice.iter().any(|m| m.mouse_id == test_mouse) {
            return Err(Error::invalid(format!("unknown test mouse {test_mouse}")));
        }
        let mut p = Partition::default();
        for it in &manifest.items {
            if it.mouse_id == test_mouse {
                p.test.insert(it.image_id.clone());
                continue;
            }
            match verdicts.get(&it.image_id) {
                Some(Verdict::Accept) => p.train.insert(it.image_id.clone()),
                Some(Verdict::Reject) => p.active.insert(it.image_id.clone()),
                None => {
                    return Err(Error::invalid(format!(
                        "no bootstrap verdict for {}",
                        it.image_id
                    )))
                }
            };
        }
        if let Some(unknown) = verdicts.keys().find(|k| manifest.item(k).is_none()) {
            return Err(Error::invalid(format!("verdict for unknown image {unknown}")));
        }
        Ok(p)
    }

    /// Disjointness, coverage and test quarantine.
    pub fn check(&self, all: &BTreeSet<String>, test: &BTreeSet<String>) -> Result<()> {
        let fail = |m: String| Err(Error::State(format!("partition invariant violated: {m}")));
        if let Some(id) = self.train.intersection(&self.active).next() {
            return fail(format!("{id} is both train and active"));
        }
        if let Some(id) = self.test.iter().find(|id| self.train.contains(*id) || self.active.contains(*id)) {
            return fail(format!("test item {id} left the test set"));
        }
        if &self.test != test {
            return fail("test set differs from the test mouse".into());
        }
        let union: BTreeSet<String> = self
            .train
            .iter()
            .chain(&self.active)
            .chain(&self.test)
            .cloned()
            .collect();
        if &union != all {
            return fail("partition does not cover the manifest".into());
        }
        Ok(())
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.active.len(), self.test.len())
    }
}
