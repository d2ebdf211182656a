//! On-disk template store: one directory per template, one `.acfg` file per
//! function graph, and an `index.json` with names and SHA-256 digests.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::sample_from_disasm;
use crate::cfg::{deserialize, deserialize_many, normalize, serialize, Acfg, SerialError};
use crate::disasm::Arch;
use crate::lift::LiftOptions;

pub const INDEX_FILE: &str = "index.json";
const FORMAT: &str = "mailkit-template-store";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub source: Option<String>,
    pub arch: Option<Arch>,
    pub source_sha256: Option<String>,
    /// Seconds since the epoch, taken from `SOURCE_DATE_EPOCH` when set.
    pub created: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalwareTemplate {
    pub name: String,
    pub acfgs: Vec<Acfg>,
    pub provenance: Provenance,
}

impl MalwareTemplate {
    pub fn new(name: impl Into<String>, acfgs: Vec<Acfg>, provenance: Provenance) -> Self {
        MalwareTemplate {
            name: name.into(),
            acfgs,
            provenance,
        }
    }

    pub fn whole_program(&self) -> Acfg {
        self.acfgs
            .iter()
            .fold(Acfg::new(self.name.clone()), |acc, g| acc.union(g))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: bad index: {message}")]
    Index { path: PathBuf, message: String },
    #[error("{path}: digest mismatch")]
    Digest { path: PathBuf },
    #[error("{path}: {source}")]
    Acfg { path: PathBuf, source: SerialError },
    #[error("template name must not be empty")]
    EmptyName,
    #[error("duplicate template name `{0}`")]
    DuplicateName(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TemplateStore {
    templates: Vec<MalwareTemplate>,
}

#[derive(Serialize, Deserialize)]
struct Index {
    format: String,
    version: u32,
    templates: Vec<IndexEntry>,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    dir: String,
    provenance: Provenance,
    functions: Vec<IndexFile>,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    file: String,
    function: String,
    sha256: String,
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn dir_name(i: usize, name: &str) -> String {
    let clean: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{i:04}-{clean}")
}

impl TemplateStore {
    pub fn templates(&self) -> &[MalwareTemplate] {
        &self.templates
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&MalwareTemplate> {
        self.templates.iter().find(|t| t.name == name)
    }

    pub fn insert(&mut self, template: MalwareTemplate) -> Result<(), StoreError> {
        if template.name.is_empty() {
            return Err(StoreError::EmptyName);
        }
        if self.get(&template.name).is_some() {
            return Err(StoreError::DuplicateName(template.name));
        }
        self.templates.push(template);
        Ok(())
    }

    /// Writes the store, replacing template directories of a previous index.
    pub fn save(&self, dir: &Path) -> Result<(), StoreError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let index_path = dir.join(INDEX_FILE);
        if let Ok(old) = fs::read_to_string(&index_path) {
            if let Ok(old) = serde_json::from_str::<Index>(&old) {
                for e in old.templates {
                    let p = dir.join(&e.dir);
                    if p.parent() == Some(dir) && p.is_dir() {
                        fs::remove_dir_all(&p).map_err(io_err(&p))?;
                    }
                }
            }
        }
        let mut index = Index {
            format: FORMAT.into(),
            version: VERSION,
            templates: Vec::new(),
        };
        for (i, t) in self.templates.iter().enumerate() {
            let sub = dir_name(i, &t.name);
            let tdir = dir.join(&sub);
            fs::create_dir_all(&tdir).map_err(io_err(&tdir))?;
            let mut functions = Vec::new();
            for (k, g) in t.acfgs.iter().enumerate() {
                let file = format!("{k:04}.acfg");
                let text = serialize(g);
                let path = tdir.join(&file);
                fs::write(&path, &text).map_err(io_err(&path))?;
                functions.push(IndexFile {
                    file,
                    function: g.name.clone(),
                    sha256: digest(text.as_bytes()),
                });
            }
            index.templates.push(IndexEntry {
                name: t.name.clone(),
                dir: sub,
                provenance: t.provenance.clone(),
                functions,
            });
        }
        let text = serde_json::to_string_pretty(&index).expect("index serializes") + "\n";
        fs::write(&index_path, text).map_err(io_err(&index_path))
    }

    pub fn load(dir: &Path) -> Result<Self, StoreError> {
        let index_path = dir.join(INDEX_FILE);
        let text = fs::read_to_string(&index_path).map_err(io_err(&index_path))?;
        let bad = |message: String| StoreError::Index {
            path: index_path.clone(),
            message,
        };
        let index: Index = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        if index.format != FORMAT || index.version != VERSION {
            return Err(bad(format!(
                "unsupported format {} version {}",
                index.format, index.version
            )));
        }
        let mut store = TemplateStore::default();
        for e in index.templates {
            let mut acfgs = Vec::new();
            for f in &e.functions {
                let path = dir.join(&e.dir).join(&f.file);
                let text = fs::read_to_string(&path).map_err(io_err(&path))?;
                if digest(text.as_bytes()) != f.sha256 {
                    return Err(StoreError::Digest { path });
                }
                acfgs.push(deserialize(&text).map_err(|source| StoreError::Acfg { path, source })?);
            }
            store.insert(MalwareTemplate::new(e.name, acfgs, e.provenance))?;
        }
        Ok(store)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceSample {
    pub name: String,
    pub text: String,
    /// Used for disassembly; ignored for serialized graphs.
    pub arch: Arch,
    pub source: Option<String>,
}

#[derive(Debug, Default)]
pub struct BuildOutcome {
    pub store: TemplateStore,
    /// Samples left out, with the reason.
    pub skipped: Vec<(String, String)>,
    pub notes: Vec<String>,
}

/// Serialized ACFG text: the first line that is neither blank nor a
/// comment is an `ACFG` header.
fn is_acfg_text(text: &str) -> bool {
    text.lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .is_some_and(|l| l.starts_with("ACFG "))
}

fn sample_graphs(s: &SourceSample, opts: LiftOptions) -> Result<(Vec<Acfg>, Option<Arch>), String> {
    if is_acfg_text(&s.text) {
        let graphs = deserialize_many(&s.text).map_err(|e| e.to_string())?;
        Ok((graphs.iter().map(normalize).collect(), None))
    } else {
        let graphs =
            sample_from_disasm(&s.name, &s.text, s.arch, opts).map_err(|e| e.to_string())?;
        Ok((graphs.acfgs, Some(s.arch)))
    }
}

/// Turns each sample into a template of normalized function graphs. Samples
/// are disassembly listings or serialized ACFGs. Failures skip the sample;
/// empty functions are dropped with a note.
pub fn build_templates(samples: &[SourceSample], opts: LiftOptions) -> BuildOutcome {
    let created = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse().ok());
    let mut out = BuildOutcome::default();
    for s in samples {
        let (acfgs, arch) = match sample_graphs(s, opts) {
            Ok(g) => g,
            Err(e) => {
                log::warn!("skipping {}: {e}", s.name);
                out.skipped.push((s.name.clone(), e));
                continue;
            }
        };
        let (acfgs, empty): (Vec<Acfg>, Vec<Acfg>) = acfgs.into_iter().partition(|g| !g.is_empty());
        for g in empty {
            out.notes.push(format!(
                "{}: function {} has no statements and was dropped",
                s.name, g.name
            ));
        }
        let provenance = Provenance {
            source: s.source.clone(),
            arch,
            source_sha256: Some(digest(s.text.as_bytes())),
            created,
        };
        if let Err(e) = out
            .store
            .insert(MalwareTemplate::new(s.name.clone(), acfgs, provenance))
        {
            log::warn!("skipping {}: {e}", s.name);
            out.skipped.push((s.name.clone(), e.to_string()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE: &str = "FUNC f 1000 1004\n1000 - MOV EAX, 0x1\n1003 - RET\n";

    fn sample(name: &str, text: &str) -> SourceSample {
        SourceSample {
            name: name.into(),
            text: text.into(),
            arch: Arch::X86,
            source: None,
        }
    }

    #[test]
    fn empty_store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let out = build_templates(&[], LiftOptions::default());
        out.store.save(dir.path()).unwrap();
        assert!(TemplateStore::load(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn single_function_sample() {
        let dir = tempfile::tempdir().unwrap();
        let out = build_templates(
            &[sample("one", ONE), sample("bad", "zz NOPE")],
            LiftOptions::default(),
        );
        assert_eq!(out.store.len(), 1);
        assert_eq!(out.store.templates()[0].acfgs.len(), 1);
        assert_eq!(out.skipped.len(), 1);
        out.store.save(dir.path()).unwrap();
        assert_eq!(TemplateStore::load(dir.path()).unwrap(), out.store);
    }

    #[test]
    fn rebuild_is_byte_identical_and_digests_are_checked() {
        let dir = tempfile::tempdir().unwrap();
        let build = || build_templates(&[sample("one", ONE)], LiftOptions::default()).store;
        build().save(dir.path()).unwrap();
        let file = dir.path().join("0000-one/0000.acfg");
        let (i1, f1) = (
            fs::read(dir.path().join(INDEX_FILE)).unwrap(),
            fs::read(&file).unwrap(),
        );
        build().save(dir.path()).unwrap();
        assert_eq!(fs::read(dir.path().join(INDEX_FILE)).unwrap(), i1);
        assert_eq!(fs::read(&file).unwrap(), f1);
        fs::write(&file, "ACFG f 0 0\n").unwrap();
        assert!(matches!(
            TemplateStore::load(dir.path()),
            Err(StoreError::Digest { .. })
        ));
    }

    #[test]
    fn serialized_graphs_are_accepted() {
        let graphs = build_templates(&[sample("one", ONE)], LiftOptions::default()).store;
        let text = format!("# saved\n{}", serialize(&graphs.templates()[0].acfgs[0]));
        let out = build_templates(&[sample("again", &text)], LiftOptions::default());
        assert!(out.skipped.is_empty());
        let t = &out.store.templates()[0];
        assert_eq!(t.acfgs, graphs.templates()[0].acfgs);
        assert_eq!(t.provenance.arch, None);
    }

    #[test]
    fn names_are_unique() {
        let mut s = TemplateStore::default();
        s.insert(MalwareTemplate::new("a", vec![], Provenance::default()))
            .unwrap();
        assert!(matches!(
            s.insert(MalwareTemplate::new("a", vec![], Provenance::default())),
            Err(StoreError::DuplicateName(_))
        ));
        assert!(matches!(
            s.insert(MalwareTemplate::new("", vec![], Provenance::default())),
            Err(StoreError::EmptyName)
        ));
    }
}
