//! Corpus manifests: one `malware|benign <path> [arch]` line per sample,
//! paths relative to the manifest. `.acfg` files hold serialized graphs,
//! anything else is read as disassembly.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use super::{sample_from_disasm, LabeledSample, SampleGraphs};
use crate::cfg::{deserialize_many, normalize, serialize, SerialError};
use crate::disasm::{Arch, DisasmError};
use crate::lift::LiftOptions;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Disasm { path: PathBuf, source: DisasmError },
    #[error("{path}: {source}")]
    Acfg { path: PathBuf, source: SerialError },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Path as written in the manifest; used as the sample name.
    pub name: String,
    pub path: PathBuf,
    pub malware: bool,
    pub arch: Arch,
}

pub fn load_manifest(path: &Path, default_arch: Arch) -> Result<Vec<ManifestEntry>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.into(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |message: String| CorpusError::Manifest {
            path: path.into(),
            line: i + 1,
            message,
        };
        let f: Vec<&str> = line.split_whitespace().collect();
        let (label, file, arch) = match f[..] {
            [l, p] => (l, p, default_arch),
            [l, p, a] => (l, p, a.parse().map_err(bad)?),
            _ => return Err(bad("expected `malware|benign <path> [arch]`".into())),
        };
        let malware = match label {
            "malware" => true,
            "benign" => false,
            other => return Err(bad(format!("unknown label `{other}`"))),
        };
        out.push(ManifestEntry {
            name: file.to_string(),
            path: base.join(file),
            malware,
            arch,
        });
    }
    Ok(out)
}

pub fn load_sample(
    name: &str,
    path: &Path,
    arch: Arch,
    opts: LiftOptions,
) -> Result<SampleGraphs, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.into(),
        source,
    })?;
    if path.extension().is_some_and(|e| e == "acfg") {
        let acfgs = deserialize_many(&text).map_err(|source| CorpusError::Acfg {
            path: path.into(),
            source,
        })?;
        Ok(SampleGraphs {
            name: name.to_string(),
            acfgs: acfgs.iter().map(normalize).collect(),
        })
    } else {
        sample_from_disasm(name, &text, arch, opts).map_err(|source| CorpusError::Disasm {
            path: path.into(),
            source,
        })
    }
}

impl ManifestEntry {
    pub fn load(&self, opts: LiftOptions) -> Result<LabeledSample, CorpusError> {
        Ok(LabeledSample {
            graphs: load_sample(&self.name, &self.path, self.arch, opts)?,
            malware: self.malware,
        })
    }
}

pub fn write_acfgs(path: &Path, sample: &SampleGraphs) -> Result<(), CorpusError> {
    let text: String = sample.acfgs.iter().map(serialize).collect();
    fs::write(path, text).map_err(|source| CorpusError::Io {
        path: path.into(),
        source,
    })
}
