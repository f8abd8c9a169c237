//! Output directory bookkeeping: tables, text files and the manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use shapefda::io::{join_labels, read_labels, read_landmarks, Table};
use shapefda::landmarks::LandmarkConfiguration;

use crate::config::RunConfig;
use crate::error::{io_error, CliError};

/// Manifest file written by `command`.
pub fn manifest_name(command: &str) -> String {
    format!("manifest_{command}.txt")
}

/// Writes files below one directory and remembers them for the manifest.
pub struct Outputs {
    root: PathBuf,
    written: Vec<String>,
    failures: Vec<(String, String)>,
}

impl Outputs {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| io_error(root, e))?;
        Ok(Self { root: root.to_path_buf(), written: Vec::new(), failures: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn open(&mut self, relative: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.root.join(relative);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
        }
        let file = File::create(&path).map_err(|e| io_error(&path, e))?;
        self.written.push(relative.to_string());
        Ok(BufWriter::new(file))
    }

    pub fn table(&mut self, relative: &str, table: &Table) -> Result<(), CliError> {
        let path = self.root.join(relative);
        let w = self.open(relative)?;
        table.write(w).map_err(|e| io_error(&path, e))
    }

    pub fn text(&mut self, relative: &str, text: &str) -> Result<(), CliError> {
        let path = self.root.join(relative);
        let mut w = self.open(relative)?;
        w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| io_error(&path, e))
    }

    pub fn with_writer(
        &mut self,
        relative: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> shapefda::Result<()>,
    ) -> Result<(), CliError> {
        let path = self.root.join(relative);
        let mut w = self.open(relative)?;
        f(&mut w).map_err(|e| io_error(&path, e))?;
        w.flush().map_err(|e| io_error(&path, e))
    }

    pub fn fail(&mut self, what: impl Into<String>, error: impl ToString) {
        self.failures.push((what.into(), error.to_string().replace('\n', " ")));
    }

    pub fn failures(&self) -> &[(String, String)] {
        &self.failures
    }

    /// Writes `manifest_<command>.txt`: command, version, every setting, produced files and failures.
    pub fn finish(mut self, command: &str, config: &RunConfig) -> Result<Vec<(String, String)>, CliError> {
        let mut text = format!("command={command}\nversion={}\n", env!("CARGO_PKG_VERSION"));
        for (k, v) in config.manifest_entries() {
            text.push_str(&format!("{k}={v}\n"));
        }
        text.push_str(&format!("status={}\n", if self.failures.is_empty() { "complete" } else { "partial" }));
        for f in &self.written {
            text.push_str(&format!("output={f}\n"));
        }
        for (what, err) in &self.failures {
            text.push_str(&format!("failed.{what}={err}\n"));
        }
        let path = self.root.join(manifest_name(command));
        fs::write(&path, text).map_err(|e| io_error(&path, e))?;
        Ok(std::mem::take(&mut self.failures))
    }
}

/// One input file: its name (file stem) and specimens.
pub struct Dataset {
    pub name: String,
    pub specimens: Vec<LandmarkConfiguration>,
}

/// Reads every input, joining the labels file when one is configured.
pub fn load_datasets(config: &RunConfig) -> Result<Vec<Dataset>, CliError> {
    if config.inputs.is_empty() {
        return Err(CliError::Input("no input files given (use --input or input=...)".into()));
    }
    let labels = match &config.labels {
        Some(path) => {
            let file = File::open(path).map_err(|e| io_error(path, e))?;
            Some(read_labels(file).map_err(|e| io_error(path, e))?)
        }
        None => None,
    };
    let mut names = Vec::new();
    config
        .inputs
        .iter()
        .map(|path| {
            let file = File::open(path).map_err(|e| io_error(path, e))?;
            let mut specimens = read_landmarks(file).map_err(|e| io_error(path, e))?;
            if let Some(labels) = &labels {
                specimens = join_labels(&specimens, labels).map_err(|e| io_error(path, e))?;
            }
            let name = path.file_stem().map_or_else(|| "data".to_string(), |s| s.to_string_lossy().into_owned());
            if names.contains(&name) {
                return Err(CliError::Input(format!("two inputs share the name {name}")));
            }
            names.push(name.clone());
            Ok(Dataset { name, specimens })
        })
        .collect()
}

/// File-name-safe version of an identifier.
pub fn safe_name(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}
