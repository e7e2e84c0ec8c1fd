//! Run directories and manifests.
//!
//! Every invocation writes its artifacts into a directory whose name is a
//! stable hash of the command, the resolved parameters, and the input bytes.
//! Re-running the same invocation on the same data therefore lands in the
//! same directory with byte-identical contents, which makes runs easy to
//! cache, diff, and deduplicate. `--out` overrides the location.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::common::{CliError, CliResult};

/// 64-bit FNV-1a. Hand-rolled because the output directory name must be
/// stable across releases, platforms, and dependency upgrades.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

#[derive(Serialize)]
struct InputRecord {
    path: String,
    fnv64: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    parameters: &'a BTreeMap<String, String>,
    input: Option<InputRecord>,
    outputs: Vec<String>,
}

/// Directory name for an invocation: the command plus a hash over the
/// resolved parameters and the input bytes.
pub fn run_dir_name(
    command: &str,
    parameters: &BTreeMap<String, String>,
    input_bytes: Option<&[u8]>,
) -> String {
    let mut key = String::new();
    key.push_str(command);
    for (k, v) in parameters {
        key.push('\u{1f}');
        key.push_str(k);
        key.push('=');
        key.push_str(v);
    }
    let mut hash = fnv1a64(key.as_bytes());
    if let Some(bytes) = input_bytes {
        hash ^= fnv1a64(bytes).rotate_left(17);
    }
    format!("{command}-{hash:016x}")
}

/// A run directory in progress. Files are registered in write order and the
/// manifest is written last by `finish`.
pub struct RunDir {
    dir: PathBuf,
    command: String,
    parameters: BTreeMap<String, String>,
    input: Option<(String, u64)>,
    outputs: Vec<String>,
}

impl RunDir {
    /// Create (or reuse) the directory for this invocation.
    ///
    /// `parameters` must already contain every resolved option that affects
    /// the output; together with the command name and the input bytes they
    /// determine the directory name.
    pub fn create(
        command: &str,
        parameters: BTreeMap<String, String>,
        input: Option<(&Path, &[u8])>,
        out_override: Option<&Path>,
    ) -> CliResult<Self> {
        let dir = match out_override {
            Some(path) => path.to_path_buf(),
            None => PathBuf::from("etas-out").join(run_dir_name(
                command,
                &parameters,
                input.map(|(_, bytes)| bytes),
            )),
        };
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))?;
        Ok(RunDir {
            dir,
            command: command.to_string(),
            parameters,
            input: input.map(|(path, bytes)| (path.display().to_string(), fnv1a64(bytes))),
            outputs: Vec::new(),
        })
    }

    /// Write a text artifact and record it in the manifest.
    pub fn write_text(&mut self, name: &str, contents: &str) -> CliResult<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents)
            .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    /// Write the manifest and return the directory path.
    pub fn finish(self) -> CliResult<PathBuf> {
        let manifest = Manifest {
            command: &self.command,
            parameters: &self.parameters,
            input: self
                .input
                .as_ref()
                .map(|(path, hash)| InputRecord {
                    path: path.clone(),
                    fnv64: format!("{hash:016x}"),
                }),
            outputs: self.outputs.clone(),
        };
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::runtime(format!("manifest: {e}")))?;
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, text)
            .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))?;
        Ok(self.dir)
    }
}
