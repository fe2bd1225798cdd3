//! The output directory and its manifest.

use std::path::{Component, Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

/// Every file a command writes goes through here, so nothing lands outside
/// the `--out` directory.
pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
    inputs: Vec<(String, String)>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
            inputs: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let rel = Path::new(name);
        if !rel.components().all(|c| matches!(c, Component::Normal(_))) {
            bail!("output name {name:?} escapes the output directory");
        }
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// Records the SHA-256 of an input file for the manifest.
    pub fn hash_input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let hex: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        self.inputs.push((path.display().to_string(), hex));
        Ok(())
    }

    /// Writes `manifest.json`; the last file of every command.
    pub fn finish(mut self, command: &str, seed: u64, config: Value) -> Result<()> {
        let inputs: Vec<Value> = self
            .inputs
            .iter()
            .map(|(p, h)| json!({ "path": p, "sha256": h }))
            .collect();
        let manifest = json!({
            "tool": "nrkg",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "seed": seed,
            "config": config,
            "inputs": inputs,
            "outputs": self.written,
        });
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        self.write("manifest.json", text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refuses_to_escape() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutDir::create(dir.path()).unwrap();
        assert!(out.write("../x", "a").is_err());
        assert!(out.write("/tmp/x", "a").is_err());
        out.write("sub/ok.txt", "a").unwrap();
        assert!(dir.path().join("sub/ok.txt").exists());
    }

    #[test]
    fn manifest_hashes_inputs_with_sha256() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        std::fs::write(&input, "abc").unwrap();
        let mut out = OutDir::create(&dir.path().join("out")).unwrap();
        out.hash_input(&input).unwrap();
        out.finish("test", 1, json!({})).unwrap();
        let m: Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/manifest.json")).unwrap()).unwrap();
        // FIPS 180-2 test vector
        assert_eq!(
            m["inputs"][0]["sha256"],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(m["outputs"], json!([]));
    }
}
