//! Output staging: files are written to a temporary directory next to the
//! output directory and moved into place only when the command succeeds.

use crate::CliError;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub struct Staging {
    dir: tempfile::TempDir,
    target: PathBuf,
    files: Vec<String>,
}

impl Staging {
    pub fn new(target: &Path) -> Result<Self, CliError> {
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(|e| CliError::io(&parent, e))?;
        let dir = tempfile::Builder::new()
            .prefix(".mqarch-staging-")
            .tempdir_in(&parent)
            .map_err(|e| CliError::io(&parent, e))?;
        Ok(Self {
            dir,
            target: target.to_path_buf(),
            files: Vec::new(),
        })
    }

    /// Writes one output file through `f`.
    pub fn write<F>(&mut self, name: &str, f: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut dyn Write) -> Result<(), CliError>,
    {
        let path = self.dir.path().join(name);
        let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w)?;
        w.flush().map_err(|e| CliError::io(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_str(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        self.write(name, |w| {
            w.write_all(text.as_bytes()).map_err(CliError::from)
        })
    }

    /// Moves the staged files into the output directory. A missing output
    /// directory is created by renaming the staging directory itself.
    pub fn commit(self) -> Result<Vec<String>, CliError> {
        let Staging { dir, target, files } = self;
        if !target.exists() {
            let staged = dir.keep();
            fs::rename(&staged, &target).map_err(|e| CliError::io(&target, e))?;
            return Ok(files);
        }
        for name in &files {
            let to = target.join(name);
            fs::rename(dir.path().join(name), &to).map_err(|e| CliError::io(&to, e))?;
        }
        Ok(files)
    }
}
