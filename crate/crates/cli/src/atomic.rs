//! Atomic output writing: stage in a temp dir next to the target, then
//! rename into place. A killed or failing process never leaves a partial
//! file at a target path.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

fn parent_of(target: &Path) -> PathBuf {
    match target.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Write a fixed set of output files atomically. `write` receives staged
/// paths (same file names, temp directory) and must create all of them;
/// afterwards each is renamed onto its target. All targets must live in
/// the same directory.
pub fn atomic_outputs<F>(targets: &[PathBuf], write: F) -> Result<()>
where
    F: FnOnce(&[PathBuf]) -> Result<()>,
{
    let parent = parent_of(&targets[0]);
    fs::create_dir_all(&parent)
        .with_context(|| format!("creating output directory {}", parent.display()))?;
    let stage = tempfile::Builder::new()
        .prefix(".emvox-stage-")
        .tempdir_in(&parent)
        .context("creating staging directory")?;
    let staged: Vec<PathBuf> = targets
        .iter()
        .map(|t| stage.path().join(t.file_name().expect("output path has a file name")))
        .collect();
    write(&staged)?;
    for (s, t) in staged.iter().zip(targets) {
        fs::rename(s, t).with_context(|| format!("moving {} into place", t.display()))?;
    }
    Ok(())
}

/// Write a directory of output files atomically. `write` produces files
/// in a staging directory and returns their paths; each is then renamed
/// into `out_dir`. Returns the final paths.
pub fn atomic_dir_files<F>(out_dir: &Path, write: F) -> Result<Vec<PathBuf>>
where
    F: FnOnce(&Path) -> Result<Vec<PathBuf>>,
{
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let stage = tempfile::Builder::new()
        .prefix(".emvox-stage-")
        .tempdir_in(out_dir)
        .context("creating staging directory")?;
    let produced = write(stage.path())?;
    let mut finals = Vec::with_capacity(produced.len());
    for p in produced {
        let name = p.file_name().context("staged file has no name")?;
        let target = out_dir.join(name);
        fs::rename(&p, &target)
            .with_context(|| format!("moving {} into place", target.display()))?;
        finals.push(target);
    }
    Ok(finals)
}
