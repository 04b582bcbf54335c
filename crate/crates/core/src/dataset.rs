//! Frame-directory listing and filename pairing.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::{Error, Result};

const FRAME_EXTENSIONS: [&str; 4] = ["png", "ppm", "pgm", "pnm"];

fn is_frame(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Frame files in `dir`, sorted by file name. Subdirectories are ignored.
pub fn list_frames(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut frames = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_frame(&path) {
            frames.push(path);
        }
    }
    frames.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(frames)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Frames of `primary` matched by exact file name in each of `others`.
///
/// Every directory must hold the same set of names; otherwise the error lists
/// each name missing somewhere as `dir/name`.
pub fn pair_frames(primary: &Path, others: &[&Path]) -> Result<Vec<Vec<PathBuf>>> {
    let base = list_frames(primary)?;
    let names: BTreeSet<String> = base.iter().map(|p| file_name(p)).collect();
    let mut offenders = Vec::new();
    for dir in others {
        let theirs: BTreeSet<String> = list_frames(dir)?.iter().map(|p| file_name(p)).collect();
        for missing in names.difference(&theirs) {
            offenders.push(dir.join(missing).display().to_string());
        }
        for extra in theirs.difference(&names) {
            offenders.push(primary.join(extra).display().to_string());
        }
    }
    if !offenders.is_empty() {
        offenders.sort();
        offenders.dedup();
        return Err(Error::Pairing { offenders });
    }
    if base.is_empty() {
        return Err(Error::Pairing {
            offenders: vec![format!("{}: no frames", primary.display())],
        });
    }
    Ok(base
        .into_iter()
        .map(|p| {
            let name = file_name(&p);
            let mut row = vec![p];
            row.extend(others.iter().map(|d| d.join(&name)));
            row
        })
        .collect())
}
