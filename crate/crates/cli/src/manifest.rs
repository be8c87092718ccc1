use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use afh_core::error::Result;

pub const MANIFEST_FILE: &str = "manifest.txt";

/// Adds `paths` to `<dir>/manifest.txt`: one path per line, sorted, no
/// duplicates, so repeated commands on one directory accumulate.
pub fn record(dir: &Path, paths: &[PathBuf]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let file = dir.join(MANIFEST_FILE);
    let mut lines: BTreeSet<String> = match fs::read_to_string(&file) {
        Ok(text) => text.lines().filter(|l| !l.is_empty()).map(str::to_owned).collect(),
        Err(_) => BTreeSet::new(),
    };
    lines.extend(paths.iter().map(|p| p.display().to_string()));
    let mut text: String = lines.into_iter().map(|l| l + "\n").collect();
    if text.is_empty() {
        text.push('\n');
    }
    fs::write(&file, text)?;
    Ok(file)
}
