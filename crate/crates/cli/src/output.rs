use std::io::Write;
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

/// Writes `name` inside `dir` through a temporary file in the same directory
/// and a rename, so readers never see a partial file.
pub fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let target = dir.join(name);
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(&target).map_err(|e| e.error)?;
    Ok(target)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("nested");
        let p = write_atomic(&sub, "a.txt", b"first version").unwrap();
        write_atomic(&sub, "a.txt", b"2nd").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "2nd");
        assert_eq!(std::fs::read_dir(&sub).unwrap().count(), 1);
    }
}
