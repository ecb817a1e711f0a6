use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Write `bytes` to a sibling temp file, then rename over `path`, so a reader
/// never observes a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::path(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::path(path, "not a file path"))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::path(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::path(&tmp, e))?;
        f.sync_all().map_err(|e| Error::path(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::path(path, e))?;
    Ok(())
}
