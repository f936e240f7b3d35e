//! Checkpoints and image files.

mod checkpoint;
mod image;

pub use checkpoint::{
    decode_checkpoint, decode_raw, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, StoredTensor,
    FORMAT_VERSION, MAGIC,
};
pub use image::{
    decode_pgm, decode_ppm, encode_pgm, encode_ppm, quantize, read_gray, read_image, write_gray, write_image,
};

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Write `bytes` to a sibling temporary file, then rename it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid("write", format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
