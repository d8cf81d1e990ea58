//! File formats shared across modules: raw float32 rasters with a JSON
//! sidecar, 8-bit PNGs, CSV with a provenance comment line.
//!
//! Every file the toolkit writes carries a provenance record (tool name,
//! version, hash of the effective config). CSVs get it as a leading `#` line,
//! PNGs as a `tEXt` chunk, raw rasters inside the sidecar.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TOOL_NAME: &str = "salgail";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
}

impl Provenance {
    /// Hashes the canonical JSON encoding of `config`.
    pub fn for_config<T: Serialize>(config: &T) -> Self {
        let json = serde_json::to_vec(config).unwrap_or_default();
        Provenance {
            tool: TOOL_NAME.to_string(),
            version: TOOL_VERSION.to_string(),
            config_hash: hex(&Sha256::digest(&json)),
        }
    }

    pub fn header_line(&self) -> String {
        format!("# {}", serde_json::to_string(self).expect("provenance serializes"))
    }
}

impl Default for Provenance {
    fn default() -> Self {
        Provenance::for_config(&serde_json::Value::Null)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn create_file(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// CSV writer whose first line is the provenance comment.
pub fn csv_writer(path: &Path, prov: &Provenance) -> Result<csv::Writer<BufWriter<File>>> {
    let mut f = create_file(path)?;
    writeln!(f, "{}", prov.header_line()).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().from_writer(f))
}

/// CSV reader that skips `#` comment lines.
pub fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(f))
}

/// Sidecar describing a raw little-endian float32 raster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawHeader {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

/// `foo.f32` -> `foo.json`.
pub fn sidecar_path(raw: &Path) -> PathBuf {
    raw.with_extension("json")
}

pub fn write_raw_f32(path: &Path, header: &RawHeader, data: &[f32]) -> Result<()> {
    let expected = header.width * header.height * header.channels;
    if data.len() != expected {
        return Err(Error::shape(format!(
            "raster has {} values, header says {expected}",
            data.len()
        )));
    }
    let mut f = create_file(path)?;
    for v in data {
        f.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let mut s = create_file(&side)?;
    serde_json::to_writer(&mut s, header)?;
    s.flush().map_err(|e| Error::io(&side, e))?;
    Ok(())
}

pub fn read_raw_f32(path: &Path) -> Result<(RawHeader, Vec<f32>)> {
    let side = sidecar_path(path);
    let header: RawHeader = serde_json::from_reader(
        File::open(&side).map_err(|e| Error::io(&side, e))?,
    )
    .map_err(|e| Error::malformed(&side, e.to_string()))?;
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let expected = header.width * header.height * header.channels;
    if bytes.len() != expected * 4 {
        return Err(Error::malformed(
            path,
            format!("{} bytes, sidecar implies {}", bytes.len(), expected * 4),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header, data))
}

/// Writes an 8-bit PNG (`channels` 1 = gray, 3 = RGB) with a provenance chunk.
pub fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    channels: usize,
    bytes: &[u8],
    prov: &Provenance,
) -> Result<()> {
    let color = match channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(Error::invalid(format!("unsupported PNG channel count {c}"))),
    };
    let f = create_file(path)?;
    let mut enc = png::Encoder::new(f, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let text = serde_json::to_string(prov)?;
    enc.add_text_chunk("provenance".to_string(), text)
        .map_err(|e| Error::invalid(e.to_string()))?;
    let mut w = enc
        .write_header()
        .map_err(|e| Error::invalid(format!("png header for {}: {e}", path.display())))?;
    w.write_image_data(bytes)
        .map_err(|e| Error::invalid(format!("png data for {}: {e}", path.display())))?;
    w.finish()
        .map_err(|e| Error::invalid(format!("png finish for {}: {e}", path.display())))?;
    Ok(())
}

/// Linear quantization of `[0, 1]` to `0..=255`.
pub fn quantize_unit(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
