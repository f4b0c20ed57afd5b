//! On-disk layout: `MAGIC`, one JSON header line, then the raw window block.
//! The block holds every window's `W × D` values as little-endian `f64`, in header order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ActionWindow, BuildConfig, DatasetBundle, DatasetError, DemoInfo, Normalization};
use crate::sim::ScenarioConfig;
use crate::util::fnv1a;

pub const MAGIC: &[u8; 8] = b"MODIRDS\n";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    scenario: ScenarioConfig,
    build: BuildConfig,
    directive_names: Vec<String>,
    demos: Vec<DemoInfo>,
    normalization: Normalization,
    width: usize,
    dim: usize,
    /// `[demo, start]` per window.
    windows: Vec<[usize; 2]>,
    block_values: usize,
    block_fnv1a: String,
}

fn block_bytes(windows: &[ActionWindow]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(windows.iter().map(|w| w.sequence.len() * 8).sum());
    for w in windows {
        for v in &w.sequence {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

impl DatasetBundle {
    pub fn to_bytes(&self) -> Vec<u8> {
        let block = block_bytes(&self.windows);
        let header = Header {
            format_version: FORMAT_VERSION,
            scenario: self.scenario.clone(),
            build: self.build.clone(),
            directive_names: self.directive_names.clone(),
            demos: self.demos.clone(),
            normalization: self.normalization.clone(),
            width: self.width(),
            dim: self.state_dim(),
            windows: self.windows.iter().map(|w| [w.demo, w.start]).collect(),
            block_values: block.len() / 8,
            block_fnv1a: format!("{:016x}", fnv1a(&block)),
        };
        let mut out = Vec::with_capacity(block.len() + 4096);
        out.extend_from_slice(MAGIC);
        serde_json::to_writer(&mut out, &header).expect("header serializes");
        out.push(b'\n');
        out.extend_from_slice(&block);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DatasetError> {
        let corrupt = |msg: &str| DatasetError::Corrupt(msg.to_string());
        let rest = bytes.strip_prefix(MAGIC.as_slice()).ok_or_else(|| corrupt("bad magic bytes"))?;
        let newline = rest.iter().position(|&b| b == b'\n').ok_or_else(|| corrupt("unterminated header"))?;
        let raw: serde_json::Value =
            serde_json::from_slice(&rest[..newline]).map_err(|e| DatasetError::Corrupt(format!("header: {e}")))?;
        let version = raw.get("format_version").and_then(|v| v.as_u64()).ok_or_else(|| corrupt("header lacks format_version"))?;
        if version != u64::from(FORMAT_VERSION) {
            return Err(DatasetError::VersionMismatch {
                found: version.min(u64::from(u32::MAX)) as u32,
                supported: FORMAT_VERSION,
            });
        }
        let header: Header = serde_json::from_value(raw).map_err(|e| DatasetError::Corrupt(format!("header: {e}")))?;
        let block = &rest[newline + 1..];
        let per_window = header.width * header.dim;
        if block.len() != header.block_values * 8 || header.block_values != header.windows.len() * per_window {
            return Err(corrupt("data block length does not match header"));
        }
        if format!("{:016x}", fnv1a(block)) != header.block_fnv1a {
            return Err(corrupt("data block checksum mismatch"));
        }
        if header.dim != header.scenario.state_dim() || header.normalization.dim() != header.dim {
            return Err(corrupt("state dimension disagrees with scenario"));
        }
        let values: Vec<f64> = block
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let mut windows = Vec::with_capacity(header.windows.len());
        for (i, &[demo, start]) in header.windows.iter().enumerate() {
            let info = header.demos.get(demo).ok_or_else(|| corrupt("window refers to a missing demo"))?;
            windows.push(ActionWindow {
                sequence: values[i * per_window..(i + 1) * per_window].to_vec(),
                width: header.width,
                dim: header.dim,
                labels: info.labels.clone(),
                demo,
                start,
            });
        }
        Ok(Self {
            scenario: header.scenario,
            build: header.build,
            directive_names: header.directive_names,
            demos: header.demos,
            windows,
            normalization: header.normalization,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let io = |source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = std::fs::File::create(path).map_err(io)?;
        f.write_all(&self.to_bytes()).map_err(io)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let bytes = std::fs::read(path).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}
