//! Single-file checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic          4 bytes  "SMN1"
//! version        u32      currently 1
//! arch_len       u32      byte length of the architecture block
//! arch           UTF-8    `key=value\n` lines, fixed key order
//! then for every parameter tensor in build order:
//!   name_len     u32
//!   name         UTF-8
//!   rank         u32
//!   dims         u32 × rank
//!   payload      f64 × Π dims, row-major IEEE-754
//! ```
//!
//! The file ends right after the last tensor.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::error::{Error, Result};
use crate::network::{
    ArchitectureConfig, Network, Parameters, FEATURE_MAPS, KERNEL_SIZE, NUM_CLASSES, POOL_SIZE,
};
use crate::nnops::Tensor;

pub const MAGIC: [u8; 4] = *b"SMN1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic {0:?}, not a checkpoint")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(String),
    #[error("architecture block: {0}")]
    Architecture(String),
    #[error("tensor {index}: expected {expected}, found {got}")]
    ShapeMismatch {
        index: usize,
        expected: String,
        got: String,
    },
    #[error("{0} unexpected bytes after the last tensor")]
    TrailingBytes(usize),
}

const ARCH_KEYS: [&str; 10] = [
    "num_convolutions",
    "num_hidden_layers",
    "units_per_hidden_layer",
    "dropout_rate",
    "input_height",
    "input_width",
    "kernel_size",
    "feature_maps",
    "pool_size",
    "num_classes",
];

fn architecture_block(cfg: &ArchitectureConfig) -> String {
    let values = [
        cfg.num_convolutions.to_string(),
        cfg.num_hidden_layers.to_string(),
        cfg.units_per_hidden_layer.to_string(),
        // `Display` for f64 prints the shortest string that round-trips.
        cfg.dropout_rate.to_string(),
        cfg.input_height.to_string(),
        cfg.input_width.to_string(),
        KERNEL_SIZE.to_string(),
        FEATURE_MAPS.to_string(),
        POOL_SIZE.to_string(),
        NUM_CLASSES.to_string(),
    ];
    ARCH_KEYS
        .iter()
        .zip(values)
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect()
}

fn parse_architecture(text: &str) -> Result<ArchitectureConfig, CheckpointError> {
    let bad = |msg: String| CheckpointError::Architecture(msg);
    let mut values: Vec<Option<&str>> = vec![None; ARCH_KEYS.len()];
    for line in text.lines() {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed line {line:?}")))?;
        let slot = ARCH_KEYS
            .iter()
            .position(|k| *k == key)
            .ok_or_else(|| bad(format!("unknown key {key:?}")))?;
        if values[slot].replace(value).is_some() {
            return Err(bad(format!("duplicate key {key:?}")));
        }
    }
    let get = |i: usize| values[i].ok_or_else(|| bad(format!("missing key {:?}", ARCH_KEYS[i])));
    let int = |i: usize| -> Result<usize, CheckpointError> {
        get(i)?
            .parse()
            .map_err(|_| bad(format!("{} is not an integer", ARCH_KEYS[i])))
    };
    for (i, fixed) in [
        (6, KERNEL_SIZE),
        (7, FEATURE_MAPS),
        (8, POOL_SIZE),
        (9, NUM_CLASSES),
    ] {
        let v = int(i)?;
        if v != fixed {
            return Err(bad(format!(
                "{} = {v}, this build supports {fixed}",
                ARCH_KEYS[i]
            )));
        }
    }
    Ok(ArchitectureConfig {
        num_convolutions: int(0)?,
        num_hidden_layers: int(1)?,
        units_per_hidden_layer: int(2)?,
        dropout_rate: get(3)?
            .parse()
            .map_err(|_| bad("dropout_rate is not a number".into()))?,
        input_height: int(4)?,
        input_width: int(5)?,
    })
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("checkpoint field exceeds u32");
    out.extend_from_slice(&v.to_le_bytes());
}

/// Serializes `net` into the canonical checkpoint byte layout.
pub fn encode(net: &Network) -> Vec<u8> {
    let params = net.params();
    let mut out = Vec::with_capacity(64 + 8 * params.count());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let arch = architecture_block(net.config());
    put_u32(&mut out, arch.len());
    out.extend_from_slice(arch.as_bytes());
    for (name, t) in params.names().iter().zip(params.tensors()) {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.rank());
        for &d in t.shape() {
            put_u32(&mut out, d);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CheckpointError::Truncated(what.to_string()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize, CheckpointError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

/// Parses checkpoint bytes and rebuilds the network they describe.
pub fn decode(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic).into());
    }
    let version = r.u32("version")? as u32;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version).into());
    }
    let arch_len = r.u32("architecture length")?;
    let arch = std::str::from_utf8(r.take(arch_len, "architecture block")?)
        .map_err(|_| CheckpointError::Architecture("not UTF-8".into()))?;
    let config = parse_architecture(arch)?;
    let mut params = Parameters::zeros_like(&config)
        .map_err(|e| CheckpointError::Architecture(e.to_string()))?;
    let names = params.names();

    for (index, (name, slot)) in names.iter().zip(params.tensors_mut()).enumerate() {
        let what = format!("tensor {index} ({name})");
        let name_len = r.u32(&what)?;
        let got_name = std::str::from_utf8(r.take(name_len, &what)?).unwrap_or("<non-UTF-8>");
        if got_name != name {
            return Err(CheckpointError::ShapeMismatch {
                index,
                expected: format!("name {name}"),
                got: format!("name {got_name}"),
            }
            .into());
        }
        let rank = r.u32(&what)?;
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(r.u32(&what)?);
        }
        if dims != slot.shape() {
            return Err(CheckpointError::ShapeMismatch {
                index,
                expected: format!("{name} dims {:?}", slot.shape()),
                got: format!("dims {dims:?}"),
            }
            .into());
        }
        let payload = r.take(8 * slot.len(), &what)?;
        for (v, chunk) in slot.data_mut().iter_mut().zip(payload.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if r.remaining() != 0 {
        return Err(CheckpointError::TrailingBytes(r.remaining()).into());
    }
    Network::from_parameters(config, params)
}

/// Writes the checkpoint through a sibling temp file and a rename. Returns
/// the number of bytes written.
pub fn save(net: &Network, path: impl AsRef<Path>) -> Result<u64> {
    let path = path.as_ref();
    let bytes = encode(net);
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })?;
    Ok(bytes.len() as u64)
}

pub fn load(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Serialized size of one tensor record.
pub fn tensor_record_len(name: &str, t: &Tensor) -> usize {
    4 + name.len() + 4 + 4 * t.rank() + 8 * t.len()
}
