//! The DBPC checkpoint format.
//!
//! Layout, little-endian:
//!
//! ```text
//! magic  b"DBPC"
//! u32    version (currently 1)
//! config block:
//!   u32 input_height, u32 input_width
//!   u32 n_enc, u32[n_enc] encoder channels
//!   u32 n_dec, u32[n_dec] decoder channels
//!   u32 stem channels
//!   u8  rgb_only
//!   u64 seed
//!   f64 depth_scale_mm, f64 depth_bias_mm, f64 logvar_bias
//! u32    tensor count
//! per tensor:
//!   u32 name length, name utf-8 bytes
//!   u32 rank, u32[rank] dims
//!   f32[product(dims)] values
//! ```
//!
//! Round trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use dbp_core::net::{Model, NetConfig};
use dbp_core::tensor::Tensor;

use crate::{DbpError, Result};

pub const MAGIC: [u8; 4] = *b"DBPC";
pub const VERSION: u32 = 1;

pub fn save_checkpoint(model: &Model<f32>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| DbpError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| DbpError::io(path, e);

    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = model.config();
    buf.extend_from_slice(&(cfg.input_height as u32).to_le_bytes());
    buf.extend_from_slice(&(cfg.input_width as u32).to_le_bytes());
    buf.extend_from_slice(&(cfg.encoder_channels.len() as u32).to_le_bytes());
    for &c in &cfg.encoder_channels {
        buf.extend_from_slice(&(c as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(cfg.decoder_channels.len() as u32).to_le_bytes());
    for &c in &cfg.decoder_channels {
        buf.extend_from_slice(&(c as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(cfg.stem_channels as u32).to_le_bytes());
    buf.push(u8::from(cfg.rgb_only));
    buf.extend_from_slice(&cfg.seed.to_le_bytes());
    buf.extend_from_slice(&cfg.depth_scale_mm.to_le_bytes());
    buf.extend_from_slice(&cfg.depth_bias_mm.to_le_bytes());
    buf.extend_from_slice(&cfg.logvar_bias.to_le_bytes());

    buf.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for (name, tensor) in model.params() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io)?;
    w.flush().map_err(io)
}

/// Loads a checkpoint. When `expected` is given, the stored configuration
/// must match it exactly.
pub fn load_checkpoint(path: &Path, expected: Option<&NetConfig>) -> Result<Model<f32>> {
    let file = File::open(path).map_err(|e| DbpError::io(path, e))?;
    let mut r = BufReader::new(file);
    let pstr = path.display().to_string();

    let mut take = |n: usize, what: &str| -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        r.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                DbpError::Truncated {
                    path: pstr.clone(),
                    what: what.to_string(),
                }
            } else {
                DbpError::io(path, e)
            }
        })?;
        Ok(buf)
    };

    let magic = take(4, "magic")?;
    if magic != MAGIC {
        return Err(DbpError::BadMagic {
            path: pstr,
            found: [magic[0], magic[1], magic[2], magic[3]],
            expected: MAGIC,
        });
    }
    let u32of = |b: &[u8]| u32::from_le_bytes([b[0], b[1], b[2], b[3]]);
    let version = u32of(&take(4, "version")?);
    if version != VERSION {
        return Err(DbpError::UnsupportedVersion {
            path: pstr,
            found: version,
            expected: VERSION,
        });
    }

    let input_height = u32of(&take(4, "config")?) as usize;
    let input_width = u32of(&take(4, "config")?) as usize;
    let n_enc = u32of(&take(4, "config")?) as usize;
    let mut encoder_channels = Vec::with_capacity(n_enc);
    for _ in 0..n_enc {
        encoder_channels.push(u32of(&take(4, "config")?) as usize);
    }
    let n_dec = u32of(&take(4, "config")?) as usize;
    let mut decoder_channels = Vec::with_capacity(n_dec);
    for _ in 0..n_dec {
        decoder_channels.push(u32of(&take(4, "config")?) as usize);
    }
    let stem_channels = u32of(&take(4, "config")?) as usize;
    let rgb_only = take(1, "config")?[0] != 0;
    let seed = u64::from_le_bytes(take(8, "config")?.try_into().expect("8 bytes"));
    let f64of = |b: Vec<u8>| f64::from_le_bytes(b.try_into().expect("8 bytes"));
    let depth_scale_mm = f64of(take(8, "config")?);
    let depth_bias_mm = f64of(take(8, "config")?);
    let logvar_bias = f64of(take(8, "config")?);
    let config = NetConfig {
        input_height,
        input_width,
        encoder_channels,
        decoder_channels,
        stem_channels,
        rgb_only,
        seed,
        depth_scale_mm,
        depth_bias_mm,
        logvar_bias,
    };

    if let Some(want) = expected {
        if *want != config {
            return Err(DbpError::ConfigMismatch {
                msg: format!("checkpoint carries {config:?}, expected {want:?}"),
            });
        }
    }

    let count = u32of(&take(4, "tensor count")?) as usize;
    let mut params = Vec::with_capacity(count);
    for i in 0..count {
        let what = format!("tensor {i}");
        let name_len = u32of(&take(4, &what)?) as usize;
        let name = String::from_utf8(take(name_len, &what)?).map_err(|_| DbpError::Truncated {
            path: path.display().to_string(),
            what: format!("tensor {i} name"),
        })?;
        let rank = u32of(&take(4, &what)?) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32of(&take(4, &what)?) as usize);
        }
        let numel: usize = shape.iter().product();
        let bytes = take(numel * 4, &what)?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let tensor = Tensor::new(shape, data).map_err(DbpError::Core)?;
        params.push((name, tensor));
    }

    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|e| DbpError::io(path, e))?;
    if !rest.is_empty() {
        return Err(DbpError::TrailingBytes {
            path: path.display().to_string(),
            len: rest.len(),
        });
    }

    Model::from_parts(config, params).map_err(|e| DbpError::ConfigMismatch {
        msg: e.to_string(),
    })
}
