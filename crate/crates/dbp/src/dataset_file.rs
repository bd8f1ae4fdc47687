//! The DBPD binary dataset container.
//!
//! Layout, all integers and floats little-endian, floats 32-bit:
//!
//! ```text
//! magic  b"DBPD"
//! u32    version (currently 1)
//! u32    sample count
//! per sample:
//!   u32 height, u32 width
//!   f32[3*h*w]  RGB, planar channels, row-major, in [0,1]
//!   f32[h*w]    sensor depth in mm (0.0 = invalid pixel)
//!   u32 row, u32 col      poke pixel
//!   u8  success
//!   f32 z_mm               tooltip depth label
//!   u8  ground_truth_present
//!   f32[h*w]    true depth, only if present
//! ```
//!
//! Round trips are bit-exact. Ground truth is written only for samples
//! that carry it, which generation gates behind an explicit evaluation
//! flag, so training files physically contain no oracle bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use dbp_core::sim::PokeSample;

use crate::{DbpError, Result};

pub const MAGIC: [u8; 4] = *b"DBPD";
pub const VERSION: u32 = 1;

struct Reader<'p, R> {
    inner: R,
    path: &'p Path,
    context: String,
}

impl<'p, R: Read> Reader<'p, R> {
    fn new(inner: R, path: &'p Path) -> Self {
        Reader {
            inner,
            path,
            context: String::from("header"),
        }
    }

    fn set_context(&mut self, what: impl Into<String>) {
        self.context = what.into();
    }

    fn take(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                DbpError::Truncated {
                    path: self.path.display().to_string(),
                    what: self.context.clone(),
                }
            } else {
                DbpError::io(self.path, e)
            }
        })
    }

    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.take(&mut b)?;
        Ok(b[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.take(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn f32(&mut self) -> Result<f32> {
        let mut b = [0u8; 4];
        self.take(&mut b)?;
        Ok(f32::from_le_bytes(b))
    }

    fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        let mut bytes = vec![0u8; n * 4];
        self.take(&mut bytes)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

/// Writes a dataset. All samples must share the same dimensions.
pub fn write_dataset(samples: &[PokeSample], path: &Path) -> Result<()> {
    if let Some(first) = samples.first() {
        for (i, s) in samples.iter().enumerate() {
            if s.height != first.height || s.width != first.width {
                return Err(DbpError::DimMismatch {
                    path: path.display().to_string(),
                    msg: format!(
                        "sample {i} is {}x{}, expected {}x{}",
                        s.height, s.width, first.height, first.width
                    ),
                });
            }
        }
    }
    let file = File::create(path).map_err(|e| DbpError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_all(&mut w, path, &MAGIC)?;
    write_all(&mut w, path, &VERSION.to_le_bytes())?;
    write_all(&mut w, path, &(samples.len() as u32).to_le_bytes())?;
    for s in samples {
        write_all(&mut w, path, &(s.height as u32).to_le_bytes())?;
        write_all(&mut w, path, &(s.width as u32).to_le_bytes())?;
        write_f32s(&mut w, path, &s.rgb)?;
        write_f32s(&mut w, path, &s.depth)?;
        write_all(&mut w, path, &(s.row as u32).to_le_bytes())?;
        write_all(&mut w, path, &(s.col as u32).to_le_bytes())?;
        write_all(&mut w, path, &[u8::from(s.success)])?;
        write_all(&mut w, path, &s.z_mm.to_le_bytes())?;
        match &s.ground_truth_mm {
            Some(gt) => {
                write_all(&mut w, path, &[1u8])?;
                write_f32s(&mut w, path, gt)?;
            }
            None => write_all(&mut w, path, &[0u8])?,
        }
    }
    w.flush().map_err(|e| DbpError::io(path, e))
}

fn write_all(w: &mut impl Write, path: &Path, bytes: &[u8]) -> Result<()> {
    w.write_all(bytes).map_err(|e| DbpError::io(path, e))
}

fn write_f32s(w: &mut impl Write, path: &Path, values: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_all(w, path, &bytes)
}

/// Reads a dataset, checking the magic, version, and exact file length.
pub fn read_dataset(path: &Path) -> Result<Vec<PokeSample>> {
    let file = File::open(path).map_err(|e| DbpError::io(path, e))?;
    let mut r = Reader::new(BufReader::new(file), path);

    let mut magic = [0u8; 4];
    r.take(&mut magic)?;
    if magic != MAGIC {
        return Err(DbpError::BadMagic {
            path: path.display().to_string(),
            found: magic,
            expected: MAGIC,
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(DbpError::UnsupportedVersion {
            path: path.display().to_string(),
            found: version,
            expected: VERSION,
        });
    }
    let count = r.u32()? as usize;
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        r.set_context(format!("record {i}"));
        let height = r.u32()? as usize;
        let width = r.u32()? as usize;
        if height == 0 || width == 0 || height > 1 << 16 || width > 1 << 16 {
            return Err(DbpError::DimMismatch {
                path: path.display().to_string(),
                msg: format!("record {i} declares {height}x{width}"),
            });
        }
        let rgb = r.f32_vec(3 * height * width)?;
        let depth = r.f32_vec(height * width)?;
        let row = r.u32()? as usize;
        let col = r.u32()? as usize;
        let success = r.u8()? != 0;
        let z_mm = r.f32()?;
        let ground_truth_mm = match r.u8()? {
            0 => None,
            _ => Some(r.f32_vec(height * width)?),
        };
        samples.push(PokeSample {
            height,
            width,
            rgb,
            depth,
            row,
            col,
            success,
            z_mm,
            ground_truth_mm,
        });
    }
    // The declared count must account for the entire file.
    let mut rest = Vec::new();
    r.inner
        .read_to_end(&mut rest)
        .map_err(|e| DbpError::io(path, e))?;
    if !rest.is_empty() {
        return Err(DbpError::TrailingBytes {
            path: path.display().to_string(),
            len: rest.len(),
        });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dbp_core::sim::{generate_dataset, SimulatorConfig};
    use std::fs;

    fn sample_set(gt: bool) -> Vec<PokeSample> {
        let mut cfg = SimulatorConfig::consumer();
        cfg.height = 16;
        cfg.width = 16;
        generate_dataset(&cfg, 2, 3, 7, gt).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.dbpd");
        let samples = sample_set(true);
        write_dataset(&samples, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.len(), 6);
        assert_eq!(samples, back);
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        for (a, b) in samples.iter().zip(&back) {
            assert_eq!(bits(&a.rgb), bits(&b.rgb));
            assert_eq!(bits(&a.depth), bits(&b.depth));
            assert_eq!(a.z_mm.to_bits(), b.z_mm.to_bits());
        }
    }

    #[test]
    fn corrupt_magic_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.dbpd");
        write_dataset(&sample_set(false), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_dataset(&path),
            Err(DbpError::BadMagic { .. })
        ));
    }

    #[test]
    fn wrong_version_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.dbpd");
        write_dataset(&sample_set(false), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[4] = 9;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_dataset(&path),
            Err(DbpError::UnsupportedVersion { found: 9, .. })
        ));
    }

    #[test]
    fn truncation_names_the_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.dbpd");
        write_dataset(&sample_set(false), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        match read_dataset(&path) {
            Err(DbpError::Truncated { what, .. }) => assert_eq!(what, "record 5"),
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.dbpd");
        write_dataset(&sample_set(false), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.extend_from_slice(&[0u8; 3]);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_dataset(&path),
            Err(DbpError::TrailingBytes { len: 3, .. })
        ));
    }

    #[test]
    fn mixed_dims_rejected_on_write() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.dbpd");
        let mut samples = sample_set(false);
        samples[1].height = 32;
        samples[1].rgb = vec![0.0; 3 * 32 * 16];
        samples[1].depth = vec![0.0; 32 * 16];
        assert!(matches!(
            write_dataset(&samples, &path),
            Err(DbpError::DimMismatch { .. })
        ));
    }

    #[test]
    fn training_files_contain_no_oracle_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let with = dir.path().join("with.dbpd");
        let without = dir.path().join("without.dbpd");
        write_dataset(&sample_set(true), &with).unwrap();
        write_dataset(&sample_set(false), &without).unwrap();
        let n = 6 * 16 * 16 * 4; // six ground-truth maps of f32s
        assert_eq!(
            fs::metadata(&with).unwrap().len(),
            fs::metadata(&without).unwrap().len() + n
        );
    }
}
