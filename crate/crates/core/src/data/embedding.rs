//! Frame-embedding tables and their binary on-disk format.
//!
//! One table holds the frame-level embedding rows for every clip of one view.
//! The file layout is fixed so files are portable across tools and platforms:
//!
//! ```text
//! magic "EGOPRIV1"            8 bytes
//! n_clips                     u32 little-endian
//! dim                         u32 little-endian
//! per clip, n_clips times:
//!   id_len                    u16 little-endian
//!   clip id                   id_len bytes of UTF-8
//!   frame_count               u32 little-endian
//!   frames                    frame_count * dim f32 little-endian, row-major
//! ```
//!
//! Clips are written in ascending id order, and floats round-trip bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"EGOPRIV1";

/// Frame embeddings for a set of clips, all with the same dimensionality.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    normalized: bool,
    rows: BTreeMap<String, Array2<f32>>,
}

impl EmbeddingTable {
    /// Empty table for vectors of width `dim`.
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("embedding dim must be positive".into()));
        }
        Ok(EmbeddingTable { dim, normalized: false, rows: BTreeMap::new() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Whether every frame vector is unit L2-normalized (within 1e-5).
    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn contains(&self, clip_id: &str) -> bool {
        self.rows.contains_key(clip_id)
    }

    /// Frame matrix (`frame_count x dim`) for a clip.
    pub fn frames(&self, clip_id: &str) -> Option<&Array2<f32>> {
        self.rows.get(clip_id)
    }

    /// Clip ids in ascending order.
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f32>)> {
        self.rows.iter().map(|(id, m)| (id.as_str(), m))
    }

    /// Add the frame rows for one clip.
    pub fn insert(&mut self, clip_id: String, frames: Array2<f32>) -> Result<()> {
        if frames.ncols() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "clip '{}' has rows of width {}, table dim is {}",
                clip_id,
                frames.ncols(),
                self.dim
            )));
        }
        if frames.nrows() == 0 {
            return Err(Error::InvalidInput(format!("clip '{clip_id}' has zero frames")));
        }
        if self.rows.contains_key(&clip_id) {
            return Err(Error::InvalidInput(format!("duplicate clip id '{clip_id}'")));
        }
        if self.normalized {
            check_unit_rows(&clip_id, &frames)?;
        }
        self.rows.insert(clip_id, frames);
        Ok(())
    }

    /// Declare the table unit-normalized after checking every row.
    pub fn mark_normalized(&mut self) -> Result<()> {
        for (id, frames) in &self.rows {
            check_unit_rows(id, frames)?;
        }
        self.normalized = true;
        Ok(())
    }

    /// Read a table from its binary file format.
    pub fn read(path: &Path) -> Result<Self> {
        let buf = fs::read(path)?;
        let mut cur = Cursor { buf: &buf, pos: 0 };

        let magic = cur.take(8).map_err(|_| malformed("file shorter than header"))?;
        if magic != MAGIC {
            return Err(malformed("bad magic bytes"));
        }
        let n_clips = cur.u32().map_err(|_| malformed("file shorter than header"))? as usize;
        let dim = cur.u32().map_err(|_| malformed("file shorter than header"))? as usize;
        let mut table = EmbeddingTable::new(dim)
            .map_err(|_| malformed("header dim is zero"))?;

        for _ in 0..n_clips {
            let id_len = cur.u16().map_err(|_| truncated(dim))? as usize;
            let id_bytes = cur.take(id_len).map_err(|_| truncated(dim))?;
            let id = std::str::from_utf8(id_bytes)
                .map_err(|_| malformed("clip id is not valid UTF-8"))?
                .to_string();
            let frame_count = cur.u32().map_err(|_| truncated(dim))? as usize;
            if frame_count == 0 {
                return Err(malformed(&format!("clip '{id}' has zero frames")));
            }
            let n_vals = frame_count
                .checked_mul(dim)
                .ok_or_else(|| malformed("frame_count * dim overflows"))?;
            let payload = cur.take(n_vals * 4).map_err(|_| truncated(dim))?;
            let mut vals = Vec::with_capacity(n_vals);
            for chunk in payload.chunks_exact(4) {
                vals.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
            }
            let frames = Array2::from_shape_vec((frame_count, dim), vals)
                .expect("shape matches payload length by construction");
            table.insert(id, frames).map_err(|e| match e {
                Error::InvalidInput(msg) => malformed(&msg),
                other => other,
            })?;
        }
        if cur.pos != buf.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} trailing bytes after {} clips; header dim {} disagrees with payload",
                buf.len() - cur.pos,
                n_clips,
                dim
            )));
        }
        Ok(table)
    }

    /// Write the table in its binary file format (clips in ascending id order).
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out: Vec<u8> = Vec::new();
        out.extend_from_slice(MAGIC);
        let n_clips = u32::try_from(self.rows.len())
            .map_err(|_| Error::InvalidInput("too many clips for u32 header".into()))?;
        out.extend_from_slice(&n_clips.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for (id, frames) in &self.rows {
            let id_len = u16::try_from(id.len())
                .map_err(|_| Error::InvalidInput(format!("clip id '{id}' exceeds u16 length")))?;
            out.extend_from_slice(&id_len.to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            out.extend_from_slice(&(frames.nrows() as u32).to_le_bytes());
            for v in frames.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(path, out)?;
        Ok(())
    }
}

fn check_unit_rows(id: &str, frames: &Array2<f32>) -> Result<()> {
    for (i, row) in frames.rows().into_iter().enumerate() {
        let norm = row.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-5 {
            return Err(Error::InvalidInput(format!(
                "table marked normalized but clip '{id}' frame {i} has norm {norm}"
            )));
        }
    }
    Ok(())
}

fn malformed(msg: &str) -> Error {
    Error::MalformedEmbeddingFile(msg.to_string())
}

fn truncated(dim: usize) -> Error {
    Error::DimensionMismatch(format!(
        "file ends inside a clip record; header dim {dim} disagrees with payload"
    ))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], ()> {
        if self.pos + n > self.buf.len() {
            return Err(());
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self) -> std::result::Result<u16, ()> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> std::result::Result<u32, ()> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn sample_table(dim: usize, n_clips: usize, seed: u64) -> EmbeddingTable {
        let mut rng = SeededRng::new(seed);
        let mut table = EmbeddingTable::new(dim).unwrap();
        for c in 0..n_clips {
            let frames = 1 + rng.index(5);
            let vals: Vec<f32> = (0..frames * dim).map(|_| rng.gaussian() as f32).collect();
            let m = Array2::from_shape_vec((frames, dim), vals).unwrap();
            table.insert(format!("clip{c:03}"), m).unwrap();
        }
        table
    }

    #[test]
    fn write_read_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.emb");
        let table = sample_table(7, 12, 1);
        table.write(&path).unwrap();
        let back = EmbeddingTable::read(&path).unwrap();
        assert_eq!(table.len(), back.len());
        for (id, frames) in table.iter() {
            let got = back.frames(id).unwrap();
            assert_eq!(frames.dim(), got.dim());
            for (a, b) in frames.iter().zip(got.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn rewriting_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.emb");
        let b = dir.path().join("b.emb");
        let table = sample_table(5, 9, 2);
        table.write(&a).unwrap();
        EmbeddingTable::read(&a).unwrap().write(&b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.emb");
        let table = sample_table(3, 2, 3);
        table.write(&path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, bytes).unwrap();
        let err = EmbeddingTable::read(&path).unwrap_err();
        assert!(matches!(err, Error::MalformedEmbeddingFile(_)), "{err}");
    }

    #[test]
    fn header_dim_disagreeing_with_payload_is_a_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.emb");
        sample_table(4, 3, 4).write(&path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        // Patch the header dim (bytes 12..16) from 4 to 6: payload is now short.
        bytes[12..16].copy_from_slice(&6u32.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        let err = EmbeddingTable::read(&path).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)), "{err}");

        // Patching it down instead leaves trailing bytes.
        bytes[12..16].copy_from_slice(&2u32.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        let err = EmbeddingTable::read(&path).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)), "{err}");
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.emb");
        sample_table(4, 3, 5).write(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(EmbeddingTable::read(&path).is_err());
    }

    #[test]
    fn insert_rejects_wrong_width_and_duplicates() {
        let mut table = EmbeddingTable::new(4).unwrap();
        let bad = Array2::zeros((2, 3));
        assert!(matches!(table.insert("a".into(), bad), Err(Error::DimensionMismatch(_))));
        let ok = Array2::zeros((2, 4));
        table.insert("a".into(), ok.clone()).unwrap();
        assert!(matches!(table.insert("a".into(), ok), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn normalized_flag_requires_unit_rows() {
        let mut table = EmbeddingTable::new(3).unwrap();
        let unit = Array2::from_shape_vec((1, 3), vec![1.0, 0.0, 0.0]).unwrap();
        table.insert("u".into(), unit).unwrap();
        table.mark_normalized().unwrap();
        assert!(table.is_normalized());

        let not_unit = Array2::from_shape_vec((1, 3), vec![0.5, 0.5, 0.5]).unwrap();
        assert!(table.insert("v".into(), not_unit.clone()).is_err());

        let mut loose = EmbeddingTable::new(3).unwrap();
        loose.insert("v".into(), not_unit).unwrap();
        assert!(loose.mark_normalized().is_err());
        assert!(!loose.is_normalized());
    }

    #[test]
    fn empty_table_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.emb");
        let table = EmbeddingTable::new(2).unwrap();
        table.write(&path).unwrap();
        let back = EmbeddingTable::read(&path).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.dim(), 2);
    }
}
