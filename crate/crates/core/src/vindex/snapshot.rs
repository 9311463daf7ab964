//! Binary snapshot of the live records of a [`VectorIndex`].
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "ZBRD" | version u16 | dim u16 | metric u8 (0 = cosine) | rng_seed u64 | count u64
//! count x { record_id u64 | dim x f32 | sku_id, name, category, meta (u32 len + UTF-8) | price_cents u64 }
//! crc32 u32 (IEEE) of every preceding byte
//! ```
//!
//! The graph is not stored; loading reinserts the records in file order
//! with the stored seed, which reproduces the graph deterministically.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{HnswParams, IndexError, Payload, VectorIndex};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"ZBRD";
pub const SNAPSHOT_VERSION: u16 = 1;
const METRIC_COSINE: u8 = 0;

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| IndexError::Corrupt("unexpected end of snapshot".into()))?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], IndexError> {
        Ok(self.take(N)?.try_into().expect("take returns N bytes"))
    }

    fn u8(&mut self) -> Result<u8, IndexError> {
        Ok(self.array::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16, IndexError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn string(&mut self) -> Result<String, IndexError> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| IndexError::Corrupt("payload string is not UTF-8".into()))
    }
}

impl VectorIndex {
    /// Encodes the live records in the snapshot format.
    pub fn to_snapshot_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(27 + self.len() * (self.dim * 4 + 64));
        buf.extend_from_slice(SNAPSHOT_MAGIC);
        buf.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dim as u16).to_le_bytes());
        buf.push(METRIC_COSINE);
        buf.extend_from_slice(&self.params.rng_seed.to_le_bytes());
        buf.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for r in self.records() {
            buf.extend_from_slice(&r.record_id.to_le_bytes());
            for v in r.vector {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            put_str(&mut buf, &r.payload.sku_id);
            put_str(&mut buf, &r.payload.name);
            put_str(&mut buf, &r.payload.category);
            put_str(&mut buf, &r.payload.meta);
            buf.extend_from_slice(&r.payload.price_cents.to_le_bytes());
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    /// Decodes a snapshot. `params` supplies the graph parameters; the seed
    /// is taken from the file.
    pub fn from_snapshot_bytes(data: &[u8], params: HnswParams) -> Result<Self, IndexError> {
        if data.len() < 4 {
            return Err(IndexError::ChecksumMismatch);
        }
        let (body, tail) = data.split_at(data.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("split at len - 4"));
        if crc32fast::hash(body) != stored {
            return Err(IndexError::ChecksumMismatch);
        }

        let mut r = Reader { data: body, pos: 0 };
        if r.take(4).ok() != Some(&SNAPSHOT_MAGIC[..]) {
            return Err(IndexError::Corrupt("bad magic".into()));
        }
        let version = r.u16()?;
        if version != SNAPSHOT_VERSION {
            return Err(IndexError::VersionMismatch {
                found: version,
                expected: SNAPSHOT_VERSION,
            });
        }
        let dim = r.u16()? as usize;
        let metric = r.u8()?;
        if metric != METRIC_COSINE {
            return Err(IndexError::Corrupt(format!("unknown metric tag {metric}")));
        }
        let rng_seed = r.u64()?;
        let count = r.u64()?;

        let mut index = VectorIndex::new(dim, HnswParams { rng_seed, ..params })?;
        for _ in 0..count {
            let record_id = r.u64()?;
            let raw = r.take(dim * 4)?;
            let vector: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                .collect();
            if vector.iter().any(|v| !v.is_finite()) {
                return Err(IndexError::Corrupt(format!("record {record_id} has a non-finite component")));
            }
            let sku_id = r.string()?;
            let name = r.string()?;
            let category = r.string()?;
            let meta = r.string()?;
            let price_cents = r.u64()?;
            if index.contains(record_id) {
                return Err(IndexError::Corrupt(format!("duplicate record id {record_id}")));
            }
            index.insert_raw(
                record_id,
                vector,
                Payload {
                    sku_id,
                    name,
                    price_cents,
                    category,
                    meta,
                },
            );
        }
        if r.pos != body.len() {
            return Err(IndexError::Corrupt("trailing bytes after records".into()));
        }
        Ok(index)
    }

    /// Writes the snapshot through a temporary file and an atomic rename.
    pub fn save_snapshot(&self, path: &Path) -> Result<(), IndexError> {
        let bytes = self.to_snapshot_bytes();
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load_snapshot(path: &Path, params: HnswParams) -> Result<Self, IndexError> {
        let data = fs::read(path)?;
        Self::from_snapshot_bytes(&data, params)
    }
}
