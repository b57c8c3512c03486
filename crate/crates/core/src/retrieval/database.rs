//! Immutable code collections and the `HHC1` code file.
//!
//! ```text
//! "HHC1"  u32 K  u64 count
//! count × { u64 id, u64 label bitmask, ceil(K/64) × u64 code words }
//! ```
//!
//! All integers little-endian.

use std::collections::HashSet;
use std::path::Path;

use super::code::{words_for, HashCode};
use crate::binio::{read_file, write_file, Reader, WriteLe};
use crate::error::{Error, Result};
use crate::loss::Labels;

const MAGIC: &[u8; 4] = b"HHC1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodeDatabase {
    bits: usize,
    ids: Vec<u64>,
    labels: Vec<Labels>,
    words: Vec<u64>,
    /// Item indices in ascending id order.
    by_id: Vec<usize>,
}

impl CodeDatabase {
    pub fn new(bits: usize, ids: Vec<u64>, labels: Vec<Labels>, codes: Vec<HashCode>) -> Result<Self> {
        if ids.len() != labels.len() || ids.len() != codes.len() {
            return Err(Error::Data(format!(
                "{} ids, {} label sets, {} codes",
                ids.len(),
                labels.len(),
                codes.len()
            )));
        }
        if let Some(c) = codes.iter().find(|c| c.len() != bits) {
            return Err(Error::Data(format!("{}-bit code in a {bits}-bit database", c.len())));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|&&id| !seen.insert(id)) {
            return Err(Error::Data(format!("duplicate item id {dup}")));
        }
        let words = codes.iter().flat_map(|c| c.words().iter().copied()).collect();
        let mut by_id: Vec<usize> = (0..ids.len()).collect();
        by_id.sort_by_key(|&i| ids[i]);
        Ok(Self {
            bits,
            ids,
            labels,
            words,
            by_id,
        })
    }

    /// Items numbered `0..codes.len()`.
    pub fn sequential(bits: usize, labels: Vec<Labels>, codes: Vec<HashCode>) -> Result<Self> {
        let ids = (0..codes.len() as u64).collect();
        Self::new(bits, ids, labels, codes)
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn labels(&self) -> &[Labels] {
        &self.labels
    }

    pub(crate) fn words_of(&self, i: usize) -> &[u64] {
        let w = words_for(self.bits);
        &self.words[i * w..(i + 1) * w]
    }

    pub(crate) fn by_id(&self) -> &[usize] {
        &self.by_id
    }

    pub fn code(&self, i: usize) -> HashCode {
        HashCode::from_words(self.bits, self.words_of(i).to_vec()).expect("validated on insert")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let w = words_for(self.bits);
        let mut out = Vec::with_capacity(16 + self.len() * (16 + 8 * w));
        out.extend_from_slice(MAGIC);
        out.put_u32(self.bits as u32);
        out.put_u64(self.len() as u64);
        for i in 0..self.len() {
            out.put_u64(self.ids[i]);
            out.put_u64(self.labels[i]);
            for &word in self.words_of(i) {
                out.put_u64(word);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        let bits = r.u32("code length")? as usize;
        if bits == 0 {
            return Err(r.error("code length must be positive"));
        }
        let count = r.u64("item count")? as usize;
        let w = words_for(bits);
        let per_item = 16 + 8 * w;
        if r.remaining() < count.saturating_mul(per_item) {
            return Err(r.error(format!(
                "truncated item records: {count} items need {} bytes, {} left",
                count.saturating_mul(per_item),
                r.remaining()
            )));
        }
        let (mut ids, mut labels, mut codes) = (Vec::with_capacity(count), Vec::with_capacity(count), Vec::with_capacity(count));
        for _ in 0..count {
            ids.push(r.u64("item id")?);
            labels.push(r.u64("label bitmask")?);
            let at = r.offset();
            let words = (0..w).map(|_| r.u64("code word")).collect::<Result<Vec<_>>>()?;
            codes.push(HashCode::from_words(bits, words).map_err(|e| Error::Parse {
                offset: at,
                message: e.to_string(),
            })?);
        }
        r.finish()?;
        Self::new(bits, ids, labels, codes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{rngs::StdRng, Rng, SeedableRng};

    fn random_db(bits: usize, n: usize, seed: u64) -> CodeDatabase {
        let mut rng = StdRng::seed_from_u64(seed);
        let codes = (0..n)
            .map(|_| HashCode::from_bits(&(0..bits).map(|_| rng.random()).collect::<Vec<bool>>()))
            .collect();
        let ids = (0..n as u64).map(|i| i * 7 + 3).collect();
        let labels = (0..n).map(|_| 1u64 << rng.random_range(0..5)).collect();
        CodeDatabase::new(bits, ids, labels, codes).unwrap()
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        for bits in [16, 64, 100] {
            let db = random_db(bits, 25, bits as u64);
            let bytes = db.to_bytes();
            assert_eq!(&bytes[..4], b"HHC1");
            let back = CodeDatabase::from_bytes(&bytes).unwrap();
            assert_eq!(back, db);
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn header_layout() {
        let db = random_db(16, 2, 1);
        let bytes = db.to_bytes();
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 16);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 16 + 2 * 24);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = random_db(16, 4, 2).to_bytes();
        assert!(matches!(CodeDatabase::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Parse { .. })));
        let mut stray = bytes.clone();
        stray[16 + 16 + 3] = 0xff;
        assert!(CodeDatabase::from_bytes(&stray).is_err());
        assert!(CodeDatabase::new(16, vec![1, 1], vec![1, 1], vec![HashCode::zeros(16); 2]).is_err());
    }
}
