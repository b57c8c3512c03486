//! The `HHDS` container:
//!
//! ```text
//! "HHDS"  u32 version = 1  u32 N  u32 H  u32 W  u32 C  u32 L
//! N × { H·W·C pixel bytes (row-major, channels-last), u64 label bitmask }
//! ```
//!
//! A dataset directory holds one container per split: `train.hhds`,
//! `query.hhds`, `database.hhds`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::binio::{read_file, write_file, Reader, WriteLe};
use crate::error::{Error, Result};
use crate::loss::Labels;

const MAGIC: &[u8; 4] = b"HHDS";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageDataset {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub num_classes: usize,
    pixels: Vec<u8>,
    labels: Vec<Labels>,
}

impl ImageDataset {
    pub fn new(
        (height, width, channels): (usize, usize, usize),
        num_classes: usize,
        pixels: Vec<u8>,
        labels: Vec<Labels>,
    ) -> Result<Self> {
        let ds = Self {
            height,
            width,
            channels,
            num_classes,
            pixels,
            labels,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::Data("image extents must be positive".into()));
        }
        if self.num_classes == 0 || self.num_classes > 64 {
            return Err(Error::Data(format!("{} classes; 1..=64 supported", self.num_classes)));
        }
        if self.pixels.len() != self.labels.len() * self.image_len() {
            return Err(Error::Data(format!(
                "{} pixel bytes for {} images of {} bytes",
                self.pixels.len(),
                self.labels.len(),
                self.image_len()
            )));
        }
        let valid = if self.num_classes == 64 { u64::MAX } else { (1u64 << self.num_classes) - 1 };
        if let Some(i) = self.labels.iter().position(|&l| l == 0 || l & !valid != 0) {
            return Err(Error::Data(format!(
                "image {i} has label mask {:#x}; need at least one of {} classes",
                self.labels[i], self.num_classes
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn labels(&self) -> &[Labels] {
        &self.labels
    }

    /// Items per class (multi-label items count once per class).
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &l in &self.labels {
            for (c, slot) in h.iter_mut().enumerate() {
                if l >> c & 1 == 1 {
                    *slot += 1;
                }
            }
        }
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(28 + self.pixels.len() + 8 * self.len());
        out.extend_from_slice(MAGIC);
        out.put_u32(VERSION);
        for v in [self.len(), self.height, self.width, self.channels, self.num_classes] {
            out.put_u32(v as u32);
        }
        for i in 0..self.len() {
            out.extend_from_slice(self.image(i));
            out.put_u64(self.labels[i]);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(r.error(format!("unsupported HHDS version {version}")));
        }
        let n = r.u32("header field N")? as usize;
        let h = r.u32("header field H")? as usize;
        let w = r.u32("header field W")? as usize;
        let c = r.u32("header field C")? as usize;
        let l = r.u32("header field L")? as usize;
        let image_len = h * w * c;
        let mut pixels = Vec::with_capacity(n.saturating_mul(image_len).min(bytes.len()));
        let mut labels = Vec::with_capacity(n.min(bytes.len() / 8));
        for i in 0..n {
            pixels.extend_from_slice(r.bytes(image_len, &format!("pixels of record {i}"))?);
            labels.push(r.u64(&format!("label of record {i}"))?);
        }
        r.finish()?;
        let at = r.offset();
        Self::new((h, w, c), l, pixels, labels).map_err(|e| Error::Parse {
            offset: at,
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Query,
    Database,
}

impl Split {
    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.hhds",
            Split::Query => "query.hhds",
            Split::Database => "database.hhds",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Query => "query",
            Split::Database => "database",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "query" => Ok(Split::Query),
            "database" => Ok(Split::Database),
            other => Err(Error::Config(format!("unknown split `{other}` (train|query|database)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplits {
    pub train: ImageDataset,
    pub query: ImageDataset,
    pub database: ImageDataset,
}

impl DatasetSplits {
    pub fn get(&self, split: Split) -> &ImageDataset {
        match split {
            Split::Train => &self.train,
            Split::Query => &self.query,
            Split::Database => &self.database,
        }
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        for split in [Split::Train, Split::Query, Split::Database] {
            self.get(split).save(&dir.join(split.file_name()))?;
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        Ok(Self {
            train: ImageDataset::load(&dir.join(Split::Train.file_name()))?,
            query: ImageDataset::load(&dir.join(Split::Query.file_name()))?,
            database: ImageDataset::load(&dir.join(Split::Database.file_name()))?,
        })
    }

    pub fn load_split(dir: &Path, split: Split) -> Result<ImageDataset> {
        ImageDataset::load(&dir.join(split.file_name()))
    }
}
