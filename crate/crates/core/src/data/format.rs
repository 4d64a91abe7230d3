//! Dataset container: magic "CSRD", version u16, sample count u32,
//! num_classes u8, then per sample u16 height, u16 width, interleaved
//! RGB bytes (h*w*3) and label bytes (h*w). Little-endian throughout.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::Path;

use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"CSRD";
pub const DATASET_VERSION: u16 = 1;

/// One stored sample, still in byte form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSample {
    pub h: usize,
    pub w: usize,
    /// h * w * 3, row-major, RGB interleaved
    pub rgb: Vec<u8>,
    /// h * w, row-major; 255 = ignore
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub num_classes: u8,
    pub samples: Vec<RawSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = ByteWriter::new(BufWriter::new(File::create(path)?));
        w.bytes(DATASET_MAGIC)?;
        w.u16(DATASET_VERSION)?;
        let count = u32::try_from(self.samples.len())
            .map_err(|_| Error::Config("dataset too large for u32 count".into()))?;
        w.u32(count)?;
        w.u8(self.num_classes)?;
        for s in &self.samples {
            let (h, w16) = (
                u16::try_from(s.h).map_err(|_| Error::Config("sample height exceeds u16".into()))?,
                u16::try_from(s.w).map_err(|_| Error::Config("sample width exceeds u16".into()))?,
            );
            w.u16(h)?;
            w.u16(w16)?;
            w.bytes(&s.rgb)?;
            w.bytes(&s.labels)?;
        }
        w.flush()
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let mut reader = DatasetReader::open(path)?;
        let mut samples = Vec::new();
        for s in &mut reader {
            samples.push(s?);
        }
        Ok(Dataset {
            num_classes: reader.num_classes,
            samples,
        })
    }

    /// Per-class pixel counts over the whole set (index = class id);
    /// ignored pixels are not counted.
    pub fn label_histogram(&self) -> Vec<u64> {
        let mut hist = vec![0u64; self.num_classes as usize];
        for s in &self.samples {
            for &l in &s.labels {
                if l != 255 {
                    hist[l as usize] += 1;
                }
            }
        }
        hist
    }
}

/// Streaming reader; each sample is validated as it is decoded and
/// errors carry the byte offset of the fault.
pub struct DatasetReader {
    r: ByteReader<BufReader<File>>,
    pub num_classes: u8,
    pub declared_count: u32,
    yielded: u32,
}

impl DatasetReader {
    pub fn open(path: &Path) -> Result<DatasetReader> {
        let file = BufReader::new(File::open(path)?);
        let mut r = ByteReader::new(file, "dataset");
        let (_version, count, num_classes) = read_header(&mut r)?;
        Ok(DatasetReader {
            r,
            num_classes,
            declared_count: count,
            yielded: 0,
        })
    }
}

fn read_header<R: Read>(r: &mut ByteReader<R>) -> Result<(u16, u32, u8)> {
    r.expect_magic(DATASET_MAGIC)?;
    let version = r.u16()?;
    if version != DATASET_VERSION {
        return Err(r.error(format!(
            "unsupported version {version}, expected {DATASET_VERSION}"
        )));
    }
    let count = r.u32()?;
    let num_classes = r.u8()?;
    if num_classes == 0 || num_classes == 255 {
        return Err(r.error(format!("invalid num_classes {num_classes}")));
    }
    Ok((version, count, num_classes))
}

impl Iterator for DatasetReader {
    type Item = Result<RawSample>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.yielded >= self.declared_count {
            return None;
        }
        self.yielded += 1;
        Some(read_sample(&mut self.r, self.num_classes))
    }
}

fn read_sample<R: Read>(r: &mut ByteReader<R>, num_classes: u8) -> Result<RawSample> {
    let h = r.u16()? as usize;
    let w = r.u16()? as usize;
    if h == 0 || w == 0 {
        return Err(r.error(format!("zero sample extent {h}x{w}")));
    }
    let rgb = r.bytes((h * w * 3) as u64)?;
    let labels = r.bytes((h * w) as u64)?;
    for (i, &l) in labels.iter().enumerate() {
        if l != 255 && l >= num_classes {
            return Err(r.error(format!(
                "label {l} at pixel {i} out of range for {num_classes} classes"
            )));
        }
    }
    Ok(RawSample { h, w, rgb, labels })
}

/// Reads a dataset from an arbitrary byte slice (used by the fuzz
/// harness and by tests).
pub fn read_dataset_bytes(bytes: &[u8]) -> Result<Dataset> {
    let mut r = ByteReader::new(bytes, "dataset");
    let (_v, count, num_classes) = read_header(&mut r)?;
    let mut samples = Vec::new();
    for _ in 0..count {
        samples.push(read_sample(&mut r, num_classes)?);
    }
    Ok(Dataset {
        num_classes,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dataset() -> Dataset {
        Dataset {
            num_classes: 3,
            samples: vec![
                RawSample {
                    h: 2,
                    w: 2,
                    rgb: (0..12).collect(),
                    labels: vec![0, 1, 2, 255],
                },
                RawSample {
                    h: 1,
                    w: 3,
                    rgb: (0..9).map(|v| v * 7).collect(),
                    labels: vec![2, 2, 0],
                },
            ],
        }
    }

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("csrnet-data-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn save_load_round_trips() {
        let ds = tiny_dataset();
        let path = tmp("roundtrip.csrd");
        ds.save(&path).unwrap();
        let back = Dataset::load(&path).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn truncated_file_reports_expected_length() {
        let ds = tiny_dataset();
        let path = tmp("trunc.csrd");
        ds.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 2);
        let err = read_dataset_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("truncated") && err.contains("byte offset"), "{err}");
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let mut ds = tiny_dataset();
        ds.samples[0].labels[0] = 7;
        let path = tmp("badlabel.csrd");
        ds.save(&path).unwrap();
        assert!(Dataset::load(&path).is_err());
    }

    #[test]
    fn histogram_skips_ignored_pixels() {
        let hist = tiny_dataset().label_histogram();
        assert_eq!(hist, vec![2, 1, 3]);
    }
}
