//! Checkpoint container: a plain sequence of (name length u16, utf-8
//! name, CSRT tensor record) entries, in lexicographic name order when
//! written by this crate. An empty file is a valid zero-entry checkpoint.
//! Round-trips are bitwise lossless at matching precision.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::params::HasParams;
use crate::tensor::{Scalar, Tensor4};

pub fn write_entries<T: Scalar, W: Write>(
    entries: &[(String, &Tensor4<T>)],
    out: &mut ByteWriter<W>,
) -> Result<()> {
    for (name, tensor) in entries {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len())
            .map_err(|_| Error::Config(format!("slot name too long: {name}")))?;
        out.u16(len)?;
        out.bytes(bytes)?;
        tensor.write_to(out)?;
    }
    Ok(())
}

pub fn read_entries<T: Scalar>(bytes: &[u8]) -> Result<Vec<(String, Tensor4<T>)>> {
    let mut r = ByteReader::new(bytes, "checkpoint");
    let mut entries = Vec::new();
    loop {
        let mut len_buf = [0u8; 2];
        match r.read_exact_or_eof(&mut len_buf)? {
            None => break,
            Some(()) => {}
        }
        let len = u16::from_le_bytes(len_buf) as u64;
        let name_bytes = r.bytes(len)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| r.error("slot name is not valid utf-8"))?;
        let tensor = Tensor4::read_from(&mut r)?;
        entries.push((name, tensor));
    }
    Ok(entries)
}

/// Saves a model's parameter slots (values only; gradients are transient).
pub fn checkpoint_save<T: Scalar, M: HasParams<T> + ?Sized>(
    model: &mut M,
    path: &Path,
) -> Result<()> {
    let mut pairs = model.params_mut();
    pairs.sort_by(|a, b| a.0.cmp(&b.0));
    let entries: Vec<(String, &Tensor4<T>)> = pairs
        .iter()
        .map(|(n, p)| (n.clone(), &p.value))
        .collect();
    let file = File::create(path)?;
    let mut w = ByteWriter::new(BufWriter::new(file));
    write_entries(&entries, &mut w)?;
    w.flush()
}

pub fn checkpoint_read<T: Scalar>(path: &Path) -> Result<Vec<(String, Tensor4<T>)>> {
    let mut bytes = Vec::new();
    std::io::Read::read_to_end(&mut BufReader::new(File::open(path)?), &mut bytes)?;
    read_entries(&bytes)
}

/// Loads entries into an existing model. In strict mode every file entry
/// must name a model slot and every model slot must be present; a shape
/// mismatch is always an error.
pub fn load_into<T: Scalar, M: HasParams<T> + ?Sized>(
    model: &mut M,
    entries: Vec<(String, Tensor4<T>)>,
    strict: bool,
) -> Result<()> {
    let mut slots = model.params_mut();
    let mut seen = vec![false; slots.len()];
    'entries: for (name, tensor) in entries {
        for (i, (slot_name, slot)) in slots.iter_mut().enumerate() {
            if *slot_name == name {
                if slot.value.shape() != tensor.shape() {
                    return Err(Error::shape(
                        "checkpoint load",
                        format!("{} for slot {name}", slot.value.shape()),
                        tensor.shape(),
                    ));
                }
                slot.value = tensor;
                seen[i] = true;
                continue 'entries;
            }
        }
        if strict {
            return Err(Error::Config(format!(
                "checkpoint names unknown slot '{name}'"
            )));
        }
    }
    if strict {
        for (i, (name, _)) in slots.iter().enumerate() {
            if !seen[i] {
                return Err(Error::Config(format!(
                    "checkpoint is missing slot '{name}'"
                )));
            }
        }
    }
    Ok(())
}

/// Loads a checkpoint file into a model (strict).
pub fn checkpoint_load<T: Scalar, M: HasParams<T> + ?Sized>(
    model: &mut M,
    path: &Path,
) -> Result<()> {
    load_into(model, checkpoint_read(path)?, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::ConvBNReLU;
    use crate::ops::Mode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("csrnet-ckpt-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn save_load_round_trips_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut layer = ConvBNReLU::<f64>::new(3, 4, 3, 1, &mut rng);
        // make running stats non-trivial
        let x = Tensor4::from_vec(2, 3, 4, 4, (0..96).map(|i| (i as f64).sin()).collect()).unwrap();
        layer.forward(&x, Mode::Train).unwrap();

        let path = tmp("round_trip.ckpt");
        checkpoint_save(&mut layer, &path).unwrap();

        let mut other = ConvBNReLU::<f64>::new(3, 4, 3, 1, &mut ChaCha8Rng::seed_from_u64(999));
        checkpoint_load(&mut other, &path).unwrap();

        let a = layer.params_mut();
        let mut b = other.params_mut();
        for (name, pa) in a {
            let pb = b.iter_mut().find(|(n, _)| *n == name).unwrap();
            assert_eq!(pa.value, pb.1.value, "{name}");
        }
    }

    #[test]
    fn mismatched_architecture_names_the_slot() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut small = ConvBNReLU::<f64>::new(3, 4, 3, 1, &mut rng);
        let path = tmp("mismatch.ckpt");
        checkpoint_save(&mut small, &path).unwrap();

        let mut big = ConvBNReLU::<f64>::new(3, 8, 3, 1, &mut ChaCha8Rng::seed_from_u64(1));
        let err = checkpoint_load(&mut big, &path).unwrap_err().to_string();
        // names the slot and both shapes
        assert!(err.contains("bn.beta"), "{err}");
        assert!(err.contains("(1,8,1,1)") && err.contains("(1,4,1,1)"), "{err}");
    }

    #[test]
    fn unknown_slot_is_rejected_in_strict_mode() {
        let t = Tensor4::<f64>::zeros(1, 1, 1, 1);
        let entries = vec![("nonexistent.slot".to_string(), t)];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut layer = ConvBNReLU::<f64>::new(1, 1, 1, 1, &mut rng);
        let err = load_into(&mut layer, entries, true).unwrap_err().to_string();
        assert!(err.contains("nonexistent.slot"), "{err}");
    }

    #[test]
    fn empty_file_is_a_valid_zero_entry_checkpoint() {
        let entries = read_entries::<f64>(&[]).unwrap();
        assert!(entries.is_empty());
    }

    #[test]
    fn truncated_checkpoint_is_an_error() {
        let mut buf = Vec::new();
        {
            let t = Tensor4::<f64>::zeros(1, 2, 2, 2);
            let entries = vec![("w".to_string(), &t)];
            write_entries(&entries, &mut ByteWriter::new(&mut buf)).unwrap();
        }
        buf.truncate(buf.len() - 1);
        assert!(matches!(
            read_entries::<f64>(&buf),
            Err(Error::Format { .. })
        ));
    }
}
