//! Flat binary dataset files.
//!
//! All integers little-endian:
//!
//! | field        | type  |
//! |--------------|-------|
//! | magic        | `b"RFWD"` |
//! | version      | u32 (= 1) |
//! | N            | u64   |
//! | width        | u32 (= 16) |
//! | decide_index | u32   |
//! | center       | f64   |
//! | windows      | N·width × f32 |
//! | labels       | N × u8 |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{WindowedDataset, WINDOW};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"RFWD";
pub const VERSION: u32 = 1;

pub fn write_dataset(dataset: &WindowedDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(dataset.len() as u64).to_le_bytes())?;
    w.write_all(&(WINDOW as u32).to_le_bytes())?;
    w.write_all(&(dataset.decide_index as u32).to_le_bytes())?;
    w.write_all(&dataset.center.to_le_bytes())?;
    for &x in &dataset.inputs {
        w.write_all(&(x as f32).to_le_bytes())?;
    }
    w.write_all(&dataset.labels)?;
    w.flush()?;
    Ok(())
}

fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("file ends inside the header".into()))?;
    Ok(buf)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<WindowedDataset> {
    let mut r = BufReader::new(File::open(path)?);
    if take::<4>(&mut r)? != MAGIC {
        return Err(Error::Format("bad magic, not a window dataset".into()));
    }
    let version = u32::from_le_bytes(take(&mut r)?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let n = usize::try_from(u64::from_le_bytes(take(&mut r)?))
        .map_err(|_| Error::Format("window count overflows".into()))?;
    let width = u32::from_le_bytes(take(&mut r)?) as usize;
    if width != WINDOW {
        return Err(Error::Format(format!("window width {width}, expected {WINDOW}")));
    }
    let decide_index = u32::from_le_bytes(take(&mut r)?) as usize;
    let center = f64::from_le_bytes(take(&mut r)?);

    let mut raw = vec![0u8; n * width * 4];
    r.read_exact(&mut raw)
        .map_err(|_| Error::Format("file ends inside the windows".into()))?;
    let inputs = raw
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    let mut labels = vec![0u8; n];
    r.read_exact(&mut labels)
        .map_err(|_| Error::Format("file ends inside the labels".into()))?;
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::Format("labels must be 0 or 1".into()));
    }
    if r.read(&mut [0u8])? != 0 {
        return Err(Error::Format("trailing bytes after labels".into()));
    }
    Ok(WindowedDataset {
        inputs,
        labels,
        decide_index,
        center,
        powers: vec![None; n],
        distance: None,
        seed: 0,
    })
}
