//! File formats for images and sinograms.
//!
//! Two interchangeable encodings:
//!
//! * CSV: a `name,dimension` header line (`n_side` for images, `m` for
//!   sinograms) followed by one value per line.
//! * Binary: a 16-byte header (8-byte magic, u64 little-endian dimension)
//!   followed by the values as little-endian f64.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Image, Sinogram};

const IMAGE_MAGIC: &[u8; 8] = b"SPTIMG01";
const SINOGRAM_MAGIC: &[u8; 8] = b"SPTSIN01";

pub fn write_image_csv(path: &Path, image: &Image) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "n_side,{}", image.n_side())?;
    for v in image.values() {
        writeln!(w, "{v}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_image_csv(path: &Path) -> Result<Image> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty image CSV".into()))??;
    let n_side = parse_header(&header, "n_side")?;
    let values = parse_values(lines, n_side * n_side)?;
    Image::from_values(n_side, values)
}

pub fn write_sinogram_csv(path: &Path, sinogram: &Sinogram) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "m,{}", sinogram.len())?;
    for v in sinogram.values() {
        writeln!(w, "{v}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sinogram_csv(path: &Path) -> Result<Sinogram> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty sinogram CSV".into()))??;
    let m = parse_header(&header, "m")?;
    Ok(Sinogram::from_values(parse_values(lines, m)?))
}

pub fn write_image_binary(path: &Path, image: &Image) -> Result<()> {
    write_binary(path, IMAGE_MAGIC, image.n_side() as u64, image.values())
}

pub fn read_image_binary(path: &Path) -> Result<Image> {
    let (dim, values) = read_binary(path, IMAGE_MAGIC)?;
    let n_side = dim as usize;
    Image::from_values(n_side, values)
}

pub fn write_sinogram_binary(path: &Path, sinogram: &Sinogram) -> Result<()> {
    write_binary(path, SINOGRAM_MAGIC, sinogram.len() as u64, sinogram.values())
}

pub fn read_sinogram_binary(path: &Path) -> Result<Sinogram> {
    let (m, values) = read_binary(path, SINOGRAM_MAGIC)?;
    if values.len() != m as usize {
        return Err(Error::Format(format!(
            "sinogram payload has {} values, header says {m}",
            values.len()
        )));
    }
    Ok(Sinogram::from_values(values))
}

fn parse_header(line: &str, key: &str) -> Result<usize> {
    let (k, v) = line
        .split_once(',')
        .ok_or_else(|| Error::Format(format!("bad header line {line:?}")))?;
    if k.trim() != key {
        return Err(Error::Format(format!(
            "expected header key {key:?}, found {:?}",
            k.trim()
        )));
    }
    v.trim()
        .parse()
        .map_err(|_| Error::Format(format!("bad header dimension {v:?}")))
}

fn parse_values(
    lines: impl Iterator<Item = std::io::Result<String>>,
    expected: usize,
) -> Result<Vec<f64>> {
    let mut values = Vec::with_capacity(expected);
    for line in lines {
        let line = line?;
        let s = line.trim();
        if s.is_empty() {
            continue;
        }
        values.push(
            s.parse()
                .map_err(|_| Error::Format(format!("bad value line {s:?}")))?,
        );
    }
    if values.len() != expected {
        return Err(Error::Format(format!(
            "expected {expected} values, found {}",
            values.len()
        )));
    }
    Ok(values)
}

fn write_binary(path: &Path, magic: &[u8; 8], dim: u64, values: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(magic)?;
    w.write_all(&dim.to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_binary(path: &Path, magic: &[u8; 8]) -> Result<(u64, Vec<f64>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[..8] != magic {
        return Err(Error::Format(format!(
            "bad magic in {}: expected {:?}",
            path.display(),
            std::str::from_utf8(magic).unwrap_or("?")
        )));
    }
    let dim = u64::from_le_bytes(header[8..16].try_into().unwrap());
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() % 8 != 0 {
        return Err(Error::Format("binary payload not a multiple of 8 bytes".into()));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dim, values))
}
