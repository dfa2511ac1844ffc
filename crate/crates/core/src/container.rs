//! Binary container shared by channel datasets and covariance files.
//!
//! Layout: 8-byte magic `HBFJCAS\0`, little-endian `u64` header length,
//! UTF-8 JSON header, then the payload as little-endian `f64` values with
//! complex entries interleaved `re, im`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HBFJCAS\0";

const MAX_HEADER_BYTES: u64 = 64 << 20;

pub fn write_container<H: Serialize>(path: &Path, header: &H, payload: &[Complex64]) -> Result<()> {
    let header_json = serde_json::to_vec(header)
        .map_err(|e| Error::schema(path, format!("header serialization failed: {e}")))?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(MAGIC)?;
    put(&(header_json.len() as u64).to_le_bytes())?;
    put(&header_json)?;
    for z in payload {
        put(&z.re.to_le_bytes())?;
        put(&z.im.to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a container and returns the parsed header with the complex payload.
pub fn read_container<H: DeserializeOwned>(path: &Path) -> Result<(H, Vec<Complex64>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::schema(path, "file too short for magic header"))?;
    if &magic != MAGIC {
        return Err(Error::schema(path, "bad magic header"));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)
        .map_err(|_| Error::schema(path, "truncated header length"))?;
    let len = u64::from_le_bytes(len);
    if len > MAX_HEADER_BYTES {
        return Err(Error::schema(path, format!("header length {len} too large")));
    }
    let mut header_bytes = vec![0u8; len as usize];
    r.read_exact(&mut header_bytes)
        .map_err(|_| Error::schema(path, "truncated header"))?;
    let header: H = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::schema(path, format!("invalid header: {e}")))?;

    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    if rest.len() % 16 != 0 {
        return Err(Error::schema(path, "payload is not a whole number of complex entries"));
    }
    let payload = rest
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().unwrap());
            let im = f64::from_le_bytes(c[8..].try_into().unwrap());
            Complex64::new(re, im)
        })
        .collect();
    Ok((header, payload))
}
