//! Path batch serialization.
//!
//! The binary layout is little endian:
//!
//! ```text
//! magic    8 bytes  "RMSYPATH"
//! version  u32      1
//! n_paths  u64
//! n_times  u64
//! times    n_times × f64
//! states   n_paths × n_times × f64   (row-major by path)
//! rates    n_paths × n_times × f64
//! ```

use std::io::{Read, Write};

use super::PathBatch;
use crate::error::{Error, Result};
use crate::hjb::value::fmt;

pub const MAGIC: &[u8; 8] = b"RMSYPATH";
pub const VERSION: u32 = 1;

/// One `path,t,x,c` row per recorded node.
pub fn write_csv<W: Write>(batch: &PathBatch, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["path", "t", "x", "c"])?;
    for p in 0..batch.n_paths {
        let xs = batch.states_of(p);
        let cs = batch.consumptions_of(p);
        for (k, t) in batch.times.iter().enumerate() {
            w.write_record(&[p.to_string(), fmt(*t), fmt(xs[k]), fmt(cs[k])])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_binary<W: Write>(batch: &PathBatch, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(batch.n_paths as u64).to_le_bytes())?;
    out.write_all(&(batch.n_times() as u64).to_le_bytes())?;
    for v in batch.times.iter().chain(&batch.states).chain(&batch.consumptions) {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Decoded binary dump: `(times, states, rates, n_paths)`.
pub struct BinaryDump {
    pub n_paths: usize,
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub consumptions: Vec<f64>,
}

pub fn read_binary<R: Read>(mut input: R) -> Result<BinaryDump> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::domain("not a path dump (bad magic)"));
    }
    let mut b4 = [0u8; 4];
    input.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(Error::domain(format!("unsupported dump version {version}")));
    }
    let mut b8 = [0u8; 8];
    input.read_exact(&mut b8)?;
    let n_paths = u64::from_le_bytes(b8) as usize;
    input.read_exact(&mut b8)?;
    let n_times = u64::from_le_bytes(b8) as usize;
    let mut read_vec = |len: usize| -> Result<Vec<f64>> {
        let mut v = Vec::with_capacity(len);
        for _ in 0..len {
            input.read_exact(&mut b8)?;
            v.push(f64::from_le_bytes(b8));
        }
        Ok(v)
    };
    let times = read_vec(n_times)?;
    let states = read_vec(n_paths * n_times)?;
    let consumptions = read_vec(n_paths * n_times)?;
    Ok(BinaryDump {
        n_paths,
        times,
        states,
        consumptions,
    })
}
