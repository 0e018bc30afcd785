//! Ensemble snapshots on disk.
//!
//! Binary layout (little endian): magic `STBSNAP\0`, version `u32`, dimension
//! `u32`, path count `u64`, time `f64`, seed `u64`, then `n * d` `f64` values
//! row-major. CSV layout: `time,seed,path,x0,...,x{d-1}`, one row per path.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use stabrate_core::sde::Ensemble;

use crate::error::{HarnessError, Result};

pub const MAGIC: [u8; 8] = *b"STBSNAP\0";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 4 + 8 + 8 + 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub dim: usize,
    pub time: f64,
    pub seed: u64,
    /// Row-major `n x dim`.
    pub points: Vec<f64>,
}

impl Snapshot {
    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }
}

impl From<&Ensemble> for Snapshot {
    fn from(e: &Ensemble) -> Self {
        Self { dim: e.dim, time: e.time, seed: e.meta.seed, points: e.points.clone() }
    }
}

fn format_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Format(msg.into())
}

pub fn write_binary(mut w: impl Write, s: &Snapshot) -> std::io::Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(s.dim as u32).to_le_bytes())?;
    w.write_all(&(s.len() as u64).to_le_bytes())?;
    w.write_all(&s.time.to_le_bytes())?;
    w.write_all(&s.seed.to_le_bytes())?;
    for v in &s.points {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

pub fn read_binary(mut r: impl Read) -> Result<Snapshot> {
    let mut h = [0u8; HEADER_LEN];
    r.read_exact(&mut h).map_err(|_| format_err("truncated header"))?;
    if h[..8] != MAGIC {
        return Err(format_err("bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(h[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(h[o..o + 8].try_into().unwrap());
    let version = u32_at(8);
    if version != VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let dim = u32_at(12) as usize;
    let n = u64_at(16) as usize;
    let time = f64::from_bits(u64_at(24));
    let seed = u64_at(32);
    if dim == 0 {
        return Err(format_err("zero dimension"));
    }
    let count = n.checked_mul(dim).ok_or_else(|| format_err("size overflow"))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| format_err(e.to_string()))?;
    if bytes.len() != count * 8 {
        return Err(format_err(format!("expected {} data bytes, found {}", count * 8, bytes.len())));
    }
    let points = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Snapshot { dim, time, seed, points })
}

pub fn save_binary(path: &Path, s: &Snapshot) -> Result<()> {
    let f = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    write_binary(BufWriter::new(f), s).map_err(|e| HarnessError::io(path, e))
}

pub fn load_binary(path: &Path) -> Result<Snapshot> {
    let f = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    read_binary(BufReader::new(f))
}

pub fn save_csv(path: &Path, s: &Snapshot) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["time".to_string(), "seed".into(), "path".into()];
    header.extend((0..s.dim).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for i in 0..s.len() {
        let mut rec = vec![format!("{}", s.time), s.seed.to_string(), i.to_string()];
        rec.extend(s.row(i).iter().map(|v| format!("{v}")));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn load_csv(path: &Path) -> Result<Snapshot> {
    let mut r = csv::Reader::from_path(path)?;
    let dim = r.headers()?.len().checked_sub(3).filter(|d| *d > 0).ok_or_else(|| format_err("need time,seed,path,x0.."))?;
    let (mut time, mut seed) = (f64::NAN, 0u64);
    let mut points = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| rec.get(k).ok_or_else(|| format_err(format!("row {i}: missing column {k}")));
        let parse_f = |k: usize| -> Result<f64> { field(k)?.parse().map_err(|_| format_err(format!("row {i}: bad number"))) };
        if i == 0 {
            time = parse_f(0)?;
            seed = field(1)?.parse().map_err(|_| format_err("bad seed"))?;
        }
        if field(2)?.parse::<usize>().ok() != Some(i) {
            return Err(format_err(format!("row {i}: path index out of order")));
        }
        for k in 0..dim {
            points.push(parse_f(3 + k)?);
        }
    }
    Ok(Snapshot { dim, time, seed, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn binary_round_trip(dim in 1usize..4, vals in prop::collection::vec(any::<f64>(), 0..24), seed: u64, time: f64) {
            let n = vals.len() / dim;
            let s = Snapshot { dim, time, seed, points: vals[..n * dim].to_vec() };
            let mut buf = Vec::new();
            write_binary(&mut buf, &s).unwrap();
            let back = read_binary(&buf[..]).unwrap();
            prop_assert_eq!(back.dim, s.dim);
            prop_assert_eq!(back.seed, s.seed);
            prop_assert_eq!(back.time.to_bits(), s.time.to_bits());
            let a: Vec<u64> = back.points.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = s.points.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn corrupt_binaries_are_rejected() {
        let s = Snapshot { dim: 2, time: 1.5, seed: 7, points: vec![1.0, 2.0, 3.0, 4.0] };
        let mut buf = Vec::new();
        write_binary(&mut buf, &s).unwrap();
        assert!(read_binary(&buf[..buf.len() - 1]).is_err());
        assert!(read_binary(&buf[..10]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_binary(&bad[..]).is_err());
        let mut bad = buf;
        bad[8] = 9;
        assert!(read_binary(&bad[..]).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let s = Snapshot { dim: 2, time: 0.25, seed: 3, points: vec![0.1, -2.5e-300, 1.0 / 3.0, 7.0] };
        save_csv(&p, &s).unwrap();
        assert_eq!(load_csv(&p).unwrap(), s);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("time,seed,path,x0,x1\n0.25,3,0,0.1,"));
    }
}
