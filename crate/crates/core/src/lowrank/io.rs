//! Factor serialization.
//!
//! Binary layout (all little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `LRAMFAC1` |
//! | 8     | `N` as u64 |
//! | 8     | `k` as u64 |
//! | 8     | `M` as u64 |
//! | 8     | `tau` as f64 |
//! | 8·N·k | `U`, row-major |
//! | 8·k·N | `W_m`, row-major, repeated for m = 1..M |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::LowRankFactors;
use crate::error::{Error, Result};
use crate::numerics::mtx;

pub const MAGIC: &[u8; 8] = b"LRAMFAC1";

fn write_row_major<W: Write>(out: &mut W, a: &DMatrix<f64>) -> Result<()> {
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            out.write_all(&a[(i, j)].to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64<R: Read>(input: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn read_row_major<R: Read>(input: &mut R, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let mut a = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            a[(i, j)] = read_f64(input)?;
        }
    }
    Ok(a)
}

pub fn write_factors<W: Write>(out: &mut W, f: &LowRankFactors) -> Result<()> {
    out.write_all(MAGIC)?;
    for v in [f.n(), f.k, f.m()] {
        out.write_all(&(v as u64).to_le_bytes())?;
    }
    out.write_all(&f.tau.to_le_bytes())?;
    write_row_major(out, &f.u)?;
    for w in &f.w {
        write_row_major(out, w)?;
    }
    Ok(())
}

pub fn read_factors<R: Read>(input: &mut R) -> Result<LowRankFactors> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse {
            line: 0,
            message: "not a factor container (bad magic)".into(),
        });
    }
    let n = read_u64(input)? as usize;
    let k = read_u64(input)? as usize;
    let m = read_u64(input)? as usize;
    let tau = read_f64(input)?;
    if k > n {
        return Err(Error::Parse {
            line: 0,
            message: format!("rank {k} exceeds dimension {n}"),
        });
    }
    let u = read_row_major(input, n, k)?;
    let w = (0..m)
        .map(|_| read_row_major(input, k, n))
        .collect::<Result<Vec<_>>>()?;
    Ok(LowRankFactors { u, w, k, tau })
}

pub fn save_factors(path: &Path, f: &LowRankFactors) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_factors(&mut out, f)?;
    out.flush()?;
    Ok(())
}

pub fn load_factors(path: &Path) -> Result<LowRankFactors> {
    read_factors(&mut BufReader::new(File::open(path)?))
}

/// Writes `U.mtx` and `W_<m>.mtx` (1-based m) into `dir`.
pub fn export_matrix_market(dir: &Path, f: &LowRankFactors) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut out = BufWriter::new(File::create(dir.join("U.mtx"))?);
    mtx::write_dense(&mut out, &f.u)?;
    out.flush()?;
    for (m, w) in f.w.iter().enumerate() {
        let mut out = BufWriter::new(File::create(dir.join(format!("W_{}.mtx", m + 1)))?);
        mtx::write_dense(&mut out, w)?;
        out.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip() {
        let f = LowRankFactors {
            u: DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
            w: vec![
                DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
                DMatrix::from_row_slice(2, 3, &[-1.0, 0.5, 1e-300, 7.0, 8.0, 9.0]),
            ],
            k: 2,
            tau: 2.0 / 3.0,
        };
        let mut buf = Vec::new();
        write_factors(&mut buf, &f).unwrap();
        assert_eq!(buf.len(), 40 + 8 * (6 + 12));
        assert_eq!(&buf[..8], MAGIC);
        // row-major: second value of U is U[0][1]
        assert_eq!(f64::from_le_bytes(buf[48..56].try_into().unwrap()), 0.0);
        assert_eq!(f64::from_le_bytes(buf[56..64].try_into().unwrap()), 0.0);
        assert_eq!(f64::from_le_bytes(buf[64..72].try_into().unwrap()), 1.0);
        assert_eq!(read_factors(&mut buf.as_slice()).unwrap(), f);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let buf = vec![0u8; 64];
        assert!(read_factors(&mut buf.as_slice()).is_err());
    }
}
