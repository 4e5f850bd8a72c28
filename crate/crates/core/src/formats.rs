//! Trajectory files.
//!
//! Binary layout, little-endian throughout:
//!
//! ```text
//! b"SGDV"  u32 version = 1  u32 d  u64 steps  f64[steps × d] (row-major)
//! ```
//!
//! Times are not stored in the binary form; the CSV mirror carries them in
//! its first column.

use std::io::{self, BufRead, Read, Write};

use crate::sde::{Trajectory, TrajectoryMeta};

pub const TRAJECTORY_MAGIC: &[u8; 4] = b"SGDV";
pub const TRAJECTORY_VERSION: u32 = 1;

pub fn write_trajectory_bin<W: Write>(mut w: W, traj: &Trajectory) -> io::Result<()> {
    w.write_all(TRAJECTORY_MAGIC)?;
    w.write_all(&TRAJECTORY_VERSION.to_le_bytes())?;
    w.write_all(&(traj.dim() as u32).to_le_bytes())?;
    w.write_all(&(traj.len() as u64).to_le_bytes())?;
    for v in traj.as_flat() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Raw contents of a binary trajectory file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBin {
    pub dim: usize,
    pub steps: usize,
    pub data: Vec<f64>,
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

pub fn read_trajectory_bin<R: Read>(mut r: R) -> io::Result<TrajectoryBin> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TRAJECTORY_MAGIC {
        return Err(invalid("not a trajectory file (bad magic)"));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != TRAJECTORY_VERSION {
        return Err(invalid(format!("unsupported trajectory version {version}")));
    }
    r.read_exact(&mut b4)?;
    let dim = u32::from_le_bytes(b4) as usize;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let steps = u64::from_le_bytes(b8) as usize;
    let count = dim.checked_mul(steps).ok_or_else(|| invalid("header overflows"))?;
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut b8)?;
        data.push(f64::from_le_bytes(b8));
    }
    Ok(TrajectoryBin { dim, steps, data })
}

/// `t,w0,w1,...` with one row per snapshot.
pub fn write_trajectory_csv<W: Write>(mut w: W, traj: &Trajectory) -> io::Result<()> {
    write!(w, "t")?;
    for i in 0..traj.dim() {
        write!(w, ",w{i}")?;
    }
    writeln!(w)?;
    for (t, x) in traj.times().iter().zip(traj.snapshots()) {
        write!(w, "{t}")?;
        for v in x {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Reads a CSV written by [`write_trajectory_csv`].
pub fn read_trajectory_csv<R: BufRead>(r: R, meta: TrajectoryMeta) -> io::Result<Trajectory> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| invalid("empty trajectory CSV"))??;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"t") || cols.len() < 2 {
        return Err(invalid("trajectory CSV header must start with t,w0"));
    }
    let dim = cols.len() - 1;
    let mut times = Vec::new();
    let mut data = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let vals: Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
        let vals = vals.map_err(|e| invalid(format!("row {}: {e}", k + 1)))?;
        if vals.len() != dim + 1 {
            return Err(invalid(format!("row {}: expected {} columns", k + 1, dim + 1)));
        }
        times.push(vals[0]);
        data.extend_from_slice(&vals[1..]);
    }
    Trajectory::from_rows(dim, times, data, meta).map_err(|e| invalid(e.to_string()))
}
