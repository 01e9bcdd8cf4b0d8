use std::path::Path;

use super::{DataError, Dataset, NormalizationStats, Record};
use crate::binio::{FormatError, Reader, Writer};
use crate::numerics::Tensor;
use crate::ode::{SystemKind, TimeGrid};

pub const DATASET_VERSION: u16 = 1;
const MAGIC: &[u8; 4] = b"INOD";

/// Exact size in bytes of a dataset file with the given extents.
pub fn dataset_file_size(p: usize, state_dim: usize, n_steps: usize, n: usize) -> usize {
    let header = 4 + 2 + 1 + 4 * 4 + 2 * 8;
    let stats = 8 * (2 * p + 2 * state_dim);
    let record = 8 * 2 * p + 4 * state_dim * n_steps;
    header + stats + n * record + 4
}

pub fn encode_dataset(d: &Dataset) -> Vec<u8> {
    let (p, s, t) = (d.param_count(), d.state_dim(), d.grid.n_steps);
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u16(DATASET_VERSION);
    w.u8(d.system.id());
    w.u32(p as u32);
    w.u32(s as u32);
    w.u32(t as u32);
    w.u32(d.len() as u32);
    w.f64(d.grid.t0);
    w.f64(d.grid.t_end);
    w.f64s(&d.stats.param_low);
    w.f64s(&d.stats.param_high);
    w.f64s(&d.stats.species_mean);
    w.f64s(&d.stats.species_std);
    for r in &d.records {
        w.f64s(&r.unit);
        w.f64s(&r.physical);
        for v in r.traj.data() {
            w.f32(*v as f32);
        }
    }
    w.finish()
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset, DataError> {
    let mut r = Reader::open(bytes, MAGIC)?;
    let version = r.u16()?;
    if version != DATASET_VERSION {
        return Err(FormatError::Version {
            expected: DATASET_VERSION,
            found: version,
        }
        .into());
    }
    let system_id = r.u8()?;
    let p = r.u32()? as usize;
    let s = r.u32()? as usize;
    let t = r.u32()? as usize;
    let n = r.u32()? as usize;
    let (t0, t_end) = (r.f64()?, r.f64()?);
    if bytes.len() != dataset_file_size(p, s, t, n) {
        return Err(FormatError::Malformed(format!(
            "size {} does not match header extents (expected {})",
            bytes.len(),
            dataset_file_size(p, s, t, n)
        ))
        .into());
    }
    let system = SystemKind::from_id(system_id, s)?;
    let sys = system.as_system();
    if sys.param_count() != p || sys.state_dim() != s {
        return Err(FormatError::Malformed(format!("extents P={p}, S={s} do not fit system {}", sys.name())).into());
    }
    let grid = TimeGrid::new(t0, t_end, t)?;
    let stats = NormalizationStats {
        param_low: r.f64s(p)?,
        param_high: r.f64s(p)?,
        species_mean: r.f64s(s)?,
        species_std: r.f64s(s)?,
    };
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let unit = r.f64s(p)?;
        let physical = r.f64s(p)?;
        let mut vals = Vec::with_capacity(s * t);
        for _ in 0..s * t {
            vals.push(r.f32()? as f64);
        }
        records.push(Record {
            unit,
            physical,
            traj: Tensor::new(&[s, t], vals).expect("extents match"),
        });
    }
    r.end()?;
    Ok(Dataset {
        system,
        grid,
        stats,
        records,
    })
}

pub fn save_dataset(d: &Dataset, path: &Path) -> Result<(), DataError> {
    std::fs::write(path, encode_dataset(d))?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DataError> {
    decode_dataset(&std::fs::read(path)?)
}
