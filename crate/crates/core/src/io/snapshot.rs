use crate::dynamics::State;
use crate::error::{KsnsError, Result};
use crate::model::{FluidModel, Oxygen};
use crate::spectral::{GridSpec, ScalarField, VectorField};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"KSNS";
pub const SNAPSHOT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 8 * 3 + 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub state: State,
    pub oxygen: Oxygen,
    pub fluid: FluidModel,
}

/// Little-endian header followed by `n, c, ux, uy`, each row-major.
pub fn write_snapshot(s: &Snapshot) -> Vec<u8> {
    let g = s.state.grid();
    let mut out = Vec::with_capacity(HEADER_LEN + 32 * g.len());
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    out.extend_from_slice(&(g.nx() as u32).to_le_bytes());
    out.extend_from_slice(&(g.ny() as u32).to_le_bytes());
    for v in [g.lx(), g.ly(), s.state.t] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(s.oxygen.code());
    out.push(s.fluid.code());
    for f in [&s.state.n, &s.state.c, &s.state.u.x, &s.state.u.y] {
        for v in f.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn fmt_err(m: impl Into<String>) -> KsnsError {
    KsnsError::Format(m.into())
}

pub fn read_snapshot(bytes: &[u8]) -> Result<Snapshot> {
    if bytes.len() < HEADER_LEN {
        return Err(fmt_err(format!("snapshot too short ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != SNAPSHOT_MAGIC {
        return Err(fmt_err("bad magic bytes"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let version = u32_at(4);
    if version != SNAPSHOT_VERSION {
        return Err(fmt_err(format!("unsupported snapshot version {version}")));
    }
    let (nx, ny) = (u32_at(8) as usize, u32_at(12) as usize);
    let (lx, ly, t) = (f64_at(16), f64_at(24), f64_at(32));
    let oxygen = match bytes[40] {
        0 => Oxygen::Hyperbolic,
        1 => Oxygen::Parabolic,
        v => return Err(fmt_err(format!("mu byte {v} is not 0 or 1"))),
    };
    let fluid = FluidModel::from_code(bytes[41]).map_err(|e| fmt_err(e.to_string()))?;
    let grid = GridSpec::new(nx, ny, lx, ly).map_err(|e| fmt_err(e.to_string()))?;
    let len = grid.len();
    let expected = HEADER_LEN + 4 * 8 * len;
    if bytes.len() != expected {
        return Err(fmt_err(format!("payload size {} does not match {expected}", bytes.len())));
    }
    let field = |k: usize| -> Result<ScalarField> {
        let start = HEADER_LEN + k * 8 * len;
        let v = (0..len).map(|i| f64_at(start + 8 * i)).collect();
        ScalarField::new(grid, v).map_err(|e| fmt_err(e.to_string()))
    };
    Ok(Snapshot {
        state: State { t, n: field(0)?, c: field(1)?, u: VectorField { x: field(2)?, y: field(3)? }, flagged: false },
        oxygen,
        fluid,
    })
}
