//! Single-file binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic "BNRNNCKP" | version u32
//! gate order, config JSON, config hash          (u32 length + UTF-8 each)
//! updates u64
//! tensor count u32, then per tensor: name, rank u32, dims u64.., data f64..
//! population count u32, then per population: name, mode u8, t_max u64,
//!   estimator u8, momentum f64, slot count u64, per slot: count u64, mean, var
//! optimizer step count u64, parameter count u32, per parameter:
//!   slot count u32, tensors
//! ```

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::batchnorm::{PopEstimator, PopSlot, PopulationStats, StatsMode};
use crate::error::{Error, Result};
use crate::optim::OptimState;
use crate::recurrent::GATE_ORDER;
use crate::tensor::Tensor;

use super::config::ExperimentConfig;
use super::model::Model;

pub const MAGIC: &[u8; 8] = b"BNRNNCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub model: Model,
    pub optimizer: OptimState,
    pub updates: usize,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.write_u32::<LittleEndian>(s.len() as u32).unwrap();
    out.extend_from_slice(s.as_bytes());
}

fn put_floats(out: &mut Vec<u8>, data: &[f64]) {
    for v in data {
        out.write_f64::<LittleEndian>(*v).unwrap();
    }
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
    out.write_u32::<LittleEndian>(t.shape().len() as u32).unwrap();
    for d in t.shape() {
        out.write_u64::<LittleEndian>(*d as u64).unwrap();
    }
    put_floats(out, t.data());
}

fn get_str(r: &mut Cursor<&[u8]>) -> Result<String> {
    let n = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| bad("invalid UTF-8 in string field"))
}

fn get_floats(r: &mut Cursor<&[u8]>, n: usize) -> Result<Vec<f64>> {
    (0..n).map(|_| Ok(r.read_f64::<LittleEndian>()?)).collect()
}

fn get_tensor(r: &mut Cursor<&[u8]>) -> Result<Tensor> {
    let rank = r.read_u32::<LittleEndian>()? as usize;
    if rank > 8 {
        return Err(bad(format!("tensor rank {rank} is implausible")));
    }
    let shape = (0..rank)
        .map(|_| Ok(r.read_u64::<LittleEndian>()? as usize))
        .collect::<Result<Vec<_>>>()?;
    let n = shape.iter().product();
    Tensor::new(&shape, get_floats(r, n)?)
}

pub fn encode(cfg: &ExperimentConfig, model: &Model, optimizer: &OptimState, updates: usize) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u32::<LittleEndian>(VERSION).unwrap();
    put_str(&mut out, GATE_ORDER);
    put_str(&mut out, &cfg.to_json());
    put_str(&mut out, &cfg.hash());
    out.write_u64::<LittleEndian>(updates as u64).unwrap();

    let params = model.named_params();
    out.write_u32::<LittleEndian>(params.len() as u32).unwrap();
    for (name, t) in params {
        put_str(&mut out, &name);
        put_tensor(&mut out, t);
    }

    let pops = model.cell.populations();
    out.write_u32::<LittleEndian>(pops.len() as u32).unwrap();
    for (name, pop) in pops {
        put_str(&mut out, name);
        out.write_u8(match pop.mode() {
            StatsMode::PerTimestep => 0,
            StatsMode::Sequencewise => 1,
        })
        .unwrap();
        out.write_u64::<LittleEndian>(pop.t_max() as u64).unwrap();
        let (tag, momentum) = match pop.estimator() {
            PopEstimator::Cumulative => (0, 0.0),
            PopEstimator::Ema { momentum } => (1, momentum),
        };
        out.write_u8(tag).unwrap();
        out.write_f64::<LittleEndian>(momentum).unwrap();
        out.write_u64::<LittleEndian>(pop.slots().len() as u64).unwrap();
        for slot in pop.slots() {
            out.write_u64::<LittleEndian>(slot.count).unwrap();
            put_tensor(&mut out, &slot.mean);
            put_tensor(&mut out, &slot.var);
        }
    }

    out.write_u64::<LittleEndian>(optimizer.step_count).unwrap();
    out.write_u32::<LittleEndian>(optimizer.slots.len() as u32).unwrap();
    for slots in &optimizer.slots {
        out.write_u32::<LittleEndian>(slots.len() as u32).unwrap();
        for t in slots {
            put_tensor(&mut out, t);
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("file too short for a checkpoint header"))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let gates = get_str(&mut r)?;
    if gates != GATE_ORDER {
        return Err(bad(format!("gate order {gates:?} differs from {GATE_ORDER:?}")));
    }
    let config: ExperimentConfig = serde_json::from_str(&get_str(&mut r)?)?;
    let hash = get_str(&mut r)?;
    if hash != config.hash() {
        return Err(bad("config hash does not match the stored config"));
    }
    let updates = r.read_u64::<LittleEndian>()? as usize;

    let n = r.read_u32::<LittleEndian>()? as usize;
    let mut tensors = Vec::with_capacity(n);
    for _ in 0..n {
        let name = get_str(&mut r)?;
        tensors.push((name, get_tensor(&mut r)?));
    }
    let find = |name: &str| -> Result<&Tensor> {
        tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| bad(format!("missing tensor {name}")))
    };
    let d_x = match find("embedding") {
        Ok(e) => e.rows(),
        Err(_) => find("cell.w_x")?.rows(),
    };
    let classes = find("head.bias")?.numel();
    let mut model = Model::new(&config, d_x, classes, config.t_max.max(1))?;
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    if names.len() != tensors.len() {
        return Err(bad(format!("expected {} tensors, found {}", names.len(), tensors.len())));
    }
    for (name, slot) in names.iter().zip(model.params_mut()) {
        let t = find(name)?;
        if t.shape() != slot.shape() {
            return Err(bad(format!("tensor {name} has shape {:?}, expected {:?}", t.shape(), slot.shape())));
        }
        *slot = t.clone();
    }

    let n_pops = r.read_u32::<LittleEndian>()? as usize;
    let mut pops = Vec::with_capacity(n_pops);
    for _ in 0..n_pops {
        let name = get_str(&mut r)?;
        let mode = match r.read_u8()? {
            0 => StatsMode::PerTimestep,
            1 => StatsMode::Sequencewise,
            m => return Err(bad(format!("unknown statistics mode {m}"))),
        };
        let t_max = r.read_u64::<LittleEndian>()? as usize;
        let tag = r.read_u8()?;
        let momentum = r.read_f64::<LittleEndian>()?;
        let estimator = match tag {
            0 => PopEstimator::Cumulative,
            1 => PopEstimator::Ema { momentum },
            e => return Err(bad(format!("unknown estimator {e}"))),
        };
        let n_slots = r.read_u64::<LittleEndian>()? as usize;
        let expected = match mode {
            StatsMode::PerTimestep => t_max,
            StatsMode::Sequencewise => 1,
        };
        if n_slots != expected {
            return Err(bad(format!("population {name} has {n_slots} slots, expected {expected}")));
        }
        let slots = (0..n_slots)
            .map(|_| {
                let count = r.read_u64::<LittleEndian>()?;
                Ok(PopSlot {
                    count,
                    mean: get_tensor(&mut r)?,
                    var: get_tensor(&mut r)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        pops.push((name, PopulationStats::from_parts(mode, t_max, estimator, slots)));
    }
    let targets = model.cell.populations_mut();
    if targets.len() != pops.len() {
        return Err(bad("population statistics do not match the model kind"));
    }
    for ((name, target), (stored_name, stored)) in targets.into_iter().zip(pops) {
        if name != stored_name || stored.dim() != target.dim() {
            return Err(bad(format!("population {stored_name} does not fit normalizer {name}")));
        }
        *target = stored;
    }

    let step_count = r.read_u64::<LittleEndian>()?;
    let n_params = r.read_u32::<LittleEndian>()? as usize;
    let mut slots = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let k = r.read_u32::<LittleEndian>()? as usize;
        slots.push((0..k).map(|_| get_tensor(&mut r)).collect::<Result<Vec<_>>>()?);
    }
    let optimizer = OptimState {
        config: config.optim_config(),
        step_count,
        slots,
    };
    if (r.position() as usize) != bytes.len() {
        return Err(bad("trailing bytes after checkpoint"));
    }
    Ok(Checkpoint {
        config,
        model,
        optimizer,
        updates,
    })
}

pub fn save(path: &Path, cfg: &ExperimentConfig, model: &Model, optimizer: &OptimState, updates: usize) -> Result<()> {
    std::fs::File::create(path)?.write_all(&encode(cfg, model, optimizer, updates))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    decode(&bytes).map_err(|e| match e {
        Error::Io(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => bad(format!("{} is truncated", path.display())),
        other => other,
    })
}
