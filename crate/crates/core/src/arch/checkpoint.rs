//! Binary model checkpoints: the full config, every parameter tensor
//! bit-exactly, and the batch-norm running statistics. Loading rebuilds
//! the architecture from the stored config and then overwrites its values,
//! so a round trip reproduces predictions exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::arch::model::{BnState, Model, ModelConfig, ModelKind};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"MTLF";
const VERSION: u32 = 1;

pub fn save_model(path: &Path, model: &Model) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;

    let cfg = &model.config;
    write_str(&mut w, &cfg.kind.to_string())?;
    for v in [
        cfg.n_tasks as u64,
        cfg.n_features as u64,
        cfg.subspaces as u64,
        cfg.task_embedding_dim as u64,
        cfg.hour_embedding_dim as u64,
        cfg.week_embedding_dim as u64,
        cfg.day_embedding_dim as u64,
        cfg.seed,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in [cfg.hidden_dropout, cfg.embedding_dropout, cfg.leaky_slope] {
        w.write_all(&v.to_le_bytes())?;
    }

    w.write_all(&(model.params.len() as u64).to_le_bytes())?;
    for (name, tensor) in model.params.iter() {
        write_str(&mut w, name)?;
        w.write_all(&(tensor.numel() as u64).to_le_bytes())?;
        for v in &tensor.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }

    w.write_all(&(model.bn_running.len() as u64).to_le_bytes())?;
    for state in &model.bn_running {
        w.write_all(&(state.mean.len() as u64).to_le_bytes())?;
        for v in state.mean.iter().chain(&state.var) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::data(format!("{} is not a model checkpoint", path.display())));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::data(format!(
            "checkpoint version {version} not supported (expected {VERSION})"
        )));
    }

    let kind: ModelKind = read_str(&mut r)?.parse()?;
    let mut config = ModelConfig::new(kind, read_u64(&mut r)? as usize, read_u64(&mut r)? as usize);
    config.subspaces = read_u64(&mut r)? as usize;
    config.task_embedding_dim = read_u64(&mut r)? as usize;
    config.hour_embedding_dim = read_u64(&mut r)? as usize;
    config.week_embedding_dim = read_u64(&mut r)? as usize;
    config.day_embedding_dim = read_u64(&mut r)? as usize;
    config.seed = read_u64(&mut r)?;
    config.hidden_dropout = read_f64(&mut r)?;
    config.embedding_dropout = read_f64(&mut r)?;
    config.leaky_slope = read_f64(&mut r)?;

    let mut model = Model::build(config)?;

    let n_params = read_u64(&mut r)? as usize;
    if n_params != model.params.len() {
        return Err(Error::data(format!(
            "checkpoint has {n_params} parameters, architecture has {}",
            model.params.len()
        )));
    }
    for _ in 0..n_params {
        let name = read_str(&mut r)?;
        let numel = read_u64(&mut r)? as usize;
        let id = model
            .params
            .find(&name)
            .ok_or_else(|| Error::data(format!("checkpoint parameter '{name}' not in architecture")))?;
        let tensor = model.params.get_mut(id);
        if tensor.numel() != numel {
            return Err(Error::data(format!(
                "checkpoint parameter '{name}' has {numel} values, architecture expects {}",
                tensor.numel()
            )));
        }
        for v in tensor.data.iter_mut() {
            *v = read_f64(&mut r)?;
        }
    }

    let n_states = read_u64(&mut r)? as usize;
    if n_states != model.bn_running.len() {
        return Err(Error::data(format!(
            "checkpoint has {n_states} batch-norm states, architecture has {}",
            model.bn_running.len()
        )));
    }
    let mut bn = Vec::with_capacity(n_states);
    for i in 0..n_states {
        let width = read_u64(&mut r)? as usize;
        if width != model.bn_running[i].mean.len() {
            return Err(Error::data(format!(
                "checkpoint batch-norm state {i} has width {width}, architecture expects {}",
                model.bn_running[i].mean.len()
            )));
        }
        let mut mean = vec![0.0; width];
        let mut var = vec![0.0; width];
        for v in mean.iter_mut().chain(var.iter_mut()) {
            *v = read_f64(&mut r)?;
        }
        bn.push(BnState { mean, var });
    }
    model.bn_running = bn;
    Ok(model)
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u64).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::data("truncated model checkpoint".to_string()))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u64(r)? as usize;
    if len > 1 << 20 {
        return Err(Error::data(format!("implausible string length {len} in checkpoint")));
    }
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::data("invalid UTF-8 in checkpoint".to_string()))
}
