//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "GLSEGCKP"
//! version u32      currently 1
//! step    u64      optimizer steps taken
//! config  u32 len + UTF-8 flat key=value experiment config
//! count   u32      number of named tensors
//! entry   u32 name len + name bytes
//!         u32 ndims + ndims x u32 dims
//!         numel x f32 raw data
//! ```
//!
//! Entries hold the network parameters, the normalization running statistics
//! (`<layer>.running_mean` / `.running_var`), and, when training state is
//! saved, the optimizer moments (`adam.m.<param>`, `adam.v.<param>`).
//! Raw f32 bytes round-trip exactly, so a reloaded network reproduces
//! forward outputs bit for bit.

use std::io::{Read, Write};
use std::path::Path;

use super::config::ExperimentConfig;
use super::train::Adam;
use super::{PipelineError, Result};
use crate::network::MiniLinkNet;

const MAGIC: &[u8; 8] = b"GLSEGCKP";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub version: u32,
    pub step: u64,
    pub config_text: String,
    pub entries: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&(String, Vec<usize>, Vec<f32>)> {
        self.entries.iter().find(|(n, _, _)| n == name)
    }

    pub fn config(&self) -> Result<ExperimentConfig> {
        Ok(ExperimentConfig::parse(&self.config_text)?.0)
    }
}

fn collect_entries(net: &MiniLinkNet, adam: Option<&Adam>) -> Vec<(String, Vec<usize>, Vec<f32>)> {
    let mut entries = Vec::new();
    net.visit_params(&mut |name, t| {
        entries.push((name.to_string(), t.shape().to_vec(), t.to_vec()));
    });
    net.visit_norms(&mut |name, stats| {
        let s = stats.borrow();
        entries.push((
            format!("{name}.running_mean"),
            vec![s.mean.len()],
            s.mean.clone(),
        ));
        entries.push((
            format!("{name}.running_var"),
            vec![s.var.len()],
            s.var.clone(),
        ));
    });
    if let Some(adam) = adam {
        for (name, m, v) in adam.moment_entries(net) {
            entries.push((format!("adam.m.{name}"), vec![m.len()], m));
            entries.push((format!("adam.v.{name}"), vec![v.len()], v));
        }
    }
    entries
}

pub fn save_checkpoint(
    path: &Path,
    config: &ExperimentConfig,
    net: &MiniLinkNet,
    adam: Option<&Adam>,
    step: u64,
) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(super::io_err(path))?;
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&step.to_le_bytes());
    let config_text = config.to_kv_string();
    out.extend_from_slice(&(config_text.len() as u32).to_le_bytes());
    out.extend_from_slice(config_text.as_bytes());

    let entries = collect_entries(net, adam);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, shape, data) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path).map_err(super::io_err(path))?;
    file.write_all(&out).map_err(super::io_err(path))?;
    Ok(())
}

struct Reader<'a> {
    path: &'a Path,
    buf: Vec<u8>,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(PipelineError::BadCheckpoint(
                self.path.to_path_buf(),
                format!("truncated at byte {}", self.pos),
            ));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| {
            PipelineError::BadCheckpoint(self.path.to_path_buf(), "invalid UTF-8".into())
        })
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .map_err(super::io_err(path))?
        .read_to_end(&mut buf)
        .map_err(super::io_err(path))?;
    let mut r = Reader { path, buf, pos: 0 };

    if r.take(8)? != MAGIC {
        return Err(PipelineError::BadCheckpoint(
            path.to_path_buf(),
            "bad magic".into(),
        ));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(PipelineError::BadCheckpoint(
            path.to_path_buf(),
            format!("unsupported version {version}"),
        ));
    }
    let step = r.u64()?;
    let config_text = r.string()?;
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let ndims = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let bytes = r.take(numel * 4)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push((name, shape, data));
    }
    Ok(Checkpoint {
        version,
        step,
        config_text,
        entries,
    })
}

/// Loads parameters and running statistics into an already-built network.
/// Every parameter must be present with a matching shape.
pub fn restore_network(net: &MiniLinkNet, ckpt: &Checkpoint) -> Result<()> {
    let mut missing = Vec::new();
    net.visit_params(&mut |name, t| match ckpt.get(name) {
        Some((_, shape, data)) if shape == t.shape() => {
            t.data_mut().copy_from_slice(data);
        }
        Some((_, shape, _)) => missing.push(format!(
            "{name}: shape {:?} in checkpoint, {:?} in network",
            shape,
            t.shape()
        )),
        None => missing.push(format!("{name}: not in checkpoint")),
    });
    net.visit_norms(&mut |name, stats| {
        let mut s = stats.borrow_mut();
        let mut restore = |suffix: &str, target: &mut Vec<f32>| {
            match ckpt.get(&format!("{name}.{suffix}")) {
                Some((_, _, data)) if data.len() == target.len() => {
                    target.copy_from_slice(data)
                }
                _ => missing.push(format!("{name}.{suffix}: missing or wrong size")),
            }
        };
        restore("running_mean", &mut s.mean);
        restore("running_var", &mut s.var);
    });
    if missing.is_empty() {
        Ok(())
    } else {
        Err(PipelineError::CheckpointMismatch(missing.join("; ")))
    }
}
