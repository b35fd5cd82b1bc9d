//! Binary checkpoint container.
//!
//! Layout (little endian):
//!
//! ```text
//! magic  b"cpp-ckpt"   version u32
//! hidden u32  layers u32  mlp_layers u32  n_max u32  normalize_coords u8
//! tensor_count u32
//! per tensor: name_len u32, name bytes, ndim u32, dims u32 * ndim, f64 * prod(dims)
//! ```
//!
//! Trainable tensors come first in declared order, then the running
//! statistics of every layer.

use std::path::Path;

use ndarray::{ArrayViewD, ArrayViewMutD};

use super::{ModelConfig, ModelParams, RunningStats, Weights};
use crate::error::{Error, Result};
use crate::util::atomic_write;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"cpp-ckpt";
const VERSION: u32 = 1;

fn running_tensors(stats: &[RunningStats]) -> Vec<(String, ArrayViewD<'_, f64>)> {
    let mut out = Vec::new();
    for (l, s) in stats.iter().enumerate() {
        out.push((
            format!("running{l}.node_mean"),
            s.node_mean.view().into_dyn(),
        ));
        out.push((format!("running{l}.node_var"), s.node_var.view().into_dyn()));
        out.push((
            format!("running{l}.edge_mean"),
            s.edge_mean.view().into_dyn(),
        ));
        out.push((format!("running{l}.edge_var"), s.edge_var.view().into_dyn()));
    }
    out
}

fn running_tensors_mut(stats: &mut [RunningStats]) -> Vec<ArrayViewMutD<'_, f64>> {
    let mut out = Vec::new();
    for s in stats {
        out.push(s.node_mean.view_mut().into_dyn());
        out.push(s.node_var.view_mut().into_dyn());
        out.push(s.edge_mean.view_mut().into_dyn());
        out.push(s.edge_var.view_mut().into_dyn());
    }
    out
}

pub fn write_checkpoint(params: &ModelParams) -> Vec<u8> {
    let c = &params.config;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for v in [c.hidden, c.layers, c.mlp_layers, c.n_max] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.push(c.normalize_coords as u8);

    let mut tensors = params.weights.tensors();
    tensors.extend(running_tensors(&params.running));
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in t.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::parse("checkpoint truncated"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(8)?;
    let version = r.u32()?;
    if magic != CHECKPOINT_MAGIC || version != VERSION {
        return Err(Error::FormatVersionMismatch {
            expected: format!("{} v{VERSION}", String::from_utf8_lossy(CHECKPOINT_MAGIC)),
            found: format!("{} v{version}", String::from_utf8_lossy(magic)),
        });
    }
    let config = ModelConfig {
        hidden: r.u32()? as usize,
        layers: r.u32()? as usize,
        mlp_layers: r.u32()? as usize,
        n_max: r.u32()? as usize,
        normalize_coords: r.take(1)?[0] != 0,
    };
    config.validate()?;

    let mut weights = Weights::zeros(&config);
    let mut running: Vec<RunningStats> = (0..config.layers)
        .map(|_| RunningStats::zeros(config.hidden))
        .collect();

    let expected: Vec<(String, Vec<usize>)> = weights
        .tensors()
        .into_iter()
        .chain(running_tensors(&running))
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(Error::parse(format!(
            "checkpoint has {count} tensors, expected {}",
            expected.len()
        )));
    }

    let mut targets = weights.tensors_mut();
    targets.extend(running_tensors_mut(&mut running));
    for ((name, shape), target) in expected.iter().zip(targets.iter_mut()) {
        let len = r.u32()? as usize;
        let got = r.take(len)?;
        if got != name.as_bytes() {
            return Err(Error::parse(format!(
                "expected tensor `{name}`, found `{}`",
                String::from_utf8_lossy(got)
            )));
        }
        let ndim = r.u32()? as usize;
        let dims = (0..ndim)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if &dims != shape {
            return Err(Error::ShapeMismatch(format!(
                "tensor `{name}` has shape {dims:?}, expected {shape:?}"
            )));
        }
        for x in target.iter_mut() {
            *x = r.f64()?;
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::parse("trailing bytes after checkpoint"));
    }
    Ok(ModelParams {
        config,
        weights,
        running,
    })
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    atomic_write(path, &write_checkpoint(params)).map_err(|e| match e {
        Error::Io(source) => Error::CheckpointWriteFailure {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    read_checkpoint(&std::fs::read(path)?)
}
