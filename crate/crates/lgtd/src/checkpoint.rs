//! Binary checkpoints: model config, parameters, optimiser moments, step
//! counters, and the training RNG, round-tripping bit-exactly.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "LGTDCKPT"
//! version u32      currently 1
//! hlen    u64      header byte length
//! header  hlen     JSON: config, epoch, iter, optimiser scalars, RNG state
//! count   u64      tensor count
//! tensor* :        nlen u64, name utf-8, ndim u64, dims u64*, data f64*
//! ```
//!
//! Parameters are stored under their registered names; optimiser moments
//! under `adam.m.<name>` / `adam.v.<name>`. Loading rebuilds the network
//! from the embedded config and overwrites every tensor by name, so a file
//! is self-contained and storage order never matters.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::ArrayD;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::net::Lgtd;
use crate::nn::ParamStore;
use crate::train::adam::Adam;

const MAGIC: &[u8; 8] = b"LGTDCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AdamHeader {
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    epoch: usize,
    iter: usize,
    adam: Option<AdamHeader>,
    rng: Option<ChaCha12Rng>,
}

/// Everything a checkpoint restores.
pub struct Loaded {
    pub model: Lgtd,
    pub ps: ParamStore,
    pub adam: Option<Adam>,
    pub rng: Option<ChaCha12Rng>,
    pub epoch: usize,
    pub iter: usize,
}

fn bad(detail: impl Into<String>) -> Error {
    Error::Checkpoint(detail.into())
}

fn write_tensor<W: Write>(w: &mut W, name: &str, t: &ArrayD<f64>) -> Result<()> {
    w.write_u64::<LittleEndian>(name.len() as u64)?;
    w.write_all(name.as_bytes())?;
    w.write_u64::<LittleEndian>(t.ndim() as u64)?;
    for &d in t.shape() {
        w.write_u64::<LittleEndian>(d as u64)?;
    }
    for &v in t.iter() {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_tensor<R: Read>(r: &mut R) -> Result<(String, ArrayD<f64>)> {
    let nlen = r.read_u64::<LittleEndian>()? as usize;
    if nlen > 4096 {
        return Err(bad(format!("implausible tensor name length {nlen}")));
    }
    let mut name = vec![0u8; nlen];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name).map_err(|e| bad(format!("tensor name not utf-8: {e}")))?;
    let ndim = r.read_u64::<LittleEndian>()? as usize;
    if ndim > 8 {
        return Err(bad(format!("implausible rank {ndim} for tensor {name}")));
    }
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(r.read_u64::<LittleEndian>()? as usize);
    }
    let n: usize = dims.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(r.read_f64::<LittleEndian>()?);
    }
    let arr = ArrayD::from_shape_vec(ndarray::IxDyn(&dims), data)
        .map_err(|e| bad(format!("tensor {name}: {e}")))?;
    Ok((name, arr))
}

/// Writes a checkpoint. `adam` and `rng` are optional so inference-only
/// exports stay small.
pub fn save(
    path: &Path,
    config: &ModelConfig,
    ps: &ParamStore,
    adam: Option<&Adam>,
    rng: Option<&ChaCha12Rng>,
    epoch: usize,
    iter: usize,
) -> Result<()> {
    let header = Header {
        config: config.clone(),
        epoch,
        iter,
        adam: adam.map(|a| AdamHeader {
            t: a.t,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
        }),
        rng: rng.cloned(),
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| bad(format!("header encode: {e}")))?;

    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u64::<LittleEndian>(header_bytes.len() as u64)?;
    w.write_all(&header_bytes)?;

    let adam_tensors = adam.map(|a| (&a.m, &a.v));
    let count = ps.len() + adam_tensors.map_or(0, |_| 2 * ps.len());
    w.write_u64::<LittleEndian>(count as u64)?;
    for (name, t) in ps.iter() {
        write_tensor(&mut w, name, t)?;
    }
    if let Some((m, v)) = adam_tensors {
        for (i, (name, _)) in ps.iter().enumerate() {
            write_tensor(&mut w, &format!("adam.m.{name}"), &m[i])?;
            write_tensor(&mut w, &format!("adam.v.{name}"), &v[i])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint and rebuilds the network it describes.
pub fn load(path: &Path) -> Result<Loaded> {
    let mut r = BufReader::new(
        File::open(path).map_err(|e| bad(format!("open {}: {e}", path.display())))?,
    );
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|e| bad(format!("short file reading magic: {e}")))?;
    if &magic != MAGIC {
        return Err(bad(format!(
            "bad magic {:?}; not a checkpoint file",
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}, want {VERSION}")));
    }
    let hlen = r.read_u64::<LittleEndian>()? as usize;
    if hlen > 16 << 20 {
        return Err(bad(format!("implausible header length {hlen}")));
    }
    let mut hbytes = vec![0u8; hlen];
    r.read_exact(&mut hbytes)
        .map_err(|e| bad(format!("short file reading header: {e}")))?;
    let header: Header =
        serde_json::from_slice(&hbytes).map_err(|e| bad(format!("header decode: {e}")))?;

    let count = r.read_u64::<LittleEndian>()? as usize;
    let mut tensors: HashMap<String, ArrayD<f64>> = HashMap::with_capacity(count);
    for _ in 0..count {
        let (name, t) = read_tensor(&mut r)?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(bad(format!("duplicate tensor {name}")));
        }
    }

    // Rebuild the network (seed irrelevant: every tensor is overwritten).
    let (model, mut ps) = Lgtd::build(&header.config, 0)?;
    let names: Vec<String> = ps.iter().map(|(n, _)| n.to_string()).collect();
    for (i, name) in names.iter().enumerate() {
        let stored = tensors
            .remove(name)
            .ok_or_else(|| bad(format!("missing parameter {name}")))?;
        let slot = &mut ps.values_mut()[i];
        if slot.shape() != stored.shape() {
            return Err(bad(format!(
                "parameter {name}: stored shape {:?} vs built {:?}",
                stored.shape(),
                slot.shape()
            )));
        }
        *slot = stored;
    }

    let adam = match &header.adam {
        Some(ah) => {
            let mut a = Adam::new(&ps, ah.beta1, ah.beta2, ah.eps);
            a.t = ah.t;
            for (i, name) in names.iter().enumerate() {
                for (prefix, dst) in [("adam.m.", &mut a.m), ("adam.v.", &mut a.v)] {
                    let key = format!("{prefix}{name}");
                    let stored = tensors
                        .remove(&key)
                        .ok_or_else(|| bad(format!("missing optimiser tensor {key}")))?;
                    if stored.shape() != dst[i].shape() {
                        return Err(bad(format!("optimiser tensor {key} has wrong shape")));
                    }
                    dst[i] = stored;
                }
            }
            Some(a)
        }
        None => None,
    };
    if !tensors.is_empty() {
        let mut extra: Vec<_> = tensors.keys().cloned().collect();
        extra.sort();
        return Err(bad(format!("unexpected tensors in file: {}", extra.join(", "))));
    }

    Ok(Loaded {
        model,
        ps,
        adam,
        rng: header.rng,
        epoch: header.epoch,
        iter: header.iter,
    })
}
