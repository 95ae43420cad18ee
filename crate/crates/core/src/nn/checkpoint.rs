//! Network checkpoints.
//!
//! ```text
//! magic "APXN", version u16 = 1
//! head u8 (0 linear, 1 dueling), input_dim u32
//! hidden u32, head_layers u32, lateral u32      layer counts
//! per layer, in that order: in u32, out u32, frozen u8,
//!     weights f64 * in*out (row-major in x out), biases f64 * out
//! ```
//!
//! A checkpoint at `net.bin` may carry a JSON sidecar `net.bin.json` with
//! whatever hyperparameters the caller wants to record.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{Dense, Head, HeadKind, MlpNet};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"APXN";
const VERSION: u16 = 1;

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize> {
    Ok(u32::from_le_bytes(get::<4, _>(r)?) as usize)
}

fn write_dense<W: Write>(w: &mut W, d: &Dense, frozen: bool) -> Result<()> {
    put_u32(w, d.in_dim)?;
    put_u32(w, d.out_dim)?;
    w.write_all(&[frozen as u8])?;
    for v in d.w.iter().chain(&d.b) {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

const MAX_DIM: usize = 1 << 24;

fn read_dense<R: Read>(r: &mut R) -> Result<(Dense, bool)> {
    let in_dim = get_u32(r)?;
    let out_dim = get_u32(r)?;
    if in_dim == 0 || out_dim == 0 || in_dim > MAX_DIM || out_dim > MAX_DIM {
        return Err(Error::Format(format!(
            "implausible layer {in_dim}x{out_dim}"
        )));
    }
    let [frozen] = get::<1, _>(r)?;
    let mut d = Dense::zeros(in_dim, out_dim);
    for v in d.w.iter_mut().chain(d.b.iter_mut()) {
        *v = f64::from_le_bytes(get::<8, _>(r)?);
    }
    Ok((d, frozen != 0))
}

pub fn write_net<W: Write>(w: &mut W, net: &MlpNet) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[match net.head_kind() {
        HeadKind::Linear => 0,
        HeadKind::Dueling => 1,
    }])?;
    put_u32(w, net.input_dim)?;
    let lateral = net.lateral.as_deref().unwrap_or(&[]);
    put_u32(w, net.hidden.len())?;
    put_u32(w, net.layer_count() - net.hidden.len())?;
    put_u32(w, lateral.len())?;
    for (i, d) in net.layers().enumerate() {
        write_dense(w, d, net.frozen[i])?;
    }
    for d in lateral {
        write_dense(w, d, true)?;
    }
    Ok(())
}

pub fn read_net<R: Read>(r: &mut R) -> Result<MlpNet> {
    if &get::<4, _>(r)? != MAGIC {
        return Err(Error::Format("not a network checkpoint".into()));
    }
    let version = u16::from_le_bytes(get::<2, _>(r)?);
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let [head_code] = get::<1, _>(r)?;
    let input_dim = get_u32(r)?;
    let n_hidden = get_u32(r)?;
    let n_head = get_u32(r)?;
    let n_lateral = get_u32(r)?;
    let mut read_layers = |n: usize| -> Result<Vec<(Dense, bool)>> {
        (0..n.min(64)).map(|_| read_dense(r)).collect()
    };
    let hidden = read_layers(n_hidden)?;
    let head_layers = read_layers(n_head)?;
    let lateral = read_layers(n_lateral)?;
    let head = match (head_code, head_layers.len()) {
        (0, 1) => Head::Linear(head_layers[0].0.clone()),
        (1, 2) => Head::Dueling {
            value: head_layers[0].0.clone(),
            advantage: head_layers[1].0.clone(),
        },
        _ => return Err(Error::Format("head layers do not match head kind".into())),
    };
    let frozen: Vec<bool> = hidden.iter().chain(&head_layers).map(|(_, f)| *f).collect();
    let lateral = (n_lateral > 0).then(|| lateral.into_iter().map(|(d, _)| d).collect());
    let mut net = MlpNet::assemble(
        input_dim,
        hidden.into_iter().map(|(d, _)| d).collect(),
        head,
        lateral,
    );
    net.frozen = frozen;
    validate(&net)?;
    Ok(net)
}

fn validate(net: &MlpNet) -> Result<()> {
    let bad = |msg: &str| Err(Error::Format(msg.to_string()));
    if net.hidden.is_empty() {
        return match &net.head {
            Head::Linear(d) if d.in_dim == net.input_dim => Ok(()),
            _ => bad("head does not read the input"),
        };
    }
    let lateral_out: Vec<usize> = net.lateral.iter().flatten().map(|d| d.out_dim).collect();
    let mut prev = net.input_dim;
    for (i, d) in net.hidden.iter().enumerate() {
        let extra = if i > 0 {
            lateral_out.get(i - 1).copied().unwrap_or(0)
        } else {
            0
        };
        if d.in_dim != prev + extra {
            return bad("hidden layer widths are inconsistent");
        }
        prev = d.out_dim;
    }
    let head_in = prev + lateral_out.last().copied().unwrap_or(0);
    let ok = match &net.head {
        Head::Linear(d) => d.in_dim == head_in,
        Head::Dueling { value, advantage } => {
            value.in_dim == head_in && advantage.in_dim == head_in && value.out_dim == 1
        }
    };
    if !ok {
        return bad("head width does not match the trunk");
    }
    if !net.all_finite() {
        return bad("non-finite parameters");
    }
    Ok(())
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_checkpoint<M: Serialize>(path: &Path, net: &MlpNet, meta: &M) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_net(&mut w, net)?;
    w.flush()?;
    std::fs::write(sidecar(path), serde_json::to_vec_pretty(meta)?)?;
    Ok(())
}

/// Loads a net and its sidecar (`Null` when the sidecar is absent).
pub fn load_checkpoint(path: &Path) -> Result<(MlpNet, serde_json::Value)> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.display().to_string()),
        _ => e.into(),
    })?;
    let net = read_net(&mut BufReader::new(file))?;
    let meta = match std::fs::read(sidecar(path)) {
        Ok(bytes) => serde_json::from_slice(&bytes)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => serde_json::Value::Null,
        Err(e) => return Err(e.into()),
    };
    Ok((net, meta))
}
