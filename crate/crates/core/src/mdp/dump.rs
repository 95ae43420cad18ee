//! Binary dump of transition lists and replay buffers.
//!
//! Layout (all integers and reals little-endian):
//!
//! ```text
//! magic  "APXD"            4 bytes
//! version u16              currently 1
//! kind    u8               0 = transition list, 1 = replay buffer
//! rank    u8, dims u32 * rank
//! [kind 1] capacity u64, alpha f64, beta f64, eps_priority f64
//! count   u64
//! entries: state f32*len, action u32, reward f64, next_state f32*len, done u8
//!          [kind 1] priority f64
//! ```
//!
//! Replay entries are written oldest first. The format is for checkpointing,
//! not long-term storage.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ActionId, Observation, ReplayBuffer, ReplayConfig, Transition};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"APXD";
const VERSION: u16 = 1;
const KIND_TRANSITIONS: u8 = 0;
const KIND_REPLAY: u8 = 1;

struct Header {
    kind: u8,
    shape: Vec<usize>,
}

fn write_header<W: Write>(w: &mut W, kind: u8, shape: &[usize]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[kind, shape.len() as u8])?;
    for &d in shape {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    Ok(())
}

fn read_exact<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_header<R: Read>(r: &mut R) -> Result<Header> {
    let magic = read_exact::<4, _>(r)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes(read_exact::<2, _>(r)?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported dump version {version}")));
    }
    let [kind, rank] = read_exact::<2, _>(r)?;
    let shape = (0..rank)
        .map(|_| Ok(u32::from_le_bytes(read_exact::<4, _>(r)?) as usize))
        .collect::<Result<Vec<_>>>()?;
    Ok(Header { kind, shape })
}

fn write_obs<W: Write>(w: &mut W, obs: &Observation) -> Result<()> {
    for v in obs.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_obs<R: Read>(r: &mut R, shape: &[usize]) -> Result<Observation> {
    let len: usize = shape.iter().product();
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        data.push(f32::from_le_bytes(read_exact::<4, _>(r)?));
    }
    Observation::new(data, shape.to_vec())
}

fn write_entry<W: Write>(w: &mut W, t: &Transition) -> Result<()> {
    write_obs(w, &t.state)?;
    w.write_all(&(t.action.0 as u32).to_le_bytes())?;
    w.write_all(&t.reward.to_le_bytes())?;
    write_obs(w, &t.next_state)?;
    w.write_all(&[t.done as u8])?;
    Ok(())
}

fn read_entry<R: Read>(r: &mut R, shape: &[usize]) -> Result<Transition> {
    let state = read_obs(r, shape)?;
    let action = ActionId(u32::from_le_bytes(read_exact::<4, _>(r)?) as usize);
    let reward = f64::from_le_bytes(read_exact::<8, _>(r)?);
    let next_state = read_obs(r, shape)?;
    let [done] = read_exact::<1, _>(r)?;
    Transition::new(state, action, reward, next_state, done != 0)
}

fn common_shape(ts: &[&Transition]) -> Result<Vec<usize>> {
    let shape = ts
        .first()
        .map(|t| t.state.shape().to_vec())
        .unwrap_or_default();
    if ts.iter().any(|t| t.state.shape() != shape.as_slice()) {
        return Err(Error::Format(
            "transitions have mixed observation shapes".into(),
        ));
    }
    Ok(shape)
}

pub fn write_transitions<W: Write>(w: &mut W, ts: &[Transition]) -> Result<()> {
    let refs: Vec<&Transition> = ts.iter().collect();
    let shape = common_shape(&refs)?;
    write_header(w, KIND_TRANSITIONS, &shape)?;
    w.write_all(&(ts.len() as u64).to_le_bytes())?;
    for t in ts {
        write_entry(w, t)?;
    }
    Ok(())
}

pub fn read_transitions<R: Read>(r: &mut R) -> Result<Vec<Transition>> {
    let h = read_header(r)?;
    if h.kind != KIND_TRANSITIONS {
        return Err(Error::Format(format!(
            "expected transition list, found kind {}",
            h.kind
        )));
    }
    let count = u64::from_le_bytes(read_exact::<8, _>(r)?) as usize;
    (0..count).map(|_| read_entry(r, &h.shape)).collect()
}

impl ReplayBuffer {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let ordered = self.ordered();
        let refs: Vec<&Transition> = ordered.iter().map(|(t, _)| *t).collect();
        let shape = common_shape(&refs)?;
        write_header(w, KIND_REPLAY, &shape)?;
        let cfg = self.config();
        w.write_all(&(cfg.capacity as u64).to_le_bytes())?;
        for v in [cfg.alpha, cfg.beta, cfg.eps_priority] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(ordered.len() as u64).to_le_bytes())?;
        for (t, p) in ordered {
            write_entry(w, t)?;
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let h = read_header(r)?;
        if h.kind != KIND_REPLAY {
            return Err(Error::Format(format!(
                "expected replay buffer, found kind {}",
                h.kind
            )));
        }
        let capacity = u64::from_le_bytes(read_exact::<8, _>(r)?) as usize;
        let alpha = f64::from_le_bytes(read_exact::<8, _>(r)?);
        let beta = f64::from_le_bytes(read_exact::<8, _>(r)?);
        let eps_priority = f64::from_le_bytes(read_exact::<8, _>(r)?);
        let mut buf = ReplayBuffer::new(ReplayConfig {
            capacity,
            alpha,
            beta,
            eps_priority,
        })?;
        let count = u64::from_le_bytes(read_exact::<8, _>(r)?) as usize;
        for _ in 0..count {
            let t = read_entry(r, &h.shape)?;
            let p = f64::from_le_bytes(read_exact::<8, _>(r)?);
            buf.push_with_priority(t, p);
        }
        Ok(buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}
