//! Versioned binary snapshots of trained policies and optimizer state.
//!
//! Byte layout, all integers and floats little-endian:
//!
//! ```text
//! offset  size  field
//! 0       8     magic "COOPCKPT"
//! 8       4     format version, u32 (currently 1)
//! 12      4     flags, u32 (bit 0: parameters shared across agents)
//! 16      4     learner count, u32
//! 20      8     completed training episodes, u64
//! 28      8     master seed the run was launched with, u64
//! ```
//!
//! followed by each learner in order:
//!
//! ```text
//! u32          actor layer count, then that many u32 layer sizes
//! u32          critic layer count, then that many u32 layer sizes
//! f64 x Pa     actor parameters        Pa = sum (fan_in+1)*fan_out (actor)
//! f64 x Pc     critic parameters       Pc likewise for the critic
//! f64 x Pa     target actor parameters
//! f64 x Pc     target critic parameters
//! f64 x Pa     actor optimizer first moment
//! f64 x Pa     actor optimizer second moment
//! u64          actor optimizer step counter
//! f64 x Pc     critic optimizer first moment
//! f64 x Pc     critic optimizer second moment
//! u64          critic optimizer step counter
//! ```
//!
//! Parameter vector lengths are implied by the layer sizes, so any
//! truncation or length corruption is caught while reading.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{param_count, AdamState};

const MAGIC: &[u8; 8] = b"COOPCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const FLAG_SHARED: u32 = 1;

// Guards against allocating absurd buffers from corrupt headers.
const MAX_LAYERS: u32 = 64;
const MAX_LAYER_SIZE: u32 = 1 << 20;
const MAX_LEARNERS: u32 = 1 << 10;

/// Everything one agent's learner needs to resume: live and target
/// networks plus optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnerSnapshot {
    pub actor_sizes: Vec<usize>,
    pub critic_sizes: Vec<usize>,
    pub actor: Vec<f64>,
    pub critic: Vec<f64>,
    pub target_actor: Vec<f64>,
    pub target_critic: Vec<f64>,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub shared_parameters: bool,
    pub episodes_completed: u64,
    pub master_seed: u64,
    pub learners: Vec<LearnerSnapshot>,
}

impl LearnerSnapshot {
    fn validate(&self) -> Result<()> {
        let pa = param_count(&self.actor_sizes);
        let pc = param_count(&self.critic_sizes);
        let lengths = [
            (self.actor.len(), pa, "actor"),
            (self.critic.len(), pc, "critic"),
            (self.target_actor.len(), pa, "target actor"),
            (self.target_critic.len(), pc, "target critic"),
            (self.actor_opt.first_moment.len(), pa, "actor moment"),
            (self.actor_opt.second_moment.len(), pa, "actor moment"),
            (self.critic_opt.first_moment.len(), pc, "critic moment"),
            (self.critic_opt.second_moment.len(), pc, "critic moment"),
        ];
        for (got, expected, what) in lengths {
            if got != expected {
                return Err(Error::Checkpoint(format!(
                    "{what} holds {got} values, layer sizes imply {expected}"
                )));
            }
        }
        for values in [&self.actor, &self.critic, &self.target_actor, &self.target_critic] {
            if !values.iter().all(|v| v.is_finite()) {
                return Err(Error::Checkpoint("non-finite network parameter".into()));
            }
        }
        Ok(())
    }
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut writer = BufWriter::new(File::create(path)?);
        self.write_to(&mut writer)?;
        writer.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = BufReader::new(File::open(path)?);
        Self::read_from(&mut reader)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        for learner in &self.learners {
            learner.validate()?;
        }
        w.write_all(MAGIC)?;
        write_u32(w, CHECKPOINT_VERSION)?;
        write_u32(w, if self.shared_parameters { FLAG_SHARED } else { 0 })?;
        if self.learners.len() > MAX_LEARNERS as usize {
            return Err(Error::Checkpoint(format!(
                "{} learners exceeds the format limit",
                self.learners.len()
            )));
        }
        write_u32(w, self.learners.len() as u32)?;
        write_u64(w, self.episodes_completed)?;
        write_u64(w, self.master_seed)?;
        for learner in &self.learners {
            write_sizes(w, &learner.actor_sizes)?;
            write_sizes(w, &learner.critic_sizes)?;
            write_f64s(w, &learner.actor)?;
            write_f64s(w, &learner.critic)?;
            write_f64s(w, &learner.target_actor)?;
            write_f64s(w, &learner.target_critic)?;
            write_f64s(w, &learner.actor_opt.first_moment)?;
            write_f64s(w, &learner.actor_opt.second_moment)?;
            write_u64(w, learner.actor_opt.step)?;
            write_f64s(w, &learner.critic_opt.first_moment)?;
            write_f64s(w, &learner.critic_opt.second_moment)?;
            write_u64(w, learner.critic_opt.step)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Checkpoint("file too short for header".into()))?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a policy checkpoint".into()));
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} not supported, expected {CHECKPOINT_VERSION}"
            )));
        }
        let flags = read_u32(r)?;
        let count = read_u32(r)?;
        if count > MAX_LEARNERS {
            return Err(Error::Checkpoint(format!("implausible learner count {count}")));
        }
        let episodes_completed = read_u64(r)?;
        let master_seed = read_u64(r)?;
        let mut learners = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let actor_sizes = read_sizes(r)?;
            let critic_sizes = read_sizes(r)?;
            let pa = param_count(&actor_sizes);
            let pc = param_count(&critic_sizes);
            let learner = LearnerSnapshot {
                actor: read_f64s(r, pa)?,
                critic: read_f64s(r, pc)?,
                target_actor: read_f64s(r, pa)?,
                target_critic: read_f64s(r, pc)?,
                actor_opt: AdamState {
                    first_moment: read_f64s(r, pa)?,
                    second_moment: read_f64s(r, pa)?,
                    step: read_u64(r)?,
                },
                critic_opt: AdamState {
                    first_moment: read_f64s(r, pc)?,
                    second_moment: read_f64s(r, pc)?,
                    step: read_u64(r)?,
                },
                actor_sizes,
                critic_sizes,
            };
            learner.validate()?;
            learners.push(learner);
        }
        let mut trailer = [0u8; 1];
        if r.read(&mut trailer)? != 0 {
            return Err(Error::Checkpoint("trailing bytes after last learner".into()));
        }
        Ok(Self {
            shared_parameters: flags & FLAG_SHARED != 0,
            episodes_completed,
            master_seed,
            learners,
        })
    }
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64s(w: &mut impl Write, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_sizes(w: &mut impl Write, sizes: &[usize]) -> Result<()> {
    if sizes.len() > MAX_LAYERS as usize {
        return Err(Error::Checkpoint(format!("{} layers exceeds the format limit", sizes.len())));
    }
    write_u32(w, sizes.len() as u32)?;
    for &s in sizes {
        if s == 0 || s > MAX_LAYER_SIZE as usize {
            return Err(Error::Checkpoint(format!("layer size {s} out of range")));
        }
        write_u32(w, s as u32)?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Checkpoint("unexpected end of file".into()))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Checkpoint("unexpected end of file".into()))?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64s(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Checkpoint("unexpected end of file".into()))?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn read_sizes(r: &mut impl Read) -> Result<Vec<usize>> {
    let count = read_u32(r)?;
    if count < 2 || count > MAX_LAYERS {
        return Err(Error::Checkpoint(format!("implausible layer count {count}")));
    }
    let mut sizes = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let s = read_u32(r)?;
        if s == 0 || s > MAX_LAYER_SIZE {
            return Err(Error::Checkpoint(format!("layer size {s} out of range")));
        }
        sizes.push(s as usize);
    }
    Ok(sizes)
}
