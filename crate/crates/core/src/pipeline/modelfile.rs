//! Trained model on disk: head, gate schedule, gates and the hash of the
//! config that produced them.
//!
//! Layout (little-endian): magic `GVGM`, `u16` version, 32-byte config
//! hash, `u32` F, G, `u8` label mode, three `u64` block seeds, head
//! tensors, then `u32` gate count, the counts as `u32`, `f64` beta and
//! threshold, and for each gate a `u64` block seed plus its tensors. A
//! tensor is `u32` rows, `u32` cols and row-major `f64` values.

use std::path::Path;

use super::featfile::Reader;
use crate::error::{Error, Result};
use crate::gating::{GateBank, GateParams, GateSchedule};
use crate::head::{HeadParams, LabelMode};
use crate::kernel::{Mat, Parameters};

pub const MAGIC: &[u8; 4] = b"GVGM";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub config_hash: [u8; 32],
    pub head: HeadParams,
    pub schedule: GateSchedule,
    /// Empty when only the head has been trained.
    pub gates: GateBank,
}

fn put_u32(buf: &mut Vec<u8>, n: usize) {
    buf.extend_from_slice(&(n as u32).to_le_bytes());
}

fn put_tensors(buf: &mut Vec<u8>, tensors: Vec<&Mat>) {
    for m in tensors {
        put_u32(buf, m.rows());
        put_u32(buf, m.cols());
        for x in m.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
}

fn read_tensors(r: &mut Reader, field: &'static str, mut dst: Vec<&mut Mat>) -> Result<()> {
    for m in dst.iter_mut() {
        let (rows, cols) = (r.u32(field)?, r.u32(field)?);
        if (rows, cols) != m.shape() {
            return Err(r.error(
                field,
                format!(
                    "tensor is {rows}x{cols}, expected {}x{}",
                    m.rows(),
                    m.cols()
                ),
            ));
        }
        **m = Mat::from_vec(rows, cols, r.f64s(rows * cols, field)?)?;
    }
    Ok(())
}

impl ModelFile {
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&self.config_hash);
        put_u32(&mut buf, self.head.dim());
        put_u32(&mut buf, self.head.classes());
        buf.push(match self.head.mode {
            LabelMode::Single => 0,
            LabelMode::Multi => 1,
        });
        for b in [&self.head.omega1, &self.head.omega2, &self.head.omega3] {
            buf.extend_from_slice(&b.seed.to_le_bytes());
        }
        put_tensors(&mut buf, self.head.tensors());
        put_u32(&mut buf, self.schedule.counts.len());
        for &c in &self.schedule.counts {
            put_u32(&mut buf, c);
        }
        buf.extend_from_slice(&self.schedule.beta.to_le_bytes());
        buf.extend_from_slice(&self.schedule.threshold.to_le_bytes());
        put_u32(&mut buf, self.gates.len());
        for g in &self.gates.gates {
            buf.extend_from_slice(&g.gat.seed.to_le_bytes());
            put_tensors(&mut buf, g.tensors());
        }
        buf
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        if r.take(4, "magic")? != MAGIC {
            return Err(r.error("magic", "not a GVGM model file".into()));
        }
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(r.error("version", format!("unsupported version {version}")));
        }
        let config_hash: [u8; 32] = r.take(32, "config_hash")?.try_into().expect("32 bytes");
        let (dim, classes) = (r.u32("F")?, r.u32("G")?);
        if dim == 0 || classes == 0 {
            return Err(r.error("header", format!("F={dim}, G={classes} must be positive")));
        }
        let mode = match r.take(1, "label_mode")?[0] {
            0 => LabelMode::Single,
            1 => LabelMode::Multi,
            m => return Err(r.error("label_mode", format!("unknown mode {m}"))),
        };
        let mut head = HeadParams::init(dim, classes, mode, 0);
        head.omega1.seed = r.u64("head")?;
        head.omega2.seed = r.u64("head")?;
        head.omega3.seed = r.u64("head")?;
        read_tensors(&mut r, "head", head.tensors_mut())?;

        let n = r.u32("schedule")?;
        let counts = (0..n)
            .map(|_| r.u32("schedule"))
            .collect::<Result<Vec<_>>>()?;
        let beta = r.f64("schedule")?;
        let threshold = r.f64("schedule")?;
        let schedule = GateSchedule::new(counts, beta, threshold)
            .map_err(|e| r.error("schedule", e.to_string()))?;

        let n_gates = r.u32("gates")?;
        if n_gates != 0 && n_gates != schedule.gates() {
            return Err(r.error(
                "gates",
                format!("{n_gates} gates for a {}-gate schedule", schedule.gates()),
            ));
        }
        let mut gates = Vec::with_capacity(n_gates);
        for s in 1..=n_gates {
            let mut g = GateParams::zeros(s, dim);
            g.gat.seed = r.u64("gates")?;
            read_tensors(&mut r, "gates", g.tensors_mut())?;
            gates.push(g);
        }
        r.finish()?;
        Ok(ModelFile {
            config_hash,
            head,
            schedule,
            gates: GateBank { gates },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?, path)
    }

    pub fn has_gates(&self) -> bool {
        !self.gates.is_empty()
    }

    /// The gate bank, or a mode error when the model has a head only.
    pub fn require_gates(&self) -> Result<&GateBank> {
        if self.gates.is_empty() {
            return Err(Error::Mode("model file has no trained gates".into()));
        }
        Ok(&self.gates)
    }
}
