//! Versioned binary checkpoint: config echo, named parameter table, and
//! optionally the full optimizer-side state (Adam moments, step cursor,
//! RNG positions) so training resumes bit-exactly. All floats are stored
//! as little-endian f64 bit patterns; save -> load is lossless.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use vhm_core::model::VhmModel;
use vhm_core::rng::RngState;
use vhm_core::train::{AdamState, TrainState};

use crate::error::{CliError, Result};

const MAGIC: &[u8; 8] = b"VHMCKPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub adam_t: u64,
    pub next_step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub train_rng: RngState,
    pub dropout_rng: RngState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_echo: String,
    pub params: Vec<ParamEntry>,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    /// Capture a model's parameters (optionally with training state).
    pub fn capture(model: &VhmModel, config_echo: &str, state: Option<&TrainState>) -> Checkpoint {
        let params = model
            .store
            .iter()
            .map(|(_, p)| ParamEntry { name: p.name.clone(), shape: p.shape.clone(), data: p.data.clone() })
            .collect();
        let optimizer = state.map(|s| OptimizerState {
            adam_t: s.adam.t,
            next_step: s.next_step as u64,
            m: s.adam.m.clone(),
            v: s.adam.v.clone(),
            train_rng: s.train_rng.clone(),
            dropout_rng: s.dropout_rng.clone(),
        });
        Checkpoint { config_echo: config_echo.to_string(), params, optimizer }
    }

    /// Write parameter values into an already-constructed model.
    pub fn apply_params(&self, model: &mut VhmModel) -> Result<()> {
        if self.params.len() != model.store.len() {
            return Err(CliError::Data(format!(
                "checkpoint has {} parameters, model has {}",
                self.params.len(),
                model.store.len()
            )));
        }
        for entry in &self.params {
            model.store.set_by_name(&entry.name, &entry.data).map_err(CliError::from)?;
        }
        Ok(())
    }

    /// Reconstruct the training-loop state stored alongside the params.
    pub fn train_state(&self) -> Option<TrainState> {
        self.optimizer.as_ref().map(|o| TrainState {
            adam: AdamState { m: o.m.clone(), v: o.v.clone(), t: o.adam_t },
            next_step: o.next_step as usize,
            train_rng: o.train_rng.clone(),
            dropout_rng: o.dropout_rng.clone(),
        })
    }
}

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn bytes(&mut self, b: &[u8]) -> std::io::Result<()> {
        self.u32(b.len() as u32)?;
        self.0.write_all(b)
    }
    fn f64s(&mut self, xs: &[f64]) -> std::io::Result<()> {
        for x in xs {
            self.0.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }
    fn rng(&mut self, s: &RngState) -> std::io::Result<()> {
        self.0.write_all(&s.seed)?;
        self.u64(s.stream)?;
        self.0.write_all(&s.word_pos.to_le_bytes())
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn u32(&mut self) -> std::io::Result<u32> {
        let mut b = [0u8; 4];
        self.0.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> std::io::Result<u64> {
        let mut b = [0u8; 8];
        self.0.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn bytes(&mut self) -> std::io::Result<Vec<u8>> {
        let n = self.u32()? as usize;
        let mut b = vec![0u8; n];
        self.0.read_exact(&mut b)?;
        Ok(b)
    }
    fn f64s(&mut self, n: usize) -> std::io::Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            self.0.read_exact(&mut b)?;
            out.push(f64::from_le_bytes(b));
        }
        Ok(out)
    }
    fn rng(&mut self) -> std::io::Result<RngState> {
        let mut seed = [0u8; 32];
        self.0.read_exact(&mut seed)?;
        let stream = self.u64()?;
        let mut wp = [0u8; 16];
        self.0.read_exact(&mut wp)?;
        Ok(RngState { seed, stream, word_pos: u128::from_le_bytes(wp) })
    }
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let file = std::fs::File::create(path).map_err(CliError::io(path.display().to_string()))?;
    let mut w = Writer(BufWriter::new(file));
    let io = CliError::io(path.display().to_string());
    (|| -> std::io::Result<()> {
        w.0.write_all(MAGIC)?;
        w.bytes(ckpt.config_echo.as_bytes())?;
        w.u32(ckpt.params.len() as u32)?;
        for p in &ckpt.params {
            w.bytes(p.name.as_bytes())?;
            w.u32(p.shape.len() as u32)?;
            for &d in &p.shape {
                w.u32(d as u32)?;
            }
            w.f64s(&p.data)?;
        }
        match &ckpt.optimizer {
            None => w.0.write_all(&[0u8])?,
            Some(o) => {
                w.0.write_all(&[1u8])?;
                w.u64(o.adam_t)?;
                w.u64(o.next_step)?;
                for m in &o.m {
                    w.f64s(m)?;
                }
                for v in &o.v {
                    w.f64s(v)?;
                }
                w.rng(&o.train_rng)?;
                w.rng(&o.dropout_rng)?;
            }
        }
        w.0.flush()
    })()
    .map_err(io)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let file = std::fs::File::open(path).map_err(CliError::io(path.display().to_string()))?;
    let mut r = Reader(BufReader::new(file));
    let io = CliError::io(path.display().to_string());
    (|| -> std::io::Result<Checkpoint> {
        let mut magic = [0u8; 8];
        r.0.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("bad checkpoint magic {magic:?}; expected {MAGIC:?}"),
            ));
        }
        let config_echo = String::from_utf8(r.bytes()?)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        let n = r.u32()? as usize;
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            let name = String::from_utf8(r.bytes()?)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32()? as usize);
            }
            let numel: usize = shape.iter().product();
            let data = r.f64s(numel)?;
            params.push(ParamEntry { name, shape, data });
        }
        let mut flag = [0u8; 1];
        r.0.read_exact(&mut flag)?;
        let optimizer = if flag[0] == 1 {
            let adam_t = r.u64()?;
            let next_step = r.u64()?;
            let mut m = Vec::with_capacity(params.len());
            for p in &params {
                m.push(r.f64s(p.data.len())?);
            }
            let mut v = Vec::with_capacity(params.len());
            for p in &params {
                v.push(r.f64s(p.data.len())?);
            }
            Some(OptimizerState { adam_t, next_step, m, v, train_rng: r.rng()?, dropout_rng: r.rng()? })
        } else {
            None
        };
        Ok(Checkpoint { config_echo, params, optimizer })
    })()
    .map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use vhm_core::rng::{SeededRng, Stream};

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        let mut rng = SeededRng::new(5, Stream::Eval);
        let params = vec![
            ParamEntry { name: "a.w".into(), shape: vec![2, 3], data: rng.normal_vec(6) },
            ParamEntry { name: "b".into(), shape: vec![4], data: rng.normal_vec(4) },
        ];
        let opt = OptimizerState {
            adam_t: 17,
            next_step: 42,
            m: vec![rng.normal_vec(6), rng.normal_vec(4)],
            v: vec![rng.normal_vec(6), rng.normal_vec(4)],
            train_rng: SeededRng::new(9, Stream::Training).state(),
            dropout_rng: SeededRng::new(9, Stream::Dropout).state(),
        };
        let ckpt = Checkpoint { config_echo: "seed=9\n".into(), params, optimizer: Some(opt) };
        save(&path, &ckpt).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded, ckpt);
        for (a, b) in loaded.params[0].data.iter().zip(&ckpt.params[0].data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOTACKPT____").unwrap();
        assert!(load(&path).is_err());
    }
}
