//! Versioned binary checkpoints: resolved config text, spectral statistics,
//! named little-endian f64 parameter blobs and optional optimizer/RNG state,
//! closed by an FNV-1a checksum. Writing is deterministic, so
//! save → load → save reproduces the file byte for byte.

use std::fs;
use std::path::Path;

use tfsep_core::config::RunConfig;
use tfsep_core::encoder::SpectralStats;
use tfsep_core::model::Model;
use tfsep_core::optim::{Adam, Plateau};
use tfsep_core::train::{RngState, Trainer};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"TFSEPCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub adam_step: u64,
    pub plateau_best: f64,
    pub plateau_bad: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub rng: RngState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub stats: SpectralStats,
    pub params: Vec<NamedTensor>,
    pub trainer: Option<TrainerState>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ *b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl Checkpoint {
    pub fn from_model(model: &Model, config: &RunConfig) -> Self {
        let params = model
            .params
            .entries
            .iter()
            .map(|e| NamedTensor {
                name: e.name.clone(),
                shape: e.shape.clone(),
                data: e.slot.get(&model.params.values).to_vec(),
            })
            .collect();
        let config = RunConfig { model: model.config.clone(), train: config.train.clone() };
        Checkpoint { config, stats: model.stats.clone(), params, trainer: None }
    }

    pub fn from_trainer(t: &Trainer) -> Self {
        let mut ck = Self::from_model(&t.model, &RunConfig { model: t.model.config.clone(), train: t.config.clone() });
        ck.trainer = Some(TrainerState {
            step: t.step,
            epoch: t.epoch as u64,
            lr: t.adam.lr,
            adam_step: t.adam.step,
            plateau_best: t.plateau.best,
            plateau_bad: t.plateau.bad_epochs as u64,
            m: t.adam.m.clone(),
            v: t.adam.v.clone(),
            rng: RngState::capture(&t.rng),
        });
        ck
    }

    /// Rebuild the model, checking every parameter's name and shape.
    pub fn model(&self) -> Result<Model> {
        let mut model = Model::new(self.config.model.clone())?;
        if self.params.len() != model.params.entries.len() {
            return Err(Error::Usage(format!(
                "checkpoint holds {} parameter tensors, configuration expects {}",
                self.params.len(),
                model.params.entries.len()
            )));
        }
        for t in &self.params {
            model.set_param(&t.name, &t.shape, &t.data)?;
        }
        model.set_stats(self.stats.clone())?;
        Ok(model)
    }

    /// Rebuild a trainer with its optimizer and RNG state.
    pub fn trainer(&self) -> Result<Trainer> {
        let state = self
            .trainer
            .as_ref()
            .ok_or_else(|| Error::Usage("checkpoint has no optimizer state to resume from".into()))?;
        let model = self.model()?;
        let n = model.param_count();
        if state.m.len() != n || state.v.len() != n {
            return Err(Error::Usage("optimizer state does not match parameter count".into()));
        }
        let mut t = Trainer::new(model, self.config.train.clone())?;
        t.step = state.step;
        t.epoch = state.epoch as usize;
        t.adam = Adam {
            lr: state.lr,
            step: state.adam_step,
            m: state.m.clone(),
            v: state.v.clone(),
            ..t.adam
        };
        t.plateau = Plateau { best: state.plateau_best, bad_epochs: state.plateau_bad as usize, ..t.plateau };
        t.rng = state.rng.restore();
        Ok(t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.string(&self.config.to_text());
        w.f64s(&self.stats.mean);
        w.f64s(&self.stats.scale);
        w.u64(self.params.len() as u64);
        for t in &self.params {
            w.string(&t.name);
            w.u64(t.shape.len() as u64);
            t.shape.iter().for_each(|d| w.u64(*d as u64));
            w.f64s(&t.data);
        }
        match &self.trainer {
            None => w.u8(0),
            Some(s) => {
                w.u8(1);
                w.u64(s.step);
                w.u64(s.epoch);
                w.f64(s.lr);
                w.u64(s.adam_step);
                w.f64(s.plateau_best);
                w.u64(s.plateau_bad);
                w.f64s(&s.m);
                w.f64s(&s.v);
                w.bytes(&s.rng.seed);
                w.u64(s.rng.stream);
                w.bytes(&s.rng.word_pos.to_le_bytes());
            }
        }
        let sum = fnv1a(&w.buf);
        w.u64(sum);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < MAGIC.len() + 12 || &bytes[..8] != MAGIC {
            return Err("not a tfsep checkpoint".into());
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        if fnv1a(body) != u64::from_le_bytes(tail.try_into().expect("8 bytes")) {
            return Err("checksum mismatch (truncated or corrupted file)".into());
        }
        let mut r = Reader { buf: body, pos: 8 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let config = RunConfig::from_text(&r.string()?).map_err(|e| e.to_string())?;
        let stats = SpectralStats { mean: r.f64s()?, scale: r.f64s()? };
        let count = r.u64()? as usize;
        let mut params = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string()?;
            let nd = r.u64()? as usize;
            let shape = (0..nd).map(|_| r.u64().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
            let data = r.f64s()?;
            if shape.iter().product::<usize>() != data.len() {
                return Err(format!("tensor '{name}' has {} values for shape {shape:?}", data.len()));
            }
            params.push(NamedTensor { name, shape, data });
        }
        let trainer = match r.u8()? {
            0 => None,
            1 => Some(TrainerState {
                step: r.u64()?,
                epoch: r.u64()?,
                lr: r.f64()?,
                adam_step: r.u64()?,
                plateau_best: r.f64()?,
                plateau_bad: r.u64()?,
                m: r.f64s()?,
                v: r.f64s()?,
                rng: RngState {
                    seed: r.take(32)?.try_into().expect("32 bytes"),
                    stream: r.u64()?,
                    word_pos: u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes")),
                },
            }),
            f => return Err(format!("invalid optimizer-state flag {f}")),
        };
        if r.pos != body.len() {
            return Err(format!("{} trailing bytes", body.len() - r.pos));
        }
        Ok(Checkpoint { config, stats, params, trainer })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|msg| Error::Checkpoint { path: path.to_path_buf(), msg })
    }
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    fn string(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.bytes(s.as_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        self.buf.reserve(v.len() * 8);
        v.iter().for_each(|x| self.f64(*x));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len()).ok_or("unexpected end of file")?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u64()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "invalid UTF-8 string".to_string())
    }
    fn f64s(&mut self) -> std::result::Result<Vec<f64>, String> {
        let n = self.u64()? as usize;
        let raw = self.take(n.checked_mul(8).ok_or("length overflow")?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tfsep_core::config::ModelConfig;
    use tfsep_core::mixer::toy_sources;
    use tfsep_core::train::Example;

    fn tiny() -> RunConfig {
        let mut cfg = RunConfig {
            model: ModelConfig {
                conv_channels: 8,
                bottleneck: 8,
                hidden: 12,
                blocks: 2,
                repeats: 1,
                embed_dim: 4,
                ..ModelConfig::default()
            },
            ..RunConfig::default()
        };
        cfg.train.segment_seconds = 0.05;
        cfg
    }

    fn toy() -> Vec<Example> {
        (0..2)
            .map(|i| {
                let [a, b] = toy_sources(600, 8000, i);
                let mixture = a.iter().zip(&b).map(|(x, y)| x + y).collect();
                Example { id: format!("{i}"), mixture, sources: vec![a, b] }
            })
            .collect()
    }

    #[test]
    fn save_load_save_is_byte_identical_and_forward_is_bit_exact() {
        let cfg = tiny();
        let mut t = Trainer::new(Model::new(cfg.model.clone()).unwrap(), cfg.train.clone()).unwrap();
        let data = toy();
        t.run_epoch(&data, |_| {}).unwrap();
        let ck = Checkpoint::from_trainer(&t);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        ck.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back.to_bytes(), ck.to_bytes());
        let m = back.model().unwrap();
        let x = &data[0].mixture;
        assert_eq!(m.forward(x, false).unwrap().estimates, t.model.forward(x, false).unwrap().estimates);
    }

    #[test]
    fn resume_reproduces_the_next_step() {
        let cfg = tiny();
        let mut t = Trainer::new(Model::new(cfg.model.clone()).unwrap(), cfg.train.clone()).unwrap();
        let data = toy();
        t.run_epoch(&data, |_| {}).unwrap();
        let mut resumed = Checkpoint::from_bytes(&Checkpoint::from_trainer(&t).to_bytes()).unwrap().trainer().unwrap();
        let a = t.run_epoch(&data, |_| {}).unwrap();
        let b = resumed.run_epoch(&data, |_| {}).unwrap();
        assert!((a.train_loss - b.train_loss).abs() <= 1e-6 * a.train_loss.abs());
        assert_eq!(t.model.params.values, resumed.model.params.values);
    }

    #[test]
    fn corruption_is_detected() {
        let cfg = tiny();
        let ck = Checkpoint::from_model(&Model::new(cfg.model.clone()).unwrap(), &cfg);
        let mut bytes = ck.to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(Checkpoint::from_bytes(&bytes).unwrap_err().contains("checksum"));
        assert!(Checkpoint::from_bytes(b"nonsense").is_err());
        assert!(ck.trainer().is_err());
    }
}
