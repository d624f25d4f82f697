//! Flat parameter storage shared by every trainable layer.
//!
//! Layers hold [`Slot`] handles into one contiguous `Vec<f64>`, so the
//! optimizer, gradient clipping and checkpointing operate on plain slices.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub len: usize,
}

impl Slot {
    #[inline]
    pub fn get<'a>(&self, values: &'a [f64]) -> &'a [f64] {
        &values[self.offset..self.offset + self.len]
    }

    #[inline]
    pub fn get_mut<'a>(&self, values: &'a mut [f64]) -> &'a mut [f64] {
        &mut values[self.offset..self.offset + self.len]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub slot: Slot,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    pub entries: Vec<ParamEntry>,
    pub values: Vec<f64>,
}

pub enum Init {
    Zeros,
    Constant(f64),
    /// Uniform on ±1/sqrt(fan_in).
    FanIn(usize),
    Normal(f64),
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add<R: Rng>(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut R) -> Slot {
        debug_assert!(self.entries.iter().all(|e| e.name != name), "duplicate parameter {name}");
        let len: usize = shape.iter().product();
        let slot = Slot { offset: self.values.len(), len };
        match init {
            Init::Zeros => self.values.extend(core::iter::repeat_n(0.0, len)),
            Init::Constant(c) => self.values.extend(core::iter::repeat_n(c, len)),
            Init::FanIn(fan_in) => {
                let bound = 1.0 / libm::sqrt(fan_in.max(1) as f64);
                self.values.extend((0..len).map(|_| rng.random_range(-bound..bound)));
            }
            Init::Normal(std) => {
                self.values.extend((0..len).map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    z * std
                }));
            }
        }
        self.entries.push(ParamEntry { name: name.into(), shape: shape.to_vec(), slot });
        slot
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.values.len()]
    }

    pub fn find(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Parameter count per name prefix (text before the first '.').
    pub fn count_by_prefix(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for e in &self.entries {
            let prefix = e.name.split('.').next().unwrap_or("");
            match out.iter_mut().find(|(p, _)| p == prefix) {
                Some((_, n)) => *n += e.slot.len,
                None => out.push((prefix.into(), e.slot.len)),
            }
        }
        out
    }
}
