//! Embedding network plus mask estimation.
//!
//! The network is an entry 1×1 conv (F → bottleneck), `blocks × repeats`
//! dilated residual blocks with dilations 1, 2, …, 2^(blocks−1), and a head.
//! In clustering mode the head is a frame-wise linear map to `F·D`
//! embedding values per frame followed by [`cluster::cluster_select`] and
//! [`cluster::estimate_masks`]; in direct mode a 1×1 head emits `N·F` mask
//! logits per frame.

pub mod cluster;
pub mod layers;

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::config::{KMeansMode, MaskNorm, ModelConfig, SeparatorMode};
use crate::encoder::FeatureMap;
use crate::error::{Error, Result};
use crate::linalg::{sq_dist, Mat};
use crate::params::{Init, ParamStore, Slot};

pub use cluster::{Embeddings, MaskSet, Selection};
use layers::{BlockCache, Conv1x1, FrameLinear, ResidualBlock};

#[derive(Debug, Clone)]
pub enum Head {
    Embedding(FrameLinear),
    Direct(FrameLinear),
}

#[derive(Debug, Clone)]
pub struct Separator {
    pub entry: Conv1x1,
    pub blocks: Vec<ResidualBlock>,
    pub head: Head,
    /// Trainable initial centers `[K × D]` (clustering mode only).
    pub centers: Option<Slot>,
    pub channels: usize,
    pub embed_dim: usize,
    pub speakers: usize,
    pub center_count: usize,
    pub kmeans_iters: usize,
    pub kmeans_train: KMeansMode,
    pub kmeans_eval: KMeansMode,
    pub mask_norm: MaskNorm,
}

#[derive(Debug, Clone)]
pub struct SeparatorTrace {
    entry_out: Mat,
    block_caches: Vec<(Mat, BlockCache)>,
    last: Mat,
    pub embeddings: Option<Embeddings>,
    pub selection: Option<Selection>,
    pub masks: MaskSet,
}

// minimum pairwise distance enforced between freshly initialized centers
const MIN_CENTER_GAP: f64 = 0.5;

fn spread_centers(values: &mut [f64], k: usize, d: usize) {
    for _ in 0..16 {
        let mut moved = false;
        for i in 0..k {
            for j in i + 1..k {
                let (a, b) = (&values[i * d..(i + 1) * d], &values[j * d..(j + 1) * d]);
                let dist = libm::sqrt(sq_dist(a, b));
                if dist < MIN_CENTER_GAP {
                    moved = true;
                    // push j away from i along their difference (or along axis 0 if coincident)
                    let mut dir: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
                    if dist < 1e-12 {
                        dir.iter_mut().for_each(|v| *v = 0.0);
                        dir[0] = 1.0;
                    } else {
                        dir.iter_mut().for_each(|v| *v /= dist);
                    }
                    let shift = MIN_CENTER_GAP - dist + 1e-9;
                    for (c, dv) in dir.iter().enumerate() {
                        values[j * d + c] += dv * shift;
                    }
                }
            }
        }
        if !moved {
            return;
        }
    }
}

impl Separator {
    pub fn new<R: Rng>(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut R) -> Self {
        let f = cfg.feature_channels();
        let entry = Conv1x1::new("separator.entry", f, cfg.bottleneck, store, rng);
        let mut blocks = Vec::with_capacity(cfg.blocks * cfg.repeats);
        for r in 0..cfg.repeats {
            for b in 0..cfg.blocks {
                blocks.push(ResidualBlock::new(
                    &format!("separator.block{r}_{b}"),
                    cfg.bottleneck,
                    cfg.hidden,
                    cfg.kernel,
                    1 << b,
                    cfg.norm,
                    store,
                    rng,
                ));
            }
        }
        let (head, centers) = match cfg.mode {
            SeparatorMode::Clustering => {
                let head = FrameLinear::new("separator.embedding", cfg.bottleneck, f * cfg.embed_dim, store, rng);
                let slot = store.add("separator.centers", &[cfg.centers, cfg.embed_dim], Init::Normal(1.0), rng);
                spread_centers(slot.get_mut(&mut store.values), cfg.centers, cfg.embed_dim);
                (Head::Embedding(head), Some(slot))
            }
            SeparatorMode::Direct => {
                let head = FrameLinear::new("separator.mask_head", cfg.bottleneck, f * cfg.speakers, store, rng);
                (Head::Direct(head), None)
            }
        };
        Separator {
            entry,
            blocks,
            head,
            centers,
            channels: f,
            embed_dim: cfg.embed_dim,
            speakers: cfg.speakers,
            center_count: cfg.centers,
            kmeans_iters: cfg.kmeans_iters,
            kmeans_train: cfg.kmeans_train,
            kmeans_eval: cfg.kmeans_eval,
            mask_norm: cfg.mask_norm,
        }
    }

    pub fn mode(&self) -> SeparatorMode {
        match self.head {
            Head::Embedding(_) => SeparatorMode::Clustering,
            Head::Direct(_) => SeparatorMode::Direct,
        }
    }

    pub fn initial_centers(&self, p: &[f64]) -> Option<Mat> {
        self.centers.map(|s| Mat::from_vec(self.center_count, self.embed_dim, s.get(p).to_vec()))
    }

    fn check_input(&self, h: &FeatureMap) -> Result<()> {
        if h.channels() != self.channels {
            return Err(Error::Dimension(format!(
                "feature map has {} channels, separator expects {}",
                h.channels(),
                self.channels
            )));
        }
        Ok(())
    }

    /// Entry conv and residual stack; output `[bottleneck × T]`.
    fn trunk(&self, h: &FeatureMap, p: &[f64]) -> (Mat, Vec<(Mat, BlockCache)>, Mat) {
        let entry_out = self.entry.forward_view(h.values.view().t(), p);
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut x = entry_out.clone();
        for block in &self.blocks {
            let (y, cache) = block.forward(&x, p);
            caches.push((x, cache));
            x = y;
        }
        (entry_out, caches, x)
    }

    /// `V = Embed(H)`, `[T·F × D]`.
    pub fn embed(&self, h: &FeatureMap, p: &[f64]) -> Result<Embeddings> {
        self.check_input(h)?;
        let Head::Embedding(head) = &self.head else {
            return Err(Error::Config("embed requires clustering mode".into()));
        };
        let (_, _, last) = self.trunk(h, p);
        Ok(self.embeddings_from(head, &last, p, h.frames()))
    }

    fn embeddings_from(&self, head: &FrameLinear, last: &Mat, p: &[f64], frames: usize) -> Embeddings {
        let out = head.forward(last, p);
        Embeddings {
            values: Mat::from_vec(frames * self.channels, self.embed_dim, out.data),
            frames,
            channels: self.channels,
        }
    }

    /// Mask head of the no-clustering ablation applied to the residual-stack output.
    pub fn masks_direct(&self, last: &Mat, p: &[f64]) -> Result<MaskSet> {
        let Head::Direct(head) = &self.head else {
            return Err(Error::Config("masks_direct requires direct (no-clustering) mode".into()));
        };
        let frames = last.cols;
        let f = self.channels;
        let out = head.forward(last, p);
        // [T × N·F] frame-major → [N × T·F]
        let mut logits = Mat::zeros(self.speakers, frames * f);
        for t in 0..frames {
            let row = out.row(t);
            for i in 0..self.speakers {
                logits.row_mut(i)[t * f..(t + 1) * f].copy_from_slice(&row[i * f..(i + 1) * f]);
            }
        }
        if self.mask_norm == MaskNorm::Softmax {
            cluster::normalize_across_speakers(&mut logits);
        }
        Ok(MaskSet { values: logits, frames, channels: f })
    }

    pub fn forward(&self, h: &FeatureMap, p: &[f64], training: bool) -> Result<(MaskSet, SeparatorTrace)> {
        self.check_input(h)?;
        let (entry_out, block_caches, last) = self.trunk(h, p);
        let (masks, embeddings, selection) = match &self.head {
            Head::Embedding(head) => {
                let v = self.embeddings_from(head, &last, p, h.frames());
                let initial = self.initial_centers(p).expect("clustering mode has centers");
                let mode = if training { self.kmeans_train } else { self.kmeans_eval };
                let sel = cluster::cluster_select(&v, &initial, self.speakers, self.kmeans_iters, mode)?;
                let masks = cluster::estimate_masks(&v, &sel.centroids, self.mask_norm)?;
                (masks, Some(v), Some(sel))
            }
            Head::Direct(_) => (self.masks_direct(&last, p)?, None, None),
        };
        let trace = SeparatorTrace { entry_out, block_caches, last, embeddings, selection, masks: masks.clone() };
        Ok((masks, trace))
    }

    /// Backward from `∂L/∂masks` (`[N × T·F]`); returns `∂L/∂H` (`[T × F]`).
    pub fn backward(&self, h: &FeatureMap, trace: &SeparatorTrace, grad_masks: &Mat, p: &[f64], grads: &mut [f64]) -> Mat {
        let frames = h.frames();
        let f = self.channels;
        let mut g_last = match &self.head {
            Head::Embedding(head) => {
                let v = trace.embeddings.as_ref().expect("embedding trace");
                let sel = trace.selection.as_ref().expect("selection trace");
                let mut gv = Mat::zeros(v.points(), v.dim());
                let ga = cluster::estimate_masks_backward(v, &sel.centroids, &trace.masks, grad_masks, self.mask_norm, &mut gv);
                let g_init = cluster::cluster_select_backward(v, self.center_count, sel, &ga, &mut gv);
                let slot = self.centers.expect("clustering mode has centers");
                for (g, d) in slot.get_mut(grads).iter_mut().zip(&g_init.data) {
                    *g += d;
                }
                let gv_frames = Mat::from_vec(frames, f * self.embed_dim, gv.data);
                head.backward(&trace.last, &gv_frames, p, grads)
            }
            Head::Direct(head) => {
                let gl = cluster::masks_logit_grad(&trace.masks.values, grad_masks, self.mask_norm);
                let mut g_out = Mat::zeros(frames, self.speakers * f);
                for t in 0..frames {
                    let row = g_out.row_mut(t);
                    for i in 0..self.speakers {
                        row[i * f..(i + 1) * f].copy_from_slice(&gl.row(i)[t * f..(t + 1) * f]);
                    }
                }
                head.backward(&trace.last, &g_out, p, grads)
            }
        };
        for (block, (input, cache)) in self.blocks.iter().zip(&trace.block_caches).rev() {
            g_last = block.backward(input, cache, &g_last, p, grads);
        }
        let _ = &trace.entry_out;
        let g_h = self.entry.backward_view(h.values.view().t(), &g_last, p, grads);
        g_h.transpose()
    }
}
