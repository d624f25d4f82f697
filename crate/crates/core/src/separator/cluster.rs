//! Clustering and mask estimation over embeddings.
//!
//! Every N-subset of the K initial centers is refined by k-means over all
//! embeddings; the refined set whose smallest pairwise centroid distance is
//! largest becomes the speaker attractors. Masks are the per-element
//! normalized exponentials of embedding–attractor dot products.

use alloc::vec;
use alloc::vec::Vec;

use crate::config::{KMeansMode, MaskNorm};
use crate::error::{Error, Result};
use crate::linalg::{dot, gemm, sq_dist, Mat};

/// Embeddings `V`, one `D`-vector per feature-map element, stored as
/// `[T·F × D]` with element `(t, f)` at row `t·F + f`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub values: Mat,
    pub frames: usize,
    pub channels: usize,
}

impl Embeddings {
    pub fn dim(&self) -> usize {
        self.values.cols
    }

    pub fn points(&self) -> usize {
        self.values.rows
    }

    pub fn at(&self, t: usize, f: usize) -> &[f64] {
        self.values.row(t * self.channels + f)
    }
}

/// Per-speaker masks `[N × T·F]`; row `i` holds speaker `i`'s `[T × F]` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub values: Mat,
    pub frames: usize,
    pub channels: usize,
}

impl MaskSet {
    pub fn speakers(&self) -> usize {
        self.values.rows
    }

    pub fn get(&self, speaker: usize, t: usize, f: usize) -> f64 {
        self.values.get(speaker, t * self.channels + f)
    }

    pub fn speaker(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }
}

/// Everything needed to backpropagate through one k-means step.
#[derive(Debug, Clone)]
pub enum StepCache {
    Hard { assign: Vec<usize>, counts: Vec<usize> },
    /// Soft assignment weights `[P × m]`, their column sums and the updated centers.
    Soft { weights: Mat, mass: Vec<f64>, updated: Mat },
}

fn nearest(point: &[f64], centers: &Mat) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for j in 0..centers.rows {
        let d = sq_dist(point, centers.row(j));
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

/// One k-means refinement of `centers` (`[m × D]`) over `points` (`[P × D]`).
///
/// Hard: nearest-center assignment and cluster means; an empty cluster keeps
/// its previous center. Soft: weights are the normalized exponentials of
/// negative squared distances, centers are the weighted means.
pub fn kmeans_step(points: &Mat, centers: &Mat, mode: KMeansMode) -> (Mat, StepCache) {
    let m = centers.rows;
    let d = centers.cols;
    match mode {
        KMeansMode::Hard => {
            let mut sums = Mat::zeros(m, d);
            let mut counts = vec![0usize; m];
            let mut assign = Vec::with_capacity(points.rows);
            for p in 0..points.rows {
                let j = nearest(points.row(p), centers);
                assign.push(j);
                counts[j] += 1;
                for (s, v) in sums.row_mut(j).iter_mut().zip(points.row(p)) {
                    *s += v;
                }
            }
            let mut out = centers.clone();
            for j in 0..m {
                if counts[j] > 0 {
                    let n = counts[j] as f64;
                    for (o, s) in out.row_mut(j).iter_mut().zip(sums.row(j)) {
                        *o = s / n;
                    }
                }
            }
            (out, StepCache::Hard { assign, counts })
        }
        KMeansMode::Soft => {
            let mut weights = Mat::zeros(points.rows, m);
            for p in 0..points.rows {
                let x = points.row(p);
                let w = weights.row_mut(p);
                for (j, wj) in w.iter_mut().enumerate() {
                    *wj = -sq_dist(x, centers.row(j));
                }
                softmax_in_place(w);
            }
            let mass: Vec<f64> = (0..m).map(|j| (0..points.rows).map(|p| weights.get(p, j)).sum()).collect();
            let mut updated = Mat::zeros(m, d);
            gemm(weights.view().t(), points.view(), &mut updated.data, 0.0);
            for j in 0..m {
                if mass[j] > 0.0 {
                    let inv = 1.0 / mass[j];
                    updated.row_mut(j).iter_mut().for_each(|v| *v *= inv);
                } else {
                    updated.row_mut(j).copy_from_slice(centers.row(j));
                }
            }
            let out = updated.clone();
            (out, StepCache::Soft { weights, mass, updated })
        }
    }
}

/// Backward through [`kmeans_step`]: given `∂L/∂updated`, accumulates into
/// `grad_points` and returns `∂L/∂centers`.
pub fn kmeans_step_backward(
    points: &Mat,
    centers: &Mat,
    cache: &StepCache,
    grad_updated: &Mat,
    grad_points: &mut Mat,
) -> Mat {
    let m = centers.rows;
    let d = centers.cols;
    let mut g_centers = Mat::zeros(m, d);
    match cache {
        StepCache::Hard { assign, counts } => {
            // assignments are piecewise constant: gradient flows through the means only
            for j in 0..m {
                if counts[j] == 0 {
                    g_centers.row_mut(j).copy_from_slice(grad_updated.row(j));
                }
            }
            for (p, &j) in assign.iter().enumerate() {
                let inv = 1.0 / counts[j] as f64;
                for (g, u) in grad_points.row_mut(p).iter_mut().zip(grad_updated.row(j)) {
                    *g += u * inv;
                }
            }
        }
        StepCache::Soft { weights, mass, updated } => {
            // c'_j = U_j / S_j with U_j = Σ w_pj v_p and S_j = Σ w_pj
            let mut g_u = Mat::zeros(m, d);
            let mut g_s = vec![0.0; m];
            for j in 0..m {
                if mass[j] > 0.0 {
                    for (gu, gc) in g_u.row_mut(j).iter_mut().zip(grad_updated.row(j)) {
                        *gu = gc / mass[j];
                    }
                    g_s[j] = -dot(grad_updated.row(j), updated.row(j)) / mass[j];
                } else {
                    g_centers.row_mut(j).copy_from_slice(grad_updated.row(j));
                }
            }
            // ∂L/∂w_pj = g_u_j · v_p + g_s_j
            let mut g_w = Mat::zeros(points.rows, m);
            gemm(points.view(), g_u.view().t(), &mut g_w.data, 0.0);
            // direct path: ∂L/∂v_p += Σ_j w_pj g_u_j
            gemm(weights.view(), g_u.view(), &mut grad_points.data, 1.0);
            let mut diff = vec![0.0; d];
            for p in 0..points.rows {
                let w = weights.row(p);
                let gw = g_w.row_mut(p);
                for (g, s) in gw.iter_mut().zip(&g_s) {
                    *g += s;
                }
                let inner: f64 = w.iter().zip(gw.iter()).map(|(a, b)| a * b).sum();
                let x = points.row(p);
                for j in 0..m {
                    // logit z_pj = −‖v_p − c_j‖²
                    let gz = w[j] * (gw[j] - inner);
                    if gz == 0.0 {
                        continue;
                    }
                    for ((df, xv), cv) in diff.iter_mut().zip(x).zip(centers.row(j)) {
                        *df = xv - cv;
                    }
                    let gp = grad_points.row_mut(p);
                    for (g, df) in gp.iter_mut().zip(&diff) {
                        *g -= 2.0 * gz * df;
                    }
                    for (g, df) in g_centers.row_mut(j).iter_mut().zip(&diff) {
                        *g += 2.0 * gz * df;
                    }
                }
            }
        }
    }
    g_centers
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = libm::exp(*x - max);
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        // rightmost index that can still advance
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] < n - k + i {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Smallest pairwise Euclidean distance among the rows of `centers`.
pub fn in_set_distance(centers: &Mat) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..centers.rows {
        for j in i + 1..centers.rows {
            best = best.min(libm::sqrt(sq_dist(centers.row(i), centers.row(j))));
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct Selection {
    /// Chosen indices into the initial centers, ascending.
    pub subset: Vec<usize>,
    /// Refined centroids `A`, `[N × D]`.
    pub centroids: Mat,
    pub in_set_distance: f64,
    pub candidates: usize,
    /// Centers entering each refinement step of the chosen subset.
    pub steps: Vec<(Mat, StepCache)>,
}

fn refine(points: &Mat, start: Mat, iters: usize, mode: KMeansMode) -> (Mat, Vec<(Mat, StepCache)>) {
    let mut centers = start;
    let mut steps = Vec::with_capacity(iters);
    for _ in 0..iters {
        let (next, cache) = kmeans_step(points, &centers, mode);
        steps.push((centers, cache));
        centers = next;
    }
    (centers, steps)
}

/// Refine each of the C(K, N) subsets of `initial` (`[K × D]`) with `iters`
/// k-means steps and keep the one with the largest in-set distance. Exact
/// ties go to the lexicographically first subset.
pub fn cluster_select(
    v: &Embeddings,
    initial: &Mat,
    speakers: usize,
    iters: usize,
    mode: KMeansMode,
) -> Result<Selection> {
    if initial.rows < speakers {
        return Err(Error::Config(alloc::format!(
            "{} initial centers cannot yield {speakers} centroids",
            initial.rows
        )));
    }
    if initial.cols != v.dim() {
        return Err(Error::Dimension(alloc::format!(
            "center dim {} vs embedding dim {}",
            initial.cols,
            v.dim()
        )));
    }
    let subsets = combinations(initial.rows, speakers);
    let candidates = subsets.len();
    let mut best: Option<Selection> = None;
    for subset in subsets {
        let start = Mat::from_fn(speakers, initial.cols, |r, c| initial.get(subset[r], c));
        let (centroids, steps) = refine(&v.values, start, iters, mode);
        let dist = in_set_distance(&centroids);
        let better = match &best {
            None => true,
            Some(b) => dist > b.in_set_distance,
        };
        if better {
            best = Some(Selection { subset, centroids, in_set_distance: dist, candidates, steps });
        }
    }
    // at least one subset exists because initial.rows >= speakers >= 1
    best.ok_or_else(|| Error::Config("no candidate subsets".into()))
}

/// Backward through the chosen subset's refinement. Returns `∂L/∂initial`
/// (`[K × D]`, zero for unselected centers) and accumulates into `grad_v`.
pub fn cluster_select_backward(
    v: &Embeddings,
    initial_rows: usize,
    selection: &Selection,
    grad_centroids: &Mat,
    grad_v: &mut Mat,
) -> Mat {
    let mut g = grad_centroids.clone();
    for (centers, cache) in selection.steps.iter().rev() {
        g = kmeans_step_backward(&v.values, centers, cache, &g, grad_v);
    }
    let mut out = Mat::zeros(initial_rows, g.cols);
    for (r, &k) in selection.subset.iter().enumerate() {
        out.row_mut(k).copy_from_slice(g.row(r));
    }
    out
}

/// Masks from dot products `V_{t,f} · a_i`, normalized across speakers
/// (softmax) or left as raw logits.
pub fn estimate_masks(v: &Embeddings, centroids: &Mat, norm: MaskNorm) -> Result<MaskSet> {
    if centroids.cols != v.dim() {
        return Err(Error::Dimension(alloc::format!(
            "centroid dim {} vs embedding dim {}",
            centroids.cols,
            v.dim()
        )));
    }
    let mut logits = Mat::zeros(centroids.rows, v.points());
    gemm(centroids.view(), v.values.view().t(), &mut logits.data, 0.0);
    if norm == MaskNorm::Softmax {
        normalize_across_speakers(&mut logits);
    }
    Ok(MaskSet { values: logits, frames: v.frames, channels: v.channels })
}

/// Column-wise softmax of an `[N × P]` logit matrix.
pub(crate) fn normalize_across_speakers(m: &mut Mat) {
    let n = m.rows;
    let mut col = vec![0.0; n];
    for p in 0..m.cols {
        for i in 0..n {
            col[i] = m.get(i, p);
        }
        softmax_in_place(&mut col);
        for i in 0..n {
            m.set(i, p, col[i]);
        }
    }
}

/// `∂L/∂logits` from `∂L/∂masks` for column-wise softmax (identity for raw masks).
pub(crate) fn masks_logit_grad(masks: &Mat, grad: &Mat, norm: MaskNorm) -> Mat {
    if norm == MaskNorm::Raw {
        return grad.clone();
    }
    let mut out = Mat::zeros(masks.rows, masks.cols);
    for p in 0..masks.cols {
        let inner: f64 = (0..masks.rows).map(|i| masks.get(i, p) * grad.get(i, p)).sum();
        for i in 0..masks.rows {
            out.set(i, p, masks.get(i, p) * (grad.get(i, p) - inner));
        }
    }
    out
}

/// Backward through [`estimate_masks`]: accumulates `∂L/∂V`, returns `∂L/∂A`.
pub fn estimate_masks_backward(
    v: &Embeddings,
    centroids: &Mat,
    masks: &MaskSet,
    grad_masks: &Mat,
    norm: MaskNorm,
    grad_v: &mut Mat,
) -> Mat {
    let gl = masks_logit_grad(&masks.values, grad_masks, norm);
    gemm(gl.view().t(), centroids.view(), &mut grad_v.data, 1.0);
    let mut ga = Mat::zeros(centroids.rows, centroids.cols);
    gemm(gl.view(), v.values.view(), &mut ga.data, 0.0);
    ga
}
