//! Temporal rank pooling of voxel occupancy sequences.
//!
//! A clip of `T` binary grids is compressed into one real-valued grid whose
//! per-voxel value orders the frames in time. Two routes are provided:
//!
//! * [`pool_exact`] learns the linear ranker `w` over running-average
//!   occupancies with a pairwise hinge (RankSVM) objective
//!   `λ/2·‖w‖² + 2/(T(T−1))·Σ_{q>t} max(0, 1 − S(q) + S(t))`, where
//!   `S(t) = ⟨w, V̄_t⟩`.
//! * [`pool_approx`] uses the closed-form coefficients of
//!   [`approx_coeffs`] on raw occupancies, which is the first gradient step
//!   of the same objective taken from `w = 0`.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::voxel::{GridSpec, VoxelGrid, VoxelIndex};

#[derive(Debug, Clone, PartialEq)]
pub struct MotionGrid {
    pub spec: GridSpec,
    pub motion: BTreeMap<VoxelIndex, f64>,
}

impl MotionGrid {
    pub fn empty(spec: GridSpec) -> Self {
        Self {
            spec,
            motion: BTreeMap::new(),
        }
    }

    pub fn get(&self, idx: &VoxelIndex) -> Option<f64> {
        self.motion.get(idx).copied()
    }

    pub fn len(&self) -> usize {
        self.motion.len()
    }

    pub fn is_empty(&self) -> bool {
        self.motion.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankPoolConfig {
    pub lambda: f64,
    pub max_iters: usize,
    pub step_size: f64,
    pub tol: f64,
}

impl Default for RankPoolConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            max_iters: 500,
            step_size: 0.1,
            tol: 1e-7,
        }
    }
}

impl RankPoolConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || self.max_iters == 0 || !(self.step_size > 0.0) {
            return Err(Error::InvalidArgument(format!("rank pool config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoolingMode {
    #[default]
    Approx,
    Exact,
}

impl std::str::FromStr for PoolingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "approx" => Ok(PoolingMode::Approx),
            "exact" => Ok(PoolingMode::Exact),
            other => Err(Error::Parse(format!("unknown pooling mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for PoolingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PoolingMode::Approx => "approx",
            PoolingMode::Exact => "exact",
        })
    }
}

fn shared_spec(grids: &[VoxelGrid]) -> Result<GridSpec> {
    let first = grids
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty grid sequence".into()))?;
    if grids.iter().any(|g| g.spec != first.spec) {
        return Err(Error::MismatchedSpecs);
    }
    Ok(first.spec)
}

/// Element `t` holds, for every voxel seen in frames `0..=t`, the fraction
/// of those frames in which it was occupied.
pub fn running_averages(grids: &[VoxelGrid]) -> Result<Vec<BTreeMap<VoxelIndex, f64>>> {
    shared_spec(grids)?;
    let mut counts: BTreeMap<VoxelIndex, u32> = BTreeMap::new();
    let mut out = Vec::with_capacity(grids.len());
    for (t, g) in grids.iter().enumerate() {
        for idx in g.occupied() {
            *counts.entry(*idx).or_insert(0) += 1;
        }
        let n = (t + 1) as f64;
        out.push(counts.iter().map(|(k, &c)| (*k, c as f64 / n)).collect());
    }
    Ok(out)
}

/// `α_t = 2(T − t + 1) − (T + 1)(H_T − H_{t−1})` for `t = 1..=T`.
pub fn approx_coeffs(frames: usize) -> Vec<f64> {
    let t_total = frames as f64;
    // tail[t] = H_T − H_{t−1} = Σ_{i=t}^{T} 1/i, accumulated from the small end.
    let mut tail = vec![0.0; frames + 2];
    for i in (1..=frames).rev() {
        tail[i] = tail[i + 1] + 1.0 / i as f64;
    }
    (1..=frames)
        .map(|t| 2.0 * (t_total - t as f64 + 1.0) - (t_total + 1.0) * tail[t])
        .collect()
}

/// `motion(v) = Σ_t α_t · occ_t(v)` over raw occupancies. Voxels occupied
/// in every frame get exactly 0 since the coefficients sum to zero.
pub fn pool_approx(grids: &[VoxelGrid]) -> Result<MotionGrid> {
    let spec = shared_spec(grids)?;
    let frames = grids.len();
    let alpha = approx_coeffs(frames);
    let mut acc: HashMap<VoxelIndex, (f64, usize)> = HashMap::new();
    for (g, &a) in grids.iter().zip(&alpha) {
        for idx in g.occupied() {
            let e = acc.entry(*idx).or_insert((0.0, 0));
            e.0 += a;
            e.1 += 1;
        }
    }
    let motion = acc
        .into_iter()
        .map(|(idx, (sum, count))| (idx, if count == frames { 0.0 } else { sum }))
        .collect();
    Ok(MotionGrid { spec, motion })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactPoolOutput {
    pub grid: MotionGrid,
    /// False when `max_iters` ran out before the objective settled.
    pub converged: bool,
    pub iterations: usize,
    /// Objective after each accepted step, starting with `w = 0`.
    pub objective_trace: Vec<f64>,
}

/// Dense running-average design matrix over the union of occupied voxels.
struct RankProblem {
    voxels: Vec<VoxelIndex>,
    /// `frames × voxels`, row-major.
    averages: Vec<f64>,
    frames: usize,
    lambda: f64,
    pair_weight: f64,
}

impl RankProblem {
    fn new(grids: &[VoxelGrid], lambda: f64) -> Result<Self> {
        let avgs = running_averages(grids)?;
        let frames = grids.len();
        let voxels: Vec<VoxelIndex> = avgs.last().map(|m| m.keys().copied().collect()).unwrap_or_default();
        let column: BTreeMap<VoxelIndex, usize> = voxels.iter().enumerate().map(|(i, v)| (*v, i)).collect();
        let d = voxels.len();
        let mut averages = vec![0.0; frames * d];
        for (t, m) in avgs.iter().enumerate() {
            for (v, a) in m {
                averages[t * d + column[v]] = *a;
            }
        }
        let pair_weight = if frames > 1 {
            2.0 / (frames as f64 * (frames as f64 - 1.0))
        } else {
            0.0
        };
        Ok(Self {
            voxels,
            averages,
            frames,
            lambda,
            pair_weight,
        })
    }

    fn dim(&self) -> usize {
        self.voxels.len()
    }

    fn scores(&self, w: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..self.frames)
            .map(|t| {
                self.averages[t * d..(t + 1) * d]
                    .iter()
                    .zip(w)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    fn objective(&self, w: &[f64]) -> f64 {
        let s = self.scores(w);
        let mut hinge = 0.0;
        for t in 0..self.frames {
            for q in t + 1..self.frames {
                hinge += (1.0 - s[q] + s[t]).max(0.0);
            }
        }
        0.5 * self.lambda * w.iter().map(|x| x * x).sum::<f64>() + self.pair_weight * hinge
    }

    /// A subgradient: `λw + c·Σ_{violated q>t} (V̄_t − V̄_q)`.
    fn subgradient(&self, w: &[f64]) -> Vec<f64> {
        let s = self.scores(w);
        // Net signed count of violated pairs per frame.
        let mut coef = vec![0.0; self.frames];
        for t in 0..self.frames {
            for q in t + 1..self.frames {
                if 1.0 - s[q] + s[t] > 0.0 {
                    coef[t] += 1.0;
                    coef[q] -= 1.0;
                }
            }
        }
        let d = self.dim();
        let mut pairs = vec![0.0; d];
        for (t, c) in coef.iter().enumerate() {
            if *c == 0.0 {
                continue;
            }
            for (h, a) in pairs.iter_mut().zip(&self.averages[t * d..(t + 1) * d]) {
                *h += c * a;
            }
        }
        w.iter()
            .zip(pairs)
            .map(|(x, h)| self.lambda * x + self.pair_weight * h)
            .collect()
    }
}

/// Minimises the RankSVM objective by subgradient descent.
///
/// The step size decays by 0.95 every 50 iterations; a step that would raise
/// the objective is rejected and the step halved, so accepted objectives
/// never increase.
pub fn pool_exact(grids: &[VoxelGrid], cfg: &RankPoolConfig) -> Result<ExactPoolOutput> {
    cfg.validate()?;
    let spec = shared_spec(grids)?;
    let problem = RankProblem::new(grids, cfg.lambda)?;
    let mut w = vec![0.0; problem.dim()];
    let mut obj = problem.objective(&w);
    let mut trace = vec![obj];
    let mut step = cfg.step_size;
    let mut converged = problem.frames < 2 || problem.dim() == 0;
    let mut iterations = 0;

    while !converged && iterations < cfg.max_iters {
        iterations += 1;
        if iterations % 50 == 0 {
            step *= 0.95;
        }
        let g = problem.subgradient(&w);
        let gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if gnorm == 0.0 {
            converged = true;
            break;
        }
        let candidate: Vec<f64> = w.iter().zip(&g).map(|(x, gi)| x - step * gi).collect();
        let cand_obj = problem.objective(&candidate);
        if cand_obj <= obj {
            let gain = obj - cand_obj;
            w = candidate;
            obj = cand_obj;
            trace.push(obj);
            if gain < cfg.tol {
                converged = true;
            }
        } else {
            step *= 0.5;
            if step * gnorm < 1e-14 {
                converged = true;
            }
        }
    }

    let motion = problem.voxels.iter().copied().zip(w).collect();
    Ok(ExactPoolOutput {
        grid: MotionGrid { spec, motion },
        converged,
        iterations,
        objective_trace: trace,
    })
}

/// Ranking scores `S(t|w)` of a motion grid over the clip's running averages.
pub fn ranking_scores(grids: &[VoxelGrid], motion: &MotionGrid) -> Result<Vec<f64>> {
    Ok(running_averages(grids)?
        .iter()
        .map(|avg| avg.iter().map(|(v, a)| a * motion.get(v).unwrap_or(0.0)).sum())
        .collect())
}

pub fn pool(grids: &[VoxelGrid], mode: PoolingMode, cfg: &RankPoolConfig) -> Result<MotionGrid> {
    match mode {
        PoolingMode::Approx => pool_approx(grids),
        PoolingMode::Exact => pool_exact(grids, cfg).map(|o| o.grid),
    }
}

/// Overlapping half-open frame ranges, consecutive ranges sharing about half
/// their length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub ranges: Vec<std::ops::Range<usize>>,
}

impl SplitPlan {
    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    /// Middle frame of each range.
    pub fn middles(&self) -> Vec<usize> {
        self.ranges.iter().map(|r| (r.start + r.end) / 2).collect()
    }
}

/// Split length `L = round(2T/(n+1))`, stride `round(L/2)`, ties to even;
/// the last range always ends at `T`.
pub fn plan_splits(frames: usize, n_splits: usize) -> Result<SplitPlan> {
    if n_splits == 0 || frames == 0 {
        return Err(Error::InvalidArgument(format!(
            "plan_splits needs T ≥ 1 and n ≥ 1, got T={frames} n={n_splits}"
        )));
    }
    if frames < n_splits {
        return Err(Error::TooFewFrames {
            frames,
            splits: n_splits,
        });
    }
    if n_splits == 1 {
        #[allow(clippy::single_range_in_vec_init)]
        return Ok(SplitPlan {
            ranges: vec![0..frames],
        });
    }
    let len = ((2.0 * frames as f64 / (n_splits as f64 + 1.0)).round_ties_even() as usize).max(1);
    let stride = ((len as f64 / 2.0).round_ties_even() as usize).max(1);
    let ranges = (0..n_splits)
        .map(|i| {
            let start = (i * stride).min(frames - 1);
            let end = if i + 1 == n_splits {
                frames
            } else {
                (start + len).min(frames)
            };
            start..end
        })
        .collect();
    Ok(SplitPlan { ranges })
}
