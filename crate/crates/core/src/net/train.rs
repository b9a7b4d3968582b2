use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::layers::{cast, Scalar};
use super::model::{argmax, cross_entropy, MultiStreamModel, PreparedInputs, StreamInputs};
use crate::error::{Error, Result};
use crate::pointset::DvPointSet;

/// Training-time augmentation ranges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentRanges {
    /// Maximum rotation about Y, degrees.
    pub rot_y_deg: f64,
    /// Maximum rotation about X, degrees.
    pub rot_x_deg: f64,
    pub jitter_sigma: f64,
    pub jitter_clip: f64,
    /// Maximum fraction of points dropped.
    pub max_dropout: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        Self {
            rot_y_deg: 30.0,
            rot_x_deg: 5.0,
            jitter_sigma: 0.01,
            jitter_clip: 0.05,
            max_dropout: 0.2,
        }
    }
}

impl AugmentRanges {
    pub fn none() -> Self {
        Self {
            rot_y_deg: 0.0,
            rot_x_deg: 0.0,
            jitter_sigma: 0.0,
            jitter_clip: 0.0,
            max_dropout: 0.0,
        }
    }
}

/// One augmentation draw, shared by all streams of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub rot_y: f64,
    pub rot_x: f64,
    pub dropout: f64,
}

impl AugmentDraw {
    pub fn sample<R: Rng>(ranges: &AugmentRanges, rng: &mut R) -> Self {
        let mut sym = |deg: f64| {
            if deg > 0.0 {
                rng.random_range(-deg..=deg).to_radians()
            } else {
                0.0
            }
        };
        let rot_y = sym(ranges.rot_y_deg);
        let rot_x = sym(ranges.rot_x_deg);
        let dropout = if ranges.max_dropout > 0.0 {
            rng.random_range(0.0..=ranges.max_dropout)
        } else {
            0.0
        };
        Self { rot_y, rot_x, dropout }
    }
}

/// Rotates about Y then X.
pub fn rotate(ps: &DvPointSet, rot_y: f64, rot_x: f64) -> DvPointSet {
    let (sy, cy) = rot_y.sin_cos();
    let (sx, cx) = rot_x.sin_cos();
    let mut out = ps.clone();
    for p in &mut out.coords {
        let x1 = cy * p[0] + sy * p[2];
        let z1 = -sy * p[0] + cy * p[2];
        let y2 = cx * p[1] - sx * z1;
        let z2 = sx * p[1] + cx * z1;
        *p = [x1, y2, z2];
    }
    out
}

/// Adds Gaussian jitter clipped to `±clip` to every coordinate.
pub fn jitter<R: Rng>(ps: &DvPointSet, sigma: f64, clip: f64, rng: &mut R) -> DvPointSet {
    let mut out = ps.clone();
    if sigma <= 0.0 {
        return out;
    }
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    for p in &mut out.coords {
        for v in p.iter_mut() {
            *v += normal.sample(rng).clamp(-clip, clip);
        }
    }
    out
}

/// Removes `round(fraction · N)` randomly chosen points, keeping at least one.
pub fn drop_points<R: Rng>(ps: &DvPointSet, fraction: f64, rng: &mut R) -> DvPointSet {
    let n = ps.len();
    let drop = ((fraction.clamp(0.0, 1.0) * n as f64).round() as usize).min(n.saturating_sub(1));
    if drop == 0 {
        return ps.clone();
    }
    let removed = rand::seq::index::sample(rng, n, drop);
    let mut keep = vec![true; n];
    for i in removed.iter() {
        keep[i] = false;
    }
    let mut coords = Vec::with_capacity(n - drop);
    let mut motion = Vec::with_capacity((n - drop) * ps.channels);
    for i in (0..n).filter(|&i| keep[i]) {
        coords.push(ps.coords[i]);
        motion.extend_from_slice(ps.motion_of(i));
    }
    let mut out = DvPointSet::new(coords, motion, ps.channels).expect("shape kept");
    out.meta = ps.meta;
    out
}

/// Rotation, jitter and point dropout with ranges drawn from `seed`.
pub fn augment(ps: &DvPointSet, ranges: &AugmentRanges, seed: u64) -> DvPointSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = AugmentDraw::sample(ranges, &mut rng);
    apply_draw(ps, &draw, ranges, &mut rng)
}

fn apply_draw<R: Rng>(ps: &DvPointSet, draw: &AugmentDraw, ranges: &AugmentRanges, rng: &mut R) -> DvPointSet {
    if ps.is_empty() {
        return ps.clone();
    }
    let rotated = rotate(ps, draw.rot_y, draw.rot_x);
    let jittered = jitter(&rotated, ranges.jitter_sigma, ranges.jitter_clip, rng);
    drop_points(&jittered, draw.dropout, rng)
}

fn augment_inputs<R: Rng>(inputs: &StreamInputs, ranges: &AugmentRanges, rng: &mut R) -> StreamInputs {
    let draw = AugmentDraw::sample(ranges, rng);
    StreamInputs {
        motion: inputs.motion.as_ref().map(|m| apply_draw(m, &draw, ranges, rng)),
        appearance: inputs
            .appearance
            .iter()
            .map(|a| apply_draw(a, &draw, ranges, rng))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub seed: u64,
    pub augment: AugmentRanges,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            lr: 0.001,
            lr_decay: 0.5,
            decay_every: 10,
            epochs: 70,
            seed: 0,
            augment: AugmentRanges::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0
            || !(self.lr > 0.0)
            || !(self.lr_decay > 0.0)
            || self.decay_every == 0
            || self.epochs == 0
        {
            return Err(Error::InvalidArgument(format!("invalid training config {self:?}")));
        }
        Ok(())
    }

    /// Learning rate used during (0-based) `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

impl EpochMetrics {
    /// `epoch,loss,accuracy`
    pub fn to_line(&self) -> String {
        format!("{},{:.6},{:.6}", self.epoch, self.loss, self.accuracy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub inputs: StreamInputs,
    pub label: usize,
}

pub struct Adam<F> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(model: &MultiStreamModel<F>) -> Self {
        let zeros: Vec<Vec<F>> = model
            .tensors()
            .iter()
            .map(|(_, _, t)| vec![F::zero(); t.len()])
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, model: &mut MultiStreamModel<F>, grads: &MultiStreamModel<F>, lr: f64) {
        self.step += 1;
        let b1: F = cast(self.beta1);
        let b2: F = cast(self.beta2);
        let c1: F = cast(1.0 - self.beta1.powi(self.step));
        let c2: F = cast(1.0 - self.beta2.powi(self.step));
        let lr: F = cast(lr);
        let eps: F = cast(self.eps);
        let grads = grads.tensors();
        for (((p, (_, _, g)), m), v) in model
            .tensors_mut()
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (F::one() - b1) * g[i];
                v[i] = b2 * v[i] + (F::one() - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] = p[i] - lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

fn sample_seed(base: u64, epoch: usize, index: usize) -> u64 {
    base ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

struct SampleResult<F> {
    loss: f64,
    correct: bool,
    grads: MultiStreamModel<F>,
}

fn run_sample<F: Scalar>(
    model: &MultiStreamModel<F>,
    sample: &Sample,
    cfg: &TrainConfig,
    seed: u64,
    scale: F,
) -> Result<SampleResult<F>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = augment_inputs(&sample.inputs, &cfg.augment, &mut rng);
    let prepared = model.prepare(&inputs, rng.random())?;
    let (logits, cache) = model.forward_prepared(&prepared, Some(&mut rng))?;
    let (loss, dlogits) = cross_entropy(&logits, sample.label);
    let mut grads = model.zeros_like();
    model.backward(&cache, &dlogits.mapv(|v| v * scale), &mut grads);
    Ok(SampleResult {
        loss: loss.to_f64().unwrap_or(f64::NAN),
        correct: argmax(&logits) == sample.label,
        grads,
    })
}

/// Mini-batch Adam training. Per-sample passes within a batch run in
/// parallel; gradients are summed in sample order so results do not depend
/// on the thread count.
pub fn train<F: Scalar>(
    model: &mut MultiStreamModel<F>,
    data: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    if let Some(bad) = data.iter().find(|s| s.label >= model.n_classes()) {
        return Err(Error::InvalidArgument(format!(
            "label {} outside {} classes",
            bad.label,
            model.n_classes()
        )));
    }
    let mut adam = Adam::new(model);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut shuffle_rng);
        let lr = cfg.lr_at(epoch);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let scale: F = cast(1.0 / batch.len() as f64);
            let results: Vec<Result<SampleResult<F>>> = batch
                .par_iter()
                .map(|&i| run_sample(model, &data[i], cfg, sample_seed(cfg.seed, epoch, i), scale))
                .collect();
            let mut grads = model.zeros_like();
            for r in results {
                let r = r?;
                loss_sum += r.loss;
                correct += usize::from(r.correct);
                grads.add_scaled(&r.grads, F::one());
            }
            if !grads.all_finite() {
                return Err(Error::InvalidArgument(format!("non-finite gradient in epoch {epoch}")));
            }
            adam.step(model, &grads, lr);
        }
        let metrics = EpochMetrics {
            epoch,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        };
        if !metrics.loss.is_finite() || !model.all_finite() {
            return Err(Error::InvalidArgument(format!("non-finite values in epoch {epoch}")));
        }
        on_epoch(&metrics);
        history.push(metrics);
    }
    Ok(history)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<usize>,
}

pub fn evaluate<F: Scalar>(model: &MultiStreamModel<F>, data: &[Sample]) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let c = model.n_classes();
    let predictions = data
        .par_iter()
        .map(|s| model.predict(&s.inputs))
        .collect::<Result<Vec<_>>>()?;
    let mut confusion = vec![vec![0usize; c]; c];
    let mut correct = 0;
    for (s, &p) in data.iter().zip(&predictions) {
        if s.label >= c {
            return Err(Error::InvalidArgument(format!("label {} outside {c} classes", s.label)));
        }
        confusion[s.label][p] += 1;
        correct += usize::from(s.label == p);
    }
    Ok(EvalReport {
        accuracy: correct as f64 / data.len() as f64,
        confusion,
        predictions,
    })
}

/// Prepares a batch without augmentation for exact loss evaluation.
pub fn prepare_batch<F: Scalar>(
    model: &MultiStreamModel<F>,
    data: &[Sample],
) -> Result<Vec<(PreparedInputs<F>, usize)>> {
    data.iter()
        .map(|s| Ok((model.prepare(&s.inputs, 0)?, s.label)))
        .collect()
}
