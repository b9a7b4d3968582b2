//! Multi-stream classifier: one motion encoder, one appearance encoder shared
//! by every appearance stream, and a fully-connected head over the
//! concatenated embeddings.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::encoder::{sample_points, Encoder, EncoderCache, EncoderShape};
use super::layers::{cast, Dropout, Mlp, MlpCache, Scalar};
use crate::error::{Error, Result};
use crate::geom::{GroupSpec, Point3};
use crate::pointset::DvPointSet;

/// Network hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Arch {
    pub n_classes: usize,
    /// Motion channels per motion-stream point (0 = geometry only).
    pub motion_channels: usize,
    pub use_motion: bool,
    /// Number of appearance streams sharing one encoder (0 = none).
    pub appearance_streams: usize,
    /// Points FPS-sampled per stream.
    pub n_sample: usize,
    pub encoder: EncoderShape,
    /// Hidden widths of the fusion head; the class layer is appended.
    pub head_widths: Vec<usize>,
    pub dropout: f64,
}

fn group(n: usize, r: f64, k: usize) -> GroupSpec {
    GroupSpec {
        n_centroids: n,
        radius: r,
        max_neighbors: k,
    }
}

impl Arch {
    /// SA1 512/0.1/32 [64,64,128], SA2 128/0.2/64 [128,128,256], global
    /// [256,512,1024], head [512,256], 2048 points.
    pub fn full(n_classes: usize, motion_channels: usize, appearance_streams: usize) -> Self {
        Self {
            n_classes,
            motion_channels,
            use_motion: true,
            appearance_streams,
            n_sample: 2048,
            encoder: EncoderShape {
                sa1: group(512, 0.1, 32),
                sa1_widths: vec![64, 64, 128],
                sa2: group(128, 0.2, 64),
                sa2_widths: vec![128, 128, 256],
                global_widths: vec![256, 512, 1024],
            },
            head_widths: vec![512, 256],
            dropout: 0.4,
        }
    }

    /// The full configuration with every width and count divided by four.
    pub fn desk(n_classes: usize, motion_channels: usize, appearance_streams: usize) -> Self {
        Self {
            n_sample: 512,
            encoder: EncoderShape {
                sa1: group(128, 0.1, 8),
                sa1_widths: vec![16, 16, 32],
                sa2: group(32, 0.2, 16),
                sa2_widths: vec![32, 32, 64],
                global_widths: vec![64, 128, 256],
            },
            head_widths: vec![128, 64],
            ..Self::full(n_classes, motion_channels, appearance_streams)
        }
    }

    /// Small enough for exhaustive finite-difference checks.
    pub fn tiny(n_classes: usize, motion_channels: usize, appearance_streams: usize) -> Self {
        Self {
            n_classes,
            motion_channels,
            use_motion: true,
            appearance_streams,
            n_sample: 16,
            encoder: EncoderShape {
                sa1: group(8, 0.3, 4),
                sa1_widths: vec![8, 8],
                sa2: group(4, 0.6, 4),
                sa2_widths: vec![8, 8],
                global_widths: vec![8, 8],
            },
            head_widths: vec![8],
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        let widths_ok = [&e.sa1_widths, &e.sa2_widths, &e.global_widths]
            .iter()
            .all(|w| !w.is_empty() && w.iter().all(|&x| x >= 1));
        if self.n_classes < 2
            || !widths_ok
            || self.head_widths.contains(&0)
            || (!self.use_motion && self.appearance_streams == 0)
            || self.n_sample < e.sa1.n_centroids
            || !(0.0..1.0).contains(&self.dropout)
        {
            return Err(Error::InvalidArgument(format!("invalid architecture {self:?}")));
        }
        for g in [e.sa1, e.sa2] {
            GroupSpec::new(g.n_centroids, g.radius, g.max_neighbors)?;
        }
        Ok(())
    }

    pub fn stream_count(&self) -> usize {
        usize::from(self.use_motion) + self.appearance_streams
    }

    pub fn head_input_width(&self) -> usize {
        self.stream_count() * self.encoder.embedding_width()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiStreamModel<F> {
    pub arch: Arch,
    pub motion: Option<Encoder<F>>,
    /// Shared by all appearance streams.
    pub appearance: Option<Encoder<F>>,
    pub head: Mlp<F>,
}

/// Normalized inputs of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamInputs {
    pub motion: Option<DvPointSet>,
    pub appearance: Vec<DvPointSet>,
}

/// Inputs after FPS resampling, ready for the encoders.
#[derive(Debug, Clone)]
pub struct PreparedInputs<F> {
    motion: Option<(Vec<Point3>, Array2<F>)>,
    appearance: Vec<(Vec<Point3>, Array2<F>)>,
}

pub struct ForwardCache<F> {
    motion: Option<EncoderCache<F>>,
    appearance: Vec<EncoderCache<F>>,
    head: MlpCache<F>,
    embedding_width: usize,
}

#[derive(Debug, Clone)]
pub struct Output<F> {
    pub logits: Array1<F>,
    pub probs: Array1<F>,
}

pub fn softmax<F: Scalar>(logits: &Array1<F>) -> Array1<F> {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let exp = logits.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    exp / sum
}

/// Cross-entropy of one sample; its logit gradient is `softmax − one_hot`.
pub fn cross_entropy<F: Scalar>(logits: &Array1<F>, label: usize) -> (F, Array1<F>) {
    let probs = softmax(logits);
    let loss = -(probs[label].max(F::min_positive_value())).ln();
    let mut grad = probs;
    grad[label] = grad[label] - F::one();
    (loss, grad)
}

impl<F: Scalar> MultiStreamModel<F> {
    pub fn init(arch: Arch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let motion = arch
            .use_motion
            .then(|| Encoder::init(&arch.encoder, arch.motion_channels, &mut rng));
        let appearance = (arch.appearance_streams > 0).then(|| Encoder::init(&arch.encoder, 0, &mut rng));
        let mut widths = arch.head_widths.clone();
        widths.push(arch.n_classes);
        let head = Mlp::init(arch.head_input_width(), &widths, false, &mut rng);
        Ok(Self {
            arch,
            motion,
            appearance,
            head,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            arch: self.arch.clone(),
            motion: self.motion.as_ref().map(Encoder::zeros_like),
            appearance: self.appearance.as_ref().map(Encoder::zeros_like),
            head: self.head.zeros_like(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.arch.n_classes
    }

    fn check_inputs(&self, inputs: &StreamInputs) -> Result<()> {
        match (&inputs.motion, self.arch.use_motion) {
            (Some(m), true) if m.channels == self.arch.motion_channels => {}
            (Some(m), true) => {
                return Err(Error::InvalidArgument(format!(
                    "motion stream has {} channels, model expects {}",
                    m.channels, self.arch.motion_channels
                )))
            }
            (None, false) => {}
            (_, true) => return Err(Error::InvalidArgument("missing motion stream".into())),
            (Some(_), false) => return Err(Error::InvalidArgument("model has no motion stream".into())),
        }
        if inputs.appearance.len() != self.arch.appearance_streams {
            return Err(Error::InvalidArgument(format!(
                "stream count mismatch: {} appearance streams, model expects {}",
                inputs.appearance.len(),
                self.arch.appearance_streams
            )));
        }
        Ok(())
    }

    /// FPS-resamples each stream; stream `s` starts FPS at `seed + s`.
    pub fn prepare(&self, inputs: &StreamInputs, seed: u64) -> Result<PreparedInputs<F>> {
        self.check_inputs(inputs)?;
        let n = self.arch.n_sample;
        let one = |ps: &DvPointSet, s: u64| -> Result<(Vec<Point3>, Array2<F>)> {
            let placeholder;
            let ps = if ps.is_empty() {
                placeholder = empty_placeholder(ps.channels);
                &placeholder
            } else {
                ps
            };
            let start = (seed.wrapping_add(s) % ps.len().max(1) as u64) as usize;
            let (coords, motion) = sample_points(ps, n, start)?;
            let c = ps.channels;
            let feats = Array2::from_shape_fn((coords.len(), c), |(r, j)| cast(motion[r * c + j]));
            Ok((coords, feats))
        };
        let motion = match &inputs.motion {
            Some(ps) => Some(one(ps, 0)?),
            None => None,
        };
        let appearance = inputs
            .appearance
            .iter()
            .enumerate()
            .map(|(i, ps)| one(&ps.with_channels(0), i as u64 + 1))
            .collect::<Result<_>>()?;
        Ok(PreparedInputs { motion, appearance })
    }

    pub fn forward_prepared<R: Rng>(
        &self,
        prepared: &PreparedInputs<F>,
        dropout: Option<&mut R>,
    ) -> Result<(Array1<F>, ForwardCache<F>)> {
        let width = self.arch.encoder.embedding_width();
        let mut concat = Vec::with_capacity(self.arch.head_input_width());
        let motion = match (&self.motion, &prepared.motion) {
            (Some(enc), Some((c, f))) => {
                let (emb, cache) = enc.forward(c, f)?;
                concat.extend(emb.iter().copied());
                Some(cache)
            }
            _ => None,
        };
        let mut appearance = Vec::with_capacity(prepared.appearance.len());
        if let Some(enc) = &self.appearance {
            for (c, f) in &prepared.appearance {
                let (emb, cache) = enc.forward(c, f)?;
                concat.extend(emb.iter().copied());
                appearance.push(cache);
            }
        }
        let x = Array2::from_shape_vec((1, concat.len()), concat).expect("head input");
        let drop = dropout.map(|rng| Dropout {
            rate: self.arch.dropout,
            rng,
        });
        let (y, head) = self.head.forward_cached(x, drop);
        Ok((
            y.row(0).to_owned(),
            ForwardCache {
                motion,
                appearance,
                head,
                embedding_width: width,
            },
        ))
    }

    /// Per-stream embeddings in head-input order.
    pub fn embeddings(&self, prepared: &PreparedInputs<F>) -> Result<Vec<Array1<F>>> {
        let mut out = Vec::new();
        if let (Some(enc), Some((c, f))) = (&self.motion, &prepared.motion) {
            out.push(enc.forward(c, f)?.0);
        }
        if let Some(enc) = &self.appearance {
            for (c, f) in &prepared.appearance {
                out.push(enc.forward(c, f)?.0);
            }
        }
        Ok(out)
    }

    /// Inference: logits and class probabilities.
    pub fn forward(&self, inputs: &StreamInputs, seed: u64) -> Result<Output<F>> {
        let prepared = self.prepare(inputs, seed)?;
        let (logits, _) = self.forward_prepared::<ChaCha8Rng>(&prepared, None)?;
        let probs = softmax(&logits);
        Ok(Output { logits, probs })
    }

    pub fn predict(&self, inputs: &StreamInputs) -> Result<usize> {
        let out = self.forward(inputs, 0)?;
        Ok(argmax(&out.probs))
    }

    /// Accumulates parameter gradients for `∂L/∂logits = dlogits` into `grads`.
    pub fn backward(&self, cache: &ForwardCache<F>, dlogits: &Array1<F>, grads: &mut Self) {
        let dy = dlogits.clone().insert_axis(ndarray::Axis(0));
        let dx = self.head.backward(&cache.head, dy, &mut grads.head);
        let w = cache.embedding_width;
        let mut offset = 0;
        if let (Some(enc), Some(c), Some(g)) = (&self.motion, &cache.motion, grads.motion.as_mut()) {
            let d = dx.slice(ndarray::s![0, offset..offset + w]).to_owned();
            enc.backward(c, &d, g);
            offset += w;
        }
        if let (Some(enc), Some(g)) = (&self.appearance, grads.appearance.as_mut()) {
            for c in &cache.appearance {
                let d = dx.slice(ndarray::s![0, offset..offset + w]).to_owned();
                enc.backward(c, &d, g);
                offset += w;
            }
        }
    }

    /// Mean cross-entropy over a batch and its exact gradient (no dropout).
    pub fn loss_and_grad(&self, batch: &[(PreparedInputs<F>, usize)]) -> Result<(F, Self)> {
        let mut grads = self.zeros_like();
        let mut total = F::zero();
        let scale: F = cast(1.0 / batch.len().max(1) as f64);
        for (prepared, label) in batch {
            let (logits, cache) = self.forward_prepared::<ChaCha8Rng>(prepared, None)?;
            let (loss, dlogits) = cross_entropy(&logits, *label);
            total += loss;
            self.backward(&cache, &dlogits.mapv(|v| v * scale), &mut grads);
        }
        Ok((total * scale, grads))
    }

    pub fn loss(&self, batch: &[(PreparedInputs<F>, usize)]) -> Result<F> {
        let mut total = F::zero();
        for (prepared, label) in batch {
            let (logits, _) = self.forward_prepared::<ChaCha8Rng>(prepared, None)?;
            total += cross_entropy(&logits, *label).0;
        }
        Ok(total / cast(batch.len().max(1) as f64))
    }

    /// Named parameter tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[F])> {
        let mut out = Vec::new();
        if let Some(m) = &self.motion {
            m.tensors("motion", &mut out);
        }
        if let Some(a) = &self.appearance {
            a.tensors("appearance", &mut out);
        }
        self.head.tensors("head", &mut out);
        out
    }

    /// Mutable parameter slices in the same order as [`Self::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = Vec::new();
        if let Some(m) = self.motion.as_mut() {
            m.tensors_mut(&mut out);
        }
        if let Some(a) = self.appearance.as_mut() {
            a.tensors_mut(&mut out);
        }
        self.head.tensors_mut(&mut out);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    /// `self += scale · other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Self, scale: F) {
        let src: Vec<Vec<F>> = other.tensors().into_iter().map(|(_, _, t)| t.to_vec()).collect();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            for (d, v) in dst.iter_mut().zip(s) {
                *d += scale * v;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<G: Scalar>(&self) -> MultiStreamModel<G> {
        let mut out = MultiStreamModel::<G>::init(self.arch.clone(), 0).expect("valid arch");
        let src: Vec<Vec<f64>> = self
            .tensors()
            .into_iter()
            .map(|(_, _, t)| t.iter().map(|v| v.to_f64().expect("finite")).collect())
            .collect();
        for (dst, s) in out.tensors_mut().into_iter().zip(src) {
            for (d, v) in dst.iter_mut().zip(s) {
                *d = cast(v);
            }
        }
        out
    }
}

/// A motion set with no moving voxels is fed as one origin point with zero
/// motion.
fn empty_placeholder(channels: usize) -> DvPointSet {
    DvPointSet::new(vec![[0.0; 3]], vec![0.0; channels], channels).expect("placeholder")
}

pub fn argmax<F: Scalar>(v: &Array1<F>) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use ndarray::array;

    pub(crate) fn blob(n: usize, channels: usize, seed: u64) -> DvPointSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords = (0..n)
            .map(|_| {
                [
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.3..0.3),
                ]
            })
            .collect();
        let motion = (0..n * channels).map(|_| rng.random_range(-1.0..1.0)).collect();
        DvPointSet::new(coords, motion, channels).unwrap()
    }

    pub(crate) fn inputs(arch: &Arch, seed: u64) -> StreamInputs {
        StreamInputs {
            motion: arch.use_motion.then(|| blob(40, arch.motion_channels, seed)),
            appearance: (0..arch.appearance_streams)
                .map(|i| blob(30, 0, seed * 31 + i as u64 + 1))
                .collect(),
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let arch = Arch::tiny(5, 3, 2);
        let model = MultiStreamModel::<f32>::init(arch.clone(), 0).unwrap();
        let out = model.forward(&inputs(&arch, 1), 0).unwrap();
        assert_eq!(out.logits.len(), 5);
        assert!((out.probs.sum() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_head_gives_uniform_probabilities() {
        let arch = Arch::tiny(4, 2, 1);
        let mut model = MultiStreamModel::<f64>::init(arch.clone(), 0).unwrap();
        model.head = model.head.zeros_like();
        let out = model.forward(&inputs(&arch, 2), 0).unwrap();
        for p in out.probs.iter() {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let l = array![0.3f64, -1.2, 2.5, 0.0];
        let a = softmax(&l);
        let b = softmax(&l.mapv(|v| v + 37.5));
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-6);
        }
        let big = softmax(&array![1000.0f32, 0.0]);
        assert!(big.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn logit_gradient_is_softmax_minus_one_hot() {
        let l = array![0.5f64, -0.25, 1.0];
        let (loss, g) = cross_entropy(&l, 2);
        let p = softmax(&l);
        assert!((loss + p[2].ln()).abs() < 1e-12);
        assert_eq!(g, array![p[0], p[1], p[2] - 1.0]);
    }

    #[test]
    fn stream_count_mismatch_is_rejected() {
        let arch = Arch::tiny(2, 2, 3);
        let model = MultiStreamModel::<f32>::init(arch.clone(), 0).unwrap();
        let mut bad = inputs(&arch, 0);
        bad.appearance.pop();
        assert!(model
            .forward(&bad, 0)
            .unwrap_err()
            .to_string()
            .contains("stream count mismatch"));
        let mut bad = inputs(&arch, 0);
        bad.motion = Some(blob(10, 1, 0));
        assert!(model.forward(&bad, 0).is_err());
        bad.motion = None;
        assert!(model.forward(&bad, 0).is_err());
    }

    #[test]
    fn head_input_is_sum_of_embeddings() {
        let arch = Arch::desk(8, 5, 3);
        assert_eq!(arch.head_input_width(), 4 * 256);
        let model = MultiStreamModel::<f32>::init(arch, 0).unwrap();
        assert_eq!(model.head.input_width(), 1024);
        assert_eq!(Arch::full(8, 5, 3).head_input_width(), 4 * 1024);
    }

    #[test]
    fn appearance_streams_share_weights() {
        let arch = Arch::tiny(3, 1, 3);
        let mut model = MultiStreamModel::<f64>::init(arch.clone(), 4).unwrap();
        let same = blob(25, 0, 8);
        let inp = StreamInputs {
            motion: Some(blob(25, 1, 9)),
            appearance: vec![same.clone(), same.clone(), same],
        };
        let prepared = model.prepare(&inp, 0).unwrap();
        // Identical inputs must see identical FPS starts for the check to be exact.
        let prepared = PreparedInputs {
            appearance: vec![prepared.appearance[0].clone(); 3],
            ..prepared
        };
        let before = model.embeddings(&prepared).unwrap();
        let enc = model.appearance.as_mut().unwrap();
        enc.global.layers[0].bias.mapv_inplace(|v| v + 0.3);
        enc.sa1.mlp.layers[0].weight[[0, 0]] += 0.5;
        let after = model.embeddings(&prepared).unwrap();
        assert_eq!(after.len(), 4);
        for s in 2..4 {
            assert_eq!(after[s], after[1]);
            assert_eq!(&after[s] - &before[s], &after[1] - &before[1]);
        }
        assert_ne!(after[1], before[1]);
        assert_eq!(after[0], before[0]);
    }

    #[test]
    fn empty_motion_set_uses_placeholder() {
        let arch = Arch::tiny(2, 2, 1);
        let model = MultiStreamModel::<f32>::init(arch.clone(), 0).unwrap();
        let inp = StreamInputs {
            motion: Some(DvPointSet::new(vec![], vec![], 2).unwrap()),
            appearance: vec![blob(20, 0, 1)],
        };
        assert!(model.forward(&inp, 0).unwrap().probs.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn invalid_architectures_are_rejected() {
        assert!(MultiStreamModel::<f32>::init(Arch::tiny(1, 1, 1), 0).is_err());
        let mut a = Arch::tiny(2, 1, 0);
        a.use_motion = false;
        assert!(MultiStreamModel::<f32>::init(a, 0).is_err());
        let mut a = Arch::tiny(2, 1, 1);
        a.encoder.sa1_widths = vec![];
        assert!(MultiStreamModel::<f32>::init(a, 0).is_err());
    }
}
