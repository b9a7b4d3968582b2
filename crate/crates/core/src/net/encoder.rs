//! Hierarchical set-abstraction encoder for one input stream.

use ndarray::{Array1, Array2};
use rand::Rng;

use super::layers::{cast, Mlp, MlpCache, Scalar};
use crate::error::{Error, Result};
use crate::geom::{farthest_point_sample, group_indices, GroupSpec, Point3};
use crate::pointset::DvPointSet;

#[derive(Debug, Clone, PartialEq)]
pub struct SetAbstractionLevel<F> {
    pub group: GroupSpec,
    pub mlp: Mlp<F>,
}

#[derive(Debug, Clone)]
pub struct LevelCache<F> {
    sources: Vec<Vec<Option<usize>>>,
    mlp: MlpCache<F>,
    /// Winning row (within the whole grouped matrix) per centroid and channel.
    argmax: Array2<usize>,
    input_points: usize,
    input_channels: usize,
}

impl<F: Scalar> SetAbstractionLevel<F> {
    pub fn zeros_like(&self) -> Self {
        Self {
            group: self.group,
            mlp: self.mlp.zeros_like(),
        }
    }

    /// Sample centroids, group neighbours, run the shared MLP on every row and
    /// max-pool each group.
    pub fn forward(&self, coords: &[Point3], feats: &Array2<F>) -> Result<(Vec<Point3>, Array2<F>, LevelCache<F>)> {
        let n = coords.len();
        let c = feats.ncols();
        let k = self.group.max_neighbors;
        let centroids = farthest_point_sample(coords, self.group.n_centroids.min(n), 0)?;
        let centers: Vec<Point3> = centroids.iter().map(|&i| coords[i]).collect();
        let sources = group_indices(coords, &centers, &self.group);

        let rows = centers.len() * k;
        let mut x = Array2::<F>::zeros((rows, 3 + c));
        for (g, (center, srcs)) in centers.iter().zip(&sources).enumerate() {
            for (j, src) in srcs.iter().enumerate() {
                let Some(i) = *src else { continue };
                let mut row = x.row_mut(g * k + j);
                for a in 0..3 {
                    row[a] = cast(coords[i][a] - center[a]);
                }
                for ch in 0..c {
                    row[3 + ch] = feats[[i, ch]];
                }
            }
        }
        let (y, mlp_cache) = self.mlp.forward_cached::<rand_chacha::ChaCha8Rng>(x, None);
        let width = y.ncols();
        let mut pooled = Array2::<F>::zeros((centers.len(), width));
        let mut argmax = Array2::<usize>::zeros((centers.len(), width));
        for g in 0..centers.len() {
            for ch in 0..width {
                let mut best = g * k;
                for r in g * k + 1..(g + 1) * k {
                    if y[[r, ch]] > y[[best, ch]] {
                        best = r;
                    }
                }
                pooled[[g, ch]] = y[[best, ch]];
                argmax[[g, ch]] = best;
            }
        }
        Ok((
            centers,
            pooled,
            LevelCache {
                sources,
                mlp: mlp_cache,
                argmax,
                input_points: n,
                input_channels: c,
            },
        ))
    }

    /// Returns the gradient with respect to the input features.
    pub fn backward(&self, cache: &LevelCache<F>, dpooled: &Array2<F>, grads: &mut Self) -> Array2<F> {
        let k = self.group.max_neighbors;
        let rows = cache.sources.len() * k;
        let mut dy = Array2::<F>::zeros((rows, dpooled.ncols()));
        for ((g, ch), &r) in cache.argmax.indexed_iter() {
            dy[[r, ch]] += dpooled[[g, ch]];
        }
        let dx = self.mlp.backward(&cache.mlp, dy, &mut grads.mlp);
        let c = cache.input_channels;
        let mut dfeats = Array2::<F>::zeros((cache.input_points, c));
        if c > 0 {
            for (g, srcs) in cache.sources.iter().enumerate() {
                for (j, src) in srcs.iter().enumerate() {
                    let Some(i) = *src else { continue };
                    for ch in 0..c {
                        dfeats[[i, ch]] += dx[[g * k + j, 3 + ch]];
                    }
                }
            }
        }
        dfeats
    }
}

/// Two set-abstraction levels followed by a global MLP and max pool.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<F> {
    pub sa1: SetAbstractionLevel<F>,
    pub sa2: SetAbstractionLevel<F>,
    pub global: Mlp<F>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache<F> {
    sa1: LevelCache<F>,
    sa2: LevelCache<F>,
    global: MlpCache<F>,
    global_argmax: Vec<usize>,
    global_rows: usize,
}

/// Layer sizes of one encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderShape {
    pub sa1: GroupSpec,
    pub sa1_widths: Vec<usize>,
    pub sa2: GroupSpec,
    pub sa2_widths: Vec<usize>,
    pub global_widths: Vec<usize>,
}

impl EncoderShape {
    pub fn embedding_width(&self) -> usize {
        *self.global_widths.last().expect("global widths")
    }
}

impl<F: Scalar> Encoder<F> {
    pub fn init<R: Rng>(shape: &EncoderShape, in_channels: usize, rng: &mut R) -> Self {
        let sa1 = SetAbstractionLevel {
            group: shape.sa1,
            mlp: Mlp::init(3 + in_channels, &shape.sa1_widths, true, rng),
        };
        let w1 = sa1.mlp.output_width();
        let sa2 = SetAbstractionLevel {
            group: shape.sa2,
            mlp: Mlp::init(3 + w1, &shape.sa2_widths, true, rng),
        };
        let w2 = sa2.mlp.output_width();
        let global = Mlp::init(3 + w2, &shape.global_widths, true, rng);
        Self { sa1, sa2, global }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            sa1: self.sa1.zeros_like(),
            sa2: self.sa2.zeros_like(),
            global: self.global.zeros_like(),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.sa1.mlp.input_width() - 3
    }

    pub fn embedding_width(&self) -> usize {
        self.global.output_width()
    }

    pub fn forward(&self, coords: &[Point3], feats: &Array2<F>) -> Result<(Array1<F>, EncoderCache<F>)> {
        if coords.is_empty() {
            return Err(Error::EmptyRegion);
        }
        if feats.ncols() != self.in_channels() || feats.nrows() != coords.len() {
            return Err(Error::InvalidArgument(format!(
                "encoder expects {} channels, got {}x{}",
                self.in_channels(),
                feats.nrows(),
                feats.ncols()
            )));
        }
        let (c1, f1, sa1) = self.sa1.forward(coords, feats)?;
        let (c2, f2, sa2) = self.sa2.forward(&c1, &f1)?;
        let rows = c2.len();
        let mut x = Array2::<F>::zeros((rows, 3 + f2.ncols()));
        for (r, p) in c2.iter().enumerate() {
            for a in 0..3 {
                x[[r, a]] = cast(p[a]);
            }
            for ch in 0..f2.ncols() {
                x[[r, 3 + ch]] = f2[[r, ch]];
            }
        }
        let (y, global) = self.global.forward_cached::<rand_chacha::ChaCha8Rng>(x, None);
        let width = y.ncols();
        let mut emb = Array1::<F>::zeros(width);
        let mut global_argmax = vec![0; width];
        for ch in 0..width {
            let mut best = 0;
            for r in 1..rows {
                if y[[r, ch]] > y[[best, ch]] {
                    best = r;
                }
            }
            emb[ch] = y[[best, ch]];
            global_argmax[ch] = best;
        }
        Ok((
            emb,
            EncoderCache {
                sa1,
                sa2,
                global,
                global_argmax,
                global_rows: rows,
            },
        ))
    }

    pub fn backward(&self, cache: &EncoderCache<F>, demb: &Array1<F>, grads: &mut Self) {
        let mut dy = Array2::<F>::zeros((cache.global_rows, demb.len()));
        for (ch, &r) in cache.global_argmax.iter().enumerate() {
            dy[[r, ch]] = demb[ch];
        }
        let dx = self.global.backward(&cache.global, dy, &mut grads.global);
        let df2 = dx.slice(ndarray::s![.., 3..]).to_owned();
        let df1 = self.sa2.backward(&cache.sa2, &df2, &mut grads.sa2);
        self.sa1.backward(&cache.sa1, &df1, &mut grads.sa1);
    }

    pub fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, Vec<usize>, &'a [F])>) {
        self.sa1.mlp.tensors(&format!("{prefix}.sa1"), out);
        self.sa2.mlp.tensors(&format!("{prefix}.sa2"), out);
        self.global.tensors(&format!("{prefix}.global"), out);
    }

    pub fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [F]>) {
        self.sa1.mlp.tensors_mut(out);
        self.sa2.mlp.tensors_mut(out);
        self.global.tensors_mut(out);
    }
}

/// FPS-resamples a point set to exactly `n_sample` points. Sets smaller than
/// `n_sample` are taken whole in FPS order and padded by cycling that order.
pub fn sample_points(ps: &DvPointSet, n_sample: usize, start: usize) -> Result<(Vec<Point3>, Vec<f64>)> {
    if ps.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let n = ps.len();
    let order = farthest_point_sample(&ps.coords, n_sample.min(n), start % n)?;
    let mut coords = Vec::with_capacity(n_sample);
    let mut motion = Vec::with_capacity(n_sample * ps.channels);
    for i in order.iter().cycle().take(n_sample) {
        coords.push(ps.coords[*i]);
        motion.extend_from_slice(ps.motion_of(*i));
    }
    Ok((coords, motion))
}

/// Embeds one normalized point set: FPS to `n_sample` points (starting at
/// index `seed mod N`), two set-abstraction levels, then the global MLP and
/// max pool.
pub fn encode_stream<F: Scalar>(ps: &DvPointSet, enc: &Encoder<F>, n_sample: usize, seed: u64) -> Result<Array1<F>> {
    if n_sample < enc.sa1.group.n_centroids {
        return Err(Error::InvalidArgument(format!(
            "{n_sample} sampled points cannot feed {} centroids",
            enc.sa1.group.n_centroids
        )));
    }
    let start = (seed % ps.len().max(1) as u64) as usize;
    let (coords, motion) = sample_points(ps, n_sample, start)?;
    let feats = Array2::from_shape_fn((coords.len(), ps.channels), |(r, c)| cast(motion[r * ps.channels + c]));
    Ok(enc.forward(&coords, &feats)?.0)
}
