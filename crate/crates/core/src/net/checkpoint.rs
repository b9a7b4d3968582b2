//! `DV3M` checkpoints: magic, u32 version, u32 tensor count, then per tensor
//! u32 name length, name bytes, u32 rank, u32 dims and little-endian f32 data.

use std::collections::BTreeMap;
use std::path::Path;

use super::encoder::EncoderShape;
use super::layers::{cast, Scalar};
use super::model::{Arch, MultiStreamModel};
use crate::error::{Error, Result};
use crate::geom::GroupSpec;

const MAGIC: &[u8; 4] = b"DV3M";
const VERSION: u32 = 1;
const ARCH: &str = "arch";

type Tensor = (Vec<usize>, Vec<f32>);

fn arch_values(a: &Arch) -> Vec<f32> {
    let e = &a.encoder;
    let micro = |v: f64| (v * 1e6).round() as f32;
    vec![
        a.n_classes as f32,
        a.motion_channels as f32,
        f32::from(u8::from(a.use_motion)),
        a.appearance_streams as f32,
        a.n_sample as f32,
        e.sa1.n_centroids as f32,
        micro(e.sa1.radius),
        e.sa1.max_neighbors as f32,
        e.sa2.n_centroids as f32,
        micro(e.sa2.radius),
        e.sa2.max_neighbors as f32,
        micro(a.dropout),
    ]
}

pub fn encode_model<F: Scalar>(model: &MultiStreamModel<F>) -> Vec<u8> {
    let mut tensors: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
    let arch = arch_values(&model.arch);
    tensors.push((ARCH.into(), vec![arch.len()], arch));
    for (name, shape, data) in model.tensors() {
        let vals = data.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect();
        tensors.push((name, shape, vals));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, shape, data) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Truncated(format!("checkpoint {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

fn decode_tensors(bytes: &[u8]) -> Result<BTreeMap<String, Tensor>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic").ok() != Some(MAGIC.as_slice()) {
        return Err(Error::BadMagic { expected: "DV3M" });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = r.u32("tensor count")?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = String::from_utf8(r.take(len, "name")?.to_vec())
            .map_err(|_| Error::Parse("tensor name is not UTF-8".into()))?;
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32("dims")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(
            n.checked_mul(4).ok_or_else(|| Error::Truncated("tensor size".into()))?,
            "data",
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        out.insert(name, (shape, data));
    }
    if r.pos != bytes.len() {
        return Err(Error::Parse("trailing bytes after checkpoint".into()));
    }
    Ok(out)
}

/// Output widths of layers `prefix.0`, `prefix.1`, ...
fn widths(tensors: &BTreeMap<String, Tensor>, prefix: &str) -> Vec<usize> {
    (0..)
        .map_while(|i| tensors.get(&format!("{prefix}.{i}.weight")))
        .map(|(shape, _)| shape.first().copied().unwrap_or(0))
        .collect()
}

fn arch_from(tensors: &BTreeMap<String, Tensor>) -> Result<Arch> {
    let bad = || Error::Parse("malformed arch tensor".into());
    let (_, a) = tensors
        .get(ARCH)
        .ok_or_else(|| Error::Parse("missing arch tensor".into()))?;
    if a.len() != 12 || a.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(bad());
    }
    let u = |i: usize| a[i] as usize;
    let micro = |i: usize| f64::from(a[i]) / 1e6;
    let stream = if tensors.contains_key("motion.sa1.0.weight") {
        "motion"
    } else {
        "appearance"
    };
    let mut head = widths(tensors, "head");
    head.pop().ok_or_else(bad)?;
    let arch = Arch {
        n_classes: u(0),
        motion_channels: u(1),
        use_motion: a[2] != 0.0,
        appearance_streams: u(3),
        n_sample: u(4),
        encoder: EncoderShape {
            sa1: GroupSpec::new(u(5), micro(6), u(7))?,
            sa1_widths: widths(tensors, &format!("{stream}.sa1")),
            sa2: GroupSpec::new(u(8), micro(9), u(10))?,
            sa2_widths: widths(tensors, &format!("{stream}.sa2")),
            global_widths: widths(tensors, &format!("{stream}.global")),
        },
        head_widths: head,
        dropout: micro(11),
    };
    arch.validate()?;
    Ok(arch)
}

pub fn decode_model<F: Scalar>(bytes: &[u8]) -> Result<MultiStreamModel<F>> {
    let tensors = decode_tensors(bytes)?;
    let arch = arch_from(&tensors)?;
    let mut model = MultiStreamModel::<F>::init(arch, 0)?;
    let names: Vec<(String, Vec<usize>)> = model.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
    if names.len() + 1 != tensors.len() {
        return Err(Error::Parse(format!(
            "checkpoint has {} tensors, architecture needs {}",
            tensors.len() - 1,
            names.len()
        )));
    }
    for ((name, shape), dst) in names.into_iter().zip(model.tensors_mut()) {
        let (s, data) = tensors
            .get(&name)
            .ok_or_else(|| Error::Parse(format!("missing tensor {name}")))?;
        if *s != shape {
            return Err(Error::Parse(format!(
                "tensor {name} has shape {s:?}, expected {shape:?}"
            )));
        }
        for (d, v) in dst.iter_mut().zip(data) {
            *d = cast(f64::from(*v));
        }
    }
    Ok(model)
}

pub fn save_model<F: Scalar>(path: &Path, model: &MultiStreamModel<F>) -> Result<()> {
    std::fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model<F: Scalar>(path: &Path) -> Result<MultiStreamModel<F>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}
