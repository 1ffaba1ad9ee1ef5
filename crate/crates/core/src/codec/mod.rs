//! Patchwise linear codec standing in for a frozen image autoencoder.
//!
//! A codec cuts a `H x W x k` raster into non-overlapping `p x p` patches,
//! centers each flattened patch (`p*p*k` values, ordered row, column, channel)
//! and projects it onto `c` principal directions. Decoding applies the
//! transposed basis and adds the mean back.

mod normalize;

pub use normalize::{fill_invalid, normalize_target, percentile, TargetKind, TargetNormalization};

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample as sample_indices;

use crate::error::{Error, Result};
use crate::raster::write_bytes;
use crate::rng::{keyed_rng, Domain};
use crate::tensor::{ImageTensor, Latent, Provenance, Shape};

const MAGIC: &[u8; 4] = b"LCD1";

/// Upper bound on patches used to estimate the covariance; larger corpora are subsampled.
pub const MAX_FIT_PATCHES: usize = 250_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentCodec {
    patch: usize,
    latent_channels: usize,
    in_channels: usize,
    /// Mean patch vector, length `p*p*k`.
    mean: Vec<f64>,
    /// `c x (p*p*k)`, row-major.
    encode_basis: Vec<f64>,
    /// `(p*p*k) x c`, row-major.
    decode_basis: Vec<f64>,
    identity: bool,
    reconstruction_mse: f64,
}

impl LatentCodec {
    /// Pass-through codec: `p = 1`, `c = k`, identity bases and zero mean.
    pub fn identity(channels: usize) -> Self {
        let eye = identity_matrix(channels);
        Self {
            patch: 1,
            latent_channels: channels,
            in_channels: channels,
            mean: vec![0.0; channels],
            encode_basis: eye.clone(),
            decode_basis: eye,
            identity: true,
            reconstruction_mse: 0.0,
        }
    }

    /// `p = 1` codec averaging `in_channels` into one latent channel; decoding
    /// copies the latent value to every channel.
    pub fn channel_mean(in_channels: usize) -> Self {
        let w = 1.0 / in_channels as f64;
        Self {
            patch: 1,
            latent_channels: 1,
            in_channels,
            mean: vec![0.0; in_channels],
            encode_basis: vec![w; in_channels],
            decode_basis: vec![1.0; in_channels],
            identity: in_channels == 1,
            reconstruction_mse: f64::NAN,
        }
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn latent_channels(&self) -> usize {
        self.latent_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * self.in_channels
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn encode_basis(&self) -> &[f64] {
        &self.encode_basis
    }

    pub fn decode_basis(&self) -> &[f64] {
        &self.decode_basis
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    /// Mean squared per-element reconstruction error over the fitting patches.
    pub fn reconstruction_mse(&self) -> f64 {
        self.reconstruction_mse
    }

    pub fn latent_shape(&self, height: usize, width: usize) -> Result<Shape> {
        if height % self.patch != 0 || width % self.patch != 0 {
            return Err(Error::shape(
                format!("dimensions divisible by patch size {}", self.patch),
                format!("{height}x{width}"),
            ));
        }
        Ok(Shape::new(height / self.patch, width / self.patch, self.latent_channels))
    }

    pub fn encode(&self, map: &ImageTensor, provenance: Provenance) -> Result<Latent> {
        if map.channels() != self.in_channels {
            return Err(Error::shape(
                format!("{} channels", self.in_channels),
                format!("{} channels", map.channels()),
            ));
        }
        let shape = self.latent_shape(map.height(), map.width())?;
        if self.identity {
            return Latent::from_vec(shape, provenance, map.data().to_vec());
        }
        let d = self.patch_dim();
        let c = self.latent_channels;
        let mut out = Vec::with_capacity(shape.len());
        let mut buf = vec![0.0; d];
        for gy in 0..shape.height {
            for gx in 0..shape.width {
                gather_patch(map, self.patch, gy, gx, &mut buf);
                for (v, m) in buf.iter_mut().zip(&self.mean) {
                    *v -= m;
                }
                for row in self.encode_basis.chunks_exact(d).take(c) {
                    out.push(dot(row, &buf));
                }
            }
        }
        Latent::from_vec(shape, provenance, out)
    }

    pub fn decode(&self, z: &Latent) -> Result<ImageTensor> {
        if z.shape().channels != self.latent_channels {
            return Err(Error::shape(
                format!("{} latent channels", self.latent_channels),
                format!("{} latent channels", z.shape().channels),
            ));
        }
        let zs = z.shape();
        let out_shape = Shape::new(zs.height * self.patch, zs.width * self.patch, self.in_channels);
        if self.identity {
            return ImageTensor::from_vec(out_shape, z.data().to_vec());
        }
        let d = self.patch_dim();
        let c = self.latent_channels;
        let mut out = ImageTensor::zeros(out_shape);
        let mut buf = vec![0.0; d];
        for gy in 0..zs.height {
            for gx in 0..zs.width {
                let start = (gy * zs.width + gx) * c;
                let code = &z.data()[start..start + c];
                for ((v, row), m) in buf.iter_mut().zip(self.decode_basis.chunks_exact(c)).zip(&self.mean) {
                    *v = dot(row, code) + m;
                }
                scatter_patch(&mut out, self.patch, gy, gx, &buf);
            }
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for v in [self.patch, self.latent_channels, self.in_channels] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for block in [&self.mean, &self.encode_basis, &self.decode_basis] {
            for v in block.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(Error::format(path, "missing LCD1 header"));
        }
        let read_u32 = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (patch, c, k) = (read_u32(0), read_u32(1), read_u32(2));
        let d = patch * patch * k;
        if patch == 0 || c == 0 || k == 0 || c > d {
            return Err(Error::format(path, format!("invalid codec dimensions p={patch} c={c} k={k}")));
        }
        let expected = d + 2 * c * d;
        let body = &bytes[16..];
        if body.len() != 8 * expected {
            return Err(Error::format(path, "codec body length mismatch"));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let mean = values[..d].to_vec();
        let encode_basis = values[d..d + c * d].to_vec();
        let decode_basis = values[d + c * d..].to_vec();
        let identity = patch == 1
            && c == k
            && mean.iter().all(|&m| m == 0.0)
            && encode_basis == identity_matrix(k)
            && decode_basis == identity_matrix(k);
        Ok(Self {
            patch,
            latent_channels: c,
            in_channels: k,
            mean,
            encode_basis,
            decode_basis,
            identity,
            reconstruction_mse: f64::NAN,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

/// Fits a PCA patch codec on every patch of `samples`.
pub fn fit_codec(samples: &[ImageTensor], patch: usize, channels: usize, seed: u64) -> Result<LatentCodec> {
    fit_codec_masked(samples, None, patch, channels, seed)
}

/// Like [`fit_codec`], skipping patches that contain an invalid pixel.
///
/// `valid[i]` is a per-pixel validity raster for `samples[i]`.
pub fn fit_codec_masked(
    samples: &[ImageTensor],
    valid: Option<&[Vec<bool>]>,
    patch: usize,
    channels: usize,
    seed: u64,
) -> Result<LatentCodec> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InsufficientData("no samples to fit a codec".into()))?;
    if patch == 0 || channels == 0 {
        return Err(Error::Config("patch size and latent channels must be positive".into()));
    }
    let k = first.channels();
    let d = patch * patch * k;
    if channels > d {
        return Err(Error::Config(format!(
            "latent channels {channels} exceed patch dimension {d}"
        )));
    }
    if let Some(masks) = valid {
        if masks.len() != samples.len() {
            return Err(Error::shape(format!("{} masks", samples.len()), masks.len()));
        }
    }

    let mut refs: Vec<(usize, usize, usize)> = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        if s.channels() != k {
            return Err(Error::shape(format!("{k} channels"), s.channels()));
        }
        if s.height() % patch != 0 || s.width() % patch != 0 {
            return Err(Error::shape(
                format!("dimensions divisible by {patch}"),
                format!("{}x{}", s.height(), s.width()),
            ));
        }
        let mask = valid.map(|m| &m[i]);
        if let Some(m) = mask {
            if m.len() != s.height() * s.width() {
                return Err(Error::shape(s.height() * s.width(), m.len()));
            }
        }
        for gy in 0..s.height() / patch {
            for gx in 0..s.width() / patch {
                let ok = mask.map_or(true, |m| patch_all_valid(m, s.width(), patch, gy, gx));
                if ok {
                    refs.push((i, gy, gx));
                }
            }
        }
    }

    if channels == d {
        // no compression requested: the identity basis is the lossless optimum
        let eye = identity_matrix(d);
        return Ok(LatentCodec {
            patch,
            latent_channels: channels,
            in_channels: k,
            mean: vec![0.0; d],
            encode_basis: eye.clone(),
            decode_basis: eye,
            identity: patch == 1,
            reconstruction_mse: 0.0,
        });
    }

    if refs.len() <= channels {
        return Err(Error::InsufficientData(format!(
            "{} usable patches for {channels} latent channels",
            refs.len()
        )));
    }
    if refs.len() > MAX_FIT_PATCHES {
        let mut rng = keyed_rng(seed, Domain::Codec, 0, 0);
        let mut picked: Vec<usize> = sample_indices(&mut rng, refs.len(), MAX_FIT_PATCHES).into_vec();
        picked.sort_unstable();
        refs = picked.into_iter().map(|i| refs[i]).collect();
    }

    let n = refs.len() as f64;
    let mut buf = vec![0.0; d];
    let mut mean = vec![0.0; d];
    for &(i, gy, gx) in &refs {
        gather_patch(&samples[i], patch, gy, gx, &mut buf);
        for (m, v) in mean.iter_mut().zip(&buf) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }

    let mut cov = vec![0.0; d * d];
    for &(i, gy, gx) in &refs {
        gather_patch(&samples[i], patch, gy, gx, &mut buf);
        for (v, m) in buf.iter_mut().zip(&mean) {
            *v -= m;
        }
        for a in 0..d {
            let va = buf[a];
            let row = &mut cov[a * d..a * d + d];
            for b in a..d {
                row[b] += va * buf[b];
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[a * d + b] / n;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }

    let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, &cov));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let lead = eig.eigenvalues[order[0]];
    let last_kept = eig.eigenvalues[order[channels - 1]];
    if !(lead > 0.0) || last_kept <= 1e-12 * lead {
        return Err(Error::InsufficientData(format!(
            "patch covariance has rank below {channels} (eigenvalue {last_kept:e} vs leading {lead:e})"
        )));
    }

    let mut encode_basis = Vec::with_capacity(channels * d);
    for &j in order.iter().take(channels) {
        let mut dir: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
        canonical_sign(&mut dir);
        encode_basis.extend(dir);
    }
    let mut decode_basis = vec![0.0; d * channels];
    for r in 0..channels {
        for col in 0..d {
            decode_basis[col * channels + r] = encode_basis[r * d + col];
        }
    }
    let discarded: f64 = order[channels..]
        .iter()
        .map(|&j| eig.eigenvalues[j].max(0.0))
        .sum();

    Ok(LatentCodec {
        patch,
        latent_channels: channels,
        in_channels: k,
        mean,
        encode_basis,
        decode_basis,
        identity: false,
        reconstruction_mse: discarded / d as f64,
    })
}

/// Flips `dir` so its first clearly nonzero component is positive.
fn canonical_sign(dir: &mut [f64]) {
    let scale = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if let Some(&first) = dir.iter().find(|v| v.abs() > 1e-9 * scale) {
        if first < 0.0 {
            dir.iter_mut().for_each(|v| *v = -*v);
        }
    }
}

fn patch_all_valid(mask: &[bool], width: usize, patch: usize, gy: usize, gx: usize) -> bool {
    (0..patch).all(|dy| {
        let row = (gy * patch + dy) * width + gx * patch;
        mask[row..row + patch].iter().all(|&v| v)
    })
}

/// Anything that maps a latent back to map space.
pub trait MapDecoder: Send + Sync {
    fn decode_map(&self, z: &Latent) -> Result<ImageTensor>;
}

impl MapDecoder for LatentCodec {
    fn decode_map(&self, z: &Latent) -> Result<ImageTensor> {
        self.decode(z)
    }
}

pub(crate) fn gather_patch(map: &ImageTensor, patch: usize, gy: usize, gx: usize, out: &mut [f64]) {
    let k = map.channels();
    let w = map.width();
    let data = map.data();
    for dy in 0..patch {
        let src = ((gy * patch + dy) * w + gx * patch) * k;
        let dst = dy * patch * k;
        out[dst..dst + patch * k].copy_from_slice(&data[src..src + patch * k]);
    }
}

pub(crate) fn scatter_patch(map: &mut ImageTensor, patch: usize, gy: usize, gx: usize, values: &[f64]) {
    let k = map.channels();
    let w = map.width();
    let data = map.data_mut();
    for dy in 0..patch {
        let dst = ((gy * patch + dy) * w + gx * patch) * k;
        let src = dy * patch * k;
        data[dst..dst + patch * k].copy_from_slice(&values[src..src + patch * k]);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn identity_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}
