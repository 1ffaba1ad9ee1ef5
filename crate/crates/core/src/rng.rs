//! Counter-keyed random streams.
//!
//! Every stream is a ChaCha8 generator whose 256-bit key is built from
//! `(seed, domain, index, sub_index)`. Streams for different samples or
//! ensemble members never depend on the order in which they are consumed.

use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::{Latent, Provenance, Shape};

/// Separates the streams used by different subsystems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Carrier = 1,
    Scene = 2,
    Timestep = 3,
    Init = 4,
    Shuffle = 5,
    Batch = 6,
    Codec = 7,
}

pub fn keyed_rng(seed: u64, domain: Domain, index: u64, sub_index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    key[24..32].copy_from_slice(&sub_index.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Stream used for the Gaussian carrier of `(sample, ensemble member)`.
pub fn carrier_rng(seed: u64, sample: u64, member: u64) -> ChaCha8Rng {
    keyed_rng(seed, Domain::Carrier, sample, member)
}

pub fn gaussian_latent<R: Rng + ?Sized>(rng: &mut R, shape: Shape) -> Latent {
    let data = (0..shape.len())
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Latent::from_vec(shape, Provenance::Noise, data).expect("length matches shape")
}
