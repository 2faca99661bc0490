//! Counter-based Wiener increments.
//!
//! Every increment is a pure function of `(master_seed, stream, fine_step)`: the
//! stream selects a ChaCha8 key and stream number, the fine step selects the
//! word position. Two 64-bit words feed a Box–Muller transform
//! `z = sqrt(-2 ln u1) · cos(2π u2)` with `u1 ∈ (0, 1]`, `u2 ∈ [0, 1)` built
//! from the top 53 bits. The sine branch is discarded.
//!
//! Increments at `Δt = 2^m · finest_dt` are sums of `2^m` consecutive fine
//! increments, so runs at different time steps share one Brownian path.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};

const DOMAIN_MEASUREMENT: u64 = 0x6d65_6173_7572_6521;
const DOMAIN_DECOHERENCE: u64 = 0x6465_636f_6865_7265;
/// Words of ChaCha output consumed per fine step.
const WORDS_PER_DRAW: u128 = 4;
/// Decoherence stream number = `member << CHANNEL_BITS | channel`.
const CHANNEL_BITS: u32 = 16;

/// Identity of one noise source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamId {
    /// Shared measurement noise `dW_j`.
    Measurement(usize),
    /// Per-member decoherence (or Hamiltonian-noise) increment `dV_{n,i}`.
    Decoherence { member: usize, channel: usize },
}

impl std::fmt::Display for StreamId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StreamId::Measurement(j) => write!(f, "dW[{j}]"),
            StreamId::Decoherence { member, channel } => write!(f, "dV[{member},{channel}]"),
        }
    }
}

/// A Wiener increment with variance equal to its time step.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct WienerIncrement(pub f64);

impl WienerIncrement {
    pub fn value(self) -> f64 {
        self.0
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn derive_key(seed: u64, domain: u64, replicate: u64) -> [u8; 32] {
    let mut state = seed ^ domain.rotate_left(17);
    let _ = splitmix64(&mut state);
    state ^= replicate.wrapping_mul(0xd6e8_feb8_6659_fd93);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    key
}

/// Box–Muller on two raw words.
fn gaussian_from_words(a: u64, b: u64) -> f64 {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    let u1 = ((a >> 11) + 1) as f64 * SCALE;
    let u2 = (b >> 11) as f64 * SCALE;
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Reproducible Wiener streams for one simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseStreams {
    master_seed: u64,
    dv_replicate: u64,
    finest_dt: f64,
    n_measurement: usize,
    n_members: usize,
    n_dv_channels: usize,
    dw_key: [u8; 32],
    dv_key: [u8; 32],
}

impl NoiseStreams {
    /// `n_dv_channels` counts every per-member noise source (decoherence and
    /// Hamiltonian-noise channels).
    pub fn new(
        master_seed: u64,
        finest_dt: f64,
        n_measurement: usize,
        n_members: usize,
        n_dv_channels: usize,
    ) -> Result<Self> {
        if !(finest_dt > 0.0 && finest_dt.is_finite()) {
            return Err(Error::Config(format!("finest_dt must be positive, got {finest_dt}")));
        }
        if n_dv_channels >= 1 << CHANNEL_BITS {
            return Err(Error::Config("too many decoherence channels".into()));
        }
        Ok(Self {
            master_seed,
            dv_replicate: 0,
            finest_dt,
            n_measurement,
            n_members,
            n_dv_channels,
            dw_key: derive_key(master_seed, DOMAIN_MEASUREMENT, 0),
            dv_key: derive_key(master_seed, DOMAIN_DECOHERENCE, 0),
        })
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn finest_dt(&self) -> f64 {
        self.finest_dt
    }

    pub fn dv_replicate(&self) -> u64 {
        self.dv_replicate
    }

    /// Same `dW` streams, `dV` streams reseeded from `(master_seed, replicate)`.
    ///
    /// Replicate 0 of a fork is distinct from the unforked original.
    pub fn fork_dv(&self, replicate: u64) -> NoiseStreams {
        let mut forked = self.clone();
        forked.dv_replicate = replicate;
        forked.dv_key = derive_key(self.master_seed, DOMAIN_DECOHERENCE, replicate.wrapping_add(1));
        forked
    }

    fn check(&self, id: StreamId) -> Result<()> {
        let ok = match id {
            StreamId::Measurement(j) => j < self.n_measurement,
            StreamId::Decoherence { member, channel } => {
                member < self.n_members && channel < self.n_dv_channels
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::UnknownStream(id.to_string()))
        }
    }

    fn rng_for(&self, id: StreamId) -> ChaCha8Rng {
        let (key, stream) = match id {
            StreamId::Measurement(j) => (&self.dw_key, j as u64),
            StreamId::Decoherence { member, channel } => {
                (&self.dv_key, ((member as u64) << CHANNEL_BITS) | channel as u64)
            }
        };
        let mut rng = ChaCha8Rng::from_seed(*key);
        rng.set_stream(stream);
        rng
    }

    /// Standard normal draw at `(stream, fine_step)`.
    pub fn standard_normal(&self, id: StreamId, fine_step: u64) -> Result<f64> {
        self.check(id)?;
        let mut rng = self.rng_for(id);
        rng.set_word_pos(fine_step as u128 * WORDS_PER_DRAW);
        Ok(gaussian_from_words(rng.next_u64(), rng.next_u64()))
    }

    /// Number of fine steps per step of length `dt`; `dt` must be `2^m · finest_dt`.
    pub fn refinement(&self, dt: f64) -> Result<u64> {
        refinement_factor(self.finest_dt, dt)
    }

    /// Increment over `[step·dt, (step+1)·dt)` on the fine path.
    pub fn gaussian_increment(&self, id: StreamId, step: u64, dt: f64) -> Result<WienerIncrement> {
        let factor = self.refinement(dt)?;
        self.increment_with_factor(id, step, factor)
    }

    /// As [`Self::gaussian_increment`] with a precomputed refinement factor.
    pub fn increment_with_factor(&self, id: StreamId, step: u64, factor: u64) -> Result<WienerIncrement> {
        self.check(id)?;
        let mut rng = self.rng_for(id);
        let sd = self.finest_dt.sqrt();
        let first = step * factor;
        rng.set_word_pos(first as u128 * WORDS_PER_DRAW);
        let mut draw = || sd * gaussian_from_words(rng.next_u64(), rng.next_u64());
        if factor as usize <= STACK_FINE {
            let mut buf = [0.0f64; STACK_FINE];
            let level = &mut buf[..factor as usize];
            level.iter_mut().for_each(|v| *v = draw());
            return Ok(WienerIncrement(pairwise_in_place(level)));
        }
        let mut fine: Vec<f64> = (0..factor).map(|_| draw()).collect();
        Ok(WienerIncrement(pairwise_in_place(&mut fine)))
    }
}

/// Sums by repeated pair-folding so that a coarse increment built in one call
/// equals the one built by chaining [`coarse_from_fine`].
/// Fine draws held on the stack when coarsening by at most this factor.
const STACK_FINE: usize = 64;

/// Sums a power-of-two run of fine increments by repeated neighbour pairing,
/// the same association order as applying [`coarse_from_fine`] level by level.
fn pairwise_in_place(level: &mut [f64]) -> f64 {
    let mut len = level.len();
    while len > 1 {
        len /= 2;
        for i in 0..len {
            level[i] = level[2 * i] + level[2 * i + 1];
        }
    }
    level[0]
}

/// `coarse[k] = fine[2k] + fine[2k+1]`.
pub fn coarse_from_fine(fine: &[WienerIncrement]) -> Result<Vec<WienerIncrement>> {
    if !fine.len().is_multiple_of(2) {
        return Err(Error::OddLength(fine.len()));
    }
    Ok(fine.chunks_exact(2).map(|p| WienerIncrement(p[0].0 + p[1].0)).collect())
}

/// `dt / finest_dt` when it is a power of two (relative tolerance 1e-9).
pub fn refinement_factor(finest_dt: f64, dt: f64) -> Result<u64> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    let ratio = dt / finest_dt;
    let rounded = ratio.round();
    if rounded < 1.0 || (ratio - rounded).abs() > 1e-9 * rounded {
        return Err(Error::Config(format!(
            "dt = {dt} is not finest_dt · 2^m (finest_dt = {finest_dt})"
        )));
    }
    let factor = rounded as u64;
    if !factor.is_power_of_two() {
        return Err(Error::Config(format!("dt / finest_dt = {factor} is not a power of two")));
    }
    Ok(factor)
}
