//! Four-group helix simulation with per-specimen time warps and Gaussian noise.
//!
//! Every random draw comes from a ChaCha stream keyed by `(seed, rep)` and
//! selected by `(specimen, purpose)`, so a specimen does not depend on the
//! order in which specimens or replicates are generated.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Result, ShapeError};
use crate::landmarks::LandmarkConfiguration;
use crate::linalg::uniform_grid;

pub const GROUP_LABELS: [&str; 4] = ["G1", "G2", "G3", "G4"];

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub group_sizes: [usize; 4],
    pub sigmas: [f64; 4],
    pub n_points: usize,
    pub n_reps: usize,
    pub seed: u64,
    /// Range of the Group 4 phase shift in radians.
    pub phase_range: (f64, f64),
    /// Range of the warp exponent `u` in `t ↦ tᵘ`.
    pub warp_range: (f64, f64),
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            group_sizes: [21, 32, 124, 23],
            sigmas: [0.05, 0.05, 0.10, 0.06],
            n_points: 30,
            n_reps: 50,
            seed: 1,
            phase_range: (0.2, 0.5),
            warp_range: (0.8, 1.2),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_sizes.contains(&0) {
            return Err(ShapeError::invalid("group sizes must be positive"));
        }
        if self.sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(ShapeError::invalid("noise standard deviations must be finite and nonnegative"));
        }
        if self.n_points < 3 {
            return Err(ShapeError::invalid("at least 3 points per curve are required"));
        }
        let (a, b) = self.phase_range;
        if !(a.is_finite() && b.is_finite() && a <= b) {
            return Err(ShapeError::invalid("phase range must be finite and ordered"));
        }
        let (a, b) = self.warp_range;
        if !(a > 0.0 && b.is_finite() && a <= b) {
            return Err(ShapeError::invalid("warp exponent range must be positive and ordered"));
        }
        Ok(())
    }

    pub fn n_specimens(&self) -> usize {
        self.group_sizes.iter().sum()
    }
}

/// Noiseless point of group `group ∈ 1..=4` at parameter `t`.
pub fn group_curve(group: usize, t: f64, phi: f64) -> Result<[f64; 3]> {
    let (s, c) = (2.0 * PI * t).sin_cos();
    Ok(match group {
        1 => [s, c, t],
        2 => [s + 0.15 * (6.0 * PI * t).sin(), c + 0.10 * (4.0 * PI * t).cos(), t],
        3 => [s, c, t + 0.20 * (4.0 * PI * t).sin()],
        4 => [(2.0 * PI * t + phi).sin(), (2.0 * PI * t + phi).cos(), t],
        g => return Err(ShapeError::invalid(format!("group must be 1..=4, got {g}"))),
    })
}

#[derive(Clone, Copy)]
enum Purpose {
    Warp = 0,
    Phase = 1,
    Noise = 2,
}

fn stream(seed: u64, rep: usize, specimen: usize, purpose: Purpose) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(rep as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(specimen as u64 * 4 + purpose as u64);
    rng
}

fn uniform(rng: &mut ChaCha8Rng, (a, b): (f64, f64)) -> f64 {
    if a == b {
        a
    } else {
        rng.random_range(a..b)
    }
}

/// Group index (1-based) of specimen `index` under `config.group_sizes`.
fn group_of(config: &SimConfig, index: usize) -> usize {
    let mut bound = 0;
    for (g, &size) in config.group_sizes.iter().enumerate() {
        bound += size;
        if index < bound {
            return g + 1;
        }
    }
    unreachable!("specimen index beyond the configured group sizes")
}

/// Specimen `index` of replicate `rep`.
pub fn generate_specimen(config: &SimConfig, rep: usize, index: usize) -> Result<LandmarkConfiguration> {
    let group = group_of(config, index);
    let u = uniform(&mut stream(config.seed, rep, index, Purpose::Warp), config.warp_range);
    let phi = if group == 4 {
        uniform(&mut stream(config.seed, rep, index, Purpose::Phase), config.phase_range)
    } else {
        0.0
    };
    let sigma = config.sigmas[group - 1];
    let noise = Normal::new(0.0, sigma).map_err(|e| ShapeError::invalid(e.to_string()))?;
    let mut rng = stream(config.seed, rep, index, Purpose::Noise);
    let grid = uniform_grid(config.n_points);
    let mut points = DMatrix::zeros(config.n_points, 3);
    for (i, &t) in grid.iter().enumerate() {
        let p = group_curve(group, t.powf(u), phi)?;
        for c in 0..3 {
            let e = if sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            points[(i, c)] = p[c] + e;
        }
    }
    LandmarkConfiguration::new(
        format!("spec{:03}", index + 1),
        points,
        Some(GROUP_LABELS[group - 1].to_string()),
    )
}

/// All specimens of replicate `rep`, ordered by group.
pub fn generate_replicate(config: &SimConfig, rep: usize) -> Result<Vec<LandmarkConfiguration>> {
    config.validate()?;
    (0..config.n_specimens())
        .into_par_iter()
        .map(|i| generate_specimen(config, rep, i))
        .collect()
}
