//! Synthetic complex-envelope records.
//!
//! Every period draws one cavity amplitude `s` from the Husimi Q function of
//! the prepared state and places it in the discretized temporal mode `û`. The
//! remaining vacuum fluctuations are white circular Gaussians with `û`
//! projected out, so the period-resolved statistics are anti-normally ordered
//! exactly. Amplifier noise is added per channel after scaling by `√g`.
//!
//! Each period uses its own ChaCha8 stream selected by its global index
//! (`shot · K + k`), so records do not depend on the thread count and any
//! sub-range of shots can be regenerated on its own.

use num_complex::{Complex32, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{discrete_mode, CavityPreparation, TimeGrid, Topology, ValidConfig};

/// Complex envelope records of both channels for a run of consecutive shots.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordSet {
    /// Grid of a single shot; `periods` is the number of periods per shot.
    pub grid: TimeGrid,
    pub shots: usize,
    /// Global index of the first shot, which fixes its RNG streams.
    pub first_shot: usize,
    /// Channel-major samples, `shots · K · P` per channel.
    pub channels: Vec<Vec<Complex32>>,
    pub seed: u64,
    pub config_digest: [u8; 32],
    /// Bins at each shot edge that estimators must not use as base samples.
    pub edge_guard: usize,
}

impl RecordSet {
    pub fn shot_len(&self) -> usize {
        self.grid.shot_len()
    }

    pub fn total_periods(&self) -> usize {
        self.shots * self.grid.periods
    }

    /// Shots `[start, end)` as their own record set.
    pub fn shot_range(&self, start: usize, end: usize) -> RecordSet {
        assert!(start <= end && end <= self.shots, "shot range out of bounds");
        let n = self.shot_len();
        RecordSet {
            channels: self.channels.iter().map(|c| c[start * n..end * n].to_vec()).collect(),
            shots: end - start,
            first_shot: self.first_shot + start,
            grid: self.grid,
            seed: self.seed,
            config_digest: self.config_digest,
            edge_guard: self.edge_guard,
        }
    }

    /// Appends the shots of `other`, which must share grid and digest.
    pub fn extend(&mut self, other: &RecordSet) -> Result<()> {
        if self.grid != other.grid || self.channels.len() != other.channels.len() {
            return Err(Error::GridMismatch("record sets have different grids".into()));
        }
        if self.config_digest != other.config_digest {
            return Err(Error::DigestMismatch {
                expected: hex::encode(self.config_digest),
                found: hex::encode(other.config_digest),
            });
        }
        for (a, b) in self.channels.iter_mut().zip(&other.channels) {
            a.extend_from_slice(b);
        }
        self.shots += other.shots;
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.channels
            .iter()
            .all(|c| c.iter().all(|v| v.re.is_finite() && v.im.is_finite()))
    }

    /// SHA-256 over the little-endian sample bytes of all channels.
    pub fn content_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for c in &self.channels {
            for v in c {
                h.update(v.re.to_le_bytes());
                h.update(v.im.to_le_bytes());
            }
        }
        h.finalize().into()
    }
}

/// Rejection sampler for `Q(s) = e^{-|s|²} |α + β s̄|² / π`.
#[derive(Clone, Copy, Debug)]
pub struct HusimiSampler {
    alpha: Complex64,
    beta: Complex64,
    envelope: f64,
}

impl HusimiSampler {
    pub fn new(prep: &CavityPreparation) -> Self {
        let a = prep.alpha.norm();
        let b = prep.beta.norm();
        // Supremum of Q/q = 2 e^{-r²/2} (a + b r)² over the radius r.
        let envelope = if b == 0.0 {
            2.0 * a * a
        } else {
            let r = (-a + (a * a + 8.0 * b * b).sqrt()) / (2.0 * b);
            2.0 * (-0.5 * r * r).exp() * (a + b * r).powi(2)
        };
        Self {
            alpha: prep.alpha,
            beta: prep.beta,
            envelope,
        }
    }

    pub fn envelope(&self) -> f64 {
        self.envelope
    }

    pub fn density(&self, s: Complex64) -> f64 {
        (-s.norm_sqr()).exp() * (self.alpha + self.beta * s.conj()).norm_sqr() / std::f64::consts::PI
    }

    /// Ratio of the target to the proposal density at `s`.
    pub fn likelihood_ratio(&self, s: Complex64) -> f64 {
        2.0 * (-0.5 * s.norm_sqr()).exp() * (self.alpha + self.beta * s.conj()).norm_sqr()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Complex64 {
        loop {
            let s = Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
            let u: f64 = rng.random();
            if u * self.envelope < self.likelihood_ratio(s) {
                return s;
            }
        }
    }
}

pub fn sample_husimi<R: Rng + ?Sized>(prep: &CavityPreparation, rng: &mut R) -> Complex64 {
    HusimiSampler::new(prep).sample(rng)
}

/// Record generator for one validated configuration and cavity state.
#[derive(Clone, Debug)]
pub struct Sampler {
    grid: TimeGrid,
    topology: Topology,
    husimi: HusimiSampler,
    mode: Vec<f64>,
    weights: [f64; 2],
    sqrt_gain: [f64; 2],
    /// `ξ_0 = n0 z_1`, `ξ_1 = a z_1 + b z_2` with unit circular `z`.
    n0: f64,
    mix_a: Complex64,
    mix_b: f64,
    noisy: bool,
    digest: [u8; 32],
}

/// Unit circular complex normal, `E|z|² = 1`.
#[inline]
fn unit_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let x: f64 = rng.sample(StandardNormal);
    let y: f64 = rng.sample(StandardNormal);
    Complex64::new(x, y) * std::f64::consts::FRAC_1_SQRT_2
}

impl Sampler {
    pub fn new(config: &ValidConfig, prep: &CavityPreparation) -> Self {
        let dt = config.grid.dt;
        let [c0, c1] = config.channels;
        let n0 = (c0.nbar / dt).sqrt();
        let cross = config.noise_cross.nbar_cross / dt;
        let mix_a = if n0 > 0.0 { cross / n0 } else { Complex64::new(0.0, 0.0) };
        let mix_b = (c1.nbar / dt - mix_a.norm_sqr()).max(0.0).sqrt();
        Self {
            grid: config.grid,
            topology: config.topology,
            husimi: HusimiSampler::new(prep),
            mode: discrete_mode(&config.topology, &config.grid),
            weights: config.topology.channel_weights(),
            sqrt_gain: [c0.gain.sqrt(), c1.gain.sqrt()],
            n0,
            mix_a,
            mix_b,
            noisy: c0.nbar > 0.0 || c1.nbar > 0.0,
            digest: config.digest(),
        }
    }

    fn period_rng(seed: u64, period: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(period);
        rng
    }

    /// Fills one period of both channels from the stream of global period `index`.
    pub fn fill_period(&self, seed: u64, index: u64, out0: &mut [Complex32], out1: &mut [Complex32]) {
        let mut rng = Self::period_rng(seed, index);
        let p = self.grid.bins_per_period;
        let dt = self.grid.dt;
        let sigma = dt.recip().sqrt();
        let s = self.husimi.sample(&mut rng);

        let mut pre0 = vec![Complex64::new(0.0, 0.0); p];
        let mut pre1 = vec![Complex64::new(0.0, 0.0); p];
        match self.topology {
            Topology::Hbt { .. } => {
                let z: Vec<Complex64> = (0..p).map(|_| unit_normal(&mut rng) * sigma).collect();
                let proj: Complex64 = self.mode.iter().zip(&z).map(|(u, z)| z * *u).sum::<Complex64>() * dt;
                let h = std::f64::consts::FRAC_1_SQRT_2;
                for i in 0..p {
                    let w = unit_normal(&mut rng) * sigma;
                    let common = (s - proj) * self.mode[i] + z[i];
                    pre0[i] = (common + w) * h;
                    pre1[i] = (common - w) * h;
                }
            }
            Topology::TwoSided { .. } => {
                let [wb, wc] = self.weights;
                let zb: Vec<Complex64> = (0..p).map(|_| unit_normal(&mut rng) * sigma).collect();
                let zc: Vec<Complex64> = (0..p).map(|_| unit_normal(&mut rng) * sigma).collect();
                let proj: Complex64 = (0..p)
                    .map(|i| (zb[i] * wb + zc[i] * wc) * self.mode[i])
                    .sum::<Complex64>()
                    * dt;
                for i in 0..p {
                    let u = self.mode[i];
                    pre0[i] = (s - proj) * (wb * u) + zb[i];
                    pre1[i] = (s - proj) * (wc * u) + zc[i];
                }
            }
        }

        let [g0, g1] = self.sqrt_gain;
        if self.noisy {
            let z1: Vec<Complex64> = (0..p).map(|_| unit_normal(&mut rng)).collect();
            let z2: Vec<Complex64> = (0..p).map(|_| unit_normal(&mut rng)).collect();
            for i in 0..p {
                let xi0 = z1[i] * self.n0;
                let xi1 = self.mix_a * z1[i] + z2[i] * self.mix_b;
                out0[i] = narrow(pre0[i] * g0 + xi0);
                out1[i] = narrow(pre1[i] * g1 + xi1);
            }
        } else {
            for i in 0..p {
                out0[i] = narrow(pre0[i] * g0);
                out1[i] = narrow(pre1[i] * g1);
            }
        }
    }

    /// Generates shots `[first_shot, first_shot + shots)` of the run with `seed`.
    pub fn records(&self, seed: u64, first_shot: usize, shots: usize) -> RecordSet {
        let p = self.grid.bins_per_period;
        let k = self.grid.periods;
        let n = shots * k * p;
        let mut c0 = vec![Complex32::new(0.0, 0.0); n];
        let mut c1 = vec![Complex32::new(0.0, 0.0); n];
        c0.par_chunks_mut(p)
            .zip(c1.par_chunks_mut(p))
            .enumerate()
            .for_each(|(j, (a, b))| {
                let global = (first_shot * k + j) as u64;
                self.fill_period(seed, global, a, b);
            });
        RecordSet {
            grid: self.grid,
            shots,
            first_shot,
            channels: vec![c0, c1],
            seed,
            config_digest: self.digest,
            edge_guard: 0,
        }
    }
}

#[inline]
fn narrow(v: Complex64) -> Complex32 {
    Complex32::new(v.re as f32, v.im as f32)
}

/// Records of `shots` shots for the given cavity state.
pub fn synthesize_records(config: &ValidConfig, prep: &CavityPreparation, seed: u64, shots: usize) -> Result<RecordSet> {
    check_run(config, prep, shots)?;
    Ok(Sampler::new(config, prep).records(seed, 0, shots))
}

/// Checks that a run of `shots` shots can be simulated and analysed.
pub fn check_run(config: &ValidConfig, prep: &CavityPreparation, shots: usize) -> Result<()> {
    prep.validate()?;
    if shots == 0 {
        return Err(Error::Invalid("at least one shot is required".into()));
    }
    let needed = 2 * config.lag_periods + 1;
    if config.grid.periods < needed {
        return Err(Error::LagWindow(format!(
            "lag window needs {needed} periods per shot, config has {}",
            config.grid.periods
        )));
    }
    Ok(())
}

/// Records with the cavity in vacuum, used for noise calibration.
pub fn vacuum_records(config: &ValidConfig, seed: u64, shots: usize) -> Result<RecordSet> {
    synthesize_records(config, &CavityPreparation::vacuum(), seed, shots)
}
