//! Finite detection bandwidth.
//!
//! Each channel is convolved with its own real impulse response sampled on the
//! record grid. A Gaussian filter of bandwidth `B` (cycles per second) has a
//! frequency response with standard deviation `B`, so its impulse response is
//! a Gaussian of width `σ_t = 1/(2πB)`; the taps are truncated at `±5σ_t` and
//! normalized to unit DC gain.
//!
//! After filtering, every Dirac delta of the unfiltered theory becomes the
//! effective kernel `f_eff(m) = (1/dt) ∑_k h_i(k) h_j(k+m)`, and every
//! two-point correlation becomes `∑_n f_eff(n) Γ(m-n) dt`.

use num_complex::{Complex32, Complex64};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{CorrelationFunction, LagGrid};
use crate::sampler::RecordSet;

/// Gaussian taps reach this many standard deviations on each side.
pub const GAUSSIAN_REACH: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FilterKind {
    Identity,
    Gaussian {
        /// Standard deviation of the frequency response, in cycles per second.
        bandwidth: f64,
    },
    /// Causal taps starting at lag zero, spaced by `dt`.
    Custom { taps: Vec<f64>, dt: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    #[serde(flatten)]
    pub kind: FilterKind,
    pub channel: usize,
}

/// Impulse response `h(k)` for `k = offset, offset + 1, …`.
#[derive(Clone, Debug, PartialEq)]
pub struct Taps {
    pub offset: isize,
    pub values: Vec<f64>,
}

impl Taps {
    pub fn dc_gain(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn at(&self, k: isize) -> f64 {
        let i = k - self.offset;
        if i < 0 || i as usize >= self.values.len() {
            0.0
        } else {
            self.values[i as usize]
        }
    }

    pub fn end(&self) -> isize {
        self.offset + self.values.len() as isize
    }
}

impl FilterSpec {
    pub fn identity(channel: usize) -> Self {
        Self {
            kind: FilterKind::Identity,
            channel,
        }
    }

    pub fn gaussian(channel: usize, bandwidth: f64) -> Self {
        Self {
            kind: FilterKind::Gaussian { bandwidth },
            channel,
        }
    }

    pub fn custom(channel: usize, taps: Vec<f64>, dt: f64) -> Self {
        Self {
            kind: FilterKind::Custom { taps, dt },
            channel,
        }
    }

    /// Pair of Gaussian filters with bandwidth `factor / t_p`.
    pub fn gaussian_pair(factor: f64, t_p: f64) -> [FilterSpec; 2] {
        [Self::gaussian(0, factor / t_p), Self::gaussian(1, factor / t_p)]
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, FilterKind::Identity)
    }

    pub fn check(&self) -> std::result::Result<(), String> {
        if self.channel > 1 {
            return Err(format!("channel {} does not exist", self.channel));
        }
        match &self.kind {
            FilterKind::Identity => Ok(()),
            FilterKind::Gaussian { bandwidth } => {
                if bandwidth.is_finite() && *bandwidth > 0.0 {
                    Ok(())
                } else {
                    Err(format!("gaussian bandwidth must be positive, got {bandwidth}"))
                }
            }
            FilterKind::Custom { taps, dt } => {
                if taps.is_empty() {
                    Err("custom filter needs at least one tap".into())
                } else if !taps.iter().all(|t| t.is_finite()) {
                    Err("custom taps must be finite".into())
                } else if !(dt.is_finite() && *dt > 0.0) {
                    Err(format!("custom tap spacing must be positive, got {dt}"))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Impulse response on a grid of spacing `dt`.
    pub fn taps(&self, dt: f64) -> Result<Taps> {
        self.check().map_err(Error::Invalid)?;
        match &self.kind {
            FilterKind::Identity => Ok(Taps {
                offset: 0,
                values: vec![1.0],
            }),
            FilterKind::Gaussian { bandwidth } => {
                let sigma = gaussian_sigma(*bandwidth);
                let reach = (GAUSSIAN_REACH * sigma / dt).ceil() as isize;
                let mut values: Vec<f64> = (-reach..=reach)
                    .map(|j| {
                        let t = j as f64 * dt;
                        (-t * t / (2.0 * sigma * sigma)).exp()
                    })
                    .collect();
                let sum: f64 = values.iter().sum();
                values.iter_mut().for_each(|v| *v /= sum);
                Ok(Taps { offset: -reach, values })
            }
            FilterKind::Custom { taps, dt: spacing } => {
                if (spacing - dt).abs() > 1e-9 * dt {
                    return Err(Error::DtMismatch {
                        expected: *spacing,
                        found: dt,
                    });
                }
                Ok(Taps {
                    offset: 0,
                    values: taps.clone(),
                })
            }
        }
    }

    pub fn dc_gain(&self) -> f64 {
        match &self.kind {
            FilterKind::Custom { taps, .. } => taps.iter().sum(),
            _ => 1.0,
        }
    }
}

/// Impulse-response width `σ_t` of a Gaussian filter with bandwidth `B`.
pub fn gaussian_sigma(bandwidth: f64) -> f64 {
    1.0 / (2.0 * std::f64::consts::PI * bandwidth)
}

fn filter_shot(input: &[Complex32], taps: &Taps, out: &mut [Complex32]) {
    let n = input.len() as isize;
    for (t, o) in out.iter_mut().enumerate() {
        let t = t as isize;
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, &h) in taps.values.iter().enumerate() {
            let src = t - (taps.offset + j as isize);
            if (0..n).contains(&src) {
                let x = input[src as usize];
                acc += Complex64::new(x.re as f64, x.im as f64) * h;
            }
        }
        *o = Complex32::new(acc.re as f32, acc.im as f32);
    }
}

/// Filters every shot of each channel with zero padding at the shot edges.
///
/// The returned records carry an edge guard of `taps - 1` extra bins so that
/// estimators skip the transients at both ends of each shot.
pub fn apply_filter(records: &RecordSet, specs: &[FilterSpec]) -> Result<RecordSet> {
    let mut out = records.clone();
    let n = records.shot_len();
    let mut guard = 0usize;
    for spec in specs {
        if spec.channel >= records.channels.len() {
            return Err(Error::ChannelMismatch(format!("no channel {} to filter", spec.channel)));
        }
        if spec.is_identity() {
            continue;
        }
        let taps = spec.taps(records.grid.dt)?;
        if taps.values.len() >= n {
            return Err(Error::Invalid(format!(
                "filter has {} taps but a shot has only {n} bins",
                taps.values.len()
            )));
        }
        guard = guard.max(taps.values.len() - 1);
        let src = &records.channels[spec.channel];
        out.channels[spec.channel]
            .par_chunks_mut(n)
            .zip(src.par_chunks(n))
            .for_each(|(o, i)| filter_shot(i, &taps, o));
    }
    out.edge_guard = records.edge_guard + guard;
    Ok(out)
}

/// `f_eff` on integer lags `offset, offset + 1, …`.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveKernel {
    pub dt: f64,
    pub offset: isize,
    pub values: Vec<f64>,
}

impl EffectiveKernel {
    pub fn at(&self, m: isize) -> f64 {
        let i = m - self.offset;
        if i < 0 || i as usize >= self.values.len() {
            0.0
        } else {
            self.values[i as usize]
        }
    }

    /// The unfiltered kernel `δ_{m0}/dt`.
    pub fn delta(dt: f64) -> Self {
        Self {
            dt,
            offset: 0,
            values: vec![1.0 / dt],
        }
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dt
    }

    pub fn lags(&self) -> std::ops::Range<isize> {
        self.offset..self.offset + self.values.len() as isize
    }

    /// Values on a lag grid, zero outside the kernel support.
    pub fn on_grid(&self, grid: &LagGrid) -> Vec<f64> {
        let m = grid.max_lag() as isize;
        (-m..=m).map(|l| self.at(l)).collect()
    }
}

/// Cross-correlation of two impulse responses, scaled by `1/dt`.
pub fn effective_kernel(spec_i: &FilterSpec, spec_j: &FilterSpec, dt: f64) -> Result<EffectiveKernel> {
    let hi = spec_i.taps(dt)?;
    let hj = spec_j.taps(dt)?;
    let lo = hj.offset - (hi.end() - 1);
    let hi_lag = (hj.end() - 1) - hi.offset;
    let values = (lo..=hi_lag)
        .map(|m| {
            (hi.offset..hi.end())
                .map(|k| hi.at(k) * hj.at(k + m))
                .sum::<f64>()
                / dt
        })
        .collect();
    Ok(EffectiveKernel { dt, offset: lo, values })
}

/// `∑_n f_eff(n) Γ(m-n) dt` on the lag grid of `curve`, treating values
/// beyond the grid as zero.
pub fn convolve_lags(curve: &CorrelationFunction, kernel: &EffectiveKernel) -> CorrelationFunction {
    let grid = curve.lag_grid();
    let m_max = grid.max_lag() as isize;
    let at = |l: isize| -> (Complex64, f64) {
        if l.abs() > m_max {
            (Complex64::new(0.0, 0.0), 0.0)
        } else {
            let i = grid.index(l);
            (curve.values[i], curve.stderr[i])
        }
    };
    let mut values = Vec::with_capacity(grid.len());
    let mut stderr = Vec::with_capacity(grid.len());
    for m in -m_max..=m_max {
        let mut v = Complex64::new(0.0, 0.0);
        let mut var = 0.0;
        for n in kernel.lags() {
            let w = kernel.at(n) * kernel.dt;
            let (x, se) = at(m - n);
            v += x * w;
            var += (w * se).powi(2);
        }
        values.push(v);
        stderr.push(var.sqrt());
    }
    let mut out = CorrelationFunction::from_values(curve.kind, grid, values, stderr, curve.shots, curve.config_digest.clone());
    out.channel = curve.channel;
    out
}

/// Filtered analytic curve `G ∗ f_eff`, evaluating `g` wherever the kernel reaches.
pub fn filter_reference_g1<F>(g: F, kernel: &EffectiveKernel, grid: LagGrid) -> Vec<Complex64>
where
    F: Fn(f64) -> Complex64,
{
    let m_max = grid.max_lag() as isize;
    (-m_max..=m_max)
        .map(|m| {
            kernel
                .lags()
                .map(|n| g((m - n) as f64 * grid.dt) * (kernel.at(n) * kernel.dt))
                .sum()
        })
        .collect()
}

/// A four-point function on a periodic `n⁴` grid, indexed `[t1][t2][t3][t4]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourPointGrid {
    pub n: usize,
    pub values: Vec<Complex64>,
}

impl FourPointGrid {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            values: vec![Complex64::new(0.0, 0.0); n.pow(4)],
        }
    }

    pub fn index(&self, t: [usize; 4]) -> usize {
        ((t[0] * self.n + t[1]) * self.n + t[2]) * self.n + t[3]
    }

    pub fn get(&self, t: [usize; 4]) -> Complex64 {
        self.values[self.index(t)]
    }
}

/// Generalized convolution `∑_k h_1(k_1)…h_4(k_4) G(t - k)` by direct summation
/// over a periodic grid. Taps are indexed from lag zero modulo `n`.
pub fn four_point_filtered_direct(g: &FourPointGrid, taps: [&[f64]; 4]) -> FourPointGrid {
    let n = g.n;
    let mut out = FourPointGrid::zeros(n);
    for t1 in 0..n {
        for t2 in 0..n {
            for t3 in 0..n {
                for t4 in 0..n {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (k1, h1) in taps[0].iter().enumerate() {
                        for (k2, h2) in taps[1].iter().enumerate() {
                            for (k3, h3) in taps[2].iter().enumerate() {
                                for (k4, h4) in taps[3].iter().enumerate() {
                                    let src = [
                                        (t1 + n - k1 % n) % n,
                                        (t2 + n - k2 % n) % n,
                                        (t3 + n - k3 % n) % n,
                                        (t4 + n - k4 % n) % n,
                                    ];
                                    acc += g.get(src) * (h1 * h2 * h3 * h4);
                                }
                            }
                        }
                    }
                    let i = out.index([t1, t2, t3, t4]);
                    out.values[i] = acc;
                }
            }
        }
    }
    out
}

/// The same generalized convolution evaluated in the frequency domain: the
/// four-dimensional spectrum of `G` is multiplied by the product of the four
/// transfer functions.
pub fn four_point_filtered_spectral(g: &FourPointGrid, taps: [&[f64]; 4]) -> FourPointGrid {
    let n = g.n;
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let transfer: Vec<Vec<Complex64>> = taps
        .iter()
        .map(|h| {
            let mut buf = vec![Complex64::new(0.0, 0.0); n];
            for (k, &v) in h.iter().enumerate() {
                buf[k % n] += v;
            }
            fwd.process(&mut buf);
            buf
        })
        .collect();
    let mut data = g.values.clone();
    let strides = [n * n * n, n * n, n, 1];
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    let mut transform = |data: &mut Vec<Complex64>, forward: bool| {
        for (axis, &stride) in strides.iter().enumerate() {
            for base in 0..n.pow(4) {
                if (base / stride) % n != 0 {
                    continue;
                }
                for (i, l) in line.iter_mut().enumerate() {
                    *l = data[base + i * stride];
                }
                if forward {
                    fwd.process(&mut line);
                    for (l, h) in line.iter_mut().zip(&transfer[axis]) {
                        *l *= h;
                    }
                } else {
                    inv.process(&mut line);
                }
                for (i, l) in line.iter().enumerate() {
                    data[base + i * stride] = *l;
                }
            }
        }
    };
    transform(&mut data, true);
    transform(&mut data, false);
    let scale = 1.0 / (n.pow(4) as f64);
    data.iter_mut().for_each(|v| *v *= scale);
    FourPointGrid { n, values: data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{gamma1, CorrelationKind, EstimatorOptions, TwoPointMode};
    use crate::model::{validate_config, AmplifierChannel, CavityPreparation, ExperimentConfig, TimeGrid};
    use crate::sampler::synthesize_records;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn records(values: Vec<Complex32>, grid: TimeGrid) -> RecordSet {
        RecordSet {
            grid,
            shots: 1,
            first_shot: 0,
            channels: vec![values.clone(), values],
            seed: 0,
            config_digest: [0; 32],
            edge_guard: 0,
        }
    }

    #[test]
    fn identity_is_bit_exact() {
        let grid = TimeGrid::new(0.1, 4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v: Vec<Complex32> = (0..20).map(|_| Complex32::new(rng.random(), rng.random())).collect();
        let r = records(v, grid);
        let f = apply_filter(&r, &[FilterSpec::identity(0), FilterSpec::identity(1)]).unwrap();
        assert_eq!(f, r);
    }

    #[test]
    fn two_tap_impulse() {
        let grid = TimeGrid::new(0.1, 4, 5);
        let mut v = vec![Complex32::new(0.0, 0.0); 20];
        v[0] = Complex32::new(1.0, 0.0);
        let r = records(v, grid);
        let f = apply_filter(&r, &[FilterSpec::custom(0, vec![0.5, 0.5], 0.1)]).unwrap();
        assert_eq!(f.channels[0][0], Complex32::new(0.5, 0.0));
        assert_eq!(f.channels[0][1], Complex32::new(0.5, 0.0));
        assert!(f.channels[0][2..].iter().all(|x| *x == Complex32::new(0.0, 0.0)));
        assert_eq!(f.edge_guard, 1);
        assert!(matches!(
            apply_filter(&r, &[FilterSpec::custom(0, vec![0.5, 0.5], 0.2)]),
            Err(Error::DtMismatch { .. })
        ));
    }

    #[test]
    fn identity_kernel_is_delta() {
        let k = effective_kernel(&FilterSpec::identity(0), &FilterSpec::identity(1), 0.25).unwrap();
        assert_eq!(k, EffectiveKernel::delta(0.25));
    }

    #[test]
    fn gaussian_kernel_shape() {
        let t_p = 10.0;
        let dt = t_p / 256.0;
        let spec = FilterSpec::gaussian(0, 10.0 / t_p);
        let k = effective_kernel(&spec, &spec, dt).unwrap();
        let sigma = gaussian_sigma(10.0 / t_p);
        let width = std::f64::consts::SQRT_2 * sigma;
        assert!((k.integral() - 1.0).abs() < 1e-12);
        assert!(k.at(0) >= k.at(1) && k.at(0) == k.at(0).max(k.at(-1)));
        for m in -40isize..=40 {
            let tau = m as f64 * dt;
            let want = (-tau * tau / (2.0 * width * width)).exp() / ((2.0 * std::f64::consts::PI).sqrt() * width);
            assert!((k.at(m) - want).abs() < 2e-3 * k.at(0), "{m}: {} vs {want}", k.at(m));
        }
    }

    proptest! {
        #[test]
        fn kernel_normalization(taps_a in prop::collection::vec(-2.0f64..2.0, 1..8), taps_b in prop::collection::vec(-2.0f64..2.0, 1..8)) {
            let dt = 0.3;
            let a = FilterSpec::custom(0, taps_a.clone(), dt);
            let b = FilterSpec::custom(1, taps_b.clone(), dt);
            let k = effective_kernel(&a, &b, dt).unwrap();
            let want = taps_a.iter().sum::<f64>() * taps_b.iter().sum::<f64>();
            prop_assert!((k.integral() - want).abs() < 1e-9 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn reference_ratio_preserved() {
        let kappa = 1.0;
        let t_p = 20.0;
        let grid = LagGrid::new(t_p / 256.0, 256, 2);
        let prep = CavityPreparation::superposition(2.0 / 3.0);
        let g = |tau: f64| crate::reference::g1_analytic(tau, &prep, kappa, t_p);
        let raw: Vec<Complex64> = grid.lags().iter().map(|&t| g(t)).collect();
        let mut last_center = f64::INFINITY;
        for factor in [31.0, 14.0, 10.0] {
            let spec = FilterSpec::gaussian(0, factor / t_p);
            let k = effective_kernel(&spec, &spec, grid.dt).unwrap();
            let fil = filter_reference_g1(g, &k, grid);
            let peak = |v: &[Complex64], l: isize| {
                let c = grid.index(l * 256);
                v[c - 128..=c + 128].iter().map(|x| x.re).fold(f64::MIN, f64::max)
            };
            let ratio_raw = peak(&raw, 0) / peak(&raw, 1);
            let ratio_fil = peak(&fil, 0) / peak(&fil, 1);
            assert!((ratio_fil / ratio_raw - 1.0).abs() < 0.01);
            assert!(peak(&fil, 0) < last_center);
            last_center = peak(&fil, 0);
        }
    }

    #[test]
    fn filtered_vacuum_follows_kernel() {
        let t_p = 10.0;
        let grid = TimeGrid::from_period(t_p, 32, 7);
        let cfg = validate_config(
            &ExperimentConfig::hbt(1.0, grid).with_channels([AmplifierChannel::new(1.0, 2.0), AmplifierChannel::ideal()]),
        )
        .unwrap();
        let raw = synthesize_records(&cfg, &CavityPreparation::vacuum(), 3, 4000).unwrap();
        let specs = FilterSpec::gaussian_pair(14.0, t_p);
        let fil = apply_filter(&raw, &specs).unwrap();
        let kernel = effective_kernel(&specs[0], &specs[0], grid.dt).unwrap();
        let opts = EstimatorOptions::new(2);
        let auto = gamma1(&fil, TwoPointMode::Auto(0), opts).unwrap();
        // Vacuum floor plus added noise, both white before filtering.
        let floor = cfg.channels[0].gain + cfg.channels[0].nbar;
        for m in -10isize..=10 {
            let want = floor * kernel.at(m) * t_p;
            let got = auto.at_lag(m);
            assert!((got.re - want).abs() < 4.5 * auto.stderr_at_lag(m), "{m}: {got} vs {want}");
        }
        assert_eq!(auto.kind, CorrelationKind::G1Alpha);
    }

    #[test]
    fn spectral_four_point_matches_direct() {
        let n = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut g = FourPointGrid::zeros(n);
        g.values
            .iter_mut()
            .for_each(|v| *v = Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        let h1 = [0.5, 0.3, 0.2];
        let h2 = [1.0];
        let h3 = [0.25, 0.75];
        let h4 = [0.1, 0.2, 0.3, 0.4];
        let a = four_point_filtered_direct(&g, [&h1, &h2, &h3, &h4]);
        let b = four_point_filtered_spectral(&g, [&h1, &h2, &h3, &h4]);
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).norm() < 1e-12);
        }
    }
}
