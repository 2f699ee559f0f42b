//! Period-integrated correlation estimators with streaming accumulation.
//!
//! For a lag `m` the per-shot estimate is
//! `(1/K_b) ∑_k ∑_{t ∈ period k} dt · conj(x_t) y_{t+m}`,
//! where `t` stays inside a base period and `t + m` may run into neighbouring
//! periods. Base periods are those whose whole lag window lies inside the shot
//! (and outside any filter edge guard), so every base period contributes to
//! every lag. Standard errors come from the scatter of per-shot estimates.

use std::sync::Arc;

use num_complex::{Complex32, Complex64};
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::RecordSet;

/// Shots handled by one parallel work unit.
const CHUNK_SHOTS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CorrelationKind {
    G1Alpha,
    G1Beta,
    G2Alpha,
    G2Beta,
    /// Recovered first-order coherence.
    G1,
    /// Recovered second-order coherence.
    G2,
}

impl CorrelationKind {
    pub fn name(&self) -> &'static str {
        match self {
            CorrelationKind::G1Alpha => "G1_ALPHA",
            CorrelationKind::G1Beta => "G1_BETA",
            CorrelationKind::G2Alpha => "G2_ALPHA",
            CorrelationKind::G2Beta => "G2_BETA",
            CorrelationKind::G1 => "G1",
            CorrelationKind::G2 => "G2",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwoPointMode {
    /// `conj(S_i(t)) S_i(t+τ)` for channel `i`.
    Auto(usize),
    /// `conj(S_0(t)) S_1(t+τ)`.
    Cross,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `conj(S_c(t)) conj(S_d(t+τ)) S_d(t+τ) S_c(t)`
    Alpha,
    /// `conj(S_c(t)) conj(S_c(t+τ)) S_d(t+τ) S_d(t)`
    Beta,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(Variant::Alpha),
            "beta" => Ok(Variant::Beta),
            other => Err(Error::Invalid(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwoPointMethod {
    #[default]
    Fft,
    Direct,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EstimatorOptions {
    pub lag_periods: usize,
    pub method: TwoPointMethod,
}

impl EstimatorOptions {
    pub fn new(lag_periods: usize) -> Self {
        Self {
            lag_periods,
            method: TwoPointMethod::Fft,
        }
    }

    pub fn direct(lag_periods: usize) -> Self {
        Self {
            lag_periods,
            method: TwoPointMethod::Direct,
        }
    }
}

/// Symmetric lag grid `τ_m = m dt`, `|m| ≤ lag_periods · P`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagGrid {
    pub dt: f64,
    pub bins_per_period: usize,
    pub lag_periods: usize,
}

impl LagGrid {
    pub fn new(dt: f64, bins_per_period: usize, lag_periods: usize) -> Self {
        Self {
            dt,
            bins_per_period,
            lag_periods,
        }
    }

    pub fn max_lag(&self) -> usize {
        self.lag_periods * self.bins_per_period
    }

    pub fn len(&self) -> usize {
        2 * self.max_lag() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn t_p(&self) -> f64 {
        self.dt * self.bins_per_period as f64
    }

    pub fn lag(&self, index: usize) -> f64 {
        (index as f64 - self.max_lag() as f64) * self.dt
    }

    pub fn lags(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.lag(i)).collect()
    }

    pub fn index(&self, m: isize) -> usize {
        (m + self.max_lag() as isize) as usize
    }
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| if x.is_finite() { Some(*x) } else { None }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let v: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
    }
}

/// A correlation estimate on a lag grid with per-lag standard errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationFunction {
    pub kind: CorrelationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<usize>,
    pub dt: f64,
    pub bins_per_period: usize,
    pub lag_periods: usize,
    pub lags: Vec<f64>,
    pub values: Vec<Complex64>,
    /// Undefined (NaN) below two shots.
    #[serde(with = "nan_as_null")]
    pub stderr: Vec<f64>,
    pub shots: u64,
    pub config_digest: String,
    /// Sum of squared deviations per lag; empty for derived curves, which
    /// cannot be accumulated further.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub(crate) m2: Vec<f64>,
}

fn stderr_from(m2: &[f64], n: u64) -> Vec<f64> {
    if n < 2 {
        return vec![f64::NAN; m2.len()];
    }
    let denom = (n * (n - 1)) as f64;
    m2.iter().map(|v| (v / denom).sqrt()).collect()
}

impl CorrelationFunction {
    /// An accumulable estimate holding no shots; the identity of [`accumulate`].
    pub fn empty(kind: CorrelationKind, grid: LagGrid, config_digest: String) -> Self {
        let n = grid.len();
        Self {
            kind,
            channel: None,
            dt: grid.dt,
            bins_per_period: grid.bins_per_period,
            lag_periods: grid.lag_periods,
            lags: grid.lags(),
            values: vec![Complex64::new(0.0, 0.0); n],
            stderr: vec![f64::NAN; n],
            shots: 0,
            config_digest,
            m2: vec![0.0; n],
        }
    }

    /// A derived or analytic curve with given standard errors.
    pub fn from_values(
        kind: CorrelationKind,
        grid: LagGrid,
        values: Vec<Complex64>,
        stderr: Vec<f64>,
        shots: u64,
        config_digest: String,
    ) -> Self {
        Self {
            kind,
            channel: None,
            dt: grid.dt,
            bins_per_period: grid.bins_per_period,
            lag_periods: grid.lag_periods,
            lags: grid.lags(),
            values,
            stderr,
            shots,
            config_digest,
            m2: Vec::new(),
        }
    }

    pub fn lag_grid(&self) -> LagGrid {
        LagGrid::new(self.dt, self.bins_per_period, self.lag_periods)
    }

    pub fn t_p(&self) -> f64 {
        self.lag_grid().t_p()
    }

    pub fn zero_index(&self) -> usize {
        self.lag_grid().max_lag()
    }

    pub fn at_lag(&self, m: isize) -> Complex64 {
        self.values[self.lag_grid().index(m)]
    }

    pub fn stderr_at_lag(&self, m: isize) -> f64 {
        self.stderr[self.lag_grid().index(m)]
    }

    pub fn is_accumulable(&self) -> bool {
        !self.m2.is_empty()
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.dt == other.dt
            && self.bins_per_period == other.bins_per_period
            && self.lag_periods == other.lag_periods
            && self.lags.len() == other.lags.len()
    }

    pub(crate) fn check_compatible(&self, other: &Self) -> Result<()> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch(format!(
                "dt {} / P {} / L {} vs dt {} / P {} / L {}",
                self.dt, self.bins_per_period, self.lag_periods, other.dt, other.bins_per_period, other.lag_periods
            )));
        }
        if self.config_digest != other.config_digest {
            return Err(Error::DigestMismatch {
                expected: self.config_digest.clone(),
                found: other.config_digest.clone(),
            });
        }
        Ok(())
    }

    /// Per-time average `Γ/t_p`, the quantity whose delta floor reads `(N̄+g)/dt`.
    pub fn per_time(&self, m: isize) -> Complex64 {
        self.at_lag(m) / self.t_p()
    }
}

/// Merges two independent estimates. The result does not depend on the
/// argument order, bit for bit.
pub fn accumulate(a: &CorrelationFunction, b: &CorrelationFunction) -> Result<CorrelationFunction> {
    if a.kind != b.kind || a.channel != b.channel {
        return Err(Error::KindMismatch {
            expected: a.kind.name().to_string(),
            found: b.kind.name().to_string(),
        });
    }
    a.check_compatible(b)?;
    if !a.is_accumulable() || !b.is_accumulable() {
        return Err(Error::Invalid("derived curves cannot be accumulated".into()));
    }
    if b.shots == 0 {
        return Ok(a.clone());
    }
    if a.shots == 0 {
        return Ok(b.clone());
    }
    let na = a.shots as f64;
    let nb = b.shots as f64;
    let n = na + nb;
    let w = na * nb / n;
    let values: Vec<Complex64> = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(&x, &y)| (x * na + y * nb) / n)
        .collect();
    let m2: Vec<f64> = (0..values.len())
        .map(|i| a.m2[i] + b.m2[i] + (b.values[i] - a.values[i]).norm_sqr() * w)
        .collect();
    let shots = a.shots + b.shots;
    Ok(CorrelationFunction {
        stderr: stderr_from(&m2, shots),
        values,
        m2,
        shots,
        ..a.clone()
    })
}

/// Streaming mean and squared-deviation sum over per-shot estimates.
#[derive(Clone, Debug)]
struct Accumulator {
    n: u64,
    mean: Vec<Complex64>,
    m2: Vec<f64>,
}

impl Accumulator {
    fn new(len: usize) -> Self {
        Self {
            n: 0,
            mean: vec![Complex64::new(0.0, 0.0); len],
            m2: vec![0.0; len],
        }
    }

    fn push(&mut self, x: &[Complex64]) {
        let n = self.n as f64;
        let n1 = n + 1.0;
        for ((mu, m2), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = v - *mu;
            *m2 += delta.norm_sqr() * n / n1;
            *mu = (*mu * n + v) / n1;
        }
        self.n += 1;
    }

    fn merge(a: Accumulator, b: Accumulator) -> Accumulator {
        if b.n == 0 {
            return a;
        }
        if a.n == 0 {
            return b;
        }
        let na = a.n as f64;
        let nb = b.n as f64;
        let n = na + nb;
        let w = na * nb / n;
        let mean = a.mean.iter().zip(&b.mean).map(|(&x, &y)| (x * na + y * nb) / n).collect();
        let m2 = (0..a.m2.len())
            .map(|i| a.m2[i] + b.m2[i] + (b.mean[i] - a.mean[i]).norm_sqr() * w)
            .collect();
        Accumulator { n: a.n + b.n, mean, m2 }
    }

    fn into_function(self, kind: CorrelationKind, channel: Option<usize>, grid: LagGrid, digest: &str) -> CorrelationFunction {
        CorrelationFunction {
            kind,
            channel,
            dt: grid.dt,
            bins_per_period: grid.bins_per_period,
            lag_periods: grid.lag_periods,
            lags: grid.lags(),
            stderr: stderr_from(&self.m2, self.n),
            values: self.mean,
            m2: self.m2,
            shots: self.n,
            config_digest: digest.to_string(),
        }
    }
}

/// Fixed-shape pairwise reduction: adjacent pairs are merged level by level.
fn tree_reduce(mut items: Vec<Accumulator>, len: usize) -> Accumulator {
    if items.is_empty() {
        return Accumulator::new(len);
    }
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(Accumulator::merge(a, b)),
                None => next.push(a),
            }
        }
        items = next;
    }
    items.pop().expect("one item left")
}

/// Which correlations to estimate in a single pass over the records.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CorrelationRequest {
    pub auto: [bool; 2],
    pub cross: bool,
    pub g2_alpha: bool,
    pub g2_beta: bool,
}

impl CorrelationRequest {
    pub fn two_point() -> Self {
        Self {
            auto: [true, true],
            cross: true,
            ..Self::default()
        }
    }

    pub fn all() -> Self {
        Self {
            auto: [true, true],
            cross: true,
            g2_alpha: true,
            g2_beta: true,
        }
    }

    pub fn with_g2(mut self, variant: Variant) -> Self {
        match variant {
            Variant::Alpha => self.g2_alpha = true,
            Variant::Beta => self.g2_beta = true,
        }
        self
    }

    fn slots(&self) -> Vec<Slot> {
        let mut v = Vec::new();
        if self.auto[0] {
            v.push(Slot::Auto(0));
        }
        if self.auto[1] {
            v.push(Slot::Auto(1));
        }
        if self.cross {
            v.push(Slot::Cross);
        }
        if self.g2_alpha {
            v.push(Slot::G2(Variant::Alpha));
        }
        if self.g2_beta {
            v.push(Slot::G2(Variant::Beta));
        }
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    Auto(usize),
    Cross,
    G2(Variant),
}

impl Slot {
    fn kind(&self) -> (CorrelationKind, Option<usize>) {
        match *self {
            Slot::Auto(c) => (CorrelationKind::G1Alpha, Some(c)),
            Slot::Cross => (CorrelationKind::G1Beta, None),
            Slot::G2(Variant::Alpha) => (CorrelationKind::G2Alpha, None),
            Slot::G2(Variant::Beta) => (CorrelationKind::G2Beta, None),
        }
    }
}

/// The estimates produced by one pass of [`correlate`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorrelationSet {
    pub auto: [Option<CorrelationFunction>; 2],
    pub cross: Option<CorrelationFunction>,
    pub g2_alpha: Option<CorrelationFunction>,
    pub g2_beta: Option<CorrelationFunction>,
}

fn merge_opt(a: Option<CorrelationFunction>, b: Option<CorrelationFunction>) -> Result<Option<CorrelationFunction>> {
    Ok(match (a, b) {
        (Some(a), Some(b)) => Some(accumulate(&a, &b)?),
        (Some(a), None) | (None, Some(a)) => Some(a),
        (None, None) => None,
    })
}

impl CorrelationSet {
    pub fn merge(self, other: CorrelationSet) -> Result<CorrelationSet> {
        let [a0, a1] = self.auto;
        let [b0, b1] = other.auto;
        Ok(CorrelationSet {
            auto: [merge_opt(a0, b0)?, merge_opt(a1, b1)?],
            cross: merge_opt(self.cross, other.cross)?,
            g2_alpha: merge_opt(self.g2_alpha, other.g2_alpha)?,
            g2_beta: merge_opt(self.g2_beta, other.g2_beta)?,
        })
    }

    pub fn g2(&self, variant: Variant) -> Option<&CorrelationFunction> {
        match variant {
            Variant::Alpha => self.g2_alpha.as_ref(),
            Variant::Beta => self.g2_beta.as_ref(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &CorrelationFunction> {
        self.auto
            .iter()
            .chain([&self.cross, &self.g2_alpha, &self.g2_beta])
            .filter_map(|c| c.as_ref())
    }

    fn put(&mut self, slot: Slot, cf: CorrelationFunction) {
        match slot {
            Slot::Auto(c) => self.auto[c] = Some(cf),
            Slot::Cross => self.cross = Some(cf),
            Slot::G2(Variant::Alpha) => self.g2_alpha = Some(cf),
            Slot::G2(Variant::Beta) => self.g2_beta = Some(cf),
        }
    }
}

/// Bin range `[start, end)` of the base periods inside one shot.
fn base_window(records: &RecordSet, lag_periods: usize) -> Result<(usize, usize)> {
    let p = records.grid.bins_per_period;
    let k = records.grid.periods;
    let guard_periods = records.edge_guard.div_ceil(p);
    let lo = lag_periods + guard_periods;
    let needed = 2 * lo + 1;
    if k < needed {
        return Err(Error::LagWindow(format!(
            "+/-{lag_periods} periods of lag with {} guard bins need {needed} periods per shot, records have {k}",
            records.edge_guard
        )));
    }
    Ok((lo * p, (k - lo) * p))
}

fn check_records(records: &RecordSet, channels_needed: usize) -> Result<()> {
    let n = records.grid.shot_len() * records.shots;
    if records.channels.len() < channels_needed {
        return Err(Error::ChannelMismatch(format!(
            "{} channels present, {channels_needed} needed",
            records.channels.len()
        )));
    }
    for (i, ch) in records.channels.iter().enumerate() {
        if ch.len() != n {
            return Err(Error::ChannelMismatch(format!(
                "channel {i} has {} samples, expected {n}",
                ch.len()
            )));
        }
    }
    Ok(())
}

struct ShotContext {
    slots: Vec<Slot>,
    shot_len: usize,
    start: usize,
    end: usize,
    max_lag: usize,
    /// `dt / K_b`: turns a raw lagged sum into a per-period integral.
    weight: f64,
    method: TwoPointMethod,
    fwd: Option<Arc<dyn Fft<f64>>>,
    inv: Option<Arc<dyn Fft<f64>>>,
}

struct Workspace {
    full: [Vec<Complex64>; 2],
    masked: [Vec<Complex64>; 2],
    spectrum_full: [Vec<Complex64>; 2],
    spectrum_masked: [Vec<Complex64>; 2],
    product: Vec<Complex64>,
    scratch: Vec<Complex64>,
    out: Vec<Complex64>,
}

impl Workspace {
    fn new(ctx: &ShotContext) -> Self {
        let n = ctx.shot_len;
        let z = || vec![Complex64::new(0.0, 0.0); n];
        let scratch_len = ctx
            .fwd
            .as_ref()
            .map(|f| f.get_inplace_scratch_len())
            .unwrap_or(0)
            .max(ctx.inv.as_ref().map(|f| f.get_inplace_scratch_len()).unwrap_or(0));
        Self {
            full: [z(), z()],
            masked: [z(), z()],
            spectrum_full: [z(), z()],
            spectrum_masked: [z(), z()],
            product: z(),
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
            out: vec![Complex64::new(0.0, 0.0); 2 * ctx.max_lag + 1],
        }
    }
}

impl ShotContext {
    fn needs_spectra(&self) -> [bool; 2] {
        let mut need = [false; 2];
        if self.method == TwoPointMethod::Fft {
            for s in &self.slots {
                match *s {
                    Slot::Auto(c) => need[c] = true,
                    Slot::Cross => {
                        need[0] = true;
                        need[1] = true;
                    }
                    Slot::G2(_) => {}
                }
            }
        }
        need
    }

    fn load(&self, ws: &mut Workspace, records: &RecordSet, shot: usize) {
        let lo = shot * self.shot_len;
        for c in 0..2.min(records.channels.len()) {
            let src = &records.channels[c][lo..lo + self.shot_len];
            for (d, s) in ws.full[c].iter_mut().zip(src) {
                *d = Complex64::new(s.re as f64, s.im as f64);
            }
        }
        let need = self.needs_spectra();
        for (c, _) in need.iter().enumerate().filter(|(_, n)| **n) {
            let fwd = self.fwd.as_ref().expect("fft plan");
            ws.masked[c].iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            ws.masked[c][self.start..self.end].copy_from_slice(&ws.full[c][self.start..self.end]);
            ws.spectrum_full[c].copy_from_slice(&ws.full[c]);
            fwd.process_with_scratch(&mut ws.spectrum_full[c], &mut ws.scratch);
            ws.spectrum_masked[c].copy_from_slice(&ws.masked[c]);
            fwd.process_with_scratch(&mut ws.spectrum_masked[c], &mut ws.scratch);
        }
    }

    fn two_point_fft(&self, ws: &mut Workspace, a: usize, b: usize) {
        let n = self.shot_len;
        let inv = self.inv.as_ref().expect("fft plan");
        for i in 0..n {
            ws.product[i] = ws.spectrum_masked[a][i].conj() * ws.spectrum_full[b][i];
        }
        inv.process_with_scratch(&mut ws.product, &mut ws.scratch);
        let scale = self.weight / n as f64;
        let m = self.max_lag as isize;
        for (j, o) in ws.out.iter_mut().enumerate() {
            let lag = j as isize - m;
            let idx = lag.rem_euclid(n as isize) as usize;
            *o = ws.product[idx] * scale;
        }
    }

    fn two_point_direct(&self, ws: &mut Workspace, a: usize, b: usize) {
        let m = self.max_lag;
        ws.out.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        let x = &ws.full[a];
        let y = &ws.full[b];
        for t in self.start..self.end {
            let xc = x[t].conj();
            let window = &y[t - m..=t + m];
            for (o, &v) in ws.out.iter_mut().zip(window) {
                *o += xc * v;
            }
        }
        ws.out.iter_mut().for_each(|v| *v *= self.weight);
    }

    fn four_point(&self, ws: &mut Workspace, variant: Variant) {
        let m = self.max_lag;
        ws.out.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        let (c, d) = (&ws.full[0], &ws.full[1]);
        match variant {
            Variant::Beta => {
                // conj(C_t) conj(C_s) D_s D_t factorizes into X_t X_s with X = conj(C) D.
                let x: Vec<Complex64> = c.iter().zip(d).map(|(c, d)| c.conj() * d).collect();
                for t in self.start..self.end {
                    let xt = x[t];
                    for (o, &v) in ws.out.iter_mut().zip(&x[t - m..=t + m]) {
                        *o += xt * v;
                    }
                }
            }
            Variant::Alpha => {
                let ic: Vec<f64> = c.iter().map(|v| v.norm_sqr()).collect();
                let id: Vec<f64> = d.iter().map(|v| v.norm_sqr()).collect();
                let mut acc = vec![0.0f64; 2 * m + 1];
                for t in self.start..self.end {
                    let a = ic[t];
                    for (o, &v) in acc.iter_mut().zip(&id[t - m..=t + m]) {
                        *o += a * v;
                    }
                }
                for (o, a) in ws.out.iter_mut().zip(acc) {
                    *o = Complex64::new(a, 0.0);
                }
            }
        }
        ws.out.iter_mut().for_each(|v| *v *= self.weight);
    }

    fn estimate(&self, ws: &mut Workspace, slot: Slot) {
        match (slot, self.method) {
            (Slot::Auto(c), TwoPointMethod::Fft) => {
                self.two_point_fft(ws, c, c);
                let power: f64 = ws.full[c][self.start..self.end].iter().map(|v| v.norm_sqr()).sum();
                ws.out[self.max_lag] = Complex64::new(power * self.weight, 0.0);
            }
            (Slot::Auto(c), TwoPointMethod::Direct) => {
                self.two_point_direct(ws, c, c);
                let v = ws.out[self.max_lag];
                ws.out[self.max_lag] = Complex64::new(v.re, 0.0);
            }
            (Slot::Cross, TwoPointMethod::Fft) => self.two_point_fft(ws, 0, 1),
            (Slot::Cross, TwoPointMethod::Direct) => self.two_point_direct(ws, 0, 1),
            (Slot::G2(v), _) => self.four_point(ws, v),
        }
    }
}

/// Estimates every requested correlation in one pass over the shots.
pub fn correlate(records: &RecordSet, request: CorrelationRequest, opts: EstimatorOptions) -> Result<CorrelationSet> {
    let slots = request.slots();
    let needs_two_channels = slots.iter().any(|s| !matches!(s, Slot::Auto(0)));
    check_records(records, if needs_two_channels { 2 } else { 1 })?;
    let (start, end) = base_window(records, opts.lag_periods)?;
    let p = records.grid.bins_per_period;
    let grid = LagGrid::new(records.grid.dt, p, opts.lag_periods);
    let shot_len = records.grid.shot_len();
    let base_periods = (end - start) / p;

    let (fwd, inv) = if opts.method == TwoPointMethod::Fft {
        let mut planner = FftPlanner::new();
        (Some(planner.plan_fft_forward(shot_len)), Some(planner.plan_fft_inverse(shot_len)))
    } else {
        (None, None)
    };
    let ctx = ShotContext {
        slots: slots.clone(),
        shot_len,
        start,
        end,
        max_lag: grid.max_lag(),
        weight: records.grid.dt / base_periods as f64,
        method: opts.method,
        fwd,
        inv,
    };

    let chunks: Vec<(usize, usize)> = (0..records.shots)
        .step_by(CHUNK_SHOTS)
        .map(|s| (s, (s + CHUNK_SHOTS).min(records.shots)))
        .collect();
    let partial: Vec<Vec<Accumulator>> = chunks
        .par_iter()
        .map(|&(s0, s1)| {
            let mut ws = Workspace::new(&ctx);
            let mut accs: Vec<Accumulator> = slots.iter().map(|_| Accumulator::new(grid.len())).collect();
            for shot in s0..s1 {
                ctx.load(&mut ws, records, shot);
                for (acc, &slot) in accs.iter_mut().zip(&slots) {
                    ctx.estimate(&mut ws, slot);
                    acc.push(&ws.out);
                }
            }
            accs
        })
        .collect();

    let digest = hex::encode(records.config_digest);
    let mut per_slot: Vec<Vec<Accumulator>> = slots.iter().map(|_| Vec::with_capacity(partial.len())).collect();
    for accs in partial {
        for (dst, acc) in per_slot.iter_mut().zip(accs) {
            dst.push(acc);
        }
    }
    let mut set = CorrelationSet::default();
    for (slot, accs) in slots.iter().zip(per_slot) {
        let (kind, channel) = slot.kind();
        let acc = tree_reduce(accs, grid.len());
        set.put(*slot, acc.into_function(kind, channel, grid, &digest));
    }
    Ok(set)
}

/// Period-integrated two-point estimate `Γ⁽¹⁾`.
pub fn gamma1(records: &RecordSet, mode: TwoPointMode, opts: EstimatorOptions) -> Result<CorrelationFunction> {
    let mut req = CorrelationRequest::default();
    match mode {
        TwoPointMode::Auto(c) if c < 2 => req.auto[c] = true,
        TwoPointMode::Auto(c) => return Err(Error::Invalid(format!("channel {c} out of range"))),
        TwoPointMode::Cross => req.cross = true,
    }
    let set = correlate(records, req, opts)?;
    Ok(match mode {
        TwoPointMode::Auto(c) => set.auto[c].clone(),
        TwoPointMode::Cross => set.cross,
    }
    .expect("requested estimate present"))
}

/// Period-integrated four-point estimate `Γ⁽²⁾`.
pub fn gamma2(records: &RecordSet, variant: Variant, opts: EstimatorOptions) -> Result<CorrelationFunction> {
    let set = correlate(records, CorrelationRequest::default().with_g2(variant), opts)?;
    Ok(match variant {
        Variant::Alpha => set.g2_alpha,
        Variant::Beta => set.g2_beta,
    }
    .expect("requested estimate present"))
}

/// Jackknife mean and standard error of a scalar statistic over independent
/// partial estimates (for example, estimates over disjoint groups of shots).
pub fn jackknife<F>(parts: &[CorrelationFunction], stat: F) -> Result<(f64, f64)>
where
    F: Fn(&CorrelationFunction) -> f64,
{
    let g = parts.len();
    if g < 2 {
        return Err(Error::Invalid("jackknife needs at least two groups".into()));
    }
    let mut leave_out = Vec::with_capacity(g);
    for skip in 0..g {
        let mut acc: Option<CorrelationFunction> = None;
        for (i, p) in parts.iter().enumerate() {
            if i == skip {
                continue;
            }
            acc = Some(match acc {
                None => p.clone(),
                Some(a) => accumulate(&a, p)?,
            });
        }
        leave_out.push(stat(&acc.expect("two or more groups")));
    }
    let mut all = parts[0].clone();
    for p in &parts[1..] {
        all = accumulate(&all, p)?;
    }
    let full = stat(&all);
    let mean_lo = leave_out.iter().sum::<f64>() / g as f64;
    let var = leave_out.iter().map(|v| (v - mean_lo).powi(2)).sum::<f64>() * (g as f64 - 1.0) / g as f64;
    Ok((g as f64 * full - (g as f64 - 1.0) * mean_lo, var.sqrt()))
}

/// Converts an `f32` sample to double precision.
#[inline]
pub fn widen(v: Complex32) -> Complex64 {
    Complex64::new(v.re as f64, v.im as f64)
}
