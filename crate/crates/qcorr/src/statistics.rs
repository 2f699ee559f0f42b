//! Sample-count requirements for estimating correlations buried in noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance of [`confidence_two_point`].
pub const QUADRATURE_TOL: f64 = 1e-6;

const MAX_PERIODS: usize = 200_000;
const MAX_BISECTIONS: usize = 40;
const WYNN_DEPTH: usize = 48;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundVariant {
    Real,
    Complex,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundQuery {
    pub m: u32,
    pub sigma: f64,
    pub epsilon: f64,
    /// Probability that the sample mean stays within `±ε/2`.
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repetitions: Option<u64>,
}

impl BoundQuery {
    pub fn new(m: u32, sigma: f64, epsilon: f64, confidence: f64) -> Self {
        Self {
            m,
            sigma,
            epsilon,
            confidence,
            repetitions: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Invalid("correlation order m must be positive".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Invalid(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Invalid(format!("confidence must lie in (0, 1), got {}", self.confidence)));
        }
        if self.repetitions == Some(0) {
            return Err(Error::Invalid("repetitions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepetitionBound {
    /// The bound as a real number.
    pub bound: f64,
    /// Smallest integer repetition count meeting the bound.
    pub repetitions: u64,
}

/// Characteristic function of the product of two independent `N(0, σ²)` variables.
pub fn char_fn(u: f64, sigma: f64) -> f64 {
    (1.0 + u * u * sigma.powi(4)).sqrt().recip()
}

/// Characteristic function of the mean of `r` such products.
pub fn char_fn_mean(u: f64, sigma: f64, r: u64) -> f64 {
    let r = r as f64;
    // φ(U/R)^R evaluated in log space so large R neither underflows nor overflows.
    (-0.5 * r * (u / r * sigma * sigma).powi(2).ln_1p()).exp()
}

/// Worst-case repetitions from Chebyshev's inequality.
pub fn chebyshev_repetitions(query: &BoundQuery, variant: BoundVariant) -> Result<RepetitionBound> {
    query.validate()?;
    let failure = 1.0 - query.confidence;
    let spread = query.sigma.powi(2 * query.m as i32);
    let eps2 = query.epsilon * query.epsilon;
    let bound = match variant {
        BoundVariant::Real => 4.0 * spread / (eps2 * failure),
        BoundVariant::Complex => 8.0 * query.m as f64 * spread / (eps2 * failure),
    };
    // Absorb the rounding of decimal inputs such as 1 - 0.95.
    let repetitions = (bound * (1.0 - 1e-9)).ceil().max(1.0) as u64;
    Ok(RepetitionBound { bound, repetitions })
}

// Gauss-Kronrod 7/15 nodes and weights on [-1, 1].
#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let pair = f(c - x) + f(c + x);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

fn adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: usize) -> Result<f64> {
    let (value, err) = gk15(f, a, b);
    if err <= tol {
        return Ok(value);
    }
    if depth >= MAX_BISECTIONS {
        return Err(Error::Quadrature(format!(
            "interval [{a}, {b}] still has error estimate {err:e} after {depth} bisections"
        )));
    }
    let c = 0.5 * (a + b);
    Ok(adaptive(f, a, c, 0.5 * tol, depth + 1)? + adaptive(f, c, b, 0.5 * tol, depth + 1)?)
}

/// Wynn's epsilon algorithm applied to a growing sequence of partial sums.
#[derive(Default)]
struct Wynn {
    /// Last row of the epsilon table, `e[0]` being the newest partial sum.
    row: Vec<f64>,
}

impl Wynn {
    /// Pushes a partial sum and returns the current extrapolation.
    fn push(&mut self, s: f64) -> f64 {
        let mut next = Vec::with_capacity(self.row.len() + 1);
        next.push(s);
        let mut prev_minus = 0.0;
        for (k, &old) in self.row.iter().enumerate().take(WYNN_DEPTH) {
            let diff = next[k] - old;
            let val = if diff == 0.0 { f64::INFINITY } else { prev_minus + 1.0 / diff };
            prev_minus = old;
            if !val.is_finite() {
                break;
            }
            next.push(val);
        }
        self.row = next;
        let even = (self.row.len() - 1) & !1;
        self.row[even]
    }
}

/// `Pr(|mean of R products of two N(0,σ²)| < ε/2)` by Fourier inversion of
/// the characteristic function.
///
/// The integrand is split at the zeros of `sin(εU/2)`; the resulting
/// alternating series of interval integrals is summed with Wynn's epsilon
/// acceleration to absolute tolerance [`QUADRATURE_TOL`].
pub fn confidence_two_point(epsilon: f64, r: u64, sigma: f64) -> Result<f64> {
    if r == 0 {
        return Err(Error::Invalid("R must be at least 1".into()));
    }
    if epsilon.is_nan() || sigma.is_nan() || epsilon <= 0.0 || sigma <= 0.0 {
        return Err(Error::Invalid("epsilon and sigma must be positive".into()));
    }
    if epsilon.is_infinite() {
        return Ok(1.0);
    }
    let a = 0.5 * epsilon;
    let f = move |u: f64| {
        let sinc = if u == 0.0 { a } else { (a * u).sin() / u };
        char_fn_mean(u, sigma, r) * sinc
    };
    let width = std::f64::consts::PI / a;
    let local_tol = 0.01 * QUADRATURE_TOL;
    let mut partial = 0.0;
    let mut wynn = Wynn::default();
    let mut history: Vec<f64> = Vec::new();
    for k in 0..MAX_PERIODS {
        let piece = adaptive(&f, k as f64 * width, (k + 1) as f64 * width, local_tol, 0)?;
        partial += piece;
        let estimate = wynn.push(partial);
        history.push(estimate);
        let n = history.len();
        if piece.abs() < 0.1 * local_tol {
            return Ok((2.0 / std::f64::consts::PI * partial).clamp(0.0, 1.0));
        }
        if n >= 8 {
            let spread = history[n - 4..].iter().fold(0.0f64, |m, v| m.max((v - history[n - 1]).abs()));
            if spread * 2.0 / std::f64::consts::PI < 0.1 * QUADRATURE_TOL {
                return Ok((2.0 / std::f64::consts::PI * estimate).clamp(0.0, 1.0));
            }
        }
    }
    Err(Error::Quadrature(format!(
        "tail did not converge after {MAX_PERIODS} half-periods (epsilon={epsilon}, R={r}, sigma={sigma}); last estimate {}",
        history.last().copied().unwrap_or(f64::NAN) * 2.0 / std::f64::consts::PI
    )))
}

/// Monte Carlo frequency with which the mean of `r` products of `m`
/// independent noise variables reaches `ε/2` in magnitude.
///
/// For the complex variant the real and imaginary parts of each factor are
/// independent `N(0, σ²)`, and a trial fails if either part of the mean
/// reaches `ε/2`. Each trial draws from its own stream, so results are
/// independent of the thread count.
pub fn empirical_failure_rate(
    m: u32,
    sigma: f64,
    epsilon: f64,
    r: u64,
    trials: u64,
    seed: u64,
    variant: BoundVariant,
) -> Result<f64> {
    if trials < 100 {
        return Err(Error::Invalid(format!("at least 100 trials are required, got {trials}")));
    }
    if m == 0 || r == 0 {
        return Err(Error::Invalid("m and R must be positive".into()));
    }
    if sigma == 0.0 {
        return Ok(0.0);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Invalid(e.to_string()))?;
    let half = 0.5 * epsilon;
    let failures: u64 = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial);
            let failed = match variant {
                BoundVariant::Real => {
                    let mut sum = 0.0;
                    for _ in 0..r {
                        let mut p = 1.0;
                        for _ in 0..m {
                            p *= normal.sample(&mut rng);
                        }
                        sum += p;
                    }
                    (sum / r as f64).abs() >= half
                }
                BoundVariant::Complex => {
                    let mut sum = num_complex::Complex64::new(0.0, 0.0);
                    for _ in 0..r {
                        let mut p = num_complex::Complex64::new(1.0, 0.0);
                        for _ in 0..m {
                            p *= num_complex::Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
                        }
                        sum += p;
                    }
                    let mean = sum / r as f64;
                    mean.re.abs() >= half || mean.im.abs() >= half
                }
            };
            u64::from(failed)
        })
        .sum();
    Ok(failures as f64 / trials as f64)
}
