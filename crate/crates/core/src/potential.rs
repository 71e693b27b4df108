//! Coupling potentials `V(y, m)` built from a small descriptor algebra.
//!
//! Each bounded kind carries its sup norm and the monotonicity floor
//! `gamma_K = min V_m` over a declared compact range `K = [0, range_max]`
//! as plain numbers, so solvers and checks can use them directly.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default upper end of the compact range `K` on which `gamma_K` is declared.
pub const DEFAULT_RANGE_MAX: f64 = 8.0;

/// One Fourier mode `cos_coef * cos(2 pi k.y) + sin_coef * sin(2 pi k.y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigMode {
    /// Integer wave vector; missing trailing components are zero.
    pub wave: Vec<i32>,
    #[serde(default)]
    pub cos_coef: f64,
    #[serde(default)]
    pub sin_coef: f64,
}

/// Trigonometric polynomial on the torus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicFunction {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub modes: Vec<TrigMode>,
}

impl PeriodicFunction {
    pub fn constant(c: f64) -> Self {
        Self {
            constant: c,
            modes: Vec::new(),
        }
    }

    /// `c + cos_coef cos(2 pi y1) + sin_coef sin(2 pi y1)`.
    pub fn first_harmonic(c: f64, cos_coef: f64, sin_coef: f64) -> Self {
        Self {
            constant: c,
            modes: vec![TrigMode {
                wave: vec![1],
                cos_coef,
                sin_coef,
            }],
        }
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        let mut acc = self.constant;
        for mode in &self.modes {
            let phase: f64 = mode
                .wave
                .iter()
                .zip(y)
                .map(|(&k, &yi)| k as f64 * yi)
                .sum::<f64>()
                * 2.0
                * PI;
            acc += mode.cos_coef * phase.cos() + mode.sin_coef * phase.sin();
        }
        acc
    }

    /// Mean over the torus (the constant term, since nonzero modes average out).
    pub fn mean(&self) -> f64 {
        self.constant
            + self
                .modes
                .iter()
                .filter(|m| m.wave.iter().all(|&k| k == 0))
                .map(|m| m.cos_coef)
                .sum::<f64>()
    }

    /// `c + sum(|a| + |b|)`, an upper bound on `sup |f|` when `c >= 0`.
    pub fn upper_bound(&self) -> f64 {
        self.constant + self.modes.iter().map(|m| m.cos_coef.abs() + m.sin_coef.abs()).sum::<f64>()
    }

    pub fn lower_bound(&self) -> f64 {
        self.constant - self.modes.iter().map(|m| m.cos_coef.abs() + m.sin_coef.abs()).sum::<f64>()
    }

    fn max_wave_dim(&self) -> usize {
        self.modes
            .iter()
            .map(|m| m.wave.iter().rposition(|&k| k != 0).map_or(0, |p| p + 1))
            .max()
            .unwrap_or(0)
    }
}

/// Bounded, increasing, concave-on-`[0, inf)` profile `g(m)` with `g(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum MonotoneFunction {
    /// `amplitude * atan(rate * m)`.
    Arctan { amplitude: f64, rate: f64 },
    /// `amplitude * tanh(rate * m)`.
    Tanh { amplitude: f64, rate: f64 },
}

impl MonotoneFunction {
    pub fn arctan() -> Self {
        MonotoneFunction::Arctan {
            amplitude: 1.0,
            rate: 1.0,
        }
    }

    pub fn eval(&self, m: f64) -> f64 {
        match *self {
            MonotoneFunction::Arctan { amplitude, rate } => amplitude * (rate * m).atan(),
            MonotoneFunction::Tanh { amplitude, rate } => amplitude * (rate * m).tanh(),
        }
    }

    pub fn derivative(&self, m: f64) -> f64 {
        match *self {
            MonotoneFunction::Arctan { amplitude, rate } => amplitude * rate / (1.0 + (rate * m).powi(2)),
            MonotoneFunction::Tanh { amplitude, rate } => {
                let c = (rate * m).cosh();
                amplitude * rate / (c * c)
            }
        }
    }

    /// `int_0^x g(s) ds` in closed form.
    pub fn primitive(&self, x: f64) -> f64 {
        match *self {
            MonotoneFunction::Arctan { amplitude, rate } => {
                let rx = rate * x;
                amplitude * (x * rx.atan() - (rx * rx).ln_1p() / (2.0 * rate))
            }
            MonotoneFunction::Tanh { amplitude, rate } => {
                // ln cosh(z) = |z| + ln(1 + e^{-2|z|}) - ln 2, stable for large |z|
                let z = (rate * x).abs();
                amplitude * (z + (-2.0 * z).exp().ln_1p() - std::f64::consts::LN_2) / rate
            }
        }
    }

    pub fn sup(&self) -> f64 {
        match *self {
            MonotoneFunction::Arctan { amplitude, .. } => amplitude * PI / 2.0,
            MonotoneFunction::Tanh { amplitude, .. } => amplitude,
        }
    }

    /// `min g'` on `[0, m_max]`, attained at `m_max`.
    pub fn min_derivative(&self, m_max: f64) -> f64 {
        self.derivative(m_max)
    }

    fn check(&self) -> Result<()> {
        let (a, r) = match *self {
            MonotoneFunction::Arctan { amplitude, rate } | MonotoneFunction::Tanh { amplitude, rate } => {
                (amplitude, rate)
            }
        };
        if !(a > 0.0 && a.is_finite() && r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "monotone profile needs positive finite amplitude and rate, got ({a}, {r})"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PotentialKind {
    /// `V(y, m) = a(y) + g(m)`.
    Separable { a: PeriodicFunction, g: MonotoneFunction },
    /// `V(y, m) = g(m)`.
    YIndependent { g: MonotoneFunction },
    Zero,
    /// `V(y, m) = v(y) + m`; unbounded, outside the standing assumptions.
    LinearExample { v: PeriodicFunction },
}

/// A validated potential together with its declared constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    /// Upper end of the compact range `K = [0, range_max]`.
    pub range_max: f64,
    /// `gamma_K`.
    pub monotonicity_floor: f64,
    /// `||V||_inf`, `None` for the unbounded linear example.
    pub sup_norm: Option<f64>,
}

impl PotentialSpec {
    pub fn new(kind: PotentialKind) -> Result<Self> {
        Self::with_range(kind, DEFAULT_RANGE_MAX)
    }

    pub fn with_range(kind: PotentialKind, range_max: f64) -> Result<Self> {
        if !(range_max > 0.0 && range_max.is_finite()) {
            return Err(Error::InvalidInput(format!("compact range end must be positive, got {range_max}")));
        }
        let (floor, sup) = match &kind {
            PotentialKind::Zero => (0.0, Some(0.0)),
            PotentialKind::YIndependent { g } => {
                g.check()?;
                (g.min_derivative(range_max), Some(g.sup()))
            }
            PotentialKind::Separable { a, g } => {
                g.check()?;
                let lower = sampled_min(a);
                if lower < -1e-12 {
                    return Err(Error::InvalidInput(format!(
                        "separable potential needs a(y) >= 0, sampled minimum {lower:e}"
                    )));
                }
                (g.min_derivative(range_max), Some(a.upper_bound() + g.sup()))
            }
            PotentialKind::LinearExample { .. } => (1.0, None),
        };
        Ok(Self {
            kind,
            range_max,
            monotonicity_floor: floor,
            sup_norm: sup,
        })
    }

    pub fn zero() -> Self {
        Self::new(PotentialKind::Zero).expect("zero potential")
    }

    /// `a(y) = 1 + cos(2 pi y1)`, `g = atan`.
    pub fn separable_default() -> Self {
        Self::new(PotentialKind::Separable {
            a: PeriodicFunction::first_harmonic(1.0, 1.0, 0.0),
            g: MonotoneFunction::arctan(),
        })
        .expect("default separable potential")
    }

    /// `g = atan`, no `y` dependence.
    pub fn y_independent_default() -> Self {
        Self::new(PotentialKind::YIndependent {
            g: MonotoneFunction::arctan(),
        })
        .expect("default y-independent potential")
    }

    /// `v(y) = 1 + sin(2 pi y1)`.
    pub fn linear_default() -> Self {
        Self::new(PotentialKind::LinearExample {
            v: PeriodicFunction::first_harmonic(1.0, 0.0, 1.0),
        })
        .expect("default linear example")
    }

    /// Looks up a named preset.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "zero" => Ok(Self::zero()),
            "separable-default" => Ok(Self::separable_default()),
            "y-independent" | "y-independent-default" => Ok(Self::y_independent_default()),
            "linear-default" => Ok(Self::linear_default()),
            other => Err(Error::Config(format!(
                "unknown potential preset '{other}' (expected zero, separable-default, y-independent, linear-default)"
            ))),
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.sup_norm.is_some()
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, PotentialKind::Zero)
    }

    /// True when `V` does not depend on `y`.
    pub fn is_y_independent(&self) -> bool {
        match &self.kind {
            PotentialKind::Zero | PotentialKind::YIndependent { .. } => true,
            PotentialKind::Separable { a, .. } => a.modes.iter().all(|m| m.wave.iter().all(|&k| k == 0)),
            PotentialKind::LinearExample { v } => v.modes.iter().all(|m| m.wave.iter().all(|&k| k == 0)),
        }
    }

    /// Smallest grid dimension the descriptor makes sense on.
    pub fn min_dim(&self) -> usize {
        match &self.kind {
            PotentialKind::Separable { a, .. } => a.max_wave_dim(),
            PotentialKind::LinearExample { v } => v.max_wave_dim(),
            _ => 0,
        }
    }

    pub fn evaluate_v(&self, y: &[f64], m: f64) -> f64 {
        match &self.kind {
            PotentialKind::Zero => 0.0,
            PotentialKind::YIndependent { g } => g.eval(m),
            PotentialKind::Separable { a, g } => a.eval(y) + g.eval(m),
            PotentialKind::LinearExample { v } => v.eval(y) + m,
        }
    }

    pub fn evaluate_vm(&self, _y: &[f64], m: f64) -> f64 {
        match &self.kind {
            PotentialKind::Zero => 0.0,
            PotentialKind::YIndependent { g } | PotentialKind::Separable { g, .. } => g.derivative(m),
            PotentialKind::LinearExample { .. } => 1.0,
        }
    }

    /// `int_0^n V(y, alpha s) ds`, the density potential of the cell energy.
    pub fn phi_alpha(&self, y: &[f64], n: f64, alpha: f64) -> f64 {
        match &self.kind {
            PotentialKind::Zero => 0.0,
            PotentialKind::YIndependent { g } => scaled_primitive(g, n, alpha),
            PotentialKind::Separable { a, g } => a.eval(y) * n + scaled_primitive(g, n, alpha),
            PotentialKind::LinearExample { v } => v.eval(y) * n + 0.5 * alpha * n * n,
        }
    }

    /// `int_0^n [V(y, s + m_base) - V(y, m_base)] ds`, nonnegative for monotone `V`.
    pub fn phi_shifted(&self, _y: &[f64], n: f64, m_base: f64) -> f64 {
        match &self.kind {
            PotentialKind::Zero => 0.0,
            PotentialKind::YIndependent { g } | PotentialKind::Separable { g, .. } => {
                if n.abs() < 1e-3 * (1.0 + m_base.abs()) {
                    // the closed form cancels badly for tiny increments
                    gauss_integral(|s| g.eval(m_base + s) - g.eval(m_base), 0.0, n, 16)
                } else {
                    g.primitive(m_base + n) - g.primitive(m_base) - n * g.eval(m_base)
                }
            }
            PotentialKind::LinearExample { .. } => 0.5 * n * n,
        }
    }

    /// Reference value of `phi_alpha` by Gauss-Legendre quadrature with `nodes` points.
    pub fn phi_alpha_quadrature(&self, y: &[f64], n: f64, alpha: f64, nodes: usize) -> f64 {
        gauss_integral(|s| self.evaluate_v(y, alpha * s), 0.0, n, nodes)
    }

    /// Reference value of `phi_shifted` by Gauss-Legendre quadrature with `nodes` points.
    pub fn phi_shifted_quadrature(&self, y: &[f64], n: f64, m_base: f64, nodes: usize) -> f64 {
        gauss_integral(
            |s| self.evaluate_v(y, s + m_base) - self.evaluate_v(y, m_base),
            0.0,
            n,
            nodes,
        )
    }

    /// Checks the declared constants by sampling `y` on a `samples^dim` grid
    /// and `m` on `[0, range_max]`.
    pub fn validate(&self, dim: usize, samples: usize) -> Result<()> {
        let ms: Vec<f64> = (0..=samples).map(|k| self.range_max * k as f64 / samples as f64).collect();
        let ys: Vec<Vec<f64>> = if dim == 1 {
            (0..samples).map(|i| vec![i as f64 / samples as f64]).collect()
        } else {
            (0..samples * samples)
                .map(|i| vec![(i % samples) as f64 / samples as f64, (i / samples) as f64 / samples as f64])
                .collect()
        };
        for y in &ys {
            let mut prev: Option<f64> = None;
            for &m in &ms {
                let v = self.evaluate_v(y, m);
                let vm = self.evaluate_vm(y, m);
                if vm < self.monotonicity_floor * (1.0 - 1e-12) {
                    return Err(Error::InvalidInput(format!(
                        "V_m = {vm:e} below declared floor {:e} at y = {y:?}, m = {m}",
                        self.monotonicity_floor
                    )));
                }
                if let Some(sup) = self.sup_norm {
                    if v < -1e-12 || v > sup * (1.0 + 1e-12) + 1e-12 {
                        return Err(Error::InvalidInput(format!(
                            "V = {v:e} outside [0, {sup:e}] at y = {y:?}, m = {m}"
                        )));
                    }
                }
                if let Some(p) = prev {
                    if v < p {
                        return Err(Error::InvalidInput(format!("V decreasing in m at y = {y:?}, m = {m}")));
                    }
                }
                prev = Some(v);
            }
        }
        Ok(())
    }
}

fn scaled_primitive(g: &MonotoneFunction, n: f64, alpha: f64) -> f64 {
    if alpha == 0.0 {
        n * g.eval(0.0)
    } else {
        g.primitive(alpha * n) / alpha
    }
}

fn sampled_min(a: &PeriodicFunction) -> f64 {
    let dim = a.max_wave_dim().max(1);
    if a.modes.is_empty() {
        return a.constant;
    }
    let s = 256usize;
    if dim == 1 {
        (0..s).map(|i| a.eval(&[i as f64 / s as f64])).fold(f64::INFINITY, f64::min)
    } else {
        (0..s * s)
            .map(|i| a.eval(&[(i % s) as f64 / s as f64, (i / s) as f64 / s as f64]))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(points: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(points >= 1, "need at least one node");
    let n = points;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n
        let mut x = ((4 * i + 3) as f64 * PI / (4 * n + 2) as f64).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let step = p / d;
            x -= step;
            if step.abs() <= 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d.is_finite() {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// `int_a^b f` by `points`-node Gauss-Legendre quadrature.
pub fn gauss_integral(f: impl Fn(f64) -> f64, a: f64, b: f64, points: usize) -> f64 {
    let (x, w) = gauss_legendre(points);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    x.iter().zip(&w).map(|(xi, wi)| wi * f(mid + half * xi)).sum::<f64>() * half
}
