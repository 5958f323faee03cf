//! RCT-AF activations and baselines with first and second derivatives.
//!
//! RCT-AF starts from a sharpened softplus `ln(1 + e^{αx}) / α` (β = 0) and
//! applies `g ↦ g' · x` once (β = 1) or twice (β = 2). Every derivative below
//! is written in terms of `t = e^{-|αx|} ∈ (0, 1]`, so nothing overflows for
//! large `α·|x|`, and σ'' is computed from `|αx|` only, which makes it exactly
//! even in `x`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const DEFAULT_LEAKY_SLOPE: f64 = 0.01;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn default_leaky_slope() -> f64 {
    DEFAULT_LEAKY_SLOPE
}

/// Description of one activation function.
///
/// Serialized as `{"kind": "rct_af", "alpha": 14.0, "beta": 1}` or
/// `{"kind": "gelu"}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", try_from = "SpecRepr", into = "SpecRepr")]
pub enum ActivationSpec {
    RctAf { alpha: f64, beta: u8 },
    Relu,
    LeakyRelu { slope: f64 },
    Elu,
    Gelu,
    Swish,
    Mish,
    Softplus,
}

// Unvalidated mirror used for (de)serialization.
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum SpecRepr {
    RctAf {
        alpha: f64,
        beta: u8,
    },
    Relu,
    LeakyRelu {
        #[serde(default = "default_leaky_slope")]
        slope: f64,
    },
    Elu,
    Gelu,
    Swish,
    Mish,
    Softplus,
}

impl TryFrom<SpecRepr> for ActivationSpec {
    type Error = Error;

    fn try_from(r: SpecRepr) -> Result<Self> {
        let spec = match r {
            SpecRepr::RctAf { alpha, beta } => ActivationSpec::RctAf { alpha, beta },
            SpecRepr::Relu => ActivationSpec::Relu,
            SpecRepr::LeakyRelu { slope } => ActivationSpec::LeakyRelu { slope },
            SpecRepr::Elu => ActivationSpec::Elu,
            SpecRepr::Gelu => ActivationSpec::Gelu,
            SpecRepr::Swish => ActivationSpec::Swish,
            SpecRepr::Mish => ActivationSpec::Mish,
            SpecRepr::Softplus => ActivationSpec::Softplus,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<ActivationSpec> for SpecRepr {
    fn from(s: ActivationSpec) -> Self {
        match s {
            ActivationSpec::RctAf { alpha, beta } => SpecRepr::RctAf { alpha, beta },
            ActivationSpec::Relu => SpecRepr::Relu,
            ActivationSpec::LeakyRelu { slope } => SpecRepr::LeakyRelu { slope },
            ActivationSpec::Elu => SpecRepr::Elu,
            ActivationSpec::Gelu => SpecRepr::Gelu,
            ActivationSpec::Swish => SpecRepr::Swish,
            ActivationSpec::Mish => SpecRepr::Mish,
            ActivationSpec::Softplus => SpecRepr::Softplus,
        }
    }
}

/// Pointwise activation used by the network code.
///
/// `curvature` is only meaningful when `twice_differentiable` is true.
/// Implemented by [`ActivationSpec`]; tests substitute other implementations
/// (for instance the identity) to isolate terms of the Hessian.
pub trait Activation: Sync {
    fn value(&self, x: f64) -> f64;
    fn slope(&self, x: f64) -> f64;
    fn curvature(&self, x: f64) -> f64;
    fn twice_differentiable(&self) -> bool;
    fn label(&self) -> String;
}

/// First derivative, with a flag set where only a one-sided derivative exists.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slope {
    pub value: f64,
    pub subgradient: bool,
}

/// Largest `|σ''|`, or unbounded for activations with a kink.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CurvatureBound {
    Finite(f64),
    Unbounded,
}

impl CurvatureBound {
    pub fn finite(self) -> Option<f64> {
        match self {
            CurvatureBound::Finite(v) => Some(v),
            CurvatureBound::Unbounded => None,
        }
    }

    pub fn is_unbounded(self) -> bool {
        matches!(self, CurvatureBound::Unbounded)
    }
}

impl fmt::Display for CurvatureBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CurvatureBound::Finite(v) => match f.precision() {
                Some(p) => write!(f, "{v:.p$}"),
                None => write!(f, "{v}"),
            },
            CurvatureBound::Unbounded => f.write_str("inf"),
        }
    }
}

impl Serialize for CurvatureBound {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            CurvatureBound::Finite(v) => s.serialize_f64(*v),
            CurvatureBound::Unbounded => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for CurvatureBound {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(CurvatureBound::Finite(v)),
            Raw::Str(s) if s == "inf" => Ok(CurvatureBound::Unbounded),
            Raw::Str(s) => Err(serde::de::Error::custom(format!(
                "expected a number or \"inf\", got {s:?}"
            ))),
        }
    }
}

/// Where an activation's second derivative peaks in absolute value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureProfile {
    pub spec: ActivationSpec,
    pub argmax_x: f64,
    pub max_abs_d2: CurvatureBound,
    /// Result of the numerical search; equals `max_abs_d2` for baselines and
    /// is the independent check of the analytic value for RCT-AF.
    pub grid_max: Option<f64>,
}

impl ActivationSpec {
    /// Validated RCT-AF constructor.
    pub fn rct_af(alpha: f64, beta: u8) -> Result<Self> {
        let s = ActivationSpec::RctAf { alpha, beta };
        s.validate()?;
        Ok(s)
    }

    pub fn leaky_relu() -> Self {
        ActivationSpec::LeakyRelu {
            slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    /// The baselines compared in the curvature table, in table order.
    pub fn baselines() -> Vec<ActivationSpec> {
        vec![
            ActivationSpec::Relu,
            ActivationSpec::leaky_relu(),
            ActivationSpec::Elu,
            ActivationSpec::Gelu,
            ActivationSpec::Swish,
            ActivationSpec::Mish,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ActivationSpec::RctAf { alpha, beta } => {
                if !(alpha.is_finite() && alpha > 0.0) {
                    return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
                }
                if beta > 2 {
                    return Err(Error::Domain(format!("beta must be 0, 1 or 2, got {beta}")));
                }
            }
            ActivationSpec::LeakyRelu { slope } if !slope.is_finite() => {
                return Err(Error::Domain(format!("leaky slope must be finite, got {slope}")));
            }
            _ => {}
        }
        Ok(())
    }

    /// ReLU and LeakyReLU have a kink at 0; everything else has a second
    /// derivative everywhere (ELU uses its left limit at 0).
    pub fn is_twice_differentiable(&self) -> bool {
        !matches!(self, ActivationSpec::Relu | ActivationSpec::LeakyRelu { .. })
    }

    /// σ(x).
    pub fn eval(&self, x: f64) -> Result<f64> {
        check_input(x)?;
        Ok(self.value(x))
    }

    /// σ'(x). At the kink of ReLU/LeakyReLU the right-hand derivative is
    /// returned with `subgradient` set.
    pub fn d1(&self, x: f64) -> Result<Slope> {
        check_input(x)?;
        let subgradient = matches!(self, ActivationSpec::Relu | ActivationSpec::LeakyRelu { .. }) && x == 0.0;
        Ok(Slope {
            value: self.slope(x),
            subgradient,
        })
    }

    /// σ''(x).
    pub fn d2(&self, x: f64) -> Result<f64> {
        check_input(x)?;
        if !self.is_twice_differentiable() {
            return Err(Error::UnsupportedActivation(self.to_string()));
        }
        Ok(self.curvature(x))
    }

    /// Location and value of `max |σ''|`.
    ///
    /// RCT-AF uses the closed form (α/4, α/2, α at x = 0 for β = 0, 1, 2) and
    /// cross-checks it with a grid search over `[-20/α, 20/α]`. Smooth
    /// baselines are searched numerically; kinked ones are unbounded.
    pub fn max_abs_d2(&self) -> CurvatureProfile {
        match *self {
            ActivationSpec::Relu | ActivationSpec::LeakyRelu { .. } => CurvatureProfile {
                spec: *self,
                argmax_x: 0.0,
                max_abs_d2: CurvatureBound::Unbounded,
                grid_max: None,
            },
            ActivationSpec::RctAf { alpha, beta } => {
                let analytic = rct_af_peak_curvature(alpha, beta);
                let w = 20.0 / alpha;
                let (gx, gv) = search_max_abs_d2(self, -w, w, 4001);
                // The analytic peak stands unless the search contradicts it.
                let (argmax_x, value) = if gv > analytic * (1.0 + 1e-9) {
                    (gx, gv)
                } else {
                    (0.0, analytic)
                };
                CurvatureProfile {
                    spec: *self,
                    argmax_x,
                    max_abs_d2: CurvatureBound::Finite(value),
                    grid_max: Some(gv),
                }
            }
            _ => {
                let (x, v) = search_max_abs_d2(self, -20.0, 20.0, 8001);
                CurvatureProfile {
                    spec: *self,
                    argmax_x: x,
                    max_abs_d2: CurvatureBound::Finite(v),
                    grid_max: Some(v),
                }
            }
        }
    }
}

/// α giving RCT-AF of depth `beta` a peak `|σ''|` of `target`.
pub fn alpha_for_curvature(beta: u8, target: f64) -> Result<f64> {
    if !(target.is_finite() && target > 0.0) {
        return Err(Error::Domain(format!(
            "curvature target must be positive, got {target}"
        )));
    }
    match beta {
        0 => Ok(4.0 * target),
        1 => Ok(2.0 * target),
        2 => Ok(target),
        _ => Err(Error::Domain(format!("beta must be 0, 1 or 2, got {beta}"))),
    }
}

/// Peak `|σ''|` of RCT-AF, attained at x = 0.
pub fn rct_af_peak_curvature(alpha: f64, beta: u8) -> f64 {
    match beta {
        0 => alpha / 4.0,
        1 => alpha / 2.0,
        _ => alpha,
    }
}

fn check_input(x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("activation input must be finite, got {x}")))
    }
}

/// Dense grid search for `max |σ''|` followed by golden-section refinement
/// around the best grid point. Returns `(argmax, value)`.
pub fn search_max_abs_d2<A: Activation + ?Sized>(act: &A, lo: f64, hi: f64, n: usize) -> (f64, f64) {
    assert!(n >= 2 && hi > lo);
    let span = hi - lo;
    let mut best = (lo, act.curvature(lo).abs());
    for i in 1..n {
        let x = lo + span * (i as f64 / (n - 1) as f64);
        let v = act.curvature(x).abs();
        if v > best.1 {
            best = (x, v);
        }
    }
    let step = span / (n - 1) as f64;
    let (rx, rv) = golden_max(
        |x| act.curvature(x).abs(),
        (best.0 - step).max(lo),
        (best.0 + step).min(hi),
    );
    if rv > best.1 {
        (rx, rv)
    } else {
        best
    }
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..100 {
        if (b - a).abs() < 1e-13 {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Logistic function and scaled derivatives at `u = αx`, all expressed
/// through `t = e^{-|u|}`.
struct Logistic {
    u: f64,
    /// s(u)
    s: f64,
    /// s'(u) = s(1 - s)
    s1: f64,
    /// u · s''(u)
    u_s2: f64,
    /// u² · s'''(u)
    u2_s3: f64,
}

impl Logistic {
    fn at(u: f64) -> Self {
        let a = u.abs();
        let t = (-a).exp();
        let one_t = 1.0 + t;
        let s = if u >= 0.0 { 1.0 / one_t } else { t / one_t };
        let s1 = t / (one_t * one_t);
        // s'' = s'(1 - 2s) = -sign(u) s' (1 - t)/(1 + t), so u s'' depends on |u| only.
        let u_s2 = -a * s1 * (1.0 - t) / one_t;
        let u2_s3 = a * a * s1 * (1.0 - 6.0 * s1);
        Logistic { u, s, s1, u_s2, u2_s3 }
    }
}

fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

fn rct_value(alpha: f64, beta: u8, x: f64) -> f64 {
    let u = alpha * x;
    match beta {
        0 => softplus(u) / alpha,
        1 => x * Logistic::at(u).s,
        _ => {
            let l = Logistic::at(u);
            x * (l.s + u * l.s1)
        }
    }
}

fn rct_slope(alpha: f64, beta: u8, x: f64) -> f64 {
    let l = Logistic::at(alpha * x);
    match beta {
        0 => l.s,
        1 => l.s + l.u * l.s1,
        _ => l.s + 3.0 * l.u * l.s1 + l.u * l.u_s2,
    }
}

fn rct_curvature(alpha: f64, beta: u8, x: f64) -> f64 {
    let l = Logistic::at(alpha * x);
    match beta {
        0 => alpha * l.s1,
        1 => alpha * (2.0 * l.s1 + l.u_s2),
        _ => alpha * (4.0 * l.s1 + 5.0 * l.u_s2 + l.u2_s3),
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// tanh(softplus(x)) and sech²(softplus(x)) for Mish, without overflow.
fn mish_parts(x: f64) -> (f64, f64) {
    let sp = softplus(x);
    let e = (-2.0 * sp).exp();
    let omega = (1.0 - e) / (1.0 + e);
    let sech2 = 4.0 * e / ((1.0 + e) * (1.0 + e));
    (omega, sech2)
}

impl Activation for ActivationSpec {
    fn value(&self, x: f64) -> f64 {
        match *self {
            ActivationSpec::RctAf { alpha, beta } => rct_value(alpha, beta, x),
            ActivationSpec::Relu => x.max(0.0),
            ActivationSpec::LeakyRelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            ActivationSpec::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            ActivationSpec::Gelu => x * std_normal_cdf(x),
            ActivationSpec::Swish => rct_value(1.0, 1, x),
            ActivationSpec::Mish => x * mish_parts(x).0,
            ActivationSpec::Softplus => rct_value(1.0, 0, x),
        }
    }

    fn slope(&self, x: f64) -> f64 {
        match *self {
            ActivationSpec::RctAf { alpha, beta } => rct_slope(alpha, beta, x),
            ActivationSpec::Relu => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationSpec::LeakyRelu { slope } => {
                if x >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            ActivationSpec::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            ActivationSpec::Gelu => std_normal_cdf(x) + x * std_normal_pdf(x),
            ActivationSpec::Swish => rct_slope(1.0, 1, x),
            ActivationSpec::Mish => {
                let (omega, sech2) = mish_parts(x);
                let s = Logistic::at(x).s;
                omega + x * sech2 * s
            }
            ActivationSpec::Softplus => rct_slope(1.0, 0, x),
        }
    }

    fn curvature(&self, x: f64) -> f64 {
        match *self {
            ActivationSpec::RctAf { alpha, beta } => rct_curvature(alpha, beta, x),
            ActivationSpec::Relu | ActivationSpec::LeakyRelu { .. } => {
                if x == 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
            ActivationSpec::Elu => {
                if x > 0.0 {
                    0.0
                } else {
                    x.exp()
                }
            }
            ActivationSpec::Gelu => std_normal_pdf(x) * (2.0 - x * x),
            ActivationSpec::Swish => rct_curvature(1.0, 1, x),
            ActivationSpec::Mish => {
                let (omega, sech2) = mish_parts(x);
                let s = Logistic::at(x).s;
                sech2 * s * (2.0 + x * ((1.0 - s) - 2.0 * omega * s))
            }
            ActivationSpec::Softplus => rct_curvature(1.0, 0, x),
        }
    }

    fn twice_differentiable(&self) -> bool {
        self.is_twice_differentiable()
    }

    fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ActivationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActivationSpec::RctAf { alpha, beta } => write!(f, "rct_af:{alpha}:{beta}"),
            ActivationSpec::Relu => f.write_str("relu"),
            ActivationSpec::LeakyRelu { slope } => write!(f, "leaky_relu:{slope}"),
            ActivationSpec::Elu => f.write_str("elu"),
            ActivationSpec::Gelu => f.write_str("gelu"),
            ActivationSpec::Swish => f.write_str("swish"),
            ActivationSpec::Mish => f.write_str("mish"),
            ActivationSpec::Softplus => f.write_str("softplus"),
        }
    }
}

/// Parses either the JSON form or the short form `rct_af:<alpha>:<beta>`,
/// `leaky_relu[:<slope>]`, `gelu`, ...
impl FromStr for ActivationSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.starts_with('{') {
            return Ok(serde_json::from_str(s)?);
        }
        let mut parts = s.split(':');
        let kind = parts.next().unwrap_or_default().to_ascii_lowercase();
        let args: Vec<&str> = parts.collect();
        let num = |i: usize| -> Result<f64> {
            args.get(i)
                .ok_or_else(|| Error::Format(format!("missing argument {i} in {s:?}")))?
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("bad number in {s:?}: {e}")))
        };
        let no_args = |spec: ActivationSpec| -> Result<ActivationSpec> {
            if args.is_empty() {
                Ok(spec)
            } else {
                Err(Error::Format(format!("{kind} takes no arguments")))
            }
        };
        match kind.as_str() {
            "rct_af" | "rctaf" => {
                if args.len() != 2 {
                    return Err(Error::Format(format!("expected rct_af:<alpha>:<beta>, got {s:?}")));
                }
                let beta: u8 = args[1]
                    .parse()
                    .map_err(|e| Error::Format(format!("bad beta in {s:?}: {e}")))?;
                ActivationSpec::rct_af(num(0)?, beta)
            }
            "relu" => no_args(ActivationSpec::Relu),
            "leaky_relu" | "leakyrelu" => {
                let slope = if args.is_empty() { DEFAULT_LEAKY_SLOPE } else { num(0)? };
                let spec = ActivationSpec::LeakyRelu { slope };
                spec.validate()?;
                Ok(spec)
            }
            "elu" => no_args(ActivationSpec::Elu),
            "gelu" => no_args(ActivationSpec::Gelu),
            "swish" => no_args(ActivationSpec::Swish),
            "mish" => no_args(ActivationSpec::Mish),
            "softplus" => no_args(ActivationSpec::Softplus),
            _ => Err(Error::Format(format!("unknown activation {s:?}"))),
        }
    }
}
