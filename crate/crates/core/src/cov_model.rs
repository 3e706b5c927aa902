//! Gaussian–Markov covariance models `R(s, t) = ρ(min(s, t)) · q(max(s, t))`.
//!
//! A model is described by its two factor functions. Built-in models are
//! Brownian motion, scaled Brownian motion and the Ornstein–Uhlenbeck process
//! started at zero; user models come from a tabulated `t,rho,q` file and are
//! interpolated with monotone cubic Hermite splines.

use std::fmt;
use std::io::Read;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{domain, BridgeError, Result};

type FactorFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum ModelKind {
    /// ρ(t) = σ²t, q ≡ 1.
    Brownian { variance_rate: f64 },
    /// ρ(t) = (σ²/2θ)(e^{θt} − e^{−θt}), q(t) = e^{−θt}.
    OuFromZero { theta: f64, sigma: f64 },
    Tabulated(Arc<Tabulated>),
    Custom { rho: FactorFn, q: FactorFn, q0: f64 },
}

/// A centered Gaussian–Markov covariance through its factor pair (ρ, q).
///
/// Immutable and cheap to clone; all evaluation is pure.
#[derive(Clone)]
pub struct CovarianceModel {
    name: String,
    kind: ModelKind,
    q_inf: Option<f64>,
}

impl fmt::Debug for CovarianceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CovarianceModel")
            .field("name", &self.name)
            .field("q_inf", &self.q_inf)
            .field("horizon", &self.horizon())
            .finish()
    }
}

impl CovarianceModel {
    /// Standard Brownian motion: `R(s, t) = min(s, t)`.
    pub fn brownian() -> Self {
        Self {
            name: "brownian".into(),
            kind: ModelKind::Brownian { variance_rate: 1.0 },
            q_inf: Some(1.0),
        }
    }

    /// Brownian motion with volatility `sigma`: `R(s, t) = σ² min(s, t)`.
    pub fn scaled_brownian(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return domain(format!("scaled-brownian needs sigma > 0, got {sigma}"));
        }
        Ok(Self {
            name: "scaled-brownian".into(),
            kind: ModelKind::Brownian {
                variance_rate: sigma * sigma,
            },
            q_inf: Some(1.0),
        })
    }

    /// Ornstein–Uhlenbeck process `dX = −θX dt + σ dW`, `X₀ = 0`.
    pub fn ou_from_zero(theta: f64, sigma: f64) -> Result<Self> {
        if !(theta.is_finite() && theta > 0.0 && sigma.is_finite() && sigma > 0.0) {
            return domain(format!(
                "ou-from-zero needs theta > 0 and sigma > 0, got theta={theta}, sigma={sigma}"
            ));
        }
        Ok(Self {
            name: "ou-from-zero".into(),
            kind: ModelKind::OuFromZero { theta, sigma },
            q_inf: Some(0.0),
        })
    }

    /// Model from closures. `q(0)` is taken from `q` when finite and positive,
    /// otherwise set to 1; `ρ(0)` is always 0.
    pub fn custom<R, Q>(name: impl Into<String>, rho: R, q: Q, q_inf: Option<f64>) -> Self
    where
        R: Fn(f64) -> f64 + Send + Sync + 'static,
        Q: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let q0 = q(0.0);
        let q0 = if q0.is_finite() && q0 > 0.0 { q0 } else { 1.0 };
        Self {
            name: name.into(),
            kind: ModelKind::Custom {
                rho: Arc::new(rho),
                q: Arc::new(q),
                q0,
            },
            q_inf,
        }
    }

    /// Tabulated model from `(t, ρ, q)` rows: `t` strictly increasing from 0,
    /// `ρ(0) = 0`, `q > 0` everywhere. Evaluation past the last row is an error.
    pub fn from_table(name: impl Into<String>, rows: &[(f64, f64, f64)]) -> Result<Self> {
        let table = Tabulated::new(rows)?;
        let q_inf = table.q.y.iter().skip(1).copied().fold(f64::INFINITY, f64::min);
        Ok(Self {
            name: name.into(),
            kind: ModelKind::Tabulated(Arc::new(table)),
            q_inf: Some(q_inf),
        })
    }

    /// Reads a CSV file with header `t,rho,q`.
    pub fn from_csv<R: Read>(name: impl Into<String>, reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["t", "rho", "q"];
        if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(BridgeError::Config(format!(
                "tabulated model header must be `t,rho,q`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut rows = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let parse = |i: usize| -> Result<f64> {
                record[i].parse::<f64>().map_err(|e| {
                    BridgeError::Config(format!("row {}: column {}: {e}", line + 2, expected[i]))
                })
            };
            rows.push((parse(0)?, parse(1)?, parse(2)?));
        }
        Self::from_table(name, &rows)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Analytic (or tabulated) infimum of `q` over `t > 0`, when known.
    pub fn q_inf(&self) -> Option<f64> {
        self.q_inf
    }

    /// Largest time the model can be evaluated at (`None` = unbounded).
    pub fn horizon(&self) -> Option<f64> {
        match &self.kind {
            ModelKind::Tabulated(tab) => tab.t.last().copied(),
            _ => None,
        }
    }

    /// Factor ρ. `ρ(0) = 0`.
    pub fn rho(&self, t: f64) -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        match &self.kind {
            ModelKind::Brownian { variance_rate } => variance_rate * t,
            ModelKind::OuFromZero { theta, sigma } => sigma * sigma * (theta * t).sinh() / theta,
            ModelKind::Tabulated(tab) => tab.rho.eval(t),
            ModelKind::Custom { rho, .. } => rho(t),
        }
    }

    /// Factor q, with `q(0)` the limit at 0⁺.
    pub fn q(&self, t: f64) -> f64 {
        match &self.kind {
            ModelKind::Brownian { .. } => 1.0,
            ModelKind::OuFromZero { theta, .. } => (-theta * t).exp(),
            ModelKind::Tabulated(tab) => tab.q.eval(t),
            ModelKind::Custom { q, q0, .. } => {
                if t == 0.0 {
                    *q0
                } else {
                    q(t)
                }
            }
        }
    }

    /// ρ(t)/q(t), strictly increasing on (0, ∞) for a valid model.
    pub fn ratio(&self, t: f64) -> f64 {
        self.rho(t) / self.q(t)
    }

    pub(crate) fn check_time(&self, t: f64) -> Result<()> {
        if !(t.is_finite() && t >= 0.0) {
            return domain(format!("time must be finite and non-negative, got {t}"));
        }
        if let Some(h) = self.horizon() {
            if t > h {
                return domain(format!(
                    "time {t} lies past the tabulated horizon {h} of model `{}`",
                    self.name
                ));
            }
        }
        Ok(())
    }

    /// Unchecked covariance evaluation.
    pub(crate) fn cov(&self, s: f64, t: f64) -> f64 {
        let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
        self.rho(lo) * self.q(hi)
    }

    /// `R(s, t) = ρ(min(s, t)) · q(max(s, t))`.
    pub fn covariance(&self, s: f64, t: f64) -> Result<f64> {
        self.check_time(s)?;
        self.check_time(t)?;
        Ok(self.cov(s, t))
    }

    /// Checks the standing assumptions on the grid `{step, 2·step, …, horizon}`.
    /// Failures are reported, never raised.
    pub fn validate(&self, horizon: f64, grid_step: f64) -> ValidationReport {
        validate(self, horizon, grid_step)
    }
}

/// Outcome of one assumption check in a [`ValidationReport`].
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub passed: bool,
    /// Grid times of the first violation (a point, pair or triple).
    pub first_violation: Option<Vec<f64>>,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub model: String,
    pub horizon: f64,
    pub grid_step: f64,
    pub grid_points: usize,
    pub checks: Vec<AssumptionCheck>,
    /// Minimum of q over the grid: the numerical estimate of `inf q`.
    pub alpha_estimate: f64,
    /// Whether `min q > 0` holds on the validated horizon.
    pub hypconv_on_horizon: bool,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    /// All hard assumptions (positivity, monotone ρ/q, Markov identity,
    /// continuity) hold on the grid. The `inf q > 0` condition is reported
    /// separately in `hypconv_on_horizon` and `warnings`.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

const MARKOV_TRIPLE_MAX_POINTS: usize = 200;

fn validate(model: &CovarianceModel, horizon: f64, grid_step: f64) -> ValidationReport {
    let mut warnings = Vec::new();
    let mut checks = Vec::new();
    let valid_args = horizon.is_finite() && grid_step.is_finite() && horizon > 0.0 && grid_step > 0.0 && grid_step < horizon;
    let n = if valid_args {
        (horizon / grid_step + 1e-9).floor() as usize
    } else {
        0
    };
    let grid: Vec<f64> = (1..=n).map(|k| k as f64 * grid_step).collect();
    if !valid_args {
        checks.push(AssumptionCheck {
            name: "arguments".into(),
            passed: false,
            first_violation: None,
            detail: format!("need horizon > 0 and 0 < grid_step < horizon, got horizon={horizon}, step={grid_step}"),
        });
    }
    let rho: Vec<f64> = grid.iter().map(|&t| model.rho(t)).collect();
    let q: Vec<f64> = grid.iter().map(|&t| model.q(t)).collect();

    // positivity of ρ and q, i.e. R(t, t) > 0
    let bad = grid
        .iter()
        .zip(rho.iter().zip(&q))
        .find(|(_, (&r, &qq))| !(r > 0.0 && qq > 0.0 && r.is_finite() && qq.is_finite()));
    checks.push(AssumptionCheck {
        name: "positivity".into(),
        passed: bad.is_none(),
        first_violation: bad.map(|(&t, _)| vec![t]),
        detail: match bad {
            Some((t, (r, qq))) => format!("rho({t}) = {r}, q({t}) = {qq}"),
            None => "rho > 0 and q > 0 on the grid".into(),
        },
    });

    // strict increase of ρ/q
    let ratio: Vec<f64> = rho.iter().zip(&q).map(|(r, qq)| r / qq).collect();
    let bad = (1..grid.len()).find(|&k| !(ratio[k] > ratio[k - 1]));
    checks.push(AssumptionCheck {
        name: "ratio_monotone".into(),
        passed: bad.is_none(),
        first_violation: bad.map(|k| vec![grid[k - 1], grid[k]]),
        detail: match bad {
            Some(k) => format!(
                "rho/q({}) = {} is not below rho/q({}) = {}",
                grid[k - 1],
                ratio[k - 1],
                grid[k],
                ratio[k]
            ),
            None => "rho/q strictly increasing on the grid".into(),
        },
    });

    // Markov triple identity R(s,t)R(t,u) = R(t,t)R(s,u)
    let stride = grid.len().div_ceil(MARKOV_TRIPLE_MAX_POINTS).max(1);
    let sub: Vec<f64> = grid.iter().copied().step_by(stride).collect();
    let mut violation = None;
    'outer: for i in 0..sub.len() {
        for j in i + 1..sub.len() {
            for k in j + 1..sub.len() {
                let (s, t, u) = (sub[i], sub[j], sub[k]);
                let lhs = model.cov(s, t) * model.cov(t, u);
                let rhs = model.cov(t, t) * model.cov(s, u);
                let scale = lhs.abs().max(rhs.abs());
                if !((lhs - rhs).abs() <= 1e-12 * scale) {
                    violation = Some(vec![s, t, u]);
                    break 'outer;
                }
            }
        }
    }
    checks.push(AssumptionCheck {
        name: "markov_triple".into(),
        passed: violation.is_none(),
        first_violation: violation.clone(),
        detail: format!(
            "{} grid points checked (stride {stride}), relative tolerance 1e-12",
            sub.len()
        ),
    });

    // continuity modulus |f(t+h) − f(t)| ≤ 10(|f(t)| + 1)√h, starting from t = 0
    let mut full = vec![0.0];
    full.extend(&grid);
    let mut violation = None;
    for (label, f) in [("rho", &(|t| model.rho(t)) as &dyn Fn(f64) -> f64), ("q", &|t| model.q(t))] {
        for w in full.windows(2) {
            let (a, b) = (f(w[0]), f(w[1]));
            let h = w[1] - w[0];
            if !((b - a).abs() <= 10.0 * (a.abs() + 1.0) * h.sqrt()) {
                violation = Some((label, w[0], w[1]));
                break;
            }
        }
        if violation.is_some() {
            break;
        }
    }
    checks.push(AssumptionCheck {
        name: "continuity".into(),
        passed: violation.is_none(),
        first_violation: violation.map(|(_, a, b)| vec![a, b]),
        detail: match violation {
            Some((label, a, b)) => format!("{label} jumps between {a} and {b}"),
            None => "no jump above 10(|f|+1)sqrt(h)".into(),
        },
    });

    let alpha_estimate = q.iter().copied().fold(f64::INFINITY, f64::min);
    let hypconv_on_horizon = alpha_estimate.is_finite() && alpha_estimate > 0.0;
    if !hypconv_on_horizon {
        warnings.push(format!("min q over the grid is {alpha_estimate}: inf q > 0 fails on the horizon"));
    }
    match model.q_inf() {
        Some(a) if a <= 0.0 => warnings.push(format!(
            "min q over (0, {horizon}] is {alpha_estimate:e}, but inf q over (0, inf) is 0; \
             convergence results relying on inf q > 0 hold only on bounded horizons"
        )),
        None => warnings.push("inf q over (0, inf) is not known analytically; only the grid estimate is available".into()),
        _ => {}
    }

    ValidationReport {
        model: model.name.clone(),
        horizon,
        grid_step,
        grid_points: grid.len(),
        checks,
        alpha_estimate,
        hypconv_on_horizon,
        warnings,
    }
}

struct Tabulated {
    t: Vec<f64>,
    rho: Pchip,
    q: Pchip,
}

impl Tabulated {
    fn new(rows: &[(f64, f64, f64)]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(BridgeError::Config("tabulated model needs at least two rows".into()));
        }
        if rows[0].0 != 0.0 {
            return Err(BridgeError::Config(format!("tabulated model must start at t = 0, got {}", rows[0].0)));
        }
        if rows[0].1 != 0.0 {
            return Err(BridgeError::Config(format!("rho(0) must be 0, got {}", rows[0].1)));
        }
        for w in rows.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(BridgeError::Config(format!(
                    "t must be strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        for &(t, r, q) in rows {
            if !(t.is_finite() && r.is_finite() && q.is_finite()) {
                return Err(BridgeError::Config(format!("non-finite row at t = {t}")));
            }
            if q <= 0.0 || (t > 0.0 && r <= 0.0) {
                return Err(BridgeError::Config(format!(
                    "need rho > 0 and q > 0 for t > 0 (row t = {t}: rho = {r}, q = {q})"
                )));
            }
        }
        let t: Vec<f64> = rows.iter().map(|r| r.0).collect();
        Ok(Self {
            rho: Pchip::new(t.clone(), rows.iter().map(|r| r.1).collect()),
            q: Pchip::new(t.clone(), rows.iter().map(|r| r.2).collect()),
            t,
        })
    }
}

/// Fritsch–Carlson monotone cubic Hermite interpolant.
struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = delta[0];
            d[1] = delta[0];
        } else {
            for k in 1..n - 1 {
                if delta[k - 1] * delta[k] > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
                }
            }
            d[0] = Self::end_slope(h[0], h[1], delta[0], delta[1]);
            d[n - 1] = Self::end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Self { x, y, d }
    }

    fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
        let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if s.signum() != d0.signum() {
            0.0
        } else if d0.signum() != d1.signum() && s.abs() > 3.0 * d0.abs() {
            3.0 * d0
        } else {
            s
        }
    }

    fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        if !(t >= self.x[0] && t <= self.x[n - 1]) {
            return f64::NAN;
        }
        let k = match self.x.binary_search_by(|v| v.total_cmp(&t)) {
            Ok(i) => return self.y[i],
            Err(i) => i - 1,
        };
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[k] + h10 * h * self.d[k] + h01 * self.y[k + 1] + h11 * h * self.d[k + 1]
    }
}
