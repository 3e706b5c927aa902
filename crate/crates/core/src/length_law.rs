//! The law of the random length `τ`: finitely many atoms plus density pieces,
//! and the integration primitive `∫_{(a,b]} f(r) P_τ(dr)` every posterior
//! formula is built on.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BridgeError, Result};
use crate::quad::{self, QuadTolerance};

/// Tail mass left out when an unbounded density piece is truncated.
pub const TAIL_MASS: f64 = 1e-12;

const MASS_TOLERANCE: f64 = 1e-9;

/// Half-open interval `(lo, hi]`; `hi` may be `+∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
}

impl Window {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    /// `(lo, ∞)`.
    pub fn above(lo: f64) -> Self {
        Self { lo, hi: f64::INFINITY }
    }

    /// `(0, ∞)`.
    pub fn all() -> Self {
        Self::above(0.0)
    }

    pub fn contains(&self, r: f64) -> bool {
        r > self.lo && r <= self.hi
    }

    pub fn intersect(&self, other: &Window) -> Window {
        Window {
            lo: self.lo.max(other.lo),
            hi: self.hi.min(other.hi),
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.hi > self.lo)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Atom {
    pub location: f64,
    pub mass: f64,
}

type PdfFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Shape {
    Uniform { a: f64, b: f64 },
    Exponential { rate: f64 },
    /// Normalized density on `[a, b)`.
    Custom { a: f64, b: f64, pdf: PdfFn },
}

/// A weighted probability density on an interval of `(0, ∞)`.
#[derive(Clone)]
pub struct DensityPiece {
    mass: f64,
    shape: Shape,
}

impl fmt::Debug for DensityPiece {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (lo, hi) = self.interval();
        let kind = match self.shape {
            Shape::Uniform { .. } => "uniform",
            Shape::Exponential { .. } => "exponential",
            Shape::Custom { .. } => "custom",
        };
        write!(f, "DensityPiece({kind}, mass={}, [{lo}, {hi}))", self.mass)
    }
}

impl DensityPiece {
    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Nominal support `[a, b)` (`b` may be infinite).
    pub fn interval(&self) -> (f64, f64) {
        match self.shape {
            Shape::Uniform { a, b } | Shape::Custom { a, b, .. } => (a, b),
            Shape::Exponential { .. } => (0.0, f64::INFINITY),
        }
    }

    /// Support with unbounded tails cut where the residual mass is below
    /// [`TAIL_MASS`].
    pub fn effective_interval(&self) -> (f64, f64) {
        match self.shape {
            Shape::Exponential { rate } => (0.0, -TAIL_MASS.ln() / rate),
            _ => self.interval(),
        }
    }

    /// Weighted density (integrates to `mass`).
    pub fn pdf(&self, r: f64) -> f64 {
        let (a, b) = self.interval();
        if r < a || r >= b {
            return 0.0;
        }
        self.mass
            * match &self.shape {
                Shape::Uniform { a, b } => 1.0 / (b - a),
                Shape::Exponential { rate } => rate * (-rate * r).exp(),
                Shape::Custom { pdf, .. } => pdf(r),
            }
    }

    /// Weighted distribution function on `(−∞, t]`.
    pub fn cdf(&self, t: f64) -> f64 {
        let (a, b) = self.interval();
        if t <= a {
            return 0.0;
        }
        if t >= b {
            return self.mass;
        }
        self.mass
            * match &self.shape {
                Shape::Uniform { a, b } => (t - a) / (b - a),
                Shape::Exponential { rate } => -(-rate * t).exp_m1(),
                Shape::Custom { pdf, a, .. } => {
                    quad::integrate(|x| pdf(x), *a, t, QuadTolerance::default()).unwrap_or(f64::NAN)
                }
            }
    }

    /// Inverse of the normalized distribution function at `v ∈ (0, 1)`.
    fn inverse(&self, v: f64) -> f64 {
        match &self.shape {
            Shape::Uniform { a, b } => a + v * (b - a),
            Shape::Exponential { rate } => -(-v).ln_1p() / rate,
            Shape::Custom { a, b, .. } => {
                let (mut lo, mut hi) = (*a, *b);
                while hi - lo > 1e-12 * hi.abs().max(1.0) {
                    let mid = 0.5 * (lo + hi);
                    if self.cdf(mid) / self.mass < v {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }
}

/// The law of a strictly positive random time.
#[derive(Debug, Clone)]
pub struct LengthLaw {
    atoms: Vec<Atom>,
    pieces: Vec<DensityPiece>,
}

impl LengthLaw {
    /// Builds a law and checks positivity of supports and unit total mass.
    pub fn new(atoms: Vec<Atom>, pieces: Vec<DensityPiece>) -> Result<Self> {
        let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
        let mut atoms = atoms;
        atoms.sort_by(|x, y| x.location.total_cmp(&y.location));
        for atom in atoms {
            if !(atom.location.is_finite() && atom.location > 0.0) {
                return Err(BridgeError::Config(format!(
                    "atom location must be strictly positive, got {}",
                    atom.location
                )));
            }
            if !(atom.mass.is_finite() && atom.mass > 0.0) {
                return Err(BridgeError::Config(format!("atom mass must be positive, got {}", atom.mass)));
            }
            match merged.last_mut() {
                Some(last) if last.location == atom.location => last.mass += atom.mass,
                _ => merged.push(atom),
            }
        }
        for p in &pieces {
            if !(p.mass.is_finite() && p.mass > 0.0) {
                return Err(BridgeError::Config(format!("density piece mass must be positive, got {}", p.mass)));
            }
            let (a, b) = p.interval();
            if !(a >= 0.0 && b > a) {
                return Err(BridgeError::Config(format!("density interval [{a}, {b}) is not inside (0, inf)")));
            }
        }
        let total: f64 = merged.iter().map(|a| a.mass).sum::<f64>() + pieces.iter().map(|p| p.mass).sum::<f64>();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(BridgeError::Config(format!("total mass is {total}, expected 1")));
        }
        Ok(Self { atoms: merged, pieces })
    }

    /// Discrete law from `(location, mass)` pairs.
    pub fn atoms(points: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            points.iter().map(|&(location, mass)| Atom { location, mass }).collect(),
            Vec::new(),
        )
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(BridgeError::Config(format!("exponential rate must be positive, got {rate}")));
        }
        Self::new(
            Vec::new(),
            vec![DensityPiece {
                mass: 1.0,
                shape: Shape::Exponential { rate },
            }],
        )
    }

    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a >= 0.0 && b > a) {
            return Err(BridgeError::Config(format!("uniform law needs 0 <= a < b, got [{a}, {b})")));
        }
        Self::new(
            Vec::new(),
            vec![DensityPiece {
                mass: 1.0,
                shape: Shape::Uniform { a, b },
            }],
        )
    }

    /// Density `pdf` on the finite interval `[a, b)`; must integrate to 1.
    pub fn density<F>(a: f64, b: f64, pdf: F) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(a.is_finite() && b.is_finite() && a >= 0.0 && b > a) {
            return Err(BridgeError::Config(format!("density interval must be finite in (0, inf), got [{a}, {b})")));
        }
        let total = quad::integrate(&pdf, a, b, QuadTolerance::default())?;
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(BridgeError::Config(format!("density integrates to {total}, expected 1")));
        }
        Self::new(
            Vec::new(),
            vec![DensityPiece {
                mass: 1.0,
                shape: Shape::Custom { a, b, pdf: Arc::new(pdf) },
            }],
        )
    }

    /// Convex combination of laws.
    pub fn mixture(parts: &[(f64, LengthLaw)]) -> Result<Self> {
        let mut atoms = Vec::new();
        let mut pieces = Vec::new();
        for (w, law) in parts {
            if !(w.is_finite() && *w > 0.0) {
                return Err(BridgeError::Config(format!("mixture weight must be positive, got {w}")));
            }
            atoms.extend(law.atoms.iter().map(|a| Atom {
                location: a.location,
                mass: a.mass * w,
            }));
            pieces.extend(law.pieces.iter().map(|p| DensityPiece {
                mass: p.mass * w,
                shape: p.shape.clone(),
            }));
        }
        Self::new(atoms, pieces)
    }

    pub fn atom_list(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn pieces(&self) -> &[DensityPiece] {
        &self.pieces
    }

    pub fn is_discrete(&self) -> bool {
        self.pieces.is_empty()
    }

    /// Infimum of the support.
    pub fn support_lower(&self) -> f64 {
        let a = self.atoms.first().map_or(f64::INFINITY, |a| a.location);
        self.pieces.iter().map(|p| p.interval().0).fold(a, f64::min)
    }

    /// Supremum of the (tail-truncated) support.
    pub fn support_upper(&self) -> f64 {
        let a = self.atoms.last().map_or(0.0, |a| a.location);
        self.pieces.iter().map(|p| p.effective_interval().1).fold(a, f64::max)
    }

    /// Breakpoints of the law: atom locations and piece boundaries.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.atoms.iter().map(|a| a.location).collect();
        for p in &self.pieces {
            let (a, b) = p.effective_interval();
            out.push(a);
            out.push(b);
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    /// `F(t) = P(τ ≤ t)`.
    pub fn cdf(&self, t: f64) -> f64 {
        if !(t > 0.0) {
            return 0.0;
        }
        let atoms: f64 = self.atoms.iter().take_while(|a| a.location <= t).map(|a| a.mass).sum();
        atoms + self.pieces.iter().map(|p| p.cdf(t)).sum::<f64>()
    }

    /// Prior mass of a window.
    pub fn mass(&self, window: Window) -> f64 {
        if window.is_empty() {
            return 0.0;
        }
        let hi = if window.hi.is_finite() { self.cdf(window.hi) } else { 1.0 };
        (hi - self.cdf(window.lo)).max(0.0)
    }

    /// Density part of `∫_window f dP_τ` over each piece, returning the
    /// adaptive partitions so callers can build node sets.
    fn piece_segments<F: Fn(f64) -> f64>(
        &self,
        f: &F,
        window: Window,
        breaks: &[f64],
        tol: QuadTolerance,
    ) -> Result<Vec<(usize, Vec<quad::Segment>)>> {
        let mut out = Vec::new();
        for (i, piece) in self.pieces.iter().enumerate() {
            let (a, b) = piece.effective_interval();
            let lo = a.max(window.lo);
            let hi = b.min(window.hi);
            if !(hi > lo) {
                continue;
            }
            let mut cuts = vec![lo];
            cuts.extend(breaks.iter().copied().filter(|&x| x > lo && x < hi));
            cuts.push(hi);
            cuts.sort_by(f64::total_cmp);
            let mut segments = Vec::new();
            for w in cuts.windows(2) {
                segments.extend(quad::adaptive(|r| f(r) * piece.pdf(r), w[0], w[1], tol)?);
            }
            out.push((i, segments));
        }
        Ok(out)
    }

    /// `∫_{(lo, hi]} f(r) P_τ(dr)`: exact sum over atoms, adaptive
    /// Gauss–Kronrod over density pieces.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, window: Window) -> Result<f64> {
        self.integrate_with_breaks(f, window, &[])
    }

    /// As [`LengthLaw::integrate`], splitting the quadrature at `breaks`
    /// (useful when `f` has jumps).
    pub fn integrate_with_breaks<F: Fn(f64) -> f64>(&self, f: F, window: Window, breaks: &[f64]) -> Result<f64> {
        self.integrate_tol(f, window, breaks, QuadTolerance::default())
    }

    pub(crate) fn integrate_tol<F: Fn(f64) -> f64>(
        &self,
        f: F,
        window: Window,
        breaks: &[f64],
        tol: QuadTolerance,
    ) -> Result<f64> {
        if window.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for atom in self.atoms.iter().filter(|a| window.contains(a.location)) {
            let v = f(atom.location);
            if !v.is_finite() {
                return Err(BridgeError::Numeric(format!("integrand is {v} at atom {}", atom.location)));
            }
            total += v * atom.mass;
        }
        for (_, segments) in self.piece_segments(&f, window, breaks, tol)? {
            total += segments.iter().map(|s| s.value).sum::<f64>();
        }
        Ok(total)
    }

    /// Discretizes `P_τ` restricted to `window` into weighted nodes, with the
    /// density parts placed on the adaptive partition for `f`. For every
    /// smooth `g`, `Σ w_i g(r_i) ≈ ∫ g dP_τ` and the rule is accurate for
    /// `g = f` to quadrature tolerance.
    pub fn nodes<F: Fn(f64) -> f64>(&self, f: F, window: Window) -> Result<Vec<(f64, f64)>> {
        if window.is_empty() {
            return Ok(Vec::new());
        }
        let mut out: Vec<(f64, f64)> = self
            .atoms
            .iter()
            .filter(|a| window.contains(a.location))
            .map(|a| (a.location, a.mass))
            .collect();
        for (i, segments) in self.piece_segments(&f, window, &[], QuadTolerance::default())? {
            let piece = &self.pieces[i];
            for s in segments {
                out.extend(quad::kronrod_nodes(s.a, s.b).map(|(x, w)| (x, w * piece.pdf(x))));
            }
        }
        Ok(out)
    }

    /// Draws `τ` by inversion: atoms and pieces are selected by cumulative
    /// mass, then the piece is inverted.
    pub fn sample_tau<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mut u: f64 = rng.random();
        while u == 0.0 {
            u = rng.random();
        }
        let mut cum = 0.0;
        for atom in &self.atoms {
            cum += atom.mass;
            if u <= cum {
                return atom.location;
            }
        }
        for piece in &self.pieces {
            if u <= cum + piece.mass {
                let v = ((u - cum) / piece.mass).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
                let r = piece.inverse(v);
                return if r > 0.0 { r } else { f64::MIN_POSITIVE };
            }
            cum += piece.mass;
        }
        // round-off in the cumulative sum: fall back to the last component
        match (self.pieces.last(), self.atoms.last()) {
            (Some(p), _) => p.inverse(1.0 - f64::EPSILON),
            (None, Some(a)) => a.location,
            (None, None) => unreachable!("law has unit mass"),
        }
    }

    /// `E[τ]` over the truncated support.
    pub fn mean(&self) -> Result<f64> {
        self.integrate(|r| r, Window::all())
    }
}

/// Serializable description of a [`LengthLaw`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LawSpec {
    Atoms { points: Vec<[f64; 2]> },
    Exponential { rate: f64 },
    Uniform { a: f64, b: f64 },
    Mixture { parts: Vec<MixturePart> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePart {
    pub weight: f64,
    pub law: LawSpec,
}

impl LawSpec {
    pub fn build(&self) -> Result<LengthLaw> {
        match self {
            LawSpec::Atoms { points } => {
                let pts: Vec<(f64, f64)> = points.iter().map(|p| (p[0], p[1])).collect();
                LengthLaw::atoms(&pts)
            }
            LawSpec::Exponential { rate } => LengthLaw::exponential(*rate),
            LawSpec::Uniform { a, b } => LengthLaw::uniform(*a, *b),
            LawSpec::Mixture { parts } => {
                let built = parts
                    .iter()
                    .map(|p| Ok((p.weight, p.law.build()?)))
                    .collect::<Result<Vec<_>>>()?;
                LengthLaw::mixture(&built)
            }
        }
    }
}

/// Short command-line forms: `atoms:1=0.5,2=0.5`, `exp:1.0`, `uniform:1:2`,
/// or a JSON object.
impl FromStr for LawSpec {
    type Err = BridgeError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.starts_with('{') {
            return Ok(serde_json::from_str(s)?);
        }
        let bad = |msg: &str| BridgeError::Config(format!("invalid tau law `{s}`: {msg}"));
        let num = |v: &str| v.trim().parse::<f64>().map_err(|e| bad(&e.to_string()));
        let (kind, rest) = s.split_once(':').ok_or_else(|| bad("expected kind:params"))?;
        match kind {
            "atoms" => {
                let points = rest
                    .split(',')
                    .map(|item| {
                        let (loc, mass) = item.split_once('=').ok_or_else(|| bad("atoms need location=mass"))?;
                        Ok([num(loc)?, num(mass)?])
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(LawSpec::Atoms { points })
            }
            "exp" | "exponential" => Ok(LawSpec::Exponential { rate: num(rest)? }),
            "uniform" => {
                let (a, b) = rest
                    .split_once(':')
                    .or_else(|| rest.split_once(','))
                    .ok_or_else(|| bad("uniform needs a:b"))?;
                Ok(LawSpec::Uniform { a: num(a)?, b: num(b)? })
            }
            other => Err(bad(&format!("unknown kind `{other}`"))),
        }
    }
}
