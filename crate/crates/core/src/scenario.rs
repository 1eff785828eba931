//! Approximation functions, scenario parameters, and certification of the
//! density hypothesis |Q(M)| eps(M)^a h(M) >= M^a over a finite truncation
//! of the scale set.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SalemError};
use crate::qsets::QSetSpec;

/// Approximation function family. The convention Psi(0) = 1 is hard-wired.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PsiSpec {
    /// Psi(q) = |q|^-tau.
    Power { tau: f64 },
    /// Psi(q) = |sin q| |q|^-tau (scalar q only).
    HinokumaShiga { tau: f64 },
    /// table[i] = psi(i + 1), evaluated at |q|.
    Tabulated { table: Vec<f64> },
    #[serde(skip)]
    Custom(#[serde(skip)] Arc<dyn Fn(&[i64]) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for PsiSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PsiSpec::Power { tau } => write!(f, "Power {{ tau: {tau} }}"),
            PsiSpec::HinokumaShiga { tau } => write!(f, "HinokumaShiga {{ tau: {tau} }}"),
            PsiSpec::Tabulated { table } => write!(f, "Tabulated {{ len: {} }}", table.len()),
            PsiSpec::Custom(_) => write!(f, "Custom"),
        }
    }
}

pub fn max_abs(q: &[i64]) -> i64 {
    q.iter().map(|c| c.abs()).max().unwrap_or(0)
}

impl PsiSpec {
    pub fn eval(&self, q: &[i64]) -> Result<f64> {
        let norm = max_abs(q);
        if norm == 0 {
            return Ok(1.0); // Psi(0) = 1 convention
        }
        match self {
            PsiSpec::Power { tau } => Ok((norm as f64).powf(-tau)),
            PsiSpec::HinokumaShiga { tau } => {
                if q.len() != 1 {
                    return Err(SalemError::Domain(
                        "hinokuma_shiga requires scalar q (n = 1)".into(),
                    ));
                }
                Ok((q[0] as f64).sin().abs() * (norm as f64).powf(-tau))
            }
            PsiSpec::Tabulated { table } => table
                .get(norm as usize - 1)
                .copied()
                .ok_or_else(|| SalemError::Input(format!("psi table has no entry for |q| = {norm}"))),
            PsiSpec::Custom(f) => Ok(f(q)),
        }
    }
}

/// Increasing weight h in the density hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum HSpec {
    Constant { c: f64 },
    /// c * ln^p(x + 1).
    LogPower { c: f64, p: f64 },
    /// Monotone table, piecewise-linear, clamped outside [xs[0], xs.last()].
    Table { xs: Vec<f64>, hs: Vec<f64> },
}

impl HSpec {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            HSpec::Constant { c } => *c,
            HSpec::LogPower { c, p } => c * (x + 1.0).ln().powf(*p),
            HSpec::Table { xs, hs } => {
                if x <= xs[0] {
                    return hs[0];
                }
                if x >= *xs.last().unwrap() {
                    return *hs.last().unwrap();
                }
                let i = xs.partition_point(|&v| v <= x) - 1;
                let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
                hs[i] + t * (hs[i + 1] - hs[i])
            }
        }
    }

    /// Checks monotonicity on sample points (tables are checked exactly).
    pub fn validate(&self) -> Result<()> {
        match self {
            HSpec::Constant { c } => {
                if *c <= 0.0 {
                    return Err(SalemError::Input("h constant must be positive".into()));
                }
            }
            HSpec::LogPower { c, p } => {
                if *c <= 0.0 || *p < 0.0 {
                    return Err(SalemError::Input("h log_power needs c > 0, p >= 0".into()));
                }
            }
            HSpec::Table { xs, hs } => {
                if xs.len() != hs.len() || xs.len() < 2 {
                    return Err(SalemError::Input("h table needs matching xs/hs, len >= 2".into()));
                }
                if !xs.windows(2).all(|w| w[0] < w[1]) {
                    return Err(SalemError::Input("h table xs must be strictly ascending".into()));
                }
                if !hs.windows(2).all(|w| w[0] <= w[1]) || hs[0] <= 0.0 {
                    return Err(SalemError::Input("h table must be positive increasing".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub m: usize,
    pub theta: Vec<f64>,
    pub a: f64,
    pub h: HSpec,
    #[serde(rename = "Mset")]
    pub m_set: Vec<f64>,
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(SalemError::Input("m must be positive".into()));
        }
        if self.theta.len() != self.m {
            return Err(SalemError::Input(format!(
                "theta has {} coordinates, expected m = {}",
                self.theta.len(),
                self.m
            )));
        }
        if self.a < 0.0 {
            return Err(SalemError::Input("a must be >= 0".into()));
        }
        self.h.validate()?;
        if self.m_set.is_empty() || self.m_set[0] <= 0.0 {
            return Err(SalemError::Input("Mset must be nonempty and positive".into()));
        }
        if !self.m_set.windows(2).all(|w| w[0] < w[1]) {
            return Err(SalemError::Input("Mset must be strictly ascending".into()));
        }
        Ok(())
    }
}

/// A full scenario: (Q, Psi, theta, a, h, Mset).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub n: usize,
    #[serde(rename = "Q")]
    pub q: QSetSpec,
    #[serde(rename = "Psi")]
    pub psi: PsiSpec,
    #[serde(flatten)]
    pub params: ScenarioParams,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| SalemError::Input(format!("scenario JSON: {e}")))?;
        // "n" lives at the top level and inside Q
        let n = raw
            .get("n")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| SalemError::Input("scenario is missing \"n\"".into()))?
            as usize;
        let mut scn: Scenario = serde_json::from_value(raw)
            .map_err(|e| SalemError::Input(format!("scenario JSON: {e}")))?;
        scn.q.n = n;
        scn.q = scn.q.clone().resolve()?;
        scn.validate()?;
        Ok(scn)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SalemError::Input(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(SalemError::Input("n must be positive".into()));
        }
        if self.q.n != self.n {
            return Err(SalemError::Input("Q dimension disagrees with n".into()));
        }
        self.params.validate()
    }

    pub fn mn(&self) -> usize {
        self.params.m * self.n
    }

    pub fn window(&self, m: f64) -> Result<Vec<Vec<i64>>> {
        self.q.window(m)
    }

    /// eps(M) = min over Q(M) of Psi; checks positivity and boundedness.
    pub fn epsilon(&self, m: f64) -> Result<f64> {
        epsilon(&self.q, &self.psi, m)
    }

    pub fn certify(&self) -> Result<CertReport> {
        certify_scenario(&self.q, &self.psi, &self.params)
    }
}

/// eps(M) = min_{q in Q(M)} Psi(q).
pub fn epsilon(spec: &QSetSpec, psi: &PsiSpec, m: f64) -> Result<f64> {
    // Closed form for the full integer lattice with a power law: the max-norm
    // over Q(M) ranges over floor(M/2)+1 ..= floor(M), so the minimum of
    // |q|^-tau is attained at the appropriate endpoint. This avoids
    // enumerating windows at very large scales.
    if let (crate::qsets::QSetKind::AllIntegers, PsiSpec::Power { tau }) = (&spec.kind, psi) {
        if !(m >= 1.0) {
            return Err(SalemError::Input(format!("window scale M = {m} must be >= 1")));
        }
        let norm = if *tau >= 0.0 { m.floor() } else { (m / 2.0).floor() + 1.0 };
        return Ok(norm.powf(-tau));
    }
    let window = spec.window(m)?;
    if window.is_empty() {
        return Err(SalemError::EmptyWindow { m });
    }
    let mut min = f64::INFINITY;
    for q in &window {
        let v = psi.eval(q)?;
        if !(v > 0.0) || !v.is_finite() {
            return Err(SalemError::Domain(format!(
                "Psi({q:?}) = {v} is not strictly positive and finite"
            )));
        }
        min = min.min(v);
    }
    Ok(min)
}

#[derive(Debug, Clone, Serialize)]
pub struct CertEntry {
    pub m: f64,
    pub window_size: usize,
    pub epsilon: f64,
    /// |Q(M)| eps(M)^a h(M)
    pub lhs: f64,
    /// M^a
    pub rhs: f64,
    pub margin: f64,
    pub pass: bool,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertReport {
    pub entries: Vec<CertEntry>,
    pub pass: bool,
}

/// Checks |Q(M)| eps(M)^a h(M) >= M^a at every M in the supplied Mset.
pub fn certify_scenario(
    spec: &QSetSpec,
    psi: &PsiSpec,
    params: &ScenarioParams,
) -> Result<CertReport> {
    params.validate()?;
    let mut entries = Vec::with_capacity(params.m_set.len());
    for &m in &params.m_set {
        let count = spec.window_count(m)?;
        if count == 0 {
            entries.push(CertEntry {
                m,
                window_size: 0,
                epsilon: f64::NAN,
                lhs: f64::NAN,
                rhs: m.powf(params.a),
                margin: f64::NEG_INFINITY,
                pass: false,
                reason: Some(format!("empty window Q({m})")),
            });
            continue;
        }
        let eps = epsilon(spec, psi, m)?;
        let lhs = count as f64 * eps.powf(params.a) * params.h.eval(m);
        let rhs = m.powf(params.a);
        entries.push(CertEntry {
            m,
            window_size: count as usize,
            epsilon: eps,
            lhs,
            rhs,
            margin: lhs - rhs,
            pass: lhs >= rhs,
            reason: None,
        });
    }
    let pass = entries.iter().all(|e| e.pass);
    Ok(CertReport { entries, pass })
}

/// Checks single-M certification; used by scale selection.
pub fn certified_at(scenario: &Scenario, m: f64) -> Result<bool> {
    let count = scenario.q.window_count(m)?;
    if count == 0 {
        return Ok(false);
    }
    let eps = scenario.epsilon(m)?;
    let lhs = count as f64 * eps.powf(scenario.params.a) * scenario.params.h.eval(m);
    Ok(lhs >= m.powf(scenario.params.a))
}
