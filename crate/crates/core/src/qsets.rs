//! Frequency sets Q and their dyadic windows Q(M).
//!
//! A window is Q(M) = { q in Q : M/2 < |q_j| <= M for every coordinate }.
//! Preset families other than `AllIntegers` are subsets of the positive
//! integers; `AllIntegers` is symmetric about zero.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SalemError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QSetKind {
    AllIntegers,
    Primes,
    /// p + 1 with p prime.
    ShiftedPrimes,
    Squares,
    PowersOfTwo,
    /// q in N with |sin q| >= 1/2.
    SinThreshold,
    ExplicitList { payload: Vec<Vec<i64>> },
    File { path: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QSetSpec {
    /// Ambient exponent dimension; scenario files carry it at the top level,
    /// so it defaults here and is filled in during scenario load.
    #[serde(default)]
    pub n: usize,
    #[serde(flatten)]
    pub kind: QSetKind,
}

fn is_prime(q: i64) -> bool {
    if q < 2 {
        return false;
    }
    if q < 4 {
        return true;
    }
    if q % 2 == 0 {
        return false;
    }
    let mut d = 3i64;
    while d * d <= q {
        if q % d == 0 {
            return false;
        }
        d += 2;
    }
    true
}

fn is_perfect_square(q: i64) -> bool {
    if q < 1 {
        return false;
    }
    let r = (q as f64).sqrt().round() as i64;
    (r - 1..=r + 1).any(|s| s >= 0 && s * s == q)
}

/// Largest window cardinality `window()` will materialize.
pub const WINDOW_ENUM_CAP: u64 = 50_000_000;

fn in_window_1d(q: i64, m: f64) -> bool {
    let a = q.unsigned_abs() as f64;
    m / 2.0 < a && a <= m
}

impl QSetSpec {
    pub fn new(n: usize, kind: QSetKind) -> Self {
        QSetSpec { n, kind }
    }

    /// Resolves a `File` kind by loading the payload; other kinds pass through.
    pub fn resolve(self) -> Result<Self> {
        match self.kind {
            QSetKind::File { path } => {
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| SalemError::Input(format!("cannot read Q file {path}: {e}")))?;
                let mut payload = Vec::new();
                for (lineno, line) in text.lines().enumerate() {
                    let line = line.trim();
                    if line.is_empty() || line.starts_with('#') {
                        continue;
                    }
                    let row: std::result::Result<Vec<i64>, _> =
                        line.split_whitespace().map(str::parse).collect();
                    let row = row.map_err(|e| {
                        SalemError::Input(format!("{path}:{}: bad integer: {e}", lineno + 1))
                    })?;
                    if row.len() != self.n {
                        return Err(SalemError::Input(format!(
                            "{path}:{}: expected {} coordinates, got {}",
                            lineno + 1,
                            self.n,
                            row.len()
                        )));
                    }
                    payload.push(row);
                }
                Ok(QSetSpec::new(self.n, QSetKind::ExplicitList { payload }))
            }
            _ => Ok(self),
        }
    }

    /// Membership in the underlying 1-d preset (presets only).
    fn preset_contains_1d(&self, q: i64) -> bool {
        match &self.kind {
            QSetKind::AllIntegers => q != 0,
            QSetKind::Primes => is_prime(q),
            QSetKind::ShiftedPrimes => is_prime(q - 1),
            QSetKind::Squares => is_perfect_square(q),
            QSetKind::PowersOfTwo => q > 0 && (q & (q - 1)) == 0,
            QSetKind::SinThreshold => q > 0 && (q as f64).sin().abs() >= 0.5,
            QSetKind::ExplicitList { .. } | QSetKind::File { .. } => unreachable!(),
        }
    }

    /// The 1-d window M/2 < |q| <= M for a preset kind, ascending.
    fn preset_window_1d(&self, m: f64) -> Vec<i64> {
        let hi = m.floor() as i64;
        let lo = (m / 2.0).floor() as i64 + 1;
        let mut out = Vec::new();
        if matches!(self.kind, QSetKind::AllIntegers) {
            for q in (-hi..=-lo).chain(lo..=hi) {
                out.push(q);
            }
        } else {
            for q in lo..=hi {
                if self.preset_contains_1d(q) {
                    out.push(q);
                }
            }
        }
        out
    }

    /// Enumerates Q(M), sorted lexicographically.
    pub fn window(&self, m: f64) -> Result<Vec<Vec<i64>>> {
        if !(m >= 1.0) {
            return Err(SalemError::Input(format!("window scale M = {m} must be >= 1")));
        }
        let mut out: Vec<Vec<i64>> = match &self.kind {
            QSetKind::ExplicitList { payload } => payload
                .iter()
                .filter(|q| q.len() == self.n && q.iter().all(|&c| in_window_1d(c, m)))
                .cloned()
                .collect(),
            QSetKind::File { path } => {
                return Err(SalemError::Input(format!(
                    "unresolved Q file payload: {path} (call resolve() first)"
                )))
            }
            _ => {
                // Guard against enumerating astronomically large windows;
                // callers needing only counts use window_count instead.
                let span = m.floor() - (m / 2.0).floor();
                if span > WINDOW_ENUM_CAP as f64
                    || (2.0 * span).powi(self.n as i32) > WINDOW_ENUM_CAP as f64
                {
                    return Err(SalemError::BoxTooLarge {
                        requested: (2.0 * span).powi(self.n as i32) as u64,
                        cap: WINDOW_ENUM_CAP,
                    });
                }
                let axis = self.preset_window_1d(m);
                // n-fold product of the 1-d window
                let mut acc: Vec<Vec<i64>> = vec![Vec::new()];
                for _ in 0..self.n {
                    let mut next = Vec::with_capacity(acc.len() * axis.len());
                    for head in &acc {
                        for &q in &axis {
                            let mut v = head.clone();
                            v.push(q);
                            next.push(v);
                        }
                    }
                    acc = next;
                }
                acc
            }
        };
        out.sort();
        out.dedup();
        Ok(out)
    }

    /// Cardinality of Q(M), with a closed form for `AllIntegers` so that
    /// very large window scales need no enumeration.
    pub fn window_count(&self, m: f64) -> Result<u64> {
        if !(m >= 1.0) {
            return Err(SalemError::Input(format!("window scale M = {m} must be >= 1")));
        }
        if let QSetKind::AllIntegers = self.kind {
            let hi = m.floor() as u64;
            let lo = (m / 2.0).floor() as u64;
            let axis = 2 * (hi - lo);
            return Ok(axis.pow(self.n as u32));
        }
        Ok(self.window(m)?.len() as u64)
    }

    /// Exact membership test for q in Q(M); cross-checks enumeration.
    pub fn window_contains(&self, q: &[i64], m: f64) -> bool {
        if q.len() != self.n || !q.iter().all(|&c| in_window_1d(c, m)) {
            return false;
        }
        match &self.kind {
            QSetKind::ExplicitList { payload } => payload.iter().any(|p| p == q),
            QSetKind::File { .. } => false,
            QSetKind::AllIntegers => true,
            _ => q.iter().all(|&c| self.preset_contains_1d(c)),
        }
    }

    /// Counting function |{ q in Q : 0 < |q| <= x }| (1-d sets only).
    pub fn count_upto(&self, x: f64) -> Result<u64> {
        if self.n != 1 {
            return Err(SalemError::Domain("count_upto requires n = 1".into()));
        }
        let hi = x.floor() as i64;
        Ok(match &self.kind {
            QSetKind::AllIntegers => 2 * hi.max(0) as u64,
            QSetKind::PowersOfTwo => {
                if hi < 1 {
                    0
                } else {
                    (hi as f64).log2().floor() as u64 + 1
                }
            }
            QSetKind::Squares => {
                if hi < 1 {
                    0
                } else {
                    (hi as f64).sqrt().floor() as u64
                }
            }
            QSetKind::ExplicitList { payload } => payload
                .iter()
                .filter(|q| q[0] != 0 && q[0].unsigned_abs() as f64 <= x)
                .count() as u64,
            QSetKind::File { .. } => {
                return Err(SalemError::Input("unresolved Q file payload".into()))
            }
            _ => (1..=hi).filter(|&q| self.preset_contains_1d(q)).count() as u64,
        })
    }

    /// Estimates the convergence abscissa nu(Q) from the growth of the
    /// counting function: ln N(X) regressed on ln X over the top half-decade
    /// below `cutoff`.
    pub fn nu_estimate(&self, cutoff: u64) -> Result<f64> {
        if self.n != 1 {
            return Err(SalemError::Domain("nu_estimate requires n = 1".into()));
        }
        if cutoff < 1000 {
            return Err(SalemError::Input("nu_estimate cutoff must be >= 1000".into()));
        }
        if self.count_upto(cutoff as f64)? < 10 {
            return Err(SalemError::InsufficientData(
                "fewer than 10 elements of Q below cutoff".into(),
            ));
        }
        // Endpoint slope across the top half-decade; counting functions are
        // staircases, so interior samples only add quantization noise.
        let lo_x = cutoff as f64 / 10f64.sqrt();
        let lo = self.count_upto(lo_x)?;
        let hi = self.count_upto(cutoff as f64)?;
        if lo == 0 {
            return Err(SalemError::InsufficientData(
                "no elements of Q in the top half-decade".into(),
            ));
        }
        Ok(((hi as f64).ln() - (lo as f64).ln()) / ((cutoff as f64).ln() - lo_x.ln()))
    }
}

/// Ordinary least-squares slope of y on x.
#[allow(dead_code)]
pub(crate) fn ols_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: QSetKind) -> QSetSpec {
        QSetSpec::new(1, kind)
    }

    #[test]
    fn window_all_integers_m8() {
        let w = spec(QSetKind::AllIntegers).window(8.0).unwrap();
        let expect: Vec<Vec<i64>> =
            vec![-8, -7, -6, -5, 5, 6, 7, 8].into_iter().map(|q| vec![q]).collect();
        let mut expect = expect;
        expect.sort();
        assert_eq!(w, expect);
        assert_eq!(w.len(), 8);
    }

    #[test]
    fn window_squares_m16() {
        let w = spec(QSetKind::Squares).window(16.0).unwrap();
        assert_eq!(w, vec![vec![9], vec![16]]);
    }

    #[test]
    fn window_primes_m10() {
        // primes in (5, 10]
        let w = spec(QSetKind::Primes).window(10.0).unwrap();
        assert_eq!(w, vec![vec![7]]);
    }

    #[test]
    fn window_sin_threshold_m4() {
        // window (2,4]: |sin 3| ~ 0.141 < 1/2 excluded, |sin 4| ~ 0.757 kept
        let w = spec(QSetKind::SinThreshold).window(4.0).unwrap();
        assert_eq!(w, vec![vec![4]]);
    }

    #[test]
    fn window_matches_membership() {
        for kind in [
            QSetKind::AllIntegers,
            QSetKind::Primes,
            QSetKind::ShiftedPrimes,
            QSetKind::Squares,
            QSetKind::PowersOfTwo,
            QSetKind::SinThreshold,
        ] {
            let s = spec(kind);
            for m in [4.0, 16.0, 37.5, 256.0] {
                let w = s.window(m).unwrap();
                for q in &w {
                    assert!(s.window_contains(q, m), "{:?} {:?} M={}", s.kind, q, m);
                    // exact window inequalities
                    let a = q[0].unsigned_abs() as f64;
                    assert!(m / 2.0 < a && a <= m);
                }
                // brute-force cross-check
                let hi = m.floor() as i64;
                let brute: Vec<Vec<i64>> = (-hi..=hi)
                    .filter(|&q| q != 0 && s.window_contains(&[q], m))
                    .map(|q| vec![q])
                    .collect();
                assert_eq!(w, brute, "{:?} M={}", s.kind, m);
            }
        }
    }

    #[test]
    fn window_2d_product() {
        let s = QSetSpec::new(2, QSetKind::AllIntegers);
        let w = s.window(4.0).unwrap();
        assert_eq!(w.len(), 16); // {±3,±4}^2
        assert!(w.contains(&vec![-3, 4]));
        assert!(s.window_contains(&[3, -4], 4.0));
        assert!(!s.window_contains(&[2, 4], 4.0));
    }

    #[test]
    fn empty_window_is_ok() {
        let w = spec(QSetKind::Squares).window(6.0).unwrap(); // squares in (3,6]: {4}
        assert_eq!(w, vec![vec![4]]);
        let w = spec(QSetKind::PowersOfTwo).window(7.0).unwrap(); // (3.5,7]: {4}
        assert_eq!(w, vec![vec![4]]);
        let w = spec(QSetKind::Squares).window(8.0).unwrap(); // (4,8]: none
        assert!(w.is_empty());
    }

    #[test]
    fn window_count_matches_enumeration_and_scales() {
        for kind in [
            QSetKind::AllIntegers,
            QSetKind::Primes,
            QSetKind::Squares,
            QSetKind::PowersOfTwo,
        ] {
            let s = spec(kind);
            for m in [2.0, 8.0, 37.5, 255.0] {
                assert_eq!(
                    s.window_count(m).unwrap(),
                    s.window(m).unwrap().len() as u64,
                    "{:?} M={m}",
                    s.kind
                );
            }
        }
        // closed form at a scale far beyond enumeration
        let big = (1u64 << 40) as f64;
        let s = spec(QSetKind::AllIntegers);
        assert_eq!(s.window_count(big).unwrap(), 1u64 << 40);
        assert!(matches!(s.window(big), Err(SalemError::BoxTooLarge { .. })));
        let s2 = QSetSpec::new(2, QSetKind::AllIntegers);
        assert_eq!(s2.window_count(8.0).unwrap(), 64);
    }

    #[test]
    fn bad_m_is_input_error() {
        assert!(matches!(
            spec(QSetKind::AllIntegers).window(0.5),
            Err(SalemError::Input(_))
        ));
    }

    #[test]
    fn nu_estimates_match_analytic_values() {
        let cutoff = 1_000_000;
        let nu = spec(QSetKind::AllIntegers).nu_estimate(cutoff).unwrap();
        assert!((nu - 1.0).abs() < 0.05, "all_integers nu = {nu}");
        let nu = spec(QSetKind::Squares).nu_estimate(cutoff).unwrap();
        assert!((nu - 0.5).abs() < 0.05, "squares nu = {nu}");
        let nu = spec(QSetKind::PowersOfTwo).nu_estimate(cutoff).unwrap();
        assert!(nu.abs() < 0.05, "powers_of_two nu = {nu}");
    }

    #[test]
    fn explicit_list_and_file_roundtrip() {
        let dir = std::env::temp_dir().join("salem_qset_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("q.txt");
        std::fs::write(&path, "3 4\n-3 -4\n# comment\n5 6\n").unwrap();
        let s = QSetSpec::new(2, QSetKind::File { path: path.to_string_lossy().into() })
            .resolve()
            .unwrap();
        let w = s.window(4.0).unwrap();
        assert_eq!(w, vec![vec![-3, -4], vec![3, 4]]);
    }
}
