//! The window-averaged density F_M: pointwise evaluation, exact Fourier
//! coefficients via the divisor-set formula, decay-envelope checks, and the
//! windowed spectrum (chi F_M)^ with certified truncation tails.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::bump::BumpSpec;
use crate::divisors::{divisor_set_contains, divisor_window, DivisorQuery};
use crate::error::{Result, SalemError};
use crate::grid::FourierGrid;
use crate::scenario::Scenario;

/// Guard on the number of (q, k) contribution pairs a table build may touch.
pub const DEFAULT_BOX_CAP: u64 = 10_000_000;

/// F_M(x) = (1/|Q(M)|) sum_{q in Q(M)} Phi^{eps(M)}_{q,theta}(x).
pub fn fm_eval(scenario: &Scenario, bump: &BumpSpec, m_val: f64, x: &[f64]) -> Result<f64> {
    let eps = scenario.epsilon(m_val)?;
    let window = scenario.window(m_val)?;
    let theta = &scenario.params.theta;
    let mut s = 0.0;
    for q in &window {
        s += bump.periodized_eval(eps, q, theta, x)?;
    }
    Ok(s / window.len() as f64)
}

/// Exact coefficient F_M^(l) = (1/|Q(M)|) sum_{q in Q(M) cap D(l)}
/// e^{-2 pi i k . theta} phi_hat(eps k), with k the common column ratio.
pub fn fm_hat(scenario: &Scenario, bump: &BumpSpec, m_val: f64, ell: &[i64]) -> Result<Complex64> {
    let eps = scenario.epsilon(m_val)?;
    let window = scenario.window(m_val)?;
    let query = DivisorQuery::new(scenario.params.m, scenario.n, ell.to_vec())?;
    let theta = &scenario.params.theta;
    let mut sum = Complex64::new(0.0, 0.0);
    for q in divisor_window(&query, &scenario.q, m_val)? {
        let k = divisor_set_contains(&q, &query)?
            .expect("divisor_window returned a non-member");
        // The ratio is column-independent for members of D(l); spot-check it.
        debug_assert!((0..scenario.n)
            .all(|j| (0..scenario.params.m).all(|i| k[i] * q[j] == query.entry(i, j))));
        sum += contribution(bump, eps, theta, &k);
    }
    Ok(sum / window.len() as f64)
}

pub(crate) fn contribution(bump: &BumpSpec, eps: f64, theta: &[f64], k: &[i64]) -> Complex64 {
    let mag: f64 = k.iter().map(|&ki| bump.factor_hat(eps * ki as f64)).product();
    let angle: f64 = -2.0
        * std::f64::consts::PI
        * k.iter()
            .zip(theta)
            .map(|(&ki, &ti)| ki as f64 * ti)
            .sum::<f64>();
    Complex64::from_polar(mag, angle)
}

/// Exact Fourier coefficients of F_M over the box |l| <= l_max, stored
/// sparsely: every coefficient not in the map is a structural zero.
#[derive(Debug, Clone)]
pub struct SpectrumTable {
    pub m_val: f64,
    pub eps: f64,
    pub window_size: usize,
    pub l_max: i64,
    /// Matrix shape of the index l (m rows, n columns, row-major keys).
    pub m_rows: usize,
    pub n_cols: usize,
    pub coeffs: BTreeMap<Vec<i64>, Complex64>,
}

impl SpectrumTable {
    /// Coefficient at l; absent keys are exact zeros.
    pub fn get(&self, ell: &[i64]) -> Complex64 {
        debug_assert!(ell.iter().all(|&v| v.abs() <= self.l_max));
        self.coeffs
            .get(ell)
            .copied()
            .unwrap_or(Complex64::new(0.0, 0.0))
    }

    pub fn dim(&self) -> usize {
        self.m_rows * self.n_cols
    }

    /// A table representing the constant density 1 (only the l = 0 entry).
    pub fn identity(m_rows: usize, n_cols: usize, l_max: i64) -> Self {
        let mut coeffs = BTreeMap::new();
        coeffs.insert(vec![0i64; m_rows * n_cols], Complex64::new(1.0, 0.0));
        SpectrumTable {
            m_val: 0.0,
            eps: 1.0,
            window_size: 1,
            l_max,
            m_rows,
            n_cols,
            coeffs,
        }
    }

    /// CSV of the stored entries (l indices, re, im) in sorted key order, plus
    /// a JSON metadata sidecar.
    pub fn export_csv(&self, csv_path: &Path, meta_path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(csv_path)?);
        let header: Vec<String> = (1..=self.dim()).map(|i| format!("l{i}")).collect();
        writeln!(out, "{},re,im", header.join(","))?;
        for (ell, v) in &self.coeffs {
            let idx: Vec<String> = ell.iter().map(|c| c.to_string()).collect();
            writeln!(out, "{},{:.17e},{:.17e}", idx.join(","), v.re, v.im)?;
        }
        out.flush()?;
        let meta = serde_json::json!({
            "M": self.m_val,
            "eps": self.eps,
            "window_size": self.window_size,
            "L_max": self.l_max,
            "m": self.m_rows,
            "n": self.n_cols,
            "nonzero_entries": self.coeffs.len(),
        });
        std::fs::write(meta_path, serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(())
    }
}

impl From<serde_json::Error> for SalemError {
    fn from(e: serde_json::Error) -> Self {
        SalemError::Input(format!("JSON: {e}"))
    }
}

pub fn fm_hat_table(
    scenario: &Scenario,
    bump: &BumpSpec,
    m_val: f64,
    l_max: i64,
) -> Result<SpectrumTable> {
    fm_hat_table_with_cap(scenario, bump, m_val, l_max, DEFAULT_BOX_CAP)
}

/// Builds the full table by enumerating (q, k) pairs: l = (k_i q_j) has
/// |l| = |k| |q|, so |k| <= l_max / |q| suffices and every structural zero
/// (0 < |l| <= M/2) is never even generated.
pub fn fm_hat_table_with_cap(
    scenario: &Scenario,
    bump: &BumpSpec,
    m_val: f64,
    l_max: i64,
    cap: u64,
) -> Result<SpectrumTable> {
    if (l_max as f64) < m_val {
        return Err(SalemError::Input(format!(
            "l_max = {l_max} must be at least M = {m_val}"
        )));
    }
    let eps = scenario.epsilon(m_val)?;
    let window = scenario.window(m_val)?;
    let m = scenario.params.m;
    let theta = &scenario.params.theta;

    // memory guard before any work
    let mut pairs: u64 = 0;
    for q in &window {
        let qn = q.iter().map(|&c| c.abs()).max().unwrap();
        let k0 = (l_max / qn) as u64;
        pairs = pairs.saturating_add((2 * k0 + 1).saturating_pow(m as u32));
    }
    if pairs > cap {
        return Err(SalemError::BoxTooLarge {
            requested: pairs,
            cap,
        });
    }

    let inv = 1.0 / window.len() as f64;
    let mut coeffs: BTreeMap<Vec<i64>, Complex64> = BTreeMap::new();
    // sequential accumulation in sorted window order keeps reruns byte-identical
    for q in &window {
        let qn = q.iter().map(|&c| c.abs()).max().unwrap();
        let k0 = l_max / qn;
        let mut k = vec![-k0; m];
        loop {
            let c = contribution(bump, eps, theta, &k) * inv;
            let mut ell = Vec::with_capacity(m * q.len());
            for &ki in &k {
                for &qj in q {
                    ell.push(ki * qj);
                }
            }
            *coeffs.entry(ell).or_insert(Complex64::new(0.0, 0.0)) += c;
            // odometer over k
            let mut pos = m;
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                k[pos] += 1;
                if k[pos] <= k0 {
                    pos = usize::MAX;
                    break;
                }
                k[pos] = -k0;
            }
            if pos != usize::MAX {
                break;
            }
        }
    }
    Ok(SpectrumTable {
        m_val,
        eps,
        window_size: window.len(),
        l_max,
        m_rows: m,
        n_cols: scenario.n,
        coeffs,
    })
}

/// Fit of |F_M^| against the Lemma-9.1 envelope
/// |l|^{-a} exp(zeta ln|l| / ln ln|l|) h(M).
#[derive(Debug, Clone)]
pub struct EnvelopeFit {
    pub zeta: f64,
    /// Smallest tested radius beyond which every ratio is <= c1.
    pub l_zeta: i64,
    /// Max ratio over all tested l (|l| >= 16).
    pub c_fit: f64,
    pub c1: f64,
    /// Per dyadic annulus [2^j, 2^{j+1}): (j, max ratio).
    pub residuals: Vec<(u32, f64)>,
    pub pass: bool,
}

pub fn envelope_check(
    table: &SpectrumTable,
    a: f64,
    h_m: f64,
    zeta: f64,
    c1: f64,
) -> Result<EnvelopeFit> {
    if !(zeta > std::f64::consts::LN_2 && zeta <= 1.0) {
        return Err(SalemError::Domain(format!(
            "zeta = {zeta} must lie in (ln 2, 1]"
        )));
    }
    if !(h_m > 0.0) {
        return Err(SalemError::Domain(format!("h(M) = {h_m} must be positive")));
    }
    let mut per_radius: BTreeMap<i64, f64> = BTreeMap::new();
    for (ell, v) in &table.coeffs {
        let r = ell.iter().map(|&c| c.abs()).max().unwrap();
        if r < 16 {
            continue;
        }
        let rf = r as f64;
        let env = rf.powf(-a) * (zeta * rf.ln() / rf.ln().ln()).exp() * h_m;
        let ratio = v.norm() / env;
        let slot = per_radius.entry(r).or_insert(0.0);
        *slot = slot.max(ratio);
    }
    if per_radius.is_empty() {
        return Err(SalemError::InsufficientData(
            "no table entries with |l| >= 16".into(),
        ));
    }
    let c_fit = per_radius.values().cloned().fold(0.0, f64::max);
    let mut residuals: BTreeMap<u32, f64> = BTreeMap::new();
    for (&r, &ratio) in &per_radius {
        let j = (r as f64).log2().floor() as u32;
        let slot = residuals.entry(j).or_insert(0.0);
        *slot = slot.max(ratio);
    }
    // smallest tested radius L with ratio <= c1 for every tested |l| >= L
    let mut l_zeta = *per_radius.keys().next().unwrap();
    for (&r, &ratio) in per_radius.iter().rev() {
        if ratio > c1 {
            break;
        }
        l_zeta = r;
    }
    let pass = per_radius.values().all(|&ratio| ratio <= c1);
    Ok(EnvelopeFit {
        zeta,
        l_zeta,
        c_fit,
        c1,
        residuals: residuals.into_iter().collect(),
        pass,
    })
}

/// Complex samples of a transform on a FourierGrid, with a decay certificate
/// |values(xi)| <= c2 (1 + |xi|)^{-k_decay} used by tail bounds.
#[derive(Debug, Clone)]
pub struct GriddedSpectrum {
    pub grid: FourierGrid,
    pub values: Vec<Complex64>,
    pub c2: f64,
    pub k_decay: u32,
}

impl GriddedSpectrum {
    pub fn at(&self, idx: &[i64]) -> Option<Complex64> {
        self.grid.flat(idx).map(|f| self.values[f])
    }
}

/// Certified bound on C2 sum_{|l| > L} (1 + |l| - s)^{-K} for |xi| <= s,
/// tabulated per integer radius s.
#[derive(Debug, Clone)]
pub struct TailTable {
    pub l_trunc: i64,
    pub c2: f64,
    pub k_decay: u32,
    pub dim: usize,
    bounds: Vec<f64>,
}

impl TailTable {
    pub fn build(c2: f64, k_decay: u32, dim: usize, l_trunc: i64, radius: f64) -> Result<Self> {
        let top = radius.ceil() as usize;
        let mut bounds = Vec::with_capacity(top + 1);
        for s in 0..=top {
            bounds.push(conv_tail_bound(c2, k_decay, dim, l_trunc, s as f64)?);
        }
        Ok(TailTable {
            l_trunc,
            c2,
            k_decay,
            dim,
            bounds,
        })
    }

    /// Valid for any xi with |xi| <= xi_norm rounded up to the next integer.
    pub fn bound(&self, xi_norm: f64) -> f64 {
        let s = xi_norm.ceil().max(0.0) as usize;
        self.bounds[s.min(self.bounds.len() - 1)]
    }

    pub fn max_bound(&self) -> f64 {
        self.bounds.iter().cloned().fold(0.0, f64::max)
    }
}

/// Rigorous bound on sum over lattice l in Z^dim, |l| > l_trunc, of
/// c2 (1 + |xi - l|)^{-k}, for any |xi| <= s (max-norm), using
/// 1 + |xi - l| >= 1 + |l| - s. Summed over max-norm shells with an
/// analytic remainder.
pub fn conv_tail_bound(c2: f64, k: u32, dim: usize, l_trunc: i64, s: f64) -> Result<f64> {
    if !(c2 >= 0.0) || dim == 0 {
        return Err(SalemError::Domain("tail bound needs c2 >= 0, dim >= 1".into()));
    }
    if (k as usize) <= dim {
        return Err(SalemError::Domain(format!(
            "tail bound needs decay order K = {k} > dim = {dim}"
        )));
    }
    if s >= l_trunc as f64 {
        return Err(SalemError::Domain(format!(
            "truncation radius {l_trunc} must exceed the evaluation radius {s}"
        )));
    }
    let d = dim as i32;
    let mut acc = 0.0f64;
    let mut t = l_trunc + 1;
    loop {
        let tf = t as f64;
        let count = ((2 * t + 1) as i128).pow(dim as u32) - ((2 * t - 1) as i128).pow(dim as u32);
        let term = c2 * count as f64 * (1.0 + tf - s).powi(-(k as i32));
        acc += term;
        // Remainder over shells u > t: once u >= 2 max(s, 1), the shell count
        // is <= 2 dim (2u+1)^{d-1} <= 2 dim 3^{d-1} u^{d-1} and
        // 1 + u - s >= u/2, so each shell is <= C u^{d-1-k} with
        // C = 2 dim 3^{d-1} 2^k c2; sum <= C ((t+1)^{d-1-k} + (t+1)^{d-k}/(k-d)).
        if tf >= 2.0 * s.max(1.0) {
            let c = 2.0 * dim as f64 * 3.0f64.powi(d - 1) * 2.0f64.powi(k as i32) * c2;
            let u = tf + 1.0;
            let rem = c * (u.powi(d - 1 - k as i32) + u.powi(d - k as i32) / (k as f64 - d as f64));
            if rem <= 1e-9 * acc + f64::MIN_POSITIVE {
                return Ok(acc + rem);
            }
        }
        t += 1;
        if t - l_trunc > 50_000_000 {
            return Err(SalemError::Domain(
                "tail bound did not converge within the shell budget".into(),
            ));
        }
    }
}

/// The windowed spectrum (chi F_M)^(xi) = sum_l F_M^(l) chi^(xi - l),
/// truncated at |l| <= l_trunc with a certified tail (|F_M^| <= 1 plus the
/// decay certificate of chi). Output covers |xi| <= out_radius on the same
/// lattice; its decay certificate is re-fit heuristically from the outer half.
pub fn windowed_spectrum(
    chi: &GriddedSpectrum,
    fm: &SpectrumTable,
    out_radius: f64,
    l_trunc: i64,
) -> Result<(GriddedSpectrum, TailTable)> {
    let dim = chi.grid.dim;
    if fm.dim() != dim {
        return Err(SalemError::Input(
            "spectrum table dimension disagrees with the chi grid".into(),
        ));
    }
    if out_radius >= l_trunc as f64 {
        return Err(SalemError::Input(format!(
            "l_trunc = {l_trunc} must exceed the output radius {out_radius}"
        )));
    }
    let r = chi.grid.r;
    let out_grid = FourierGrid::new(dim, r, out_radius)?;
    let required = out_grid.radius() + l_trunc as f64;
    if chi.grid.radius() < required {
        return Err(SalemError::GridTooSmall {
            radius: chi.grid.radius(),
            required,
        });
    }
    // fixed summation order per xi: sorted table entries within |l| <= l_trunc
    let terms: Vec<(&Vec<i64>, Complex64)> = fm
        .coeffs
        .iter()
        .filter(|(ell, _)| ell.iter().all(|&c| c.abs() <= l_trunc))
        .map(|(ell, &v)| (ell, v))
        .collect();
    let values: Vec<Complex64> = if dim == 1 {
        // contiguous accumulation: per term, the source is a shifted slice of
        // chi, so each chunk streams memory instead of gathering per point
        let mut values = vec![Complex64::new(0.0, 0.0); out_grid.len()];
        let chunk = 8192usize;
        values.par_chunks_mut(chunk).enumerate().for_each(|(ci, dst)| {
            let base = ci * chunk;
            for (ell, coeff) in &terms {
                // chi index of dst[0]: (base - out_half) - ell r + chi_half
                let off =
                    (base as i64 + chi.grid.half - out_grid.half - ell[0] * r as i64) as usize;
                let src = &chi.values[off..off + dst.len()];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += coeff * s;
                }
            }
        });
        values
    } else {
        (0..out_grid.len())
            .into_par_iter()
            .map_init(
                || vec![0i64; dim],
                |shifted, flat| {
                    let xi_idx = out_grid.index(flat);
                    let mut sum = Complex64::new(0.0, 0.0);
                    for (ell, coeff) in &terms {
                        for d in 0..dim {
                            shifted[d] = xi_idx[d] - ell[d] * r as i64;
                        }
                        let chi_flat = chi
                            .grid
                            .flat(shifted)
                            .expect("coverage was checked above");
                        sum += coeff * chi.values[chi_flat];
                    }
                    sum
                },
            )
            .collect()
    };
    let tails = TailTable::build(chi.c2, chi.k_decay, dim, l_trunc, out_grid.radius())?;
    let c2 = estimate_decay_constant(&out_grid, &values, chi.k_decay);
    Ok((
        GriddedSpectrum {
            grid: out_grid,
            values,
            c2,
            k_decay: chi.k_decay,
        },
        tails,
    ))
}

/// Heuristic decay constant: fit sup (1 + |xi|)^K |values| over the outer
/// half of the box and inflate by 2x. Reported, never asserted.
pub fn estimate_decay_constant(grid: &FourierGrid, values: &[Complex64], k_decay: u32) -> f64 {
    let cut = grid.radius() / 2.0;
    let mut max = 0.0f64;
    for (flat, v) in values.iter().enumerate() {
        let norm = grid.point_norm(flat);
        if norm >= cut {
            max = max.max((1.0 + norm).powi(k_decay as i32) * v.norm());
        }
    }
    2.0 * max
}

/// Normalized multi-dimensional DFT of real samples on the uniform grid
/// x = idx / shape over [0,1)^dim: c[j] = (1/N) sum f(x) e^{-2 pi i <j, x>},
/// so c[j] approximates the Fourier coefficient at l congruent to j. Oracle
/// only; the production path is the exact divisor formula.
pub fn dft_coefficients(samples: &[f64], shape: &[usize]) -> Result<Vec<Complex64>> {
    let total: usize = shape.iter().product();
    if samples.len() != total || total == 0 {
        return Err(SalemError::Input(format!(
            "sample count {} does not match shape {:?}",
            samples.len(),
            shape
        )));
    }
    let mut data: Vec<Complex64> = samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut planner = rustfft::FftPlanner::new();
    // transform along each axis in turn
    let mut stride_after: usize = 1; // product of sizes after the current axis
    for &len in shape.iter().rev() {
        let fft = planner.plan_fft_forward(len);
        let lines = total / len;
        let mut line = vec![Complex64::new(0.0, 0.0); len];
        for li in 0..lines {
            // decompose line index into (before, after) blocks around this axis
            let before = li / stride_after;
            let after = li % stride_after;
            let base = before * len * stride_after + after;
            for (t, slot) in line.iter_mut().enumerate() {
                *slot = data[base + t * stride_after];
            }
            fft.process(&mut line);
            for (t, &v) in line.iter().enumerate() {
                data[base + t * stride_after] = v;
            }
        }
        stride_after *= len;
    }
    let inv = 1.0 / total as f64;
    for v in &mut data {
        *v *= inv;
    }
    Ok(data)
}

/// DFT bin for a signed frequency l (wrapped modulo the shape).
pub fn dft_bin(coeffs: &[Complex64], shape: &[usize], ell: &[i64]) -> Complex64 {
    let mut flat = 0usize;
    for (d, &len) in shape.iter().enumerate() {
        let idx = ell[d].rem_euclid(len as i64) as usize;
        flat = flat * len + idx;
    }
    coeffs[flat]
}

/// Samples F_M on the DFT grid x = idx / per_axis over one period [0,1)^mn.
pub fn sample_fm_period(
    scenario: &Scenario,
    bump: &BumpSpec,
    m_val: f64,
    per_axis: usize,
) -> Result<Vec<f64>> {
    let dim = scenario.mn();
    let total = per_axis.pow(dim as u32);
    let eps = scenario.epsilon(m_val)?;
    let window = scenario.window(m_val)?;
    let theta = scenario.params.theta.clone();
    let inv = 1.0 / window.len() as f64;
    (0..total)
        .into_par_iter()
        .map(|flat| {
            let mut x = vec![0.0; dim];
            let mut rest = flat;
            for d in (0..dim).rev() {
                x[d] = (rest % per_axis) as f64 / per_axis as f64;
                rest /= per_axis;
            }
            let mut s = 0.0;
            for q in &window {
                s += bump.periodized_eval(eps, q, &theta, &x)?;
            }
            Ok(s * inv)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qsets::{QSetKind, QSetSpec};
    use crate::scenario::{HSpec, PsiSpec, ScenarioParams};

    fn scn_1d(kind: QSetKind, tau: f64, theta: f64) -> Scenario {
        Scenario {
            n: 1,
            q: QSetSpec::new(1, kind),
            psi: PsiSpec::Power { tau },
            params: ScenarioParams {
                m: 1,
                theta: vec![theta],
                a: 1.0 / 3.0,
                h: HSpec::Constant { c: 4.0 },
                m_set: vec![2.0, 4.0, 8.0, 16.0, 32.0, 64.0],
            },
        }
    }

    fn scn_mn(m: usize, n: usize, tau: f64) -> Scenario {
        Scenario {
            n,
            q: QSetSpec::new(n, QSetKind::AllIntegers),
            psi: PsiSpec::Power { tau },
            params: ScenarioParams {
                m,
                theta: vec![0.25; m],
                a: 0.25,
                h: HSpec::Constant { c: 4.0 },
                m_set: vec![2.0, 4.0, 8.0, 16.0],
            },
        }
    }

    fn bump_for(scn: &Scenario) -> BumpSpec {
        BumpSpec::new(scn.params.m, 6).unwrap()
    }

    #[test]
    fn fm_hat_at_zero_is_one() {
        let scn = scn_1d(QSetKind::AllIntegers, 2.0, 0.3);
        let b = bump_for(&scn);
        let v = fm_hat(&scn, &b, 16.0, &[0]).unwrap();
        assert!((v.re - 1.0).abs() < 1e-12 && v.im == 0.0);
    }

    #[test]
    fn fm_hat_structural_zeros() {
        let scn = scn_1d(QSetKind::AllIntegers, 2.0, 0.7);
        let b = bump_for(&scn);
        for l in 1..=8i64 {
            let v = fm_hat(&scn, &b, 16.0, &[l]).unwrap();
            assert_eq!(v, Complex64::new(0.0, 0.0), "l = {l}");
        }
        assert!(fm_hat(&scn, &b, 16.0, &[9]).unwrap().norm() > 0.0);
    }

    #[test]
    fn fm_hat_hand_example() {
        // Q(4) = {±3, ±4}, theta = 0, tau = 1 so eps = 1/4; l = 3 is hit by
        // q = ±3 only: value = (2/4) phi_hat(1/4).
        let scn = scn_1d(QSetKind::AllIntegers, 1.0, 0.0);
        let b = bump_for(&scn);
        let v = fm_hat(&scn, &b, 4.0, &[3]).unwrap();
        let expect = 0.5 * b.factor_hat(0.25);
        assert!((v.re - expect).abs() < 1e-14, "{} vs {expect}", v.re);
        assert!(v.im.abs() < 1e-14);
    }

    #[test]
    fn fm_eval_strip_center_positive() {
        let scn = scn_1d(QSetKind::AllIntegers, 1.0, 0.0);
        let b = bump_for(&scn);
        let eps = scn.epsilon(4.0).unwrap();
        let v = fm_eval(&scn, &b, 4.0, &[1.0 / 3.0]).unwrap();
        assert!(v >= 2.0 / 4.0 / eps * b.eval(&[0.0]) - 1e-9, "v = {v}");
        // far from every strip of Q(4) = {±3, ±4}: x with ||3x||, ||4x|| large
        let far = fm_eval(&scn, &b, 4.0, &[0.6 + 1.0 / 24.0]).unwrap();
        assert!(far >= 0.0);
    }

    #[test]
    fn fm_eval_integrates_to_one() {
        let scn = scn_1d(QSetKind::AllIntegers, 2.0, 0.2);
        let b = bump_for(&scn);
        let n = 1 << 13;
        let mut s = 0.0;
        for i in 0..n {
            let x = (i as f64 + 0.5) / n as f64;
            s += fm_eval(&scn, &b, 8.0, &[x]).unwrap() / n as f64;
        }
        assert!((s - 1.0).abs() < 1e-9, "integral = {s}");
    }

    #[test]
    fn table_matches_pointwise_fm_hat() {
        for (kind, theta) in [
            (QSetKind::AllIntegers, 0.3),
            (QSetKind::Squares, 0.0),
            (QSetKind::Primes, 0.5),
        ] {
            let scn = scn_1d(kind, 2.0, theta);
            let b = bump_for(&scn);
            let table = fm_hat_table(&scn, &b, 16.0, 64).unwrap();
            for l in [-40i64, -17, 0, 9, 12, 16, 33, 64] {
                let direct = fm_hat(&scn, &b, 16.0, &[l]).unwrap();
                let tab = table.get(&[l]);
                assert!((direct - tab).norm() < 1e-13, "{:?} l = {l}", scn.q.kind);
            }
        }
    }

    #[test]
    fn table_structural_invariants() {
        let scn = scn_1d(QSetKind::AllIntegers, 2.0, 1.0 / 2f64.sqrt());
        let b = bump_for(&scn);
        let table = fm_hat_table(&scn, &b, 16.0, 64).unwrap();
        assert!((table.get(&[0]).re - 1.0).abs() < 1e-12);
        for (ell, v) in &table.coeffs {
            let r = ell[0].abs();
            assert!(!(r > 0 && r <= 8), "structural zero stored at {ell:?}");
            assert!(v.norm() <= 1.0 + 1e-12);
            // conjugate symmetry, exactly
            let neg: Vec<i64> = ell.iter().map(|&c| -c).collect();
            assert_eq!(table.get(&neg), v.conj());
        }
        // sparsity: nonzero count bounded by the divisor-sieve budget
        let budget: u64 = (1..=64u64).map(|l| 2 * crate::divisors::tau(l).unwrap()).sum();
        assert!((table.coeffs.len() as u64) <= 2 * budget + 1);
    }

    #[test]
    fn table_rejects_small_box_and_huge_box() {
        let scn = scn_1d(QSetKind::AllIntegers, 2.0, 0.0);
        let b = bump_for(&scn);
        assert!(matches!(
            fm_hat_table(&scn, &b, 16.0, 8),
            Err(SalemError::Input(_))
        ));
        assert!(matches!(
            fm_hat_table_with_cap(&scn, &b, 16.0, 1 << 20, 100),
            Err(SalemError::BoxTooLarge { .. })
        ));
    }

    #[test]
    fn table_mn_case_matches_divisor_route() {
        let scn = scn_mn(2, 1, 0.5);
        let b = bump_for(&scn);
        let table = fm_hat_table(&scn, &b, 8.0, 32).unwrap();
        assert!((table.get(&[0, 0]).re - 1.0).abs() < 1e-12);
        for ell in [[5i64, 10], [6, -6], [0, 7], [12, 18], [32, 8]] {
            let direct = fm_hat(&scn, &b, 8.0, &ell).unwrap();
            assert!((direct - table.get(&ell)).norm() < 1e-13, "{ell:?}");
        }
        for (ell, _) in &table.coeffs {
            let r = ell.iter().map(|&c| c.abs()).max().unwrap();
            assert!(!(r > 0 && r <= 4), "structural zero stored at {ell:?}");
        }
    }

    #[test]
    fn dft_oracle_matches_fm_hat_1d() {
        let scn = scn_1d(QSetKind::AllIntegers, 2.0, 0.3);
        let b = bump_for(&scn);
        let n = 1 << 14;
        let samples = sample_fm_period(&scn, &b, 8.0, n).unwrap();
        let coeffs = dft_coefficients(&samples, &[n]).unwrap();
        let mut worst = 0.0f64;
        for l in -(1i64 << 12)..=(1 << 12) {
            let exact = fm_hat(&scn, &b, 8.0, &[l]).unwrap();
            let approx = dft_bin(&coeffs, &[n], &[l]);
            worst = worst.max((exact - approx).norm());
        }
        assert!(worst < 1e-6, "worst abs error = {worst}");
    }

    #[test]
    fn dft_oracle_matches_fm_hat_2d() {
        // m = 2, n = 1 on a 2^7-per-axis grid (test-sized; the acceptance run
        // uses 2^9)
        let scn = scn_mn(2, 1, 0.5);
        let b = bump_for(&scn);
        let per = 1 << 7;
        let samples = sample_fm_period(&scn, &b, 8.0, per).unwrap();
        let coeffs = dft_coefficients(&samples, &[per, per]).unwrap();
        let mut worst = 0.0f64;
        for l1 in -16i64..=16 {
            for l2 in -16i64..=16 {
                let exact = fm_hat(&scn, &b, 8.0, &[l1, l2]).unwrap();
                let approx = dft_bin(&coeffs, &[per, per], &[l1, l2]);
                worst = worst.max((exact - approx).norm());
            }
        }
        assert!(worst < 1e-5, "worst abs error = {worst}");
    }

    #[test]
    fn parseval_partial_sum_below_energy() {
        let scn = scn_1d(QSetKind::AllIntegers, 2.0, 0.0);
        let b = bump_for(&scn);
        let n = 1 << 13;
        let mut energy = 0.0;
        for i in 0..n {
            let x = (i as f64 + 0.5) / n as f64;
            let v = fm_eval(&scn, &b, 8.0, &[x]).unwrap();
            energy += v * v / n as f64;
        }
        let small = fm_hat_table(&scn, &b, 8.0, 32).unwrap();
        let large = fm_hat_table(&scn, &b, 8.0, 128).unwrap();
        let sum = |t: &SpectrumTable| -> f64 { t.coeffs.values().map(|v| v.norm_sqr()).sum() };
        let (s_small, s_large) = (sum(&small), sum(&large));
        assert!(s_small <= s_large && s_large <= energy + 1e-9);
        // equality approached as the box grows
        assert!(energy - s_large < energy - s_small + 1e-12);
    }

    #[test]
    fn envelope_trivial_and_monotone() {
        let scn = scn_1d(QSetKind::AllIntegers, 2.0, 0.3);
        let b = bump_for(&scn);
        let table = fm_hat_table(&scn, &b, 32.0, 512).unwrap();
        // a = 0, h = 1, zeta = 1: envelope >= 1 so ratios <= 1
        let fit = envelope_check(&table, 0.0, 1.0, 1.0, b.decay_constant()).unwrap();
        assert!(fit.c_fit <= 1.0 + 1e-12);
        assert!(fit.pass);
        // increasing zeta never increases the max ratio
        let lo = envelope_check(&table, 1.0 / 3.0, 4.0, 0.8, b.decay_constant()).unwrap();
        let hi = envelope_check(&table, 1.0 / 3.0, 4.0, 0.99, b.decay_constant()).unwrap();
        assert!(hi.c_fit <= lo.c_fit + 1e-15);
        assert!(envelope_check(&table, 0.0, 1.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn envelope_certified_scenario_bounded_by_c1() {
        let scn = scn_1d(QSetKind::AllIntegers, 2.0, 0.0);
        let b = bump_for(&scn);
        let table = fm_hat_table(&scn, &b, 32.0, 512).unwrap();
        let fit = envelope_check(&table, 1.0 / 3.0, 4.0, 0.99, b.decay_constant()).unwrap();
        assert!(fit.pass, "max ratio {} vs C1 {}", fit.c_fit, fit.c1);
        assert!(!fit.residuals.is_empty());
    }

    #[test]
    fn tail_bound_shrinks_with_truncation() {
        // doubling the truncation radius shrinks the tail by ~2^(K - dim)
        // (asymptotic rate; allow a 10% finite-size correction)
        let t1 = conv_tail_bound(1.0, 6, 1, 64, 0.0).unwrap();
        let t2 = conv_tail_bound(1.0, 6, 1, 128, 0.0).unwrap();
        assert!(t2 * 2f64.powi(6 - 1) * 0.9 <= t1, "{t1} vs {t2}");
        let u1 = conv_tail_bound(1.0, 6, 2, 64, 0.0).unwrap();
        let u2 = conv_tail_bound(1.0, 6, 2, 128, 0.0).unwrap();
        assert!(u2 * 2f64.powi(6 - 2) * 0.9 <= u1, "{u1} vs {u2}");
        // brute cross-check in 1d: exact sum over |l| > 64
        let mut exact = 0.0;
        for l in 65..2_000_000i64 {
            exact += 2.0 * (1.0 + l as f64).powi(-6);
        }
        assert!(t1 >= exact && t1 <= exact * 1.5, "{t1} vs exact {exact}");
        assert!(conv_tail_bound(1.0, 6, 1, 8, 10.0).is_err());
        assert!(conv_tail_bound(1.0, 2, 2, 64, 0.0).is_err());
    }

    fn chi0_gridded(dim: usize, r: u32, radius: f64) -> GriddedSpectrum {
        let b = BumpSpec::new(dim, 6).unwrap();
        let grid = FourierGrid::new(dim, r, radius).unwrap();
        let values = (0..grid.len())
            .map(|f| Complex64::new(b.hat(&grid.point(f)), 0.0))
            .collect();
        GriddedSpectrum {
            grid,
            values,
            c2: b.decay_constant(),
            k_decay: 6,
        }
    }

    #[test]
    fn windowed_identity_table_returns_chi() {
        let chi = chi0_gridded(1, 8, 80.0);
        let fm = SpectrumTable::identity(1, 1, 64);
        let (out, tails) = windowed_spectrum(&chi, &fm, 14.0, 64).unwrap();
        for flat in 0..out.grid.len() {
            let idx = out.grid.index(flat);
            assert_eq!(out.values[flat], chi.at(&idx).unwrap());
        }
        assert!(tails.bound(14.0) > tails.bound(0.0));
    }

    #[test]
    fn windowed_reports_required_enlargement() {
        let chi = chi0_gridded(1, 8, 40.0);
        let fm = SpectrumTable::identity(1, 1, 64);
        match windowed_spectrum(&chi, &fm, 14.0, 64) {
            Err(SalemError::GridTooSmall { radius, required }) => {
                assert_eq!(radius, 40.0);
                assert_eq!(required, 78.0);
            }
            other => panic!("expected GridTooSmall, got {other:?}"),
        }
        assert!(windowed_spectrum(&chi, &fm, 70.0, 64).is_err());
    }

    #[test]
    fn windowed_matches_dense_product_dft() {
        // chi = chi0 on [-1,1], F_M with M = 8: compare the lattice
        // convolution against the DFT of the gridded product chi * F_M over a
        // period-4 torus (both supported well inside).
        let scn = scn_1d(QSetKind::AllIntegers, 2.0, 0.3);
        let b = bump_for(&scn);
        let m_val = 8.0;
        let period = 4.0;
        let n = 1 << 14;
        let chi_bump = BumpSpec::new(1, 6).unwrap();
        let mut samples = vec![0.0; n];
        for (i, slot) in samples.iter_mut().enumerate() {
            let x = -period / 2.0 + period * i as f64 / n as f64;
            *slot = chi_bump.eval(&[x]) * fm_eval(&scn, &b, m_val, &[x]).unwrap();
        }
        let coeffs = dft_coefficients(&samples, &[n]).unwrap();

        let l_trunc = 96i64;
        let chi = chi0_gridded(1, 4, 16.0 + l_trunc as f64);
        let fm = fm_hat_table(&scn, &b, m_val, l_trunc).unwrap();
        let (out, tails) = windowed_spectrum(&chi, &fm, 16.0, l_trunc).unwrap();
        let mut worst = 0.0f64;
        for flat in 0..out.grid.len() {
            let xi = out.grid.point(flat)[0];
            // DFT bin j corresponds to frequency j / period; grid step 1/4
            // aligns exactly
            let j = (xi * period).round() as i64;
            // torus DFT approximates (1/period) * transform at xi; and the
            // phase reference is x = -period/2
            let approx = dft_bin(&coeffs, &[n], &[j])
                * period
                * Complex64::from_polar(1.0, -std::f64::consts::PI * j as f64);
            let err = (out.values[flat] - approx).norm();
            worst = worst.max(err);
            assert!(
                err <= 1e-6 + tails.bound(xi.abs()),
                "xi = {xi}: err {err}, tail {}",
                tails.bound(xi.abs())
            );
        }
        assert!(worst < 1e-5, "worst = {worst}");
    }

    #[test]
    fn table_csv_export_roundtrips() {
        let scn = scn_1d(QSetKind::AllIntegers, 2.0, 0.3);
        let b = bump_for(&scn);
        let table = fm_hat_table(&scn, &b, 16.0, 64).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("table.csv");
        let meta = dir.path().join("table.json");
        table.export_csv(&csv, &meta).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "l1,re,im");
        assert_eq!(lines.count(), table.coeffs.len());
        let meta_v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&meta).unwrap()).unwrap();
        assert_eq!(meta_v["M"], 16.0);
        assert_eq!(meta_v["window_size"], 16);
        // determinism: a second export is byte-identical
        let csv2 = dir.path().join("table2.csv");
        let meta2 = dir.path().join("table2.json");
        table.export_csv(&csv2, &meta2).unwrap();
        assert_eq!(std::fs::read(&csv).unwrap(), std::fs::read(&csv2).unwrap());
    }
}
