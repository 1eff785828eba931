//! The measure recursion: the decay envelope g, the scale selection M*, the
//! levels mu_k with densities chi_0 F_{M_1} ... F_{M_k}, and the convergence,
//! support, and normalization diagnostics.
//!
//! Internally each level k is represented by a dense integer-lattice
//! coefficient table T_k with mu_hat_k(xi) = sum_l T_k(l) chi_0^(xi - l),
//! where T_k is the lattice convolution of the window spectra
//! F^_{M_1}, ..., F^_{M_k}. Every truncation (stored range, readout window,
//! band cutoff) carries an explicit certified error bound, built from the
//! pointwise envelope |F^_M(l)| <= min(1, 2 tau(l)/|Q(M)|) env(eps |l| / M)
//! with tau bounded by the explicit Wigert/Nicolas-Robin divisor estimate.
//! Scales so large that their bands cannot reach the stored range are handled
//! without enumeration: the table is unchanged and the full deviation is
//! certified analytically.

use std::io::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::bump::BumpSpec;
use crate::error::{Result, SalemError};
use crate::grid::{FourierGrid, SpatialGrid};
use crate::scenario::{certified_at, HSpec, Scenario};
use crate::spectrum::{conv_tail_bound, fm_hat_table_with_cap, GriddedSpectrum, SpectrumTable};

/// The decay envelope: g = 1 for |xi| <= e, else
/// |xi|^{-a} exp(ln|xi| / ln ln|xi|) h(4|xi|). Blows up as |xi| decreases to
/// e from above, which only loosens every bound that uses it.
#[derive(Debug, Clone)]
pub struct Envelope {
    pub a: f64,
    pub h: HSpec,
}

impl Envelope {
    pub fn for_scenario(scenario: &Scenario) -> Self {
        Envelope {
            a: scenario.params.a,
            h: scenario.params.h.clone(),
        }
    }

    /// g at max-norm radius xi_norm >= 0.
    pub fn g(&self, xi_norm: f64) -> f64 {
        if xi_norm <= std::f64::consts::E {
            1.0
        } else {
            let u = xi_norm.ln();
            xi_norm.powf(-self.a) * (u / u.ln()).exp() * self.h.eval(4.0 * xi_norm)
        }
    }
}

/// Fixed lattice geometry shared by every level of a build: the output box
/// |xi| <= x_radius on the grid (1/r) Z^dim, a readout window of half-width w
/// around each output point, and the stored table range |l| <= half.
#[derive(Debug, Clone)]
pub struct BuildGeometry {
    pub dim: usize,
    pub r: u32,
    pub x_radius: f64,
    /// Readout window half-width (integer lattice units).
    pub w: i64,
    /// Stored coefficient range per axis.
    pub half: i64,
}

impl BuildGeometry {
    pub fn new(dim: usize, r: u32, x_radius: f64) -> Result<Self> {
        if dim == 0 {
            return Err(SalemError::Input("geometry needs dim >= 1".into()));
        }
        if !(x_radius > 0.0) || !x_radius.is_finite() {
            return Err(SalemError::Input(format!(
                "output radius {x_radius} must be positive and finite"
            )));
        }
        // The extra margin beyond x_radius + w keeps the certified truncation
        // errors far below every level budget.
        let (w, extra) = match dim {
            1 => (64i64, 8192i64),
            2 => (16, 128),
            _ => (4, 16),
        };
        let half = x_radius.ceil() as i64 + w + extra;
        let cells = (2 * half + 1).checked_pow(dim as u32).unwrap_or(i64::MAX) as u64;
        let cap = 30_000_000u64;
        if cells > cap {
            return Err(SalemError::BoxTooLarge {
                requested: cells,
                cap,
            });
        }
        Ok(BuildGeometry {
            dim,
            r,
            x_radius,
            w,
            half,
        })
    }
}

// ---------------------------------------------------------------------------
// Certified envelope arithmetic
// ---------------------------------------------------------------------------

/// min(1, (knee / t)^p) with knee = p / (2 pi): a pointwise bound on the
/// factor transform |phi^(t)| = |sinc(2 t / p)|^p.
fn phi_env(p: u32, t: f64) -> f64 {
    let knee = p as f64 / (2.0 * std::f64::consts::PI);
    if t <= knee {
        1.0
    } else {
        (knee / t).powi(p as i32)
    }
}

/// Explicit divisor bound tau(n) <= exp(1.5379 ln 2 * ln n / ln ln n)
/// (valid for n >= 3; tau(1) = 1, tau(2) = 2).
fn tau_upper(x: f64) -> f64 {
    if x < 2.0 {
        1.0
    } else if x < 3.0 {
        2.0
    } else {
        let c = 1.5379 * std::f64::consts::LN_2;
        (c * x.ln() / x.ln().ln()).exp()
    }
}

/// Bound on the number of window elements contributing to F^_M(l), divided by
/// the window size: min(1, 2 tau(|l|) / |Q(M)|) when q is scalar (each
/// contributing q divides the scalar index), else the trivial 1.
fn div_weight(scalar_q: bool, window_count: f64, l_norm: f64) -> f64 {
    if scalar_q && window_count > 0.0 {
        (2.0 * tau_upper(l_norm) / window_count).min(1.0)
    } else {
        1.0
    }
}

/// Lattice point count with max-norm in (a, b], computed in f64.
fn shell_count(dim: usize, a: f64, b: f64) -> f64 {
    let cube = |t: f64| (2.0 * t + 1.0).powi(dim as i32);
    (cube(b.floor()) - cube(a.floor())).max(0.0)
}

/// Certified bound on sum over lattice l with |l| > start of
/// div_weight(|l|) * phi_env(p, eps |l| / m) * wfun(|l|), for a decreasing
/// weight wfun, by dyadic blocks (env and wfun at the block's left end, the
/// divisor bound at its right end). Returns +inf if the sum fails to converge
/// within the block budget.
fn dyadic_band_sum(
    dim: usize,
    p: u32,
    eps: f64,
    m_val: f64,
    window_count: f64,
    scalar_q: bool,
    start: f64,
    wfun: &dyn Fn(f64) -> f64,
) -> f64 {
    let mut s = start.max(0.5);
    let mut acc = 0.0f64;
    for _ in 0..2000 {
        let e = phi_env(p, eps * s / m_val);
        let cnt = shell_count(dim, s, 2.0 * s);
        let term = cnt * div_weight(scalar_q, window_count, 2.0 * s) * e * wfun(s);
        if term.is_finite() {
            acc += term;
        } else if e == 0.0 || wfun(s) == 0.0 {
            return acc;
        } else {
            return f64::INFINITY;
        }
        if term <= acc * 1e-12 + 1e-280 && e < 1.0 {
            return acc;
        }
        s *= 2.0;
        if s > 1e300 {
            return acc;
        }
    }
    f64::INFINITY
}

/// Certified bound on sup over |l| > start of div_weight(|l|) phi_env(...):
/// the per-block maxima eventually decrease once the envelope passes its knee,
/// so the scan terminates; 1 is always a valid fallback.
fn band_sup(p: u32, eps: f64, m_val: f64, window_count: f64, scalar_q: bool, start: f64) -> f64 {
    let mut s = start.max(0.5);
    let mut best = 0.0f64;
    for _ in 0..2000 {
        let e = phi_env(p, eps * s / m_val);
        let bound = div_weight(scalar_q, window_count, 2.0 * s) * e;
        best = best.max(bound);
        if e < 1.0 && bound < best.max(1e-280) * 1e-9 {
            return best.min(1.0);
        }
        s *= 2.0;
        if s > 1e300 {
            return best.min(1.0);
        }
    }
    1.0
}

// ---------------------------------------------------------------------------
// Band tables
// ---------------------------------------------------------------------------

/// Dense lattice coefficient table T_k for one level, together with the
/// certified analytic data used by every truncation bound.
#[derive(Debug, Clone)]
pub struct BandTable {
    /// Selected scale (0 at level 0).
    pub m_val: f64,
    pub eps: f64,
    pub window_count: f64,
    /// True when the scale's bands lie entirely outside the stored range, so
    /// the table equals the previous level's and the deviation is certified
    /// analytically.
    pub beyond_band: bool,
    /// Certified l1 bound of the level's own factor F^_{M_k} (1 at level 0).
    pub fmass: f64,
    /// Certified l1 bound of T_k (product of the factor masses).
    pub l1: f64,
    /// Certified sup bound of |T_k| over the whole lattice.
    pub sup: f64,
    /// Certified sup bound of |F^_{M_k}| over its band |l| > M_k / 2.
    pub supband: f64,
    /// Max |stored entry|.
    pub stored_sup: f64,
    /// Certified per-entry error of the stored values.
    pub entry_err: f64,
    /// Certified readout error: |mu_hat_k(xi) - readout_k(xi)| <= read_err
    /// for every |xi| <= x_radius.
    pub read_err: f64,
    /// Indexing lattice (resolution 1, range +-half per axis).
    pub lattice: FourierGrid,
    pub values: Vec<Complex64>,
}

impl BandTable {
    /// The level-0 table: a unit mass at l = 0 (T_0 = delta, mu_0 = chi_0).
    pub fn level_zero(geom: &BuildGeometry, chi0: &BumpSpec) -> Result<BandTable> {
        let lattice = FourierGrid::new(geom.dim, 1, geom.half as f64)?;
        let mut values = vec![Complex64::new(0.0, 0.0); lattice.len()];
        let origin = lattice.flat(&vec![0i64; geom.dim]).expect("origin on lattice");
        values[origin] = Complex64::new(1.0, 0.0);
        let mut table = BandTable {
            m_val: 0.0,
            eps: 1.0,
            window_count: 1.0,
            beyond_band: false,
            fmass: 1.0,
            l1: 1.0,
            sup: 1.0,
            supband: 0.0,
            stored_sup: 1.0,
            entry_err: 0.0,
            read_err: 0.0,
            lattice,
            values,
        };
        table.read_err = readout_error(&[&table], geom, chi0);
        Ok(table)
    }

    /// Coefficient at l; indices outside the stored range read as 0.
    pub fn get(&self, idx: &[i64]) -> Complex64 {
        self.lattice
            .flat(idx)
            .map(|f| self.values[f])
            .unwrap_or(Complex64::new(0.0, 0.0))
    }
}

/// Certified bound on the l1 mass of T_k outside |l| <= s, by the recursive
/// split |j + m| > s => |j| > s/2 or |m| > s/2.
fn tail_l1(chain: &[&BandTable], k: usize, s: f64) -> f64 {
    if k == 0 {
        return if s <= 0.0 { 1.0 } else { 0.0 };
    }
    let cur = chain[k];
    if s <= 0.0 {
        return cur.l1;
    }
    let dim = cur.lattice.dim;
    let scalar_q = dim == 1;
    let prev_l1 = chain[k - 1].l1;
    let f_tail = dyadic_band_sum(
        dim,
        table_p(cur),
        cur.eps,
        cur.m_val.max(1.0),
        cur.window_count,
        scalar_q,
        (s / 2.0).max(cur.m_val / 2.0),
        &|_| 1.0,
    );
    let split = tail_l1(chain, k - 1, s / 2.0) * cur.fmass + prev_l1 * f_tail;
    split.min(cur.l1)
}

/// The spline order of the factor bump behind a level's window spectrum.
/// Every build uses the same smoothness class, so this is a constant of the
/// chain; level 0 carries no factor and the value is never used there.
fn table_p(_table: &BandTable) -> u32 {
    FACTOR_P
}

/// Spline order p = K + 2 for the fixed smoothness class K = 6.
const FACTOR_P: u32 = 8;

/// Certified bound on sup |T_k(l)| over |l| >= s.
fn t_sup_env(chain: &[&BandTable], k: usize, s: f64) -> f64 {
    if k == 0 {
        return if s <= 0.0 { 1.0 } else { 0.0 };
    }
    let cur = chain[k];
    if s <= 0.0 {
        return cur.sup;
    }
    let u = s / 2.0;
    let f_sup = if u <= cur.m_val / 2.0 {
        // structural zeros: no bands below M/2, but the l = 0 unit mass makes
        // the sup over |l| >= u trivially 1 only when u <= 0 (handled above)
        band_sup(
            table_p(cur),
            cur.eps,
            cur.m_val.max(1.0),
            cur.window_count,
            cur.lattice.dim == 1,
            cur.m_val / 2.0,
        )
    } else {
        band_sup(
            table_p(cur),
            cur.eps,
            cur.m_val.max(1.0),
            cur.window_count,
            cur.lattice.dim == 1,
            u,
        )
    };
    let split = t_sup_env(chain, k - 1, u) * cur.fmass + chain[k - 1].l1 * f_sup;
    let additive = t_sup_env(chain, k - 1, s) + cur.supband * chain[k - 1].l1;
    cur.sup.min(split).min(additive)
}

/// Certified bound on sup over |t| >= s of sum_j |T_k(j)| |chi_0^(t - j)|:
/// near mass meets the far transform tail, far mass meets the lattice sum.
fn smoothed_env(chain: &[&BandTable], k: usize, s: f64, chi0: &BumpSpec, s0_pow: f64) -> f64 {
    let c2 = chi0.decay_constant();
    let kk = chi0.k as i32;
    let s = s.max(0.0);
    let near = chain[k].l1 * c2 * (1.0 + s / 2.0).powi(-kk);
    let far = s0_pow * t_sup_env(chain, k, s / 2.0);
    near + far
}

/// Per-axis bound on sup_t sum_{j in Z} |chi_0^(t - j)|, raised to the
/// ambient dimension for the full-lattice transform sum. Uses the exact
/// factor envelope |sinc(2 xi / p)^p| <= phi_env(p, |xi|): reducing t to
/// [0, 1/2] gives |t - j| >= |j| - 1/2 for every lattice translate.
fn s0_power(chi0: &BumpSpec) -> f64 {
    let p = chi0.p;
    let mut per_axis = phi_env(p, 0.0);
    for j in 1..10_000i64 {
        let term = 2.0 * phi_env(p, j as f64 - 0.5);
        per_axis += term;
        if term < per_axis * 1e-15 {
            break;
        }
    }
    per_axis.powi(chi0.dim as i32)
}

/// Certified readout error of the top table of a chain: transform mass beyond
/// the readout window, entries beyond the stored range, and the accumulated
/// per-entry truncation error across the window.
fn readout_error(chain: &[&BandTable], geom: &BuildGeometry, chi0: &BumpSpec) -> f64 {
    let top = chain[chain.len() - 1];
    let c2 = chi0.decay_constant();
    let dim = geom.dim;
    let tail_w = conv_tail_bound(c2, chi0.k, dim, geom.w - 1, 0.5).unwrap_or(f64::INFINITY);
    let outer = conv_tail_bound(c2, chi0.k, dim, geom.half, geom.x_radius)
        .unwrap_or(f64::INFINITY);
    let k = chain.len() - 1;
    (top.stored_sup + top.entry_err) * tail_w
        + t_sup_env(chain, k, geom.half as f64) * outer
        + top.entry_err * s0_power(chi0)
}

// ---------------------------------------------------------------------------
// Level construction
// ---------------------------------------------------------------------------

/// Guard on (q, k) pairs when tabulating a window spectrum for a level.
const LEVEL_TABLE_CAP: u64 = 60_000_000;

/// Dense lattice convolution dst(l) = sum_m fm(m) prev(l - m), restricted to
/// the stored range. Deterministic: terms are applied in sorted key order.
fn convolve_dense(prev: &BandTable, fm: &SpectrumTable, lattice: &FourierGrid) -> Vec<Complex64> {
    let dim = lattice.dim;
    let mut values = vec![Complex64::new(0.0, 0.0); lattice.len()];
    if dim == 1 {
        let half = lattice.half;
        let terms: Vec<(i64, Complex64)> =
            fm.coeffs.iter().map(|(l, &v)| (l[0], v)).collect();
        let chunk = 4096usize;
        values
            .par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(ci, dst)| {
                let base = ci as i64 * chunk as i64 - half; // l of dst[0]
                for &(m, coeff) in &terms {
                    // prev index of dst[i]: base + i - m + prev.half
                    for (i, d) in dst.iter_mut().enumerate() {
                        let src = base + i as i64 - m;
                        if src >= -prev.lattice.half && src <= prev.lattice.half {
                            *d += coeff * prev.values[(src + prev.lattice.half) as usize];
                        }
                    }
                }
            });
    } else {
        values
            .par_iter_mut()
            .enumerate()
            .for_each(|(flat, slot)| {
                let idx = lattice.index(flat);
                let mut shifted = vec![0i64; dim];
                let mut sum = Complex64::new(0.0, 0.0);
                for (m, &coeff) in &fm.coeffs {
                    for d in 0..dim {
                        shifted[d] = idx[d] - m[d];
                    }
                    if let Some(f) = prev.lattice.flat(&shifted) {
                        sum += coeff * prev.values[f];
                    }
                }
                *slot = sum;
            });
    }
    values
}

/// Extends a chain by one level at scale m_val. Returns the new table and,
/// for a beyond-band scale, the certified bound on the full deviation
/// sup_{|xi| <= X} |mu_hat_k(xi) - mu_hat_{k-1}(xi)|.
pub fn extend_level(
    scenario: &Scenario,
    phi: &BumpSpec,
    chi0: &BumpSpec,
    chain: &[&BandTable],
    m_val: f64,
    geom: &BuildGeometry,
) -> Result<(BandTable, Option<f64>)> {
    let prev = chain[chain.len() - 1];
    let k_prev = chain.len() - 1;
    let dim = geom.dim;
    let scalar_q = dim == 1;
    let eps = scenario.epsilon(m_val)?;
    let window_count = scenario.q.window_count(m_val)? as f64;
    if window_count == 0.0 {
        return Err(SalemError::EmptyWindow { m: m_val });
    }
    let p = phi.p;
    debug_assert_eq!(p, FACTOR_P);

    let fmass = 1.0
        + dyadic_band_sum(dim, p, eps, m_val, window_count, scalar_q, m_val / 2.0, &|_| 1.0);
    let supband = band_sup(p, eps, m_val, window_count, scalar_q, m_val / 2.0);
    let l1 = prev.l1 * fmass;
    let sup = (prev.sup * fmass)
        .min(prev.l1)
        .min(prev.sup + supband * prev.l1);
    let s0_pow = s0_power(chi0);

    let beyond = m_val > 2.0 * geom.half as f64;
    if beyond {
        // The bands start at M/2 > half: stored coefficients are unchanged and
        // the entire deviation against the previous level is certified from
        // the envelopes.
        let dev_cert = dyadic_band_sum(
            dim,
            p,
            eps,
            m_val,
            window_count,
            scalar_q,
            m_val / 2.0,
            &|s| smoothed_env(chain, k_prev, s - geom.x_radius, chi0, s0_pow),
        );
        let entry_err = prev.entry_err
            + supband * tail_l1(chain, k_prev, m_val / 2.0 - geom.half as f64);
        let mut table = BandTable {
            m_val,
            eps,
            window_count,
            beyond_band: true,
            fmass,
            l1,
            sup,
            supband,
            stored_sup: prev.stored_sup,
            entry_err,
            read_err: 0.0,
            lattice: prev.lattice.clone(),
            values: prev.values.clone(),
        };
        let mut full: Vec<&BandTable> = chain.to_vec();
        full.push(&table);
        let read_err = readout_error(&full, geom, chi0);
        drop(full);
        table.read_err = read_err;
        return Ok((table, Some(dev_cert)));
    }

    // Normal path: tabulate F^_{M_k} over |l| <= 2 half so that every stored
    // output coefficient combines only stored inputs.
    let l_max = 2 * geom.half;
    let fm = fm_hat_table_with_cap(scenario, phi, m_val, l_max, LEVEL_TABLE_CAP)?;
    let lattice = prev.lattice.clone();
    let values = convolve_dense(prev, &fm, &lattice);
    let stored_sup = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let tmass: f64 = fm.coeffs.values().map(|v| v.norm()).sum();
    let entry_err = prev.entry_err * tmass + tail_l1(chain, k_prev, geom.half as f64);
    let mut table = BandTable {
        m_val,
        eps,
        window_count,
        beyond_band: false,
        fmass,
        l1,
        sup,
        supband,
        stored_sup,
        entry_err,
        read_err: 0.0,
        lattice,
        values,
    };
    let mut full: Vec<&BandTable> = chain.to_vec();
    full.push(&table);
    let read_err = readout_error(&full, geom, chi0);
    drop(full);
    table.read_err = read_err;
    Ok((table, None))
}

/// Samples the readout sum_{|xi - l| <= w} T(l) chi_0^(xi - l) on the grid.
pub fn readout(table: &BandTable, chi0: &BumpSpec, grid: &FourierGrid, w: i64) -> Vec<Complex64> {
    let dim = grid.dim;
    (0..grid.len())
        .into_par_iter()
        .map(|flat| {
            let xi = grid.point(flat);
            let lo: Vec<i64> = xi.iter().map(|&c| (c - w as f64).ceil() as i64).collect();
            let hi: Vec<i64> = xi.iter().map(|&c| (c + w as f64).floor() as i64).collect();
            let mut idx = lo.clone();
            let mut diff = vec![0.0f64; dim];
            let mut sum = Complex64::new(0.0, 0.0);
            loop {
                if let Some(f) = table.lattice.flat(&idx) {
                    let v = table.values[f];
                    if v != Complex64::new(0.0, 0.0) {
                        for d in 0..dim {
                            diff[d] = xi[d] - idx[d] as f64;
                        }
                        sum += v * chi0.hat(&diff);
                    }
                }
                // odometer
                let mut pos = dim;
                loop {
                    if pos == 0 {
                        break;
                    }
                    pos -= 1;
                    idx[pos] += 1;
                    if idx[pos] <= hi[pos] {
                        pos = usize::MAX;
                        break;
                    }
                    idx[pos] = lo[pos];
                }
                if pos != usize::MAX {
                    break;
                }
            }
            sum
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Scale selection
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct SelectedScale {
    pub m_star: f64,
    pub table: BandTable,
    /// Readout of the accepted level on the verification grid.
    pub readout: Vec<Complex64>,
    /// Worst certified deviation ratio over the grid (<= 1).
    pub margin: f64,
    /// Certified non-grid part of the deviation bound: readout errors for an
    /// enumerated scale, the full analytic deviation for a beyond-band scale.
    pub dev_cert: f64,
}

/// Smallest certified M in Mset with M >= m0 whose update stays within
/// delta g over the whole verification grid, including every certified
/// truncation error. A finite Mset cannot express "sufficiently large", so
/// exhaustion is an error carrying the best margin seen.
#[allow(clippy::too_many_arguments)]
pub fn select_m_star(
    scenario: &Scenario,
    phi: &BumpSpec,
    chi0: &BumpSpec,
    chain: &[&BandTable],
    prev_readout: &[Complex64],
    grid: &FourierGrid,
    geom: &BuildGeometry,
    env: &Envelope,
    delta: f64,
    m0: f64,
    level: usize,
) -> Result<SelectedScale> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(SalemError::Domain(format!(
            "delta = {delta} must lie in (0, 1]"
        )));
    }
    let mut best_margin = f64::INFINITY;
    for &m in &scenario.params.m_set {
        if m < m0 {
            continue;
        }
        if !certified_at(scenario, m)? {
            continue;
        }
        let (table, analytic_dev) = match extend_level(scenario, phi, chi0, chain, m, geom) {
            Ok(out) => out,
            Err(SalemError::BoxTooLarge { .. }) | Err(SalemError::EmptyWindow { .. }) => continue,
            Err(e) => return Err(e),
        };
        let (margin, dev_cert, out) = match analytic_dev {
            Some(dev) => {
                let dev_cert = dev + table.read_err + chain[chain.len() - 1].read_err;
                // g >= 1 everywhere, so the worst grid ratio is at most this
                let margin = dev_cert / delta;
                (margin, dev_cert, None)
            }
            None => {
                let out = readout(&table, chi0, grid, geom.w);
                let dev_cert = table.read_err + chain[chain.len() - 1].read_err;
                let margin = (0..grid.len())
                    .into_par_iter()
                    .map(|flat| {
                        let dev = (out[flat] - prev_readout[flat]).norm() + dev_cert;
                        dev / (delta * env.g(grid.point_norm(flat)))
                    })
                    .reduce(|| 0.0, f64::max);
                (margin, dev_cert, Some(out))
            }
        };
        if margin.is_finite() && margin <= 1.0 {
            let readout_vals = match out {
                Some(v) => v,
                None => prev_readout.to_vec(), // identical stored table
            };
            return Ok(SelectedScale {
                m_star: m,
                table,
                readout: readout_vals,
                margin,
                dev_cert,
            });
        }
        if margin.is_finite() {
            best_margin = best_margin.min(margin);
        }
    }
    Err(SalemError::MsetExhausted { level, best_margin })
}

// ---------------------------------------------------------------------------
// The full build
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct MeasureLevel {
    pub k: usize,
    /// Selected scale; 0 at level 0 (no F factor yet).
    pub m_k: f64,
    /// Update budget 2^{-k-1}; 0 at level 0.
    pub delta_k: f64,
    /// Worst certified deviation ratio accepted by the selection (0 at level 0).
    pub margin: f64,
    /// Samples of chi_0 F_{M_1} ... F_{M_k} on the shared spatial grid.
    pub density: Vec<f64>,
    /// Readout of mu_hat_k on the shared verification grid.
    pub spectrum: GriddedSpectrum,
    /// Certified readout error of this level's spectrum samples.
    pub read_err: f64,
    /// Certified non-grid part of the level's deviation bound.
    pub dev_cert: f64,
    /// The level's coefficient table.
    pub table: BandTable,
}

#[derive(Debug)]
pub struct MeasureBuild {
    pub spatial: SpatialGrid,
    pub grid: FourierGrid,
    pub geom: BuildGeometry,
    pub levels: Vec<MeasureLevel>,
    pub env: Envelope,
    /// Decay constant of the 1-factor bump phi (reported).
    pub c1: f64,
}

impl MeasureBuild {
    pub fn top(&self) -> &MeasureLevel {
        self.levels.last().unwrap()
    }
}

pub fn default_spatial_per_axis(mn: usize) -> usize {
    match mn {
        1 => 1 << 14,
        2 => 1 << 9,
        _ => 1 << 6,
    }
}

/// Density multiplication by F_{M_k} at a beyond-band scale: the strip
/// half-width eps is far below the grid spacing, so a grid midpoint carries
/// mass exactly when x q - theta is an exact lattice hit for some window q,
/// counted by modular arithmetic instead of enumeration.
fn beyond_density_factor(
    scenario: &Scenario,
    phi: &BumpSpec,
    m_val: f64,
    eps: f64,
    num: i64,
    den: i64,
) -> Result<f64> {
    if scenario.mn() != 1 || !matches!(scenario.q.kind, crate::qsets::QSetKind::AllIntegers) {
        return Err(SalemError::Domain(
            "beyond-band density needs m = n = 1 over all_integers".into(),
        ));
    }
    if eps * den as f64 >= 1.0 {
        return Err(SalemError::Domain(
            "beyond-band density needs eps below the grid spacing".into(),
        ));
    }
    let theta = scenario.params.theta[0];
    let t_f = theta * den as f64;
    let t = t_f.round() as i64;
    if (t_f - t as f64).abs() > 1e-9 {
        return Err(SalemError::Domain(format!(
            "theta = {theta} is not resolvable on the spatial grid"
        )));
    }
    // q num = t (mod den); num is odd and den a power of two, so num is
    // invertible and the hit residue class is num^{-1} t.
    let den_u = den as i128;
    let r0 = (mod_inverse(num.rem_euclid(den), den)? as i128 * t as i128).rem_euclid(den_u) as i64;
    let hi = m_val.floor() as i128;
    let lo = (m_val / 2.0).floor() as i128; // window is (lo, hi]
    let count_pos = count_residue(lo, hi, r0 as i128, den_u);
    // negative side: q in [-hi, -lo): -q = q' in (lo, hi] with q' = -r0 class
    let count_neg = count_residue(lo, hi, (-(r0 as i128)).rem_euclid(den_u), den_u);
    let hits = (count_pos + count_neg) as f64;
    let window = scenario.q.window_count(m_val)? as f64;
    Ok(hits * phi.factor(0.0) / (eps * window))
}

/// Count of integers q in (lo, hi] with q = r (mod den).
fn count_residue(lo: i128, hi: i128, r: i128, den: i128) -> i128 {
    let f = |x: i128| (x - r).div_euclid(den);
    f(hi) - f(lo)
}

fn mod_inverse(a: i64, den: i64) -> Result<i64> {
    // extended Euclid
    let (mut r0, mut r1) = (den as i128, a as i128);
    let (mut s0, mut s1) = (0i128, 1i128);
    while r1 != 0 {
        let q = r0 / r1;
        (r0, r1) = (r1, r0 - q * r1);
        (s0, s1) = (s1, s0 - q * s1);
    }
    if r0 != 1 {
        return Err(SalemError::Domain(format!(
            "{a} is not invertible modulo {den}"
        )));
    }
    Ok(s0.rem_euclid(den as i128) as i64)
}

/// Runs the recursion M_k = M*(2^{-k-1}, 2 M_{k-1}, chi_0 F_{M_1} ...) for
/// k = 1..=k_max on a single shared verification grid of radius x_radius.
pub fn build_measure(
    scenario: &Scenario,
    bump: &BumpSpec,
    k_max: usize,
    r: u32,
    x_radius: f64,
) -> Result<MeasureBuild> {
    if k_max == 0 {
        return Err(SalemError::Input("k_max must be >= 1".into()));
    }
    if bump.dim != scenario.params.m {
        return Err(SalemError::Input(
            "bump dimension disagrees with the scenario's m".into(),
        ));
    }
    let mn = scenario.mn();
    let chi0 = BumpSpec::new(mn, bump.k)?;
    let geom = BuildGeometry::new(mn, r, x_radius)?;
    let grid = FourierGrid::new(mn, r, x_radius)?;
    let cap = 30_000_000u64;
    if (grid.len() as u64) > cap {
        return Err(SalemError::BoxTooLarge {
            requested: grid.len() as u64,
            cap,
        });
    }

    let spatial = SpatialGrid::new(mn, default_spatial_per_axis(mn), -1.0, 1.0)?;
    let density0: Vec<f64> = (0..spatial.len())
        .into_par_iter()
        .map(|flat| chi0.eval(&spatial.point(flat)))
        .collect();
    let env = Envelope::for_scenario(scenario);

    let table0 = BandTable::level_zero(&geom, &chi0)?;
    let readout0 = readout(&table0, &chi0, &grid, geom.w);
    let spectrum0 = GriddedSpectrum {
        grid: grid.clone(),
        values: readout0,
        c2: chi0.decay_constant(),
        k_decay: chi0.k,
    };
    let read_err0 = table0.read_err;
    let mut levels = vec![MeasureLevel {
        k: 0,
        m_k: 0.0,
        delta_k: 0.0,
        margin: 0.0,
        density: density0,
        spectrum: spectrum0,
        read_err: read_err0,
        dev_cert: 0.0,
        table: table0,
    }];

    for k in 1..=k_max {
        let delta = 2f64.powi(-(k as i32) - 1);
        let m0 = if k == 1 { 1.0 } else { 2.0 * levels[k - 1].m_k };
        let chain: Vec<&BandTable> = levels.iter().map(|l| &l.table).collect();
        let sel = select_m_star(
            scenario,
            bump,
            &chi0,
            &chain,
            &levels[k - 1].spectrum.values,
            &grid,
            &geom,
            &env,
            delta,
            m0,
            k,
        )?;
        drop(chain);
        let eps = sel.table.eps;
        let density: Vec<f64> = if sel.table.beyond_band {
            let den = spatial.per_axis as i64;
            levels[k - 1]
                .density
                .par_iter()
                .enumerate()
                .map(|(flat, &d)| {
                    if d == 0.0 {
                        return Ok(0.0);
                    }
                    // midpoint x = (2 i + 1 - N) / N
                    let num = 2 * flat as i64 + 1 - den;
                    let f =
                        beyond_density_factor(scenario, bump, sel.m_star, eps, num, den)?;
                    Ok(d * f)
                })
                .collect::<Result<_>>()?
        } else {
            let window = scenario.window(sel.m_star)?;
            let theta = scenario.params.theta.clone();
            let inv = 1.0 / window.len() as f64;
            // Strips narrower than half a spatial cell would slip between the
            // grid midpoints; for such q the cell reports the peak value
            // whenever a strip center crosses it (the beyond-band branch does
            // the same via exact modular hits).
            let snap = 0.5 * spatial.step();
            let m = scenario.params.m;
            let n = scenario.n;
            levels[k - 1]
                .density
                .par_iter()
                .enumerate()
                .map(|(flat, &d)| {
                    if d == 0.0 {
                        return Ok(0.0);
                    }
                    let x = spatial.point(flat);
                    let mut f = 0.0;
                    for q in &window {
                        let reach: f64 =
                            snap * q.iter().map(|v| v.abs() as f64).sum::<f64>();
                        if eps >= reach {
                            f += bump.periodized_eval(eps, q, &theta, &x)?;
                        } else {
                            let mut v = 1.0;
                            for i in 0..m {
                                let y: f64 = (0..n)
                                    .map(|j| x[i * n + j] * q[j] as f64)
                                    .sum::<f64>()
                                    - theta[i];
                                let dist = (y - y.round()).abs();
                                let t = (dist - reach).max(0.0);
                                v *= bump.factor(t / eps) / eps;
                                if v == 0.0 {
                                    break;
                                }
                            }
                            f += v;
                        }
                    }
                    Ok(d * f * inv)
                })
                .collect::<Result<_>>()?
        };
        let read_err = sel.table.read_err;
        levels.push(MeasureLevel {
            k,
            m_k: sel.m_star,
            delta_k: delta,
            margin: sel.margin,
            density,
            spectrum: GriddedSpectrum {
                grid: grid.clone(),
                values: sel.readout,
                c2: chi0.decay_constant(),
                k_decay: chi0.k,
            },
            read_err,
            dev_cert: sel.dev_cert,
            table: sel.table,
        });
    }
    Ok(MeasureBuild {
        spatial,
        grid,
        geom,
        levels,
        env,
        c1: bump.decay_constant(),
    })
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct LevelCheck {
    pub k: usize,
    /// Worst (|mu_hat_k - mu_hat_{k-1}| + certified errors) / (2^{-k-1} g).
    pub worst_ratio: f64,
    pub worst_xi: f64,
    pub pass: bool,
}

#[derive(Debug)]
pub struct ConvergenceReport {
    pub levels: Vec<LevelCheck>,
    /// Worst (|mu_hat_K - mu_hat_0| + errors) / ((1/2)(1 - 2^{-K}) g).
    pub telescoped_worst: f64,
    pub telescoped_pass: bool,
    /// mu_hat_K(0); its modulus must lie in [1/2, 3/2] beyond the certified
    /// readout error.
    pub mu_hat_zero: Complex64,
    pub mu_hat_zero_pass: bool,
    /// Empirical constant C with |mu_hat_K| <= C g on the grid (reported,
    /// defined as max |chi_0^| / g + 1/2).
    pub c_report: f64,
    pub c_worst_ratio: f64,
}

/// Re-verifies the per-level budget and the telescoped bound from the stored
/// grids and certificates, independently of the margins recorded during
/// selection.
pub fn convergence_check(build: &MeasureBuild) -> Result<ConvergenceReport> {
    if build.levels.len() < 2 {
        return Err(SalemError::InsufficientData(
            "convergence check needs at least one built level".into(),
        ));
    }
    let env = &build.env;
    let grid = &build.grid;
    let mut checks = Vec::new();
    for k in 1..build.levels.len() {
        let prev = &build.levels[k - 1];
        let cur = &build.levels[k];
        let (worst_ratio, worst_xi) = (0..grid.len())
            .into_par_iter()
            .map(|flat| {
                let norm = grid.point_norm(flat);
                let dev = (cur.spectrum.values[flat] - prev.spectrum.values[flat]).norm()
                    + cur.dev_cert;
                (dev / (cur.delta_k * env.g(norm)), norm)
            })
            .reduce(|| (0.0, 0.0), |a, b| if a.0 >= b.0 { a } else { b });
        checks.push(LevelCheck {
            k,
            worst_ratio,
            worst_xi,
            pass: worst_ratio <= 1.0,
        });
    }

    let base = &build.levels[0];
    let top = build.top();
    let kk = top.k as i32;
    let err_total = top.read_err + base.read_err;
    let telescoped_worst = (0..grid.len())
        .into_par_iter()
        .map(|flat| {
            let norm = grid.point_norm(flat);
            let diff =
                (top.spectrum.values[flat] - base.spectrum.values[flat]).norm() + err_total;
            diff / (0.5 * (1.0 - 2f64.powi(-kk)) * env.g(norm))
        })
        .reduce(|| 0.0, f64::max);

    let origin = grid.flat(&vec![0i64; grid.dim]).expect("origin on grid");
    let mu_hat_zero = top.spectrum.values[origin];
    let mu_hat_zero_pass = mu_hat_zero.norm() - top.read_err >= 0.5
        && mu_hat_zero.norm() + top.read_err <= 1.5;

    let c_report = (0..grid.len())
        .into_par_iter()
        .map(|flat| base.spectrum.values[flat].norm() / env.g(grid.point_norm(flat)))
        .reduce(|| 0.0, f64::max)
        + 0.5;
    let c_worst_ratio = (0..grid.len())
        .into_par_iter()
        .map(|flat| {
            top.spectrum.values[flat].norm() / (c_report * env.g(grid.point_norm(flat)))
        })
        .reduce(|| 0.0, f64::max);

    Ok(ConvergenceReport {
        levels: checks,
        telescoped_worst,
        telescoped_pass: telescoped_worst <= 1.0,
        mu_hat_zero,
        mu_hat_zero_pass,
        c_report,
        c_worst_ratio,
    })
}

#[derive(Debug)]
pub struct SupportReport {
    pub checked: usize,
    pub positive: usize,
    pub violations: usize,
    /// Largest strip-distance excess over Psi(q) + slack among violations.
    pub worst_excess: f64,
}

/// Certifies that every spatial point carrying mass lies in the Psi-strip
/// union of every level's window. `slack` is a spatial tolerance (at least
/// half the grid spacing): a midpoint can sit up to that far from the strip
/// center its cell straddles, which moves x q - theta by slack * |q|_1.
/// Beyond-band levels are checked by modular arithmetic: a point carries mass
/// there only when some window element gives an exact lattice hit.
pub fn support_check(
    build: &MeasureBuild,
    scenario: &Scenario,
    slack: f64,
) -> Result<SupportReport> {
    let m = scenario.params.m;
    let n = scenario.n;
    let theta = &scenario.params.theta;
    enum LevelWindows {
        Enumerated(Vec<Vec<i64>>, Vec<f64>),
        BeyondBand { m_val: f64, eps: f64 },
    }
    let mut windows = Vec::new();
    for level in &build.levels[1..] {
        if level.table.beyond_band {
            windows.push(LevelWindows::BeyondBand {
                m_val: level.m_k,
                eps: level.table.eps,
            });
            continue;
        }
        let w = scenario.window(level.m_k)?;
        let psis: Vec<f64> = w
            .iter()
            .map(|q| scenario.psi.eval(q))
            .collect::<Result<_>>()?;
        windows.push(LevelWindows::Enumerated(w, psis));
    }
    let top = build.top();
    let den = build.spatial.per_axis as i64;
    let phi = BumpSpec::new(m, 6)?;
    let dist_to_int = |t: f64| (t - t.round()).abs();
    let outcomes: Vec<(bool, f64)> = (0..build.spatial.len())
        .into_par_iter()
        .filter(|&flat| top.density[flat] > 0.0)
        .map(|flat| {
            let x = build.spatial.point(flat);
            let mut excess = 0.0f64;
            for lw in &windows {
                let best = match lw {
                    LevelWindows::Enumerated(w, psis) => w
                        .iter()
                        .zip(psis)
                        .map(|(q, &psi)| {
                            let reach: f64 =
                                slack * q.iter().map(|v| v.abs() as f64).sum::<f64>();
                            let maxdist = (0..m)
                                .map(|i| {
                                    let y: f64 = (0..n)
                                        .map(|j| x[i * n + j] * q[j] as f64)
                                        .sum::<f64>()
                                        - theta[i];
                                    dist_to_int(y)
                                })
                                .fold(0.0, f64::max);
                            maxdist - psi - reach
                        })
                        .fold(f64::INFINITY, f64::min),
                    LevelWindows::BeyondBand { m_val, eps } => {
                        let num = 2 * flat as i64 + 1 - den;
                        match beyond_density_factor(scenario, &phi, *m_val, *eps, num, den) {
                            Ok(f) if f > 0.0 => -eps, // exact hit: distance 0 <= psi
                            _ => f64::INFINITY,
                        }
                    }
                };
                excess = excess.max(best);
            }
            (excess <= 0.0, excess)
        })
        .collect();
    let positive = outcomes.len();
    let violations = outcomes.iter().filter(|(ok, _)| !ok).count();
    let worst_excess = outcomes
        .iter()
        .map(|&(_, e)| e)
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);
    Ok(SupportReport {
        checked: build.spatial.len(),
        positive,
        violations,
        worst_excess: if violations == 0 { 0.0 } else { worst_excess },
    })
}

#[derive(Debug)]
pub struct NormalizationReport {
    pub integral: f64,
    pub mu_hat_zero: f64,
    /// |integral / mu_hat_zero - 1|.
    pub rel_err: f64,
    pub quad_per_axis: usize,
    /// Deepest level whose density the quadrature can resolve; the check
    /// compares the integral of that level's density against its mu_hat(0).
    pub levels_resolved: usize,
    pub pass: bool,
}

fn alias_envelope(p: u32, t: f64) -> f64 {
    let knee = p as f64 / (2.0 * std::f64::consts::PI);
    if t <= knee {
        1.0
    } else {
        (knee / t).powi(p as i32)
    }
}

/// Integrates the density over [-1,1]^mn by the midpoint rule on a dedicated
/// grid fine enough that the aliasing bound (driven by the narrow F_{M_k}
/// strips) is below 1e-7, and compares against mu_hat(0). Levels whose strips
/// are too narrow for any admissible grid are excluded: the check reports the
/// deepest resolvable level and verifies the recursion prefix up to it.
pub fn normalization_check(
    build: &MeasureBuild,
    scenario: &Scenario,
    bump: &BumpSpec,
) -> Result<NormalizationReport> {
    let mn = scenario.mn();
    let cap: usize = match mn {
        1 => 1 << 22,
        2 => 1 << 11,
        _ => 1 << 7,
    };
    let k_top = build.levels.len() - 1;
    // deepest prefix whose alias bound fits under the quadrature cap
    let mut levels_resolved = 0usize;
    let mut n_quad = default_spatial_per_axis(mn);
    for k_try in (1..=k_top).rev() {
        if build.levels[1..=k_try].iter().any(|l| l.table.beyond_band) {
            continue;
        }
        let mut n = default_spatial_per_axis(mn);
        loop {
            let mut bound = 0.0;
            for level in &build.levels[1..=k_try] {
                bound += alias_envelope(bump.p, level.table.eps * (n as f64 / 2.0) / level.m_k);
            }
            if 4.0 * bound <= 1e-7 {
                levels_resolved = k_try;
                n_quad = n;
                break;
            }
            if n >= cap {
                break;
            }
            n *= 2;
        }
        if levels_resolved == k_try {
            break;
        }
    }
    if levels_resolved == 0 {
        return Err(SalemError::InsufficientData(
            "no level prefix is resolvable under the quadrature cap".into(),
        ));
    }

    let chi0 = BumpSpec::new(mn, bump.k)?;
    let mut factors = Vec::new();
    for level in &build.levels[1..=levels_resolved] {
        let window = scenario.window(level.m_k)?;
        factors.push((level.table.eps, window));
    }
    let theta = scenario.params.theta.clone();
    let quad = SpatialGrid::new(mn, n_quad, -1.0, 1.0)?;
    let cell = quad.cell_volume();
    let integral: f64 = (0..quad.len())
        .into_par_iter()
        .map(|flat| {
            let x = quad.point(flat);
            let mut v = chi0.eval(&x);
            if v == 0.0 {
                return Ok(0.0);
            }
            for (eps, window) in &factors {
                let mut f = 0.0;
                for q in window {
                    f += bump.periodized_eval(*eps, q, &theta, &x)?;
                }
                v *= f / window.len() as f64;
                if v == 0.0 {
                    return Ok(0.0);
                }
            }
            Ok(v * cell)
        })
        .reduce(|| Ok(0.0), |a: Result<f64>, b: Result<f64>| Ok(a? + b?))?;
    let origin = build
        .grid
        .flat(&vec![0i64; mn])
        .expect("origin is on the grid");
    let mu_hat_zero = build.levels[levels_resolved].spectrum.values[origin].norm();
    let rel_err = (integral / mu_hat_zero - 1.0).abs();
    Ok(NormalizationReport {
        integral,
        mu_hat_zero,
        rel_err,
        quad_per_axis: n_quad,
        levels_resolved,
        pass: rel_err <= 1e-6,
    })
}

/// Exports the top-level density and spectrum as CSV; returns the file list.
pub fn export_measure(build: &MeasureBuild, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let density_path = dir.join("density.csv");
    let spectrum_path = dir.join("spectrum.csv");
    let levels_path = dir.join("levels.json");
    let top = build.top();

    let mut out = std::io::BufWriter::new(std::fs::File::create(&density_path)?);
    let dim = build.spatial.dim;
    let header: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
    writeln!(out, "{},density", header.join(","))?;
    for flat in 0..build.spatial.len() {
        let x = build.spatial.point(flat);
        let coords: Vec<String> = x.iter().map(|c| format!("{c:.10}")).collect();
        writeln!(out, "{},{:.17e}", coords.join(","), top.density[flat])?;
    }
    out.flush()?;

    let mut out = std::io::BufWriter::new(std::fs::File::create(&spectrum_path)?);
    let header: Vec<String> = (1..=dim).map(|i| format!("xi{i}")).collect();
    writeln!(out, "{},re,im,g,ratio", header.join(","))?;
    for flat in 0..build.grid.len() {
        let xi = build.grid.point(flat);
        let v = top.spectrum.values[flat];
        let g = build.env.g(build.grid.point_norm(flat));
        let coords: Vec<String> = xi.iter().map(|c| format!("{c:.10}")).collect();
        writeln!(
            out,
            "{},{:.17e},{:.17e},{:.17e},{:.17e}",
            coords.join(","),
            v.re,
            v.im,
            g,
            v.norm() / g
        )?;
    }
    out.flush()?;

    let meta = serde_json::json!({
        "levels": build.levels.iter().map(|l| serde_json::json!({
            "k": l.k,
            "M_k": l.m_k,
            "delta_k": l.delta_k,
            "margin": l.margin,
            "read_err": l.read_err,
            "dev_cert": l.dev_cert,
            "beyond_band": l.table.beyond_band,
        })).collect::<Vec<_>>(),
        "C1": build.c1,
        "box_radius": build.grid.radius(),
        "grid_r": build.grid.r,
        "readout_window": build.geom.w,
        "table_half": build.geom.half,
        "spatial_per_axis": build.spatial.per_axis,
    });
    std::fs::write(&levels_path, serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(vec![density_path, spectrum_path, levels_path])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qsets::{QSetKind, QSetSpec};
    use crate::scenario::{PsiSpec, ScenarioParams};

    fn scenario_1d(theta: f64, m_set: Vec<f64>) -> Scenario {
        Scenario {
            n: 1,
            q: QSetSpec::new(1, QSetKind::AllIntegers),
            psi: PsiSpec::Power { tau: 2.0 },
            params: ScenarioParams {
                m: 1,
                theta: vec![theta],
                a: 1.0 / 3.0,
                h: HSpec::Constant { c: 4.0 },
                m_set,
            },
        }
    }

    /// Ascending dyadic tower ending in a beyond-band scale.
    fn tower_mset() -> Vec<f64> {
        vec![
            2.0,
            4.0,
            8.0,
            16.0,
            32.0,
            64.0,
            128.0,
            256.0,
            512.0,
            768.0,
            1024.0,
            2048.0,
            (1u64 << 40) as f64,
        ]
    }

    fn env_13_4() -> Envelope {
        Envelope {
            a: 1.0 / 3.0,
            h: HSpec::Constant { c: 4.0 },
        }
    }

    #[test]
    fn g_branch_and_example() {
        let env = env_13_4();
        assert_eq!(env.g(1.0), 1.0);
        assert_eq!(env.g(0.0), 1.0);
        assert_eq!(env.g(std::f64::consts::E), 1.0);
        let e2 = std::f64::consts::E.powi(2);
        let expect = e2.powf(-1.0 / 3.0) * (2.0 / 2f64.ln()).exp() * 4.0;
        assert!((env.g(e2) - expect).abs() < 1e-12);
        assert!((expect - 36.78).abs() < 0.05, "g(e^2) = {expect}");
    }

    #[test]
    fn g_monotone_tail() {
        let env = env_13_4();
        let mut prev = f64::INFINITY;
        let mut xi = std::f64::consts::E.powf(std::f64::consts::E);
        while xi < 1e6 {
            let v = env.g(xi);
            assert!(v < prev, "g not decreasing at {xi}");
            assert!(v > 0.0);
            prev = v;
            xi *= 1.5;
        }
    }

    #[test]
    fn divisor_bound_dominates_sieve() {
        let sieve = crate::divisors::tau_sieve(100_000);
        for (n, &t) in sieve.iter().enumerate().skip(1) {
            assert!(
                tau_upper(n as f64) >= t as f64,
                "tau({n}) = {t} above the bound"
            );
        }
    }

    #[test]
    fn envelope_bounds_table_coefficients() {
        // |F^_M(l)| <= min(1, 2 tau(|l|)/|Q|) env(eps |l| / M), entrywise
        let scn = scenario_1d(0.3, vec![8.0, 16.0, 32.0]);
        let bump = BumpSpec::new(1, 6).unwrap();
        for m in [8.0, 16.0, 32.0] {
            let table = fm_hat_table_with_cap(&scn, &bump, m, 512, LEVEL_TABLE_CAP).unwrap();
            let eps = scn.epsilon(m).unwrap();
            let wc = scn.q.window_count(m).unwrap() as f64;
            for (l, v) in &table.coeffs {
                let r = l[0].unsigned_abs() as f64;
                if r == 0.0 {
                    continue;
                }
                let bound = div_weight(true, wc, r) * phi_env(bump.p, eps * r / m);
                assert!(
                    v.norm() <= bound * (1.0 + 1e-12),
                    "M={m} l={l:?}: {} > {bound}",
                    v.norm()
                );
            }
        }
    }

    #[test]
    fn dyadic_band_sum_dominates_exact_tail() {
        // exact tail of a single-scale table vs. the dyadic certificate
        let scn = scenario_1d(0.0, vec![8.0]);
        let bump = BumpSpec::new(1, 6).unwrap();
        let m = 8.0;
        let eps = scn.epsilon(m).unwrap();
        let wc = scn.q.window_count(m).unwrap() as f64;
        let table = fm_hat_table_with_cap(&scn, &bump, m, 4096, LEVEL_TABLE_CAP).unwrap();
        for start in [64.0, 256.0, 1024.0] {
            let exact: f64 = table
                .coeffs
                .iter()
                .filter(|(l, _)| l[0].unsigned_abs() as f64 > start)
                .map(|(_, v)| v.norm())
                .sum();
            let cert = dyadic_band_sum(1, bump.p, eps, m, wc, true, start, &|_| 1.0);
            assert!(cert >= exact, "start {start}: cert {cert} < exact {exact}");
            assert!(cert.is_finite());
        }
    }

    fn chain_refs(levels: &[BandTable]) -> Vec<&BandTable> {
        levels.iter().collect()
    }

    #[test]
    fn readout_matches_exact_chi0_near_origin() {
        let geom = BuildGeometry::new(1, 8, 16.0).unwrap();
        let chi0 = BumpSpec::new(1, 6).unwrap();
        let t0 = BandTable::level_zero(&geom, &chi0).unwrap();
        let grid = FourierGrid::new(1, 8, 16.0).unwrap();
        let out = readout(&t0, &chi0, &grid, geom.w);
        for flat in 0..grid.len() {
            let xi = grid.point(flat)[0];
            if xi.abs() <= geom.w as f64 - 1.0 {
                assert!(
                    (out[flat].re - chi0.hat(&[xi])).abs() <= t0.read_err + 1e-15,
                    "xi = {xi}"
                );
                assert!(out[flat].im == 0.0);
            }
        }
        assert!(t0.read_err < 1e-6);
    }

    #[test]
    fn select_m_star_smallest_passing_scale() {
        let scn = scenario_1d(0.0, vec![2.0, 4.0, 8.0, 16.0, 32.0]);
        let bump = BumpSpec::new(1, 6).unwrap();
        let chi0 = BumpSpec::new(1, 6).unwrap();
        let env = env_13_4();
        let geom = BuildGeometry::new(1, 8, 32.0).unwrap();
        let grid = FourierGrid::new(1, 8, 32.0).unwrap();
        let t0 = BandTable::level_zero(&geom, &chi0).unwrap();
        let base = readout(&t0, &chi0, &grid, geom.w);
        let levels = vec![t0];
        let sel = select_m_star(
            &scn, &bump, &chi0, &chain_refs(&levels), &base, &grid, &geom, &env, 0.25, 1.0, 1,
        )
        .unwrap();
        // M = 2 and M = 4 put strong bands inside |xi| <= e where g = 1;
        // M = 8 is the first clean scale
        assert_eq!(sel.m_star, 8.0);
        assert!(sel.margin <= 1.0);
        // monotone budget: the same scale passes at a looser delta
        let loose = select_m_star(
            &scn, &bump, &chi0, &chain_refs(&levels), &base, &grid, &geom, &env, 0.5, 1.0, 1,
        )
        .unwrap();
        assert!(loose.m_star <= sel.m_star);
        // refinement self-consistency: doubling the grid density keeps the verdict
        let grid_fine = FourierGrid::new(1, 16, 32.0).unwrap();
        let base_fine = readout(&levels[0], &chi0, &grid_fine, geom.w);
        let fine = select_m_star(
            &scn,
            &bump,
            &chi0,
            &chain_refs(&levels),
            &base_fine,
            &grid_fine,
            &geom,
            &env,
            0.25,
            1.0,
            1,
        )
        .unwrap();
        assert_eq!(fine.m_star, sel.m_star);
    }

    #[test]
    fn select_m_star_exhaustion_reports_margin() {
        // single tiny scale, tight budget: no candidate passes
        let scn = scenario_1d(0.0, vec![2.0]);
        let bump = BumpSpec::new(1, 6).unwrap();
        let chi0 = BumpSpec::new(1, 6).unwrap();
        let env = env_13_4();
        let geom = BuildGeometry::new(1, 8, 32.0).unwrap();
        let grid = FourierGrid::new(1, 8, 32.0).unwrap();
        let t0 = BandTable::level_zero(&geom, &chi0).unwrap();
        let base = readout(&t0, &chi0, &grid, geom.w);
        let levels = vec![t0];
        match select_m_star(
            &scn, &bump, &chi0, &chain_refs(&levels), &base, &grid, &geom, &env, 0.01, 1.0, 3,
        ) {
            Err(SalemError::MsetExhausted { level, best_margin }) => {
                assert_eq!(level, 3);
                assert!(best_margin > 1.0 && best_margin.is_finite());
            }
            other => panic!("expected exhaustion, got {other:?}"),
        }
    }

    #[test]
    fn case1_deviation_decays_in_m() {
        // for |xi| < M/4 the first-level deviation falls as M grows
        let scn = scenario_1d(0.0, vec![8.0, 16.0, 32.0, 64.0]);
        let bump = BumpSpec::new(1, 6).unwrap();
        let chi0 = BumpSpec::new(1, 6).unwrap();
        let geom = BuildGeometry::new(1, 8, 16.0).unwrap();
        let grid = FourierGrid::new(1, 8, 16.0).unwrap();
        let t0 = BandTable::level_zero(&geom, &chi0).unwrap();
        let base = readout(&t0, &chi0, &grid, geom.w);
        let levels = vec![t0];
        let mut devs = Vec::new();
        for m in [8.0, 16.0, 32.0, 64.0] {
            let (table, _) =
                extend_level(&scn, &bump, &chi0, &chain_refs(&levels), m, &geom).unwrap();
            let out = readout(&table, &chi0, &grid, geom.w);
            let mut worst = 0.0f64;
            for flat in 0..grid.len() {
                if grid.point_norm(flat) < m / 4.0 {
                    let dev = (out[flat] - base[flat]).norm() + table.read_err;
                    worst = worst.max(dev);
                }
            }
            devs.push(worst);
        }
        assert!(
            devs.windows(2).all(|w| w[1] < w[0]),
            "case-1 deviations not decreasing: {devs:?}"
        );
    }

    fn small_build(theta: f64, k_max: usize) -> (Scenario, BumpSpec, MeasureBuild) {
        let scn = scenario_1d(theta, tower_mset());
        let bump = BumpSpec::new(1, 6).unwrap();
        let build = build_measure(&scn, &bump, k_max, 4, 48.0).unwrap();
        (scn, bump, build)
    }

    #[test]
    fn build_invariants_and_convergence() {
        let (_, _, build) = small_build(0.0, 2);
        assert_eq!(build.levels.len(), 3);
        assert!(build.levels[2].m_k >= 2.0 * build.levels[1].m_k);
        assert!(build.grid.radius() >= 48.0);
        for level in &build.levels {
            assert!(level.density.iter().all(|&d| d >= 0.0));
        }
        // support nesting, pointwise
        for k in 1..build.levels.len() {
            for (a, b) in build.levels[k]
                .density
                .iter()
                .zip(&build.levels[k - 1].density)
            {
                assert!(*a == 0.0 || *b > 0.0);
            }
        }
        let report = convergence_check(&build).unwrap();
        assert!(report.levels.iter().all(|c| c.pass), "{report:?}");
        assert!(report.telescoped_pass);
        assert!(report.mu_hat_zero_pass, "mu_hat(0) = {}", report.mu_hat_zero);
        assert!(report.c_worst_ratio <= 1.0);
    }

    #[test]
    fn build_three_levels_with_beyond_band_scale() {
        for theta in [0.0, 0.5] {
            let scn = scenario_1d(theta, tower_mset());
            let bump = BumpSpec::new(1, 6).unwrap();
            let build = build_measure(&scn, &bump, 3, 4, 48.0).unwrap();
            assert_eq!(build.levels.len(), 4);
            assert!(build.levels[3].table.beyond_band, "theta = {theta}");
            assert_eq!(build.levels[3].m_k, (1u64 << 40) as f64);
            let report = convergence_check(&build).unwrap();
            assert!(
                report.levels.iter().all(|c| c.pass),
                "theta = {theta}: {report:?}"
            );
            assert!(report.mu_hat_zero_pass, "theta = {theta}");
            // beyond-band density stays supported inside the previous level
            for (a, b) in build.levels[3].density.iter().zip(&build.levels[2].density) {
                assert!(*a == 0.0 || *b > 0.0);
            }
            let slack = build.spatial.step();
            let support = support_check(&build, &scn, slack).unwrap();
            assert_eq!(support.violations, 0, "theta = {theta}: {support:?}");
            assert!(support.positive > 0);
        }
    }

    #[test]
    fn build_inhomogeneous_support_and_normalization() {
        for theta in [0.0, 0.5] {
            let (scn, bump, build) = small_build(theta, 2);
            let slack = build.spatial.step();
            let support = support_check(&build, &scn, slack).unwrap();
            assert_eq!(support.violations, 0, "theta = {theta}: {support:?}");
            assert!(support.positive > 0);
            let norm = normalization_check(&build, &scn, &bump).unwrap();
            assert!(
                norm.pass,
                "theta = {theta}: rel err {} at N = {} (levels resolved {})",
                norm.rel_err, norm.quad_per_axis, norm.levels_resolved
            );
            assert!(norm.levels_resolved >= 1);
        }
    }

    #[test]
    fn convergence_flags_injected_fault() {
        let (scn, bump, mut build) = small_build(0.0, 2);
        // redo level 2 at a tiny scale (bands inside |xi| <= e, far over
        // budget): the re-check must flag it
        let chi0 = BumpSpec::new(1, 6).unwrap();
        let chain: Vec<&BandTable> =
            build.levels[..2].iter().map(|l| &l.table).collect();
        let (bad, _) = extend_level(&scn, &bump, &chi0, &chain, 2.0, &build.geom).unwrap();
        drop(chain);
        let out = readout(&bad, &chi0, &build.grid, build.geom.w);
        build.levels[2].m_k = 2.0;
        build.levels[2].dev_cert = bad.read_err + build.levels[1].read_err;
        build.levels[2].spectrum.values = out;
        build.levels[2].table = bad;
        let report = convergence_check(&build).unwrap();
        assert!(report.levels[0].pass);
        assert!(!report.levels[1].pass, "{report:?}");
    }

    #[test]
    fn build_small_mn_case() {
        // m = 2, n = 1: a 2-dimensional measure at toy scale
        let scn = Scenario {
            n: 1,
            q: QSetSpec::new(1, QSetKind::AllIntegers),
            psi: PsiSpec::Power { tau: 0.5 },
            params: ScenarioParams {
                m: 2,
                theta: vec![0.25, 0.0],
                a: 0.25,
                h: HSpec::Constant { c: 4.0 },
                m_set: vec![2.0, 4.0, 8.0],
            },
        };
        let bump = BumpSpec::new(2, 6).unwrap();
        let build = build_measure(&scn, &bump, 1, 2, 4.0).unwrap();
        let report = convergence_check(&build).unwrap();
        assert!(report.levels[0].pass);
        assert!(report.mu_hat_zero_pass);
        let support =
            support_check(&build, &scn, build.spatial.step()).unwrap();
        assert_eq!(support.violations, 0, "{support:?}");
    }

    #[test]
    fn export_writes_deterministic_files() {
        let (_, _, build) = small_build(0.0, 2);
        let dir = tempfile::tempdir().unwrap();
        let files = export_measure(&build, dir.path()).unwrap();
        assert_eq!(files.len(), 3);
        let first: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(f).unwrap()).collect();
        let dir2 = tempfile::tempdir().unwrap();
        let files2 = export_measure(&build, dir2.path()).unwrap();
        for (a, b) in first.iter().zip(&files2) {
            assert_eq!(a, &std::fs::read(b).unwrap());
        }
    }
}
