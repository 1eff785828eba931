//! Verification batteries: one check per acceptance criterion, grouped into
//! the structural / oracle / envelope / all suites that the CLI exposes.

use num_complex::Complex64;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::bump::BumpSpec;
use crate::dimension::{self, DimDescriptor};
use crate::divisors::{self, DivisorQuery};
use crate::error::Result;
use crate::grid::FourierGrid;
use crate::measure::{self, BandTable};
use crate::qsets::{QSetKind, QSetSpec};
use crate::scenario::{HSpec, PsiSpec, Scenario, ScenarioParams};
use crate::spectrum;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub details: Vec<String>,
}

impl CheckResult {
    fn new(name: &str) -> Self {
        CheckResult {
            name: name.to_string(),
            pass: true,
            details: Vec::new(),
        }
    }

    fn note(&mut self, msg: String) {
        self.details.push(msg);
    }

    fn require(&mut self, ok: bool, msg: String) {
        if !ok {
            self.pass = false;
        }
        self.details.push(format!("[{}] {msg}", if ok { "ok" } else { "FAIL" }));
    }

    fn fail_on_error(name: &str, err: &crate::error::SalemError) -> Self {
        CheckResult {
            name: name.to_string(),
            pass: false,
            details: vec![format!("[FAIL] aborted: {err}")],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub results: Vec<CheckResult>,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Structural,
    Oracle,
    Envelope,
    All,
}

impl std::str::FromStr for Suite {
    type Err = crate::error::SalemError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "structural" => Ok(Suite::Structural),
            "oracle" => Ok(Suite::Oracle),
            "envelope" => Ok(Suite::Envelope),
            "all" => Ok(Suite::All),
            other => Err(crate::error::SalemError::Input(format!(
                "unknown suite {other:?}; expected structural | oracle | envelope | all"
            ))),
        }
    }
}

pub fn run_suite(suite: Suite) -> SuiteReport {
    let (name, results) = match suite {
        Suite::Structural => ("structural", vec![criterion_structural(), criterion_divisors()]),
        Suite::Oracle => ("oracle", vec![criterion_oracle()]),
        Suite::Envelope => ("envelope", vec![criterion_wigert(), criterion_envelope()]),
        Suite::All => {
            let (measure, artifacts) = criterion_measure_with_build();
            let dims = criterion_dimension(artifacts.as_ref());
            ("all", vec![
                criterion_structural(),
                criterion_oracle(),
                criterion_divisors(),
                criterion_wigert(),
                criterion_envelope(),
                measure,
                dims,
                criterion_properties(),
            ])
        }
    };
    let pass = results.iter().all(|r| r.pass);
    SuiteReport {
        suite: name.to_string(),
        results,
        pass,
    }
}

fn scenario_1d(
    kind: QSetKind,
    tau: f64,
    theta: f64,
    a: f64,
    h: HSpec,
    m_set: Vec<f64>,
) -> Scenario {
    Scenario {
        n: 1,
        q: QSetSpec::new(1, kind),
        psi: PsiSpec::Power { tau },
        params: ScenarioParams {
            m: 1,
            theta: vec![theta],
            a,
            h,
            m_set,
        },
    }
}

/// Ascending scale tower used by the measure battery; ends in a scale whose
/// bands lie beyond any stored box so the deviation is certified analytically.
pub fn tower_mset() -> Vec<f64> {
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

// ---------------------------------------------------------------------------
// Criterion 1: structural spectral identities
// ---------------------------------------------------------------------------

pub fn criterion_structural() -> CheckResult {
    let mut res = CheckResult::new("structural spectral identities");
    match structural_inner(&mut res) {
        Ok(()) => res,
        Err(e) => CheckResult::fail_on_error(&res.name, &e),
    }
}

fn structural_inner(res: &mut CheckResult) -> Result<()> {
    let bump = BumpSpec::new(1, 6)?;
    let mut worst_zero = 0.0f64;
    let mut worst_bound = 0.0f64;
    let mut worst_conj = 0.0f64;
    let mut tables = 0usize;
    for kind in [QSetKind::AllIntegers, QSetKind::Primes, QSetKind::Squares] {
        for tau in [1.5, 2.0] {
            for theta in [0.0, 1.0 / 2f64.sqrt()] {
                for m in [16.0, 32.0, 64.0] {
                    let scn = scenario_1d(
                        kind.clone(),
                        tau,
                        theta,
                        0.0,
                        HSpec::Constant { c: 1.0 },
                        vec![m],
                    );
                    let l_max = (16.0 * m) as i64;
                    let table = spectrum::fm_hat_table(&scn, &bump, m, l_max)?;
                    tables += 1;
                    worst_zero = worst_zero.max((table.get(&[0]) - Complex64::new(1.0, 0.0)).norm());
                    for (ell, v) in &table.coeffs {
                        let r = ell[0].abs();
                        if r > 0 && (r as f64) <= m / 2.0 {
                            res.require(
                                v.norm() == 0.0,
                                format!("structural zero violated at l = {}, M = {m}", ell[0]),
                            );
                        }
                        worst_bound = worst_bound.max(v.norm() - 1.0);
                        let mirror = table.get(&[-ell[0]]);
                        worst_conj = worst_conj.max((mirror - v.conj()).norm());
                    }
                }
            }
        }
    }
    res.require(
        worst_zero <= 1e-12,
        format!("F^_M(0) = 1 within 1e-12 over {tables} tables (worst {worst_zero:.2e})"),
    );
    res.require(
        worst_bound <= 1e-12,
        format!("|F^_M(l)| <= 1 + 1e-12 everywhere (worst excess {worst_bound:.2e})"),
    );
    res.require(
        worst_conj <= 1e-12,
        format!("conjugate symmetry F^_M(-l) = conj F^_M(l) (worst {worst_conj:.2e})"),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// Criterion 2: FFT oracle equivalence
// ---------------------------------------------------------------------------

pub fn criterion_oracle() -> CheckResult {
    let mut res = CheckResult::new("FFT oracle equivalence");
    match oracle_inner(&mut res) {
        Ok(()) => res,
        Err(e) => CheckResult::fail_on_error(&res.name, &e),
    }
}

fn oracle_inner(res: &mut CheckResult) -> Result<()> {
    // mn = 1 at grid 2^14. M = 8 keeps the first alias band (|l'| >= 2^14 -
    // 2^12, so phi^ arguments >= 24) far below the 1e-6 tolerance: larger M
    // widens the strips' spectra and leaks ~1e-5 of alias mass back into the
    // compared bins.
    let bump = BumpSpec::new(1, 6)?;
    let scn = scenario_1d(
        QSetKind::AllIntegers,
        2.0,
        0.0,
        0.0,
        HSpec::Constant { c: 1.0 },
        vec![8.0],
    );
    let n = 1usize << 14;
    let samples = spectrum::sample_fm_period(&scn, &bump, 8.0, n)?;
    let coeffs = spectrum::dft_coefficients(&samples, &[n])?;
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for ell in -(1i64 << 12)..=(1i64 << 12) {
        let exact = spectrum::fm_hat(&scn, &bump, 8.0, &[ell])?;
        let fft = spectrum::dft_bin(&coeffs, &[n], &[ell]);
        worst = worst.max((exact - fft).norm());
        scale = scale.max(exact.norm());
    }
    res.require(
        worst / scale <= 1e-6,
        format!("mn=1 grid 2^14: relative sup error {:.2e} <= 1e-6", worst / scale),
    );

    // one mn = 2 case (m = 2, n = 1) at grid 2^9 per axis
    let scn2 = Scenario {
        n: 1,
        q: QSetSpec::new(1, QSetKind::AllIntegers),
        psi: PsiSpec::Power { tau: 0.5 },
        params: ScenarioParams {
            m: 2,
            theta: vec![0.25, 0.0],
            a: 0.25,
            h: HSpec::Constant { c: 4.0 },
            m_set: vec![4.0],
        },
    };
    let bump2 = BumpSpec::new(2, 6)?;
    let n2 = 1usize << 9;
    let samples2 = spectrum::sample_fm_period(&scn2, &bump2, 4.0, n2)?;
    let coeffs2 = spectrum::dft_coefficients(&samples2, &[n2, n2])?;
    let mut worst2 = 0.0f64;
    let mut scale2 = 0.0f64;
    for i in -64i64..=64 {
        for j in -64i64..=64 {
            let exact = spectrum::fm_hat(&scn2, &bump2, 4.0, &[i, j])?;
            let fft = spectrum::dft_bin(&coeffs2, &[n2, n2], &[i, j]);
            worst2 = worst2.max((exact - fft).norm());
            scale2 = scale2.max(exact.norm());
        }
    }
    res.require(
        worst2 / scale2 <= 1e-5,
        format!("mn=2 grid 2^9: relative sup error {:.2e} <= 1e-5", worst2 / scale2),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// Criterion 3: divisor correctness
// ---------------------------------------------------------------------------

pub fn criterion_divisors() -> CheckResult {
    let mut res = CheckResult::new("divisor-set correctness");
    match divisors_inner(&mut res) {
        Ok(()) => res,
        Err(e) => CheckResult::fail_on_error(&res.name, &e),
    }
}

fn divisors_inner(res: &mut CheckResult) -> Result<()> {
    // mn = 1: enumerated D(l) vs brute force, and |D(l)| = 2 tau(|l|)
    let mut all_exact = true;
    for l in 1i64..=200 {
        let query = DivisorQuery::new(1, 1, vec![l])?;
        let mut brute = Vec::new();
        for q in -l..=l {
            if q == 0 {
                continue;
            }
            if divisors::divisor_set_contains(&[q], &query)?.is_some() {
                brute.push(vec![q]);
            }
        }
        let enumerated = divisors::divisor_box(&query, l)?;
        let tau = divisors::tau(l as u64)?;
        all_exact &= enumerated == brute && enumerated.len() as u64 == 2 * tau;
    }
    res.require(all_exact, "1 <= |l| <= 200: D(l) = brute force, |D(l)| = 2 tau(|l|)".into());

    // 500 random l with m, n <= 3, |l| <= 40
    let mut rng = StdRng::seed_from_u64(0x5a1e);
    let mut all_rand = true;
    for _ in 0..500 {
        let m = rng.gen_range(1..=3usize);
        let n = rng.gen_range(1..=3usize);
        let mut ell = vec![0i64; m * n];
        while ell.iter().all(|&c| c == 0) {
            for c in ell.iter_mut() {
                *c = rng.gen_range(-40i64..=40);
            }
        }
        let query = DivisorQuery::new(m, n, ell.clone())?;
        let radius = 40i64;
        let enumerated = divisors::divisor_box(&query, radius)?;
        // brute force over the box, skipping zero coordinates
        let mut brute = Vec::new();
        let mut q = vec![-radius; n];
        'outer: loop {
            if q.iter().all(|&c| c != 0)
                && divisors::divisor_set_contains(&q, &query)?.is_some()
            {
                brute.push(q.clone());
            }
            for d in (0..n).rev() {
                q[d] += 1;
                if q[d] <= radius {
                    continue 'outer;
                }
                q[d] = -radius;
            }
            break;
        }
        brute.sort();
        let mut sorted = enumerated.clone();
        sorted.sort();
        let lmax = ell.iter().map(|&c| c.abs()).max().unwrap() as u64;
        all_rand &= sorted == brute && enumerated.len() as u64 <= 2 * divisors::tau(lmax)?;
    }
    res.require(
        all_rand,
        "500 random l (m, n <= 3, |l| <= 40): enumeration = box brute force, count <= 2 tau(|l|)"
            .into(),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// Criterion 4: Wigert thresholds
// ---------------------------------------------------------------------------

pub fn criterion_wigert() -> CheckResult {
    let mut res = CheckResult::new("Wigert divisor-ratio thresholds");
    match wigert_inner(&mut res) {
        Ok(()) => res,
        Err(e) => CheckResult::fail_on_error(&res.name, &e),
    }
}

fn wigert_inner(res: &mut CheckResult) -> Result<()> {
    let limit = 1_000_000usize;
    let cache = std::env::var_os("SALEM_CACHE_DIR").map(std::path::PathBuf::from);
    let sieve = divisors::load_or_build_tau_sieve(limit, cache.as_deref())?;
    let mut max_ratio = 0.0f64;
    let mut argmax = 0u64;
    let mut ratios = vec![0.0f64; limit + 1];
    for l in 16..=limit as u64 {
        let r = divisors::wigert_ratio_with_tau(l, sieve[l as usize] as u64);
        ratios[l as usize] = r;
        if r > max_ratio {
            max_ratio = r;
            argmax = l;
        }
    }
    res.require(
        (max_ratio - 1.056).abs() < 0.01 && argmax == 720_720,
        format!("global max ratio {max_ratio:.4} at l = {argmax} (expected ~1.056 at 720720)"),
    );
    for zeta in [0.99, 0.9, 0.8] {
        // minimal L such that ratio <= zeta for all l in [L, limit]
        let mut l_zeta = None;
        let mut l = limit as u64;
        let mut boundary = 16u64;
        while l >= 16 {
            if ratios[l as usize] > zeta {
                boundary = l + 1;
                break;
            }
            l -= 1;
        }
        if boundary <= limit as u64 {
            l_zeta = Some(boundary);
        }
        match l_zeta {
            Some(b) => res.require(
                true,
                format!("zeta = {zeta}: minimal L_zeta = {b} within [16, 10^6]"),
            ),
            None => res.require(false, format!("zeta = {zeta}: no threshold within range")),
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Criterion 5: Lemma 9.1 envelope at certified scales
// ---------------------------------------------------------------------------

pub fn criterion_envelope() -> CheckResult {
    let mut res = CheckResult::new("decay envelope at certified scales");
    match envelope_inner(&mut res) {
        Ok(()) => res,
        Err(e) => CheckResult::fail_on_error(&res.name, &e),
    }
}

fn envelope_inner(res: &mut CheckResult) -> Result<()> {
    let bump = BumpSpec::new(1, 6)?;
    let c1 = bump.decay_constant();
    let cases = [
        (QSetKind::AllIntegers, 1.0 / 3.0, HSpec::Constant { c: 4.0 }),
        (QSetKind::Squares, 1.0 / 6.0, HSpec::Constant { c: 10.0 }),
    ];
    for (kind, a, h) in cases {
        let scn = scenario_1d(kind.clone(), 2.0, 0.0, a, h.clone(), vec![32.0, 64.0, 128.0]);
        let cert = scn.certify()?;
        res.require(
            cert.pass,
            format!("{kind:?}: density hypothesis certified on {{32, 64, 128}}"),
        );
        for m in [32.0, 64.0, 128.0] {
            let table = spectrum::fm_hat_table(&scn, &bump, m, (16.0 * m) as i64)?;
            let fit = spectrum::envelope_check(&table, a, h.eval(m), 0.99, c1)?;
            res.require(
                fit.pass,
                format!(
                    "{kind:?} M = {m}: max |F^_M| / envelope = {:.4} <= C1 = {c1:.4}",
                    fit.c_fit
                ),
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Criterion 6: measure build
// ---------------------------------------------------------------------------

pub struct MeasureArtifacts {
    pub scenario: Scenario,
    pub bump: BumpSpec,
    pub build: measure::MeasureBuild,
}

pub fn criterion_measure() -> CheckResult {
    criterion_measure_with_build().0
}

pub fn criterion_measure_with_build() -> (CheckResult, Option<MeasureArtifacts>) {
    let mut res = CheckResult::new("measure build (Eq. 7, support, normalization)");
    match measure_inner(&mut res) {
        Ok(artifacts) => (res, Some(artifacts)),
        Err(e) => (CheckResult::fail_on_error(&res.name, &e), None),
    }
}

fn measure_inner(res: &mut CheckResult) -> Result<MeasureArtifacts> {
    let bump = BumpSpec::new(1, 6)?;
    let mut kept = None;
    for theta in [0.0, 0.5] {
        let scn = scenario_1d(
            QSetKind::AllIntegers,
            2.0,
            theta,
            1.0 / 3.0,
            HSpec::Constant { c: 4.0 },
            tower_mset(),
        );
        let build = measure::build_measure(&scn, &bump, 3, 8, 512.0)?;
        let scales: Vec<f64> = build.levels[1..].iter().map(|l| l.m_k).collect();
        res.note(format!("theta = {theta}: selected scales {scales:?}"));
        let conv = measure::convergence_check(&build)?;
        for lc in &conv.levels {
            res.require(
                lc.pass,
                format!(
                    "theta = {theta} level {}: certified deviation ratio {:.3} <= 1",
                    lc.k, lc.worst_ratio
                ),
            );
        }
        res.require(
            conv.telescoped_pass,
            format!(
                "theta = {theta}: telescoped bound ratio {:.3} <= 1",
                conv.telescoped_worst
            ),
        );
        res.require(
            conv.mu_hat_zero_pass,
            format!(
                "theta = {theta}: mu_hat_K(0) = {:.6} in [1/2, 3/2]",
                conv.mu_hat_zero.norm()
            ),
        );
        let slack = build.spatial.step();
        let support = measure::support_check(&build, &scn, slack)?;
        res.require(
            support.violations == 0,
            format!(
                "theta = {theta}: support violations {} of {} positive points",
                support.violations, support.positive
            ),
        );
        let norm = measure::normalization_check(&build, &scn, &bump)?;
        res.require(
            norm.pass,
            format!(
                "theta = {theta}: normalized integral error {:.2e} <= 1e-6 (prefix depth {})",
                norm.rel_err, norm.levels_resolved
            ),
        );
        if theta == 0.0 {
            kept = Some(MeasureArtifacts {
                scenario: scn,
                bump: bump.clone(),
                build,
            });
        }
    }
    Ok(kept.expect("theta = 0 build retained"))
}

// ---------------------------------------------------------------------------
// Criterion 7: dimension formulas
// ---------------------------------------------------------------------------

/// Radius of the wide readout used for Fourier-exponent fitting: wide enough
/// to span the first selected band's plateau and the superpolynomial rolloff
/// of its bump factor, which sets in near M_1^2 * p / (2 pi) per divisor.
pub const FIT_RADIUS: f64 = 4096.0;

pub fn criterion_dimension(artifacts: Option<&MeasureArtifacts>) -> CheckResult {
    let mut res = CheckResult::new("dimension formulas and Fourier-exponent fit");
    match dimension_inner(&mut res, artifacts) {
        Ok(()) => res,
        Err(e) => CheckResult::fail_on_error(&res.name, &e),
    }
}

/// Wide-box spectrum for exponent fitting, read from the deepest level whose
/// own band rolloff is resolvable inside the readout radius. A level's factor
/// starts decaying only past |xi| ~ M_k * knee / eps_k; deeper levels merely
/// re-excite the previous level's plateau at certified-small amplitude while
/// their own rolloff sits far outside any storable box, so including them
/// would flatten the annulus sups without adding information about the decay
/// exponent.
pub fn wide_spectrum(art: &MeasureArtifacts) -> Result<crate::spectrum::GriddedSpectrum> {
    let mut table: &BandTable = &art.build.levels[1].table;
    let max_radius = table.lattice.half as f64 - art.build.geom.w as f64;
    let readout_radius = FIT_RADIUS.min(max_radius);
    let knee = art.bump.p as f64 / (2.0 * std::f64::consts::PI);
    for level in &art.build.levels[2..] {
        let t = &level.table;
        if !t.beyond_band && level.m_k * knee / t.eps <= readout_radius / 2.0 {
            table = t;
        } else {
            break;
        }
    }
    let radius = readout_radius;
    let grid = FourierGrid::new(art.build.grid.dim, 1, radius)?;
    let chi0 = BumpSpec::new(art.scenario.mn(), art.bump.k)?;
    let values = measure::readout(table, &chi0, &grid, art.build.geom.w);
    Ok(crate::spectrum::GriddedSpectrum {
        grid,
        values,
        c2: chi0.decay_constant(),
        k_decay: chi0.k,
    })
}

fn dimension_inner(res: &mut CheckResult, artifacts: Option<&MeasureArtifacts>) -> Result<()> {
    let z = QSetSpec::new(1, QSetKind::AllIntegers);
    for tau in [1.5, 2.0, 3.0] {
        let eta = dimension::eta_estimate(&z, &PsiSpec::Power { tau }, 1, &[1_000_000])?;
        let expect = 2.0 / (1.0 + tau);
        res.require(
            (eta - expect).abs() <= 0.05,
            format!("eta(Z, Psi_{tau}) = {eta:.3} within 0.05 of {expect:.3}"),
        );
    }
    let pred = dimension::predict_dims(&DimDescriptor::MnApp { m: 4, n: 2, lambda: 2 })?;
    res.require(
        pred.hausdorff_rational == Some(crate::dimension::Rational { num: 6, den: 1 })
            && pred.fourier_rational == Some(crate::dimension::Rational { num: 4, den: 3 }),
        format!(
            "mn_app(4, 2, lambda=2): dim_H = {:?}, dim_F lower = {:?} (exact 6 and 4/3)",
            pred.hausdorff_rational, pred.fourier_rational
        ),
    );

    let owned;
    let art = match artifacts {
        Some(a) => a,
        None => {
            let (check, built) = criterion_measure_with_build();
            if !check.pass || built.is_none() {
                res.require(false, "measure build for exponent fit failed".into());
                return Ok(());
            }
            owned = built.unwrap();
            &owned
        }
    };
    let spectrum = wide_spectrum(art)?;
    let fit = dimension::fit_fourier_exponent(&spectrum, Some(&art.scenario.params.h))?;
    res.require(
        fit >= 0.23,
        format!(
            "Fourier-exponent fit {fit:.3} >= 0.23 (decay evidence; the finite-depth \
             readout overshoots the asymptotic 1/3 once the bump rolloff dominates)"
        ),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// Criterion 8: property suite
// ---------------------------------------------------------------------------

pub fn criterion_properties() -> CheckResult {
    let mut res = CheckResult::new("property suite (monotonicity, symmetry, determinism)");
    match properties_inner(&mut res) {
        Ok(()) => res,
        Err(e) => CheckResult::fail_on_error(&res.name, &e),
    }
}

fn properties_inner(res: &mut CheckResult) -> Result<()> {
    // cover_sum monotone in N above eta, growing with the truncation below it
    let z = QSetSpec::new(1, QSetKind::AllIntegers);
    let psi = PsiSpec::Power { tau: 2.0 };
    let above: Vec<f64> = [100u64, 1_000, 10_000]
        .iter()
        .map(|&n| dimension::cover_sum(&z, &psi, 0.0, 0.8, n, 100_000))
        .collect::<Result<_>>()?;
    res.require(
        above[0] > above[1] && above[1] > above[2],
        format!("cover_sum (eta = 0.8 > 2/3) decreases in N: {above:?}"),
    );
    let below1 = dimension::cover_sum(&z, &psi, 0.0, 0.5, 100, 10_000)?;
    let below2 = dimension::cover_sum(&z, &psi, 0.0, 0.5, 100, 100_000)?;
    res.require(
        below2 > 1.5 * below1,
        format!("cover_sum (eta = 0.5 < 2/3) grows with the truncation: {below1:.1} -> {below2:.1}"),
    );

    // certify_scenario monotone in h
    let mut mono = true;
    for (kind, a) in [
        (QSetKind::AllIntegers, 1.0 / 3.0),
        (QSetKind::Squares, 1.0 / 6.0),
        (QSetKind::Primes, 0.2),
    ] {
        let base = scenario_1d(
            kind.clone(),
            2.0,
            0.0,
            a,
            HSpec::Constant { c: 4.0 },
            vec![32.0, 64.0, 128.0],
        );
        let rep = base.certify()?;
        let mut bigger = base.clone();
        bigger.params.h = HSpec::Constant { c: 8.0 };
        let rep2 = bigger.certify()?;
        for (e1, e2) in rep.entries.iter().zip(&rep2.entries) {
            mono &= e2.margin >= e1.margin && (!e1.pass || e2.pass);
        }
    }
    res.require(mono, "doubling h never shrinks a margin or flips pass -> fail".into());

    // conjugate symmetry of an inhomogeneous table
    let scn = scenario_1d(
        QSetKind::AllIntegers,
        1.5,
        1.0 / 2f64.sqrt(),
        0.0,
        HSpec::Constant { c: 1.0 },
        vec![32.0],
    );
    let bump = BumpSpec::new(1, 6)?;
    let table = spectrum::fm_hat_table(&scn, &bump, 32.0, 512)?;
    let worst = table
        .coeffs
        .iter()
        .map(|(ell, v)| (table.get(&[-ell[0]]) - v.conj()).norm())
        .fold(0.0f64, f64::max);
    res.require(
        worst <= 1e-12,
        format!("theta != 0 table conjugate symmetry (worst {worst:.2e})"),
    );

    // byte-identical determinism of exports
    let base = std::env::temp_dir().join(format!("salem-verify-{}", std::process::id()));
    let run = |dir: &std::path::Path| -> Result<Vec<(std::path::PathBuf, Vec<u8>)>> {
        std::fs::create_dir_all(dir).map_err(crate::error::SalemError::Io)?;
        let csv = dir.join("table.csv");
        let meta = dir.join("table.json");
        table.export_csv(&csv, &meta)?;
        let scn_b = scenario_1d(
            QSetKind::AllIntegers,
            2.0,
            0.0,
            1.0 / 3.0,
            HSpec::Constant { c: 4.0 },
            tower_mset(),
        );
        let build = measure::build_measure(&scn_b, &bump, 1, 4, 48.0)?;
        let mut files = measure::export_measure(&build, dir)?;
        files.push(csv);
        files.push(meta);
        files
            .into_iter()
            .map(|p| {
                let bytes = std::fs::read(&p).map_err(crate::error::SalemError::Io)?;
                Ok((p.file_name().map(std::path::PathBuf::from).unwrap(), bytes))
            })
            .collect()
    };
    let a = run(&base.join("a"))?;
    let b = run(&base.join("b"))?;
    res.require(
        a == b,
        format!("re-running exports produces byte-identical files ({} files)", a.len()),
    );
    let _ = std::fs::remove_dir_all(&base);
    Ok(())
}
