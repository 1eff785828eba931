//! `salem`: scenario ingestion, pipeline execution, verification suites, and
//! artifact emission for the limsup-set measure construction.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;

use salem_core::bump::BumpSpec;
use salem_core::dimension::{
    box_counting, cover_sum, eta_estimate, lambda_estimate, predict_dims, DimDescriptor,
    DimensionReport,
};
use salem_core::error::SalemError;
use salem_core::measure::{
    build_measure, convergence_check, export_measure, normalization_check, support_check,
};
use salem_core::scenario::{PsiSpec, Scenario};
use salem_core::spectrum::fm_hat_table;
use salem_core::verify::{run_suite, Suite};

#[derive(Parser)]
#[command(name = "salem", version, about = "Fourier-decaying measures on Diophantine limsup sets")]
struct Cli {
    /// Emit a machine-readable JSON error object on the diagnostic stream.
    #[arg(long, global = true)]
    json_errors: bool,
    /// Worker-pool size; defaults to the number of logical cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the built-in Q-set, Psi, and h presets.
    Presets {
        /// Directory for the run manifest.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Density-hypothesis report |Q(M)| eps(M)^a h(M) >= M^a over the Mset.
    Certify {
        scenario: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Tabulate the window spectrum F^_M on |l| <= lmax and export it.
    Spectrum {
        scenario: PathBuf,
        #[arg(long = "M")]
        m: f64,
        #[arg(long)]
        lmax: i64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the measure recursion and export density, spectrum, and checks.
    Measure {
        scenario: PathBuf,
        /// Number of levels k.
        #[arg(long, default_value_t = 3)]
        levels: usize,
        /// Verification grid resolution R (grid step 1/R).
        #[arg(long = "grid", default_value_t = 8)]
        grid: u32,
        /// Verification box radius X.
        #[arg(long = "box", default_value_t = 512.0)]
        box_radius: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dimension estimates and closed-form predictions for a scenario.
    Dims {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// The section-12 cover-sum upper bound at a given exponent.
    Cover {
        scenario: PathBuf,
        #[arg(long)]
        eta: f64,
        /// Lower cutoff N: the sum runs over |q| >= N.
        #[arg(long)]
        from: u64,
        /// Truncation bound N_max.
        #[arg(long, default_value_t = 100_000)]
        nmax: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run the verification batteries.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    parameters: Vec<String>,
    scenario_hash: Option<String>,
    tool_version: String,
    wall_time_s: f64,
    outputs: Vec<String>,
}

/// FNV-1a over the scenario file bytes; stable across runs and platforms.
fn scenario_hash(path: &Path) -> Result<String, SalemError> {
    let bytes = std::fs::read(path)
        .map_err(|e| SalemError::Input(format!("cannot read {}: {e}", path.display())))?;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    Ok(format!("{h:016x}"))
}

struct Run {
    started: Instant,
    command: String,
    parameters: Vec<String>,
    scenario_hash: Option<String>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn new(command: &str) -> Run {
        Run {
            started: Instant::now(),
            command: command.to_string(),
            parameters: std::env::args().skip(1).collect(),
            scenario_hash: None,
            outputs: Vec::new(),
        }
    }

    fn with_scenario(mut self, path: &Path) -> Result<Run, SalemError> {
        self.scenario_hash = Some(scenario_hash(path)?);
        Ok(self)
    }

    fn emit(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    fn write_json<T: Serialize>(&mut self, path: PathBuf, value: &T) -> Result<(), SalemError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&path, serde_json::to_string_pretty(value)? + "\n")?;
        self.emit(path);
        Ok(())
    }

    /// Writes the run manifest into `dir` and returns the exit code `code`.
    fn finish(mut self, dir: &Path, code: u8) -> Result<u8, SalemError> {
        std::fs::create_dir_all(dir)?;
        let manifest_path = dir.join("run_manifest.json");
        self.outputs.push(manifest_path.clone());
        let manifest = RunManifest {
            command: self.command,
            parameters: self.parameters,
            scenario_hash: self.scenario_hash,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_s: self.started.elapsed().as_secs_f64(),
            outputs: self
                .outputs
                .iter()
                .map(|p| p.display().to_string())
                .collect(),
        };
        std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(code)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            report_error(cli.json_errors, &SalemError::Input(format!("--threads: {e}")));
            return ExitCode::from(2);
        }
    }
    match dispatch(&cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            report_error(cli.json_errors, &e);
            ExitCode::from(exit_code_for(&e))
        }
    }
}

/// Exit codes: 0 success, 1 verification failure, 2 input error. Errors that
/// signal a failed certification search (rather than malformed input) map
/// to 1; everything else to 2.
fn exit_code_for(e: &SalemError) -> u8 {
    match e {
        SalemError::MsetExhausted { .. } | SalemError::EmptyIntersection { .. } => 1,
        _ => 2,
    }
}

fn report_error(json: bool, e: &SalemError) {
    if json {
        let kind = match e {
            SalemError::Input(_) => "input",
            SalemError::EmptyWindow { .. } => "empty_window",
            SalemError::Domain(_) => "domain",
            SalemError::InsufficientData(_) => "insufficient_data",
            SalemError::MsetExhausted { .. } => "mset_exhausted",
            SalemError::BoxTooLarge { .. } => "box_too_large",
            SalemError::GridTooSmall { .. } => "grid_too_small",
            SalemError::EmptyIntersection { .. } => "empty_intersection",
            SalemError::Io(_) => "io",
        };
        let obj = serde_json::json!({ "error": { "kind": kind, "message": e.to_string() } });
        eprintln!("{obj}");
    } else {
        eprintln!("error: {e}");
    }
}

fn dispatch(cmd: &Command) -> Result<u8, SalemError> {
    match cmd {
        Command::Presets { out } => cmd_presets(out),
        Command::Certify { scenario, out } => cmd_certify(scenario, out),
        Command::Spectrum {
            scenario,
            m,
            lmax,
            out,
        } => cmd_spectrum(scenario, *m, *lmax, out),
        Command::Measure {
            scenario,
            levels,
            grid,
            box_radius,
            out,
        } => cmd_measure(scenario, *levels, *grid, *box_radius, out),
        Command::Dims { scenario, out } => cmd_dims(scenario, out),
        Command::Cover {
            scenario,
            eta,
            from,
            nmax,
            out,
        } => cmd_cover(scenario, *eta, *from, *nmax, out),
        Command::Verify { suite, out } => cmd_verify(suite, out),
    }
}

fn cmd_presets(out: &Path) -> Result<u8, SalemError> {
    let mut run = Run::new("presets");
    let listing = serde_json::json!({
        "Q": [
            { "kind": "all_integers", "note": "Z \\ {0}, symmetric" },
            { "kind": "primes", "note": "positive primes" },
            { "kind": "shifted_primes", "note": "p + 1 with p prime" },
            { "kind": "squares", "note": "positive perfect squares" },
            { "kind": "powers_of_two", "note": "2^j, j >= 0" },
            { "kind": "sin_threshold", "note": "q in N with |sin q| >= 1/2" },
            { "kind": "explicit_list", "note": "inline payload of q vectors" },
            { "kind": "file", "note": "whitespace-separated q vectors, one per line" },
        ],
        "Psi": [
            { "family": "power", "params": ["tau"], "note": "Psi(q) = |q|^-tau" },
            { "family": "hinokuma_shiga", "params": ["tau"], "note": "Psi(q) = |sin q| |q|^-tau" },
            { "family": "tabulated", "params": ["table"], "note": "explicit (|q|, Psi) pairs" },
        ],
        "h": [
            { "family": "constant", "params": ["c"] },
            { "family": "log_power", "params": ["c", "p"], "note": "c (1 + ln M)^p" },
            { "family": "table", "params": ["xs", "hs"], "note": "monotone interpolation" },
        ],
    });
    println!("{}", serde_json::to_string_pretty(&listing)?);
    run.write_json(out.join("presets.json"), &listing)?;
    run.finish(out, 0)
}

fn cmd_certify(scenario: &Path, out: &Path) -> Result<u8, SalemError> {
    let mut run = Run::new("certify").with_scenario(scenario)?;
    let scn = Scenario::from_path(scenario)?;
    let report = scn.certify()?;
    for entry in &report.entries {
        if let Some(reason) = &entry.reason {
            if reason.contains("empty window") {
                return Err(SalemError::EmptyWindow { m: entry.m });
            }
        }
    }
    for entry in &report.entries {
        println!(
            "M = {}: |Q(M)| = {}, eps = {:.6e}, lhs = {:.6} vs rhs = {:.6} -> {}",
            entry.m,
            entry.window_size,
            entry.epsilon,
            entry.lhs,
            entry.rhs,
            if entry.pass { "pass" } else { "FAIL" }
        );
    }
    run.write_json(out.join("certify.json"), &report)?;
    run.finish(out, if report.pass { 0 } else { 1 })
}

fn cmd_spectrum(scenario: &Path, m: f64, lmax: i64, out: &Path) -> Result<u8, SalemError> {
    let mut run = Run::new("spectrum").with_scenario(scenario)?;
    let scn = Scenario::from_path(scenario)?;
    let bump = BumpSpec::new(scn.params.m, 6)?;
    let table = fm_hat_table(&scn, &bump, m, lmax)?;
    std::fs::create_dir_all(out)?;
    let csv = out.join("spectrum_table.csv");
    let meta = out.join("spectrum_table.json");
    table.export_csv(&csv, &meta)?;
    println!(
        "M = {m}: {} nonzero coefficients on |l| <= {lmax} -> {}",
        table.coeffs.len(),
        csv.display()
    );
    run.emit(csv);
    run.emit(meta);
    run.finish(out, 0)
}

fn cmd_measure(
    scenario: &Path,
    levels: usize,
    grid: u32,
    box_radius: f64,
    out: &Path,
) -> Result<u8, SalemError> {
    let mut run = Run::new("measure").with_scenario(scenario)?;
    let scn = Scenario::from_path(scenario)?;
    let bump = BumpSpec::new(scn.params.m, 6)?;
    let build = build_measure(&scn, &bump, levels, grid, box_radius)?;
    for path in export_measure(&build, out)? {
        run.emit(path);
    }
    let conv = convergence_check(&build)?;
    let slack = build.spatial.step();
    let support = support_check(&build, &scn, slack)?;
    let norm = normalization_check(&build, &scn, &bump)?;
    let pass = conv.levels.iter().all(|c| c.pass)
        && conv.telescoped_pass
        && conv.mu_hat_zero_pass
        && support.violations == 0
        && norm.pass;
    let checks = serde_json::json!({
        "eq7_levels": conv.levels.iter().map(|c| serde_json::json!({
            "k": c.k, "worst_ratio": c.worst_ratio, "worst_xi": c.worst_xi, "pass": c.pass,
        })).collect::<Vec<_>>(),
        "telescoped_worst": conv.telescoped_worst,
        "telescoped_pass": conv.telescoped_pass,
        "mu_hat_zero": [conv.mu_hat_zero.re, conv.mu_hat_zero.im],
        "mu_hat_zero_pass": conv.mu_hat_zero_pass,
        "empirical_C": conv.c_report,
        "empirical_C_worst_ratio": conv.c_worst_ratio,
        "support_checked": support.checked,
        "support_positive": support.positive,
        "support_violations": support.violations,
        "support_slack": slack,
        "normalized_integral": norm.integral / norm.mu_hat_zero,
        "normalization_rel_err": norm.rel_err,
        "normalization_pass": norm.pass,
        "pass": pass,
    });
    run.write_json(out.join("checks.json"), &checks)?;
    let scales: Vec<f64> = build.levels[1..].iter().map(|l| l.m_k).collect();
    println!(
        "built {} levels at scales {scales:?}; checks {}",
        levels,
        if pass { "pass" } else { "FAIL" }
    );
    run.finish(out, if pass { 0 } else { 1 })
}

/// Picks the closed-form theorem matching a scenario, if any.
fn descriptor_for(scn: &Scenario) -> Option<DimDescriptor> {
    let mn = scn.mn();
    match &scn.psi {
        PsiSpec::Power { tau } => {
            if mn == 1 {
                Some(DimDescriptor::JarnikBesicovitch { tau: *tau })
            } else if tau.fract() == 0.0 {
                Some(DimDescriptor::MnApp {
                    m: scn.params.m as i64,
                    n: scn.n as i64,
                    lambda: *tau as i64,
                })
            } else {
                None
            }
        }
        PsiSpec::HinokumaShiga { tau } if mn == 1 => {
            Some(DimDescriptor::HinokumaShiga { tau: *tau })
        }
        _ => None,
    }
}

fn cmd_dims(scenario: &Path, out: &Path) -> Result<u8, SalemError> {
    let mut run = Run::new("dims").with_scenario(scenario)?;
    let scn = Scenario::from_path(scenario)?;
    let mut notes = Vec::new();
    let mut report = DimensionReport {
        lambda_liminf: None,
        lambda_limsup: None,
        nu_est: None,
        eta_est: None,
        hausdorff_pred: None,
        fourier_lower_pred: None,
        fourier_fit: None,
        box_count_est: None,
        notes: Vec::new(),
    };

    let prediction = match descriptor_for(&scn) {
        Some(desc) => {
            let pred = predict_dims(&desc)?;
            report.hausdorff_pred = Some(pred.hausdorff);
            report.fourier_lower_pred = pred.fourier_lower;
            notes.push(format!("closed form: {}", pred.note));
            Some((desc, pred))
        }
        None => {
            notes.push("no closed-form theorem matches this scenario".to_string());
            None
        }
    };

    if scn.n == 1 {
        let samples: Vec<i64> = (2..=1000).collect();
        match lambda_estimate(&scn.psi, &samples) {
            Ok((lo, hi)) => {
                report.lambda_liminf = Some(lo);
                report.lambda_limsup = Some(hi);
                notes.push("lambda: -ln Psi / ln |q| extrema over the top sampled decade".into());
            }
            Err(e) => notes.push(format!("lambda estimate unavailable: {e}")),
        }
        match scn.q.nu_estimate(100_000) {
            Ok(nu) => {
                report.nu_est = Some(nu);
                notes.push("nu: counting-function slope of Q below 10^5".into());
            }
            Err(e) => notes.push(format!("nu estimate unavailable: {e}")),
        }
        match eta_estimate(&scn.q, &scn.psi, scn.params.m, &[1_000, 10_000, 100_000]) {
            Ok(eta) => {
                report.eta_est = Some(eta);
                notes.push("eta: bisection on the partial-sum doubling test".into());
            }
            Err(e) => notes.push(format!("eta estimate unavailable: {e}")),
        }
    } else {
        notes.push("lambda/nu/eta estimators require n = 1".into());
    }

    if scn.mn() == 1 {
        match box_counting(&scn.q, &scn.psi, scn.params.theta[0], 3, &[3, 4, 5, 6, 7, 8]) {
            Ok(slope) => {
                report.box_count_est = Some(slope);
                notes.push("box counting: 3-level window intersection, depths 3..8".into());
            }
            Err(e) => notes.push(format!("box counting unavailable: {e}")),
        }
    }
    notes.push("fourier_fit requires a built measure; run `measure` then the verify suite".into());
    report.notes = notes;

    let payload = serde_json::json!({
        "report": report,
        "prediction": prediction.as_ref().map(|(desc, pred)| serde_json::json!({
            "descriptor": desc,
            "hausdorff": pred.hausdorff,
            "fourier_lower": pred.fourier_lower,
            "hausdorff_rational": pred.hausdorff_rational,
            "fourier_rational": pred.fourier_rational,
        })),
    });
    println!("{}", serde_json::to_string_pretty(&payload)?);
    run.write_json(out.join("dims.json"), &payload)?;
    run.finish(out, 0)
}

fn cmd_cover(
    scenario: &Path,
    eta: f64,
    from: u64,
    nmax: u64,
    out: &Path,
) -> Result<u8, SalemError> {
    let mut run = Run::new("cover").with_scenario(scenario)?;
    let scn = Scenario::from_path(scenario)?;
    if scn.mn() != 1 {
        return Err(SalemError::Domain("cover requires m = n = 1".into()));
    }
    let sum = cover_sum(&scn.q, &scn.psi, scn.params.theta[0], eta, from, nmax)?;
    let payload = serde_json::json!({
        "eta": eta,
        "from": from,
        "nmax": nmax,
        "cover_sum": sum,
        "truncation_note": format!("sum truncated at |q| <= {nmax}; the true bound is the N -> infinity tail limit"),
    });
    println!("{}", serde_json::to_string_pretty(&payload)?);
    run.write_json(out.join("cover.json"), &payload)?;
    run.finish(out, 0)
}

fn cmd_verify(suite: &str, out: &Path) -> Result<u8, SalemError> {
    let mut run = Run::new("verify");
    let suite: Suite = suite.parse()?;
    let report = run_suite(suite);
    for check in &report.results {
        println!(
            "{} {}",
            if check.pass { "PASS" } else { "FAIL" },
            check.name
        );
        for line in &check.details {
            println!("    {line}");
        }
    }
    println!(
        "suite {}: {}",
        report.suite,
        if report.pass { "PASS" } else { "FAIL" }
    );
    run.write_json(out.join("verify.json"), &report)?;
    run.finish(out, if report.pass { 0 } else { 1 })
}
