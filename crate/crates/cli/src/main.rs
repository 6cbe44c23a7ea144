//! Batch front end: chart verification, symbol reduction, operator assembly,
//! and decay sweeps, each driven by a single JSON config file.
//!
//! Every command writes deterministic artifacts: the same config (and seed)
//! produces byte-identical output files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use twistorq::error::{Error, Result};
use twistorq::{
    from_chart, holomorphy_residual, operator_norm, fs_quadrature_build, pull_back, reduce, run_sweep,
    su2_for_removed_point, to_chart, toeplitz_matrix, toeplitz_matrix_exact, transition,
    write_operator, write_sweep_artifacts, BumpSpec, ChartSpec, FockBasis,
    PolySymbol, QuadratureSpec, RealPoint4n, RemovedFiberChart, SpherePoint, SweepConfig,
    SCHEMA_VERSION,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Environment variable overriding the output root directory.
const OUT_ROOT_ENV: &str = "TWISTORQ_OUT_DIR";

#[derive(Parser)]
#[command(name = "twistorq", version, about = "Toeplitz quantization over the twistor sphere")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Verify chart round trips, SU(2) frames, transitions, and holomorphy.
    ChartsCheck(CommonArgs),
    /// Reduce a symbol over the sphere and tabulate it on a grid.
    Reduce(CommonArgs),
    /// Assemble one Toeplitz operator and write it to disk.
    ToeplitzBuild(CommonArgs),
    /// Run a semiclassical decay sweep.
    Sweep(CommonArgs),
    /// Summarize a sweep JSON artifact as a plain-text digest.
    Report(CommonArgs),
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Path to the JSON config for this run.
    #[arg(long)]
    config: PathBuf,
    /// Output root; defaults to $TWISTORQ_OUT_DIR, then the current directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl CommonArgs {
    fn out_root(&self) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }

    fn resolve(&self, name: &str) -> PathBuf {
        let p = Path::new(name);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out_root().join(p)
        }
    }

    fn load<T: serde::de::DeserializeOwned>(&self) -> Result<T> {
        Ok(serde_json::from_str(&fs::read_to_string(&self.config)?)?)
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

// ---------------------------------------------------------------------------
// charts-check

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChartsCheckConfig {
    seed: u64,
    samples: usize,
    n: usize,
    #[serde(default)]
    chart: ChartSpec,
    /// Explicit sphere points that must be representable in the chart; a
    /// removed-fiber hit here is surfaced as a named failure.
    #[serde(default)]
    probe_points: Vec<[f64; 3]>,
    output: String,
}

#[derive(Debug, Clone, Serialize)]
struct CheckOutcome {
    name: String,
    max_error: f64,
    tolerance: f64,
    passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

impl CheckOutcome {
    fn measured(name: &str, max_error: f64, tolerance: f64) -> Self {
        CheckOutcome {
            name: name.to_string(),
            max_error,
            tolerance,
            passed: max_error <= tolerance,
            error: None,
        }
    }

    fn failed(name: &str, tolerance: f64, err: &Error) -> Self {
        CheckOutcome {
            name: name.to_string(),
            max_error: f64::INFINITY,
            tolerance,
            passed: false,
            error: Some(err.to_string()),
        }
    }
}

fn random_point(rng: &mut ChaCha8Rng, n: usize) -> RealPoint4n {
    let mut block = || (0..n).map(|_| 4.0 * rng.gen::<f64>() - 2.0).collect::<Vec<f64>>();
    RealPoint4n::new(block(), block(), block(), block())
}

fn random_sphere(rng: &mut ChaCha8Rng) -> SpherePoint {
    loop {
        let v = [
            2.0 * rng.gen::<f64>() - 1.0,
            2.0 * rng.gen::<f64>() - 1.0,
            2.0 * rng.gen::<f64>() - 1.0,
        ];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm > 0.1 && norm <= 1.0 {
            return SpherePoint::new(v[0] / norm, v[1] / norm, v[2] / norm)
                .expect("normalized point");
        }
    }
}

fn cmd_charts_check(args: &CommonArgs) -> Result<i32> {
    let cfg: ChartsCheckConfig = args.load()?;
    if cfg.n == 0 || cfg.samples == 0 {
        return Err(Error::InvalidConfig(
            "samples and n must be positive".into(),
        ));
    }
    let chart = cfg.chart.build()?;
    let standard = RemovedFiberChart::standard();
    let transition_chart = RemovedFiberChart::for_point(SpherePoint::new(1.0, 0.0, 0.0)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut round_trip = 0.0f64;
    let mut transition_err = 0.0f64;
    let mut holomorphy = 0.0f64;
    for _ in 0..cfg.samples {
        let x = random_point(&mut rng, cfg.n);
        let s = random_sphere(&mut rng);
        for ch in [&standard, &chart] {
            if s.dist(&ch.removed) < 1e-3 {
                continue;
            }
            let coords = to_chart(&x, s, ch)?;
            let (x2, s2) = from_chart(&coords, ch);
            let dx = (x.to_vector() - x2.to_vector()).norm();
            round_trip = round_trip.max(dx).max(s.dist(&s2));
            holomorphy = holomorphy.max(holomorphy_residual(&x, s, ch)?);
        }
        if s.dist(&standard.removed) >= 1e-3 && s.a < 0.99 {
            let coords = to_chart(&x, s, &standard)?;
            if coords.zeta.norm() > 1e-2 {
                let moved = transition(&coords)?;
                let back = transition(&moved)?;
                transition_err = transition_err.max((back.zeta - coords.zeta).norm());
                let direct = to_chart(&x, s, &transition_chart)?;
                for l in 0..cfg.n {
                    transition_err = transition_err
                        .max((moved.v[l] - direct.v[l]).norm())
                        .max((moved.xi[l] - direct.xi[l]).norm());
                }
            }
        }
    }

    let u = su2_for_removed_point(&chart);
    let m = u.matrix();
    let unitary_dev = (m.adjoint() * m - nalgebra::Matrix2::identity()).norm();
    let det_dev = (m.determinant() - Complex64::new(1.0, 0.0)).norm();

    let mut checks = vec![
        CheckOutcome::measured("round-trip", round_trip, 1e-12),
        CheckOutcome::measured("su2-frame", unitary_dev.max(det_dev), 1e-13),
        CheckOutcome::measured("transition-consistency", transition_err, 1e-12),
        CheckOutcome::measured("holomorphy", holomorphy, 1e-12),
    ];

    let mut probe_err = 0.0f64;
    let mut probe_failure: Option<Error> = None;
    for p in &cfg.probe_points {
        let s = SpherePoint::new(p[0], p[1], p[2])?;
        match to_chart(&RealPoint4n::zero(cfg.n), s, &chart) {
            Ok(coords) => {
                let (_, s2) = from_chart(&coords, &chart);
                probe_err = probe_err.max(s.dist(&s2));
            }
            Err(e) => {
                probe_failure = Some(e);
                break;
            }
        }
    }
    checks.push(match probe_failure {
        Some(e) => CheckOutcome::failed("probe-points", 1e-12, &e),
        None => CheckOutcome::measured("probe-points", probe_err, 1e-12),
    });

    let passed = checks.iter().all(|c| c.passed);
    let report = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "command": "charts-check",
        "config": cfg,
        "checks": checks,
        "passed": passed,
    });
    write_json(&args.resolve(&cfg.output), &report)?;
    if !passed {
        let first = report["checks"]
            .as_array()
            .unwrap()
            .iter()
            .find(|c| c["passed"] == false)
            .unwrap();
        eprintln!("charts-check failed: {}", first["name"]);
        return Ok(1);
    }
    Ok(0)
}

// ---------------------------------------------------------------------------
// reduce

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ReduceReference {
    /// Re(v); the closed form for exponent 1.
    ReV,
    /// 2^p (Re v)^p / (p+1) for exponent 2p, the commonly quoted closed
    /// form; inconsistent with the reduction integral (see README).
    PrintedEvenPower,
    /// sum over even j of C(m,j) C(j,j/2) (2 Re v)^{m-j} |xi|^j
    /// (j/2)! (m-j/2)! / (m+1)! for exponent m; reproduces quadrature.
    DerivedEvenPower,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReduceConfig {
    /// Exponent m of the symbol (2 x_1)^m on R^4.
    exponent: usize,
    #[serde(default)]
    chart: ChartSpec,
    fs_radial: usize,
    fs_angular: usize,
    /// Points per grid axis (Re v, Im v, Re xi); Im xi = 0.
    grid_points: usize,
    /// Half-width of the grid.
    grid_radius: f64,
    #[serde(default)]
    reference: Option<ReduceReference>,
    output: String,
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

fn binomial(n: usize, r: usize) -> f64 {
    factorial(n) / (factorial(r) * factorial(n - r))
}

fn reference_value(r: ReduceReference, m: usize, v: Complex64, xi: Complex64) -> Result<f64> {
    match r {
        ReduceReference::ReV => {
            if m != 1 {
                return Err(Error::InvalidConfig(
                    "re_v reference applies to exponent 1".into(),
                ));
            }
            Ok(v.re)
        }
        ReduceReference::PrintedEvenPower => {
            if m == 0 || m % 2 != 0 {
                return Err(Error::InvalidConfig(
                    "printed_even_power reference needs an even positive exponent".into(),
                ));
            }
            let p = m / 2;
            Ok(2.0f64.powi(p as i32) * v.re.powi(p as i32) / (p as f64 + 1.0))
        }
        ReduceReference::DerivedEvenPower => {
            let mut acc = 0.0;
            let mut j = 0;
            while j <= m {
                acc += binomial(m, j)
                    * binomial(j, j / 2)
                    * (2.0 * v.re).powi((m - j) as i32)
                    * xi.norm().powi(j as i32)
                    * factorial(j / 2)
                    * factorial(m - j / 2)
                    / factorial(m + 1);
                j += 2;
            }
            Ok(acc)
        }
    }
}

fn cmd_reduce(args: &CommonArgs) -> Result<i32> {
    let cfg: ReduceConfig = args.load()?;
    if cfg.grid_points == 0 {
        return Err(Error::InvalidConfig("grid_points must be positive".into()));
    }
    let chart = cfg.chart.build()?;
    let m = cfg.exponent;
    let symbol = pull_back(
        move |x: &RealPoint4n| Complex64::new((2.0 * x.x1[0]).powi(m as i32), 0.0),
        chart,
    );
    let fs = fs_quadrature_build(cfg.fs_radial, cfg.fs_angular)?;
    let reduced = reduce(&symbol, &fs)?;

    let axis: Vec<f64> = if cfg.grid_points == 1 {
        vec![0.0]
    } else {
        (0..cfg.grid_points)
            .map(|i| -cfg.grid_radius + 2.0 * cfg.grid_radius * i as f64 / (cfg.grid_points - 1) as f64)
            .collect()
    };
    let mut rows = Vec::new();
    let mut max_err = 0.0f64;
    for &re_v in &axis {
        for &im_v in &axis {
            for &re_xi in &axis {
                let v = Complex64::new(re_v, im_v);
                let xi = Complex64::new(re_xi, 0.0);
                let val = reduced.eval(&[v], &[xi], Complex64::new(0.0, 0.0))?;
                if !val.re.is_finite() || !val.im.is_finite() {
                    return Err(Error::NonFinite("reduction on the grid"));
                }
                let reference = match cfg.reference {
                    Some(r) => {
                        let rv = reference_value(r, m, v, xi)?;
                        max_err = max_err.max((val.re - rv).abs()).max(val.im.abs());
                        Some(rv)
                    }
                    None => None,
                };
                rows.push(serde_json::json!({
                    "re_v": re_v, "im_v": im_v, "re_xi": re_xi,
                    "value_re": val.re, "value_im": val.im,
                    "reference": reference,
                }));
            }
        }
    }
    let report = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "command": "reduce",
        "config": cfg,
        "max_abs_error": if cfg.reference.is_some() { Some(max_err) } else { None },
        "table": rows,
    });
    write_json(&args.resolve(&cfg.output), &report)?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// toeplitz-build

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum BuildSymbolSpec {
    Polynomial { poly: PolySymbol },
    Bump { bump: BumpSpec },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ToeplitzBuildConfig {
    n: usize,
    k: f64,
    cutoff: usize,
    symbol: BuildSymbolSpec,
    #[serde(default)]
    chart: ChartSpec,
    #[serde(default)]
    hermite_order: Option<usize>,
    #[serde(default = "default_fs_order")]
    fs_radial: usize,
    #[serde(default = "default_fs_order")]
    fs_angular: usize,
    /// Stem for the operator files (<stem>.json, <stem>.bin).
    output_stem: String,
    /// Run report path.
    output: String,
}

fn default_fs_order() -> usize {
    24
}

fn cmd_toeplitz_build(args: &CommonArgs) -> Result<i32> {
    let cfg: ToeplitzBuildConfig = args.load()?;
    let basis = FockBasis::new(cfg.n, cfg.k, cfg.cutoff)?;
    let op = match &cfg.symbol {
        BuildSymbolSpec::Polynomial { poly } => {
            if poly.n() != cfg.n {
                return Err(Error::InvalidConfig(
                    "polynomial symbol n does not match config n".into(),
                ));
            }
            toeplitz_matrix_exact(poly, &basis)?
        }
        BuildSymbolSpec::Bump { bump } => {
            let chart = cfg.chart.build()?;
            let b = bump.build(cfg.n)?;
            let fs = fs_quadrature_build(cfg.fs_radial, cfg.fs_angular)?;
            let mut q = QuadratureSpec::new(
                cfg.hermite_order.unwrap_or((2 * cfg.cutoff + 4).max(24)),
                fs,
            )?
            .with_support_radius(b.support_radius());
            q.hermite_order = q.hermite_order.max(2);
            toeplitz_matrix(&b.symbol(chart), &basis, &q)?
        }
    };
    let norm = operator_norm(&op)?;
    write_operator(&op, &args.resolve(&cfg.output_stem))?;
    let report = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "command": "toeplitz-build",
        "config": cfg,
        "basis_size": op.basis.len(),
        "operator_norm": norm,
    });
    write_json(&args.resolve(&cfg.output), &report)?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// sweep

fn cmd_sweep(args: &CommonArgs) -> Result<i32> {
    let mut cfg: SweepConfig = args.load()?;
    cfg.csv_path = cfg
        .csv_path
        .map(|p| args.resolve(&p).to_string_lossy().into_owned());
    cfg.json_path = cfg
        .json_path
        .map(|p| args.resolve(&p).to_string_lossy().into_owned());
    let result = run_sweep(&cfg)?;
    write_sweep_artifacts(&result)?;
    let fit_possible = result.exact_cancellation
        || result.fit_first_order.is_some()
        || result.fit_commutator.is_some();
    if !fit_possible {
        eprintln!("sweep produced no fittable residuals");
        return Ok(1);
    }
    Ok(0)
}

// ---------------------------------------------------------------------------
// report

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportConfig {
    /// Sweep JSON summary to digest.
    input: String,
    output: String,
    #[serde(default = "default_band_first_order")]
    slope_band_first_order: f64,
    #[serde(default = "default_band_commutator")]
    slope_band_commutator: f64,
}

fn default_band_first_order() -> f64 {
    -1.7
}
fn default_band_commutator() -> f64 {
    -0.8
}

fn cmd_report(args: &CommonArgs) -> Result<i32> {
    let cfg: ReportConfig = args.load()?;
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(args.resolve(&cfg.input))?)?;
    let mut out = String::new();
    writeln!(out, "sweep digest (schema {})", summary["schema_version"]).unwrap();
    writeln!(
        out,
        "exact_cancellation: {}",
        summary["exact_cancellation"]
    )
    .unwrap();
    for (label, band) in [
        ("fit_first_order", cfg.slope_band_first_order),
        ("fit_commutator", cfg.slope_band_commutator),
    ] {
        let fit = &summary[label];
        if fit.is_null() {
            writeln!(out, "{label}: not fitted").unwrap();
        } else {
            let slope = fit["slope"].as_f64().unwrap_or(f64::NAN);
            writeln!(
                out,
                "{label}: slope {} stderr {} band {} -> {}",
                fit["slope"],
                fit["stderr"],
                band,
                if slope <= band { "within" } else { "outside" }
            )
            .unwrap();
        }
    }
    if let Some(records) = summary["records"].as_array() {
        writeln!(out, "records: {}", records.len()).unwrap();
        for r in records {
            writeln!(
                out,
                "  k={} D={} first_order={} commutator={}",
                r["k"], r["degree"], r["res_first_order"], r["res_commutator"]
            )
            .unwrap();
        }
    }
    let path = args.resolve(&cfg.output);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, out)?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::ChartsCheck(a) => cmd_charts_check(a),
        Command::Reduce(a) => cmd_reduce(a),
        Command::ToeplitzBuild(a) => cmd_toeplitz_build(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Report(a) => cmd_report(a),
    };
    match outcome {
        Ok(0) => ExitCode::SUCCESS,
        Ok(_) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
