//! Configuration, experiment orchestration, persistence and log-log rate
//! fitting for the `amfem` command line tool.
//!
//! Outputs are deterministic given the configuration: all CSV/JSON number
//! fields reproduce bitwise on the same platform, with the single exception
//! of the wall-clock `seconds` column.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use amfem::adapt::{afem_run, uniform_run, AfemConfig, AfemHistory, StopRule};
use amfem::elements::ElementFamily;
use amfem::estimator::indicators_to_csv;
use amfem::problem::{
    manufactured_poisson, manufactured_stokes, DomainSpec, ErrorMode, ProblemKind, ProblemSpec,
    SourceTerm,
};
use amfem::verify::ConstantsReport;

/// Errors carrying the process exit code: 2 for validation problems, 3 for
/// failed verification checks, 1 for runtime failures.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    CheckFailure(String),
    Runtime(amfem::Error),
    Io(std::io::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid configuration: {m}"),
            CliError::CheckFailure(m) => write!(f, "verification failed: {m}"),
            CliError::Runtime(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<amfem::Error> for CliError {
    fn from(e: amfem::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::CheckFailure(_) => 3,
            CliError::Runtime(_) | CliError::Io(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn default_problem() -> String {
    "poisson".into()
}
fn default_domain() -> String {
    "unit_square".into()
}
fn default_subdivisions() -> usize {
    2
}
fn default_family() -> String {
    "rt".into()
}
fn default_theta() -> f64 {
    0.3
}
fn default_max_dofs() -> usize {
    100_000
}
fn default_tol() -> f64 {
    1e-8
}
fn default_max_iters() -> usize {
    100
}
fn default_source() -> String {
    "manufactured".into()
}
fn default_error() -> String {
    "auto".into()
}
fn default_pair_levels() -> usize {
    5
}

/// Flat JSON run configuration. Unknown keys are rejected; flags override
/// file values. The configuration is embedded verbatim in every output.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_problem")]
    pub problem: String,
    /// "unit_square", "lshape", or a path to a mesh JSON file.
    #[serde(default = "default_domain")]
    pub domain: String,
    #[serde(default = "default_subdivisions")]
    pub subdivisions: usize,
    #[serde(default = "default_family")]
    pub family: String,
    #[serde(default)]
    pub order: u8,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_max_dofs")]
    pub max_dofs: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// "manufactured", "constant", "zero" or "linear_x".
    #[serde(default = "default_source")]
    pub source: String,
    /// "auto", "exact", "reference" or "none".
    #[serde(default = "default_error")]
    pub error: String,
    #[serde(default)]
    pub seed: u64,
    /// Nested mesh-pair levels used by the verify subcommand.
    #[serde(default = "default_pair_levels")]
    pub pair_levels: usize,
    #[serde(default)]
    pub out: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults are valid")
    }
}

/// Parse a config file (or use defaults when `path` is None) and apply flag
/// overrides, then validate.
pub fn parse_config(
    path: Option<&Path>,
    theta: Option<f64>,
    max_dofs: Option<usize>,
    out: Option<&Path>,
) -> Result<RunConfig> {
    let mut config: RunConfig = match path {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| CliError::Validation(e.to_string()))?
        }
        None => RunConfig::default(),
    };
    if let Some(t) = theta {
        config.theta = t;
    }
    if let Some(m) = max_dofs {
        config.max_dofs = m;
    }
    if let Some(o) = out {
        config.out = Some(o.display().to_string());
    }
    validate(&config)?;
    Ok(config)
}

fn validate(config: &RunConfig) -> Result<()> {
    if !(config.theta > 0.0 && config.theta < 1.0) {
        return Err(CliError::Validation(format!(
            "theta must lie in (0,1), got {}",
            config.theta
        )));
    }
    if config.order > 1 {
        return Err(CliError::Validation(format!(
            "order must be 0 or 1, got {}",
            config.order
        )));
    }
    match config.problem.as_str() {
        "poisson" | "stokes" => {}
        other => {
            return Err(CliError::Validation(format!(
                "problem must be 'poisson' or 'stokes', got '{other}'"
            )))
        }
    }
    match config.family.as_str() {
        "rt" | "bdm" => {}
        other => {
            return Err(CliError::Validation(format!(
                "family must be 'rt' or 'bdm', got '{other}'"
            )))
        }
    }
    match config.source.as_str() {
        "manufactured" | "constant" | "zero" | "linear_x" => {}
        other => {
            return Err(CliError::Validation(format!(
                "source must be one of manufactured|constant|zero|linear_x, got '{other}'"
            )))
        }
    }
    match config.error.as_str() {
        "auto" | "exact" | "reference" | "none" => {}
        other => {
            return Err(CliError::Validation(format!(
                "error must be one of auto|exact|reference|none, got '{other}'"
            )))
        }
    }
    if config.subdivisions == 0 {
        return Err(CliError::Validation(
            "subdivisions must be at least 1".into(),
        ));
    }
    if config.source == "manufactured" && config.domain != "unit_square" {
        return Err(CliError::Validation(
            "the manufactured source is defined on the unit square; choose source \
             constant|zero|linear_x for other domains"
                .into(),
        ));
    }
    Ok(())
}

/// Materialise the validated configuration into an adaptive-run setup.
pub fn build_afem_config(config: &RunConfig) -> Result<AfemConfig> {
    let kind = match config.problem.as_str() {
        "poisson" => ProblemKind::Poisson,
        _ => ProblemKind::Stokes,
    };
    let family = match config.family.as_str() {
        "rt" => ElementFamily::rt(config.order),
        _ => ElementFamily::bdm(config.order),
    }
    .map_err(CliError::Runtime)?;
    let (source, exact) = match (config.source.as_str(), kind) {
        ("manufactured", ProblemKind::Poisson) => {
            let (f, e) = manufactured_poisson();
            (f, Some(e))
        }
        ("manufactured", ProblemKind::Stokes) => {
            let (f, e) = manufactured_stokes();
            (f, Some(e))
        }
        ("constant", ProblemKind::Poisson) => (SourceTerm::constant_scalar(1.0), None),
        ("constant", ProblemKind::Stokes) => (
            SourceTerm::vector("constant(1,1)", |_, _| [1.0, 1.0]),
            None,
        ),
        ("linear_x", ProblemKind::Poisson) => (SourceTerm::scalar("linear_x", |x, _| x), None),
        ("linear_x", ProblemKind::Stokes) => (
            SourceTerm::vector("linear_x", |x, _| [x, 0.0]),
            None,
        ),
        (_, kind) => (SourceTerm::zero(kind), None),
    };
    let mut problem = ProblemSpec::new(kind, family, source).map_err(CliError::Runtime)?;
    if let Some(e) = exact {
        problem = problem.with_exact(e);
    }
    let domain = match config.domain.as_str() {
        "unit_square" => DomainSpec::UnitSquare {
            subdivisions: config.subdivisions,
        },
        "lshape" => DomainSpec::LShape {
            subdivisions: config.subdivisions,
        },
        path => DomainSpec::File { path: path.into() },
    };
    let error_mode = match config.error.as_str() {
        "exact" => ErrorMode::Exact,
        "reference" => ErrorMode::Reference,
        "none" => ErrorMode::None,
        _ => {
            if problem.exact.is_some() {
                ErrorMode::Exact
            } else {
                ErrorMode::Reference
            }
        }
    };
    Ok(AfemConfig {
        problem,
        domain,
        theta: config.theta,
        stop: StopRule {
            max_dofs: config.max_dofs,
            tol_total: config.tol,
            max_iters: config.max_iters,
        },
        error_mode,
    })
}

/// Least-squares fit of log(value) against log(N).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual: f64,
    pub points_used: usize,
}

/// Fit a power law value ≈ C·N^slope through ≥ 3 positive points.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(CliError::Validation(format!(
            "rate fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|&(n, v)| n <= 0.0 || v <= 0.0) {
        return Err(CliError::Validation(
            "rate fit needs strictly positive coordinates".into(),
        ));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(n, v)| (n.ln(), v.ln())).collect();
    let n = logs.len() as f64;
    let sx: f64 = logs.iter().map(|p| p.0).sum();
    let sy: f64 = logs.iter().map(|p| p.1).sum();
    let sxx: f64 = logs.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = logs.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-30 {
        return Err(CliError::Validation(
            "rate fit points have no spread in N".into(),
        ));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let residual = logs
        .iter()
        .map(|&(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum::<f64>()
        .sqrt();
    Ok(RateFit {
        slope,
        intercept,
        residual,
        points_used: points.len(),
    })
}

/// Fit the last max(3, ⌈half⌉) history points to avoid preasymptotic
/// pollution.
pub fn fit_history_tail(points: &[(f64, f64)]) -> Result<RateFit> {
    let keep = (points.len().div_ceil(2)).max(3).min(points.len());
    fit_rate(&points[points.len() - keep..])
}

#[derive(Serialize)]
struct HistoryJson<'a> {
    config: &'a RunConfig,
    records: Vec<RecordJson>,
}

#[derive(Serialize, Deserialize)]
struct RecordJson {
    k: usize,
    ntri: usize,
    ndof: usize,
    eta2: f64,
    osc2: f64,
    err_energy: Option<f64>,
    nmarked: usize,
    seconds: f64,
}

#[derive(Serialize)]
struct RatesJson<'a> {
    config: &'a RunConfig,
    fits: Vec<NamedFit>,
}

#[derive(Serialize, Deserialize)]
pub struct NamedFit {
    pub y: String,
    pub x: String,
    pub slope: f64,
    pub intercept: f64,
    pub residual: f64,
    pub points_used: usize,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    config: &'a RunConfig,
    report: &'a ConstantsReport,
}

/// Outcome of `run_experiment`: which files were written.
pub struct ExperimentOutput {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
}

/// Execute a subcommand and persist its outputs under the configured
/// output directory.
pub fn run_experiment(subcommand: &str, config: &RunConfig) -> Result<ExperimentOutput> {
    let out_dir = PathBuf::from(config.out.clone().unwrap_or_else(|| "amfem-out".into()));
    fs::create_dir_all(&out_dir)?;
    let mut files = Vec::new();

    match subcommand {
        "run" | "uniform" => {
            let afem_config = build_afem_config(config)?;
            let history = if subcommand == "run" {
                afem_run(&afem_config)?
            } else {
                uniform_run(&afem_config)?
            };
            files.extend(write_history(&out_dir, config, &history)?);
        }
        "rates" => {
            let history_path = out_dir.join("history.csv");
            let text = fs::read_to_string(&history_path).map_err(|e| {
                CliError::Validation(format!(
                    "rates needs {} from a previous run: {e}",
                    history_path.display()
                ))
            })?;
            let records = parse_history_csv(&text)?;
            let fits = standard_fits(&records)?;
            let path = out_dir.join("rates.json");
            fs::write(
                &path,
                serde_json::to_string_pretty(&RatesJson { config, fits })
                    .expect("serializable"),
            )?;
            files.push(path);
        }
        "verify" => {
            let report = run_verification(config)?;
            let path = out_dir.join("report.json");
            fs::write(
                &path,
                serde_json::to_string_pretty(&ReportJson {
                    config,
                    report: &report,
                })
                .expect("serializable"),
            )?;
            files.push(path);
            if !report.all_passed() {
                let failed: Vec<&str> = report
                    .checks
                    .iter()
                    .filter(|c| !c.pass)
                    .map(|c| c.name.as_str())
                    .collect();
                return Err(CliError::CheckFailure(format!(
                    "checks failed: {} (see {})",
                    failed.join(", "),
                    out_dir.join("report.json").display()
                )));
            }
        }
        other => {
            return Err(CliError::Validation(format!(
                "unknown subcommand '{other}'"
            )))
        }
    }
    Ok(ExperimentOutput { out_dir, files })
}

fn write_history(
    out_dir: &Path,
    config: &RunConfig,
    history: &AfemHistory,
) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let csv_path = out_dir.join("history.csv");
    fs::write(&csv_path, history.to_csv())?;
    files.push(csv_path);

    let records: Vec<RecordJson> = history
        .records
        .iter()
        .map(|r| RecordJson {
            k: r.k,
            ntri: r.ntri,
            ndof: r.ndof,
            eta2: r.eta2,
            osc2: r.osc2,
            err_energy: r.err_energy,
            nmarked: r.nmarked,
            seconds: r.seconds,
        })
        .collect();
    let json_path = out_dir.join("history.json");
    fs::write(
        &json_path,
        serde_json::to_string_pretty(&HistoryJson { config, records }).expect("serializable"),
    )?;
    files.push(json_path);

    for (k, ind) in history.indicators.iter().enumerate() {
        let path = out_dir.join(format!("indicators_{k}.csv"));
        fs::write(&path, indicators_to_csv(ind))?;
        files.push(path);
    }
    Ok(files)
}

fn parse_history_csv(text: &str) -> Result<Vec<RecordJson>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Validation("empty history file".into()))?;
    if header != "k,ntri,ndof,eta2,osc2,err_energy,nmarked,seconds" {
        return Err(CliError::Validation(format!(
            "unexpected history header: {header}"
        )));
    }
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 8 {
            return Err(CliError::Validation(format!(
                "line {}: expected 8 columns",
                lineno + 2
            )));
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|e| CliError::Validation(format!("line {}: {e}", lineno + 2)))
        };
        let parse_u = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|e| CliError::Validation(format!("line {}: {e}", lineno + 2)))
        };
        out.push(RecordJson {
            k: parse_u(cols[0])?,
            ntri: parse_u(cols[1])?,
            ndof: parse_u(cols[2])?,
            eta2: parse_f(cols[3])?,
            osc2: parse_f(cols[4])?,
            err_energy: if cols[5].is_empty() {
                None
            } else {
                Some(parse_f(cols[5])?)
            },
            nmarked: parse_u(cols[6])?,
            seconds: parse_f(cols[7])?,
        });
    }
    Ok(out)
}

fn standard_fits(records: &[RecordJson]) -> Result<Vec<NamedFit>> {
    let mut fits = Vec::new();
    let mut add = |y: &str, x: &str, pts: Vec<(f64, f64)>| -> Result<()> {
        if pts.len() >= 3 && pts.iter().all(|&(a, b)| a > 0.0 && b > 0.0) {
            let fit = fit_history_tail(&pts)?;
            fits.push(NamedFit {
                y: y.into(),
                x: x.into(),
                slope: fit.slope,
                intercept: fit.intercept,
                residual: fit.residual,
                points_used: fit.points_used,
            });
        }
        Ok(())
    };
    let total = |r: &RecordJson| r.eta2 + r.osc2;
    add(
        "eta2_plus_osc2",
        "ntri",
        records.iter().map(|r| (r.ntri as f64, total(r))).collect(),
    )?;
    add(
        "eta2_plus_osc2",
        "ndof",
        records.iter().map(|r| (r.ndof as f64, total(r))).collect(),
    )?;
    add(
        "err_energy",
        "ndof",
        records
            .iter()
            .filter_map(|r| r.err_energy.map(|e| (r.ndof as f64, e)))
            .collect(),
    )?;
    if fits.is_empty() {
        return Err(CliError::Validation(
            "history contains no positive series to fit".into(),
        ));
    }
    Ok(fits)
}

/// Standard verification battery: inf-sup ladder, Galerkin orthogonality on
/// a small mesh, and reliability/quasi-orthogonality constants across
/// nested uniform pair levels.
pub fn run_verification(config: &RunConfig) -> Result<ConstantsReport> {
    use amfem::mesh::MarkSet;
    use amfem::spaces::DofMap;
    use amfem::system::assemble_and_solve;
    use amfem::verify as vf;

    let afem_config = build_afem_config(config)?;
    let problem = &afem_config.problem;
    let mut report = ConstantsReport::default();

    // inf-sup over 3 levels past the preasymptotic range
    {
        let mut mesh = afem_config.domain.build().map_err(CliError::Runtime)?;
        for _ in 0..2 {
            mesh = mesh.refine(&MarkSet::all(&mesh)).map_err(CliError::Runtime)?;
        }
        let mut betas = Vec::new();
        let mut sizes = Vec::new();
        for _ in 0..3 {
            let dm = DofMap::build(&mesh, problem.family, problem.kind)
                .map_err(CliError::Runtime)?;
            if dm.n_sigma + dm.n_u > 2000 {
                break;
            }
            sizes.push(mesh.num_triangles());
            betas.push(vf::estimate_infsup(&mesh, &dm, problem).map_err(CliError::Runtime)?);
            mesh = mesh.refine(&MarkSet::all(&mesh)).map_err(CliError::Runtime)?;
        }
        if betas.len() >= 2 {
            let max = betas.iter().cloned().fold(f64::MIN, f64::max);
            let min = betas.iter().cloned().fold(f64::MAX, f64::min);
            let pass = min > 0.0 && (max - min) / max < 0.2;
            report.infsup = Some(min);
            report.push(
                "infsup_stability",
                pass,
                Some(min),
                format!("beta per level: {betas:?}"),
                sizes,
            );
        }
    }

    // Galerkin orthogonality on a small mesh
    {
        let mut mesh = afem_config.domain.build().map_err(CliError::Runtime)?;
        loop {
            let dm = DofMap::build(&mesh, problem.family, problem.kind)
                .map_err(CliError::Runtime)?;
            if dm.n_sigma > 350 {
                break;
            }
            let next = mesh.refine(&MarkSet::all(&mesh)).map_err(CliError::Runtime)?;
            let dm_next = DofMap::build(&next, problem.family, problem.kind)
                .map_err(CliError::Runtime)?;
            if dm_next.n_sigma > 500 {
                break;
            }
            mesh = next;
        }
        let dm = DofMap::build(&mesh, problem.family, problem.kind).map_err(CliError::Runtime)?;
        let (_, field) =
            assemble_and_solve(&mesh, &dm, problem).map_err(CliError::Runtime)?;
        let v = vf::check_orthogonality(&mesh, &dm, &field, problem).map_err(CliError::Runtime)?;
        report.push(
            "galerkin_orthogonality",
            v <= 1e-9,
            Some(v),
            format!("max |(A sigma_h, tau_h)| over kernel basis = {v:.3e}"),
            vec![mesh.num_triangles()],
        );
    }

    // nested pairs spaced by two uniform refinements (h → h/2 per level,
    // self-similar meshes, so the empirical ratios are comparable)
    {
        let mut meshes = vec![afem_config.domain.build().map_err(CliError::Runtime)?];
        for _ in 0..config.pair_levels {
            let last = meshes.last().unwrap();
            let once = last.refine(&MarkSet::all(last)).map_err(CliError::Runtime)?;
            meshes.push(once.refine(&MarkSet::all(&once)).map_err(CliError::Runtime)?);
        }
        let mut drel = Vec::new();
        let mut r1s = Vec::new();
        let mut sizes = Vec::new();
        let mut qo_pass = true;
        for pair in meshes.windows(2) {
            sizes.push(pair[0].num_triangles());
            drel.push(
                vf::check_discrete_reliability(&pair[0], &pair[1], problem)
                    .map_err(CliError::Runtime)?,
            );
            let qo = vf::check_quasi_orthogonality(&pair[0], &pair[1], problem)
                .map_err(CliError::Runtime)?;
            qo_pass &= qo.pass;
            r1s.push(qo.r1);
        }
        let band_ok = |vals: &[f64]| {
            let pos: Vec<f64> = vals.iter().cloned().filter(|v| *v > 0.0).collect();
            if pos.is_empty() {
                return true;
            }
            let max = pos.iter().cloned().fold(f64::MIN, f64::max);
            let min = pos.iter().cloned().fold(f64::MAX, f64::min);
            max / min < 10.0
        };
        let drel_max = drel.iter().cloned().fold(0.0f64, f64::max);
        report.c_drel = Some(drel_max);
        report.push(
            "discrete_reliability_stability",
            band_ok(&drel) && drel.iter().all(|v| v.is_finite()),
            Some(drel_max),
            format!("ratios per pair level: {drel:?}"),
            sizes.clone(),
        );
        let r1_max = r1s.iter().cloned().fold(0.0f64, f64::max);
        report.c_0 = Some(r1_max * r1_max);
        report.push(
            "quasi_orthogonality_stability",
            qo_pass && band_ok(&r1s) && r1s.iter().all(|v| v.is_finite()),
            Some(r1_max),
            format!("sqrt(C0) estimates per pair level: {r1s:?}"),
            sizes,
        );
    }

    // efficiency/reliability band on an adaptive run with error column
    if problem.exact.is_some() {
        let mut cfg = afem_config.clone();
        cfg.error_mode = ErrorMode::Exact;
        cfg.stop.max_dofs = cfg.stop.max_dofs.min(4000);
        let history = afem_run(&cfg)?;
        let (c_rel, c_eff) =
            vf::check_efficiency_reliability(&history).map_err(CliError::Runtime)?;
        report.c_rel = Some(c_rel);
        report.c_eff = Some(c_eff);
        let ratios: Vec<f64> = history
            .records
            .iter()
            .filter_map(|r| {
                r.err_energy
                    .map(|e| e * e / r.eta2.max(1e-300))
            })
            .collect();
        let max = ratios.iter().cloned().fold(f64::MIN, f64::max);
        let min = ratios.iter().cloned().fold(f64::MAX, f64::min);
        report.push(
            "efficiency_reliability_band",
            max / min < 10.0,
            Some(max / min),
            format!("err^2/eta^2 band [{min:.3e}, {max:.3e}] over {} levels", ratios.len()),
            history.records.iter().map(|r| r.ntri).collect(),
        );
    }

    Ok(report)
}
