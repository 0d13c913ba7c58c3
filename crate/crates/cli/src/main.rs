//! Command-line front end for the `logop` library.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use logop::analysis::{self, DEFAULT_SEED};
use logop::fourier_op::{self, PeriodicField, PeriodicGrid, QuadratureScheme};
use logop::galerkin::{self, build_mesh, DomainSpec};
use logop::green::{self, CubeGrid, GreenQuadrature};
use logop::report::{self, Cell, Format, Summary, Table};
use logop::{Error, Kernel, KernelSpec, Order};

const THREADS_ENV: &str = "LOGOP_THREADS";

#[derive(Parser, Debug)]
#[command(name = "logop", version, about = "Logarithmic Schrödinger operator toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Report path; the manifest is written beside it as `<path>.manifest.json`.
    /// Without it the report goes to stdout and the manifest to stderr.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = OutFormat::Csv)]
    format: OutFormat,
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum OutFormat {
    Csv,
    Json,
}

impl OutFormat {
    fn to_format(self) -> Format {
        match self {
            OutFormat::Csv => Format::Csv,
            OutFormat::Json => Format::Json,
        }
    }

    fn name(self) -> &'static str {
        match self {
            OutFormat::Csv => "csv",
            OutFormat::Json => "json",
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum TestFunction {
    Gaussian,
    Cosine,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Kernel J (or J_s with --s) at the given radii; columns r,J.
    #[command(allow_negative_numbers = true)]
    KernelEval {
        #[arg(long)]
        dim: usize,
        #[arg(long, value_delimiter = ',', required = true)]
        r: Vec<f64>,
        #[arg(long)]
        s: Option<f64>,
    },
    /// Applies the Fourier multiplier to a test function on a periodic grid.
    #[command(allow_negative_numbers = true)]
    OpApply {
        #[arg(long, default_value_t = 1)]
        dim: usize,
        /// Period L of the grid.
        #[arg(long, default_value_t = 40.0)]
        extent: f64,
        /// Points per axis.
        #[arg(long, default_value_t = 256)]
        points: usize,
        #[arg(long, value_enum, default_value_t = TestFunction::Gaussian)]
        function: TestFunction,
        #[arg(long)]
        s: Option<f64>,
    },
    /// Heat kernel q_t at the given radii; columns r,q.
    #[command(allow_negative_numbers = true)]
    HeatKernel {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        t: f64,
        #[arg(long, value_delimiter = ',', required = true)]
        r: Vec<f64>,
    },
    /// Green function profile; columns r,G,near_model,far_model.
    #[command(allow_negative_numbers = true)]
    Green {
        #[arg(long, default_value_t = 3)]
        dim: usize,
        #[arg(long, value_delimiter = ',', required = true)]
        r: Vec<f64>,
    },
    /// Free-space Poisson problem with a smooth bump source; columns x,u along the first axis.
    #[command(allow_negative_numbers = true)]
    Poisson {
        /// Half-width L of the cube [-L, L]^3.
        #[arg(long, default_value_t = 4.0)]
        extent: f64,
        /// Odd number of points per axis.
        #[arg(long, default_value_t = 65)]
        points: usize,
        /// Radius of the bump source.
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        /// Also apply the operator to the solution at five interior points.
        #[arg(long)]
        check: bool,
    },
    /// Dirichlet eigenpairs on a domain; columns k,lambda,residual.
    #[command(allow_negative_numbers = true)]
    Eigs {
        #[arg(long, default_value = "interval")]
        domain: String,
        #[arg(long)]
        h: f64,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Fractional order (s < 1/2) instead of the logarithmic one.
        #[arg(long)]
        s: Option<f64>,
        /// Writes the stiffness matrix as row,col,value.
        #[arg(long)]
        matrix_out: Option<PathBuf>,
        /// Writes the first eigenvector as cell,x0..,value.
        #[arg(long)]
        vector_out: Option<PathBuf>,
    },
    /// First eigenvalue on a domain against the equal-cell-count ball.
    #[command(allow_negative_numbers = true)]
    FaberKrahn {
        #[arg(long, default_value = "square")]
        domain: String,
        #[arg(long)]
        h: f64,
    },
    /// Small-order sweep; columns s,lambda,quotient,reference,deviation.
    #[command(allow_negative_numbers = true)]
    SmallOrder {
        #[arg(long, default_value = "interval")]
        domain: String,
        #[arg(long)]
        h: f64,
        #[arg(long, value_delimiter = ',', required = true)]
        s: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        k: usize,
    },
    /// Runs the quick invariant suite; columns name,pass,detail.
    Selfcheck,
}

/// Failure with its exit status.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(field: &str, reason: impl std::fmt::Display) -> Self {
        Self {
            code: 2,
            message: format!("invalid parameter `{field}`: {reason}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidParameter { .. }
            | Error::UnsupportedDimension { .. }
            | Error::Domain(_)
            | Error::Singularity(_)
            | Error::EmptyMesh => 2,
            Error::Overflow(_) | Error::Accuracy { .. } | Error::Numeric { .. } | Error::Io { .. } => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

/// Result of one command: the report table and its summary.
struct Outcome {
    table: Table,
    summary: Summary,
}

fn parse_numbers(field: &str, text: &str) -> Result<Vec<f64>, Failure> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Failure::usage(field, format!("`{t}` is not a number")))
        })
        .collect()
}

/// `interval[:a,b]`, `square[:side]`, `rectangle[:a,b]`, `disc[:r]`, `ball[:r]`, `raster:path`.
fn parse_domain(text: &str) -> Result<DomainSpec, Failure> {
    let (name, args) = text.split_once(':').unwrap_or((text, ""));
    let wrap = |r: logop::Result<DomainSpec>| r.map_err(|e| Failure::usage("domain", e));
    if name == "raster" {
        if args.is_empty() {
            return Err(Failure::usage("domain", "raster needs a file path, e.g. raster:shape.txt"));
        }
        let body = std::fs::read_to_string(args).map_err(|e| Failure::usage("domain", format!("{args}: {e}")))?;
        return wrap(DomainSpec::from_raster(&body));
    }
    let nums = parse_numbers("domain", args)?;
    let need = |defaults: &[f64]| -> Result<Vec<f64>, Failure> {
        match nums.len() {
            0 => Ok(defaults.to_vec()),
            n if n == defaults.len() => Ok(nums.clone()),
            n => Err(Failure::usage(
                "domain",
                format!("{name} takes {} parameter(s), got {n}", defaults.len()),
            )),
        }
    };
    match name {
        "interval" => {
            let p = need(&[-1.0, 1.0])?;
            wrap(DomainSpec::interval(p[0], p[1]))
        }
        "square" => wrap(DomainSpec::square(need(&[1.0])?[0])),
        "rectangle" => {
            let p = need(&[2.0, 0.5])?;
            wrap(DomainSpec::rectangle(p[0], p[1]))
        }
        "disc" => wrap(DomainSpec::disc(need(&[1.0])?[0])),
        "ball" => wrap(DomainSpec::ball(need(&[1.0])?[0])),
        other => Err(Failure::usage(
            "domain",
            format!("unknown shape `{other}` (interval, square, rectangle, disc, ball, raster)"),
        )),
    }
}

fn kernel_spec(dim: usize, s: Option<f64>) -> Result<KernelSpec, Failure> {
    Ok(match s {
        None => KernelSpec::log(dim)?,
        Some(s) => KernelSpec::frac(dim, s)?,
    })
}

fn order_name(spec: &KernelSpec) -> Value {
    match spec.order() {
        Order::Log => Value::from("log"),
        Order::Frac(s) => json!({ "frac": s }),
    }
}

fn floats(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|x| json!(x)).collect())
}

fn kernel_eval(dim: usize, radii: &[f64], s: Option<f64>) -> Result<Outcome, Failure> {
    let spec = kernel_spec(dim, s)?;
    let kernel = Kernel::new(spec);
    let mut table = Table::new(["r", "J"]);
    for &r in radii {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Failure::usage("r", format!("radius {r} must be positive and finite")));
        }
        table
            .push(vec![Cell::Float(r), Cell::Float(kernel.try_radial(r)?)])
            .map_err(Failure::from)?;
    }
    let summary = Summary::new("kernel-eval")
        .param("dim", dim)
        .param("order", order_name(&spec))
        .param("r", floats(radii));
    Ok(Outcome { table, summary })
}

fn op_apply(dim: usize, extent: f64, points: usize, function: TestFunction, s: Option<f64>) -> Result<Outcome, Failure> {
    let spec = kernel_spec(dim, s)?;
    let grid = PeriodicGrid::new(dim, extent, points)?;
    let field = match function {
        TestFunction::Gaussian => PeriodicField::from_fn(grid, |x| (-x.iter().map(|v| v * v).sum::<f64>()).exp())?,
        TestFunction::Cosine => {
            let xi = 2.0 * std::f64::consts::PI / extent;
            PeriodicField::from_fn(grid, move |x| (xi * x[0]).cos())?
        }
    };
    let applied = fourier_op::apply_symbol(&field, &spec)?;
    let mut summary = Summary::new("op-apply")
        .param("dim", dim)
        .param("order", order_name(&spec))
        .param("extent", extent)
        .param("points", points)
        .param("function", format!("{function:?}").to_lowercase());
    summary.metric("max_abs", applied.max_abs());
    Ok(Outcome {
        table: applied.to_table(),
        summary,
    })
}

fn heat_kernel(dim: usize, t: f64, radii: &[f64]) -> Result<Outcome, Failure> {
    let mut table = Table::new(["r", "q"]);
    for &r in radii {
        if !(r >= 0.0) || !r.is_finite() {
            return Err(Failure::usage("r", format!("radius {r} must be nonnegative and finite")));
        }
        let mut x = vec![0.0; dim.max(1)];
        x[0] = r;
        table.push(vec![Cell::Float(r), Cell::Float(green::heat_kernel(dim, t, &x)?)])?;
    }
    let mut summary = Summary::new("heat-kernel")
        .param("dim", dim)
        .param("t", t)
        .param("r", floats(radii));
    summary.metric("mass", green::heat_kernel_mass(dim, t)?);
    Ok(Outcome { table, summary })
}

fn green_profile(dim: usize, radii: &[f64]) -> Result<Outcome, Failure> {
    if let Some(r) = radii.iter().find(|r| !(**r > 0.0) || !r.is_finite()) {
        return Err(Failure::usage("r", format!("radius {r} must be positive and finite")));
    }
    let table = green::green_profile(dim, radii, &GreenQuadrature::default())?;
    let summary = Summary::new("green").param("dim", dim).param("r", floats(radii));
    Ok(Outcome { table, summary })
}

fn poisson(extent: f64, points: usize, radius: f64, check: bool) -> Result<Outcome, Failure> {
    if !(radius > 0.0) {
        return Err(Failure::usage("radius", "must be positive"));
    }
    let bump = move |x: &[f64]| {
        let r2: f64 = x.iter().map(|v| v * v).sum::<f64>() / (radius * radius);
        if r2 < 1.0 {
            (1.0 - 1.0 / (1.0 - r2)).exp()
        } else {
            0.0
        }
    };
    let grid = CubeGrid::new(extent, points)?;
    let f = grid.sample(bump);
    let sol = green::poisson_free_space(&grid, &f, &GreenQuadrature::default())?;
    let mid = points / 2;
    let mut table = Table::new(["x", "u"]);
    for i in 0..points {
        table.push(vec![
            Cell::Float(grid.coord(i)),
            Cell::Float(sol.values()[grid.index(i, mid, mid)]),
        ])?;
    }
    let positive = sol.values().iter().all(|v| *v > 0.0);
    let mut summary = Summary::new("poisson")
        .param("extent", extent)
        .param("points", points)
        .param("radius", radius)
        .param("check", check);
    summary.metrics.insert("decay".into(), sol.decay.to_json());
    summary.metric("min_u", sol.values().iter().copied().fold(f64::INFINITY, f64::min));
    summary.pass = sol.decay.finite && positive;
    if check {
        let scheme = QuadratureScheme {
            inner_nodes: 10,
            outer_nodes: 8,
            angular_nodes: 12,
            radial_cutoff: 30.0,
            tolerance: 1e-3,
            ..Default::default()
        };
        let a = 0.3 * radius;
        let pts = [[0.0, 0.0, 0.0], [a, 0.0, 0.0], [0.0, -a, 0.5 * a], [a, a, 0.0], [-0.5 * a, 0.3 * a, -a]];
        let checks = green::operator_inverse_check(&sol, bump, &pts, &scheme)?;
        let worst = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
        summary.metric("inverse_max_rel_error", worst);
        summary.pass &= worst <= 1e-2;
    }
    Ok(Outcome { table, summary })
}

fn eigs(
    domain_text: &str,
    h: f64,
    k: usize,
    s: Option<f64>,
    matrix_out: Option<&Path>,
    vector_out: Option<&Path>,
    format: Format,
) -> Result<Outcome, Failure> {
    let domain = parse_domain(domain_text)?;
    let spec = kernel_spec(domain.dim(), s)?;
    let mesh = build_mesh(&domain, h)?;
    let a = galerkin::assemble_stiffness(&mesh, &spec)?;
    let pairs = galerkin::solve_eigs(&a, k)?;
    if let Some(p) = matrix_out {
        report::emit_report(&a.to_coordinate_table(), p, format)?;
    }
    if let Some(p) = vector_out {
        report::emit_report(&galerkin::eigenvector_table(&mesh, &pairs[0]), p, format)?;
    }
    let bound = galerkin::poincare_lower_bound(mesh.measure(), mesh.dim())?;
    let mut summary = Summary::new("eigs")
        .param("domain", domain_text)
        .param("h", h)
        .param("k", k)
        .param("order", order_name(&spec));
    summary.metrics.insert("cells".into(), Value::from(mesh.len()));
    summary.metric("poincare_lower_bound", bound);
    summary.metric("lambda_1", pairs[0].value);
    let sign_definite = pairs[0].vector.iter().all(|v| *v > 0.0);
    summary.pass = sign_definite && (s.is_some() || pairs[0].value >= bound);
    Ok(Outcome {
        table: galerkin::eigenpairs_table(&pairs),
        summary,
    })
}

fn faber_krahn(domain_text: &str, h: f64) -> Result<Outcome, Failure> {
    let domain = parse_domain(domain_text)?;
    let r = analysis::faber_krahn(&domain, h)?;
    let mut table = Table::new(["cells", "lambda_omega", "lambda_ball", "margin"]);
    table.push(vec![
        Cell::from(r.cells),
        Cell::Float(r.lambda_omega),
        Cell::Float(r.lambda_ball),
        Cell::Float(r.margin),
    ])?;
    let mut summary = Summary::new("faber-krahn").param("domain", domain_text).param("h", h);
    summary.metric("margin", r.margin);
    summary.pass = r.margin >= -1e-8;
    Ok(Outcome { table, summary })
}

fn small_order(domain_text: &str, h: f64, s: &[f64], k: usize) -> Result<Outcome, Failure> {
    let domain = parse_domain(domain_text)?;
    let rep = analysis::small_order_sweep(&domain, h, s, k)?;
    let mut summary = Summary::new("small-order")
        .param("domain", domain_text)
        .param("h", h)
        .param("s", floats(s))
        .param("k", k);
    summary
        .metrics
        .insert("eigenfunction_distance".into(), floats(&rep.distances));
    summary
        .metrics
        .insert("deviation_ratios".into(), floats(&rep.deviation_ratios()));
    summary.pass = rep.rows.iter().all(|r| r.lambda_ks > 1.0 && r.quotient.is_finite())
        && rep.rows.windows(2).all(|w| w[1].deviation < w[0].deviation);
    Ok(Outcome {
        table: rep.to_table(),
        summary,
    })
}

fn selfcheck(seed: u64) -> Outcome {
    let outcomes = analysis::selfcheck(seed);
    let mut table = Table::new(["name", "pass", "detail"]);
    for o in &outcomes {
        table
            .push(vec![Cell::from(o.name.as_str()), Cell::from(o.pass), Cell::from(o.detail.as_str())])
            .expect("three columns");
    }
    Outcome {
        table,
        summary: analysis::selfcheck_summary(&outcomes, seed),
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(text) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = text
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Failure::usage(THREADS_ENV, format!("`{text}` is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::usage(THREADS_ENV, e))
}

fn check_writable(field: &str, path: &Path) -> Result<(), Failure> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if !parent.is_dir() {
        return Err(Failure::usage(
            field,
            format!("directory {} does not exist", parent.display()),
        ));
    }
    Ok(())
}

fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn run(cli: Cli) -> Result<bool, Failure> {
    configure_threads()?;
    let common = cli.common;
    let format = common.format.to_format();
    if let Some(p) = &common.output {
        check_writable("output", p)?;
    }
    let outcome = match &cli.command {
        Command::KernelEval { dim, r, s } => kernel_eval(*dim, r, *s)?,
        Command::OpApply {
            dim,
            extent,
            points,
            function,
            s,
        } => op_apply(*dim, *extent, *points, *function, *s)?,
        Command::HeatKernel { dim, t, r } => heat_kernel(*dim, *t, r)?,
        Command::Green { dim, r } => green_profile(*dim, r)?,
        Command::Poisson {
            extent,
            points,
            radius,
            check,
        } => poisson(*extent, *points, *radius, *check)?,
        Command::Eigs {
            domain,
            h,
            k,
            s,
            matrix_out,
            vector_out,
        } => {
            for (field, p) in [("matrix-out", matrix_out), ("vector-out", vector_out)] {
                if let Some(p) = p {
                    check_writable(field, p)?;
                }
            }
            eigs(domain, *h, *k, *s, matrix_out.as_deref(), vector_out.as_deref(), format)?
        }
        Command::FaberKrahn { domain, h } => faber_krahn(domain, *h)?,
        Command::SmallOrder { domain, h, s, k } => small_order(domain, *h, s, *k)?,
        Command::Selfcheck => selfcheck(common.seed),
    };
    let Outcome { table, mut summary } = outcome;
    let mut params = Map::new();
    params.insert("version".into(), Value::from(env!("CARGO_PKG_VERSION")));
    params.insert("format".into(), Value::from(common.format.name()));
    params.insert("seed".into(), Value::from(common.seed));
    params.insert(
        "output".into(),
        common.output.as_ref().map_or(Value::Null, |p| Value::from(p.display().to_string())),
    );
    params.extend(std::mem::take(&mut summary.params));
    summary.params = params;
    let manifest = summary.to_json();
    match &common.output {
        Some(path) => {
            report::emit_report(&table, path, format)?;
            report::write_atomic(&manifest_path(path), manifest.as_bytes())?;
        }
        None => {
            print!("{}", table.render(format));
            eprint!("{manifest}");
        }
    }
    Ok(summary.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("logop: check failed");
            ExitCode::from(1)
        }
        Err(f) => {
            eprintln!("logop: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
