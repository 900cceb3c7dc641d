//! `jointmarg` command-line front end.
//!
//! Human-readable summaries go to standard output, tables to the file given
//! by `--out` as CSV. Exit codes: 0 success, 1 usage error, 2 input or parse
//! error, 3 solver or algorithm failure.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use jointmarg::algo::{self, AlgoConfig, AlgoTrace};
use jointmarg::bench::{self, BoxMap, MaxcutBatch, ProblemFile};
use jointmarg::bounds;
use jointmarg::moments::Interval;
use jointmarg::Error;
use nalgebra::DMatrix;

#[derive(Parser, Debug)]
#[command(name = "jointmarg", version, about = "Joint+marginal relaxations for polynomial optimization")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run ALGO 1 or ALGO 2 on a problem file.
    Solve(SolveArgs),
    /// Tabulate value-polynomial errors against a brute-force oracle.
    ValueFunction(ValueFunctionArgs),
    /// Max-gap rounding on random or given MAXCUT instances.
    Maxcut(MaxcutArgs),
    /// Interval containing the projection of the feasible set on one axis.
    Project(ProjectArgs),
    /// Parse a problem file and report its structure.
    Check(CheckArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum AlgoName {
    Jm1,
    Jm2,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[arg(long)]
    file: PathBuf,
    #[arg(long, value_enum)]
    algo: AlgoName,
    #[arg(long, default_value_t = 1)]
    order: usize,
    /// Polish the result with local optimization.
    #[arg(long)]
    refine: bool,
    /// Solve on the unit box and report in original coordinates.
    #[arg(long)]
    rescale: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ValueFunctionArgs {
    #[arg(long)]
    file: PathBuf,
    /// 1-based coordinate.
    #[arg(long)]
    coord: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    orders: Vec<usize>,
    /// Quadrature nodes.
    #[arg(long, default_value_t = 101)]
    grid: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MaxcutArgs {
    #[arg(long, conflicts_with = "file", required_unless_present = "file")]
    nodes: Option<usize>,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0.5)]
    density: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Matrix file: `n` rows of `n` numbers, `#` comments.
    #[arg(long)]
    file: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    order: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ProjectArgs {
    #[arg(long)]
    file: PathBuf,
    /// 1-based coordinate.
    #[arg(long)]
    coord: usize,
    #[arg(long)]
    order: Option<usize>,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[arg(long)]
    file: PathBuf,
}

struct Failure {
    code: u8,
    msg: String,
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: 1, msg: msg.into() }
}

fn input(msg: impl Into<String>) -> Failure {
    Failure { code: 2, msg: msg.into() }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Parse { .. } => 2,
            _ => 3,
        };
        Failure {
            code,
            msg: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| input(format!("cannot read {}: {e}", path.display())))
}

fn load(path: &Path) -> CliResult<ProblemFile> {
    let text = read(path)?;
    bench::parse_problem(&text).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure {
            code: 3,
            msg: format!("cannot write {}: {e}", path.display()),
        })
}

fn coord_index(coord: usize, n: usize) -> CliResult<usize> {
    if coord == 0 || coord > n {
        return Err(usage(format!("--coord must be in 1..={n}")));
    }
    Ok(coord - 1)
}

fn check_order(order: usize) -> CliResult<()> {
    if order == 0 {
        return Err(usage("--order must be at least 1"));
    }
    Ok(())
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(";")
}

fn rel_error(value: f64, optimum: f64) -> f64 {
    (value - optimum).abs() / optimum.abs().max(1e-12)
}

/// Rewrites a trace computed on the unit box in original coordinates.
fn map_back(trace: &mut AlgoTrace, map: &BoxMap, pf: &ProblemFile) -> CliResult<()> {
    for s in &mut trace.steps {
        let (c, r) = (map.center[s.coord], map.radius[s.coord]);
        s.interval = Interval::new(c + r * s.interval.lo, c + r * s.interval.hi);
        s.value = c + r * s.value;
    }
    trace.x = map.to_original(&trace.x);
    trace.objective = pf.problem.objective(&trace.x)?;
    trace.residual = pf.problem.feasibility_residual(&trace.x)?;
    if let Some(r) = &mut trace.refined {
        r.x = map.to_original(&r.x);
        r.value = pf.problem.objective(&r.x)?;
        r.residual = pf.problem.feasibility_residual(&r.x)?;
    }
    Ok(())
}

fn solve(args: &SolveArgs) -> CliResult<()> {
    check_order(args.order)?;
    let pf = load(&args.file)?;
    let cfg = AlgoConfig {
        refine: args.refine,
        ..AlgoConfig::with_order(args.order)
    };
    let (prob, map) = if args.rescale {
        let (p, m) = bench::rescale_to_unit_box(&pf.problem).map_err(|e| usage(format!("--rescale: {e}")))?;
        (p, Some(m))
    } else {
        (pf.problem.clone(), None)
    };
    let mut trace = match args.algo {
        AlgoName::Jm1 => {
            let ivs = algo::global_intervals(&prob, args.order.max(prob.min_order()))?;
            algo::algo1(&prob, &ivs, &cfg)?
        }
        AlgoName::Jm2 => algo::algo2(&prob, &cfg)?,
    };
    if let Some(m) = &map {
        map_back(&mut trace, m, &pf)?;
        println!("rescaled center={} radius={}", fmt_vec(&m.center), fmt_vec(&m.radius));
    }
    println!("problem {}", pf.name);
    print!("{}", trace.to_report());
    if let Some(opt) = pf.optimum {
        let mut line = format!("rel_error x_tilde={:.2}%", 100.0 * rel_error(trace.objective, opt));
        if let Some(r) = &trace.refined {
            line.push_str(&format!(" x_hat={:.2}%", 100.0 * rel_error(r.value, opt)));
        }
        println!("{line}");
    }
    if let Some(out) = &args.out {
        let w = create(out)?;
        bench::write_trace_csv(&trace, w)?;
    }
    Ok(())
}

fn value_function(args: &ValueFunctionArgs) -> CliResult<()> {
    if args.orders.is_empty() || args.orders.contains(&0) {
        return Err(usage("--orders must list positive orders"));
    }
    if args.grid < 2 {
        return Err(usage("--grid must be at least 2"));
    }
    let pf = load(&args.file)?;
    let k = coord_index(args.coord, pf.problem.n)?;
    let top = args.orders.iter().copied().max().unwrap_or(1);
    let iv = bounds::projection(&pf.problem, k, top)?;
    let cfg = AlgoConfig::default();
    let rep = bench::report_value_function(&pf.problem, k, iv, &args.orders, args.grid, &cfg.solver)?;
    println!(
        "value function x{} on [{:?},{:?}] mean={:?}",
        args.coord, iv.lo, iv.hi, rep.oracle_mean
    );
    println!("order status rho rho_star l1_error l1_error_running_max max_violation");
    for r in &rep.rows {
        println!(
            "{} {} {:?} {:?} {:?} {:?} {:?}",
            r.order, r.status, r.rho, r.rho_star, r.l1_error, r.l1_error_running_max, r.max_violation
        );
    }
    if let Some(out) = &args.out {
        bench::write_value_function_csv(&rep, create(out)?)?;
    }
    Ok(())
}

fn parse_matrix(text: &str) -> CliResult<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let row = content
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| input(format!("line {}: invalid number '{t}'", i + 1)))
            })
            .collect::<CliResult<Vec<_>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if n < 2 || rows.iter().any(|r| r.len() != n) {
        return Err(input("matrix file must hold n >= 2 rows of n numbers"));
    }
    let q = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    for i in 0..n {
        if q[(i, i)] != 0.0 {
            return Err(input("matrix diagonal must be zero"));
        }
        for j in 0..i {
            if q[(i, j)] != q[(j, i)] {
                return Err(input("matrix must be symmetric"));
            }
        }
    }
    Ok(q)
}

fn print_batch(batch: &MaxcutBatch) {
    println!("index seed n edges shor_bound maxgap_cost optimum rel_gap_shor rel_gap_opt");
    for r in &batch.rows {
        println!(
            "{} {} {} {} {:?} {:?} {} {:?} {}",
            r.index,
            r.seed,
            r.n,
            r.edges,
            r.shor_bound,
            r.maxgap_cost,
            r.optimum.map_or("-".into(), |v| format!("{v:?}")),
            r.rel_gap_shor(),
            r.rel_gap_opt().map_or("-".into(), |v| format!("{v:?}"))
        );
    }
    let mean_opt = batch
        .mean_rel_gap_opt()
        .map_or("-".into(), |v| format!("{:.2}%", 100.0 * v));
    println!(
        "mean rel_gap_shor={:.2}% rel_gap_opt={}",
        100.0 * batch.mean_rel_gap_shor(),
        mean_opt
    );
}

fn maxcut(args: &MaxcutArgs) -> CliResult<()> {
    check_order(args.order)?;
    let cfg = AlgoConfig::with_order(args.order);
    let batch = if let Some(path) = &args.file {
        let q = parse_matrix(&read(path)?)?;
        let n = q.nrows();
        let inst = bench::MaxcutInstance { n, q, seed: 0 };
        let trace = algo::maxcut_maxgap(&inst.q, &cfg)?;
        print!("{}", trace.to_report());
        MaxcutBatch {
            rows: vec![bench::run_maxcut_instance(&inst, 0, &cfg)?],
        }
    } else {
        let n = args.nodes.expect("clap enforces --nodes or --file");
        if n < 2 {
            return Err(usage("--nodes must be at least 2"));
        }
        if !(args.density > 0.0 && args.density <= 1.0) {
            return Err(usage("--density must be in (0, 1]"));
        }
        if args.count == 0 {
            return Err(usage("--count must be at least 1"));
        }
        if args.count == 1 {
            let inst = bench::gen_maxcut(n, args.density, args.seed)?;
            let trace = algo::maxcut_maxgap(&inst.q, &cfg)?;
            print!("{}", trace.to_report());
        }
        bench::report_maxcut_batch(n, args.count, args.density, args.seed, &cfg)?
    };
    print_batch(&batch);
    if let Some(out) = &args.out {
        bench::write_maxcut_csv(&batch, create(out)?)?;
    }
    Ok(())
}

fn project(args: &ProjectArgs) -> CliResult<()> {
    let pf = load(&args.file)?;
    let k = coord_index(args.coord, pf.problem.n)?;
    let order = args.order.unwrap_or_else(|| pf.problem.min_order());
    check_order(order)?;
    let iv = bounds::projection(&pf.problem, k, order)?;
    println!("x{} in [{:?},{:?}]", args.coord, iv.lo, iv.hi);
    Ok(())
}

fn check(args: &CheckArgs) -> CliResult<()> {
    let pf = load(&args.file)?;
    let p = &pf.problem;
    let mut out = std::io::stdout().lock();
    let degrees: Vec<String> = p.constraints.iter().map(|g| g.degree().to_string()).collect();
    let _ = writeln!(out, "name {}", pf.name);
    let _ = writeln!(out, "nvars {}", p.n);
    let _ = writeln!(out, "objective degree {}", p.f.degree());
    let _ = writeln!(
        out,
        "constraints {} degrees {}",
        p.constraints.len(),
        if degrees.is_empty() { "-".into() } else { degrees.join(";") }
    );
    let _ = writeln!(out, "minimum order {}", p.min_order());
    let _ = writeln!(out, "affine constraints {}", p.is_affinely_constrained());
    match &p.bounds {
        Some(b) => {
            let ivs: Vec<String> = b.iter().map(|iv| format!("[{:?},{:?}]", iv.lo, iv.hi)).collect();
            let _ = writeln!(out, "bounds {}", ivs.join(";"));
        }
        None => {
            let _ = writeln!(out, "bounds none");
        }
    }
    let guard = p.ball_constraint().is_some();
    let _ = writeln!(
        out,
        "archimedean guard {}",
        if guard { "available" } else { "unavailable (add bounds for every variable)" }
    );
    if let Some(opt) = pf.optimum {
        let _ = writeln!(out, "optimum {opt:?}");
    }
    if let Some(x) = &pf.minimizer {
        let f = p.objective(x)?;
        let r = p.feasibility_residual(x)?;
        let _ = writeln!(out, "minimizer f={f:?} residual={r:?}");
        if let Some(opt) = pf.optimum {
            if (f - opt).abs() > 1e-6 * opt.abs().max(1.0) {
                let _ = writeln!(out, "warning: minimizer value differs from optimum");
            }
        }
        if r > 1e-6 {
            let _ = writeln!(out, "warning: minimizer is infeasible");
        }
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Solve(a) => solve(a),
        Command::ValueFunction(a) => value_function(a),
        Command::Maxcut(a) => maxcut(a),
        Command::Project(a) => project(a),
        Command::Check(a) => check(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            if matches!(
                e.kind(),
                ErrorKind::MissingSubcommand | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
            ) {
                let _ = e.print();
            } else {
                let text = e.render().to_string();
                let msg: Vec<&str> = text
                    .lines()
                    .map(str::trim)
                    .take_while(|l| !l.starts_with("Usage:") && !l.starts_with("For more information"))
                    .filter(|l| !l.is_empty() && !l.starts_with("tip:"))
                    .collect();
                eprintln!("{}", msg.join(" "));
            }
            return ExitCode::from(1);
        }
    };
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(3);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
