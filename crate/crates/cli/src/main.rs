//! `green-surrogate`: dataset generation, training, Green's-function
//! evaluation and BVP solving from the command line.

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use green_surrogate::greensolver::REFERENCE_SIGMA_FACTOR;
use green_surrogate::io::write_atomic;
use green_surrogate::model::load_checkpoint;
use green_surrogate::{
    evaluate_bvp, l2_error, solve_bvp, train, write_field, Bvp, CheckpointSink, CoefficientSpec, Dataset, Error,
    Field, GreenProvider, KStrategy, LearnedProvider, LossKind, ProblemInfo, ReferenceProvider, ReferenceSolver,
    Result, Scalar, StencilCoeffs, TrainConfig,
};

use config::{Precision, Resolution, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "green-surrogate", version, about = "Learned Green's functions for 2D reaction-diffusion problems")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "GREEN_SURROGATE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Sample sources and write a dataset directory.
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output.dataset`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a network; writes best.ck, last.ck, history.csv.
    Train(TrainArgs),
    /// Compare learned and reference Green's functions at source points.
    EvalGreen {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Source point `x1,x2`; repeatable.
        #[arg(long = "xi", value_parser = parse_point, allow_hyphen_values = true)]
        xi: Vec<(f64, f64)>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Reference solve: jacobi (converged) or direct.
        #[arg(long, default_value = "jacobi")]
        reference: String,
    },
    /// Solve a boundary value problem through the representation formula.
    Solve(SolveArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run directory (overrides `output.run`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset directory; generated in memory when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    loss: Option<LossKind>,
    /// constant, dynamic or adaptive.
    #[arg(long)]
    k_strategy: Option<String>,
    /// Sweep count for the constant strategy.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// `reference` or `checkpoint:<path>`.
    #[arg(long, default_value = "reference")]
    provider: String,
    /// Named case: poisson-sin(L), poisson-cos, rd1-gauss.
    #[arg(long, conflicts_with_all = ["f_expr", "g_expr"])]
    case: Option<String>,
    #[arg(long, requires = "g_expr")]
    f_expr: Option<String>,
    #[arg(long, requires = "f_expr")]
    g_expr: Option<String>,
    /// laplace, rd1, or `a=<expr>;r=<expr>`.
    #[arg(long)]
    coeffs: Option<String>,
    #[arg(long)]
    grid: Option<Resolution>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `e2` prints the error against the exact solution.
    #[arg(long)]
    report: Option<String>,
    /// CSV with columns x,y,u.
    #[arg(long)]
    contour: Option<PathBuf>,
    /// Reference-provider Gaussian width in cells.
    #[arg(long, default_value_t = REFERENCE_SIGMA_FACTOR)]
    sigma_factor: f64,
}

fn parse_point(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected x1,x2 got '{s}'"))?;
    let x = a.trim().parse().map_err(|_| format!("bad coordinate in '{s}'"))?;
    let y = b.trim().parse().map_err(|_| format!("bad coordinate in '{s}'"))?;
    Ok((x, y))
}

fn parse_coeffs(s: &str) -> Result<CoefficientSpec> {
    if s.contains('=') {
        let mut a = None;
        let mut r = None;
        for part in s.split(';') {
            match part.split_once('=') {
                Some((k, v)) if k.trim() == "a" => a = Some(v.trim().to_string()),
                Some((k, v)) if k.trim() == "r" => r = Some(v.trim().to_string()),
                _ => return Err(Error::InvalidCoefficient(format!("cannot parse '{part}'"))),
            }
        }
        let a = a.ok_or_else(|| Error::InvalidCoefficient("missing a=".into()))?;
        CoefficientSpec::custom(&a, r.as_deref().unwrap_or("0"))
    } else {
        CoefficientSpec::by_name(s.trim())
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Diverged { .. } => 3,
        Error::Io { .. } | Error::Corrupt { .. } | Error::Version { .. } => 4,
        Error::Singular(_) | Error::SolveGuard(_) | Error::NonZeroBoundary(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let res = match cli.cmd {
        Cmd::GenData { config, out } => gen_data(&config, out),
        Cmd::Train(a) => run_train(a),
        Cmd::EvalGreen {
            checkpoint,
            xi,
            out,
            reference,
        } => eval_green(&checkpoint, &xi, out.as_deref(), &reference),
        Cmd::Solve(a) => run_solve(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn gen_data(config: &Path, out: Option<PathBuf>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let dir = out
        .or(cfg.output.dataset.clone())
        .ok_or_else(|| Error::InvalidTraining("no output directory (use --out or output.dataset)".into()))?;
    let grid = cfg.grid.build()?;
    let stencil = StencilCoeffs::assemble(&grid, &cfg.coeffs)?;
    let ds = Dataset::generate(&stencil, &cfg.dataset)?;
    ds.save(&dir)?;
    println!(
        "wrote {} train / {} validation samples to {}",
        ds.train.len(),
        ds.val.len(),
        dir.display()
    );
    Ok(())
}

fn run_train(a: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(l) = a.loss {
        cfg.train.loss = l;
    }
    if let Some(name) = &a.k_strategy {
        cfg.train.k_strategy = KStrategy::from_name(name, a.k)?;
    } else if let Some(k) = a.k {
        cfg.train.k_strategy = KStrategy::constant(k);
    }
    cfg.validate()?;
    let run_dir = a
        .out
        .or(cfg.output.run.clone())
        .ok_or_else(|| Error::InvalidTraining("no run directory (use --out or output.run)".into()))?;
    let grid = cfg.grid.build()?;
    let stencil = StencilCoeffs::assemble(&grid, &cfg.coeffs)?;
    let data_dir = a.data.or(cfg.output.dataset.clone());
    let ds = match data_dir.filter(|d| d.join("manifest.json").exists()) {
        Some(d) => {
            let ds = Dataset::load(&d)?;
            if !ds.grid.same_as(&grid) || ds.coeffs != cfg.coeffs || ds.spec != cfg.dataset {
                return Err(Error::ConfigMismatch(format!(
                    "dataset at {} was generated with a different configuration",
                    d.display()
                )));
            }
            ds
        }
        None => Dataset::generate(&stencil, &cfg.dataset)?,
    };
    std::fs::create_dir_all(&run_dir).map_err(|e| Error::Io {
        path: run_dir.clone(),
        source: e,
    })?;
    let resolved = serde_json::to_vec_pretty(&cfg)?;
    write_atomic(&run_dir.join("config.json"), &resolved)?;
    let sink = CheckpointSink {
        dir: Some(run_dir.clone()),
        problem: Some(ProblemInfo {
            grid,
            coeffs: cfg.coeffs.clone(),
            source: cfg.dataset.source,
            variant: cfg.dataset.variant,
        }),
    };
    let unet = cfg.unet(&grid);
    println!(
        "training {} parameters ({:?}) on {} samples, {} epochs",
        unet.param_count(),
        cfg.precision,
        ds.train.len(),
        cfg.train.epochs
    );
    let history = match cfg.precision {
        Precision::F32 => train_with::<f32>(&stencil, &ds, &cfg.train, unet, &sink)?,
        Precision::F64 => train_with::<f64>(&stencil, &ds, &cfg.train, unet, &sink)?,
    };
    write_atomic(
        &run_dir.join("history.csv"),
        history.to_csv(!cfg.train.deterministic).as_bytes(),
    )?;
    write_atomic(&run_dir.join("timing.csv"), history.timing_csv().as_bytes())?;
    if let Some(b) = history.best() {
        println!("best validation {:.4e} at epoch {}", b.val_loss, b.epoch);
    }
    Ok(())
}

fn train_with<T: Scalar>(
    stencil: &StencilCoeffs,
    ds: &Dataset,
    tc: &TrainConfig,
    unet: green_surrogate::UNetConfig,
    sink: &CheckpointSink,
) -> Result<green_surrogate::TrainHistory> {
    let out = train::<T>(stencil, ds, unet, tc, sink, |r| {
        println!(
            "epoch {:>4}  train {:.4e}  val {:.4e}  k {:>3}  {:.1}s",
            r.epoch, r.train_loss, r.val_loss, r.k, r.seconds
        );
    })?;
    Ok(out.history)
}

fn learned_provider(path: &Path) -> Result<(LearnedProvider<f32>, ProblemInfo)> {
    let ck = load_checkpoint::<f32>(path)?;
    let problem = ck.meta.problem.clone().ok_or_else(|| Error::Corrupt {
        path: path.to_path_buf(),
        reason: "checkpoint carries no problem description".into(),
    })?;
    let p = LearnedProvider::new(ck.net, problem.grid, problem.coeffs.clone(), problem.variant, problem.source)?;
    Ok((p, problem))
}

fn eval_green(checkpoint: &Path, xis: &[(f64, f64)], out: Option<&Path>, reference: &str) -> Result<()> {
    let (learned, problem) = learned_provider(checkpoint)?;
    let grid = problem.grid;
    let stencil = StencilCoeffs::assemble(&grid, &problem.coeffs)?;
    let solver = match reference {
        "jacobi" => ReferenceSolver::default(),
        "direct" => ReferenceSolver::Direct,
        other => return Err(Error::InvalidTraining(format!("unknown reference solver '{other}'"))),
    };
    let xis: Vec<(f64, f64)> = if xis.is_empty() {
        vec![(0.0, 0.0), (-0.75, -0.75), (0.5, 0.0)]
    } else {
        xis.to_vec()
    };
    if let Some(d) = out {
        std::fs::create_dir_all(d).map_err(|e| Error::Io {
            path: d.to_path_buf(),
            source: e,
        })?;
    }
    let mut report = String::from("x1,x2,e2\n");
    for (k, &xi) in xis.iter().enumerate() {
        if !grid.domain.contains(xi) {
            return Err(Error::InvalidSource(format!("source point {xi:?} outside the domain")));
        }
        let g = learned.green_at(xi)?;
        let rho = green_surrogate::gaussian_source(&grid, xi, problem.source.sigma(&grid))?;
        let r = solver.solve(&stencil, &rho)?;
        let e2 = l2_error(&g, &r)?;
        println!("xi = ({:+.4}, {:+.4})  e2 = {:.4e}", xi.0, xi.1, e2);
        let _ = writeln!(report, "{},{},{:e}", xi.0, xi.1, e2);
        if let Some(d) = out {
            write_field(&d.join(format!("learned_{k}.fgf")), &g)?;
            write_field(&d.join(format!("reference_{k}.fgf")), &r)?;
        }
    }
    if let Some(d) = out {
        write_atomic(&d.join("report.csv"), report.as_bytes())?;
    }
    Ok(())
}

fn run_solve(a: SolveArgs) -> Result<()> {
    let coeffs = a.coeffs.as_deref().map(parse_coeffs).transpose()?;
    let mut bvp = match (&a.case, &a.f_expr, &a.g_expr) {
        (Some(c), _, _) => Bvp::named(c)?,
        (None, Some(f), Some(g)) => Bvp::from_exprs(coeffs.clone().unwrap_or(CoefficientSpec::Laplace), f, g)?,
        _ => return Err(Error::UnknownCase("give --case or both --f-expr and --g-expr".into())),
    };
    if let Some(c) = &coeffs {
        if c != &bvp.coeffs {
            return Err(Error::ConfigMismatch(format!(
                "case {} is posed with coefficients {}, not {c}",
                bvp.name, bvp.coeffs
            )));
        }
        bvp.coeffs = c.clone();
    }
    let provider: Box<dyn GreenProvider> = if a.provider == "reference" {
        let res = a.grid.unwrap_or(Resolution(64, 64));
        let grid = config::GridSpec {
            n: res.0,
            m: res.1,
            ..Default::default()
        }
        .build()?;
        let stencil = StencilCoeffs::assemble(&grid, &bvp.coeffs)?;
        Box::new(ReferenceProvider::new(stencil, a.sigma_factor)?)
    } else if let Some(path) = a.provider.strip_prefix("checkpoint:") {
        let (p, problem) = learned_provider(Path::new(path))?;
        if let Some(Resolution(n, m)) = a.grid {
            if (n, m) != (problem.grid.n, problem.grid.m) {
                return Err(Error::ConfigMismatch(format!(
                    "checkpoint was trained on {}x{}, requested {n}x{m}",
                    problem.grid.n, problem.grid.m
                )));
            }
        }
        Box::new(p)
    } else {
        return Err(Error::InvalidTraining(format!(
            "unknown provider '{}' (expected reference or checkpoint:<path>)",
            a.provider
        )));
    };
    let grid = *provider.grid();
    eprintln!("provider: {}", provider.describe());
    let (u, e2) = if bvp.exact.is_some() {
        let rep = evaluate_bvp(provider.as_ref(), &bvp, &grid)?;
        (rep.u, Some(rep.e2))
    } else {
        (solve_bvp(provider.as_ref(), &bvp, &grid)?, None)
    };
    match (a.report.as_deref(), e2) {
        (Some("e2"), Some(e)) => println!("e2 {e:.6e}"),
        (Some("e2"), None) => eprintln!("no exact solution for {}; e2 not reported", bvp.name),
        (Some(other), _) => return Err(Error::InvalidTraining(format!("unknown report '{other}'"))),
        (None, _) => {}
    }
    if let Some(p) = &a.out {
        write_field(p, &u)?;
    }
    if let Some(p) = &a.contour {
        write_atomic(p, contour_csv(&u).as_bytes())?;
    }
    Ok(())
}

fn contour_csv(u: &Field) -> String {
    let g = u.grid();
    let mut s = String::from("x,y,u\n");
    for j in 0..g.m {
        for i in 0..g.n {
            let _ = writeln!(s, "{:e},{:e},{:e}", g.x(i), g.y(j), u.get(i, j));
        }
    }
    s
}
