use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand};
use eigentrack::propagation::reference_solution;
use eigentrack::report::{self, error_table_csv, error_table_text, eigen_csv, RunArtifacts};
use eigentrack::{
    apriori_match, error_table, label_run, run_adaptive, verify, ParamPoint, RunConfig, RunState, SnapshotSource,
    SnapshotStore, Surrogate, Termination, Verdict,
};

/// Exit code of `refine` when the level cap stopped refinement.
const EXIT_MAX_LEVEL: u8 = 3;

#[derive(Parser)]
#[command(name = "eigentrack", version, about = "Adaptive tracking of parametric eigenvalue surfaces")]
struct Cli {
    /// Problem configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Maximum number of concurrent eigensolves.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Output directory, overriding `output_dir` from the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the window eigenvalues at one grid point.
    Snapshot {
        #[arg(long, required = true, num_args = 1.., value_delimiter = ',', allow_negative_numbers = true)]
        at: Vec<f64>,
    },
    /// A priori matching between two grid points.
    Match {
        #[arg(long, required = true, num_args = 1.., value_delimiter = ',', allow_negative_numbers = true)]
        from: Vec<f64>,
        #[arg(long, required = true, num_args = 1.., value_delimiter = ',', allow_negative_numbers = true)]
        to: Vec<f64>,
    },
    /// Matching followed by a posteriori verification.
    Verify {
        #[arg(long, required = true, num_args = 1.., value_delimiter = ',', allow_negative_numbers = true)]
        from: Vec<f64>,
        #[arg(long, required = true, num_args = 1.., value_delimiter = ',', allow_negative_numbers = true)]
        to: Vec<f64>,
    },
    /// Adaptive refinement; writes the per-level grids and the projection summary.
    Refine,
    /// Labels a uniform reference lattice by a priori matching alone.
    Reference {
        #[arg(long, value_name = "N")]
        points_per_axis: usize,
    },
    /// Adaptive run compared against a reference lattice (error table).
    Compare {
        #[arg(long, value_name = "N")]
        points_per_axis: usize,
    },
    /// Build or evaluate the piecewise-linear surrogate.
    Surrogate {
        #[command(subcommand)]
        action: SurrogateCommand,
    },
    /// Every artifact of an adaptive run, plus the error table if a reference is requested.
    Report {
        #[arg(long, value_name = "N")]
        points_per_axis: Option<usize>,
    },
}

#[derive(Subcommand)]
enum SurrogateCommand {
    /// Run, label and write `surrogate.csv`.
    Build,
    /// Evaluate one surface from a written `surrogate.csv`.
    Eval {
        #[arg(long)]
        surface: u32,
        #[arg(long, required = true, num_args = 1.., value_delimiter = ',', allow_negative_numbers = true)]
        at: Vec<f64>,
        /// Surrogate file; defaults to `surrogate.csv` in the output directory.
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
    },
}

struct RunContext {
    cfg: RunConfig,
    out_dir: PathBuf,
}

impl RunContext {
    fn store(&self) -> Result<SnapshotStore> {
        let cache = std::env::var_os("EIGENTRACK_CACHE").map(PathBuf::from).unwrap_or_else(|| self.cfg.cache_dir.clone());
        Ok(SnapshotStore::new(&self.cfg, Some(&cache))?)
    }

    fn point(&self, mu: &[f64]) -> Result<ParamPoint> {
        self.cfg
            .param_box
            .point_from_physical(mu)
            .with_context(|| format!("{mu:?} is not a dyadic grid point of the parameter box"))
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out_dir).with_context(|| format!("cannot create {}", self.out_dir.display()))?;
        Ok(&self.out_dir)
    }

    fn write(&self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.out_dir()?.join(name);
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }

    fn run(&self, store: &SnapshotStore) -> Result<RunState> {
        let state = run_adaptive(&self.cfg, store)?;
        if state.termination == Some(Termination::MaxLevel) {
            log::warn!("refinement hit max_level {} with {} points pending", self.cfg.max_level, state.pending.len());
        }
        Ok(state)
    }
}

fn fmt_list<T: std::fmt::Display>(xs: impl IntoIterator<Item = T>) -> String {
    xs.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

fn fmt_lambdas(xs: impl IntoIterator<Item = f64>) -> String {
    fmt_list(xs.into_iter().map(|x| format!("{x:.4}")))
}

fn print_levels(state: &RunState) {
    println!("{:>5} {:>7} {:>13} {:>12}", "level", "points", "subintervals", "uncertified");
    for r in &state.records {
        println!("{:>5} {:>7} {:>13} {:>12}", r.level, r.points_total, r.subintervals_checked, r.subintervals_uncertified);
    }
}

fn execute(cli: Cli) -> Result<u8> {
    let Some(config) = cli.config else {
        Cli::command().error(ErrorKind::MissingRequiredArgument, "--config <PATH> is required").exit();
    };
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global()?;
    }
    let cfg = RunConfig::from_path(&config)?;
    let out_dir = cli.out.unwrap_or_else(|| cfg.output_dir.clone());
    let ctx = RunContext { cfg, out_dir };

    match cli.command {
        Command::Snapshot { at } => {
            let store = ctx.store()?;
            let snap = store.snapshot(&ctx.point(&at)?)?;
            println!("index,lambda");
            for (i, l) in snap.values.iter().enumerate() {
                println!("{},{l:.16e}", i + 1);
            }
        }
        Command::Match { from, to } => {
            let store = ctx.store()?;
            let a = store.snapshot(&ctx.point(&from)?)?;
            let b = store.snapshot(&ctx.point(&to)?)?;
            let m = apriori_match(&a, &b, store.mass(), ctx.cfg.w1, ctx.cfg.w2)?;
            println!("eigenvalues at {from:?}: {}", fmt_lambdas(a.values.iter().copied()));
            println!("eigenvalues at {to:?}: {}", fmt_lambdas(b.values.iter().copied()));
            println!("sigma* = ({})", fmt_list(m.assignment.sigma.iter().map(|s| s + 1)));
            println!("total cost = {:.6}", m.assignment.total_cost);
            println!("matched order at {from:?}: {}", fmt_lambdas(m.pair.order_a.iter().map(|&i| a.values[i])));
            println!("matched order at {to:?}: {}", fmt_lambdas(m.pair.order_b.iter().map(|&i| b.values[i])));
        }
        Command::Verify { from, to } => {
            let store = ctx.store()?;
            let a = store.snapshot(&ctx.point(&from)?)?;
            let b = store.snapshot(&ctx.point(&to)?)?;
            let m = apriori_match(&a, &b, store.mass(), ctx.cfg.w1, ctx.cfg.w2)?;
            let r = verify(&a, &b, &m.pair, store.mass(), ctx.cfg.t_pi, ctx.cfg.t_lambda)?;
            println!("projection matrix (matched order):");
            for j in 0..r.projection.rows {
                println!("  {}", fmt_list((0..r.projection.cols).map(|l| format!("{:.3}", r.projection.get(j, l)))));
            }
            for d in &r.diagnostics {
                println!(
                    "j = {}: r1 = {{{}}}, r2 = {{{}}}, {:?}",
                    d.position + 1,
                    fmt_list(d.r1.iter().map(|x| x + 1)),
                    fmt_list(d.r2.iter().map(|x| x + 1)),
                    d.outcome
                );
            }
            for c in &r.clusters {
                println!("cluster {{{}}}", fmt_list(c.iter().map(|x| x + 1)));
            }
            let verdict = match r.verdict {
                Verdict::Certified => "certified",
                Verdict::Refine => "refine",
            };
            println!("verdict: {verdict}");
        }
        Command::Refine => {
            let store = ctx.store()?;
            let state = ctx.run(&store)?;
            let bx = store.param_box();
            for (i, lvl) in state.levels.iter().enumerate() {
                ctx.write(&format!("grid_level_{}.csv", lvl.level), &report::grid_csv(bx, &state, i))?;
            }
            ctx.write("projection_summary.csv", &report::projection_summary_csv(bx, &state))?;
            ctx.write("levels.json", &report::levels_json(&state))?;
            print_levels(&state);
            if state.termination == Some(Termination::MaxLevel) {
                println!("stopped at max_level with {} marked points", state.pending.len());
                return Ok(EXIT_MAX_LEVEL);
            }
            println!("converged at level {} with {} points", state.current().level, state.final_points().len());
        }
        Command::Reference { points_per_axis } => {
            let store = ctx.store()?;
            let r = reference_solution(&ctx.cfg, &store, points_per_axis)?;
            let path = ctx.write("reference_eigen.csv", &eigen_csv(store.param_box(), &r, &store)?)?;
            println!("{} points, {} surfaces; wrote {}", r.points.len(), r.surface_count, path.display());
        }
        Command::Compare { points_per_axis } => {
            let store = ctx.store()?;
            let state = ctx.run(&store)?;
            let r = reference_solution(&ctx.cfg, &store, points_per_axis)?;
            let rows = error_table(&state, &r, &store, &ctx.cfg)?;
            ctx.write("error_table.csv", &error_table_csv(&rows))?;
            let text = error_table_text(&rows);
            ctx.write("error_table.txt", &text)?;
            print!("{text}");
        }
        Command::Surrogate { action: SurrogateCommand::Build } => {
            let store = ctx.store()?;
            let state = ctx.run(&store)?;
            let labeling = label_run(&state, &store)?;
            let s = Surrogate::build(&labeling, &store)?;
            let path = ctx.write("surrogate.csv", &s.to_csv())?;
            println!("{} surfaces over {} points; wrote {}", labeling.surface_count, s.grid().len(), path.display());
        }
        Command::Surrogate { action: SurrogateCommand::Eval { surface, at, input } } => {
            let path = input.unwrap_or_else(|| ctx.out_dir.join("surrogate.csv"));
            let text = fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
            let s = Surrogate::from_csv(&text, ctx.cfg.param_box.clone())?;
            match s.eval(surface, &at)? {
                Some(l) => println!("{l:.16e}"),
                None => println!("undefined"),
            }
        }
        Command::Report { points_per_axis } => {
            let store = ctx.store()?;
            let state = ctx.run(&store)?;
            let labeling = label_run(&state, &store)?;
            let surrogate = Surrogate::build(&labeling, &store)?;
            let rows = match points_per_axis {
                Some(n) => Some(error_table(&state, &reference_solution(&ctx.cfg, &store, n)?, &store, &ctx.cfg)?),
                None => None,
            };
            let fingerprint = eigentrack::snapshot::fingerprint_hex(store.fingerprint());
            let artifacts = RunArtifacts {
                cfg: &ctx.cfg,
                state: &state,
                src: &store,
                labeling: &labeling,
                surrogate: &surrogate,
                errors: rows.as_deref(),
                fingerprint: &fingerprint,
            };
            let written = eigentrack::emit_reports(&artifacts, ctx.out_dir()?)?;
            println!("wrote {} files to {}", written.len(), ctx.out_dir.display());
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
