use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ratput::harness::{emit_csv, run_sweep, RunConfig};
use ratput::intensity::{check_conditions, IntensityFamily, IntensityKind};
use ratput::market::fmt_f64;
use ratput::mc::{mc_price, MCEstimate};
use ratput::pde::solve_rational;
use ratput::reference::{binomial_american, european_put, psor_american};

#[derive(Parser)]
#[command(name = "ratput", version, about = "Put options exercised at a price-dependent intensity")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalOpts {
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Log-price node count (odd).
    #[arg(long, global = true)]
    nx: Option<usize>,
    /// Time step count.
    #[arg(long, global = true)]
    nt: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    newton_tol: Option<f64>,
    #[arg(long, global = true)]
    newton_max_iter: Option<usize>,
    #[arg(long, global = true)]
    log_half_width: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Price of the put exercised with intensity f_theta at (0, s0).
    Price {
        #[arg(long)]
        theta: Option<f64>,
        /// Also write the full surface as `t,s,value` CSV.
        #[arg(long)]
        dump_surface: Option<PathBuf>,
    },
    /// American put at (0, s0).
    American {
        #[arg(long, value_enum, default_value_t = Method::Psor)]
        method: Method,
        #[arg(long, default_value_t = 10_000)]
        steps: usize,
        /// PSOR only: write the exercise boundary as `t,y` CSV.
        #[arg(long)]
        boundary: Option<PathBuf>,
    },
    /// Black-Scholes European put at (0, s0).
    European,
    /// Monte Carlo price of the intensity model against its PDE surface.
    McValidate {
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Convergence sweep over the theta ladder.
    Sweep {
        /// Add the max-over-grid error column.
        #[arg(long)]
        full_surface: bool,
    },
    /// Evaluate the convergence conditions along the theta ladder.
    CheckConditions {
        /// Exponent p of the rule epsilon(theta) = theta^(-p).
        #[arg(long, default_value_t = 0.5)]
        epsilon_power: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Tree,
    Psor,
}

fn load_config(g: &GlobalOpts) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::from_path(p)?,
        None => RunConfig::default(),
    };
    if let Some(nx) = g.nx {
        cfg.grid.n_space = nx;
    }
    if let Some(nt) = g.nt {
        cfg.grid.n_time = nt;
    }
    if let Some(l) = g.log_half_width {
        cfg.grid.log_half_width = l;
    }
    if let Some(seed) = g.seed {
        cfg.mc.seed = seed;
    }
    if let Some(tol) = g.newton_tol {
        cfg.solver.newton_tol = tol;
    }
    if let Some(it) = g.newton_max_iter {
        cfg.solver.newton_max_iter = it;
    }
    if g.out.is_some() {
        cfg.output = g.out.clone();
    }
    cfg.grid.validate()?;
    cfg.solver.validate()?;
    Ok(cfg)
}

fn open_output(cfg: &RunConfig) -> Result<Box<dyn Write>> {
    Ok(match &cfg.output {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot write {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn family_for(cfg: &RunConfig, theta: Option<f64>) -> Result<IntensityFamily> {
    Ok(match theta {
        Some(t) => cfg.family.with_theta(t)?,
        None => cfg.family,
    })
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.global)?;
    let s0 = cfg.grid.anchor_spot;
    match cli.command {
        Command::Price { theta, dump_surface } => {
            let family = family_for(&cfg, theta)?;
            let sol = solve_rational(&cfg.market, &cfg.grid, &family, &cfg.solver)?;
            if let Some(p) = dump_surface {
                let f = File::create(&p).with_context(|| format!("cannot write {}", p.display()))?;
                sol.surface.write_csv(BufWriter::new(f))?;
            }
            let mut out = open_output(&cfg)?;
            writeln!(out, "s0,theta,p_theta,newton_iters_max")?;
            writeln!(
                out,
                "{},{},{},{}",
                fmt_f64(s0),
                fmt_f64(family.theta),
                fmt_f64(sol.surface.anchor_value()),
                sol.stats.newton_iters_max
            )?;
            out.flush()?;
        }
        Command::American { method, steps, boundary } => {
            if matches!(method, Method::Tree) && boundary.is_some() {
                bail!("--boundary is only available with --method psor");
            }
            let (name, price) = match method {
                Method::Tree => ("tree", binomial_american(&cfg.market, 0.0, s0, steps)?),
                Method::Psor => {
                    let sol = psor_american(&cfg.market, &cfg.grid, &cfg.solver)?;
                    if let Some(p) = boundary {
                        let f = File::create(&p).with_context(|| format!("cannot write {}", p.display()))?;
                        sol.write_boundary_csv(BufWriter::new(f))?;
                    }
                    ("psor", sol.surface.anchor_value())
                }
            };
            let mut out = open_output(&cfg)?;
            writeln!(out, "method,s0,price")?;
            writeln!(out, "{name},{},{}", fmt_f64(s0), fmt_f64(price))?;
            out.flush()?;
        }
        Command::European => {
            let price = european_put(&cfg.market, 0.0, s0)?;
            let mut out = open_output(&cfg)?;
            writeln!(out, "s0,price")?;
            writeln!(out, "{},{}", fmt_f64(s0), fmt_f64(price))?;
            out.flush()?;
        }
        Command::McValidate { theta, paths, steps } => {
            if let Some(p) = paths {
                cfg.mc.n_paths = p;
            }
            if let Some(s) = steps {
                cfg.mc.n_steps = s;
            }
            let family = family_for(&cfg, theta)?;
            let sol = solve_rational(&cfg.market, &cfg.grid, &family, &cfg.solver)?;
            let est = mc_price(&cfg.market, &sol.surface, &family, &cfg.mc, s0)?;
            let mut out = open_output(&cfg)?;
            writeln!(out, "{}", MCEstimate::CSV_HEADER)?;
            writeln!(out, "{}", est.csv_row())?;
            out.flush()?;
        }
        Command::Sweep { full_surface } => {
            cfg.full_surface = full_surface;
            let rows = run_sweep(&cfg)?;
            emit_csv(&rows, open_output(&cfg)?)?;
        }
        Command::CheckConditions { epsilon_power } => {
            if !(epsilon_power.is_finite() && epsilon_power >= 0.0) {
                bail!("--epsilon-power must be >= 0");
            }
            let template = if cfg.family.kind == IntensityKind::Constant {
                cfg.family
            } else {
                IntensityFamily::new(cfg.family.kind, 1.0, cfg.family.level, cfg.family.cap)?
            };
            let report = check_conditions(&template, &cfg.theta_ladder, |th| th.powf(-epsilon_power))?;
            let mut out = open_output(&cfg)?;
            writeln!(out, "theta,nu_zero_plus,epsilon,term_bad,term_ok,passes")?;
            for k in 0..report.thetas.len() {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    fmt_f64(report.thetas[k]),
                    fmt_f64(report.nu_at_zero_plus[k]),
                    fmt_f64(report.epsilon_of_theta[k]),
                    fmt_f64(report.term_bad[k]),
                    fmt_f64(report.term_ok[k]),
                    report.passes
                )?;
            }
            out.flush()?;
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
