use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use npv_replica::experiments::{
    self, AllocateConfig, ConvergeConfig, DistributionConfig, Figure1Config, RegionConfig,
};
use npv_replica::sampling::NoiseFamily;
use npv_replica::{Error, Result};

/// Maximal net present value of multi-project portfolios.
#[derive(Parser, Debug)]
#[command(name = "npv-replica", version)]
struct Cli {
    /// Flat `key = value` file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write CSV here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct DistArgs {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Noise variance shared by all projects.
    #[arg(long)]
    v: Option<f64>,
}

impl DistArgs {
    fn apply(&self, dist: &mut DistributionConfig) {
        set(&mut dist.alpha, self.alpha);
        set(&mut dist.beta, self.beta);
        set(&mut dist.gamma, self.gamma);
        set(&mut dist.v, self.v);
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Internal rates r_c and r_c_or versus maturity.
    Figure1 {
        #[command(flatten)]
        dist: DistArgs,
        #[arg(long)]
        t_max: Option<u32>,
        #[arg(long)]
        tau_norm: Option<f64>,
    },
    /// Sign regions of (kappa, kappa_or) on an (r, T) grid.
    Region {
        #[command(flatten)]
        dist: DistArgs,
        #[arg(long)]
        r_min: Option<f64>,
        #[arg(long)]
        r_max: Option<f64>,
        #[arg(long)]
        r_step: Option<f64>,
        #[arg(long)]
        t_max: Option<u32>,
        #[arg(long)]
        tau_norm: Option<f64>,
    },
    /// Self-averaging of the finite-N optimum across ensemble sizes.
    Converge {
        #[command(flatten)]
        dist: DistArgs,
        /// Comma-separated ensemble sizes.
        #[arg(long, value_delimiter = ',')]
        n_list: Option<Vec<usize>>,
        /// Number of independent worlds per size.
        #[arg(long)]
        seeds: Option<usize>,
        /// Base seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        r: Option<f64>,
        #[arg(long)]
        t_mat: Option<u32>,
        #[arg(long)]
        tau_norm: Option<f64>,
        #[arg(long)]
        m: Option<f64>,
        /// gaussian, uniform or rademacher.
        #[arg(long)]
        noise: Option<String>,
    },
    /// Optimal allocation for one realized world.
    Allocate {
        /// Ensemble CSV with header `c,lambda,v`.
        #[arg(long, conflicts_with_all = ["alpha", "beta", "gamma", "n"])]
        ensemble: Option<PathBuf>,
        #[command(flatten)]
        dist: DistArgs,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        r: Option<f64>,
        #[arg(long)]
        t_mat: Option<u32>,
        #[arg(long)]
        tau_norm: Option<f64>,
        #[arg(long)]
        m: Option<f64>,
        #[arg(long)]
        noise: Option<String>,
        /// Cross-check against the numeric oracle.
        #[arg(long)]
        verify: bool,
    },
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn base_config<C: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<C> {
    path.map_or_else(|| Ok(C::default()), experiments::load_config)
}

fn noise_family(name: Option<String>) -> Result<Option<NoiseFamily>> {
    name.map(|s| s.parse()).transpose()
}

fn run(cli: Cli) -> Result<()> {
    let config = cli.config.as_deref();
    let mut sink: Box<dyn Write> = match &cli.out {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    match cli.command {
        Command::Figure1 { dist, t_max, tau_norm } => {
            let mut cfg: Figure1Config = base_config(config)?;
            dist.apply(&mut cfg.dist);
            set(&mut cfg.t_max, t_max);
            set(&mut cfg.tau_norm, tau_norm);
            experiments::figure1(&cfg)?.write_csv(&mut sink)?;
        }
        Command::Region { dist, r_min, r_max, r_step, t_max, tau_norm } => {
            let mut cfg: RegionConfig = base_config(config)?;
            dist.apply(&mut cfg.dist);
            set(&mut cfg.r_min, r_min);
            set(&mut cfg.r_max, r_max);
            set(&mut cfg.r_step, r_step);
            set(&mut cfg.t_max, t_max);
            set(&mut cfg.tau_norm, tau_norm);
            experiments::region(&cfg)?.write_csv(&mut sink)?;
        }
        Command::Converge { dist, n_list, seeds, seed, r, t_mat, tau_norm, m, noise } => {
            let mut cfg: ConvergeConfig = base_config(config)?;
            dist.apply(&mut cfg.dist);
            set(&mut cfg.n_list, n_list);
            set(&mut cfg.seeds, seeds);
            set(&mut cfg.seed, seed);
            set(&mut cfg.r, r);
            set(&mut cfg.t_mat, t_mat);
            set(&mut cfg.tau_norm, tau_norm);
            set(&mut cfg.m, m);
            set(&mut cfg.noise, noise_family(noise)?);
            experiments::converge(&cfg)?.write_csv(&mut sink)?;
        }
        Command::Allocate { ensemble, dist, n, seed, r, t_mat, tau_norm, m, noise, verify } => {
            let mut cfg: AllocateConfig = base_config(config)?;
            if ensemble.is_some() {
                cfg.ensemble = ensemble;
            }
            dist.apply(&mut cfg.dist);
            set(&mut cfg.n, n);
            set(&mut cfg.seed, seed);
            set(&mut cfg.r, r);
            set(&mut cfg.t_mat, t_mat);
            set(&mut cfg.tau_norm, tau_norm);
            set(&mut cfg.m, m);
            set(&mut cfg.noise, noise_family(noise)?);
            cfg.verify |= verify;
            experiments::allocate(&cfg)?.write_csv(&mut sink)?;
        }
    }
    sink.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.workers.unwrap_or(0)).build();
    let result = match pool {
        Ok(pool) => pool.install(|| run(cli)),
        Err(e) => Err(Error::Config(format!("cannot start worker pool: {e}"))),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
