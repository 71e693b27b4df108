//! Command-line driver: flag parsing, config merging, exit codes.

mod commands;
pub mod selftest;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::Parser;

use crate::error::Error;
use crate::io::{parse_fraction, Command, ExperimentConfig, OutputSink, RunManifest};
use crate::potential::PotentialSpec;

pub const EXIT_OK: i32 = 0;
pub const EXIT_SELFTEST_FAILED: i32 = 1;
pub const EXIT_NO_CONVERGENCE: i32 = 2;
pub const EXIT_INVALID: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mfg-homog", version, about = "Effective Hamiltonians of periodic mean field games")]
pub struct Cli {
    /// Command to run; overrides the one in the config file.
    #[arg(value_enum)]
    pub command: Option<Command>,

    /// TOML experiment file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long)]
    pub output_dir: Option<PathBuf>,

    #[arg(long)]
    pub seed: Option<u64>,

    /// Worker threads for independent points.
    #[arg(long, env = "MFG_HOMOG_JOBS")]
    pub jobs: Option<usize>,

    #[arg(long)]
    pub dim: Option<usize>,

    /// Grid points per axis.
    #[arg(long = "N")]
    pub n: Option<usize>,

    /// Slope vector, comma separated.
    #[arg(long = "P", value_delimiter = ',', allow_negative_numbers = true)]
    pub p: Option<Vec<f64>>,

    #[arg(long)]
    pub alpha: Option<f64>,

    /// Preset name: zero, separable-default, y-independent, linear-default.
    #[arg(long)]
    pub potential: Option<String>,

    #[arg(long)]
    pub newton_tol: Option<f64>,

    #[arg(long)]
    pub fixedpoint_tol: Option<f64>,

    /// Sweep magnitudes of P.
    #[arg(long, value_delimiter = ',')]
    pub p_values: Option<Vec<f64>>,

    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,

    #[arg(long, value_delimiter = ',')]
    pub p_magnitudes: Option<Vec<f64>>,

    #[arg(long)]
    pub p_min: Option<f64>,

    #[arg(long)]
    pub p_max: Option<f64>,

    #[arg(long)]
    pub p_step: Option<f64>,

    /// Accepts fractions such as 1/8.
    #[arg(long, value_parser = parse_fraction)]
    pub epsilon: Option<f64>,

    #[arg(long, value_delimiter = ',', value_parser = parse_fraction)]
    pub epsilons: Option<Vec<f64>>,

    #[arg(long = "T")]
    pub t_final: Option<f64>,

    #[arg(long)]
    pub time_steps: Option<usize>,

    #[arg(long, value_parser = parse_fraction)]
    pub step_over_eps: Option<f64>,

    #[arg(long)]
    pub coupling_tol: Option<f64>,

    #[arg(long)]
    pub cole_hopf_steps: Option<usize>,

    /// Flip one entry of the transport adjoint in the self-test.
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

impl Cli {
    /// Config file (or defaults) with flags applied on top.
    pub fn resolve(&self) -> crate::Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(cmd) = self.command {
            c.command = cmd;
        } else if self.config.is_none() {
            return Err(Error::Config("no command given (pass one or a config file)".into()));
        }
        macro_rules! set {
            ($flag:expr => $field:expr) => {
                if let Some(v) = &$flag {
                    $field = v.clone();
                }
            };
        }
        set!(self.output_dir => c.output_dir);
        set!(self.seed => c.seed);
        set!(self.dim => c.grid.dim);
        set!(self.n => c.grid.n);
        set!(self.alpha => c.query.alpha);
        set!(self.newton_tol => c.query.newton_tol);
        set!(self.fixedpoint_tol => c.query.fixedpoint_tol);
        set!(self.p_values => c.sweep.p_values);
        set!(self.alphas => c.sweep.alphas);
        set!(self.p_magnitudes => c.asymptotic.p_magnitudes);
        set!(self.p_min => c.example.p_min);
        set!(self.p_max => c.example.p_max);
        set!(self.p_step => c.example.p_step);
        set!(self.epsilon => c.evolve.epsilon);
        set!(self.t_final => c.evolve.t_final);
        set!(self.time_steps => c.evolve.time_steps);
        set!(self.coupling_tol => c.evolve.coupling_tol);
        set!(self.epsilons => c.converge.epsilons);
        set!(self.step_over_eps => c.converge.step_over_eps);
        if let Some(s) = self.cole_hopf_steps {
            c.evolve.cole_hopf_steps = Some(s);
        }
        if let Some(alpha) = self.alpha {
            c.example.alpha = alpha;
            if self.alphas.is_none() {
                c.asymptotic.alphas = vec![alpha];
            }
        }
        if let Some(alphas) = &self.alphas {
            c.asymptotic.alphas = alphas.clone();
        }
        if let Some(name) = &self.potential {
            c.potential = Some(PotentialSpec::preset(name)?.kind);
        }
        match &self.p {
            Some(p) => c.query.p = p.clone(),
            // a bare --dim keeps P on the first axis
            None if c.query.p.len() != c.grid.dim && self.dim.is_some() => {
                let mut p = vec![0.0; c.grid.dim];
                if let (Some(first), Some(old)) = (p.first_mut(), c.query.p.first()) {
                    *first = *old;
                }
                c.query.p = p;
            }
            None => {}
        }
        if let Some(dir) = &c.sweep.direction {
            if dir.len() != c.grid.dim {
                c.sweep.direction = None;
            }
        }
        Ok(c)
    }
}

/// Exit status for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Config(_) | Error::InvalidInput(_) | Error::Io(_) | Error::UnsupportedPotential(_) => EXIT_INVALID,
        Error::UnsupportedRegime(_) => EXIT_INVALID,
        _ => EXIT_NO_CONVERGENCE,
    }
}

/// Result of one command before the manifest is written.
pub(crate) struct Outcome {
    pub residuals: BTreeMap<String, f64>,
    pub summary: Vec<String>,
}

fn execute(cli: &Cli, cfg: &ExperimentConfig) -> crate::Result<i32> {
    if cfg.command == Command::Selftest {
        let report = selftest::run(&selftest::SelftestOptions {
            inject_fault: cli.inject_fault,
            seed: cfg.seed,
        });
        for line in report.lines() {
            println!("{line}");
        }
        return Ok(if report.all_passed() { EXIT_OK } else { EXIT_SELFTEST_FAILED });
    }
    let started = Instant::now();
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    // validate before touching the file system
    commands::validate(cfg)?;
    let mut sink = OutputSink::create(&cfg.output_dir)?;
    let outcome = commands::dispatch(cfg, &mut sink)?;
    for line in &outcome.summary {
        println!("{line}");
    }
    let manifest = RunManifest {
        tool: "mfg-homog".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: cfg.command.name().into(),
        seed: cfg.seed,
        config: cfg.to_canonical()?,
        started_unix,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        residuals: outcome.residuals,
        files: Vec::new(),
    };
    let path = sink.finish(manifest)?;
    println!("manifest: {}", path.display());
    Ok(EXIT_OK)
}

/// Parses `args` (program name first), runs, and returns the exit status.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_INVALID,
            };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match cli.resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    let jobs = cli.jobs.unwrap_or(0);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return EXIT_INVALID;
        }
    };
    match pool.install(|| execute(&cli, &cfg)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("mfg-homog").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_defaults() {
        let cli = parse(&["cell", "--dim", "2", "--N", "16", "--P", "1,-0.5", "--potential", "zero"]);
        let c = cli.resolve().unwrap();
        assert_eq!(c.command, Command::Cell);
        assert_eq!((c.grid.dim, c.grid.n), (2, 16));
        assert_eq!(c.query.p, vec![1.0, -0.5]);
        assert_eq!(c.potential().unwrap(), PotentialSpec::zero());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "command = \"sweep\"\n[grid]\nn = 32\n").unwrap();
        let cli = parse(&["--config", path.to_str().unwrap(), "--N", "64"]);
        let c = cli.resolve().unwrap();
        assert_eq!(c.command, Command::Sweep);
        assert_eq!(c.grid.n, 64);
    }

    #[test]
    fn fractions_in_epsilons() {
        let c = parse(&["converge", "--epsilons", "1/8,1/16,1/32"]).resolve().unwrap();
        assert_eq!(c.converge.epsilons, vec![0.125, 0.0625, 0.03125]);
    }

    #[test]
    fn missing_command_and_bad_preset() {
        assert!(parse(&[]).resolve().is_err());
        assert!(parse(&["cell", "--potential", "lumpy"]).resolve().is_err());
    }

    #[test]
    fn unknown_command_exits_invalid() {
        assert_eq!(run_from(["mfg-homog", "bake"]), EXIT_INVALID);
    }

    #[test]
    fn exit_codes_by_kind() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_INVALID);
        let nc = Error::NoConvergence {
            iterations: 1,
            last_change: 1.0,
            hjb_residual: 1.0,
        };
        assert_eq!(exit_code(&nc.at_point(&[1.0], 1.0)), EXIT_NO_CONVERGENCE);
    }
}
