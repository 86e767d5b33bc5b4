use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use paris_cli::{
    compare, emit_plotdata, oracle_check, preset, run, CliError, Command, Estimator, ExperimentConfig, OUT_DIR_ENV,
};

#[derive(Parser)]
#[command(name = "paris", version, about = "Tangent-filter and recursive maximum likelihood experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate and write the data record only.
    Simulate(RunArgs),
    /// Tangent-filter estimates at a fixed parameter.
    Tangent(RunArgs),
    /// Online recursive maximum likelihood.
    Rml(RunArgs),
    /// Run two RML configurations on the same data and compare them.
    Compare {
        /// Config file or `@preset` for run A.
        #[arg(long)]
        a: String,
        /// Config file or `@preset` for run B.
        #[arg(long)]
        b: String,
        #[arg(long, env = OUT_DIR_ENV)]
        out: Option<PathBuf>,
        /// Override the replicate count of both runs.
        #[arg(long)]
        replicates: Option<usize>,
        /// Override the horizon of both runs.
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Check gradients and tangent estimates against exact references.
    OracleCheck,
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named configuration: sv, sv-ffbsm, slam, hmm, lgssm.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory; falls back to the config, then the environment.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_estimator)]
    estimator: Option<Estimator>,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    precision: Option<usize>,
    #[arg(long)]
    max_trials: Option<usize>,
    #[arg(long)]
    step_scale: Option<f64>,
    #[arg(long)]
    step_exponent: Option<f64>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data_seed: Option<u64>,
    /// Gradient-norm cap, or `off`.
    #[arg(long)]
    clip: Option<String>,
    #[arg(long)]
    zeta3_floor: Option<f64>,
    #[arg(long)]
    warmup: Option<usize>,
    /// Test function selector; repeat for several.
    #[arg(long = "test-function")]
    test_functions: Vec<String>,
    #[arg(long)]
    plot_every: Option<usize>,
    #[arg(long)]
    checkpoint: bool,
    #[arg(long)]
    dump_cloud: bool,
}

fn parse_estimator(s: &str) -> Result<Estimator, String> {
    match s {
        "paris" => Ok(Estimator::Paris),
        "ffbsm" => Ok(Estimator::Ffbsm),
        _ => Err(format!("unknown estimator '{s}' (paris or ffbsm)")),
    }
}

fn load(source: &str) -> Result<ExperimentConfig, CliError> {
    match source.strip_prefix('@') {
        Some(name) => preset(name),
        None => ExperimentConfig::load(source.as_ref()),
    }
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig, CliError> {
        let mut c = match (&self.config, &self.preset) {
            (Some(p), _) => ExperimentConfig::load(p)?,
            (None, Some(name)) => preset(name)?,
            (None, None) => return Err(CliError::Config("give --config or --preset".into())),
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f.clone() { c.$f = v; } )* };
        }
        set!(estimator, particles, precision, max_trials, step_scale, step_exponent, horizon, replicates, seed, warmup, zeta3_floor, plot_every);
        if let Some(v) = self.data_seed {
            c.data_seed = Some(v);
        }
        if let Some(clip) = &self.clip {
            c.clip = match clip.as_str() {
                "off" | "none" => None,
                v => Some(v.parse().map_err(|_| CliError::Config(format!("bad --clip '{v}'")))?),
            };
        }
        if !self.test_functions.is_empty() {
            c.test_functions = self.test_functions.clone();
        }
        c.checkpoint |= self.checkpoint;
        c.dump_cloud |= self.dump_cloud;
        c.validate()?;
        Ok(c)
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let (command, args) = match cli.command {
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Tangent(a) => (Command::Tangent, a),
        Cmd::Rml(a) => (Command::Rml, a),
        Cmd::Compare {
            a,
            b,
            out,
            replicates,
            horizon,
        } => {
            let (mut ca, mut cb) = (load(&a)?, load(&b)?);
            for c in [&mut ca, &mut cb] {
                if let Some(r) = replicates {
                    c.replicates = r;
                }
                if let Some(h) = horizon {
                    c.horizon = h;
                }
            }
            let dir = ca.resolve_output_dir(out.as_deref());
            let (report, ra, rb) = compare(Command::Rml, &ca, &cb, &dir)?;
            emit_plotdata(&ra)?;
            emit_plotdata(&rb)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            let collapsed = ra.summary.collapsed() + rb.summary.collapsed();
            if collapsed > 0 {
                return Err(CliError::Collapsed {
                    count: collapsed,
                    summary: dir.join("compare.json").display().to_string(),
                });
            }
            return Ok(());
        }
        Cmd::OracleCheck => {
            let results = oracle_check()?;
            for r in &results {
                println!("{r}");
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            return if failed == 0 { Ok(()) } else { Err(CliError::OracleFailed(failed)) };
        }
    };
    let cfg = args.config()?;
    let dir = cfg.resolve_output_dir(args.out.as_deref());
    let artifact = run(command, &cfg, &dir)?;
    emit_plotdata(&artifact)?;
    let s = &artifact.summary;
    println!("wrote {}", artifact.summary_path.display());
    if let Some(m) = &s.final_mean {
        println!("final mean {m:?}");
    }
    if let Some(v) = &s.final_variance {
        println!("final variance {v:?}");
    }
    if s.collapsed() > 0 {
        return Err(CliError::Collapsed {
            count: s.collapsed(),
            summary: artifact.summary_path.display().to_string(),
        });
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("paris: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
