//! Command-line pipeline: pretrain, transfer and train the CAE, encode,
//! regress with SVR, post-process and evaluate.

pub mod config;
pub mod error;
pub mod stages;
pub mod sweep;

use std::ffi::OsString;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use config::RunConfig;
pub use error::CliError;
pub use stages::Layout;

#[derive(Debug, Parser)]
#[command(
    name = "affectcae",
    version,
    about = "CAE features + SVR for continuous valence/arousal"
)]
pub struct Cli {
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic FER-style CSV and frame/annotation layout.
    SynthData,
    /// Train the classification CNN on the FER CSV.
    Pretrain,
    /// Transfer the pretrained convs into the CAE, freeze and train it.
    TrainCae {
        #[arg(long)]
        no_transfer: bool,
        #[arg(long)]
        freeze: Option<usize>,
        #[arg(long)]
        encoder_size: Option<usize>,
    },
    /// Write encoder features for every subject.
    Encode,
    /// Grid-search and fit one SVR per dimension.
    TrainSvr {
        #[arg(long)]
        delay: Option<usize>,
    },
    /// Fit the post-processing chain on the SVR predictions.
    Postprocess,
    /// Score raw and post-processed predictions.
    Evaluate,
    /// Run the pipeline over freeze / encoder size / delay combinations.
    Sweep,
}

impl Cli {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        match self.command {
            Command::TrainCae {
                no_transfer,
                freeze,
                encoder_size,
            } => {
                if no_transfer {
                    cfg.cae.transfer = false;
                }
                if let Some(f) = freeze {
                    cfg.cae.freeze = f;
                }
                if let Some(d) = encoder_size {
                    cfg.cae.encoder_size = d;
                }
            }
            Command::TrainSvr { delay: Some(n) } => cfg.delay = n,
            _ => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Exclusive claim on an output directory, released on drop.
struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join(".lock");
        let mut f: File = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|_| {
                CliError::Runtime(format!(
                    "{} is locked by another command (remove {} if stale)",
                    dir.display(),
                    path.display()
                ))
            })?;
        let _ = writeln!(f, "{}", std::process::id());
        Ok(Self { path })
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = cli.resolve()?;
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        // a global pool may already exist when called repeatedly in-process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global();
    }
    let _lock = DirLock::acquire(&cfg.out_dir)?;
    let layout = Layout::new(&cfg.out_dir);
    match cli.command {
        Command::SynthData => stages::synth_data(&cfg, &layout),
        Command::Pretrain => stages::pretrain(&cfg, &layout).map(|_| ()),
        Command::TrainCae { .. } => stages::train_cae(&cfg, &layout).map(|_| ()),
        Command::Encode => stages::encode(&cfg, &layout),
        Command::TrainSvr { .. } => stages::train_svr(&cfg, &layout),
        Command::Postprocess => stages::postprocess(&cfg, &layout),
        Command::Evaluate => stages::evaluate(&cfg, &layout).map(|reports| {
            print!("{}", affectcae::metrics::ScoreReport::to_csv(&reports));
        }),
        Command::Sweep => sweep::sweep(&cfg, &layout),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
