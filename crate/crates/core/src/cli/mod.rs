//! Command-line driver.
//!
//! Every command reads an optional TOML config, applies flag overrides (flags
//! win), validates what the command needs, and then runs. Outputs embed the
//! resolved config: as `# | ` comment lines in signal files, `#` lines in CSV
//! files, a `config` key in JSON files and `meta.config` in checkpoints. The
//! output directory and worker count are left out of the embedded config
//! because they do not affect results.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::RngCore as _;
use serde::{Deserialize, Serialize};

use crate::data::{gen_clean, gen_noise, mix_at_snr, CleanSpec, NoiseKind, NoiseSpec};
use crate::denoiser::{denoise_with_choice, DenoiserConfig};
use crate::error::{IpsdError, Result};
use crate::io::{read_signal, write_signal};
use crate::metrics::{fmt_db, write_records_csv, MetricRecord, WelchConfig};
use crate::par;
use crate::policy::{denoise_with_policy, train_ipsd, PgMode, PolicyNet, TrainConfig};
use crate::rng;
use crate::signal::{interleaved_choice, PartitionCatalog, Signal, WindowGrid};
use crate::zeroshot::{run_zero_shot, write_history_csv, LilUcbConfig, ZeroShotConfig};

#[derive(Debug, Parser)]
#[command(name = "ipsd", version, about = "Self-supervised 1D signal denoising with learned partitions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate clean, noise and noisy signals plus a manifest with an 80/20 split.
    GenData {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of signals to generate.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train a partition policy on the training split of a dataset.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Dataset directory written by gen-data.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Denoise one signal, or a dataset's test split, with a trained policy.
    Denoise {
        #[command(flatten)]
        common: CommonArgs,
        /// Policy checkpoint stem (e.g. run/policy).
        #[arg(long)]
        policy: Option<PathBuf>,
        #[command(flatten)]
        input: InputArgs,
    },
    /// Denoise one signal with no training set.
    Zeroshot {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        input: InputArgs,
    },
    /// Compare interleaved splitting, the trained policy and the zero-shot search.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Compute metrics of a denoised signal against its clean reference.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        clean: Option<PathBuf>,
        #[arg(long)]
        noisy: Option<PathBuf>,
        #[arg(long)]
        denoised: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub window_len: Option<usize>,
    /// Target input SNR of generated data.
    #[arg(long, allow_negative_numbers = true)]
    pub snr_db: Option<f64>,
    #[arg(long, value_enum)]
    pub noise: Option<NoiseArg>,
    /// Noise recording used with `--noise file`.
    #[arg(long)]
    pub noise_file: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<PgMode>,
    /// Upper bound on concurrent work; 0 uses every core.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    /// Drop trailing samples so the length is a multiple of the window length.
    #[arg(long)]
    pub truncate: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct InputArgs {
    /// Signal file to process.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Clean reference for the input, enables metrics.
    #[arg(long)]
    pub clean: Option<PathBuf>,
    /// Dataset directory; its test split is processed instead of `--input`.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum NoiseArg {
    Wgn,
    Emg,
    File,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

impl OutputFormat {
    fn ext(self) -> &'static str {
        match self {
            OutputFormat::Json => "json",
            OutputFormat::Csv => "csv",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    GenData,
    Train,
    Denoise,
    Zeroshot,
    Ablate,
    Eval,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    #[default]
    Text,
    F32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub count: usize,
    pub file_format: FileFormat,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            count: 10,
            file_format: FileFormat::Text,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clean: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noisy: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub denoised: Option<PathBuf>,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seed: u64,
    pub window_len: usize,
    pub format: OutputFormat,
    pub truncate: bool,
    #[serde(skip_serializing)]
    pub workers: usize,
    pub signal: CleanSpec,
    pub noise: NoiseSpec,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub bandit: LilUcbConfig,
    pub denoiser: DenoiserConfig,
    pub welch: WelchConfig,
    pub paths: Paths,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::default(),
            seed: 0,
            window_len: 8,
            format: OutputFormat::Json,
            truncate: false,
            workers: 0,
            signal: CleanSpec::default(),
            noise: NoiseSpec::default(),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            bandit: LilUcbConfig::default(),
            denoiser: DenoiserConfig::default(),
            welch: WelchConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| IpsdError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| IpsdError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| IpsdError::Config(format!("{}: {e}", path.display())))
    }

    /// The config as embedded in outputs.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    fn apply(&mut self, c: &CommonArgs) -> Result<()> {
        if let Some(v) = c.seed {
            self.seed = v;
        }
        if let Some(v) = c.window_len {
            self.window_len = v;
        }
        if let Some(v) = c.snr_db {
            self.noise.target_snr_db = v;
        }
        match c.noise {
            Some(NoiseArg::Wgn) => self.noise.kind = NoiseKind::Wgn,
            Some(NoiseArg::Emg) => self.noise.kind = NoiseKind::Emg,
            Some(NoiseArg::File) => {
                let path = c
                    .noise_file
                    .clone()
                    .or_else(|| match &self.noise.kind {
                        NoiseKind::File { path } => Some(path.clone()),
                        _ => None,
                    })
                    .ok_or_else(|| IpsdError::Config("--noise file needs --noise-file".into()))?;
                self.noise.kind = NoiseKind::File { path };
            }
            None => {}
        }
        if let Some(v) = c.mode {
            self.train.mode = v;
        }
        if let Some(v) = c.workers {
            self.workers = v;
        }
        if let Some(v) = &c.out {
            self.paths.out = Some(v.clone());
        }
        if let Some(v) = c.format {
            self.format = v;
        }
        if c.truncate {
            self.truncate = true;
        }
        Ok(())
    }

    /// Checks everything `self.mode` needs before any work starts.
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: IpsdError| IpsdError::Config(e.to_string());
        PartitionCatalog::enumerate(self.window_len).map_err(cfg_err)?;
        let mut train = self.train.clone();
        train.window_len = self.window_len;
        train.validate().map_err(cfg_err)?;
        self.bandit.validate().map_err(cfg_err)?;
        self.denoiser.criterion.validate().map_err(cfg_err)?;
        self.welch.validate().map_err(cfg_err)?;
        self.require_out()?;
        let need = |p: &Option<PathBuf>, flag: &str| {
            p.as_ref()
                .map(|_| ())
                .ok_or_else(|| IpsdError::Config(format!("{:?} needs --{flag}", self.mode)))
        };
        match self.mode {
            Mode::GenData => {
                if self.data.count == 0 {
                    return Err(IpsdError::Config("empty dataset: zero signals requested".into()));
                }
                self.signal.validate().map_err(cfg_err)?;
                self.noise.validate().map_err(cfg_err)?;
                let len = self.signal.len();
                if !matches!(self.signal.family, crate::data::CleanFamily::File { .. })
                    && len % self.window_len != 0
                    && !self.truncate
                {
                    return Err(IpsdError::Config(format!(
                        "signal length {len} is not a multiple of the window length {} (use --truncate)",
                        self.window_len
                    )));
                }
            }
            Mode::Train | Mode::Ablate => need(&self.paths.data, "data")?,
            Mode::Denoise => {
                need(&self.paths.policy, "policy")?;
                if self.paths.input.is_none() && self.paths.data.is_none() {
                    return Err(IpsdError::Config("denoise needs --input or --data".into()));
                }
            }
            Mode::Zeroshot => {
                if self.paths.input.is_none() && self.paths.data.is_none() {
                    return Err(IpsdError::Config("zeroshot needs --input or --data".into()));
                }
            }
            Mode::Eval => {
                need(&self.paths.clean, "clean")?;
                need(&self.paths.noisy, "noisy")?;
                need(&self.paths.denoised, "denoised")?;
            }
        }
        Ok(())
    }

    fn require_out(&self) -> Result<&Path> {
        self.paths
            .out
            .as_deref()
            .ok_or_else(|| IpsdError::Config("--out is required".into()))
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            window_len: self.window_len,
            ..self.train.clone()
        }
    }

    fn zero_shot_config(&self) -> ZeroShotConfig {
        ZeroShotConfig {
            bandit: self.bandit.clone(),
            window_len: self.window_len,
            exec: self.train.exec,
        }
    }
}

/// Merge the config file (if any), the command's own flags and the common
/// flags into one validated config.
pub fn resolve(command: &Command) -> Result<ExperimentConfig> {
    let common = match command {
        Command::GenData { common, .. }
        | Command::Train { common, .. }
        | Command::Denoise { common, .. }
        | Command::Zeroshot { common, .. }
        | Command::Ablate { common, .. }
        | Command::Eval { common, .. } => common,
    };
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(common)?;
    let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
        if v.is_some() {
            slot.clone_from(v);
        }
    };
    match command {
        Command::GenData { count, .. } => {
            cfg.mode = Mode::GenData;
            if let Some(n) = count {
                cfg.data.count = *n;
            }
        }
        Command::Train { data, .. } => {
            cfg.mode = Mode::Train;
            set(&mut cfg.paths.data, data);
        }
        Command::Denoise { policy, input, .. } => {
            cfg.mode = Mode::Denoise;
            set(&mut cfg.paths.policy, policy);
            set(&mut cfg.paths.input, &input.input);
            set(&mut cfg.paths.clean, &input.clean);
            set(&mut cfg.paths.data, &input.data);
        }
        Command::Zeroshot { input, .. } => {
            cfg.mode = Mode::Zeroshot;
            set(&mut cfg.paths.input, &input.input);
            set(&mut cfg.paths.clean, &input.clean);
            set(&mut cfg.paths.data, &input.data);
        }
        Command::Ablate { data, .. } => {
            cfg.mode = Mode::Ablate;
            set(&mut cfg.paths.data, data);
        }
        Command::Eval {
            clean, noisy, denoised, ..
        } => {
            cfg.mode = Mode::Eval;
            set(&mut cfg.paths.clean, clean);
            set(&mut cfg.paths.noisy, noisy);
            set(&mut cfg.paths.denoised, denoised);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Process exit code for an error.
pub fn exit_code(err: &IpsdError) -> i32 {
    match err.root() {
        IpsdError::Config(_) | IpsdError::InvalidArgument(_) => 2,
        IpsdError::TrainingDiverged { .. } | IpsdError::UpdateDiverged(_) => 3,
        IpsdError::Io { .. } | IpsdError::Format { .. } => 4,
        _ => 1,
    }
}

/// Parse-free entry point used by `main` and the integration tests.
pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve(&cli.command)?;
    let workers = cfg.workers;
    par::with_workers(workers, || execute(&cfg))
}

pub fn execute(cfg: &ExperimentConfig) -> Result<()> {
    let out = cfg.require_out()?;
    fs::create_dir_all(out).map_err(|e| IpsdError::io(out, e))?;
    match cfg.mode {
        Mode::GenData => gen_data(cfg, out),
        Mode::Train => train(cfg, out),
        Mode::Denoise => denoise(cfg, out),
        Mode::Zeroshot => zeroshot(cfg, out),
        Mode::Ablate => ablate(cfg, out),
        Mode::Eval => eval(cfg, out),
    }
}

// stream keys below the per-signal index range
const CLEAN_KEY: u64 = 1;
const NOISE_KEY: u64 = 2;
const SPLIT_KEY: u64 = 3;
const DENOISE_KEY: u64 = 4;
const ZERO_KEY: u64 = 5;

/// RNG used by `denoise` for the signal with index `i` (0 for `--input`).
pub fn denoise_rng(seed: u64, i: usize) -> rng::Rng {
    rng::derive2(seed, DENOISE_KEY, i as u64)
}

/// Seed of the zero-shot search for the signal with index `i`.
pub fn zero_shot_seed(seed: u64, i: usize) -> u64 {
    rng::derive2(seed, ZERO_KEY, i as u64).next_u64()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub clean: String,
    pub noise: String,
    pub noisy: String,
    /// Factor applied to the noise before mixing.
    pub noise_scale: f64,
    pub input_snr_db: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: ExperimentConfig,
    pub signals: Vec<ManifestEntry>,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Number of training signals under the 80/20 split.
pub fn train_count(n: usize) -> usize {
    (4 * n + 2) / 5
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| IpsdError::format(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| IpsdError::io(path, e))
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| IpsdError::io(path, e))
}

fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let n = cfg.data.count;
    let ext = match cfg.data.file_format {
        FileFormat::Text => "txt",
        FileFormat::F32 => "f32",
    };
    let mut order: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng::derive(cfg.seed, SPLIT_KEY));
    let mut is_train = vec![false; n];
    for &i in &order[..train_count(n)] {
        is_train[i] = true;
    }
    let comment = cfg.to_toml();
    let mut signals = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("{i:03}");
        let ctx = |e: IpsdError| e.for_signal(id.clone());
        let mut clean = gen_clean(&cfg.signal, &mut rng::derive2(cfg.seed, CLEAN_KEY, i as u64)).map_err(ctx)?;
        if clean.len() % cfg.window_len != 0 {
            if !cfg.truncate {
                return Err(IpsdError::Config(format!(
                    "signal {id}: length {} is not a multiple of the window length {} (use --truncate)",
                    clean.len(),
                    cfg.window_len
                )));
            }
            clean = clean.truncated_to_multiple(cfg.window_len).map_err(ctx)?;
        }
        let noise = gen_noise(
            &cfg.noise.kind,
            clean.len(),
            clean.sample_rate_hz(),
            &mut rng::derive2(cfg.seed, NOISE_KEY, i as u64),
        )
        .map_err(ctx)?;
        let (noisy, scale) = mix_at_snr(&clean, &noise, cfg.noise.target_snr_db).map_err(ctx)?;
        let scaled = noise.with_samples(noise.samples().iter().map(|v| v * scale).collect())?;
        let entry = ManifestEntry {
            id: id.clone(),
            split: if is_train[i] { Split::Train } else { Split::Test },
            clean: format!("clean_{id}.{ext}"),
            noise: format!("noise_{id}.{ext}"),
            noisy: format!("noisy_{id}.{ext}"),
            noise_scale: scale,
            input_snr_db: crate::metrics::snr_db(&clean, &noisy)?,
        };
        write_signal(&out.join(&entry.clean), &clean, Some(&comment))?;
        write_signal(&out.join(&entry.noise), &scaled, Some(&comment))?;
        write_signal(&out.join(&entry.noisy), &noisy, Some(&comment))?;
        signals.push(entry);
    }
    let pick = |s: Split| signals.iter().filter(|e| e.split == s).map(|e| e.id.clone()).collect();
    let manifest = DatasetManifest {
        config: cfg.clone(),
        train: pick(Split::Train),
        test: pick(Split::Test),
        signals,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    println!(
        "wrote {n} signals ({} train, {} test) to {}",
        manifest.train.len(),
        manifest.test.len(),
        out.display()
    );
    Ok(())
}

/// A dataset read back from disk.
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| IpsdError::io(&path, e))?;
        let manifest = serde_json::from_str(&text).map_err(|e| IpsdError::format(&path, e.to_string()))?;
        Ok(Dataset {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn entry(&self, id: &str) -> Result<&ManifestEntry> {
        self.manifest
            .signals
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| IpsdError::format(self.dir.join(MANIFEST_FILE), format!("unknown signal id {id}")))
    }

    pub fn split(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.manifest.train,
            Split::Test => &self.manifest.test,
        }
    }

    pub fn read(&self, file: &str) -> Result<Signal> {
        read_signal(&self.dir.join(file))
    }
}

fn fit_length(s: Signal, cfg: &ExperimentConfig, what: &str) -> Result<Signal> {
    if s.len() % cfg.window_len == 0 {
        return Ok(s);
    }
    if cfg.truncate {
        return s.truncated_to_multiple(cfg.window_len);
    }
    Err(IpsdError::Config(format!(
        "{what}: length {} is not a multiple of the window length {} (use --truncate)",
        s.len(),
        cfg.window_len
    )))
}

fn load_noisy(ds: &Dataset, id: &str, cfg: &ExperimentConfig) -> Result<Signal> {
    let e = ds.entry(id)?;
    fit_length(ds.read(&e.noisy)?, cfg, id).map_err(|err| err.for_signal(id))
}

fn load_pair(ds: &Dataset, id: &str, cfg: &ExperimentConfig) -> Result<(Signal, Signal)> {
    let e = ds.entry(id)?;
    let clean = fit_length(ds.read(&e.clean)?, cfg, id).map_err(|err| err.for_signal(id))?;
    Ok((clean, load_noisy(ds, id, cfg)?))
}

fn train_policy(cfg: &ExperimentConfig, ds: &Dataset) -> Result<(PolicyNet, crate::policy::TrainReport)> {
    let ids = ds.split(Split::Train);
    if ids.is_empty() {
        return Err(IpsdError::Config("dataset has no training signals".into()));
    }
    let trainset = ids
        .iter()
        .map(|id| load_noisy(ds, id, cfg))
        .collect::<Result<Vec<_>>>()?;
    train_ipsd(&trainset, &cfg.train_config(), &cfg.denoiser, cfg.seed)
}

fn train(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let ds = Dataset::open(cfg.paths.data.as_deref().expect("validated"))?;
    let (net, report) = train_policy(cfg, &ds)?;
    let comment = cfg.to_toml();
    let mut meta = toml::Table::new();
    meta.insert(
        "config".into(),
        toml::Value::try_from(cfg).map_err(|e| IpsdError::Config(e.to_string()))?,
    );
    net.save(&out.join("policy"), meta)?;
    let hist = out.join("train_history.csv");
    report
        .write_csv(create(&hist)?, Some(&comment))
        .map_err(|e| IpsdError::io(&hist, e))?;
    let last = report.iterations.last().map(|r| r.mean_reward).unwrap_or(f64::NAN);
    println!(
        "trained {} updates (plateaued: {}), final mean reward {last}",
        report.iterations.len(),
        report.plateaued
    );
    Ok(())
}

fn output_name(input: &Path, tag: &str) -> String {
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("signal");
    let ext = input.extension().and_then(|s| s.to_str()).unwrap_or("txt");
    format!("{stem}.{tag}.{ext}")
}

fn write_metrics(cfg: &ExperimentConfig, path_stem: &Path, records: &[MetricRecord]) -> Result<()> {
    let path = path_stem.with_extension(cfg.format.ext());
    match cfg.format {
        OutputFormat::Json => {
            #[derive(Serialize)]
            struct Report<'a> {
                config: &'a ExperimentConfig,
                records: &'a [MetricRecord],
            }
            write_json(&path, &Report { config: cfg, records })
        }
        OutputFormat::Csv => write_records_csv(create(&path)?, records, Some(&cfg.to_toml()))
            .map_err(|e| IpsdError::io(&path, e)),
    }
}

fn read_input(cfg: &ExperimentConfig) -> Result<(PathBuf, Signal, Option<Signal>)> {
    let path = cfg.paths.input.clone().expect("validated");
    let s = fit_length(read_signal(&path)?, cfg, &path.display().to_string())?;
    let clean = match &cfg.paths.clean {
        Some(p) => Some(fit_length(read_signal(p)?, cfg, &p.display().to_string())?),
        None => None,
    };
    Ok((path, s, clean))
}

fn denoise(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let net = PolicyNet::load(cfg.paths.policy.as_deref().expect("validated"))?;
    if net.window_len() != cfg.window_len {
        return Err(IpsdError::Config(format!(
            "policy was trained with window length {}, config asks for {}",
            net.window_len(),
            cfg.window_len
        )));
    }
    let comment = cfg.to_toml();
    if let Some(dir) = cfg.paths.data.as_deref().filter(|_| cfg.paths.input.is_none()) {
        let ds = Dataset::open(dir)?;
        let mut records = Vec::new();
        for (i, id) in ds.split(Split::Test).iter().enumerate() {
            let (clean, noisy) = load_pair(&ds, id, cfg)?;
            let (_, d) = denoise_with_policy(&net, &noisy, &cfg.denoiser, &mut denoise_rng(cfg.seed, i))
                .map_err(|e| e.for_signal(id.as_str()))?;
            write_signal(&out.join(format!("denoised_{id}.txt")), &d.denoised, Some(&comment))?;
            records.push(MetricRecord::evaluate(id.as_str(), &clean, &noisy, &d.denoised, &cfg.welch)?);
        }
        return write_metrics(cfg, &out.join("metrics"), &records);
    }
    let (path, s, clean) = read_input(cfg)?;
    let (_, d) = denoise_with_policy(&net, &s, &cfg.denoiser, &mut denoise_rng(cfg.seed, 0))?;
    write_signal(&out.join(output_name(&path, "denoised")), &d.denoised, Some(&comment))?;
    if let Some(clean) = clean {
        let record = MetricRecord::evaluate(path.display().to_string(), &clean, &s, &d.denoised, &cfg.welch)?;
        write_metrics(cfg, &out.join("metrics"), &[record])?;
    }
    Ok(())
}

fn zeroshot(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let comment = cfg.to_toml();
    if let Some(dir) = cfg.paths.data.as_deref().filter(|_| cfg.paths.input.is_none()) {
        let ds = Dataset::open(dir)?;
        let mut records = Vec::new();
        for (i, id) in ds.split(Split::Test).iter().enumerate() {
            let (clean, noisy) = load_pair(&ds, id, cfg)?;
            let z = run_zero_shot(&noisy, &cfg.zero_shot_config(), &cfg.denoiser, zero_shot_seed(cfg.seed, i))
                .map_err(|e| e.for_signal(id.as_str()))?;
            write_signal(&out.join(format!("denoised_{id}.txt")), &z.denoised, Some(&comment))?;
            let hist = out.join(format!("bandit_{id}.csv"));
            write_history_csv(create(&hist)?, &z.history, Some(&comment)).map_err(|e| IpsdError::io(&hist, e))?;
            records.push(MetricRecord::evaluate(id.as_str(), &clean, &noisy, &z.denoised, &cfg.welch)?);
        }
        return write_metrics(cfg, &out.join("metrics"), &records);
    }
    let (path, s, clean) = read_input(cfg)?;
    let z = run_zero_shot(&s, &cfg.zero_shot_config(), &cfg.denoiser, zero_shot_seed(cfg.seed, 0))?;
    write_signal(&out.join(output_name(&path, "denoised")), &z.denoised, Some(&comment))?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("signal");
    let hist = out.join(format!("{stem}.bandit.csv"));
    write_history_csv(create(&hist)?, &z.history, Some(&comment)).map_err(|e| IpsdError::io(&hist, e))?;
    if let Some(clean) = clean {
        let record = MetricRecord::evaluate(path.display().to_string(), &clean, &s, &z.denoised, &cfg.welch)?;
        write_metrics(cfg, &out.join("metrics"), &[record])?;
    }
    println!(
        "best partition {} after {} rounds{}",
        z.best_arm,
        z.state.rounds(),
        if z.capped { " (round cap reached)" } else { "" }
    );
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ID")]
    Interleaved,
    #[serde(rename = "iPSD")]
    Policy,
    #[serde(rename = "iPSD-Zero")]
    ZeroShot,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Interleaved, Method::Policy, Method::ZeroShot];
}

fn method_name(m: Method) -> String {
    match m {
        Method::Interleaved => "ID",
        Method::Policy => "iPSD",
        Method::ZeroShot => "iPSD-Zero",
    }
    .to_string()
}

/// Mean and standard deviation (population) of one metric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub method: Method,
    /// Noise kind and input SNR, e.g. `wgn 0 dB`.
    pub condition: String,
    pub snr_db: MeanStd,
    pub psnr_db: MeanStd,
    pub spectral_mse: MeanStd,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRecord {
    pub method: Method,
    #[serde(flatten)]
    pub metrics: MetricRecord,
}

fn condition(cfg: &NoiseSpec) -> String {
    let kind = match &cfg.kind {
        NoiseKind::Wgn => "wgn",
        NoiseKind::Emg => "emg",
        NoiseKind::File { .. } => "file",
    };
    format!("{kind} {} dB", cfg.target_snr_db)
}

fn ablate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let ds = Dataset::open(cfg.paths.data.as_deref().expect("validated"))?;
    let test = ds.split(Split::Test);
    if test.is_empty() {
        return Err(IpsdError::Config("dataset has no test signals".into()));
    }
    let (net, _) = train_policy(cfg, &ds)?;
    let catalog = PartitionCatalog::enumerate(cfg.window_len)?;
    let mut records = Vec::new();
    for (i, id) in test.iter().enumerate() {
        let (clean, noisy) = load_pair(&ds, id, cfg)?;
        let ctx = |e: IpsdError| e.for_signal(id.as_str());
        let grid = WindowGrid::for_signal(&noisy, cfg.window_len).map_err(ctx)?;
        let id_out = denoise_with_choice(
            &noisy,
            &interleaved_choice(&grid, &catalog)?,
            &catalog,
            &cfg.denoiser,
            &mut denoise_rng(cfg.seed, i),
        )
        .map_err(ctx)?;
        let (_, pol) = denoise_with_policy(&net, &noisy, &cfg.denoiser, &mut denoise_rng(cfg.seed, i)).map_err(ctx)?;
        let zero = run_zero_shot(&noisy, &cfg.zero_shot_config(), &cfg.denoiser, zero_shot_seed(cfg.seed, i))
            .map_err(ctx)?;
        for (method, d) in Method::ALL.into_iter().zip([&id_out.denoised, &pol.denoised, &zero.denoised]) {
            records.push(AblationRecord {
                method,
                metrics: MetricRecord::evaluate(id.as_str(), &clean, &noisy, d, &cfg.welch)?,
            });
        }
    }
    let cond = condition(&ds.manifest.config.noise);
    let rows: Vec<AblationRow> = Method::ALL
        .iter()
        .map(|&m| {
            let of = |f: fn(&MetricRecord) -> f64| {
                let v: Vec<f64> = records.iter().filter(|r| r.method == m).map(|r| f(&r.metrics)).collect();
                MeanStd::of(&v)
            };
            AblationRow {
                method: m,
                condition: cond.clone(),
                snr_db: of(|r| r.output_snr_db),
                psnr_db: of(|r| r.psnr_db),
                spectral_mse: of(|r| r.spectral_mse),
            }
        })
        .collect();
    write_ablation(cfg, out, &rows, &records)?;
    for r in &rows {
        println!(
            "{:<10} SNR {:>7.2} ± {:.2} dB  PSNR {:>7.2} ± {:.2} dB  S-MSE {:>9.3} ± {:.3}",
            method_name(r.method),
            r.snr_db.mean,
            r.snr_db.std,
            r.psnr_db.mean,
            r.psnr_db.std,
            r.spectral_mse.mean,
            r.spectral_mse.std
        );
    }
    Ok(())
}

fn write_ablation(cfg: &ExperimentConfig, out: &Path, rows: &[AblationRow], records: &[AblationRecord]) -> Result<()> {
    match cfg.format {
        OutputFormat::Json => {
            #[derive(Serialize)]
            struct Report<'a> {
                config: &'a ExperimentConfig,
                table: &'a [AblationRow],
                records: &'a [AblationRecord],
            }
            write_json(
                &out.join("ablation.json"),
                &Report {
                    config: cfg,
                    table: rows,
                    records,
                },
            )
        }
        OutputFormat::Csv => {
            let comment = cfg.to_toml();
            let path = out.join("ablation.csv");
            let mut w = create(&path)?;
            let io = |e: std::io::Error| IpsdError::io(&path, e);
            for line in comment.lines() {
                writeln!(w, "# {line}").map_err(io)?;
            }
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record([
                "method",
                "condition",
                "snr_db_mean",
                "snr_db_std",
                "psnr_db_mean",
                "psnr_db_std",
                "spectral_mse_mean",
                "spectral_mse_std",
            ])
            .map_err(|e| IpsdError::format(&path, e.to_string()))?;
            for r in rows {
                let mut rec = vec![method_name(r.method), r.condition.clone()];
                for m in [r.snr_db, r.psnr_db, r.spectral_mse] {
                    rec.push(m.mean.to_string());
                    rec.push(m.std.to_string());
                }
                csv.write_record(&rec).map_err(|e| IpsdError::format(&path, e.to_string()))?;
            }
            csv.flush().map_err(io)?;
            let path = out.join("ablation_records.csv");
            let mut w = create(&path)?;
            for line in comment.lines() {
                writeln!(w, "# {line}").map_err(|e| IpsdError::io(&path, e))?;
            }
            let mut csv = csv::Writer::from_writer(w);
            let fail = |e: csv::Error| IpsdError::format(&path, e.to_string());
            csv.write_record([
                "method",
                "signal_id",
                "input_snr_db",
                "output_snr_db",
                "psnr_db",
                "spectral_mse",
                "welch_hash",
            ])
            .map_err(fail)?;
            for r in records {
                let m = &r.metrics;
                csv.write_record([
                    method_name(r.method),
                    m.signal_id.clone(),
                    fmt_db(m.input_snr_db),
                    fmt_db(m.output_snr_db),
                    fmt_db(m.psnr_db),
                    m.spectral_mse.to_string(),
                    m.welch_hash.clone(),
                ])
                .map_err(fail)?;
            }
            csv.flush().map_err(|e| IpsdError::io(&path, e))
        }
    }
}

fn eval(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let read = |p: &Option<PathBuf>| read_signal(p.as_deref().expect("validated"));
    let (clean, noisy, denoised) = (read(&cfg.paths.clean)?, read(&cfg.paths.noisy)?, read(&cfg.paths.denoised)?);
    let id = cfg
        .paths
        .denoised
        .as_deref()
        .map(|p| p.display().to_string())
        .unwrap_or_default();
    let record = MetricRecord::evaluate(id, &clean, &noisy, &denoised, &cfg.welch)?;
    write_metrics(cfg, &out.join("metrics"), std::slice::from_ref(&record))?;
    println!(
        "output SNR {} dB, PSNR {} dB, spectral MSE {}",
        fmt_db(record.output_snr_db),
        fmt_db(record.psnr_db),
        record.spectral_mse
    );
    Ok(())
}
