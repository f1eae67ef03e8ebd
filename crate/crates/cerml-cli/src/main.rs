use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cerml::config::TrainConfig;
use cerml::eval::{self, Probes, Protocol, SelfMatch};
use cerml::io::{self, DatasetManifest};
use cerml::kernels::{self, PsdReport};
use cerml::model::{self, TrainingData};
use cerml::repr::{self, ReprConfig, VariationKind};
use cerml::solver;
use cerml::synth::{self, SynthConfig};
use cerml::Error;

const PSD_TOL: f64 = 1e-8;

#[derive(Parser)]
#[command(name = "cerml", version, about = "Metric learning between Euclidean points and Riemannian set models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset with train/test manifests.
    Synth(SynthArgs),
    /// Fit a variation model to every set in a manifest.
    Repr(ReprArgs),
    /// Train a projection model.
    Train(TrainArgs),
    /// Score probes against a model's training gallery.
    Eval(EvalArgs),
    /// Numerical diagnostics for a model or a kernel matrix.
    Check(CheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 5)]
    sets_per_class: usize,
    #[arg(long, default_value_t = 20)]
    samples_per_set: usize,
    #[arg(long, default_value_t = 20)]
    dim: usize,
    #[arg(long, default_value_t = 5.0)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sets per class placed in the training manifest.
    #[arg(long, default_value_t = 3)]
    train_sets_per_class: usize,
    /// Output directory for features.csv, train.txt, and test.txt.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReprArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "subspace")]
    model_type: VariationKind,
    /// Subspace dimension (ignored for spd).
    #[arg(long, default_value_t = repr::DEFAULT_SUBSPACE_DIM)]
    d: usize,
    #[arg(long, default_value_t = repr::DEFAULT_RIDGE)]
    ridge: f64,
    #[arg(long)]
    out: PathBuf,
}

/// Overrides applied on top of the config file, one per config key.
#[derive(Args)]
struct ConfigFlags {
    #[arg(long)]
    lambda1: Option<String>,
    #[arg(long)]
    lambda2: Option<String>,
    #[arg(long)]
    k1: Option<String>,
    #[arg(long)]
    k2: Option<String>,
    #[arg(long)]
    out_dim: Option<String>,
    #[arg(long)]
    max_iters: Option<String>,
    #[arg(long)]
    rel_tol: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "on")]
    cross_augment: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    variation: Option<String>,
    #[arg(long)]
    subspace_dim: Option<String>,
    #[arg(long)]
    ridge: Option<String>,
    #[arg(long)]
    jitter: Option<String>,
}

impl ConfigFlags {
    fn apply(&self, cfg: &mut TrainConfig) -> cerml::Result<()> {
        let pairs = [
            ("lambda1", &self.lambda1),
            ("lambda2", &self.lambda2),
            ("k1", &self.k1),
            ("k2", &self.k2),
            ("out_dim", &self.out_dim),
            ("max_iters", &self.max_iters),
            ("rel_tol", &self.rel_tol),
            ("mode", &self.mode),
            ("cross_augment", &self.cross_augment),
            ("seed", &self.seed),
            ("variation", &self.variation),
            ("subspace_dim", &self.subspace_dim),
            ("ridge", &self.ridge),
            ("jitter", &self.jitter),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Training manifest; its stills and sets form the gallery.
    #[arg(long)]
    manifest: PathBuf,
    /// `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: ConfigFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Probe manifest.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "v2s")]
    protocol: Protocol,
    #[arg(long, default_value_t = 0.01)]
    far: f64,
    /// Skip probe i against gallery item i.
    #[arg(long)]
    exclude_self: bool,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct CheckTarget {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Square kernel matrix as CSV.
    #[arg(long)]
    kernel: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    target: CheckTarget,
}

enum Failure {
    Lib(Error),
    /// Diagnostics ran but reported a numerical problem.
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type CmdResult = Result<(), Failure>;

fn emit(pairs: &[(String, String)]) {
    print!("{}", io::render_pairs(pairs));
}

fn kv(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

fn cmd_synth(a: &SynthArgs) -> CmdResult {
    let cfg = SynthConfig {
        classes: a.classes,
        sets_per_class: a.sets_per_class,
        samples_per_set: a.samples_per_set,
        dim: a.dim,
        separation: a.separation,
        seed: a.seed,
        train_sets_per_class: a.train_sets_per_class,
    };
    let data = synth::generate(&cfg)?;
    std::fs::create_dir_all(&a.out).map_err(Error::from)?;
    io::write_csv(&a.out.join("features.csv"), &data.dataset.features)?;
    for (name, entries) in [("train.txt", &data.train), ("test.txt", &data.test)] {
        let m = DatasetManifest { features: "features.csv".into(), entries: entries.clone() };
        std::fs::write(a.out.join(name), m.render()).map_err(Error::from)?;
    }
    emit(&[
        kv("samples", data.dataset.features.ncols()),
        kv("dim", data.dataset.dim()),
        kv("train_entries", data.train.len()),
        kv("test_entries", data.test.len()),
    ]);
    Ok(())
}

fn cmd_repr(a: &ReprArgs) -> CmdResult {
    let ds = io::load_dataset(&a.manifest)?;
    let (sets, labels) = ds.sets()?;
    let cfg = ReprConfig { kind: a.model_type, subspace_dim: a.d, ridge: a.ridge };
    let reps = repr::represent_sets(&sets, &labels, &cfg)?;
    std::fs::write(&a.out, io::render_representations(&reps)).map_err(Error::from)?;
    emit(&[kv("sets", reps.len()), kv("model_type", a.model_type.name())]);
    Ok(())
}

fn load_config(path: Option<&Path>) -> cerml::Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::parse(&std::fs::read_to_string(p)?),
        None => Ok(TrainConfig::default()),
    }
}

fn cmd_train(a: &TrainArgs) -> CmdResult {
    let mut cfg = load_config(a.config.as_deref())?;
    a.flags.apply(&mut cfg)?;
    let ds = io::load_dataset(&a.manifest)?;
    let (sets, labels) = ds.sets()?;
    let data = TrainingData::from_sets(ds.stills()?, &sets, &labels, &cfg)?;
    let m = model::train(data, &cfg)?;
    io::save_model(&a.out, &m)?;
    let n = m.trace.len();
    let rel = if n >= 2 { (m.trace[n - 1] - m.trace[n - 2]).abs() / m.trace[n - 1].abs() } else { f64::NAN };
    let trace: Vec<String> = m.trace.iter().map(|v| format!("{v:e}")).collect();
    emit(&[
        kv("iterations", n.saturating_sub(1)),
        kv("converged", m.converged),
        kv("final_rel_change", format!("{rel:e}")),
        kv("init_residual", format!("{:e}", m.init_residual)),
        kv("out_dim", m.out_dim()),
        kv("trace", trace.join(" ")),
    ]);
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> CmdResult {
    let m = io::load_model(&a.model)?;
    let ds = io::load_dataset(&a.manifest)?;
    let (sets, labels) = ds.sets()?;
    let probes = Probes {
        sets: if sets.is_empty() { Vec::new() } else { m.represent(&sets, &labels)? },
        stills: ds.stills()?.map(|s| (s.points, s.labels)),
    };
    let self_match = if a.exclude_self { SelfMatch::Exclude } else { SelfMatch::Allow };
    let report = eval::evaluate(&m, &probes, a.protocol, self_match, a.far)?;
    let text = io::render_pairs(&report.pairs());
    match &a.out {
        Some(p) => std::fs::write(p, text).map_err(Error::from)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn psd_pairs(prefix: &str, r: &PsdReport) -> Vec<(String, String)> {
    vec![
        kv(&format!("{prefix}psd"), if r.pass { "pass" } else { "fail" }),
        kv(&format!("{prefix}min_eig"), format!("{:e}", r.min_eig)),
        kv(&format!("{prefix}max_eig"), format!("{:e}", r.max_eig)),
    ]
}

fn cmd_check(a: &CheckArgs) -> CmdResult {
    if let Some(path) = &a.target.kernel {
        let k = io::load_kernel(path)?;
        let r = kernels::check_psd(&k, PSD_TOL)?;
        emit(&psd_pairs("", &r));
        return if r.pass { Ok(()) } else { Err(Failure::Check("kernel is not PSD".into())) };
    }
    let path = a.target.model.as_ref().expect("clap requires one target");
    let m = io::load_model(path)?;
    let (problem, bundle) = model::build_problem(&m.data, &m.config)?;
    let opts = model::solve_options(&m.data, &problem, &m.config);
    let mut pairs = Vec::new();
    let mut ok = true;
    let views = [("still.", bundle.still.as_ref()), ("mean.", Some(&bundle.mean)), ("variation.", Some(&bundle.variation))];
    for (prefix, k) in views {
        if let Some(k) = k {
            let r = kernels::check_psd(k, PSD_TOL)?;
            pairs.extend(psd_pairs(prefix, &r));
            ok &= r.pass;
        }
    }
    pairs.push(kv("psd_repair_jitter", format!("{:e}", bundle.psd_jitter)));
    let init = solver::init_fisher(&problem, opts.lambda1, opts.out_dim, opts.jitter)?;
    pairs.push(kv("eigen_residual", format!("{:e}", init.residual)));
    pairs.push(kv("fisher_asymmetry", format!("{:e}", init.system.asymmetry_between.max(init.system.asymmetry_within))));
    for (v, (before, after)) in solver::stationarity_report(&problem, &m.weights, &opts)?.into_iter().enumerate() {
        pairs.push(kv(&format!("gradient.view{v}.before"), format!("{before:e}")));
        pairs.push(kv(&format!("gradient.view{v}.after_update"), format!("{after:e}")));
    }
    emit(&pairs);
    if ok {
        Ok(())
    } else {
        Err(Failure::Check("a training kernel is not PSD".into()))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Repr(a) => cmd_repr(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Check(a) => cmd_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(3)
        }
    }
}
