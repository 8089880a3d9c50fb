use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fragchain::estimators::{
    alpha_mle, estimate_beta, estimate_m1, estimate_mk, lifetime_pairs, mean_se, EstimatorConfig,
};
use fragchain::harness::{alpha_mle_study, alpha_tagged_study, observe, run_study, StudyConfig};
use fragchain::oracle::{oracle_check_lemma, two_point_experiment};
use fragchain::registry::{law_from_key, testfn_from_key};
use fragchain::simulator::{add_noise_with_gamma0, DEFAULT_GAMMA0};
use fragchain::{make_kernel, simulate_tree, DislocationLaw, ObservationSet};

#[derive(Parser)]
#[command(name = "fragchain", version, about = "Simulate fragmentation chains and run the estimators on them")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one tree and dump its frozen frontier as JSON lines.
    Simulate(SimulateArgs),
    /// Empirical measure of a test function.
    Measure {
        #[command(flatten)]
        source: Source,
        /// Test function key (one, id, sq, cube, one-minus, sin, cutoff(g), moment(k,g), kernel(n)).
        #[arg(long = "fn", default_value = "id")]
        func: String,
    },
    /// Estimate the k-th moment of the step law.
    EstimateMoment {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        tuning: Tuning,
        #[arg(long, default_value_t = 1)]
        k: u32,
    },
    /// Estimate the log-scale step density at one or more points.
    EstimateBeta {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        tuning: Tuning,
        /// Points in (0, 1), comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        a: Vec<f64>,
    },
    /// Estimate the self-similarity index.
    EstimateAlpha(AlphaArgs),
    /// Compare tree sums with first-passage paths.
    OracleCheck {
        #[arg(long, default_value = "binary-uniform")]
        law: String,
        #[arg(long)]
        eta: f64,
        #[arg(long = "fn", default_value = "id")]
        func: String,
        #[arg(long, default_value_t = 100_000)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Two-point perturbation experiment.
    TwoPoint {
        #[arg(long, default_value = "binary-uniform")]
        law: String,
        #[arg(long, default_value_t = 1)]
        k: u32,
        #[arg(long, value_delimiter = ',', default_value = "1e-2,1e-3,1e-4")]
        eps: Vec<f64>,
        #[arg(long, default_value_t = 0.1)]
        tau: f64,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run a replicate study over a grid of thresholds.
    RateStudy {
        /// Flat `key = value` config file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override or add a config entry, e.g. `--set eps=1e-2,1e-3`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Output CSV path; overrides the config's `out`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate a vanishing-moment kernel and its derivative.
    Kernel {
        #[arg(long)]
        order: usize,
        #[arg(long)]
        dump: Option<PathBuf>,
        #[arg(long, default_value_t = 1001)]
        points: usize,
    },
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value = "binary-uniform")]
    law: String,
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Record birth times and lifetimes.
    #[arg(long)]
    times: bool,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Defaults to the tree seed.
    #[arg(long)]
    noise_seed: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_GAMMA0)]
    gamma0: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Where an observation set comes from: a dump or a fresh simulation.
#[derive(Args)]
struct Source {
    /// JSON-lines dump written by `simulate`.
    #[arg(long, conflicts_with_all = ["law", "eps"])]
    input: Option<PathBuf>,
    #[arg(long)]
    law: Option<String>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = DEFAULT_GAMMA0)]
    gamma0: f64,
}

impl Source {
    fn load(&self) -> Result<ObservationSet> {
        if let Some(path) = &self.input {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            return ObservationSet::read_jsonl(&text).with_context(|| format!("parsing {}", path.display()));
        }
        let (Some(law), Some(eps)) = (&self.law, self.eps) else {
            bail!("give either --input or both --law and --eps");
        };
        let law = law_from_key(law)?;
        Ok(observe(&law, eps, self.sigma, self.gamma0, 0.0, self.seed)?)
    }
}

#[derive(Args)]
struct Tuning {
    /// Exponential-moment order of the step law; read from the law when omitted.
    #[arg(long)]
    kappa1: Option<f64>,
    /// Order at the origin; read from the law when omitted.
    #[arg(long)]
    kappa2: Option<f64>,
    /// Smoothness of the log-scale density.
    #[arg(long, default_value_t = 0.9)]
    s: f64,
    #[arg(long)]
    kernel_order: Option<usize>,
    #[arg(long)]
    moment_scale: Option<f64>,
    #[arg(long)]
    beta_scale: Option<f64>,
}

impl Tuning {
    fn config(&self, obs: &ObservationSet) -> Result<EstimatorConfig> {
        let (k1, k2) = match (self.kappa1, self.kappa2) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                let law = law_from_key(&obs.law).with_context(|| {
                    format!("law `{}` is not a built-in key; pass --kappa1 and --kappa2", obs.law)
                })?;
                let (a, b) = match &law {
                    DislocationLaw::Binary(b) => (b.kappa1(), b.kappa2()),
                    DislocationLaw::Discrete(_) => (f64::INFINITY, 1.0),
                };
                (self.kappa1.unwrap_or(a), self.kappa2.unwrap_or(b))
            }
        };
        let mut cfg = EstimatorConfig::new(k1, k2, self.s)?;
        cfg.gamma0 = obs.gamma0;
        if let Some(n) = self.kernel_order {
            cfg.kernel_order = n;
        }
        if let Some(sc) = self.moment_scale {
            cfg.moment_rule.scale = sc;
        }
        if let Some(sc) = self.beta_scale {
            cfg.beta_rule.scale = sc;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AlphaMode {
    Tagged,
    Mle,
}

#[derive(Args)]
struct AlphaArgs {
    #[arg(long, value_enum, default_value = "mle")]
    mode: AlphaMode,
    #[arg(long, default_value = "binary-uniform")]
    law: String,
    /// True index used for simulation.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Pairs per replicate in MLE mode.
    #[arg(long, default_value_t = 10_000)]
    pairs: usize,
    /// Fit the MLE to the lifetimes of a dump written with `simulate --times`.
    #[arg(long, conflicts_with = "eps")]
    input: Option<PathBuf>,
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::BufWriter::new(io::stdout().lock())),
    })
}

fn source_header(out: &mut dyn Write, obs: &ObservationSet) -> io::Result<()> {
    writeln!(out, "# law={}", obs.law)?;
    writeln!(out, "# epsilon={}", obs.epsilon)?;
    writeln!(out, "# sigma={}", obs.sigma)?;
    writeln!(out, "# seed={}", obs.seed)?;
    writeln!(out, "# records={}", obs.len())
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let law = law_from_key(&args.law)?;
    let mut obs = simulate_tree(&law, args.eps, args.alpha, args.seed, args.times)?;
    if args.sigma > 0.0 {
        obs = add_noise_with_gamma0(&obs, args.sigma, args.noise_seed.unwrap_or(args.seed), args.gamma0)?;
    }
    log::info!("{} frozen fragments, mass defect {:e}", obs.len(), obs.mass_defect);
    let mut out = sink(args.out.as_deref())?;
    obs.write_jsonl(&mut out)?;
    out.flush()?;
    Ok(())
}

fn estimate_alpha(args: &AlphaArgs) -> Result<()> {
    let mut out = sink(None)?;
    if let Some(path) = &args.input {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let obs = ObservationSet::read_jsonl(&text)?;
        let pairs = lifetime_pairs(&obs);
        if pairs.is_empty() {
            bail!("{} carries no lifetimes; simulate with --times", path.display());
        }
        let est = alpha_mle(&pairs, 0.0, 20.0)?;
        writeln!(out, "# mode=mle\n# input={}\npairs,value\n{},{est}", path.display(), pairs.len())?;
        return Ok(out.flush()?);
    }
    let law = law_from_key(&args.law)?;
    let (mode, (seeds, values)) = match args.mode {
        AlphaMode::Tagged => {
            let eps = args.eps.unwrap_or(1e-6);
            ("tagged", alpha_tagged_study(&law, args.alpha, eps, args.reps, args.seed)?)
        }
        AlphaMode::Mle => {
            // about 2 / eps frozen fragments per binary tree
            let eps = args.eps.unwrap_or((1.5 / args.pairs as f64).min(0.5));
            ("mle", alpha_mle_study(&law, args.alpha, eps, args.pairs, args.reps, args.seed)?)
        }
    };
    writeln!(out, "# mode={mode}\n# law={}\n# alpha={}\n# root_seed={}", args.law, args.alpha, args.seed)?;
    writeln!(out, "replicate,seed,value")?;
    for (i, (s, v)) in seeds.iter().zip(&values).enumerate() {
        writeln!(out, "{i},{s},{v}")?;
    }
    let (m, se) = mean_se(&values);
    writeln!(out, "# summary mean={m} std_error={se}")?;
    Ok(out.flush()?)
}

fn rate_study(config: Option<&Path>, set: &[String], out: Option<&Path>) -> Result<()> {
    let mut overrides = Vec::new();
    for s in set {
        let (k, v) = s
            .split_once('=')
            .with_context(|| format!("`--set {s}` is not KEY=VALUE"))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    let mut text = String::new();
    if let Some(p) = config {
        let raw = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        for line in raw.lines() {
            let key = line.split('#').next().unwrap_or("").split('=').next().unwrap_or("").trim();
            if !overrides.iter().any(|(k, _)| k == key) {
                text.push_str(line);
                text.push('\n');
            }
        }
    }
    for (k, v) in &overrides {
        text.push_str(&format!("{k} = {v}\n"));
    }
    let cfg = StudyConfig::parse(&text)?;
    let outcome = run_study(&cfg)?;
    if let Some(e) = &outcome.aborted {
        log::warn!("study stopped early: {e}");
    }
    let target = out.map(Path::to_path_buf).or_else(|| cfg.out.as_ref().map(PathBuf::from));
    let mut w = sink(target.as_deref())?;
    w.write_all(outcome.to_csv().as_bytes())?;
    Ok(w.flush()?)
}

fn kernel(order: usize, dump: Option<&Path>, points: usize) -> Result<()> {
    if points < 2 {
        bail!("need at least two grid points");
    }
    let phi = make_kernel(order)?;
    let mut out = sink(dump)?;
    writeln!(out, "# order={order}\na,phi,dphi")?;
    for i in 0..points {
        let a = i as f64 / (points - 1) as f64;
        writeln!(out, "{a},{},{}", phi.eval(a), phi.derivative(a).unwrap_or(f64::NAN))?;
    }
    Ok(out.flush()?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Simulate(args) => simulate(&args),
        Cmd::Measure { source, func } => {
            let obs = source.load()?;
            let g = testfn_from_key(&func)?;
            let mut out = sink(None)?;
            source_header(&mut out, &obs)?;
            writeln!(out, "fn,value\n{func},{}", fragchain::estimators::empirical_measure(&obs, &g))?;
            Ok(out.flush()?)
        }
        Cmd::EstimateMoment { source, tuning, k } => {
            let obs = source.load()?;
            let cfg = tuning.config(&obs)?;
            let gamma = cfg.moment_gamma(obs.epsilon)?;
            let v = if k == 1 { estimate_m1(&obs, &cfg)? } else { estimate_mk(&obs, k, &cfg)? };
            let mut out = sink(None)?;
            source_header(&mut out, &obs)?;
            writeln!(out, "k,gamma,value\n{k},{gamma},{v}")?;
            Ok(out.flush()?)
        }
        Cmd::EstimateBeta { source, tuning, a } => {
            let obs = source.load()?;
            let cfg = tuning.config(&obs)?;
            let gamma = cfg.beta_gamma(obs.epsilon)?;
            let mut out = sink(None)?;
            source_header(&mut out, &obs)?;
            writeln!(out, "# kernel_order={}\na,gamma,value", cfg.kernel_order)?;
            for x in a {
                writeln!(out, "{x},{gamma},{}", estimate_beta(&obs, x, &cfg)?)?;
            }
            Ok(out.flush()?)
        }
        Cmd::EstimateAlpha(args) => estimate_alpha(&args),
        Cmd::OracleCheck {
            law,
            eta,
            func,
            reps,
            seed,
        } => {
            let r = oracle_check_lemma(&law_from_key(&law)?, eta, &testfn_from_key(&func)?, reps, seed)?;
            let mut out = sink(None)?;
            writeln!(out, "# root_seed={seed}")?;
            writeln!(out, "law,eta,fn,reps,tree_mean,tree_se,path_mean,path_se,z")?;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.law, r.eta, func, r.reps, r.tree_mean, r.tree_se, r.path_mean, r.path_se, r.z
            )?;
            Ok(out.flush()?)
        }
        Cmd::TwoPoint {
            law,
            k,
            eps,
            tau,
            reps,
            seed,
        } => {
            let DislocationLaw::Binary(rho0) = law_from_key(&law)? else {
                bail!("two-point needs a binary law with a density");
            };
            let mut out = sink(None)?;
            writeln!(out, "# law={law}\n# root_seed={seed}")?;
            writeln!(
                out,
                "epsilon,tau,k,n,r_k,kl,kl_plugin_mean,kl_plugin_se,pinsker_bound,kl_ceiling,max_term,term_bound,moment_shift,predicted_shift"
            )?;
            for e in eps {
                let r = two_point_experiment(&rho0, k, e, tau, reps, seed)?;
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    r.epsilon,
                    r.tau,
                    r.k,
                    r.n,
                    r.r_k,
                    r.kl,
                    r.kl_plugin_mean,
                    r.kl_plugin_se,
                    r.pinsker_bound,
                    r.kl_ceiling,
                    r.max_term,
                    r.term_bound,
                    r.moment_shift,
                    r.predicted_shift
                )?;
            }
            Ok(out.flush()?)
        }
        Cmd::RateStudy { config, set, out } => rate_study(config.as_deref(), &set, out.as_deref()),
        Cmd::Kernel { order, dump, points } => kernel(order, dump.as_deref(), points),
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    run(cli)
}
