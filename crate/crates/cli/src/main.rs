use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use temporl::agent::{evaluate, Greedy, Mode, ObsEncoder};
use temporl::flowprior::FlowPrior;
use temporl::harness::{self, ExperimentConfig, RunRecord, Sampler};
use temporl::mazeworld::{MazeEnv, OfflineDataset};
use temporl::metrics::{self, MetricRow};
use temporl::rng::{self, Stream};
use temporl::Error;

#[derive(Parser)]
#[command(
    name = "temporl",
    version,
    about = "Temporal action priors for exploration in goal-conditioned SAC"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Start from the reduced single-CPU preset instead of the full-scale defaults.
    #[arg(long, global = true)]
    desk: bool,
    /// Output directory (defaults to $TEMPORL_OUT, then the config's out_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Roll out the scripted expert and save the dataset CSV.
    Collect {
        #[arg(long)]
        layout: Option<String>,
        #[arg(long = "n-traj")]
        n_traj: Option<String>,
        #[arg(long)]
        len: Option<String>,
        #[arg(long)]
        noise: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Fit a flow prior to a dataset.
    TrainPrior {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// none, last-actions:K, state or state-last-action.
        #[arg(long)]
        cond: Option<String>,
        #[arg(long)]
        epochs: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Downstream learning, one run per seed.
    #[command(alias = "train")]
    TrainAgent {
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        layout: Option<String>,
        /// `a..b` (inclusive) or a comma-separated list.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        prior: Option<PathBuf>,
        /// Demonstrations for sac_bc.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a saved policy with deterministic rollouts.
    Eval {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        layout: Option<String>,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Coverage and radius of gyration of open-loop sampler rollouts.
    ExploreEval {
        #[arg(long, conflicts_with = "policy")]
        prior: Option<PathBuf>,
        /// `uniform` for the uniform action sampler.
        #[arg(long)]
        policy: Option<String>,
        #[arg(long)]
        layout: Option<String>,
        #[arg(long)]
        seeds: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Power spectra of dataset, prior and uniform action sequences.
    Psd {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        prior: Option<PathBuf>,
        #[arg(long)]
        layout: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Aggregate run records (`*.json`) in a directory into a metrics CSV.
    Metrics {
        #[arg(long)]
        runs: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Print the resolved config, or only the keys that differ from the
    /// full-scale defaults.
    Config {
        #[arg(long)]
        diff: bool,
        #[command(flatten)]
        common: Common,
    },
}

type CliResult<T> = Result<T, Error>;

fn resolve(
    common: &Common,
    flags: &[(&str, Option<String>)],
) -> CliResult<(ExperimentConfig, PathBuf)> {
    let base = if common.desk {
        ExperimentConfig::desk()
    } else {
        ExperimentConfig::default()
    };
    let default_out = base.out_dir.clone();
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p, base).map_err(|e| match e {
            Error::Io { .. } => Error::Config(format!("cannot read config: {e}")),
            other => other,
        })?,
        None => base,
    };
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v)?;
    }
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, v)?;
        }
    }
    let out = match (&common.out, std::env::var_os("TEMPORL_OUT")) {
        (Some(o), _) => o.clone(),
        (None, Some(env)) if cfg.out_dir == default_out => PathBuf::from(env),
        _ => cfg.out_dir.clone(),
    };
    cfg.out_dir = out.clone();
    cfg.validate()?;
    Ok((cfg, out))
}

fn path_str(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn file_stem_safe(s: &str) -> String {
    s.replace([':', ','], "-")
}

fn load_prior(path: &Path) -> CliResult<FlowPrior> {
    FlowPrior::load(path).map_err(|e| match e {
        Error::Io { .. } => Error::Config(format!("cannot read prior: {e}")),
        other => other,
    })
}

fn load_dataset(path: &Path) -> CliResult<OfflineDataset> {
    OfflineDataset::load(path).map_err(|e| match e {
        Error::Io { .. } => Error::Config(format!("cannot read dataset: {e}")),
        other => other,
    })
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.cmd {
        Cmd::Collect {
            layout,
            n_traj,
            len,
            noise,
            seed,
            common,
        } => {
            let (cfg, out) = resolve(
                &common,
                &[
                    ("collect.layout", layout),
                    ("collect.n_traj", n_traj),
                    ("collect.len", len),
                    ("collect.noise", noise),
                ],
            )?;
            let data = harness::collect(&cfg, seed)?;
            let path = out.join(format!("dataset_{}_seed{seed}.csv", cfg.collect_layout));
            std::fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            data.save(&path)?;
            println!("{}", path.display());
        }
        Cmd::TrainPrior {
            dataset,
            cond,
            epochs,
            seed,
            common,
        } => {
            let (cfg, out) = resolve(
                &common,
                &[
                    ("dataset", path_str(&dataset)),
                    ("cond", cond),
                    ("prior.epochs", epochs),
                ],
            )?;
            let dpath = cfg
                .dataset
                .clone()
                .ok_or_else(|| Error::Config("train-prior needs --dataset".into()))?;
            let data = load_dataset(&dpath)?;
            let (prior, report) =
                harness::fit_prior(&cfg, &data, seed, |e, l| eprintln!("epoch {e} nll {l:.5}"))?;
            let stem = format!(
                "prior_{}_seed{seed}",
                file_stem_safe(&harness::conditioning_name(cfg.cond))
            );
            std::fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            let ckpt = out.join(format!("{stem}.bin"));
            prior.save(&ckpt)?;
            harness::write_nll_csv(&out.join(format!("{stem}_nll.csv")), &report)?;
            println!("{}", ckpt.display());
        }
        Cmd::TrainAgent {
            mode,
            layout,
            seeds,
            prior,
            dataset,
            common,
        } => {
            let (cfg, out) = resolve(
                &common,
                &[
                    ("mode", mode),
                    ("layout", layout),
                    ("seeds", seeds),
                    ("prior", path_str(&prior)),
                    ("dataset", path_str(&dataset)),
                ],
            )?;
            let prior = match (&cfg.mode, &cfg.prior) {
                (Mode::Temporl, None) => {
                    return Err(Error::Config("--mode temporl needs --prior".into()));
                }
                (Mode::Temporl, Some(p)) => Some(load_prior(p)?),
                _ => None,
            };
            let demos = match (&cfg.mode, &cfg.dataset) {
                (Mode::SacBc, None) => {
                    return Err(Error::Config("--mode sac_bc needs --dataset".into()));
                }
                (Mode::SacBc, Some(p)) => Some(load_dataset(p)?),
                _ => None,
            };
            for &seed in &cfg.seeds {
                let (rec, bundle) =
                    harness::run_agent(&cfg, prior.as_ref(), demos.as_ref(), seed, |r| {
                        eprintln!(
                            "seed {seed} step {} success {} lambda {:.6}",
                            r.env_step, r.success_rate, r.mean_lambda
                        )
                    })?;
                let csv = harness::save_run(&out, &cfg, &rec)?;
                harness::save_policy(&out, &cfg, seed, &bundle)?;
                println!("{}", csv.display());
            }
        }
        Cmd::Eval {
            policy,
            layout,
            episodes,
            seed,
            common,
        } => {
            let (cfg, _) = resolve(&common, &[("layout", layout)])?;
            let pi = harness::load_policy(&policy, &cfg).map_err(|e| match e {
                Error::Io { .. } | Error::SpecMismatch(_) => {
                    Error::Config(format!("cannot load policy: {e}"))
                }
                other => other,
            })?;
            let spec = Arc::new(cfg.layout.spec());
            let mut env = MazeEnv::new(spec.clone(), rng::stream(seed, Stream::Eval));
            let mut actor = Greedy {
                policy: &pi,
                enc: ObsEncoder::new(&spec),
            };
            let r = evaluate(&mut actor, &mut env, episodes)?;
            println!(
                "success_rate,mean_return\n{},{}",
                r.success_rate, r.mean_return
            );
        }
        Cmd::ExploreEval {
            prior,
            policy,
            layout,
            seeds,
            common,
        } => {
            let (cfg, out) = resolve(&common, &[("layout", layout), ("seeds", seeds)])?;
            let loaded = match (&prior, policy.as_deref()) {
                (Some(p), None) => Some(load_prior(p)?),
                (None, Some("uniform")) => None,
                (None, Some(other)) => {
                    return Err(Error::Config(format!(
                        "unknown --policy `{other}` (only uniform)"
                    )))
                }
                _ => {
                    return Err(Error::Config(
                        "explore-eval needs --prior or --policy uniform".into(),
                    ))
                }
            };
            let sampler = loaded.as_ref().map_or(Sampler::Uniform, Sampler::Prior);
            let (_, rows) = harness::explore_eval(
                cfg.layout,
                sampler,
                cfg.explore_n_traj,
                cfg.explore_len,
                &cfg.seeds,
            )?;
            let path = out.join(format!("explore_{}_{}.csv", cfg.layout, sampler.name()));
            std::fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            metrics::write_metric_rows(&path, &rows)?;
            println!("{}", path.display());
        }
        Cmd::Psd {
            dataset,
            prior,
            layout,
            seed,
            common,
        } => {
            let (cfg, out) = resolve(
                &common,
                &[
                    ("layout", layout),
                    ("dataset", path_str(&dataset)),
                    ("prior", path_str(&prior)),
                ],
            )?;
            let spec = cfg.layout.spec();
            let mut columns = Vec::new();
            if let Some(p) = &cfg.dataset {
                let data = load_dataset(p)?;
                let seqs = harness::dataset_sequences(&data, cfg.psd_len, cfg.psd_n_seq)?;
                columns.push(("dataset", metrics::action_psd(&seqs)?));
            }
            if let Some(p) = &cfg.prior {
                let prior = load_prior(p)?;
                let mut r = rng::stream(seed, Stream::Probe);
                let (_, seqs) = harness::rollouts(
                    &spec,
                    Sampler::Prior(&prior),
                    cfg.psd_n_seq,
                    cfg.psd_len,
                    &mut r,
                )?;
                columns.push(("prior", metrics::action_psd(&seqs)?));
            }
            let mut r = rng::stream(seed, Stream::Probe);
            let (_, seqs) =
                harness::rollouts(&spec, Sampler::Uniform, cfg.psd_n_seq, cfg.psd_len, &mut r)?;
            columns.push(("uniform", metrics::action_psd(&seqs)?));
            let path = out.join(format!("psd_{}.csv", cfg.layout));
            harness::write_psd_csv(&path, &columns)?;
            println!("{}", path.display());
        }
        Cmd::Metrics { runs, common } => {
            let (_, out) = resolve(&common, &[])?;
            let rows = aggregate_runs(&runs)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            let path = out.join("metrics.csv");
            metrics::write_metric_rows(&path, &rows)?;
            println!("{}", path.display());
        }
        Cmd::Config { diff, common } => {
            let (cfg, _) = resolve(&common, &[])?;
            if diff {
                for (k, default, now) in cfg.diff_from_defaults() {
                    println!("{k}: {default} -> {now}");
                }
            } else {
                print!("{}", cfg.to_text());
            }
        }
    }
    Ok(())
}

/// Final and best success per `(mode, layout)` over the records in `dir`.
fn aggregate_runs(dir: &Path) -> CliResult<Vec<MetricRow>> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut groups: std::collections::BTreeMap<(String, String), Vec<RunRecord>> =
        Default::default();
    for p in paths {
        let rec = RunRecord::load(&p)?;
        let key = (rec.config["mode"].clone(), rec.config["layout"].clone());
        groups.entry(key).or_default().push(rec);
    }
    if groups.is_empty() {
        return Err(Error::Config(format!(
            "no run records in {}",
            dir.display()
        )));
    }
    let mut rows = Vec::new();
    for ((mode, layout), recs) in groups {
        let mut push = |name: &str, vals: Vec<f64>| {
            let (value, stderr) = metrics::mean_stderr(&vals);
            rows.push(MetricRow {
                metric: format!("{name}_{mode}"),
                environment: layout.clone(),
                value,
                stderr,
            });
        };
        push(
            "final_success",
            recs.iter().map(|r| r.final_metrics.success_rate).collect(),
        );
        push(
            "best_success",
            recs.iter()
                .map(|r| r.final_metrics.best_success_rate)
                .collect(),
        );
        push(
            "final_lambda",
            recs.iter().map(|r| r.final_metrics.mean_lambda).collect(),
        );
    }
    Ok(rows)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
