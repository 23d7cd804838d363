use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::agent::{train, AgentBundle, CurveRow, ACTION_DIM, OBS_DIM};
use crate::diffmath::Matrix;
use crate::error::{Error, Result};
use crate::flowprior::{train_prior, FlowPrior, TrainReport};
use crate::mazeworld::{collect_dataset, integrate, Layout, MazeSpec, OfflineDataset};
use crate::metrics::{self, CoverageConfig, GyrationConfig, MetricRow, Path2};
use crate::netlib::{Mlp, MlpSpec, ParamFile, SquashedGaussianPolicy};
use crate::rng::{self, Stream};

pub const CURVE_HEADER: &str =
    "env_step,episode,success_rate,mean_return,mean_lambda,q_loss,policy_loss,mixing_loss";

fn write_text(path: &Path, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let run = || -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        body(&mut f)?;
        f.flush()
    };
    run().map_err(|e| Error::io(path, e))
}

pub fn collect(cfg: &ExperimentConfig, seed: u64) -> Result<OfflineDataset> {
    let spec = cfg.collect_layout.spec();
    collect_dataset(
        &spec,
        cfg.collect_n_traj,
        cfg.collect_len,
        cfg.collect_noise,
        &mut rng::stream(seed, Stream::Data),
    )
}

pub fn fit_prior(
    cfg: &ExperimentConfig,
    data: &OfflineDataset,
    seed: u64,
    on_epoch: impl FnMut(usize, f64),
) -> Result<(FlowPrior, TrainReport)> {
    train_prior(
        data,
        cfg.cond_spec()?,
        cfg.flow_config()?,
        &cfg.prior_train_config(),
        &mut rng::stream(seed, Stream::Prior),
        on_epoch,
    )
}

pub fn write_nll_csv(path: &Path, report: &TrainReport) -> Result<()> {
    write_text(path, |f| {
        writeln!(f, "epoch,nll")?;
        for (i, l) in report.epoch_nll.iter().enumerate() {
            writeln!(f, "{i},{l}")?;
        }
        Ok(())
    })
}

pub fn write_curve_csv(path: &Path, rows: &[CurveRow]) -> Result<()> {
    write_text(path, |f| {
        writeln!(f, "{CURVE_HEADER}")?;
        for r in rows {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{}",
                r.env_step,
                r.episode,
                r.success_rate,
                r.mean_return,
                r.mean_lambda,
                r.q_loss,
                r.policy_loss,
                r.mixing_loss
            )?;
        }
        Ok(())
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub success_rate: f64,
    pub mean_return: f64,
    pub mean_lambda: f64,
    pub best_success_rate: f64,
}

/// Everything needed to audit one seed of downstream learning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub version: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub curve: Vec<CurveRow>,
    pub final_metrics: FinalMetrics,
}

impl RunRecord {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Invalid(e.to_string()))?;
        write_text(path, |f| writeln!(f, "{json}"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })
    }
}

pub fn run_stem(cfg: &ExperimentConfig, seed: u64) -> String {
    format!("{}_{}_seed{seed}", cfg.mode, cfg.layout)
}

/// Trains one seed and returns its record with the trained networks.
pub fn run_agent(
    cfg: &ExperimentConfig,
    prior: Option<&FlowPrior>,
    demos: Option<&OfflineDataset>,
    seed: u64,
    on_row: impl FnMut(&CurveRow),
) -> Result<(RunRecord, AgentBundle)> {
    cfg.validate()?;
    let spec = Arc::new(cfg.layout.spec());
    let out = train(&cfg.agent_config(), spec, prior, demos, seed, on_row)?;
    let last = *out.curve.last().expect("the initial row is always present");
    let record = RunRecord {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        config: cfg
            .entries()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        final_metrics: FinalMetrics {
            success_rate: last.success_rate,
            mean_return: last.mean_return,
            mean_lambda: last.mean_lambda,
            best_success_rate: out.curve.iter().map(|r| r.success_rate).fold(0.0, f64::max),
        },
        curve: out.curve,
    };
    Ok((record, out.bundle))
}

const POLICY_KIND: &str = "policy";

/// Writes the policy network to `<stem>.policy` under `dir`.
pub fn save_policy(
    dir: &Path,
    cfg: &ExperimentConfig,
    seed: u64,
    bundle: &AgentBundle,
) -> Result<PathBuf> {
    let path = dir.join(format!("{}.policy", run_stem(cfg, seed)));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    bundle.policy.net().to_param_file(POLICY_KIND).save(&path)?;
    Ok(path)
}

/// Loads a policy saved by [`save_policy`]; the hidden sizes come from `cfg`.
pub fn load_policy(path: &Path, cfg: &ExperimentConfig) -> Result<SquashedGaussianPolicy> {
    let file = ParamFile::load(path)?;
    let spec = MlpSpec::new(OBS_DIM, &cfg.agent.sizes.hidden, 2 * ACTION_DIM);
    let net = Mlp::from_param_file(&file, POLICY_KIND, &spec)?;
    SquashedGaussianPolicy::from_net(net, &[-1.0; ACTION_DIM], &[1.0; ACTION_DIM])
}

/// Writes `<stem>.csv` and `<stem>.json` under `dir`.
pub fn save_run(dir: &Path, cfg: &ExperimentConfig, record: &RunRecord) -> Result<PathBuf> {
    let stem = run_stem(cfg, record.seed);
    let csv = dir.join(format!("{stem}.csv"));
    write_curve_csv(&csv, &record.curve)?;
    record.save(&dir.join(format!("{stem}.json")))?;
    Ok(csv)
}

/// Action source for open-loop exploration rollouts.
#[derive(Clone, Copy, Debug)]
pub enum Sampler<'a> {
    Prior(&'a FlowPrior),
    Uniform,
}

impl Sampler<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Sampler::Prior(_) => "prior",
            Sampler::Uniform => "uniform",
        }
    }
}

/// `n` rollouts of `len` steps from the layout start, with actions drawn
/// only from `sampler`. Returns the visited positions (start included) and
/// the action sequences.
pub fn rollouts(
    spec: &MazeSpec,
    sampler: Sampler<'_>,
    n: usize,
    len: usize,
    rng: &mut impl Rng,
) -> Result<(Vec<Path2>, Vec<Matrix>)> {
    let mut paths = Vec::with_capacity(n);
    let mut seqs = Vec::with_capacity(n);
    for _ in 0..n {
        let mut pos = spec.start;
        let mut path = Vec::with_capacity(len + 1);
        path.push(pos);
        let mut actions = Matrix::zeros(len, 2);
        for t in 0..len {
            let a = match sampler {
                Sampler::Uniform => [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                Sampler::Prior(p) => {
                    let spec_c = p.cond_spec();
                    let w = spec_c.window();
                    let past = &actions.data()[t.saturating_sub(w) * 2..t * 2];
                    let cond = Matrix::row_vector(&spec_c.encode(&pos, past));
                    let a = p.sample(&cond, rng)?;
                    [a.get(0, 0), a.get(0, 1)]
                }
            };
            actions.row_mut(t).copy_from_slice(&a);
            pos = integrate(spec, pos, a);
            path.push(pos);
        }
        paths.push(path);
        seqs.push(actions);
    }
    Ok((paths, seqs))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExploreStats {
    pub coverage: f64,
    pub gyration_sq: f64,
}

pub fn explore_stats(spec: &MazeSpec, paths: &[Path2]) -> Result<ExploreStats> {
    Ok(ExploreStats {
        coverage: metrics::coverage(paths, &CoverageConfig::for_maze(spec))?,
        gyration_sq: metrics::gyration_sq(paths, &GyrationConfig::for_maze(spec))?,
    })
}

/// Exploration metrics per seed, then `metric,environment,value,stderr`
/// rows aggregated over seeds.
pub fn explore_eval(
    layout: Layout,
    sampler: Sampler<'_>,
    n_traj: usize,
    len: usize,
    seeds: &[u64],
) -> Result<(Vec<ExploreStats>, Vec<MetricRow>)> {
    let spec = layout.spec();
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &s in seeds {
        let (paths, _) = rollouts(
            &spec,
            sampler,
            n_traj,
            len,
            &mut rng::stream(s, Stream::Probe),
        )?;
        per_seed.push(explore_stats(&spec, &paths)?);
    }
    let row = |metric: &str, vals: Vec<f64>| {
        let (value, stderr) = metrics::mean_stderr(&vals);
        MetricRow {
            metric: format!("{metric}_{}", sampler.name()),
            environment: layout.to_string(),
            value,
            stderr,
        }
    };
    let rows = vec![
        row("coverage", per_seed.iter().map(|s| s.coverage).collect()),
        row(
            "gyration_sq",
            per_seed.iter().map(|s| s.gyration_sq).collect(),
        ),
    ];
    Ok((per_seed, rows))
}

/// Fixed-length action windows cut from the start of each trajectory.
pub fn dataset_sequences(data: &OfflineDataset, len: usize, n: usize) -> Result<Vec<Matrix>> {
    let seqs: Vec<Matrix> = data
        .trajectories
        .iter()
        .filter(|t| t.len() >= len)
        .take(n)
        .map(|t| t.actions.select_rows(&(0..len).collect::<Vec<_>>()))
        .collect();
    if seqs.is_empty() {
        return Err(Error::Invalid(format!(
            "no dataset trajectory has {len} steps"
        )));
    }
    Ok(seqs)
}

/// `bin,<name>...` with one power column per named source.
pub fn write_psd_csv(path: &Path, columns: &[(&str, Vec<f64>)]) -> Result<()> {
    let bins = columns.first().map_or(0, |c| c.1.len());
    if columns.iter().any(|c| c.1.len() != bins) {
        return Err(Error::Invalid("psd columns differ in length".into()));
    }
    write_text(path, |f| {
        let names: Vec<&str> = columns.iter().map(|c| c.0).collect();
        writeln!(f, "bin,{}", names.join(","))?;
        for k in 0..bins {
            let vals: Vec<String> = columns.iter().map(|c| c.1[k].to_string()).collect();
            writeln!(f, "{k},{}", vals.join(","))?;
        }
        Ok(())
    })
}
