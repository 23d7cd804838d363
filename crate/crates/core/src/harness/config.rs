use std::fmt;
use std::path::{Path, PathBuf};

use crate::agent::{AgentConfig, Mode};
use crate::error::{Error, Result};
use crate::flowprior::{Conditioning, ConditioningSpec, FlowConfig, PriorTrainConfig};
use crate::mazeworld::Layout;
use crate::netlib::AdamConfig;

fn bad(key: &str, value: &str, why: impl fmt::Display) -> Error {
    Error::Config(format!("bad value `{value}` for `{key}`: {why}"))
}

/// Conditioning in its command-line spelling: `none`, `last-actions:K`,
/// `state` or `state-last-action`.
pub fn parse_conditioning(s: &str) -> Result<Conditioning> {
    let s = s.trim();
    match s {
        "none" => Ok(Conditioning::None),
        "state" => Ok(Conditioning::State),
        "state-last-action" => Ok(Conditioning::StateAndLastAction),
        _ => {
            let k = s.strip_prefix("last-actions:").ok_or_else(|| {
                bad(
                    "cond",
                    s,
                    "expected none, last-actions:K, state or state-last-action",
                )
            })?;
            let k: usize = k.parse().map_err(|e| bad("cond", s, e))?;
            if k == 0 {
                return Err(bad("cond", s, "K must be >= 1"));
            }
            Ok(Conditioning::LastActions(k))
        }
    }
}

pub fn conditioning_name(c: Conditioning) -> String {
    match c {
        Conditioning::None => "none".into(),
        Conditioning::LastActions(k) => format!("last-actions:{k}"),
        Conditioning::State => "state".into(),
        Conditioning::StateAndLastAction => "state-last-action".into(),
    }
}

/// `a..b` (inclusive) or a comma-separated list.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let s = s.trim();
    let num = |t: &str| t.trim().parse::<u64>().map_err(|e| bad("seeds", s, e));
    let seeds = if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (num(a)?, num(b)?);
        if b < a {
            return Err(bad("seeds", s, "empty range"));
        }
        (a..=b).collect()
    } else {
        s.split(',').map(num).collect::<Result<Vec<_>>>()?
    };
    if seeds.is_empty() {
        return Err(bad("seeds", s, "no seeds"));
    }
    Ok(seeds)
}

fn seeds_name(seeds: &[u64]) -> String {
    let contiguous = seeds.windows(2).all(|w| w[1] == w[0] + 1);
    if seeds.len() > 1 && contiguous {
        format!("{}..{}", seeds[0], seeds[seeds.len() - 1])
    } else {
        seeds
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(",")
    }
}

fn parse_sizes(key: &str, s: &str) -> Result<Vec<usize>> {
    let sizes = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| bad(key, s, e)))
        .collect::<Result<Vec<_>>>()?;
    if sizes.contains(&0) {
        return Err(bad(key, s, "layer widths must be >= 1"));
    }
    Ok(sizes)
}

fn sizes_name(s: &[usize]) -> String {
    s.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn num<T: std::str::FromStr>(key: &str, s: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    s.trim().parse::<T>().map_err(|e| bad(key, s, e))
}

/// Everything a run needs. Defaults are the full-scale settings; see
/// [`ExperimentConfig::desk`] for the reduced single-CPU variant.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub layout: Layout,
    pub cond: Conditioning,
    pub seeds: Vec<u64>,
    pub dataset: Option<PathBuf>,
    pub prior: Option<PathBuf>,
    pub out_dir: PathBuf,

    pub collect_layout: Layout,
    pub collect_n_traj: usize,
    pub collect_len: usize,
    pub collect_noise: f64,

    pub prior_epochs: usize,
    pub prior_batch: usize,
    pub prior_lr: f64,
    pub prior_weight_decay: f64,
    pub prior_layers: usize,
    pub prior_hidden: usize,
    pub prior_embed: usize,

    pub agent: AgentConfig,
    /// `None` uses the mode's default entropy weight.
    pub alpha: Option<f64>,

    pub explore_n_traj: usize,
    pub explore_len: usize,
    pub psd_n_seq: usize,
    pub psd_len: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::Temporl,
            layout: Layout::Room,
            cond: Conditioning::LastActions(1),
            seeds: (0..10).collect(),
            dataset: None,
            prior: None,
            out_dir: PathBuf::from("out"),
            collect_layout: Layout::Room,
            collect_n_traj: 4000,
            collect_len: 500,
            collect_noise: 0.25,
            prior_epochs: 100,
            prior_batch: 400,
            prior_lr: 1e-4,
            prior_weight_decay: 1e-6,
            prior_layers: 6,
            prior_hidden: 128,
            prior_embed: 128,
            agent: AgentConfig::new(Mode::Temporl),
            alpha: None,
            explore_n_traj: 20,
            explore_len: 500,
            psd_n_seq: 100,
            psd_len: 500,
        }
    }
}

/// Every key accepted by [`ExperimentConfig::set`], in echo order.
pub const KEYS: &[&str] = &[
    "mode",
    "layout",
    "cond",
    "seeds",
    "dataset",
    "prior",
    "out_dir",
    "collect.layout",
    "collect.n_traj",
    "collect.len",
    "collect.noise",
    "prior.epochs",
    "prior.batch",
    "prior.lr",
    "prior.weight_decay",
    "prior.layers",
    "prior.hidden",
    "prior.embed",
    "agent.gamma",
    "agent.polyak",
    "agent.alpha",
    "agent.lr",
    "agent.eps_lambda",
    "agent.lambda0",
    "agent.n_step",
    "agent.batch",
    "agent.her_ratio",
    "agent.replay",
    "agent.epochs",
    "agent.steps_per_epoch",
    "agent.initial_exploration",
    "agent.steps_before_training",
    "agent.steps_per_iteration",
    "agent.updates_per_iteration",
    "agent.eval_episodes",
    "agent.hidden",
    "agent.mixing_hidden",
    "agent.prior_pool",
    "agent.probe_states",
    "bc.epochs",
    "bc.batch",
    "bc.lr",
    "bc.min_ahead",
    "bc.max_ahead",
    "explore.n_traj",
    "explore.len",
    "psd.n_seq",
    "psd.len",
];

fn path_name(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

fn opt_path(s: &str) -> Option<PathBuf> {
    let s = s.trim();
    (!s.is_empty()).then(|| PathBuf::from(s))
}

impl ExperimentConfig {
    /// Reduced sizes and budgets that fit one CPU.
    pub fn desk() -> Self {
        let mut c = ExperimentConfig::default();
        let pairs = [
            ("seeds", "0..4"),
            ("collect.n_traj", "400"),
            ("prior.epochs", "15"),
            ("prior.lr", "0.001"),
            ("prior.layers", "4"),
            ("prior.hidden", "64"),
            ("prior.embed", "64"),
            ("agent.replay", "100000"),
            ("agent.epochs", "20"),
            ("agent.steps_per_epoch", "5000"),
            ("agent.updates_per_iteration", "10"),
            ("agent.hidden", "64,64"),
            ("agent.mixing_hidden", "64,64"),
        ];
        for (k, v) in pairs {
            c.set(k, v).expect("desk preset keys are valid");
        }
        c
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let a = &mut self.agent;
        match key {
            "mode" => self.mode = v.parse()?,
            "layout" => self.layout = v.parse().map_err(|_| bad(key, v, "unknown layout"))?,
            "cond" => self.cond = parse_conditioning(v)?,
            "seeds" => self.seeds = parse_seeds(v)?,
            "dataset" => self.dataset = opt_path(v),
            "prior" => self.prior = opt_path(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "collect.layout" => {
                self.collect_layout = v.parse().map_err(|_| bad(key, v, "unknown layout"))?
            }
            "collect.n_traj" => self.collect_n_traj = num(key, v)?,
            "collect.len" => self.collect_len = num(key, v)?,
            "collect.noise" => self.collect_noise = num(key, v)?,
            "prior.epochs" => self.prior_epochs = num(key, v)?,
            "prior.batch" => self.prior_batch = num(key, v)?,
            "prior.lr" => self.prior_lr = num(key, v)?,
            "prior.weight_decay" => self.prior_weight_decay = num(key, v)?,
            "prior.layers" => self.prior_layers = num(key, v)?,
            "prior.hidden" => self.prior_hidden = num(key, v)?,
            "prior.embed" => self.prior_embed = num(key, v)?,
            "agent.gamma" => a.hyper.gamma = num(key, v)?,
            "agent.polyak" => a.hyper.polyak = num(key, v)?,
            "agent.alpha" => {
                self.alpha = if v == "auto" {
                    None
                } else {
                    Some(num(key, v)?)
                }
            }
            "agent.lr" => a.hyper.lr = num(key, v)?,
            "agent.eps_lambda" => a.hyper.eps_lambda = num(key, v)?,
            "agent.lambda0" => a.hyper.lambda0 = num(key, v)?,
            "agent.n_step" => a.n_step = num(key, v)?,
            "agent.batch" => a.batch_size = num(key, v)?,
            "agent.her_ratio" => a.her_ratio = num(key, v)?,
            "agent.replay" => a.replay_capacity = num(key, v)?,
            "agent.epochs" => a.epochs = num(key, v)?,
            "agent.steps_per_epoch" => a.steps_per_epoch = num(key, v)?,
            "agent.initial_exploration" => a.initial_exploration = num(key, v)?,
            "agent.steps_before_training" => a.steps_before_training = num(key, v)?,
            "agent.steps_per_iteration" => a.steps_per_iteration = num(key, v)?,
            "agent.updates_per_iteration" => a.updates_per_iteration = num(key, v)?,
            "agent.eval_episodes" => a.eval_episodes = num(key, v)?,
            "agent.hidden" => a.sizes.hidden = parse_sizes(key, v)?,
            "agent.mixing_hidden" => a.sizes.mixing_hidden = parse_sizes(key, v)?,
            "agent.prior_pool" => a.prior_pool = num(key, v)?,
            "agent.probe_states" => a.probe_states = num(key, v)?,
            "bc.epochs" => a.bc.epochs = num(key, v)?,
            "bc.batch" => a.bc.batch_size = num(key, v)?,
            "bc.lr" => a.bc.lr = num(key, v)?,
            "bc.min_ahead" => a.bc.min_ahead = num(key, v)?,
            "bc.max_ahead" => a.bc.max_ahead = num(key, v)?,
            "explore.n_traj" => self.explore_n_traj = num(key, v)?,
            "explore.len" => self.explore_len = num(key, v)?,
            "psd.n_seq" => self.psd_n_seq = num(key, v)?,
            "psd.len" => self.psd_len = num(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let a = &self.agent;
        let h = &a.hyper;
        Some(match key {
            "mode" => self.mode.to_string(),
            "layout" => self.layout.to_string(),
            "cond" => conditioning_name(self.cond),
            "seeds" => seeds_name(&self.seeds),
            "dataset" => path_name(&self.dataset),
            "prior" => path_name(&self.prior),
            "out_dir" => self.out_dir.display().to_string(),
            "collect.layout" => self.collect_layout.to_string(),
            "collect.n_traj" => self.collect_n_traj.to_string(),
            "collect.len" => self.collect_len.to_string(),
            "collect.noise" => self.collect_noise.to_string(),
            "prior.epochs" => self.prior_epochs.to_string(),
            "prior.batch" => self.prior_batch.to_string(),
            "prior.lr" => self.prior_lr.to_string(),
            "prior.weight_decay" => self.prior_weight_decay.to_string(),
            "prior.layers" => self.prior_layers.to_string(),
            "prior.hidden" => self.prior_hidden.to_string(),
            "prior.embed" => self.prior_embed.to_string(),
            "agent.gamma" => h.gamma.to_string(),
            "agent.polyak" => h.polyak.to_string(),
            "agent.alpha" => self.alpha.map_or("auto".into(), |x| x.to_string()),
            "agent.lr" => h.lr.to_string(),
            "agent.eps_lambda" => h.eps_lambda.to_string(),
            "agent.lambda0" => h.lambda0.to_string(),
            "agent.n_step" => a.n_step.to_string(),
            "agent.batch" => a.batch_size.to_string(),
            "agent.her_ratio" => a.her_ratio.to_string(),
            "agent.replay" => a.replay_capacity.to_string(),
            "agent.epochs" => a.epochs.to_string(),
            "agent.steps_per_epoch" => a.steps_per_epoch.to_string(),
            "agent.initial_exploration" => a.initial_exploration.to_string(),
            "agent.steps_before_training" => a.steps_before_training.to_string(),
            "agent.steps_per_iteration" => a.steps_per_iteration.to_string(),
            "agent.updates_per_iteration" => a.updates_per_iteration.to_string(),
            "agent.eval_episodes" => a.eval_episodes.to_string(),
            "agent.hidden" => sizes_name(&a.sizes.hidden),
            "agent.mixing_hidden" => sizes_name(&a.sizes.mixing_hidden),
            "agent.prior_pool" => a.prior_pool.to_string(),
            "agent.probe_states" => a.probe_states.to_string(),
            "bc.epochs" => a.bc.epochs.to_string(),
            "bc.batch" => a.bc.batch_size.to_string(),
            "bc.lr" => a.bc.lr.to_string(),
            "bc.min_ahead" => a.bc.min_ahead.to_string(),
            "bc.max_ahead" => a.bc.max_ahead.to_string(),
            "explore.n_traj" => self.explore_n_traj.to_string(),
            "explore.len" => self.explore_len.to_string(),
            "psd.n_seq" => self.psd_n_seq.to_string(),
            "psd.len" => self.psd_len.to_string(),
            _ => return None,
        })
    }

    /// Every key with its resolved value.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        KEYS.iter()
            .map(|k| (*k, self.get(k).expect("listed keys resolve")))
            .collect()
    }

    /// Flat `key = value` text; `#` starts a comment.
    pub fn parse_text(text: &str, base: ExperimentConfig) -> Result<Self> {
        let mut c = base;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            c.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(c)
    }

    pub fn load(path: &Path, base: ExperimentConfig) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text, base)
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Keys whose value differs from the full-scale default, as
    /// `(key, default, current)`.
    pub fn diff_from_defaults(&self) -> Vec<(&'static str, String, String)> {
        let base = ExperimentConfig::default();
        KEYS.iter()
            .filter_map(|k| {
                let (d, c) = (base.get(k)?, self.get(k)?);
                (d != c).then_some((*k, d, c))
            })
            .collect()
    }

    /// Agent settings with the mode applied and `alpha` resolved.
    pub fn agent_config(&self) -> AgentConfig {
        let mut a = self.agent.clone();
        a.mode = self.mode;
        a.hyper.alpha = self
            .alpha
            .unwrap_or(AgentConfig::new(self.mode).hyper.alpha);
        a
    }

    pub fn cond_spec(&self) -> Result<ConditioningSpec> {
        ConditioningSpec::new(self.cond, 2, 2)
    }

    pub fn flow_config(&self) -> Result<FlowConfig> {
        let mut f = FlowConfig::new(self.cond_spec()?);
        f.n_layers = self.prior_layers;
        f.hidden = self.prior_hidden;
        f.embed_dim = self.prior_embed;
        f.validate()?;
        Ok(f)
    }

    pub fn prior_train_config(&self) -> PriorTrainConfig {
        PriorTrainConfig {
            epochs: self.prior_epochs,
            batch_size: self.prior_batch,
            adam: AdamConfig::new(self.prior_lr).with_weight_decay(self.prior_weight_decay),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.agent_config().validate()?;
        self.flow_config()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.collect_len == 0 || self.collect_n_traj == 0 {
            return Err(Error::Config(
                "collect.n_traj and collect.len must be >= 1".into(),
            ));
        }
        if self.explore_len < 2
            || self.explore_n_traj == 0
            || self.psd_len == 0
            || self.psd_n_seq == 0
        {
            return Err(Error::Config("explore/psd sizes too small".into()));
        }
        Ok(())
    }
}
