use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::conditioning::ConditioningSpec;
use crate::diffmath::{Axis, Graph, Matrix, Tensor};
use crate::error::{Error, Result};
use crate::netlib::{BoundMlp, Mlp, MlpSpec, ParamFile, Params};

pub const PARAM_KIND: &str = "flow-prior";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub cond: ConditioningSpec,
    pub n_layers: usize,
    pub hidden: usize,
    /// Output width of each layer's conditioning encoder.
    pub embed_dim: usize,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
    pub momentum: f64,
    pub norm_eps: f64,
}

impl FlowConfig {
    pub fn new(cond: ConditioningSpec) -> Self {
        let d = cond.action_dim;
        FlowConfig {
            cond,
            n_layers: 6,
            hidden: 128,
            embed_dim: 128,
            low: vec![-1.0; d],
            high: vec![1.0; d],
            momentum: 0.99,
            norm_eps: 1e-5,
        }
    }

    pub fn action_dim(&self) -> usize {
        self.cond.action_dim
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.action_dim();
        if self.n_layers == 0 || self.hidden == 0 || self.embed_dim == 0 {
            return Err(Error::Invalid(
                "flow layers, hidden and embed dims must be >= 1".into(),
            ));
        }
        if self.low.len() != d
            || self.high.len() != d
            || self.low.iter().zip(&self.high).any(|(l, h)| !(l < h))
        {
            return Err(Error::Invalid(
                "flow action bounds must have low < high per dimension".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.norm_eps > 0.0) {
            return Err(Error::Invalid(
                "norm momentum must be in [0, 1) and eps > 0".into(),
            ));
        }
        Ok(())
    }

    fn st_spec(&self) -> MlpSpec {
        let cond_in = if self.cond.cond_dim() > 0 {
            self.embed_dim
        } else {
            0
        };
        MlpSpec::new(
            self.action_dim() + cond_in,
            &[self.hidden, self.hidden],
            2 * self.action_dim(),
        )
    }

    fn encoder_spec(&self) -> Option<MlpSpec> {
        let cd = self.cond.cond_dim();
        (cd > 0).then(|| MlpSpec::new(cd, &[self.hidden, self.hidden], self.embed_dim))
    }
}

/// Affine coupling. Dimensions with `keep[j] = 1` pass through and, with the
/// conditioning embedding, parameterize scale `s = gain·tanh(·)` and shift `t`
/// for the others: `a = z·exp(s) + t` towards the action.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingLayer {
    keep: Matrix,
    st_net: Mlp,
    encoder: Option<Mlp>,
    gain: Matrix,
}

/// Per-dimension normalization `(x - mean) / sqrt(var + eps)` on the way to
/// the latent.
#[derive(Clone, Debug, PartialEq)]
pub struct NormLayer {
    pub running_mean: Matrix,
    pub running_var: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowPrior {
    config: FlowConfig,
    couplings: Vec<CouplingLayer>,
    norms: Vec<NormLayer>,
}

struct BoundCoupling {
    keep: Tensor,
    change: Tensor,
    st_net: BoundMlp,
    encoder: Option<BoundMlp>,
    gain: Tensor,
}

/// A flow placed on a graph.
pub(crate) struct BoundFlow {
    layers: Vec<BoundCoupling>,
}

/// Batch statistics seen by each normalization layer during a training pass.
pub(crate) struct BatchStats {
    pub mean: Vec<Matrix>,
    pub var: Vec<Matrix>,
}

fn alternating_mask(d: usize, layer: usize) -> Matrix {
    Matrix::row_vector(&(0..d).map(|j| ((j + layer) % 2) as f64).collect::<Vec<_>>())
}

impl NormLayer {
    /// Stats chosen so that `var + eps = 1`: a fresh layer is the identity up
    /// to rounding.
    fn identity(d: usize, eps: f64) -> Self {
        NormLayer {
            running_mean: Matrix::zeros(1, d),
            running_var: Matrix::filled(1, d, 1.0 - eps),
        }
    }

    fn log_det(&self, eps: f64) -> f64 {
        -0.5 * self
            .running_var
            .data()
            .iter()
            .map(|v| (v + eps).ln())
            .sum::<f64>()
    }
}

impl FlowPrior {
    /// Fresh prior. Every coupling's output layer is zeroed, so the flow starts
    /// at the identity map with zero log-determinant.
    pub fn new(config: FlowConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let d = config.action_dim();
        let mut couplings = Vec::with_capacity(config.n_layers);
        let mut norms = Vec::with_capacity(config.n_layers);
        for i in 0..config.n_layers {
            let mut st_net = Mlp::new(config.st_spec(), rng)?;
            st_net.zero_final_layer();
            let encoder = config
                .encoder_spec()
                .map(|s| Mlp::new(s, rng))
                .transpose()?;
            couplings.push(CouplingLayer {
                keep: alternating_mask(d, i),
                st_net,
                encoder,
                gain: Matrix::scalar(1.0),
            });
            norms.push(NormLayer::identity(d, config.norm_eps));
        }
        Ok(FlowPrior {
            config,
            couplings,
            norms,
        })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn action_dim(&self) -> usize {
        self.config.action_dim()
    }

    pub fn cond_spec(&self) -> &ConditioningSpec {
        &self.config.cond
    }

    pub fn norms(&self) -> &[NormLayer] {
        &self.norms
    }

    pub fn couplings(&self) -> &[CouplingLayer] {
        &self.couplings
    }

    pub(crate) fn bind<'a>(&'a self, g: &mut Graph<'a>, trainable: bool) -> BoundFlow {
        let layers = self
            .couplings
            .iter()
            .map(|c| {
                let change = c.keep.map(|k| 1.0 - k);
                let (st_net, encoder, gain) = if trainable {
                    (
                        c.st_net.bind(g),
                        c.encoder.as_ref().map(|e| e.bind(g)),
                        g.param(&c.gain),
                    )
                } else {
                    (
                        c.st_net.bind_frozen(g),
                        c.encoder.as_ref().map(|e| e.bind_frozen(g)),
                        g.constant_ref(&c.gain),
                    )
                };
                BoundCoupling {
                    keep: g.constant_ref(&c.keep),
                    change: g.constant(change),
                    st_net,
                    encoder,
                    gain,
                }
            })
            .collect();
        BoundFlow { layers }
    }

    fn check_inputs(&self, x: &Matrix, cond: &Matrix) -> Result<()> {
        if x.cols() != self.action_dim() {
            return Err(Error::Shape {
                op: "flow",
                lhs: x.shape(),
                rhs: (x.rows(), self.action_dim()),
            });
        }
        let cd = self.config.cond.cond_dim();
        if cd > 0 && (cond.cols() != cd || cond.rows() != x.rows()) {
            return Err(Error::Shape {
                op: "flow conditioning",
                lhs: cond.shape(),
                rhs: (x.rows(), cd),
            });
        }
        Ok(())
    }

    /// Scale and shift for one coupling, already masked to the changed dims.
    fn scale_shift(
        g: &mut Graph<'_>,
        layer: &BoundCoupling,
        x: Tensor,
        embed: Option<Tensor>,
        d: usize,
    ) -> Result<(Tensor, Tensor)> {
        let kept = g.mul(x, layer.keep)?;
        let input = match embed {
            Some(e) => g.concat_cols(&[kept, e])?,
            None => kept,
        };
        let out = layer.st_net.forward(g, input)?;
        let raw_s = g.slice_cols(out, 0, d)?;
        let raw_t = g.slice_cols(out, d, 2 * d)?;
        let s = g.tanh(raw_s);
        let s = g.mul(s, layer.gain)?;
        let s = g.mul(s, layer.change)?;
        let t = g.mul(raw_t, layer.change)?;
        Ok((s, t))
    }

    fn embed(
        g: &mut Graph<'_>,
        layer: &BoundCoupling,
        cond: Option<Tensor>,
    ) -> Result<Option<Tensor>> {
        match (&layer.encoder, cond) {
            (Some(enc), Some(c)) => Ok(Some(enc.forward(g, c)?)),
            _ => Ok(None),
        }
    }

    /// Action → latent on a graph. With `stats` the normalization layers use
    /// (and record) batch statistics; otherwise their running statistics.
    /// Returns `z` and `log|det ∂z/∂a|` per row.
    pub(crate) fn inverse_on<'a>(
        &'a self,
        g: &mut Graph<'a>,
        flow: &BoundFlow,
        a: Tensor,
        cond: Option<Tensor>,
        mut stats: Option<&mut BatchStats>,
    ) -> Result<(Tensor, Tensor)> {
        let d = self.action_dim();
        let eps = self.config.norm_eps;
        let rows = g.shape(a).0;
        let mut x = a;
        let mut log_det = g.constant(Matrix::zeros(rows, 1));
        for (layer, norm) in flow.layers.iter().zip(&self.norms) {
            let embed = Self::embed(g, layer, cond)?;
            let (s, t) = Self::scale_shift(g, layer, x, embed, d)?;
            let shifted = g.sub(x, t)?;
            let neg_s = g.neg(s);
            let inv_scale = g.exp(neg_s);
            x = g.mul(shifted, inv_scale)?;
            let sum_s = g.sum(s, Axis::Cols);
            log_det = g.sub(log_det, sum_s)?;

            let (centered, var_eps) = match stats.as_deref_mut() {
                Some(st) => {
                    let mean = g.mean(x, Axis::Rows);
                    let centered = g.sub(x, mean)?;
                    let sq = g.square(centered);
                    let var = g.mean(sq, Axis::Rows);
                    st.mean.push(g.value(mean).clone());
                    st.var.push(g.value(var).clone());
                    (centered, g.add_scalar(var, eps))
                }
                None => {
                    let mean = g.constant_ref(&norm.running_mean);
                    let centered = g.sub(x, mean)?;
                    let var = g.constant_ref(&norm.running_var);
                    (centered, g.add_scalar(var, eps))
                }
            };
            let sd = g.sqrt(var_eps)?;
            x = g.div(centered, sd)?;
            let lv = g.log(var_eps)?;
            let lv = g.sum(lv, Axis::Cols);
            let half = g.scale(lv, -0.5);
            log_det = g.add(log_det, half)?;
        }
        Ok((x, log_det))
    }

    /// Per-row `log N(z; 0, I)` on a graph.
    pub(crate) fn base_log_prob(g: &mut Graph<'_>, z: Tensor) -> Tensor {
        let d = g.shape(z).1 as f64;
        let sq = g.square(z);
        let ss = g.sum(sq, Axis::Cols);
        let half = g.scale(ss, -0.5);
        g.add_scalar(half, -0.5 * d * (2.0 * PI).ln())
    }

    /// Latent → action with frozen statistics. Returns `a` and
    /// `log|det ∂a/∂z|` per row.
    pub fn forward(&self, z: &Matrix, cond: &Matrix) -> Result<(Matrix, Matrix)> {
        self.check_inputs(z, cond)?;
        let d = self.action_dim();
        let eps = self.config.norm_eps;
        let mut g = Graph::new();
        let flow = self.bind(&mut g, false);
        let c = (self.config.cond.cond_dim() > 0).then(|| g.constant_ref(cond));
        let mut x = g.constant_ref(z);
        let mut log_det = Matrix::zeros(z.rows(), 1);
        for (layer, norm) in flow.layers.iter().zip(&self.norms).rev() {
            let mean = g.constant_ref(&norm.running_mean);
            let sd = g.constant(norm.running_var.map(|v| (v + eps).sqrt()));
            let scaled = g.mul(x, sd)?;
            x = g.add(scaled, mean)?;
            let ld = -norm.log_det(eps);

            let embed = Self::embed(&mut g, layer, c)?;
            let (s, t) = Self::scale_shift(&mut g, layer, x, embed, d)?;
            let es = g.exp(s);
            let scaled = g.mul(x, es)?;
            x = g.add(scaled, t)?;
            let sum_s = g.sum(s, Axis::Cols);
            for (r, v) in log_det.data_mut().iter_mut().enumerate() {
                *v += ld + g.value(sum_s).data()[r];
            }
        }
        Ok((g.value(x).clone(), log_det))
    }

    /// Action → latent with frozen statistics; returns `z` and
    /// `log|det ∂z/∂a|` per row.
    pub fn inverse(&self, a: &Matrix, cond: &Matrix) -> Result<(Matrix, Matrix)> {
        self.check_inputs(a, cond)?;
        let mut g = Graph::new();
        let flow = self.bind(&mut g, false);
        let c = (self.config.cond.cond_dim() > 0).then(|| g.constant_ref(cond));
        let x = g.constant_ref(a);
        let (z, ld) = self.inverse_on(&mut g, &flow, x, c, None)?;
        Ok((g.value(z).clone(), g.value(ld).clone()))
    }

    /// `log π̄(a | c)` per row, batch×1.
    pub fn log_density(&self, a: &Matrix, cond: &Matrix) -> Result<Matrix> {
        self.check_inputs(a, cond)?;
        let mut g = Graph::new();
        let flow = self.bind(&mut g, false);
        let c = (self.config.cond.cond_dim() > 0).then(|| g.constant_ref(cond));
        let x = g.constant_ref(a);
        let (z, ld) = self.inverse_on(&mut g, &flow, x, c, None)?;
        let base = Self::base_log_prob(&mut g, z);
        let out = g.add(base, ld)?;
        Ok(g.value(out).clone())
    }

    /// One action per row of `cond` (or `n` rows when unconditional, where
    /// `cond` may be `n×0`), clamped to the action bounds.
    pub fn sample(&self, cond: &Matrix, rng: &mut impl Rng) -> Result<Matrix> {
        let z = crate::rng::standard_normal(rng, cond.rows(), self.action_dim());
        self.sample_from_latent(&z, cond)
    }

    pub fn sample_from_latent(&self, z: &Matrix, cond: &Matrix) -> Result<Matrix> {
        let (mut a, _) = self.forward(z, cond)?;
        let (lo, hi) = (&self.config.low, &self.config.high);
        let d = self.action_dim();
        for (k, v) in a.data_mut().iter_mut().enumerate() {
            *v = v.clamp(lo[k % d], hi[k % d]);
        }
        Ok(a)
    }

    /// Conditioning matrix with no columns, for unconditional priors.
    pub fn no_cond(rows: usize) -> Matrix {
        Matrix::zeros(rows, 0)
    }

    pub(crate) fn trainable_params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for c in &mut self.couplings {
            out.extend(c.st_net.params_mut());
            if let Some(e) = &mut c.encoder {
                out.extend(e.params_mut());
            }
            out.push(&mut c.gain);
        }
        out
    }

    pub(crate) fn trainable_params(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        for c in &self.couplings {
            out.extend(c.st_net.params());
            if let Some(e) = &c.encoder {
                out.extend(e.params());
            }
            out.push(&c.gain);
        }
        out
    }

    /// Gradients in [`Params`] order.
    pub(crate) fn grads(flow: &BoundFlow, g: &Graph<'_>) -> Vec<Matrix> {
        let mut out = Vec::new();
        for l in &flow.layers {
            out.extend(l.st_net.grads(g));
            if let Some(e) = &l.encoder {
                out.extend(e.grads(g));
            }
            out.push(g.grad_or_zeros(l.gain));
        }
        out
    }

    pub(crate) fn update_running_stats(&mut self, stats: &BatchStats) {
        let m = self.config.momentum;
        for ((norm, mean), var) in self.norms.iter_mut().zip(&stats.mean).zip(&stats.var) {
            for (r, &b) in norm.running_mean.data_mut().iter_mut().zip(mean.data()) {
                *r = m * *r + (1.0 - m) * b;
            }
            for (r, &b) in norm.running_var.data_mut().iter_mut().zip(var.data()) {
                *r = m * *r + (1.0 - m) * b;
            }
        }
    }

    pub fn to_param_file(&self) -> ParamFile {
        let mut tensors: Vec<Matrix> = self.trainable_params().into_iter().cloned().collect();
        for n in &self.norms {
            tensors.push(n.running_mean.clone());
            tensors.push(n.running_var.clone());
        }
        ParamFile::new(PARAM_KIND, &self.config, tensors).expect("config serializes")
    }

    /// Rebuilds a prior from a parameter file. With `expected`, the stored
    /// configuration must match it exactly.
    pub fn from_param_file(file: &ParamFile, expected: Option<&FlowConfig>) -> Result<Self> {
        file.expect_kind(PARAM_KIND)?;
        let config: FlowConfig = file.meta_as()?;
        if let Some(want) = expected {
            if want != &config {
                return Err(Error::SpecMismatch(format!(
                    "file has {config:?}, expected {want:?}"
                )));
            }
        }
        // Build a skeleton with the right shapes, then overwrite every tensor.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut prior = FlowPrior::new(config, &mut rng)?;
        let n_norm = 2 * prior.norms.len();
        let n_train = prior.trainable_params().len();
        if n_train + n_norm != file.tensors.len() {
            return Err(Error::SpecMismatch(format!(
                "expected {} tensors, file has {}",
                n_train + n_norm,
                file.tensors.len()
            )));
        }
        let (train, stats) = file.tensors.split_at(n_train);
        let norm_slots = prior
            .norms
            .iter_mut()
            .flat_map(|n| [&mut n.running_mean, &mut n.running_var]);
        let slots: Vec<&mut Matrix> = norm_slots.collect();
        assign(slots, stats)?;
        assign(prior.trainable_params_mut(), train)?;
        Ok(prior)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.to_param_file().save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_param_file(&ParamFile::load(path)?, None)
    }
}

fn assign(slots: Vec<&mut Matrix>, values: &[Matrix]) -> Result<()> {
    for (slot, t) in slots.into_iter().zip(values) {
        if slot.shape() != t.shape() {
            return Err(Error::SpecMismatch(format!(
                "tensor shape {:?} vs {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t.clone();
    }
    Ok(())
}

impl CouplingLayer {
    pub fn keep_mask(&self) -> &Matrix {
        &self.keep
    }

    pub fn st_net_mut(&mut self) -> &mut Mlp {
        &mut self.st_net
    }

    pub fn gain(&self) -> f64 {
        self.gain.item()
    }
}

impl FlowPrior {
    pub fn coupling_mut(&mut self, i: usize) -> &mut CouplingLayer {
        &mut self.couplings[i]
    }

    pub fn norm_mut(&mut self, i: usize) -> &mut NormLayer {
        &mut self.norms[i]
    }
}

/// Trainable parameters only; normalization statistics are not included.
impl Params for FlowPrior {
    fn params(&self) -> Vec<&Matrix> {
        self.trainable_params()
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.trainable_params_mut()
    }
}
