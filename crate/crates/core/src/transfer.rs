//! Cross-domain adaptation of the univariate relation network.
//!
//! The network here maps a 7-wide error window to a 7-wide error window
//! through sigmoid hidden layers of 15, 10 and 15 units. It is first
//! trained on source-domain pairs under a sparsity-regularized loss
//! (MSE + l2 on weights + Bernoulli-KL on mean hidden activity), then
//! fine-tuned on target-domain pairs with an extra penalty that pulls the
//! adapting network's hidden activations toward the frozen source
//! network's activation distribution, measured by kernel MMD. Setting the
//! alignment weight to zero makes fine-tuning bit-identical to plain
//! regularized training from the same initialization.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::nn::{
    l2_penalty, mse_grad, mse_loss, sparse_kl_act_grad, sparse_kl_penalty, Activation, Adam,
    AdamConfig, Dense, ModelContainer, NetParams, Param,
};

// ---------------------------------------------------------------------------
// discrete KL divergence

/// `sum p ln(p/q)` over a discrete support. Both inputs must be proper
/// distributions (non-negative, summing to 1 within 1e-9) and `q` must be
/// positive wherever `p` is; `0 ln 0` counts as zero.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch(p.len(), q.len()));
    }
    if p.is_empty() {
        return Err(Error::EmptySample);
    }
    for sum in [p.iter().sum::<f64>(), q.iter().sum::<f64>()] {
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::NotNormalized(sum));
        }
    }
    let mut kl = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi < 0.0 || qi < 0.0 {
            return Err(Error::NotNormalized(pi.min(qi)));
        }
        if pi > 0.0 {
            if qi == 0.0 {
                return Err(Error::SupportMismatch(i));
            }
            kl += pi * (pi / qi).ln();
        }
    }
    Ok(kl)
}

// ---------------------------------------------------------------------------
// kernels and MMD

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Bandwidth {
    Fixed(f64),
    /// Median of the pairwise distances over the pooled samples, resolved
    /// per call. Not differentiable through the bandwidth itself, so
    /// gradient-audited paths should use `Fixed`.
    MedianHeuristic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum KernelSpec {
    Rbf { bandwidth: Bandwidth },
    Linear,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Rbf {
            bandwidth: Bandwidth::MedianHeuristic,
        }
    }
}

/// Kernel with any data-dependent bandwidth already pinned down.
#[derive(Clone, Copy, Debug)]
enum ResolvedKernel {
    Rbf { sigma2: f64 },
    Linear,
}

impl ResolvedKernel {
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            ResolvedKernel::Rbf { sigma2 } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-d2 / (2.0 * sigma2)).exp()
            }
            ResolvedKernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
        }
    }

    /// Accumulates `scale * dk(a,b)/da` into `out`.
    fn d1_add(&self, a: &[f64], b: &[f64], scale: f64, out: &mut [f64]) {
        match self {
            ResolvedKernel::Rbf { sigma2 } => {
                let k = self.eval(a, b);
                let c = -scale * k / sigma2;
                for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
                    *o += c * (x - y);
                }
            }
            ResolvedKernel::Linear => {
                for (o, y) in out.iter_mut().zip(b) {
                    *o += scale * y;
                }
            }
        }
    }
}

fn check_samples(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<usize> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptySample);
    }
    let dim = x[0].len();
    for row in x.iter().chain(y) {
        if row.len() != dim {
            return Err(Error::DimMismatch(dim, row.len()));
        }
    }
    Ok(dim)
}

impl KernelSpec {
    fn resolve(&self, x: &[Vec<f64>], y: &[Vec<f64>]) -> ResolvedKernel {
        match self {
            KernelSpec::Linear => ResolvedKernel::Linear,
            KernelSpec::Rbf { bandwidth } => {
                let sigma = match bandwidth {
                    Bandwidth::Fixed(s) => *s,
                    Bandwidth::MedianHeuristic => median_pairwise_distance(x, y),
                };
                ResolvedKernel::Rbf {
                    sigma2: sigma * sigma,
                }
            }
        }
    }
}

/// Median Euclidean distance over all pairs of the pooled sample. Falls
/// back to 1 when every point coincides.
fn median_pairwise_distance(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let pooled: Vec<&Vec<f64>> = x.iter().chain(y).collect();
    let mut dists = Vec::with_capacity(pooled.len() * (pooled.len() - 1) / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            let d2: f64 = pooled[i]
                .iter()
                .zip(pooled[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            dists.push(d2.sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(|a, b| a.total_cmp(b));
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 1 {
        dists[mid]
    } else {
        0.5 * (dists[mid - 1] + dists[mid])
    };
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

/// Biased kernel two-sample statistic:
/// `sqrt( mean k(x,x) - 2 mean k(x,y) + mean k(y,y) )`, with tiny negative
/// round-off clamped to zero before the square root.
pub fn mmd(x: &[Vec<f64>], y: &[Vec<f64>], kernel: KernelSpec) -> Result<f64> {
    check_samples(x, y)?;
    let k = kernel.resolve(x, y);
    Ok(mmd_resolved(x, y, &k))
}

fn mmd_sq_resolved(x: &[Vec<f64>], y: &[Vec<f64>], k: &ResolvedKernel) -> f64 {
    let (n, m) = (x.len() as f64, y.len() as f64);
    let mut s_xx = 0.0;
    for a in x {
        for b in x {
            s_xx += k.eval(a, b);
        }
    }
    let mut s_yy = 0.0;
    for a in y {
        for b in y {
            s_yy += k.eval(a, b);
        }
    }
    let mut s_xy = 0.0;
    for a in x {
        for b in y {
            s_xy += k.eval(a, b);
        }
    }
    (s_xx / (n * n) + s_yy / (m * m) - 2.0 * s_xy / (n * m)).max(0.0)
}

fn mmd_resolved(x: &[Vec<f64>], y: &[Vec<f64>], k: &ResolvedKernel) -> f64 {
    mmd_sq_resolved(x, y, k).sqrt()
}

/// Gradient cutoff: at the sqrt's cusp the direction is meaningless, so
/// below this value the gradient is reported as zero.
const MMD_GRAD_FLOOR: f64 = 1e-9;

/// The statistic plus its gradient with respect to each `y` sample (the
/// adapting side). `x` is treated as frozen. A data-dependent bandwidth is
/// resolved first and then held constant.
pub fn mmd_with_grad(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    kernel: KernelSpec,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let dim = check_samples(x, y)?;
    let k = kernel.resolve(x, y);
    let value = mmd_resolved(x, y, &k);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let mut grads = vec![vec![0.0; dim]; y.len()];
    if value < MMD_GRAD_FLOOR {
        return Ok((value, grads));
    }
    // d(mmd)/dy = d(mmd^2)/dy / (2 mmd); the x-x block has no y dependence.
    let outer = 1.0 / (2.0 * value);
    for (j, yj) in y.iter().enumerate() {
        let g = &mut grads[j];
        for b in y {
            k.d1_add(yj, b, 2.0 / (m * m) * outer, g);
        }
        for a in x {
            k.d1_add(yj, a, -2.0 / (n * m) * outer, g);
        }
    }
    Ok((value, grads))
}

// ---------------------------------------------------------------------------
// the univariate relation network

pub const TL_WIDTHS: [usize; 5] = [7, 15, 10, 15, 7];
pub const CONTAINER_KIND_TL: &str = "tl-univariate";

/// 7 -> 15 -> 10 -> 15 -> 7 fully connected network, sigmoid hidden
/// layers, linear output.
#[derive(Clone, Debug)]
pub struct TlNet {
    pub layers: Vec<Dense>,
}

/// Forward cache: `acts[0]` is the input, `acts[i]` the output of layer
/// `i-1`, so `acts[1..4]` are the hidden activations and `acts[4]` the
/// prediction.
#[derive(Clone, Debug)]
pub struct TlTrace {
    pub acts: Vec<Vec<f64>>,
}

impl TlNet {
    pub fn new(rng: &mut impl Rng) -> Self {
        let layers = (0..4)
            .map(|i| {
                let act = if i == 3 {
                    Activation::Identity
                } else {
                    Activation::Sigmoid
                };
                Dense::new(&format!("l{i}"), TL_WIDTHS[i], TL_WIDTHS[i + 1], act, rng)
            })
            .collect();
        TlNet { layers }
    }

    pub fn in_dim(&self) -> usize {
        TL_WIDTHS[0]
    }

    pub fn out_dim(&self) -> usize {
        TL_WIDTHS[4]
    }

    pub fn forward_trace(&self, x: &[f64]) -> TlTrace {
        let mut acts = Vec::with_capacity(5);
        acts.push(x.to_vec());
        for layer in &self.layers {
            let next = layer.forward(acts.last().unwrap());
            acts.push(next);
        }
        TlTrace { acts }
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.layers
            .iter()
            .fold(x.to_vec(), |a, layer| layer.forward(&a))
    }

    /// Backward for one sample given injections at every activation:
    /// `d_acts[i]` is the loss gradient at `acts[i+1]` (hidden layers and
    /// output). Accumulates parameter gradients.
    fn backward(&mut self, trace: &TlTrace, d_acts: &[Vec<f64>]) {
        debug_assert_eq!(d_acts.len(), 4);
        let mut d_a = d_acts[3].clone();
        for i in (0..4).rev() {
            let mut dx = vec![0.0; TL_WIDTHS[i]];
            self.layers[i].backward(&trace.acts[i], &trace.acts[i + 1], &d_a, &mut dx);
            if i > 0 {
                d_a = dx;
                for (d, inj) in d_a.iter_mut().zip(&d_acts[i - 1]) {
                    *d += inj;
                }
            }
        }
    }

    fn weight_slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().map(|l| l.w.value.as_slice())
    }

    pub fn to_container(&self) -> ModelContainer {
        let mut c = ModelContainer::new(CONTAINER_KIND_TL, json!({ "widths": TL_WIDTHS }));
        c.capture(self);
        c
    }

    pub fn from_container(c: &ModelContainer) -> Result<Self> {
        c.expect_kind(CONTAINER_KIND_TL)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = TlNet::new(&mut rng);
        c.restore(&mut net)?;
        Ok(net)
    }
}

impl NetParams for TlNet {
    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

// ---------------------------------------------------------------------------
// losses

/// Weights of the sparsity-regularized loss: MSE + `l2 * ½Σw²` (weights
/// only, biases excluded) + `sparse * Σ_j KL(rho ‖ mean activation_j)`
/// over every hidden unit.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RegWeights {
    pub l2: f64,
    pub sparse: f64,
    pub rho: f64,
}

impl Default for RegWeights {
    fn default() -> Self {
        RegWeights {
            l2: 1e-4,
            sparse: 1e-2,
            rho: 0.1,
        }
    }
}

/// Activation batches of the three hidden layers, outermost index = layer.
pub type HiddenActs = Vec<Vec<Vec<f64>>>;

/// Runs the network over a batch and collects hidden activations per layer.
pub fn collect_hidden_acts(net: &TlNet, xs: &[Vec<f64>]) -> HiddenActs {
    let mut acts: HiddenActs = vec![Vec::with_capacity(xs.len()); 3];
    for x in xs {
        let trace = net.forward_trace(x);
        for l in 0..3 {
            acts[l].push(trace.acts[l + 1].clone());
        }
    }
    acts
}

/// Alignment term of the adaptation loss: for each configured hidden
/// layer, the MMD between the frozen source network's activations (on
/// source data) and the adapting network's activations (on the current
/// batch), weighted by `gamma`.
#[derive(Clone, Debug)]
pub struct Alignment {
    pub gamma: f64,
    pub kernel: KernelSpec,
    /// Hidden layer indices (0..3) contributing to the penalty.
    pub layers: Vec<usize>,
    /// Frozen per-layer source activations, captured once.
    pub source_acts: HiddenActs,
}

pub struct BatchLoss {
    pub total: f64,
    pub mse: f64,
    pub l2: f64,
    pub sparse: f64,
    pub align: f64,
}

fn batch_traces(net: &TlNet, xs: &[Vec<f64>]) -> Vec<TlTrace> {
    xs.iter().map(|x| net.forward_trace(x)).collect()
}

fn check_batch(net: &TlNet, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::EmptySample);
    }
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch(xs.len(), ys.len()));
    }
    for (x, y) in xs.iter().zip(ys) {
        if x.len() != net.in_dim() {
            return Err(Error::DimMismatch(net.in_dim(), x.len()));
        }
        if y.len() != net.out_dim() {
            return Err(Error::DimMismatch(net.out_dim(), y.len()));
        }
    }
    Ok(())
}

/// Loss value over a batch without touching gradients. `align: None`
/// reproduces the source-domain training loss exactly.
pub fn batch_loss(
    net: &TlNet,
    xs: &[Vec<f64>],
    ys: &[Vec<f64>],
    reg: &RegWeights,
    align: Option<&Alignment>,
) -> Result<BatchLoss> {
    check_batch(net, xs, ys)?;
    let traces = batch_traces(net, xs);
    loss_of_traces(net, &traces, ys, reg, align)
}

fn loss_of_traces(
    net: &TlNet,
    traces: &[TlTrace],
    ys: &[Vec<f64>],
    reg: &RegWeights,
    align: Option<&Alignment>,
) -> Result<BatchLoss> {
    let b = traces.len();
    let mut mse = 0.0;
    for (trace, y) in traces.iter().zip(ys) {
        mse += mse_loss(&trace.acts[4], y)?;
    }
    mse /= b as f64;

    let l2 = l2_penalty(net.weight_slices());

    let mut sparse = 0.0;
    if reg.sparse != 0.0 {
        for l in 0..3 {
            let rows: Vec<&[f64]> = traces.iter().map(|t| t.acts[l + 1].as_slice()).collect();
            sparse += sparse_kl_penalty(&rows, reg.rho)?;
        }
    }

    let mut align_term = 0.0;
    if let Some(a) = align {
        if a.gamma != 0.0 {
            for &l in &a.layers {
                let target: Vec<Vec<f64>> =
                    traces.iter().map(|t| t.acts[l + 1].clone()).collect();
                align_term += mmd(&a.source_acts[l], &target, a.kernel)?;
            }
        }
    }
    let gamma = align.map_or(0.0, |a| a.gamma);
    Ok(BatchLoss {
        total: mse + reg.l2 * l2 + reg.sparse * sparse + gamma * align_term,
        mse,
        l2,
        sparse,
        align: align_term,
    })
}

/// Forward + backward over a batch; parameter gradients are accumulated
/// into the network and the loss breakdown returned. The alignment term
/// only ever differentiates the adapting network's activations; the source
/// side is constant by construction.
pub fn batch_backprop(
    net: &mut TlNet,
    xs: &[Vec<f64>],
    ys: &[Vec<f64>],
    reg: &RegWeights,
    align: Option<&Alignment>,
) -> Result<BatchLoss> {
    check_batch(net, xs, ys)?;
    let traces = batch_traces(net, xs);
    let loss = loss_of_traces(net, &traces, ys, reg, align)?;
    let b = traces.len();

    // Per-layer activation injections shared by all rows (sparsity) and
    // per-row injections (alignment).
    let mut shared: Vec<Vec<f64>> = vec![Vec::new(); 3];
    if reg.sparse != 0.0 {
        for l in 0..3 {
            let rows: Vec<&[f64]> = traces.iter().map(|t| t.acts[l + 1].as_slice()).collect();
            let g = sparse_kl_act_grad(&rows, reg.rho)?;
            shared[l] = g.iter().map(|v| v * reg.sparse).collect();
        }
    }
    let mut per_row: Vec<Vec<Vec<f64>>> = vec![Vec::new(); 3];
    if let Some(a) = align {
        if a.gamma != 0.0 {
            for &l in &a.layers {
                let target: Vec<Vec<f64>> =
                    traces.iter().map(|t| t.acts[l + 1].clone()).collect();
                let (_, grads) = mmd_with_grad(&a.source_acts[l], &target, a.kernel)?;
                per_row[l] = grads
                    .into_iter()
                    .map(|g| g.into_iter().map(|v| v * a.gamma).collect())
                    .collect();
            }
        }
    }

    for (r, (trace, y)) in traces.iter().zip(ys).enumerate() {
        let mut d_acts: Vec<Vec<f64>> = (0..4)
            .map(|i| vec![0.0; TL_WIDTHS[i + 1]])
            .collect();
        mse_grad(&trace.acts[4], y, &mut d_acts[3]);
        for v in &mut d_acts[3] {
            *v /= b as f64;
        }
        for l in 0..3 {
            if !shared[l].is_empty() {
                for (d, s) in d_acts[l].iter_mut().zip(&shared[l]) {
                    *d += s;
                }
            }
            if !per_row[l].is_empty() {
                for (d, s) in d_acts[l].iter_mut().zip(&per_row[l][r]) {
                    *d += s;
                }
            }
        }
        net.backward(trace, &d_acts);
    }

    // l2 differentiates directly into the weight grads.
    if reg.l2 != 0.0 {
        for layer in &mut net.layers {
            for (g, w) in layer.w.grad.iter_mut().zip(&layer.w.value) {
                *g += reg.l2 * w;
            }
        }
    }
    Ok(loss)
}

// ---------------------------------------------------------------------------
// training drivers

#[derive(Clone, Debug)]
pub struct TlTrainSpec {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    /// Chronological tail held out for early stopping; 0 disables it.
    pub val_fraction: f64,
    pub seed: u64,
    pub restore_best: bool,
}

impl Default for TlTrainSpec {
    fn default() -> Self {
        TlTrainSpec {
            adam: AdamConfig::default(),
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            min_delta: 1e-6,
            val_fraction: 0.1,
            seed: 0,
            restore_best: true,
        }
    }
}

/// Adaptation settings: regularizer weights plus the activation-alignment
/// term. `source_batch` bounds how many source rows feed the frozen
/// activation snapshot.
#[derive(Clone, Debug)]
pub struct TlConfig {
    pub gamma: f64,
    pub reg: RegWeights,
    pub kernel: KernelSpec,
    pub mmd_layers: Vec<usize>,
    pub source_batch: usize,
}

impl Default for TlConfig {
    fn default() -> Self {
        TlConfig {
            gamma: 0.6,
            reg: RegWeights::default(),
            kernel: KernelSpec::default(),
            mmd_layers: vec![0, 1, 2],
            source_batch: 128,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TlFitReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_mse: Option<f64>,
    pub train_losses: Vec<f64>,
}

fn val_mse(net: &TlNet, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sum += mse_loss(&net.predict(x), y).unwrap_or(f64::INFINITY);
    }
    sum / xs.len() as f64
}

fn train_loop(
    net: &mut TlNet,
    xs: &[Vec<f64>],
    ys: &[Vec<f64>],
    reg: &RegWeights,
    align: Option<&Alignment>,
    spec: &TlTrainSpec,
) -> Result<TlFitReport> {
    check_batch(net, xs, ys)?;
    let holdout = if spec.val_fraction > 0.0 {
        ((xs.len() as f64 * spec.val_fraction).ceil() as usize).min(xs.len() - 1)
    } else {
        0
    };
    let split = xs.len() - holdout;
    let (txs, vxs) = xs.split_at(split);
    let (tys, vys) = ys.split_at(split);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut adam = Adam::new(spec.adam);
    let mut order: Vec<usize> = (0..txs.len()).collect();
    let mut report = TlFitReport {
        epochs_run: 0,
        best_epoch: 0,
        best_val_mse: None,
        train_losses: Vec::new(),
    };
    let mut best_val = f64::INFINITY;
    let mut best_weights: Option<ModelContainer> = None;
    let mut since_best = 0usize;

    for epoch in 0..spec.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(spec.batch_size) {
            let bx: Vec<Vec<f64>> = chunk.iter().map(|&i| txs[i].clone()).collect();
            let by: Vec<Vec<f64>> = chunk.iter().map(|&i| tys[i].clone()).collect();
            let loss = batch_backprop(net, &bx, &by, reg, align)?;
            loss_sum += loss.total * bx.len() as f64;
            adam.step(&mut net.params_mut());
        }
        report.train_losses.push(loss_sum / txs.len() as f64);
        report.epochs_run = epoch + 1;

        if holdout > 0 {
            let vl = val_mse(net, vxs, vys);
            if vl < best_val - spec.min_delta {
                best_val = vl;
                report.best_epoch = epoch;
                since_best = 0;
                if spec.restore_best {
                    best_weights = Some(net.to_container());
                }
            } else {
                since_best += 1;
                if since_best > spec.patience {
                    break;
                }
            }
        } else {
            report.best_epoch = epoch;
        }
    }
    if holdout > 0 {
        report.best_val_mse = Some(best_val);
    }
    if let Some(snapshot) = best_weights {
        snapshot.restore(net)?;
    }
    Ok(report)
}

/// Source-domain training under the sparsity-regularized loss.
pub fn fit(
    net: &mut TlNet,
    xs: &[Vec<f64>],
    ys: &[Vec<f64>],
    reg: &RegWeights,
    spec: &TlTrainSpec,
) -> Result<TlFitReport> {
    train_loop(net, xs, ys, reg, None, spec)
}

/// Target-domain fine-tuning. The adapting network starts as a copy of
/// `source`; the alignment term compares its hidden activations on each
/// mini-batch against the frozen source network's activations on a fixed
/// source batch. `gamma = 0` skips the alignment machinery entirely and is
/// bit-identical to [`fit`] from the same initialization.
pub fn fine_tune(
    source: &TlNet,
    target_xs: &[Vec<f64>],
    target_ys: &[Vec<f64>],
    source_xs: &[Vec<f64>],
    cfg: &TlConfig,
    spec: &TlTrainSpec,
) -> Result<(TlNet, TlFitReport)> {
    let mut net = source.clone();
    net.zero_grads();
    let align = if cfg.gamma != 0.0 {
        if source_xs.is_empty() {
            return Err(Error::EmptySample);
        }
        for l in &cfg.mmd_layers {
            if *l >= 3 {
                return Err(Error::Config(format!(
                    "alignment layer index {l} out of range (hidden layers are 0..3)"
                )));
            }
        }
        let snap: Vec<Vec<f64>> = source_xs
            .iter()
            .take(cfg.source_batch)
            .cloned()
            .collect();
        Some(Alignment {
            gamma: cfg.gamma,
            kernel: cfg.kernel,
            layers: cfg.mmd_layers.clone(),
            source_acts: collect_hidden_acts(source, &snap),
        })
    } else {
        None
    };
    let report = train_loop(&mut net, target_xs, target_ys, &cfg.reg, align.as_ref(), spec)?;
    Ok((net, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use crate::nn::check_gradients;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_rows(n: usize, dim: usize, r: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    // -- KL --------------------------------------------------------------

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        let p = [0.3, 0.5, 0.2];
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn kl_hand_value() {
        let kl = kl_divergence(&[0.5, 0.5], &[0.9, 0.1]).unwrap();
        let expect = 0.5 * (5.0f64 / 9.0).ln() + 0.5 * 5.0f64.ln();
        assert_abs_diff_eq!(kl, expect, epsilon = 1e-15);
        assert!(kl > 0.0);
    }

    #[test]
    fn kl_is_asymmetric() {
        let a = kl_divergence(&[0.5, 0.5], &[0.9, 0.1]).unwrap();
        let b = kl_divergence(&[0.9, 0.1], &[0.5, 0.5]).unwrap();
        assert!((a - b).abs() > 1e-3);
    }

    #[test]
    fn kl_rejects_support_violation_and_bad_norm() {
        assert!(matches!(
            kl_divergence(&[0.5, 0.5], &[1.0, 0.0]),
            Err(Error::SupportMismatch(1))
        ));
        assert!(matches!(
            kl_divergence(&[0.6, 0.6], &[0.5, 0.5]),
            Err(Error::NotNormalized(_))
        ));
    }

    #[test]
    fn kl_zero_prob_entries_contribute_nothing() {
        let kl = kl_divergence(&[0.0, 1.0], &[0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(kl, 2.0f64.ln(), epsilon = 1e-15);
    }

    // -- MMD -------------------------------------------------------------

    fn naive_mmd(x: &[Vec<f64>], y: &[Vec<f64>], k: impl Fn(&[f64], &[f64]) -> f64) -> f64 {
        let (n, m) = (x.len() as f64, y.len() as f64);
        let mut s = 0.0;
        for a in x {
            for b in x {
                s += k(a, b) / (n * n);
            }
        }
        for a in y {
            for b in y {
                s += k(a, b) / (m * m);
            }
        }
        for a in x {
            for b in y {
                s -= 2.0 * k(a, b) / (n * m);
            }
        }
        s.max(0.0).sqrt()
    }

    #[test]
    fn mmd_zero_on_identical_sets_and_symmetric() {
        let mut r = rng(1);
        let x = random_rows(9, 4, &mut r);
        let y = random_rows(5, 4, &mut r);
        let spec = KernelSpec::default();
        assert!(mmd(&x, &x, spec).unwrap() < 1e-10);
        let a = mmd(&x, &y, spec).unwrap();
        let b = mmd(&y, &x, spec).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        assert!(a >= 0.0);
    }

    #[test]
    fn mmd_two_point_rbf_hand_value() {
        let x = vec![vec![0.0]];
        let y = vec![vec![1.0]];
        let spec = KernelSpec::Rbf {
            bandwidth: Bandwidth::Fixed(1.0),
        };
        let expect = (2.0 - 2.0 * (-0.5f64).exp()).sqrt();
        assert_abs_diff_eq!(mmd(&x, &y, spec).unwrap(), expect, epsilon = 1e-15);
    }

    #[test]
    fn linear_kernel_mmd_squared_is_mean_distance() {
        let mut r = rng(2);
        for _ in 0..20 {
            let x = random_rows(r.gen_range(1..30), 5, &mut r);
            let y = random_rows(r.gen_range(1..30), 5, &mut r);
            let v = mmd(&x, &y, KernelSpec::Linear).unwrap();
            let mean = |s: &[Vec<f64>]| -> Vec<f64> {
                let mut m = vec![0.0; 5];
                for row in s {
                    for (mm, v) in m.iter_mut().zip(row) {
                        *mm += v / s.len() as f64;
                    }
                }
                m
            };
            let (mx, my) = (mean(&x), mean(&y));
            let d2: f64 = mx.iter().zip(&my).map(|(a, b)| (a - b) * (a - b)).sum();
            assert_abs_diff_eq!(v * v, d2, epsilon = 1e-10);
        }
    }

    #[test]
    fn mmd_matches_naive_double_loop() {
        let mut r = rng(3);
        for _ in 0..30 {
            let dim = r.gen_range(1..8);
            let x = random_rows(r.gen_range(1..=50), dim, &mut r);
            let y = random_rows(r.gen_range(1..=50), dim, &mut r);
            let sigma = r.gen_range(0.3..3.0);
            let spec = KernelSpec::Rbf {
                bandwidth: Bandwidth::Fixed(sigma),
            };
            let fast = mmd(&x, &y, spec).unwrap();
            let slow = naive_mmd(&x, &y, |a, b| {
                let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
                (-d2 / (2.0 * sigma * sigma)).exp()
            });
            assert_abs_diff_eq!(fast, slow, epsilon = 1e-12);
        }
    }

    #[test]
    fn mmd_rejects_dimension_mismatch() {
        let x = vec![vec![1.0, 2.0]];
        let y = vec![vec![1.0]];
        assert!(matches!(
            mmd(&x, &y, KernelSpec::Linear),
            Err(Error::DimMismatch(2, 1))
        ));
    }

    #[test]
    fn mmd_gradient_matches_finite_difference() {
        let mut r = rng(4);
        let x = random_rows(6, 3, &mut r);
        let mut y = random_rows(4, 3, &mut r);
        let spec = KernelSpec::Rbf {
            bandwidth: Bandwidth::Fixed(0.8),
        };
        let (_, grads) = mmd_with_grad(&x, &y, spec).unwrap();
        let eps = 1e-6;
        for j in 0..y.len() {
            for d in 0..3 {
                let orig = y[j][d];
                y[j][d] = orig + eps;
                let up = mmd(&x, &y, spec).unwrap();
                y[j][d] = orig - eps;
                let down = mmd(&x, &y, spec).unwrap();
                y[j][d] = orig;
                let numeric = (up - down) / (2.0 * eps);
                assert_abs_diff_eq!(grads[j][d], numeric, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn median_heuristic_on_three_colinear_points() {
        // pooled {0, 1, 3}: distances 1, 2, 3 -> median 2
        let x = vec![vec![0.0], vec![1.0]];
        let y = vec![vec![3.0]];
        assert_eq!(median_pairwise_distance(&x, &y), 2.0);
    }

    // -- network and losses ----------------------------------------------

    #[test]
    fn tl_net_topology() {
        let net = TlNet::new(&mut rng(5));
        let dims: Vec<(usize, usize)> = net.layers.iter().map(|l| (l.in_dim(), l.out_dim())).collect();
        assert_eq!(dims, vec![(7, 15), (15, 10), (10, 15), (15, 7)]);
        assert_eq!(net.param_count(), 557);
        assert_eq!(net.layers[3].act, Activation::Identity);
    }

    #[test]
    fn zero_reg_weights_reduce_to_plain_mse() {
        let mut r = rng(6);
        let net = TlNet::new(&mut r);
        let xs = random_rows(5, 7, &mut r);
        let ys = random_rows(5, 7, &mut r);
        let reg = RegWeights { l2: 0.0, sparse: 0.0, rho: 0.1 };
        let loss = batch_loss(&net, &xs, &ys, &reg, None).unwrap();
        let mut mse = 0.0;
        for (x, y) in xs.iter().zip(&ys) {
            mse += mse_loss(&net.predict(x), y).unwrap();
        }
        assert_eq!(loss.total, mse / 5.0);
    }

    #[test]
    fn regularized_loss_gradient_matches_finite_difference() {
        let mut r = rng(7);
        let mut net = TlNet::new(&mut r);
        let xs = random_rows(6, 7, &mut r);
        let ys = random_rows(6, 7, &mut r);
        let reg = RegWeights { l2: 1e-3, sparse: 0.05, rho: 0.1 };
        net.zero_grads();
        batch_backprop(&mut net, &xs, &ys, &reg, None).unwrap();
        let report = check_gradients(
            &mut net,
            |n| batch_loss(n, &xs, &ys, &reg, None).unwrap().total,
            1e-5,
        );
        assert!(report.max_rel_err < 1e-5, "{}", report.max_rel_err);
    }

    fn test_alignment(net: &TlNet, gamma: f64, source_xs: &[Vec<f64>]) -> Alignment {
        Alignment {
            gamma,
            kernel: KernelSpec::Rbf {
                bandwidth: Bandwidth::Fixed(1.0),
            },
            layers: vec![0, 1, 2],
            source_acts: collect_hidden_acts(net, source_xs),
        }
    }

    #[test]
    fn adaptation_loss_gradient_matches_finite_difference() {
        let mut r = rng(8);
        let source = TlNet::new(&mut r);
        let source_xs = random_rows(10, 7, &mut r);
        let mut net = source.clone();
        // push the adapting net well away from the source so the per-layer
        // statistic sits far from its sqrt cusp
        for p in net.params_mut() {
            for v in &mut p.value {
                *v += r.gen_range(-0.4..0.4);
            }
        }
        let xs = random_rows(6, 7, &mut r);
        let ys = random_rows(6, 7, &mut r);
        let reg = RegWeights { l2: 1e-3, sparse: 0.02, rho: 0.1 };
        let align = test_alignment(&source, 0.7, &source_xs);
        net.zero_grads();
        batch_backprop(&mut net, &xs, &ys, &reg, Some(&align)).unwrap();
        let report = check_gradients(
            &mut net,
            |n| batch_loss(n, &xs, &ys, &reg, Some(&align)).unwrap().total,
            1e-5,
        );
        assert!(report.max_rel_err < 1e-5, "{}", report.max_rel_err);
    }

    #[test]
    fn zero_gamma_alignment_equals_no_alignment() {
        let mut r = rng(9);
        let net = TlNet::new(&mut r);
        let xs = random_rows(5, 7, &mut r);
        let ys = random_rows(5, 7, &mut r);
        let reg = RegWeights::default();
        let align = test_alignment(&net, 0.0, &xs);
        let with = batch_loss(&net, &xs, &ys, &reg, Some(&align)).unwrap();
        let without = batch_loss(&net, &xs, &ys, &reg, None).unwrap();
        assert_eq!(with.total.to_bits(), without.total.to_bits());
    }

    #[test]
    fn identical_activation_batches_have_zero_alignment_term() {
        let mut r = rng(10);
        let net = TlNet::new(&mut r);
        let xs = random_rows(8, 7, &mut r);
        let ys = random_rows(8, 7, &mut r);
        let align = test_alignment(&net, 0.5, &xs);
        // same net, same rows: every layer's batches coincide
        let loss = batch_loss(&net, &xs, &ys, &RegWeights::default(), Some(&align)).unwrap();
        assert!(loss.align < 1e-9, "alignment term {}", loss.align);
    }

    // -- training drivers ------------------------------------------------

    #[test]
    fn fine_tune_with_zero_gamma_matches_fit_trajectory() {
        let mut r = rng(11);
        let source = TlNet::new(&mut r);
        let xs = random_rows(40, 7, &mut r);
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| x.iter().map(|v| 0.5 * v).collect()).collect();
        let spec = TlTrainSpec {
            max_epochs: 5,
            val_fraction: 0.0,
            seed: 3,
            ..TlTrainSpec::default()
        };
        let cfg = TlConfig {
            gamma: 0.0,
            ..TlConfig::default()
        };
        let (_, tuned) = fine_tune(&source, &xs, &ys, &xs, &cfg, &spec).unwrap();
        let mut plain_net = source.clone();
        let plain = fit(&mut plain_net, &xs, &ys, &cfg.reg, &spec).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&tuned.train_losses), bits(&plain.train_losses));
    }

    #[test]
    fn fine_tune_is_seed_reproducible() {
        let mut r = rng(12);
        let source = TlNet::new(&mut r);
        let xs = random_rows(30, 7, &mut r);
        let ys = random_rows(30, 7, &mut r);
        let spec = TlTrainSpec {
            max_epochs: 3,
            val_fraction: 0.0,
            seed: 5,
            ..TlTrainSpec::default()
        };
        let cfg = TlConfig {
            gamma: 0.4,
            kernel: KernelSpec::Rbf {
                bandwidth: Bandwidth::Fixed(1.0),
            },
            ..TlConfig::default()
        };
        let (a, _) = fine_tune(&source, &xs, &ys, &xs, &cfg, &spec).unwrap();
        let (b, _) = fine_tune(&source, &xs, &ys, &xs, &cfg, &spec).unwrap();
        let pa = a.predict(&xs[0]);
        let pb = b.predict(&xs[0]);
        assert_eq!(pa[0].to_bits(), pb[0].to_bits());
    }

    #[test]
    fn no_shift_fine_tune_does_not_hurt() {
        let mut r = rng(13);
        let mut source = TlNet::new(&mut r);
        let xs = random_rows(60, 7, &mut r);
        let ys: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| x.iter().map(|v| (0.3 * v).sin()).collect())
            .collect();
        let reg = RegWeights::default();
        let spec = TlTrainSpec {
            max_epochs: 30,
            val_fraction: 0.0,
            seed: 7,
            ..TlTrainSpec::default()
        };
        fit(&mut source, &xs, &ys, &reg, &spec).unwrap();
        let before = val_mse(&source, &xs, &ys);
        let cfg = TlConfig {
            gamma: 0.4,
            kernel: KernelSpec::Rbf {
                bandwidth: Bandwidth::Fixed(1.0),
            },
            ..TlConfig::default()
        };
        let tune_spec = TlTrainSpec {
            max_epochs: 15,
            val_fraction: 0.0,
            seed: 8,
            ..TlTrainSpec::default()
        };
        let (tuned, _) = fine_tune(&source, &xs, &ys, &xs, &cfg, &tune_spec).unwrap();
        let after = val_mse(&tuned, &xs, &ys);
        assert!(
            after <= before * 1.05 + 1e-4,
            "fine-tune on identical data regressed: {before} -> {after}"
        );
    }

    #[test]
    fn container_round_trip() {
        let net = TlNet::new(&mut rng(14));
        let back = TlNet::from_container(&net.to_container()).unwrap();
        let x: Vec<f64> = (0..7).map(|i| i as f64 * 0.1).collect();
        assert_eq!(net.predict(&x), back.predict(&x));
    }
}
