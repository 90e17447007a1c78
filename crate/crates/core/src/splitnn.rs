//! A minimal dense-network training engine executing the split protocol on
//! real parameters: client-side forward to the cut layer, smashed-data
//! hand-off, server-side forward and loss, backward in the reverse order with
//! the cut-layer gradient crossing back, and dataset-weighted federated
//! aggregation where *common layers* (client-side for some clients,
//! server-side for others) are averaged identically on both servers after a
//! parameter exchange.
//!
//! Everything is f64 with fixed arithmetic order, so split training at any
//! cut reproduces unsplit training bit for bit, and the edge- and main-server
//! reconstructions of a common layer can be compared exactly.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::protocol::{AggregationPlan, Side};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// One dense layer: `a = act(W x + b)`, weights `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn input_dim(&self) -> usize {
        self.weights.first().map_or(0, |row| row.len())
    }

    pub fn output_dim(&self) -> usize {
        self.weights.len()
    }

    pub fn forward(&self, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        x.iter()
            .map(|row| {
                self.weights
                    .iter()
                    .zip(&self.bias)
                    .map(|(w, b)| {
                        let z = w.iter().zip(row).map(|(wi, xi)| wi * xi).sum::<f64>() + b;
                        self.activation.apply(z)
                    })
                    .collect()
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.output_dim() * self.input_dim() + self.bias.len()
    }
}

/// An ordered stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredModel {
    pub layers: Vec<DenseLayer>,
}

impl LayeredModel {
    /// Random model over the given dimension chain, hidden layers using
    /// `hidden`, the final layer emitting raw logits.
    pub fn random(dims: &[usize], hidden: Activation, seed: u64) -> LayeredModel {
        assert!(dims.len() >= 2, "need input and output dims");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let scale = (6.0 / (fan_in + fan_out) as f64).sqrt();
                DenseLayer {
                    weights: (0..fan_out)
                        .map(|_| {
                            (0..fan_in)
                                .map(|_| rng.random_range(-scale..scale))
                                .collect()
                        })
                        .collect(),
                    bias: vec![0.0; fan_out],
                    activation: if i + 1 == dims.len() - 1 {
                        Activation::Identity
                    } else {
                        hidden
                    },
                }
            })
            .collect();
        LayeredModel { layers }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn validate_chain(&self) -> Result<()> {
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Domain(format!(
                    "layer {i} emits {} values, layer {} expects {}",
                    pair[0].output_dim(),
                    i + 1,
                    pair[1].input_dim()
                )));
            }
        }
        Ok(())
    }

    /// Flat parameter view: per layer, weights row-major then bias.
    pub fn to_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            for row in &l.weights {
                out.extend_from_slice(row);
            }
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Rebuilds a model with this one's shape from a flat parameter vector.
    pub fn from_params(&self, params: &[f64]) -> Result<LayeredModel> {
        let want: usize = self.layers.iter().map(|l| l.num_params()).sum();
        if params.len() != want {
            return Err(Error::Domain(format!(
                "parameter vector has {} entries, model needs {want}",
                params.len()
            )));
        }
        let mut at = 0;
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let weights: Vec<Vec<f64>> = (0..l.output_dim())
                    .map(|_| {
                        let row = params[at..at + l.input_dim()].to_vec();
                        at += l.input_dim();
                        row
                    })
                    .collect();
                let bias = params[at..at + l.bias.len()].to_vec();
                at += l.bias.len();
                DenseLayer {
                    weights,
                    bias,
                    activation: l.activation,
                }
            })
            .collect();
        Ok(LayeredModel { layers })
    }

    /// Logits for a batch of inputs.
    pub fn forward(&self, inputs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut acts = inputs.to_vec();
        for l in &self.layers {
            acts = l.forward(&acts);
        }
        acts
    }
}

/// A labeled mini-batch (or whole dataset).
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &[Vec<f64>], labels: &[usize]) -> (f64, Vec<Vec<f64>>) {
    let b = logits.len() as f64;
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(labels)
        .map(|(row, &y)| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|z| (z - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            loss -= (exps[y] / total).ln();
            exps.iter()
                .enumerate()
                .map(|(j, e)| {
                    let p = e / total;
                    (p - if j == y { 1.0 } else { 0.0 }) / b
                })
                .collect()
        })
        .collect();
    (loss / b, grad)
}

struct LayerGrad {
    dw: Vec<Vec<f64>>,
    db: Vec<f64>,
}

/// Activations through a layer stack: `out[0]` is the input, `out[i+1]` the
/// output of layer `i`.
fn forward_cached(layers: &[DenseLayer], input: &[Vec<f64>]) -> Vec<Vec<Vec<f64>>> {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(input.to_vec());
    for l in layers {
        let next = l.forward(acts.last().unwrap());
        acts.push(next);
    }
    acts
}

/// Backpropagation through a stack given its cached activations and the
/// gradient at its output; returns per-layer gradients and the gradient at
/// the stack input.
fn backward_through(
    layers: &[DenseLayer],
    acts: &[Vec<Vec<f64>>],
    upstream: Vec<Vec<f64>>,
) -> (Vec<LayerGrad>, Vec<Vec<f64>>) {
    let mut grads: Vec<LayerGrad> = Vec::with_capacity(layers.len());
    let mut delta = upstream;
    for (i, layer) in layers.iter().enumerate().rev() {
        let output = &acts[i + 1];
        let input = &acts[i];
        // dz = da * act'(a)
        let dz: Vec<Vec<f64>> = delta
            .iter()
            .zip(output)
            .map(|(drow, arow)| {
                drow.iter()
                    .zip(arow)
                    .map(|(d, a)| d * layer.activation.derivative_from_output(*a))
                    .collect()
            })
            .collect();
        let mut dw = vec![vec![0.0; layer.input_dim()]; layer.output_dim()];
        let mut db = vec![0.0; layer.output_dim()];
        for (dzrow, xrow) in dz.iter().zip(input) {
            for (o, dzo) in dzrow.iter().enumerate() {
                db[o] += dzo;
                for (i_in, xi) in xrow.iter().enumerate() {
                    dw[o][i_in] += dzo * xi;
                }
            }
        }
        // gradient at the layer input
        delta = dz
            .iter()
            .map(|dzrow| {
                (0..layer.input_dim())
                    .map(|i_in| {
                        dzrow
                            .iter()
                            .zip(&layer.weights)
                            .map(|(dzo, wrow)| dzo * wrow[i_in])
                            .sum()
                    })
                    .collect()
            })
            .collect();
        grads.push(LayerGrad { dw, db });
    }
    grads.reverse();
    (grads, delta)
}

fn apply_grads(layers: &mut [DenseLayer], grads: &[LayerGrad], lr: f64) {
    for (layer, g) in layers.iter_mut().zip(grads) {
        for (wrow, grow) in layer.weights.iter_mut().zip(&g.dw) {
            for (w, d) in wrow.iter_mut().zip(grow) {
                *w -= lr * d;
            }
        }
        for (b, d) in layer.bias.iter_mut().zip(&g.db) {
            *b -= lr * d;
        }
    }
}

/// Per-layer activation stacks cached by a forward pass.
type ActivationCache = Vec<Vec<Vec<f64>>>;

/// Per-client split training state: the client-side stack (layers up to the
/// cut), the server-side remainder, and the forward caches the backward pass
/// consumes.
#[derive(Debug, Clone)]
pub struct SplitState {
    pub client_model: Vec<DenseLayer>,
    pub server_model: Vec<DenseLayer>,
    pub learning_rate: f64,
    client_cache: Option<ActivationCache>,
    server_cache: Option<(ActivationCache, Vec<usize>)>,
}

impl SplitState {
    pub fn new(model: &LayeredModel, cut: usize, learning_rate: f64) -> Result<SplitState> {
        if cut > model.num_layers() {
            return Err(Error::Domain(format!(
                "cut {cut} exceeds layer count {}",
                model.num_layers()
            )));
        }
        Ok(SplitState {
            client_model: model.layers[..cut].to_vec(),
            server_model: model.layers[cut..].to_vec(),
            learning_rate,
            client_cache: None,
            server_cache: None,
        })
    }

    pub fn cut(&self) -> usize {
        self.client_model.len()
    }

    /// Concatenation of both sides back into a full model.
    pub fn full_model(&self) -> LayeredModel {
        let mut layers = self.client_model.clone();
        layers.extend(self.server_model.iter().cloned());
        LayeredModel { layers }
    }
}

/// Client-side forward pass; returns the smashed data (activations at the
/// cut; the raw inputs when the cut is zero).
pub fn client_forward(state: &mut SplitState, batch: &Batch) -> Result<Vec<Vec<f64>>> {
    if batch.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    if let Some(first) = state.client_model.first() {
        if batch.inputs[0].len() != first.input_dim() {
            return Err(Error::Domain(format!(
                "input width {} does not match first layer width {}",
                batch.inputs[0].len(),
                first.input_dim()
            )));
        }
    }
    let acts = forward_cached(&state.client_model, &batch.inputs);
    let smashed = acts.last().unwrap().clone();
    state.client_cache = Some(acts);
    Ok(smashed)
}

/// Server-side forward pass and mean cross-entropy loss over the batch.
pub fn server_forward_loss(
    state: &mut SplitState,
    smashed: &[Vec<f64>],
    labels: &[usize],
) -> Result<(Vec<Vec<f64>>, f64)> {
    if smashed.len() != labels.len() {
        return Err(Error::Domain(format!(
            "{} smashed rows for {} labels",
            smashed.len(),
            labels.len()
        )));
    }
    if let Some(first) = state.server_model.first() {
        if smashed[0].len() != first.input_dim() {
            return Err(Error::Domain(format!(
                "smashed width {} does not match server-side input width {}",
                smashed[0].len(),
                first.input_dim()
            )));
        }
    }
    let acts = forward_cached(&state.server_model, smashed);
    let logits = acts.last().unwrap().clone();
    let classes = logits[0].len();
    if let Some(&bad) = labels.iter().find(|y| **y >= classes) {
        return Err(Error::Domain(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let (loss, _) = softmax_cross_entropy(&logits, labels);
    if !loss.is_finite() {
        return Err(Error::Domain(format!("non-finite loss {loss}")));
    }
    state.server_cache = Some((acts, labels.to_vec()));
    Ok((logits, loss))
}

/// One full MBGD step: the server backpropagates and updates its side, the
/// cut-layer gradient crosses back, and the client updates its side.
/// Requires the forward caches from the two forward calls.
pub fn split_backward_update(state: &mut SplitState) -> Result<()> {
    let client_acts = state
        .client_cache
        .take()
        .ok_or_else(|| Error::Domain("missing client forward cache".into()))?;
    let (server_acts, labels) = state
        .server_cache
        .take()
        .ok_or_else(|| Error::Domain("missing server forward cache".into()))?;
    let logits = server_acts.last().unwrap();
    let (_, dlogits) = softmax_cross_entropy(logits, &labels);
    let (server_grads, dsmashed) = backward_through(&state.server_model, &server_acts, dlogits);
    apply_grads(&mut state.server_model, &server_grads, state.learning_rate);
    let (client_grads, _) = backward_through(&state.client_model, &client_acts, dsmashed);
    apply_grads(&mut state.client_model, &client_grads, state.learning_rate);
    Ok(())
}

/// Convenience composition of the three protocol steps; returns the loss.
pub fn split_train_step(state: &mut SplitState, batch: &Batch) -> Result<f64> {
    let smashed = client_forward(state, batch)?;
    let (_, loss) = server_forward_loss(state, &smashed, &batch.labels)?;
    split_backward_update(state)?;
    Ok(loss)
}

/// One unsplit MBGD step on a whole model; the straight-line counterpart the
/// split path must reproduce exactly.
pub fn full_train_step(model: &mut LayeredModel, batch: &Batch, lr: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    let acts = forward_cached(&model.layers, &batch.inputs);
    let logits = acts.last().unwrap();
    let (loss, dlogits) = softmax_cross_entropy(logits, &batch.labels);
    if !loss.is_finite() {
        return Err(Error::Domain(format!("non-finite loss {loss}")));
    }
    let (grads, _) = backward_through(&model.layers, &acts, dlogits);
    apply_grads(&mut model.layers, &grads, lr);
    Ok(loss)
}

/// Mean cross-entropy of a model on a batch.
pub fn model_loss(model: &LayeredModel, batch: &Batch) -> f64 {
    let logits = model.forward(&batch.inputs);
    softmax_cross_entropy(&logits, &batch.labels).0
}

/// Classification accuracy of a model on a batch.
pub fn model_accuracy(model: &LayeredModel, batch: &Batch) -> f64 {
    let logits = model.forward(&batch.inputs);
    let hits = logits
        .iter()
        .zip(&batch.labels)
        .filter(|(row, &y)| {
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            pred == y
        })
        .count();
    hits as f64 / batch.len() as f64
}

/// Loss and flat analytic gradient (in `to_params` order) without updating.
pub fn loss_gradient(model: &LayeredModel, batch: &Batch) -> (f64, Vec<f64>) {
    let acts = forward_cached(&model.layers, &batch.inputs);
    let logits = acts.last().unwrap();
    let (loss, dlogits) = softmax_cross_entropy(logits, &batch.labels);
    let (grads, _) = backward_through(&model.layers, &acts, dlogits);
    let mut flat = Vec::new();
    for g in &grads {
        for row in &g.dw {
            flat.extend_from_slice(row);
        }
        flat.extend_from_slice(&g.db);
    }
    (loss, flat)
}

/// The two server-side reconstructions after aggregation: the edge server's
/// view of layers `1..=max_cut` and the main server's view of layers
/// `min_cut+1..=L`, each tagged with its 1-based layer index. Common layers
/// appear in both.
#[derive(Debug, Clone)]
pub struct AggregatedViews {
    pub es_layers: Vec<(usize, DenseLayer)>,
    pub ms_layers: Vec<(usize, DenseLayer)>,
}

fn layer_of(state: &SplitState, layer_idx0: usize) -> (&DenseLayer, Side) {
    let cut = state.cut();
    if layer_idx0 < cut {
        (&state.client_model[layer_idx0], Side::Client)
    } else {
        (&state.server_model[layer_idx0 - cut], Side::Server)
    }
}

/// Weighted sum over contributions in client order; the fixed order makes
/// independently computed copies bit-identical.
fn weighted_average(contribs: &[(f64, &DenseLayer)]) -> DenseLayer {
    let template = contribs[0].1;
    let mut weights = vec![vec![0.0; template.input_dim()]; template.output_dim()];
    let mut bias = vec![0.0; template.bias.len()];
    for (w, layer) in contribs {
        for (acc_row, row) in weights.iter_mut().zip(&layer.weights) {
            for (acc, v) in acc_row.iter_mut().zip(row) {
                *acc += w * v;
            }
        }
        for (acc, v) in bias.iter_mut().zip(&layer.bias) {
            *acc += w * v;
        }
    }
    DenseLayer {
        weights,
        bias,
        activation: template.activation,
    }
}

fn check_states(states: &[SplitState], plan: &AggregationPlan) -> Result<()> {
    if states.is_empty() || states.len() != plan.weights.len() {
        return Err(Error::Domain(format!(
            "{} states for a plan over {} clients",
            states.len(),
            plan.weights.len()
        )));
    }
    if let Some(bad) = states
        .iter()
        .find(|s| s.client_model.len() + s.server_model.len() != plan.num_layers)
    {
        return Err(Error::Domain(format!(
            "state with {} layers under a {}-layer plan",
            bad.client_model.len() + bad.server_model.len(),
            plan.num_layers
        )));
    }
    Ok(())
}

/// Aggregation with the common-layer exchange: both servers see all `K`
/// contributions for every layer they manage, so each common layer is the
/// same weighted average computed twice through the same arithmetic path.
pub fn aggregate_with_exchange(
    states: &[SplitState],
    plan: &AggregationPlan,
) -> Result<AggregatedViews> {
    check_states(states, plan)?;
    let max_cut = states.iter().map(SplitState::cut).max().unwrap();
    let min_cut = states.iter().map(SplitState::cut).min().unwrap();
    let all = |layer: usize| -> DenseLayer {
        let contribs: Vec<(f64, &DenseLayer)> = states
            .iter()
            .zip(&plan.weights)
            .map(|(s, &w)| (w, layer_of(s, layer - 1).0))
            .collect();
        weighted_average(&contribs)
    };
    let es_layers = (1..=max_cut).map(|j| (j, all(j))).collect();
    let ms_layers = (min_cut + 1..=plan.num_layers).map(|j| (j, all(j))).collect();
    Ok(AggregatedViews {
        es_layers,
        ms_layers,
    })
}

/// The no-exchange ablation: each server averages only the copies it holds
/// (weights renormalized over the holding subset), so common layers come out
/// different on the two sides whenever the contributions differ.
pub fn aggregate_no_exchange(
    states: &[SplitState],
    plan: &AggregationPlan,
) -> Result<AggregatedViews> {
    check_states(states, plan)?;
    let side_average = |layer: usize, side: Side| -> Option<DenseLayer> {
        let mut contribs: Vec<(f64, &DenseLayer)> = Vec::new();
        let mut total = 0.0;
        for (s, &w) in states.iter().zip(&plan.weights) {
            let (l, held) = layer_of(s, layer - 1);
            if held == side {
                contribs.push((w, l));
                total += w;
            }
        }
        if contribs.is_empty() {
            return None;
        }
        let renorm: Vec<(f64, &DenseLayer)> =
            contribs.into_iter().map(|(w, l)| (w / total, l)).collect();
        Some(weighted_average(&renorm))
    };
    let es_layers = (1..=plan.num_layers)
        .filter_map(|j| side_average(j, Side::Client).map(|l| (j, l)))
        .collect();
    let ms_layers = (1..=plan.num_layers)
        .filter_map(|j| side_average(j, Side::Server).map(|l| (j, l)))
        .collect();
    Ok(AggregatedViews {
        es_layers,
        ms_layers,
    })
}

/// Full federated aggregation: the exchanged views fused into the next
/// round's global model.
pub fn federated_aggregate(states: &[SplitState], plan: &AggregationPlan) -> Result<LayeredModel> {
    let views = aggregate_with_exchange(states, plan)?;
    let mut layers: Vec<Option<DenseLayer>> = vec![None; plan.num_layers];
    for (j, l) in views.es_layers {
        layers[j - 1] = Some(l);
    }
    for (j, l) in views.ms_layers {
        if let Some(existing) = &layers[j - 1] {
            debug_assert_eq!(existing, &l, "common layer {j} differs across servers");
        } else {
            layers[j - 1] = Some(l);
        }
    }
    Ok(LayeredModel {
        layers: layers.into_iter().map(Option::unwrap).collect(),
    })
}

/// Settings for the desk-scale training loops.
#[derive(Debug, Clone)]
pub struct ToyTrainConfig {
    pub rounds: usize,
    /// MBGD iterations per client per round.
    pub local_steps: usize,
    pub learning_rate: f64,
    /// `None` trains on the full local dataset every step.
    pub batch_size: Option<usize>,
}

/// Pooled-data loss and accuracy of the global model after each round.
#[derive(Debug, Clone)]
pub struct TrainingCurve {
    pub loss: Vec<f64>,
    pub accuracy: Vec<f64>,
}

fn slice_batch(data: &Batch, start: usize, len: usize) -> Batch {
    let n = data.len();
    let idx = (0..len).map(|i| (start + i) % n);
    Batch {
        inputs: idx.clone().map(|i| data.inputs[i].clone()).collect(),
        labels: idx.map(|i| data.labels[i]).collect(),
    }
}

/// Federated split training: each round, every client runs `local_steps` MBGD
/// steps at its own cut, then the models are aggregated with the
/// common-layer exchange and redistributed.
pub fn train_hsfl(
    global: &LayeredModel,
    cuts: &[usize],
    client_data: &[Batch],
    pooled: &Batch,
    cfg: &ToyTrainConfig,
) -> Result<(LayeredModel, TrainingCurve)> {
    if cuts.len() != client_data.len() {
        return Err(Error::Domain(format!(
            "{} cuts for {} client datasets",
            cuts.len(),
            client_data.len()
        )));
    }
    if client_data.iter().any(Batch::is_empty) {
        return Err(Error::Domain("every client needs data".into()));
    }
    let sizes: Vec<u64> = client_data.iter().map(|b| b.len() as u64).collect();
    let plan = crate::protocol::build_aggregation_plan(cuts, global.num_layers(), &sizes)?;
    let mut model = global.clone();
    let mut curve = TrainingCurve {
        loss: Vec::with_capacity(cfg.rounds),
        accuracy: Vec::with_capacity(cfg.rounds),
    };
    let mut cursors = vec![0usize; cuts.len()];
    for _round in 0..cfg.rounds {
        let mut states: Vec<SplitState> = cuts
            .iter()
            .map(|&c| SplitState::new(&model, c, cfg.learning_rate))
            .collect::<Result<_>>()?;
        for (k, state) in states.iter_mut().enumerate() {
            for _ in 0..cfg.local_steps {
                let batch = match cfg.batch_size {
                    None => client_data[k].clone(),
                    Some(b) => {
                        let out = slice_batch(&client_data[k], cursors[k], b);
                        cursors[k] = (cursors[k] + b) % client_data[k].len();
                        out
                    }
                };
                split_train_step(state, &batch)?;
            }
        }
        model = federated_aggregate(&states, &plan)?;
        curve.loss.push(model_loss(&model, pooled));
        curve.accuracy.push(model_accuracy(&model, pooled));
    }
    Ok((model, curve))
}

/// Centralized baseline: the same number of MBGD steps on the pooled data.
pub fn train_centralized(
    global: &LayeredModel,
    pooled: &Batch,
    cfg: &ToyTrainConfig,
) -> Result<(LayeredModel, TrainingCurve)> {
    let mut model = global.clone();
    let mut curve = TrainingCurve {
        loss: Vec::with_capacity(cfg.rounds),
        accuracy: Vec::with_capacity(cfg.rounds),
    };
    let mut cursor = 0usize;
    for _round in 0..cfg.rounds {
        for _ in 0..cfg.local_steps {
            let batch = match cfg.batch_size {
                None => pooled.clone(),
                Some(b) => {
                    let out = slice_batch(pooled, cursor, b);
                    cursor = (cursor + b) % pooled.len();
                    out
                }
            };
            full_train_step(&mut model, &batch, cfg.learning_rate)?;
        }
        curve.loss.push(model_loss(&model, pooled));
        curve.accuracy.push(model_accuracy(&model, pooled));
    }
    Ok((model, curve))
}

/// A linearly separable two-class dataset: labels follow the sign of a fixed
/// random direction, with a margin kept clear around the boundary.
pub fn linearly_separable(n: usize, dim: usize, margin: f64, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut w {
        *v /= norm;
    }
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    while inputs.len() < n {
        let x: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let score: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
        if score.abs() < margin {
            continue;
        }
        labels.push(if score > 0.0 { 1 } else { 0 });
        inputs.push(x);
    }
    Batch { inputs, labels }
}

/// Splits a dataset across clients with Dirichlet label skew: for each class,
/// client shares are drawn from a symmetric Dirichlet with the given
/// concentration (small alpha = heavy skew). Every client is guaranteed at
/// least one sample.
pub fn dirichlet_label_split(data: &Batch, clients: usize, alpha: f64, seed: u64) -> Vec<Batch> {
    assert!(clients >= 1 && !data.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_classes = data.labels.iter().copied().max().unwrap() + 1;
    let gamma = Gamma::new(alpha, 1.0).expect("alpha must be positive");
    let mut out: Vec<Batch> = (0..clients)
        .map(|_| Batch {
            inputs: Vec::new(),
            labels: Vec::new(),
        })
        .collect();
    for class in 0..num_classes {
        let idx: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == class).collect();
        let draws: Vec<f64> = (0..clients)
            .map(|_| gamma.sample(&mut rng).max(1e-12))
            .collect();
        let total: f64 = draws.iter().sum();
        // cumulative shares map sample positions onto clients
        let mut acc = 0.0;
        let mut boundaries: Vec<usize> = draws
            .iter()
            .map(|d| {
                acc += d / total;
                (acc * idx.len() as f64).round() as usize
            })
            .collect();
        boundaries[clients - 1] = idx.len();
        let mut start = 0;
        for (k, &end) in boundaries.iter().enumerate() {
            for &i in &idx[start..end.max(start)] {
                out[k].inputs.push(data.inputs[i].clone());
                out[k].labels.push(data.labels[i]);
            }
            start = end.max(start);
        }
    }
    // nobody may end up empty: move one sample from the largest client
    for k in 0..clients {
        if out[k].is_empty() {
            let donor = (0..clients)
                .max_by_key(|&j| out[j].len())
                .expect("at least one client has data");
            let x = out[donor].inputs.pop().unwrap();
            let y = out[donor].labels.pop().unwrap();
            out[k].inputs.push(x);
            out[k].labels.push(y);
        }
    }
    out
}
