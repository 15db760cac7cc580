//! Toy trainer: decodes tokens into a small block-structured dense classifier
//! and actually trains it, producing per-block checkpoints the knowledge pool
//! can store and transplant.
//!
//! Token decoding per block:
//! - `op`     activation: 0 relu, 1 tanh, 2 sigmoid, 3 leaky-relu(0.25)
//! - `kernel` depth: 1 + token dense layers
//! - `width`  units: 4/6/10/16 — narrow blocks bottleneck the whole network
//! - `skip`   wraps each layer of the block in a residual connection (when
//!   the group exists); deep plain stacks train poorly
//!
//! Width ceilings and trainability cliffs make final accuracy mostly a
//! property of the architecture rather than the training seed, which is what
//! rank-correlation experiments need.
//!
//! Training is plain mini-batch gradient descent on softmax cross-entropy;
//! every random draw is derived from (seed, epoch), so training in chunks with
//! an epoch offset reproduces an uninterrupted run exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::latency::{latency_model, CostTable};
use crate::eval::EvalResult;
use crate::pool::{BlockWeights, TensorPayload};
use crate::rng::{self, stream};
use crate::space::{split_blocks, ArchTokens, SpaceSchema};

/// A labeled 2-class dataset with a train/val split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyDataset {
    pub train_features: Vec<Vec<f64>>,
    pub train_labels: Vec<usize>,
    pub val_features: Vec<Vec<f64>>,
    pub val_labels: Vec<usize>,
}

impl ToyDataset {
    pub fn input_dim(&self) -> usize {
        self.train_features.first().map(|f| f.len()).unwrap_or(0)
    }

    /// Two-class concentric rings (radii 1/2/3, class = ring parity, radial
    /// noise 0.25): small, nonlinear, seconds to train. The two circular
    /// decision boundaries make narrow networks visibly worse than wide ones.
    /// 2000 train / 500 val points.
    pub fn rings(seed: u64) -> Self {
        Self::rings_sized(seed, 2000, 500)
    }

    pub fn rings_sized(seed: u64, train: usize, val: usize) -> Self {
        use rand::Rng;
        let mut r = rng::derive(seed, &[stream::DATASET]);
        // Radii stay within unit scale so first-layer activations start in
        // their linear regime.
        let mut gen = |n: usize| {
            let mut features = Vec::with_capacity(n);
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                let ring = r.gen_range(0..3usize);
                let radius = 0.5 * (ring + 1) as f64 + 0.125 * rng::normal(&mut r);
                let angle = r.gen_range(0.0..std::f64::consts::TAU);
                features.push(vec![radius * angle.cos(), radius * angle.sin()]);
                labels.push(ring % 2);
            }
            (features, labels)
        };
        let (train_features, train_labels) = gen(train);
        let (val_features, val_labels) = gen(val);
        ToyDataset { train_features, train_labels, val_features, val_labels }
    }

    /// Two linearly separable blobs, for sanity oracles.
    pub fn separable_blobs(seed: u64, train: usize, val: usize) -> Self {
        use rand::Rng;
        let mut r = rng::derive(seed, &[stream::DATASET, 1]);
        let mut gen = |n: usize| {
            let mut features = Vec::with_capacity(n);
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                let label = r.gen_bool(0.5) as usize;
                let center = if label == 0 { -2.0 } else { 2.0 };
                features.push(vec![
                    center + 0.5 * rng::normal(&mut r),
                    center + 0.5 * rng::normal(&mut r),
                ]);
                labels.push(label);
            }
            (features, labels)
        };
        let (train_features, train_labels) = gen(train);
        let (val_features, val_labels) = gen(val);
        ToyDataset { train_features, train_labels, val_features, val_labels }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ToyActivation {
    Relu,
    Tanh,
    Sigmoid,
    Leaky,
}

impl ToyActivation {
    fn from_token(t: usize) -> Self {
        match t % 4 {
            0 => ToyActivation::Relu,
            1 => ToyActivation::Tanh,
            2 => ToyActivation::Sigmoid,
            _ => ToyActivation::Leaky,
        }
    }

    fn forward(self, x: f64) -> f64 {
        match self {
            ToyActivation::Relu => x.max(0.0),
            ToyActivation::Tanh => x.tanh(),
            ToyActivation::Sigmoid => crate::nn::kernels::sigmoid(x),
            ToyActivation::Leaky => {
                if x > 0.0 {
                    x
                } else {
                    0.25 * x
                }
            }
        }
    }

    fn grad_from_io(self, x: f64, y: f64) -> f64 {
        match self {
            ToyActivation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ToyActivation::Tanh => 1.0 - y * y,
            ToyActivation::Sigmoid => y * (1.0 - y),
            ToyActivation::Leaky => {
                if x > 0.0 {
                    1.0
                } else {
                    0.25
                }
            }
        }
    }
}

/// Decoded structure of one block.
#[derive(Debug, Clone)]
struct BlockPlan {
    width: usize,
    depth: usize,
    activation: ToyActivation,
    residual: bool,
}

const WIDTHS: [usize; 4] = [4, 6, 10, 16];

fn decode_blocks(tokens: &ArchTokens, schema: &SpaceSchema) -> Result<Vec<BlockPlan>> {
    let blocks = split_blocks(tokens, schema)?;
    let mut plans = Vec::with_capacity(blocks.len());
    for (b, spec) in blocks.iter().zip(&schema.blocks) {
        let mut plan =
            BlockPlan { width: 4, depth: 1, activation: ToyActivation::Relu, residual: false };
        for (&tok, g) in b.tokens.iter().zip(&spec.groups) {
            match g.name.as_str() {
                "op" => plan.activation = ToyActivation::from_token(tok),
                "kernel" => plan.depth = 1 + tok,
                "width" => plan.width = WIDTHS[tok % WIDTHS.len()],
                "skip" => plan.residual = tok == 1,
                _ => {}
            }
        }
        plans.push(plan);
    }
    Ok(plans)
}

/// Tensor names inside a block: `proj.{w,b}` adapts the incoming width, then
/// `layer{i}.{w,b}` square layers.
fn random_matrix<R: rand::Rng>(
    name: &str,
    rows: usize,
    cols: usize,
    gain: f64,
    rng: &mut R,
) -> TensorPayload {
    let bound = gain * (3.0 / cols as f64).sqrt();
    TensorPayload {
        name: name.to_string(),
        shape: vec![rows, cols],
        data: (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect(),
    }
}

fn fresh_block<R: rand::Rng>(plan: &BlockPlan, in_dim: usize, rng: &mut R) -> BlockWeights {
    let gain = match plan.activation {
        ToyActivation::Relu => std::f64::consts::SQRT_2,
        ToyActivation::Leaky => (2.0_f64 / (1.0 + 0.25 * 0.25)).sqrt(),
        ToyActivation::Tanh | ToyActivation::Sigmoid => 1.0,
    };
    let mut tensors = Vec::with_capacity(2 + 2 * plan.depth);
    tensors.push(random_matrix("proj.w", plan.width, in_dim, 1.0, rng));
    tensors.push(TensorPayload {
        name: "proj.b".to_string(),
        shape: vec![plan.width],
        data: vec![0.0; plan.width],
    });
    for l in 0..plan.depth {
        tensors.push(random_matrix(&format!("layer{l}.w"), plan.width, plan.width, gain, rng));
        tensors.push(TensorPayload {
            name: format!("layer{l}.b"),
            shape: vec![plan.width],
            data: vec![0.0; plan.width],
        });
    }
    tensors
}

/// Fresh seeded init for every block of an architecture; the same call is the
/// template supplier for pool-based initialization. The classifier head lives
/// in the last block's payload (`head.w`, `head.b`) so checkpoints are
/// self-contained.
pub fn fresh_architecture_weights(
    tokens: &ArchTokens,
    schema: &SpaceSchema,
    seed: u64,
) -> Result<Vec<BlockWeights>> {
    let plans = decode_blocks(tokens, schema)?;
    let dataset_dim = 2; // rings are planar
    let mut rng = rng::derive(seed, &[stream::FRESH_BLOCK]);
    let mut in_dim = dataset_dim;
    let mut out = Vec::with_capacity(plans.len());
    for plan in &plans {
        out.push(fresh_block(plan, in_dim, &mut rng));
        in_dim = plan.width;
    }
    if let Some(last) = out.last_mut() {
        last.push(random_matrix("head.w", 2, in_dim, 1.0, &mut rng));
        last.push(TensorPayload { name: "head.b".to_string(), shape: vec![2], data: vec![0.0; 2] });
    }
    Ok(out)
}

pub struct ToyTrainOptions {
    pub epochs: usize,
    /// Global index of the first epoch; lets chunked training reproduce an
    /// uninterrupted run.
    pub epoch_offset: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl ToyTrainOptions {
    pub fn new(epochs: usize, seed: u64) -> Self {
        ToyTrainOptions { epochs, epoch_offset: 0, seed, batch_size: 64, learning_rate: 0.2 }
    }
}

struct ToyNet {
    plans: Vec<BlockPlan>,
    blocks: Vec<BlockWeights>,
    last_width: usize,
}

impl ToyNet {
    fn assemble(
        tokens: &ArchTokens,
        schema: &SpaceSchema,
        init: Option<Vec<BlockWeights>>,
        seed: u64,
    ) -> Result<ToyNet> {
        let plans = decode_blocks(tokens, schema)?;
        let blocks = match init {
            Some(w) => {
                if w.len() != plans.len() {
                    return Err(Error::Dimension {
                        segment: "toy.init".to_string(),
                        expected: plans.len(),
                        got: w.len(),
                    });
                }
                // Shapes must match the decoded plan exactly.
                for (bw, (i, plan)) in w.iter().zip(plans.iter().enumerate()) {
                    let proj = bw
                        .iter()
                        .find(|t| t.name == "proj.w")
                        .ok_or_else(|| Error::Dimension {
                            segment: format!("toy.init[{i}].proj.w"),
                            expected: plan.width,
                            got: 0,
                        })?;
                    if proj.shape[0] != plan.width {
                        return Err(Error::Dimension {
                            segment: format!("toy.init[{i}].proj.w"),
                            expected: plan.width,
                            got: proj.shape[0],
                        });
                    }
                }
                w
            }
            None => fresh_architecture_weights(tokens, schema, seed)?,
        };
        let last_width = plans.last().map(|p| p.width).unwrap_or(2);
        let mut net = ToyNet { plans, blocks, last_width };
        if net.find(net.blocks.len() - 1, "head.w").is_none() {
            // Init paths that predate head-carrying checkpoints get a fresh one.
            let mut rng = rng::derive(seed, &[stream::FRESH_BLOCK, HEAD_STREAM]);
            let head = random_matrix("head.w", 2, last_width, 1.0, &mut rng);
            let last = net.blocks.last_mut().unwrap();
            last.push(head);
            last.push(TensorPayload {
                name: "head.b".to_string(),
                shape: vec![2],
                data: vec![0.0; 2],
            });
        }
        let head = net.tensor(net.blocks.len() - 1, "head.w");
        if head.shape != [2, last_width] {
            return Err(Error::Dimension {
                segment: "toy.init.head.w".to_string(),
                expected: 2 * last_width,
                got: head.data.len(),
            });
        }
        Ok(net)
    }

    fn find(&self, block: usize, name: &str) -> Option<&TensorPayload> {
        self.blocks[block].iter().find(|t| t.name == name)
    }

    fn tensor(&self, block: usize, name: &str) -> &TensorPayload {
        self.find(block, name).expect("tensor present")
    }

    fn head(&self) -> (&TensorPayload, &TensorPayload) {
        let last = self.blocks.len() - 1;
        (self.tensor(last, "head.w"), self.tensor(last, "head.b"))
    }
}

const HEAD_STREAM: u64 = 0x4845_4144; // "HEAD"

struct LayerTrace {
    /// pre-activation
    z: Vec<f64>,
    /// activation output
    a: Vec<f64>,
    /// layer output (a, or h_in + a with residual)
    h: Vec<f64>,
}

/// Per-sample activations cached for backprop.
struct Trace {
    /// Per block: projection output, layer traces, block output.
    blocks: Vec<(Vec<f64>, Vec<LayerTrace>, Vec<f64>)>,
    logits: [f64; 2],
    probs: [f64; 2],
}

impl Trace {
    fn block_output(&self, bi: usize) -> &[f64] {
        &self.blocks[bi].2
    }
}

fn forward_sample(net: &ToyNet, x: &[f64]) -> Trace {
    let mut cur = x.to_vec();
    let mut blocks = Vec::with_capacity(net.plans.len());
    for (bi, plan) in net.plans.iter().enumerate() {
        let proj_w = net.tensor(bi, "proj.w");
        let proj_b = net.tensor(bi, "proj.b");
        let mut proj_out = vec![0.0; plan.width];
        crate::nn::kernels::matvec_into(&proj_w.data, &cur, plan.width, cur.len(), &mut proj_out);
        for (o, b) in proj_out.iter_mut().zip(&proj_b.data) {
            *o += b;
        }
        let mut layer_traces: Vec<LayerTrace> = Vec::with_capacity(plan.depth);
        let mut h = proj_out.clone();
        for l in 0..plan.depth {
            let w = net.tensor(bi, &format!("layer{l}.w"));
            let b = net.tensor(bi, &format!("layer{l}.b"));
            let mut z = vec![0.0; plan.width];
            crate::nn::kernels::matvec_into(&w.data, &h, plan.width, plan.width, &mut z);
            for (zk, bk) in z.iter_mut().zip(&b.data) {
                *zk += bk;
            }
            let a: Vec<f64> = z.iter().map(|&v| plan.activation.forward(v)).collect();
            let h_out: Vec<f64> = if plan.residual {
                h.iter().zip(&a).map(|(hi, ai)| hi + ai).collect()
            } else {
                a.clone()
            };
            layer_traces.push(LayerTrace { z, a, h: h_out.clone() });
            h = h_out;
        }
        blocks.push((proj_out, layer_traces, h.clone()));
        cur = h;
    }
    let (head_w, head_b) = net.head();
    let mut logits = [0.0; 2];
    for c in 0..2 {
        let mut acc = head_b.data[c];
        for (k, v) in cur.iter().enumerate() {
            acc += head_w.data[c * net.last_width + k] * v;
        }
        logits[c] = acc;
    }
    let mut lp = [0.0; 2];
    crate::nn::kernels::log_softmax_into(&logits, &mut lp);
    Trace { blocks, logits, probs: [lp[0].exp(), lp[1].exp()] }
}

fn val_accuracy(net: &ToyNet, data: &ToyDataset) -> f64 {
    let mut correct = 0usize;
    for (x, &y) in data.val_features.iter().zip(&data.val_labels) {
        let t = forward_sample(net, x);
        let pred = if t.logits[1] > t.logits[0] { 1 } else { 0 };
        if pred == y {
            correct += 1;
        }
    }
    correct as f64 / data.val_labels.len() as f64
}

/// Accumulated gradients, mirroring the block tensor structure.
struct Grads {
    blocks: Vec<Vec<Vec<f64>>>,
}

impl Grads {
    fn zeros(net: &ToyNet) -> Self {
        Grads {
            blocks: net
                .blocks
                .iter()
                .map(|bw| bw.iter().map(|t| vec![0.0; t.data.len()]).collect())
                .collect(),
        }
    }
}

fn backward_sample(net: &ToyNet, x: &[f64], label: usize, trace: &Trace, grads: &mut Grads) {
    // d loss / d logits for softmax cross-entropy.
    let mut d_logits = [trace.probs[0], trace.probs[1]];
    d_logits[label] -= 1.0;

    let last_out = trace.block_output(net.blocks.len() - 1).to_vec();
    let last = net.blocks.len() - 1;
    let hw = net.blocks[last].iter().position(|t| t.name == "head.w").unwrap();
    let hb = net.blocks[last].iter().position(|t| t.name == "head.b").unwrap();
    let (head_w, _) = net.head();
    let mut d_cur = vec![0.0; net.last_width];
    for c in 0..2 {
        grads.blocks[last][hb][c] += d_logits[c];
        for k in 0..net.last_width {
            grads.blocks[last][hw][c * net.last_width + k] += d_logits[c] * last_out[k];
            d_cur[k] += head_w.data[c * net.last_width + k] * d_logits[c];
        }
    }

    for bi in (0..net.plans.len()).rev() {
        let plan = &net.plans[bi];
        let (proj_out, layers, _) = &trace.blocks[bi];
        let block_input: Vec<f64> = if bi == 0 {
            x.to_vec()
        } else {
            trace.block_output(bi - 1).to_vec()
        };

        let mut d_h = d_cur.clone();
        for l in (0..plan.depth).rev() {
            let lt = &layers[l];
            let input: &[f64] = if l == 0 { proj_out } else { &layers[l - 1].h };
            let mut d_z = vec![0.0; plan.width];
            for k in 0..plan.width {
                d_z[k] = d_h[k] * plan.activation.grad_from_io(lt.z[k], lt.a[k]);
            }
            let w = net.tensor(bi, &format!("layer{l}.w"));
            let wi = net.blocks[bi].iter().position(|t| t.name == format!("layer{l}.w")).unwrap();
            let bi_idx =
                net.blocks[bi].iter().position(|t| t.name == format!("layer{l}.b")).unwrap();
            // With residuals the identity path carries d_h through unchanged.
            let mut d_in = if plan.residual { d_h.clone() } else { vec![0.0; plan.width] };
            for r in 0..plan.width {
                grads.blocks[bi][bi_idx][r] += d_z[r];
                let row = r * plan.width;
                for c in 0..plan.width {
                    grads.blocks[bi][wi][row + c] += d_z[r] * input[c];
                    d_in[c] += w.data[row + c] * d_z[r];
                }
            }
            d_h = d_in;
        }
        let d_proj = d_h;
        let proj_w = net.tensor(bi, "proj.w");
        let pw = net.blocks[bi].iter().position(|t| t.name == "proj.w").unwrap();
        let pb = net.blocks[bi].iter().position(|t| t.name == "proj.b").unwrap();
        let in_dim = block_input.len();
        let mut d_input = vec![0.0; in_dim];
        for r in 0..plan.width {
            grads.blocks[bi][pb][r] += d_proj[r];
            let row = r * in_dim;
            for c in 0..in_dim {
                grads.blocks[bi][pw][row + c] += d_proj[r] * block_input[c];
                d_input[c] += proj_w.data[row + c] * d_proj[r];
            }
        }
        d_cur = d_input;
    }
}

/// Trains the decoded network and returns validation accuracy, modeled
/// latency, per-block checkpoints, and cost_units = epochs.
pub fn toy_train(
    tokens: &ArchTokens,
    schema: &SpaceSchema,
    init: Option<Vec<BlockWeights>>,
    opts: &ToyTrainOptions,
    data: &ToyDataset,
    table: &CostTable,
) -> Result<EvalResult> {
    use rand::seq::SliceRandom;
    if opts.epochs == 0 {
        return Err(Error::Config("toy training needs at least one epoch".to_string()));
    }
    let mut net = ToyNet::assemble(tokens, schema, init, opts.seed)?;
    let n = data.train_features.len();
    for e in 0..opts.epochs {
        let epoch = opts.epoch_offset + e;
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = rng::derive(opts.seed, &[stream::TOY_TRAIN, epoch as u64]);
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(opts.batch_size) {
            let mut grads = Grads::zeros(&net);
            let mut batch_loss = 0.0;
            for &idx in chunk {
                let x = &data.train_features[idx];
                let y = data.train_labels[idx];
                let trace = forward_sample(&net, x);
                batch_loss += -(trace.probs[y].max(1e-300)).ln();
                backward_sample(&net, x, y, &trace, &mut grads);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    reason: "non-finite loss".to_string(),
                });
            }
            let scale = opts.learning_rate / chunk.len() as f64;
            for (bi, bw) in grads.blocks.iter().enumerate() {
                for (ti, tg) in bw.iter().enumerate() {
                    for (w, g) in net.blocks[bi][ti].data.iter_mut().zip(tg) {
                        *w -= scale * g;
                    }
                }
            }
        }
    }
    let accuracy = val_accuracy(&net, data);
    Ok(EvalResult {
        accuracy,
        latency: latency_model(tokens, schema, table)?,
        cost_units: opts.epochs as u64,
        checkpoint: Some(net.blocks),
    })
}
