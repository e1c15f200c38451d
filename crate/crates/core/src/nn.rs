//! Dense networks written out by hand: a plain MLP for grid patches and a
//! max-pooled set network for mesh patches, with exact backpropagation,
//! Adam training and the `DEIK` weights format.
//!
//! Hidden linear stages are followed by a rectifier; the final output is
//! linear. In the set network every encoder stage (including the last one,
//! right before pooling) is rectified.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Value fed in place of the distance of a non-visited patch member.
pub const DEFAULT_SENTINEL: f64 = -1.0;

pub const GRID_WIDTHS: [usize; 5] = [13, 128, 256, 128, 1];
pub const MESH_ENCODER_WIDTHS: [usize; 5] = [4, 64, 128, 512, 1024];
pub const MESH_HEAD_WIDTHS: [usize; 4] = [1024, 512, 256, 1];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    widths: Vec<usize>,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Argument(format!("invalid layer widths {widths:?}")));
        }
        Ok(Self { widths })
    }

    pub fn grid() -> Self {
        Self::new(GRID_WIDTHS.to_vec()).expect("valid widths")
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }
}

/// Per-member encoder, coordinatewise max pooling, then a head MLP.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SetNetSpec {
    encoder: Vec<usize>,
    head: Vec<usize>,
}

impl SetNetSpec {
    pub fn new(encoder: Vec<usize>, head: Vec<usize>) -> Result<Self> {
        if encoder.len() < 2 || head.len() < 2 || encoder.contains(&0) || head.contains(&0) {
            return Err(Error::Argument("encoder and head need at least one layer each".into()));
        }
        if encoder.last() != head.first() {
            return Err(Error::Argument(format!(
                "encoder output width {} must equal head input width {}",
                encoder.last().unwrap(),
                head[0]
            )));
        }
        // The weights file marks the pooling point by the repeated width.
        if encoder.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Argument("encoder widths must not repeat consecutively".into()));
        }
        Ok(Self { encoder, head })
    }

    pub fn mesh() -> Self {
        Self::new(MESH_ENCODER_WIDTHS.to_vec(), MESH_HEAD_WIDTHS.to_vec()).expect("valid widths")
    }

    pub fn encoder(&self) -> &[usize] {
        &self.encoder
    }

    pub fn head(&self) -> &[usize] {
        &self.head
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NetworkSpec {
    Grid(MlpSpec),
    Mesh(SetNetSpec),
}

impl NetworkSpec {
    pub fn kind_code(&self) -> u8 {
        match self {
            NetworkSpec::Grid(_) => 0,
            NetworkSpec::Mesh(_) => 1,
        }
    }

    /// `(fan_in, fan_out)` of every linear layer, encoder first for set nets.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let pairs = |w: &[usize]| w.windows(2).map(|p| (p[0], p[1])).collect::<Vec<_>>();
        match self {
            NetworkSpec::Grid(m) => pairs(&m.widths),
            NetworkSpec::Mesh(s) => {
                let mut v = pairs(&s.encoder);
                v.extend(pairs(&s.head));
                v
            }
        }
    }

    fn encoder_layers(&self) -> usize {
        match self {
            NetworkSpec::Grid(_) => 0,
            NetworkSpec::Mesh(s) => s.encoder.len() - 1,
        }
    }

    pub fn input_width(&self) -> usize {
        match self {
            NetworkSpec::Grid(m) => m.widths[0],
            NetworkSpec::Mesh(s) => s.encoder[0],
        }
    }
}

/// A network input: a flat vector for the grid net, a set of member
/// feature rows for the set net.
#[derive(Debug, Clone, PartialEq)]
pub enum NetInput {
    Vector(Vec<f64>),
    Set(Vec<[f64; 4]>),
}

/// One linear layer: `y = W x + b` with `W` stored `(fan_out, fan_in)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Array2::zeros((fan_out, fan_in)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn fan_in(&self) -> usize {
        self.weights.ncols()
    }

    // Rows of `input` through the layer.
    fn apply(&self, input: ArrayView2<f64>, relu: bool) -> Array2<f64> {
        let mut z = input.dot(&self.weights.t());
        z += &self.bias;
        if relu {
            z.mapv_inplace(|v| v.max(0.0));
        }
        z
    }

    // Single vector through the layer, without going through the GEMM path.
    fn apply_vec(&self, input: &[f64], relu: bool, out: &mut Vec<f64>) {
        out.clear();
        let w = self.weights.as_slice().expect("standard layout");
        let n = self.fan_in();
        for (row, b) in w.chunks_exact(n).zip(self.bias.iter()) {
            let v = dot(row, input) + b;
            out.push(if relu { v.max(0.0) } else { v });
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Parameter gradients, shaped like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
    /// Gradient with respect to the input rows (one row for vector inputs).
    pub input: Array2<f64>,
}

impl Gradients {
    /// Parameter gradient at the flat index used by [`NetworkWeights::param`].
    pub fn param(&self, index: usize) -> f64 {
        let (l, which, k) = locate(&self.layers, index);
        match which {
            ParamSlot::Weight => self.layers[l].weights.as_slice().unwrap()[k],
            ParamSlot::Bias => self.layers[l].bias[k],
        }
    }
}

enum ParamSlot {
    Weight,
    Bias,
}

fn locate(layers: &[Dense], mut index: usize) -> (usize, ParamSlot, usize) {
    for (l, layer) in layers.iter().enumerate() {
        let nw = layer.weights.len();
        if index < nw {
            return (l, ParamSlot::Weight, index);
        }
        index -= nw;
        if index < layer.bias.len() {
            return (l, ParamSlot::Bias, index);
        }
        index -= layer.bias.len();
    }
    panic!("parameter index out of range");
}

/// Layer parameters, architecture and sentinel constant of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    spec: NetworkSpec,
    layers: Vec<Dense>,
    sentinel: f64,
}

/// Intermediate activations of a batched forward pass.
struct Trace {
    /// Post-activation outputs of every encoder layer, inputs first.
    encoder: Vec<Array2<f64>>,
    /// For each pooled coordinate of each sample, the winning row.
    argmax: Vec<usize>,
    /// Head (or whole MLP) activations, inputs first.
    head: Vec<Array2<f64>>,
}

impl NetworkWeights {
    pub fn zeros(spec: NetworkSpec, sentinel: f64) -> Self {
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(i, o)| Dense::zeros(i, o))
            .collect();
        Self { spec, layers, sentinel }
    }

    /// Uniform fan-in scaled initialization: weights in `±sqrt(6 / fan_in)`, zero biases.
    pub fn init(spec: NetworkSpec, sentinel: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Self::zeros(spec, sentinel);
        for layer in &mut w.layers {
            let bound = (6.0 / layer.fan_in() as f64).sqrt();
            layer.weights.mapv_inplace(|_| rng.random_range(-bound..bound));
        }
        w
    }

    pub fn from_layers(spec: NetworkSpec, layers: Vec<Dense>, sentinel: f64) -> Result<Self> {
        let shapes = spec.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(Error::Shape {
                expected: shapes.len(),
                got: layers.len(),
            });
        }
        for (&(i, o), l) in shapes.iter().zip(&layers) {
            if l.weights.dim() != (o, i) || l.bias.len() != o {
                return Err(Error::Argument(format!("layer shape mismatch: expected {o}x{i}")));
            }
        }
        let layers = layers
            .into_iter()
            .map(|l| Dense {
                weights: l.weights.as_standard_layout().into_owned(),
                bias: l.bias,
            })
            .collect();
        Ok(Self { spec, layers, sentinel })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn sentinel(&self) -> f64 {
        self.sentinel
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Flat parameter access in file order (per layer: weights row-major, then biases).
    pub fn param(&self, index: usize) -> f64 {
        let (l, which, k) = locate(&self.layers, index);
        match which {
            ParamSlot::Weight => self.layers[l].weights.as_slice().unwrap()[k],
            ParamSlot::Bias => self.layers[l].bias[k],
        }
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        let (l, which, k) = locate(&self.layers, index);
        match which {
            ParamSlot::Weight => self.layers[l].weights.as_slice_mut().unwrap()[k] = value,
            ParamSlot::Bias => self.layers[l].bias[k] = value,
        }
    }

    /// Range of flat parameter indices belonging to layer `l`.
    pub fn layer_param_range(&self, l: usize) -> std::ops::Range<usize> {
        let start: usize = self.layers[..l].iter().map(|x| x.weights.len() + x.bias.len()).sum();
        start..start + self.layers[l].weights.len() + self.layers[l].bias.len()
    }

    fn check_input(&self, input: &NetInput) -> Result<()> {
        let width = self.spec.input_width();
        match (&self.spec, input) {
            (NetworkSpec::Grid(_), NetInput::Vector(v)) if v.len() == width => Ok(()),
            (NetworkSpec::Grid(_), NetInput::Vector(v)) => Err(Error::Shape {
                expected: width,
                got: v.len(),
            }),
            (NetworkSpec::Mesh(_), NetInput::Set(s)) if !s.is_empty() && width == 4 => Ok(()),
            (NetworkSpec::Mesh(_), NetInput::Set(s)) => Err(Error::Shape {
                expected: width.max(1),
                got: s.len(),
            }),
            (NetworkSpec::Grid(_), NetInput::Set(s)) => Err(Error::Shape {
                expected: width,
                got: 4 * s.len(),
            }),
            (NetworkSpec::Mesh(_), NetInput::Vector(v)) => Err(Error::Shape {
                expected: width,
                got: v.len(),
            }),
        }
    }

    /// Network output for one input.
    pub fn forward(&self, input: &NetInput) -> Result<f64> {
        self.check_input(input)?;
        match input {
            NetInput::Vector(v) => Ok(self.forward_vector(v)),
            NetInput::Set(rows) => {
                let x = rows_matrix(std::slice::from_ref(&rows.as_slice()));
                Ok(self.forward_batch(&x, &[0, rows.len()])[0])
            }
        }
    }

    fn forward_vector(&self, input: &[f64]) -> f64 {
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.apply_vec(&cur, k != last, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        cur[0]
    }

    /// Outputs for a batch. Vector inputs are the rows of `x` (`offsets`
    /// ignored); set inputs are the row ranges `offsets[s]..offsets[s+1]`.
    fn forward_batch(&self, x: &Array2<f64>, offsets: &[usize]) -> Vec<f64> {
        self.trace(x, offsets).head.last().unwrap().column(0).to_vec()
    }

    fn trace(&self, x: &Array2<f64>, offsets: &[usize]) -> Trace {
        let ne = self.spec.encoder_layers();
        let mut encoder = vec![x.clone()];
        let mut argmax = Vec::new();
        let pooled_input = if ne > 0 {
            for layer in &self.layers[..ne] {
                let next = layer.apply(encoder.last().unwrap().view(), true);
                encoder.push(next);
            }
            let feats = encoder.last().unwrap();
            let width = feats.ncols();
            let samples = offsets.len() - 1;
            let mut pooled = Array2::zeros((samples, width));
            argmax = vec![0; samples * width];
            for s in 0..samples {
                let (lo, hi) = (offsets[s], offsets[s + 1]);
                let mut best = pooled.row_mut(s);
                best.assign(&feats.row(lo));
                let arg = &mut argmax[s * width..(s + 1) * width];
                arg.fill(lo);
                for r in lo + 1..hi {
                    for (c, &v) in feats.row(r).iter().enumerate() {
                        if v > best[c] {
                            best[c] = v;
                            arg[c] = r;
                        }
                    }
                }
            }
            pooled
        } else {
            x.clone()
        };
        let mut head = vec![pooled_input];
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate().skip(ne) {
            let next = layer.apply(head.last().unwrap().view(), k != last);
            head.push(next);
        }
        Trace { encoder, argmax, head }
    }

    /// Gradients of `Σ_s weight · (f(x_s) − t_s)²` for a batch, plus the
    /// per-sample outputs.
    fn backward_batch(
        &self,
        x: &Array2<f64>,
        offsets: &[usize],
        targets: &[f64],
        weight: f64,
    ) -> (Vec<f64>, Gradients) {
        let trace = self.trace(x, offsets);
        let ne = self.spec.encoder_layers();
        let out = trace.head.last().unwrap();
        let outputs = out.column(0).to_vec();
        let mut grad = Array2::zeros(out.raw_dim());
        for (s, (&f, &t)) in outputs.iter().zip(targets).enumerate() {
            grad[[s, 0]] = 2.0 * weight * (f - t);
        }
        let mut layer_grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for k in (ne..self.layers.len()).rev() {
            let input = &trace.head[k - ne];
            let output = &trace.head[k - ne + 1];
            if k != last {
                ndarray::Zip::from(&mut grad)
                    .and(output)
                    .for_each(|g, &a| if a <= 0.0 { *g = 0.0 });
            }
            layer_grads.push(Dense {
                weights: grad.t().dot(input),
                bias: grad.sum_axis(Axis(0)),
            });
            grad = grad.dot(&self.layers[k].weights);
        }
        if ne > 0 {
            let feats = trace.encoder.last().unwrap();
            let width = feats.ncols();
            let mut scattered = Array2::zeros(feats.raw_dim());
            for s in 0..offsets.len() - 1 {
                for c in 0..width {
                    scattered[[trace.argmax[s * width + c], c]] += grad[[s, c]];
                }
            }
            grad = scattered;
            for k in (0..ne).rev() {
                let input = &trace.encoder[k];
                let output = &trace.encoder[k + 1];
                ndarray::Zip::from(&mut grad)
                    .and(output)
                    .for_each(|g, &a| if a <= 0.0 { *g = 0.0 });
                layer_grads.push(Dense {
                    weights: grad.t().dot(input),
                    bias: grad.sum_axis(Axis(0)),
                });
                grad = grad.dot(&self.layers[k].weights);
            }
        }
        layer_grads.reverse();
        (
            outputs,
            Gradients {
                layers: layer_grads,
                input: grad,
            },
        )
    }

    /// Exact gradient of `(forward(input) − target)²` with respect to every
    /// parameter and to the input. Also returns the squared error.
    pub fn backward(&self, input: &NetInput, target: f64) -> Result<(f64, Gradients)> {
        self.check_input(input)?;
        let (x, offsets) = match input {
            NetInput::Vector(v) => (Array2::from_shape_vec((1, v.len()), v.clone()).unwrap(), vec![0, 1]),
            NetInput::Set(rows) => (rows_matrix(&[rows.as_slice()]), vec![0, rows.len()]),
        };
        let (out, grads) = self.backward_batch(&x, &offsets, &[target], 1.0);
        Ok(((out[0] - target).powi(2), grads))
    }

    /// Mean squared error over examples.
    pub fn mse(&self, examples: &[(NetInput, f64)]) -> Result<f64> {
        if examples.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for chunk in examples.chunks(256) {
            let (x, offsets, targets) = self.stack(chunk)?;
            let out = self.forward_batch(&x, &offsets);
            total += out.iter().zip(&targets).map(|(f, t)| (f - t).powi(2)).sum::<f64>();
        }
        Ok(total / examples.len() as f64)
    }

    fn stack(&self, batch: &[(NetInput, f64)]) -> Result<(Array2<f64>, Vec<usize>, Vec<f64>)> {
        for (input, _) in batch {
            self.check_input(input)?;
        }
        let targets = batch.iter().map(|e| e.1).collect();
        match &self.spec {
            NetworkSpec::Grid(_) => {
                let width = self.spec.input_width();
                let mut x = Array2::zeros((batch.len(), width));
                for (r, (input, _)) in batch.iter().enumerate() {
                    if let NetInput::Vector(v) = input {
                        x.row_mut(r).assign(&ndarray::ArrayView1::from(v.as_slice()));
                    }
                }
                Ok((x, (0..=batch.len()).collect(), targets))
            }
            NetworkSpec::Mesh(_) => {
                let sets: Vec<&[[f64; 4]]> = batch
                    .iter()
                    .map(|(input, _)| match input {
                        NetInput::Set(s) => s.as_slice(),
                        NetInput::Vector(_) => unreachable!("checked above"),
                    })
                    .collect();
                let mut offsets = vec![0];
                for s in &sets {
                    offsets.push(offsets.last().unwrap() + s.len());
                }
                Ok((rows_matrix(&sets), offsets, targets))
            }
        }
    }

    /// Serializes to the little-endian `DEIK` format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let widths: Vec<usize> = match &self.spec {
            NetworkSpec::Grid(m) => m.widths.clone(),
            NetworkSpec::Mesh(s) => s.encoder.iter().chain(&s.head).copied().collect(),
        };
        let mut out = Vec::with_capacity(16 + widths.len() * 4 + self.param_count() * 8 + 8);
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        out.push(self.spec.kind_code());
        out.extend_from_slice(&(self.layers.len() as u16).to_le_bytes());
        for w in widths {
            out.extend_from_slice(&(w as u32).to_le_bytes());
        }
        for layer in &self.layers {
            for v in layer.weights.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for v in layer.bias.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.sentinel.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != WEIGHTS_MAGIC {
            return Err(Error::Format("missing DEIK magic".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != WEIGHTS_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        let kind = r.take(1)?[0];
        let layer_count = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let width_count = match kind {
            0 => layer_count + 1,
            1 => layer_count + 2,
            k => return Err(Error::Format(format!("unknown network kind {k}"))),
        };
        let mut widths = Vec::with_capacity(width_count);
        for _ in 0..width_count {
            widths.push(u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize);
        }
        let bad = |e: Error| Error::Format(e.to_string());
        let spec = match kind {
            0 => NetworkSpec::Grid(MlpSpec::new(widths).map_err(bad)?),
            _ => {
                let split = (1..widths.len().saturating_sub(1))
                    .find(|&k| widths[k] == widths[k + 1])
                    .ok_or_else(|| Error::Format("set network without pooling width".into()))?;
                NetworkSpec::Mesh(
                    SetNetSpec::new(widths[..=split].to_vec(), widths[split + 1..].to_vec()).map_err(bad)?,
                )
            }
        };
        let shapes = spec.layer_shapes();
        let params: u128 = shapes.iter().map(|&(i, o)| (i as u128 + 1) * o as u128).sum();
        let remaining = (bytes.len() - r.pos) as u128;
        if remaining != params * 8 + 8 {
            return Err(Error::Format(format!(
                "expected {} parameter bytes, found {remaining}",
                params * 8 + 8
            )));
        }
        let mut layers = Vec::with_capacity(shapes.len());
        for (i, o) in shapes {
            let weights = Array2::from_shape_vec((o, i), r.f64s(i * o)?).expect("sized");
            let bias = Array1::from(r.f64s(o)?);
            layers.push(Dense { weights, bias });
        }
        let sentinel = r.f64s(1)?[0];
        Ok(Self { spec, layers, sentinel })
    }
}

const WEIGHTS_MAGIC: &[u8; 4] = b"DEIK";
const WEIGHTS_VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("unexpected end of data".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn rows_matrix(sets: &[&[[f64; 4]]]) -> Array2<f64> {
    let total: usize = sets.iter().map(|s| s.len()).sum();
    let mut x = Array2::zeros((total, 4));
    let mut r = 0;
    for set in sets {
        for row in *set {
            x.slice_mut(s![r, ..]).assign(&ndarray::ArrayView1::from(row.as_slice()));
            r += 1;
        }
    }
    x
}

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Multiplies the step size after every epoch (1 keeps it constant).
    pub learning_rate_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without a validation improvement.
    pub patience: usize,
    /// Fraction of examples held out when `train` splits the data itself.
    pub validation_fraction: f64,
    pub shuffle: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub sentinel: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            learning_rate_decay: 1.0,
            batch_size: 64,
            max_epochs: 200,
            patience: 20,
            validation_fraction: 0.1,
            shuffle: true,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            sentinel: DEFAULT_SENTINEL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean training loss per epoch.
    pub train_loss: Vec<f64>,
    /// Validation loss before training followed by one value per epoch.
    pub validation_loss: Vec<f64>,
    /// Epoch whose weights were kept (0 = initialization).
    pub best_epoch: usize,
    pub best_validation_loss: f64,
}

struct Adam {
    m: Vec<Dense>,
    v: Vec<Dense>,
    step: i32,
}

impl Adam {
    fn new(w: &NetworkWeights) -> Self {
        let z = || {
            w.layers
                .iter()
                .map(|l| Dense::zeros(l.fan_in(), l.bias.len()))
                .collect::<Vec<_>>()
        };
        Self { m: z(), v: z(), step: 0 }
    }

    fn update(&mut self, w: &mut NetworkWeights, g: &Gradients, cfg: &TrainConfig, lr: f64) {
        self.step += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let eps = cfg.epsilon;
        let step = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (((layer, grad), m), v) in w.layers.iter_mut().zip(&g.layers).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(&mut layer.weights)
                .and(&grad.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .for_each(|p, &g, m, v| step(p, g, m, v));
            ndarray::Zip::from(&mut layer.bias)
                .and(&grad.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(|p, &g, m, v| step(p, g, m, v));
        }
    }
}

/// Trains on `examples` after holding out `validation_fraction` of them
/// (chosen by `seed`). See [`train_with_validation`].
pub fn train(
    examples: &[(NetInput, f64)],
    spec: NetworkSpec,
    config: &TrainConfig,
    seed: u64,
) -> Result<(NetworkWeights, TrainReport)> {
    if examples.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5917));
    let n_val = ((examples.len() as f64 * config.validation_fraction).round() as usize).min(examples.len() - 1);
    let validation: Vec<_> = order[..n_val].iter().map(|&k| examples[k].clone()).collect();
    let training: Vec<_> = order[n_val..].iter().map(|&k| examples[k].clone()).collect();
    let validation = if validation.is_empty() { training.clone() } else { validation };
    train_with_validation(&training, &validation, spec, config, seed)
}

/// Minibatch Adam on the mean squared error. Returns the weights with the
/// lowest validation loss seen (initial weights included) and the loss
/// history. Deterministic for a given seed.
pub fn train_with_validation(
    training: &[(NetInput, f64)],
    validation: &[(NetInput, f64)],
    spec: NetworkSpec,
    config: &TrainConfig,
    seed: u64,
) -> Result<(NetworkWeights, TrainReport)> {
    if training.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Argument("batch size must be positive".into()));
    }
    let mut weights = NetworkWeights::init(spec, config.sentinel, seed);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut adam = Adam::new(&weights);
    let initial = weights.mse(validation)?;
    if !initial.is_finite() {
        return Err(Error::Divergence { epoch: 0 });
    }
    let mut best = (initial, 0, weights.clone());
    let mut report = TrainReport {
        train_loss: Vec::new(),
        validation_loss: vec![initial],
        best_epoch: 0,
        best_validation_loss: initial,
    };
    let mut order: Vec<usize> = (0..training.len()).collect();
    let mut batch = Vec::with_capacity(config.batch_size);
    let mut lr = config.learning_rate;
    for epoch in 1..=config.max_epochs {
        if config.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&k| training[k].clone()));
            let (x, offsets, targets) = weights.stack(&batch)?;
            let (out, grads) = weights.backward_batch(&x, &offsets, &targets, 1.0 / batch.len() as f64);
            epoch_loss += out.iter().zip(&targets).map(|(f, t)| (f - t).powi(2)).sum::<f64>();
            adam.update(&mut weights, &grads, config, lr);
        }
        epoch_loss /= training.len() as f64;
        lr *= config.learning_rate_decay;
        let val = weights.mse(validation)?;
        if !epoch_loss.is_finite() || !val.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        report.train_loss.push(epoch_loss);
        report.validation_loss.push(val);
        if val < best.0 {
            best = (val, epoch, weights.clone());
        } else if epoch - best.1 >= config.patience {
            break;
        }
    }
    report.best_epoch = best.1;
    report.best_validation_loss = best.0;
    Ok((best.2, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn small_mlp(seed: u64) -> NetworkWeights {
        NetworkWeights::init(NetworkSpec::Grid(MlpSpec::new(vec![3, 5, 4, 1]).unwrap()), -1.0, seed)
    }

    fn small_set(seed: u64) -> NetworkWeights {
        let spec = SetNetSpec::new(vec![4, 6, 8], vec![8, 5, 1]).unwrap();
        NetworkWeights::init(NetworkSpec::Mesh(spec), -1.0, seed)
    }

    fn random_set(rng: &mut ChaCha8Rng, m: usize) -> Vec<[f64; 4]> {
        (0..m)
            .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn zero_weights_give_zero() {
        let w = NetworkWeights::zeros(NetworkSpec::Grid(MlpSpec::grid()), -1.0);
        assert_eq!(w.forward(&NetInput::Vector(vec![0.7; 13])).unwrap(), 0.0);
        let s = NetworkWeights::zeros(NetworkSpec::Mesh(SetNetSpec::mesh()), -1.0);
        assert_eq!(s.forward(&NetInput::Set(vec![[0.3; 4]; 5])).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_single_unit() {
        let spec = NetworkSpec::Grid(MlpSpec::new(vec![1, 1, 1]).unwrap());
        let layers = vec![
            Dense {
                weights: Array2::from_elem((1, 1), 2.0),
                bias: Array1::from(vec![-1.0]),
            },
            Dense {
                weights: Array2::from_elem((1, 1), 3.0),
                bias: Array1::from(vec![0.0]),
            },
        ];
        let w = NetworkWeights::from_layers(spec, layers, -1.0).unwrap();
        assert_eq!(w.forward(&NetInput::Vector(vec![1.0])).unwrap(), 3.0);
        assert_eq!(w.forward(&NetInput::Vector(vec![0.0])).unwrap(), 0.0);
    }

    #[test]
    fn arity_mismatch_is_shape_error() {
        let w = small_mlp(1);
        assert!(matches!(w.forward(&NetInput::Vector(vec![0.0; 4])), Err(Error::Shape { .. })));
        assert!(matches!(w.forward(&NetInput::Set(vec![[0.0; 4]])), Err(Error::Shape { .. })));
        let s = small_set(1);
        assert!(matches!(s.forward(&NetInput::Set(vec![])), Err(Error::Shape { .. })));
        assert!(matches!(s.backward(&NetInput::Vector(vec![0.0]), 0.0), Err(Error::Shape { .. })));
    }

    #[test]
    fn gradient_vanishes_at_target() {
        let w = small_mlp(3);
        let x = NetInput::Vector(vec![0.2, -0.4, 0.9]);
        let f = w.forward(&x).unwrap();
        let (loss, g) = w.backward(&x, f).unwrap();
        assert_eq!(loss, 0.0);
        assert!((0..w.param_count()).all(|k| g.param(k) == 0.0));
    }

    fn check_gradients(w: &NetworkWeights, x: &NetInput, target: f64) {
        let (_, g) = w.backward(x, target).unwrap();
        let step = 1e-6;
        for k in 0..w.param_count() {
            let mut plus = w.clone();
            plus.set_param(k, w.param(k) + step);
            let mut minus = w.clone();
            minus.set_param(k, w.param(k) - step);
            let lp = (plus.forward(x).unwrap() - target).powi(2);
            let lm = (minus.forward(x).unwrap() - target).powi(2);
            let fd = (lp - lm) / (2.0 * step);
            let a = g.param(k);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
            assert!(rel < 1e-5, "param {k}: analytic {a} vs fd {fd}");
        }
    }

    #[test]
    fn small_nets_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..4 {
            let w = small_mlp(seed);
            let x = NetInput::Vector((0..3).map(|_| rng.random_range(-1.0..1.0)).collect());
            check_gradients(&w, &x, 0.3);
            let s = small_set(seed);
            let set = NetInput::Set(random_set(&mut rng, 5));
            check_gradients(&s, &set, -0.2);
        }
    }

    #[test]
    fn non_maximal_member_gets_no_gradient() {
        let s = small_set(8);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut rows = random_set(&mut rng, 6);
        // A member far in the negative direction of a positive-weight encoder
        // is dominated everywhere; detect such members directly.
        rows.push([-50.0, -50.0, -50.0, -50.0]);
        let x = NetInput::Set(rows.clone());
        let (_, g) = s.backward(&x, 1.0).unwrap();
        let (xm, offsets) = (rows_matrix(&[rows.as_slice()]), vec![0, rows.len()]);
        let trace = s.trace(&xm, &offsets);
        for r in 0..rows.len() {
            if !trace.argmax.contains(&r) {
                assert!(g.input.row(r).iter().all(|&v| v == 0.0), "member {r}");
            }
        }
    }

    #[test]
    fn weights_round_trip_bit_exact() {
        for w in [small_mlp(4), small_set(4)] {
            let bytes = w.to_bytes();
            assert_eq!(&bytes[..4], b"DEIK");
            let back = NetworkWeights::from_bytes(&bytes).unwrap();
            assert_eq!(back.to_bytes(), bytes);
            assert_eq!(back, w);
        }
        let full = NetworkWeights::init(NetworkSpec::Mesh(SetNetSpec::mesh()), -1.0, 1);
        assert_eq!(NetworkWeights::from_bytes(&full.to_bytes()).unwrap(), full);
    }

    #[test]
    fn weights_header_layout() {
        let w = small_mlp(0);
        let b = w.to_bytes();
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(b[8], 0);
        assert_eq!(u16::from_le_bytes(b[9..11].try_into().unwrap()), 3);
        let widths: Vec<u32> = b[11..27].chunks(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
        assert_eq!(widths, vec![3, 5, 4, 1]);
        assert_eq!(b.len(), 27 + 8 * w.param_count() + 8);
        assert_eq!(f64::from_le_bytes(b[b.len() - 8..].try_into().unwrap()), -1.0);
    }

    #[test]
    fn corrupt_weights_rejected() {
        let b = small_set(0).to_bytes();
        assert!(NetworkWeights::from_bytes(&b[..b.len() - 1]).is_err());
        assert!(NetworkWeights::from_bytes(b"DEIX").is_err());
        let mut v = b.clone();
        v[8] = 7;
        assert!(NetworkWeights::from_bytes(&v).is_err());
        let mut huge = b[..11].to_vec();
        huge[9..11].copy_from_slice(&u16::MAX.to_le_bytes());
        assert!(NetworkWeights::from_bytes(&huge).is_err());
    }

    #[test]
    fn memorizes_single_example() {
        let ex = vec![(NetInput::Vector(vec![0.1, 0.5, -0.3]), 0.42)];
        let cfg = TrainConfig {
            max_epochs: 2000,
            patience: 2000,
            ..TrainConfig::default()
        };
        let (w, report) = train_with_validation(&ex, &ex, small_mlp(0).spec().clone(), &cfg, 3).unwrap();
        assert!(w.mse(&ex).unwrap() < 1e-6);
        assert!(report.best_validation_loss <= report.validation_loss[0]);
        assert!(report.train_loss.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn duplicated_full_batch_gives_same_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let data: Vec<(NetInput, f64)> = (0..16)
            .map(|_| {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let t = x[0] * 0.5 - x[2];
                (NetInput::Vector(x), t)
            })
            .collect();
        let doubled: Vec<_> = data.iter().flat_map(|e| [e.clone(), e.clone()]).collect();
        let val = data[..4].to_vec();
        let spec = small_mlp(0).spec().clone();
        let cfg = |b| TrainConfig {
            batch_size: b,
            max_epochs: 30,
            patience: 100,
            shuffle: false,
            ..TrainConfig::default()
        };
        let (_, a) = train_with_validation(&data, &val, spec.clone(), &cfg(16), 9).unwrap();
        let (_, b) = train_with_validation(&doubled, &val, spec, &cfg(32), 9).unwrap();
        assert!((a.best_validation_loss - b.best_validation_loss).abs() < 1e-9);
        for (x, y) in a.validation_loss.iter().zip(&b.validation_loss) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data: Vec<(NetInput, f64)> = (0..40)
            .map(|k| (NetInput::Vector(vec![k as f64 / 40.0, 0.1, -0.2]), (k as f64 / 40.0).powi(2)))
            .collect();
        let cfg = TrainConfig {
            max_epochs: 5,
            ..TrainConfig::default()
        };
        let spec = small_mlp(0).spec().clone();
        let (a, ra) = train(&data, spec.clone(), &cfg, 7).unwrap();
        let (b, rb) = train(&data, spec, &cfg, 7).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(ra, rb);
    }

    #[test]
    fn divergence_is_reported() {
        let data = vec![(NetInput::Vector(vec![1e200, 1e200, 1e200]), 1e200)];
        let r = train_with_validation(&data, &data, small_mlp(0).spec().clone(), &TrainConfig::default(), 1);
        assert!(matches!(r, Err(Error::Divergence { .. })));
    }

    proptest! {
        #[test]
        fn set_output_is_permutation_invariant(seed in 0u64..1000, m in 1usize..20) {
            let s = small_set(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows = random_set(&mut rng, m);
            let mut shuffled = rows.clone();
            shuffled.shuffle(&mut rng);
            let a = s.forward(&NetInput::Set(rows)).unwrap();
            let b = s.forward(&NetInput::Set(shuffled)).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }

        #[test]
        fn output_change_bounded_by_frobenius_product(seed in 0u64..1000) {
            let w = small_mlp(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = x.iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
            let bound: f64 = w.layers().iter().map(|l| l.weights.iter().map(|v| v * v).sum::<f64>().sqrt()).product();
            let dx = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let df = (w.forward(&NetInput::Vector(x)).unwrap() - w.forward(&NetInput::Vector(y)).unwrap()).abs();
            prop_assert!(df <= bound * dx + 1e-12);
        }
    }
}
