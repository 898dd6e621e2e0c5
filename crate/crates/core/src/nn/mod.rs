//! Small feed-forward networks with a categorical time embedding.
//!
//! The input is a time index (embedded through a learned table) concatenated
//! with a sparse numeric feature vector. All parameters live in one flat
//! buffer; dense weights are stored `[input][output]` so that zero inputs and
//! inactive ReLU units can be skipped in both passes.

mod adam;
pub mod ops;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, OptimizerState};

use crate::error::{Error, Result};
use ops::{axpy, dot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Identity,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Number of time categories; valid time indices are `1..=vocab`.
    pub vocab: usize,
    pub embedding_dim: usize,
    /// Length of the numeric feature vector.
    pub features: usize,
    pub hidden: Vec<usize>,
    pub hidden_activation: Activation,
    pub outputs: usize,
    pub head: Head,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamGroup {
    Embedding,
    Weights,
    Bias,
}

/// A named slice of the flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub group: ParamGroup,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Dense {
    inputs: usize,
    outputs: usize,
    weights: usize,
    bias: usize,
    activation: Activation,
}

/// Sparse numeric feature vector of logical length `len`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVec {
    pub len: usize,
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVec {
    pub fn new(len: usize) -> Self {
        Self {
            len,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_dense(values: &[f64]) -> Self {
        let mut v = Self::new(values.len());
        for (i, &x) in values.iter().enumerate() {
            if x != 0.0 {
                v.push(i, x);
            }
        }
        v
    }

    #[inline]
    pub fn push(&mut self, index: usize, value: f64) {
        self.indices.push(index as u32);
        self.values.push(value);
    }

    pub fn clear(&mut self) {
        self.indices.clear();
        self.values.clear();
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        for (&i, &x) in self.indices.iter().zip(&self.values) {
            out[i as usize] += x;
        }
        out
    }
}

/// Intermediate values from one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    version: u64,
    time_index: usize,
    input: SparseVec,
    embedded: Vec<f64>,
    /// Post-activation output of every dense layer; the last entry is the raw output.
    activations: Vec<Vec<f64>>,
    head_output: Option<Vec<f64>>,
}

impl Tape {
    /// Output before the head (logits for a softmax network).
    pub fn raw_output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Gradient buffer laid out like [`Network::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<f64>);

#[derive(Debug, Clone)]
pub struct Network {
    arch: Architecture,
    params: Vec<f64>,
    layers: Vec<Dense>,
    segments: Vec<Segment>,
    version: u64,
}

/// Networks are equal when they compute the same function; the tape version is ignored.
impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.params == other.params
    }
}

impl Network {
    /// Zero-initialized network.
    pub fn zeros(arch: Architecture) -> Result<Self> {
        if arch.vocab == 0 || arch.outputs == 0 {
            return Err(Error::Shape("vocab and outputs must be positive".into()));
        }
        if arch.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Shape("hidden layers must be non-empty".into()));
        }
        let mut segments = vec![Segment {
            name: "embedding".into(),
            group: ParamGroup::Embedding,
            offset: 0,
            len: arch.vocab * arch.embedding_dim,
        }];
        let mut offset = segments[0].len;
        let mut layers = Vec::new();
        let mut inputs = arch.embedding_dim + arch.features;
        let widths: Vec<usize> = arch.hidden.iter().copied().chain([arch.outputs]).collect();
        for (k, &outputs) in widths.iter().enumerate() {
            let last = k + 1 == widths.len();
            let weights = offset;
            let bias = weights + inputs * outputs;
            segments.push(Segment {
                name: format!("dense{k}.weight"),
                group: ParamGroup::Weights,
                offset: weights,
                len: inputs * outputs,
            });
            segments.push(Segment {
                name: format!("dense{k}.bias"),
                group: ParamGroup::Bias,
                offset: bias,
                len: outputs,
            });
            layers.push(Dense {
                inputs,
                outputs,
                weights,
                bias,
                activation: if last {
                    Activation::Identity
                } else {
                    arch.hidden_activation
                },
            });
            offset = bias + outputs;
            inputs = outputs;
        }
        Ok(Self {
            arch,
            params: vec![0.0; offset],
            layers,
            segments,
            version: 0,
        })
    }

    /// Fan-in scaled uniform dense weights, zero biases, small uniform embedding rows.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        for seg in net.segments.clone() {
            let range = &mut net.params[seg.offset..seg.offset + seg.len];
            match seg.group {
                ParamGroup::Embedding => {
                    range.iter_mut().for_each(|w| *w = rng.gen_range(-0.05..0.05));
                }
                ParamGroup::Weights => {
                    let layer = net
                        .layers
                        .iter()
                        .find(|l| l.weights == seg.offset)
                        .copied()
                        .expect("weight segment belongs to a layer");
                    let gain = match layer.activation {
                        Activation::Relu => 6.0,
                        _ => 3.0,
                    };
                    let limit = (gain / layer.inputs as f64).sqrt();
                    range.iter_mut().for_each(|w| *w = rng.gen_range(-limit..limit));
                }
                ParamGroup::Bias => {}
            }
        }
        Ok(net)
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        if params.len() != net.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access; bumps the version so older tapes are rejected.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients(vec![0.0; self.params.len()])
    }

    fn check_input(&self, time_index: usize, features: &SparseVec) -> Result<()> {
        if features.len != self.arch.features {
            return Err(Error::Shape(format!(
                "expected {} features, got {}",
                self.arch.features, features.len
            )));
        }
        if time_index == 0 || time_index > self.arch.vocab {
            return Err(Error::Shape(format!(
                "time index {time_index} outside 1..={}",
                self.arch.vocab
            )));
        }
        if features.indices.iter().any(|&i| i as usize >= features.len) {
            return Err(Error::Shape("feature index out of range".into()));
        }
        Ok(())
    }

    /// Forward pass including the output head.
    pub fn forward(&self, time_index: usize, features: &SparseVec) -> Result<(Vec<f64>, Tape)> {
        let mut tape = Tape::default();
        self.forward_into(time_index, features, true, &mut tape)?;
        let out = tape
            .head_output
            .clone()
            .unwrap_or_else(|| tape.raw_output().to_vec());
        Ok((out, tape))
    }

    /// Forward pass stopping before the head (raw logits for a softmax network).
    pub fn forward_logits(&self, time_index: usize, features: &SparseVec) -> Result<(Vec<f64>, Tape)> {
        let mut tape = Tape::default();
        self.forward_into(time_index, features, false, &mut tape)?;
        Ok((tape.raw_output().to_vec(), tape))
    }

    /// Allocation-reusing forward pass. With `apply_head == false` the head is skipped.
    pub fn forward_into(
        &self,
        time_index: usize,
        features: &SparseVec,
        apply_head: bool,
        tape: &mut Tape,
    ) -> Result<()> {
        self.check_input(time_index, features)?;
        let dim = self.arch.embedding_dim;
        tape.version = self.version;
        tape.time_index = time_index;
        tape.input.len = features.len;
        tape.input.indices.clone_from(&features.indices);
        tape.input.values.clone_from(&features.values);
        let row = (time_index - 1) * dim;
        tape.embedded.clear();
        tape.embedded.extend_from_slice(&self.params[row..row + dim]);
        tape.activations.resize_with(self.layers.len(), Vec::new);

        for (k, layer) in self.layers.iter().enumerate() {
            let (done, rest) = tape.activations.split_at_mut(k);
            let out = &mut rest[0];
            out.clear();
            out.extend_from_slice(&self.params[layer.bias..layer.bias + layer.outputs]);
            let w = &self.params[layer.weights..layer.weights + layer.inputs * layer.outputs];
            let n = layer.outputs;
            if k == 0 {
                for (j, &x) in tape.embedded.iter().enumerate() {
                    axpy(x, &w[j * n..(j + 1) * n], out);
                }
                for (&i, &x) in features.indices.iter().zip(&features.values) {
                    let j = dim + i as usize;
                    axpy(x, &w[j * n..(j + 1) * n], out);
                }
            } else {
                for (j, &x) in done[k - 1].iter().enumerate() {
                    if x != 0.0 {
                        axpy(x, &w[j * n..(j + 1) * n], out);
                    }
                }
            }
            if layer.activation != Activation::Identity {
                out.iter_mut().for_each(|z| *z = layer.activation.apply(*z));
            }
        }

        tape.head_output = match (apply_head, self.arch.head) {
            (true, Head::Softmax) => {
                let mut probs = vec![0.0; self.arch.outputs];
                ops::masked_softmax(tape.raw_output(), |_| true, &mut probs);
                Some(probs)
            }
            _ => None,
        };
        Ok(())
    }

    /// Gradients of `<output, output_gradient>` with respect to every parameter.
    pub fn backward(&self, tape: &Tape, output_gradient: &[f64]) -> Result<Gradients> {
        let mut grads = self.zero_gradients();
        self.backward_into(tape, output_gradient, &mut grads.0)?;
        Ok(grads)
    }

    /// Accumulates gradients into `grads` (which must be parameter-shaped).
    pub fn backward_into(&self, tape: &Tape, output_gradient: &[f64], grads: &mut [f64]) -> Result<()> {
        if tape.version != self.version {
            return Err(Error::StaleTape {
                tape: tape.version,
                network: self.version,
            });
        }
        if tape.activations.len() != self.layers.len() {
            return Err(Error::Shape("tape does not come from this network".into()));
        }
        if output_gradient.len() != self.arch.outputs || grads.len() != self.params.len() {
            return Err(Error::Shape("gradient buffer shape mismatch".into()));
        }

        let mut delta: Vec<f64> = match &tape.head_output {
            Some(probs) => {
                let inner = dot(probs, output_gradient);
                probs
                    .iter()
                    .zip(output_gradient)
                    .map(|(p, g)| p * (g - inner))
                    .collect()
            }
            None => output_gradient.to_vec(),
        };
        let dim = self.arch.embedding_dim;
        let mut next_delta = Vec::new();

        for k in (0..self.layers.len()).rev() {
            let layer = self.layers[k];
            let out = &tape.activations[k];
            if layer.activation != Activation::Identity {
                for (d, &a) in delta.iter_mut().zip(out) {
                    *d *= layer.activation.derivative_from_output(a);
                }
            }
            let n = layer.outputs;
            axpy(1.0, &delta, &mut grads[layer.bias..layer.bias + n]);
            let w = &self.params[layer.weights..layer.weights + layer.inputs * n];
            let gw = layer.weights;
            if k == 0 {
                let row = (tape.time_index - 1) * dim;
                for (j, &x) in tape.embedded.iter().enumerate() {
                    axpy(x, &delta, &mut grads[gw + j * n..gw + (j + 1) * n]);
                    grads[row + j] += dot(&w[j * n..(j + 1) * n], &delta);
                }
                for (&i, &x) in tape.input.indices.iter().zip(&tape.input.values) {
                    let j = dim + i as usize;
                    axpy(x, &delta, &mut grads[gw + j * n..gw + (j + 1) * n]);
                }
            } else {
                let prev = &tape.activations[k - 1];
                next_delta.clear();
                next_delta.resize(layer.inputs, 0.0);
                for (j, &x) in prev.iter().enumerate() {
                    if x != 0.0 {
                        axpy(x, &delta, &mut grads[gw + j * n..gw + (j + 1) * n]);
                    }
                    let back = self.layers[k - 1].activation;
                    if back != Activation::Relu || x > 0.0 {
                        next_delta[j] = dot(&w[j * n..(j + 1) * n], &delta);
                    }
                }
                std::mem::swap(&mut delta, &mut next_delta);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn arch(head: Head, activation: Activation) -> Architecture {
        Architecture {
            vocab: 4,
            embedding_dim: 3,
            features: 6,
            hidden: vec![7, 5],
            hidden_activation: activation,
            outputs: 4,
            head,
        }
    }

    fn random_input(rng: &mut ChaCha8Rng) -> SparseVec {
        let dense: Vec<f64> = (0..6)
            .map(|i| if i % 3 == 1 { 0.0 } else { rng.gen_range(-1.0..1.0) })
            .collect();
        SparseVec::from_dense(&dense)
    }

    /// Straight-line dense re-implementation used as an oracle.
    fn reference_forward(net: &Network, t: usize, x: &[f64]) -> Vec<f64> {
        let a = net.architecture();
        let p = net.params();
        let emb = &p[(t - 1) * a.embedding_dim..t * a.embedding_dim];
        let mut h: Vec<f64> = emb.iter().chain(x).copied().collect();
        let mut offset = a.vocab * a.embedding_dim;
        let widths: Vec<usize> = a.hidden.iter().copied().chain([a.outputs]).collect();
        for (k, &out) in widths.iter().enumerate() {
            let inp = h.len();
            let mut z = vec![0.0; out];
            for (o, zo) in z.iter_mut().enumerate() {
                let mut s = p[offset + inp * out + o];
                for (i, hi) in h.iter().enumerate() {
                    s += hi * p[offset + i * out + o];
                }
                *zo = s;
            }
            offset += inp * out + out;
            if k + 1 < widths.len() {
                for zo in z.iter_mut() {
                    *zo = match a.hidden_activation {
                        Activation::Relu => zo.max(0.0),
                        Activation::Tanh => zo.tanh(),
                        Activation::Identity => *zo,
                    };
                }
            }
            h = z;
        }
        if a.head == Head::Softmax {
            let m = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = h.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            h = e.iter().map(|v| v / s).collect();
        }
        h
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Network::zeros(arch(Head::Identity, Activation::Relu)).unwrap();
        let (out, _) = net.forward(2, &SparseVec::from_dense(&[1.0; 6])).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn equal_logits_give_uniform_softmax() {
        let net = Network::zeros(arch(Head::Softmax, Activation::Relu)).unwrap();
        let (out, _) = net.forward(1, &SparseVec::new(6)).unwrap();
        for p in out {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (head, act) in [
            (Head::Identity, Activation::Relu),
            (Head::Softmax, Activation::Tanh),
            (Head::Softmax, Activation::Relu),
        ] {
            let net = Network::init(arch(head, act), &mut rng).unwrap();
            for t in 1..=4 {
                let x = random_input(&mut rng);
                let (out, _) = net.forward(t, &x).unwrap();
                let expect = reference_forward(&net, t, &x.to_dense());
                for (a, b) in out.iter().zip(&expect) {
                    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn linear_gradient_is_input() {
        let a = Architecture {
            vocab: 1,
            embedding_dim: 0,
            features: 3,
            hidden: vec![],
            hidden_activation: Activation::Relu,
            outputs: 1,
            head: Head::Identity,
        };
        let net = Network::from_params(a, vec![0.5, -1.0, 2.0, 0.1]).unwrap();
        let x = SparseVec::from_dense(&[3.0, 0.0, -2.0]);
        let (out, tape) = net.forward(1, &x).unwrap();
        assert!((out[0] - (1.5 - 4.0 + 0.1)).abs() < 1e-15);
        let g = net.backward(&tape, &[1.0]).unwrap();
        assert_eq!(g.0, vec![3.0, 0.0, -2.0, 1.0]);
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Network::init(arch(Head::Softmax, Activation::Relu), &mut rng).unwrap();
        let (_, tape) = net.forward(3, &random_input(&mut rng)).unwrap();
        let g = net.backward(&tape, &[0.0; 4]).unwrap();
        assert!(g.0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_tape_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Network::init(arch(Head::Identity, Activation::Relu), &mut rng).unwrap();
        let (_, tape) = net.forward(1, &SparseVec::new(6)).unwrap();
        net.params_mut()[0] += 1.0;
        assert!(matches!(
            net.backward(&tape, &[1.0; 4]),
            Err(Error::StaleTape { .. })
        ));
    }

    #[test]
    fn shape_errors() {
        let net = Network::zeros(arch(Head::Identity, Activation::Relu)).unwrap();
        assert!(net.forward(1, &SparseVec::new(5)).is_err());
        assert!(net.forward(0, &SparseVec::new(6)).is_err());
        assert!(net.forward(5, &SparseVec::new(6)).is_err());
    }

    /// Central finite differences against the analytic gradient of `<out, g>`.
    fn gradient_check(head: Head, act: Activation, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Network::init(arch(head, act), &mut rng).unwrap();
        // nudge biases off zero so ReLU kinks are unlikely to sit inside the FD step
        for w in net.params_mut().iter_mut() {
            *w += rng.gen_range(-0.05..0.05);
        }
        let x = random_input(&mut rng);
        let g: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t = 2;
        let (_, tape) = net.forward(t, &x).unwrap();
        let analytic = net.backward(&tape, &g).unwrap().0;
        let h = 1e-4;
        let objective = |n: &Network| -> f64 {
            let (out, _) = n.forward(t, &x).unwrap();
            dot(&out, &g)
        };
        for i in 0..net.param_count() {
            let mut plus = net.clone();
            plus.params_mut()[i] += h;
            let mut minus = net.clone();
            minus.params_mut()[i] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let err = (fd - analytic[i]).abs() / (fd.abs().max(analytic[i].abs()).max(1e-6));
            assert!(
                err < 1e-4 || (fd - analytic[i]).abs() < 1e-9,
                "param {i}: fd {fd} analytic {}",
                analytic[i]
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        gradient_check(Head::Identity, Activation::Relu, 1);
        gradient_check(Head::Softmax, Activation::Relu, 2);
        gradient_check(Head::Softmax, Activation::Tanh, 3);
        gradient_check(Head::Identity, Activation::Identity, 4);
    }
}
