//! Small fully connected regressor: ReLU hidden layers, linear scalar output,
//! trained by minibatch gradient descent with momentum on squared error.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seeds;

/// Architecture and optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetSpec {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for NetSpec {
    fn default() -> Self {
        NetSpec {
            hidden: vec![64, 64],
            learning_rate: 1e-3,
            momentum: 0.9,
            epochs: 20,
            batch_size: 256,
            seed: 17,
        }
    }
}

impl NetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config(
                "network.hidden",
                "needs at least one nonempty hidden layer",
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("network.learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("network.momentum", "must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("network.batch_size", "must be at least 1"));
        }
        Ok(())
    }
}

/// Dense layer with weights stored input-major: row `i` holds the weights
/// leaving input `i`.
#[derive(Debug, Clone, PartialEq)]
struct Layer<T> {
    inputs: usize,
    outputs: usize,
    weights: Vec<T>,
    bias: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    fn glorot<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| T::of(rng.gen_range(-bound..=bound)))
            .collect();
        Layer {
            inputs,
            outputs,
            weights,
            bias: vec![T::zero(); outputs],
        }
    }

    fn row(&self, i: usize) -> &[T] {
        &self.weights[i * self.outputs..(i + 1) * self.outputs]
    }

    /// `out = bias + x W`, skipping zero inputs.
    fn affine(&self, x: &[T], out: &mut [T]) {
        out.copy_from_slice(&self.bias);
        for (i, &xi) in x.iter().enumerate() {
            if xi != T::zero() {
                axpy(out, xi, self.row(i));
            }
        }
    }
}

fn axpy<T: Scalar>(dst: &mut [T], a: T, src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn relu<T: Scalar>(v: &mut [T]) {
    for x in v {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

/// Training samples: dense feature rows and scalar targets.
pub trait Dataset<T> {
    fn len(&self) -> usize;
    fn dim(&self) -> usize;
    /// Writes the features of sample `i` into `out` (length [`Dataset::dim`]).
    fn features(&self, i: usize, out: &mut [T]);
    fn target(&self, i: usize) -> T;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<T: Scalar> Dataset<T> for [(Vec<T>, T)] {
    fn len(&self) -> usize {
        <[_]>::len(self)
    }

    fn dim(&self) -> usize {
        self.first().map_or(0, |s| s.0.len())
    }

    fn features(&self, i: usize, out: &mut [T]) {
        out.copy_from_slice(&self[i].0);
    }

    fn target(&self, i: usize) -> T {
        self[i].1
    }
}

/// Gradient of the loss with respect to every parameter, laid out like the
/// network (per layer: weights input-major, then biases).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    layers: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Gradients<T> {
    fn zeros_like(net: &QNetwork<T>) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| {
                    (
                        vec![T::zero(); l.weights.len()],
                        vec![T::zero(); l.bias.len()],
                    )
                })
                .collect(),
        }
    }

    fn clear(&mut self) {
        for (w, b) in &mut self.layers {
            w.fill(T::zero());
            b.fill(T::zero());
        }
    }

    pub fn flatten(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b).copied())
            .collect()
    }
}

/// Per-sample buffers reused across forward/backward passes.
struct Workspace<T> {
    acts: Vec<Vec<T>>,
    delta: Vec<Vec<T>>,
}

impl<T: Scalar> Workspace<T> {
    fn new(net: &QNetwork<T>) -> Self {
        let mut acts = vec![vec![T::zero(); net.input_dim()]];
        acts.extend(net.layers.iter().map(|l| vec![T::zero(); l.outputs]));
        let delta = net
            .layers
            .iter()
            .map(|l| vec![T::zero(); l.outputs])
            .collect();
        Workspace { acts, delta }
    }
}

/// Summary of one call to [`QNetwork::fit`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitStats {
    /// Mean squared error over the last epoch, measured during training.
    pub final_loss: f64,
    pub batches: usize,
}

/// Feed-forward Q-function approximator.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork<T> {
    layers: Vec<Layer<T>>,
    spec: NetSpec,
}

impl<T: Scalar> QNetwork<T> {
    /// Glorot-uniform weights drawn from `spec.seed`, zero biases.
    pub fn new(input_dim: usize, spec: &NetSpec) -> Result<Self> {
        spec.validate()?;
        if input_dim == 0 {
            return Err(Error::config(
                "network.input",
                "input dimension must be positive",
            ));
        }
        let mut sizes = vec![input_dim];
        sizes.extend(&spec.hidden);
        sizes.push(1);
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| Layer::glorot(w[0], w[1], &mut seeds::rng(spec.seed, &[k as u64])))
            .collect();
        Ok(QNetwork {
            layers,
            spec: spec.clone(),
        })
    }

    /// Network whose every weight and bias is zero; predicts 0 everywhere.
    pub fn zeros(input_dim: usize, spec: &NetSpec) -> Result<Self> {
        let mut net = Self::new(input_dim, spec)?;
        for l in &mut net.layers {
            l.weights.fill(T::zero());
            l.bias.fill(T::zero());
        }
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    /// Input, hidden and output widths.
    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn set_training(&mut self, spec: &NetSpec) {
        let hidden = self.spec.hidden.clone();
        self.spec = NetSpec {
            hidden,
            ..spec.clone()
        };
    }

    fn check_dim(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::FeatureShape {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn predict(&self, x: &[T]) -> Result<T> {
        self.check_dim(x)?;
        let mut ws = Workspace::new(self);
        Ok(self.forward(x, &mut ws))
    }

    fn forward(&self, x: &[T], ws: &mut Workspace<T>) -> T {
        ws.acts[0].copy_from_slice(x);
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let (head, tail) = ws.acts.split_at_mut(k + 1);
            layer.affine(&head[k], &mut tail[0]);
            if k < last {
                relu(&mut tail[0]);
            }
        }
        ws.acts[last + 1][0]
    }

    /// Accumulates `scale * d(out)/d(params)` into `grads` for the sample
    /// whose activations sit in `ws`.
    fn backward(&self, ws: &mut Workspace<T>, scale: T, grads: &mut Gradients<T>) {
        let last = self.layers.len() - 1;
        ws.delta[last][0] = scale;
        for k in (0..=last).rev() {
            let layer = &self.layers[k];
            let input = &ws.acts[k];
            let (gw, gb) = &mut grads.layers[k];
            let (lower, upper) = ws.delta.split_at_mut(k);
            let delta = &upper[0];
            axpy(gb, T::one(), delta);
            for (i, &xi) in input.iter().enumerate() {
                if xi != T::zero() {
                    axpy(
                        &mut gw[i * layer.outputs..(i + 1) * layer.outputs],
                        xi,
                        delta,
                    );
                }
            }
            if k > 0 {
                let below = &mut lower[k - 1];
                for (i, d) in below.iter_mut().enumerate() {
                    // ReLU passes gradient only where its output was positive.
                    *d = if input[i] > T::zero() {
                        dot(layer.row(i), delta)
                    } else {
                        T::zero()
                    };
                }
            }
        }
    }

    /// Squared error `(f(x) - y)^2` and its gradient.
    pub fn loss_gradient(&self, x: &[T], y: T) -> Result<(T, Gradients<T>)> {
        self.check_dim(x)?;
        let mut ws = Workspace::new(self);
        let mut grads = Gradients::zeros_like(self);
        let f = self.forward(x, &mut ws);
        let err = f - y;
        self.backward(&mut ws, err + err, &mut grads);
        Ok((err * err, grads))
    }

    pub fn params(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_params(&mut self, params: &[T]) -> Result<()> {
        let n: usize = self
            .layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum();
        if params.len() != n {
            return Err(Error::FeatureShape {
                expected: n,
                got: params.len(),
            });
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.weights
                .iter_mut()
                .chain(l.bias.iter_mut())
                .for_each(|p| *p = it.next().expect("length checked"));
        }
        Ok(())
    }

    /// Minibatch gradient descent with momentum on mean squared error.
    /// `round` distinguishes the shuffling streams of successive calls.
    pub fn fit<D: Dataset<T> + ?Sized>(&mut self, data: &D, round: u64) -> Result<FitStats> {
        if data.is_empty() {
            return Err(Error::Empty("training samples"));
        }
        if data.dim() != self.input_dim() {
            return Err(Error::FeatureShape {
                expected: self.input_dim(),
                got: data.dim(),
            });
        }
        let lr = T::of(self.spec.learning_rate);
        let mu = T::of(self.spec.momentum);
        let mut ws = Workspace::new(self);
        let mut grads = Gradients::zeros_like(self);
        let mut velocity = Gradients::zeros_like(self);
        let mut x = vec![T::zero(); self.input_dim()];
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut stats = FitStats {
            final_loss: f64::NAN,
            batches: 0,
        };
        for epoch in 0..self.spec.epochs {
            order.shuffle(&mut seeds::rng(
                self.spec.seed,
                &[0xF17, round, epoch as u64],
            ));
            let mut epoch_loss = 0.0;
            for (b, batch) in order.chunks(self.spec.batch_size).enumerate() {
                grads.clear();
                let inv = T::one() / T::of_usize(batch.len());
                let mut batch_loss = T::zero();
                for &i in batch {
                    data.features(i, &mut x);
                    let err = self.forward(&x, &mut ws) - data.target(i);
                    batch_loss += err * err;
                    self.backward(&mut ws, (err + err) * inv, &mut grads);
                }
                let loss = batch_loss.as_f64();
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        loss,
                        epoch,
                        batch: b,
                    });
                }
                epoch_loss += loss;
                for (layer, ((gw, gb), (vw, vb))) in self
                    .layers
                    .iter_mut()
                    .zip(grads.layers.iter().zip(velocity.layers.iter_mut()))
                {
                    for ((p, g), v) in layer.weights.iter_mut().zip(gw).zip(vw.iter_mut()) {
                        *v = mu * *v - lr * *g;
                        *p += *v;
                    }
                    for ((p, g), v) in layer.bias.iter_mut().zip(gb).zip(vb.iter_mut()) {
                        *v = mu * *v - lr * *g;
                        *p += *v;
                    }
                }
                stats.batches += 1;
            }
            stats.final_loss = epoch_loss / data.len() as f64;
        }
        Ok(stats)
    }

    /// Predictions for many inputs that share most features.
    ///
    /// Every input equals `shared` plus the sparse `(index, value)` entries of
    /// one element of `variants`; `shared` must be zero at those indices. The
    /// first layer's contribution of `shared` is computed once.
    pub fn predict_variants<'a, I>(&self, shared: &[T], variants: I, out: &mut Vec<T>) -> Result<()>
    where
        I: IntoIterator<Item = &'a [(usize, T)]>,
    {
        self.check_dim(shared)?;
        let first = &self.layers[0];
        let mut base = vec![T::zero(); first.outputs];
        first.affine(shared, &mut base);
        let mut ws = Workspace::new(self);
        let last = self.layers.len() - 1;
        out.clear();
        for v in variants {
            let h = &mut ws.acts[1];
            h.copy_from_slice(&base);
            for &(i, xi) in v {
                axpy(h, xi, first.row(i));
            }
            if last > 0 {
                relu(h);
            }
            for k in 1..=last {
                let (head, tail) = ws.acts.split_at_mut(k + 1);
                self.layers[k].affine(&head[k], &mut tail[0]);
                if k < last {
                    relu(&mut tail[0]);
                }
            }
            out.push(ws.acts[last + 1][0]);
        }
        Ok(())
    }

    /// Writes the checkpoint: magic `EVQNET01`, layer count `n` as u64, `n`
    /// widths as u64, then per layer the `inputs x outputs` weight block in
    /// row-major order (row = input) followed by the biases. All integers and
    /// floats are little-endian; floats are f64.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<checkpoint>", e);
        let sizes = self.layer_sizes();
        w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
        w.write_all(&(sizes.len() as u64).to_le_bytes())
            .map_err(io)?;
        for s in &sizes {
            w.write_all(&(*s as u64).to_le_bytes()).map_err(io)?;
        }
        for l in &self.layers {
            for p in l.weights.iter().chain(&l.bias) {
                w.write_all(&p.as_f64().to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    /// Reads a checkpoint; optimizer settings come from `spec` (its hidden
    /// widths are replaced by the stored ones).
    pub fn read_checkpoint<R: Read>(mut r: R, spec: &NetSpec) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Checkpoint("truncated header".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let mut word = [0u8; 8];
        let mut next_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut word)
                .map_err(|_| Error::Checkpoint("truncated".into()))?;
            Ok(u64::from_le_bytes(word))
        };
        let n = next_u64(&mut r)? as usize;
        if !(3..=64).contains(&n) {
            return Err(Error::Checkpoint(format!("implausible layer count {n}")));
        }
        let sizes: Vec<usize> = (0..n)
            .map(|_| next_u64(&mut r).map(|s| s as usize))
            .collect::<Result<_>>()?;
        if sizes.contains(&0) || sizes[n - 1] != 1 || sizes.iter().any(|&s| s > 1 << 20) {
            return Err(Error::Checkpoint(format!("bad layer sizes {sizes:?}")));
        }
        let mut layers = Vec::with_capacity(n - 1);
        for w in sizes.windows(2) {
            let mut read = |count: usize| -> Result<Vec<T>> {
                (0..count)
                    .map(|_| next_u64(&mut r).map(|bits| T::of(f64::from_bits(bits))))
                    .collect()
            };
            let weights = read(w[0] * w[1])?;
            let bias = read(w[1])?;
            layers.push(Layer {
                inputs: w[0],
                outputs: w[1],
                weights,
                bias,
            });
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)
            .map_err(|e| Error::io("<checkpoint>", e))?
            != 0
        {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        let spec = NetSpec {
            hidden: sizes[1..n - 1].to_vec(),
            ..spec.clone()
        };
        Ok(QNetwork { layers, spec })
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"EVQNET01";

/// Fits `net` to `samples` and returns the trained network.
pub fn fit_regressor<T: Scalar>(
    samples: &[(Vec<T>, T)],
    mut net: QNetwork<T>,
) -> Result<QNetwork<T>> {
    net.fit(samples, 0)?;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(seed: u64) -> NetSpec {
        NetSpec {
            hidden: vec![8, 8],
            learning_rate: 1e-2,
            epochs: 200,
            batch_size: 8,
            seed,
            ..Default::default()
        }
    }

    fn random_inputs(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = seeds::rng(seed, &[]);
        (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn zero_targets_are_learned() {
        let xs = random_inputs(64, 5, 1);
        let samples: Vec<_> = xs.into_iter().map(|x| (x, 0.0)).collect();
        let net = fit_regressor(&samples, QNetwork::new(5, &small_spec(3)).unwrap()).unwrap();
        let mean: f64 = samples
            .iter()
            .map(|(x, _)| net.predict(x).unwrap().abs())
            .sum::<f64>()
            / 64.0;
        assert!(mean < 1e-2, "mean |prediction| {mean}");
    }

    #[test]
    fn constant_target_is_learned() {
        let xs = random_inputs(64, 1, 2);
        let samples: Vec<_> = xs.into_iter().map(|x| (x, 0.5)).collect();
        let net = fit_regressor(&samples, QNetwork::new(1, &small_spec(4)).unwrap()).unwrap();
        for (x, _) in &samples {
            assert!((net.predict(x).unwrap() - 0.5).abs() < 1e-2);
        }
    }

    #[test]
    fn f32_network_learns_too() {
        let mut rng = seeds::rng(5, &[]);
        let samples: Vec<(Vec<f32>, f32)> = (0..64)
            .map(|_| (vec![rng.gen_range(0.0..1.0f32); 3], 0.25))
            .collect();
        let net =
            fit_regressor(&samples, QNetwork::<f32>::new(3, &small_spec(6)).unwrap()).unwrap();
        assert!((net.predict(&samples[0].0).unwrap() - 0.25).abs() < 1e-2);
    }

    #[test]
    fn blow_up_is_reported() {
        let xs = random_inputs(32, 4, 7);
        let samples: Vec<_> = xs.into_iter().map(|x| (x, 1e6)).collect();
        let spec = NetSpec {
            learning_rate: 10.0,
            ..small_spec(1)
        };
        let err = fit_regressor(&samples, QNetwork::new(4, &spec).unwrap()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { .. }));
    }

    #[test]
    fn fitting_is_deterministic() {
        let xs = random_inputs(40, 3, 8);
        let samples: Vec<_> = xs.iter().map(|x| (x.clone(), x[0] * 2.0 - x[1])).collect();
        let a = fit_regressor(&samples, QNetwork::new(3, &small_spec(9)).unwrap()).unwrap();
        let b = fit_regressor(&samples, QNetwork::new(3, &small_spec(9)).unwrap()).unwrap();
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn shared_prefix_prediction_matches_dense() {
        let net = QNetwork::<f64>::new(6, &small_spec(10)).unwrap();
        let shared = vec![0.3, 0.0, 0.7, 0.0, 0.0, 0.1];
        let variants: Vec<Vec<(usize, f64)>> =
            vec![vec![], vec![(1, 0.5)], vec![(3, 1.0), (4, 0.25)]];
        let mut out = Vec::new();
        net.predict_variants(&shared, variants.iter().map(Vec::as_slice), &mut out)
            .unwrap();
        for (v, got) in variants.iter().zip(&out) {
            let mut x = shared.clone();
            for &(i, val) in v {
                x[i] = val;
            }
            assert!((net.predict(&x).unwrap() - got).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = QNetwork::<f64>::new(5, &small_spec(11)).unwrap();
        let mut buf = Vec::new();
        net.write_checkpoint(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"EVQNET01");
        assert_eq!(
            buf.len(),
            8 + 8 + 4 * 8 + (5 * 8 + 8 + 8 * 8 + 8 + 8 + 1) * 8
        );
        let back = QNetwork::<f64>::read_checkpoint(buf.as_slice(), &small_spec(0)).unwrap();
        assert_eq!(back.params(), net.params());
        assert_eq!(back.layer_sizes(), vec![5, 8, 8, 1]);
        assert!(QNetwork::<f64>::read_checkpoint(&buf[..buf.len() - 1], &small_spec(0)).is_err());
    }

    #[test]
    fn rejects_wrong_input_width() {
        let net = QNetwork::<f64>::new(4, &small_spec(1)).unwrap();
        assert!(matches!(
            net.predict(&[0.0; 3]),
            Err(Error::FeatureShape { .. })
        ));
    }
}
