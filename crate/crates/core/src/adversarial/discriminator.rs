//! Two-hidden-layer ReLU perceptron with a sigmoid output, trained by hand-written
//! backpropagation.

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::mapping::MappingMatrix;

#[derive(Clone, Debug, PartialEq)]
struct Dense {
    /// `out × in`
    weight: Array2<f64>,
    bias: Array1<f64>,
}

impl Dense {
    fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }
}

/// Binary classifier `input → hidden → hidden → 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorNet {
    layers: Vec<Dense>,
}

/// Activations kept from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input of each layer; `inputs[0]` is the batch itself.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    hidden_pre: Vec<Array2<f64>>,
    logits: Array1<f64>,
}

impl ForwardCache {
    pub fn logits(&self) -> &Array1<f64> {
        &self.logits
    }

    pub fn probabilities(&self) -> Array1<f64> {
        self.logits.mapv(sigmoid)
    }
}

/// Gradients with the same layout as the network parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct NetGrads {
    layers: Vec<Dense>,
}

impl NetGrads {
    fn zeros_like(net: &DiscriminatorNet) -> Self {
        NetGrads {
            layers: net
                .layers
                .iter()
                .map(|l| Dense {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    fn add(&mut self, other: &NetGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    /// All entries, in the order of [`DiscriminatorNet::parameters_mut`].
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
            .collect()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl DiscriminatorNet {
    /// Weights drawn from `U(−1/√fan_in, 1/√fan_in)`, zero biases.
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        if input_dim == 0 || hidden == 0 {
            return Err(Error::InvalidArgument("discriminator sizes must be >= 1".into()));
        }
        let sizes = [input_dim, hidden, hidden, 1];
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                Dense {
                    weight: Array2::from_shape_fn((w[1], w[0]), |_| dist.sample(rng)),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Ok(DiscriminatorNet { layers })
    }

    /// Builds a net from explicit `(weight (out × in), bias)` layers.
    pub fn from_layers(layers: Vec<(Array2<f64>, Array1<f64>)>) -> Result<Self> {
        if layers.len() != 3 {
            return Err(Error::InvalidArgument(format!(
                "expected 3 layers (2 hidden + output), got {}",
                layers.len()
            )));
        }
        for (i, (w, b)) in layers.iter().enumerate() {
            if w.nrows() != b.len() {
                return Err(Error::DimensionMismatch {
                    expected: w.nrows(),
                    found: b.len(),
                });
            }
            if i > 0 && layers[i - 1].0.nrows() != w.ncols() {
                return Err(Error::DimensionMismatch {
                    expected: layers[i - 1].0.nrows(),
                    found: w.ncols(),
                });
            }
        }
        if layers[2].0.nrows() != 1 {
            return Err(Error::InvalidArgument("output layer must have one unit".into()));
        }
        Ok(DiscriminatorNet {
            layers: layers
                .into_iter()
                .map(|(weight, bias)| Dense { weight, bias })
                .collect(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.weight.nrows())
            .collect()
    }

    pub fn n_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Every scalar parameter, layer by layer, weights (row-major) before biases.
    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: x.ncols(),
            });
        }
        let n_hidden = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut hidden_pre = Vec::with_capacity(n_hidden);
        let mut a = x.to_owned();
        for layer in &self.layers[..n_hidden] {
            let z = layer.forward(a.view());
            let next = z.mapv(|v| v.max(0.0));
            inputs.push(a);
            hidden_pre.push(z);
            a = next;
        }
        let logits = self.layers[n_hidden].forward(a.view()).column(0).to_owned();
        inputs.push(a);
        Ok(ForwardCache {
            inputs,
            hidden_pre,
            logits,
        })
    }

    /// Probability that `x` is a real sample, plus the cached activations.
    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Result<(f64, ForwardCache)> {
        let cache = self.forward_batch(x.insert_axis(Axis(0)))?;
        Ok((sigmoid(cache.logits[0]), cache))
    }

    /// Backpropagates `dL/dlogit` (one entry per sample) through the cached pass.
    /// Returns parameter gradients and `dL/dinput`.
    pub fn backward(&self, cache: &ForwardCache, dlogits: ArrayView1<'_, f64>) -> (NetGrads, Array2<f64>) {
        let n_layers = self.layers.len();
        let mut grads = NetGrads::zeros_like(self);
        let mut delta = dlogits.to_owned().insert_axis(Axis(1));
        for li in (0..n_layers).rev() {
            let input = &cache.inputs[li];
            grads.layers[li].weight = delta.t().dot(input);
            grads.layers[li].bias = delta.sum_axis(Axis(0));
            let mut back = delta.dot(&self.layers[li].weight);
            if li > 0 {
                ndarray::Zip::from(&mut back)
                    .and(&cache.hidden_pre[li - 1])
                    .for_each(|g, &z| {
                        if z <= 0.0 {
                            *g = 0.0;
                        }
                    });
            }
            delta = back;
        }
        (grads, delta)
    }

    pub fn sgd_step(&mut self, grads: &NetGrads, lr: f64) {
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            l.weight.scaled_add(-lr, &g.weight);
            l.bias.scaled_add(-lr, &g.bias);
        }
    }
}

/// Binary cross-entropy summed over the real and fake halves, each averaged
/// over its own batch: real samples carry the label `1 − s`, fakes carry `s`.
pub fn disc_loss_and_grads(
    net: &DiscriminatorNet,
    real: ArrayView2<'_, f64>,
    fake: ArrayView2<'_, f64>,
    smoothing: f64,
) -> Result<(f64, NetGrads)> {
    if real.nrows() == 0 || fake.nrows() == 0 {
        return Err(Error::InvalidArgument("discriminator batches must be non-empty".into()));
    }
    let mut total = NetGrads::zeros_like(net);
    let mut loss = 0.0;
    for (batch, label) in [(real, 1.0 - smoothing), (fake, smoothing)] {
        let cache = net.forward_batch(batch)?;
        let n = batch.nrows() as f64;
        // -[y ln σ(z) + (1-y) ln(1-σ(z))] = y·softplus(-z) + (1-y)·softplus(z)
        loss += cache
            .logits
            .iter()
            .map(|&z| label * softplus(-z) + (1.0 - label) * softplus(z))
            .sum::<f64>()
            / n;
        let dlogits = cache.logits.mapv(|z| (sigmoid(z) - label) / n);
        let (g, _) = net.backward(&cache, dlogits.view());
        total.add(&g);
    }
    Ok((loss, total))
}

/// Source vectors fed to the generator. `concept` pairs source rows with the
/// concept embeddings for the concept discriminator; in conditioned sampling
/// its source rows equal `lang_src`.
#[derive(Clone, Copy, Debug)]
pub struct GenBatch<'a> {
    pub lang_src: ArrayView2<'a, f64>,
    pub concept: Option<(ArrayView2<'a, f64>, ArrayView2<'a, f64>)>,
}

/// Non-saturating generator loss `−mean ln D_l(W v_s) − mean ln D_cl([W v_s; v_c])`
/// and its gradient with respect to `W`, discriminators frozen.
pub fn gen_loss_and_grad(
    w: &MappingMatrix,
    d_l: &DiscriminatorNet,
    d_cl: Option<&DiscriminatorNet>,
    batch: GenBatch<'_>,
) -> Result<(f64, Array2<f64>)> {
    let d = w.dim();
    match (d_cl, batch.concept.is_some()) {
        (Some(_), false) => {
            return Err(Error::InvalidArgument(
                "concept discriminator given without concept embeddings".into(),
            ))
        }
        (None, true) => {
            return Err(Error::InvalidArgument(
                "concept embeddings given without a concept discriminator".into(),
            ))
        }
        _ => {}
    }
    if batch.lang_src.nrows() == 0 {
        return Err(Error::InvalidArgument("generator batch must be non-empty".into()));
    }

    let mut grad = Array2::zeros((d, d));
    let mut loss = 0.0;

    let mapped = w.apply_rows(batch.lang_src)?;
    let (l, dx) = fooled_loss(d_l, mapped.view())?;
    loss += l;
    grad += &dx.t().dot(&batch.lang_src);

    if let (Some(net), Some((src, vc))) = (d_cl, batch.concept) {
        if src.nrows() != vc.nrows() || src.nrows() == 0 {
            return Err(Error::InvalidArgument("concept batch rows disagree".into()));
        }
        let mapped = w.apply_rows(src)?;
        let input = concatenate(Axis(1), &[mapped.view(), vc]).map_err(|_| Error::DimensionMismatch {
            expected: d,
            found: vc.ncols(),
        })?;
        let (l, dinput) = fooled_loss(net, input.view())?;
        loss += l;
        let dx = dinput.slice(ndarray::s![.., ..d]);
        grad += &dx.t().dot(&src);
    }
    Ok((loss, grad))
}

/// `−mean ln D(x)` and its gradient with respect to the inputs.
fn fooled_loss(net: &DiscriminatorNet, x: ArrayView2<'_, f64>) -> Result<(f64, Array2<f64>)> {
    let cache = net.forward_batch(x)?;
    let n = x.nrows() as f64;
    let loss = cache.logits.iter().map(|&z| softplus(-z)).sum::<f64>() / n;
    let dlogits = cache.logits.mapv(|z| (sigmoid(z) - 1.0) / n);
    let (_, dx) = net.backward(&cache, dlogits.view());
    Ok((loss, dx))
}
