use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{Layer, LayerKind};
use crate::nn::loss::{argmax, check_labels, cross_entropy_parts, softmax_cross_entropy, LossValue};
use crate::tensor::Tensor;

pub const IMAGE_SIDE: usize = 28;
pub const INPUT_DIM: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const NUM_CLASSES: usize = 10;

/// Samples per forward/backward sweep inside one call.
const PASS_CHUNK: usize = 4;

/// The two supported network layouts.
///
/// `SmallCnn`: conv(1→8, 3×3) → ReLU → pool → conv(8→16, 3×3) → ReLU →
/// pool → flatten(400) → dense(400→10).
/// `Mlp`: dense(784→hidden) → ReLU → dense(hidden→10).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Architecture {
    SmallCnn,
    Mlp { hidden: usize },
}

impl Architecture {
    pub const DEFAULT_MLP: Architecture = Architecture::Mlp { hidden: 128 };

    pub fn code(self) -> u8 {
        match self {
            Architecture::SmallCnn => 0,
            Architecture::Mlp { .. } => 1,
        }
    }

    /// Layer kinds and `(weight shape, bias len)` for parameterised layers.
    fn blueprint(self) -> Vec<(LayerKind, Option<(Vec<usize>, usize)>)> {
        use LayerKind::*;
        match self {
            Architecture::SmallCnn => vec![
                (Conv2d, Some((vec![8, 1, 3, 3], 8))),
                (Relu, None),
                (MaxPool2, None),
                (Conv2d, Some((vec![16, 8, 3, 3], 16))),
                (Relu, None),
                (MaxPool2, None),
                (Flatten, None),
                (Dense, Some((vec![NUM_CLASSES, 400], NUM_CLASSES))),
            ],
            Architecture::Mlp { hidden } => vec![
                (Dense, Some((vec![hidden, INPUT_DIM], hidden))),
                (Relu, None),
                (Dense, Some((vec![NUM_CLASSES, hidden], NUM_CLASSES))),
            ],
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Architecture::SmallCnn => write!(f, "small-cnn"),
            Architecture::Mlp { hidden } => write!(f, "mlp-{hidden}"),
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small-cnn" | "cnn" => Ok(Architecture::SmallCnn),
            "mlp" => Ok(Architecture::DEFAULT_MLP),
            _ => s
                .strip_prefix("mlp-")
                .and_then(|h| h.parse().ok())
                .filter(|&h: &usize| h > 0)
                .map(|hidden| Architecture::Mlp { hidden })
                .ok_or_else(|| Error::validation(format!("unknown architecture {s:?}"))),
        }
    }
}

/// A sequential classifier over 28×28 single-channel images.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    architecture: Architecture,
    layers: Vec<Layer>,
}

struct Pass {
    loss: LossValue,
    input_grad: Option<Tensor>,
    /// One `(weight, bias)` pair per parameterised layer, summed over samples.
    param_grads: Option<Vec<(Vec<f64>, Vec<f64>)>>,
}

impl Model {
    /// Seeded He-uniform weights for layers feeding a ReLU, Glorot-uniform
    /// for the output layer, zero biases.
    pub fn new(architecture: Architecture, seed: u64) -> Result<Self> {
        if let Architecture::Mlp { hidden: 0 } = architecture {
            return Err(Error::validation("MLP hidden width must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blueprint = architecture.blueprint();
        let last_param = blueprint
            .iter()
            .rposition(|(_, p)| p.is_some())
            .expect("every architecture has parameters");
        let mut layers = Vec::with_capacity(blueprint.len());
        for (idx, (kind, params)) in blueprint.into_iter().enumerate() {
            let layer = match params {
                None => simple_layer(kind),
                Some((wshape, blen)) => {
                    let fan_out = wshape[0];
                    let fan_in: usize = wshape[1..].iter().product();
                    let limit = if idx == last_param {
                        (6.0 / (fan_in + fan_out) as f64).sqrt()
                    } else {
                        (6.0 / fan_in as f64).sqrt()
                    };
                    let len = wshape.iter().product();
                    let values = (0..len).map(|_| rng.random_range(-limit..limit)).collect();
                    param_layer(
                        kind,
                        Tensor::new(wshape, values)?,
                        Tensor::zeros(vec![blen]),
                    )
                }
            };
            layers.push(layer);
        }
        Ok(Model {
            architecture,
            layers,
        })
    }

    /// All weights and biases zero.
    pub fn zeros(architecture: Architecture) -> Result<Self> {
        let mut m = Model::new(architecture, 0)?;
        let n = m.param_count();
        m.set_params(&vec![0.0; n])?;
        Ok(m)
    }

    /// Rebuilds a model from explicit layers, checking them against the
    /// architecture's layout.
    pub fn from_layers(architecture: Architecture, layers: Vec<Layer>) -> Result<Self> {
        let blueprint = architecture.blueprint();
        if blueprint.len() != layers.len() {
            return Err(Error::validation(format!(
                "{architecture} expects {} layers, got {}",
                blueprint.len(),
                layers.len()
            )));
        }
        for (i, ((kind, params), layer)) in blueprint.iter().zip(&layers).enumerate() {
            if layer.kind() != *kind {
                return Err(Error::validation(format!(
                    "layer {i}: expected {kind:?}, got {:?}",
                    layer.kind()
                )));
            }
            if let (Some((wshape, blen)), Some((w, b))) = (params, layer.params()) {
                if w.shape() != wshape.as_slice() || b.shape() != [*blen] {
                    return Err(Error::validation(format!(
                        "layer {i}: expected weight {wshape:?} / bias [{blen}], got {:?} / {:?}",
                        w.shape(),
                        b.shape()
                    )));
                }
            }
        }
        Ok(Model {
            architecture,
            layers,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.parameters().map(Tensor::len).sum()
    }

    /// Weight and bias tensors in layer order.
    pub fn parameters(&self) -> impl Iterator<Item = &Tensor> {
        self.layers
            .iter()
            .filter_map(Layer::params)
            .flat_map(|(w, b)| [w, b])
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers
            .iter_mut()
            .filter_map(Layer::params_mut)
            .flat_map(|(w, b)| [w, b])
    }

    /// Flattened copy of every parameter.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for t in self.parameters() {
            out.extend_from_slice(t.values());
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.param_count();
        if flat.len() != n {
            return Err(Error::Internal(format!(
                "expected {n} parameters, got {}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for t in self.parameters_mut() {
            let len = t.len();
            t.values_mut().copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    /// Flattened parameter gradients from the grad slots (zeros where a slot
    /// is empty).
    pub fn param_grads(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for t in self.parameters() {
            match t.grad() {
                Some(g) => out.extend_from_slice(g),
                None => out.extend(std::iter::repeat_n(0.0, t.len())),
            }
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for t in self.parameters_mut() {
            t.clear_grad();
        }
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        let s = batch.shape();
        let ok = match self.architecture {
            Architecture::SmallCnn => matches!(s, [_, 1, IMAGE_SIDE, IMAGE_SIDE]),
            Architecture::Mlp { .. } => {
                matches!(s, [_, INPUT_DIM]) || matches!(s, [_, 1, IMAGE_SIDE, IMAGE_SIDE])
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InputShape {
                expected: match self.architecture {
                    Architecture::SmallCnn => "N×1×28×28".into(),
                    Architecture::Mlp { .. } => "N×784 or N×1×28×28".into(),
                },
                actual: s.to_vec(),
            })
        }
    }

    /// MLPs see images as flat 784-vectors.
    fn prepare(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_input(batch)?;
        match self.architecture {
            Architecture::Mlp { .. } if batch.shape().len() == 4 => {
                batch.reshaped(vec![batch.rows(), INPUT_DIM])
            }
            _ => Ok(batch.clone()),
        }
    }

    /// Logits, `N × 10`.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let input = self.prepare(batch)?;
        let rows: Vec<usize> = (0..input.rows()).collect();
        let mut parts = Vec::with_capacity(rows.len().div_ceil(PASS_CHUNK));
        for chunk in rows.chunks(PASS_CHUNK) {
            let mut x = input.select_rows(chunk)?;
            for layer in &self.layers {
                x = layer.forward(&x)?.0;
            }
            parts.push(x);
        }
        Tensor::concat_rows(&parts)
    }

    /// Predicted class per sample; ties go to the lowest class index.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        let logits = self.forward(batch)?;
        Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
    }

    pub fn loss(&self, batch: &Tensor, labels: &[u8]) -> Result<LossValue> {
        let logits = self.forward(batch)?;
        Ok(softmax_cross_entropy(&logits, labels)?.0)
    }

    fn pass(&self, batch: &Tensor, labels: &[u8], want_input: bool, want_params: bool) -> Result<Pass> {
        check_labels(labels, batch.rows(), NUM_CLASSES)?;
        let input = self.prepare(batch)?;
        let n = input.rows();

        let mut param_grads: Option<Vec<(Vec<f64>, Vec<f64>)>> = want_params.then(|| {
            self.layers
                .iter()
                .filter_map(Layer::params)
                .map(|(w, b)| (vec![0.0; w.len()], vec![0.0; b.len()]))
                .collect()
        });
        let mut input_grad = want_input.then(|| Tensor::zeros(input.shape().to_vec()));
        let mut loss_sum = 0.0;
        let mut correct = 0;

        // Small chunks keep every activation cache-resident. Per-sample
        // results do not depend on the chunking.
        let rows: Vec<usize> = (0..n).collect();
        for chunk in rows.chunks(PASS_CHUNK) {
            let mut x = input.select_rows(chunk)?;
            let mut inputs = Vec::with_capacity(self.layers.len());
            let mut caches = Vec::with_capacity(self.layers.len());
            for layer in &self.layers {
                let (y, cache) = layer.forward(&x)?;
                inputs.push(x);
                caches.push(cache);
                x = y;
            }
            let (sum, hits, mut grad) = cross_entropy_parts(&x, &labels[chunk[0]..chunk[0] + chunk.len()])?;
            loss_sum += sum;
            correct += hits;

            let mut slot = param_grads.as_ref().map_or(0, Vec::len);
            for (idx, layer) in self.layers.iter().enumerate().rev() {
                let pg = match (&mut param_grads, layer.params()) {
                    (Some(pg), Some(_)) => {
                        slot -= 1;
                        let (w, b) = &mut pg[slot];
                        Some((w.as_mut_slice(), b.as_mut_slice()))
                    }
                    _ => None,
                };
                let need_input = idx > 0 || want_input;
                match layer.backward(&inputs[idx], &caches[idx], &grad, pg, need_input) {
                    Some(g) => grad = g,
                    None => break,
                }
            }
            if let Some(ig) = input_grad.as_mut() {
                let width = ig.row_len();
                ig.values_mut()[chunk[0] * width..][..grad.len()].copy_from_slice(grad.values());
            }
        }

        let input_grad = match input_grad {
            Some(g) => Some(g.reshaped(batch.shape().to_vec())?),
            None => None,
        };
        Ok(Pass {
            loss: LossValue {
                mean_loss: loss_sum / n as f64,
                correct_count: correct,
                total_count: n,
            },
            input_grad,
            param_grads,
        })
    }

    /// Loss and the gradient of each sample's own cross-entropy with respect
    /// to that sample's input.
    ///
    /// The returned tensor has the batch's shape. Row `i` is
    /// `∇_{x_i} ℓ(f(x_i), y_i)`, independent of the other samples in the
    /// batch; it equals `N ·` the gradient of the batch-mean loss. Parameter
    /// gradients are neither computed nor stored.
    pub fn loss_and_input_grad(&self, batch: &Tensor, labels: &[u8]) -> Result<(LossValue, Tensor)> {
        let pass = self.pass(batch, labels, true, false)?;
        Ok((pass.loss, pass.input_grad.expect("input gradient requested")))
    }

    /// Computes the gradient of the batch-mean loss with respect to every
    /// parameter and stores it in the parameters' grad slots (overwriting).
    pub fn compute_param_grads(&mut self, batch: &Tensor, labels: &[u8]) -> Result<LossValue> {
        let pass = self.pass(batch, labels, false, true)?;
        let scale = 1.0 / batch.rows() as f64;
        let grads = pass.param_grads.expect("parameter gradients requested");
        for ((w, b), (gw, gb)) in self
            .layers
            .iter_mut()
            .filter_map(Layer::params_mut)
            .zip(grads)
        {
            w.set_grad(gw.into_iter().map(|g| g * scale).collect())?;
            b.set_grad(gb.into_iter().map(|g| g * scale).collect())?;
        }
        Ok(pass.loss)
    }
}

fn simple_layer(kind: LayerKind) -> Layer {
    match kind {
        LayerKind::Relu => Layer::Relu,
        LayerKind::MaxPool2 => Layer::MaxPool2,
        LayerKind::Flatten => Layer::Flatten,
        LayerKind::Conv2d | LayerKind::Dense => unreachable!("parameterised layer without params"),
    }
}

pub(crate) fn param_layer(kind: LayerKind, weight: Tensor, bias: Tensor) -> Layer {
    match kind {
        LayerKind::Conv2d => Layer::Conv2d { weight, bias },
        LayerKind::Dense => Layer::Dense { weight, bias },
        other => simple_layer(other),
    }
}

/// Builds a layer of the given kind; parameter tensors are required exactly
/// for convolution and dense layers.
pub fn layer_from_parts(kind: LayerKind, params: Option<(Tensor, Tensor)>) -> Result<Layer> {
    match (kind, params) {
        (LayerKind::Conv2d | LayerKind::Dense, Some((w, b))) => Ok(param_layer(kind, w, b)),
        (LayerKind::Conv2d | LayerKind::Dense, None) => {
            Err(Error::validation(format!("{kind:?} layer needs parameters")))
        }
        (_, Some(_)) => Err(Error::validation(format!("{kind:?} layer takes no parameters"))),
        (_, None) => Ok(simple_layer(kind)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_batch(n: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..n * INPUT_DIM).map(|_| rng.random::<f64>()).collect();
        Tensor::new(vec![n, 1, 28, 28], values).unwrap()
    }

    #[test]
    fn param_counts() {
        assert_eq!(Model::new(Architecture::SmallCnn, 0).unwrap().param_count(), 5258);
        assert_eq!(
            Model::new(Architecture::DEFAULT_MLP, 0).unwrap().param_count(),
            101_770
        );
    }

    #[test]
    fn zero_mlp_gives_zero_logits() {
        let m = Model::zeros(Architecture::DEFAULT_MLP).unwrap();
        let logits = m.forward(&random_batch(3, 1)).unwrap();
        assert_eq!(logits.shape(), &[3, 10]);
        assert!(logits.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_params_loss_is_ln_ten() {
        let m = Model::zeros(Architecture::SmallCnn).unwrap();
        let loss = m.loss(&random_batch(4, 2), &[3, 1, 4, 1]).unwrap();
        assert!((loss.mean_loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn wrong_channel_count_is_shape_error() {
        let m = Model::new(Architecture::SmallCnn, 0).unwrap();
        let err = m.forward(&Tensor::zeros(vec![1, 3, 28, 28])).unwrap_err();
        match err {
            Error::InputShape { expected, actual } => {
                assert_eq!(expected, "N×1×28×28");
                assert_eq!(actual, vec![1, 3, 28, 28]);
            }
            other => panic!("unexpected {other:?}"),
        }
        let mlp = Model::new(Architecture::DEFAULT_MLP, 0).unwrap();
        assert!(mlp.forward(&Tensor::zeros(vec![2, 783])).is_err());
    }

    #[test]
    fn same_seed_same_weights() {
        let a = Model::new(Architecture::SmallCnn, 7).unwrap();
        let b = Model::new(Architecture::SmallCnn, 7).unwrap();
        let c = Model::new(Architecture::SmallCnn, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn duplicated_batch_keeps_loss_and_per_sample_grads() {
        let m = Model::new(Architecture::SmallCnn, 3).unwrap();
        let x = random_batch(2, 4);
        let labels = [5u8, 2];
        let (l1, g1) = m.loss_and_input_grad(&x, &labels).unwrap();
        let x2 = Tensor::concat_rows(&[x.clone(), x]).unwrap();
        let (l2, g2) = m.loss_and_input_grad(&x2, &[5, 2, 5, 2]).unwrap();
        assert!((l1.mean_loss - l2.mean_loss).abs() < 1e-15);
        for i in 0..4 {
            assert_eq!(g2.row(i), g1.row(i % 2));
        }
    }

    #[test]
    fn input_grad_leaves_param_slots_empty() {
        let m = Model::new(Architecture::DEFAULT_MLP, 0).unwrap();
        m.loss_and_input_grad(&random_batch(1, 0), &[0]).unwrap();
        assert!(m.parameters().all(|t| t.grad().is_none()));
    }

    #[test]
    fn architecture_parsing() {
        assert_eq!("cnn".parse::<Architecture>().unwrap(), Architecture::SmallCnn);
        assert_eq!(
            "mlp-16".parse::<Architecture>().unwrap(),
            Architecture::Mlp { hidden: 16 }
        );
        assert!("mlp-0".parse::<Architecture>().is_err());
        assert!("resnet".parse::<Architecture>().is_err());
    }

    #[test]
    fn from_layers_rejects_wrong_layout() {
        let m = Model::new(Architecture::Mlp { hidden: 4 }, 0).unwrap();
        let layers = m.layers().to_vec();
        assert!(Model::from_layers(Architecture::Mlp { hidden: 4 }, layers.clone()).is_ok());
        assert!(Model::from_layers(Architecture::Mlp { hidden: 5 }, layers).is_err());
    }
}
