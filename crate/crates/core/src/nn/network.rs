use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::layer::{Layer, LayerKind};
use crate::nn::loss::softmax_cross_entropy;
use crate::nn::stack::{LayerStack, Trace};
use crate::tensor::Tensor;

/// An intact sequential classifier producing `num_classes` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    stack: LayerStack,
    num_classes: usize,
}

/// Exact gradients of the mean-batch loss.
#[derive(Debug, Clone)]
pub struct GradientSet {
    /// Per-layer parameter gradients, mirroring the network's parameters.
    pub layers: Vec<Vec<Tensor>>,
    pub loss: f64,
    /// Gradient w.r.t. the input of each layer (`[0]` is the network input).
    pub layer_inputs: Vec<Tensor>,
}

impl GradientSet {
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|g| g.iter().flat_map(|t| t.data().iter().copied()))
            .collect()
    }

    /// Adds a flat vector, laid out like the network's parameters.
    pub fn add_flat(&mut self, flat: &[f64]) -> Result<()> {
        crate::nn::stack::add_flat(&mut self.layers, flat)
    }

    /// Gradient w.r.t. the activation entering layer `index`.
    pub fn at_layer_input(&self, index: usize) -> Option<&Tensor> {
        self.layer_inputs.get(index)
    }
}

impl NetworkSpec {
    pub fn new(
        layers: Vec<Layer>,
        input_shape: Vec<usize>,
        num_classes: usize,
    ) -> Result<NetworkSpec> {
        let stack = LayerStack::new(layers, input_shape, 0)?;
        NetworkSpec::from_stack(stack, num_classes)
    }

    pub(crate) fn from_stack(stack: LayerStack, num_classes: usize) -> Result<NetworkSpec> {
        if stack.is_empty() {
            return Err(Error::InvalidArgument("network has no layers".into()));
        }
        if stack.output_shape() != [num_classes] {
            return Err(Error::Dimension {
                layer: stack.len() - 1,
                message: format!(
                    "final output {:?} does not match {num_classes} classes",
                    stack.output_shape()
                ),
            });
        }
        Ok(NetworkSpec { stack, num_classes })
    }

    /// Instantiates `kinds` with fresh weights drawn from `rng`.
    pub fn init(
        kinds: &[LayerKind],
        input_shape: Vec<usize>,
        num_classes: usize,
        rng: &mut impl Rng,
    ) -> Result<NetworkSpec> {
        let layers = kinds.iter().map(|k| k.init(rng)).collect();
        NetworkSpec::new(layers, input_shape, num_classes)
    }

    /// Fully-connected net with ReLU between layers, e.g. `&[4, 8, 3]`.
    pub fn mlp(widths: &[usize], rng: &mut impl Rng) -> Result<NetworkSpec> {
        NetworkSpec::init(
            &mlp_kinds(widths)?,
            vec![widths[0]],
            widths[widths.len() - 1],
            rng,
        )
    }

    pub fn stack(&self) -> &LayerStack {
        &self.stack
    }

    pub fn layers(&self) -> &[Layer] {
        self.stack.layers()
    }

    pub fn layer_count(&self) -> usize {
        self.stack.len()
    }

    pub fn input_shape(&self) -> &[usize] {
        self.stack.input_shape()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn kinds(&self) -> Vec<LayerKind> {
        self.stack.kinds()
    }

    pub fn param_count(&self) -> usize {
        self.stack.param_count()
    }

    pub fn flatten_params(&self) -> Vec<f64> {
        self.stack.flatten_params()
    }

    pub fn load_params(&mut self, flat: &[f64]) -> Result<()> {
        self.stack.load_params(flat)
    }

    pub fn with_params(&self, flat: &[f64]) -> Result<NetworkSpec> {
        let mut net = self.clone();
        net.load_params(flat)?;
        Ok(net)
    }

    /// Logits `[batch, num_classes]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.stack.forward(x)
    }

    pub fn trace(&self, x: &Tensor) -> Result<Trace> {
        self.stack.trace(x)
    }

    /// Gradients of the mean softmax cross-entropy against `targets`
    /// (`[batch, num_classes]`, soft labels allowed).
    pub fn backward(&self, x: &Tensor, targets: &Tensor) -> Result<GradientSet> {
        self.backward_clipped(x, targets, None)
    }

    pub fn backward_clipped(
        &self,
        x: &Tensor,
        targets: &Tensor,
        clip: Option<f64>,
    ) -> Result<GradientSet> {
        let trace = self.stack.trace(x)?;
        let (loss, dlogits) = softmax_cross_entropy(trace.output(), targets, clip)?;
        let grads = self.stack.backward(&trace, &dlogits)?;
        Ok(GradientSet {
            layers: grads.params,
            loss,
            layer_inputs: grads.inputs,
        })
    }

    /// Returns the network after `W <- W - lr * grad`.
    pub fn sgd_step(&self, grads: &GradientSet, lr: f64) -> Result<NetworkSpec> {
        check_lr(lr)?;
        let mut next = self.clone();
        next.stack.apply_update(&grads.layers, lr)?;
        Ok(next)
    }

    /// Parameter offset range of each layer within [`NetworkSpec::flatten_params`].
    pub fn param_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut at = 0;
        self.stack
            .layers()
            .iter()
            .map(|l| {
                let n = l.kind().param_count();
                at += n;
                at - n..at
            })
            .collect()
    }

    /// Fraction of rows whose argmax logit equals the label, in percent.
    pub fn accuracy(&self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        if labels.is_empty() {
            return Ok(0.0);
        }
        let preds = self.forward(x)?.argmax_rows();
        let correct = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
        Ok(correct as f64 / labels.len() as f64 * 100.0)
    }
}

pub(crate) fn check_lr(lr: f64) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "learning rate {lr} must be finite and >= 0"
        )));
    }
    Ok(())
}

/// Dense layers for `widths` with ReLU in between.
pub fn mlp_kinds(widths: &[usize]) -> Result<Vec<LayerKind>> {
    if widths.len() < 2 {
        return Err(Error::InvalidArgument(
            "an MLP needs at least input and output widths".into(),
        ));
    }
    let mut kinds = Vec::new();
    for (i, w) in widths.windows(2).enumerate() {
        if i > 0 {
            kinds.push(LayerKind::Relu);
        }
        kinds.push(LayerKind::Dense {
            in_dim: w[0],
            out_dim: w[1],
            bias: true,
        });
    }
    Ok(kinds)
}

/// A LeNet-class convolutional net for 1x28x28 inputs and 10 classes with
/// exactly 22,048 parameters.
pub fn lenet_kinds() -> Vec<LayerKind> {
    vec![
        LayerKind::Conv2d {
            in_ch: 1,
            out_ch: 4,
            kernel: 5,
            stride: 1,
            pad: 0,
        },
        LayerKind::Relu,
        LayerKind::MaxPool { window: 2 },
        LayerKind::Conv2d {
            in_ch: 4,
            out_ch: 8,
            kernel: 5,
            stride: 1,
            pad: 0,
        },
        LayerKind::Relu,
        LayerKind::MaxPool { window: 2 },
        LayerKind::Flatten,
        LayerKind::Dense {
            in_dim: 128,
            out_dim: 124,
            bias: true,
        },
        LayerKind::Relu,
        LayerKind::Dense {
            in_dim: 124,
            out_dim: 38,
            bias: true,
        },
        LayerKind::Relu,
        LayerKind::Dense {
            in_dim: 38,
            out_dim: 10,
            bias: true,
        },
    ]
}

/// `forward(net, x)`.
pub fn forward(net: &NetworkSpec, x: &Tensor) -> Result<Tensor> {
    net.forward(x)
}

/// `backward(net, x, targets)`.
pub fn backward(net: &NetworkSpec, x: &Tensor, targets: &Tensor) -> Result<GradientSet> {
    net.backward(x, targets)
}

/// `sgd_step(net, grads, lr)`.
pub fn sgd_step(net: &NetworkSpec, grads: &GradientSet, lr: f64) -> Result<NetworkSpec> {
    net.sgd_step(grads, lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layer::Dense;
    use crate::rng::Substreams;

    fn dense(weight: Vec<f64>, out: usize, inp: usize, bias: Option<Vec<f64>>) -> Layer {
        Layer::Dense(Dense {
            weight: Tensor::new(vec![out, inp], weight).unwrap(),
            bias: bias.map(|b| Tensor::new(vec![out], b).unwrap()),
        })
    }

    #[test]
    fn identity_dense_forward() {
        let net = NetworkSpec::new(
            vec![dense(vec![1.0, 0.0, 0.0, 1.0], 2, 2, None)],
            vec![2],
            2,
        )
        .unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert_eq!(net.forward(&x).unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn zero_dense_forward_is_zero() {
        let net = NetworkSpec::new(
            vec![dense(vec![0.0; 15], 3, 5, Some(vec![0.0; 3]))],
            vec![5],
            3,
        )
        .unwrap();
        let x = Tensor::from_rows(&[vec![1.0, -2.0, 3.0, 4.0, 5.5], vec![9.0; 5]]).unwrap();
        assert!(net.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let net =
            NetworkSpec::mlp(&[4, 8, 3], &mut Substreams::new(1).stream("init", &[])).unwrap();
        let err = net.forward(&Tensor::zeros(&[2, 5])).unwrap_err();
        assert!(matches!(err, Error::Dimension { layer: 0, .. }), "{err}");
        let kinds = [
            LayerKind::Dense {
                in_dim: 4,
                out_dim: 6,
                bias: true,
            },
            LayerKind::Relu,
            LayerKind::Dense {
                in_dim: 5,
                out_dim: 3,
                bias: true,
            },
        ];
        let err = NetworkSpec::init(
            &kinds,
            vec![4],
            3,
            &mut Substreams::new(1).stream("init", &[]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Dimension { layer: 2, .. }), "{err}");
    }

    #[test]
    fn final_width_must_equal_classes() {
        let err = NetworkSpec::init(
            &mlp_kinds(&[4, 3]).unwrap(),
            vec![4],
            5,
            &mut Substreams::new(1).stream("init", &[]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn sgd_scalar_arithmetic() {
        let net = NetworkSpec::new(vec![dense(vec![1.0], 1, 1, None)], vec![1], 1).unwrap();
        let grads = GradientSet {
            layers: vec![vec![Tensor::new(vec![1, 1], vec![2.0]).unwrap()]],
            loss: 0.0,
            layer_inputs: Vec::new(),
        };
        let next = net.sgd_step(&grads, 0.1).unwrap();
        assert!((next.flatten_params()[0] - 0.8).abs() < 1e-15);
        assert_eq!(net.sgd_step(&grads, 0.0).unwrap(), net);
        assert!(net.sgd_step(&grads, -1.0).is_err());
    }

    #[test]
    fn sgd_rejects_mismatched_gradients() {
        let net = NetworkSpec::new(vec![dense(vec![1.0, 2.0], 1, 2, None)], vec![2], 1).unwrap();
        let grads = GradientSet {
            layers: vec![vec![Tensor::zeros(&[2, 1])]],
            loss: 0.0,
            layer_inputs: Vec::new(),
        };
        assert!(net.sgd_step(&grads, 0.1).is_err());
    }

    #[test]
    fn lenet_has_expected_parameter_count() {
        let net = NetworkSpec::init(
            &lenet_kinds(),
            vec![1, 28, 28],
            10,
            &mut Substreams::new(0).stream("init", &[]),
        )
        .unwrap();
        assert_eq!(net.param_count(), 22_048);
    }

    #[test]
    fn params_round_trip_through_flat_vector() {
        let mut rng = Substreams::new(9).stream("init", &[]);
        let a = NetworkSpec::mlp(&[3, 4, 2], &mut rng).unwrap();
        let b = NetworkSpec::mlp(&[3, 4, 2], &mut rng).unwrap();
        assert_ne!(a, b);
        assert_eq!(b.with_params(&a.flatten_params()).unwrap(), a);
        let ranges = a.param_ranges();
        assert_eq!(ranges.last().unwrap().end, a.param_count());
    }
}
