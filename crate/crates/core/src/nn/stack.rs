use crate::error::{Error, Result};
use crate::nn::layer::{Layer, LayerKind};
use crate::tensor::Tensor;

/// A validated sequence of layers with known per-sample shapes.
///
/// Both intact networks and split parts are stacks; a part is simply a
/// contiguous slice of its parent's layers with the parent's intermediate
/// shape as its input.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    layers: Vec<Layer>,
    /// `shapes[i]` is the per-sample input shape of layer `i`; the last entry
    /// is the stack's output shape.
    shapes: Vec<Vec<usize>>,
}

/// Activations recorded by a forward pass: `acts[i]` is the input of layer
/// `i`, `acts[len]` the output.
#[derive(Debug, Clone)]
pub struct Trace {
    pub acts: Vec<Tensor>,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        self.acts.last().expect("trace holds at least the input")
    }
}

/// Result of back-propagating through a stack.
#[derive(Debug, Clone)]
pub struct StackGrads {
    /// Per-layer parameter gradients, mirroring [`Layer::params`].
    pub params: Vec<Vec<Tensor>>,
    /// Gradient w.r.t. the input of every layer; `inputs[0]` is the gradient
    /// w.r.t. the stack input.
    pub inputs: Vec<Tensor>,
}

impl LayerStack {
    /// `offset` is the index of the first layer in the parent network and
    /// only affects error messages.
    pub fn new(layers: Vec<Layer>, input_shape: Vec<usize>, offset: usize) -> Result<LayerStack> {
        let shapes = infer_shapes(layers.iter().map(Layer::kind), input_shape, offset)?;
        Ok(LayerStack { layers, shapes })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.shapes[0]
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("shapes is never empty")
    }

    /// Per-sample input shape of each layer followed by the output shape.
    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn kinds(&self) -> Vec<LayerKind> {
        self.layers.iter().map(Layer::kind).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.kind().param_count()).sum()
    }

    /// Forward FLOPs for one sample.
    pub fn forward_flops(&self) -> u64 {
        self.layers
            .iter()
            .zip(&self.shapes)
            .map(|(l, s)| l.kind().forward_flops(s))
            .sum()
    }

    fn check_input(&self, x: &Tensor, layer: usize) -> Result<()> {
        if x.shape().is_empty() || x.sample_shape() != self.input_shape() {
            return Err(Error::Dimension {
                layer,
                message: format!(
                    "expected input [batch, {:?}], got {:?}",
                    self.input_shape(),
                    x.shape()
                ),
            });
        }
        Ok(())
    }

    pub fn trace(&self, x: &Tensor) -> Result<Trace> {
        self.trace_at(x, 0)
    }

    /// Like [`LayerStack::trace`]; `offset` names layers in errors.
    pub fn trace_at(&self, x: &Tensor, offset: usize) -> Result<Trace> {
        self.check_input(x, offset)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let y = layer.forward(acts.last().expect("non-empty"));
            if !y.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite activation after layer {}",
                    offset + i
                )));
            }
            acts.push(y);
        }
        Ok(Trace { acts })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.trace(x)?.acts.pop().expect("non-empty"))
    }

    /// Reverse pass given the recorded trace and the gradient w.r.t. the
    /// stack output.
    pub fn backward(&self, trace: &Trace, grad_out: &Tensor) -> Result<StackGrads> {
        if trace.acts.len() != self.layers.len() + 1 {
            return Err(Error::Shape("trace does not belong to this stack".into()));
        }
        if grad_out.shape() != trace.output().shape() {
            return Err(Error::Shape(format!(
                "output gradient {:?} vs output {:?}",
                grad_out.shape(),
                trace.output().shape()
            )));
        }
        let n = self.layers.len();
        let mut params = vec![Vec::new(); n];
        let mut inputs = vec![Tensor::zeros(&[0]); n + 1];
        inputs[n] = grad_out.clone();
        for i in (0..n).rev() {
            let (pg, dx) = self.layers[i].backward(&trace.acts[i], &inputs[i + 1]);
            params[i] = pg;
            inputs[i] = dx;
        }
        inputs.truncate(n);
        if n == 0 {
            inputs.push(grad_out.clone());
        }
        Ok(StackGrads { params, inputs })
    }

    /// `W <- W - lr * grad` for every parameter.
    pub fn apply_update(&mut self, grads: &[Vec<Tensor>], lr: f64) -> Result<()> {
        if grads.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "{} gradient groups for {} layers",
                grads.len(),
                self.layers.len()
            )));
        }
        for (layer, g) in self.layers.iter().zip(grads) {
            if layer.params().len() != g.len() {
                return Err(Error::Shape("parameter count mismatch".into()));
            }
            for (p, gp) in layer.params().iter().zip(g) {
                if p.shape() != gp.shape() {
                    return Err(Error::Shape(format!(
                        "parameter {:?} vs gradient {:?}",
                        p.shape(),
                        gp.shape()
                    )));
                }
            }
        }
        for (layer, g) in self.layers.iter_mut().zip(grads) {
            for (p, gp) in layer.params_mut().into_iter().zip(g) {
                p.sub_scaled(gp, lr)?;
            }
        }
        Ok(())
    }

    /// All parameters, layer by layer, concatenated.
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            for p in layer.params() {
                out.extend_from_slice(p.data());
            }
        }
        out
    }

    pub fn load_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut at = 0;
        for layer in &mut self.layers {
            for p in layer.params_mut() {
                let n = p.len();
                p.data_mut().copy_from_slice(&flat[at..at + n]);
                at += n;
            }
        }
        Ok(())
    }
}

/// Adds `flat` (laid out like [`LayerStack::flatten_params`]) to `grads`.
pub fn add_flat(grads: &mut [Vec<Tensor>], flat: &[f64]) -> Result<()> {
    let total: usize = grads.iter().flatten().map(Tensor::len).sum();
    if total != flat.len() {
        return Err(Error::Shape(format!(
            "{} correction values for {total} gradients",
            flat.len()
        )));
    }
    let mut at = 0;
    for g in grads.iter_mut().flatten() {
        let n = g.len();
        g.data_mut()
            .iter_mut()
            .zip(&flat[at..at + n])
            .for_each(|(a, b)| *a += b);
        at += n;
    }
    Ok(())
}

pub(crate) fn infer_shapes(
    kinds: impl Iterator<Item = LayerKind>,
    input_shape: Vec<usize>,
    offset: usize,
) -> Result<Vec<Vec<usize>>> {
    if input_shape.is_empty() || input_shape.contains(&0) {
        return Err(Error::Shape(format!("invalid input shape {input_shape:?}")));
    }
    let mut shapes = vec![input_shape];
    for (i, kind) in kinds.enumerate() {
        let current = shapes.last().expect("non-empty");
        let next = kind
            .output_shape(current)
            .map_err(|message| Error::Dimension {
                layer: offset + i,
                message,
            })?;
        shapes.push(next);
    }
    Ok(shapes)
}
