//! The split mechanism: cutting a sequential network between layers into a
//! client-side front, an upper-entity middle and a client-side rear
//! (U-shaped), or into a client front and a server rear (vertical), and
//! merging trained parts back into an intact model.
//!
//! Cuts are layer indices. For a U-shaped plan with cuts `(c1, c2)` the parts
//! own layers `[0, c1)`, `[c1, c2)` and `[c2, n)`; since every part runs the
//! very same layer code on the very same tensors, `rear(middle(front(x)))`
//! is bitwise identical to the intact forward pass.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::cost::ModelProfile;
use crate::error::{Error, Result};
use crate::nn::{add_flat, softmax_cross_entropy, LayerStack, NetworkSpec, StackGrads, Trace};
use crate::tensor::Tensor;

/// Bytes charged per transferred value (parameters and activations).
pub const BYTES_PER_VALUE: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    UShaped,
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub cut1: usize,
    /// Second cut; ignored for vertical plans.
    pub cut2: usize,
    pub mode: SplitMode,
}

impl SplitPlan {
    pub fn u_shaped(cut1: usize, cut2: usize) -> SplitPlan {
        SplitPlan {
            cut1,
            cut2,
            mode: SplitMode::UShaped,
        }
    }

    pub fn vertical(cut: usize) -> SplitPlan {
        SplitPlan {
            cut1: cut,
            cut2: 0,
            mode: SplitMode::Vertical,
        }
    }

    pub fn validate(&self, layer_count: usize) -> Result<()> {
        let ok = match self.mode {
            SplitMode::UShaped => 0 < self.cut1 && self.cut1 < self.cut2 && self.cut2 < layer_count,
            SplitMode::Vertical => 0 < self.cut1 && self.cut1 < layer_count,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Plan(format!(
                "{self:?} is not valid for a {layer_count}-layer network"
            )))
        }
    }

    /// Layer ranges of the parts, in forward order.
    pub fn ranges(&self, layer_count: usize) -> Result<Vec<Range<usize>>> {
        self.validate(layer_count)?;
        Ok(match self.mode {
            SplitMode::UShaped => vec![0..self.cut1, self.cut1..self.cut2, self.cut2..layer_count],
            SplitMode::Vertical => vec![0..self.cut1, self.cut1..layer_count],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartRole {
    Front,
    Middle,
    Rear,
}

/// A contiguous slice of a parent network.
#[derive(Debug, Clone, PartialEq)]
pub struct SubNetwork {
    pub role: PartRole,
    pub stack: LayerStack,
    /// Layer indices `[start, end)` in the parent.
    pub origin: Range<usize>,
}

impl SubNetwork {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.trace(x)?.acts.pop().expect("non-empty trace"))
    }

    pub fn trace(&self, x: &Tensor) -> Result<Trace> {
        self.stack.trace_at(x, self.origin.start)
    }

    pub fn backward(&self, trace: &Trace, grad_out: &Tensor) -> Result<StackGrads> {
        self.stack.backward(trace, grad_out)
    }

    pub fn param_count(&self) -> usize {
        self.stack.param_count()
    }

    pub fn param_bytes(&self) -> u64 {
        self.param_count() as u64 * BYTES_PER_VALUE
    }

    /// Forward FLOPs for one sample.
    pub fn forward_flops(&self) -> u64 {
        self.stack.forward_flops()
    }
}

/// The parts produced by [`split`]. Vertical plans have no middle part; their
/// rear is the server-side tail that computes the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitParts {
    pub plan: SplitPlan,
    pub front: SubNetwork,
    pub middle: Option<SubNetwork>,
    pub rear: SubNetwork,
}

impl SplitParts {
    pub fn iter(&self) -> impl Iterator<Item = &SubNetwork> {
        std::iter::once(&self.front)
            .chain(self.middle.as_ref())
            .chain(std::iter::once(&self.rear))
    }

    pub fn num_classes(&self) -> usize {
        self.rear.stack.output_shape()[0]
    }

    /// Intact forward through the parts.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.front.forward(x)?;
        if let Some(m) = &self.middle {
            h = m.forward(&h)?;
        }
        self.rear.forward(&h)
    }

    /// One training step relayed across the parts exactly as the split
    /// protocol does it: the front's smashed data goes up, the middle's comes
    /// back, the rear computes the loss and updates, the gradient w.r.t. the
    /// middle output goes up, the middle updates and returns the gradient
    /// w.r.t. its input, and the front updates last.
    pub fn train_step(
        &mut self,
        x: &Tensor,
        targets: &Tensor,
        lr: f64,
        batch_id: u64,
    ) -> Result<RelayRecord> {
        self.train_step_with(
            x,
            targets,
            &StepOptions {
                lr,
                batch_id,
                ..StepOptions::default()
            },
        )
    }

    /// [`SplitParts::train_step`] with a logit-gradient clip and an additive
    /// gradient correction over the intact parameter layout.
    pub fn train_step_with(
        &mut self,
        x: &Tensor,
        targets: &Tensor,
        opts: &StepOptions,
    ) -> Result<RelayRecord> {
        crate::nn::check_lr(opts.lr)?;
        let (lr, batch_id) = (opts.lr, opts.batch_id);
        let offsets = self.param_offsets();
        let correct = |grads: &mut StackGrads, part: usize| -> Result<()> {
            if let Some(c) = opts.correction {
                add_flat(&mut grads.params, &c[offsets[part].clone()])?;
            }
            Ok(())
        };
        if let Some(c) = opts.correction {
            let total = offsets.last().map_or(0, |r| r.end);
            if c.len() != total {
                return Err(Error::Shape(format!(
                    "{} correction values for {total} parameters",
                    c.len()
                )));
            }
        }
        let rear_index = offsets.len() - 1;

        let front_trace = self.front.trace(x)?;
        let d1 = SmashedData::new(
            front_trace.output().clone(),
            self.front.origin.end,
            batch_id,
        );
        let (middle_trace, d2) = match &self.middle {
            Some(m) => {
                let t = m.trace(&d1.values)?;
                let d2 = SmashedData::new(t.output().clone(), m.origin.end, batch_id);
                (Some(t), Some(d2))
            }
            None => (None, None),
        };
        let rear_in = d2.as_ref().map_or(&d1.values, |d| &d.values);
        let rear_trace = self.rear.trace(rear_in)?;
        let (loss, dlogits) = softmax_cross_entropy(rear_trace.output(), targets, opts.clip)?;
        let mut rear_grads = self.rear.backward(&rear_trace, &dlogits)?;
        correct(&mut rear_grads, rear_index)?;
        self.rear.stack.apply_update(&rear_grads.params, lr)?;
        let grad_rear_in = SmashedData::new(
            rear_grads.inputs[0].clone(),
            self.rear.origin.start,
            batch_id,
        );

        let grad_d1 = match (&mut self.middle, &middle_trace) {
            (Some(m), Some(t)) => {
                let mut g = m.backward(t, &grad_rear_in.values)?;
                correct(&mut g, 1)?;
                m.stack.apply_update(&g.params, lr)?;
                SmashedData::new(g.inputs[0].clone(), m.origin.start, batch_id)
            }
            _ => grad_rear_in.clone(),
        };
        let mut front_grads = self.front.backward(&front_trace, &grad_d1.values)?;
        correct(&mut front_grads, 0)?;
        self.front.stack.apply_update(&front_grads.params, lr)?;

        Ok(RelayRecord {
            loss,
            smashed_front: d1,
            smashed_middle: d2,
            grad_middle: self.middle.as_ref().map(|_| grad_rear_in),
            grad_front: grad_d1,
        })
    }

    /// Offsets of each part's parameters within the intact flat vector.
    pub fn param_offsets(&self) -> Vec<Range<usize>> {
        let mut at = 0;
        self.iter()
            .map(|p| {
                let n = p.param_count();
                at += n;
                at - n..at
            })
            .collect()
    }
}

/// Knobs for [`SplitParts::train_step_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct StepOptions<'a> {
    pub lr: f64,
    pub batch_id: u64,
    /// Per-row L2 bound on the logit gradient.
    pub clip: Option<f64>,
    /// Added to the parameter gradients before the update.
    pub correction: Option<&'a [f64]>,
}

/// Tensors exchanged during one relayed step.
#[derive(Debug, Clone)]
pub struct RelayRecord {
    pub loss: f64,
    /// `d_F1`, front output sent upward.
    pub smashed_front: SmashedData,
    /// `d_F2`, middle output sent back to the client (U-shaped only).
    pub smashed_middle: Option<SmashedData>,
    /// Gradient w.r.t. `d_F2`, sent to the middle (U-shaped only).
    pub grad_middle: Option<SmashedData>,
    /// Gradient w.r.t. `d_F1`, sent back to the front.
    pub grad_front: SmashedData,
}

/// Activations (or their gradients) crossing a cut.
#[derive(Debug, Clone, PartialEq)]
pub struct SmashedData {
    pub values: Tensor,
    /// Layer index of the cut the tensor crosses.
    pub producer_cut: usize,
    pub batch_id: u64,
    pub byte_size: u64,
}

impl SmashedData {
    pub fn new(values: Tensor, producer_cut: usize, batch_id: u64) -> SmashedData {
        let byte_size = values.len() as u64 * BYTES_PER_VALUE;
        SmashedData {
            values,
            producer_cut,
            batch_id,
            byte_size,
        }
    }
}

/// Cuts `net` per `plan`.
pub fn split(net: &NetworkSpec, plan: SplitPlan) -> Result<SplitParts> {
    let ranges = plan.ranges(net.layer_count())?;
    let shapes = net.stack().shapes();
    let part = |role: PartRole, range: Range<usize>| -> Result<SubNetwork> {
        let layers = net.layers()[range.clone()].to_vec();
        let stack = LayerStack::new(layers, shapes[range.start].clone(), range.start)?;
        Ok(SubNetwork {
            role,
            stack,
            origin: range,
        })
    };
    match plan.mode {
        SplitMode::UShaped => Ok(SplitParts {
            plan,
            front: part(PartRole::Front, ranges[0].clone())?,
            middle: Some(part(PartRole::Middle, ranges[1].clone())?),
            rear: part(PartRole::Rear, ranges[2].clone())?,
        }),
        SplitMode::Vertical => Ok(SplitParts {
            plan,
            front: part(PartRole::Front, ranges[0].clone())?,
            middle: None,
            rear: part(PartRole::Rear, ranges[1].clone())?,
        }),
    }
}

/// Reassembles an intact network from parts of one plan.
pub fn merge(
    front: &SubNetwork,
    middle: Option<&SubNetwork>,
    rear: &SubNetwork,
) -> Result<NetworkSpec> {
    let parts: Vec<&SubNetwork> = std::iter::once(front).chain(middle).chain([rear]).collect();
    let expected_roles: &[PartRole] = if middle.is_some() {
        &[PartRole::Front, PartRole::Middle, PartRole::Rear]
    } else {
        &[PartRole::Front, PartRole::Rear]
    };
    for (p, role) in parts.iter().zip(expected_roles) {
        if p.role != *role {
            return Err(Error::Merge(format!(
                "expected a {role:?} part, got {:?}",
                p.role
            )));
        }
        if p.origin.len() != p.stack.len() {
            return Err(Error::Merge(format!(
                "{:?} part claims layers {:?} but holds {}",
                p.role,
                p.origin,
                p.stack.len()
            )));
        }
    }
    if front.origin.start != 0 {
        return Err(Error::Merge(format!(
            "front part starts at layer {}",
            front.origin.start
        )));
    }
    for w in parts.windows(2) {
        if w[0].origin.end != w[1].origin.start {
            return Err(Error::Merge(format!(
                "{:?} ends at {} but {:?} starts at {}",
                w[0].role, w[0].origin.end, w[1].role, w[1].origin.start
            )));
        }
        if w[0].stack.output_shape() != w[1].stack.input_shape() {
            return Err(Error::Merge(format!(
                "{:?} emits {:?} but {:?} expects {:?}",
                w[0].role,
                w[0].stack.output_shape(),
                w[1].role,
                w[1].stack.input_shape()
            )));
        }
    }
    let output = rear.stack.output_shape();
    if output.len() != 1 {
        return Err(Error::Merge(format!(
            "rear output {output:?} is not a logit vector"
        )));
    }
    let layers = parts
        .iter()
        .flat_map(|p| p.stack.layers().iter().cloned())
        .collect();
    let stack = LayerStack::new(layers, front.stack.input_shape().to_vec(), 0)
        .map_err(|e| Error::Merge(e.to_string()))?;
    NetworkSpec::from_stack(stack, output[0]).map_err(|e| Error::Merge(e.to_string()))
}

impl SplitParts {
    pub fn merge(&self) -> Result<NetworkSpec> {
        merge(&self.front, self.middle.as_ref(), &self.rear)
    }
}

/// Per-part sizes, FLOPs and smashed-data volumes for one batch.
pub fn profile(net: &NetworkSpec, plan: SplitPlan, batch: usize) -> Result<ModelProfile> {
    let parts = split(net, plan)?;
    let b = batch as u64;
    let smashed = |p: &SubNetwork| {
        p.stack.output_shape().iter().product::<usize>() as u64 * BYTES_PER_VALUE * b
    };
    let (m_rear, flops_rear, d2) = match &parts.middle {
        Some(m) => (
            parts.rear.param_bytes(),
            parts.rear.forward_flops() * b,
            smashed(m),
        ),
        None => (0, 0, 0),
    };
    let (m_middle, flops_middle) = match &parts.middle {
        Some(m) => (m.param_bytes(), m.forward_flops() * b),
        None => (parts.rear.param_bytes(), parts.rear.forward_flops() * b),
    };
    Ok(ModelProfile {
        mode: plan.mode,
        m1: parts.front.param_bytes(),
        m2: m_middle,
        m3: m_rear,
        flops_front: (parts.front.forward_flops() * b) as f64,
        flops_middle: flops_middle as f64,
        flops_rear: flops_rear as f64,
        d1: smashed(&parts.front),
        d2,
        label_bytes: BYTES_PER_VALUE * b,
        input_bytes: net.input_shape().iter().product::<usize>() as u64 * BYTES_PER_VALUE * b,
        batch_size: batch,
        batches: 1,
    })
}

/// Profile of the unsplit network: everything sits in the front part.
/// Enough for the non-split methods, which only use the totals.
pub fn profile_intact(net: &NetworkSpec, batch: usize) -> Result<ModelProfile> {
    if batch == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let b = batch as u64;
    Ok(ModelProfile {
        mode: SplitMode::UShaped,
        m1: net.param_count() as u64 * BYTES_PER_VALUE,
        m2: 0,
        m3: 0,
        flops_front: (net.stack().forward_flops() * b) as f64,
        flops_middle: 0.0,
        flops_rear: 0.0,
        d1: 0,
        d2: 0,
        label_bytes: BYTES_PER_VALUE * b,
        input_bytes: net.input_shape().iter().product::<usize>() as u64 * BYTES_PER_VALUE * b,
        batch_size: batch,
        batches: 1,
    })
}
