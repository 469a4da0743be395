use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// Architecture of one layer, without its weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Dense {
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    },
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    /// Non-overlapping max pooling (stride equals window).
    MaxPool {
        window: usize,
    },
    Relu,
    Flatten,
}

impl LayerKind {
    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        match *self {
            LayerKind::Dense {
                in_dim, out_dim, ..
            } => {
                if in_dim == 0 || out_dim == 0 {
                    return Err("dense dimensions must be positive".into());
                }
                if input != [in_dim] {
                    return Err(format!("dense expects [{in_dim}], got {input:?}"));
                }
                Ok(vec![out_dim])
            }
            LayerKind::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
                pad,
            } => {
                if in_ch == 0 || out_ch == 0 || kernel == 0 || stride == 0 {
                    return Err("conv channels, kernel and stride must be positive".into());
                }
                let [c, h, w] = *input else {
                    return Err(format!(
                        "conv expects [channels, height, width], got {input:?}"
                    ));
                };
                if c != in_ch {
                    return Err(format!("conv expects {in_ch} channels, got {c}"));
                }
                if h + 2 * pad < kernel || w + 2 * pad < kernel {
                    return Err(format!(
                        "kernel {kernel} larger than padded input {input:?}"
                    ));
                }
                Ok(vec![
                    out_ch,
                    (h + 2 * pad - kernel) / stride + 1,
                    (w + 2 * pad - kernel) / stride + 1,
                ])
            }
            LayerKind::MaxPool { window } => {
                let [c, h, w] = *input else {
                    return Err(format!(
                        "max pool expects [channels, height, width], got {input:?}"
                    ));
                };
                if window == 0 || h < window || w < window {
                    return Err(format!("pool window {window} does not fit {input:?}"));
                }
                Ok(vec![c, h / window, w / window])
            }
            LayerKind::Relu => Ok(input.to_vec()),
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerKind::Dense {
                in_dim,
                out_dim,
                bias,
            } => {
                let mut shapes = vec![vec![out_dim, in_dim]];
                if bias {
                    shapes.push(vec![out_dim]);
                }
                shapes
            }
            LayerKind::Conv2d {
                in_ch,
                out_ch,
                kernel,
                ..
            } => vec![vec![out_ch, in_ch, kernel, kernel], vec![out_ch]],
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }

    /// Forward multiply-add FLOPs for one sample: two per weight use.
    /// Activation, pooling and reshapes are counted as free.
    pub fn forward_flops(&self, input: &[usize]) -> u64 {
        match *self {
            LayerKind::Dense {
                in_dim, out_dim, ..
            } => 2 * (in_dim * out_dim) as u64,
            LayerKind::Conv2d { in_ch, kernel, .. } => {
                let out = self.output_shape(input).unwrap_or_default();
                let outputs: usize = out.iter().product();
                2 * (in_ch * kernel * kernel * outputs) as u64
            }
            _ => 0,
        }
    }

    /// Uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)); zero biases.
    pub fn init(&self, rng: &mut impl Rng) -> Layer {
        match *self {
            LayerKind::Dense {
                in_dim,
                out_dim,
                bias,
            } => {
                let weight = glorot(&[out_dim, in_dim], in_dim, out_dim, rng);
                Layer::Dense(Dense {
                    weight,
                    bias: bias.then(|| Tensor::zeros(&[out_dim])),
                })
            }
            LayerKind::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
                pad,
            } => {
                let area = kernel * kernel;
                let weight = glorot(
                    &[out_ch, in_ch, kernel, kernel],
                    in_ch * area,
                    out_ch * area,
                    rng,
                );
                Layer::Conv2d(Conv2d {
                    weight,
                    bias: Tensor::zeros(&[out_ch]),
                    stride,
                    pad,
                })
            }
            LayerKind::MaxPool { window } => Layer::MaxPool { window },
            LayerKind::Relu => Layer::Relu,
            LayerKind::Flatten => Layer::Flatten,
        }
    }
}

fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-a..a);
    }
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `[out_dim, in_dim]`
    pub weight: Tensor,
    /// `[out_dim]`
    pub bias: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `[out_ch, in_ch, kernel, kernel]`
    pub weight: Tensor,
    /// `[out_ch]`
    pub bias: Tensor,
    pub stride: usize,
    pub pad: usize,
}

/// A layer with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    MaxPool { window: usize },
    Relu,
    Flatten,
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Dense(d) => LayerKind::Dense {
                in_dim: d.weight.shape()[1],
                out_dim: d.weight.shape()[0],
                bias: d.bias.is_some(),
            },
            Layer::Conv2d(c) => LayerKind::Conv2d {
                in_ch: c.weight.shape()[1],
                out_ch: c.weight.shape()[0],
                kernel: c.weight.shape()[2],
                stride: c.stride,
                pad: c.pad,
            },
            Layer::MaxPool { window } => LayerKind::MaxPool { window: *window },
            Layer::Relu => LayerKind::Relu,
            Layer::Flatten => LayerKind::Flatten,
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense(d) => std::iter::once(&d.weight).chain(d.bias.as_ref()).collect(),
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense(d) => std::iter::once(&mut d.weight)
                .chain(d.bias.as_mut())
                .collect(),
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            _ => Vec::new(),
        }
    }

    /// Batched forward pass. `x` is `[batch, ..input]` with an input shape the
    /// layer accepts; callers validate shapes beforehand.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        let batch = x.batch();
        match self {
            Layer::Dense(d) => {
                let (out_dim, in_dim) = (d.weight.shape()[0], d.weight.shape()[1]);
                let w = d.weight.data();
                let mut y = Tensor::zeros(&[batch, out_dim]);
                let yd = y.data_mut();
                for i in 0..batch {
                    let xi = x.row(i);
                    for o in 0..out_dim {
                        let wo = &w[o * in_dim..(o + 1) * in_dim];
                        let mut acc = 0.0;
                        for (a, b) in wo.iter().zip(xi) {
                            acc += a * b;
                        }
                        if let Some(bias) = &d.bias {
                            acc += bias.data()[o];
                        }
                        yd[i * out_dim + o] = acc;
                    }
                }
                y
            }
            Layer::Conv2d(c) => conv_forward(c, x),
            Layer::MaxPool { window } => pool_forward(*window, x),
            Layer::Relu => x.map(|v| if v > 0.0 { v } else { 0.0 }),
            Layer::Flatten => {
                let n = x.sample_len();
                x.clone()
                    .reshape(vec![batch, n])
                    .expect("flatten keeps length")
            }
        }
    }

    /// Vector-Jacobian product: given the layer input `x` and the loss
    /// gradient w.r.t. the layer output, returns the gradients w.r.t. each
    /// parameter (same order as [`Layer::params`]) and w.r.t. `x`.
    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> (Vec<Tensor>, Tensor) {
        let batch = x.batch();
        match self {
            Layer::Dense(d) => {
                let (out_dim, in_dim) = (d.weight.shape()[0], d.weight.shape()[1]);
                let w = d.weight.data();
                let g = grad_out.data();
                let mut dw = Tensor::zeros(&[out_dim, in_dim]);
                let mut dx = Tensor::zeros(x.shape());
                {
                    let dwd = dw.data_mut();
                    for i in 0..batch {
                        let xi = x.row(i);
                        for o in 0..out_dim {
                            let go = g[i * out_dim + o];
                            let row = &mut dwd[o * in_dim..(o + 1) * in_dim];
                            for (r, xv) in row.iter_mut().zip(xi) {
                                *r += go * xv;
                            }
                        }
                    }
                }
                {
                    let dxd = dx.data_mut();
                    for i in 0..batch {
                        let dxi = &mut dxd[i * in_dim..(i + 1) * in_dim];
                        for o in 0..out_dim {
                            let go = g[i * out_dim + o];
                            let wo = &w[o * in_dim..(o + 1) * in_dim];
                            for (r, wv) in dxi.iter_mut().zip(wo) {
                                *r += go * wv;
                            }
                        }
                    }
                }
                let mut grads = vec![dw];
                if d.bias.is_some() {
                    let mut db = Tensor::zeros(&[out_dim]);
                    let dbd = db.data_mut();
                    for i in 0..batch {
                        for o in 0..out_dim {
                            dbd[o] += g[i * out_dim + o];
                        }
                    }
                    grads.push(db);
                }
                (grads, dx)
            }
            Layer::Conv2d(c) => conv_backward(c, x, grad_out),
            Layer::MaxPool { window } => (Vec::new(), pool_backward(*window, x, grad_out)),
            Layer::Relu => {
                let mut dx = grad_out.clone();
                for (g, &v) in dx.data_mut().iter_mut().zip(x.data()) {
                    if v <= 0.0 {
                        *g = 0.0;
                    }
                }
                (Vec::new(), dx)
            }
            Layer::Flatten => {
                let dx = grad_out
                    .clone()
                    .reshape(x.shape().to_vec())
                    .expect("flatten keeps length");
                (Vec::new(), dx)
            }
        }
    }
}

struct ConvGeom {
    in_ch: usize,
    out_ch: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn new(c: &Conv2d, x: &Tensor) -> ConvGeom {
        let ws = c.weight.shape();
        let (h, w) = (x.shape()[2], x.shape()[3]);
        let k = ws[2];
        ConvGeom {
            in_ch: ws[1],
            out_ch: ws[0],
            k,
            stride: c.stride,
            pad: c.pad,
            h,
            w,
            oh: (h + 2 * c.pad - k) / c.stride + 1,
            ow: (w + 2 * c.pad - k) / c.stride + 1,
        }
    }

    // Input coordinate for output position `o` and kernel offset `kk`, if it
    // falls inside the unpadded input.
    fn src(&self, o: usize, kk: usize, limit: usize) -> Option<usize> {
        let pos = (o * self.stride + kk) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < limit).then_some(pos as usize)
    }
}

fn conv_forward(c: &Conv2d, x: &Tensor) -> Tensor {
    let g = ConvGeom::new(c, x);
    let batch = x.batch();
    let wt = c.weight.data();
    let xd = x.data();
    let mut y = Tensor::zeros(&[batch, g.out_ch, g.oh, g.ow]);
    let yd = y.data_mut();
    for n in 0..batch {
        for oc in 0..g.out_ch {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = 0.0;
                    for ic in 0..g.in_ch {
                        for ky in 0..g.k {
                            let Some(iy) = g.src(oy, ky, g.h) else {
                                continue;
                            };
                            for kx in 0..g.k {
                                let Some(ix) = g.src(ox, kx, g.w) else {
                                    continue;
                                };
                                let wv = wt[((oc * g.in_ch + ic) * g.k + ky) * g.k + kx];
                                let xv = xd[((n * g.in_ch + ic) * g.h + iy) * g.w + ix];
                                acc += wv * xv;
                            }
                        }
                    }
                    acc += c.bias.data()[oc];
                    yd[((n * g.out_ch + oc) * g.oh + oy) * g.ow + ox] = acc;
                }
            }
        }
    }
    y
}

fn conv_backward(c: &Conv2d, x: &Tensor, grad_out: &Tensor) -> (Vec<Tensor>, Tensor) {
    let g = ConvGeom::new(c, x);
    let batch = x.batch();
    let wt = c.weight.data();
    let xd = x.data();
    let go = grad_out.data();
    let mut dw = Tensor::zeros(c.weight.shape());
    let mut db = Tensor::zeros(&[g.out_ch]);
    let mut dx = Tensor::zeros(x.shape());
    {
        let (dwd, dbd, dxd) = (dw.data_mut(), db.data_mut(), dx.data_mut());
        for n in 0..batch {
            for oc in 0..g.out_ch {
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        let gv = go[((n * g.out_ch + oc) * g.oh + oy) * g.ow + ox];
                        dbd[oc] += gv;
                        for ic in 0..g.in_ch {
                            for ky in 0..g.k {
                                let Some(iy) = g.src(oy, ky, g.h) else {
                                    continue;
                                };
                                for kx in 0..g.k {
                                    let Some(ix) = g.src(ox, kx, g.w) else {
                                        continue;
                                    };
                                    let wi = ((oc * g.in_ch + ic) * g.k + ky) * g.k + kx;
                                    let xi = ((n * g.in_ch + ic) * g.h + iy) * g.w + ix;
                                    dwd[wi] += gv * xd[xi];
                                    dxd[xi] += gv * wt[wi];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (vec![dw, db], dx)
}

fn pool_argmax(window: usize, x: &Tensor, n: usize, ch: usize, oy: usize, ox: usize) -> usize {
    let (h, w) = (x.shape()[2], x.shape()[3]);
    let channels = x.shape()[1];
    let xd = x.data();
    let mut best = usize::MAX;
    for dy in 0..window {
        for dx in 0..window {
            let idx = ((n * channels + ch) * h + oy * window + dy) * w + ox * window + dx;
            if best == usize::MAX || xd[idx] > xd[best] {
                best = idx;
            }
        }
    }
    best
}

fn pool_forward(window: usize, x: &Tensor) -> Tensor {
    let (batch, channels) = (x.batch(), x.shape()[1]);
    let (oh, ow) = (x.shape()[2] / window, x.shape()[3] / window);
    let mut y = Tensor::zeros(&[batch, channels, oh, ow]);
    let yd = y.data_mut();
    for n in 0..batch {
        for ch in 0..channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let src = pool_argmax(window, x, n, ch, oy, ox);
                    yd[((n * channels + ch) * oh + oy) * ow + ox] = x.data()[src];
                }
            }
        }
    }
    y
}

fn pool_backward(window: usize, x: &Tensor, grad_out: &Tensor) -> Tensor {
    let (batch, channels) = (x.batch(), x.shape()[1]);
    let (oh, ow) = (x.shape()[2] / window, x.shape()[3] / window);
    let mut dx = Tensor::zeros(x.shape());
    for n in 0..batch {
        for ch in 0..channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let src = pool_argmax(window, x, n, ch, oy, ox);
                    dx.data_mut()[src] +=
                        grad_out.data()[((n * channels + ch) * oh + oy) * ow + ox];
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_shapes() {
        let conv = LayerKind::Conv2d {
            in_ch: 1,
            out_ch: 4,
            kernel: 5,
            stride: 1,
            pad: 0,
        };
        assert_eq!(conv.output_shape(&[1, 28, 28]).unwrap(), vec![4, 24, 24]);
        let padded = LayerKind::Conv2d {
            in_ch: 1,
            out_ch: 2,
            kernel: 3,
            stride: 2,
            pad: 1,
        };
        assert_eq!(padded.output_shape(&[1, 7, 7]).unwrap(), vec![2, 4, 4]);
        assert_eq!(
            LayerKind::MaxPool { window: 2 }
                .output_shape(&[4, 24, 24])
                .unwrap(),
            vec![4, 12, 12]
        );
        assert_eq!(
            LayerKind::Flatten.output_shape(&[8, 4, 4]).unwrap(),
            vec![128]
        );
        assert!(conv.output_shape(&[3, 28, 28]).is_err());
        let dense = LayerKind::Dense {
            in_dim: 3,
            out_dim: 2,
            bias: true,
        };
        assert!(dense.output_shape(&[4]).is_err());
    }

    #[test]
    fn dense_flops_are_two_per_weight() {
        let dense = LayerKind::Dense {
            in_dim: 7,
            out_dim: 5,
            bias: true,
        };
        assert_eq!(dense.forward_flops(&[7]), 70);
        assert_eq!(dense.param_count(), 40);
    }

    #[test]
    fn relu_and_pool_forward() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        assert_eq!(Layer::Relu.forward(&x).data(), &[1.0, 0.0, 3.0, 0.5]);
        let y = Layer::MaxPool { window: 2 }.forward(&x);
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[3.0]);
        let (_, dx) =
            Layer::MaxPool { window: 2 }.backward(&x, &Tensor::filled(&[1, 1, 1, 1], 2.0));
        assert_eq!(dx.data(), &[0.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn conv_matches_hand_computation() {
        // 1x3x3 input, one 2x2 kernel of ones, stride 1, no pad.
        let conv = Layer::Conv2d(Conv2d {
            weight: Tensor::filled(&[1, 1, 2, 2], 1.0),
            bias: Tensor::new(vec![1], vec![0.5]).unwrap(),
            stride: 1,
            pad: 0,
        });
        let x = Tensor::new(vec![1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let y = conv.forward(&x);
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[12.5, 16.5, 24.5, 28.5]);
    }

    #[test]
    fn init_respects_glorot_bound() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let kind = LayerKind::Dense {
            in_dim: 10,
            out_dim: 6,
            bias: true,
        };
        let layer = kind.init(&mut rng);
        let a = (6.0f64 / 16.0).sqrt();
        let p = layer.params();
        assert!(p[0].data().iter().all(|v| v.abs() < a));
        assert!(p[1].data().iter().all(|&v| v == 0.0));
        assert_eq!(layer.kind(), kind);
    }
}
