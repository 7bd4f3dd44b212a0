//! Recording tape for reverse-mode differentiation over the backbone op set.
//!
//! A tape is confined to one thread and one training step: register leaves,
//! record forward ops, call `backward` once on a scalar loss, then query
//! gradients. Gradients from multiple uses of a node accumulate by summation.

use std::collections::HashMap;

use super::kernels;
use super::{Parameter, Tensor, TensorError, TensorResult};

/// Handle to a node on a tape.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Tracked {
    pub(crate) id: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    PixelUnshuffle { x: usize, factor: usize },
    PixelShuffle { x: usize, factor: usize },
    ConvDepthwise { x: usize, kernels: usize, bias: usize },
    ConvPointwise { x: usize, weight: usize, bias: usize },
    Relu { x: usize },
    Add { a: usize, b: usize },
    Mul { a: usize, b: usize },
    SliceChannels { x: usize, from: usize },
    ChannelAffine { x: usize, scale: usize, bias: usize },
    StraightThrough { x: usize },
    Clamp01 { x: usize },
    Sum { x: usize },
    MeanAbsDiff { a: usize, b: usize },
    MeanSqDiff { a: usize, b: usize },
    Scale { x: usize, factor: f32 },
}

struct Node {
    op: Op,
    value: Tensor,
    grad: Option<Vec<f32>>,
    needs_grad: bool,
}

/// Recorded computation over tensors.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, usize>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Tracked {
        self.nodes.push(Node {
            op,
            value,
            grad: None,
            needs_grad,
        });
        Tracked {
            id: self.nodes.len() - 1,
        }
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes[id].needs_grad
    }

    /// Register a differentiable leaf (a copy of `t` joins the tape).
    pub fn leaf(&mut self, t: &Tensor) -> Tracked {
        let mut value = t.clone();
        value.requires_grad = true;
        self.push(Op::Leaf, value, true)
    }

    /// Register a non-differentiable input.
    pub fn constant(&mut self, t: Tensor) -> Tracked {
        self.push(Op::Constant, t, false)
    }

    /// Register a named parameter; repeated registration of the same name
    /// returns the existing node so gradients from all uses accumulate.
    pub fn param(&mut self, p: &Parameter) -> Tracked {
        if let Some(&id) = self.params.get(&p.name) {
            return Tracked { id };
        }
        let t = self.leaf(&p.value);
        self.params.insert(p.name.clone(), t.id);
        t
    }

    pub fn value(&self, t: Tracked) -> &Tensor {
        &self.nodes[t.id].value
    }

    /// Gradient of the last backward pass with respect to node `t`.
    pub fn grad(&self, t: Tracked) -> Option<&[f32]> {
        self.nodes[t.id].grad.as_deref()
    }

    /// Gradient for a registered parameter, by name identity.
    pub fn grad_of_param(&self, p: &Parameter) -> Option<&[f32]> {
        self.params
            .get(&p.name)
            .and_then(|&id| self.nodes[id].grad.as_deref())
    }

    /// Copy the gradient of a leaf into the tensor's own `grad` field.
    pub fn export_leaf_grad(&self, t: Tracked, dst: &mut Tensor) {
        dst.grad = self.nodes[t.id].grad.clone();
    }

    pub fn pixel_unshuffle(&mut self, x: Tracked, factor: usize) -> TensorResult<Tracked> {
        let value = kernels::pixel_unshuffle(self.value(x), factor)?;
        let needs = self.needs(x.id);
        Ok(self.push(Op::PixelUnshuffle { x: x.id, factor }, value, needs))
    }

    pub fn pixel_shuffle(&mut self, x: Tracked, factor: usize) -> TensorResult<Tracked> {
        let value = kernels::pixel_shuffle(self.value(x), factor)?;
        let needs = self.needs(x.id);
        Ok(self.push(Op::PixelShuffle { x: x.id, factor }, value, needs))
    }

    pub fn conv_depthwise(
        &mut self,
        x: Tracked,
        kernels_t: Tracked,
        bias: Tracked,
    ) -> TensorResult<Tracked> {
        let value = kernels::conv_depthwise(
            self.value(x),
            self.value(kernels_t),
            self.value(bias),
        )?;
        let needs = self.needs(x.id) || self.needs(kernels_t.id) || self.needs(bias.id);
        Ok(self.push(
            Op::ConvDepthwise {
                x: x.id,
                kernels: kernels_t.id,
                bias: bias.id,
            },
            value,
            needs,
        ))
    }

    pub fn conv_pointwise(
        &mut self,
        x: Tracked,
        weight: Tracked,
        bias: Tracked,
    ) -> TensorResult<Tracked> {
        let value =
            kernels::conv_pointwise(self.value(x), self.value(weight), self.value(bias))?;
        let needs = self.needs(x.id) || self.needs(weight.id) || self.needs(bias.id);
        Ok(self.push(
            Op::ConvPointwise {
                x: x.id,
                weight: weight.id,
                bias: bias.id,
            },
            value,
            needs,
        ))
    }

    pub fn relu(&mut self, x: Tracked) -> Tracked {
        let src = self.value(x);
        let value = Tensor::new(
            src.shape().to_vec(),
            src.data().iter().map(|&v| v.max(0.0)).collect(),
        )
        .expect("same shape");
        let needs = self.needs(x.id);
        self.push(Op::Relu { x: x.id }, value, needs)
    }

    pub fn add(&mut self, a: Tracked, b: Tracked) -> TensorResult<Tracked> {
        self.binary_elementwise("add", a, b, |x, y| x + y, |a_id, b_id| Op::Add {
            a: a_id,
            b: b_id,
        })
    }

    pub fn mul(&mut self, a: Tracked, b: Tracked) -> TensorResult<Tracked> {
        self.binary_elementwise("mul_elementwise", a, b, |x, y| x * y, |a_id, b_id| Op::Mul {
            a: a_id,
            b: b_id,
        })
    }

    fn binary_elementwise(
        &mut self,
        name: &'static str,
        a: Tracked,
        b: Tracked,
        f: impl Fn(f32, f32) -> f32,
        op: impl Fn(usize, usize) -> Op,
    ) -> TensorResult<Tracked> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(TensorError::ShapeMismatch {
                op: name,
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(a.id) || self.needs(b.id);
        Ok(self.push(op(a.id, b.id), value, needs))
    }

    /// Split along the channel axis into two equal halves.
    pub fn chunk2(&mut self, x: Tracked) -> TensorResult<(Tracked, Tracked)> {
        let (c, _, _) = self.value(x).dims3("chunk2")?;
        if c % 2 != 0 {
            return Err(TensorError::OddChannels { channels: c });
        }
        let first = self.slice_channels(x, 0, c / 2)?;
        let second = self.slice_channels(x, c / 2, c)?;
        Ok((first, second))
    }

    fn slice_channels(&mut self, x: Tracked, from: usize, to: usize) -> TensorResult<Tracked> {
        let (_, h, w) = self.value(x).dims3("slice_channels")?;
        let hw = h * w;
        let data = self.value(x).data()[from * hw..to * hw].to_vec();
        let value = Tensor::new(vec![to - from, h, w], data)?;
        let needs = self.needs(x.id);
        Ok(self.push(Op::SliceChannels { x: x.id, from }, value, needs))
    }

    /// Per-channel `x * scale[c] + bias[c]`.
    pub fn channel_affine(
        &mut self,
        x: Tracked,
        scale: Tracked,
        bias: Tracked,
    ) -> TensorResult<Tracked> {
        let (c, h, w) = self.value(x).dims3("channel_affine")?;
        let (sv, bv) = (self.value(scale), self.value(bias));
        if sv.numel() != c || bv.numel() != c {
            return Err(TensorError::ShapeMismatch {
                op: "channel_affine",
                left: vec![c, h, w],
                right: sv.shape().to_vec(),
            });
        }
        let hw = h * w;
        let mut data = vec![0.0f32; c * hw];
        let xv = self.value(x).data();
        let (sd, bd) = (sv.data(), bv.data());
        for ci in 0..c {
            let (s, b) = (sd[ci], bd[ci]);
            for p in 0..hw {
                data[ci * hw + p] = xv[ci * hw + p] * s + b;
            }
        }
        let value = Tensor::new(vec![c, h, w], data)?;
        let needs = self.needs(x.id) || self.needs(scale.id) || self.needs(bias.id);
        Ok(self.push(
            Op::ChannelAffine {
                x: x.id,
                scale: scale.id,
                bias: bias.id,
            },
            value,
            needs,
        ))
    }

    /// Forward takes the quantized values; backward passes gradients to `x`
    /// unchanged, as if the quantizer were the identity.
    pub fn straight_through(&mut self, x: Tracked, quantized: &Tensor) -> TensorResult<Tracked> {
        if self.value(x).shape() != quantized.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "straight_through",
                left: self.value(x).shape().to_vec(),
                right: quantized.shape().to_vec(),
            });
        }
        let needs = self.needs(x.id);
        Ok(self.push(Op::StraightThrough { x: x.id }, quantized.clone(), needs))
    }

    pub fn clamp01(&mut self, x: Tracked) -> Tracked {
        let src = self.value(x);
        let value = Tensor::new(
            src.shape().to_vec(),
            src.data().iter().map(|&v| v.clamp(0.0, 1.0)).collect(),
        )
        .expect("same shape");
        let needs = self.needs(x.id);
        self.push(Op::Clamp01 { x: x.id }, value, needs)
    }

    pub fn sum(&mut self, x: Tracked) -> Tracked {
        let total = kernels::sum_slice(self.value(x).data());
        let needs = self.needs(x.id);
        self.push(Op::Sum { x: x.id }, Tensor::scalar(total), needs)
    }

    /// Mean absolute difference (L1) as a scalar.
    pub fn mean_abs_diff(&mut self, a: Tracked, b: Tracked) -> TensorResult<Tracked> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mean_abs_diff",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let n = av.numel() as f32;
        let mut acc = 0.0f32;
        for (&x, &y) in av.data().iter().zip(bv.data()) {
            acc += (x - y).abs();
        }
        let needs = self.needs(a.id) || self.needs(b.id);
        Ok(self.push(
            Op::MeanAbsDiff { a: a.id, b: b.id },
            Tensor::scalar(acc / n),
            needs,
        ))
    }

    /// Mean squared difference as a scalar.
    pub fn mean_sq_diff(&mut self, a: Tracked, b: Tracked) -> TensorResult<Tracked> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mean_sq_diff",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let n = av.numel() as f32;
        let mut acc = 0.0f32;
        for (&x, &y) in av.data().iter().zip(bv.data()) {
            acc += (x - y) * (x - y);
        }
        let needs = self.needs(a.id) || self.needs(b.id);
        Ok(self.push(
            Op::MeanSqDiff { a: a.id, b: b.id },
            Tensor::scalar(acc / n),
            needs,
        ))
    }

    pub fn scale(&mut self, x: Tracked, factor: f32) -> Tracked {
        let src = self.value(x);
        let value = Tensor::new(
            src.shape().to_vec(),
            src.data().iter().map(|&v| v * factor).collect(),
        )
        .expect("same shape");
        let needs = self.needs(x.id);
        self.push(Op::Scale { x: x.id, factor }, value, needs)
    }

    /// Populate gradients for every node the scalar `loss` depends on.
    pub fn backward(&mut self, loss: Tracked) -> TensorResult<()> {
        if self.consumed {
            return Err(TensorError::BackwardConsumed);
        }
        let loss_value = &self.nodes[loss.id].value;
        if !loss_value.is_scalar() {
            return Err(TensorError::NotScalar {
                shape: loss_value.shape().to_vec(),
            });
        }
        self.consumed = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f32>>> = (0..n).map(|_| None).collect();
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            if self.nodes[id].needs_grad {
                self.propagate(id, &g, &mut grads);
            }
            self.nodes[id].grad = Some(g);
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        // Ensures the buffer exists, zero-filled, before accumulation.
        macro_rules! buf {
            ($target:expr) => {{
                let len = self.nodes[$target].value.numel();
                grads[$target].get_or_insert_with(|| vec![0.0f32; len])
            }};
        }
        macro_rules! wants {
            ($target:expr) => {
                self.nodes[$target].needs_grad
            };
        }

        match self.nodes[id].op {
            Op::Leaf | Op::Constant => {}
            Op::PixelUnshuffle { x, factor } => {
                if wants!(x) {
                    let gt = Tensor::new(self.nodes[id].value.shape().to_vec(), g.to_vec())
                        .expect("grad shape");
                    let back = kernels::pixel_shuffle(&gt, factor).expect("inverse layout");
                    accumulate(buf!(x), back.data());
                }
            }
            Op::PixelShuffle { x, factor } => {
                if wants!(x) {
                    let gt = Tensor::new(self.nodes[id].value.shape().to_vec(), g.to_vec())
                        .expect("grad shape");
                    let back = kernels::pixel_unshuffle(&gt, factor).expect("inverse layout");
                    accumulate(buf!(x), back.data());
                }
            }
            Op::ConvDepthwise { x, kernels: k, bias } => {
                let (c, h, w) = self.nodes[x].value.dims3("bwd").expect("checked at record");
                let ksize = self.nodes[k].value.shape()[1];
                let (xv, kv) = (self.nodes[x].value.data(), self.nodes[k].value.data());
                let (wx, wk, wb) = (wants!(x), wants!(k), wants!(bias));
                let mut dx = if wx { Some(vec![0.0f32; c * h * w]) } else { None };
                let mut dk = if wk { Some(vec![0.0f32; c * ksize * ksize]) } else { None };
                let mut db = if wb { Some(vec![0.0f32; c]) } else { None };
                kernels::depthwise_backward(
                    xv,
                    kv,
                    g,
                    c,
                    h,
                    w,
                    ksize,
                    dx.as_deref_mut(),
                    dk.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(d) = dx {
                    accumulate(buf!(x), &d);
                }
                if let Some(d) = dk {
                    accumulate(buf!(k), &d);
                }
                if let Some(d) = db {
                    accumulate(buf!(bias), &d);
                }
            }
            Op::ConvPointwise { x, weight, bias } => {
                let (c_in, h, w) = self.nodes[x].value.dims3("bwd").expect("checked at record");
                let c_out = self.nodes[weight].value.shape()[0];
                let hw = h * w;
                let (xv, wv) = (self.nodes[x].value.data(), self.nodes[weight].value.data());
                let (wx, ww, wb) = (wants!(x), wants!(weight), wants!(bias));
                let mut dx = if wx { Some(vec![0.0f32; c_in * hw]) } else { None };
                let mut dw = if ww { Some(vec![0.0f32; c_out * c_in]) } else { None };
                let mut db = if wb { Some(vec![0.0f32; c_out]) } else { None };
                kernels::pointwise_backward(
                    xv,
                    wv,
                    g,
                    c_in,
                    c_out,
                    hw,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(d) = dx {
                    accumulate(buf!(x), &d);
                }
                if let Some(d) = dw {
                    accumulate(buf!(weight), &d);
                }
                if let Some(d) = db {
                    accumulate(buf!(bias), &d);
                }
            }
            Op::Relu { x } => {
                if wants!(x) {
                    let xv = self.nodes[x].value.data();
                    let dst = buf!(x);
                    for i in 0..g.len() {
                        if xv[i] > 0.0 {
                            dst[i] += g[i];
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                if wants!(a) {
                    accumulate(buf!(a), g);
                }
                if wants!(b) {
                    accumulate(buf!(b), g);
                }
            }
            Op::Mul { a, b } => {
                if wants!(a) {
                    let bv = self.nodes[b].value.data();
                    let dst = buf!(a);
                    for i in 0..g.len() {
                        dst[i] += g[i] * bv[i];
                    }
                }
                if wants!(b) {
                    let av = self.nodes[a].value.data();
                    let dst = buf!(b);
                    for i in 0..g.len() {
                        dst[i] += g[i] * av[i];
                    }
                }
            }
            Op::SliceChannels { x, from } => {
                if wants!(x) {
                    let (_, h, w) = self.nodes[x].value.dims3("bwd").expect("checked");
                    let offset = from * h * w;
                    let dst = buf!(x);
                    for i in 0..g.len() {
                        dst[offset + i] += g[i];
                    }
                }
            }
            Op::ChannelAffine { x, scale, bias } => {
                let (c, h, w) = self.nodes[x].value.dims3("bwd").expect("checked");
                let hw = h * w;
                if wants!(x) {
                    let sv = self.nodes[scale].value.data().to_vec();
                    let dst = buf!(x);
                    for ci in 0..c {
                        let s = sv[ci];
                        for p in 0..hw {
                            dst[ci * hw + p] += g[ci * hw + p] * s;
                        }
                    }
                }
                if wants!(scale) {
                    let xv = self.nodes[x].value.data();
                    let mut ds = vec![0.0f32; c];
                    for ci in 0..c {
                        ds[ci] = kernels::dot(&g[ci * hw..(ci + 1) * hw], &xv[ci * hw..(ci + 1) * hw]);
                    }
                    accumulate(buf!(scale), &ds);
                }
                if wants!(bias) {
                    let mut db = vec![0.0f32; c];
                    for ci in 0..c {
                        db[ci] = kernels::sum_slice(&g[ci * hw..(ci + 1) * hw]);
                    }
                    accumulate(buf!(bias), &db);
                }
            }
            Op::StraightThrough { x } => {
                if wants!(x) {
                    accumulate(buf!(x), g);
                }
            }
            Op::Clamp01 { x } => {
                if wants!(x) {
                    let xv = self.nodes[x].value.data();
                    let dst = buf!(x);
                    for i in 0..g.len() {
                        if (0.0..=1.0).contains(&xv[i]) {
                            dst[i] += g[i];
                        }
                    }
                }
            }
            Op::Sum { x } => {
                if wants!(x) {
                    let gv = g[0];
                    let dst = buf!(x);
                    for d in dst.iter_mut() {
                        *d += gv;
                    }
                }
            }
            Op::MeanAbsDiff { a, b } => {
                let gv = g[0];
                let n = self.nodes[a].value.numel() as f32;
                let (av, bv) = (self.nodes[a].value.data(), self.nodes[b].value.data());
                if wants!(a) {
                    let dst = buf!(a);
                    for i in 0..av.len() {
                        dst[i] += gv * (av[i] - bv[i]).signum_or_zero() / n;
                    }
                }
                if wants!(b) {
                    let dst = buf!(b);
                    for i in 0..av.len() {
                        dst[i] -= gv * (av[i] - bv[i]).signum_or_zero() / n;
                    }
                }
            }
            Op::MeanSqDiff { a, b } => {
                let gv = g[0];
                let n = self.nodes[a].value.numel() as f32;
                let (av, bv) = (self.nodes[a].value.data(), self.nodes[b].value.data());
                if wants!(a) {
                    let dst = buf!(a);
                    for i in 0..av.len() {
                        dst[i] += gv * 2.0 * (av[i] - bv[i]) / n;
                    }
                }
                if wants!(b) {
                    let dst = buf!(b);
                    for i in 0..av.len() {
                        dst[i] -= gv * 2.0 * (av[i] - bv[i]) / n;
                    }
                }
            }
            Op::Scale { x, factor } => {
                if wants!(x) {
                    let dst = buf!(x);
                    for i in 0..g.len() {
                        dst[i] += g[i] * factor;
                    }
                }
            }
        }
    }
}

fn accumulate(dst: &mut [f32], src: &[f32]) {
    debug_assert_eq!(dst.len(), src.len());
    for i in 0..dst.len() {
        dst[i] += src[i];
    }
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f32;
}

impl SignumOrZero for f32 {
    fn signum_or_zero(self) -> f32 {
        if self > 0.0 {
            1.0
        } else if self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_relu_gradient() {
        let mut tape = Tape::new();
        let mut x = Tensor::new(vec![2], vec![1.0, -1.0]).unwrap();
        let xt = tape.leaf(&x);
        let r = tape.relu(xt);
        let loss = tape.sum(r);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(xt).unwrap(), &[1.0, 0.0]);
        tape.export_leaf_grad(xt, &mut x);
        assert_eq!(x.grad.as_deref().unwrap(), &[1.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let err = tape.backward(x).unwrap_err();
        assert!(matches!(err, TensorError::NotScalar { .. }));
    }

    #[test]
    fn backward_twice_errors() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(2.0));
        let loss = tape.sum(x);
        tape.backward(loss).unwrap();
        assert_eq!(tape.backward(loss).unwrap_err(), TensorError::BackwardConsumed);
    }

    #[test]
    fn gradients_accumulate_across_uses() {
        // loss = sum(x + x) => grad 2 per element.
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let doubled = tape.add(x, x).unwrap();
        let loss = tape.sum(doubled);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn backward_of_sum_of_losses_matches_sum_of_backwards() {
        // Linearity: d(l1 + l2)/dx == d l1/dx + d l2/dx.
        let xv = Tensor::new(vec![2, 2, 1], vec![0.3, -0.7, 1.2, 0.4]).unwrap();
        let yv = Tensor::new(vec![2, 2, 1], vec![1.0, 0.5, -0.2, 0.8]).unwrap();

        let run = |combine: bool| -> (Vec<f32>, Vec<f32>) {
            let mut grads = vec![0.0f32; 4];
            let mut total = vec![0.0f32; 4];
            if combine {
                let mut tape = Tape::new();
                let x = tape.leaf(&xv);
                let y = tape.constant(yv.clone());
                let l1 = tape.mean_sq_diff(x, y).unwrap();
                let r = tape.relu(x);
                let l2 = tape.sum(r);
                let loss = tape.add(l1, l2).unwrap();
                tape.backward(loss).unwrap();
                total.copy_from_slice(tape.grad(x).unwrap());
            } else {
                for which in 0..2 {
                    let mut tape = Tape::new();
                    let x = tape.leaf(&xv);
                    let loss = if which == 0 {
                        let y = tape.constant(yv.clone());
                        tape.mean_sq_diff(x, y).unwrap()
                    } else {
                        let r = tape.relu(x);
                        tape.sum(r)
                    };
                    tape.backward(loss).unwrap();
                    for (t, g) in grads.iter_mut().zip(tape.grad(x).unwrap()) {
                        *t += g;
                    }
                }
                total.copy_from_slice(&grads);
            }
            (total, grads)
        };

        let (combined, _) = run(true);
        let (separate, _) = run(false);
        for (a, b) in combined.iter().zip(&separate) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn straight_through_passes_gradient_as_identity() {
        // Gradient through the quantizer equals gradient with it removed.
        let xv = Tensor::new(vec![2, 1, 1], vec![0.9, 0.1]).unwrap();
        let qv = Tensor::new(vec![2, 1, 1], vec![1.0, 0.0]).unwrap();
        let target = Tensor::new(vec![2, 1, 1], vec![0.2, 0.6]).unwrap();

        let mut tape = Tape::new();
        let x = tape.leaf(&xv);
        let st = tape.straight_through(x, &qv).unwrap();
        let t = tape.constant(target.clone());
        let loss = tape.mean_sq_diff(st, t).unwrap();
        tape.backward(loss).unwrap();
        let got = tape.grad(x).unwrap().to_vec();

        // Identity version: same loss with x replaced by the quantized values
        // as a leaf; the straight-through estimator reports that gradient.
        let mut tape2 = Tape::new();
        let q = tape2.leaf(&qv);
        let t2 = tape2.constant(target);
        let loss2 = tape2.mean_sq_diff(q, t2).unwrap();
        tape2.backward(loss2).unwrap();
        assert_eq!(got, tape2.grad(q).unwrap());
    }

    #[test]
    fn chunk2_splits_and_scatters_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::new(vec![4, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let (a, b) = tape.chunk2(x).unwrap();
        assert_eq!(tape.value(a).data(), &[1.0, 2.0]);
        assert_eq!(tape.value(b).data(), &[3.0, 4.0]);
        // loss = sum(a * b) = 1*3 + 2*4; d/dx = [3, 4, 1, 2].
        let prod = tape.mul(a, b).unwrap();
        let loss = tape.sum(prod);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[3.0, 4.0, 1.0, 2.0]);
    }

    #[test]
    fn chunk2_rejects_odd_channels() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::zeros(vec![3, 1, 1]));
        assert_eq!(
            tape.chunk2(x).unwrap_err(),
            TensorError::OddChannels { channels: 3 }
        );
    }

    #[test]
    fn param_reregistration_shares_node() {
        let p = Parameter::new("w", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let mut tape = Tape::new();
        let a = tape.param(&p);
        let b = tape.param(&p);
        assert_eq!(a, b);
        let doubled = tape.add(a, b).unwrap();
        let loss = tape.sum(doubled);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad_of_param(&p).unwrap(), &[2.0, 2.0]);
    }
}
