//! Tape-based reverse-mode differentiation over the tensor op set, and a
//! central-difference gradient verifier.
//!
//! Ops are evaluated eagerly as they are recorded. Each recorded node keeps
//! its input references and whatever it needs for the backward pass; nodes
//! are appended in evaluation order, so the tape is topologically sorted by
//! construction and [`Tape::backward`] is a single reverse sweep.
//!
//! ```
//! use parcnet::autodiff::{grad, ParamStore};
//! use parcnet::tensor::Tensor;
//!
//! let mut params = ParamStore::new();
//! params.insert("p", Tensor::scalar(3.0f64)).unwrap();
//! let (loss, grads) = grad(&params, |tape| {
//!     let p = tape.param_var("p")?;
//!     let sq = tape.mul(p, p)?;
//!     Ok(tape.sum(sq))
//! })
//! .unwrap();
//! assert_eq!(loss, 9.0);
//! assert_eq!(grads["p"].data(), &[6.0]);
//! ```

use indexmap::IndexMap;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{self, ConvGeometry, GroupNormStats, Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a recorded op.
pub trait Backward<T: Real>: Send + Sync {
    /// Gradients for each input, in input order, given the gradient of the
    /// op's output. `None` means the op does not propagate to that input.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> Vec<Option<Tensor<T>>>;
}

struct Node<T: Real> {
    inputs: Vec<Var>,
    rule: Option<Box<dyn Backward<T>>>,
    requires_grad: bool,
}

/// Named parameter tensors, in registration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T = f32> {
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            tensors: IndexMap::new(),
        }
    }

    /// Adds a tensor; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::Schema(format!("duplicate parameter name {name:?}")));
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Total number of scalars across all tensors.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.dims().to_vec())))
                .collect(),
        }
    }
}

/// Gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients<T: Real> {
    by_var: Vec<Option<Tensor<T>>>,
    params: IndexMap<String, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a parameter by name. Registered parameters the loss does
    /// not reach have an all-zero gradient.
    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    /// Gradient of any recorded value, if the loss depends on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.by_var.get(v.0).and_then(Option::as_ref)
    }

    pub fn into_params(self) -> IndexMap<String, Tensor<T>> {
        self.params
    }
}

/// Record of evaluated ops for reverse-mode differentiation.
pub struct Tape<T: Real> {
    values: Vec<Tensor<T>>,
    nodes: Vec<Node<T>>,
    params: IndexMap<String, Var>,
    grad_enabled: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            nodes: Vec::new(),
            params: IndexMap::new(),
            grad_enabled: true,
        }
    }

    /// A tape that evaluates ops without keeping backward state.
    pub fn inference() -> Self {
        Tape {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, inputs: Vec<Var>, rule: Option<Box<dyn Backward<T>>>, requires_grad: bool) -> Var {
        let v = Var(self.values.len());
        self.values.push(value);
        self.nodes.push(Node {
            inputs,
            rule,
            requires_grad,
        });
        v
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Vec::new(), None, false)
    }

    /// A named leaf that receives a gradient in [`Tape::backward`].
    pub fn param(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<Var> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Schema(format!("parameter {name:?} registered twice")));
        }
        let v = self.push(value, Vec::new(), None, self.grad_enabled);
        self.params.insert(name, v);
        Ok(v)
    }

    /// Registers every tensor of `store` as a parameter.
    pub fn bind(&mut self, store: &ParamStore<T>) -> Result<()> {
        for (name, t) in store.iter() {
            self.param(name, t.clone())?;
        }
        Ok(())
    }

    /// Looks up a registered parameter.
    pub fn param_var(&self, name: &str) -> Result<Var> {
        self.params
            .get(name)
            .copied()
            .ok_or_else(|| Error::Schema(format!("unknown parameter {name:?}")))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records the result of an op. The backward rule is dropped when no
    /// input needs a gradient.
    pub fn record(&mut self, inputs: &[Var], value: Tensor<T>, rule: impl Backward<T> + 'static) -> Var {
        let requires_grad = inputs.iter().any(|&v| self.nodes[v.0].requires_grad);
        if requires_grad {
            self.push(value, inputs.to_vec(), Some(Box::new(rule)), true)
        } else {
            self.push(value, Vec::new(), None, false)
        }
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got dims {:?}",
                lv.dims()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.values.len()];
        grads[loss.0] = Some(Tensor::full(lv.dims().to_vec(), T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some(rule) = &node.rule else { continue };
            let Some(g) = grads[idx].take() else { continue };
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|v| &self.values[v.0]).collect();
            let in_grads = rule.backward(&inputs, &self.values[idx], &g);
            debug_assert_eq!(in_grads.len(), node.inputs.len());
            for (&input, ig) in node.inputs.iter().zip(in_grads) {
                let Some(ig) = ig else { continue };
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(ig.dims(), self.values[input.0].dims());
                match &mut grads[input.0] {
                    Some(acc) => acc.data_mut().iter_mut().zip(ig.data()).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(ig),
                }
            }
            grads[idx] = Some(g);
        }
        let params = self
            .params
            .iter()
            .map(|(name, &v)| {
                let g = grads[v.0]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(self.values[v.0].dims().to_vec()));
                (name.clone(), g)
            })
            .collect();
        Ok(Gradients {
            by_var: grads,
            params,
        })
    }
}

// ---------------------------------------------------------------------------
// Op set

struct AddRule;
impl<T: Real> Backward<T> for AddRule {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.clone()), Some(g.clone())]
    }
}

struct SubRule;
impl<T: Real> Backward<T> for SubRule {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.clone()), Some(g.map(|v| -v))]
    }
}

struct MulRule;
impl<T: Real> Backward<T> for MulRule {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![tensor::mul(g, x[1]).ok(), tensor::mul(g, x[0]).ok()]
    }
}

struct ScaleRule<T>(T);
impl<T: Real> Backward<T> for ScaleRule<T> {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(tensor::scale(g, self.0))]
    }
}

struct SumRule;
impl<T: Real> Backward<T> for SumRule {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(Tensor::full(x[0].dims().to_vec(), g.data()[0]))]
    }
}

struct SigmoidRule;
impl<T: Real> Backward<T> for SigmoidRule {
    fn backward(&self, _: &[&Tensor<T>], y: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let data = g.data().iter().zip(y.data()).map(|(&g, &s)| g * s * (T::one() - s)).collect();
        vec![Tensor::new(g.dims().to_vec(), data).ok()]
    }
}

struct SiluRule;
impl<T: Real> Backward<T> for SiluRule {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let data = g
            .data()
            .iter()
            .zip(x[0].data())
            .map(|(&g, &v)| g * tensor::silu_grad_scalar(v))
            .collect();
        vec![Tensor::new(g.dims().to_vec(), data).ok()]
    }
}

struct ReshapeRule;
impl<T: Real> Backward<T> for ReshapeRule {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![g.reshape(x[0].dims().to_vec()).ok()]
    }
}

struct Conv2dRule {
    geometry: ConvGeometry,
    has_bias: bool,
}
impl<T: Real> Backward<T> for Conv2dRule {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let gx = tensor::conv2d_input_grad(g, x[1], &self.geometry);
        let (gw, gb) = tensor::conv2d_param_grads(g, x[0], &self.geometry);
        let mut out = vec![Some(gx), Some(gw)];
        if self.has_bias {
            out.push(Some(gb));
        }
        out
    }
}

struct GroupNormRule<T> {
    groups: usize,
    stats: GroupNormStats<T>,
}
impl<T: Real> Backward<T> for GroupNormRule<T> {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (dx, dgamma, dbeta) = tensor::group_norm_grads(g, x[0], x[1], self.groups, &self.stats);
        vec![Some(dx), Some(dgamma), Some(dbeta)]
    }
}

struct AvgPoolRule;
impl<T: Real> Backward<T> for AvgPoolRule {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (n, c, h, w) = x[0].nchw().expect("rank 4");
        let inv = T::one() / T::lit((h * w) as f64);
        let t = Tensor::from_fn(vec![n, c, h, w], |i| g.data()[i / (h * w)] * inv);
        vec![Some(t)]
    }
}

struct LinearRule {
    has_bias: bool,
}
impl<T: Real> Backward<T> for LinearRule {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (input, weight) = (x[0], x[1]);
        let (n, fin) = (input.dims()[0], input.dims()[1]);
        let fout = weight.dims()[0];
        let mut gx = vec![T::zero(); n * fin];
        let mut gw = vec![T::zero(); fout * fin];
        let mut gb = vec![T::zero(); fout];
        for s in 0..n {
            let xrow = &input.data()[s * fin..][..fin];
            for o in 0..fout {
                let gv = g.data()[s * fout + o];
                let wrow = &weight.data()[o * fin..][..fin];
                for i in 0..fin {
                    gx[s * fin + i] += gv * wrow[i];
                    gw[o * fin + i] += gv * xrow[i];
                }
                gb[o] += gv;
            }
        }
        let mut out = vec![
            Tensor::new(vec![n, fin], gx).ok(),
            Tensor::new(vec![fout, fin], gw).ok(),
        ];
        if self.has_bias {
            out.push(Tensor::new(vec![fout], gb).ok());
        }
        out
    }
}

struct ScaleChannelsRule;
impl<T: Real> Backward<T> for ScaleChannelsRule {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (input, gate) = (x[0], x[1]);
        let (_, _, h, w) = input.nchw().expect("rank 4");
        let gx = tensor::scale_channels(g, gate).ok();
        let dgate: Vec<T> = g
            .data()
            .chunks_exact(h * w)
            .zip(input.data().chunks_exact(h * w))
            .map(|(gp, xp)| gp.iter().zip(xp).map(|(&a, &b)| a * b).sum())
            .collect();
        vec![gx, Tensor::new(gate.dims().to_vec(), dgate).ok()]
    }
}

struct ConcatRule {
    axis: usize,
}
impl<T: Real> Backward<T> for ConcatRule {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let mut start = 0;
        x.iter()
            .map(|t| {
                let len = t.dims()[self.axis];
                let s = tensor::slice(g, self.axis, start, len).ok();
                start += len;
                s
            })
            .collect()
    }
}

struct SliceRule {
    axis: usize,
    start: usize,
}
impl<T: Real> Backward<T> for SliceRule {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let dims = x[0].dims();
        let outer: usize = dims[..self.axis].iter().product();
        let inner: usize = dims[self.axis + 1..].iter().product();
        let extent = dims[self.axis];
        let len = g.dims()[self.axis];
        let mut out = vec![T::zero(); x[0].len()];
        for o in 0..outer {
            out[(o * extent + self.start) * inner..][..len * inner]
                .copy_from_slice(&g.data()[o * len * inner..][..len * inner]);
        }
        vec![Tensor::new(dims.to_vec(), out).ok()]
    }
}

struct CrossEntropyRule<T> {
    target: Tensor<T>,
    probs: Tensor<T>,
}
impl<T: Real> Backward<T> for CrossEntropyRule<T> {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let [n, k] = *self.probs.dims() else { unreachable!() };
        let scale = g.data()[0] / T::lit(n as f64);
        let mut out = Vec::with_capacity(n * k);
        for (p, t) in self.probs.data().chunks_exact(k).zip(self.target.data().chunks_exact(k)) {
            let mass: T = t.iter().copied().sum();
            out.extend(p.iter().zip(t).map(|(&p, &t)| (p * mass - t) * scale));
        }
        vec![Tensor::new(vec![n, k], out).ok()]
    }
}

impl<T: Real> Tape<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = tensor::add(self.value(a), self.value(b))?;
        Ok(self.record(&[a, b], y, AddRule))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = tensor::sub(self.value(a), self.value(b))?;
        Ok(self.record(&[a, b], y, SubRule))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = tensor::mul(self.value(a), self.value(b))?;
        Ok(self.record(&[a, b], y, MulRule))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let y = tensor::scale(self.value(a), s);
        self.record(&[a], y, ScaleRule(s))
    }

    /// Sum of all elements, as a 1-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let y = Tensor::scalar(self.value(a).sum());
        self.record(&[a], y, SumRule)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let y = tensor::sigmoid(self.value(a));
        self.record(&[a], y, SigmoidRule)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let y = tensor::silu(self.value(a));
        self.record(&[a], y, SiluRule)
    }

    pub fn reshape(&mut self, a: Var, dims: &[usize]) -> Result<Var> {
        let y = self.value(a).reshape(dims.to_vec())?;
        Ok(self.record(&[a], y, ReshapeRule))
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: (usize, usize),
        padding: (usize, usize),
        groups: usize,
    ) -> Result<Var> {
        let geometry = ConvGeometry::resolve(
            self.value(x).dims(),
            self.value(kernel).dims(),
            stride,
            padding,
            groups,
        )?;
        let y = tensor::conv2d(
            self.value(x),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            stride,
            padding,
            groups,
        )?;
        let mut inputs = vec![x, kernel];
        inputs.extend(bias);
        Ok(self.record(
            &inputs,
            y,
            Conv2dRule {
                geometry,
                has_bias: bias.is_some(),
            },
        ))
    }

    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize, eps: T) -> Result<Var> {
        let (y, stats) =
            tensor::group_norm_with_stats(self.value(x), groups, self.value(gamma), self.value(beta), eps)?;
        Ok(self.record(&[x, gamma, beta], y, GroupNormRule { groups, stats }))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let y = tensor::global_avg_pool(self.value(x))?;
        Ok(self.record(&[x], y, AvgPoolRule))
    }

    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let y = tensor::linear(self.value(x), self.value(weight), bias.map(|b| self.value(b)))?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.record(
            &inputs,
            y,
            LinearRule {
                has_bias: bias.is_some(),
            },
        ))
    }

    /// `x` (N×C×H×W) times `gate` (N×C or N×C×1×1), broadcast over H and W.
    pub fn scale_channels(&mut self, x: Var, gate: Var) -> Result<Var> {
        let y = tensor::scale_channels(self.value(x), self.value(gate))?;
        Ok(self.record(&[x, gate], y, ScaleChannelsRule))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let vals: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
        let y = tensor::concat(&vals, axis)?;
        Ok(self.record(xs, y, ConcatRule { axis }))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let y = tensor::slice(self.value(x), axis, start, len)?;
        Ok(self.record(&[x], y, SliceRule { axis, start }))
    }

    /// Batch-mean soft-target cross entropy of N×K logits.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: &Tensor<T>) -> Result<Var> {
        let loss = tensor::softmax_cross_entropy(self.value(logits), target)?;
        let probs = tensor::softmax(self.value(logits))?;
        Ok(self.record(
            &[logits],
            Tensor::scalar(loss),
            CrossEntropyRule {
                target: target.clone(),
                probs,
            },
        ))
    }
}

// ---------------------------------------------------------------------------
// Functional entry points

/// Evaluates `loss_fn` on a fresh tape with `params` bound and returns the
/// scalar loss together with the gradient of every parameter.
pub fn grad<T, F>(params: &ParamStore<T>, loss_fn: F) -> Result<(T, IndexMap<String, Tensor<T>>)>
where
    T: Real,
    F: FnOnce(&mut Tape<T>) -> Result<Var>,
{
    let mut tape = Tape::new();
    tape.bind(params)?;
    let loss = loss_fn(&mut tape)?;
    let grads = tape.backward(loss)?;
    Ok((tape.value(loss).data()[0], grads.into_params()))
}

/// Evaluates `loss_fn` without recording backward state.
pub fn eval_loss<T, F>(params: &ParamStore<T>, loss_fn: F) -> Result<T>
where
    T: Real,
    F: FnOnce(&mut Tape<T>) -> Result<Var>,
{
    let mut tape = Tape::inference();
    tape.bind(params)?;
    let loss = loss_fn(&mut tape)?;
    let v = tape.value(loss);
    if v.len() != 1 {
        return Err(Error::Contract(format!("loss must be scalar, got dims {:?}", v.dims())));
    }
    Ok(v.data()[0])
}

/// Settings for [`finite_diff_check`].
#[derive(Debug, Clone, Copy)]
pub struct FiniteDiffOptions {
    pub eps: f64,
    /// Check at most this many coordinates per parameter tensor, chosen
    /// uniformly at random without replacement. `None` checks all of them.
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for FiniteDiffOptions {
    fn default() -> Self {
        FiniteDiffOptions {
            eps: 1e-5,
            max_coords_per_param: None,
            seed: 0,
        }
    }
}

/// Outcome of [`finite_diff_check`].
#[derive(Debug, Clone)]
pub struct FiniteDiffReport {
    /// Max over checked coordinates of `|analytic − numeric| / max(1, |numeric|)`.
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub coords_checked: usize,
}

/// Compares the tape's gradient of `loss_fn` against central differences
/// `(f(p + eps) − f(p − eps)) / (2·eps)`, coordinate by coordinate, in f64.
pub fn finite_diff_check<F>(
    params: &ParamStore<f64>,
    loss_fn: F,
    options: FiniteDiffOptions,
) -> Result<FiniteDiffReport>
where
    F: Fn(&mut Tape<f64>) -> Result<Var>,
{
    let (base, analytic) = grad(params, &loss_fn)?;
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("loss is {base} at the unperturbed point")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut report = FiniteDiffReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        coords_checked: 0,
    };
    let mut probe = params.clone();
    for (name, tensor) in params.iter() {
        let n = tensor.len();
        let coords: Vec<usize> = match options.max_coords_per_param {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let g = &analytic[name];
        for i in coords {
            let orig = tensor.data()[i];
            probe.get_mut(name).expect("same names").data_mut()[i] = orig + options.eps;
            let up = eval_loss(&probe, &loss_fn)?;
            probe.get_mut(name).expect("same names").data_mut()[i] = orig - options.eps;
            let down = eval_loss(&probe, &loss_fn)?;
            probe.get_mut(name).expect("same names").data_mut()[i] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss is non-finite when perturbing {name}[{i}]"
                )));
            }
            let numeric = (up - down) / (2.0 * options.eps);
            let err = (g.data()[i] - numeric).abs() / numeric.abs().max(1.0);
            report.coords_checked += 1;
            if err > report.max_rel_err || report.worst_param.is_empty() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst_param = name.to_string();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}
