//! Reverse-mode differentiation over small dense vectors.
//!
//! Every call on [`Tape`] evaluates its operation immediately, appends a node
//! holding the result plus whatever the local gradient needs, and returns a
//! [`Var`] handle to it. [`Tape::backward`] then walks the nodes in reverse
//! and accumulates adjoints into every differentiable input and every
//! parameter block that took part in the forward pass.

use std::collections::HashMap;

use crate::error::{check_len, Error, Result};
use crate::nn::layers::{DenseLayer, LstmCell, LstmStepCache};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Identifies a parameter block (one layer's flattened `[W, b]`) in a [`Gradients`] map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

enum Op<'a> {
    Input,
    Constant,
    Dense {
        layer: &'a DenseLayer,
        id: ParamId,
        x: Var,
    },
    Lstm {
        cell: &'a LstmCell,
        id: ParamId,
        x: Var,
        h: Var,
        c: Var,
        cache: LstmStepCache,
    },
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Abs(Var),
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Sum(Var),
    Norm(Var),
    GaussianNll {
        mean: Var,
        var: Var,
        target: Vec<f64>,
    },
}

struct Node<'a> {
    value: Vec<f64>,
    op: Op<'a>,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    params: HashMap<ParamId, Vec<f64>>,
    inputs: HashMap<Var, Vec<f64>>,
}

impl Gradients {
    /// Gradient of a parameter block, or `None` if the block never took part.
    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.get(&id).map(Vec::as_slice)
    }

    /// Gradient of a differentiable input created with [`Tape::input`].
    pub fn input(&self, var: Var) -> Option<&[f64]> {
        self.inputs.get(&var).map(Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty() && self.inputs.is_empty()
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.params.keys().copied()
    }
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op<'a>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn same_len(&self, context: &'static str, a: Var, b: Var) -> Result<usize> {
        let n = self.value(a).len();
        check_len(context, n, self.value(b).len())?;
        Ok(n)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op<'a>) -> Var {
        let value = self.value(x).iter().map(|&v| f(v)).collect();
        self.push(value, op)
    }

    fn binary(
        &mut self,
        context: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op<'a>,
    ) -> Result<Var> {
        self.same_len(context, a, b)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(value, op))
    }

    /// A leaf whose gradient is reported by [`Tape::backward`].
    pub fn input(&mut self, values: Vec<f64>) -> Var {
        self.push(values, Op::Input)
    }

    /// A leaf that is not differentiated.
    pub fn constant(&mut self, values: Vec<f64>) -> Var {
        self.push(values, Op::Constant)
    }

    pub fn dense(&mut self, layer: &'a DenseLayer, id: ParamId, x: Var) -> Result<Var> {
        let value = layer.apply(self.value(x))?;
        Ok(self.push(value, Op::Dense { layer, id, x }))
    }

    /// One LSTM step; returns the new `(h, c)`.
    pub fn lstm(&mut self, cell: &'a LstmCell, id: ParamId, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let n = cell.hidden();
        check_len("lstm input", cell.input_dim(), self.value(x).len())?;
        check_len("lstm hidden", n, self.value(h).len())?;
        check_len("lstm cell", n, self.value(c).len())?;
        let (next, cache) = cell.step_cached(self.value(x), self.value(h), self.value(c));
        let mut joint = next.h;
        joint.extend_from_slice(&next.c);
        let out = self.push(
            joint,
            Op::Lstm {
                cell,
                id,
                x,
                h,
                c,
                cache,
            },
        );
        Ok((self.slice(out, 0, n)?, self.slice(out, n, n)?))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, crate::nn::layers::sigmoid, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp { x, lo, hi })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.unary(x, |v| v * k, Op::Scale(x, k))
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Var {
        self.unary(x, |v| v + k, Op::AddScalar(x))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let value = parts.iter().flat_map(|&p| self.value(p).iter().copied()).collect();
        self.push(value, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let src = self.value(x);
        if start + len > src.len() {
            return Err(Error::Shape {
                context: "slice",
                expected: start + len,
                found: src.len(),
            });
        }
        let value = src[start..start + len].to_vec();
        Ok(self.push(value, Op::Slice { x, start }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).iter().sum();
        self.push(vec![total], Op::Sum(x))
    }

    /// Euclidean norm. The gradient at the origin is taken as zero.
    pub fn norm(&mut self, x: Var) -> Var {
        let n = self.value(x).iter().map(|v| v * v).sum::<f64>().sqrt();
        self.push(vec![n], Op::Norm(x))
    }

    /// Negative log density of `target` under independent Gaussians, summed over dimensions.
    pub fn gaussian_nll(&mut self, mean: Var, var: Var, target: &[f64]) -> Result<Var> {
        let n = self.same_len("gaussian nll", mean, var)?;
        check_len("gaussian nll target", n, target.len())?;
        let total = self
            .value(mean)
            .iter()
            .zip(self.value(var))
            .zip(target)
            .map(|((&m, &v), &t)| nll_term(m, v, t))
            .sum();
        Ok(self.push(
            vec![total],
            Op::GaussianNll {
                mean,
                var,
                target: target.to_vec(),
            },
        ))
    }

    /// Backpropagates from the most recently recorded node. An empty tape yields empty gradients.
    pub fn backward_from_last(&self, seed: &[f64]) -> Result<Gradients> {
        match self.nodes.len() {
            0 => Ok(Gradients::default()),
            n => self.backward(Var(n - 1), seed),
        }
    }

    /// Backpropagates `seed` (the adjoint of `output`) through every node recorded up to `output`.
    pub fn backward(&self, output: Var, seed: &[f64]) -> Result<Gradients> {
        check_len("backward seed", self.value(output).len(), seed.len())?;
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        adj[output.0] = Some(seed.to_vec());
        let mut grads = Gradients::default();

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if let Op::Input = node.op {
                let g = adj[idx].take().unwrap_or_else(|| vec![0.0; node.value.len()]);
                grads.inputs.insert(Var(idx), g);
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            let y = &node.value;
            match &node.op {
                Op::Input | Op::Constant => {}
                Op::Dense { layer, id, x } => {
                    let xv = self.value(*x);
                    let (n_in, n_out) = (layer.input_dim(), layer.output_dim());
                    let pg = grads
                        .params
                        .entry(*id)
                        .or_insert_with(|| vec![0.0; layer.param_count()]);
                    let mut dx = vec![0.0; n_in];
                    let w = layer.weights();
                    for i in 0..n_out {
                        let gi = g[i];
                        if gi == 0.0 {
                            continue;
                        }
                        let row = &w[i * n_in..(i + 1) * n_in];
                        let prow = &mut pg[i * n_in..(i + 1) * n_in];
                        for j in 0..n_in {
                            prow[j] += gi * xv[j];
                            dx[j] += row[j] * gi;
                        }
                        pg[n_in * n_out + i] += gi;
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::Lstm {
                    cell,
                    id,
                    x,
                    h,
                    c,
                    cache,
                } => {
                    let n = cell.hidden();
                    let n_in = cell.input_dim();
                    let cols = n_in + n;
                    let (xv, hv, cv) = (self.value(*x), self.value(*h), self.value(*c));
                    let gates = &cache.gates;
                    let mut dz = vec![0.0; 4 * n];
                    let mut dc_prev = vec![0.0; n];
                    for j in 0..n {
                        let (i, f, o, gg) = (gates[j], gates[n + j], gates[2 * n + j], gates[3 * n + j]);
                        let tc = cache.tanh_c[j];
                        let dh = g[j];
                        let dc = g[n + j] + dh * o * (1.0 - tc * tc);
                        dz[j] = dc * gg * i * (1.0 - i);
                        dz[n + j] = dc * cv[j] * f * (1.0 - f);
                        dz[2 * n + j] = dh * tc * o * (1.0 - o);
                        dz[3 * n + j] = dc * i * (1.0 - gg * gg);
                        dc_prev[j] = dc * f;
                    }
                    let pg = grads.params.entry(*id).or_insert_with(|| vec![0.0; cell.param_count()]);
                    let w = cell.weights();
                    let mut dxh = vec![0.0; cols];
                    for (r, &dzr) in dz.iter().enumerate() {
                        if dzr == 0.0 {
                            continue;
                        }
                        let row = &w[r * cols..(r + 1) * cols];
                        let prow = &mut pg[r * cols..(r + 1) * cols];
                        for k in 0..n_in {
                            prow[k] += dzr * xv[k];
                        }
                        for k in 0..n {
                            prow[n_in + k] += dzr * hv[k];
                        }
                        for k in 0..cols {
                            dxh[k] += row[k] * dzr;
                        }
                        pg[4 * n * cols + r] += dzr;
                    }
                    let dh_prev = dxh.split_off(n_in);
                    accumulate(&mut adj, *x, dxh);
                    accumulate(&mut adj, *h, dh_prev);
                    accumulate(&mut adj, *c, dc_prev);
                }
                Op::Tanh(x) => {
                    let d = g.iter().zip(y).map(|(gi, yi)| gi * (1.0 - yi * yi)).collect();
                    accumulate(&mut adj, *x, d);
                }
                Op::Sigmoid(x) => {
                    let d = g.iter().zip(y).map(|(gi, yi)| gi * yi * (1.0 - yi)).collect();
                    accumulate(&mut adj, *x, d);
                }
                Op::Exp(x) => {
                    let d = g.iter().zip(y).map(|(gi, yi)| gi * yi).collect();
                    accumulate(&mut adj, *x, d);
                }
                Op::Abs(x) => {
                    let d = g
                        .iter()
                        .zip(self.value(*x))
                        .map(|(gi, xi)| if *xi == 0.0 { 0.0 } else { gi * xi.signum() })
                        .collect();
                    accumulate(&mut adj, *x, d);
                }
                Op::Clamp { x, lo, hi } => {
                    let d = g
                        .iter()
                        .zip(self.value(*x))
                        .map(|(gi, xi)| if xi < lo || xi > hi { 0.0 } else { *gi })
                        .collect();
                    accumulate(&mut adj, *x, d);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, g.iter().map(|v| -v).collect());
                    accumulate(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da = g.iter().zip(bv).map(|(gi, bi)| gi * bi).collect();
                    let db = g.iter().zip(av).map(|(gi, ai)| gi * ai).collect();
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Div(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da = g.iter().zip(bv).map(|(gi, bi)| gi / bi).collect();
                    let db = g
                        .iter()
                        .zip(av.iter().zip(bv))
                        .map(|(gi, (ai, bi))| -gi * ai / (bi * bi))
                        .collect();
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Scale(x, k) => {
                    accumulate(&mut adj, *x, g.iter().map(|v| v * k).collect());
                }
                Op::AddScalar(x) => accumulate(&mut adj, *x, g),
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        accumulate(&mut adj, p, g[offset..offset + len].to_vec());
                        offset += len;
                    }
                }
                Op::Slice { x, start } => {
                    let mut d = vec![0.0; self.value(*x).len()];
                    d[*start..*start + g.len()].copy_from_slice(&g);
                    accumulate(&mut adj, *x, d);
                }
                Op::Sum(x) => {
                    let len = self.value(*x).len();
                    accumulate(&mut adj, *x, vec![g[0]; len]);
                }
                Op::Norm(x) => {
                    let norm = y[0];
                    let d = if norm > 0.0 {
                        self.value(*x).iter().map(|xi| g[0] * xi / norm).collect()
                    } else {
                        vec![0.0; self.value(*x).len()]
                    };
                    accumulate(&mut adj, *x, d);
                }
                Op::GaussianNll { mean, var, target } => {
                    let (mv, vv) = (self.value(*mean), self.value(*var));
                    let mut dm = Vec::with_capacity(mv.len());
                    let mut dv = Vec::with_capacity(mv.len());
                    for ((&m, &v), &t) in mv.iter().zip(vv).zip(target) {
                        let r = m - t;
                        dm.push(g[0] * r / v);
                        dv.push(g[0] * (0.5 / v - r * r / (2.0 * v * v)));
                    }
                    accumulate(&mut adj, *mean, dm);
                    accumulate(&mut adj, *var, dv);
                }
            }
        }
        Ok(grads)
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], var: Var, grad: Vec<f64>) {
    match &mut adj[var.0] {
        Some(existing) => existing.iter_mut().zip(grad).for_each(|(e, g)| *e += g),
        slot @ None => *slot = Some(grad),
    }
}

pub(crate) fn nll_term(mean: f64, var: f64, target: f64) -> f64 {
    let r = mean - target;
    0.5 * (2.0 * std::f64::consts::PI * var).ln() + r * r / (2.0 * var)
}
