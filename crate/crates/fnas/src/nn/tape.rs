//! Reverse-mode differentiation on a flat tape.
//!
//! A loss is expressed as a closure that builds nodes on a [`Tape`] from
//! parameter leaves, returning the scalar loss node. [`grad`] runs the closure,
//! walks the tape backwards, and returns dLoss/dparams in the same layout as
//! the parameters. Node values are computed eagerly through the shared kernels
//! in [`super::kernels`], so a tape forward pass is bit-identical to the plain
//! forward pass used where no gradient is needed.

use crate::error::{Error, Result};
use crate::nn::kernels;
use crate::nn::params::Params;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScaleConst(Var, f64),
    /// scalar (length-1) node times vector node
    ScaleVar { scalar: Var, vec: Var },
    MatVec { m: Var, x: Var, rows: usize, cols: usize },
    GatherRow { m: Var, row: usize, cols: usize },
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Exp(Var),
    Abs(Var),
    Prelu { x: Var, slope: Var },
    Slice { x: Var, start: usize },
    LogSoftmax(Var),
    Index { x: Var, at: usize },
    MinElem(Var, Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    SumList(Vec<Var>),
    SumElems(Var),
}

struct Node {
    value: Vec<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len_of(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        debug_assert_eq!(self.len_of(v), 1);
        self.nodes[v.0].value[0]
    }

    pub fn leaf(&mut self, values: &[f64]) -> Var {
        self.push(values.to_vec(), Op::Leaf)
    }

    pub fn constant(&mut self, values: &[f64]) -> Var {
        self.push(values.to_vec(), Op::Constant)
    }

    pub fn scalar_const(&mut self, v: f64) -> Var {
        self.push(vec![v], Op::Constant)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.len_of(a), self.len_of(b), "add: length mismatch");
        let value: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.len_of(a), self.len_of(b), "sub: length mismatch");
        let value: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x - y)
            .collect();
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.len_of(a), self.len_of(b), "mul: length mismatch");
        let value: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .collect();
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale_const(&mut self, a: Var, k: f64) -> Var {
        let value: Vec<f64> = self.nodes[a.0].value.iter().map(|x| k * x).collect();
        self.push(value, Op::ScaleConst(a, k))
    }

    pub fn scale_var(&mut self, scalar: Var, vec: Var) -> Var {
        assert_eq!(self.len_of(scalar), 1, "scale_var: scalar must be length 1");
        let s = self.nodes[scalar.0].value[0];
        let value: Vec<f64> = self.nodes[vec.0].value.iter().map(|x| s * x).collect();
        self.push(value, Op::ScaleVar { scalar, vec })
    }

    pub fn matvec(&mut self, m: Var, x: Var, rows: usize, cols: usize) -> Var {
        assert_eq!(self.len_of(m), rows * cols, "matvec: matrix length mismatch");
        assert_eq!(self.len_of(x), cols, "matvec: input length mismatch");
        let mut value = vec![0.0; rows];
        kernels::matvec_into(&self.nodes[m.0].value, &self.nodes[x.0].value, rows, cols, &mut value);
        self.push(value, Op::MatVec { m, x, rows, cols })
    }

    pub fn gather_row(&mut self, m: Var, row: usize, cols: usize) -> Var {
        assert!(row * cols + cols <= self.len_of(m), "gather_row: out of range");
        let value = self.nodes[m.0].value[row * cols..(row + 1) * cols].to_vec();
        self.push(value, Op::GatherRow { m, row, cols })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value: Vec<f64> = self.nodes[a.0].value.iter().map(|&x| kernels::sigmoid(x)).collect();
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value: Vec<f64> = self.nodes[a.0].value.iter().map(|&x| x.tanh()).collect();
        self.push(value, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value: Vec<f64> = self.nodes[a.0].value.iter().map(|&x| kernels::softplus(x)).collect();
        self.push(value, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value: Vec<f64> = self.nodes[a.0].value.iter().map(|&x| x.exp()).collect();
        self.push(value, Op::Exp(a))
    }

    /// |x| with subgradient 0 at exactly x = 0.
    pub fn abs(&mut self, a: Var) -> Var {
        let value: Vec<f64> = self.nodes[a.0].value.iter().map(|&x| x.abs()).collect();
        self.push(value, Op::Abs(a))
    }

    pub fn prelu(&mut self, x: Var, slope: Var) -> Var {
        assert_eq!(self.len_of(slope), 1, "prelu: slope must be length 1");
        let s = self.nodes[slope.0].value[0];
        let value: Vec<f64> = self.nodes[x.0].value.iter().map(|&v| kernels::prelu(v, s)).collect();
        self.push(value, Op::Prelu { x, slope })
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        assert!(start + len <= self.len_of(x), "slice: out of range");
        let value = self.nodes[x.0].value[start..start + len].to_vec();
        self.push(value, Op::Slice { x, start })
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let mut value = vec![0.0; self.len_of(a)];
        kernels::log_softmax_into(&self.nodes[a.0].value, &mut value);
        self.push(value, Op::LogSoftmax(a))
    }

    /// Picks one element as a length-1 node.
    pub fn index(&mut self, x: Var, at: usize) -> Var {
        assert!(at < self.len_of(x), "index: out of range");
        let value = vec![self.nodes[x.0].value[at]];
        self.push(value, Op::Index { x, at })
    }

    pub fn min_elem(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.len_of(a), self.len_of(b), "min_elem: length mismatch");
        let value: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x.min(*y))
            .collect();
        self.push(value, Op::MinElem(a, b))
    }

    /// Clamp to [lo, hi]; gradient passes only strictly inside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let value: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v.clamp(lo, hi)).collect();
        self.push(value, Op::Clamp { x, lo, hi })
    }

    /// Sum of length-1 nodes, accumulated in list order.
    pub fn sum_list(&mut self, terms: &[Var]) -> Var {
        let mut acc = 0.0;
        for t in terms {
            debug_assert_eq!(self.len_of(*t), 1, "sum_list: terms must be scalars");
            acc += self.nodes[t.0].value[0];
        }
        self.push(vec![acc], Op::SumList(terms.to_vec()))
    }

    pub fn sum_elems(&mut self, x: Var) -> Var {
        let acc: f64 = self.nodes[x.0].value.iter().sum();
        self.push(vec![acc], Op::SumElems(x))
    }

    /// dot(a, b) as mul + sum.
    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let prod = self.mul(a, b);
        self.sum_elems(prod)
    }

    /// Gradients of `loss` (a length-1 node) with respect to every node.
    pub fn backward(&self, loss: Var) -> Vec<Vec<f64>> {
        assert_eq!(self.len_of(loss), 1, "backward: loss must be a scalar node");
        let mut grads: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
        grads[loss.0][0] = 1.0;

        for i in (0..self.nodes.len()).rev() {
            if grads[i].iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = std::mem::take(&mut grads[i]);
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf | Op::Constant => {
                    grads[i] = g;
                    continue;
                }
                Op::Add(a, b) => {
                    for (k, gv) in g.iter().enumerate() {
                        grads[a.0][k] += gv;
                        grads[b.0][k] += gv;
                    }
                }
                Op::Sub(a, b) => {
                    for (k, gv) in g.iter().enumerate() {
                        grads[a.0][k] += gv;
                        grads[b.0][k] -= gv;
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    for (k, gv) in g.iter().enumerate() {
                        grads[a.0][k] += gv * bv[k];
                        grads[b.0][k] += gv * av[k];
                    }
                }
                Op::ScaleConst(a, k) => {
                    for (j, gv) in g.iter().enumerate() {
                        grads[a.0][j] += k * gv;
                    }
                }
                Op::ScaleVar { scalar, vec } => {
                    let s = self.nodes[scalar.0].value[0];
                    let xv = &self.nodes[vec.0].value;
                    let mut ds = 0.0;
                    for (k, gv) in g.iter().enumerate() {
                        grads[vec.0][k] += s * gv;
                        ds += gv * xv[k];
                    }
                    grads[scalar.0][0] += ds;
                }
                Op::MatVec { m, x, rows, cols } => {
                    let mv = &self.nodes[m.0].value;
                    let xv = &self.nodes[x.0].value;
                    for r in 0..*rows {
                        let gr = g[r];
                        if gr == 0.0 {
                            continue;
                        }
                        let row = r * cols;
                        for c in 0..*cols {
                            grads[m.0][row + c] += gr * xv[c];
                            grads[x.0][c] += gr * mv[row + c];
                        }
                    }
                }
                Op::GatherRow { m, row, cols } => {
                    let base = row * cols;
                    for (k, gv) in g.iter().enumerate() {
                        grads[m.0][base + k] += gv;
                    }
                }
                Op::Sigmoid(a) => {
                    for (k, gv) in g.iter().enumerate() {
                        let y = node.value[k];
                        grads[a.0][k] += gv * kernels::sigmoid_grad_from_output(y);
                    }
                }
                Op::Tanh(a) => {
                    for (k, gv) in g.iter().enumerate() {
                        let y = node.value[k];
                        grads[a.0][k] += gv * kernels::tanh_grad_from_output(y);
                    }
                }
                Op::Softplus(a) => {
                    let xv = &self.nodes[a.0].value;
                    for (k, gv) in g.iter().enumerate() {
                        grads[a.0][k] += gv * kernels::softplus_grad(xv[k]);
                    }
                }
                Op::Exp(a) => {
                    for (k, gv) in g.iter().enumerate() {
                        grads[a.0][k] += gv * node.value[k];
                    }
                }
                Op::Abs(a) => {
                    let xv = &self.nodes[a.0].value;
                    for (k, gv) in g.iter().enumerate() {
                        let s = if xv[k] > 0.0 {
                            1.0
                        } else if xv[k] < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        grads[a.0][k] += gv * s;
                    }
                }
                Op::Prelu { x, slope } => {
                    let xv = &self.nodes[x.0].value;
                    let s = self.nodes[slope.0].value[0];
                    let mut dslope = 0.0;
                    for (k, gv) in g.iter().enumerate() {
                        if xv[k] > 0.0 {
                            grads[x.0][k] += gv;
                        } else {
                            grads[x.0][k] += gv * s;
                            dslope += gv * xv[k];
                        }
                    }
                    grads[slope.0][0] += dslope;
                }
                Op::Slice { x, start } => {
                    for (k, gv) in g.iter().enumerate() {
                        grads[x.0][start + k] += gv;
                    }
                }
                Op::LogSoftmax(a) => {
                    let gsum: f64 = g.iter().sum();
                    for (k, gv) in g.iter().enumerate() {
                        let p = node.value[k].exp();
                        grads[a.0][k] += gv - p * gsum;
                    }
                }
                Op::Index { x, at } => {
                    grads[x.0][*at] += g[0];
                }
                Op::MinElem(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    for (k, gv) in g.iter().enumerate() {
                        if av[k] <= bv[k] {
                            grads[a.0][k] += gv;
                        } else {
                            grads[b.0][k] += gv;
                        }
                    }
                }
                Op::Clamp { x, lo, hi } => {
                    let xv = &self.nodes[x.0].value;
                    for (k, gv) in g.iter().enumerate() {
                        if xv[k] > *lo && xv[k] < *hi {
                            grads[x.0][k] += gv;
                        }
                    }
                }
                Op::SumList(terms) => {
                    for t in terms {
                        grads[t.0][0] += g[0];
                    }
                }
                Op::SumElems(x) => {
                    for gx in grads[x.0].iter_mut() {
                        *gx += g[0];
                    }
                }
            }
            grads[i] = g;
        }
        grads
    }
}

/// Parameter leaves: one tape node per layout segment, addressable by name.
pub struct ParamLeaves {
    names: Vec<String>,
    vars: Vec<Var>,
}

impl ParamLeaves {
    pub fn get(&self, name: &str) -> Var {
        match self.names.iter().position(|n| n == name) {
            Some(i) => self.vars[i],
            None => panic!("no parameter segment named `{name}`"),
        }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Creates a tape seeded with one leaf per parameter segment.
pub fn tape_over(params: &Params) -> (Tape, ParamLeaves) {
    let mut tape = Tape::new();
    let mut names = Vec::new();
    let mut vars = Vec::new();
    for seg in params.layout.segments() {
        names.push(seg.name.clone());
        vars.push(tape.leaf(&params.data[seg.offset..seg.offset + seg.len()]));
    }
    (tape, ParamLeaves { names, vars })
}

/// Evaluates `f` at `params` and returns (loss, dLoss/dparams).
///
/// Errors if the loss or any gradient entry is non-finite; the error names the
/// offending segment.
pub fn value_and_grad<F>(params: &Params, f: F) -> Result<(f64, Params)>
where
    F: Fn(&mut Tape, &ParamLeaves) -> Result<Var>,
{
    let (mut tape, leaves) = tape_over(params);
    let loss = f(&mut tape, &leaves)?;
    let loss_value = tape.scalar_value(loss);
    if !loss_value.is_finite() {
        return Err(Error::Numeric { context: "loss".to_string() });
    }
    let grads = tape.backward(loss);
    let mut out = Params::zeros(params.layout.clone());
    for (seg, var) in params.layout.segments().iter().zip(leaves.vars()) {
        let g = &grads[var.raw()];
        out.data[seg.offset..seg.offset + seg.len()].copy_from_slice(g);
    }
    out.check_finite("grad")?;
    Ok((loss_value, out))
}

/// dLoss/dparams of a scalar loss expressed over parameter leaves.
pub fn grad<F>(params: &Params, f: F) -> Result<Params>
where
    F: Fn(&mut Tape, &ParamLeaves) -> Result<Var>,
{
    value_and_grad(params, f).map(|(_, g)| g)
}

/// Evaluates the loss closure without keeping gradients.
pub fn eval_loss<F>(params: &Params, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamLeaves) -> Result<Var>,
{
    let (mut tape, leaves) = tape_over(params);
    let loss = f(&mut tape, &leaves)?;
    Ok(tape.scalar_value(loss))
}

// Var's inner index is private; value_and_grad needs it for leaf lookup.
impl Var {
    pub(crate) fn raw(self) -> usize {
        self.0
    }
}
