//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] is an append-only tape. Every operation evaluates eagerly and
//! appends a node holding its forward value; [`Graph::backward`] walks the
//! tape in reverse and accumulates adjoints. Inputs always precede the nodes
//! that consume them, so the tape order is already topological.
//!
//! Broadcasting is limited to adding a row vector to every row of a matrix.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Largest magnitude accepted by `exp`.
pub const EXP_LIMIT: f64 = 700.0;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation recorded on the tape.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpKind {
    Matmul,
    Add,
    Sub,
    Mul,
    Neg,
    Tanh,
    Exp,
    Log,
    Square,
    /// Sum of all entries, yielding a scalar.
    Sum,
    /// Mean of all entries, yielding a scalar.
    Mean,
    /// `[n, d] + [1, d]`, the row vector added to every row.
    AddRow,
    ConcatRows,
    Clamp { lo: f64, hi: f64 },
    Scale(f64),
    AddScalar(f64),
    /// Per-row sum, `[n, d] -> [n, 1]`.
    RowSum,
    /// `log(1 + exp(x))`.
    Softplus,
}

#[derive(Debug)]
struct Node {
    op: Option<OpKind>,
    inputs: Vec<Var>,
    value: Tensor,
    tracked: bool,
}

/// Tape of recorded operations.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, with zeros for nodes the loss does not reach.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives gradients.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(None, Vec::new(), value, true)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(None, Vec::new(), value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, op: Option<OpKind>, inputs: Vec<Var>, value: Tensor, tracked: bool) -> Var {
        self.nodes.push(Node {
            op,
            inputs,
            value,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    /// Evaluates `op` on `inputs` and records it.
    pub fn apply(&mut self, op: OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = match op {
            OpKind::Matmul | OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::AddRow => 2,
            OpKind::ConcatRows => inputs.len().max(1),
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::InvalidArgument(format!(
                "{op:?} expects {arity} inputs, got {}",
                inputs.len()
            )));
        }
        let value = self.forward(op, inputs)?;
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        Ok(self.push(Some(op), inputs.to_vec(), value, tracked))
    }

    fn forward(&self, op: OpKind, inputs: &[Var]) -> Result<Tensor> {
        let a = &self.nodes[inputs[0].0].value;
        let same_shape = |name: &'static str| -> Result<&Tensor> {
            let b = &self.nodes[inputs[1].0].value;
            if a.shape() != b.shape() {
                return Err(Error::ShapeMismatch {
                    op: name,
                    left: a.shape().to_vec(),
                    right: b.shape().to_vec(),
                });
            }
            Ok(b)
        };
        Ok(match op {
            OpKind::Matmul => gemm(a, false, &self.nodes[inputs[1].0].value, false)?,
            OpKind::Add => a.zip_map(same_shape("add")?, |x, y| x + y),
            OpKind::Sub => a.zip_map(same_shape("sub")?, |x, y| x - y),
            OpKind::Mul => a.zip_map(same_shape("mul")?, |x, y| x * y),
            OpKind::Neg => a.map(|x| -x),
            OpKind::Tanh => a.map(f64::tanh),
            OpKind::Exp => {
                if let Some(x) = a.data().iter().find(|x| x.abs() > EXP_LIMIT || x.is_nan()) {
                    return Err(Error::Domain {
                        op: "exp",
                        detail: format!("argument {x} exceeds ±{EXP_LIMIT}"),
                    });
                }
                a.map(f64::exp)
            }
            OpKind::Log => {
                if let Some(x) = a.data().iter().find(|x| !(**x > 0.0)) {
                    return Err(Error::Domain {
                        op: "log",
                        detail: format!("argument {x} is not strictly positive"),
                    });
                }
                a.map(f64::ln)
            }
            OpKind::Square => a.map(|x| x * x),
            OpKind::Sum => Tensor::scalar(a.sum()),
            OpKind::Mean => {
                if a.is_empty() {
                    return Err(Error::InvalidArgument("mean of empty tensor".into()));
                }
                Tensor::scalar(a.sum() / a.len() as f64)
            }
            OpKind::AddRow => {
                let b = &self.nodes[inputs[1].0].value;
                let (r, c) = a.dims2().ok_or_else(|| shape_err("add_row", a, b))?;
                if b.len() != c || b.rows() != 1 {
                    return Err(shape_err("add_row", a, b));
                }
                let mut data = a.data().to_vec();
                for i in 0..r {
                    for (x, y) in data[i * c..(i + 1) * c].iter_mut().zip(b.data()) {
                        *x += y;
                    }
                }
                Tensor::matrix(r, c, data)?
            }
            OpKind::ConcatRows => {
                let c = a.cols();
                let mut rows = 0;
                let mut data = Vec::new();
                for v in inputs {
                    let t = &self.nodes[v.0].value;
                    if t.dims2().is_none() || t.cols() != c {
                        return Err(shape_err("concat_rows", a, t));
                    }
                    rows += t.rows();
                    data.extend_from_slice(t.data());
                }
                Tensor::matrix(rows, c, data)?
            }
            OpKind::Clamp { lo, hi } => a.map(|x| x.clamp(lo, hi)),
            OpKind::Scale(c) => a.map(|x| c * x),
            OpKind::AddScalar(c) => a.map(|x| x + c),
            OpKind::RowSum => {
                let (r, c) = a.dims2().ok_or_else(|| shape_err("row_sum", a, a))?;
                let data = (0..r)
                    .map(|i| a.data()[i * c..(i + 1) * c].iter().sum())
                    .collect();
                Tensor::matrix(r, 1, data)?
            }
            OpKind::Softplus => a.map(softplus),
        })
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if !root.value.is_scalar() {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        if !root.tracked {
            return Err(Error::UntrackedLoss);
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(root.value.shape(), 1.0));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            let Some(op) = node.op else { continue };
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            for (slot, contrib) in self.local_grads(op, node, &g)? {
                let input = node.inputs[slot];
                if !self.nodes[input.0].tracked {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    empty => *empty = Some(contrib),
                }
            }
            grads[id] = Some(g);
        }

        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    /// Vector-Jacobian products of one node, as `(input slot, adjoint)`.
    fn local_grads(&self, op: OpKind, node: &Node, g: &Tensor) -> Result<Vec<(usize, Tensor)>> {
        let input = |i: usize| &self.nodes[node.inputs[i].0].value;
        let y = &node.value;
        Ok(match op {
            OpKind::Matmul => vec![
                (0, gemm(g, false, input(1), true)?),
                (1, gemm(input(0), true, g, false)?),
            ],
            OpKind::Add => vec![(0, g.clone()), (1, g.clone())],
            OpKind::Sub => vec![(0, g.clone()), (1, g.map(|v| -v))],
            OpKind::Mul => vec![
                (0, g.zip_map(input(1), |g, b| g * b)),
                (1, g.zip_map(input(0), |g, a| g * a)),
            ],
            OpKind::Neg => vec![(0, g.map(|v| -v))],
            OpKind::Tanh => vec![(0, g.zip_map(y, |g, t| g * (1.0 - t * t)))],
            OpKind::Exp => vec![(0, g.zip_map(y, |g, e| g * e))],
            OpKind::Log => vec![(0, g.zip_map(input(0), |g, x| g / x))],
            OpKind::Square => vec![(0, g.zip_map(input(0), |g, x| 2.0 * g * x))],
            OpKind::Sum => vec![(0, Tensor::full(input(0).shape(), g.item()))],
            OpKind::Mean => {
                let x = input(0);
                vec![(0, Tensor::full(x.shape(), g.item() / x.len() as f64))]
            }
            OpKind::AddRow => {
                let b = input(1);
                let c = b.len();
                let mut db = vec![0.0; c];
                for row in g.data().chunks(c) {
                    for (acc, v) in db.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                vec![(0, g.clone()), (1, Tensor::new(b.shape().to_vec(), db)?)]
            }
            OpKind::ConcatRows => {
                let mut out = Vec::with_capacity(node.inputs.len());
                let mut offset = 0;
                for (slot, v) in node.inputs.iter().enumerate() {
                    let t = &self.nodes[v.0].value;
                    let n = t.len();
                    let part = g.data()[offset..offset + n].to_vec();
                    out.push((slot, Tensor::new(t.shape().to_vec(), part)?));
                    offset += n;
                }
                out
            }
            OpKind::Clamp { lo, hi } => vec![(
                0,
                g.zip_map(input(0), |g, x| if x >= lo && x <= hi { g } else { 0.0 }),
            )],
            OpKind::Scale(c) => vec![(0, g.map(|v| c * v))],
            OpKind::AddScalar(_) => vec![(0, g.clone())],
            OpKind::RowSum => {
                let x = input(0);
                let c = x.cols();
                let mut data = Vec::with_capacity(x.len());
                for &gi in g.data() {
                    data.extend(std::iter::repeat_n(gi, c));
                }
                vec![(0, Tensor::new(x.shape().to_vec(), data)?)]
            }
            OpKind::Softplus => vec![(0, g.zip_map(input(0), |g, x| g * sigmoid(x)))],
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Matmul, &[a, b])
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Mul, &[a, b])
    }
    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Neg, &[a])
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Tanh, &[a])
    }
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Exp, &[a])
    }
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Log, &[a])
    }
    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Square, &[a])
    }
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Sum, &[a])
    }
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Mean, &[a])
    }
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.apply(OpKind::AddRow, &[a, row])
    }
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(OpKind::ConcatRows, parts)
    }
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.apply(OpKind::Clamp { lo, hi }, &[a])
    }
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(OpKind::Scale(c), &[a])
    }
    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(OpKind::AddScalar(c), &[a])
    }
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::RowSum, &[a])
    }
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Softplus, &[a])
    }

    /// `x · w + b` for a weight `[in, out]` and bias `[1, out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Compares autodiff gradients of `f` against central differences.
///
/// Returns the max over all parameter entries of
/// `|autodiff - fd| / (|fd| + 1e-8)`.
pub fn check_gradients<F>(f: F, params: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.scalar(loss))
    };

    let mut worst: f64 = 0.0;
    let mut work = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        for j in 0..params[pi].len() {
            let orig = params[pi].data()[j];
            work[pi].data_mut()[j] = orig + step;
            let up = eval(&work)?;
            work[pi].data_mut()[j] = orig - step;
            let down = eval(&work)?;
            work[pi].data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * step);
            let err = (analytic.data()[j] - fd).abs() / (fd.abs() + 1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
