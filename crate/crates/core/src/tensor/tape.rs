use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::Tensor;
use crate::error::{Error, Result};

/// Probabilities are clamped into `[BCE_EPS, 1 - BCE_EPS]` before the log.
pub const BCE_EPS: f64 = 1e-7;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Bce { p: Var, targets: Vec<f64> },
    ConcatCols(Var, Var),
    Embedding { table: Var, ids: Vec<usize> },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Record of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` for nodes that do not require gradients or were unreachable.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Copies a tensor onto the tape; it is differentiable iff the tensor
    /// has `requires_grad` set.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.clone()).expect("tape node shapes are valid")
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::Contract(format!("expected a matrix, got shape {other:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a)?;
        let (k2, n) = self.dims2(b)?;
        if k != k2 {
            return Err(Error::dim("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(m, k, n, self.value(a), self.value(b), &mut out, 0.0);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), rg))
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2(x)?;
        if self.value(bias).len() != n {
            return Err(Error::dim("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_exact_mut(n) {
            row.iter_mut().zip(b).for_each(|(o, bi)| *o += bi);
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(vec![m, n], out, Op::AddBias(x, bias), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("add", self.shape(a), self.shape(b)));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let out = self.value(x).iter().map(|v| v * k).collect();
        let rg = self.rg(x);
        self.push(self.shape(x).to_vec(), out, Op::Scale(x, k), rg)
    }

    /// Elementwise `max(x, slope·x)`; `slope` must lie in (0, 1).
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        assert!(slope > 0.0 && slope < 1.0, "leaky_relu slope {slope} outside (0,1)");
        let out = self.value(x).iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
        let rg = self.rg(x);
        self.push(self.shape(x).to_vec(), out, Op::LeakyRelu(x, slope), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|v| v.tanh()).collect();
        let rg = self.rg(x);
        self.push(self.shape(x).to_vec(), out, Op::Tanh(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| stable_sigmoid(v)).collect();
        let rg = self.rg(x);
        self.push(self.shape(x).to_vec(), out, Op::Sigmoid(x), rg)
    }

    /// Mean binary cross-entropy of probabilities `p` against `targets`.
    pub fn bce(&mut self, p: Var, targets: &Tensor) -> Result<Var> {
        if self.shape(p) != targets.shape() {
            return Err(Error::dim("bce", self.shape(p), targets.shape()));
        }
        let n = targets.len() as f64;
        let loss = -self
            .value(p)
            .iter()
            .zip(targets.data())
            .map(|(&pi, &yi)| {
                let pc = pi.clamp(BCE_EPS, 1.0 - BCE_EPS);
                yi * pc.ln() + (1.0 - yi) * (1.0 - pc).ln()
            })
            .sum::<f64>()
            / n;
        let rg = self.rg(p);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::Bce {
                p,
                targets: targets.data().to_vec(),
            },
            rg,
        ))
    }

    /// `[a | b]` for matrices with equal row counts.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ca) = self.dims2(a)?;
        let (m2, cb) = self.dims2(b)?;
        if m != m2 {
            return Err(Error::dim("concat_cols", self.shape(a), self.shape(b)));
        }
        let mut out = Vec::with_capacity(m * (ca + cb));
        for i in 0..m {
            out.extend_from_slice(&self.value(a)[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&self.value(b)[i * cb..(i + 1) * cb]);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, ca + cb], out, Op::ConcatCols(a, b), rg))
    }

    /// Gathers rows of `table` (`classes × width`) for each id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (classes, width) = self.dims2(table)?;
        if ids.is_empty() {
            return Err(Error::Contract("embedding lookup with no ids".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= classes) {
            return Err(Error::Contract(format!(
                "class id {bad} out of range for {classes} classes"
            )));
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * width);
        for &i in ids {
            out.extend_from_slice(&tv[i * width..(i + 1) * width]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            vec![ids.len(), width],
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let rg = self.rg(x);
        self.push(vec![1], vec![s], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(x);
        self.push(vec![1], vec![s], Op::Mean(x), rg)
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes;
        let root = nodes
            .get(loss.0)
            .ok_or_else(|| Error::Contract("loss is not a node of this tape".into()))?;
        if root.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        if !root.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);

        fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut [f64] {
            grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()])
        }

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    let n = nodes[b.0].shape[1];
                    if nodes[a.0].requires_grad {
                        let bv = &nodes[b.0].value;
                        gemm_nt(m, n, k, &g, bv, slot(&mut grads, &nodes, *a), 1.0);
                    }
                    if nodes[b.0].requires_grad {
                        let av = &nodes[a.0].value;
                        gemm_tn(k, m, n, av, &g, slot(&mut grads, &nodes, *b), 1.0);
                    }
                }
                Op::AddBias(x, b) => {
                    if nodes[x.0].requires_grad {
                        add_into(slot(&mut grads, &nodes, *x), &g);
                    }
                    if nodes[b.0].requires_grad {
                        let width = nodes[b.0].value.len();
                        let gb = slot(&mut grads, &nodes, *b);
                        for row in g.chunks_exact(width) {
                            add_into(gb, row);
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [a, b] {
                        if nodes[v.0].requires_grad {
                            add_into(slot(&mut grads, &nodes, *v), &g);
                        }
                    }
                }
                Op::Scale(x, k) => {
                    let gx = slot(&mut grads, &nodes, *x);
                    gx.iter_mut().zip(&g).for_each(|(a, b)| *a += k * b);
                }
                Op::LeakyRelu(x, slope) => {
                    let xv = &nodes[x.0].value;
                    let gx = slot(&mut grads, &nodes, *x);
                    for ((a, &gi), &xi) in gx.iter_mut().zip(&g).zip(xv) {
                        *a += if xi > 0.0 { gi } else { slope * gi };
                    }
                }
                Op::Tanh(x) => {
                    let gx = slot(&mut grads, &nodes, *x);
                    for ((a, &gi), &yi) in gx.iter_mut().zip(&g).zip(&node.value) {
                        *a += gi * (1.0 - yi * yi);
                    }
                }
                Op::Sigmoid(x) => {
                    let gx = slot(&mut grads, &nodes, *x);
                    for ((a, &gi), &yi) in gx.iter_mut().zip(&g).zip(&node.value) {
                        *a += gi * yi * (1.0 - yi);
                    }
                }
                Op::Bce { p, targets } => {
                    // Derivative of the log terms evaluated at the clamped
                    // probability, so saturated outputs still pass a signal.
                    let pv = &nodes[p.0].value;
                    let scale = g[0] / targets.len() as f64;
                    let gp = slot(&mut grads, &nodes, *p);
                    for ((a, &pi), &yi) in gp.iter_mut().zip(pv).zip(targets) {
                        let pc = pi.clamp(BCE_EPS, 1.0 - BCE_EPS);
                        *a += scale * (-(yi / pc) + (1.0 - yi) / (1.0 - pc));
                    }
                }
                Op::ConcatCols(a, b) => {
                    let ca = nodes[a.0].shape[1];
                    let cb = nodes[b.0].shape[1];
                    let w = ca + cb;
                    if nodes[a.0].requires_grad {
                        let ga = slot(&mut grads, &nodes, *a);
                        for (dst, src) in ga.chunks_exact_mut(ca).zip(g.chunks_exact(w)) {
                            add_into(dst, &src[..ca]);
                        }
                    }
                    if nodes[b.0].requires_grad {
                        let gb = slot(&mut grads, &nodes, *b);
                        for (dst, src) in gb.chunks_exact_mut(cb).zip(g.chunks_exact(w)) {
                            add_into(dst, &src[ca..]);
                        }
                    }
                }
                Op::Embedding { table, ids } => {
                    let width = nodes[table.0].shape[1];
                    let gt = slot(&mut grads, &nodes, *table);
                    for (row, &id) in g.chunks_exact(width).zip(ids) {
                        add_into(&mut gt[id * width..(id + 1) * width], row);
                    }
                }
                Op::Sum(x) => {
                    let gx = slot(&mut grads, &nodes, *x);
                    gx.iter_mut().for_each(|a| *a += g[0]);
                }
                Op::Mean(x) => {
                    let gx = slot(&mut grads, &nodes, *x);
                    let s = g[0] / gx.len() as f64;
                    gx.iter_mut().for_each(|a| *a += s);
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
