//! Reverse-mode differentiation over the small operation set the ridge-head
//! forward pass needs.
//!
//! The tape records primitive ops eagerly: building a node computes its
//! forward value immediately, and `backward` walks the nodes in reverse,
//! accumulating adjoints. The one non-obvious adjoint is the SPD solve
//! X = M^-1 B, which reuses the forward factorization:
//!
//!   B_bar = M^-1 X_bar
//!   M_bar = -sym(B_bar X')
//!
//! Leaves are either constants (data, noise, permuted labels -- baked into
//! the tape, no gradient) or parameters.

use crate::error::{Error, Result};
use crate::matrix::{spd_factor, CholeskyFactor, Matrix, Real};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Const,
    Param,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// matrix (n x m) plus a bias row (1 x m) broadcast over rows
    AddRowBroadcast(NodeId, NodeId),
    /// A'A of the input
    Gram(NodeId),
    /// A'B without materializing A'
    MatTMul(NodeId, NodeId),
    Relu(NodeId),
    SpdSolve {
        m: NodeId,
        b: NodeId,
        factor: CholeskyFactor,
    },
    /// square matrix plus scalar * identity
    AddDiagScalar(NodeId, NodeId),
    Exp(NodeId),
    Log(NodeId),
    Sigmoid(NodeId),
    Square(NodeId),
    Sqrt(NodeId),
    Abs(NodeId),
    /// mean over all entries -> 1x1
    Mean(NodeId),
    /// multiply by a compile-time constant
    Scale(NodeId, Real),
    Cols {
        input: NodeId,
        start: usize,
        len: usize,
    },
    /// stable binary cross-entropy of logits against a constant 0/1 target
    BceWithLogits {
        logits: NodeId,
        target: Matrix,
    },
}

struct Node {
    op: Op,
    value: Matrix,
    needs_grad: bool,
}

/// Records one forward pass; rebuilt every training iteration so fresh noise
/// and dithered labels enter as new constants.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

pub fn sigmoid(z: Real) -> Real {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One stable BCE-with-logits term: max(z,0) - t*z + ln(1 + e^-|z|).
pub fn bce_term(target: Real, logit: Real) -> Real {
    logit.max(0.0) - target * logit + (-logit.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Matrix, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn constant(&mut self, m: Matrix) -> NodeId {
        self.push(Op::Const, m, false)
    }

    pub fn scalar_const(&mut self, v: Real) -> NodeId {
        self.constant(Matrix::scalar(v))
    }

    pub fn param(&mut self, m: Matrix) -> NodeId {
        self.push(Op::Param, m, true)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        let g = self.needs(a) || self.needs(b);
        self.push(Op::MatMul(a, b), v, g)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        let g = self.needs(a);
        self.push(Op::Transpose(a), v, g)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).add(self.value(b));
        let g = self.needs(a) || self.needs(b);
        self.push(Op::Add(a, b), v, g)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).sub(self.value(b));
        let g = self.needs(a) || self.needs(b);
        self.push(Op::Sub(a, b), v, g)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).hadamard(self.value(b));
        let g = self.needs(a) || self.needs(b);
        self.push(Op::Mul(a, b), v, g)
    }

    pub fn add_row_broadcast(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(bias));
        assert_eq!(bv.rows(), 1, "bias must be a 1 x m row");
        assert_eq!(av.cols(), bv.cols(), "bias width mismatch");
        let mut v = av.clone();
        for i in 0..v.rows() {
            for j in 0..v.cols() {
                let x = v.get(i, j) + bv.get(0, j);
                v.set(i, j, x);
            }
        }
        let g = self.needs(a) || self.needs(bias);
        self.push(Op::AddRowBroadcast(a, bias), v, g)
    }

    /// G = A'A, one symmetric product instead of transpose plus matmul.
    pub fn gram(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).gram();
        let g = self.needs(a);
        self.push(Op::Gram(a), v, g)
    }

    /// U = A'B.
    pub fn mat_t_mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).tr_matmul(self.value(b));
        let g = self.needs(a) || self.needs(b);
        self.push(Op::MatTMul(a, b), v, g)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let g = self.needs(a);
        self.push(Op::Relu(a), v, g)
    }

    /// X = M^-1 B for symmetric positive-definite M. The factorization is
    /// cached on the node and reused by the adjoint.
    pub fn spd_solve(&mut self, m: NodeId, b: NodeId) -> Result<NodeId> {
        let factor = spd_factor(self.value(m))?;
        let v = factor.solve(self.value(b));
        let g = self.needs(m) || self.needs(b);
        Ok(self.push(Op::SpdSolve { m, b, factor }, v, g))
    }

    pub fn add_diag_scalar(&mut self, m: NodeId, s: NodeId) -> NodeId {
        let sv = self.value(s).as_scalar();
        let mv = self.value(m);
        assert_eq!(mv.rows(), mv.cols(), "add_diag_scalar needs square input");
        let mut v = mv.clone();
        for i in 0..v.rows() {
            let x = v.get(i, i) + sv;
            v.set(i, i, x);
        }
        let g = self.needs(m) || self.needs(s);
        self.push(Op::AddDiagScalar(m, s), v, g)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(Real::exp);
        let g = self.needs(a);
        self.push(Op::Exp(a), v, g)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(Real::ln);
        let g = self.needs(a);
        self.push(Op::Log(a), v, g)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        let g = self.needs(a);
        self.push(Op::Sigmoid(a), v, g)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x * x);
        let g = self.needs(a);
        self.push(Op::Square(a), v, g)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(Real::sqrt);
        let g = self.needs(a);
        self.push(Op::Sqrt(a), v, g)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(Real::abs);
        let g = self.needs(a);
        self.push(Op::Abs(a), v, g)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let n = (av.rows() * av.cols()) as Real;
        let v = Matrix::scalar(av.data().iter().sum::<Real>() / n);
        let g = self.needs(a);
        self.push(Op::Mean(a), v, g)
    }

    pub fn scale(&mut self, a: NodeId, k: Real) -> NodeId {
        let v = self.value(a).scale(k);
        let g = self.needs(a);
        self.push(Op::Scale(a, k), v, g)
    }

    pub fn cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(a).col_slice(start, len);
        let g = self.needs(a);
        self.push(Op::Cols { input: a, start, len }, v, g)
    }

    /// Mean stable BCE of `logits` against a constant target in {0,1}.
    pub fn bce_with_logits(&mut self, target: Matrix, logits: NodeId) -> NodeId {
        let z = self.value(logits);
        assert_eq!(z.shape(), target.shape(), "bce target shape mismatch");
        let n = (z.rows() * z.cols()) as Real;
        let total: Real = z
            .data()
            .iter()
            .zip(target.data().iter())
            .map(|(&zi, &ti)| bce_term(ti, zi))
            .sum();
        let v = Matrix::scalar(total / n);
        let g = self.needs(logits);
        self.push(Op::BceWithLogits { logits, target }, v, g)
    }

    /// RMSE(a; b) = sqrt(mean((a-b)^2)), composed from primitives.
    pub fn rmse(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let d = self.sub(a, b);
        let sq = self.square(d);
        let m = self.mean(sq);
        self.sqrt(m)
    }

    /// The cached factorization of an SPD-solve node, reusable for extra
    /// right-hand sides against the same matrix.
    pub fn solve_factor(&self, id: NodeId) -> Option<&CholeskyFactor> {
        match &self.nodes[id.0].op {
            Op::SpdSolve { factor, .. } => Some(factor),
            _ => None,
        }
    }

    /// Reverse-mode gradients of the scalar `root` with respect to every
    /// node that transitively depends on a parameter.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let rv = self.value(root);
        if !rv.is_scalar() {
            return Err(Error::NonScalarRoot {
                rows: rv.rows(),
                cols: rv.cols(),
            });
        }
        let mut adj: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[root.0] = Some(Matrix::scalar(1.0));

        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let out_bar = match adj[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate_inputs(i, &out_bar, &mut adj);
            adj[i] = Some(out_bar);
        }
        Ok(Gradients { by_node: adj })
    }

    fn accumulate_inputs(&self, i: usize, out_bar: &Matrix, adj: &mut [Option<Matrix>]) {
        let node = &self.nodes[i];
        let mut accum = |id: NodeId, contrib: Matrix| {
            if !self.nodes[id.0].needs_grad {
                return;
            }
            match &mut adj[id.0] {
                Some(g) => g.axpy(1.0, &contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Const | Op::Param => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    accum(*a, out_bar.matmul(&self.value(*b).transpose()));
                }
                if self.needs(*b) {
                    accum(*b, self.value(*a).transpose().matmul(out_bar));
                }
            }
            Op::Transpose(a) => accum(*a, out_bar.transpose()),
            Op::Add(a, b) => {
                accum(*a, out_bar.clone());
                accum(*b, out_bar.clone());
            }
            Op::Sub(a, b) => {
                accum(*a, out_bar.clone());
                accum(*b, out_bar.scale(-1.0));
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    accum(*a, out_bar.hadamard(self.value(*b)));
                }
                if self.needs(*b) {
                    accum(*b, out_bar.hadamard(self.value(*a)));
                }
            }
            Op::AddRowBroadcast(a, bias) => {
                accum(*a, out_bar.clone());
                accum(*bias, out_bar.col_sums());
            }
            Op::Gram(a) => {
                // d(A'A): A_bar += A (G_bar + G_bar')
                let s = out_bar.add(&out_bar.transpose());
                accum(*a, self.value(*a).matmul(&s));
            }
            Op::MatTMul(a, b) => {
                if self.needs(*a) {
                    accum(*a, self.value(*b).matmul(&out_bar.transpose()));
                }
                if self.needs(*b) {
                    accum(*b, self.value(*a).matmul(out_bar));
                }
            }
            Op::Relu(a) => {
                // subgradient 0 at exactly 0
                let av = self.value(*a);
                let mut g = out_bar.clone();
                for (gv, &x) in g.data_mut().iter_mut().zip(av.data().iter()) {
                    if x <= 0.0 {
                        *gv = 0.0;
                    }
                }
                accum(*a, g);
            }
            Op::SpdSolve { m, b, factor } => {
                let b_bar = factor.solve(out_bar);
                if self.needs(*m) {
                    let x = &node.value;
                    let g = b_bar.matmul(&x.transpose()).scale(-1.0);
                    let sym = g.add(&g.transpose()).scale(0.5);
                    accum(*m, sym);
                }
                accum(*b, b_bar);
            }
            Op::AddDiagScalar(m, s) => {
                accum(*m, out_bar.clone());
                if self.needs(*s) {
                    accum(*s, Matrix::scalar(out_bar.trace()));
                }
            }
            Op::Exp(a) => accum(*a, out_bar.hadamard(&node.value)),
            Op::Log(a) => {
                let av = self.value(*a);
                accum(*a, out_bar.hadamard(&av.map(|x| 1.0 / x)));
            }
            Op::Sigmoid(a) => {
                let s = &node.value;
                accum(*a, out_bar.hadamard(&s.map(|v| v * (1.0 - v))));
            }
            Op::Square(a) => accum(*a, out_bar.hadamard(&self.value(*a).scale(2.0))),
            Op::Sqrt(a) => {
                // guard the 0/0 at a zero residual
                let s = &node.value;
                accum(
                    *a,
                    out_bar.hadamard(&s.map(|v| 1.0 / (2.0 * v.max(1e-12)))),
                );
            }
            Op::Abs(a) => {
                // subgradient 0 at exactly 0
                let av = self.value(*a);
                accum(
                    *a,
                    out_bar.hadamard(&av.map(|x| {
                        if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    })),
                );
            }
            Op::Mean(a) => {
                let av = self.value(*a);
                let n = (av.rows() * av.cols()) as Real;
                let g = out_bar.as_scalar() / n;
                accum(*a, av.map(|_| g));
            }
            Op::Scale(a, k) => accum(*a, out_bar.scale(*k)),
            Op::Cols { input, start, len } => {
                let iv = self.value(*input);
                let mut g = Matrix::zeros(iv.rows(), iv.cols());
                for r in 0..iv.rows() {
                    for c in 0..*len {
                        g.set(r, start + c, out_bar.get(r, c));
                    }
                }
                accum(*input, g);
            }
            Op::BceWithLogits { logits, target } => {
                let z = self.value(*logits);
                let n = (z.rows() * z.cols()) as Real;
                let scale = out_bar.as_scalar() / n;
                let mut g = Matrix::zeros(z.rows(), z.cols());
                for (gv, (&zi, &ti)) in g
                    .data_mut()
                    .iter_mut()
                    .zip(z.data().iter().zip(target.data().iter()))
                {
                    *gv = (sigmoid(zi) - ti) * scale;
                }
                accum(*logits, g);
            }
        }
    }
}

/// Adjoints by node id, as produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    by_node: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.by_node.get(id.index()).and_then(|g| g.as_ref())
    }

    /// Gradient of a parameter node, zeros if it never received one.
    pub fn param_grad(&self, id: NodeId, shape: (usize, usize)) -> Matrix {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Matrix::zeros(shape.0, shape.1),
        }
    }
}

/// Max over all entries of all tensors of
/// |g_ad - g_fd| / max(1, |g_ad|, |g_fd|), with g_fd by central differences.
///
/// `eval` must be a pure function of the tensors (fixed noise, fixed
/// permutations), otherwise the differences measure the noise instead.
pub fn finite_difference_max_rel_err<F>(
    mut eval: F,
    tensors: &mut [Matrix],
    analytic: &[Matrix],
    eps: Real,
) -> Real
where
    F: FnMut(&[Matrix]) -> Real,
{
    assert_eq!(tensors.len(), analytic.len());
    let mut worst = 0.0 as Real;
    for t in 0..tensors.len() {
        assert_eq!(tensors[t].shape(), analytic[t].shape());
        for idx in 0..tensors[t].data().len() {
            let orig = tensors[t].data()[idx];
            tensors[t].data_mut()[idx] = orig + eps;
            let up = eval(tensors);
            tensors[t].data_mut()[idx] = orig - eps;
            let down = eval(tensors);
            tensors[t].data_mut()[idx] = orig;
            let fd = (up - down) / (2.0 * eps);
            let ad = analytic[t].data()[idx];
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1.0);
            worst = worst.max(rel);
        }
    }
    worst
}
