//! Reverse-mode tape over dense `f64` matrices.
//!
//! Every node holds a full `Array2<f64>` value. Binary element-wise ops accept
//! a right operand that broadcasts against the left one (same shape, a `1×n`
//! row, a `B×1` column or a `1×1` scalar); the backward sweep reduces the
//! cotangent back to the operand's shape.

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
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
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Sqrt(Var),
    Sum(Var),
    RowSum(Var),
    Columns(Var, usize),
    Concat(Vec<Var>),
    Clamp(Var, Array2<f64>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMulT(..) => "matmul_t",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Square(..) => "square",
            Op::Sqrt(..) => "sqrt",
            Op::Sum(..) => "sum",
            Op::RowSum(..) => "row_sum",
            Op::Columns(..) => "columns",
            Op::Concat(..) => "concat",
            Op::Clamp(..) => "clamp",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Array2<f64>,
    needs_grad: bool,
}

/// Ordered record of primitive operations.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Cotangents produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Cotangent of `var`, or `None` if the output does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Array2<f64>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }
}

fn broadcast_ok(lhs: (usize, usize), rhs: (usize, usize)) -> bool {
    (rhs.0 == lhs.0 || rhs.0 == 1) && (rhs.1 == lhs.1 || rhs.1 == 1)
}

/// Sums `g` down to `shape` along broadcast axes.
fn reduce_to(g: &Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let mut out = if shape.0 == 1 && g.nrows() != 1 {
        g.sum_axis(Axis(0)).insert_axis(Axis(0))
    } else {
        g.clone()
    };
    if shape.1 == 1 && out.ncols() != 1 {
        out = out.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    out
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

    fn push(&mut self, op: Op, value: Array2<f64>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Value currently held by `v`.
    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    /// `x · wᵀ` for `x: B×m`, `w: n×m`.
    pub fn matmul_t(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.1 != ws.1 {
            return Err(Error::Shape(format!(
                "matmul_t: {}x{} against transposed {}x{}",
                xs.0, xs.1, ws.0, ws.1
            )));
        }
        let value = self.value(x).dot(&self.value(w).t());
        let ng = self.ng(x) || self.ng(w);
        Ok(self.push(Op::MatMulT(x, w), value, ng))
    }

    fn check_bcast(&self, name: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if broadcast_ok(sa, sb) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{name}: cannot broadcast {}x{} onto {}x{}",
                sb.0, sb.1, sa.0, sa.1
            )))
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_bcast("add", a, b)?;
        let value = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Op::Add(a, b), value, ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_bcast("sub", a, b)?;
        let value = self.value(a) - self.value(b);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Op::Sub(a, b), value, ng))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_bcast("mul", a, b)?;
        let value = self.value(a) * self.value(b);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Op::Mul(a, b), value, ng))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) * k;
        let ng = self.ng(a);
        self.push(Op::Scale(a, k), value, ng)
    }

    /// Adds the constant `k` to every entry.
    pub fn offset(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) + k;
        let ng = self.ng(a);
        self.push(Op::Offset(a), value, ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        let ng = self.ng(a);
        self.push(Op::Tanh(a), value, ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        let ng = self.ng(a);
        self.push(Op::Exp(a), value, ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|v| v * v);
        let ng = self.ng(a);
        self.push(Op::Square(a), value, ng)
    }

    /// Element-wise square root. The derivative at 0 is taken as 0.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::sqrt);
        let ng = self.ng(a);
        self.push(Op::Sqrt(a), value, ng)
    }

    /// Sum of all entries, as a `1×1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let ng = self.ng(a);
        self.push(Op::Sum(a), value, ng)
    }

    /// Row sums, `B×n → B×1`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let ng = self.ng(a);
        self.push(Op::RowSum(a), value, ng)
    }

    /// Columns `start..start+len`.
    pub fn columns(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (_, n) = self.shape(a);
        if start + len > n || len == 0 {
            return Err(Error::Shape(format!(
                "columns {start}..{} out of {n}",
                start + len
            )));
        }
        let value = self.value(a).slice(s![.., start..start + len]).to_owned();
        let ng = self.ng(a);
        Ok(self.push(Op::Columns(a, start), value, ng))
    }

    /// Horizontal concatenation of nodes with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::Shape("concat of nothing".into()));
        };
        let rows = self.shape(*first).0;
        let cols: usize = parts.iter().map(|p| self.shape(*p).1).sum();
        let mut value = Array2::zeros((rows, cols));
        let mut at = 0;
        for p in parts {
            let v = self.value(*p);
            if v.nrows() != rows {
                return Err(Error::Shape("concat: row counts differ".into()));
            }
            value.slice_mut(s![.., at..at + v.ncols()]).assign(v);
            at += v.ncols();
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        Ok(self.push(Op::Concat(parts.to_vec()), value, ng))
    }

    /// Element-wise clamp onto `[lo, hi]` (both broadcast like the right
    /// operand of [`Tape::add`]). Gradient passes only where the clamp is inactive.
    pub fn clamp(&mut self, a: Var, lo: &Array2<f64>, hi: &Array2<f64>) -> Result<Var> {
        let sa = self.shape(a);
        if !broadcast_ok(sa, lo.dim()) || !broadcast_ok(sa, hi.dim()) {
            return Err(Error::Shape("clamp: bounds do not broadcast".into()));
        }
        let lo = lo.broadcast(sa).expect("checked");
        let hi = hi.broadcast(sa).expect("checked");
        let mut value = self.value(a).clone();
        let mut mask = Array2::ones(sa);
        Zip::from(&mut value)
            .and(&mut mask)
            .and(&lo)
            .and(&hi)
            .for_each(|v, m, &l, &h| {
                if *v < l {
                    *v = l;
                    *m = 0.0;
                } else if *v > h {
                    *v = h;
                    *m = 0.0;
                }
            });
        let ng = self.ng(a);
        Ok(self.push(Op::Clamp(a, mask), value, ng))
    }

    /// First node (in recording order) holding a non-finite value.
    fn first_non_finite(&self, upto: usize) -> Option<(usize, &'static str)> {
        self.nodes[..=upto]
            .iter()
            .enumerate()
            .find(|(_, n)| n.value.iter().any(|v| !v.is_finite()))
            .map(|(i, n)| (i, n.op.name()))
    }

    /// Reverse sweep from `output`, seeded with ones.
    ///
    /// Fails with [`Error::Numeric`] naming the first non-finite node if the
    /// output is not finite.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = &self.nodes[output.0];
        if out.value.iter().any(|v| !v.is_finite()) {
            let (i, name) = self
                .first_non_finite(output.0)
                .unwrap_or((output.0, out.op.name()));
            return Err(Error::Numeric(format!(
                "node {i} ({name}) holds a non-finite value"
            )));
        }
        let n = output.0 + 1;
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; n];
        grads[output.0] = Some(Array2::ones(out.value.dim()));

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMulT(x, w) => {
                    if self.ng(*x) {
                        let gx = g.dot(self.value(*w));
                        self.acc(&mut grads, *x, gx);
                    }
                    if self.ng(*w) {
                        let gw = g.t().dot(self.value(*x));
                        self.acc(&mut grads, *w, gw);
                    }
                }
                Op::Add(a, b) => {
                    if self.ng(*b) {
                        let gb = reduce_to(&g, self.shape(*b));
                        self.acc(&mut grads, *b, gb);
                    }
                    if self.ng(*a) {
                        self.acc(&mut grads, *a, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.ng(*b) {
                        let gb = -reduce_to(&g, self.shape(*b));
                        self.acc(&mut grads, *b, gb);
                    }
                    if self.ng(*a) {
                        self.acc(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.ng(*b) {
                        let gb = reduce_to(&(&g * self.value(*a)), self.shape(*b));
                        self.acc(&mut grads, *b, gb);
                    }
                    if self.ng(*a) {
                        let ga = &g * self.value(*b);
                        self.acc(&mut grads, *a, ga);
                    }
                }
                Op::Scale(a, k) => self.acc(&mut grads, *a, g * *k),
                Op::Offset(a) => self.acc(&mut grads, *a, g),
                Op::Tanh(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|g, &y| *g *= 1.0 - y * y);
                    self.acc(&mut grads, *a, ga);
                }
                Op::Exp(a) => self.acc(&mut grads, *a, g * &node.value),
                Op::Square(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|g, &x| *g *= 2.0 * x);
                    self.acc(&mut grads, *a, ga);
                }
                Op::Sqrt(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(&node.value).for_each(|g, &y| {
                        *g = if y > 0.0 { *g / (2.0 * y) } else { 0.0 };
                    });
                    self.acc(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let ga = Array2::from_elem(self.shape(*a), g[[0, 0]]);
                    self.acc(&mut grads, *a, ga);
                }
                Op::RowSum(a) => {
                    let ga = g
                        .broadcast(self.shape(*a))
                        .expect("column broadcast")
                        .to_owned();
                    self.acc(&mut grads, *a, ga);
                }
                Op::Columns(a, start) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    self.acc(&mut grads, *a, ga);
                }
                Op::Concat(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let w = self.shape(*p).1;
                        if self.ng(*p) {
                            let gp = g.slice(s![.., at..at + w]).to_owned();
                            self.acc(&mut grads, *p, gp);
                        }
                        at += w;
                    }
                }
                Op::Clamp(a, mask) => self.acc(&mut grads, *a, g * mask),
            }
        }
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => *existing += &g,
            slot @ None => *slot = Some(g),
        }
    }
}
