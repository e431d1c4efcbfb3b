//! Composable scalar expressions over parameter-vector entries.

use std::fmt;
use std::ops::{Add, Mul, Neg, Range, Sub};
use std::rc::Rc;

use crate::param::ParamVector;
use crate::Result;

/// A differentiable scalar function of a whole parameter vector, used as an
/// expression leaf. Implementors supply their own forward value and
/// vector-Jacobian product so large structured computations (e.g. a sequence
/// log-probability) enter the scalar graph as a single node.
pub trait ParamFunction {
    /// Short description for error messages.
    fn describe(&self) -> String;

    /// Forward value at `params`.
    fn value(&self, params: &ParamVector) -> Result<f64>;

    /// Accumulates `upstream * d(value)/d(params)` into `grad`.
    fn vjp(&self, params: &ParamVector, upstream: f64, grad: &mut [f64]) -> Result<()>;

    /// Index range this function's gradient can touch; `None` means the whole
    /// vector. Used by the finite-difference checker to classify entries.
    fn active_range(&self) -> Option<Range<usize>> {
        None
    }
}

pub(crate) enum Node {
    Const(f64),
    Param(usize),
    ParamFn(Rc<dyn ParamFunction>),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Neg(Expr),
    Mul(Expr, Expr),
    Exp(Expr),
    Ln(Expr),
    Sigmoid(Expr),
    Softplus(Expr),
    LogSumExp(Vec<Expr>),
    Max(Expr, Expr),
    Clamp { x: Expr, lo: f64, hi: f64 },
    StopGrad(Expr),
    /// 1.0 if the child's value is strictly positive, else 0.0. Piecewise
    /// constant: contributes zero gradient.
    IndicatorPos(Expr),
}

impl Node {
    pub(crate) fn kind(&self) -> &'static str {
        match self {
            Node::Const(_) => "const",
            Node::Param(_) => "param",
            Node::ParamFn(_) => "param_fn",
            Node::Add(..) => "add",
            Node::Sub(..) => "sub",
            Node::Neg(_) => "neg",
            Node::Mul(..) => "mul",
            Node::Exp(_) => "exp",
            Node::Ln(_) => "ln",
            Node::Sigmoid(_) => "sigmoid",
            Node::Softplus(_) => "softplus",
            Node::LogSumExp(_) => "log_sum_exp",
            Node::Max(..) => "max",
            Node::Clamp { .. } => "clamp",
            Node::StopGrad(_) => "stop_grad",
            Node::IndicatorPos(_) => "indicator",
        }
    }
}

/// Handle to a node in a scalar expression DAG. Cloning is cheap and clones
/// share evaluation state within a single `evaluate`/`gradient` call.
#[derive(Clone)]
pub struct Expr(pub(crate) Rc<Node>);

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({})", self.0.kind())
    }
}

impl Expr {
    pub fn constant(v: f64) -> Self {
        Expr(Rc::new(Node::Const(v)))
    }

    /// Reads a single entry of the parameter vector.
    pub fn param(index: usize) -> Self {
        Expr(Rc::new(Node::Param(index)))
    }

    /// Wraps an externally differentiated function as a leaf.
    pub fn param_fn(f: Rc<dyn ParamFunction>) -> Self {
        Expr(Rc::new(Node::ParamFn(f)))
    }

    pub fn exp(&self) -> Self {
        Expr(Rc::new(Node::Exp(self.clone())))
    }

    pub fn ln(&self) -> Self {
        Expr(Rc::new(Node::Ln(self.clone())))
    }

    pub fn sigmoid(&self) -> Self {
        Expr(Rc::new(Node::Sigmoid(self.clone())))
    }

    /// ln(1 + e^x), the stable building block for -ln sigmoid(x) = softplus(-x).
    pub fn softplus(&self) -> Self {
        Expr(Rc::new(Node::Softplus(self.clone())))
    }

    /// Forward-identity; blocks gradient flow into the wrapped subtree.
    pub fn stop_grad(&self) -> Self {
        Expr(Rc::new(Node::StopGrad(self.clone())))
    }

    /// Clamps to [lo, hi]; gradient is 1 inside the interval, 0 outside.
    pub fn clamp(&self, lo: f64, hi: f64) -> Self {
        assert!(lo <= hi, "clamp bounds out of order");
        Expr(Rc::new(Node::Clamp { x: self.clone(), lo, hi }))
    }

    /// 1 if `self > 0` else 0, with zero gradient everywhere.
    pub fn indicator_pos(&self) -> Self {
        Expr(Rc::new(Node::IndicatorPos(self.clone())))
    }

    pub fn max(a: Expr, b: Expr) -> Self {
        Expr(Rc::new(Node::Max(a, b)))
    }

    /// Numerically stable ln(sum_i e^{x_i}).
    pub fn log_sum_exp(xs: Vec<Expr>) -> Self {
        assert!(!xs.is_empty(), "log_sum_exp needs at least one term");
        Expr(Rc::new(Node::LogSumExp(xs)))
    }

    /// Sum as a balanced tree (keeps depth logarithmic for large batches).
    pub fn sum(items: Vec<Expr>) -> Self {
        match items.len() {
            0 => Expr::constant(0.0),
            1 => items.into_iter().next().unwrap(),
            _ => {
                let mut level = items;
                while level.len() > 1 {
                    let mut next = Vec::with_capacity(level.len().div_ceil(2));
                    let mut it = level.into_iter();
                    while let Some(a) = it.next() {
                        match it.next() {
                            Some(b) => next.push(a + b),
                            None => next.push(a),
                        }
                    }
                    level = next;
                }
                level.into_iter().next().unwrap()
            }
        }
    }

    pub fn mean(items: Vec<Expr>) -> Self {
        let n = items.len();
        assert!(n > 0, "mean of empty list");
        Expr::sum(items) * Expr::constant(1.0 / n as f64)
    }

    pub(crate) fn id(&self) -> usize {
        Rc::as_ptr(&self.0) as *const () as usize
    }
}

impl Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr(Rc::new(Node::Add(self, rhs)))
    }
}

impl Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr(Rc::new(Node::Sub(self, rhs)))
    }
}

impl Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr(Rc::new(Node::Mul(self, rhs)))
    }
}

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr(Rc::new(Node::Neg(self)))
    }
}

impl Add<f64> for Expr {
    type Output = Expr;
    fn add(self, rhs: f64) -> Expr {
        self + Expr::constant(rhs)
    }
}

impl Sub<f64> for Expr {
    type Output = Expr;
    fn sub(self, rhs: f64) -> Expr {
        self - Expr::constant(rhs)
    }
}

impl Mul<f64> for Expr {
    type Output = Expr;
    fn mul(self, rhs: f64) -> Expr {
        self * Expr::constant(rhs)
    }
}

impl Mul<Expr> for f64 {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::constant(self) * rhs
    }
}

impl Sub<Expr> for f64 {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::constant(self) - rhs
    }
}

impl Add<Expr> for f64 {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::constant(self) + rhs
    }
}
