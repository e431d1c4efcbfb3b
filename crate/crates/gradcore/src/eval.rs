//! Forward evaluation and reverse-mode gradients over expression DAGs.

use std::collections::{HashMap, HashSet};

use crate::expr::{Expr, Node};
use crate::param::ParamVector;
use crate::{Error, Result};

/// Stable sigmoid, exact complement under sign flip.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        1.0 - 1.0 / (1.0 + z.exp())
    }
}

/// Stable ln(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Children of each node in construction order.
fn children(node: &Node) -> Vec<&Expr> {
    match node {
        Node::Const(_) | Node::Param(_) | Node::ParamFn(_) => vec![],
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Max(a, b) => vec![a, b],
        Node::Neg(a)
        | Node::Exp(a)
        | Node::Ln(a)
        | Node::Sigmoid(a)
        | Node::Softplus(a)
        | Node::StopGrad(a)
        | Node::IndicatorPos(a)
        | Node::Clamp { x: a, .. } => vec![a],
        Node::LogSumExp(xs) => xs.iter().collect(),
    }
}

/// Topological order (children before parents), deduplicating shared nodes.
fn topo_order(root: &Expr) -> Vec<Expr> {
    let mut order = Vec::new();
    let mut visited = HashSet::new();
    // (node, children_expanded)
    let mut stack = vec![(root.clone(), false)];
    while let Some((expr, expanded)) = stack.pop() {
        if expanded {
            order.push(expr);
            continue;
        }
        if !visited.insert(expr.id()) {
            continue;
        }
        stack.push((expr.clone(), true));
        for child in children(&expr.0) {
            if !visited.contains(&child.id()) {
                stack.push((child.clone(), false));
            }
        }
    }
    order
}

/// Forward result paired with the values every indicator node took, so a
/// finite-difference probe can hold the branch structure fixed.
pub(crate) struct Evaluated {
    pub value: f64,
    pub node_values: HashMap<usize, f64>,
    pub indicator_values: HashMap<usize, f64>,
}

pub(crate) fn eval_nodes(
    root: &Expr,
    params: &ParamVector,
    frozen_indicators: Option<&HashMap<usize, f64>>,
) -> Result<Evaluated> {
    let order = topo_order(root);
    let mut values: HashMap<usize, f64> = HashMap::with_capacity(order.len());
    let mut indicators: HashMap<usize, f64> = HashMap::new();

    for expr in &order {
        let get = |e: &Expr| values[&e.id()];
        let v = match &*expr.0 {
            Node::Const(c) => *c,
            Node::Param(i) => params.get(*i)?,
            Node::ParamFn(f) => f.value(params)?,
            Node::Add(a, b) => get(a) + get(b),
            Node::Sub(a, b) => get(a) - get(b),
            Node::Neg(a) => -get(a),
            Node::Mul(a, b) => get(a) * get(b),
            Node::Exp(a) => get(a).exp(),
            Node::Ln(a) => get(a).ln(),
            Node::Sigmoid(a) => sigmoid(get(a)),
            Node::Softplus(a) => softplus(get(a)),
            Node::LogSumExp(xs) => {
                let m = xs.iter().map(&get).fold(f64::NEG_INFINITY, f64::max);
                m + xs.iter().map(|x| (get(x) - m).exp()).sum::<f64>().ln()
            }
            Node::Max(a, b) => get(a).max(get(b)),
            Node::Clamp { x, lo, hi } => get(x).clamp(*lo, *hi),
            Node::StopGrad(a) => get(a),
            Node::IndicatorPos(a) => {
                let raw = if get(a) > 0.0 { 1.0 } else { 0.0 };
                let v = match frozen_indicators {
                    Some(map) => *map.get(&expr.id()).unwrap_or(&raw),
                    None => raw,
                };
                indicators.insert(expr.id(), v);
                v
            }
        };
        if !v.is_finite() {
            return Err(Error::NonFinite(format!(
                "non-finite value in '{}' node",
                expr.0.kind()
            )));
        }
        values.insert(expr.id(), v);
    }

    Ok(Evaluated { value: values[&root.id()], node_values: values, indicator_values: indicators })
}

/// Forward value of the expression at `params`.
///
/// Any non-finite intermediate or out-of-range parameter index is an error.
pub fn evaluate(expr: &Expr, params: &ParamVector) -> Result<f64> {
    Ok(eval_nodes(expr, params, None)?.value)
}

/// Reverse-mode gradient of the expression with respect to every parameter
/// entry. Subtrees under stop-gradient or indicator nodes contribute zero.
pub fn gradient(expr: &Expr, params: &ParamVector) -> Result<ParamVector> {
    Ok(value_and_gradient(expr, params)?.1)
}

/// Forward value and reverse-mode gradient in one pass.
pub fn value_and_gradient(expr: &Expr, params: &ParamVector) -> Result<(f64, ParamVector)> {
    let order = topo_order(expr);
    let evaluated = eval_nodes(expr, params, None)?;
    let values = &evaluated.node_values;

    let mut adjoints: HashMap<usize, f64> = HashMap::with_capacity(order.len());
    adjoints.insert(expr.id(), 1.0);

    let mut grad = ParamVector::zeros(params.layout().clone());

    for node in order.iter().rev() {
        let adj = match adjoints.get(&node.id()) {
            Some(&a) if a != 0.0 => a,
            _ => continue,
        };
        let val = |e: &Expr| values[&e.id()];
        let mut push = |child: &Expr, d: f64| {
            *adjoints.entry(child.id()).or_insert(0.0) += adj * d;
        };
        match &*node.0 {
            Node::Const(_) => {}
            Node::Param(i) => grad.values_mut()[*i] += adj,
            Node::ParamFn(f) => f.vjp(params, adj, grad.values_mut())?,
            Node::Add(a, b) => {
                push(a, 1.0);
                push(b, 1.0);
            }
            Node::Sub(a, b) => {
                push(a, 1.0);
                push(b, -1.0);
            }
            Node::Neg(a) => push(a, -1.0),
            Node::Mul(a, b) => {
                let (va, vb) = (val(a), val(b));
                push(a, vb);
                push(b, va);
            }
            Node::Exp(a) => {
                let out = values[&node.id()];
                push(a, out);
            }
            Node::Ln(a) => push(a, 1.0 / val(a)),
            Node::Sigmoid(a) => {
                let s = values[&node.id()];
                push(a, s * (1.0 - s));
            }
            Node::Softplus(a) => push(a, sigmoid(val(a))),
            Node::LogSumExp(xs) => {
                let out = values[&node.id()];
                for x in xs {
                    push(x, (val(x) - out).exp());
                }
            }
            Node::Max(a, b) => {
                // Ties route to the first argument.
                if val(a) >= val(b) {
                    push(a, 1.0);
                } else {
                    push(b, 1.0);
                }
            }
            Node::Clamp { x, lo, hi } => {
                let v = val(x);
                push(x, if v >= *lo && v <= *hi { 1.0 } else { 0.0 });
            }
            Node::StopGrad(_) | Node::IndicatorPos(_) => {}
        }
    }

    if let Some(idx) = grad.values().iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("non-finite gradient entry {idx}")));
    }
    Ok((evaluated.value, grad))
}

/// Parameter indices reachable through differentiable paths (i.e. not solely
/// under stop-gradient or indicator subtrees). `None` means the active set is
/// the whole vector (some leaf declared an unbounded range).
pub(crate) fn active_param_set(root: &Expr) -> Option<HashSet<usize>> {
    let mut active = HashSet::new();
    let mut visited = HashSet::new();
    let mut stack = vec![root.clone()];
    while let Some(expr) = stack.pop() {
        if !visited.insert(expr.id()) {
            continue;
        }
        match &*expr.0 {
            Node::StopGrad(_) | Node::IndicatorPos(_) => {}
            Node::Param(i) => {
                active.insert(*i);
            }
            Node::ParamFn(f) => match f.active_range() {
                Some(range) => active.extend(range),
                None => return None,
            },
            other => {
                for child in children(other) {
                    stack.push(child.clone());
                }
            }
        }
    }
    Some(active)
}
