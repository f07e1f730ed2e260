//! Data expressions such as `"x"` or `"exp(-8*(x+y))"`, compiled once and
//! evaluated without allocating.
//!
//! Variables: `x`, `y`, the outward normal `nx`, `ny` (boundary data only),
//! the feature size `eps`, and the constants `pi` and `e`. Integer literals
//! are read as floats so `x == 0` behaves as expected. Common math functions
//! (`sin`, `exp`, `sqrt`, ...) may be written without the `math::` prefix.

use std::sync::Arc;

use anyhow::{anyhow, bail, Context as _, Result};
use defeature_core::geometry::{FluxFn, PointPredicate, ScalarFn};
use defeature_core::Vec2;
use evalexpr::{
    build_operator_tree, Context, DefaultNumericTypes, EvalexprError, EvalexprResult, Node,
    Operator, Value,
};

const MATH: &[&str] = &[
    "ln", "log", "log2", "log10", "exp", "exp2", "pow", "cos", "acos", "cosh", "acosh", "sin", "asin", "sinh",
    "asinh", "tan", "atan", "tanh", "atanh", "atan2", "sqrt", "cbrt", "hypot", "abs",
];

/// Which variables an expression may read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Vars {
    Point,
    PointNormal,
}

impl Vars {
    fn allowed(self) -> &'static [&'static str] {
        match self {
            Vars::Point => &["x", "y", "eps", "pi", "e"],
            Vars::PointNormal => &["x", "y", "nx", "ny", "eps", "pi", "e"],
        }
    }
}

struct Env {
    x: Value,
    y: Value,
    nx: Value,
    ny: Value,
    eps: Value,
    pi: Value,
    e: Value,
}

impl Env {
    fn new(p: Vec2, n: Vec2, eps: f64) -> Self {
        Self {
            x: Value::Float(p.x),
            y: Value::Float(p.y),
            nx: Value::Float(n.x),
            ny: Value::Float(n.y),
            eps: Value::Float(eps),
            pi: Value::Float(std::f64::consts::PI),
            e: Value::Float(std::f64::consts::E),
        }
    }
}

impl Context for Env {
    type NumericTypes = DefaultNumericTypes;

    fn get_value(&self, identifier: &str) -> Option<&Value> {
        Some(match identifier {
            "x" => &self.x,
            "y" => &self.y,
            "nx" => &self.nx,
            "ny" => &self.ny,
            "eps" => &self.eps,
            "pi" => &self.pi,
            "e" => &self.e,
            _ => return None,
        })
    }

    fn call_function(&self, identifier: &str, _argument: &Value) -> EvalexprResult<Value> {
        Err(EvalexprError::FunctionIdentifierNotFound(identifier.to_string()))
    }

    fn are_builtin_functions_disabled(&self) -> bool {
        false
    }

    fn set_builtin_functions_disabled(&mut self, _disabled: bool) -> EvalexprResult<()> {
        Err(EvalexprError::BuiltinFunctionsCannotBeDisabled)
    }
}

fn floatify(node: &mut Node) {
    if let Operator::Const { value } = node.operator_mut() {
        if let Value::Int(i) = *value {
            *value = Value::Float(i as f64);
        }
    }
    for c in node.children_mut() {
        floatify(c);
    }
}

/// A compiled expression.
#[derive(Debug, Clone)]
pub struct Expr {
    source: String,
    node: Node,
    constant: Option<Value>,
}

impl Expr {
    pub fn parse(source: &str, vars: Vars) -> Result<Self> {
        let mut node: Node =
            build_operator_tree(source).with_context(|| format!("cannot parse expression `{source}`"))?;
        for id in node.iter_function_identifiers_mut() {
            if MATH.contains(&id.as_str()) {
                *id = format!("math::{id}");
            }
        }
        floatify(&mut node);
        if let Some(bad) = node.iter_variable_identifiers().find(|v| !vars.allowed().contains(v)) {
            bail!("unknown variable `{bad}` in expression `{source}`");
        }
        let constant = match node.iter_variable_identifiers().next() {
            None => Some(node.eval_with_context(&Env::new(Vec2::ZERO, Vec2::ZERO, 0.0))
                .map_err(|e| anyhow!("cannot evaluate `{source}`: {e}"))?),
            Some(_) => None,
        };
        let expr = Self {
            source: source.to_string(),
            node,
            constant,
        };
        // smoke-evaluate so type errors surface at load time
        expr.value(Vec2::new(0.5, 0.5), Vec2::new(1.0, 0.0), 0.1)?;
        Ok(expr)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    fn value(&self, p: Vec2, n: Vec2, eps: f64) -> Result<Value> {
        if let Some(v) = &self.constant {
            return Ok(v.clone());
        }
        self.node
            .eval_with_context(&Env::new(p, n, eps))
            .map_err(|e| anyhow!("cannot evaluate `{}`: {e}", self.source))
    }

    pub fn eval(&self, p: Vec2, n: Vec2, eps: f64) -> Result<f64> {
        match self.value(p, n, eps)? {
            Value::Float(v) => Ok(v),
            Value::Int(v) => Ok(v as f64),
            other => bail!("expression `{}` yields {other:?}, not a number", self.source),
        }
    }

    pub fn eval_bool(&self, p: Vec2) -> Result<bool> {
        match self.value(p, Vec2::ZERO, 0.0)? {
            Value::Boolean(b) => Ok(b),
            other => bail!("expression `{}` yields {other:?}, not a boolean", self.source),
        }
    }

    fn constant_number(&self) -> Option<f64> {
        match self.constant {
            Some(Value::Float(v)) => Some(v),
            _ => None,
        }
    }
}

// Evaluation errors after the load-time check can only come from values the
// expression cannot handle at some point (e.g. a tuple result); they are
// reported as NaN, which the solver then surfaces.
fn or_nan(r: Result<f64>) -> f64 {
    r.unwrap_or(f64::NAN)
}

pub fn scalar(source: &str, eps: f64) -> Result<ScalarFn> {
    let e = Expr::parse(source, Vars::Point)?;
    e.eval(Vec2::ZERO, Vec2::ZERO, eps)?;
    if let Some(c) = e.constant_number() {
        return Ok(Arc::new(move |_| c));
    }
    Ok(Arc::new(move |p| or_nan(e.eval(p, Vec2::ZERO, eps))))
}

pub fn flux(source: &str, eps: f64) -> Result<FluxFn> {
    let e = Expr::parse(source, Vars::PointNormal)?;
    if let Some(c) = e.constant_number() {
        return Ok(Arc::new(move |_, _| c));
    }
    Ok(Arc::new(move |p, n| or_nan(e.eval(p, n, eps))))
}

pub fn predicate(source: &str) -> Result<PointPredicate> {
    let e = Expr::parse(source, Vars::Point)?;
    e.eval_bool(Vec2::new(0.5, 0.5))?;
    Ok(Arc::new(move |p| e.eval_bool(p).unwrap_or(false)))
}

/// A number given either literally or as an expression in `eps`.
pub fn number(source: &str, eps: f64) -> Result<f64> {
    Expr::parse(source, Vars::Point)?.eval(Vec2::ZERO, Vec2::ZERO, eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluates_math() {
        let f = scalar("exp(-8*(x+y))", 0.0).unwrap();
        assert!((f(Vec2::new(0.25, 0.0)) - (-2f64).exp()).abs() < 1e-15);
        let g = scalar("sin(pi*x)*sin(pi*y)", 0.0).unwrap();
        assert!((g(Vec2::new(0.5, 0.5)) - 1.0).abs() < 1e-15);
        assert_eq!(scalar("1/2", 0.0).unwrap()(Vec2::ZERO), 0.5);
    }

    #[test]
    fn normals_and_eps() {
        let g = flux("0.7*nx - 0.4*ny + eps", 0.25).unwrap();
        assert!((g(Vec2::ZERO, Vec2::new(0.0, 1.0)) - (-0.15)).abs() < 1e-15);
        assert!(scalar("nx", 0.0).is_err());
    }

    #[test]
    fn integer_comparisons_are_float_comparisons() {
        let p = predicate("x == 0 || x == 1").unwrap();
        assert!(p(Vec2::new(0.0, 0.3)));
        assert!(p(Vec2::new(1.0, 0.3)));
        assert!(!p(Vec2::new(0.5, 0.0)));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(scalar("x +", 0.0).is_err());
        assert!(scalar("z", 0.0).is_err());
        assert!(predicate("x + 1").is_err());
        assert!(scalar("x < 1", 0.0).is_err());
    }

    #[test]
    fn numbers_in_eps() {
        assert!((number("0.5 - eps/2", 0.2).unwrap() - 0.4).abs() < 1e-15);
    }
}
