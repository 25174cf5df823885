//! Side-effect free expressions used by conditions, inline text switches,
//! assignments and automatic choice rules.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reserved prefix for variables owned by the Director.
pub const PHYS_PREFIX: &str = "phys_";

/// Runtime value of a story variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Number(f64),
    Bool(bool),
}

impl Value {
    pub fn ty(&self) -> Type {
        match self {
            Value::Number(_) => Type::Number,
            Value::Bool(_) => Type::Bool,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(n) => Some(*n),
            Value::Bool(_) => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            Value::Number(_) => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number(n) => write!(f, "{}", n),
            Value::Bool(b) => write!(f, "{}", b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Type {
    Number,
    Bool,
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Number => f.write_str("number"),
            Type::Bool => f.write_str("boolean"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(&self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne => 3,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul | BinOp::Div | BinOp::Rem => 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Number(f64),
    Bool(bool),
    Var(String),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("type mismatch: `{op}` expects {expected}, found {found}")]
    TypeMismatch {
        op: &'static str,
        expected: Type,
        found: Type,
    },
    #[error("division by zero")]
    DivisionByZero,
}

/// Name → value map shared by the story and the Director.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VariableStore {
    values: BTreeMap<String, Value>,
}

impl VariableStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<Value> {
        self.values.get(name).copied()
    }

    pub fn number(&self, name: &str) -> Option<f64> {
        self.get(name).and_then(|v| v.as_number())
    }

    pub fn set(&mut self, name: impl Into<String>, value: Value) {
        self.values.insert(name.into(), value);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Canonical variable name for a Director value: `phys_<key>` globally or
/// `phys_<tag>_<key>` when scoped to a context tag.
pub fn phys_var(tag: Option<&str>, key: &str) -> String {
    match tag {
        Some(t) => format!("{PHYS_PREFIX}{}_{}", t.to_ascii_lowercase(), key.to_ascii_lowercase()),
        None => format!("{PHYS_PREFIX}{}", key.to_ascii_lowercase()),
    }
}

impl Expr {
    pub fn var(name: impl Into<String>) -> Self {
        Expr::Var(name.into())
    }

    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Self {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    /// Every variable name referenced, in first-occurrence order.
    pub fn variables(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Var(v) => {
                if !out.contains(&v.as_str()) {
                    out.push(v)
                }
            }
            Expr::Unary(_, e) => e.collect_vars(out),
            Expr::Binary(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
            Expr::Number(_) | Expr::Bool(_) => {}
        }
    }

    /// Static type of the expression given a typing of its variables.
    pub fn type_of(&self, lookup: &dyn Fn(&str) -> Option<Type>) -> Result<Type, EvalError> {
        match self {
            Expr::Number(_) => Ok(Type::Number),
            Expr::Bool(_) => Ok(Type::Bool),
            Expr::Var(v) => lookup(v).ok_or_else(|| EvalError::Unbound(v.clone())),
            Expr::Unary(op, e) => {
                let t = e.type_of(lookup)?;
                let (want, sym) = match op {
                    UnOp::Neg => (Type::Number, "-"),
                    UnOp::Not => (Type::Bool, "!"),
                };
                expect(sym, want, t)?;
                Ok(want)
            }
            Expr::Binary(op, l, r) => {
                let lt = l.type_of(lookup)?;
                let rt = r.type_of(lookup)?;
                let sym = op.symbol();
                match op {
                    BinOp::And | BinOp::Or => {
                        expect(sym, Type::Bool, lt)?;
                        expect(sym, Type::Bool, rt)?;
                        Ok(Type::Bool)
                    }
                    BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div | BinOp::Rem => {
                        expect(sym, Type::Number, lt)?;
                        expect(sym, Type::Number, rt)?;
                        Ok(Type::Number)
                    }
                    _ => {
                        expect(sym, Type::Number, lt)?;
                        expect(sym, Type::Number, rt)?;
                        Ok(Type::Bool)
                    }
                }
            }
        }
    }

    pub fn eval(&self, vars: &VariableStore) -> Result<Value, EvalError> {
        match self {
            Expr::Number(n) => Ok(Value::Number(*n)),
            Expr::Bool(b) => Ok(Value::Bool(*b)),
            Expr::Var(v) => vars.get(v).ok_or_else(|| EvalError::Unbound(v.clone())),
            Expr::Unary(UnOp::Neg, e) => Ok(Value::Number(-num("-", e.eval(vars)?)?)),
            Expr::Unary(UnOp::Not, e) => Ok(Value::Bool(!boolean("!", e.eval(vars)?)?)),
            Expr::Binary(op, l, r) => {
                let sym = op.symbol();
                let lv = l.eval(vars)?;
                let rv = r.eval(vars)?;
                let v = match op {
                    BinOp::And => Value::Bool(boolean(sym, lv)? && boolean(sym, rv)?),
                    BinOp::Or => Value::Bool(boolean(sym, lv)? || boolean(sym, rv)?),
                    _ => {
                        let a = num(sym, lv)?;
                        let b = num(sym, rv)?;
                        match op {
                            BinOp::Add => Value::Number(a + b),
                            BinOp::Sub => Value::Number(a - b),
                            BinOp::Mul => Value::Number(a * b),
                            BinOp::Div | BinOp::Rem if b == 0.0 => {
                                return Err(EvalError::DivisionByZero)
                            }
                            BinOp::Div => Value::Number(a / b),
                            BinOp::Rem => Value::Number(a % b),
                            BinOp::Lt => Value::Bool(a < b),
                            BinOp::Le => Value::Bool(a <= b),
                            BinOp::Gt => Value::Bool(a > b),
                            BinOp::Ge => Value::Bool(a >= b),
                            BinOp::Eq => Value::Bool(a == b),
                            BinOp::Ne => Value::Bool(a != b),
                            BinOp::And | BinOp::Or => unreachable!(),
                        }
                    }
                };
                Ok(v)
            }
        }
    }
}

fn expect(op: &'static str, expected: Type, found: Type) -> Result<(), EvalError> {
    if expected == found {
        Ok(())
    } else {
        Err(EvalError::TypeMismatch {
            op,
            expected,
            found,
        })
    }
}

fn num(op: &'static str, v: Value) -> Result<f64, EvalError> {
    match v {
        Value::Number(n) => Ok(n),
        other => Err(EvalError::TypeMismatch {
            op,
            expected: Type::Number,
            found: other.ty(),
        }),
    }
}

fn boolean(op: &'static str, v: Value) -> Result<bool, EvalError> {
    match v {
        Value::Bool(b) => Ok(b),
        other => Err(EvalError::TypeMismatch {
            op,
            expected: Type::Bool,
            found: other.ty(),
        }),
    }
}

/// Evaluate `expr` against `vars`. Free-function form of [`Expr::eval`].
pub fn eval(expr: &Expr, vars: &VariableStore) -> Result<Value, EvalError> {
    expr.eval(vars)
}

fn fmt_number(n: f64, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if n.fract() == 0.0 && n.abs() < 1e15 {
        write!(f, "{}", n as i64)
    } else {
        write!(f, "{}", n)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn go(e: &Expr, parent: u8, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            match e {
                Expr::Number(n) if *n < 0.0 => {
                    f.write_str("(")?;
                    fmt_number(*n, f)?;
                    f.write_str(")")
                }
                Expr::Number(n) => fmt_number(*n, f),
                Expr::Bool(b) => write!(f, "{}", b),
                Expr::Var(v) => f.write_str(v),
                Expr::Unary(op, inner) => {
                    f.write_str(match op {
                        UnOp::Neg => "-",
                        UnOp::Not => "!",
                    })?;
                    go(inner, 7, f)
                }
                Expr::Binary(op, l, r) => {
                    let p = op.precedence();
                    let paren = p < parent;
                    if paren {
                        f.write_str("(")?;
                    }
                    go(l, p, f)?;
                    write!(f, " {} ", op.symbol())?;
                    // left-associative: the right operand needs parentheses at equal precedence
                    go(r, p + 1, f)?;
                    if paren {
                        f.write_str(")")?;
                    }
                    Ok(())
                }
            }
        }
        go(self, 0, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::story::parser::parse_expr;

    fn store(pairs: &[(&str, f64)]) -> VariableStore {
        let mut s = VariableStore::new();
        for (k, v) in pairs {
            s.set(*k, Value::Number(*v));
        }
        s
    }

    #[test]
    fn precedence() {
        let e = parse_expr("1 + 2 * 3").unwrap();
        assert_eq!(e.eval(&VariableStore::new()), Ok(Value::Number(7.0)));
    }

    #[test]
    fn context_comparison() {
        let e = parse_expr("phys_dungeon_arousal > phys_forest_arousal").unwrap();
        let vars = store(&[("phys_dungeon_arousal", 0.8), ("phys_forest_arousal", 0.2)]);
        assert_eq!(e.eval(&vars), Ok(Value::Bool(true)));
    }

    #[test]
    fn unbound_names_variable() {
        let e = parse_expr("foo + 1").unwrap();
        let err = e.eval(&VariableStore::new()).unwrap_err();
        assert_eq!(err, EvalError::Unbound("foo".into()));
        assert!(err.to_string().contains("foo"));
    }

    #[test]
    fn strict_types() {
        let e = parse_expr("true + 1").unwrap();
        assert!(matches!(
            e.eval(&VariableStore::new()),
            Err(EvalError::TypeMismatch { .. })
        ));
        let e = parse_expr("true < false").unwrap();
        assert!(e.eval(&VariableStore::new()).is_err());
        let e = parse_expr("1 / 0").unwrap();
        assert_eq!(e.eval(&VariableStore::new()), Err(EvalError::DivisionByZero));
    }

    #[test]
    fn boolean_logic() {
        let e = parse_expr("!(x > 2) || x == 5 && true").unwrap();
        assert_eq!(e.eval(&store(&[("x", 5.0)])), Ok(Value::Bool(true)));
        assert_eq!(e.eval(&store(&[("x", 3.0)])), Ok(Value::Bool(false)));
    }

    #[test]
    fn display_reparses_identically() {
        for src in [
            "1 - (2 - 3)",
            "(1 + 2) * 3",
            "-x * 2",
            "!(a > 1 && b < 2) || c >= 3",
            "10 % 3 / 2",
            "phys_cat_valence - phys_dog_valence",
        ] {
            let e = parse_expr(src).unwrap();
            let printed = e.to_string();
            assert_eq!(parse_expr(&printed).unwrap(), e, "{src} -> {printed}");
        }
    }

    #[test]
    fn phys_names() {
        assert_eq!(phys_var(Some("DUNGEON"), "arousal"), "phys_dungeon_arousal");
        assert_eq!(phys_var(None, "Valence"), "phys_valence");
    }
}
