//! Coefficient expression language.
//!
//! Users write drift, diffusion, potential, cost and Lyapunov functions as
//! short arithmetic expressions over the spatial variables `x1`, `x2` and
//! the control `u` (`x` is accepted as an alias of `x1`).
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := '-' factor | power
//! power  := atom ('^' factor)?
//! atom   := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```

mod parser;
mod program;

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

pub use parser::parse;
pub use program::Program;

/// Variables available to expressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    X1,
    X2,
    U,
}

impl Var {
    pub fn name(self) -> &'static str {
        match self {
            Var::X1 => "x1",
            Var::X2 => "x2",
            Var::U => "u",
        }
    }

    fn slot(self) -> usize {
        match self {
            Var::X1 => 0,
            Var::X2 => 1,
            Var::U => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Tanh,
    Abs,
    Sign,
    Min,
    Max,
}

impl Func {
    pub const ALL: [Func; 10] = [
        Func::Sin,
        Func::Cos,
        Func::Exp,
        Func::Log,
        Func::Sqrt,
        Func::Tanh,
        Func::Abs,
        Func::Sign,
        Func::Min,
        Func::Max,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Tanh => "tanh",
            Func::Abs => "abs",
            Func::Sign => "sign",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Func::ALL.iter().copied().find(|f| f.name() == name)
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

/// Expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Ast {
    Const(f64),
    Var(Var),
    Neg(Box<Ast>),
    Binary(BinOp, Box<Ast>, Box<Ast>),
    Call(Func, Vec<Ast>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: expected one of {}", .expected.join(", "))]
    Syntax { offset: usize, expected: Vec<String> },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("function `{function}` takes {want} argument(s), got {got}")]
    Arity {
        function: String,
        got: usize,
        want: usize,
    },
}

impl ParseError {
    pub fn offset(&self) -> Option<usize> {
        match self {
            ParseError::Syntax { offset, .. } | ParseError::UnknownIdentifier { offset, .. } => {
                Some(*offset)
            }
            ParseError::Arity { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("variable `{0}` is not bound")]
    UnboundVariable(&'static str),
    #[error("domain error in `{op}` with operand {operand}")]
    Domain { op: &'static str, operand: f64 },
}

/// Values for the expression variables; `None` means unbound.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Bindings {
    pub x1: Option<f64>,
    pub x2: Option<f64>,
    pub u: Option<f64>,
}

impl Bindings {
    pub fn point(x: &[f64]) -> Self {
        Bindings {
            x1: x.first().copied(),
            x2: x.get(1).copied(),
            u: None,
        }
    }

    pub fn with_u(mut self, u: f64) -> Self {
        self.u = Some(u);
        self
    }

    pub fn get(&self, v: Var) -> Option<f64> {
        match v {
            Var::X1 => self.x1,
            Var::X2 => self.x2,
            Var::U => self.u,
        }
    }
}

/// A parsed expression together with its set of free variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    ast: Ast,
    free_vars: BTreeSet<Var>,
    program: Program,
}

impl Expression {
    pub fn new(ast: Ast) -> Self {
        let mut free_vars = BTreeSet::new();
        collect_vars(&ast, &mut free_vars);
        let program = Program::compile(&ast);
        Expression {
            ast,
            free_vars,
            program,
        }
    }

    pub fn constant(c: f64) -> Self {
        Expression::new(Ast::Const(c))
    }

    pub fn ast(&self) -> &Ast {
        &self.ast
    }

    pub fn free_vars(&self) -> &BTreeSet<Var> {
        &self.free_vars
    }

    pub fn depends_on(&self, v: Var) -> bool {
        self.free_vars.contains(&v)
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn evaluate(&self, bindings: &Bindings) -> Result<f64, EvalError> {
        let mut slots = [0.0; 3];
        for &v in &self.free_vars {
            slots[v.slot()] = bindings.get(v).ok_or(EvalError::UnboundVariable(v.name()))?;
        }
        self.program.eval(&slots)
    }

    /// Evaluates at a spatial point with optional control value; variables
    /// absent from `x` are unbound.
    pub fn eval_at(&self, x: &[f64], u: Option<f64>) -> Result<f64, EvalError> {
        let b = Bindings {
            u,
            ..Bindings::point(x)
        };
        self.evaluate(&b)
    }

    /// `self + scale * other`, built structurally.
    pub fn plus_scaled(&self, scale: f64, other: &Expression) -> Expression {
        let rhs = if scale == 1.0 {
            other.ast.clone()
        } else if scale < 0.0 {
            Ast::Neg(Box::new(Ast::Binary(
                BinOp::Mul,
                Box::new(Ast::Const(-scale)),
                Box::new(other.ast.clone()),
            )))
        } else {
            Ast::Binary(
                BinOp::Mul,
                Box::new(Ast::Const(scale)),
                Box::new(other.ast.clone()),
            )
        };
        Expression::new(Ast::Binary(
            BinOp::Add,
            Box::new(self.ast.clone()),
            Box::new(rhs),
        ))
    }

    /// `scale * self`.
    pub fn scaled(&self, scale: f64) -> Expression {
        Expression::constant(0.0).plus_scaled(scale, self)
    }
}

impl std::str::FromStr for Expression {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.ast)
    }
}

fn collect_vars(ast: &Ast, out: &mut BTreeSet<Var>) {
    match ast {
        Ast::Const(_) => {}
        Ast::Var(v) => {
            out.insert(*v);
        }
        Ast::Neg(a) => collect_vars(a, out),
        Ast::Binary(_, a, b) => {
            collect_vars(a, out);
            collect_vars(b, out);
        }
        Ast::Call(_, args) => args.iter().for_each(|a| collect_vars(a, out)),
    }
}

// Binding strength used by the printer: sums 1, products 2, factors 3, atoms 4.
fn level(ast: &Ast) -> u8 {
    match ast {
        Ast::Binary(BinOp::Add | BinOp::Sub, ..) => 1,
        Ast::Binary(BinOp::Mul | BinOp::Div, ..) => 2,
        Ast::Neg(_) | Ast::Binary(BinOp::Pow, ..) => 3,
        Ast::Const(_) | Ast::Var(_) | Ast::Call(..) => 4,
    }
}

fn write_wrapped(f: &mut fmt::Formatter<'_>, ast: &Ast, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({ast})")
    } else {
        write!(f, "{ast}")
    }
}

/// Prints with the minimal parentheses that re-parse to the same tree.
impl fmt::Display for Ast {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ast::Const(c) => {
                if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) {
                    write!(f, "({c})")
                } else {
                    write!(f, "{c}")
                }
            }
            Ast::Var(v) => f.write_str(v.name()),
            Ast::Neg(a) => {
                f.write_str("-")?;
                write_wrapped(f, a, level(a) < 3)
            }
            Ast::Binary(op, a, b) => {
                let (sym, lhs_parens, rhs_parens) = match op {
                    BinOp::Add => ("+", level(a) < 1, level(b) <= 1),
                    BinOp::Sub => ("-", level(a) < 1, level(b) <= 1),
                    BinOp::Mul => ("*", level(a) < 2, level(b) <= 2),
                    BinOp::Div => ("/", level(a) < 2, level(b) <= 2),
                    BinOp::Pow => ("^", level(a) < 4, level(b) < 3),
                };
                write_wrapped(f, a, lhs_parens)?;
                f.write_str(sym)?;
                write_wrapped(f, b, rhs_parens)
            }
            Ast::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval1(s: &str, x: f64) -> Result<f64, EvalError> {
        parse(s).unwrap().eval_at(&[x], None)
    }

    #[test]
    fn square_parses_to_pow() {
        let e = parse("x1^2").unwrap();
        assert_eq!(
            e.ast(),
            &Ast::Binary(
                BinOp::Pow,
                Box::new(Ast::Var(Var::X1)),
                Box::new(Ast::Const(2.0))
            )
        );
        assert_eq!(eval1("x1^2", 2.0).unwrap(), 4.0);
    }

    #[test]
    fn sign_convention() {
        assert_eq!(eval1("sign(x1)", -0.5).unwrap(), -1.0);
        assert_eq!(eval1("sign(x1)", 0.0).unwrap(), 0.0);
        assert_eq!(eval1("sign(x1)", 3.0).unwrap(), 1.0);
    }

    #[test]
    fn arithmetic_examples() {
        assert_eq!(eval1("(3/2)*x1", 1.0).unwrap(), 1.5);
        assert_eq!(eval1("exp(-(x1^2))", 0.0).unwrap(), 1.0);
        assert_eq!(eval1("2*x1", 3.0).unwrap(), 6.0);
        assert_eq!(eval1("2*x", 3.0).unwrap(), 6.0);
    }

    #[test]
    fn unbalanced_call_reports_offset() {
        match parse("min(x1,") {
            Err(ParseError::Syntax { offset, .. }) => assert_eq!(offset, 7),
            other => panic!("unexpected {other:?}"),
        }
        match parse("x1^^2") {
            Err(ParseError::Syntax { offset, .. }) => assert_eq!(offset, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn division_by_zero_is_domain_error() {
        assert!(matches!(
            eval1("1/x1", 0.0),
            Err(EvalError::Domain { op: "/", .. })
        ));
        assert!(matches!(eval1("log(x1)", 0.0), Err(EvalError::Domain { .. })));
        assert!(matches!(eval1("sqrt(x1)", -1.0), Err(EvalError::Domain { .. })));
        assert!(matches!(eval1("exp(x1)", 1000.0), Err(EvalError::Domain { .. })));
    }

    #[test]
    fn unknown_identifier_and_arity() {
        assert!(matches!(
            parse("y + 1"),
            Err(ParseError::UnknownIdentifier { offset: 0, .. })
        ));
        assert!(matches!(parse("foo(x1)"), Err(ParseError::UnknownIdentifier { .. })));
        assert_eq!(
            parse("min(x1)"),
            Err(ParseError::Arity {
                function: "min".into(),
                got: 1,
                want: 2
            })
        );
        assert!(matches!(parse("exp(x1, x2)"), Err(ParseError::Arity { got: 2, .. })));
    }

    #[test]
    fn unbound_variable() {
        let e = parse("x2 + u").unwrap();
        assert_eq!(
            e.eval_at(&[1.0], None),
            Err(EvalError::UnboundVariable("x2"))
        );
        assert_eq!(e.eval_at(&[1.0, 2.0], Some(0.5)).unwrap(), 2.5);
    }

    #[test]
    fn precedence() {
        // '^' binds tighter than unary minus and is right-associative.
        assert_eq!(eval1("-x1^2", 3.0).unwrap(), -9.0);
        assert_eq!(eval1("2^3^2", 0.0).unwrap(), 512.0);
        assert_eq!(eval1("2^-1", 0.0).unwrap(), 0.5);
        assert_eq!(eval1("1-2-3", 0.0).unwrap(), -4.0);
        assert_eq!(eval1("8/4/2", 0.0).unwrap(), 1.0);
        assert_eq!(eval1("1+2*3^2", 0.0).unwrap(), 19.0);
        assert_eq!(eval1("1.5e1 + .5 + 2.", 0.0).unwrap(), 17.5);
    }

    #[test]
    fn printer_uses_minimal_parentheses() {
        for (src, printed) in [
            ("(x1+1)*2", "(x1+1)*2"),
            ("x1 - (x2 - u)", "x1-(x2-u)"),
            ("(x1 - x2) - u", "x1-x2-u"),
            ("(-x1)^2", "(-x1)^2"),
            ("-(x1^2)", "-x1^2"),
            ("(2^3)^2", "(2^3)^2"),
            ("x1*-x2", "x1*-x2"),
            ("max(x1, 2*u)", "max(x1,2*u)"),
        ] {
            assert_eq!(parse(src).unwrap().to_string(), printed, "{src}");
        }
    }

    #[test]
    fn structural_helpers() {
        let f = parse("x1^2").unwrap();
        let h = parse("exp(-x1^2)").unwrap();
        let g = f.plus_scaled(-0.25, &h);
        let v = g.eval_at(&[1.0], None).unwrap();
        assert!((v - (1.0 - 0.25 * (-1.0f64).exp())).abs() < 1e-15);
        assert_eq!(parse(&g.to_string()).unwrap().ast(), g.ast());
        assert_eq!(f.scaled(3.0).eval_at(&[2.0], None).unwrap(), 12.0);
    }
}
