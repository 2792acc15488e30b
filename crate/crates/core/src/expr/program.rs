use std::collections::HashMap;

use super::{Ast, BinOp, EvalError, Func};

/// Instruction operand: an earlier result, a literal, or a variable slot.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Arg {
    Reg(u32),
    Const(f64),
    Slot(u8),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Instr {
    Neg(Arg),
    Square(Arg),
    Powi(Arg, i32),
    Bin(BinOp, Arg, Arg),
    Call(Func, Arg, Arg),
}

// Hash key with literals compared bitwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Key {
    Reg(u32),
    Const(u64),
    Slot(u8),
}

fn key(a: Arg) -> Key {
    match a {
        Arg::Reg(r) => Key::Reg(r),
        Arg::Const(c) => Key::Const(c.to_bits()),
        Arg::Slot(s) => Key::Slot(s),
    }
}

/// Register form of an [`Ast`] for hot loops: literals are folded, repeated
/// subexpressions are computed once, and operands are read in place.
///
/// Variable slots are `[x1, x2, u]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    instrs: Vec<Instr>,
    result: Arg,
}

const INLINE_REGS: usize = 32;

struct Compiler {
    instrs: Vec<Instr>,
    seen: HashMap<(u8, i64, Key, Key), u32>,
}

impl Compiler {
    fn push(&mut self, ins: Instr) -> Arg {
        let k = match ins {
            Instr::Neg(a) => (0, 0, key(a), Key::Slot(0)),
            Instr::Square(a) => (1, 0, key(a), Key::Slot(0)),
            Instr::Powi(a, n) => (2, n as i64, key(a), Key::Slot(0)),
            Instr::Bin(op, a, b) => (3, op as i64, key(a), key(b)),
            Instr::Call(f, a, b) => (4, f as i64, key(a), key(b)),
        };
        if let Some(&r) = self.seen.get(&k) {
            return Arg::Reg(r);
        }
        let r = self.instrs.len() as u32;
        self.instrs.push(ins);
        self.seen.insert(k, r);
        Arg::Reg(r)
    }

    fn emit(&mut self, ast: &Ast) -> Arg {
        match ast {
            Ast::Const(c) => Arg::Const(*c),
            Ast::Var(v) => Arg::Slot(v.slot() as u8),
            Ast::Neg(a) => {
                let a = self.emit(a);
                self.fold(Instr::Neg(a))
            }
            Ast::Binary(op, a, b) => {
                let a = self.emit(a);
                let b = self.emit(b);
                let ins = match (op, b) {
                    (BinOp::Pow, Arg::Const(e)) if e == 2.0 => Instr::Square(a),
                    (BinOp::Pow, Arg::Const(e)) if e.fract() == 0.0 && e.abs() < 64.0 => {
                        Instr::Powi(a, e as i32)
                    }
                    _ => Instr::Bin(*op, a, b),
                };
                self.fold(ins)
            }
            Ast::Call(f, args) => {
                let a = self.emit(&args[0]);
                let b = if args.len() > 1 { self.emit(&args[1]) } else { Arg::Const(0.0) };
                self.fold(Instr::Call(*f, a, b))
            }
        }
    }

    // Literal-only instructions are evaluated now when that succeeds;
    // failures stay in the program so they surface at evaluation.
    fn fold(&mut self, ins: Instr) -> Arg {
        let all_const = match ins {
            Instr::Neg(a) | Instr::Square(a) | Instr::Powi(a, _) => matches!(a, Arg::Const(_)),
            Instr::Bin(_, a, b) | Instr::Call(_, a, b) => {
                matches!(a, Arg::Const(_)) && matches!(b, Arg::Const(_))
            }
        };
        if all_const {
            if let Ok(v) = exec(&ins, &[], &[0.0; 3]) {
                return Arg::Const(v);
            }
        }
        self.push(ins)
    }
}

impl Program {
    pub fn compile(ast: &Ast) -> Self {
        let mut c = Compiler {
            instrs: Vec::new(),
            seen: HashMap::new(),
        };
        let result = c.emit(ast);
        Program {
            instrs: c.instrs,
            result,
        }
    }

    /// Number of instructions after folding and sharing.
    pub fn len(&self) -> usize {
        self.instrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instrs.is_empty()
    }

    pub fn eval(&self, slots: &[f64; 3]) -> Result<f64, EvalError> {
        let n = self.instrs.len();
        if n <= 4 {
            let mut regs = [0.0f64; 4];
            run(&self.instrs, self.result, slots, &mut regs)
        } else if n <= 12 {
            let mut regs = [0.0f64; 12];
            run(&self.instrs, self.result, slots, &mut regs)
        } else if n <= INLINE_REGS {
            let mut regs = [0.0f64; INLINE_REGS];
            run(&self.instrs, self.result, slots, &mut regs)
        } else {
            let mut regs = vec![0.0f64; self.instrs.len()];
            run(&self.instrs, self.result, slots, &mut regs)
        }
    }

    /// Evaluates at a spatial point (`x.len()` is 1 or 2) with control `u`.
    #[inline]
    pub fn eval_point(&self, x: &[f64], u: f64) -> Result<f64, EvalError> {
        let slots = [x[0], if x.len() > 1 { x[1] } else { 0.0 }, u];
        self.eval(&slots)
    }
}

#[inline(always)]
fn read(a: Arg, regs: &[f64], slots: &[f64; 3]) -> f64 {
    match a {
        Arg::Reg(r) => regs[r as usize],
        Arg::Const(c) => c,
        Arg::Slot(s) => slots[s as usize],
    }
}

// Unchecked pass; any non-finite intermediate or domain violation sends
// evaluation through the checked pass to name the failing operation.
#[inline]
fn run(instrs: &[Instr], result: Arg, slots: &[f64; 3], regs: &mut [f64]) -> Result<f64, EvalError> {
    let mut bad = false;
    for (i, ins) in instrs.iter().enumerate() {
        let (v, violated) = exec_fast(ins, regs, slots);
        bad |= violated | !v.is_finite();
        regs[i] = v;
    }
    if bad {
        for (i, ins) in instrs.iter().enumerate() {
            regs[i] = exec(ins, regs, slots)?;
        }
    }
    let v = read(result, regs, slots);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::Domain { op: "value", operand: v })
    }
}

#[inline(always)]
fn checked(op: &'static str, operand: f64, value: f64) -> Result<f64, EvalError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(EvalError::Domain { op, operand })
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline(always)]
fn exec_fast(ins: &Instr, regs: &[f64], slots: &[f64; 3]) -> (f64, bool) {
    match *ins {
        Instr::Neg(a) => (-read(a, regs, slots), false),
        Instr::Square(a) => {
            let l = read(a, regs, slots);
            (l * l, false)
        }
        Instr::Powi(a, n) => (read(a, regs, slots).powi(n), false),
        Instr::Bin(op, a, b) => {
            let l = read(a, regs, slots);
            let r = read(b, regs, slots);
            match op {
                BinOp::Add => (l + r, false),
                BinOp::Sub => (l - r, false),
                BinOp::Mul => (l * r, false),
                BinOp::Div => (l / r, r == 0.0),
                BinOp::Pow => (l.powf(r), false),
            }
        }
        Instr::Call(f, a, b) => {
            let x = read(a, regs, slots);
            match f {
                Func::Sin => (x.sin(), false),
                Func::Cos => (x.cos(), false),
                Func::Exp => (x.exp(), false),
                Func::Log => (x.ln(), x <= 0.0),
                Func::Sqrt => (x.sqrt(), x < 0.0),
                Func::Tanh => (x.tanh(), false),
                Func::Abs => (x.abs(), false),
                Func::Sign => (sign(x), !x.is_finite()),
                Func::Min => {
                    let y = read(b, regs, slots);
                    (x.min(y), !(x.is_finite() && y.is_finite()))
                }
                Func::Max => {
                    let y = read(b, regs, slots);
                    (x.max(y), !(x.is_finite() && y.is_finite()))
                }
            }
        }
    }
}

#[inline(always)]
fn exec(ins: &Instr, regs: &[f64], slots: &[f64; 3]) -> Result<f64, EvalError> {
    Ok(match *ins {
        Instr::Neg(a) => -read(a, regs, slots),
        Instr::Square(a) => {
            let l = read(a, regs, slots);
            checked("^", l, l * l)?
        }
        Instr::Powi(a, n) => {
            let l = read(a, regs, slots);
            checked("^", l, l.powi(n))?
        }
        Instr::Bin(op, a, b) => {
            let l = read(a, regs, slots);
            let r = read(b, regs, slots);
            match op {
                BinOp::Add => checked("+", l, l + r)?,
                BinOp::Sub => checked("-", l, l - r)?,
                BinOp::Mul => checked("*", l, l * r)?,
                BinOp::Div => {
                    if r == 0.0 {
                        return Err(EvalError::Domain { op: "/", operand: r });
                    }
                    checked("/", l, l / r)?
                }
                BinOp::Pow => checked("^", l, l.powf(r))?,
            }
        }
        Instr::Call(f, a, b) => {
            let x = read(a, regs, slots);
            let v = match f {
                Func::Sin => x.sin(),
                Func::Cos => x.cos(),
                Func::Exp => x.exp(),
                Func::Log => {
                    if x <= 0.0 {
                        return Err(EvalError::Domain { op: "log", operand: x });
                    }
                    x.ln()
                }
                Func::Sqrt => {
                    if x < 0.0 {
                        return Err(EvalError::Domain { op: "sqrt", operand: x });
                    }
                    x.sqrt()
                }
                Func::Tanh => x.tanh(),
                Func::Abs => x.abs(),
                Func::Sign => sign(x),
                Func::Min => x.min(read(b, regs, slots)),
                Func::Max => x.max(read(b, regs, slots)),
            };
            checked(f.name(), x, v)?
        }
    })
}

#[cfg(test)]
mod tests {
    use crate::expr::Expression;

    #[test]
    fn repeated_subexpressions_are_shared() {
        let e: Expression = "1.75 + min(x^2,1)*(-0.5625 + min(x^2,1)*(0.125 - 0.0625*min(x^2,1)))"
            .parse()
            .unwrap();
        // x^2, min, and six arithmetic steps
        assert_eq!(e.program().len(), 8);
        assert!((e.eval_at(&[0.5], None).unwrap() - 1.616_210_937_5).abs() < 1e-12);
    }

    #[test]
    fn literal_subtrees_fold() {
        let e: Expression = "(3/2)*x1 + 2^3".parse().unwrap();
        assert_eq!(e.program().len(), 2);
        let bad: Expression = "1/0 + x".parse().unwrap();
        assert!(bad.eval_at(&[1.0], None).is_err());
    }
}
