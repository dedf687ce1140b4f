use super::ast::{BinOp, Func, Node, NodeKind, Span, Var};
use super::Point;

#[derive(Debug, Clone, Copy)]
enum Op {
    Push(f64),
    Load(Var),
    Neg,
    Add,
    Sub,
    Mul,
    Div(Span),
    Pow(Span),
    Unary(Func, Span),
    Min,
    Max,
}

/// Postfix program compiled from a syntax tree.
#[derive(Debug, Clone)]
pub struct Program {
    ops: Vec<Op>,
    max_stack: usize,
}

const INLINE_STACK: usize = 32;

impl Program {
    pub fn compile(node: &Node) -> Self {
        let mut ops = Vec::new();
        emit(node, &mut ops);
        let mut depth = 0usize;
        let mut max_stack = 0usize;
        for op in &ops {
            match op {
                Op::Push(_) | Op::Load(_) => depth += 1,
                Op::Neg | Op::Unary(..) => {}
                _ => depth -= 1,
            }
            max_stack = max_stack.max(depth);
        }
        Self { ops, max_stack }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub(super) fn run(&self, p: &Point<'_>) -> Result<f64, (&'static str, Span)> {
        if self.max_stack <= INLINE_STACK {
            let mut stack = [0.0f64; INLINE_STACK];
            self.exec(p, &mut stack)
        } else {
            let mut stack = vec![0.0f64; self.max_stack];
            self.exec(p, &mut stack)
        }
    }

    fn exec(&self, p: &Point<'_>, stack: &mut [f64]) -> Result<f64, (&'static str, Span)> {
        let mut sp = 0usize;
        for op in &self.ops {
            match *op {
                Op::Push(v) => {
                    stack[sp] = v;
                    sp += 1;
                }
                Op::Load(var) => {
                    stack[sp] = match var {
                        Var::T => p.t,
                        Var::X(i) => p.x[i],
                        Var::Y => p.y,
                        Var::Z(i) => p.z[i],
                        Var::U(i) => p.u[i],
                    };
                    sp += 1;
                }
                Op::Neg => stack[sp - 1] = -stack[sp - 1],
                Op::Unary(f, span) => {
                    let a = stack[sp - 1];
                    stack[sp - 1] = match f {
                        Func::Sin => a.sin(),
                        Func::Cos => a.cos(),
                        Func::Exp => a.exp(),
                        Func::Tanh => a.tanh(),
                        Func::Abs => a.abs(),
                        Func::Log => {
                            if a <= 0.0 {
                                return Err(("log", span));
                            }
                            a.ln()
                        }
                        Func::Sqrt => {
                            if a < 0.0 {
                                return Err(("sqrt", span));
                            }
                            a.sqrt()
                        }
                        Func::Min | Func::Max => unreachable!("binary function"),
                    };
                }
                _ => {
                    sp -= 1;
                    let b = stack[sp];
                    let a = stack[sp - 1];
                    stack[sp - 1] = match *op {
                        Op::Add => a + b,
                        Op::Sub => a - b,
                        Op::Mul => a * b,
                        Op::Min => a.min(b),
                        Op::Max => a.max(b),
                        Op::Div(span) => {
                            if b == 0.0 {
                                return Err(("division", span));
                            }
                            a / b
                        }
                        Op::Pow(span) => {
                            let r = a.powf(b);
                            if r.is_nan() && !a.is_nan() && !b.is_nan() {
                                return Err(("power", span));
                            }
                            r
                        }
                        _ => unreachable!(),
                    };
                }
            }
        }
        debug_assert_eq!(sp, 1);
        Ok(stack[0])
    }
}

fn emit(node: &Node, ops: &mut Vec<Op>) {
    match &node.kind {
        NodeKind::Num(v) => ops.push(Op::Push(*v)),
        NodeKind::Var(v) => ops.push(Op::Load(*v)),
        NodeKind::Neg(a) => {
            emit(a, ops);
            ops.push(Op::Neg);
        }
        NodeKind::Bin(op, l, r) => {
            emit(l, ops);
            emit(r, ops);
            ops.push(match op {
                BinOp::Add => Op::Add,
                BinOp::Sub => Op::Sub,
                BinOp::Mul => Op::Mul,
                BinOp::Div => Op::Div(node.span),
                BinOp::Pow => Op::Pow(node.span),
            });
        }
        NodeKind::Call(f, args) => {
            for a in args {
                emit(a, ops);
            }
            ops.push(match f {
                Func::Min => Op::Min,
                Func::Max => Op::Max,
                _ => Op::Unary(*f, node.span),
            });
        }
    }
}
