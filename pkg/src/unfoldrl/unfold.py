"""Unfold policies into straight-line programs, emit text, interpret.

The unfolded program performs the same scalar float64 operations in the same
order as the folded predict path, so for every in-range state

    interpret(unfold(p), s) == predict(p, s)

holds exactly, bit for bit.  Affine rows lower to a multiply-add chain that
mirrors the sequential ``cumsum`` reduction; relu lowers to a compare-select;
argmax lowers to a strict-greater scan where the running best is statically
known, so the IR needs no register reassignment and exactly one SetAction
executes per run.

Emitted text is a fixed minimal imperative grammar (see
docs/unfolded-grammar.md): one statement per line, 4-space indents, floats at
``float_digits`` significant digits.  The interpreter always executes
full-precision constants; text precision only affects the size metric.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, ValidationError
from .policies import (
    CLASSIFY,
    AxisTree,
    LinearPolicy,
    ObliqueTree,
    Policy,
    ReluMlp,
)

# ---------------------------------------------------------------------------
# instruction set
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LoadInput:
    dst: int
    index: int


@dataclass(frozen=True)
class Const:
    dst: int
    value: float


@dataclass(frozen=True)
class Mul:
    dst: int
    a: int
    b: int


@dataclass(frozen=True)
class Add:
    dst: int
    a: int
    b: int


@dataclass(frozen=True)
class Relu:
    dst: int
    a: int


@dataclass(frozen=True)
class CmpGt:
    flag: int
    a: int
    b: int


@dataclass(frozen=True)
class CmpLe:
    flag: int
    a: int
    b: int


@dataclass(frozen=True)
class If:
    flag: int
    then: tuple
    orelse: tuple


@dataclass(frozen=True)
class SetAction:
    value: object  # int action index, or tuple of register ids


Instr = (LoadInput, Const, Mul, Add, Relu, CmpGt, CmpLe, If, SetAction)


def validate_instrs(instrs, n_registers: int) -> None:
    """Static checks: registers written before read, exactly one SetAction
    on every execution path, and nothing after the action is set."""

    def need(written, *regs):
        for r in regs:
            if r not in written:
                raise ValidationError(f"register {r} read before write")

    def claim(written, dst):
        if not 0 <= dst < n_registers:
            raise ValidationError(f"register {dst} out of range")
        written.add(dst)

    def walk(block, written) -> bool:
        """Returns True iff the block always executes exactly one SetAction."""
        for pos, ins in enumerate(block):
            last = pos == len(block) - 1
            if isinstance(ins, LoadInput):
                claim(written, ins.dst)
            elif isinstance(ins, Const):
                claim(written, ins.dst)
            elif isinstance(ins, (Mul, Add)):
                need(written, ins.a, ins.b)
                claim(written, ins.dst)
            elif isinstance(ins, Relu):
                need(written, ins.a)
                claim(written, ins.dst)
            elif isinstance(ins, (CmpGt, CmpLe)):
                need(written, ins.a, ins.b)
                claim(written, ins.flag)
            elif isinstance(ins, If):
                need(written, ins.flag)
                then_w = set(written)
                else_w = set(written)
                then_sets = walk(ins.then, then_w)
                else_sets = walk(ins.orelse, else_w)
                if then_sets != else_sets:
                    raise ValidationError("only one If branch sets the action")
                written |= then_w & else_w
                if then_sets:
                    if not last:
                        raise ValidationError("instructions after the action is set")
                    return True
            elif isinstance(ins, SetAction):
                if isinstance(ins.value, tuple):
                    need(written, *ins.value)
                if not last:
                    raise ValidationError("instructions after the action is set")
                return True
            else:
                raise ValidationError(f"unknown instruction {ins!r}")
        return False

    if not walk(instrs, set()):
        raise ValidationError("some execution path never sets an action")


def count_instrs(instrs) -> int:
    total = 0
    for ins in instrs:
        total += 1
        if isinstance(ins, If):
            total += count_instrs(ins.then) + count_instrs(ins.orelse)
    return total


# ---------------------------------------------------------------------------
# emission statements (one per text line or block)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _AffineStmt:
    name: str
    terms: tuple  # ((coeff, source name), ...)
    bias: float


@dataclass(frozen=True)
class _ReluStmt:
    name: str
    src: str


@dataclass(frozen=True)
class _ArgmaxStmt:
    scores: tuple  # score register names in index order


@dataclass(frozen=True)
class _IfStmt:
    terms: tuple  # ((coeff, source name), ...); single unit term for axis splits
    axis: bool
    threshold: float
    then: tuple
    orelse: tuple


@dataclass(frozen=True)
class _ReturnStmt:
    payload: object  # tuple of names, or tuple of floats for leaf constants
    named: bool


def _fmt(value: float, digits: int) -> str:
    return format(float(value), f".{digits}g")


def _affine_expr(terms, bias, digits: int, with_bias: bool) -> str:
    parts = []
    for coeff, src in terms:
        mag = _fmt(abs(coeff), digits)
        if not parts:
            sign = "-" if coeff < 0 else ""
            parts.append(f"{sign}{mag}*{src}")
        else:
            sign = "-" if coeff < 0 else "+"
            parts.append(f"{sign}{mag}*{src}")
    if with_bias:
        sign = "-" if bias < 0 else "+"
        parts.append(f"{sign}{_fmt(abs(bias), digits)}")
    return " ".join(parts)


def _emit_block(stmts, digits: int, indent: int, out: list) -> None:
    pad = "    " * indent
    for stmt in stmts:
        if isinstance(stmt, _AffineStmt):
            out.append(f"{pad}{stmt.name} = {_affine_expr(stmt.terms, stmt.bias, digits, True)}")
        elif isinstance(stmt, _ReluStmt):
            out.append(f"{pad}{stmt.name} = relu({stmt.src})")
        elif isinstance(stmt, _ArgmaxStmt):
            names = stmt.scores
            if len(names) == 1:
                out.append(f"{pad}action = 0")
                continue
            out.append(f"{pad}max_val = {names[0]}")
            out.append(f"{pad}action = 0")
            for i, name in enumerate(names[1:], start=1):
                out.append(f"{pad}if {name} > max_val:")
                if i < len(names) - 1:
                    out.append(f"{pad}    max_val = {name}")
                out.append(f"{pad}    action = {i}")
        elif isinstance(stmt, _IfStmt):
            if stmt.axis:
                lhs = stmt.terms[0][1]
            else:
                lhs = _affine_expr(stmt.terms, 0.0, digits, False)
            out.append(f"{pad}if {lhs} <= {_fmt(stmt.threshold, digits)}:")
            _emit_block(stmt.then, digits, indent + 1, out)
            out.append(f"{pad}else:")
            _emit_block(stmt.orelse, digits, indent + 1, out)
        elif isinstance(stmt, _ReturnStmt):
            if stmt.named:
                vals = stmt.payload
            else:
                vals = tuple(_fmt(v, digits) for v in stmt.payload)
            body = vals[0] if len(vals) == 1 else "(" + ", ".join(vals) + ")"
            out.append(f"{pad}action = {body}")
        else:  # plain discrete leaf
            out.append(f"{pad}action = {stmt}")


# ---------------------------------------------------------------------------
# program
# ---------------------------------------------------------------------------

# compact opcodes for the interpreter loop
_LOAD, _CONST, _MUL, _ADD, _RELU, _CGT, _CLE, _IF, _SETI, _SETR = range(10)


@dataclass(frozen=True)
class Program:
    """A policy unfolded into straight-line scalar instructions."""

    instrs: tuple
    source_class: str
    task: str
    state_dim: int
    n_registers: int
    text: str
    size_bytes: int
    stmts: tuple = field(repr=False, default=())
    code: tuple = field(repr=False, default=())


def emit_text(program_or_stmts, float_digits: int = 6) -> str:
    """Canonical text rendering; floats at float_digits significant digits."""
    if float_digits < 1:
        raise ValidationError("float_digits must be >= 1")
    stmts = (
        program_or_stmts.stmts
        if isinstance(program_or_stmts, Program)
        else tuple(program_or_stmts)
    )
    lines: list = []
    _emit_block(stmts, float_digits, 0, lines)
    return "\n".join(lines) + "\n"


class _Builder:
    def __init__(self, state_dim: int):
        self.state_dim = state_dim
        self.n = 0
        self.names: dict = {}
        self.preamble = []
        for i in range(state_dim):
            self.preamble.append(LoadInput(self.fresh(f"s[{i}]"), i))

    def fresh(self, name: str | None = None) -> int:
        reg = self.n
        self.n += 1
        if name is not None:
            self.names[name] = reg
        return reg

    def affine(self, terms, bias: float, out_name: str | None) -> tuple:
        """Multiply-add chain matching the sequential cumsum reduction.
        Returns (instrs, result register)."""
        instrs = []
        acc = None
        for coeff, src in terms:
            c = self.fresh()
            instrs.append(Const(c, float(coeff)))
            m = self.fresh()
            instrs.append(Mul(m, c, self.names[src]))
            if acc is None:
                acc = m
            else:
                nxt = self.fresh()
                instrs.append(Add(nxt, acc, m))
                acc = nxt
        if bias is None:
            return instrs, acc
        b = self.fresh()
        instrs.append(Const(b, float(bias)))
        dst = self.fresh(out_name)
        instrs.append(Add(dst, acc, b))
        return instrs, dst

    def argmax(self, score_regs) -> tuple:
        """Nested strict-greater scan; the running best register is static on
        every path, so each branch compares against a known register and ends
        in its own SetAction."""

        def scan(best: int, nxt: int):
            if nxt == len(score_regs):
                return (SetAction(best),)
            flag = self.fresh()
            return (
                CmpGt(flag, score_regs[nxt], score_regs[best]),
                If(flag, scan(nxt, nxt + 1), scan(best, nxt + 1)),
            )

        return scan(0, 1)


def _lower_tree(policy, build: _Builder, idx: int) -> tuple:
    node = policy.nodes[idx]
    if node.is_leaf:
        if policy.task == CLASSIFY:
            return (SetAction(int(node.value)),), (int(node.value),)
        instrs = []
        regs = []
        for v in node.value:
            r = build.fresh()
            instrs.append(Const(r, float(v)))
            regs.append(r)
        stmt = _ReturnStmt(tuple(float(v) for v in node.value), named=False)
        return (*instrs, SetAction(tuple(regs))), (stmt,)
    if hasattr(node, "feature"):
        terms = ((1.0, f"s[{node.feature}]"),)
        proj_instrs = []
        proj_reg = build.names[f"s[{node.feature}]"]
        axis = True
    else:
        terms = tuple((float(w), f"s[{j}]") for j, w in enumerate(node.weights))
        proj_instrs, proj_reg = build.affine(terms, None, None)
        axis = False
    t_reg = build.fresh()
    flag = build.fresh()
    head = (*proj_instrs, Const(t_reg, float(node.threshold)), CmpLe(flag, proj_reg, t_reg))
    then_i, then_s = _lower_tree(policy, build, node.left)
    else_i, else_s = _lower_tree(policy, build, node.right)
    instrs = (*head, If(flag, then_i, else_i))
    stmt = _IfStmt(terms, axis, float(node.threshold), then_s, else_s)
    return instrs, (stmt,)


def unfold(policy: Policy, state_dim: int | None = None) -> Program:
    """Convert a policy into an equivalent straight-line Program.

    state_dim widens the input vector for trees that do not reference every
    feature; linear and mlp policies fix their own input width.
    """
    if isinstance(policy, LinearPolicy):
        build = _Builder(policy.state_dim)
        instrs = list(build.preamble)
        stmts = []
        score_regs = []
        names = []
        for i in range(policy.weights.shape[0]):
            terms = tuple(
                (float(w), f"s[{j}]") for j, w in enumerate(policy.weights[i])
            )
            name = f"y{i}"
            chain, dst = build.affine(terms, float(policy.bias[i]), name)
            instrs.extend(chain)
            stmts.append(_AffineStmt(name, terms, float(policy.bias[i])))
            score_regs.append(dst)
            names.append(name)
        if policy.task == CLASSIFY:
            instrs.extend(build.argmax(score_regs))
            stmts.append(_ArgmaxStmt(tuple(names)))
        else:
            instrs.append(SetAction(tuple(score_regs)))
            stmts.append(_ReturnStmt(tuple(names), named=True))
        source = "linear"
        state_dim = policy.state_dim
    elif isinstance(policy, (AxisTree, ObliqueTree)):
        state_dim = max(_tree_state_dim(policy), state_dim or 1)
        build = _Builder(state_dim)
        body, stmts = _lower_tree(policy, build, 0)
        instrs = list(build.preamble) + list(body)
        stmts = list(stmts)
        source = "axis_tree" if isinstance(policy, AxisTree) else "oblique_tree"
    elif isinstance(policy, ReluMlp):
        build = _Builder(policy.state_dim)
        instrs = list(build.preamble)
        stmts = []
        prev = [f"s[{j}]" for j in range(policy.state_dim)]
        last = len(policy.layers) - 1
        score_regs = []
        names = []
        for li, (w, b) in enumerate(policy.layers):
            cur = []
            for i in range(w.shape[0]):
                terms = tuple((float(c), prev[j]) for j, c in enumerate(w[i]))
                if li == last:
                    name = f"y{i}"
                else:
                    name = f"z{li + 1}_{i}"
                chain, dst = build.affine(terms, float(b[i]), name)
                instrs.extend(chain)
                stmts.append(_AffineStmt(name, terms, float(b[i])))
                if li == last:
                    score_regs.append(dst)
                    names.append(name)
                else:
                    h = f"h{li + 1}_{i}"
                    hr = build.fresh(h)
                    instrs.append(Relu(hr, dst))
                    stmts.append(_ReluStmt(h, name))
                    cur.append(h)
            prev = cur
        if policy.task == CLASSIFY:
            instrs.extend(build.argmax(score_regs))
            stmts.append(_ArgmaxStmt(tuple(names)))
        else:
            instrs.append(SetAction(tuple(score_regs)))
            stmts.append(_ReturnStmt(tuple(names), named=True))
        source = "relu_mlp"
        state_dim = policy.state_dim
    else:
        raise ValidationError(f"cannot unfold {type(policy)!r}")

    instrs = tuple(instrs)
    stmts = tuple(stmts)
    validate_instrs(instrs, build.n)
    text = emit_text(stmts, 6)
    return Program(
        instrs=instrs,
        source_class=source,
        task=policy.task,
        state_dim=state_dim,
        n_registers=build.n,
        text=text,
        size_bytes=len(text.encode("utf-8")),
        stmts=stmts,
        code=_compile(instrs),
    )


def _tree_state_dim(policy) -> int:
    dim = 0
    for node in policy.nodes:
        if node.is_leaf:
            continue
        if hasattr(node, "feature"):
            dim = max(dim, node.feature + 1)
        else:
            dim = max(dim, len(node.weights))
    return max(dim, 1)


def _compile(instrs) -> tuple:
    code = []
    for ins in instrs:
        if isinstance(ins, LoadInput):
            code.append((_LOAD, ins.dst, ins.index))
        elif isinstance(ins, Const):
            code.append((_CONST, ins.dst, ins.value))
        elif isinstance(ins, Mul):
            code.append((_MUL, ins.dst, ins.a, ins.b))
        elif isinstance(ins, Add):
            code.append((_ADD, ins.dst, ins.a, ins.b))
        elif isinstance(ins, Relu):
            code.append((_RELU, ins.dst, ins.a))
        elif isinstance(ins, CmpGt):
            code.append((_CGT, ins.flag, ins.a, ins.b))
        elif isinstance(ins, CmpLe):
            code.append((_CLE, ins.flag, ins.a, ins.b))
        elif isinstance(ins, If):
            code.append((_IF, ins.flag, _compile(ins.then), _compile(ins.orelse)))
        elif isinstance(ins, SetAction):
            if isinstance(ins.value, tuple):
                code.append((_SETR, ins.value))
            else:
                code.append((_SETI, ins.value))
    return tuple(code)


def _run(code, regs, state, counts=None):
    for ins in code:
        op = ins[0]
        if counts is not None:
            counts[op] += 1
        if op == _MUL:
            regs[ins[1]] = regs[ins[2]] * regs[ins[3]]
        elif op == _ADD:
            regs[ins[1]] = regs[ins[2]] + regs[ins[3]]
        elif op == _CONST:
            regs[ins[1]] = ins[2]
        elif op == _LOAD:
            regs[ins[1]] = float(state[ins[2]])
        elif op == _RELU:
            v = regs[ins[2]]
            regs[ins[1]] = v if v > 0.0 else 0.0
        elif op == _CGT:
            regs[ins[1]] = regs[ins[2]] > regs[ins[3]]
        elif op == _CLE:
            regs[ins[1]] = regs[ins[2]] <= regs[ins[3]]
        elif op == _IF:
            result = _run(ins[2] if regs[ins[1]] else ins[3], regs, state, counts)
            if result is not None:
                return result
        elif op == _SETI:
            return ins[1]
        else:
            return np.array([regs[i] for i in ins[1]], dtype=np.float64)
    return None


def interpret(program: Program, state):
    """Execute the program on one state; equals predict on the source policy."""
    state = np.asarray(state, dtype=np.float64)
    if state.shape != (program.state_dim,):
        raise ShapeError(
            f"expected state of length {program.state_dim}, got shape {state.shape}"
        )
    regs = [0.0] * program.n_registers
    return _run(program.code, regs, state)


def interpret_counted(program: Program, state):
    """interpret plus per-opcode executed-instruction counts."""
    state = np.asarray(state, dtype=np.float64)
    if state.shape != (program.state_dim,):
        raise ShapeError(
            f"expected state of length {program.state_dim}, got shape {state.shape}"
        )
    regs = [0.0] * program.n_registers
    counts = [0] * 10
    action = _run(program.code, regs, state, counts)
    labels = (
        "load", "const", "mul", "add", "relu", "cmp_gt", "cmp_le", "if",
        "set_action", "set_action",
    )
    by_op: dict = {}
    for op, c in zip(labels, counts):
        if c:
            by_op[op] = by_op.get(op, 0) + c
    return action, {"total": sum(counts), "by_op": by_op}
