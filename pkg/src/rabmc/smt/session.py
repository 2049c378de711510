"""Long-lived SMT solver subprocess speaking SMT-LIB 2.6 over pipes.

One session per verification run; every query happens under push/pop so the
base declarations and ground theory facts persist. Solver resolution order:
explicit path, RABMC_SOLVER, z3 on PATH, cvc5 on PATH, the bundled solver.
"""
from __future__ import annotations

import os
import select
import shlex
import shutil
import subprocess
import sys
import time
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from ..normal import nnf
from ..terms import (
    And, ArrayEq, Atom, Const, Exists, FalseF, Forall, Formula, Not, Or,
    RabError, RelAtom, Signature, Sort, SortKind, TRUE, TrueF, Var, and_,
    formula_terms, free_vars, not_, rename_apart, substitute, term_free_vars,
)
from .smtlib import SmtContext, formula_text, smt_symbol, smt_sort

SOLVER_ENV = "RABMC_SOLVER"


class SolverCrash(RabError):
    pass


class SolverTimeout(RabError):
    pass


class FragmentError(RabError):
    """Query fell outside the decidable exists-forall fragment."""


def resolve_solver(path: Optional[str] = None) -> List[str]:
    """Pick the solver command line; see module docstring for the order."""
    if path:
        return _command_for(path)
    env = os.environ.get(SOLVER_ENV)
    if env:
        return _command_for(env)
    z3 = shutil.which("z3")
    if z3:
        return [z3, "-smt2", "-in"]
    cvc5 = shutil.which("cvc5")
    if cvc5:
        return [cvc5, "--incremental", "--lang", "smt2"]
    return [sys.executable, "-m", "rabmc.smt.solver.main"]


def _command_for(spec: str) -> List[str]:
    parts = shlex.split(spec)
    base = os.path.basename(parts[0])
    if len(parts) == 1:
        if base.startswith("z3"):
            return parts + ["-smt2", "-in"]
        if base.startswith("cvc"):
            return parts + ["--incremental", "--lang", "smt2"]
    return parts


@dataclass
class SessionStats:
    queries: int = 0
    sat: int = 0
    unsat: int = 0
    unknown: int = 0
    wall_s: float = 0.0

    def record(self, verdict: str, dt: float) -> None:
        self.queries += 1
        self.wall_s += dt
        if verdict == "sat":
            self.sat += 1
        elif verdict == "unsat":
            self.unsat += 1
        else:
            self.unknown += 1


class SolverSession:
    def __init__(
        self,
        signature: Signature,
        memory_vars: Dict[str, Var],
        memory_arrays: Dict[str, tuple],
        solver: Optional[str] = None,
        timeout_ms: int = 60000,
        keep_log: bool = False,
    ) -> None:
        self.ctx = SmtContext(signature, memory_vars, memory_arrays)
        self.command = resolve_solver(solver)
        self.timeout_ms = timeout_ms
        self.stats = SessionStats()
        self.keep_log = keep_log
        self.log: List[Tuple[str, str]] = []
        self._fresh_n = 0
        self._start()

    # -- process management -------------------------------------------------
    def _start(self) -> None:
        try:
            self.proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                bufsize=1,
            )
        except OSError as e:
            raise SolverCrash(
                f"cannot start solver {self.command!r}: {e}; "
                f"set {SOLVER_ENV} or pass --solver"
            ) from None
        base = os.path.basename(self.command[0])
        cmds = []
        if base.startswith("z3") or self.command[-1].endswith("solver.main"):
            cmds.append(f"(set-option :timeout {self.timeout_ms})")
        cmds += self.ctx.base_commands()
        self._send("\n".join(cmds))

    def _send(self, text: str) -> None:
        try:
            self.proc.stdin.write(text + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError):
            raise SolverCrash(f"solver process died: {self.command!r}") from None

    def _read_line(self, deadline: float) -> str:
        buf = []
        stream = self.proc.stdout
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                self.close()
                raise SolverTimeout("solver did not answer in time")
            r, _, _ = select.select([stream], [], [], min(remaining, 0.5))
            if not r:
                if self.proc.poll() is not None:
                    raise SolverCrash("solver process exited unexpectedly")
                continue
            ch = stream.readline()
            if ch == "":
                raise SolverCrash("solver closed its output")
            line = ch.strip()
            if line:
                return line

    # -- queries ------------------------------------------------------------
    def fresh_const(self, sort: Sort) -> Var:
        self._fresh_n += 1
        return Var(f"@sk!{self._fresh_n}", sort)

    def check_sat_qf(self, f: Formula, extra_vars: Sequence[Var] = ()) -> str:
        """Quantifier-free satisfiability; free variables act as constants."""
        fv = sorted(
            (v for v in free_vars(f) | set(extra_vars)
             if self.ctx.memory_vars.get(v.name) != v),
            key=lambda v: v.name,
        )
        cmds = ["(push 1)"]
        cmds += self.ctx.declare_vars(fv)
        cmds += self.ctx.ground_axioms([f])
        cmds.append(f"(assert {formula_text(f)})")
        cmds.append("(check-sat)")
        t0 = time.monotonic()
        self._send("\n".join(cmds))
        deadline = time.monotonic() + self.timeout_ms / 1000.0 + 5.0
        line = self._read_line(deadline)
        self._send("(pop 1)")
        dt = time.monotonic() - t0
        if line.startswith("(error"):
            self.close()
            raise SolverCrash(f"solver error: {line}")
        if line not in ("sat", "unsat", "unknown"):
            self.close()
            raise SolverCrash(f"unexpected solver answer: {line}")
        self.stats.record(line, dt)
        if self.keep_log:
            self.log.append(("\n".join(cmds), line))
        return line

    def decide_exists_forall(self, matrix: Formula,
                             universals: Sequence[Formula]) -> str:
        """Decide exists (free vars) . matrix /\\ universal blocks.

        Universal blocks quantify index variables only; each is instantiated
        over every ground index term of its sort occurring in the skolemized
        problem plus one fresh witness constant per memory sort.
        """
        qf = _require_qf(matrix)
        taken = {v.name for v in free_vars(qf)}
        for u in universals:
            if isinstance(u, Forall):
                taken |= {v.name for v in free_vars(u)}
        blocks = []
        for u in universals:
            if isinstance(u, Forall):
                u = rename_apart(u, taken)
            blocks.append(_universal_block(u))
        ground: Dict[str, set] = {}
        free = free_vars(qf)
        for _, body in blocks:
            free |= free_vars(body)
        bound_any = set()
        for vs, _ in blocks:
            bound_any |= set(vs)
        free -= bound_any
        for v in free:
            if v.sort.kind is SortKind.MEMORY:
                ground.setdefault(v.sort.name, set()).add(v)
        mem_sorts = {
            s.name: s
            for s in self.ctx.sig.sorts.values()
            if s.kind is SortKind.MEMORY
        }
        needed = {v.sort.name for vs, _ in blocks for v in vs}
        fresh: List[Var] = []
        for sname in sorted(needed):
            w = self.fresh_const(mem_sorts[sname])
            fresh.append(w)
            ground.setdefault(sname, set()).add(w)
        parts = [qf]
        for vs, body in blocks:
            insts = _instantiate(vs, body, ground)
            parts.extend(insts)
        full = and_(*parts)
        if isinstance(full, FalseF):
            return "unsat"
        verdict = self.check_sat_qf(full, extra_vars=list(free) + fresh)
        if verdict == "unknown":
            raise SolverTimeout("solver answered unknown on an exists-forall query")
        return verdict

    def check_entailment(self, lhs: Formula, rhs: Formula) -> bool:
        """T |= lhs -> rhs, via unsat of lhs /\\ not rhs in the EA fragment."""
        goal = and_(lhs, nnf(rhs, negate=True))
        matrix, universals = split_ea(goal)
        return self.decide_exists_forall(matrix, universals) == "unsat"

    def close(self) -> None:
        try:
            if self.proc.poll() is None:
                try:
                    self.proc.stdin.write("(exit)\n")
                    self.proc.stdin.flush()
                except OSError:
                    pass
                try:
                    self.proc.wait(timeout=1)
                except subprocess.TimeoutExpired:
                    self.proc.kill()
        except Exception:
            pass

    def __enter__(self) -> "SolverSession":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


# ---------------------------------------------------------------------------
# Fragment handling


def _require_qf(f: Formula) -> Formula:
    if isinstance(f, (Exists, Forall, ArrayEq)):
        raise FragmentError(f"expected a quantifier-free matrix, got {f!r}")
    if isinstance(f, (And, Or)):
        for a in f.args:
            _require_qf(a)
    elif isinstance(f, Not):
        _require_qf(f.arg)
    return f


def _universal_block(u: Formula) -> Tuple[tuple, Formula]:
    if not isinstance(u, Forall):
        # a universal over zero variables is just a quantifier-free conjunct
        return ((), _require_qf(u))
    vs = u.vars
    body = u.body
    while isinstance(body, Forall):
        vs = vs + body.vars
        body = body.body
    for v in vs:
        if v.sort.kind is not SortKind.MEMORY:
            raise FragmentError(
                f"universal variable {v.name} has non-index sort {v.sort.name}"
            )
    _require_qf(body)
    return (vs, body)


def _instantiate(vs: tuple, body: Formula, ground: Dict[str, set]) -> List[Formula]:
    """All instantiations of vs over ground index terms of matching sorts."""
    out = [body]
    for v in vs:
        cands = sorted(ground.get(v.sort.name, ()), key=lambda t: t.name)
        nxt = []
        for b in out:
            for c in cands:
                nxt.append(substitute(b, {v: c}))
        out = nxt
    return out


def split_ea(f: Formula, _inside_forall: bool = False) -> Tuple[Formula, List[Formula]]:
    """Separate a formula into a qf matrix and top-level universal blocks.

    Existential prefixes become free variables (renamed apart); an existential
    or lambda under a universal leaves the fragment and raises FragmentError.
    """
    taken: set = {v.name for v in free_vars(f)}
    matrix_parts: List[Formula] = []
    universals: List[Formula] = []

    def walk(g: Formula) -> None:
        if isinstance(g, Exists):
            g = rename_apart(g, taken)
            for v in g.vars:
                taken.add(v.name)
            walk(g.body)
            return
        if isinstance(g, Forall):
            g = rename_apart(g, taken)
            for v in g.vars:
                taken.add(v.name)
            _check_forall_body(g.body)
            universals.append(Forall(g.vars, g.body))
            return
        if isinstance(g, ArrayEq):
            from ..normal import normalize_case_lambda

            walk(normalize_case_lambda(g))
            return
        if isinstance(g, And):
            for a in g.args:
                walk(a)
            return
        matrix_parts.append(_check_matrix(g))

    walk(f)
    return and_(*matrix_parts), universals


def _check_matrix(g: Formula) -> Formula:
    if isinstance(g, (TrueF, FalseF, Atom, RelAtom)):
        return g
    if isinstance(g, Not):
        _check_matrix(g.arg)
        return g
    if isinstance(g, (And, Or)):
        for a in g.args:
            _check_matrix(a)
        return g
    if isinstance(g, Forall):
        raise FragmentError("universal quantifier under a disjunction")
    if isinstance(g, Exists):
        raise FragmentError("existential quantifier in a matrix position")
    raise FragmentError(f"unsupported formula {g!r}")


def _check_forall_body(body: Formula) -> None:
    if isinstance(body, Exists):
        raise FragmentError("existential under a universal quantifier")
    if isinstance(body, Forall):
        for v in body.vars:
            if v.sort.kind is not SortKind.MEMORY:
                raise FragmentError("non-index universal variable")
        _check_forall_body(body.body)
        return
    if isinstance(body, (And, Or)):
        for a in body.args:
            _check_forall_body(a)
    elif isinstance(body, Not):
        _check_forall_body(body.arg)
