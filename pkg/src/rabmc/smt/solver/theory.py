"""Conjunction-level decision procedures for the bundled solver.

Handles EUF with free n-ary functions combined with linear integer or real
arithmetic. The combination is exact for tame signatures where arithmetic
sorts never appear as function argument sorts (the only shape the verifier
emits): congruence closure propagates equalities between arithmetic-sorted
applications into the arithmetic solver, and nothing needs to flow back.

Terms are hashable tuples:
    ("app", name, arg, ...)                 application / constant (no args)
    ("num", Fraction)                       numeral
    ("sum", ((coeff, term), ...), const)    linear combination
Atoms are ("eq" | "le" | "lt", lhs, rhs); literals are (polarity, atom).
"""
from __future__ import annotations

from fractions import Fraction
from math import ceil, floor, gcd
from typing import Dict, List, Optional, Sequence, Tuple

ZERO = Fraction(0)
ONE = Fraction(1)


class SolverUnknown(Exception):
    """Search budget ran out; reported as 'unknown', never as a verdict."""


# ---------------------------------------------------------------------------
# Delta rationals: q + d*epsilon with epsilon infinitesimal


class DR(tuple):
    __slots__ = ()

    def __new__(cls, q, d=ZERO):
        return tuple.__new__(cls, (Fraction(q), Fraction(d)))

    @property
    def q(self):
        return self[0]

    @property
    def d(self):
        return self[1]

    def __add__(self, o):
        return DR(self[0] + o[0], self[1] + o[1])

    def __sub__(self, o):
        return DR(self[0] - o[0], self[1] - o[1])

    def scale(self, k):
        return DR(self[0] * k, self[1] * k)


DR_ZERO = DR(0)


# ---------------------------------------------------------------------------
# Congruence closure


class CCConflict(Exception):
    pass


class CongruenceClosure:
    def __init__(self) -> None:
        self.ids: Dict[tuple, int] = {}
        self.terms: List[tuple] = []
        self.parent: List[int] = []
        self.args_of: List[Tuple[str, Tuple[int, ...]]] = []
        self.diseqs: List[Tuple[int, int]] = []

    def intern(self, t: tuple) -> int:
        if t in self.ids:
            return self.ids[t]
        if t[0] == "app":
            arg_ids = tuple(self.intern(a) for a in t[2:])
            key = t[1]
        elif t[0] == "sum":
            arg_ids = tuple(self.intern(b) for _, b in t[1])
            key = "sum"
        else:
            arg_ids = ()
            key = ""
        i = len(self.terms)
        self.ids[t] = i
        self.terms.append(t)
        self.parent.append(i)
        self.args_of.append((str(key), arg_ids))
        return i

    def find(self, x: int) -> int:
        p = self.parent
        while p[x] != x:
            p[x] = p[p[x]]
            x = p[x]
        return x

    def merge(self, a: int, b: int) -> None:
        work = [(a, b)]
        while work:
            x, y = work.pop()
            rx, ry = self.find(x), self.find(y)
            if rx == ry:
                continue
            self.parent[rx] = ry
            # congruence sweep: cheap and adequate at our term counts
            sig: Dict[Tuple[str, Tuple[int, ...]], int] = {}
            for t in range(len(self.terms)):
                name, arg_ids = self.args_of[t]
                if not arg_ids or name == "sum":
                    continue
                key = (name, tuple(self.find(ai) for ai in arg_ids))
                other = sig.get(key)
                if other is None:
                    sig[key] = t
                elif self.find(other) != self.find(t):
                    work.append((other, t))
        for x, y in self.diseqs:
            if self.find(x) == self.find(y):
                raise CCConflict()

    def add_diseq(self, a: int, b: int) -> None:
        self.diseqs.append((a, b))
        if self.find(a) == self.find(b):
            raise CCConflict()

    def same(self, a: int, b: int) -> bool:
        return self.find(a) == self.find(b)


# ---------------------------------------------------------------------------
# Simplex over delta rationals (general form)


class Simplex:
    def __init__(self) -> None:
        self.vars: Dict[object, int] = {}
        self.names: List[object] = []
        self.lo: List[Optional[DR]] = []
        self.hi: List[Optional[DR]] = []
        self.assign: List[DR] = []
        self.rows: Dict[int, Dict[int, Fraction]] = {}

    def var(self, name) -> int:
        if name in self.vars:
            return self.vars[name]
        i = len(self.names)
        self.vars[name] = i
        self.names.append(name)
        self.lo.append(None)
        self.hi.append(None)
        self.assign.append(DR_ZERO)
        return i

    def add_row(self, combo: Dict[int, Fraction]) -> int:
        s = self.var(("slack", len(self.rows), tuple(sorted(combo.items()))))
        self.rows[s] = dict(combo)
        val = DR_ZERO
        for x, c in combo.items():
            val = val + self.assign[x].scale(c)
        self.assign[s] = val
        return s

    def _update_nonbasic(self, x: int, v: DR) -> None:
        delta = v - self.assign[x]
        self.assign[x] = v
        for b, row in self.rows.items():
            c = row.get(x)
            if c:
                self.assign[b] = self.assign[b] + delta.scale(c)

    def assert_lo(self, x: int, v: DR) -> bool:
        if self.hi[x] is not None and v > self.hi[x]:
            return False
        if self.lo[x] is None or v > self.lo[x]:
            self.lo[x] = v
            if x not in self.rows and self.assign[x] < v:
                self._update_nonbasic(x, v)
        return True

    def assert_hi(self, x: int, v: DR) -> bool:
        if self.lo[x] is not None and v < self.lo[x]:
            return False
        if self.hi[x] is None or v < self.hi[x]:
            self.hi[x] = v
            if x not in self.rows and self.assign[x] > v:
                self._update_nonbasic(x, v)
        return True

    def _pivot(self, b: int, nb: int) -> None:
        row = self.rows.pop(b)
        c = row[nb]
        new_row: Dict[int, Fraction] = {b: ONE / c}
        for x, cx in row.items():
            if x != nb:
                v = -cx / c
                if v != 0:
                    new_row[x] = v
        for bb, r in self.rows.items():
            cnb = r.pop(nb, None)
            if cnb:
                for x, cx in new_row.items():
                    nv = r.get(x, ZERO) + cnb * cx
                    if nv == 0:
                        r.pop(x, None)
                    else:
                        r[x] = nv
        self.rows[nb] = new_row

    def check(self) -> bool:
        """True if feasible. Bland's rule keeps it from cycling."""
        guard = 0
        while True:
            guard += 1
            if guard > 50000:
                raise SolverUnknown("simplex pivot budget exceeded")
            broken = None
            need_lo = False
            for b in sorted(self.rows):
                if self.lo[b] is not None and self.assign[b] < self.lo[b]:
                    broken, need_lo = b, True
                    break
                if self.hi[b] is not None and self.assign[b] > self.hi[b]:
                    broken, need_lo = b, False
                    break
            if broken is None:
                return True
            row = self.rows[broken]
            pivot_col = None
            for x in sorted(row):
                c = row[x]
                if need_lo:
                    ok = (c > 0 and (self.hi[x] is None or self.assign[x] < self.hi[x])) or (
                        c < 0 and (self.lo[x] is None or self.assign[x] > self.lo[x]))
                else:
                    ok = (c > 0 and (self.lo[x] is None or self.assign[x] > self.lo[x])) or (
                        c < 0 and (self.hi[x] is None or self.assign[x] < self.hi[x]))
                if ok:
                    pivot_col = x
                    break
            if pivot_col is None:
                return False
            target = self.lo[broken] if need_lo else self.hi[broken]
            c = row[pivot_col]
            theta = (target - self.assign[broken]).scale(ONE / c)
            self.assign[broken] = target
            self.assign[pivot_col] = self.assign[pivot_col] + theta
            for bb, r in self.rows.items():
                if bb != broken:
                    c2 = r.get(pivot_col)
                    if c2:
                        self.assign[bb] = self.assign[bb] + theta.scale(c2)
            self._pivot(broken, pivot_col)

    def value(self, x: int) -> DR:
        return self.assign[x]


# ---------------------------------------------------------------------------
# Linear normalization


def as_linear(t: tuple) -> Tuple[Dict[tuple, Fraction], Fraction]:
    if t[0] == "num":
        return {}, t[1]
    if t[0] == "sum":
        coeffs: Dict[tuple, Fraction] = {}
        const = t[2]
        for c, b in t[1]:
            sub, sc = as_linear(b)
            for k, v in sub.items():
                nv = coeffs.get(k, ZERO) + c * v
                if nv == 0:
                    coeffs.pop(k, None)
                else:
                    coeffs[k] = nv
            const += c * sc
        return coeffs, const
    return {t: ONE}, ZERO


def _diff(lhs: tuple, rhs: tuple) -> Tuple[Dict[tuple, Fraction], Fraction]:
    cl, kl = as_linear(lhs)
    cr, kr = as_linear(rhs)
    for k, v in cr.items():
        nv = cl.get(k, ZERO) - v
        if nv == 0:
            cl.pop(k, None)
        else:
            cl[k] = nv
    return cl, kl - kr


# ---------------------------------------------------------------------------
# Arithmetic conjunction feasibility

Con = Tuple[Dict[tuple, Fraction], Fraction, str]  # coeffs, const, "eq"|"le"|"lt"


def _add_con(sx: Simplex, coeffs: Dict, const: Fraction, op: str) -> bool:
    if not coeffs:
        return const == 0 if op == "eq" else const <= 0 if op == "le" else const < 0
    cols = {sx.var(b): c for b, c in coeffs.items()}
    if len(cols) == 1:
        ((x, c),) = cols.items()
        if op == "eq":
            v = DR(-const / c)
            return sx.assert_lo(x, v) and sx.assert_hi(x, v)
        # c*x + const <(=) 0: upper bound when c > 0, lower bound when c < 0;
        # the delta coefficient -1/c lands on the right side either way
        v = DR(-const / c, (Fraction(-1) / c) if op == "lt" else ZERO)
        return sx.assert_hi(x, v) if c > 0 else sx.assert_lo(x, v)
    s = sx.add_row(cols)
    if op == "eq":
        return sx.assert_lo(s, DR(-const)) and sx.assert_hi(s, DR(-const))
    v = DR(-const, Fraction(-1) if op == "lt" else ZERO)
    return sx.assert_hi(s, v)


def _lra_feasible(cons: Sequence[Con], capture: Optional[dict] = None) -> bool:
    sx = Simplex()
    for coeffs, const, op in cons:
        if not _add_con(sx, coeffs, const, op):
            return False
    if not sx.check():
        return False
    if capture is not None:
        capture.update(_extract_values(sx))
    return True


def _extract_values(sx: Simplex) -> dict:
    # substitute a concrete small epsilon so strict bounds hold
    eps = ONE
    for x in range(len(sx.names)):
        for bound in (sx.lo[x], sx.hi[x]):
            if bound is None:
                continue
            v = sx.assign[x]
            dq, dd = v.q - bound.q, v.d - bound.d
            if dd != 0 and dq != 0 and (dq < 0) != (dd < 0):
                cand = abs(dq) / abs(dd)
                if cand < eps:
                    eps = cand / 2
    out = {}
    for name, x in sx.vars.items():
        if isinstance(name, tuple) and name and name[0] == "slack":
            continue
        v = sx.assign[x]
        out[name] = v.q + v.d * eps
    return out


def _lra_entails_eq(cons: Sequence[Con], coeffs: Dict, const: Fraction) -> bool:
    """True when the feasible set lies entirely inside coeffs + const = 0."""
    below = list(cons) + [(coeffs, const, "lt")]
    if _lra_feasible(below):
        return False
    above = list(cons) + [({k: -c for k, c in coeffs.items()}, -const, "lt")]
    if _lra_feasible(above):
        return False
    return True


def _int_scale(coeffs: Dict, const: Fraction) -> Tuple[Dict, Fraction]:
    lcm = 1
    for c in list(coeffs.values()) + [const]:
        lcm = lcm * c.denominator // gcd(lcm, c.denominator)
    return {k: c * lcm for k, c in coeffs.items()}, const * lcm


def _lia_preprocess(cons: Sequence[Con]) -> Optional[List[Con]]:
    """Integer-scale, turn strict into non-strict, gcd-tighten.

    Returns None when a gcd test refutes an equality outright.
    """
    out: List[Con] = []
    for coeffs, const, op in cons:
        coeffs, const = _int_scale(coeffs, const)
        if not coeffs:
            ok = const == 0 if op == "eq" else const <= 0 if op == "le" else const < 0
            if not ok:
                return None
            continue
        if op == "lt":
            const += 1
            op = "le"
        g = 0
        for c in coeffs.values():
            g = gcd(g, abs(int(c)))
        if g > 1:
            if op == "eq":
                if int(const) % g != 0:
                    return None
                coeffs = {k: c / g for k, c in coeffs.items()}
                const = const / g
            else:
                coeffs = {k: c / g for k, c in coeffs.items()}
                const = Fraction(ceil(const / g))  # sum <= -const: tighten
        out.append((coeffs, const, op))
    return out


def _lia_feasible(cons: Sequence[Con], diseqs, budget: int,
                  capture: Optional[dict] = None) -> bool:
    state = {"nodes": 0}

    def solve(all_cons: List[Con], remaining) -> bool:
        state["nodes"] += 1
        if state["nodes"] > budget:
            raise SolverUnknown("integer search budget exceeded")
        pre = _lia_preprocess(all_cons)
        if pre is None:
            return False
        sx = Simplex()
        colmap: Dict[tuple, int] = {}
        for coeffs, const, op in pre:
            if not _add_con(sx, coeffs, const, op):
                return False
            for b in coeffs:
                colmap[b] = sx.var(b)
        if not sx.check():
            return False
        frac = None
        for b in sorted(colmap, key=repr):
            v = sx.value(colmap[b])
            if v.d != 0 or v.q.denominator != 1:
                frac = (b, v.q)
                break
        if frac is not None:
            b, v = frac
            fv = floor(v)
            if solve(all_cons + [({b: ONE}, Fraction(-fv), "le")], remaining):
                return True
            return solve(all_cons + [({b: -ONE}, Fraction(fv + 1), "le")], remaining)
        # integral point: handle disequalities
        for i, (coeffs, const) in enumerate(remaining):
            if any(b not in colmap for b in coeffs):
                continue  # an unconstrained base can always dodge the equality
            val = const
            for b, c in coeffs.items():
                val += c * sx.value(colmap[b]).q
            if val == 0:
                rest = remaining[:i] + remaining[i + 1:]
                ic, k0 = _int_scale(coeffs, const)
                if solve(all_cons + [(dict(ic), k0 + 1, "le")], rest):
                    return True
                return solve(
                    all_cons + [({k: -c for k, c in ic.items()}, -k0 + 1, "le")], rest
                )
        if capture is not None:
            capture.update(_extract_values(sx))
        return True

    return solve(list(cons), list(diseqs))


# ---------------------------------------------------------------------------
# Combined check


class TheoryResult:
    __slots__ = ("sat", "core", "cc", "arith_values")

    def __init__(self, sat: bool, core=None, cc=None, arith_values=None):
        self.sat = sat
        self.core = core
        self.cc = cc
        self.arith_values = arith_values


def _check_once(literals: Sequence[tuple], arith_kind, budget: int,
                capture: bool = False) -> TheoryResult:
    euf_eqs = []
    euf_diseqs = []
    cons: List[Con] = []
    diseqs = []
    is_int = False

    def arith_side(t):
        return t[0] in ("num", "sum") or arith_kind(t) is not None

    for lit in literals:
        pol, (op, lhs, rhs) = lit
        if op in ("le", "lt") or (op == "eq" and (arith_side(lhs) or arith_side(rhs))):
            coeffs, const = _diff(lhs, rhs)
            for b in coeffs:
                if arith_kind(b) == "int":
                    is_int = True
            if op == "eq":
                if pol:
                    cons.append((coeffs, const, "eq"))
                else:
                    diseqs.append((coeffs, const))
            elif pol:
                cons.append((coeffs, const, op))
            else:
                neg = {k: -c for k, c in coeffs.items()}
                cons.append((neg, -const, "lt" if op == "le" else "le"))
        else:
            (euf_eqs if pol else euf_diseqs).append((lhs, rhs))

    cc = CongruenceClosure()
    try:
        for lit in literals:
            _, (op, lhs, rhs) = lit
            cc.intern(lhs)
            cc.intern(rhs)
        for lhs, rhs in euf_eqs:
            cc.merge(cc.ids[lhs], cc.ids[rhs])
        for lhs, rhs in euf_diseqs:
            cc.add_diseq(cc.ids[lhs], cc.ids[rhs])
    except CCConflict:
        return TheoryResult(False)

    # distinct numerals mapped into the same class refute the conjunction
    num_of_root: Dict[int, Fraction] = {}
    for t, i in cc.ids.items():
        if t[0] == "num":
            r = cc.find(i)
            if r in num_of_root and num_of_root[r] != t[1]:
                return TheoryResult(False)
            num_of_root[r] = t[1]

    # CC equalities among arithmetic-sorted applications feed the arithmetic side
    groups: Dict[int, List[tuple]] = {}
    for t, i in cc.ids.items():
        if t[0] == "app" and arith_kind(t) is not None:
            groups.setdefault(cc.find(i), []).append(t)
            if arith_kind(t) == "int":
                is_int = True
    for root, members in groups.items():
        members.sort(key=repr)
        base = members[0]
        for m in members[1:]:
            cons.append(({base: ONE, m: Fraction(-1)}, ZERO, "eq"))
        if root in num_of_root:
            cons.append(({base: ONE}, -num_of_root[root], "eq"))

    capture_dict: Optional[dict] = {} if capture else None
    if is_int:
        ok = _lia_feasible(cons, diseqs, budget, capture_dict)
    else:
        ok = _lra_feasible(cons, capture_dict)
        if ok:
            for coeffs, const in diseqs:
                if not coeffs:
                    if const == 0:
                        ok = False
                        break
                    continue
                if _lra_entails_eq(cons, coeffs, const):
                    ok = False
                    break
            # a finite union of proper hyperplanes cannot cover the feasible
            # set, so individually dodgeable disequalities are jointly fine
    if not ok:
        return TheoryResult(False)
    return TheoryResult(True, cc=cc, arith_values=capture_dict)


def check_conjunction(literals: Sequence[tuple], *, arith_kind,
                      budget: int = 4000, minimize: bool = True,
                      capture: bool = False) -> TheoryResult:
    """Decide a conjunction of (polarity, atom) literals.

    `arith_kind(term)` returns "int", "real" or None. On unsat, `core` holds
    a subset of the input literals that is already unsat (deletion minimized
    while small enough to afford it).
    """
    res = _check_once(literals, arith_kind, budget, capture)
    if res.sat or not minimize:
        return res
    lits = list(literals)
    if len(lits) <= 60:
        i = 0
        while i < len(lits):
            trial = lits[:i] + lits[i + 1:]
            try:
                r = _check_once(trial, arith_kind, max(200, budget // 4))
            except SolverUnknown:
                i += 1
                continue
            if not r.sat:
                lits = trial
            else:
                i += 1
    return TheoryResult(False, core=lits)
