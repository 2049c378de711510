"""Multi-sorted terms and formulae for relational action base specs.

Everything here is immutable and hashable. Arithmetic atoms are normalized
at construction into ``lhs <op> 0`` with a canonical linear sum on the left,
so structural equality doubles as a cheap semantic dedup.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Iterator, Mapping, Optional, Sequence, Union


class SortKind(Enum):
    ID = "id"
    VALUE = "value"
    ARITH = "arith"
    MEMORY = "memory"
    ELEM2 = "elem2"


class Theory(Enum):
    NONE = "none"
    LIA = "lia"
    LRA = "lra"


@dataclass(frozen=True)
class Sort:
    name: str
    kind: SortKind

    def __repr__(self) -> str:
        return f"Sort({self.name})"

    @property
    def is_basic(self) -> bool:
        return self.kind is not SortKind.MEMORY


INT = Sort("int", SortKind.ARITH)
REAL = Sort("real", SortKind.ARITH)

UNDEF = "undef"


class RabError(Exception):
    """Base class for all package errors."""


class SortError(RabError):
    pass


class TypeMismatch(SortError):
    pass


class ShapeError(RabError):
    pass


# ---------------------------------------------------------------------------
# Signature


@dataclass
class Signature:
    """Static DB signature: unary functions, relations, constants, one theory.

    Arith and value sorts never appear as a function domain; per id/value sort
    an undef constant exists implicitly (see `undef`).
    """

    theory: Theory = Theory.NONE
    sorts: dict = field(default_factory=dict)  # name -> Sort (declaration order)
    funs: dict = field(default_factory=dict)  # name -> (domain Sort, codomain Sort)
    rels: dict = field(default_factory=dict)  # name -> tuple[Sort, ...]
    consts: dict = field(default_factory=dict)  # name -> Sort

    def arith_sort(self) -> Optional[Sort]:
        if self.theory is Theory.LIA:
            return INT
        if self.theory is Theory.LRA:
            return REAL
        return None

    def sort_named(self, name: str) -> Optional[Sort]:
        if name == "int" and self.theory is Theory.LIA:
            return INT
        if name == "real" and self.theory is Theory.LRA:
            return REAL
        return self.sorts.get(name)

    def undef_sorts(self) -> list:
        return [
            s
            for s in self.sorts.values()
            if s.kind in (SortKind.ID, SortKind.VALUE)
        ]

    def has_undef(self, sort: Sort) -> bool:
        return sort.kind in (SortKind.ID, SortKind.VALUE)

    def const_term(self, name: str, sort: Sort) -> "Const":
        return Const(name, sort)

    def copy(self) -> "Signature":
        return Signature(
            self.theory, dict(self.sorts), dict(self.funs), dict(self.rels),
            dict(self.consts),
        )


# ---------------------------------------------------------------------------
# Terms


@dataclass(frozen=True)
class Var:
    name: str
    sort: Sort

    def __repr__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Const:
    name: str
    sort: Sort

    def __repr__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Num:
    value: Fraction
    sort: Sort

    def __repr__(self) -> str:
        return str(self.value)


@dataclass(frozen=True)
class App:
    fun: str
    arg: "Term"
    sort: Sort

    def __repr__(self) -> str:
        return f"{self.fun}({self.arg!r})"


@dataclass(frozen=True)
class Select:
    array: str
    index: "Term"
    sort: Sort

    def __repr__(self) -> str:
        return f"{self.array}[{self.index!r}]"


@dataclass(frozen=True)
class LinSum:
    """Canonical linear combination: sum of coeff*base plus a constant.

    Bases are non-arithmetic-literal terms (vars, selects, apps) sorted by
    term_key; coefficients are nonzero Fractions.
    """

    coeffs: tuple  # tuple[tuple[Fraction, Term], ...]
    const: Fraction
    sort: Sort

    def __repr__(self) -> str:
        bits = [f"{c}*{t!r}" for c, t in self.coeffs]
        bits.append(str(self.const))
        return " + ".join(bits)


@dataclass(frozen=True)
class CaseOf:
    """Ordered case term; the last branch must be the else branch (cond True)."""

    branches: tuple  # tuple[tuple[Formula, Term], ...]
    sort: Sort

    def __repr__(self) -> str:
        return "case{" + "; ".join(f"{c!r}:{t!r}" for c, t in self.branches) + "}"


Term = Union[Var, Const, Num, App, Select, LinSum, CaseOf]


# ---------------------------------------------------------------------------
# Formulae


@dataclass(frozen=True)
class TrueF:
    def __repr__(self) -> str:
        return "true"


@dataclass(frozen=True)
class FalseF:
    def __repr__(self) -> str:
        return "false"


TRUE = TrueF()
FALSE = FalseF()


@dataclass(frozen=True)
class Atom:
    """eq / le / lt over terms; arithmetic atoms carry a LinSum lhs and Num 0 rhs."""

    op: str
    lhs: Term
    rhs: Term

    def __repr__(self) -> str:
        sym = {"eq": "=", "le": "<=", "lt": "<"}[self.op]
        return f"({self.lhs!r} {sym} {self.rhs!r})"


@dataclass(frozen=True)
class RelAtom:
    rel: str
    args: tuple

    def __repr__(self) -> str:
        return f"{self.rel}({', '.join(map(repr, self.args))})"


@dataclass(frozen=True)
class Not:
    arg: "Formula"

    def __repr__(self) -> str:
        return f"~{self.arg!r}"


@dataclass(frozen=True)
class And:
    args: tuple

    def __repr__(self) -> str:
        return "(" + " & ".join(map(repr, self.args)) + ")"


@dataclass(frozen=True)
class Or:
    args: tuple

    def __repr__(self) -> str:
        return "(" + " | ".join(map(repr, self.args)) + ")"


@dataclass(frozen=True)
class Exists:
    vars: tuple  # tuple[Var, ...]
    body: "Formula"

    def __repr__(self) -> str:
        vs = " ".join(v.name for v in self.vars)
        return f"(exists {vs}. {self.body!r})"


@dataclass(frozen=True)
class Forall:
    vars: tuple
    body: "Formula"

    def __repr__(self) -> str:
        vs = " ".join(v.name for v in self.vars)
        return f"(forall {vs}. {self.body!r})"


@dataclass(frozen=True)
class ArrayEq:
    """array = lambda var. body  (sugar for forall var: array[var] = body)."""

    array: str
    var: Var
    body: Term

    def __repr__(self) -> str:
        return f"({self.array} = \\{self.var.name}. {self.body!r})"


Formula = Union[
    TrueF, FalseF, Atom, RelAtom, Not, And, Or, Exists, Forall, ArrayEq
]


# ---------------------------------------------------------------------------
# Smart constructors


def and_(*args: Formula) -> Formula:
    flat: list = []
    for a in args:
        if isinstance(a, TrueF):
            continue
        if isinstance(a, FalseF):
            return FALSE
        if isinstance(a, And):
            flat.extend(a.args)
        else:
            flat.append(a)
    if not flat:
        return TRUE
    if len(flat) == 1:
        return flat[0]
    return And(tuple(flat))


def or_(*args: Formula) -> Formula:
    flat: list = []
    for a in args:
        if isinstance(a, FalseF):
            continue
        if isinstance(a, TrueF):
            return TRUE
        if isinstance(a, Or):
            flat.extend(a.args)
        else:
            flat.append(a)
    if not flat:
        return FALSE
    if len(flat) == 1:
        return flat[0]
    return Or(tuple(flat))


def not_(a: Formula) -> Formula:
    if isinstance(a, TrueF):
        return FALSE
    if isinstance(a, FalseF):
        return TRUE
    if isinstance(a, Not):
        return a.arg
    return Not(a)


def implies(a: Formula, b: Formula) -> Formula:
    return or_(not_(a), b)


def exists(vs: Sequence[Var], body: Formula) -> Formula:
    vs = tuple(vs)
    if not vs:
        return body
    if isinstance(body, Exists):
        return Exists(vs + body.vars, body.body)
    if isinstance(body, (TrueF, FalseF)):
        return body
    return Exists(vs, body)


def forall(vs: Sequence[Var], body: Formula) -> Formula:
    vs = tuple(vs)
    if not vs:
        return body
    if isinstance(body, Forall):
        return Forall(vs + body.vars, body.body)
    if isinstance(body, (TrueF, FalseF)):
        return body
    return Forall(vs, body)


def num(value, sort: Sort = INT) -> Num:
    return Num(Fraction(value), sort)


def undef(sort: Sort) -> Const:
    return Const(UNDEF, sort)


def is_arith(t: Term) -> bool:
    return t.sort.kind is SortKind.ARITH


def linsum(parts: Iterable, const, sort: Sort) -> Term:
    """Build a canonical LinSum from (coeff, base) pairs; collapses to Num."""
    acc: dict = {}
    for c, b in parts:
        c = Fraction(c)
        if c == 0:
            continue
        if isinstance(b, Num):
            const = Fraction(const) + c * b.value
            continue
        if isinstance(b, LinSum):
            for c2, b2 in b.coeffs:
                acc[b2] = acc.get(b2, Fraction(0)) + c * c2
            const = Fraction(const) + c * b.const
            continue
        acc[b] = acc.get(b, Fraction(0)) + c
    items = [(c, b) for b, c in acc.items() if c != 0]
    items.sort(key=lambda p: term_key(p[1]))
    const = Fraction(const)
    if not items:
        return Num(const, sort)
    if len(items) == 1 and items[0][0] == 1 and const == 0:
        return items[0][1]
    return LinSum(tuple(items), const, sort)


def add(a: Term, b: Term) -> Term:
    sort = a.sort
    return linsum([(Fraction(1), a), (Fraction(1), b)], 0, sort)


def sub(a: Term, b: Term) -> Term:
    return linsum([(Fraction(1), a), (Fraction(-1), b)], 0, a.sort)


def scale(k, a: Term) -> Term:
    return linsum([(Fraction(k), a)], 0, a.sort)


def arith_atom(op: str, lhs: Term, rhs: Term) -> Formula:
    """Normalize an arithmetic comparison to (lhs - rhs) <op> 0."""
    diff = sub(lhs, rhs)
    if isinstance(diff, Num):
        v = diff.value
        ok = v == 0 if op == "eq" else v <= 0 if op == "le" else v < 0
        return TRUE if ok else FALSE
    if isinstance(diff, LinSum) and op == "eq":
        # fix the sign so t = 0 and -t = 0 coincide
        if diff.coeffs[0][0] < 0:
            diff = linsum([(-c, b) for c, b in diff.coeffs], -diff.const, diff.sort)
    zero = Num(Fraction(0), lhs.sort)
    return Atom(op, diff, zero)


def eq(lhs: Term, rhs: Term) -> Formula:
    if lhs.sort != rhs.sort:
        raise TypeMismatch(f"equality between sorts {lhs.sort.name} and {rhs.sort.name}")
    if is_arith(lhs):
        return arith_atom("eq", lhs, rhs)
    if lhs == rhs:
        return TRUE
    if isinstance(lhs, Const) and isinstance(rhs, Const):
        # named constants (undef included) are axiomatized pairwise distinct
        return FALSE
    if term_key(rhs) < term_key(lhs):
        lhs, rhs = rhs, lhs
    return Atom("eq", lhs, rhs)


def neq(lhs: Term, rhs: Term) -> Formula:
    return not_(eq(lhs, rhs))


def lt(lhs: Term, rhs: Term) -> Formula:
    return arith_atom("lt", lhs, rhs)


def le(lhs: Term, rhs: Term) -> Formula:
    return arith_atom("le", lhs, rhs)


# ---------------------------------------------------------------------------
# Canonical ordering

_TERM_TAGS = {Var: 0, Const: 1, Num: 2, App: 3, Select: 4, LinSum: 5, CaseOf: 6}


def term_key(t: Term):
    tag = _TERM_TAGS[type(t)]
    if isinstance(t, Var):
        return (tag, t.sort.name, t.name)
    if isinstance(t, Const):
        return (tag, t.sort.name, t.name)
    if isinstance(t, Num):
        return (tag, t.sort.name, t.value)
    if isinstance(t, App):
        return (tag, t.fun, term_key(t.arg))
    if isinstance(t, Select):
        return (tag, t.array, term_key(t.index))
    if isinstance(t, LinSum):
        return (tag, tuple((c, term_key(b)) for c, b in t.coeffs), t.const)
    if isinstance(t, CaseOf):
        return (tag, tuple((formula_key(c), term_key(b)) for c, b in t.branches))
    raise TypeError(t)


_FML_TAGS = {
    TrueF: 0, FalseF: 1, Atom: 2, RelAtom: 3, Not: 4,
    And: 5, Or: 6, Exists: 7, Forall: 8, ArrayEq: 9,
}


def formula_key(f: Formula):
    tag = _FML_TAGS[type(f)]
    if isinstance(f, (TrueF, FalseF)):
        return (tag,)
    if isinstance(f, Atom):
        return (tag, f.op, term_key(f.lhs), term_key(f.rhs))
    if isinstance(f, RelAtom):
        return (tag, f.rel, tuple(term_key(a) for a in f.args))
    if isinstance(f, Not):
        return (tag, formula_key(f.arg))
    if isinstance(f, (And, Or)):
        return (tag, tuple(formula_key(a) for a in f.args))
    if isinstance(f, (Exists, Forall)):
        return (tag, tuple((v.name, v.sort.name) for v in f.vars), formula_key(f.body))
    if isinstance(f, ArrayEq):
        return (tag, f.array, (f.var.name, f.var.sort.name), term_key(f.body))
    raise TypeError(f)


# ---------------------------------------------------------------------------
# Traversals


def subterms(t: Term) -> Iterator[Term]:
    yield t
    if isinstance(t, App):
        yield from subterms(t.arg)
    elif isinstance(t, Select):
        yield from subterms(t.index)
    elif isinstance(t, LinSum):
        for _, b in t.coeffs:
            yield from subterms(b)
    elif isinstance(t, CaseOf):
        for cond, branch in t.branches:
            yield from formula_terms(cond)
            yield from subterms(branch)


def atoms(f: Formula) -> Iterator[Union[Atom, RelAtom]]:
    if isinstance(f, (Atom, RelAtom)):
        yield f
    elif isinstance(f, Not):
        yield from atoms(f.arg)
    elif isinstance(f, (And, Or)):
        for a in f.args:
            yield from atoms(a)
    elif isinstance(f, (Exists, Forall)):
        yield from atoms(f.body)
    elif isinstance(f, ArrayEq):
        pass


def formula_terms(f: Formula) -> Iterator[Term]:
    if isinstance(f, (Atom,)):
        yield from subterms(f.lhs)
        yield from subterms(f.rhs)
    elif isinstance(f, RelAtom):
        for a in f.args:
            yield from subterms(a)
    elif isinstance(f, Not):
        yield from formula_terms(f.arg)
    elif isinstance(f, (And, Or)):
        for a in f.args:
            yield from formula_terms(a)
    elif isinstance(f, (Exists, Forall)):
        yield from formula_terms(f.body)
    elif isinstance(f, ArrayEq):
        yield from subterms(f.body)


def term_free_vars(t: Term) -> set:
    out = set()
    for s in subterms(t):
        if isinstance(s, Var):
            out.add(s)
        elif isinstance(s, CaseOf):
            for cond, _ in s.branches:
                out |= free_vars(cond)
    return out


def free_vars(f: Formula) -> set:
    if isinstance(f, (TrueF, FalseF)):
        return set()
    if isinstance(f, Atom):
        return term_free_vars(f.lhs) | term_free_vars(f.rhs)
    if isinstance(f, RelAtom):
        out = set()
        for a in f.args:
            out |= term_free_vars(a)
        return out
    if isinstance(f, Not):
        return free_vars(f.arg)
    if isinstance(f, (And, Or)):
        out = set()
        for a in f.args:
            out |= free_vars(a)
        return out
    if isinstance(f, (Exists, Forall)):
        return free_vars(f.body) - set(f.vars)
    if isinstance(f, ArrayEq):
        return term_free_vars(f.body) - {f.var}
    raise TypeError(f)


def arrays_of(f: Formula) -> set:
    out = set()
    for t in formula_terms(f):
        if isinstance(t, Select):
            out.add(t.array)
    if isinstance(f, ArrayEq):
        out.add(f.array)
    if isinstance(f, (And, Or)):
        for a in f.args:
            out |= arrays_of(a)
    elif isinstance(f, (Not,)):
        out |= arrays_of(f.arg)
    elif isinstance(f, (Exists, Forall)):
        out |= arrays_of(f.body)
    return out


# ---------------------------------------------------------------------------
# Substitution (capture avoiding)

_fresh_counter = itertools.count()


def fresh_name(base: str, avoid: set) -> str:
    name = base
    while name in avoid:
        name = f"{base}_{next(_fresh_counter)}"
    return name


def fresh_var(base: str, sort: Sort, avoid: set) -> Var:
    return Var(fresh_name(base, avoid), sort)


def subst_term(t: Term, binding: Mapping[Var, Term]) -> Term:
    if isinstance(t, Var):
        if t in binding:
            r = binding[t]
            if r.sort != t.sort:
                raise SortError(
                    f"cannot bind {t.name}:{t.sort.name} to term of sort {r.sort.name}"
                )
            return r
        return t
    if isinstance(t, (Const, Num)):
        return t
    if isinstance(t, App):
        return App(t.fun, subst_term(t.arg, binding), t.sort)
    if isinstance(t, Select):
        return Select(t.array, subst_term(t.index, binding), t.sort)
    if isinstance(t, LinSum):
        return linsum(
            [(c, subst_term(b, binding)) for c, b in t.coeffs], t.const, t.sort
        )
    if isinstance(t, CaseOf):
        return CaseOf(
            tuple(
                (substitute(c, binding), subst_term(b, binding)) for c, b in t.branches
            ),
            t.sort,
        )
    raise TypeError(t)


def substitute(f: Formula, binding: Mapping[Var, Term]) -> Formula:
    """Apply a variable binding, renaming bound variables apart when needed."""
    if not binding:
        return f
    if isinstance(f, (TrueF, FalseF)):
        return f
    if isinstance(f, Atom):
        lhs = subst_term(f.lhs, binding)
        rhs = subst_term(f.rhs, binding)
        if f.op == "eq":
            return eq(lhs, rhs)
        return arith_atom(f.op, lhs, rhs) if is_arith(lhs) else Atom(f.op, lhs, rhs)
    if isinstance(f, RelAtom):
        return RelAtom(f.rel, tuple(subst_term(a, binding) for a in f.args))
    if isinstance(f, Not):
        return not_(substitute(f.arg, binding))
    if isinstance(f, And):
        return and_(*[substitute(a, binding) for a in f.args])
    if isinstance(f, Or):
        return or_(*[substitute(a, binding) for a in f.args])
    if isinstance(f, (Exists, Forall)):
        live = {v: t for v, t in binding.items() if v not in f.vars}
        if not live:
            return f
        # names that must not be captured
        danger = set()
        for t in live.values():
            danger |= {v.name for v in term_free_vars(t)}
        ren = {}
        new_vars = []
        taken = danger | {v.name for v in free_vars(f)} | {v.name for v in f.vars}
        for v in f.vars:
            if v.name in danger:
                nv = fresh_var(v.name, v.sort, taken)
                taken.add(nv.name)
                ren[v] = nv
                new_vars.append(nv)
            else:
                new_vars.append(v)
        body = f.body
        if ren:
            body = substitute(body, ren)
        body = substitute(body, live)
        ctor = exists if isinstance(f, Exists) else forall
        return ctor(tuple(new_vars), body)
    if isinstance(f, ArrayEq):
        live = {v: t for v, t in binding.items() if v != f.var}
        if not live:
            return f
        danger = set()
        for t in live.values():
            danger |= {v.name for v in term_free_vars(t)}
        var = f.var
        body = f.body
        if var.name in danger:
            taken = danger | {v.name for v in term_free_vars(body)}
            nv = fresh_var(var.name, var.sort, taken)
            body = subst_term(body, {var: nv})
            var = nv
        return ArrayEq(f.array, var, subst_term(body, live))
    raise TypeError(f)


def rename_apart(f: Formula, taken: set) -> Formula:
    """Rename the outermost bound variables of f away from `taken` names."""
    if isinstance(f, (Exists, Forall)):
        ren = {}
        new_vars = []
        pool = set(taken) | {v.name for v in f.vars}
        for v in f.vars:
            if v.name in taken:
                nv = fresh_var(v.name, v.sort, pool)
                pool.add(nv.name)
                ren[v] = nv
                new_vars.append(nv)
            else:
                new_vars.append(v)
        if not ren:
            return f
        ctor = exists if isinstance(f, Exists) else forall
        return ctor(tuple(new_vars), substitute(f.body, ren))
    return f
