"""Normalization: case elimination, lambda expansion, NNF, DNF, cubes, flattening."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

from .terms import (
    And, ArrayEq, Atom, CaseOf, Const, Exists, FALSE, Forall, Formula, LinSum,
    Not, Num, Or, RabError, RelAtom, Select, Sort, SortKind, Term, TRUE, TrueF,
    FalseF, TypeMismatch, Var, and_, arith_atom, eq, exists, forall, formula_key,
    fresh_var, is_arith, linsum, not_, or_, subst_term, substitute, subterms,
    term_free_vars, term_key,
)


class SizeBudgetExceeded(RabError):
    """DNF grew past the configured clause cap."""


DEFAULT_DNF_CAP = 4096


# ---------------------------------------------------------------------------
# Case / lambda elimination


def _check_case(t: CaseOf) -> None:
    if not t.branches:
        raise TypeMismatch("empty case")
    last_cond = t.branches[-1][0]
    if not isinstance(last_cond, TrueF):
        raise TypeMismatch("case without terminal else branch")
    sorts = {b.sort for _, b in t.branches}
    if len(sorts) != 1:
        names = sorted(s.name for s in sorts)
        raise TypeMismatch(f"case branches mix sorts {names}")


def _find_case(t: Term) -> Optional[CaseOf]:
    for s in subterms(t):
        if isinstance(s, CaseOf):
            return s
    return None


def _replace_term(t: Term, old: Term, new: Term) -> Term:
    if t == old:
        return new
    if isinstance(t, (Var, Const, Num)):
        return t
    if isinstance(t, CaseOf):
        return CaseOf(
            tuple((c, _replace_term(b, old, new)) for c, b in t.branches), t.sort
        )
    if isinstance(t, Select):
        return Select(t.array, _replace_term(t.index, old, new), t.sort)
    from .terms import App

    if isinstance(t, App):
        return App(t.fun, _replace_term(t.arg, old, new), t.sort)
    if isinstance(t, LinSum):
        return linsum(
            [(c, _replace_term(b, old, new)) for c, b in t.coeffs], t.const, t.sort
        )
    raise TypeError(t)


def case_branches_guarded(t: CaseOf):
    """Yield (guard, value) with ordered-case guards made mutually exclusive."""
    _check_case(t)
    seen: list[Formula] = []
    for cond, val in t.branches:
        guard = and_(*seen, cond)
        yield guard, val
        seen.append(not_(cond))


def _expand_atom(f: Formula) -> Formula:
    """Expand one case occurrence inside an atom into a guarded disjunction."""
    if isinstance(f, Atom):
        sides = (f.lhs, f.rhs)
    elif isinstance(f, RelAtom):
        sides = f.args
    else:
        return f
    for side in sides:
        c = _find_case(side)
        if c is None:
            continue
        # normalize branch conditions first so guards are case free
        c2 = CaseOf(
            tuple((normalize_case_lambda(cond), val) for cond, val in c.branches),
            c.sort,
        )
        out = []
        for guard, val in case_branches_guarded(c2):
            if isinstance(f, Atom):
                lhs = _replace_term(f.lhs, c, val)
                rhs = _replace_term(f.rhs, c, val)
                if f.op == "eq":
                    repl: Formula = eq(lhs, rhs)
                else:
                    repl = arith_atom(f.op, lhs, rhs)
            else:
                repl = RelAtom(f.rel, tuple(_replace_term(a, c, val) for a in f.args))
            out.append(and_(guard, _expand_atom(repl)))
        return or_(*out)
    return f


def normalize_case_lambda(f: Formula) -> Formula:
    """Remove every case term and lambda equality, yielding plain first order."""
    if isinstance(f, (TrueF, FalseF)):
        return f
    if isinstance(f, (Atom, RelAtom)):
        return _expand_atom(f)
    if isinstance(f, Not):
        return not_(normalize_case_lambda(f.arg))
    if isinstance(f, And):
        return and_(*[normalize_case_lambda(a) for a in f.args])
    if isinstance(f, Or):
        return or_(*[normalize_case_lambda(a) for a in f.args])
    if isinstance(f, Exists):
        return exists(f.vars, normalize_case_lambda(f.body))
    if isinstance(f, Forall):
        return forall(f.vars, normalize_case_lambda(f.body))
    if isinstance(f, ArrayEq):
        y = f.var
        sel = Select(f.array, y, f.body.sort)
        if isinstance(f.body, CaseOf):
            parts = [
                (guard, eq(sel, val)) for guard, val in case_branches_guarded(f.body)
            ]
            body = and_(*[or_(not_(g), normalize_case_lambda(a)) for g, a in parts])
            body = normalize_case_lambda(body)
        else:
            body = normalize_case_lambda(eq(sel, f.body))
        return forall((y,), body)
    raise TypeError(f)


# ---------------------------------------------------------------------------
# NNF / DNF


def nnf(f: Formula, negate: bool = False) -> Formula:
    if isinstance(f, TrueF):
        return FALSE if negate else TRUE
    if isinstance(f, FalseF):
        return TRUE if negate else FALSE
    if isinstance(f, (Atom, RelAtom)):
        return not_(f) if negate else f
    if isinstance(f, Not):
        return nnf(f.arg, not negate)
    if isinstance(f, And):
        parts = [nnf(a, negate) for a in f.args]
        return or_(*parts) if negate else and_(*parts)
    if isinstance(f, Or):
        parts = [nnf(a, negate) for a in f.args]
        return and_(*parts) if negate else or_(*parts)
    if isinstance(f, Exists):
        body = nnf(f.body, negate)
        return forall(f.vars, body) if negate else exists(f.vars, body)
    if isinstance(f, Forall):
        body = nnf(f.body, negate)
        return exists(f.vars, body) if negate else forall(f.vars, body)
    if isinstance(f, ArrayEq):
        return nnf(normalize_case_lambda(f), negate)
    raise TypeError(f)


def to_dnf(f: Formula, cap: int = DEFAULT_DNF_CAP):
    """Distribute a quantifier-free or exists-prefixed formula into cubes.

    Returns (vars, list of literal tuples), with every existential prefix
    hoisted (renamed apart) and distributed over the disjuncts. Raises
    SizeBudgetExceeded when the number of cubes would pass `cap`; callers
    fall back to a lazy, undistributed form.
    """
    from .terms import free_vars, rename_apart

    g = nnf(f)
    vars_acc: list = []
    taken = {v.name for v in free_vars(g)}

    def hoist(h: Formula) -> Formula:
        while isinstance(h, Exists):
            h = rename_apart(h, taken)
            for v in h.vars:
                taken.add(v.name)
                vars_acc.append(v)
            h = h.body
        return h

    def walk(h: Formula):
        h = hoist(h)
        if isinstance(h, TrueF):
            return [()]
        if isinstance(h, FalseF):
            return []
        if isinstance(h, (Atom, RelAtom, Not, Forall)):
            return [(h,)]
        if isinstance(h, And):
            cubes = [()]
            for a in h.args:
                branch = walk(a)
                cubes = [c + d for c in cubes for d in branch]
                if len(cubes) > cap:
                    raise SizeBudgetExceeded(f"DNF exceeded {cap} cubes")
            return cubes
        if isinstance(h, Or):
            out = []
            for a in h.args:
                out.extend(walk(a))
                if len(out) > cap:
                    raise SizeBudgetExceeded(f"DNF exceeded {cap} cubes")
            return out
        raise TypeError(h)

    cubes = walk(g)
    dedup = {}
    for c in cubes:
        lits = tuple(sorted(set(c), key=formula_key))
        dedup[lits] = True
    return tuple(vars_acc), list(dedup.keys())


# ---------------------------------------------------------------------------
# Cubes


@dataclass(frozen=True)
class Cube:
    """Existentially quantified conjunction of literals.

    `vars` holds the remaining existential variables; after cover elimination
    only memory-sort (index) variables are left.
    """

    vars: tuple  # tuple[Var, ...]
    literals: tuple  # tuple[Formula, ...]

    def __repr__(self) -> str:
        vs = ",".join(v.name for v in self.vars)
        ls = " & ".join(map(repr, self.literals))
        return f"[{vs} | {ls}]"

    @property
    def index_vars(self) -> tuple:
        return tuple(v for v in self.vars if v.sort.kind is SortKind.MEMORY)

    @property
    def data_vars(self) -> tuple:
        return tuple(v for v in self.vars if v.sort.kind is not SortKind.MEMORY)

    def formula(self) -> Formula:
        return exists(self.vars, and_(*self.literals))

    def canonical(self) -> "Cube":
        return canonical_cube(self)


def make_cube(vars_: Sequence[Var], literals: Iterable[Formula]) -> Cube:
    from .terms import free_vars

    lits = []
    for l in literals:
        if isinstance(l, TrueF):
            continue
        lits.append(l)
    used = set()
    for l in lits:
        used |= free_vars(l)
    vs = tuple(v for v in vars_ if v in used)
    lits = sorted(set(lits), key=formula_key)
    return Cube(vs, tuple(lits))


def canonical_cube(c: Cube) -> Cube:
    """Rename cube variables into a stable order for dedup and goldens."""
    if not c.vars:
        return Cube((), tuple(sorted(set(c.literals), key=formula_key)))

    def masked_key(lit, assigned):
        def tkey(t):
            if isinstance(t, Var) and t in set(c.vars):
                return ("V", assigned.get(t, -1), t.sort.name)
            if isinstance(t, (Const, Num)):
                return ("c", term_key(t))
            if isinstance(t, Select):
                return ("s", t.array, tkey(t.index))
            from .terms import App

            if isinstance(t, App):
                return ("a", t.fun, tkey(t.arg))
            if isinstance(t, LinSum):
                return ("l", tuple((co, tkey(b)) for co, b in t.coeffs), t.const)
            return ("o", term_key(t))

        def fkey(g):
            if isinstance(g, Not):
                return ("n", fkey(g.arg))
            if isinstance(g, Atom):
                return ("t", g.op, tkey(g.lhs), tkey(g.rhs))
            if isinstance(g, RelAtom):
                return ("r", g.rel, tuple(tkey(a) for a in g.args))
            return ("f", formula_key(g))

        return fkey(lit)

    assigned: dict = {}
    lits = list(set(c.literals))
    for _ in range(3):
        lits.sort(key=lambda l: masked_key(l, assigned))
        assigned = {}
        for l in lits:
            for t in _lit_terms(l):
                for s in subterms(t):
                    if isinstance(s, Var) and s in set(c.vars) and s not in assigned:
                        assigned[s] = len(assigned)
    by_index = sorted(assigned.items(), key=lambda kv: kv[1])
    ren = {}
    counters: dict = {}
    for v, _ in by_index:
        n = counters.get(v.sort.name, 0)
        counters[v.sort.name] = n + 1
        ren[v] = Var(f"{_prefix(v.sort)}{n}", v.sort)
    new_lits = tuple(
        sorted({substitute(l, ren) for l in lits}, key=formula_key)
    )
    new_vars = tuple(ren[v] for v, _ in by_index)
    return Cube(new_vars, new_lits)


def _prefix(s: Sort) -> str:
    return {"memory": "i", "arith": "n"}.get(s.kind.value, "v") + "!" + s.name + "!"


def _lit_terms(l: Formula):
    if isinstance(l, Not):
        yield from _lit_terms(l.arg)
    elif isinstance(l, Atom):
        yield l.lhs
        yield l.rhs
    elif isinstance(l, RelAtom):
        yield from l.args


# ---------------------------------------------------------------------------
# Flattening


def _is_flat_arg(t: Term) -> bool:
    return isinstance(t, (Var, Const, Num))


def flatten(c: Cube) -> Cube:
    """Rewrite literals so every function/select argument is a variable or
    constant; fresh existential variables stand in for nested subterms."""
    from .terms import App

    fresh: list = []
    defs: list = []
    taken = {v.name for v in c.vars}
    for l in c.literals:
        for t in _lit_terms(l):
            for s in subterms(t):
                if isinstance(s, (App, Select)):
                    taken |= {v.name for v in term_free_vars(s)}

    cache: dict = {}

    def unnest(t: Term) -> Term:
        if isinstance(t, (Var, Const, Num)):
            return t
        if isinstance(t, App):
            arg = unnest(t.arg)
            if not _is_flat_arg(arg):
                arg = name_for(arg)
            return App(t.fun, arg, t.sort)
        if isinstance(t, Select):
            idx = unnest(t.index)
            if not _is_flat_arg(idx):
                idx = name_for(idx)
            return Select(t.array, idx, t.sort)
        if isinstance(t, LinSum):
            return linsum([(co, unnest(b)) for co, b in t.coeffs], t.const, t.sort)
        raise TypeError(f"cannot flatten {t!r}")

    def name_for(t: Term) -> Var:
        if t in cache:
            return cache[t]
        v = fresh_var("_fl", t.sort, taken)
        taken.add(v.name)
        cache[t] = v
        fresh.append(v)
        defs.append(eq(v, t))
        return v

    new_lits = []
    for l in c.literals:
        neg = isinstance(l, Not)
        a = l.arg if neg else l
        if isinstance(a, Atom):
            na: Formula = Atom(a.op, unnest(a.lhs), unnest(a.rhs))
        elif isinstance(a, RelAtom):
            na = RelAtom(a.rel, tuple(unnest(x) for x in a.args))
        else:
            new_lits.append(l)
            continue
        new_lits.append(not_(na) if neg else na)
    if not fresh:
        return c
    return make_cube(tuple(c.vars) + tuple(fresh), new_lits + defs)


def is_literal(f: Formula) -> bool:
    if isinstance(f, Not):
        return isinstance(f.arg, (Atom, RelAtom))
    return isinstance(f, (Atom, RelAtom))


def negate_literal(l: Formula) -> Formula:
    return not_(l)
