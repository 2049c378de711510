"""Exact and instantiated preimages of cubes under transition rules.

pre() substitutes the updates into the target cube (beta-reducing array
writes against each selection) and keeps the universal guard quantified;
inst_pre() replaces the universal guard with its instances over the
transition's and the target's index variables of the guarded sort, which
over-approximates (weakens a universal). Case terms introduced by the
substitution are expanded before returning, so results are plain formulae
with at most one residual universal block (pre only).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from .normal import Cube, make_cube, normalize_case_lambda
from .specs import RabSpec, TransitionRule
from .terms import (
    And, App, Atom, CaseOf, Const, Formula, Forall, LinSum, Not, Or, RelAtom,
    Select, SortKind, Term, TRUE, Var, and_, arith_atom, eq, exists, forall,
    formula_key, free_vars, fresh_var, linsum, not_, or_, subst_term,
    substitute, term_free_vars,
)


def rename_cube_apart(target: Cube, taken: set) -> Cube:
    ren: Dict[Var, Var] = {}
    pool = set(taken) | {v.name for v in target.vars}
    for v in target.vars:
        if v.name in taken:
            nv = fresh_var(v.name, v.sort, pool)
            pool.add(nv.name)
            ren[v] = nv
    if not ren:
        return target
    return Cube(
        tuple(ren.get(v, v) for v in target.vars),
        tuple(substitute(l, ren) for l in target.literals),
    )


def _apply_updates_term(t: Term, tr: TransitionRule, spec: RabSpec) -> Term:
    """Rewrite primed-state reads: variables to F_i, selections to G_j."""
    if isinstance(t, Var):
        if t.name in spec.memory_vars and spec.memory_vars[t.name] == t:
            return tr.var_updates[t.name]
        return t
    if isinstance(t, (Const,)):
        return t
    if isinstance(t, App):
        return App(t.fun, _apply_updates_term(t.arg, tr, spec), t.sort)
    if isinstance(t, Select):
        idx = _apply_updates_term(t.index, tr, spec)
        y, body = tr.array_updates[t.array]
        return subst_term(body, {y: idx})
    if isinstance(t, LinSum):
        return linsum(
            [(c, _apply_updates_term(b, tr, spec)) for c, b in t.coeffs],
            t.const, t.sort,
        )
    if isinstance(t, CaseOf):
        return CaseOf(
            tuple(
                (apply_updates(c, tr, spec), _apply_updates_term(b, tr, spec))
                for c, b in t.branches
            ),
            t.sort,
        )
    return t


def apply_updates(f: Formula, tr: TransitionRule, spec: RabSpec) -> Formula:
    """f over primed state becomes a formula over the unprimed state."""
    if isinstance(f, Atom):
        lhs = _apply_updates_term(f.lhs, tr, spec)
        rhs = _apply_updates_term(f.rhs, tr, spec)
        if _has_case(lhs, rhs):
            return Atom(f.op, lhs, rhs)  # expanded by case normalization later
        if f.op == "eq":
            return eq(lhs, rhs)
        return arith_atom(f.op, lhs, rhs)
    if isinstance(f, RelAtom):
        return RelAtom(f.rel, tuple(_apply_updates_term(a, tr, spec) for a in f.args))
    if isinstance(f, Not):
        return not_(apply_updates(f.arg, tr, spec))
    if isinstance(f, And):
        return and_(*[apply_updates(a, tr, spec) for a in f.args])
    if isinstance(f, Or):
        return or_(*[apply_updates(a, tr, spec) for a in f.args])
    if isinstance(f, (Forall,)):
        return forall(f.vars, apply_updates(f.body, tr, spec))
    from .terms import Exists

    if isinstance(f, Exists):
        return exists(f.vars, apply_updates(f.body, tr, spec))
    return f


def _has_case(*ts: Term) -> bool:
    from .terms import subterms

    return any(isinstance(s, CaseOf) for t in ts for s in subterms(t))


def _transition_taken(tr: TransitionRule, spec: RabSpec) -> set:
    taken = {v.name for v in tr.exists_index} | {v.name for v in tr.exists_data}
    taken |= set(spec.memory_vars)
    if tr.uguard:
        taken.add(tr.uguard[0].name)
    for y, _ in tr.array_updates.values():
        taken.add(y.name)
    return taken


def pre(tr: TransitionRule, target: Cube, spec: RabSpec) -> Formula:
    """Exact preimage: one residual universal block when tr carries a guard."""
    tgt = rename_cube_apart(target, _transition_taken(tr, spec))
    subd = [apply_updates(l, tr, spec) for l in tgt.literals]
    parts: List[Formula] = [tr.guard]
    if tr.uguard is not None:
        k, g = tr.uguard
        parts.append(Forall((k,), g))
    parts.extend(subd)
    body = normalize_case_lambda(and_(*parts))
    evars = tuple(tr.exists_index) + tuple(tr.exists_data) + tuple(tgt.vars)
    return exists([v for v in evars if v in free_vars(body)], body)


def inst_pre(tr: TransitionRule, target: Cube, spec: RabSpec) -> Formula:
    """Preimage with the universal guard instantiated over the occurring
    existential index variables (plus ground index terms, if any occur)."""
    tgt = rename_cube_apart(target, _transition_taken(tr, spec))
    subd = [apply_updates(l, tr, spec) for l in tgt.literals]
    parts: List[Formula] = [tr.guard]
    if tr.uguard is not None:
        k, g = tr.uguard
        for t in _instantiation_set(k, tr, tgt):
            parts.append(substitute(g, {k: t}))
    parts.extend(subd)
    body = normalize_case_lambda(and_(*parts))
    evars = tuple(tr.exists_index) + tuple(tr.exists_data) + tuple(tgt.vars)
    return exists([v for v in evars if v in free_vars(body)], body)


def _instantiation_set(k: Var, tr: TransitionRule, tgt: Cube) -> List[Term]:
    out: List[Term] = []
    seen = set()
    for v in tuple(tr.exists_index) + tuple(tgt.index_vars):
        if v.sort == k.sort and v.name not in seen:
            seen.add(v.name)
            out.append(v)
    # ground index terms of matching sort occurring in the cube (conservative
    # extension; memory sorts normally carry no ground terms at all)
    for l in tgt.literals:
        for t in _index_ground_terms(l, k.sort):
            key = ("g", t)
            if key not in seen:
                seen.add(key)
                out.append(t)
    return out


def _index_ground_terms(l: Formula, sort) -> List[Term]:
    from .terms import subterms

    out = []
    stack = []
    if isinstance(l, Not):
        l = l.arg
    if isinstance(l, Atom):
        stack = [l.lhs, l.rhs]
    elif isinstance(l, RelAtom):
        stack = list(l.args)
    for t in stack:
        for s in subterms(t):
            if s.sort == sort and isinstance(s, Const):
                out.append(s)
    return out


def pre_formula(tr: TransitionRule, f: Formula, spec: RabSpec) -> Formula:
    """Exact preimage of an arbitrary state formula (quantifiers allowed).

    Used to build the exact trace formula for spuriousness checking and for
    invariant preservation: repeated substitution pushes the primed state out
    while the universal guards stay quantified.
    """
    from .terms import rename_apart, Exists

    taken = _transition_taken(tr, spec) | {v.name for v in free_vars(f)}
    g = f
    evars: Tuple[Var, ...] = ()
    while isinstance(g, (Exists,)):
        g = rename_apart(g, taken)
        for v in g.vars:
            taken.add(v.name)
        evars = evars + g.vars
        g = g.body
    g = _rename_inner_universals(g, taken)
    subd = apply_updates(g, tr, spec)
    parts: List[Formula] = [tr.guard]
    if tr.uguard is not None:
        k, gu = tr.uguard
        if k.name in taken:
            nk = fresh_var(k.name, k.sort, taken)
            gu = substitute(gu, {k: nk})
            k = nk
        taken.add(k.name)
        parts.append(Forall((k,), gu))
    parts.append(subd)
    body = normalize_case_lambda(and_(*parts))
    all_evars = tuple(tr.exists_index) + tuple(tr.exists_data) + evars
    return exists([v for v in all_evars if v in free_vars(body)], body)


def _rename_inner_universals(f: Formula, taken: set) -> Formula:
    from .terms import Exists, rename_apart

    if isinstance(f, Forall):
        f = rename_apart(f, taken)
        for v in f.vars:
            taken.add(v.name)
        return Forall(f.vars, _rename_inner_universals(f.body, taken))
    if isinstance(f, Exists):
        f = rename_apart(f, taken)
        for v in f.vars:
            taken.add(v.name)
        return exists(f.vars, _rename_inner_universals(f.body, taken))
    if isinstance(f, And):
        return and_(*[_rename_inner_universals(a, taken) for a in f.args])
    if isinstance(f, Or):
        return or_(*[_rename_inner_universals(a, taken) for a in f.args])
    if isinstance(f, Not):
        return not_(_rename_inner_universals(f.arg, taken))
    return f


def pre_all(spec: RabSpec, target: Cube, instantiate: bool = True):
    """Per-transition preimages with provenance: [(transition name, formula)]."""
    out = []
    for tr in spec.transitions:
        f = inst_pre(tr, target, spec) if instantiate else pre(tr, target, spec)
        out.append((tr.name, f))
    return out
