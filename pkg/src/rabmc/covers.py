"""Cover computation: strongest quantifier-free consequences of exists-d phi.

Eliminates basic-sort variables from flat cubes modulo EUF-with-unary-
functions plus undef axioms, tamely combined with LIA or LRA. The saturation
procedure:

  1. finite flag sorts expand by substitution (two values, exact);
  2. undef case split on function arguments touching eliminable variables,
     rewriting f(undef) = undef in the undef branch and recording
     image-not-undef facts in the other;
  3. EUF saturation: substitution of defined variables, congruence through
     remaining eliminable variables, disequality lifting;
  4. arithmetic elimination: Gaussian pivoting on unit equalities, then
     Fourier-Motzkin (reals) or integer-tightened Fourier-Motzkin where a
     unit coefficient makes it exact, then Cooper-style offset expansion for
     bounded moduli; leftover kept-term divisibility obligations are dropped
     with the approximate flag set;
  5. residual literals mentioning eliminable variables are dropped (fresh
     element argument for id and value sorts).

Relation atoms over eliminated variables take the instantiation fallback:
the instances plus a relaxed disjunct with the variable's literals dropped,
which is implied by the input, hence a sound over-approximation.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from math import ceil, floor, gcd
from typing import Dict, List, Optional, Sequence, Set, Tuple

from .normal import Cube, flatten, make_cube
from .terms import (
    And, App, Atom, Const, FalseF, Formula, LinSum, Not, Num, Or, RabError,
    RelAtom, Select, Sort, SortKind, Term, Theory, TrueF, UNDEF, Var, and_,
    arith_atom, eq, formula_key, free_vars, is_arith, linsum, neq, not_, or_,
    subst_term, substitute, subterms, term_free_vars, term_key, undef,
)


class SaturationBudgetExceeded(RabError):
    pass


@dataclass
class EliminationTask:
    cube: Cube
    eliminate: frozenset  # frozenset[Var], basic sorts only

    def __post_init__(self) -> None:
        for v in self.eliminate:
            if v.sort.kind is SortKind.MEMORY:
                raise RabError(f"cannot eliminate index variable {v.name}")


@dataclass
class CoverResult:
    disjuncts: List[Cube]
    approximate: bool = False

    def formula(self) -> Formula:
        return or_(*[c.formula() for c in self.disjuncts])


@dataclass
class CoverOptions:
    theory: Theory = Theory.NONE
    lia_qe: str = "cooper"  # or "instantiate"
    max_disjuncts: int = 512
    depth_bound: int = 6
    cooper_modulus_cap: int = 16
    debug: bool = False


def cover(task: EliminationTask, opts: Optional[CoverOptions] = None) -> CoverResult:
    opts = opts or CoverOptions()
    elim = set(task.eliminate)
    base = flatten(task.cube)
    elim |= {v for v in base.vars if v not in task.cube.vars and v.sort.is_basic}
    work = [list(base.literals)]
    approximate = False
    trace: List[str] = []

    try:
        # relation fallback first: it rewrites whole disjunct lists
        work, rel_approx = _relation_fallback(work, elim, base, opts)
        approximate |= rel_approx

        work = _expand_flag_vars(work, elim, opts)
        work = _undef_split(work, elim, opts)

        out: List[List[Formula]] = []
        for lits in work:
            disjs, approx = _saturate_one(lits, elim, opts, trace)
            approximate |= approx
            out.extend(disjs)
            if len(out) > opts.max_disjuncts:
                raise SaturationBudgetExceeded(str(len(out)))
    except SaturationBudgetExceeded:
        # sound fallback: drop every literal mentioning an eliminable variable
        kept = [
            l for l in task.cube.literals
            if not (free_vars(l) & elim)
        ]
        cube = make_cube([v for v in task.cube.vars if v not in elim], kept)
        return CoverResult([cube.canonical()], approximate=True)

    result: List[Cube] = []
    seen = set()
    for lits in out:
        if any(isinstance(l, FalseF) for l in lits):
            continue
        kept_vars = [v for v in base.vars if v not in elim]
        c = make_cube(kept_vars, lits)
        canon = c.canonical()
        key = (canon.vars, canon.literals)
        if key not in seen:
            seen.add(key)
            result.append(c)
    if opts.debug and trace:
        import sys

        print("covers:", " | ".join(trace), file=sys.stderr)
    return CoverResult(result, approximate=approximate)


# ---------------------------------------------------------------------------
# Literal helpers


def _lit_parts(l: Formula) -> Tuple[bool, Formula]:
    if isinstance(l, Not):
        return False, l.arg
    return True, l


def _mentions(l: Formula, elim: Set[Var]) -> bool:
    return bool(free_vars(l) & elim)


def _is_arith_lit(a: Formula) -> bool:
    return isinstance(a, Atom) and (
        is_arith(a.lhs) or isinstance(a.lhs, (Num, LinSum))
    )


# ---------------------------------------------------------------------------
# Step 0: finite flag sorts


def _expand_flag_vars(work: List[List[Formula]], elim: Set[Var],
                      opts: CoverOptions) -> List[List[Formula]]:
    flags = sorted(
        (v for v in elim if v.sort.kind is SortKind.ELEM2), key=lambda v: v.name
    )
    for v in flags:
        values = [Const("__on", v.sort), Const("__off", v.sort)]
        nxt = []
        for lits in work:
            if not any(_mentions(l, {v}) for l in lits):
                nxt.append(lits)
                continue
            for val in values:
                nxt.append([substitute(l, {v: val}) for l in lits])
        work = nxt
        if len(work) > opts.max_disjuncts:
            raise SaturationBudgetExceeded(str(len(work)))
    return work


# ---------------------------------------------------------------------------
# Step 1: undef split


def _undef_split(work: List[List[Formula]], elim: Set[Var],
                 opts: CoverOptions) -> List[List[Formula]]:
    out = []
    for lits in work:
        out.extend(_undef_split_one(lits, elim, opts))
        if len(out) > opts.max_disjuncts:
            raise SaturationBudgetExceeded(str(len(out)))
    return out


def _split_candidates(lits: List[Formula], elim: Set[Var]):
    """Applications f(w) in literals u = f(w) where u or w is eliminable."""
    for l in lits:
        pol, a = _lit_parts(l)
        if not isinstance(a, Atom):
            continue
        sides = (a.lhs, a.rhs)
        for i, s in enumerate(sides):
            other = sides[1 - i]
            for t in subterms(s):
                if not isinstance(t, App):
                    continue
                arg = t.arg
                if arg.sort.kind not in (SortKind.ID, SortKind.VALUE):
                    continue
                if t.sort.kind not in (SortKind.ID, SortKind.VALUE):
                    continue  # arithmetic codomain carries no undef axiom
                w_elim = isinstance(arg, Var) and arg in elim
                u_elim = bool(term_free_vars(other) & elim)
                if w_elim or u_elim:
                    yield t


def _undef_split_one(lits: List[Formula], elim: Set[Var],
                     opts: CoverOptions) -> List[List[Formula]]:
    done: List[List[Formula]] = []
    queue = [lits]
    steps = 0
    while queue:
        steps += 1
        if steps > 4 * opts.max_disjuncts:
            raise SaturationBudgetExceeded("undef splitting")
        cur = queue.pop()
        app = None
        for cand in _split_candidates(cur, elim):
            already = any(
                _lit_parts(l)[1] == Atom("eq", *sorted((cand.arg, undef(cand.arg.sort)), key=term_key))
                for l in cur
                if isinstance(_lit_parts(l)[1], Atom)
            )
            if not already:
                app = cand
                break
        if app is None:
            done.append(cur)
            continue
        w = app.arg
        u_dom = undef(w.sort)
        u_cod = undef(app.sort)
        # branch w = undef: rewrite f(w) to undef everywhere
        b1 = [eq(w, u_dom)]
        for l in cur:
            b1.append(_rewrite_app(l, app, u_cod))
        # branch w != undef: image is not undef either
        b2 = list(cur) + [neq(w, u_dom)]
        if app.sort.kind in (SortKind.ID, SortKind.VALUE):
            b2.append(neq(app, u_cod))
        queue.append([x for x in b1 if not isinstance(x, TrueF)])
        queue.append([x for x in b2 if not isinstance(x, TrueF)])
    return done


def _rewrite_app(l: Formula, app: App, to: Term) -> Formula:
    def rt(t: Term) -> Term:
        if t == app:
            return to
        if isinstance(t, App):
            return App(t.fun, rt(t.arg), t.sort)
        if isinstance(t, Select):
            return Select(t.array, rt(t.index), t.sort)
        if isinstance(t, LinSum):
            return linsum([(c, rt(b)) for c, b in t.coeffs], t.const, t.sort)
        return t

    pol, a = _lit_parts(l)
    if isinstance(a, Atom):
        na = eq(rt(a.lhs), rt(a.rhs)) if a.op == "eq" else arith_atom(a.op, rt(a.lhs), rt(a.rhs))
    elif isinstance(a, RelAtom):
        na = RelAtom(a.rel, tuple(rt(x) for x in a.args))
    else:
        return l
    return na if pol else not_(na)


# ---------------------------------------------------------------------------
# Step 2 + 3: saturation and arithmetic elimination for one disjunct


def _saturate_one(lits: List[Formula], elim: Set[Var], opts: CoverOptions,
                  trace: List[str]) -> Tuple[List[List[Formula]], bool]:
    lits = [l for l in lits if not isinstance(l, TrueF)]
    if any(isinstance(l, FalseF) for l in lits):
        return [], False

    # (i) substitution: d = t with t free of eliminables
    for _ in range(opts.depth_bound * max(1, len(elim))):
        sub = _find_definition(lits, elim)
        if sub is None:
            break
        d, t, idx = sub
        lits = [substitute(l, {d: t}) for j, l in enumerate(lits) if j != idx]
        lits = [l for l in lits if not isinstance(l, TrueF)]
        if any(isinstance(l, FalseF) for l in lits):
            return [], False

    # (ii) congruence and disequality lifting through residual eliminables
    derived: List[Formula] = []
    eq_images: Dict[tuple, List[Term]] = {}
    for l in lits:
        pol, a = _lit_parts(l)
        if not (pol and isinstance(a, Atom) and a.op == "eq"):
            continue
        for side, other in ((a.lhs, a.rhs), (a.rhs, a.lhs)):
            if isinstance(side, App) and isinstance(side.arg, Var) and side.arg in elim:
                eq_images.setdefault((side.fun, side.arg), []).append(other)
    for (fun, d), others in eq_images.items():
        for x, y in itertools.combinations(others, 2):
            if not (term_free_vars(x) & elim) and not (term_free_vars(y) & elim):
                f = eq(x, y)
                if not isinstance(f, TrueF):
                    derived.append(f)
    for l in lits:
        pol, a = _lit_parts(l)
        if pol or not isinstance(a, Atom) or a.op != "eq":
            continue
        for side, other in ((a.lhs, a.rhs), (a.rhs, a.lhs)):
            if isinstance(side, App) and isinstance(side.arg, Var) and side.arg in elim:
                for img in eq_images.get((side.fun, side.arg), []):
                    if not (term_free_vars(img) & elim) and not (
                        term_free_vars(other) & elim
                    ):
                        derived.append(neq(img, other))
    lits = lits + [d for d in derived if d not in lits]
    if any(isinstance(l, FalseF) for l in lits):
        return [], False

    # (iii/iv for EUF): split kept from residual
    arith_lits = []
    kept: List[Formula] = []
    dropped_euf = False
    for l in lits:
        pol, a = _lit_parts(l)
        if _is_arith_lit(a):
            arith_lits.append(l)
        elif _mentions(l, elim):
            dropped_euf = True
        else:
            kept.append(l)

    disjuncts, approx = _arith_eliminate(arith_lits, kept, elim, opts, trace)
    return disjuncts, approx


def _find_definition(lits: List[Formula], elim: Set[Var]):
    for idx, l in enumerate(lits):
        pol, a = _lit_parts(l)
        if not (pol and isinstance(a, Atom) and a.op == "eq"):
            continue
        if _is_arith_lit(a):
            continue
        for side, other in ((a.lhs, a.rhs), (a.rhs, a.lhs)):
            if isinstance(side, Var) and side in elim:
                if not (term_free_vars(other) & elim):
                    return side, other, idx
    # equalities between two eliminables: alias one to the other
    for idx, l in enumerate(lits):
        pol, a = _lit_parts(l)
        if pol and isinstance(a, Atom) and a.op == "eq" and not _is_arith_lit(a):
            if (isinstance(a.lhs, Var) and a.lhs in elim
                    and isinstance(a.rhs, Var) and a.rhs in elim):
                return a.lhs, a.rhs, idx
    return None


# ---------------------------------------------------------------------------
# Arithmetic elimination


def _arith_view(l: Formula):
    """(op, coeffs dict base->Fraction, const, strict-polarity normalized)."""
    pol, a = _lit_parts(l)
    coeffs: Dict[Term, Fraction] = {}
    const = Fraction(0)

    def gather(t: Term, sign: Fraction):
        nonlocal const
        if isinstance(t, Num):
            const += sign * t.value
        elif isinstance(t, LinSum):
            const += sign * t.const
            for c, b in t.coeffs:
                coeffs[b] = coeffs.get(b, Fraction(0)) + sign * c
        else:
            coeffs[t] = coeffs.get(t, Fraction(0)) + sign

    gather(a.lhs, Fraction(1))
    gather(a.rhs, Fraction(-1))
    coeffs = {b: c for b, c in coeffs.items() if c != 0}
    if pol:
        return (a.op, coeffs, const)
    if a.op == "eq":
        return ("neq", coeffs, const)
    if a.op == "le":  # not (x <= 0) -> -x < 0
        return ("lt", {b: -c for b, c in coeffs.items()}, -const)
    return ("le", {b: -c for b, c in coeffs.items()}, -const)


def _rebuild(op: str, coeffs: Dict[Term, Fraction], const: Fraction,
             sort: Sort) -> Formula:
    if sort.name == "int":
        lcm = const.denominator
        for c in coeffs.values():
            lcm = lcm * c.denominator // gcd(lcm, c.denominator)
        if lcm != 1:
            coeffs = {b: c * lcm for b, c in coeffs.items()}
            const = const * lcm
    t = linsum(list((c, b) for b, c in coeffs.items()), const, sort)
    zero = Num(Fraction(0), sort)
    if op == "eq":
        return arith_atom("eq", t, zero)
    if op == "neq":
        return not_(arith_atom("eq", t, zero))
    return arith_atom(op, t, zero)


def _arith_eliminate(arith_lits: List[Formula], kept: List[Formula],
                     elim: Set[Var], opts: CoverOptions,
                     trace: List[str]) -> Tuple[List[List[Formula]], bool]:
    if not arith_lits:
        return [kept], False
    sort = None
    views = []
    for l in arith_lits:
        op, coeffs, const = _arith_view(l)
        views.append((op, coeffs, const))
        for b in coeffs:
            sort = b.sort
    if sort is None:
        # purely constant comparisons were already simplified away
        return [kept], False
    is_int = sort.name == "int"

    def base_elim(b: Term) -> bool:
        return bool(term_free_vars(b) & elim)

    # Gaussian pivoting on equalities defining an eliminable base
    budget = 4 + 4 * len(views)
    changed = True
    while changed and budget > 0:
        budget -= 1
        changed = False
        for i, (op, coeffs, const) in enumerate(views):
            if op != "eq":
                continue
            pivots = [b for b in coeffs if base_elim(b)]
            if len(pivots) != 1:
                continue
            b = pivots[0]
            c = coeffs[b]
            if is_int and abs(c) != 1:
                continue  # non-unit integer pivot: leave for Cooper / fallback
            rest = {k: v for k, v in coeffs.items() if k != b}
            nviews = []
            for j, (op2, c2, k2) in enumerate(views):
                if j == i:
                    continue
                cb = c2.get(b)
                if not cb:
                    nviews.append((op2, c2, k2))
                    continue
                factor = cb / c
                merged = {k: v for k, v in c2.items() if k != b}
                for k, v in rest.items():
                    nv = merged.get(k, Fraction(0)) - factor * v
                    if nv == 0:
                        merged.pop(k, None)
                    else:
                        merged[k] = nv
                nviews.append((op2, merged, k2 - factor * const))
            views = nviews
            changed = True
            break

    # collect residual eliminable bases
    residual = sorted(
        {b for _, coeffs, _ in views for b in coeffs if base_elim(b)},
        key=term_key,
    )
    approx = False
    branches = [views]
    for b in residual:
        nxt = []
        for vs in branches:
            pieces, a = _eliminate_base(vs, b, is_int, opts, trace)
            approx |= a
            nxt.extend(pieces)
            if len(nxt) > opts.max_disjuncts:
                raise SaturationBudgetExceeded("arith disjuncts")
        branches = nxt

    out = []
    for vs in branches:
        lits = list(kept)
        sat = True
        for op, coeffs, const in vs:
            if any(base_elim(b) for b in coeffs):
                approx = True
                continue
            f = _rebuild(op, coeffs, const, sort)
            if isinstance(f, FalseF):
                sat = False
                break
            if not isinstance(f, TrueF):
                lits.append(f)
        if sat:
            out.append(lits)
    return out, approx


def _eliminate_base(views, b: Term, is_int: bool, opts: CoverOptions,
                    trace: List[str]):
    """Eliminate base b from the conjunction `views`; may fork disjuncts."""
    with_b = [v for v in views if b in v[1]]
    without = [v for v in views if b not in v[1]]
    if not with_b:
        return [views], False

    # disequalities involving b: a fresh-value argument discharges them when b
    # is otherwise unbounded; otherwise split into < and >
    eqs = [v for v in with_b if v[0] == "eq"]
    neqs = [v for v in with_b if v[0] == "neq"]
    ineqs = [v for v in with_b if v[0] in ("le", "lt")]
    if neqs and (eqs or ineqs):
        op, coeffs, const = neqs[0]
        rest = [v for v in with_b if v is not neqs[0]] + without
        lt_side = ("lt", coeffs, const)
        gt_side = ("lt", {k: -c for k, c in coeffs.items()}, -const)
        b1, a1 = _eliminate_base(rest + [lt_side], b, is_int, opts, trace)
        b2, a2 = _eliminate_base(rest + [gt_side], b, is_int, opts, trace)
        return b1 + b2, a1 or a2
    if neqs:
        # only disequalities constrain b: a large fresh value satisfies them
        return [without], False
    if eqs:
        # leftover equality with non-unit integer pivot
        op, coeffs, const = eqs[0]
        rest = [v for v in with_b if v is not eqs[0]] + without
        le_side = ("le", coeffs, const)
        ge_side = ("le", {k: -c for k, c in coeffs.items()}, -const)
        return _eliminate_base(rest + [le_side, ge_side], b, is_int, opts, trace)

    lowers = []  # (cl, tl, kl, op): tl + kl <=(<) cl*b
    uppers = []  # (cu, tu, ku, op): cu*b + tu + ku <=(<) 0
    for op, coeffs, const in ineqs:
        c = coeffs[b]
        rest = {k: v for k, v in coeffs.items() if k != b}
        if c > 0:
            uppers.append((c, rest, const, op))
        else:
            lowers.append((-c, rest, const, op))
    if not lowers or not uppers:
        return [without], False

    if not is_int:
        out = list(without)
        for cl, tl, kl, opl in lowers:
            for cu, tu, ku, opu in uppers:
                # cu*(tl + kl) <= cl*cu*b <= -cl*(tu + ku)
                coeffs = {k: cu * v for k, v in tl.items()}
                for k, v in tu.items():
                    nv = coeffs.get(k, Fraction(0)) + cl * v
                    if nv == 0:
                        coeffs.pop(k, None)
                    else:
                        coeffs[k] = nv
                const = cu * kl + cl * ku
                strict = "lt" if (opl == "lt" or opu == "lt") else "le"
                out.append((strict, coeffs, const))
        return [out], False

    # integers: scale to integer coefficients and tighten strict bounds
    def int_form(c, t, k, op):
        lcm = c.denominator
        for v in list(t.values()) + [k]:
            lcm = lcm * v.denominator // gcd(lcm, v.denominator)
        c2 = c * lcm
        t2 = {kk: vv * lcm for kk, vv in t.items()}
        k2 = k * lcm
        if op == "lt":
            k2 += 1  # strict over integers
        return c2, t2, k2

    lowers = [int_form(*l) for l in lowers]
    uppers = [int_form(*u) for u in uppers]
    if all(min(cl, cu) == 1 for cl, _, _ in lowers for cu, _, _ in uppers):
        # unit coefficient on one side of every pair: the tightened
        # Fourier-Motzkin resolvent is exact over the integers
        out = list(without)
        for cl, tl, kl in lowers:
            for cu, tu, ku in uppers:
                coeffs = {k: cu * v for k, v in tl.items()}
                for k, v in tu.items():
                    nv = coeffs.get(k, Fraction(0)) + cl * v
                    if nv == 0:
                        coeffs.pop(k, None)
                    else:
                        coeffs[k] = nv
                out.append(("le", coeffs, cu * kl + cl * ku))
        return [out], False

    if opts.lia_qe == "cooper":
        delta = 1
        for c, _, _ in lowers + uppers:
            delta = delta * int(c) // gcd(delta, int(c))
        if delta <= opts.cooper_modulus_cap:
            return _cooper_expand(without, lowers, uppers, delta)
    # widening fallback: drop the variable's constraints entirely; the result
    # is implied by the input, hence still a sound over-approximation
    return [list(without)], True


def _cooper_expand(without, lowers, uppers, delta):
    """Offset expansion after scaling the variable's coefficient to delta.

    With e = delta*b every bound is unit in e and the exact elimination is
    the disjunction over lower bounds L and offsets j in 1..delta of the
    instantiated constraints plus the divisibility delta | L + j. Divisibility
    over a non-constant kept term is not expressible quantifier free; such
    conjuncts are dropped (weakening each disjunct, so the whole stays sound)
    and the result is flagged approximate. Constant lower bounds keep the
    residue test exact.
    """
    # scaled bounds on e: lower (tl + kl) * delta/cl <= e ; e <= -(tu + ku) * delta/cu
    slow = []
    for cl, tl, kl in lowers:
        m = Fraction(delta, cl)
        slow.append(({k: v * m for k, v in tl.items()}, kl * m))
    sup = []
    for cu, tu, ku in uppers:
        m = Fraction(delta, cu)
        sup.append(({k: -v * m for k, v in tu.items()}, -ku * m))
    branches = []
    approx = delta > 1 and any(t for t, _ in slow)
    for tl, kl in slow:
        for j in range(0, delta):
            # e := tl + kl + j  (offsets 0..delta-1 cover every residue at or
            # above this non-strict lower bound)
            if not tl and delta > 1:
                if int(kl + j) % delta != 0:
                    continue  # constant bound: residue test is decisive
            out = list(without)
            dead = False
            for tl2, kl2 in slow:
                coeffs = dict(tl2)
                for k, v in tl.items():
                    nv = coeffs.get(k, Fraction(0)) - v
                    if nv == 0:
                        coeffs.pop(k, None)
                    else:
                        coeffs[k] = nv
                const = kl2 - kl - j
                if not coeffs and const > 0:
                    dead = True
                    break
                if coeffs or const > 0:
                    out.append(("le", coeffs, const))
            if dead:
                continue
            for tu2, ku2 in sup:
                coeffs = dict(tl)
                for k, v in tu2.items():
                    nv = coeffs.get(k, Fraction(0)) - v
                    if nv == 0:
                        coeffs.pop(k, None)
                    else:
                        coeffs[k] = nv
                const = kl + j - ku2
                if not coeffs and const > 0:
                    dead = True
                    break
                if coeffs or const > 0:
                    out.append(("le", coeffs, const))
            if not dead:
                branches.append(out)
    return branches, approx


# ---------------------------------------------------------------------------
# Relation fallback


def _relation_fallback(work: List[List[Formula]], elim: Set[Var], base: Cube,
                       opts: CoverOptions) -> Tuple[List[List[Formula]], bool]:
    rel_vars: Set[Var] = set()
    for lits in work:
        for l in lits:
            pol, a = _lit_parts(l)
            if isinstance(a, RelAtom):
                rel_vars |= free_vars(l) & elim
    if not rel_vars:
        return work, False
    approx = True
    for d in sorted(rel_vars, key=lambda v: v.name):
        nxt = []
        for lits in work:
            if not any(_mentions(l, {d}) for l in lits):
                nxt.append(lits)
                continue
            cands: List[Term] = []
            seen_keys = set()
            for l in lits:
                for t in _lit_subterms(l):
                    if t.sort == d.sort and not (term_free_vars(t) & elim):
                        k = term_key(t)
                        if k not in seen_keys:
                            seen_keys.add(k)
                            cands.append(t)
            for t in cands:
                nxt.append([substitute(l, {d: t}) for l in lits])
            nxt.append([l for l in lits if not _mentions(l, {d})])
            if len(nxt) > opts.max_disjuncts:
                raise SaturationBudgetExceeded("relation fallback")
        work = nxt
    return work, approx


def _lit_subterms(l: Formula):
    pol, a = _lit_parts(l)
    if isinstance(a, Atom):
        yield from subterms(a.lhs)
        yield from subterms(a.rhs)
    elif isinstance(a, RelAtom):
        for x in a.args:
            yield from subterms(x)


# ---------------------------------------------------------------------------
# Bounded extension oracle (test-side strength check)


def extension_universe(spec, universe, extra: int = 1):
    """Grow id/value domains and densify the arithmetic samples for witnesses."""
    from . import explore

    big = explore.BoundedUniverse(
        {k: list(v) for k, v in universe.domains.items()}, []
    )
    for s in spec.signature.sorts.values():
        if s.kind in (SortKind.ID, SortKind.VALUE):
            big.domains[s.name] = big.domains[s.name] + [
                f"{s.name}!ext{i}" for i in range(extra)
            ]
    if universe.arith_values:
        lo = min(universe.arith_values) - 2
        hi = max(universe.arith_values) + 2
        vals = {Fraction(i) for i in range(int(lo), int(hi) + 1)}
        vals |= set(universe.arith_values)
        if spec.signature.theory is Theory.LRA:
            svals = sorted(vals)
            for a, b in zip(svals, svals[1:]):
                vals.add((a + b) / 2)
        big.arith_values = sorted(vals)
    return big


def check_cover_by_extension(
    task: EliminationTask,
    candidate: Formula,
    spec,
    universe,
    extra: int = 1,
) -> bool:
    """Every bounded model of the candidate must extend to a model of the
    input cube (the eliminated variables may take values among `extra` fresh
    id/value elements or densified arithmetic samples)."""
    from . import explore
    from .terms import arrays_of, exists

    # index variables stay free: the cover is computed with them kept
    inner = exists(sorted(task.eliminate, key=lambda v: v.name),
                   and_(*task.cube.literals))
    footprint_arrays = sorted(
        (arrays_of(inner) | arrays_of(candidate)) & set(spec.memory_arrays)
    )
    kept_vars = sorted(
        (free_vars(inner) | free_vars(candidate)) - set(task.eliminate),
        key=lambda v: v.name,
    )
    big = extension_universe(spec, universe, extra)
    for model in explore.enumerate_models(
        candidate, spec, universe, arrays=footprint_arrays, over_vars=kept_vars
    ):
        if not _extends_to_model(task, model, spec, universe, big, footprint_arrays):
            return False
    return True


def _extends_to_model(task, model, spec, universe, big, footprint_arrays) -> bool:
    """Search an extension of `model` satisfying the task cube."""
    from . import explore
    from .terms import Exists, exists

    inner = exists(sorted(task.eliminate, key=lambda v: v.name),
                   and_(*task.cube.literals))
    assign = model["assign"]
    small_structure = model["structure"]
    old = {e for dom in universe.domains.values() for e in dom}

    for structure in explore.enumerate_structures(spec, big):
        agree = True
        for name, table in small_structure.funs:
            btable = structure.fun(name)
            for arg, val in table:
                if btable.get(arg) != val:
                    agree = False
                    break
            if not agree:
                break
        if agree:
            for name, tuples in small_structure.rels:
                bt = structure.rel(name)
                for t in bt:
                    if all(x in old for x in t) and t not in tuples:
                        agree = False
                        break
                if not agree or any(t not in bt for t in tuples):
                    agree = False
                    break
        if not agree:
            continue
        ev = explore.Evaluator(spec, big, structure)
        arrays_fixed = model["arrays"]
        arr_tables = []
        for a in ev.arr_order:
            mem, cod = spec.memory_arrays[a]
            if a in arrays_fixed:
                arr_tables.append(tuple(arrays_fixed[a]))
            else:
                arr_tables.append(tuple(big.domain(cod)[0] for _ in big.domain(mem)))
        state = (model["state"][0], tuple(arr_tables))
        body = inner
        evars: List[Var] = []
        while isinstance(body, Exists):
            evars.extend(body.vars)
            body = body.body
        doms = [big.domain(v.sort) for v in evars]
        for combo in itertools.product(*doms):
            env2 = dict(assign)
            env2.update({v.name: val for v, val in zip(evars, combo)})
            if ev.formula(body, state, env2):
                return True
    return False
