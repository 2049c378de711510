"""Bounded explicit-state exploration: the independent ground-truth oracle.

Enumerates small static-DB structures and index domains, executes transitions
concretely, and decides bounded reachability. Also enumerates models of
formulae over the bounded universe, which backs the exists-forall agreement
suite and the cover strength checks.

Everything is deterministic: domains are ordered lists and enumeration uses
itertools.product over them.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Set, Tuple

from .specs import RabSpec, TransitionRule
from .terms import (
    And, App, ArrayEq, Atom, CaseOf, Const, Exists, FalseF, Forall, Formula,
    LinSum, Not, Num, Or, RabError, RelAtom, Select, Sort, SortKind, Term,
    Theory, TrueF, UNDEF, Var, free_vars,
)


class UniverseTooLarge(RabError):
    pass


ENUM_CAP = 2_000_000


def _undef_val(sort: Sort) -> str:
    return f"{sort.name}!undef"


@dataclass
class BoundedUniverse:
    """Ordered finite domains per sort plus an arithmetic sample set."""

    domains: Dict[str, list] = field(default_factory=dict)
    arith_values: List[Fraction] = field(default_factory=list)

    def domain(self, sort: Sort) -> list:
        if sort.kind is SortKind.ARITH:
            return self.arith_values
        return self.domains[sort.name]


def arith_samples(spec: RabSpec, lo: int = -4, hi: int = 4) -> List[Fraction]:
    """Numerals in the spec, their neighbours, the endpoints; halves for LRA."""
    base: Set[Fraction] = {Fraction(lo), Fraction(hi), Fraction(0)}
    for f in _all_formulas(spec):
        for n in _numerals(f):
            base |= {n, n - 1, n + 1}
            if spec.signature.theory is Theory.LRA:
                base |= {n - Fraction(1, 2), n + Fraction(1, 2)}
    for t in list(spec.init_vars.values()) + list(spec.init_arrays.values()):
        if isinstance(t, Num):
            base |= {t.value, t.value + 1}
    return sorted(base)


def _all_formulas(spec: RabSpec) -> Iterator[Formula]:
    for tr in spec.transitions:
        yield tr.guard
        if tr.uguard:
            yield tr.uguard[1]
        for t in tr.var_updates.values():
            yield from _term_formulas(t)
        for _, t in tr.array_updates.values():
            yield from _term_formulas(t)
    yield from spec.unsafe.values()
    yield from spec.invariants.values()


def _term_formulas(t: Term) -> Iterator[Formula]:
    if isinstance(t, CaseOf):
        for cond, val in t.branches:
            yield cond
            yield from _term_formulas(val)


def _numerals(f: Formula) -> Iterator[Fraction]:
    from .terms import formula_terms, subterms

    for t in formula_terms(f):
        for s in subterms(t):
            if isinstance(s, Num):
                yield s.value
            elif isinstance(s, LinSum):
                yield s.const


def build_universe(
    spec: RabSpec,
    id_size: int = 2,
    index_size: int = 2,
    arith_lo: int = -4,
    arith_hi: int = 4,
    value_size: Optional[int] = None,
) -> BoundedUniverse:
    """Domains: undef, the declared constants (distinct), then fresh elements.

    `id_size`/`value_size` count the fresh elements beyond constants and undef.
    """
    u = BoundedUniverse()
    sig = spec.signature
    for s in sig.sorts.values():
        if s.kind is SortKind.MEMORY:
            u.domains[s.name] = [f"{s.name}!{i}" for i in range(index_size)]
        elif s.kind is SortKind.ELEM2:
            consts = [n for n, cs in sig.consts.items() if cs == s]
            u.domains[s.name] = [f"{s.name}!{n}" for n in consts] or [
                f"{s.name}!0", f"{s.name}!1"
            ]
        elif s.kind is not SortKind.ARITH:
            consts = [n for n, cs in sig.consts.items() if cs == s]
            n_fresh = id_size if s.kind is SortKind.ID else (
                value_size if value_size is not None else id_size
            )
            u.domains[s.name] = (
                [_undef_val(s)]
                + [f"{s.name}!{n}" for n in consts]
                + [f"{s.name}!#{i}" for i in range(n_fresh)]
            )
    u.arith_values = arith_samples(spec, arith_lo, arith_hi)
    return u


# ---------------------------------------------------------------------------
# Structures (static DB instances) and states


@dataclass(frozen=True)
class Structure:
    funs: tuple  # tuple[(name, tuple[(arg, val), ...]), ...]
    rels: tuple  # tuple[(name, frozenset[tuple]), ...]

    def fun(self, name: str) -> dict:
        for n, table in self.funs:
            if n == name:
                return dict(table)
        raise KeyError(name)

    def rel(self, name: str) -> frozenset:
        for n, s in self.rels:
            if n == name:
                return s
        raise KeyError(name)


def enumerate_structures(spec: RabSpec, universe: BoundedUniverse) -> Iterator[Structure]:
    sig = spec.signature
    fun_choices: List[Tuple[str, List[tuple]]] = []
    count = 1
    for name, (dom, cod) in sig.funs.items():
        dvals = universe.domain(dom)
        if sig.has_undef(cod):
            cvals = [v for v in universe.domain(cod) if v != _undef_val(cod)]
        else:
            cvals = universe.domain(cod)
        tables = []
        non_undef = [d for d in dvals if d != _undef_val(dom)]
        for images in itertools.product(cvals, repeat=len(non_undef)):
            table = list(zip(non_undef, images))
            if sig.has_undef(dom) and sig.has_undef(cod):
                table.append((_undef_val(dom), _undef_val(cod)))
            elif sig.has_undef(dom):
                # arith codomain: undef argument maps anywhere; enumerate too
                pass
            tables.append(tuple(sorted(table)))
        if sig.has_undef(dom) and not sig.has_undef(cod):
            expanded = []
            for t in tables:
                for v in cvals:
                    expanded.append(tuple(sorted(t + ((_undef_val(dom), v),))))
            tables = expanded
        count *= max(1, len(tables))
        if count > ENUM_CAP:
            raise UniverseTooLarge(f"too many structures (> {ENUM_CAP})")
        fun_choices.append((name, tables))
    rel_choices: List[Tuple[str, List[frozenset]]] = []
    for name, argsorts in sig.rels.items():
        tuples = list(itertools.product(*[universe.domain(s) for s in argsorts]))
        if len(tuples) > 16:
            raise UniverseTooLarge(f"relation '{name}' domain too large to enumerate")
        subsets = []
        for mask in range(2 ** len(tuples)):
            subsets.append(frozenset(t for i, t in enumerate(tuples) if mask >> i & 1))
        count *= len(subsets)
        if count > ENUM_CAP:
            raise UniverseTooLarge(f"too many structures (> {ENUM_CAP})")
        rel_choices.append((name, subsets))
    fun_names = [n for n, _ in fun_choices]
    rel_names = [n for n, _ in rel_choices]
    for fun_pick in itertools.product(*[ts for _, ts in fun_choices]):
        for rel_pick in itertools.product(*[ss for _, ss in rel_choices]):
            yield Structure(
                tuple(zip(fun_names, fun_pick)),
                tuple(zip(rel_names, rel_pick)),
            )


State = Tuple[tuple, tuple]  # (var values in order, array tables in order)


class Evaluator:
    def __init__(self, spec: RabSpec, universe: BoundedUniverse,
                 structure: Structure) -> None:
        self.spec = spec
        self.u = universe
        self.st = structure
        self.var_order = list(spec.memory_vars)
        self.arr_order = list(spec.memory_arrays)
        self._funs = {n: dict(t) for n, t in structure.funs}
        self._rels = {n: s for n, s in structure.rels}

    # -- values --------------------------------------------------------------
    def const_value(self, c: Const):
        if c.sort.kind is SortKind.ARITH:
            raise RabError("arith constant without numeral")
        if c.name == UNDEF:
            return _undef_val(c.sort)
        return f"{c.sort.name}!{c.name}"

    def initial_states(self) -> List[State]:
        """All initial states.

        Plain specs have one per structure. Transformed specs (relativized
        init) leave failure flags unconstrained and pin an array entry only
        where its sort's flag is on, so several tables qualify.
        """
        vals = []
        for x in self.var_order:
            t = self.spec.init_vars[x]
            vals.append(t.value if isinstance(t, Num) else self.const_value(t))
        base_vals = tuple(vals)

        def init_val(a: str):
            t = self.spec.init_arrays[a]
            return t.value if isinstance(t, Num) else self.const_value(t)

        if not self.spec.init_relativized:
            arrays = []
            for a in self.arr_order:
                mem, cod = self.spec.memory_arrays[a]
                if a in self.spec.init_arrays:
                    arrays.append(tuple(init_val(a) for _ in self.u.domain(mem)))
                else:
                    arrays.append(tuple(
                        self.u.domain(cod)[0] for _ in self.u.domain(mem)
                    ))
            return [(base_vals, tuple(arrays))]

        alive = self.spec.alive_arrays()  # mem sort name -> flag array name
        flag_arrays = set(alive.values())
        flag_tables: List[List[tuple]] = []
        flag_names = [a for a in self.arr_order if a in flag_arrays]
        for a in flag_names:
            mem, cod = self.spec.memory_arrays[a]
            dom = self.u.domain(mem)
            flag_tables.append(list(itertools.product(self.u.domain(cod), repeat=len(dom))))
        out = []
        for combo in itertools.product(*flag_tables):
            flags = dict(zip(flag_names, combo))
            per_array: List[List[tuple]] = []
            for a in self.arr_order:
                mem, cod = self.spec.memory_arrays[a]
                dom = self.u.domain(mem)
                if a in flag_arrays:
                    per_array.append([flags[a]])
                    continue
                flag = alive.get(mem.name)
                on = f"{self.spec.memory_arrays[flag][1].name}!__on" if flag else None
                pinned = init_val(a) if a in self.spec.init_arrays else None
                slots = []
                for pos in range(len(dom)):
                    if flag is not None and flags[flag][pos] == on and pinned is not None:
                        slots.append([pinned])
                    elif pinned is not None and flag is None:
                        slots.append([pinned])
                    else:
                        slots.append(list(self.u.domain(cod)))
                per_array.append([tuple(t) for t in itertools.product(*slots)])
            for tables in itertools.product(*per_array):
                out.append((base_vals, tuple(tables)))
        return out

    # -- evaluation ----------------------------------------------------------
    def term(self, t: Term, state: State, env: dict):
        if isinstance(t, Var):
            if t.name in env:
                return env[t.name]
            if t.name in self.spec.memory_vars:
                return state[0][self.var_order.index(t.name)]
            raise RabError(f"unbound variable {t.name}")
        if isinstance(t, Const):
            return self.const_value(t)
        if isinstance(t, Num):
            return t.value
        if isinstance(t, App):
            arg = self.term(t.arg, state, env)
            return self._funs[t.fun][arg]
        if isinstance(t, Select):
            idx = self.term(t.index, state, env)
            mem = self.spec.memory_arrays[t.array][0]
            pos = self.u.domain(mem).index(idx)
            return state[1][self.arr_order.index(t.array)][pos]
        if isinstance(t, LinSum):
            acc = t.const
            for c, b in t.coeffs:
                acc += c * self.term(b, state, env)
            return acc
        if isinstance(t, CaseOf):
            for cond, val in t.branches:
                if self.formula(cond, state, env):
                    return self.term(val, state, env)
            raise RabError("case fell through")
        raise TypeError(t)

    def formula(self, f: Formula, state: State, env: dict) -> bool:
        if isinstance(f, TrueF):
            return True
        if isinstance(f, FalseF):
            return False
        if isinstance(f, Atom):
            a = self.term(f.lhs, state, env)
            b = self.term(f.rhs, state, env)
            if f.op == "eq":
                return a == b
            return a <= b if f.op == "le" else a < b
        if isinstance(f, RelAtom):
            args = tuple(self.term(a, state, env) for a in f.args)
            return args in self._rels[f.rel]
        if isinstance(f, Not):
            return not self.formula(f.arg, state, env)
        if isinstance(f, And):
            return all(self.formula(a, state, env) for a in f.args)
        if isinstance(f, Or):
            return any(self.formula(a, state, env) for a in f.args)
        if isinstance(f, (Exists, Forall)):
            doms = [self.u.domain(v.sort) for v in f.vars]
            names = [v.name for v in f.vars]
            want_any = isinstance(f, Exists)
            for combo in itertools.product(*doms):
                env2 = dict(env)
                env2.update(zip(names, combo))
                if self.formula(f.body, state, env2) == want_any:
                    return want_any
            return not want_any
        if isinstance(f, ArrayEq):
            mem = self.spec.memory_arrays[f.array][0]
            for idx in self.u.domain(mem):
                env2 = dict(env)
                env2[f.var.name] = idx
                sel = Select(f.array, f.var, f.body.sort)
                if self.term(sel, state, env2) != self.term(f.body, state, env2):
                    return False
            return True
        raise TypeError(f)

    # -- transitions ---------------------------------------------------------
    def successors(self, state: State, tr: TransitionRule) -> Iterator[State]:
        e_doms = [self.u.domain(v.sort) for v in tr.exists_index]
        d_doms = [self.u.domain(v.sort) for v in tr.exists_data]
        names = [v.name for v in tr.exists_index] + [v.name for v in tr.exists_data]
        for combo in itertools.product(*e_doms, *d_doms):
            env = dict(zip(names, combo))
            if not self.formula(tr.guard, state, env):
                continue
            if tr.uguard is not None:
                k, g = tr.uguard
                ok = True
                for idx in self.u.domain(k.sort):
                    env2 = dict(env)
                    env2[k.name] = idx
                    if not self.formula(g, state, env2):
                        ok = False
                        break
                if not ok:
                    continue
            yield self.apply_updates(state, tr, env)

    def apply_updates(self, state: State, tr: TransitionRule, env: dict) -> State:
        new_vals = []
        for x in self.var_order:
            new_vals.append(self.term(tr.var_updates[x], state, env))
        new_arrays = []
        for a in self.arr_order:
            y, body = tr.array_updates[a]
            mem = self.spec.memory_arrays[a][0]
            col = []
            for idx in self.u.domain(mem):
                env2 = dict(env)
                env2[y.name] = idx
                col.append(self.term(body, state, env2))
            new_arrays.append(tuple(col))
        return (tuple(new_vals), tuple(new_arrays))


@dataclass
class Counterexample:
    trace: List[str]
    state: State
    structure: Structure
    unsafe_name: str


@dataclass
class ReachReport:
    states: int
    depth: int
    counterexample: Optional[Counterexample]


def forward_reach(
    spec: RabSpec,
    universe: BoundedUniverse,
    depth: int,
    state_cap: int = 200_000,
    unsafe_names: Optional[Sequence[str]] = None,
) -> ReachReport:
    """BFS over concrete states across all structures; first violation wins."""
    names = list(unsafe_names or spec.unsafe.keys())
    total_states = 0
    max_depth = 0
    for structure in enumerate_structures(spec, universe):
        ev = Evaluator(spec, universe, structure)
        frontier = ev.initial_states()
        parents: Dict[State, Tuple[Optional[State], Optional[str]]] = {
            s: (None, None) for s in frontier
        }
        for s in frontier:
            for un in names:
                if ev.formula(spec.unsafe[un], s, {}):
                    return ReachReport(len(parents), 0, Counterexample([], s, structure, un))
        for d in range(depth):
            nxt = []
            for s in frontier:
                for tr in spec.transitions:
                    for s2 in ev.successors(s, tr):
                        if s2 in parents:
                            continue
                        parents[s2] = (s, tr.name)
                        if len(parents) > state_cap:
                            raise UniverseTooLarge(
                                f"state cap {state_cap} exceeded at depth {d + 1}"
                            )
                        for un in names:
                            if ev.formula(spec.unsafe[un], s2, {}):
                                trace = [tr.name]
                                cur = s
                                while parents[cur][0] is not None:
                                    trace.append(parents[cur][1])
                                    cur = parents[cur][0]
                                trace.reverse()
                                return ReachReport(
                                    len(parents), d + 1,
                                    Counterexample(trace, s2, structure, un),
                                )
                        nxt.append(s2)
            if not nxt:
                break
            frontier = nxt
            max_depth = max(max_depth, d + 1)
        total_states += len(parents)
    return ReachReport(total_states, max_depth, None)


def replay(spec: RabSpec, universe: BoundedUniverse, structure: Structure,
           trace: Sequence[str], unsafe_name: str) -> bool:
    """Does some run along `trace` end in the unsafe region?"""
    ev = Evaluator(spec, universe, structure)
    current = set(ev.initial_states())
    for name in trace:
        tr = next(t for t in spec.transitions if t.name == name)
        nxt: Set[State] = set()
        for s in current:
            nxt.update(ev.successors(s, tr))
        current = nxt
        if not current:
            return False
    return any(ev.formula(spec.unsafe[unsafe_name], s, {}) for s in current)


# ---------------------------------------------------------------------------
# Model enumeration for arbitrary formulae (agreement suites, cover checks)


def enumerate_models(
    f: Formula,
    spec: RabSpec,
    universe: BoundedUniverse,
    limit: Optional[int] = None,
    arrays: Optional[Sequence[str]] = None,
    over_vars: Optional[Sequence[Var]] = None,
) -> Iterator[dict]:
    """Yield models as dicts: structure, array tables, variable assignment.

    `arrays`/`over_vars` widen the enumeration footprint beyond what f
    mentions (needed when models must cover another formula's symbols).
    """
    if arrays is None:
        arrays = sorted(_arrays_in(f) & set(spec.memory_arrays))
    else:
        arrays = sorted(set(arrays))
    if over_vars is None:
        fvs = sorted(free_vars(f), key=lambda v: v.name)
    else:
        fvs = sorted(set(over_vars) | free_vars(f), key=lambda v: v.name)
    count = 0
    for structure in enumerate_structures(spec, universe):
        ev = Evaluator(spec, universe, structure)
        array_doms = []
        for a in arrays:
            mem, cod = spec.memory_arrays[a]
            dom = universe.domain(mem)
            tables = list(itertools.product(universe.domain(cod), repeat=len(dom)))
            array_doms.append(tables)
        var_doms = [universe.domain(v.sort) for v in fvs]
        est = 1
        for d in array_doms + var_doms:
            est *= max(1, len(d))
            if est > ENUM_CAP:
                raise UniverseTooLarge("model enumeration too large")
        for tables in itertools.product(*array_doms):
            state_arrays = []
            for a in ev.arr_order:
                if a in arrays:
                    state_arrays.append(tables[arrays.index(a)])
                else:
                    mem, cod = spec.memory_arrays[a]
                    state_arrays.append(
                        tuple(universe.domain(cod)[0] for _ in universe.domain(mem))
                    )
            base_vals = []
            for x in ev.var_order:
                v = spec.memory_vars[x]
                base_vals.append(universe.domain(v.sort)[0])
            for assignment in itertools.product(*var_doms):
                env = dict(zip((v.name for v in fvs), assignment))
                vals = list(base_vals)
                for x in ev.var_order:
                    if x in env:
                        vals[ev.var_order.index(x)] = env[x]
                state = (tuple(vals), tuple(state_arrays))
                if ev.formula(f, state, env):
                    count += 1
                    yield {
                        "structure": structure,
                        "arrays": dict(zip(arrays, tables)),
                        "assign": dict(env),
                        "state": state,
                    }
                    if limit is not None and count >= limit:
                        return


def _arrays_in(f: Formula) -> set:
    from .terms import arrays_of

    return arrays_of(f)


def satisfiable_bounded(f: Formula, spec: RabSpec, universe: BoundedUniverse) -> bool:
    for _ in enumerate_models(f, spec, universe, limit=1):
        return True
    return False
