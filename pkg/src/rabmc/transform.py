"""Source-to-source elimination of universal guards.

Two stages over a safety problem. The failure stage adds a two-valued flag
sort and one failure-flag array per memory sort, relativizes the unsafe
formulae, the initial formula, the quantifiers of every transition, and the
array updates (entries only change while their flag is up), and appends a
crash transition per memory sort that lowers one flag nondeterministically.
The removal stage replaces each universal guard with its instances over the
transition's own index variables and lowers the flags of entries violating
the guard inside the updates, leaving a plain system whose SAFE verdicts
transfer to the original.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .specs import RabSpec, TransitionRule
from .terms import (
    And, CaseOf, Const, Exists, Forall, Formula, Select, ShapeError, Sort,
    SortKind, Term, TRUE, Var, and_, eq, exists, forall, implies, not_, or_,
    substitute,
)

FLAG_ON = "__on"
FLAG_OFF = "__off"


@dataclass
class TransformOutput:
    spec: RabSpec                      # transformed system
    original: RabSpec                  # input system
    elem2: Sort = None
    alive: Dict[str, str] = field(default_factory=dict)  # mem sort -> array
    crash_names: List[str] = field(default_factory=list)
    name_map: Dict[str, Optional[str]] = field(default_factory=dict)
    stage: str = "tilde"               # "tilde" or "hat"
    uguards: Dict[str, tuple] = field(default_factory=dict)  # tr -> (k, body)


def _fresh(name: str, taken) -> str:
    while name in taken:
        name = name + "_"
    return name


def _copy_spec(spec: RabSpec) -> RabSpec:
    out = RabSpec(
        signature=spec.signature.copy(),
        memory_sorts=list(spec.memory_sorts),
        memory_vars=dict(spec.memory_vars),
        memory_arrays=dict(spec.memory_arrays),
        init_vars=dict(spec.init_vars),
        init_arrays=dict(spec.init_arrays),
        init_relativized=spec.init_relativized,
        transitions=[],
        unsafe=dict(spec.unsafe),
        invariants=dict(spec.invariants),
    )
    for tr in spec.transitions:
        out.transitions.append(
            TransitionRule(
                name=tr.name,
                exists_index=tr.exists_index,
                exists_data=tr.exists_data,
                guard=tr.guard,
                uguard=tr.uguard,
                var_updates=dict(tr.var_updates),
                array_updates=dict(tr.array_updates),
            )
        )
    return out


def alive_conj(spec: RabSpec, alive: Dict[str, str], vs) -> Formula:
    parts = []
    for v in vs:
        arr = alive.get(v.sort.name)
        if arr is not None:
            elem2 = spec.memory_arrays[arr][1]
            parts.append(eq(Select(arr, v, elem2), Const(FLAG_ON, elem2)))
    return and_(*parts)


def tilde(spec: RabSpec, unsafe: Optional[str] = None) -> TransformOutput:
    """Failure-introduction stage; total on every valid spec."""
    out = _copy_spec(spec)
    sig = out.signature
    all_names = (
        set(sig.sorts) | set(sig.funs) | set(sig.rels) | set(sig.consts)
        | set(out.memory_vars) | set(out.memory_arrays)
    )
    elem2_name = _fresh("__elem2", all_names)
    elem2 = Sort(elem2_name, SortKind.ELEM2)
    sig.sorts[elem2_name] = elem2
    sig.consts[_fresh(FLAG_ON, all_names)] = elem2
    sig.consts[_fresh(FLAG_OFF, all_names)] = elem2

    alive: Dict[str, str] = {}
    single = len(out.memory_sorts) == 1
    for mem in out.memory_sorts:
        base = "__alive" if single else f"__alive_{mem.name}"
        name = _fresh(base, all_names)
        all_names.add(name)
        out.memory_arrays[name] = (mem, elem2)
        alive[mem.name] = name

    # unsafe formulae gain the liveness conjunct on their indices
    new_unsafe = {}
    for uname, f in out.unsafe.items():
        if unsafe is not None and uname != unsafe:
            continue
        if isinstance(f, Exists):
            body = and_(alive_conj(out, alive, f.vars), f.body)
            new_unsafe[uname] = Exists(f.vars, body)
        else:
            new_unsafe[uname] = f
    out.unsafe = new_unsafe

    out.init_relativized = True

    uguards: Dict[str, tuple] = {}
    for tr in out.transitions:
        tr.guard = and_(alive_conj(out, alive, tr.exists_index), tr.guard)
        if tr.uguard is not None:
            k, g = tr.uguard
            uguards[tr.name] = (k, g)
            tr.uguard = (k, implies(alive_conj(out, alive, [k]), g))
        new_updates = {}
        for a, (y, body) in tr.array_updates.items():
            new_updates[a] = (y, _relativize_update(out, alive, a, y, body))
        for mem_name, arr in alive.items():
            mem = next(s for s in out.memory_sorts if s.name == mem_name)
            y = Var("y", mem)
            new_updates[arr] = (y, Select(arr, y, elem2))
        tr.array_updates = new_updates

    crash_names = []
    name_map: Dict[str, Optional[str]] = {t.name: t.name for t in out.transitions}
    for mem in out.memory_sorts:
        cname = _fresh("__crash" if single else f"__crash_{mem.name}", all_names)
        all_names.add(cname)
        e = Var("e", mem)
        y = Var("y", mem)
        arr = alive[mem.name]
        flag_off = Const(FLAG_OFF, elem2)
        upd = CaseOf(((eq(y, e), flag_off), (TRUE, Select(arr, y, elem2))), elem2)
        updates = {a: (Var("y", out.memory_arrays[a][0]),
                       Select(a, Var("y", out.memory_arrays[a][0]),
                              out.memory_arrays[a][1]))
                   for a in out.memory_arrays}
        updates[arr] = (y, upd)
        crash = TransitionRule(
            name=cname,
            exists_index=(e,),
            exists_data=(),
            guard=eq(Select(arr, e, elem2), Const(FLAG_ON, elem2)),
            uguard=None,
            var_updates={x: v for x, v in out.memory_vars.items()},
            array_updates=updates,
        )
        out.transitions.append(crash)
        crash_names.append(cname)
        name_map[cname] = None

    out.invariants = {
        n: relativize_invariant(f, out, alive) for n, f in out.invariants.items()
    }
    return TransformOutput(
        spec=out, original=spec, elem2=elem2, alive=alive,
        crash_names=crash_names, name_map=name_map, stage="tilde",
        uguards=uguards,
    )


def _relativize_update(spec: RabSpec, alive: Dict[str, str], array: str,
                       y: Var, body: Term) -> Term:
    """Entries change only while their flag is up; else they keep old values."""
    mem, cod = spec.memory_arrays[array]
    old = Select(array, y, cod)
    if body == old:
        return body  # identity updates stay identities
    arr = alive.get(mem.name)
    if arr is None:
        return body
    elem2 = spec.memory_arrays[arr][1]
    beta_on = eq(Select(arr, y, elem2), Const(FLAG_ON, elem2))
    if isinstance(body, CaseOf):
        branches = []
        for cond, val in body.branches[:-1]:
            branches.append((and_(cond, beta_on), val))
        branches.append((beta_on, body.branches[-1][1]))
        branches.append((TRUE, old))
        return CaseOf(tuple(branches), cod)
    return CaseOf(((beta_on, body), (TRUE, old)), cod)


def hat(t: TransformOutput) -> TransformOutput:
    """Universal-guard removal; input must come from the failure stage."""
    if t.stage != "tilde" or t.elem2 is None:
        raise ShapeError("hat expects the output of the failure stage")
    out = _copy_spec(t.spec)
    elem2 = t.elem2
    flag_on = Const(FLAG_ON, elem2)
    flag_off = Const(FLAG_OFF, elem2)
    for tr in out.transitions:
        if tr.name in t.crash_names:
            continue  # copied verbatim
        if tr.uguard is None:
            continue
        k, _rel = tr.uguard
        ku, gu = t.uguards[tr.name]
        tr.uguard = None
        # instantiate the original guard over the transition's own indices
        inst = [substitute(gu, {ku: e}) for e in tr.exists_index if e.sort == ku.sort]
        tr.guard = and_(tr.guard, *inst)
        # updates: entries must also satisfy the guard to change...
        orig = next(o for o in t.original.transitions if o.name == tr.name)
        new_updates = dict(tr.array_updates)
        for a, (y0, body0) in orig.array_updates.items():
            mem, cod = out.memory_arrays[a]
            if mem.name != ku.sort.name:
                continue
            old = Select(a, y0, cod)
            if body0 == old:
                continue
            beta_on = eq(Select(t.alive[mem.name], y0, elem2), flag_on)
            gu_y = substitute(gu, {ku: y0})
            if isinstance(body0, CaseOf):
                branches = [
                    (and_(cond, beta_on, gu_y), val)
                    for cond, val in body0.branches[:-1]
                ]
                branches.append((and_(beta_on, gu_y), body0.branches[-1][1]))
                branches.append((TRUE, old))
                new_updates[a] = (y0, CaseOf(tuple(branches), cod))
            else:
                new_updates[a] = (y0, CaseOf(
                    ((and_(beta_on, gu_y), body0), (TRUE, old)), cod))
        # ... and the flag array drops every entry violating the guard
        arr = t.alive[ku.sort.name]
        y = Var("y", ku.sort)
        beta = Select(arr, y, elem2)
        gu_flag = substitute(gu, {ku: y})
        f_upd = CaseOf(
            ((or_(eq(beta, flag_off), not_(gu_flag)), flag_off), (TRUE, beta)),
            elem2,
        )
        new_updates[arr] = (y, f_upd)
        tr.array_updates = new_updates
    return TransformOutput(
        spec=out, original=t.original, elem2=elem2, alive=dict(t.alive),
        crash_names=list(t.crash_names), name_map=dict(t.name_map),
        stage="hat", uguards=dict(t.uguards),
    )


def transform(spec: RabSpec, unsafe: Optional[str] = None) -> TransformOutput:
    return hat(tilde(spec, unsafe))


def relativize_invariant(inv: Formula, spec: RabSpec,
                         alive: Dict[str, str]) -> Formula:
    """forall i psi becomes forall i (A(i) implies psi); hat keeps it as is."""
    if isinstance(inv, Forall):
        guard = alive_conj(spec, alive, inv.vars)
        return Forall(inv.vars, implies(guard, inv.body))
    return inv


def map_trace_back(t: TransformOutput, trace: List[str]) -> List[str]:
    """Original-system trace: crash steps vanish (they only move the flags)."""
    out = []
    for name in trace:
        orig = t.name_map.get(name)
        if orig is not None:
            out.append(orig)
    return out
