"""Backward reachability over cubes with cover-based widening.

The frontier is a set of cubes with parent links. Each iteration prunes
subsumed cubes (cube /\\ Inv /\\ not-B is unsat), tests init intersection,
accumulates the layer into B, and regresses through every transition via the
instantiated preimage followed by data-variable elimination. SAFE extracts
not-B with a three-condition certificate; UNSAFE reconstructs the transition
trace and can check it for spuriousness against the exact semantics.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from . import preimage as pre_mod
from .covers import CoverOptions, CoverResult, EliminationTask, cover
from .normal import Cube, DEFAULT_DNF_CAP, SizeBudgetExceeded, make_cube, nnf, to_dnf
from .specs import RabSpec, TransitionRule
from .smt.session import (
    FragmentError, SolverCrash, SolverSession, SolverTimeout, split_ea,
)
from .terms import (
    And, Exists, FalseF, Forall, Formula, Not, Or, RabError, SortKind, TRUE,
    TrueF, Var, and_, exists, forall, free_vars, not_, or_, substitute,
)
from .transform import TransformOutput, map_trace_back, relativize_invariant, transform


class CertificateFailure(RabError):
    pass


@dataclass
class EngineOptions:
    mode: str = "inst"  # inst | transform | exact
    max_iters: int = 200
    timeout_s: float = 600.0
    solver: Optional[str] = None
    invariant_names: Optional[List[str]] = None  # None: all spec invariants
    extra_invariants: List[Formula] = field(default_factory=list)
    verify_invariants: bool = True
    check_spurious: bool = False
    lia_qe: str = "cooper"
    dnf_cap: int = DEFAULT_DNF_CAP
    max_disjuncts: int = 512
    debug_covers: bool = False
    solver_timeout_ms: int = 60000
    keep_layers: bool = False
    certify: bool = True


@dataclass
class RunStats:
    iterations: int = 0
    nodes: int = 0
    depth: int = 0
    smt_calls: int = 0
    covers_approximate: bool = False
    time_s: float = 0.0


@dataclass
class Node:
    id: int
    cube: Cube
    parent: Optional[int]
    tr_name: Optional[str]
    depth: int


@dataclass
class VerificationResult:
    verdict: str  # SAFE | UNSAFE | BUDGET_EXCEEDED
    unsafe_name: str
    stats: RunStats
    invariant: Optional[Formula] = None
    certificate: Optional[Dict[str, bool]] = None
    trace: Optional[List[str]] = None
    raw_trace: Optional[List[str]] = None
    symbolic_trace: Optional[Formula] = None
    spurious: Optional[str] = None  # genuine | spurious | unknown
    layers: Optional[List[List[Cube]]] = None
    inconclusive_reason: Optional[str] = None

    def report(self) -> dict:
        return {
            "schema_version": 1,
            "property": self.unsafe_name,
            "verdict": self.verdict,
            "iterations": self.stats.iterations,
            "nodes": self.stats.nodes,
            "depth": self.stats.depth,
            "smt_calls": self.stats.smt_calls,
            "covers_approximate": self.stats.covers_approximate,
            "time_s": round(self.stats.time_s, 4),
            "trace": self.trace,
            "spuriousness": self.spurious,
            "invariant_certificate": (
                None if self.certificate is None
                else all(self.certificate.values())
            ),
            "reason": self.inconclusive_reason,
        }


def state_cubes(f: Formula, cap: int = DEFAULT_DNF_CAP) -> List[Cube]:
    vars_, lit_sets = to_dnf(f, cap)
    return [make_cube(vars_, lits) for lits in lit_sets]


def negated_cube(c: Cube) -> Formula:
    body = nnf(and_(*c.literals), negate=True)
    if c.vars:
        return forall(c.vars, body)
    return body


class Engine:
    """One verification run: one spec, one unsafe formula, one solver."""

    def __init__(self, spec: RabSpec, unsafe_name: str,
                 opts: Optional[EngineOptions] = None) -> None:
        self.orig_spec = spec
        self.unsafe_name = unsafe_name
        self.opts = opts or EngineOptions()
        self.transform_out: Optional[TransformOutput] = None
        if self.opts.mode == "transform":
            self.transform_out = transform(spec)
            self.spec = self.transform_out.spec
        else:
            self.spec = spec
        if unsafe_name not in self.spec.unsafe:
            raise RabError(f"unknown unsafe formula '{unsafe_name}'")
        self.session = SolverSession(
            self.spec.signature, self.spec.memory_vars, self.spec.memory_arrays,
            solver=self.opts.solver, timeout_ms=self.opts.solver_timeout_ms,
        )
        self.cover_opts = CoverOptions(
            theory=self.spec.signature.theory,
            lia_qe=self.opts.lia_qe,
            max_disjuncts=self.opts.max_disjuncts,
            debug=self.opts.debug_covers,
        )
        self.stats = RunStats()
        self.invariants: List[Formula] = []

    def close(self) -> None:
        self.session.close()

    # -- invariants -----------------------------------------------------
    def _gather_invariants(self) -> List[Formula]:
        names = self.opts.invariant_names
        chosen: List[Tuple[str, Formula]] = []
        for n, f in self.orig_spec.invariants.items():
            if names is None or n in names:
                chosen.append((n, f))
        for i, f in enumerate(self.opts.extra_invariants):
            chosen.append((f"extra#{i}", f))
        out = []
        for n, f in chosen:
            if self.opts.verify_invariants:
                chk = check_invariant(self.orig_spec, f, session=None,
                                      solver=self.opts.solver)
                if not chk["is_invariant"]:
                    raise RabError(
                        f"formula '{n}' is not an inductive invariant; refusing to inject"
                    )
            if self.transform_out is not None:
                f = relativize_invariant(f, self.spec, self.transform_out.alive)
            out.append(f)
        return out

    # -- main loop --------------------------------------------------------
    def run(self) -> VerificationResult:
        t0 = time.monotonic()
        opts = self.opts
        try:
            self.invariants = self._gather_invariants()
            result = self._loop(t0)
        except (SolverTimeout, SolverCrash) as e:
            result = VerificationResult(
                "BUDGET_EXCEEDED", self.unsafe_name, self.stats,
                inconclusive_reason=f"solver: {e}",
            )
        self.stats.smt_calls = self.session.stats.queries
        self.stats.time_s = time.monotonic() - t0
        return result

    def _loop(self, t0: float) -> VerificationResult:
        opts = self.opts
        spec = self.spec
        init = spec.init_formula()
        unsafe = spec.unsafe[self.unsafe_name]
        next_id = 0
        nodes: Dict[int, Node] = {}
        layers: List[List[Cube]] = []

        frontier: List[Node] = []
        for c in state_cubes(unsafe, opts.dnf_cap):
            n = Node(next_id, c, None, None, 0)
            next_id += 1
            nodes[n.id] = n
            frontier.append(n)
        btilde: List[Node] = []

        while True:
            self.stats.iterations += 1
            if time.monotonic() - t0 > opts.timeout_s:
                return VerificationResult(
                    "BUDGET_EXCEEDED", self.unsafe_name, self.stats,
                    inconclusive_reason="wall clock budget",
                )
            # line 2/2': cube-granular fixpoint and subsumption test
            neg_b = [negated_cube(n.cube) for n in btilde]
            survivors: List[Node] = []
            for n in frontier:
                matrix_parts = []
                universals = list(self.invariants)
                for g in neg_b:
                    if isinstance(g, Forall):
                        universals.append(g)
                    else:
                        matrix_parts.append(g)
                matrix = and_(and_(*n.cube.literals), *matrix_parts)
                if isinstance(matrix, FalseF):
                    continue
                if self.session.decide_exists_forall(matrix, universals) == "sat":
                    survivors.append(n)
            if opts.keep_layers:
                layers.append([n.cube for n in survivors])
            if not survivors:
                inv, cert = (None, None)
                if opts.certify:
                    inv, cert = self._certificate(btilde, init)
                return VerificationResult(
                    "SAFE", self.unsafe_name, self.stats, invariant=inv,
                    certificate=cert, layers=layers if opts.keep_layers else None,
                )
            # line 3: init intersection
            for n in survivors:
                matrix, universals = split_ea(and_(init, n.cube.formula()))
                if self.session.decide_exists_forall(matrix, universals) == "sat":
                    return self._unsafe_result(n, nodes, layers)
            if self.stats.iterations > opts.max_iters:
                return VerificationResult(
                    "BUDGET_EXCEEDED", self.unsafe_name, self.stats,
                    inconclusive_reason="iteration budget",
                    layers=layers if opts.keep_layers else None,
                )
            # line 4: accumulate
            btilde.extend(survivors)
            self.stats.nodes += len(survivors)
            self.stats.depth = max(self.stats.depth, max(n.depth for n in survivors))
            # lines 5/6: regress and widen
            new_frontier: List[Node] = []
            seen_keys = set()
            for n in survivors:
                for tr in spec.transitions:
                    for c in self._preimage_cubes(tr, n.cube):
                        canon = c.canonical()
                        key = (canon.vars, canon.literals)
                        if key in seen_keys:
                            continue
                        seen_keys.add(key)
                        node = Node(next_id, c, n.id, tr.name, n.depth + 1)
                        next_id += 1
                        nodes[node.id] = node
                        new_frontier.append(node)
            frontier = new_frontier

    def _preimage_cubes(self, tr: TransitionRule, target: Cube) -> List[Cube]:
        opts = self.opts
        if opts.mode == "exact" and tr.uguard is not None:
            raise RabError(
                "exact mode requires universal-free transitions"
            )
        f = (pre_mod.pre if opts.mode == "exact" else pre_mod.inst_pre)(
            tr, target, self.spec
        )
        if isinstance(f, FalseF):
            return []
        try:
            cubes = state_cubes(f, opts.dnf_cap)
        except SizeBudgetExceeded:
            raise RabError(
                f"preimage through '{tr.name}' exceeded the DNF cap; "
                "raise --dnf-cap for this spec"
            )
        out: List[Cube] = []
        for c in cubes:
            elim = frozenset(v for v in c.vars if v.sort.kind is not SortKind.MEMORY)
            res = cover(EliminationTask(c, elim), self.cover_opts)
            self.stats.covers_approximate |= res.approximate
            out.extend(res.disjuncts)
        return out

    # -- UNSAFE bookkeeping ------------------------------------------------
    def _unsafe_result(self, node: Node, nodes: Dict[int, Node],
                       layers: List[List[Cube]]) -> VerificationResult:
        trace: List[str] = []
        cur: Optional[Node] = node
        while cur is not None and cur.tr_name is not None:
            trace.append(cur.tr_name)
            cur = nodes.get(cur.parent) if cur.parent is not None else None
        raw_trace = list(trace)
        if self.transform_out is not None:
            trace = map_trace_back(self.transform_out, trace)
        sym = self._symbolic_trace_formula(raw_trace)
        spurious = None
        if self.opts.check_spurious:
            spurious = check_spurious(
                self.orig_spec, trace, self.unsafe_name,
                solver=self.opts.solver,
            )
        result = VerificationResult(
            "UNSAFE", self.unsafe_name, self.stats, trace=trace,
            raw_trace=raw_trace, symbolic_trace=sym, spurious=spurious,
            layers=layers if self.opts.keep_layers else None,
        )
        return result

    def _symbolic_trace_formula(self, raw_trace: List[str]) -> Formula:
        """The unsafe-trace formula for the system the search ran on."""
        f: Formula = self.spec.unsafe[self.unsafe_name]
        by_name = {t.name: t for t in self.spec.transitions}
        for name in reversed(raw_trace):
            f = pre_mod.pre_formula(by_name[name], f, self.spec)
        return and_(self.spec.init_formula(), f)

    # -- certificate -------------------------------------------------------
    def _certificate(self, btilde: List[Node], init: Formula):
        inv_parts = [negated_cube(n.cube) for n in btilde]
        invariant = and_(*inv_parts)
        cert = extract_invariant_certificate(
            self.spec, self.unsafe_name, [n.cube for n in btilde], self.session
        )
        if not all(cert.values()):
            raise CertificateFailure(f"certificate failed: {cert}")
        return invariant, cert


# ---------------------------------------------------------------------------
# Standalone operations


def breach(spec: RabSpec, unsafe_name: str,
           opts: Optional[EngineOptions] = None) -> VerificationResult:
    eng = Engine(spec, unsafe_name, opts)
    try:
        return eng.run()
    finally:
        eng.close()


def fixpoint_test(cubes: Sequence[Cube], btilde: Sequence[Cube],
                  invariants: Sequence[Formula],
                  session: SolverSession) -> str:
    """Sat iff some cube escapes B-tilde (and the invariants)."""
    neg_b = [negated_cube(c) for c in btilde]
    for c in cubes:
        universals = list(invariants)
        matrix_parts = []
        for g in neg_b:
            if isinstance(g, Forall):
                universals.append(g)
            else:
                matrix_parts.append(g)
        matrix = and_(and_(*c.literals), *matrix_parts)
        if isinstance(matrix, FalseF):
            continue
        if session.decide_exists_forall(matrix, universals) == "sat":
            return "sat"
    return "unsat"


def extract_invariant_certificate(spec: RabSpec, unsafe_name: str,
                                  btilde: Sequence[Cube],
                                  session: SolverSession) -> Dict[str, bool]:
    """Check that not-B-tilde is a safety universal invariant.

    (a) init implies it; (b) it is preserved by every transition (checked
    with exact preimages, universal guards included); (c) it excludes the
    unsafe formula.
    """
    init = spec.init_formula()
    neg_b = [negated_cube(c) for c in btilde]
    cert = {"a": True, "b": True, "c": True}
    for c in btilde:
        matrix, universals = split_ea(and_(init, c.formula()))
        if session.decide_exists_forall(matrix, universals) == "sat":
            cert["a"] = False
    for tr in spec.transitions:
        for c in btilde:
            f = pre_mod.pre(tr, c, spec)
            if isinstance(f, FalseF):
                continue
            matrix, universals = split_ea(and_(f, *neg_b))
            if session.decide_exists_forall(matrix, universals) == "sat":
                cert["b"] = False
    unsafe = spec.unsafe[unsafe_name]
    for uc in state_cubes(unsafe):
        matrix, universals = split_ea(and_(uc.formula(), *neg_b))
        if session.decide_exists_forall(matrix, universals) == "sat":
            cert["c"] = False
    return cert


def check_invariant(spec: RabSpec, phi: Formula,
                    session: Optional[SolverSession] = None,
                    unsafe_name: Optional[str] = None,
                    solver: Optional[str] = None) -> Dict[str, bool]:
    """Conditions (a) init, (b) preservation, (c) exclusion for one formula."""
    own = session is None
    if own:
        session = SolverSession(
            spec.signature, spec.memory_vars, spec.memory_arrays, solver=solver
        )
    try:
        init = spec.init_formula()
        ok_a = session.check_entailment(init, phi)
        ok_b = True
        neg_phi = nnf(phi, negate=True)
        for tr in spec.transitions:
            primed_violation = pre_mod.pre_formula(tr, neg_phi, spec)
            matrix, universals = split_ea(and_(primed_violation, phi))
            if session.decide_exists_forall(matrix, universals) == "sat":
                ok_b = False
                break
        result = {"is_invariant": ok_a and ok_b, "a": ok_a, "b": ok_b}
        if unsafe_name is not None:
            unsafe = spec.unsafe[unsafe_name]
            matrix, universals = split_ea(and_(unsafe, phi))
            ok_c = session.decide_exists_forall(matrix, universals) == "unsat"
            result["c"] = ok_c
            result["is_safety_invariant"] = result["is_invariant"] and ok_c
        return result
    finally:
        if own:
            session.close()


def check_spurious(spec: RabSpec, trace: Sequence[str], unsafe_name: str,
                   solver: Optional[str] = None,
                   session: Optional[SolverSession] = None) -> str:
    """Exact exists-forall check of the trace formula: genuine or spurious."""
    own = session is None
    if own:
        session = SolverSession(
            spec.signature, spec.memory_vars, spec.memory_arrays, solver=solver
        )
    try:
        by_name = {t.name: t for t in spec.transitions}
        f: Formula = spec.unsafe[unsafe_name]
        for name in reversed(list(trace)):
            if name not in by_name:
                raise RabError(f"trace step '{name}' is not a transition")
            f = pre_mod.pre_formula(by_name[name], f, spec)
        goal = and_(spec.init_formula(), f)
        try:
            matrix, universals = split_ea(goal)
            verdict = session.decide_exists_forall(matrix, universals)
        except (SolverTimeout,):
            return "unknown"
        return "genuine" if verdict == "sat" else "spurious"
    finally:
        if own:
            session.close()


def run_theorem_inv_audit(spec: RabSpec, phi: Formula,
                          layers: Sequence[Sequence[Cube]],
                          session: Optional[SolverSession] = None,
                          solver: Optional[str] = None) -> bool:
    """Every recorded layer P_n must entail not-phi."""
    own = session is None
    if own:
        session = SolverSession(
            spec.signature, spec.memory_vars, spec.memory_arrays, solver=solver
        )
    try:
        for layer in layers:
            for c in layer:
                matrix, universals = split_ea(and_(c.formula(), phi))
                if session.decide_exists_forall(matrix, universals) == "sat":
                    return False
        return True
    finally:
        if own:
            session.close()
