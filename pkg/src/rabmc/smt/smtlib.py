"""Serialize signatures and formulae to SMT-LIB 2.6 text.

The base theory travels as ground facts rather than quantified axioms: the
undef axiom is instantiated over every function argument occurring in a
query, flag sorts get two-valuedness instances per occurring term, and named
constants are asserted pairwise distinct. Ground instantiation over occurring
terms is complete for these axiom shapes, so a quantifier-free backend stays
exact.
"""
from __future__ import annotations

from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Set, Tuple

from ..terms import (
    And, App, Atom, Const, FalseF, Formula, LinSum, Not, Num, Or, RelAtom,
    Select, Signature, Sort, SortKind, Term, TrueF, UNDEF, Var, formula_terms,
    subterms,
)

_SIMPLE = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"
              "~!@$%^&*_-+=<>.?/")


def smt_symbol(name: str) -> str:
    if name and all(c in _SIMPLE for c in name) and not name[0].isdigit():
        return name
    return f"|{name}|"


def smt_sort(sort: Sort) -> str:
    if sort.kind is SortKind.ARITH:
        return "Int" if sort.name == "int" else "Real"
    return smt_symbol(sort.name)


def undef_name(sort: Sort) -> str:
    return f"undef!{sort.name}"


def _frac(v: Fraction, int_sort: bool) -> str:
    if v.denominator == 1:
        s = str(abs(v.numerator))
        if not int_sort:
            s += ".0"
    else:
        s = f"(/ {abs(v.numerator)} {v.denominator})"
    return f"(- {s})" if v < 0 else s


def term_text(t: Term) -> str:
    if isinstance(t, Var):
        return smt_symbol(t.name)
    if isinstance(t, Const):
        if t.name == UNDEF:
            return smt_symbol(undef_name(t.sort))
        return smt_symbol(t.name)
    if isinstance(t, Num):
        return _frac(t.value, t.sort.name == "int")
    if isinstance(t, App):
        return f"({smt_symbol(t.fun)} {term_text(t.arg)})"
    if isinstance(t, Select):
        return f"({smt_symbol(t.array)} {term_text(t.index)})"
    if isinstance(t, LinSum):
        int_sort = t.sort.name == "int"
        parts = []
        for c, b in t.coeffs:
            if c == 1:
                parts.append(term_text(b))
            else:
                parts.append(f"(* {_frac(c, int_sort)} {term_text(b)})")
        if t.const != 0 or not parts:
            parts.append(_frac(t.const, int_sort))
        if len(parts) == 1:
            return parts[0]
        return "(+ " + " ".join(parts) + ")"
    raise TypeError(f"cannot serialize {t!r}")


def formula_text(f: Formula) -> str:
    if isinstance(f, TrueF):
        return "true"
    if isinstance(f, FalseF):
        return "false"
    if isinstance(f, Atom):
        op = {"eq": "=", "le": "<=", "lt": "<"}[f.op]
        return f"({op} {term_text(f.lhs)} {term_text(f.rhs)})"
    if isinstance(f, RelAtom):
        return "(" + smt_symbol(f.rel) + " " + " ".join(term_text(a) for a in f.args) + ")"
    if isinstance(f, Not):
        return f"(not {formula_text(f.arg)})"
    if isinstance(f, And):
        return "(and " + " ".join(formula_text(a) for a in f.args) + ")"
    if isinstance(f, Or):
        return "(or " + " ".join(formula_text(a) for a in f.args) + ")"
    raise TypeError(f"cannot serialize quantified formula {f!r}")


class SmtContext:
    """Declarations plus ground base-theory facts for one verification run."""

    def __init__(self, signature: Signature, memory_vars: Dict[str, Var],
                 memory_arrays: Dict[str, tuple]) -> None:
        self.sig = signature
        self.memory_vars = dict(memory_vars)
        self.memory_arrays = dict(memory_arrays)

    def base_commands(self) -> List[str]:
        sig = self.sig
        out = ["(set-logic ALL)"]
        for s in sig.sorts.values():
            if s.kind is not SortKind.ARITH:
                out.append(f"(declare-sort {smt_symbol(s.name)} 0)")
        for s in sig.undef_sorts():
            out.append(f"(declare-fun {smt_symbol(undef_name(s))} () {smt_sort(s)})")
        for name, sort in sig.consts.items():
            out.append(f"(declare-fun {smt_symbol(name)} () {smt_sort(sort)})")
        for name, (dom, cod) in sig.funs.items():
            out.append(
                f"(declare-fun {smt_symbol(name)} ({smt_sort(dom)}) {smt_sort(cod)})"
            )
        for name, argsorts in sig.rels.items():
            args = " ".join(smt_sort(s) for s in argsorts)
            out.append(f"(declare-fun {smt_symbol(name)} ({args}) Bool)")
        for name, v in self.memory_vars.items():
            out.append(f"(declare-fun {smt_symbol(name)} () {smt_sort(v.sort)})")
        for name, (mem, cod) in self.memory_arrays.items():
            out.append(
                f"(declare-fun {smt_symbol(name)} ({smt_sort(mem)}) {smt_sort(cod)})"
            )
        # named constants are pairwise distinct per sort (undef included)
        by_sort: Dict[str, List[str]] = {}
        for name, sort in sig.consts.items():
            by_sort.setdefault(sort.name, []).append(smt_symbol(name))
        for s in sig.undef_sorts():
            by_sort.setdefault(s.name, []).append(smt_symbol(undef_name(s)))
        for names in by_sort.values():
            if len(names) > 1:
                out.append("(assert (distinct " + " ".join(names) + "))")
        # undef axiom instances at the constants themselves
        for f, (dom, cod) in sig.funs.items():
            if sig.has_undef(dom) and sig.has_undef(cod):
                u_dom = smt_symbol(undef_name(dom))
                u_cod = smt_symbol(undef_name(cod))
                out.append(f"(assert (= ({smt_symbol(f)} {u_dom}) {u_cod}))")
        return out

    def declare_vars(self, vars_: Iterable[Var]) -> List[str]:
        return [
            f"(declare-fun {smt_symbol(v.name)} () {smt_sort(v.sort)})"
            for v in vars_
        ]

    def ground_axioms(self, formulas: Iterable[Formula]) -> List[str]:
        """Undef and two-valuedness instances for every occurring term."""
        sig = self.sig
        apps: Set[App] = set()
        elem2_terms: Set[Term] = set()
        for f in formulas:
            for t in formula_terms(f):
                for s in subterms(t):
                    if isinstance(s, App):
                        apps.add(s)
                    if s.sort.kind is SortKind.ELEM2 and not isinstance(s, Const):
                        elem2_terms.add(s)
        out: List[str] = []
        for a in sorted(apps, key=term_text):
            dom, cod = sig.funs[a.fun]
            if not (sig.has_undef(dom) and sig.has_undef(cod)):
                continue
            arg = term_text(a.arg)
            u_dom = smt_symbol(undef_name(dom))
            u_cod = smt_symbol(undef_name(cod))
            out.append(
                f"(assert (= (= {arg} {u_dom}) (= ({smt_symbol(a.fun)} {arg}) {u_cod})))"
            )
        elem2 = next((s for s in sig.sorts.values() if s.kind is SortKind.ELEM2), None)
        if elem2 is not None:
            members = [n for n, s in sig.consts.items() if s == elem2]
            if len(members) >= 2:
                names = [smt_symbol(n) for n in members]
                for t in sorted(elem2_terms, key=term_text):
                    alts = " ".join(f"(= {term_text(t)} {n})" for n in names)
                    out.append(f"(assert (or {alts}))")
        return out
