"""Frontend for the s-expression spec format: parse, validate, pretty print.

The accepted grammar (one decl per top-level list):

  (sort NAME :id|:value)            (theory none|lia|lra)
  (fun NAME SORT -> SORT)           (rel NAME SORT+)
  (const NAME SORT)                 (mem-sort NAME)
  (var NAME SORT)                   (arr NAME MEMSORT -> SORT)
  (init-relativized)                ; emitted by the guard-elimination pass
  (init (= VAR CONST)* (= ARR (lambda CONST))*)
  (transition NAME (exists (NAME MEMSORT)*) (data (NAME SORT)*)
      (guard FMLA) [(uguard NAME FMLA)] (update UPD*))
  (unsafe NAME FMLA)
  (invariant NAME (forall (NAME MEMSORT)*) FMLA)

  UPD  := (:= VAR TERM) | (:= ARR (lambda NAME CASE))
  CASE := (case (FMLA TERM)+ (else TERM))

FMLA/TERM use SMT-LIB style prefix syntax; array reads are (select ARR TERM);
arithmetic atoms use <, <= and = (with > and >= accepted as sugar).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

from . import sexpr
from .sexpr import SList, SpecSyntaxError, Sym
from .terms import (
    And, App, ArrayEq, Atom, CaseOf, Const, Exists, FALSE, Forall, Formula,
    INT, LinSum, Not, Num, Or, RabError, REAL, RelAtom, Select, ShapeError,
    Signature, Sort, SortError, SortKind, Term, Theory, TRUE, TrueF, FalseF,
    UNDEF, Var, and_, atoms, eq, exists, forall, formula_terms, free_vars,
    implies, le, linsum, lt, neq, not_, or_, scale, subterms, term_free_vars,
    undef,
)


class UnknownSymbol(RabError):
    pass


@dataclass
class Diagnostic:
    level: str  # "error" | "warning"
    message: str
    line: int = 0
    col: int = 0

    def __str__(self) -> str:
        where = f"{self.line}:{self.col}: " if self.line else ""
        return f"{self.level}: {where}{self.message}"


@dataclass
class TransitionRule:
    name: str
    exists_index: tuple = ()
    exists_data: tuple = ()
    guard: Formula = TRUE
    uguard: Optional[tuple] = None  # (Var, Formula)
    var_updates: dict = field(default_factory=dict)  # x name -> Term
    array_updates: dict = field(default_factory=dict)  # a name -> (Var, Term)

    def mentions_universal(self) -> bool:
        return self.uguard is not None


@dataclass
class RabSpec:
    signature: Signature = field(default_factory=Signature)
    memory_sorts: list = field(default_factory=list)  # [Sort]
    memory_vars: dict = field(default_factory=dict)  # name -> Var
    memory_arrays: dict = field(default_factory=dict)  # name -> (Sort mem, Sort cod)
    init_vars: dict = field(default_factory=dict)  # name -> Term (Const/Num)
    init_arrays: dict = field(default_factory=dict)  # name -> Term (Const/Num)
    init_relativized: bool = False
    transitions: list = field(default_factory=list)
    unsafe: dict = field(default_factory=dict)  # name -> Formula
    invariants: dict = field(default_factory=dict)  # name -> Formula (forall)

    # ------------------------------------------------------------------
    def array_select(self, name: str, index: Term) -> Select:
        mem, cod = self.memory_arrays[name]
        return Select(name, index, cod)

    def alive_arrays(self) -> dict:
        """Failure-flag arrays by memory sort name, present on transformed specs."""
        out = {}
        for name, (mem, cod) in self.memory_arrays.items():
            if cod.kind is SortKind.ELEM2:
                out[mem.name] = name
        return out

    def init_formula(self) -> Formula:
        """The initial condition as a plain formula (relativized when marked)."""
        parts: List[Formula] = []
        for x, c in self.init_vars.items():
            parts.append(eq(self.memory_vars[x], c))
        if not self.init_relativized:
            for a, d in self.init_arrays.items():
                mem, cod = self.memory_arrays[a]
                y = Var(f"_y_{mem.name}", mem)
                parts.append(Forall((y,), eq(Select(a, y, cod), d)))
        else:
            alive = self.alive_arrays()
            by_sort: Dict[str, list] = {}
            for a, d in self.init_arrays.items():
                mem, cod = self.memory_arrays[a]
                by_sort.setdefault(mem.name, []).append((a, cod, d))
            for mem_name, entries in by_sort.items():
                mem = next(s for s in self.memory_sorts if s.name == mem_name)
                y = Var(f"_y_{mem_name}", mem)
                flag = alive.get(mem_name)
                body = and_(*[eq(Select(a, y, cod), d) for a, cod, d in entries])
                if flag is not None:
                    elem2 = self.memory_arrays[flag][1]
                    cond = eq(Select(flag, y, elem2), Const("__on", elem2))
                    body = implies(cond, body)
                parts.append(Forall((y,), body))
        return and_(*parts)

    def elem2_sort(self) -> Optional[Sort]:
        for s in self.signature.sorts.values():
            if s.kind is SortKind.ELEM2:
                return s
        return None


# ---------------------------------------------------------------------------
# Parsing


class _NeedSort(RabError):
    def __init__(self, node):
        super().__init__("sort cannot be inferred here")
        self.node = node


def _err(node, msg: str) -> SpecSyntaxError:
    line = getattr(node, "line", 0)
    col = getattr(node, "col", 0)
    return SpecSyntaxError(msg, line, col)


def _is_numeral(text: str) -> bool:
    t = text[1:] if text[:1] == "-" else text
    return t.replace(".", "", 1).isdigit() and t != ""


class _Parser:
    def __init__(self) -> None:
        self.spec = RabSpec()
        self.seen_init = False

    # -- declarations ---------------------------------------------------
    def run(self, text: str) -> RabSpec:
        for node in sexpr.read_all(text):
            if not isinstance(node, SList) or not node.items:
                raise _err(node, "expected a declaration list")
            head = node[0]
            if not isinstance(head, Sym):
                raise _err(node, "expected a declaration keyword")
            handler = getattr(self, "decl_" + head.text.replace("-", "_"), None)
            if handler is None:
                raise _err(head, f"unknown declaration '{head.text}'")
            handler(node)
        self._elaborate()
        return self.spec

    def _name(self, node, what="name") -> str:
        if not isinstance(node, Sym) or node.text in ("(", ")"):
            raise _err(node, f"expected {what}")
        return node.text

    def _fresh_symbol(self, node, name: str) -> None:
        sig = self.spec.signature
        taken = (
            name in sig.sorts
            or name in sig.funs
            or name in sig.rels
            or name in sig.consts
            or name in self.spec.memory_vars
            or name in self.spec.memory_arrays
            or name in ("int", "real", UNDEF, "true", "false")
        )
        if taken:
            raise _err(node, f"'{name}' is already declared")

    def _sort(self, node, memory_ok=True, basic_ok=True) -> Sort:
        name = self._name(node, "sort name")
        s = self.spec.signature.sort_named(name)
        if s is None:
            raise _err(node, f"unknown sort '{name}'")
        if s.kind is SortKind.MEMORY and not memory_ok:
            raise _err(node, f"memory sort '{name}' not allowed here")
        if s.kind is not SortKind.MEMORY and not basic_ok:
            raise _err(node, f"expected a memory sort, got '{name}'")
        return s

    def decl_sort(self, node) -> None:
        if len(node) != 3:
            raise _err(node, "(sort NAME :id|:value)")
        name = self._name(node[1])
        kind_tok = self._name(node[2], "sort kind")
        kinds = {":id": SortKind.ID, ":value": SortKind.VALUE, ":elem2": SortKind.ELEM2}
        if kind_tok not in kinds:
            raise _err(node[2], "sort kind must be :id or :value")
        self._fresh_symbol(node[1], name)
        self.spec.signature.sorts[name] = Sort(name, kinds[kind_tok])

    def decl_theory(self, node) -> None:
        if len(node) != 2:
            raise _err(node, "(theory none|lia|lra)")
        val = self._name(node[1])
        try:
            self.spec.signature.theory = Theory(val)
        except ValueError:
            raise _err(node[1], "theory must be none, lia or lra") from None

    def decl_mem_sort(self, node) -> None:
        if len(node) != 2:
            raise _err(node, "(mem-sort NAME)")
        name = self._name(node[1])
        self._fresh_symbol(node[1], name)
        s = Sort(name, SortKind.MEMORY)
        self.spec.signature.sorts[name] = s
        self.spec.memory_sorts.append(s)

    def decl_fun(self, node) -> None:
        if len(node) != 5 or not (isinstance(node[3], Sym) and node[3].text == "->"):
            raise _err(node, "(fun NAME SORT -> SORT)")
        name = self._name(node[1])
        self._fresh_symbol(node[1], name)
        dom = self._sort(node[2])
        cod = self._sort(node[4])
        self.spec.signature.funs[name] = (dom, cod)

    def decl_rel(self, node) -> None:
        if len(node) < 3:
            raise _err(node, "(rel NAME SORT+)")
        name = self._name(node[1])
        self._fresh_symbol(node[1], name)
        args = tuple(self._sort(n) for n in node.items[2:])
        self.spec.signature.rels[name] = args

    def decl_const(self, node) -> None:
        if len(node) != 3:
            raise _err(node, "(const NAME SORT)")
        name = self._name(node[1])
        self._fresh_symbol(node[1], name)
        self.spec.signature.consts[name] = self._sort(node[2])

    def decl_var(self, node) -> None:
        if len(node) != 3:
            raise _err(node, "(var NAME SORT)")
        name = self._name(node[1])
        self._fresh_symbol(node[1], name)
        sort = self._sort(node[2], memory_ok=False)
        self.spec.memory_vars[name] = Var(name, sort)

    def decl_arr(self, node) -> None:
        if len(node) != 5 or not (isinstance(node[3], Sym) and node[3].text == "->"):
            raise _err(node, "(arr NAME MEMSORT -> SORT)")
        name = self._name(node[1])
        self._fresh_symbol(node[1], name)
        mem = self._sort(node[2], basic_ok=False)
        cod = self._sort(node[4], memory_ok=False)
        self.spec.memory_arrays[name] = (mem, cod)

    def decl_init_relativized(self, node) -> None:
        self.spec.init_relativized = True

    def decl_init(self, node) -> None:
        if self.seen_init:
            raise _err(node, "duplicate init declaration")
        self.seen_init = True
        for entry in node.items[1:]:
            if (
                not isinstance(entry, SList)
                or len(entry) != 3
                or not (isinstance(entry[0], Sym) and entry[0].text == "=")
            ):
                raise _err(entry, "init entries look like (= VAR CONST)")
            target = self._name(entry[1], "variable or array name")
            if target in self.spec.memory_vars:
                sort = self.spec.memory_vars[target].sort
                self.spec.init_vars[target] = self._const_value(entry[2], sort)
            elif target in self.spec.memory_arrays:
                lam = entry[2]
                if (
                    not isinstance(lam, SList)
                    or len(lam) != 2
                    or not (isinstance(lam[0], Sym) and lam[0].text == "lambda")
                ):
                    raise _err(entry[2], "array init looks like (lambda CONST)")
                cod = self.spec.memory_arrays[target][1]
                self.spec.init_arrays[target] = self._const_value(lam[1], cod)
            else:
                raise UnknownSymbol(str(_err(entry[1], f"unknown state symbol '{target}'")))

    def _const_value(self, node, sort: Sort) -> Term:
        name = self._name(node, "constant")
        if _is_numeral(name):
            if sort.kind is not SortKind.ARITH:
                raise _err(node, f"numeral used at non-arithmetic sort {sort.name}")
            return Num(Fraction(name), sort)
        if name == UNDEF:
            if sort.kind not in (SortKind.ID, SortKind.VALUE):
                raise _err(node, f"sort {sort.name} has no undef")
            return undef(sort)
        csort = self.spec.signature.consts.get(name)
        if csort is None:
            raise UnknownSymbol(str(_err(node, f"unknown constant '{name}'")))
        if csort != sort:
            raise _err(node, f"constant '{name}' has sort {csort.name}, expected {sort.name}")
        return Const(name, sort)

    # -- transitions ----------------------------------------------------
    def decl_transition(self, node) -> None:
        if len(node) < 3:
            raise _err(node, "malformed transition")
        name = self._name(node[1], "transition name")
        if any(t.name == name for t in self.spec.transitions):
            raise _err(node[1], f"duplicate transition '{name}'")
        sections: Dict[str, SList] = {}
        for part in node.items[2:]:
            if not isinstance(part, SList) or not part.items:
                raise _err(part, "expected a transition section")
            key = self._name(part[0], "section keyword")
            if key in sections:
                raise _err(part, f"duplicate section '{key}'")
            sections[key] = part
        for required in ("exists", "data", "guard", "update"):
            if required not in sections:
                raise _err(node, f"transition '{name}' missing ({required} ...)")
        extra = set(sections) - {"exists", "data", "guard", "uguard", "update"}
        if extra:
            raise _err(node, f"unknown transition sections: {sorted(extra)}")

        scope: Dict[str, Var] = {}
        e_vars = self._binding_list(sections["exists"], scope, basic_ok=False)
        d_vars = self._binding_list(sections["data"], scope, memory_ok=False)

        if len(sections["guard"]) != 2:
            raise _err(sections["guard"], "(guard FMLA)")
        guard = self.formula(sections["guard"][1], scope)

        uguard = None
        if "uguard" in sections:
            ug = sections["uguard"]
            if len(ug) != 3:
                raise _err(ug, "(uguard NAME FMLA)")
            kname = self._name(ug[1], "universal variable")
            if kname in scope or kname in self.spec.memory_vars:
                raise _err(ug[1], f"'{kname}' shadows another variable")
            ksort = self._infer_uguard_sort(ug[2], kname)
            kvar = Var(kname, ksort)
            inner = dict(scope)
            inner[kname] = kvar
            uguard = (kvar, self.formula(ug[2], inner))

        var_updates: Dict[str, Term] = {}
        array_updates: Dict[str, tuple] = {}
        for upd in sections["update"].items[1:]:
            if (
                not isinstance(upd, SList)
                or len(upd) != 3
                or not (isinstance(upd[0], Sym) and upd[0].text == ":=")
            ):
                raise _err(upd, "updates look like (:= VAR TERM) or (:= ARR (lambda NAME CASE))")
            target = self._name(upd[1], "update target")
            if target in self.spec.memory_vars:
                if target in var_updates:
                    raise _err(upd[1], f"duplicate update of '{target}'")
                sort = self.spec.memory_vars[target].sort
                var_updates[target] = self.term(upd[2], scope, sort)
            elif target in self.spec.memory_arrays:
                if target in array_updates:
                    raise _err(upd[1], f"duplicate update of '{target}'")
                array_updates[target] = self._lambda_update(upd[2], target, scope)
            else:
                raise UnknownSymbol(str(_err(upd[1], f"unknown state symbol '{target}'")))

        self.spec.transitions.append(
            TransitionRule(
                name=name,
                exists_index=tuple(e_vars),
                exists_data=tuple(d_vars),
                guard=guard,
                uguard=uguard,
                var_updates=var_updates,
                array_updates=array_updates,
            )
        )

    def _binding_list(self, node, scope, memory_ok=True, basic_ok=True):
        out = []
        for b in node.items[1:]:
            if not isinstance(b, SList) or len(b) != 2:
                raise _err(b, "bindings look like (NAME SORT)")
            name = self._name(b[0])
            if name in scope or name in self.spec.memory_vars:
                raise _err(b[0], f"'{name}' shadows another variable")
            sort = self._sort(b[1], memory_ok=memory_ok, basic_ok=basic_ok)
            v = Var(name, sort)
            scope[name] = v
            out.append(v)
        return out

    def _infer_uguard_sort(self, body, kname: str) -> Sort:
        """The uguard variable's sort comes from its selections in the body."""
        found: List[Sort] = []

        def scan(n):
            if isinstance(n, SList):
                if (
                    len(n) == 3
                    and isinstance(n[0], Sym)
                    and n[0].text == "select"
                    and isinstance(n[2], Sym)
                    and n[2].text == kname
                ):
                    arr = self.spec.memory_arrays.get(self._name(n[1]))
                    if arr is not None:
                        found.append(arr[0])
                for item in n.items:
                    scan(item)

        scan(body)
        if found:
            return found[0]
        if not self.spec.memory_sorts:
            raise _err(body, "uguard requires at least one memory sort")
        return self.spec.memory_sorts[0]

    def _lambda_update(self, node, array: str, scope) -> tuple:
        if (
            not isinstance(node, SList)
            or len(node) != 3
            or not (isinstance(node[0], Sym) and node[0].text == "lambda")
        ):
            raise _err(node, "array updates look like (lambda NAME CASE)")
        yname = self._name(node[1], "lambda variable")
        if yname in scope or yname in self.spec.memory_vars:
            raise _err(node[1], f"'{yname}' shadows another variable")
        mem, cod = self.spec.memory_arrays[array]
        y = Var(yname, mem)
        inner = dict(scope)
        inner[yname] = y
        body = self.term(node[2], inner, cod)
        if isinstance(body, CaseOf) and len(body.branches) == 1:
            body = body.branches[0][1]
        return (y, body)

    def _elaborate(self) -> None:
        """Insert identity updates and default inits."""
        for x, v in self.spec.memory_vars.items():
            if x not in self.spec.init_vars:
                if self.spec.signature.has_undef(v.sort):
                    self.spec.init_vars[x] = undef(v.sort)
                else:
                    raise ShapeError(
                        f"memory variable '{x}' of sort {v.sort.name} needs an explicit init"
                    )
        for a, (mem, cod) in self.spec.memory_arrays.items():
            if a not in self.spec.init_arrays:
                if self.spec.signature.has_undef(cod):
                    self.spec.init_arrays[a] = undef(cod)
                elif cod.kind is SortKind.ELEM2:
                    continue  # failure flags are unconstrained initially
                else:
                    raise ShapeError(
                        f"array '{a}' of codomain {cod.name} needs an explicit init"
                    )
        for tr in self.spec.transitions:
            for x, v in self.spec.memory_vars.items():
                tr.var_updates.setdefault(x, v)
            for a, (mem, cod) in self.spec.memory_arrays.items():
                if a not in tr.array_updates:
                    y = Var("y", mem)
                    tr.array_updates[a] = (y, Select(a, y, cod))

    # -- unsafe / invariant ----------------------------------------------
    def decl_unsafe(self, node) -> None:
        if len(node) != 3:
            raise _err(node, "(unsafe NAME FMLA)")
        name = self._name(node[1])
        if name in self.spec.unsafe:
            raise _err(node[1], f"duplicate unsafe formula '{name}'")
        self.spec.unsafe[name] = self.formula(node[2], {})

    def decl_invariant(self, node) -> None:
        if len(node) != 4:
            raise _err(node, "(invariant NAME (forall (NAME MEMSORT)*) FMLA)")
        name = self._name(node[1])
        if name in self.spec.invariants:
            raise _err(node[1], f"duplicate invariant '{name}'")
        quant = node[2]
        if not (isinstance(quant, SList) and quant.items and
                isinstance(quant[0], Sym) and quant[0].text == "forall"):
            raise _err(node[2], "expected (forall (NAME MEMSORT)*)")
        scope: Dict[str, Var] = {}
        vs = self._binding_list(quant, scope, basic_ok=False)
        body = self.formula(node[3], scope)
        self.spec.invariants[name] = forall(tuple(vs), body)

    # -- formulae and terms ----------------------------------------------
    def formula(self, node, scope) -> Formula:
        if isinstance(node, Sym):
            if node.text == "true":
                return TRUE
            if node.text == "false":
                return FALSE
            raise _err(node, f"expected a formula, got '{node.text}'")
        if not isinstance(node, SList) or not node.items:
            raise _err(node, "expected a formula")
        head = node[0]
        if not isinstance(head, Sym):
            raise _err(node, "expected an operator")
        op = head.text
        if op == "and":
            return and_(*[self.formula(a, scope) for a in node.items[1:]])
        if op == "or":
            return or_(*[self.formula(a, scope) for a in node.items[1:]])
        if op == "not":
            if len(node) != 2:
                raise _err(node, "(not FMLA)")
            return not_(self.formula(node[1], scope))
        if op == "=>":
            if len(node) != 3:
                raise _err(node, "(=> FMLA FMLA)")
            return implies(self.formula(node[1], scope), self.formula(node[2], scope))
        if op in ("=", "<", "<=", ">", ">="):
            if len(node) != 3:
                raise _err(node, f"({op} TERM TERM)")
            lhs, rhs = self._term_pair(node[1], node[2], scope)
            if op == "=":
                try:
                    return eq(lhs, rhs)
                except RabError as e:
                    raise _err(node, str(e)) from None
            if lhs.sort.kind is not SortKind.ARITH:
                raise _err(node, f"'{op}' needs arithmetic operands")
            if op == "<":
                return lt(lhs, rhs)
            if op == "<=":
                return le(lhs, rhs)
            if op == ">":
                return lt(rhs, lhs)
            return le(rhs, lhs)
        if op in ("exists", "forall"):
            if len(node) != 3 or not isinstance(node[1], SList):
                raise _err(node, f"({op} ((NAME SORT)+) FMLA)")
            inner = dict(scope)
            vs = []
            for b in node[1].items:
                if not isinstance(b, SList) or len(b) != 2:
                    raise _err(b, "bindings look like (NAME SORT)")
                nm = self._name(b[0])
                if nm in inner or nm in self.spec.memory_vars:
                    raise _err(b[0], f"'{nm}' shadows another variable")
                v = Var(nm, self._sort(b[1]))
                inner[nm] = v
                vs.append(v)
            body = self.formula(node[2], inner)
            return exists(vs, body) if op == "exists" else forall(vs, body)
        if op in self.spec.signature.rels:
            argsorts = self.spec.signature.rels[op]
            if len(node) != len(argsorts) + 1:
                raise _err(node, f"relation '{op}' takes {len(argsorts)} arguments")
            args = tuple(
                self.term(n, scope, s) for n, s in zip(node.items[1:], argsorts)
            )
            return RelAtom(op, args)
        raise _err(head, f"unknown operator or relation '{op}'")

    def _term_pair(self, a, b, scope) -> Tuple[Term, Term]:
        try:
            lhs = self.term(a, scope, None)
        except _NeedSort:
            rhs = self.term(b, scope, None)
            return self.term(a, scope, rhs.sort), rhs
        rhs = self.term(b, scope, lhs.sort)
        return lhs, rhs

    def term(self, node, scope, expected: Optional[Sort]) -> Term:
        if isinstance(node, Sym):
            text = node.text
            if _is_numeral(text):
                s = self.spec.signature.arith_sort()
                if s is None:
                    raise _err(node, "numerals need (theory lia) or (theory lra)")
                return Num(Fraction(text), s)
            if text == UNDEF:
                if expected is None:
                    raise _NeedSort(node)
                if not self.spec.signature.has_undef(expected):
                    raise _err(node, f"sort {expected.name} has no undef")
                return undef(expected)
            if text in scope:
                t: Term = scope[text]
            elif text in self.spec.memory_vars:
                t = self.spec.memory_vars[text]
            elif text in self.spec.signature.consts:
                t = Const(text, self.spec.signature.consts[text])
            else:
                raise UnknownSymbol(str(_err(node, f"unknown symbol '{text}'")))
            if expected is not None and t.sort != expected:
                raise _err(node, f"'{text}' has sort {t.sort.name}, expected {expected.name}")
            return t
        if not isinstance(node, SList) or not node.items:
            raise _err(node, "expected a term")
        head = node[0]
        if not isinstance(head, Sym):
            raise _err(node, "expected a term operator")
        op = head.text
        if op == "select":
            if len(node) != 3:
                raise _err(node, "(select ARR TERM)")
            arr = self._name(node[1], "array name")
            if arr not in self.spec.memory_arrays:
                raise UnknownSymbol(str(_err(node[1], f"unknown array '{arr}'")))
            mem, cod = self.spec.memory_arrays[arr]
            idx = self.term(node[2], scope, mem)
            if expected is not None and cod != expected:
                raise _err(node, f"select has sort {cod.name}, expected {expected.name}")
            return Select(arr, idx, cod)
        if op in self.spec.signature.funs:
            dom, cod = self.spec.signature.funs[op]
            if len(node) != 2:
                raise _err(node, f"function '{op}' is unary")
            arg = self.term(node[1], scope, dom)
            if expected is not None and cod != expected:
                raise _err(node, f"'{op}' has sort {cod.name}, expected {expected.name}")
            return App(op, arg, cod)
        if op in ("+", "-", "*"):
            s = self.spec.signature.arith_sort()
            if s is None:
                raise _err(node, "arithmetic needs (theory lia) or (theory lra)")
            if expected is not None and expected != s:
                raise _err(node, f"arithmetic term used at sort {expected.name}")
            args = [self.term(n, scope, s) for n in node.items[1:]]
            if op == "+":
                if not args:
                    raise _err(node, "(+ TERM TERM+)")
                return linsum([(1, a) for a in args], 0, s)
            if op == "-":
                if len(args) == 1:
                    return linsum([(-1, args[0])], 0, s)
                if len(args) >= 2:
                    parts = [(Fraction(1), args[0])] + [(Fraction(-1), a) for a in args[1:]]
                    return linsum(parts, 0, s)
                raise _err(node, "(- TERM TERM*)")
            # scalar multiplication: exactly one side is a numeral
            if len(args) != 2:
                raise _err(node, "(* K TERM)")
            k, t = args
            if not isinstance(k, Num):
                k, t = t, k
            if not isinstance(k, Num):
                raise _err(node, "multiplication must be by a numeral (linear arithmetic)")
            return linsum([(k.value, t)], 0, s)
        if op == "/":
            s = self.spec.signature.arith_sort()
            if s is None:
                raise _err(node, "arithmetic needs (theory lia) or (theory lra)")
            if len(node) != 3:
                raise _err(node, "(/ P Q)")
            p = self.term(node[1], scope, s)
            q = self.term(node[2], scope, s)
            if not (isinstance(p, Num) and isinstance(q, Num)) or q.value == 0:
                raise _err(node, "division only between numerals")
            return Num(p.value / q.value, s)
        if op == "case":
            return self._case(node, scope, expected)
        raise _err(head, f"unknown term operator '{op}'")

    def _case(self, node, scope, expected: Optional[Sort]) -> Term:
        branches = []
        saw_else = False
        for br in node.items[1:]:
            if not isinstance(br, SList) or len(br) != 2:
                raise _err(br, "case branches look like (FMLA TERM) or (else TERM)")
            cond_node, val_node = br[0], br[1]
            is_else = isinstance(cond_node, Sym) and cond_node.text == "else"
            if saw_else:
                raise _err(br, "else must be the last branch")
            cond = TRUE if is_else else self.formula(cond_node, scope)
            saw_else = saw_else or is_else
            branches.append((cond, val_node))
        if not saw_else:
            raise _err(node, "case requires a terminal else branch")
        # resolve the branch sort: first branch whose value is inferable
        sort = expected
        vals: List[Optional[Term]] = [None] * len(branches)
        if sort is None:
            for i, (_, vn) in enumerate(branches):
                try:
                    vals[i] = self.term(vn, scope, None)
                    sort = vals[i].sort
                    break
                except _NeedSort:
                    continue
            if sort is None:
                raise _NeedSort(node)
        out = []
        for i, (cond, vn) in enumerate(branches):
            val = vals[i] if vals[i] is not None else self.term(vn, scope, sort)
            out.append((cond, val))
        return CaseOf(tuple(out), sort)


def parse(text: str) -> RabSpec:
    """Parse and sort-check a spec; raises on structural errors."""
    return _Parser().run(text)


# ---------------------------------------------------------------------------
# Validation


def validate(spec: RabSpec) -> List[Diagnostic]:
    """Structural checks; returns diagnostics instead of raising."""
    out: List[Diagnostic] = []
    sig = spec.signature

    def error(msg: str) -> None:
        out.append(Diagnostic("error", msg))

    def warn(msg: str) -> None:
        out.append(Diagnostic("warning", msg))

    elem2 = [s for s in sig.sorts.values() if s.kind is SortKind.ELEM2]
    if len(elem2) > 1:
        error("more than one two-valued flag sort declared")

    for name, (dom, cod) in sig.funs.items():
        if dom.kind is SortKind.ARITH:
            error(f"function '{name}': arith sort cannot be function domain")
        elif dom.kind is SortKind.VALUE:
            error(f"function '{name}': value sort cannot be function domain")
        elif dom.kind is SortKind.MEMORY:
            error(f"function '{name}': memory sort cannot be function domain")
    for name, argsorts in sig.rels.items():
        for s in argsorts:
            if s.kind is SortKind.MEMORY:
                error(f"relation '{name}' ranges over memory sort {s.name}")
    for name, s in sig.consts.items():
        if s.kind is SortKind.MEMORY:
            error(f"constant '{name}' has a memory sort (only equality is allowed there)")

    for x, v in spec.memory_vars.items():
        if v.sort.kind is SortKind.MEMORY:
            error(f"memory variable '{x}' has a memory sort")
    for a, (mem, cod) in spec.memory_arrays.items():
        if mem.kind is not SortKind.MEMORY:
            error(f"array '{a}' domain must be a memory sort")
        if cod.kind is SortKind.MEMORY:
            error(f"array '{a}' codomain cannot be a memory sort")

    for x, c in spec.init_vars.items():
        v = spec.memory_vars.get(x)
        if v is not None and c.sort != v.sort:
            error(f"init of '{x}' has wrong sort")

    def check_qf(f: Formula, where: str) -> None:
        if isinstance(f, (Exists, Forall)):
            error(f"{where}: quantifier not allowed here")
            return
        if isinstance(f, (And, Or)):
            for a in f.args:
                check_qf(a, where)
        elif isinstance(f, Not):
            check_qf(f.arg, where)

    for name, f in spec.unsafe.items():
        body = f
        if isinstance(body, Exists):
            for v in body.vars:
                if v.sort.kind is not SortKind.MEMORY:
                    error(f"unsafe '{name}': existential over non-index sort {v.sort.name}")
            body = body.body
        if isinstance(body, Forall):
            error(f"unsafe '{name}': universal quantifier in a state formula")
        else:
            check_qf(body, f"unsafe '{name}'")
        for v in free_vars(f):
            if v.name not in spec.memory_vars:
                error(f"unsafe '{name}': free variable '{v.name}'")

    for name, f in spec.invariants.items():
        body = f
        if isinstance(body, Forall):
            for v in body.vars:
                if v.sort.kind is not SortKind.MEMORY:
                    error(f"invariant '{name}': universal over non-index sort {v.sort.name}")
            body = body.body
        if isinstance(body, Exists):
            error(f"invariant '{name}': existential quantifier not allowed")
        else:
            check_qf(body, f"invariant '{name}'")

    for tr in spec.transitions:
        check_qf(tr.guard, f"transition '{tr.name}' guard")
        if tr.uguard is not None:
            k, g = tr.uguard
            check_qf(g, f"transition '{tr.name}' uguard")
            if k in free_vars(tr.guard):
                error(f"transition '{tr.name}': guard mentions the universal variable")
        for x, t in tr.var_updates.items():
            want = spec.memory_vars[x].sort
            if t.sort != want:
                error(f"transition '{tr.name}': update of '{x}' has sort {t.sort.name}")
        for a, (y, t) in tr.array_updates.items():
            want = spec.memory_arrays[a][1]
            if t.sort != want:
                error(f"transition '{tr.name}': update of '{a}' has sort {t.sort.name}")

    # unused symbol warnings
    used: set = set()

    def collect(f: Formula) -> None:
        for t in formula_terms(f):
            for s in subterms(t):
                if isinstance(s, App):
                    used.add(("fun", s.fun))
                elif isinstance(s, Const):
                    used.add(("const", s.name))
        for a in atoms(f):
            if isinstance(a, RelAtom):
                used.add(("rel", a.rel))

    def collect_term(t: Term) -> None:
        for s in subterms(t):
            if isinstance(s, App):
                used.add(("fun", s.fun))
            elif isinstance(s, Const):
                used.add(("const", s.name))
            elif isinstance(s, CaseOf):
                for cond, _ in s.branches:
                    collect(cond)

    for tr in spec.transitions:
        collect(tr.guard)
        if tr.uguard:
            collect(tr.uguard[1])
        for t in tr.var_updates.values():
            collect_term(t)
        for (y, t) in tr.array_updates.values():
            collect_term(t)
    for f in list(spec.unsafe.values()) + list(spec.invariants.values()):
        collect(f)
    for c in list(spec.init_vars.values()) + list(spec.init_arrays.values()):
        if isinstance(c, Const) and c.name != UNDEF:
            used.add(("const", c.name))

    for name in sig.funs:
        if ("fun", name) not in used:
            warn(f"function '{name}' is never used")
    for name in sig.rels:
        if ("rel", name) not in used:
            warn(f"relation '{name}' is never used")
    for name in sig.consts:
        if ("const", name) not in used:
            warn(f"constant '{name}' is never used")
    return out


# ---------------------------------------------------------------------------
# Pretty printing


def term_to_sx(t: Term) -> str:
    if isinstance(t, (Var, Const)):
        return t.name
    if isinstance(t, Num):
        return _frac_sx(t.value)
    if isinstance(t, App):
        return f"({t.fun} {term_to_sx(t.arg)})"
    if isinstance(t, Select):
        return f"(select {t.array} {term_to_sx(t.index)})"
    if isinstance(t, LinSum):
        parts = []
        for c, b in t.coeffs:
            if c == 1:
                parts.append(term_to_sx(b))
            else:
                parts.append(f"(* {_frac_sx(c)} {term_to_sx(b)})")
        if t.const != 0:
            parts.append(_frac_sx(t.const))
        if len(parts) == 1:
            return parts[0]
        return "(+ " + " ".join(parts) + ")"
    if isinstance(t, CaseOf):
        bits = []
        for cond, val in t.branches[:-1]:
            bits.append(f"({formula_to_sx(cond)} {term_to_sx(val)})")
        bits.append(f"(else {term_to_sx(t.branches[-1][1])})")
        return "(case " + " ".join(bits) + ")"
    raise TypeError(t)


def _frac_sx(v: Fraction) -> str:
    if v.denominator == 1:
        return str(v.numerator) if v >= 0 else f"(- {-v.numerator})"
    s = f"(/ {abs(v.numerator)} {v.denominator})"
    return f"(- {s})" if v < 0 else s


def formula_to_sx(f: Formula) -> str:
    if isinstance(f, TrueF):
        return "true"
    if isinstance(f, FalseF):
        return "false"
    if isinstance(f, Atom):
        sym = {"eq": "=", "le": "<=", "lt": "<"}[f.op]
        return f"({sym} {term_to_sx(f.lhs)} {term_to_sx(f.rhs)})"
    if isinstance(f, RelAtom):
        return "(" + f.rel + " " + " ".join(term_to_sx(a) for a in f.args) + ")"
    if isinstance(f, Not):
        return f"(not {formula_to_sx(f.arg)})"
    if isinstance(f, And):
        return "(and " + " ".join(formula_to_sx(a) for a in f.args) + ")"
    if isinstance(f, Or):
        return "(or " + " ".join(formula_to_sx(a) for a in f.args) + ")"
    if isinstance(f, (Exists, Forall)):
        q = "exists" if isinstance(f, Exists) else "forall"
        binds = " ".join(f"({v.name} {v.sort.name})" for v in f.vars)
        return f"({q} ({binds}) {formula_to_sx(f.body)})"
    raise TypeError(f)


def _case_sx(body: Term) -> str:
    if isinstance(body, CaseOf):
        return term_to_sx(body)
    return f"(case (else {term_to_sx(body)}))"


def pretty_print(spec: RabSpec) -> str:
    """Deterministic text form; parse(pretty_print(s)) is structurally s."""
    lines: List[str] = []
    sig = spec.signature
    if sig.theory is not Theory.NONE:
        lines.append(f"(theory {sig.theory.value})")
    for s in sig.sorts.values():
        if s.kind is SortKind.ID:
            lines.append(f"(sort {s.name} :id)")
        elif s.kind is SortKind.VALUE:
            lines.append(f"(sort {s.name} :value)")
        elif s.kind is SortKind.ELEM2:
            lines.append(f"(sort {s.name} :elem2)")
        elif s.kind is SortKind.MEMORY:
            lines.append(f"(mem-sort {s.name})")
    for name, (dom, cod) in sig.funs.items():
        lines.append(f"(fun {name} {dom.name} -> {cod.name})")
    for name, argsorts in sig.rels.items():
        lines.append(f"(rel {name} " + " ".join(s.name for s in argsorts) + ")")
    for name, s in sig.consts.items():
        lines.append(f"(const {name} {s.name})")
    for name, v in spec.memory_vars.items():
        lines.append(f"(var {name} {v.sort.name})")
    for name, (mem, cod) in spec.memory_arrays.items():
        lines.append(f"(arr {name} {mem.name} -> {cod.name})")
    if spec.init_relativized:
        lines.append("(init-relativized)")
    init_bits = []
    for x in spec.memory_vars:
        if x in spec.init_vars:
            init_bits.append(f"(= {x} {term_to_sx(spec.init_vars[x])})")
    for a in spec.memory_arrays:
        if a in spec.init_arrays:
            init_bits.append(f"(= {a} (lambda {term_to_sx(spec.init_arrays[a])}))")
    lines.append("(init " + " ".join(init_bits) + ")")
    for tr in spec.transitions:
        lines.append(_transition_sx(spec, tr))
    for name, f in spec.unsafe.items():
        lines.append(f"(unsafe {name} {formula_to_sx(f)})")
    for name, f in spec.invariants.items():
        if isinstance(f, Forall):
            binds = " ".join(f"({v.name} {v.sort.name})" for v in f.vars)
            body = formula_to_sx(f.body)
        else:
            binds = ""
            body = formula_to_sx(f)
        lines.append(f"(invariant {name} (forall {binds}) {body})")
    return "\n".join(lines) + "\n"


def _transition_sx(spec: RabSpec, tr: TransitionRule) -> str:
    e = " ".join(f"({v.name} {v.sort.name})" for v in tr.exists_index)
    d = " ".join(f"({v.name} {v.sort.name})" for v in tr.exists_data)
    parts = [
        f"(transition {tr.name}",
        f"  (exists {e})" if e else "  (exists)",
        f"  (data {d})" if d else "  (data)",
        f"  (guard {formula_to_sx(tr.guard)})",
    ]
    if tr.uguard is not None:
        k, g = tr.uguard
        parts.append(f"  (uguard {k.name} {formula_to_sx(g)})")
    upds = []
    for x in spec.memory_vars:
        t = tr.var_updates.get(x)
        if t is None or t == spec.memory_vars[x]:
            continue
        upds.append(f"    (:= {x} {term_to_sx(t)})")
    for a in spec.memory_arrays:
        upd = tr.array_updates.get(a)
        if upd is None:
            continue
        y, body = upd
        if body == Select(a, y, spec.memory_arrays[a][1]):
            continue
        upds.append(f"    (:= {a} (lambda {y.name} {_case_sx(body)}))")
    if upds:
        parts.append("  (update")
        parts.extend(upds)
        parts.append("  ))")
    else:
        parts.append("  (update))")
    return "\n".join(parts)


# ---------------------------------------------------------------------------
# Structural equality helper for round-trip tests


def specs_equal(a: RabSpec, b: RabSpec) -> bool:
    if (a.signature.theory, a.signature.sorts, a.signature.funs,
            a.signature.rels, a.signature.consts) != (
            b.signature.theory, b.signature.sorts, b.signature.funs,
            b.signature.rels, b.signature.consts):
        return False
    if a.memory_sorts != b.memory_sorts:
        return False
    if a.memory_vars != b.memory_vars or a.memory_arrays != b.memory_arrays:
        return False
    if a.init_vars != b.init_vars or a.init_arrays != b.init_arrays:
        return False
    if a.init_relativized != b.init_relativized:
        return False
    if len(a.transitions) != len(b.transitions):
        return False
    for ta, tb in zip(a.transitions, b.transitions):
        if not _transitions_equal(ta, tb):
            return False
    return a.unsafe == b.unsafe and a.invariants == b.invariants


def _transitions_equal(ta: TransitionRule, tb: TransitionRule) -> bool:
    if (ta.name, ta.exists_index, ta.exists_data, ta.guard) != (
            tb.name, tb.exists_index, tb.exists_data, tb.guard):
        return False
    if (ta.uguard is None) != (tb.uguard is None):
        return False
    if ta.uguard is not None:
        ka, ga = ta.uguard
        kb, gb = tb.uguard
        if ka.sort != kb.sort:
            return False
        from .terms import substitute

        if substitute(ga, {ka: kb}) != gb:
            return False
    if ta.var_updates != tb.var_updates:
        return False
    if set(ta.array_updates) != set(tb.array_updates):
        return False
    from .terms import subst_term

    for a in ta.array_updates:
        ya, bda = ta.array_updates[a]
        yb, bdb = tb.array_updates[a]
        if ya.sort != yb.sort:
            return False
        if subst_term(bda, {ya: yb}) != bdb:
            return False
    return True
