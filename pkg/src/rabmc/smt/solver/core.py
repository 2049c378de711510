"""SMT-LIB engine for the bundled solver: sort checking, CNF, DPLL(T) search.

The boolean search is a watched-literal DPLL with chronological backtracking;
theory reasoning happens on full assignments via theory.check_conjunction,
whose unsat cores come back as learned clauses. Adequate and exact for the
quantifier-free queries the verifier emits; generic SMT-LIB input in the same
fragment (EUF + LIA/LRA, no quantifiers) works too.
"""
from __future__ import annotations

import time
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

from .theory import SolverUnknown, check_conjunction

BOOL = "Bool"
INT = "Int"
REAL = "Real"

TRUE_T = ("app", "@true")


class SolverError(Exception):
    pass


def _sx_parse_all(text: str):
    """Parse SMT-LIB text into nested lists/strings."""
    out: List = []
    stack: List[list] = []
    i, n = 0, len(text)
    tok = []

    def flush():
        if tok:
            s = "".join(tok)
            tok.clear()
            if stack:
                stack[-1].append(s)
            else:
                out.append(s)

    while i < n:
        c = text[i]
        if c == ";":
            while i < n and text[i] != "\n":
                i += 1
        elif c == "|":  # quoted symbol
            j = text.find("|", i + 1)
            if j < 0:
                raise SolverError("unterminated quoted symbol")
            tok.append(text[i + 1:j])
            i = j + 1
        elif c == '"':
            j = i + 1
            while j < n and text[j] != '"':
                j += 1
            tok.append(text[i:j + 1])
            i = j + 1
        elif c in " \t\r\n":
            flush()
            i += 1
        elif c == "(":
            flush()
            stack.append([])
            i += 1
        elif c == ")":
            flush()
            if not stack:
                raise SolverError("unbalanced ')'")
            done = stack.pop()
            if stack:
                stack[-1].append(done)
            else:
                out.append(done)
            i += 1
        else:
            tok.append(c)
            i += 1
    flush()
    if stack:
        raise SolverError("unbalanced '('")
    return out


def _is_numeral(s: str) -> bool:
    t = s[1:] if s[:1] == "-" else s
    return t != "" and t.replace(".", "", 1).isdigit()


class Engine:
    def __init__(self) -> None:
        self.sorts: Dict[str, int] = {}
        self.funs: Dict[str, Tuple[Tuple[str, ...], str]] = {}
        self.defs: Dict[str, object] = {}
        self.assertions: List[list] = [[]]
        self.decl_log: List[list] = [[]]
        self.timeout_ms: Optional[int] = None
        self.last_model: Optional[dict] = None
        self.produce_models = True

    # -- declarations ------------------------------------------------------
    def declare_sort(self, name: str, arity: int) -> None:
        if arity != 0:
            raise SolverError("only arity 0 sorts are supported")
        if name in self.sorts:
            raise SolverError(f"sort {name} already declared")
        self.sorts[name] = 0
        self.decl_log[-1].append(("sort", name))

    def declare_fun(self, name: str, args: Tuple[str, ...], res: str) -> None:
        if name in self.funs or name in self.defs:
            raise SolverError(f"symbol {name} already declared")
        for s in args + (res,):
            self._check_sort(s)
        self.funs[name] = (args, res)
        self.decl_log[-1].append(("fun", name))

    def define_const(self, name: str, res: str, value) -> None:
        if name in self.funs or name in self.defs:
            raise SolverError(f"symbol {name} already declared")
        self.defs[name] = (value, res)
        self.decl_log[-1].append(("def", name))

    def _check_sort(self, s: str) -> None:
        if s not in (BOOL, INT, REAL) and s not in self.sorts:
            raise SolverError(f"unknown sort {s}")

    def push(self, n: int = 1) -> None:
        for _ in range(n):
            self.assertions.append([])
            self.decl_log.append([])

    def pop(self, n: int = 1) -> None:
        for _ in range(n):
            if len(self.assertions) == 1:
                raise SolverError("pop on empty stack")
            self.assertions.pop()
            for kind, name in self.decl_log.pop():
                if kind == "sort":
                    self.sorts.pop(name, None)
                elif kind == "fun":
                    self.funs.pop(name, None)
                else:
                    self.defs.pop(name, None)

    # -- term parsing --------------------------------------------------------
    def sort_of_term(self, t: tuple) -> str:
        if t[0] == "num":
            return INT if t[1].denominator == 1 else REAL
        if t[0] == "sum":
            for _, b in t[1]:
                return self.sort_of_term(b)
            return INT
        name = t[1]
        if name == "@true":
            return BOOL
        return self.funs[name][1]

    def arith_kind(self, t: tuple) -> Optional[str]:
        if t[0] != "app":
            return None
        res = self.funs.get(t[1], ((), ""))[1]
        if res == INT:
            return "int"
        if res == REAL:
            return "real"
        return None

    def parse_formula(self, node) -> tuple:
        """Formula tree: ("atom", pol, atom) | ("and"/"or", parts) | True/False."""
        v = self._parse(node)
        if v[0] != "F":
            raise SolverError(f"expected a Bool term: {node}")
        return v[1]

    def _parse(self, node):
        """Returns ("F", formula) or ("T", term, sort)."""
        if isinstance(node, str):
            if node == "true":
                return ("F", ("const", True))
            if node == "false":
                return ("F", ("const", False))
            if _is_numeral(node):
                if "." in node:
                    ip, fp = node.lstrip("-").split(".")
                    v = Fraction(int(ip or 0)) + Fraction(int(fp or 0), 10 ** len(fp))
                    if node.startswith("-"):
                        v = -v
                    return ("T", ("num", v), REAL)
                return ("T", ("num", Fraction(int(node))), INT)
            if node in self.defs:
                return self.defs[node][0]
            if node in self.funs:
                args, res = self.funs[node]
                if args:
                    raise SolverError(f"{node} expects arguments")
                if res == BOOL:
                    return ("F", ("atom", True, ("eq", ("app", node), TRUE_T)))
                return ("T", ("app", node), res)
            raise SolverError(f"unknown symbol {node}")
        if not node:
            raise SolverError("empty application")
        head = node[0]
        if not isinstance(head, str):
            raise SolverError("higher order application")
        args = node[1:]
        if head in ("and", "or"):
            parts = [self.parse_formula(a) for a in args]
            return ("F", (head, parts))
        if head == "not":
            self._arity(head, args, 1)
            return ("F", _neg(self.parse_formula(args[0])))
        if head == "=>":
            if len(args) < 2:
                raise SolverError("=> needs 2+ arguments")
            parts = [self.parse_formula(a) for a in args]
            acc = parts[-1]
            for p in reversed(parts[:-1]):
                acc = ("or", [_neg(p), acc])
            return ("F", acc)
        if head == "ite":
            self._arity(head, args, 3)
            c = self.parse_formula(args[0])
            t = self._parse(args[1])
            e = self._parse(args[2])
            if t[0] == "F" or e[0] == "F":
                if t[0] != "F" or e[0] != "F":
                    raise SolverError("ite branches mix Bool and non-Bool")
                return ("F", ("or", [("and", [c, t[1]]), ("and", [_neg(c), e[1]])]))
            return ("ITE", c, t, e)
        if head in ("=", "distinct", "<", "<=", ">", ">="):
            if len(args) != 2:
                # chainable in full SMT-LIB; binary is all we need
                if head == "=" and len(args) > 2:
                    parts = []
                    for a, b in zip(args, args[1:]):
                        parts.append(self.parse_formula(["=", a, b]))
                    return ("F", ("and", parts))
                if head == "distinct" and len(args) > 2:
                    parts = []
                    for i in range(len(args)):
                        for j in range(i + 1, len(args)):
                            parts.append(self.parse_formula(["distinct", args[i], args[j]]))
                    return ("F", ("and", parts))
                raise SolverError(f"{head} needs 2 arguments")
            a = self._parse(args[0])
            b = self._parse(args[1])
            if a[0] == "ITE" or b[0] == "ITE":
                return ("F", self._lift_ite(head, a, b))
            if a[0] == "F" or b[0] == "F":
                if a[0] != "F" or b[0] != "F":
                    raise SolverError("= between Bool and non-Bool")
                if head == "=":
                    return ("F", ("and", [("or", [_neg(a[1]), b[1]]),
                                          ("or", [a[1], _neg(b[1])])]))
                if head == "distinct":
                    return ("F", ("and", [("or", [a[1], b[1]]),
                                          ("or", [_neg(a[1]), _neg(b[1])])]))
                raise SolverError(f"{head} on Bool")
            ta, sa = a[1], a[2]
            tb, sb = b[1], b[2]
            if not self._sorts_compatible(sa, sb):
                raise SolverError(f"sort mismatch in {head}: {sa} vs {sb}")
            if head == "=":
                return ("F", ("atom", True, _mk_eq(ta, tb)))
            if head == "distinct":
                return ("F", ("atom", False, _mk_eq(ta, tb)))
            if sa not in (INT, REAL) and sb not in (INT, REAL):
                raise SolverError(f"{head} needs arithmetic operands")
            if head == "<":
                return ("F", ("atom", True, ("lt", ta, tb)))
            if head == "<=":
                return ("F", ("atom", True, ("le", ta, tb)))
            if head == ">":
                return ("F", ("atom", True, ("lt", tb, ta)))
            return ("F", ("atom", True, ("le", tb, ta)))
        if head in ("+", "-", "*", "/"):
            terms = []
            for x in args:
                v = self._parse(x)
                if v[0] == "ITE":
                    raise SolverError("ite below arithmetic is not supported")
                if v[0] != "T":
                    raise SolverError(f"arithmetic over Bool: {x}")
                terms.append((v[1], v[2]))
            return self._arith(head, terms)
        if head in self.funs:
            argsorts, res = self.funs[head]
            if len(args) != len(argsorts):
                raise SolverError(f"{head} expects {len(argsorts)} arguments")
            terms = []
            for x, want in zip(args, argsorts):
                v = self._parse(x)
                if v[0] != "T":
                    raise SolverError(f"Bool argument to {head}")
                if not self._sorts_compatible(v[2], want):
                    raise SolverError(f"argument sort mismatch in {head}")
                terms.append(v[1])
            t = ("app", head) + tuple(terms)
            if res == BOOL:
                return ("F", ("atom", True, ("eq", t, TRUE_T)))
            return ("T", t, res)
        raise SolverError(f"unknown symbol {head}")

    def _lift_ite(self, head, a, b):
        if a[0] == "ITE":
            c, t, e = a[1], a[2], a[3]
            fa = self._combine(head, t, b)
            fb = self._combine(head, e, b)
            return ("or", [("and", [c, fa]), ("and", [_neg(c), fb])])
        c, t, e = b[1], b[2], b[3]
        fa = self._combine(head, a, t)
        fb = self._combine(head, a, e)
        return ("or", [("and", [c, fa]), ("and", [_neg(c), fb])])

    def _combine(self, head, a, b):
        if a[0] == "ITE" or b[0] == "ITE":
            return self._lift_ite(head, a, b)
        ta, sa = a[1], a[2]
        tb, sb = b[1], b[2]
        if head == "=":
            return ("atom", True, _mk_eq(ta, tb))
        if head == "distinct":
            return ("atom", False, _mk_eq(ta, tb))
        if head == "<":
            return ("atom", True, ("lt", ta, tb))
        if head == "<=":
            return ("atom", True, ("le", ta, tb))
        if head == ">":
            return ("atom", True, ("lt", tb, ta))
        return ("atom", True, ("le", tb, ta))

    def _arith(self, head, terms):
        sort = INT
        for t, s in terms:
            if s == REAL:
                sort = REAL
            elif s not in (INT, REAL):
                raise SolverError("arithmetic over a non-numeric sort")
        if head == "+":
            parts = tuple((Fraction(1), t) for t, _ in terms)
            return ("T", _mk_sum(parts, Fraction(0)), sort)
        if head == "-":
            if len(terms) == 1:
                return ("T", _mk_sum(((Fraction(-1), terms[0][0]),), Fraction(0)), sort)
            parts = [(Fraction(1), terms[0][0])]
            parts += [(Fraction(-1), t) for t, _ in terms[1:]]
            return ("T", _mk_sum(tuple(parts), Fraction(0)), sort)
        if head == "*":
            if len(terms) != 2:
                raise SolverError("* takes 2 arguments")
            (t1, _), (t2, _) = terms
            if t1[0] == "num":
                return ("T", _mk_sum(((t1[1], t2),), Fraction(0)), sort)
            if t2[0] == "num":
                return ("T", _mk_sum(((t2[1], t1),), Fraction(0)), sort)
            raise SolverError("nonlinear multiplication is not supported")
        # constant division only, used for rational literals like (/ 1 2)
        if len(terms) != 2 or terms[1][0][0] != "num" or terms[1][0][1] == 0:
            raise SolverError("division only by a nonzero numeral")
        if terms[0][0][0] == "num":
            return ("T", ("num", terms[0][0][1] / terms[1][0][1]), REAL)
        return ("T", _mk_sum(((Fraction(1) / terms[1][0][1], terms[0][0]),), Fraction(0)), sort)

    def _sorts_compatible(self, a: str, b: str) -> bool:
        if a == b:
            return True
        return {a, b} <= {INT, REAL}

    def _arity(self, head, args, n):
        if len(args) != n:
            raise SolverError(f"{head} takes {n} arguments")

    # -- solving -------------------------------------------------------------
    def assert_node(self, node) -> None:
        self.assertions[-1].append(self.parse_formula(node))

    def check_sat(self) -> str:
        forms = [f for frame in self.assertions for f in frame]
        try:
            sat = _Search(self, forms, self.timeout_ms).run()
        except SolverUnknown:
            self.last_model = None
            return "unknown"
        except RecursionError:
            self.last_model = None
            return "unknown"
        if sat is None:
            self.last_model = None
            return "unknown"
        if sat:
            return "sat"
        self.last_model = None
        return "unsat"

    def model_text(self) -> str:
        if self.last_model is None:
            raise SolverError("no model available")
        lines = ["("]
        for name, (args, res) in sorted(self.funs.items()):
            if args:
                continue
            val = self.last_model.get(name)
            if val is None:
                val = _default_value(res)
            lines.append(f"  (define-fun {name} () {res} {val})")
        lines.append(")")
        return "\n".join(lines)


def _default_value(sort: str) -> str:
    if sort == BOOL:
        return "false"
    if sort in (INT, REAL):
        return "0"
    return f"@{sort}!0"


def _neg(f):
    if f[0] == "const":
        return ("const", not f[1])
    if f[0] == "atom":
        return ("atom", not f[1], f[2])
    if f[0] == "and":
        return ("or", [_neg(x) for x in f[1]])
    if f[0] == "or":
        return ("and", [_neg(x) for x in f[1]])
    raise SolverError("cannot negate")


def _mk_eq(a, b):
    if repr(a) <= repr(b):
        return ("eq", a, b)
    return ("eq", b, a)


def _mk_sum(parts, const):
    """Canonicalize a linear combination; collapse numerals."""
    acc: Dict[tuple, Fraction] = {}
    k = const
    stack = list(parts)
    while stack:
        c, t = stack.pop()
        if c == 0:
            continue
        if t[0] == "num":
            k += c * t[1]
        elif t[0] == "sum":
            for c2, b in t[1]:
                stack.append((c * c2, b))
            k += c * t[2]
        else:
            acc[t] = acc.get(t, Fraction(0)) + c
    items = tuple(sorted(((c, b) for b, c in acc.items() if c != 0),
                         key=lambda p: repr(p[1])))
    if not items:
        return ("num", k)
    if len(items) == 1 and items[0][0] == 1 and k == 0:
        return items[0][1]
    return ("sum", items, k)


# ---------------------------------------------------------------------------
# DPLL with watched literals; theory checks on full assignments


class _Search:
    def __init__(self, engine: Engine, forms: List[tuple], timeout_ms) -> None:
        self.engine = engine
        self.atom_ids: Dict[tuple, int] = {}
        self.atoms: List[Optional[tuple]] = []
        self.clauses: List[List[int]] = []
        self.deadline = (time.monotonic() + timeout_ms / 1000.0) if timeout_ms else None
        self.trivially_false = False
        for f in forms:
            self._assert(self._simplify(f))

    # literal encoding: var v -> pos 2v, neg 2v+1
    def _atom_var(self, atom: tuple) -> int:
        if atom in self.atom_ids:
            return self.atom_ids[atom]
        v = len(self.atoms)
        self.atom_ids[atom] = v
        self.atoms.append(atom)
        return v

    def _aux_var(self) -> int:
        v = len(self.atoms)
        self.atoms.append(None)
        return v

    def _simplify(self, f):
        if f[0] == "atom":
            pol, (op, lhs, rhs) = f[1], f[2]
            if op == "eq" and lhs == rhs:
                return ("const", pol)
            if lhs[0] == "num" and rhs[0] == "num":
                a, b = lhs[1], rhs[1]
                val = a == b if op == "eq" else a <= b if op == "le" else a < b
                return ("const", val if pol else not val)
            return f
        if f[0] in ("and", "or"):
            parts = [self._simplify(x) for x in f[1]]
            keep = []
            for p in parts:
                if p[0] == "const":
                    if p[1] != (f[0] == "and"):
                        return ("const", f[0] != "and")
                    continue
                keep.append(p)
            if not keep:
                return ("const", f[0] == "and")
            if len(keep) == 1:
                return keep[0]
            return (f[0], keep)
        return f

    def _lit(self, f) -> Optional[int]:
        if f[0] == "atom":
            v = self._atom_var(f[2])
            return 2 * v if f[1] else 2 * v + 1
        return None

    def _assert(self, f) -> None:
        if f[0] == "const":
            if not f[1]:
                self.trivially_false = True
            return
        if f[0] == "and":
            for x in f[1]:
                self._assert(x)
            return
        if f[0] == "or":
            lits = []
            complex_parts = []
            for x in f[1]:
                l = self._lit(x)
                if l is not None:
                    lits.append(l)
                else:
                    complex_parts.append(x)
            for x in complex_parts:
                lits.append(self._tseitin(x))
            self.clauses.append(lits)
            return
        l = self._lit(f)
        if l is None:
            raise SolverError(f"cannot assert {f}")
        self.clauses.append([l])

    def _tseitin(self, f) -> int:
        """Positive-polarity naming: returns a literal implying f."""
        if f[0] == "atom":
            return self._lit(f)
        p = self._aux_var()
        pl = 2 * p
        if f[0] == "and":
            for x in f[1]:
                l = self._lit(x)
                if l is None:
                    l = self._tseitin(x)
                self.clauses.append([pl + 1, l])
        elif f[0] == "or":
            cl = [pl + 1]
            for x in f[1]:
                l = self._lit(x)
                if l is None:
                    l = self._tseitin(x)
                cl.append(l)
            self.clauses.append(cl)
        elif f[0] == "const":
            if not f[1]:
                self.clauses.append([pl + 1])
        else:
            raise SolverError(f"tseitin: {f}")
        return pl

    # -- search ------------------------------------------------------------
    def run(self) -> Optional[bool]:
        if self.trivially_false:
            return False
        nvars = len(self.atoms)
        if nvars == 0:
            return self._theory_full([]) is True
        self.assign = [-1] * nvars
        self.trail: List[int] = []
        self.decisions: List[Tuple[int, int, bool]] = []  # (var, trail mark, flipped)
        occ = [0] * nvars
        pos_occ = [0] * nvars
        for cl in self.clauses:
            if not cl:
                return False
            for l in cl:
                occ[l >> 1] += 1
                if not (l & 1):
                    pos_occ[l >> 1] += 1
        self.order = sorted(range(nvars), key=lambda v: -occ[v])
        self.phase = [pos_occ[v] * 2 >= occ[v] for v in range(nvars)]
        steps = 0
        while True:
            steps += 1
            if steps % 64 == 0 and self.deadline and time.monotonic() > self.deadline:
                raise SolverUnknown("timeout")
            conflict = self._propagate()
            if conflict:
                if not self._backtrack():
                    return False
                continue
            v = self._pick()
            if v is None:
                res = self._theory_full(
                    [(self.assign[i] == 1, self.atoms[i])
                     for i in range(nvars) if self.atoms[i] is not None]
                )
                if res is True:
                    return True
                cl = [2 * self.atom_ids[atom] + (1 if pol else 0) for pol, atom in res]
                if not cl:
                    return False
                self.clauses.append(cl)
                if not self._backtrack():
                    return False
                continue
            self.decisions.append((v, len(self.trail), False))
            self._set(v, self.phase[v])

    def _lit_val(self, l: int) -> int:
        a = self.assign[l >> 1]
        if a == -1:
            return -1
        return 1 if (a == 1) == (not (l & 1)) else 0

    def _set(self, v: int, value: bool) -> None:
        self.assign[v] = 1 if value else 0
        self.trail.append(v)

    def _propagate(self) -> bool:
        """Unit propagation to fixpoint; True on conflict."""
        changed = True
        while changed:
            changed = False
            for cl in self.clauses:
                unassigned = None
                n_un = 0
                sat = False
                for l in cl:
                    val = self._lit_val(l)
                    if val == 1:
                        sat = True
                        break
                    if val == -1:
                        n_un += 1
                        if n_un > 1:
                            break
                        unassigned = l
                if sat or n_un > 1:
                    continue
                if n_un == 0:
                    return True
                self._set(unassigned >> 1, not (unassigned & 1))
                changed = True
        return False

    def _pick(self) -> Optional[int]:
        for v in self.order:
            if self.assign[v] == -1:
                return v
        return None

    def _backtrack(self) -> bool:
        while self.decisions:
            v, tlen, flipped = self.decisions.pop()
            while len(self.trail) > tlen:
                self.assign[self.trail.pop()] = -1
            if not flipped:
                self.decisions.append((v, tlen, True))
                self._set(v, not self.phase[v])
                return True
        return False

    def _theory_full(self, lits):
        budget = 4000
        res = check_conjunction(
            lits, arith_kind=self.engine.arith_kind, budget=budget, capture=True
        )
        if res.sat:
            self.engine.last_model = self._build_model(res)
            return True
        core = res.core if res.core else lits
        return core

    def _build_model(self, res) -> dict:
        model: dict = {}
        cc = res.cc
        arith = res.arith_values or {}
        class_names: Dict[int, str] = {}
        for name, (args, ressort) in self.engine.funs.items():
            if args:
                continue
            t = ("app", name)
            if ressort == BOOL:
                atom = _mk_eq(t, TRUE_T)
                var = self.atom_ids.get(atom)
                if var is not None and self.assign[var] != -1:
                    model[name] = "true" if self.assign[var] == 1 else "false"
                else:
                    model[name] = "false"
            elif ressort in (INT, REAL):
                v = arith.get(t)
                if v is None and cc is not None and t in cc.ids:
                    # equal to some captured term?
                    root = cc.find(cc.ids[t])
                    for u, val in arith.items():
                        if u in cc.ids and cc.find(cc.ids[u]) == root:
                            v = val
                            break
                v = v if v is not None else Fraction(0)
                model[name] = _frac_text(v, ressort)
            else:
                if cc is not None and t in cc.ids:
                    root = cc.find(cc.ids[t])
                    key = (ressort, root)
                    if key not in class_names:
                        class_names[key] = f"@{ressort}!{len([k for k in class_names if k[0] == ressort])}"
                    model[name] = class_names[key]
                else:
                    model[name] = f"@{ressort}!x"
        return model


def _frac_text(v: Fraction, sort: str) -> str:
    if v.denominator == 1:
        s = str(v.numerator)
        if sort == REAL:
            s += ".0"
        return s if v >= 0 else f"(- {str(-v.numerator)}{'.0' if sort == REAL else ''})"
    s = f"(/ {abs(v.numerator)}.0 {v.denominator}.0)" if sort == REAL else f"(/ {abs(v.numerator)} {v.denominator})"
    return f"(- {s})" if v < 0 else s
