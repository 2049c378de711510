"""SMT-LIB 2.6 stdio interface for the bundled solver.

Reads commands (possibly spanning lines), executes them against an Engine,
and answers on stdout, flushing after every response so it can sit behind a
pipe. Unsupported commands answer with an (error ...) line instead of dying;
a long-running session must survive client mistakes.
"""
from __future__ import annotations

import sys

from .core import Engine, SolverError, _sx_parse_all
from .theory import SolverUnknown


def _iter_commands(stream):
    depth = 0
    buf = []
    in_comment = False
    while True:
        ch = stream.read(1)
        if ch == "":
            break
        if in_comment:
            if ch == "\n":
                in_comment = False
            continue
        if ch == ";":
            in_comment = True
            continue
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        buf.append(ch)
        if depth == 0 and ch == ")":
            yield "".join(buf)
            buf = []


def run(stream_in, stream_out) -> int:
    engine = Engine()
    sys.setrecursionlimit(100000)

    def say(text: str) -> None:
        stream_out.write(text + "\n")
        stream_out.flush()

    for chunk in _iter_commands(stream_in):
        try:
            nodes = _sx_parse_all(chunk)
        except SolverError as e:
            say(f'(error "{e}")')
            continue
        for node in nodes:
            if not isinstance(node, list) or not node:
                say('(error "expected a command")')
                continue
            cmd = node[0]
            try:
                if cmd == "set-logic" or cmd == "set-info":
                    pass
                elif cmd == "set-option":
                    if len(node) == 3 and node[1] == ":timeout":
                        engine.timeout_ms = int(node[2])
                elif cmd == "declare-sort":
                    engine.declare_sort(node[1], int(node[2]) if len(node) > 2 else 0)
                elif cmd == "declare-fun":
                    engine.declare_fun(node[1], tuple(node[2]), node[3])
                elif cmd == "declare-const":
                    engine.declare_fun(node[1], (), node[2])
                elif cmd == "define-fun":
                    if node[2] != []:
                        raise SolverError("only constant define-fun is supported")
                    engine.define_const(node[1], node[3], engine._parse(node[4]))
                elif cmd == "assert":
                    engine.assert_node(node[1])
                elif cmd == "check-sat":
                    say(engine.check_sat())
                elif cmd == "push":
                    engine.push(int(node[1]) if len(node) > 1 else 1)
                elif cmd == "pop":
                    engine.pop(int(node[1]) if len(node) > 1 else 1)
                elif cmd == "get-model":
                    say(engine.model_text())
                elif cmd == "echo":
                    say(str(node[1]).strip('"'))
                elif cmd == "reset":
                    engine = Engine()
                elif cmd == "exit":
                    return 0
                else:
                    say(f'(error "unsupported command {cmd}")')
            except SolverError as e:
                say(f'(error "{e}")')
            except SolverUnknown:
                say("unknown")
            except (IndexError, ValueError, KeyError, TypeError) as e:
                say(f'(error "malformed command {cmd}: {e!r}")')
    return 0


def main() -> int:
    return run(sys.stdin, sys.stdout)


if __name__ == "__main__":
    raise SystemExit(main())
