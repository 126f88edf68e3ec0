#!/usr/bin/env python3
"""Regenerates the vendored benchmark kernels and the manifest.

Run from the repository root after installing the package:

    python3 bench/generate.py

The .wasm files under bench/kernels/ are checked in so `detwasm bench`
works without this step; rerun it only when a kernel changes.
"""

import json
import os

from detwasm.builder import ModuleBuilder


def K(n):
    return [("i32.const", n)]


def L(i):
    return [("local.get", i)]


def loop(i, limit, body, start=0):
    """for (i = start; i < limit; i++) body.  `limit` and `body` are
    instruction lists; the counter local is clobbered."""
    return ([("i32.const", start), ("local.set", i),
             ("block", None), ("loop", None),
             ("local.get", i)] + limit + [("i32.ge_u",), ("br_if", 1)]
            + body
            + [("local.get", i), ("i32.const", 1), ("i32.add",),
               ("local.set", i), ("br", 0), ("end",), ("end",)])


def addr4(base, index):
    return index + [("i32.const", 4), ("i32.mul",),
                    ("i32.const", base), ("i32.add",)]


def load4(base, index):
    return addr4(base, index) + [("i32.load", (2, 0))]


def store4(base, index, value):
    return addr4(base, index) + value + [("i32.store", (2, 0))]


def fib_rec():
    b = ModuleBuilder()
    b.func(["i32"], ["i32"], body=[
        ("local.get", 0), ("i32.const", 2), ("i32.lt_s",),
        ("if", "i32"), ("local.get", 0),
        ("else",),
        ("local.get", 0), ("i32.const", 1), ("i32.sub",), ("call", 0),
        ("local.get", 0), ("i32.const", 2), ("i32.sub",), ("call", 0),
        ("i32.add",),
        ("end",)])
    b.export("main", 0)
    return b.build()


def fib_iter():
    # locals: 0 n, 1 i, 2 a, 3 b, 4 t
    b = ModuleBuilder()
    body = [("i32.const", 1), ("local.set", 3)]
    body += loop(1, L(0), [
        ("local.get", 2), ("local.get", 3), ("i32.add",), ("local.set", 4),
        ("local.get", 3), ("local.set", 2),
        ("local.get", 4), ("local.set", 3)])
    body += L(2)
    b.func(["i32"], ["i32"], local_decls=[(4, "i32")], body=body)
    b.export("main", 0)
    return b.build()


def checked_mix():
    # exercises three overflow hooks per iteration, never overflowing
    b = ModuleBuilder()
    b.import_func("env", "checked_i32_add", ["i32", "i32"], ["i32"])
    b.import_func("env", "checked_i64_sub", ["i64", "i64"], ["i64"])
    b.import_func("env", "checked_u64_mul", ["i64", "i64"], ["i64"])
    per_iter = [
        ("local.get", 2), ("i32.const", 7), ("call", 0), ("local.set", 2),
        ("local.get", 3),
        ("local.get", 1), ("i32.const", 0xFFFF), ("i32.and",),
        ("i64.extend_i32_u",), ("i64.const", 0x10001), ("call", 2),
        ("i64.const", 0xFF), ("i64.and",),
        ("call", 1), ("local.set", 3)]
    body = loop(1, L(0), per_iter)
    body += [("local.get", 2), ("local.get", 3), ("i32.wrap_i64",),
             ("i32.add",)]
    b.func(["i32"], ["i32"], local_decls=[(2, "i32"), (1, "i64")], body=body)
    b.export("main", 3)
    return b.build()


def memstream():
    # locals: 0 n, 1 i, 2 sum; one write sweep, one read sweep
    b = ModuleBuilder()
    b.memory(4, 4)
    slot = [("local.get", 1), ("i32.const", 4), ("i32.mul",),
            ("i32.const", 0x3FFFC), ("i32.and",)]
    body = loop(1, L(0), slot + [("local.get", 1), ("i32.store", (2, 0))])
    body += loop(1, L(0), [("local.get", 2)] + slot
                 + [("i32.load", (2, 0)), ("i32.add",), ("local.set", 2)])
    body += L(2)
    b.func(["i32"], ["i32"], local_decls=[(2, "i32")], body=body)
    b.export("main", 0)
    return b.build()


def mm2_like(n=12):
    # two chained n*n matrix products over linear memory
    A, B, C, D = 0, 4 * n * n, 8 * n * n, 12 * n * n
    b = ModuleBuilder()
    b.memory(1, 1)
    i, j, k, acc = 0, 1, 2, 3

    def idx(r, c):
        return L(r) + K(n) + [("i32.mul",)] + L(c) + [("i32.add",)]

    def mac(dst, lhs, rhs):
        ij, ik, kj = idx(i, j), idx(i, k), idx(k, j)
        return loop(k, K(n), store4(
            dst, ij, load4(dst, ij) + load4(lhs, ik) + load4(rhs, kj)
            + [("i32.mul",), ("i32.add",)]))

    body = loop(i, K(n * n),
                store4(A, L(i), L(i) + K(7) + [("i32.mul",)] + K(3)
                       + [("i32.add",), ("i32.const", 0xFF), ("i32.and",)])
                + store4(B, L(i), L(i) + K(5) + [("i32.mul",)] + K(1)
                         + [("i32.add",), ("i32.const", 0xFF), ("i32.and",)]))
    body += loop(i, K(n), loop(j, K(n), mac(C, A, B)))
    body += loop(i, K(n), loop(j, K(n), mac(D, C, B)))
    body += loop(i, K(n * n), L(acc) + load4(D, L(i))
                 + [("i32.add",), ("local.set", acc)])
    body += L(acc)
    b.func([], ["i32"], local_decls=[(4, "i32")], body=body)
    b.export("main", 0)
    return b.build()


def jacobi1d_like(n=500, steps=10):
    A, B = 0, 4 * n
    b = ModuleBuilder()
    b.memory(1, 1)
    t, i = 0, 1
    body = loop(i, K(n), store4(A, L(i), L(i) + K(13) + [("i32.mul",)] + K(5)
                                + [("i32.add",), ("i32.const", 0xFFFF),
                                   ("i32.and",)]))
    sweep = loop(i, K(n - 1), store4(
        B, L(i),
        load4(A, L(i) + K(1) + [("i32.sub",)])
        + load4(A, L(i)) + [("i32.add",)]
        + load4(A, L(i) + K(1) + [("i32.add",)]) + [("i32.add",)]
        + K(3) + [("i32.div_u",)]), start=1)
    copy_back = loop(i, K(n - 1), store4(A, L(i), load4(B, L(i))), start=1)
    body += loop(t, K(steps), sweep + copy_back)
    body += load4(A, K(n // 2)) + load4(A, K(1)) + [("i32.add",)]
    body += load4(A, K(n - 2)) + [("i32.add",)]
    b.func([], ["i32"], local_decls=[(2, "i32")], body=body)
    b.export("main", 0)
    return b.build()


def atax_like(n=40):
    # y = A_transposed * (A * x)
    A, X, TMP, Y = 0, 4 * n * n, 4 * n * n + 4 * n, 4 * n * n + 8 * n
    b = ModuleBuilder()
    b.memory(1, 1)
    i, j, acc = 0, 1, 2

    def ij():
        return L(i) + K(n) + [("i32.mul",)] + L(j) + [("i32.add",)]

    body = loop(i, K(n), store4(X, L(i), L(i) + [("i32.const", 0xF),
                                                 ("i32.and",)]))
    body += loop(i, K(n * n), store4(A, L(i), L(i) + K(3) + [("i32.mul",)]
                                     + K(7) + [("i32.add",),
                                               ("i32.const", 0x3F),
                                               ("i32.and",)]))
    body += loop(i, K(n),
                 [("i32.const", 0), ("local.set", acc)]
                 + loop(j, K(n), L(acc) + load4(A, ij()) + load4(X, L(j))
                        + [("i32.mul",), ("i32.add",), ("local.set", acc)])
                 + store4(TMP, L(i), L(acc)))
    body += loop(i, K(n), loop(j, K(n), store4(
        Y, L(j), load4(Y, L(j)) + load4(A, ij()) + load4(TMP, L(i))
        + [("i32.mul",), ("i32.add",)])))
    body += [("i32.const", 0), ("local.set", acc)]
    body += loop(j, K(n), L(acc) + load4(Y, L(j))
                 + [("i32.add",), ("local.set", acc)])
    body += L(acc)
    b.func([], ["i32"], local_decls=[(3, "i32")], body=body)
    b.export("main", 0)
    return b.build()


def lazy50():
    """50 functions, 3 on the entry path; the shape that separates lazy
    from eager creation latency."""
    b = ModuleBuilder()
    b.func(["i32"], ["i32"], body=[("local.get", 0), ("call", 1)])
    b.func(["i32"], ["i32"], body=[("local.get", 0), ("call", 2)])
    b.func(["i32"], ["i32"],
           body=[("local.get", 0)] + [("i32.const", 1), ("i32.add",)] * 20)
    filler = [("local.get", 0)] + [("i32.const", 3), ("i32.add",)] * 40
    for _ in range(47):
        b.func(["i32"], ["i32"], body=filler)
    b.export("main", 0)
    return b.build()


KERNELS = [
    ("fib_rec", fib_rec, ["i32:18"]),
    ("fib_iter", fib_iter, ["i32:20000"]),
    ("checked_mix", checked_mix, ["i32:4000"]),
    ("memstream", memstream, ["i32:8000"]),
    ("mm2_like", mm2_like, []),
    ("jacobi1d_like", jacobi1d_like, []),
    ("atax_like", atax_like, []),
    ("lazy50", lazy50, ["i32:7"]),
]


def main():
    here = os.path.dirname(os.path.abspath(__file__))
    os.makedirs(os.path.join(here, "kernels"), exist_ok=True)
    entries = []
    for name, build, args in KERNELS:
        rel = os.path.join("kernels", f"{name}.wasm")
        with open(os.path.join(here, rel), "wb") as fh:
            fh.write(build())
        entries.append({"name": name, "file": rel, "entry": "main",
                        "args": args})
    with open(os.path.join(here, "manifest.json"), "w",
              encoding="utf-8") as fh:
        json.dump({"kernels": entries}, fh, indent=2)
        fh.write("\n")
    print(f"wrote {len(entries)} kernels to {here}")


if __name__ == "__main__":
    main()
