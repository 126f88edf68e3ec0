"""Cross-configuration determinism.

Every program must produce one byte-identical trace line across the full
mode x memory-mode grid.  The directed corpus covers every trap code; a
random slice covers generated control flow, memory traffic, and floats.
The full 200-case sweep lives in the acceptance suite; this file is the
fast everyday check.
"""

import pytest

import wasmgen
from wasmgen import ALL_CONFIGS, run_all_configs

DIRECTED = wasmgen._directed()


def test_grid_shape():
    labels = [label for label, _ in run_all_configs(DIRECTED[0])]
    assert labels == [f"{m}/{mm}" for m, mm in ALL_CONFIGS]
    assert len(labels) == 8


@pytest.mark.parametrize("case", DIRECTED, ids=lambda c: c.name)
def test_directed_case_is_config_invariant(case):
    lines = {line for _, line in run_all_configs(case)}
    assert len(lines) == 1, sorted(lines)


@pytest.mark.parametrize("seed", range(4000, 4012))
def test_random_case_is_config_invariant(seed):
    lines = {line for _, line in run_all_configs(wasmgen.random_case(seed))}
    assert len(lines) == 1, sorted(lines)


def test_repeat_runs_are_byte_identical():
    case = wasmgen.Case("fib", wasmgen.fib_module(), args=(17,))
    a = wasmgen.run_case(case, "lazy", "guard")
    b = wasmgen.run_case(case, "lazy", "guard")
    assert a == b


def test_frozen_reference_trace():
    # pinned trace; a cost model or hash change must update this on purpose
    case = wasmgen.Case("fib", wasmgen.fib_module(), args=(20,))
    for _, line in run_all_configs(case):
        assert line == "OK 6765 gas=218904 memhash=cbf29ce484222325"
