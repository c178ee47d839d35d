from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from intpde.genome import (
    Genome,
    GenomeConfig,
    canonicalize,
    differentiate_module,
    format_equation,
    integral_to_differential,
    make_genome,
    module_name,
    parse_genome,
    random_genome,
    translate,
)

modules_st = st.lists(st.lists(st.integers(0, 3), min_size=1, max_size=3), min_size=1, max_size=5)


def test_single_possibility_config():
    cfg = GenomeConfig(max_order=0, max_genes_per_module=1, max_modules=1, lhs_choices=(1,))
    rng = np.random.default_rng(0)
    assert {str(random_genome(cfg, rng)) for _ in range(20)} == {"[1],{[0]}"}


def test_random_orders_are_uniform():
    cfg = GenomeConfig(max_order=3, max_genes_per_module=1, max_modules=1)
    rng = np.random.default_rng(1)
    counts = Counter(random_genome(cfg, rng).modules[0][0] for _ in range(10_000))
    for order in range(4):
        assert abs(counts[order] / 10_000 - 0.25) < 0.02


def test_random_module_counts_and_lhs_uniform():
    cfg = GenomeConfig(max_order=3, max_genes_per_module=3, max_modules=5)
    rng = np.random.default_rng(2)
    genomes = [random_genome(cfg, rng) for _ in range(4000)]
    assert all(g.is_canonical for g in genomes)
    assert all(1 <= len(g.modules) <= 5 for g in genomes)
    assert all(1 <= len(m) <= 3 and max(m) <= 3 for g in genomes for m in g.modules)
    lhs = Counter(g.lhs for g in genomes)
    assert abs(lhs[1] / 4000 - 0.5) < 0.03


def test_canonicalize_sorts_and_dedups():
    assert str(canonicalize(Genome(1, ((3, 1), (0,))))) == "[1],{[0],[1,3]}"
    assert str(canonicalize(Genome(2, ((1,), (1,))))) == "[2],{[1]}"


def test_canonicalize_idempotent_on_random_genomes():
    cfg = GenomeConfig()
    rng = np.random.default_rng(3)
    for _ in range(1000):
        g = random_genome(cfg, rng)
        raw = Genome(g.lhs, tuple(tuple(reversed(m)) for m in reversed(g.modules)))
        once = canonicalize(raw)
        assert canonicalize(once) == once == g


@settings(max_examples=200, deadline=None)
@given(modules_st, st.randoms(use_true_random=False))
def test_permutations_canonicalize_equal(modules, rnd):
    shuffled = [list(m) for m in modules]
    for m in shuffled:
        rnd.shuffle(m)
    rnd.shuffle(shuffled)
    assert make_genome(1, modules) == make_genome(1, shuffled)


@settings(max_examples=200, deadline=None)
@given(modules_st, st.sampled_from([1, 2]))
def test_string_round_trip(modules, lhs):
    g = make_genome(lhs, modules)
    assert parse_genome(str(g)) == g


def test_translate_examples():
    assert translate(parse_genome("[1],{[0,0],[1]}"))[1] == "∫u_t dx = c0*u^2 + c1*u_x"
    assert translate(parse_genome("[2],{[1]}"))[1] == "∫u_tt dx = c0*u_x"
    assert translate(parse_genome("[1],{[0,1]}"))[0] == ((0, 1),)
    assert module_name((0, 1, 3)) == "u*u_x*u_xxx"
    with pytest.raises(ValueError):
        translate(Genome(1, ((1,), (0,))))


def test_translate_is_injective():
    cfg = GenomeConfig()
    rng = np.random.default_rng(4)
    seen = {}
    for _ in range(10_000):
        g = random_genome(cfg, rng)
        key = translate(g)[1]
        assert seen.setdefault(key, g) == g


def test_invalid_genomes_rejected():
    for bad in [lambda: Genome(3, ((0,),)), lambda: Genome(1, ()), lambda: Genome(1, ((),)),
                lambda: parse_genome("1,{[0]}")]:
        with pytest.raises(ValueError):
            bad()


def test_length_counts_all_genes():
    assert parse_genome("[1],{[0,1,2],[3]}").length == 4


def test_product_rule_map():
    assert differentiate_module((0, 0)) == {(0, 1): 2}
    assert differentiate_module((1,)) == {(2,): 1}
    assert differentiate_module((0, 1)) == {(1, 1): 1, (0, 2): 1}
    terms = integral_to_differential(parse_genome("[1],{[0,0],[2]}"), [-0.5, -0.0025])
    assert terms == [(-1.0, (0, 1)), (-0.0025, (3,))]


def test_format_equation_signs():
    g = parse_genome("[1],{[0,0],[2]}")
    assert format_equation(g, [-0.497, -0.00249]) == "∫u_t dx = -0.497*u^2 - 0.00249*u_xx"
    assert format_equation(g, [0.5, 2.0], integral=False) == "u_t = 0.5*u^2 + 2*u_xx"
