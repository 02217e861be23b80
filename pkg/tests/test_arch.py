import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import FIXTURE_B, FIXTURE_C, FIXTURE_IDENTITY, random_terminal, state_from
from mctsnas import arch
from mctsnas.arch import (
    ArchState,
    IllegalMoveError,
    MacroConfig,
    OpKind,
    SpecParseError,
    TerminalStateError,
    apply_move,
    build_spec,
    count_params,
    deserialize_spec,
    expand,
    legal_moves,
    serialize_spec,
)


def test_fresh_state_offers_two_input_sources():
    assert legal_moves(ArchState()) == [0, 1]


def test_op_phase_offers_every_op():
    s = state_from([0, 1])
    assert s.phase == ("normal", "op_a")
    assert legal_moves(s) == list(range(8))
    assert [arch.OPS[m] for m in legal_moves(s)] == list(OpKind)


def test_terminal_state_has_no_moves():
    s = state_from([0] * 15)
    assert s.is_terminal
    with pytest.raises(TerminalStateError):
        legal_moves(s)
    with pytest.raises(TerminalStateError):
        apply_move(s, 0)


def test_apply_move_value_semantics():
    s = ArchState()
    t = apply_move(s, 0)
    assert t.decisions == (0,)
    assert s.decisions == ()
    assert t.phase == ("normal", "input_b")


def test_illegal_move_names_phase():
    with pytest.raises(IllegalMoveError, match="normal.input_a"):
        apply_move(ArchState(), 2)
    with pytest.raises(IllegalMoveError, match="op_a"):
        apply_move(state_from([0, 0]), 8)


def test_phase_order():
    kinds = [k for k, _ in arch.phase_fields()]
    assert kinds == ["normal"] * 5 + ["reduction"] * 5 + ["upsample"] * 5
    assert arch.branching_factors() == (2, 2, 8, 8, 2) * 3


def test_last_cell_subtree_leaf_count():
    s = state_from([0] * 10)
    assert sum(1 for _ in arch.enumerate_terminals(s)) == 2 * 2 * 8 * 8 * 2


def test_tree_size_is_product_of_branching():
    assert math.prod(arch.branching_factors()) == (2 * 2 * 8 * 8 * 2) ** 3


@pytest.mark.slow
def test_two_cell_subtree_leaf_count():
    s = state_from([1] * 5)
    assert sum(1 for _ in arch.enumerate_terminals(s)) == 512 ** 2


def test_build_spec_requires_terminal():
    with pytest.raises(TerminalStateError):
        build_spec(state_from([0] * 14))


def test_identity_spec_shape_checks_at_128():
    spec = build_spec(state_from([0] * 15), MacroConfig(R=2, base_channels=8))
    g = expand(spec, (128, 128))
    assert g.output_shape == (1, 128, 128)
    reductions = sum(1 for n in g.nodes if n.name.endswith("reduce.out"))
    upsamples = sum(1 for n in g.nodes if n.name.endswith("upsample.out"))
    assert reductions == upsamples == 2


def test_conv_param_formula():
    assert arch.conv_params(3, 4, 8) == 3 * 3 * 4 * 8 + 8 == 296
    assert arch.sepconv_params(3, 4, 8) == 9 * 4 + 4 * 8 + 8


def test_identity_network_without_head_or_stem_has_no_params():
    spec = build_spec(state_from([0] * 15), MacroConfig(stem=False), head=False)
    assert count_params(spec) == 0


@pytest.mark.parametrize("fixture", [FIXTURE_IDENTITY, FIXTURE_B, FIXTURE_C], ids=["identity", "B", "C"])
def test_count_params_matches_hand_enumeration(fixture):
    decisions, macro, expected = fixture
    spec = build_spec(state_from(decisions), macro)
    assert count_params(spec) == expected


def test_count_params_is_sum_over_layers():
    decisions, macro, expected = FIXTURE_B
    g = expand(build_spec(state_from(decisions), macro), (32, 32))
    assert sum(n.params for n in g.nodes) == g.params == expected


def test_count_params_does_not_depend_on_input_size():
    decisions, macro, _ = FIXTURE_C
    spec = build_spec(state_from(decisions), macro)
    assert expand(spec, (16, 16)).params == expand(spec, (128, 128)).params


def _unet_oracle(widths, cin=1):
    total, c_prev = 0, cin
    for c in widths:
        total += (9 * c_prev * c + c) + (9 * c * c + c)
        c_prev = c
    for c in reversed(widths[:-1]):
        total += 4 * c_prev * c + c  # 2x2 transposed conv
        total += (9 * 2 * c * c + c) + (9 * c * c + c)
        c_prev = c
    return total + c_prev + 1


def test_reference_unet_matches_baseline_count():
    g = arch.reference_unet()
    assert g.params == _unet_oracle(arch.BASELINE_UNET_WIDTHS) == 120441 == arch.BASELINE_PARAMS
    assert g.output_shape == (1, 128, 128)


def test_roundtrip_identity_spec():
    spec = build_spec(state_from([0] * 15))
    assert deserialize_spec(serialize_spec(spec)) == spec


def test_roundtrip_fixture_preserves_count():
    decisions, macro, expected = FIXTURE_C
    spec = build_spec(state_from(decisions), macro)
    back = deserialize_spec(serialize_spec(spec))
    assert back == spec
    assert count_params(back) == expected


def test_truncated_document_reports_location():
    text = serialize_spec(build_spec(state_from([0] * 15)))
    with pytest.raises(SpecParseError, match="line"):
        deserialize_spec(text[: len(text) // 2])


@pytest.mark.parametrize(
    "mutate, where",
    [
        (lambda d: d["cells"]["normal"].update(op_a="conv7x7"), "cells.normal"),
        (lambda d: d["cells"].pop("upsample"), "cells"),
        (lambda d: d["macro"].update(R="two"), "macro.R"),
        (lambda d: d.update(version=99), "version"),
    ],
)
def test_malformed_document_errors(mutate, where):
    doc = arch.spec_to_dict(build_spec(state_from([0] * 15)))
    mutate(doc)
    with pytest.raises(SpecParseError, match=where.replace(".", r"\.")):
        arch.spec_from_dict(doc)


def test_document_has_documented_fields():
    doc = arch.spec_to_dict(build_spec(state_from([0] * 15)))
    assert set(doc) == {"version", "cells", "macro", "head"}
    assert set(doc["cells"]) == {"normal", "reduction", "upsample"}
    assert {"R", "normals_per_stage", "base_channels"} <= set(doc["macro"])


def test_spec_to_decisions_inverts_build():
    decisions, macro, _ = FIXTURE_B
    assert arch.spec_to_decisions(build_spec(state_from(decisions), macro)) == decisions


def test_move_keys_share_across_slot_types():
    # op_a of the normal cell and op_b of the upsample cell share a key
    assert arch.move_key(2, 3) == arch.move_key(13, 3) == ("op", 3)
    assert arch.move_key(0, 1) == arch.move_key(6, 1) == ("input", 1)
    assert arch.move_key(4, 1) != arch.move_key(0, 1)


def test_extended_space_sets_macro():
    s = state_from([2, 3] + [0] * 15, extended=True)
    assert s.n_decisions == 17
    spec = build_spec(s, MacroConfig())
    assert spec.macro.R == 3 and spec.macro.base_channels == 32
    assert expand(spec, (128, 128)).output_shape == (1, 128, 128)


def test_odd_input_rejected():
    with pytest.raises(arch.ShapeError):
        expand(build_spec(state_from([0] * 15)), (30, 30))


decision_seeds = st.integers(0, 2 ** 32 - 1)


@settings(max_examples=60, deadline=None)
@given(decision_seeds)
def test_every_terminal_state_shape_checks(seed):
    s = random_terminal(np.random.default_rng(seed))
    g = expand(build_spec(s), (128, 128))
    assert g.output_shape == (1, 128, 128)
    assert all(min(n.shape) >= 1 for n in g.nodes)


@settings(max_examples=60, deadline=None)
@given(decision_seeds)
def test_apply_move_never_mutates(seed):
    rng = np.random.default_rng(seed)
    s = ArchState()
    while not s.is_terminal:
        before = (s.decisions, s.extended)
        t = apply_move(s, int(rng.choice(legal_moves(s))))
        assert (s.decisions, s.extended) == before
        assert len(t.decisions) == len(s.decisions) + 1
        s = t


@settings(max_examples=40, deadline=None)
@given(decision_seeds, st.sampled_from([8, 16]), st.integers(1, 3))
def test_serialization_preserves_count(seed, base, depth):
    s = random_terminal(np.random.default_rng(seed))
    spec = build_spec(s, MacroConfig(R=depth, base_channels=base))
    back = deserialize_spec(serialize_spec(spec))
    assert back == spec and count_params(back) == count_params(spec)
