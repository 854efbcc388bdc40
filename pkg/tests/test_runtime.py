"""Runtime pipeline: encoding, inference, decoding, and the traversal oracle."""

import random
from decimal import Decimal

import pytest

from copse import gen, runtime
from copse.forest import compute_props, parse_forest
from copse.staging import compile_forest
from copse.vm import DepthBudgetExceeded, VecMachine


def _bits_of(planes, vm):
    from copse.staging import BitPlanes

    raw = [vm.decrypt(p) for p in planes]
    return BitPlanes(precision=len(raw), planes=tuple(raw)).to_ints()


def test_encode_replicates_and_groups_by_feature():
    props = compute_props(gen.demo_forest())
    vm = VecMachine()
    q = runtime.encode_features({0: 0, 1: 5}, n_features=props.n_features,
                                p=4, frac_bits=0, k_declared=3, vm=vm)
    assert _bits_of(q.planes, vm).tolist() == [0, 0, 0, 5, 5, 5]
    assert vm.ledger.counts["encrypt"] == 4  # one per bit plane


def test_encode_padding_bound_only_stretches_layout():
    forest = gen.demo_forest()
    props = compute_props(forest)
    model = compile_forest(forest, p=4, k_declared=props.max_multiplicity + 2)
    vm = VecMachine()
    q = runtime.encode_query({0: 0, 1: 5}, model, vm)
    assert q.length == 10
    run = runtime.infer(model, q, runtime.PartyConfig(), vm)
    assert vm.decrypt(run.cipher).tolist() == [0, 0, 0, 0, 1, 0]


def test_encode_single_feature_no_replication():
    text = "labels A B\nbranch 0 3 leaf 0 leaf 1\n"
    model = compile_forest(parse_forest(text), p=4)
    vm = VecMachine()
    q = runtime.encode_query({0: 2}, model, vm)
    assert q.length == 1
    assert _bits_of(q.planes, vm).tolist() == [2]


def test_encode_rejects_missing_and_unknown_features():
    vm = VecMachine()
    with pytest.raises(runtime.QueryError):
        runtime.encode_features({0: 1}, n_features=2, p=4, frac_bits=0,
                                k_declared=1, vm=vm)
    with pytest.raises(runtime.QueryError):
        runtime.encode_features({0: 1, 1: 1, 7: 1}, n_features=2, p=4,
                                frac_bits=0, k_declared=1, vm=vm)


def test_encode_overflow_propagates():
    from copse.staging import QuantizationOverflow

    vm = VecMachine()
    with pytest.raises(QuantizationOverflow):
        runtime.encode_features({0: 99}, n_features=1, p=4, frac_bits=0,
                                k_declared=1, vm=vm)


def test_demo_inference_selects_l4():
    model = compile_forest(gen.demo_forest(), p=4)
    vm = VecMachine()
    q = runtime.encode_query({0: 0, 1: 5}, model, vm)
    run = runtime.infer(model, q, runtime.PartyConfig(), vm)
    result = runtime.decode(vm.decrypt(run.cipher), model)
    assert result.bits == (0, 0, 0, 0, 1, 0)
    assert result.per_tree_labels == ("L4",)
    assert result.plurality == "L4"


def test_leaf_only_forest_is_constant_with_zero_products():
    text = "labels A B\nleaf 0\nleaf 1\nleaf 0\n"
    forest = parse_forest(text)
    model = compile_forest(forest, p=4)
    vm = VecMachine()
    q = runtime.encode_query({}, model, vm)
    run = runtime.infer(model, q, runtime.PartyConfig(), vm)
    assert vm.decrypt(run.cipher).tolist() == [1, 1, 1]
    assert vm.ledger.counts["mult_ct_ct"] == 0
    assert vm.ledger.counts["mult_ct_pt"] == 0
    result = runtime.decode(vm.decrypt(run.cipher), model)
    assert result.per_tree_labels == ("A", "B", "A")
    assert result.plurality == "A"


def test_inference_matches_oracle_on_random_forests():
    rng = random.Random(41)
    for trial in range(30):
        p = (4, 8, 16)[trial % 3]
        forest = gen.random_forest(rng, p=p)
        props = compute_props(forest)
        model = compile_forest(forest, p=p)
        for _ in range(5):
            values = gen.random_query(rng, props.n_features, p)
            vm = VecMachine()
            q = runtime.encode_query(values, model, vm)
            run = runtime.infer(model, q, runtime.PartyConfig(), vm)
            got = vm.decrypt(run.cipher)
            assert (got == runtime.oracle_bitvector(forest, values, p, 0)).all()


def test_modes_agree_and_plaintext_is_cheaper():
    rng = random.Random(42)
    forest = gen.random_forest(rng, p=8)
    props = compute_props(forest)
    while props.b < 1:
        forest = gen.random_forest(rng, p=8)
        props = compute_props(forest)
    model = compile_forest(forest, p=8)
    values = gen.random_query(rng, props.n_features, 8)
    outs = {}
    counts = {}
    for mode in runtime.MODES:
        vm = VecMachine()
        q = runtime.encode_query(values, model, vm)
        run = runtime.infer(model, q, runtime.PartyConfig(mode=mode), vm)
        outs[mode] = vm.decrypt(run.cipher)
        counts[mode] = vm.ledger.counts["mult_ct_ct"]
    assert (outs["encrypted"] == outs["plaintext"]).all()
    assert counts["plaintext"] < counts["encrypted"]


def test_fractional_thresholds_and_features():
    text = "labels LO HI\nbranch 0 1.25 leaf 0 leaf 1\n"
    forest = parse_forest(text)
    model = compile_forest(forest, p=5, frac_bits=2)
    # Threshold 1.25 quantizes to 5/4; features land on the same grid, so
    # 1.3 (5.2 -> 5 units) stays LO while 1.375 (5.5 -> 6, half-up) goes HI.
    for raw, expect in ((Decimal("1.2"), "LO"), (Decimal("1.3"), "LO"),
                        (Decimal("1.25"), "LO"), (Decimal("1.375"), "HI"),
                        (Decimal("1.4"), "HI")):
        vm = VecMachine()
        q = runtime.encode_query({0: raw}, model, vm)
        run = runtime.infer(model, q, runtime.PartyConfig(), vm)
        result = runtime.decode(vm.decrypt(run.cipher), model)
        assert result.per_tree_labels == (expect,)
        assert runtime.traverse_oracle(forest, {0: raw}, 5, 2) == \
            list(result.per_tree_leaves)


def test_layout_mismatches_are_rejected():
    forest = gen.demo_forest()
    model = compile_forest(forest, p=4)
    vm = VecMachine()
    wrong_k = runtime.encode_features({0: 0, 1: 5}, n_features=2, p=4,
                                      frac_bits=0, k_declared=4, vm=vm)
    with pytest.raises(runtime.LayoutError):
        runtime.infer(model, wrong_k, runtime.PartyConfig(), vm)
    wrong_p = runtime.encode_features({0: 0, 1: 5}, n_features=2, p=8,
                                      frac_bits=0, k_declared=3, vm=vm)
    with pytest.raises(runtime.LayoutError):
        runtime.infer(model, wrong_p, runtime.PartyConfig(), vm)
    good = runtime.encode_query({0: 0, 1: 5}, model, vm)
    with pytest.raises(runtime.LayoutError):
        runtime.infer(model, good, runtime.PartyConfig(k_declared=9), vm)


def test_depth_budget_respected():
    model = compile_forest(gen.demo_forest(), p=8)
    vm = VecMachine(depth_budget=1)
    q = runtime.encode_query({0: 0, 1: 5}, model, vm)
    with pytest.raises(DepthBudgetExceeded):
        runtime.infer(model, q, runtime.PartyConfig(), vm)


def test_decode_two_tree_bitvector():
    text = ("labels A B\n"
            "branch 0 1 leaf 0 branch 0 2 leaf 1 leaf 0\n"
            "branch 0 3 leaf 1 leaf 0\n")
    model = compile_forest(parse_forest(text), p=4)
    result = runtime.decode([0, 1, 0, 1, 0], model)
    assert result.per_tree_leaves == (1, 3)
    assert result.per_tree_labels == ("B", "B")
    assert result.plurality == "B"


def test_decode_plurality_and_tie_break():
    text = ("labels A B C\n"
            "leaf 0\nleaf 0\nleaf 1\n")
    model = compile_forest(parse_forest(text), p=4)
    assert runtime.decode([1, 1, 1], model).plurality == "A"

    tie = ("labels B A\n"
           "leaf 0\nleaf 1\n")
    model = compile_forest(parse_forest(tie), p=4)
    # One vote each: the lower label index wins, independent of name order.
    assert runtime.decode([1, 1], model).plurality == "B"


def test_decode_rejects_malformed_vectors():
    model = compile_forest(gen.demo_forest(), p=4)
    with pytest.raises(runtime.MalformedResult):
        runtime.decode([0, 0, 0, 0, 0, 0], model)
    with pytest.raises(runtime.MalformedResult):
        runtime.decode([1, 1, 0, 0, 0, 0], model)
    with pytest.raises(runtime.MalformedResult):
        runtime.decode([1, 0, 0], model)


def test_query_text_round_trip():
    text = "feature 0 1.5\nfeature 1 7\n"
    values = runtime.parse_query_block(text)
    assert values == {0: Decimal("1.5"), 1: Decimal("7")}
    multi = "feature 0 1\n\nfeature 0 2\n\n\nfeature 0 3\n"
    blocks = runtime.parse_queries(multi)
    assert [b[0] for b in blocks] == [Decimal(1), Decimal(2), Decimal(3)]
    with pytest.raises(runtime.QueryError):
        runtime.parse_query_block("feature x 1\n")
    with pytest.raises(runtime.QueryError):
        runtime.parse_queries("\n\n")


def test_format_result_layout():
    model = compile_forest(gen.demo_forest(), p=4)
    vm = VecMachine()
    q = runtime.encode_query({0: 0, 1: 5}, model, vm)
    run = runtime.infer(model, q, runtime.PartyConfig(), vm)
    text = runtime.format_result(runtime.decode(vm.decrypt(run.cipher), model),
                                 run.ledger)
    assert "bitvector 000010" in text
    assert "tree 0 leaf 4 label L4" in text
    assert "plurality L4" in text
    assert "ledger rotate 21" in text  # q + d*b = 6 + 15
