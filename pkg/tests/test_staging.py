"""Staged artifacts: threshold planes, reshuffle, level matrices, manifest."""

import random
from decimal import Decimal

import numpy as np
import pytest

from copse import gen
from copse.forest import compute_props, parse_forest
from copse.staging import (
    BitPlanes,
    DiagMatrix,
    QuantizationOverflow,
    StagingError,
    build_levels,
    build_reshuffle,
    build_threshold_vector,
    compile_forest,
    level_selection,
    quantize,
    read_manifest,
    threshold_slot_layout,
    write_manifest,
)


def test_quantize_round_half_up():
    assert quantize(Decimal("2.5"), 4, 0) == 3
    assert quantize(Decimal("1.25"), 4, 2) == 5
    assert quantize(Decimal("0.124"), 4, 2) == 0
    assert quantize(15, 4, 0) == 15


def test_quantize_overflow_is_reported():
    with pytest.raises(QuantizationOverflow):
        quantize(16, 4, 0)
    with pytest.raises(QuantizationOverflow):
        quantize(Decimal("-0.5"), 4, 0)
    with pytest.raises(QuantizationOverflow):
        quantize(Decimal("15.5"), 4, 0)  # rounds up past the top


def test_bit_planes_msb_first():
    planes = BitPlanes.from_ints([5], 4)
    assert [int(p[0]) for p in planes.planes] == [0, 1, 0, 1]
    assert planes.to_ints().tolist() == [5]


def test_bit_planes_round_trip():
    rng = random.Random(5)
    for p in (1, 3, 8):
        vals = [rng.randrange(1 << p) for _ in range(17)]
        assert BitPlanes.from_ints(vals, p).to_ints().tolist() == vals


def test_demo_threshold_layout():
    props = compute_props(gen.demo_forest())
    # Feature-grouped slots: x thresholds (branches 1, 3), one sentinel,
    # then y thresholds (branches 0, 2, 4).
    assert threshold_slot_layout(props, 3) == [1, 3, None, 0, 2, 4]
    planes = build_threshold_vector(props, p=4, frac_bits=0)
    assert planes.to_ints().tolist() == [3, 8, 0, 2, 1, 6]


def test_no_padding_when_multiplicities_equal():
    text = ("labels A B\n"
            "branch 0 1 leaf 0 branch 1 2 leaf 1 leaf 0\n"
            "branch 1 3 branch 0 4 leaf 0 leaf 1 leaf 1\n")
    props = compute_props(parse_forest(text))
    assert props.kappa == (2, 2)
    assert props.q == props.b
    layout = threshold_slot_layout(props, props.max_multiplicity)
    assert None not in layout


def test_demo_reshuffle_rows():
    props = compute_props(gen.demo_forest())
    dense = build_reshuffle(props).to_dense()
    assert dense.shape == (5, 6)
    assert dense[0].tolist() == [0, 0, 0, 1, 0, 0]  # branch 0 reads slot 3
    assert dense.sum(axis=1).tolist() == [1] * 5    # one source per branch
    assert dense.sum(axis=0).max() == 1             # at most one use per slot
    # Zero columns are exactly the sentinel slots.
    layout = threshold_slot_layout(props, 3)
    zero_cols = [i for i in range(6) if dense[:, i].sum() == 0]
    assert zero_cols == [i for i, b in enumerate(layout) if b is None]


def test_reshuffle_is_permutation_when_no_padding():
    text = "labels A B\nbranch 0 1 leaf 0 branch 1 2 leaf 1 leaf 0\n"
    props = compute_props(parse_forest(text))
    dense = build_reshuffle(props).to_dense()
    assert dense.shape == (2, 2)
    assert (dense.sum(axis=0) == 1).all() and (dense.sum(axis=1) == 1).all()


def test_reshuffle_recovers_preorder_decisions():
    # Identity check: scattering preorder decisions into the padded layout
    # (with arbitrary junk in the sentinel slots) and multiplying by the
    # reshuffle matrix must return the original preorder vector.
    rng = random.Random(21)
    for _ in range(40):
        forest = gen.random_forest(rng)
        props = compute_props(forest)
        if props.b == 0:
            continue
        kd = props.max_multiplicity + rng.choice((0, 1, 3))
        reshuf = build_reshuffle(props, kd).to_dense()
        layout = threshold_slot_layout(props, kd)
        decisions = np.array([rng.randint(0, 1) for _ in range(props.b)],
                             dtype=np.uint8)
        padded = np.array([rng.randint(0, 1) for _ in layout], dtype=np.uint8)
        for slot, branch in enumerate(layout):
            if branch is not None:
                padded[slot] = decisions[branch]
        assert ((reshuf @ padded) % 2 == decisions).all()


def test_demo_level_masks():
    props = compute_props(gen.demo_forest())
    mats, masks = build_levels(props)
    assert len(mats) == 3
    assert masks[0].tolist() == [1, 0, 1, 0, 1, 0]
    assert masks[1].tolist() == [1, 1, 0, 0, 1, 0]
    assert masks[2].tolist() == [1, 1, 1, 1, 0, 0]


def test_demo_level_two_reuses_shallow_branch():
    # Leaves 4 and 5 have no branch at level 2 above them, so the level-1
    # branch (preorder index 4) is selected again at level 2.
    props = compute_props(gen.demo_forest())
    selections = level_selection(props)
    assert selections[0][4] == 4 and selections[0][5] == 4
    assert selections[1][4] == 4 and selections[1][5] == 4
    assert selections[2][4] == 0 and selections[2][5] == 0


def test_depth_one_forest_levels():
    props = compute_props(parse_forest("labels A B\nbranch 0 1 leaf 0 leaf 1\n"))
    mats, masks = build_levels(props)
    assert len(mats) == 1
    assert mats[0].to_dense().tolist() == [[1], [1]]
    assert masks[0].tolist() == [1, 0]


def test_level_matrix_invariants():
    rng = random.Random(22)
    for _ in range(40):
        forest = gen.random_forest(rng)
        props = compute_props(forest)
        mats, _ = build_levels(props)
        covered = set()
        for mat in mats:
            dense = mat.to_dense()
            # At most one selection per leaf; exactly zero for leaves with
            # no ancestor at or below the level (e.g. single-leaf trees).
            sums = dense.sum(axis=1)
            assert (sums <= 1).all()
            for leaf, path in enumerate(props.leaf_paths):
                if not path:
                    assert sums[leaf] == 0
            for branch in range(props.b):
                col = dense[:, branch].sum()
                assert col in (0, props.width[branch])
                if col:
                    covered.add(branch)
        # Every branch must be selected in at least one level.
        assert covered == set(range(props.b))


def test_level_feasibility_matches_decision_routing():
    # Brute force: for random decision assignments, the masked level vector
    # flags leaf i iff the decision at its selected branch routes toward it,
    # and the AND over levels is exactly the decision-driven traversal.
    rng = random.Random(23)
    for _ in range(30):
        forest = gen.random_forest(rng, max_branches=24)
        props = compute_props(forest)
        if props.b == 0:
            continue
        mats, masks = build_levels(props)
        selections = level_selection(props)
        went_right = [dict(path) for path in props.leaf_paths]
        for _ in range(5):
            dec = np.array([rng.randint(0, 1) for _ in range(props.b)],
                           dtype=np.uint8)
            prod = np.ones(len(props.leaf_paths), dtype=np.uint8)
            for mat, mask, picks in zip(mats, masks, selections):
                vec = ((mat.to_dense() @ dec) % 2 ^ mask).astype(np.uint8)
                for leaf, branch in enumerate(picks):
                    if branch is None:
                        assert vec[leaf] == 1
                    else:
                        toward = dec[branch] == went_right[leaf][branch]
                        assert vec[leaf] == int(toward)
                prod &= vec
            expected = np.zeros_like(prod)
            for start, end in forest.tree_leaf_spans:
                leaf = _route(forest, props, dec, start)
                expected[leaf] = 1
            assert (prod == expected).all()


def _route(forest, props, dec, span_start):
    from copse.forest import Leaf

    tree = None
    for root, (start, _) in zip(forest.trees, forest.tree_leaf_spans):
        if start == span_start:
            tree = root
    node = tree
    while not isinstance(node, Leaf):
        node = node.right if dec[forest.branch_index[node]] else node.left
    return forest.leaf_index[node]


def test_diag_matrix_round_trip():
    rng = random.Random(24)
    for _ in range(200):
        m = rng.randint(1, 12)
        n = rng.randint(1, 12)
        dense = np.array([[rng.randint(0, 1) for _ in range(n)] for _ in range(m)],
                         dtype=np.uint8)
        mat = DiagMatrix.from_dense(dense)
        assert len(mat.diagonals) == n
        assert all(d.shape == (m,) for d in mat.diagonals)
        assert (mat.to_dense() == dense).all()


def test_diag_matrix_hand_example():
    dense = np.array([[1, 0, 1], [0, 1, 1]], dtype=np.uint8)  # [[a,b,c],[d,e,f]]
    mat = DiagMatrix.from_dense(dense)
    a, b, c, d, e, f = 1, 0, 1, 0, 1, 1
    assert mat.diagonals[0].tolist() == [a, e]
    assert mat.diagonals[1].tolist() == [b, f]
    assert mat.diagonals[2].tolist() == [c, d]


def test_staging_rejects_low_multiplicity_bound():
    props = compute_props(gen.demo_forest())
    with pytest.raises(StagingError):
        build_reshuffle(props, 2)
    with pytest.raises(StagingError):
        compile_forest(gen.demo_forest(), p=4, k_declared=2)


def test_threshold_overflow_propagates_through_compile():
    forest = parse_forest("labels A B\nbranch 0 99 leaf 0 leaf 1\n")
    with pytest.raises(QuantizationOverflow):
        compile_forest(forest, p=4)


def test_compile_is_deterministic():
    a = write_manifest(compile_forest(gen.demo_forest(), p=4))
    b = write_manifest(compile_forest(gen.demo_forest(), p=4))
    assert a == b


def test_manifest_round_trip():
    rng = random.Random(25)
    for _ in range(10):
        forest = gen.random_forest(rng)
        model = compile_forest(forest, p=8)
        loaded = read_manifest(write_manifest(model))
        assert loaded.meta == model.meta
        assert loaded.labels == model.labels
        assert loaded.codebook == model.codebook
        assert loaded.tree_leaf_spans == model.tree_leaf_spans
        assert (loaded.thresholds.to_ints() == model.thresholds.to_ints()).all()
        assert (loaded.reshuf.to_dense() == model.reshuf.to_dense()).all()
        for lm, mm in zip(loaded.level_mats, model.level_mats):
            assert (lm.to_dense() == mm.to_dense()).all()
        for lmask, mmask in zip(loaded.level_masks, model.level_masks):
            assert (lmask == mmask).all()


def test_manifest_rejects_garbage():
    from copse.staging import ManifestError

    with pytest.raises(ManifestError):
        read_manifest("not a manifest\n")
    good = write_manifest(compile_forest(gen.demo_forest(), p=4))
    with pytest.raises(ManifestError):
        read_manifest(good.replace("copse-manifest 1", "copse-manifest 9"))


def test_leaf_only_manifest_round_trip_and_inference():
    from copse import runtime
    from copse.vm import VecMachine

    forest = parse_forest("labels A B\nleaf 1\nleaf 0\n")
    model = read_manifest(write_manifest(compile_forest(forest, p=8)))
    assert model.meta.b == 0 and model.meta.q == 0 and model.meta.d == 0
    vm = VecMachine()
    query = runtime.encode_query({}, model, vm)
    run = runtime.infer(model, query, runtime.PartyConfig(), vm)
    result = runtime.decode(vm.decrypt(run.cipher), model)
    assert result.per_tree_labels == ("B", "A")
