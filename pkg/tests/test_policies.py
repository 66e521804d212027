"""Folded inference, parameter counts, validation, and text serialization."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from unfoldrl.errors import FormatError, ShapeError, ValidationError
from unfoldrl.policies import (
    CLASSIFY,
    REGRESS,
    AxisTree,
    Leaf,
    LinearPolicy,
    ObliqueSplit,
    ObliqueTree,
    ReluMlp,
    Split,
    dumps,
    load,
    loads,
    param_count,
    predict,
    save,
)
from unfoldrl.rng import named_rng

# the worked 2-feature, 3-action linear policy used throughout the docs
DOC_LINEAR = LinearPolicy(
    weights=np.array([[0.969, -30.830], [-0.205, 22.592], [-0.763, 8.237]]),
    bias=np.array([0.575, -0.63, 0.054]),
)


def small_mlp(seed=0, task=CLASSIFY, sizes=(4, 3, 2)):
    rng = named_rng("test-policies", seed)
    layers = []
    prev = sizes[0]
    for width in sizes[1:]:
        layers.append((rng.normal(size=(width, prev)), rng.normal(size=width)))
        prev = width
    return ReluMlp(layers, task)


def small_trees():
    axis = AxisTree(
        [
            Split(0, 0.0, 1, 2),
            Split(1, -1.5, 3, 4),
            Leaf(2),
            Leaf(0),
            Leaf(1),
        ]
    )
    oblique = ObliqueTree(
        [
            ObliqueSplit((1.0, -2.0, 0.5, 0.0), 0.25, 1, 2),
            Leaf(0),
            ObliqueSplit((0.0, 0.0, 1.0, 1.0), -0.75, 3, 4),
            Leaf(1),
            Leaf(2),
        ]
    )
    return axis, oblique


def test_doc_linear_scores():
    scores = LinearPolicy(DOC_LINEAR.weights, DOC_LINEAR.bias, REGRESS).predict([0.0, 0.0])
    assert np.array_equal(scores, [0.575, -0.63, 0.054])
    assert DOC_LINEAR.predict([0.0, 0.0]) == 0
    # second action wins once the second feature is large and positive
    assert DOC_LINEAR.predict([0.0, 1.0]) == 1


def test_classify_tie_breaks_to_lowest_index():
    p = LinearPolicy(np.zeros((3, 2)), np.array([1.0, 1.0, 0.5]))
    assert p.predict([5.0, -3.0]) == 0
    q = LinearPolicy(np.zeros((4, 1)), np.array([0.0, 2.0, 2.0, 2.0]))
    assert q.predict([9.0]) == 1


@given(st.lists(st.integers(min_value=-3, max_value=3), min_size=2, max_size=6))
def test_tie_break_matches_first_max(scores):
    p = LinearPolicy(np.zeros((len(scores), 1)), np.array(scores, dtype=float))
    assert p.predict([0.0]) == scores.index(max(scores))


def test_param_counts():
    assert param_count(DOC_LINEAR) == 9
    axis, oblique = small_trees()
    assert param_count(axis) == 5 and param_count(oblique) == 5
    rng = named_rng("test-policies", "counts")
    mlp = ReluMlp(
        [
            (rng.normal(size=(4, 2)), np.zeros(4)),
            (rng.normal(size=(4, 4)), np.zeros(4)),
            (rng.normal(size=(3, 4)), np.zeros(3)),
        ]
    )
    assert param_count(mlp) == (4 * 2 + 4) + (4 * 4 + 4) + (3 * 4 + 3) == 47
    assert mlp.hidden_sizes == (4, 4)
    assert mlp.state_dim == 2


def test_mlp_matches_sequential_oracle():
    # oracle: plain python loops with strict left-to-right accumulation
    def oracle(layers, x):
        x = list(map(float, x))
        for li, (w, b) in enumerate(layers):
            out = []
            for i in range(w.shape[0]):
                acc = w[i, 0] * x[0]
                for j in range(1, w.shape[1]):
                    acc = acc + w[i, j] * x[j]
                acc = acc + b[i]
                if li < len(layers) - 1 and acc <= 0.0:
                    acc = 0.0
                out.append(acc)
            x = out
        return np.array(x)

    rng = named_rng("test-policies", "mlp-oracle")
    for trial in range(100):
        mlp = small_mlp(seed=trial, task=REGRESS)
        x = rng.normal(size=4)
        got = mlp.predict(x)
        assert np.array_equal(got, oracle(mlp.layers, x)), trial
        assert np.allclose(got, mlp.layers[-1][0] @ np.maximum(mlp.layers[0][0] @ x + mlp.layers[0][1], 0.0) + mlp.layers[-1][1], rtol=1e-9) or len(mlp.layers) != 2


def test_classify_mlp_returns_int():
    mlp = small_mlp(seed=1)
    out = mlp.predict(np.zeros(4))
    assert isinstance(out, int) and 0 <= out < 2


def test_shape_errors():
    with pytest.raises(ShapeError):
        DOC_LINEAR.predict([1.0, 2.0, 3.0])
    with pytest.raises(ShapeError):
        small_mlp().predict(np.zeros(3))
    axis, oblique = small_trees()
    with pytest.raises(ShapeError):
        axis.predict([-0.5])  # the left subtree splits on feature 1
    with pytest.raises(ShapeError):
        oblique.predict([0.5, 0.5])


def test_single_leaf_tree():
    t = AxisTree([Leaf(2)])
    assert t.predict([0.0, 0.0]) == 2
    assert t.predict([99.0]) == 2
    assert t.depth() == 0 and t.leaf_count() == 1


def test_regress_tree_leaf_values():
    t = AxisTree([Split(0, 0.0, 1, 2), Leaf((1.5, -2.5)), Leaf((0.0, 3.0))], task=REGRESS)
    assert np.array_equal(t.predict([-1.0]), [1.5, -2.5])
    assert np.array_equal(t.predict([1.0]), [0.0, 3.0])
    # boundary goes left (<=)
    assert np.array_equal(t.predict([0.0]), [1.5, -2.5])


def test_validation_errors():
    with pytest.raises(ValidationError):
        LinearPolicy(np.zeros((3, 2)), np.zeros(2))
    with pytest.raises(ValidationError):
        AxisTree([])
    with pytest.raises(ValidationError):
        AxisTree([Split(0, 0.0, 0, 1), Leaf(0)])  # left edge loops to the root
    with pytest.raises(ValidationError):
        AxisTree([Split(0, 0.0, 1, 1), Leaf(0)])  # node reached twice
    with pytest.raises(ValidationError):
        AxisTree([Split(0, 0.0, 1, 5), Leaf(0)])  # child out of range
    with pytest.raises(ValidationError):
        AxisTree([Leaf(0), Leaf(1)])  # unreachable node
    with pytest.raises(ValidationError):
        ReluMlp([])
    with pytest.raises(ValidationError):
        ReluMlp([(np.zeros((3, 2)), np.zeros(3)), (np.zeros((2, 4)), np.zeros(2))])
    with pytest.raises(ValidationError):
        ReluMlp([(np.zeros((3, 2)), np.zeros(2))])


def test_round_trip_all_classes(tmp_path):
    axis, oblique = small_trees()
    policies = [
        DOC_LINEAR,
        axis,
        oblique,
        small_mlp(seed=7),
        small_mlp(seed=8, task=REGRESS),
        AxisTree([Split(1, 0.3, 1, 2), Leaf((0.1,)), Leaf((-0.2,))], task=REGRESS),
    ]
    rng = named_rng("test-policies", "round-trip")
    for i, p in enumerate(policies):
        text = dumps(p)
        again = loads(text)
        assert dumps(again) == text, type(p)
        if isinstance(p, (AxisTree, ObliqueTree, ReluMlp)):
            assert again == p
        path = tmp_path / f"p{i}.txt"
        save(p, path)
        from_disk = load(path)
        assert dumps(from_disk) == text
        dim = 2 if not isinstance(p, ReluMlp) else p.state_dim
        if isinstance(p, (AxisTree, ObliqueTree)):
            dim = 2 if isinstance(p, AxisTree) else 4
        for _ in range(10):
            s = rng.normal(size=dim)
            a, b = predict(p, s), predict(from_disk, s)
            if isinstance(a, np.ndarray):
                assert np.array_equal(a, b)
            else:
                assert a == b


def test_serialized_text_is_stable():
    golden = (
        "unfoldrl-policy v1\n"
        "class linear\n"
        "task classify\n"
        "shape 1 1\n"
        "row 0.5\n"
        "bias 0.25\n"
        "end\n"
    )
    assert dumps(LinearPolicy(np.array([[0.5]]), np.array([0.25]))) == golden
    assert loads(golden).predict([0.0]) == 0


def test_format_errors():
    good = dumps(DOC_LINEAR)
    with pytest.raises(FormatError):
        loads(good.replace("unfoldrl-policy v1", "something else"))
    with pytest.raises(FormatError):
        loads("\n".join(good.splitlines()[:-2]))  # truncated
    with pytest.raises(FormatError):
        loads(good.replace("task classify", "task dance"))
    with pytest.raises(FormatError):
        loads(good.replace("row 0.969", "row spam"))
    with pytest.raises(FormatError):
        loads(good.replace("end", ""))
    axis, _ = small_trees()
    with pytest.raises(FormatError):
        loads(dumps(axis).replace("split 0", "osplit 0"))


def test_floats_survive_round_trip_bit_exact():
    rng = named_rng("test-policies", "bits")
    w = rng.normal(size=(2, 3)) * np.array([1e-17, 1.0, 1e14])
    p = LinearPolicy(w, rng.normal(size=2), REGRESS)
    q = loads(dumps(p))
    assert np.array_equal(p.weights, q.weights)
    assert np.array_equal(p.bias, q.bias)
