import numpy as np
import pytest

from tacsim.geometry import build_gel_pad, top_face_nodes
from tacsim.tactile import (
    COLS,
    ROWS,
    MarkerField,
    closest_frame_match,
    field_mse,
    fields_to_csv,
    init_marker_mapping,
    knn_weights,
    marker_displacements,
    marker_lattice,
    read_fields_csv,
    write_fields_csv,
)


def test_knn_coincident_node():
    nodes = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0.0]])
    idx, w = knn_weights(np.array([[1.0, 0, 0]]), nodes, 1)
    assert idx[0, 0] == 1 and w[0, 0] == 1.0 and w.shape[1] == 1


def test_knn_equidistant_pair():
    nodes = np.array([[-1, 0, 0], [1, 0, 0], [0, 5, 0.0]])
    idx, w = knn_weights(np.array([[0.0, 0, 0]]), nodes, 2)
    assert set(idx[0, :2]) == {0, 1}
    assert np.allclose(w[0, :2], [0.5, 0.5])


def test_knn_ties_kept():
    # four nodes at equal distance, k = 2: all four share the weight
    nodes = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0.0], [3, 3, 0]])
    idx, w = knn_weights(np.zeros((1, 3)), nodes, 2)
    assert np.allclose(np.sort(w[0])[-4:], 0.25)


def test_knn_errors():
    with pytest.raises(ValueError):
        knn_weights(np.zeros((1, 3)), np.zeros((3, 3)), 0)
    with pytest.raises(ValueError):
        knn_weights(np.zeros((1, 3)), np.zeros((2, 3)), 3)


def test_mapping_weights_normalized(small_pad):
    mp = init_marker_mapping(small_pad)
    assert mp.marker_rest.shape == (ROWS, COLS, 3)
    assert np.abs(mp.weights.sum(axis=1) - 1).max() < 1e-12
    assert np.all(np.isin(mp.neighbors, top_face_nodes(small_pad)))


def test_lattice_layout():
    m = marker_lattice((0, 0), (10, 8), 0.0)
    assert m.shape == (7, 9, 3)
    assert np.allclose(m[0, :, 0], np.arange(1, 10))  # columns along x
    assert np.allclose(m[:, 0, 1], np.arange(1, 8))  # rows along y


def test_rest_gives_zero_field(small_pad):
    mp = init_marker_mapping(small_pad)
    f = marker_displacements(mp, small_pad.vertices, small_pad.vertices)
    assert not f.u.any()


def test_uniform_translation(small_pad):
    mp = init_marker_mapping(small_pad)
    t = np.array([1e-4, -2e-4, 3e-4])
    f = marker_displacements(mp, small_pad.vertices + t, small_pad.vertices)
    assert np.allclose(f.u, t[:2], atol=1e-18)
    assert np.allclose(f.normal, t[2])


def test_field_validation():
    with pytest.raises(ValueError):
        MarkerField(np.zeros((7, 8, 2)))
    u = np.zeros((7, 9, 2))
    u[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        MarkerField(u)


def _rand_fields(rng, n):
    return [MarkerField(rng.normal(size=(7, 9, 2)), i) for i in range(n)]


def test_field_mse_examples(rng):
    a = _rand_fields(rng, 3)
    assert field_mse(a, a) == 0.0
    u = np.zeros((7, 9, 2))
    v = u.copy()
    v[3, 4] = [0.3, 0.4]
    assert field_mse([MarkerField(u)], [MarkerField(v * 1.0)]) == pytest.approx(0.25)
    b = _rand_fields(rng, 3)
    base = field_mse(a, b)
    a2 = [MarkerField(2 * f.u) for f in a]
    b2 = [MarkerField(2 * f.u) for f in b]
    assert field_mse(a2, b2) == pytest.approx(4 * base)
    # lists of sequences average over all frames
    assert field_mse([a, b], [b, a]) == pytest.approx(base)
    with pytest.raises(ValueError):
        field_mse(a, b[:2])


def test_closest_frame_match(rng):
    seq = _rand_fields(rng, 8)
    pairing, mse = closest_frame_match(seq, seq)
    assert np.array_equal(pairing, np.arange(8)) and mse == 0.0
    real = seq[:6]
    sim = _rand_fields(rng, 2) + seq[:6]  # sim lags by two frames
    pairing, mse = closest_frame_match(sim, real)
    assert np.array_equal(pairing, np.arange(6) + 2) and mse == 0.0
    one = [MarkerField(rng.normal(size=(7, 9, 2)))]
    pairing, _ = closest_frame_match(seq, one)
    brute = np.argmin([np.sum((f.u - one[0].u) ** 2) for f in seq])
    assert pairing[0] == brute


def test_csv_roundtrip(tmp_path, rng):
    seq = _rand_fields(rng, 3)
    p = tmp_path / "f.csv"
    write_fields_csv(p, seq)
    back = read_fields_csv(p)
    assert len(back) == 3
    for a, b in zip(seq, back):
        assert np.allclose(a.u, b.u, rtol=1e-8)
    text = fields_to_csv(seq, "mpm")
    assert text.splitlines()[0] == "model,frame,row,col,ux,uy"
    assert len(text.splitlines()) == 1 + 3 * 63
