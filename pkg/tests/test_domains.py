import numpy as np
import pytest

from certdg.domains import (CORRUPTIONS, Domain, DomainDataset, apply_corruption, load_csv,
                            make_base, make_rotated_task, save_csv, save_domain_csvs, split)
from certdg.errors import InvalidArgument, ParseError
from certdg.transport import EmpiricalDistribution, sq_dists, w2_class_conditional


def w2(a: Domain, b: Domain) -> float:
    return w2_class_conditional(EmpiricalDistribution(a.X, a.y), EmpiricalDistribution(b.X, b.y))


def test_angle_zero_is_base():
    base = make_base(50, rng=3)
    d = make_rotated_task(50, [0], seed=3).domains["rot0"]
    np.testing.assert_array_equal(d.X, base.X)
    np.testing.assert_array_equal(d.y, base.y)


def test_full_turn():
    ds = make_rotated_task(50, [0, 360], seed=0)
    np.testing.assert_allclose(ds.domains["rot360"].X, ds.domains["rot0"].X, atol=1e-9)
    assert ds.meta["rot360"]["angle"] == 360.0


@pytest.mark.parametrize("kind", ["blobs", "arcs"])
def test_rotation_is_isometry(kind):
    ds = make_rotated_task(40, [0, 33, 170], seed=1, kind=kind)
    D0 = sq_dists(ds.domains["rot0"].X, ds.domains["rot0"].X)
    for name in ("rot33", "rot170"):
        X = ds.domains[name].X
        np.testing.assert_allclose(sq_dists(X, X), D0, atol=1e-9)
        np.testing.assert_array_equal(ds.domains[name].y, ds.domains["rot0"].y)


def test_w2_grows_with_angle_gap():
    ds = make_rotated_task(60, [0, 15, 30, 45, 60, 75], seed=0)
    ref = ds.domains["rot0"]
    dists = [w2(ref, ds.domains[f"rot{a}"]) for a in (15, 30, 45, 60, 75)]
    assert all(b > a for a, b in zip(dists[:-1], dists[1:]))


def test_invalid_generation():
    with pytest.raises(InvalidArgument):
        make_rotated_task(1, [0])
    with pytest.raises(InvalidArgument):
        make_rotated_task(10, [float("nan")])
    with pytest.raises(InvalidArgument):
        make_base(10, kind="moons")


def test_gauss_noise_severity_monotone():
    dom = make_rotated_task(200, [0], seed=0).domains["rot0"]
    dists = [w2(dom, apply_corruption(dom, "gauss_noise", s, seed=7)) for s in range(1, 6)]
    assert all(b >= a for a, b in zip(dists[:-1], dists[1:]))


@pytest.mark.parametrize("kind", CORRUPTIONS)
def test_every_family_monotone_in_severity(kind):
    dom = make_rotated_task(100, [0], seed=4).domains["rot0"]
    dists = [w2(dom, apply_corruption(dom, kind, s, seed=11)) for s in range(1, 6)]
    assert all(b >= a for a, b in zip(dists[:-1], dists[1:]))


def test_shift_translates_uniformly():
    dom = make_rotated_task(30, [0], seed=0).domains["rot0"]
    for s in range(1, 6):
        D = apply_corruption(dom, "shift", s, seed=2).X - dom.X
        np.testing.assert_allclose(D, np.broadcast_to(D[0], D.shape), atol=1e-12)
        assert np.linalg.norm(D[0]) == pytest.approx(0.1 * s)


@pytest.mark.parametrize("kind", CORRUPTIONS)
def test_corruption_keeps_labels_and_is_seeded(kind):
    dom = make_rotated_task(30, [0], seed=0).domains["rot0"]
    a = apply_corruption(dom, kind, 3, seed=5)
    b = apply_corruption(dom, kind, 3, seed=5)
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.y, dom.y)
    assert len(a) == len(dom)


def test_corruption_errors():
    dom = make_rotated_task(10, [0]).domains["rot0"]
    with pytest.raises(InvalidArgument):
        apply_corruption(dom, "fog", 1)
    for s in (0, 6, 2.5):
        with pytest.raises(InvalidArgument):
            apply_corruption(dom, "shift", s)


def test_split_sizes_and_union():
    ds = make_rotated_task(100, [0, 15], seed=0)
    tr, te = split(ds, 0.9, seed=1)
    for name, dom in ds.domains.items():
        assert len(tr.domains[name]) == 90 and len(te.domains[name]) == 10
        joined = np.concatenate([tr.domains[name].X, te.domains[name].X])
        key = lambda X: sorted(map(tuple, X))
        assert key(joined) == key(dom.X)
        for c in (0, 1):
            assert abs(np.sum(tr.domains[name].y == c) - 0.9 * np.sum(dom.y == c)) <= 1


def test_split_errors():
    ds = make_rotated_task(10, [0])
    with pytest.raises(InvalidArgument):
        split(ds, 1.0)
    tiny = DomainDataset({"a": Domain([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]], [0, 0, 1])})
    with pytest.raises(InvalidArgument):
        split(tiny, 0.5)


def test_dataset_dimension_mismatch():
    with pytest.raises(InvalidArgument):
        DomainDataset({"a": Domain(np.zeros((2, 2)), [0, 1]), "b": Domain(np.zeros((2, 3)), [0, 1])})


def test_csv_round_trip(tmp_path):
    ds = make_rotated_task(25, [0, 17.5], seed=9, kind="arcs")
    p = tmp_path / "d.csv"
    save_csv(ds, p)
    back = load_csv(p)
    assert list(back.domains) == list(ds.domains)
    for name in ds.domains:
        np.testing.assert_array_equal(back.domains[name].X, ds.domains[name].X)
        np.testing.assert_array_equal(back.domains[name].y, ds.domains[name].y)
    paths = save_domain_csvs(ds, tmp_path)
    assert [q.name for q in paths] == ["rot0.csv", "rot17.5.csv"]


@pytest.mark.parametrize("text,line", [
    ("", 1),
    ("domain,label,x0,x1\na,0,1.0,2.0\na,1,1.0\n", 3),
    ("domain,label,x0\na,zero,1.0\n", 2),
    ("domain,label,x0\na,0,nan\n", 2),
    ("dom,label,x0\n", 1),
    ("domain,label,x0\n", 2),
])
def test_csv_parse_errors(tmp_path, text, line):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(ParseError) as exc:
        load_csv(p)
    assert exc.value.line == line
