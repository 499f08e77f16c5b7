import math

import numpy as np
import pytest
from scipy.special import gamma

from fracocp.assembly import (
    LSHAPE_POLYGON, QuadratureSpec, assemble_coupling, assemble_load, assemble_mass, assemble_stiffness,
    dump_matrix, load_matrix, normalization_constant, omega_polygon, weight_omega_s,
)
from fracocp.mesh import GradingSpec, Mesh, build_disc_mesh, build_lshape_mesh

import oracles


@pytest.fixture(scope="module")
def disc4():
    return build_disc_mesh(GradingSpec(0.25, 1.0))


@pytest.fixture(scope="module")
def stiff4(disc4):
    return {s: assemble_stiffness(disc4, s) for s in (0.25, 0.5, 0.75)}


def test_single_dof_against_oracle():
    m = build_disc_mesh(GradingSpec(1.0, 1.0))
    assert m.n_dofs == 1
    A = assemble_stiffness(m, 0.5)
    ref, _ = oracles.oracle_stiffness(m, 0.5)
    assert A.entries[0, 0] == pytest.approx(ref[0, 0], rel=1e-5)


def test_disjoint_entry_against_oracle(disc4, stiff4):
    s = 0.5
    m = disc4
    A = stiff4[s].entries
    dof = m.dof_map
    supp = [set(np.flatnonzero((m.triangles == v).any(axis=1))) for v in range(m.n_vertices)]
    inner = np.flatnonzero(dof >= 0)
    d = np.linalg.norm(m.vertices[inner][:, None] - m.vertices[inner][None], axis=2)
    a, b = np.unravel_index(np.argmax(d), d.shape)
    i, j = inner[a], inner[b]
    ref = 0.0
    for t1 in supp[i]:
        for t2 in supp[j]:
            ids, I = oracles.disjoint_pair(m.vertices, tuple(m.triangles[t1]), tuple(m.triangles[t2]), s, n=20)
            ref += I[list(ids).index(i), list(ids).index(j)]
    ref *= normalization_constant(2, s)
    assert ref < 0
    assert A[dof[i], dof[j]] == pytest.approx(ref, rel=1e-3)


def test_small_mesh_against_oracle():
    m = build_disc_mesh(GradingSpec(0.5, 1.0))
    s = 0.4
    A = assemble_stiffness(m, s).entries
    ref, disjoint = oracles.oracle_stiffness(m, s)
    scale = np.abs(ref).max()
    assert np.max(np.abs(A - ref)) / scale < 1e-5
    mask = disjoint & (np.abs(ref) > 0)
    assert np.max(np.abs(A[mask] - ref[mask]) / np.abs(ref[mask])) < 1e-3


def test_symmetric_spd(stiff4):
    for s, A in stiff4.items():
        M = A.entries
        np.testing.assert_array_equal(M, M.T)
        assert np.all(np.diag(M) > 0)
        assert np.linalg.eigvalsh(M).min() > 0
        assert A.c_ns == normalization_constant(2, s)


def test_disjoint_offdiagonal_nonpositive(disc4, stiff4):
    m = disc4
    d = m.dof_map[m.triangles]
    n = m.n_dofs
    touch = np.zeros((n, n), dtype=bool)
    # supports touch when the two dofs lie on a common element or on two elements sharing a vertex
    elems_of = [np.flatnonzero((d == k).any(axis=1)) for k in range(n)]
    verts_of = [set(m.triangles[e].ravel()) for e in elems_of]
    for i in range(n):
        for j in range(n):
            touch[i, j] = bool(verts_of[i] & verts_of[j])
    for A in stiff4.values():
        assert np.all(A.entries[~touch] < 0)


@pytest.mark.parametrize("mesh_kind", ["disc", "lshape"])
def test_quadrature_convergence(mesh_kind, disc4, stiff4):
    m = disc4 if mesh_kind == "disc" else build_lshape_mesh(0.25)
    for s in (0.25, 0.5, 0.75):
        A = stiff4[s].entries if mesh_kind == "disc" else assemble_stiffness(m, s).entries
        B = assemble_stiffness(m, s, QuadratureSpec().raised(2)).entries
        assert np.max(np.abs(A - B) / np.abs(B)) < 1e-4


def test_near_field_factor_consistency(disc4, stiff4):
    A = stiff4[0.5].entries
    B = assemble_stiffness(disc4, 0.5, QuadratureSpec(near_field_factor=2.0)).entries
    assert np.max(np.abs(A - B) / np.abs(B)) < 1e-4


def test_pair_counts(disc4, stiff4):
    c = stiff4[0.5].pair_counts
    nt = disc4.n_triangles
    # identical pairs touch each element with a dof once
    assert c["identical"] <= nt
    assert sum(c.values()) <= nt * (nt + 1) // 2


def test_constant_energy_positive(stiff4):
    for A in stiff4.values():
        v = np.ones(A.n)
        assert A.energy(v) > 0


def test_invalid_inputs(disc4):
    with pytest.raises(ValueError):
        assemble_stiffness(disc4, 1.0)
    with pytest.raises(ValueError):
        assemble_stiffness(build_lshape_mesh(1.0), 0.5)
    with pytest.raises(MemoryError):
        assemble_stiffness(disc4, 0.5, max_dofs=5)
    with pytest.raises(ValueError):
        QuadratureSpec(order_singular=0)
    with pytest.raises(TypeError):
        assemble_stiffness(disc4, 0.5, quad={"order_singular": 5})


@pytest.mark.parametrize("s", [0.2, 0.5, 0.9])
def test_omega_disc_origin(s):
    assert weight_omega_s(np.zeros(2), "disc", s) == pytest.approx(math.pi / s, rel=1e-14)
    if s == 0.5:
        assert weight_omega_s(np.zeros(2), "disc", s) == pytest.approx(2 * math.pi, rel=1e-14)


def test_omega_disc_off_center():
    pts = np.array([[0.3, 0.1], [-0.6, 0.5], [0.0, 0.95]])
    for s in (0.3, 0.75):
        got = weight_omega_s(pts, "disc", s)
        ref = [oracles.omega_disc_ray(p, s) for p in pts]
        np.testing.assert_allclose(got, ref, rtol=1e-8)


def test_omega_lshape():
    s = 0.75
    ref = oracles.omega_raycast(np.array([0.5, 0.5]), LSHAPE_POLYGON, s)
    assert weight_omega_s(np.array([0.5, 0.5]), "lshape", s) == pytest.approx(ref, rel=5e-3)
    # the formula is in fact exact
    for x in ([0.5, 0.5], [1.5, 0.3], [0.9, 0.9], [0.2, 1.7]):
        x = np.array(x)
        for s in (0.25, 0.75):
            ref = oracles.omega_raycast(x, LSHAPE_POLYGON, s)
            assert weight_omega_s(x, "lshape", s) == pytest.approx(ref, rel=1e-8)


def test_omega_outside_rejected():
    with pytest.raises(ValueError):
        weight_omega_s(np.array([1.0, 0.0]), "disc", 0.5)
    with pytest.raises(ValueError):
        weight_omega_s(np.array([1.5, 1.5]), "lshape", 0.5)
    with pytest.raises(ValueError):
        weight_omega_s(np.zeros(2), "square", 0.5)


def test_omega_polygon_square():
    # square [-1, 1]^2 at the center, by ray casting
    sq = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)
    s = 0.5
    got = omega_polygon(np.zeros((1, 2)), sq, np.roll(sq, -1, axis=0), s)[0]
    assert got == pytest.approx(oracles.omega_raycast(np.zeros(2), sq, s), rel=1e-9)


def test_mass_total_area():
    for m in (build_disc_mesh(GradingSpec(0.25, 1.0)), build_lshape_mesh(0.25)):
        full = Mesh(m.vertices, m.triangles, np.zeros(m.n_vertices, dtype=bool), m.domain)
        M = assemble_mass(full)
        one = np.ones(full.n_dofs)
        assert one @ (M @ one) == pytest.approx(m.areas.sum(), rel=1e-13)
        area = math.pi if m.domain == "disc" else 3.0
        assert abs(one @ (M @ one) - area) / area < 0.05
        np.testing.assert_array_equal((M - M.T).toarray(), 0.0)


def test_load_and_coupling(disc4):
    m = disc4
    F = assemble_load(m, lambda x: np.ones(len(x)), 3)
    ref = np.zeros(m.n_vertices)
    np.add.at(ref, m.triangles, np.repeat(m.areas[:, None] / 3, 3, axis=1))
    np.testing.assert_allclose(F, ref[m.interior], rtol=1e-13)
    B = assemble_coupling(m)
    interior_elems = np.flatnonzero((m.dof_map[m.triangles] >= 0).all(axis=1))
    col = np.asarray(B.sum(axis=0)).ravel()
    np.testing.assert_allclose(col[interior_elems], m.areas[interior_elems], rtol=1e-14)
    # B z equals the load of the piecewise constant z
    z = np.random.default_rng(0).normal(size=m.n_triangles)
    zfun = lambda x: z[m.locate(x)]
    np.testing.assert_allclose(B @ z, assemble_load(m, zfun, 2), rtol=1e-10, atol=1e-14)


def test_load_validation(disc4):
    with pytest.raises(ValueError):
        assemble_load(disc4, lambda x: x[:, 0], 0)
    with pytest.raises(TypeError):
        assemble_load(disc4, 1.0, 3)


def test_dump_roundtrip(tmp_path, stiff4):
    A = stiff4[0.5]
    dump_matrix(A, tmp_path / "A.bin")
    M, s = load_matrix(tmp_path / "A.bin")
    np.testing.assert_array_equal(M, A.entries)
    assert s == 0.5


def test_normalization_matches_gamma_form():
    for s in (0.1, 0.5, 0.9):
        ref = 4 ** s * s * gamma(1 + s) / (math.pi * gamma(1 - s))
        assert normalization_constant(2, s) == pytest.approx(ref, rel=1e-14)
