import numpy as np
import pytest

from atomcbo.hardware import (
    ChannelKind,
    Configuration,
    Encoding,
    PulseSet,
    channel_layout,
    control_operators,
    initial_state,
    interaction_hamiltonian,
    pair_operator,
)
from atomcbo.hilbert import basis_state, embed_local, evolve, is_hermitian


def test_dipole_single_atom_controls():
    ops = control_operators(Encoding.DIPOLE, 1)
    assert len(ops) == 2
    np.testing.assert_array_equal(ops[0], 0.5 * np.array([[0, 1], [1, 0]]))
    np.testing.assert_array_equal(ops[1], -np.array([[0, 0], [0, 1]]))


@pytest.mark.parametrize("enc", list(Encoding))
@pytest.mark.parametrize("m", [1, 2, 3])
def test_controls_hermitian_and_counted(enc, m):
    ops = control_operators(enc, m)
    assert len(ops) == enc.num_channels(m) == (4 if enc is Encoding.GG_VDW else 2) * m
    for op in ops:
        assert np.max(np.abs(op - op.conj().T)) < 1e-14
        assert op.shape == (enc.local_dim**m,) * 2


def test_gg_locality():
    ops = control_operators(Encoding.GG_VDW, 2)
    assert ops.shape == (8, 9, 9)
    layout = channel_layout(Encoding.GG_VDW, 2)
    assert layout[0] == (0, ChannelKind.OMEGA_01)
    omega_atom0 = ops[0]
    for op, (atom, _) in zip(ops, layout):
        if atom == 1:
            assert np.max(np.abs(omega_atom0 @ op - op @ omega_atom0)) < 1e-14


def test_gg_channel_levels():
    ops = control_operators(Encoding.GG_VDW, 1)
    expected = [
        0.5 * np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]]),
        -np.diag([0, 1, 0]),
        0.5 * np.array([[0, 0, 0], [0, 0, 1], [0, 1, 0]]),
        -np.diag([0, 0, 1]),
    ]
    for op, ref in zip(ops, expected):
        np.testing.assert_array_equal(op, ref)


def test_vdw_unit_distance():
    H = interaction_hamiltonian(Configuration([[0, 0], [1, 0]]), Encoding.GR_VDW)
    expected = np.zeros((4, 4))
    expected[3, 3] = 1.0
    np.testing.assert_array_equal(H, expected)


def test_gg_vdw_acts_on_rydberg_pair():
    H = interaction_hamiltonian(Configuration([[0, 0], [1, 0]]), Encoding.GG_VDW)
    rr = basis_state([2, 2], 3)
    assert np.count_nonzero(H) == 1
    assert rr @ H @ rr == pytest.approx(1.0)


def test_dipole_exchange_amplitude():
    H = interaction_hamiltonian(Configuration([[0, 0], [2, 0]]), Encoding.DIPOLE)
    a, b = basis_state([0, 1], 2), basis_state([1, 0], 2)
    assert a @ H @ b == pytest.approx(0.125)
    assert b @ H @ a == pytest.approx(0.125)
    assert np.count_nonzero(H) == 2


@pytest.mark.parametrize("enc", list(Encoding))
def test_translation_invariance(enc):
    X = Configuration(np.random.default_rng(0).uniform(-2, 2, (3, 2)))
    H = interaction_hamiltonian(X, enc)
    np.testing.assert_allclose(interaction_hamiltonian(X.translated([3.3, -1.7]), enc), H,
                               rtol=1e-12, atol=0)


@pytest.mark.parametrize("enc", list(Encoding))
@pytest.mark.parametrize("s", [0.5, 1.7, 3.0])
def test_scaling_law(enc, s):
    X = Configuration(np.random.default_rng(1).uniform(-2, 2, (3, 2)))
    H = interaction_hamiltonian(X, enc)
    Hs = interaction_hamiltonian(X.scaled(s), enc)
    nz = np.abs(H) > 0
    ratio = Hs[nz] / H[nz]
    np.testing.assert_allclose(ratio.real, s ** -enc.power, rtol=1e-12)


@pytest.mark.parametrize("enc", list(Encoding))
def test_hermitian(enc):
    X = Configuration(np.random.default_rng(2).uniform(-2, 2, (3, 2)))
    assert is_hermitian(interaction_hamiltonian(X, enc))


@pytest.mark.parametrize("enc", [Encoding.GR_VDW, Encoding.GG_VDW])
def test_blockade_monotone(enc):
    r = enc.rydberg_level
    rr = basis_state([r, r], enc.local_dim)
    shifts = [rr @ interaction_hamiltonian(Configuration([[0, 0], [d, 0]]), enc) @ rr
              for d in np.linspace(0.3, 5, 40)]
    assert np.all(np.diff(np.real(shifts)) < 0)


@pytest.mark.parametrize("enc", list(Encoding))
def test_pair_additivity(enc):
    pos = np.array([[0.0, 0.0], [1.1, 0.2], [0.4, 1.3]])
    H = interaction_hamiltonian(Configuration(pos), enc)
    total = np.zeros_like(H)
    for i, j in [(0, 1), (0, 2), (1, 2)]:
        dist = np.linalg.norm(pos[i] - pos[j])
        total += pair_operator(enc, 3, i, j) / dist**enc.power
    np.testing.assert_allclose(H, total, atol=1e-14)


def test_gr_dipole_ground_pair_is_invariant():
    # |g1 g1> never couples through the exchange term
    H = interaction_hamiltonian(Configuration([[0, 0], [0.7, 0]]), Encoding.DIPOLE)
    psi0 = initial_state(Encoding.DIPOLE, 2)
    rec = evolve(psi0, H, np.zeros((4, 50)), control_operators(Encoding.DIPOLE, 2), 0.02)
    np.testing.assert_allclose(rec.final_state, psi0, atol=1e-14)


def test_coincident_atoms_rejected():
    with pytest.raises(ValueError, match="coincident"):
        Configuration([[0, 0], [0, 0]])


def test_configuration_validation():
    with pytest.raises(ValueError):
        Configuration([[0, 0, 0]])
    with pytest.raises(ValueError):
        Configuration([[0, np.inf]])


def test_configuration_json_round_trip(tmp_path):
    X = Configuration([[0.1, -0.2], [1.5, 2.0]])
    X.save(tmp_path / "c.json")
    assert Configuration.load(tmp_path / "c.json") == X


def test_pulseset_bounds():
    with pytest.raises(ValueError, match="z_max"):
        PulseSet(np.full((1, 3), 21.0), z_max=20.0)
    z = PulseSet(np.zeros((2, 4)), duration=2.0)
    assert z.dt == 0.5
    clipped = z.with_values(np.full((2, 4), 50.0), clip=True)
    assert np.all(clipped.values == 20.0)


def test_encoding_parse():
    assert Encoding.parse("gr") is Encoding.GR_VDW
    assert Encoding.parse("DIPOLE") is Encoding.DIPOLE
    with pytest.raises(ValueError):
        Encoding.parse("ising")


def test_embed_local_matches_kron():
    op = np.array([[1, 2], [3, 4]], dtype=complex)
    np.testing.assert_array_equal(embed_local(op, 1, 3), np.kron(np.kron(np.eye(2), op), np.eye(2)))
