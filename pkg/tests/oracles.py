"""Independent reference computations shared by the test modules."""

import numpy as np
import scipy.linalg as la

from atomcbo.hardware import Configuration, PulseSet, control_operators, initial_state
from atomcbo.hardware import interaction_hamiltonian


def brute_force_energy(X, z, H_targ, enc):
    """Energy by sequential scipy expm, no shared code with the library solver."""
    controls = control_operators(enc, X.num_atoms)
    H_V = interaction_hamiltonian(X, enc)
    psi = initial_state(enc, X.num_atoms)
    for k in range(z.num_steps):
        H = H_V + np.tensordot(z.values[:, k], controls, axes=1)
        psi = la.expm(-1j * z.dt * H) @ psi
    return float(np.real(np.vdot(psi, H_targ @ psi)))


def fd_pulse_gradient(X, z, H_targ, mu, enc, h=1e-5):
    """Central differences of J over every pulse entry."""
    grad = np.zeros_like(z.values)
    big = PulseSet(z.values, z_max=1e9, duration=z.duration)
    for idx in np.ndindex(z.values.shape):
        vals = []
        for sign in (1, -1):
            v = big.values.copy()
            v[idx] += sign * h
            zz = PulseSet(v, z_max=1e9, duration=z.duration)
            vals.append(brute_force_energy(X, zz, H_targ, enc) + mu * np.sum(v**2) * z.dt)
        grad[idx] = (vals[0] - vals[1]) / (2 * h)
    return grad


def fd_position_gradient(X, z, H_targ, enc, h=1e-5):
    grad = np.zeros_like(X.positions)
    for idx in np.ndindex(X.positions.shape):
        vals = []
        for sign in (1, -1):
            p = X.positions.copy()
            p[idx] += sign * h
            vals.append(brute_force_energy(Configuration(p), z, H_targ, enc))
        grad[idx] = (vals[0] - vals[1]) / (2 * h)
    return grad


def random_hermitian(rng, dim, scale=1.0):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return scale * (a + a.conj().T) / 2


def relative_errors(G, ref, floor=1e-8):
    mask = np.abs(G) > floor
    return np.abs(G - ref)[mask] / np.abs(ref)[mask]
