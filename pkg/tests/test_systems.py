import mpmath as mp
import numpy as np
import pytest

from icldyn.errors import NumericalDivergence
from icldyn.systems import SystemClassConfig, SystemSpec, pendulum_energy, sample_system, simulate

mp.mp.prec = 96


def convolution_oracle(spec: SystemSpec, u: np.ndarray) -> np.ndarray:
    """y_k = C (A^k x0 + sum_{j<k} A^(k-1-j) B u_j), by explicit matrix powers."""
    A, B, C = spec.A, spec.B, spec.C_out
    n = len(u)
    powers = [np.eye(A.shape[0])]
    for _ in range(n):
        powers.append(powers[-1] @ A)
    y = np.zeros((n, C.shape[0]))
    for k in range(n):
        x = powers[k] @ spec.x0
        for j in range(k):
            x = x + powers[k - 1 - j] @ (B @ u[j])
        y[k] = C @ x
    return y


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def test_linear_matches_convolution_oracle():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        n_x = int(rng.integers(1, 9))
        d_u, d_y = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        n = int(rng.integers(1, 65))
        cls = SystemClassConfig(n_x=n_x, d_u=d_u, d_y=d_y, x0_scale=1.0)
        spec = sample_system(cls, rng)
        u = rng.standard_normal((n, d_u))
        worst = max(worst, rel_err(simulate(spec, u, 0.05), convolution_oracle(spec, u)))
    assert worst <= 1e-5


def test_linear_spectral_radius_below_one():
    rng = np.random.default_rng(0)
    cls = SystemClassConfig(n_x=5, spectral_radius_range=(0.5, 0.99))
    for _ in range(10_000):
        A = sample_system(cls, rng).A
        assert np.max(np.abs(np.linalg.eigvals(A))) < 1.0


def test_power_iteration_confirms_stability():
    spec = sample_system(SystemClassConfig(n_x=6), np.random.default_rng(3))
    v = np.ones(6)
    for _ in range(2000):
        v = spec.A @ v
    assert np.linalg.norm(v) < 1e-6


@pytest.mark.parametrize("cls", [SystemClassConfig(), SystemClassConfig.pendulum(1), SystemClassConfig.pendulum(2)])
def test_zero_input_zero_state_gives_zero_output(cls):
    spec = sample_system(cls, np.random.default_rng(1))
    spec.x0 = np.zeros_like(spec.x0)
    y = simulate(spec, np.zeros((50, cls.d_u)), 0.05)
    assert np.all(y == 0.0)


def test_degenerate_mass_interval():
    spec = sample_system(SystemClassConfig.pendulum(1, mass_range=(1.0, 1.0)), np.random.default_rng(0))
    assert spec.masses[0] == 1.0


def test_sampling_and_simulation_deterministic():
    for cls in (SystemClassConfig(), SystemClassConfig.pendulum(2)):
        a = sample_system(cls, np.random.default_rng(42))
        b = sample_system(cls, np.random.default_rng(42))
        assert a.summary_hash() == b.summary_hash()
        u = np.random.default_rng(0).standard_normal((40, cls.d_u))
        assert simulate(a, u, 0.05).tobytes() == simulate(b, u, 0.05).tobytes()


def _undamped(links, seed):
    spec = sample_system(SystemClassConfig.pendulum(links, x0_scale=0.8), np.random.default_rng(seed))
    spec.dampings = np.zeros(links)
    return spec


@pytest.mark.parametrize("links", [1, 2])
def test_undamped_energy_drift(links):
    from icldyn.systems import rk4_step

    for seed in range(5):
        spec = _undamped(links, seed)
        x = spec.x0.copy()
        e0 = pendulum_energy(spec, x)
        h = 0.05 / spec.substeps
        worst = 0.0
        for _ in range(400):
            for _ in range(spec.substeps):
                x = rk4_step(spec, x, np.zeros(links), h)
            worst = max(worst, abs(pendulum_energy(spec, x) - e0) / abs(e0))
        assert worst <= 1e-5


def test_damped_energy_non_increasing():
    from icldyn.systems import rk4_step

    spec = sample_system(SystemClassConfig.pendulum(1, x0_scale=0.5), np.random.default_rng(9))
    x = spec.x0.copy()
    e = pendulum_energy(spec, x)
    for _ in range(400):
        for _ in range(spec.substeps):
            x = rk4_step(spec, x, np.zeros(1), 0.05 / spec.substeps)
        e_new = pendulum_energy(spec, x)
        assert e_new <= e + 1e-6
        e = e_new


def energy_oracle(spec: SystemSpec, state) -> mp.mpf:
    """Point-mass Cartesian energy in extended precision, independent of the mass matrix."""
    L = len(spec.masses)
    q = [mp.mpf(v) for v in state[:L]]
    qd = [mp.mpf(v) for v in state[L:]]
    g = mp.mpf(spec.gravity)
    px = py = vx = vy = mp.mpf(0)
    ang = angd = mp.mpf(0)
    total = mp.mpf(0)
    for i in range(L):
        ang += q[i]
        angd += qd[i]
        l, m = mp.mpf(spec.lengths[i]), mp.mpf(spec.masses[i])
        px += l * mp.sin(ang)
        py -= l * mp.cos(ang)
        vx += l * mp.cos(ang) * angd
        vy += l * mp.sin(ang) * angd
        total += m * (vx**2 + vy**2) / 2 + m * g * py
    return total


@pytest.mark.parametrize("links", [1, 2])
def test_energy_matches_extended_precision(links):
    rng = np.random.default_rng(links)
    for _ in range(20):
        spec = sample_system(SystemClassConfig.pendulum(links), rng)
        state = rng.uniform(-3, 3, size=2 * links)
        ref = float(energy_oracle(spec, state))
        assert abs(pendulum_energy(spec, state) - ref) <= 1e-12 * max(1.0, abs(ref))


def test_energy_trivial_properties():
    spec = sample_system(SystemClassConfig.pendulum(2), np.random.default_rng(4))
    rest = pendulum_energy(spec, [0, 0, 0, 0])
    rng = np.random.default_rng(0)
    for _ in range(100):
        assert pendulum_energy(spec, np.r_[rng.uniform(-3, 3, 2), 0, 0]) >= rest
    s = np.array([0.3, -0.2, 0.7, 1.1])
    ke = pendulum_energy(spec, s) - pendulum_energy(spec, np.r_[s[:2], 0, 0])
    ke2 = pendulum_energy(spec, np.r_[s[:2], 2 * s[2:]]) - pendulum_energy(spec, np.r_[s[:2], 0, 0])
    assert ke2 == pytest.approx(4 * ke, rel=1e-12)


def test_blowup_raises():
    spec = sample_system(SystemClassConfig(blowup=10.0), np.random.default_rng(0))
    with pytest.raises(NumericalDivergence):
        simulate(spec, np.full((100, 2), 1e3), 0.05)


def test_class_validation():
    with pytest.raises(ValueError):
        SystemClassConfig(spectral_radius_range=(0.5, 1.0))
    with pytest.raises(ValueError):
        SystemClassConfig(kind="Pendulum", links=2, n_x=4, d_u=1, d_y=2)
    with pytest.raises(ValueError):
        SystemClassConfig(mass_range=(0.0, 1.0))
