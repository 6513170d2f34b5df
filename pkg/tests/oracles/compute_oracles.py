"""Independent reference values frozen into the test-suite.

Run ``python tests/oracles/compute_oracles.py``; nothing here imports rfcrystal.
Each block uses a different method from the package code:
  - mpmath arbitrary precision arithmetic for closed forms,
  - mpmath Taylor-series ODE integration for Mathieu exponents,
  - scipy BFGS from many random starts for crystal ground states,
  - the transverse Coulomb matrix of the 1D chain for the zigzag onset,
  - the out-of-plane Coulomb matrix of the planar crystal for the
    planarity transition (the z soft mode goes to zero there).
"""

import mpmath as mp
import numpy as np
from scipy.optimize import minimize

mp.mp.dps = 30
E = mp.mpf("1.602176634e-19")
AMU = mp.mpf("1.66053906892e-27")  # CODATA 2022
EPS0 = mp.mpf("8.8541878188e-12")  # CODATA 2022
M = mp.mpf("170.936323") * AMU
TWO_PI = 2 * mp.pi


def closed_forms():
    d0, v0, om = mp.mpf("230e-6"), mp.mpf(150), TWO_PI * mp.mpf("27.51e6")
    q = 2 * E * v0 / (M * d0**2 * om**2)
    print("ideal q", q)
    z0, u0, wz = mp.mpf("200e-6"), mp.mpf("14.4"), TWO_PI * mp.mpf("1.124e6")
    kappa = M * wz**2 * z0**2 / (2 * E * u0)
    print("kappa from omega_z", kappa)
    for n in (1, 17, 29):
        print("threshold", n, mp.root(mp.mpf("2.264") * n, 4))
    wx = TWO_PI * mp.mpf("0.416e6")
    d = (E**2 / (2 * mp.pi * EPS0 * M * wx**2)) ** (mp.mpf(1) / 3)
    print("two-ion spacing at 0.416 MHz", d)
    print("first-order r1 at 12 um, q=0.107", mp.mpf("0.107") * mp.mpf("12e-6") / 2)


def mathieu_beta(a, q):
    a, q = mp.mpf(a), mp.mpf(q)
    f = lambda x, y: [y[1], -(a - 2 * q * mp.cos(2 * x)) * y[0]]  # noqa: E731
    s1 = mp.odefun(f, 0, [mp.mpf(1), mp.mpf(0)])(mp.pi)
    s2 = mp.odefun(f, 0, [mp.mpf(0), mp.mpf(1)])(mp.pi)
    half = (s1[0] + s2[1]) / 2
    return mp.acos(half) / mp.pi


def scalar_t2(a, q, depth=60):
    a, q = mp.mpf(a), mp.mpf(q)
    t = 1 / (a - 4 * (depth + 1) ** 2)
    for k in range(depth, 1, -1):
        t = 1 / (a - 4 * k**2 - q * t * q)
    return t


K = 1.0 / (4 * np.pi * float(EPS0))


def planar_ground_state(n, wx, wy, starts=40, seed=1):
    m, e = float(M), float(E)

    def energy(flat):
        x = flat.reshape(n, 2)
        d = x[:, None] - x[None]
        r = np.sqrt((d**2).sum(-1) + np.eye(n))
        return 0.5 * m * (wx**2 * (x[:, 0] ** 2).sum() + wy**2 * (x[:, 1] ** 2).sum()) + \
            0.5 * K * e**2 * (np.triu(1 / r, 1) * 2).sum()

    l = (K * e**2 / (m * min(wx, wy) ** 2)) ** (1 / 3)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(starts):
        x0 = rng.normal(size=2 * n) * l * n**0.5 * 0.6
        res = minimize(lambda f: energy(f * l) / (m * wx**2 * l**2), x0 / l, method="BFGS",
                       options={"gtol": 1e-12, "maxiter": 20000})
        if best is None or res.fun < best.fun:
            best = res
    return best.x.reshape(n, 2) * l, best.fun * m * wx**2 * l**2


def planarity_ratio(n, wx, wy):
    m, e = float(M), float(E)
    x, _ = planar_ground_state(n, wx, wy)
    d = x[:, None] - x[None]
    r = np.sqrt((d**2).sum(-1)) + np.eye(n)
    c = K * e**2 / r**3
    np.fill_diagonal(c, 0.0)
    cmat = np.diag(c.sum(1)) - c
    lam = np.linalg.eigvalsh(cmat).max()
    return np.sqrt(lam / m) / max(wx, wy)


def linear_zigzag_ratio(n):
    """omega_z / omega_x where the transverse mode of the 1D chain softens (natural units)."""
    f = lambda u: 0.5 * (u**2).sum() + sum(1 / abs(u[i] - u[j]) for i in range(n) for j in range(i + 1, n))  # noqa: E731
    u = minimize(f, np.linspace(-n / 2, n / 2, n), method="BFGS", options={"gtol": 1e-13}).x
    d = np.abs(u[:, None] - u[None]) + np.eye(n)
    c = 1 / d**3
    np.fill_diagonal(c, 0)
    return 1 / np.sqrt(np.linalg.eigvalsh(np.diag(c.sum(1)) - c).max())


def crystal_17():
    wx, wy = 2 * np.pi * 0.416e6, 2 * np.pi * 0.446e6
    x, en = planar_ground_state(17, wx, wy, starts=60)
    d = x[:, None] - x[None]
    r = np.sqrt((d**2).sum(-1)) + np.eye(17) * 1e9
    nn = r.min(1)
    rad = np.linalg.norm(x, axis=1)
    print("N=17 planar energy (no axial term)", en)
    print("N=17 nn median/min/max", np.median(nn), nn.min(), nn.max())
    print("N=17 central ion radius", rad.min(), "r_max", rad.max())


if __name__ == "__main__":
    closed_forms()
    for a, q in ((0, "0.107"), ("0.25", 0), ("-0.00432", "0.0942")):
        print("beta", a, q, mathieu_beta(a, q))
    print("scalar T2 a=0.01 q=0.1", scalar_t2("0.01", "0.1"))
    iso = 2 * np.pi * 0.446e6
    for n in (5, 10, 17):
        print("planarity ratio isotropic", n, planarity_ratio(n, iso, iso))
        print("planarity ratio 0.416/0.446", n, planarity_ratio(n, 2 * np.pi * 0.416e6, iso))
    for n in (3, 5, 10):
        print("linear-zigzag ratio", n, linear_zigzag_ratio(n))
    crystal_17()
