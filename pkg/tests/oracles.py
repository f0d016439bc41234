"""Independent reference implementations used as test oracles.

Nothing here imports the package's numerical code; each routine is written
from the defining equations in the most direct (slow) way.
"""
import math

import numpy as np


def euler_step(x, y, psi, v, rate, dt, substeps):
    """Fine-step forward Euler integration of the unicycle model."""
    h = dt / substeps
    t = np.arange(substeps) * h
    heading = psi + rate * t
    return x + v * h * np.cos(heading).sum(), y + v * h * np.sin(heading).sum(), psi + rate * dt


def arc_step(x, y, psi, v, rate, dt):
    """Closed-form arc in the textbook sin/cos difference form."""
    if rate == 0:
        return x + v * math.cos(psi) * dt, y + v * math.sin(psi) * dt, psi
    return (
        x + v * (math.sin(psi + rate * dt) - math.sin(psi)) / rate,
        y - v * (math.cos(psi + rate * dt) - math.cos(psi)) / rate,
        psi + rate * dt,
    )


def separation(own, intr, psi_cand, v_o, v_i, tau):
    """Distance after straight extrapolation of both vehicles for ``tau`` seconds."""
    ox = own.x + tau * v_o * math.cos(psi_cand)
    oy = own.y + tau * v_o * math.sin(psi_cand)
    ix = intr.x + tau * v_i * math.cos(intr.psi)
    iy = intr.y + tau * v_i * math.sin(intr.psi)
    return math.hypot(ix - ox, iy - oy)


def dense_closest_approach(own, intr, psi_cand, v_o, v_i, horizon=300.0, step=1e-3):
    """Grid search over tau; returns (tau, distance)."""
    tau = np.arange(0.0, horizon + step / 2, step)
    dx = (intr.x - own.x) + tau * (v_i * math.cos(intr.psi) - v_o * math.cos(psi_cand))
    dy = (intr.y - own.y) + tau * (v_i * math.sin(intr.psi) - v_o * math.sin(psi_cand))
    d = np.hypot(dx, dy)
    k = int(np.argmin(d))
    return float(tau[k]), float(d[k])


def paper_tau_min(intr, psi_cand, v_o, v_i):
    """The published a, b, c, d form (own vehicle at the origin)."""
    a = -v_i * intr.x * math.cos(intr.psi) - v_i * intr.y * math.sin(intr.psi)
    b = v_o * intr.x * math.cos(psi_cand) + v_o * intr.y * math.sin(psi_cand)
    c = v_o ** 2 + v_i ** 2 * math.cos(intr.psi) ** 2 + v_i ** 2 * math.sin(intr.psi) ** 2
    d = v_o * v_i * (math.cos(intr.psi) * math.cos(psi_cand) + math.sin(intr.psi) * math.sin(psi_cand))
    return max((a + b) / (c - 2 * d), 0.0)


def wrap(a):
    return (a + math.pi) % (2 * math.pi) - math.pi


def brute_force_trl(own, intr, goal, D, v_o, v_i, N):
    """Algorithm transcription with explicit loops. Returns (heading, feasible, dmins, cands)."""
    cands = [own.psi + n * math.pi / N for n in range(-N, N + 1)]
    dmins = []
    for c in cands:
        rx, ry = intr.x - own.x, intr.y - own.y
        dvx = v_i * math.cos(intr.psi) - v_o * math.cos(c)
        dvy = v_i * math.sin(intr.psi) - v_o * math.sin(c)
        dv2 = dvx * dvx + dvy * dvy
        tau = 0.0 if dv2 < 1e-9 else max(-(rx * dvx + ry * dvy) / dv2, 0.0)
        dmins.append(math.hypot(rx + tau * dvx, ry + tau * dvy))
    dstar = max(dmins)
    feasible = dstar >= D
    if feasible:
        allowed = [i for i, d in enumerate(dmins) if d >= D]
    else:
        allowed = [i for i, d in enumerate(dmins) if d >= dstar - 1e-6]
    goal_heading = math.atan2(goal[1] - own.y, goal[0] - own.x)
    offs = {i: abs(wrap(cands[i] - goal_heading)) for i in allowed}
    best = min(offs.values())
    pick = min(i for i in allowed if offs[i] <= best + 1e-9)
    return wrap(cands[pick]), feasible, dmins, cands


def multilinear(nodes_per_axis, periods, values, point):
    """Direct tensor-product hat-function interpolation over a full node grid."""
    dims = len(nodes_per_axis)
    total = 0.0
    for flat in np.ndindex(*[len(n) for n in nodes_per_axis]):
        w = 1.0
        for k in range(dims):
            nodes = np.asarray(nodes_per_axis[k], dtype=float)
            c = point[k]
            h_left = h_right = None
            i = flat[k]
            if periods[k] is None:
                c = min(max(c, nodes[0]), nodes[-1])
                dist = c - nodes[i]
                h_right = nodes[i + 1] - nodes[i] if i + 1 < len(nodes) else None
                h_left = nodes[i] - nodes[i - 1] if i > 0 else None
            else:
                p = periods[k]
                dist = (c - nodes[i] + p / 2) % p - p / 2
                n = len(nodes)
                h_right = (nodes[(i + 1) % n] - nodes[i]) % p or p
                h_left = (nodes[i] - nodes[(i - 1) % n]) % p or p
            if dist >= 0:
                w *= max(0.0, 1 - dist / h_right) if h_right else float(dist == 0)
            else:
                w *= max(0.0, 1 + dist / h_left) if h_left else 0.0
            if w == 0.0:
                break
        total += w * values[flat]
    return total


def normal_equations(A, y, ridge=0.0):
    A = np.asarray(A, dtype=float)
    return np.linalg.solve(A.T @ A + ridge * np.eye(A.shape[1]), A.T @ y)


def normal_expectation(f, sigma, n=1000, width=8.0):
    """E[f(w)] for w ~ N(0, sigma^2): n-point Gauss-Legendre over +-width sigma."""
    x, w = np.polynomial.legendre.leggauss(n)
    half = width * sigma
    pts = half * x
    pdf = np.exp(-0.5 * (pts / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
    return float(sum(wi * half * p * f(t) for t, wi, p in zip(pts, w, pdf)))
