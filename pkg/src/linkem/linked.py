"""Linked emulators: moment propagation through a feed-forward network.

A downstream GP whose inputs include the (Gaussian) coefficient outputs of
upstream emulators has a non-Gaussian predictive distribution. For a
squared-exponential kernel with constant or linear trend its mean and
variance are available in closed form through three families of Gaussian
integrals of the kernel,

* ``xi[t]      = E[r(U, w_t)]``
* ``zeta[t, s] = E[r(U, w_t) r(U, w_s)]``
* ``psi[t, k]  = E[U_k r(U, w_t)]``

which factorize over input dimensions. The assembly below is arranged so
that every quantity that is small in exact arithmetic (covariances, the
expected predictive variance) is computed without subtracting large
numbers: emulators of smooth simulators have near-singular correlation
matrices and very large weight vectors, so the textbook form
``alpha' zeta alpha - (xi' alpha)^2`` loses all significant digits.

A Monte Carlo propagator is provided as an independent check.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .basis import GaussianVector, reconstruct_moments
from .gp import GpModel
from .mvem import MvEmulator

__all__ = [
    "KernelMoments",
    "LinkedNetwork",
    "Node",
    "WiringError",
    "UnsupportedModelError",
    "xi_factor",
    "zeta_factor",
    "psi_factor",
    "kernel_moments",
    "linked_moments",
    "linked_predict",
    "composed_predict",
    "mc_propagate",
    "projection_csv",
]


class WiringError(ValueError):
    pass


class UnsupportedModelError(ValueError):
    pass


# ---------------------------------------------------------------------------
# one-dimensional kernel integrals, W ~ N(m, v), r(w, a) = exp(-(w - a)^2 / d^2)


def _log_xi(m, v, d, w):
    d2 = d * d
    return -0.5 * np.log1p(2 * v / d2) - (m - w) ** 2 / (d2 + 2 * v)


def _log_cross(m, v, da, db, a, b):
    """log E[exp(-(W-a)^2/da^2 - (W-b)^2/db^2)]."""
    pa, pb = 1.0 / (da * da), 1.0 / (db * db)
    P = pa + pb
    c = (pa * a + pb * b) / P
    return (-pa * pb / P * (a - b) ** 2
            - 0.5 * np.log1p(2 * P * v)
            - P * (m - c) ** 2 / (1 + 2 * P * v))


def _log_ratio(m, v, da, db, a, b):
    """``log E[r_a r_b] - log E[r_a] - log E[r_b]`` evaluated directly.

    Exactly zero at ``v = 0`` and accurate to relative precision for small
    ``v``; differencing the three logs instead leaves an absolute error of
    order machine epsilon, which large GP weight vectors amplify.
    """
    pa, pb = 1.0 / (da * da), 1.0 / (db * db)
    A, B = pa * (m - a), pb * (m - b)
    ga, gb = 1 + 2 * pa * v, 1 + 2 * pb * v
    g = ga + gb - 1
    num = 2 * v * (A * A * gb * pb + B * B * ga * pa) - 2 * A * B * ga * gb
    return -2 * v * num / (ga * gb * g) + 0.5 * np.log1p(4 * pa * pb * v * v / g)


def xi_factor(m, v, d, w):
    """``E[r(W, w)]``."""
    return np.exp(_log_xi(m, v, d, w))


def zeta_factor(m, v, d, wt, ws):
    """``E[r(W, wt) r(W, ws)]``."""
    return np.exp(_log_cross(m, v, d, d, wt, ws))


def psi_factor(m, v, d, w):
    """``E[W r(W, w)]``."""
    d2 = d * d
    return xi_factor(m, v, d, w) * (m * d2 + 2 * v * w) / (d2 + 2 * v)


def _tilt(m, v, d, w):
    """``E[W r(W,w)] / E[r(W,w)] - m``, the shift of the kernel-tilted mean."""
    d2 = d * d
    return 2 * v * (w - m) / (d2 + 2 * v)


@dataclass(frozen=True)
class KernelMoments:
    """Kernel integrals of one GP under independent Gaussian inputs.

    ``xi`` is ``(n,)``, ``zeta`` ``(n, n)`` and ``psi`` ``(n, p)``; ``cov_r``
    is ``zeta - outer(xi, xi)`` computed without cancellation.
    """

    xi: np.ndarray
    zeta: np.ndarray
    psi: np.ndarray
    cov_r: np.ndarray


def _check_model(model: GpModel):
    if model.trend.kind not in ("constant", "linear"):
        raise UnsupportedModelError(f"trend {model.trend.kind!r} not supported in linked layers")
    if model.kernel.name != "squared_exponential":
        raise UnsupportedModelError("linked moments require a squared-exponential kernel")


def _cross_terms(ma: GpModel, mb: GpModel, mean, var):
    """log xi for each model and E[r_a r_b^T] - xi_a xi_b^T."""
    Xa, Xb = ma.X, mb.X
    la = _log_xi(mean, var, ma.lengthscales, Xa).sum(1)
    lb = _log_xi(mean, var, mb.lengthscales, Xb).sum(1)
    lr = _log_ratio(mean, var, ma.lengthscales, mb.lengthscales,
                    Xa[:, None, :], Xb[None, :, :]).sum(-1)
    xi_a, xi_b = np.exp(la), np.exp(lb)
    outer = np.exp(la[:, None] + lb[None, :])
    return xi_a, xi_b, outer * np.exp(lr), outer * np.expm1(lr)


def kernel_moments(model: GpModel, mean, var) -> KernelMoments:
    """Kernel integrals for ``model`` at unit-cube input moments.

    ``mean`` and ``var`` are ``p``-vectors on the model's unit-cube scale;
    deterministic coordinates have ``var = 0`` and contribute plain kernel
    factors.
    """
    _check_model(model)
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    if mean.shape != (model.p,) or var.shape != (model.p,):
        raise ValueError(f"input moments must be {model.p}-vectors")
    if np.any(var < 0):
        raise ValueError("input variances must be non-negative")
    xi, _, zeta, cov = _cross_terms(model, model, mean, var)
    psi = xi[:, None] * (mean + _tilt(mean, var, model.lengthscales, model.X))
    return KernelMoments(xi, zeta, psi, cov)


def _trend_moments(model: GpModel, mean, var):
    """E[h(U)] and Cov(h(U)) for the model's trend basis."""
    if model.trend.kind == "constant":
        return np.ones(1), np.zeros((1, 1))
    return np.concatenate([[1.0], mean]), np.diag(np.concatenate([[0.0], var]))


def _cov_h_r(model: GpModel, mean, var, xi):
    """Cov(h(U), r(U)) as an ``m x n`` matrix."""
    tilt = _tilt(mean, var, model.lengthscales, model.X)  # n x p
    if model.trend.kind == "constant":
        return np.zeros((1, model.n))
    return np.vstack([np.zeros(model.n), (xi[:, None] * tilt).T])


def linked_moments(models: list[GpModel], mean, var) -> GaussianVector:
    """Linked predictive means and full covariance of several GPs.

    All models must share the training inputs (the coefficient emulators
    of one :class:`MvEmulator`). Their residual processes are independent,
    so off-diagonal covariance comes only from the shared uncertain inputs.
    """
    for m in models:
        _check_model(m)
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    q = len(models)
    mus = np.empty(q)
    cov = np.empty((q, q))
    cache = {}
    for a, ma in enumerate(models):
        hbar, _ = _trend_moments(ma, mean, var)
        xi = np.exp(_log_xi(mean, var, ma.lengthscales, ma.X).sum(1))
        mus[a] = hbar @ ma.beta + xi @ ma.alpha
        cache[a] = (xi, _cov_h_r(ma, mean, var, xi))
    for a, ma in enumerate(models):
        for b in range(a, q):
            mb = models[b]
            _, _, _, cov_r = _cross_terms(ma, mb, mean, var)
            c = 0.0
            if ma.trend.kind == "linear" and mb.trend.kind == "linear":
                c += float(ma.beta[1:] @ (var * mb.beta[1:]))
            c += _beta_cov_h_r_alpha(ma, mb, mean, var, cache[b][0])
            c += _beta_cov_h_r_alpha(mb, ma, mean, var, cache[a][0])
            c += float(ma.alpha @ cov_r @ mb.alpha)
            if a == b:
                c += _expected_variance(ma, mean, var, cache[a][0], cov_r, cache[a][1])
            cov[a, b] = cov[b, a] = c
    variances = np.diag(cov).copy()
    scale = np.array([m.sigma2 for m in models])
    if np.any(variances < -1e-10 * scale):
        raise FloatingPointError(f"linked variance significantly negative: {variances}")
    if np.any(variances < 0):
        warnings.warn("clamping slightly negative linked variance to zero", RuntimeWarning, stacklevel=2)
    variances = np.maximum(variances, 0.0)
    np.fill_diagonal(cov, variances)
    return GaussianVector(mus, variances, cov)


def _beta_cov_h_r_alpha(ma: GpModel, mb: GpModel, mean, var, xi_b) -> float:
    """``beta_a' Cov(h_a(U), r_b(U)) alpha_b``."""
    if ma.trend.kind == "constant":
        return 0.0
    tilt = _tilt(mean, var, mb.lengthscales, mb.X)  # n_b x p
    return float(ma.beta[1:] @ ((xi_b[:, None] * tilt).T @ mb.alpha))


def _expected_variance(model: GpModel, mean, var, xi, cov_r, cov_hr) -> float:
    """``E[s^2(U)]`` where ``s^2`` is the GP predictive variance."""
    L = model.L
    hbar, cov_h = _trend_moments(model, mean, var)
    a = solve_triangular(L, xi, lower=True)
    # E||L^-1 r||^2 = ||L^-1 xi||^2 + tr(K^-1 Cov(r))
    tr_cov = np.trace(cho_solve((L, True), cov_r))
    ubar = hbar - model.KinvH.T @ xi
    Mt = model.KinvH  # n x m, rows of K^-1 H
    cov_u = cov_h - cov_hr @ Mt - Mt.T @ cov_hr.T + Mt.T @ cov_r @ Mt
    C = model.hkh_chol
    z = solve_triangular(C, ubar, lower=True)
    Ainv_cov_u = cho_solve((C, True), cov_u)
    frac = (1.0 + model.nugget - a @ a + z @ z) - tr_cov + np.trace(Ainv_cov_u)
    return model.sigma2 * frac


# ---------------------------------------------------------------------------
# network


GLOBAL = "global"
COEFF = "coeff"


@dataclass(frozen=True)
class Node:
    """One emulator in the network.

    ``inputs[k]`` says where input dimension ``k`` of the emulator comes
    from: ``("global", name)`` for a network input, or
    ``("coeff", node_name, i)`` for coefficient ``i`` of an upstream node.
    """

    name: str
    emulator: MvEmulator
    inputs: tuple[tuple, ...]

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(tuple(w) for w in self.inputs))


@dataclass(frozen=True)
class LinkedNetwork:
    """Feed-forward DAG of multivariate emulators; the last node is the output.

    Nodes must be listed in topological order. Upstream coefficients are
    passed downstream as independent Gaussians.
    """

    nodes: tuple[Node, ...]

    def __post_init__(self):
        nodes = tuple(self.nodes)
        object.__setattr__(self, "nodes", nodes)
        seen: dict[str, Node] = {}
        for node in nodes:
            if node.name in seen:
                raise WiringError(f"duplicate node name {node.name!r}")
            em = node.emulator
            if len(node.inputs) != em.domain.p:
                raise WiringError(
                    f"node {node.name!r}: wiring covers {len(node.inputs)} inputs, emulator has {em.domain.p}")
            upstream = set()
            for k, src in enumerate(node.inputs):
                if src[0] == GLOBAL and len(src) == 2:
                    continue
                if src[0] != COEFF or len(src) != 3:
                    raise WiringError(f"node {node.name!r} input {k}: bad source {src!r}")
                up = seen.get(src[1])
                if up is None:
                    raise WiringError(f"node {node.name!r} input {k}: unknown or later node {src[1]!r}")
                if not 0 <= int(src[2]) < up.emulator.q:
                    raise WiringError(f"node {node.name!r} input {k}: {src[1]!r} has no coefficient {src[2]}")
                upstream.add(src[1])
            if len({tuple(s) for s in node.inputs}) != len(node.inputs):
                raise WiringError(f"node {node.name!r}: a source is wired twice")
            for up in upstream:
                tag = seen[up].emulator.basis.checksum()
                if tag not in em.provenance:
                    raise WiringError(
                        f"node {node.name!r} was not trained on coefficients of {up!r}'s basis")
            seen[node.name] = node
        for node in nodes:
            for k, src in enumerate(node.inputs):
                if src[0] == GLOBAL and src[1] in seen:
                    raise WiringError(f"global input {src[1]!r} clashes with a node name")

    @classmethod
    def two_layer(cls, layer1: MvEmulator, layer2: MvEmulator, wiring) -> "LinkedNetwork":
        """Two-layer network.

        ``wiring[k]`` is an int (layer-1 coefficient index) or a str (the
        name of an exogenous input) for layer-2 input dimension ``k``.
        """
        n1 = Node("layer1", layer1, tuple((GLOBAL, nm) for nm in layer1.domain.names))
        inputs = []
        for w in wiring:
            if isinstance(w, str):
                inputs.append((GLOBAL, w))
            else:
                inputs.append((COEFF, "layer1", int(w)))
        return cls((n1, Node("layer2", layer2, tuple(inputs))))

    @property
    def output(self) -> Node:
        return self.nodes[-1]

    @property
    def layer1(self) -> MvEmulator:
        return self.nodes[0].emulator

    @property
    def layer2(self) -> MvEmulator:
        return self.nodes[-1].emulator

    @property
    def global_inputs(self) -> list[str]:
        names = []
        for node in self.nodes:
            for src in node.inputs:
                if src[0] == GLOBAL and src[1] not in names:
                    names.append(src[1])
        return names

    def to_dict(self) -> dict:
        return {"nodes": [
            {"name": n.name, "inputs": [list(s) for s in n.inputs], "emulator": n.emulator.to_dict()}
            for n in self.nodes
        ]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "LinkedNetwork":
        return cls(tuple(
            Node(n["name"], MvEmulator.from_dict(n["emulator"]),
                 tuple((s[0], s[1], int(s[2])) if s[0] == COEFF else tuple(s) for s in n["inputs"]))
            for n in d["nodes"]
        ))

    @classmethod
    def from_json(cls, text: str) -> "LinkedNetwork":
        return cls.from_dict(json.loads(text))

    def checksum(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def _resolve_inputs(net: LinkedNetwork, x1, z) -> dict[str, float]:
    if isinstance(x1, dict):
        values = dict(x1)
    else:
        values = dict(zip(net.nodes[0].emulator.domain.names, np.atleast_1d(x1).tolist()))
        exo = [n for n in net.global_inputs if n not in values]
        zz = np.atleast_1d(np.asarray([] if z is None else z, dtype=float))
        if len(zz) != len(exo):
            raise WiringError(f"expected {len(exo)} exogenous values for {exo}, got {len(zz)}")
        values.update(zip(exo, zz.tolist()))
    missing = [n for n in net.global_inputs if n not in values]
    if missing:
        raise WiringError(f"missing network inputs {missing}")
    return values


def _node_input_moments(node: Node, values, coeffs, with_variance: bool):
    dom = node.emulator.domain
    lo, span = dom.lower, dom.upper - dom.lower
    mean = np.empty(dom.p)
    var = np.zeros(dom.p)
    for k, src in enumerate(node.inputs):
        if src[0] == GLOBAL:
            mean[k] = values[src[1]]
        else:
            g = coeffs[src[1]]
            mean[k] = g.means[src[2]]
            if with_variance:
                var[k] = g.variances[src[2]]
    return (mean - lo) / span, var / span**2


def _propagate(net: LinkedNetwork, x1, z, with_variance: bool):
    values = _resolve_inputs(net, x1, z)
    coeffs: dict[str, GaussianVector] = {}
    for node in net.nodes:
        mean, var = _node_input_moments(node, values, coeffs, with_variance)
        models = node.emulator.coeff_models
        if np.all(var == 0):
            preds = [m.predict_unit(mean[None, :]) for m in models]
            coeffs[node.name] = GaussianVector([p[0][0] for p in preds], [p[1][0] for p in preds])
        else:
            coeffs[node.name] = linked_moments(list(models), mean, var)
    out = coeffs[net.output.name]
    mean, var = reconstruct_moments(net.output.emulator.basis, out)
    return out, mean, var


def linked_predict(net: LinkedNetwork, x1, z=None) -> tuple[GaussianVector, np.ndarray, np.ndarray]:
    """Closed-form output moments of the network.

    ``x1`` holds the first node's inputs in domain order (or a dict of all
    named network inputs, in which case ``z`` is ignored); ``z`` holds the
    remaining exogenous inputs in :attr:`LinkedNetwork.global_inputs` order.
    Returns the output node's coefficient moments (with their covariance)
    and the reconstructed output mean and variance.
    """
    return _propagate(net, x1, z, with_variance=True)


def composed_predict(net: LinkedNetwork, x1, z=None) -> tuple[GaussianVector, np.ndarray, np.ndarray]:
    """Output moments when upstream coefficients are fixed at their means."""
    return _propagate(net, x1, z, with_variance=False)


@dataclass(frozen=True)
class McResult:
    mean: np.ndarray
    variance: np.ndarray
    mean_se: np.ndarray
    variance_se: np.ndarray
    n_samples: int
    coeff_samples: np.ndarray


def mc_propagate(net: LinkedNetwork, x1, z=None, n_samples: int = 100_000, seed: int = 0) -> McResult:
    """Monte Carlo push-through of the network.

    Each node's coefficients are drawn from independent Gaussians with the
    node's GP predictive moments evaluated at sampled upstream values. The
    output node's truncation residual is added to the variance analytically.
    """
    if n_samples < 100:
        raise ValueError("n_samples must be >= 100")
    values = _resolve_inputs(net, x1, z)
    rng = np.random.default_rng(seed)
    samples: dict[str, np.ndarray] = {}
    for node in net.nodes:
        dom = node.emulator.domain
        lo, span = dom.lower, dom.upper - dom.lower
        U = np.empty((n_samples, dom.p))
        for k, src in enumerate(node.inputs):
            U[:, k] = values[src[1]] if src[0] == GLOBAL else samples[src[1]][:, src[2]]
        U = (U - lo) / span
        q = node.emulator.q
        C = np.empty((n_samples, q))
        eps = rng.standard_normal((n_samples, q))
        for i, m in enumerate(node.emulator.coeff_models):
            if all(src[0] == GLOBAL for src in node.inputs):
                mu, v = m.predict_unit(U[:1])
            else:
                mu, v = m.predict_unit(U)
            C[:, i] = mu + np.sqrt(v) * eps[:, i]
        samples[node.name] = C
    basis = net.output.emulator.basis
    C = samples[net.output.name]
    Y = basis.mean + basis.scale * C @ basis.gamma.T
    mean = Y.mean(axis=0)
    dev = Y - mean
    var = (dev**2).sum(axis=0) / (n_samples - 1)
    m4 = (dev**4).mean(axis=0)
    return McResult(
        mean,
        var + basis.residual_var,
        np.sqrt(var / n_samples),
        np.sqrt(np.maximum(m4 - var**2, 0.0) / n_samples),
        n_samples,
        C,
    )


def projection_csv(years, results: dict) -> str:
    """One row per year; columns ``<method>_mean, _sd, _lower_2sd, _upper_2sd``.

    ``results`` maps method name to ``(mean, variance)`` or
    ``(mean, variance, mean_se)``; a Monte Carlo standard error adds a
    ``<method>_mean_se`` column.
    """
    header = ["year"]
    cols = [np.asarray(years, dtype=int)]
    for method, res in results.items():
        mean, sd = np.asarray(res[0], dtype=float), np.sqrt(np.asarray(res[1], dtype=float))
        header += [f"{method}_{k}" for k in ("mean", "sd", "lower_2sd", "upper_2sd")]
        cols += [mean, sd, mean - 2 * sd, mean + 2 * sd]
        if len(res) > 2:
            header.append(f"{method}_mean_se")
            cols.append(np.asarray(res[2], dtype=float))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for k in range(len(cols[0])):
        w.writerow([int(cols[0][k])] + [f"{c[k]:.17g}" for c in cols[1:]])
    return buf.getvalue()
