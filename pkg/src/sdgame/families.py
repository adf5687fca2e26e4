"""Built-in coefficient families and scenario config parsing.

A scenario config is a YAML mapping::

    scenario:
      family: example81        # constant | example81 | matching-pennies | single-player | heat
      params: {alpha: 0.3, a: 0.5}
    horizon: 1.0
    controls:
      U: {lo: -1, hi: 1, n: 5}  # or {points: [-1, 1]}
      V: {lo: -2, hi: 2, n: 5}
    bounds: {C0: 2.0, L0: 0.0}  # optional overrides
    grid: {resolution: [101, 101], n_t: null, reach: null, refine: true}
    augmentation: {kind: running-max, lo: -3, hi: 3, n: 31, payoff_weight: 1.0}
    seed: 0
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from .model import Augmentation, Coefficients, ControlSet, GameSpec, SpecError


class UnknownFamilyError(SpecError):
    pass


def _const_matrix(value, d):
    m = np.asarray(value, dtype=float)
    if m.ndim == 0:
        m = m * np.eye(d)
    elif m.ndim == 1:
        m = np.diag(m)
    if m.shape != (d, d):
        raise SpecError(f"sigma must be a scalar, a {d}-vector or a {d}x{d} matrix")
    m.setflags(write=False)
    return m


def _const_vector(value, d):
    b = np.broadcast_to(np.asarray(value, dtype=float), (d,)).copy()
    b.setflags(write=False)
    return b


def make_payoff(cfg, d: int, reach: float):
    """Terminal payoff from a small descriptor; returns (xi, lipschitz_const, sup_on_box)."""
    if cfg is None:
        cfg = {"kind": "const", "c": 0.0}
    if isinstance(cfg, (int, float)):
        cfg = {"kind": "const", "c": float(cfg)}
    kind = cfg.get("kind", "const")
    c = cfg.get("c", 0.0 if kind == "const" else 1.0)
    if kind == "const":
        val = float(c)
        return (lambda x: np.full(np.shape(x)[:-1], val)), 0.0, abs(val)
    if kind == "square":
        return (lambda x: c * np.sum(x[..., :d] ** 2, axis=-1)), 2 * abs(c) * reach * d, abs(c) * d * reach**2
    if kind == "abs":
        return (lambda x: c * np.abs(x[..., 0])), abs(c), abs(c) * reach
    if kind == "neg-abs":
        return (lambda x: -c * np.abs(x[..., 0])), abs(c), abs(c) * reach
    if kind == "cos":
        return (lambda x: c * np.cos(x[..., 0])), abs(c), abs(c)
    if kind == "linear":
        w = _const_vector(c, d)
        return (lambda x: x[..., :d] @ w), float(np.abs(w).sum()), float(np.abs(w).sum()) * reach
    raise SpecError(f"unknown payoff kind {kind!r}")


def _controls(cfg, name, default):
    if cfg is None:
        return default
    if "points" in cfg:
        return ControlSet(np.asarray(cfg["points"], dtype=float), name=name)
    return ControlSet.grid(float(cfg["lo"]), float(cfg["hi"]), int(cfg["n"]), name=name)


def constant_family(params, T, U, V, bounds):
    """Coefficients constant in (t, u, v); the driver is affine in (y, zhat)."""
    d = int(params.get("d", 1))
    sig = _const_matrix(params.get("sigma", 1.0), d)
    b = _const_vector(params.get("b", 0.0), d)
    f_const = float(params.get("f_const", 0.0))
    f_y = float(params.get("f_y", 0.0))
    f_z = _const_vector(params.get("f_z", 0.0), d)
    reach = params.get("reach")
    xi, lip, xi_sup = make_payoff(params.get("xi"), d, reach if reach is not None else 4.0)
    f = None
    if f_const or f_y or np.any(f_z):
        def f(t, x, y, zhat, u, v):
            return f_const + f_y * y + sum(zhat[..., i] * f_z[i] for i in range(d))
    C0 = max(1.0, float(np.abs(sig).max()), float(np.abs(b).max()), abs(f_const), xi_sup)
    L0 = max(abs(f_y), float(np.linalg.norm(f_z)))
    coeffs = Coefficients(sigma=lambda t, u, v: sig, b=lambda t, u, v: b, xi=xi, f=f,
                          C0=bounds.get("C0", C0), L0=bounds.get("L0", L0),
                          rho0=("lipschitz", lip), f_uses_z=bool(np.any(f_z)))
    return GameSpec(d, T, U or ControlSet([0.0], name="U"), V or ControlSet([0.0], name="V"),
                    coeffs, reach=reach, family="constant")


def example81_family(params, T, U, V, bounds):
    """Two players steer one coordinate each; payoff |a + x1 - x2|.

    The state is alpha * B + int (u, v) ds, so the effective drift is given
    directly. The payoff is capped at ``cap`` (default C0) to keep it bounded;
    the cap sits far beyond where the value lives for |a| <= T.
    """
    alpha = float(params.get("alpha", 0.3))
    a = float(params.get("a", 0.5))
    C0 = float(bounds.get("C0", 2.0))
    cap = params.get("cap", C0)
    sig = alpha * np.eye(2)
    sig.setflags(write=False)

    def drift(t, u, v):
        return np.array([float(u), float(v)])

    def b(t, u, v):
        if alpha == 0:
            raise SpecError("b = sigma^-1 * drift is undefined for alpha = 0")
        return np.array([float(u), float(v)]) / alpha

    def xi(x):
        w = np.abs(a + x[..., 0] - x[..., 1])
        return w if cap is None else np.minimum(w, cap)

    U = U or ControlSet.grid(-1.0, 1.0, int(params.get("n_u", 5)), name="U")
    V = V or ControlSet.grid(-2.0, 2.0, int(params.get("n_v", 5)), name="V")
    coeffs = Coefficients(sigma=lambda t, u, v: sig, b=b, drift=drift, xi=xi, f=None, C0=C0,
                          L0=float(bounds.get("L0", 0.0)), rho0=("lipschitz", 2.0))
    return GameSpec(2, T, U, V, coeffs, reach=params.get("reach"), family="example81",
                    params={"alpha": alpha, "a": a, "cap": cap})


def matching_pennies_family(params, T, U, V, bounds):
    """Driver f = u * v with U = V = {-1, 1}: the Hamiltonians differ by 2."""
    d = int(params.get("d", 1))
    sig = _const_matrix(params.get("sigma", 1.0), d)
    zero = np.zeros(d)
    reach = params.get("reach")
    xi, lip, xi_sup = make_payoff(params.get("xi"), d, reach if reach is not None else 4.0)

    def f(t, x, y, zhat, u, v):
        return np.full(np.shape(y), float(u) * float(v))

    U = U or ControlSet([-1.0, 1.0], name="U")
    V = V or ControlSet([-1.0, 1.0], name="V")
    C0 = max(1.0, float(np.abs(sig).max()), xi_sup,
             float(np.max(np.abs(np.outer(U.points, V.points)))))
    coeffs = Coefficients(sigma=lambda t, u, v: sig, b=lambda t, u, v: zero, xi=xi, f=f,
                          C0=bounds.get("C0", C0), L0=bounds.get("L0", 0.0), rho0=("lipschitz", lip))
    return GameSpec(d, T, U, V, coeffs, reach=reach, family="matching-pennies")


def single_player_family(params, T, U, V, bounds):
    """One player controls the drift sign; payoff -|x| by default."""
    sigma = float(params.get("sigma", 1.0))
    reach = float(params.get("reach", 4.0))
    xi, lip, xi_sup = make_payoff(params.get("xi", {"kind": "neg-abs"}), 1, reach)
    sig = np.array([[sigma]])
    sig.setflags(write=False)

    def b(t, u, v):
        return np.array([float(u) / sigma])

    U = U or ControlSet([-1.0, 1.0], name="U")
    V = V or ControlSet([0.0], name="V")
    C0 = max(1.0, sigma, float(np.abs(U.points).max()) / sigma, xi_sup)
    coeffs = Coefficients(sigma=lambda t, u, v: sig, b=b, xi=xi, f=None,
                          C0=bounds.get("C0", C0), L0=bounds.get("L0", 0.0), rho0=("lipschitz", lip))
    return GameSpec(1, T, U, V, coeffs, reach=reach, family="single-player",
                    params={"sigma": sigma})


def heat_family(params, T, U, V, bounds):
    """No control, sigma = 1, zero drift and driver; payoff x^2 by default."""
    d = int(params.get("d", 1))
    reach = float(params.get("reach", 5.0))
    sigma = float(params.get("sigma", 1.0))
    xi, lip, xi_sup = make_payoff(params.get("xi", {"kind": "square"}), d, reach)
    sig = sigma * np.eye(d)
    sig.setflags(write=False)
    zero = np.zeros(d)
    coeffs = Coefficients(sigma=lambda t, u, v: sig, b=lambda t, u, v: zero, xi=xi, f=None,
                          C0=bounds.get("C0", 1.0 + xi_sup), L0=bounds.get("L0", 0.0),
                          rho0=("lipschitz", lip))
    return GameSpec(d, T, U or ControlSet([0.0], name="U"), V or ControlSet([0.0], name="V"),
                    coeffs, reach=reach, family="heat", params={"sigma": sigma})


FAMILIES = {
    "constant": constant_family,
    "example81": example81_family,
    "matching-pennies": matching_pennies_family,
    "single-player": single_player_family,
    "heat": heat_family,
}


def spec_from_config(cfg: dict) -> GameSpec:
    scen = cfg.get("scenario") or {}
    name = scen.get("family")
    if name not in FAMILIES:
        raise UnknownFamilyError(f"unknown scenario family {name!r}; choose from {sorted(FAMILIES)}")
    params = dict(scen.get("params") or {})
    T = float(cfg.get("horizon", 1.0))
    controls = cfg.get("controls") or {}
    U = _controls(controls.get("U"), "U", None)
    V = _controls(controls.get("V"), "V", None)
    bounds = dict(cfg.get("bounds") or {})
    spec = FAMILIES[name](params, T, U, V, bounds)
    merged = dict(spec.params)
    merged.update(params)
    changes = {"params": merged}
    aug = cfg.get("augmentation")
    if aug:
        changes["augmentation"] = Augmentation(
            kind=aug["kind"], lo=float(aug["lo"]), hi=float(aug["hi"]), n=int(aug.get("n", 41)),
            axis=int(aug.get("axis", 0)), payoff_weight=float(aug.get("payoff_weight", 1.0)))
    if "x0" in cfg:
        changes["x0"] = tuple(float(x) for x in cfg["x0"])
    return replace(spec, **changes)


def load_config(path) -> dict:
    """Read a scenario YAML file; a run manifest (JSON) re-parses to its config."""
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise SpecError(f"{path}: config must be a mapping")
    if "config" in data and "subcommand" in data:
        data = data["config"]
    return data


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply ``dotted.key=value`` overrides; values are parsed as YAML scalars."""
    out = copy.deepcopy(cfg)
    for item in overrides or ():
        key, sep, raw = item.partition("=")
        if not sep:
            raise SpecError(f"override {item!r} is not key=value")
        node = out
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = yaml.safe_load(raw)
    return out


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def builtin_config(family: str, **params) -> dict:
    """Default config dict for a built-in family (used by tests and the CLI)."""
    defaults = {
        "example81": {"resolution": [101, 101]},
        "heat": {"resolution": [201]},
        "single-player": {"resolution": [161]},
        "matching-pennies": {"resolution": [81]},
        "constant": {"resolution": [41]},
    }
    return {"scenario": {"family": family, "params": params}, "horizon": 1.0,
            "grid": dict(defaults.get(family, {"resolution": [41]})), "seed": 0}
