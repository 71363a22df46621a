"""Per-driver state and real-time individual-effect prediction.

Given population parameters and one driver's accumulated events, the
driver's coefficient offsets are predicted by empirical-Bayes shrinkage:

    gamma_hat = Sigma_gamma @ X' @ V^-1 @ (y - X beta),
    V = X @ Sigma_gamma @ X' + sigma2 * I,

together with the covariance of the predictor and the prediction-error
covariance of (beta_hat + gamma_hat) - (beta + gamma), which feeds the
conservative variance downstream. Each new event invalidates the cached
result and the next query recomputes from scratch; the n x n solve is
the dominant cost and n stays small (history is windowed), so no
incremental covariance updates are attempted.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .model import Observation, build_design
from .numerics import NotPositiveDefinite, spd_solve

DEFAULT_MAX_HISTORY = 500

# Prediction-error covariances this far below PSD are clipped; anything
# worse is a genuine inconsistency in the supplied model and raises.
_PSD_CLIP_FLOOR = -1e-8


class DriverMismatch(ValueError):
    """Raised when an observation's driver id does not match the state."""


@dataclass(eq=False)
class BlupResult:
    """Predicted individual offsets with their uncertainty.

    ``gamma_hat_cov`` estimates Cov of the predictor itself;
    ``pred_err_cov`` estimates Cov((beta_hat + gamma_hat) - (beta + gamma)).
    """

    gamma_hat: np.ndarray
    gamma_hat_cov: np.ndarray
    pred_err_cov: np.ndarray


@dataclass(eq=False)
class DriverState:
    """One driver's accumulated events plus a cached prediction.

    Single writer: callers must serialize add_observation/compute_blup
    on the same state. Distinct drivers are independent.
    """

    driver_id: str
    observations: list = field(default_factory=list)
    max_history: int = DEFAULT_MAX_HISTORY
    cached: BlupResult | None = None

    @property
    def n(self):
        return len(self.observations)


def add_observation(state, obs):
    """Append an event to the driver's history.

    Invalidates any cached prediction. When the history exceeds the
    window, the oldest events are evicted first.

    Raises:
        DriverMismatch: if obs.driver_id differs from the state's.
    """
    if obs.driver_id != state.driver_id:
        raise DriverMismatch(
            f"observation for {obs.driver_id!r} added to state of {state.driver_id!r}"
        )
    state.observations.append(obs)
    if len(state.observations) > state.max_history:
        del state.observations[: len(state.observations) - state.max_history]
    state.cached = None
    return state


def _clip_to_psd(m):
    """Symmetrize and clip tiny negative eigenvalues of a covariance.

    Plug-in estimates can drift just below PSD through rounding; a
    minimum eigenvalue in (_PSD_CLIP_FLOOR, 0) is clipped to zero, a
    larger violation raises NotPositiveDefinite.
    """
    m = 0.5 * (m + m.T)
    eigvals, eigvecs = np.linalg.eigh(m)
    if eigvals[0] >= 0.0:
        return m
    if eigvals[0] <= _PSD_CLIP_FLOOR:
        raise NotPositiveDefinite(
            f"prediction-error covariance has eigenvalue {eigvals[0]:.3e}"
        )
    clipped = (eigvecs * np.maximum(eigvals, 0.0)) @ eigvecs.T
    return 0.5 * (clipped + clipped.T)


def compute_blup(state, model):
    """Predict the driver's coefficient offsets from the current history.

    With no data the prediction is the zero vector: the individual's
    estimated mean equals the population mean, the predictor covariance
    is zero, and the individual-effect uncertainty is Sigma_gamma itself
    (no numerical work is performed). With data, the plug-in formulas
    use the population estimates as-is; the population is never refit.

    The result is cached on the state and reused until the next event.
    """
    if state.cached is not None:
        return state.cached

    p = model.spec.p
    sg = model.sigma_gamma
    if state.n == 0:
        result = BlupResult(
            gamma_hat=np.zeros(p),
            gamma_hat_cov=np.zeros((p, p)),
            pred_err_cov=sg.copy(),
        )
        state.cached = result
        return result

    X, y = build_design(model.spec, state.observations)
    resid = y - X @ model.beta
    V = X @ sg @ X.T + model.sigma2 * np.eye(state.n)
    V = 0.5 * (V + V.T)

    # One factorization serves both solves: V^-1 [X | r].
    W = spd_solve(V, np.column_stack([X, resid]))
    gamma_hat = sg @ (X.T @ W[:, p])

    info = X.T @ W[:, :p]  # X' V^-1 X
    info = 0.5 * (info + info.T)
    sg_info = sg @ info
    gamma_hat_cov = sg_info @ sg - sg_info @ model.beta_cov @ sg_info.T
    gamma_hat_cov = 0.5 * (gamma_hat_cov + gamma_hat_cov.T)

    cross = model.beta_cov @ sg_info.T  # Cov(beta_hat, gamma')
    pred_err = model.beta_cov + (sg - gamma_hat_cov) - cross - cross.T
    pred_err = _clip_to_psd(pred_err)

    result = BlupResult(gamma_hat=gamma_hat, gamma_hat_cov=gamma_hat_cov, pred_err_cov=pred_err)
    state.cached = result
    return result


def henderson_oracle(state, model):
    """Independent prediction of the driver offsets via the mixed-model
    normal equations; test and diagnostic use only.

    Solves ``(X'X / sigma2 + Sigma_gamma^-1) gamma = X' r / sigma2``
    restricted to the range space of Sigma_gamma (the pseudo-inverse
    convention), which never forms the n x n marginal covariance, so it
    exercises a different numerical path than compute_blup.

    Requires at least one observation.
    """
    if state.n == 0:
        raise ValueError("henderson_oracle requires at least one observation")
    X, y = build_design(model.spec, state.observations)
    resid = y - X @ model.beta
    sg = model.sigma_gamma

    eigvals, eigvecs = np.linalg.eigh(sg)
    cutoff = sg.shape[0] * max(float(eigvals[-1]), 0.0) * 1e-12
    keep = eigvals > cutoff
    if not np.any(keep):
        return np.zeros(model.spec.p)
    basis = eigvecs[:, keep]
    lam = eigvals[keep]

    Xb = X @ basis
    lhs = Xb.T @ Xb / model.sigma2 + np.diag(1.0 / lam)
    rhs = Xb.T @ resid / model.sigma2
    w = spd_solve(0.5 * (lhs + lhs.T), rhs)
    return basis @ w


def state_to_dict(state, registry):
    """JSON-ready dict for a driver state file."""
    doc = {
        "driver_id": state.driver_id,
        "observations": [
            {
                "driver_id": o.driver_id,
                "stimulus": registry.name_of(o.stimulus),
                "headway_s": o.headway_s,
                "brt_s": o.brt_s,
            }
            for o in state.observations
        ],
    }
    if state.cached is not None:
        doc["cached"] = {
            "gamma_hat": state.cached.gamma_hat.tolist(),
            "gamma_hat_cov": state.cached.gamma_hat_cov.tolist(),
            "pred_err_cov": state.cached.pred_err_cov.tolist(),
        }
    return doc


def state_from_dict(doc, registry):
    state = DriverState(driver_id=doc["driver_id"])
    for rec in doc.get("observations", []):
        obs = Observation(
            driver_id=rec["driver_id"],
            stimulus=registry.id_of(rec["stimulus"]),
            headway_s=float(rec["headway_s"]),
            brt_s=float(rec["brt_s"]),
        )
        add_observation(state, obs)
    cached = doc.get("cached")
    if cached is not None:
        state.cached = BlupResult(
            gamma_hat=np.array(cached["gamma_hat"], dtype=float),
            gamma_hat_cov=np.array(cached["gamma_hat_cov"], dtype=float),
            pred_err_cov=np.array(cached["pred_err_cov"], dtype=float),
        )
    return state


def save_driver_state(state, registry, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(state_to_dict(state, registry), fh, indent=2)
        fh.write("\n")


def load_driver_state(path, registry):
    with open(path, "r", encoding="utf-8") as fh:
        return state_from_dict(json.load(fh), registry)
