"""Logistic mixed model with crossed server and returner intercepts.

The model for one serve type is

    logit P(y_i = 1) = X_i beta + u[server(i)] + v[returner(i)],
    u ~ N(0, sigma2),  v ~ N(0, tau2).

For fixed variance components the fixed effects and the random intercepts are
found jointly by penalized iteratively reweighted least squares (PIRLS). The
random effects are carried internally on the spherical scale ``u = sigma * a``,
``v = tau * c`` so the penalty is ``(|a|^2 + |c|^2) / 2`` and the Newton system
stays well conditioned as a component approaches zero.

The marginal likelihood is approximated by Laplace's method at the joint mode:

    ell_lap(sigma2, tau2) = ell_pen(beta, u, v) - 1/2 log det(I + L Z'WZ L)

where ``ell_pen`` is the Bernoulli log-likelihood minus the Gaussian penalty,
``L = diag(sigma, ..., tau, ...)`` and W holds the logistic weights at the
mode. This is the exact Laplace approximation (no constants dropped), so it
tends to the plain logistic log-likelihood as both variances go to zero.
The variance components are then chosen by Nelder-Mead on their logs.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.special import expit

from .features import ServerFeatures
from .ingest import LocationBin, PointRecord

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-8
VARIANCE_CEILING = 1e2
INNER_TOL = 1e-8
INNER_MAXITER = 200
OUTER_TOL = 1e-5
OUTER_MAXITER = 500
START_VARIANCE = 0.25


class GlmmError(Exception):
    pass


class NoPoints(GlmmError):
    pass


class RankDeficientX(GlmmError):
    pass


class NotConverged(UserWarning):
    pass


class DegenerateVariance(UserWarning):
    pass


class SingularBlock(UserWarning):
    pass


@dataclass(frozen=True)
class VarianceComponents:
    sigma2: float
    tau2: float

    def __post_init__(self):
        for name in ("sigma2", "tau2"):
            x = getattr(self, name)
            if not (math.isfinite(x) and x >= 0):
                raise ValueError(f"{name} must be finite and non-negative, got {x}")

    def floored(self) -> "VarianceComponents":
        return VarianceComponents(max(self.sigma2, VARIANCE_FLOOR), max(self.tau2, VARIANCE_FLOOR))


@dataclass
class DesignMatrix:
    y: np.ndarray
    X: np.ndarray
    server_index: np.ndarray
    returner_index: np.ndarray
    server_labels: list
    returner_labels: list
    column_names: list
    reference_loc: Optional[LocationBin] = None
    loc_levels: list = field(default_factory=list)
    excluded_points: int = 0

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.server_index = np.asarray(self.server_index, dtype=np.intp)
        self.returner_index = np.asarray(self.returner_index, dtype=np.intp)
        n = len(self.y)
        if not (self.X.shape[0] == len(self.server_index) == len(self.returner_index) == n):
            raise ValueError("y, X and the index vectors must have the same number of rows")
        if self.X.shape[1] != len(self.column_names):
            raise ValueError("column_names does not match X")
        if n and not (0 <= self.server_index.min() and self.server_index.max() < len(self.server_labels)):
            raise ValueError("server_index out of range")
        if n and self.returner_labels and not (
                0 <= self.returner_index.min() and self.returner_index.max() < len(self.returner_labels)):
            raise ValueError("returner_index out of range")

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def n_servers(self) -> int:
        return len(self.server_labels)

    @property
    def n_returners(self) -> int:
        return len(self.returner_labels)


def loc_column(loc: LocationBin) -> str:
    return f"loc[{loc}]"


def build_design(points: Iterable[PointRecord], features: Sequence[ServerFeatures], serve_type: int,
                 reference: Optional[LocationBin] = None) -> DesignMatrix:
    """Assemble the point-level design for one serve type.

    Points whose server has no feature row (filtered out for too few serves)
    are excluded and counted in ``excluded_points``. The returner index covers
    every returner in the retained points.
    """
    feats = {f.server: f for f in features if f.serve_type == serve_type}
    for f in feats.values():
        if f.avg_speed_z is None:
            raise ValueError("features must be standardized before building the design")
    pts = [p for p in points if p.serve_type == serve_type]
    kept = [p for p in pts if p.server in feats]
    excluded = len(pts) - len(kept)
    if not kept:
        raise NoPoints(f"no serve-type-{serve_type} points for servers with features")
    if excluded:
        logger.info("excluded %d points from servers without features", excluded)

    servers = sorted({p.server for p in kept})
    returners = sorted({p.returner for p in kept})
    s_pos = {s: i for i, s in enumerate(servers)}
    r_pos = {r: i for i, r in enumerate(returners)}

    modal = Counter(feats[s].modal_loc for s in servers)
    if reference is None:
        top = max(modal.values())
        reference = min(b for b, c in modal.items() if c == top)
    levels = sorted(b for b in modal if b != reference)
    if reference not in modal:
        # an unused reference leaves every level as its own column
        logger.info("reference level %s is not a modal bin of any server", reference)

    columns = ["intercept", "avg_speed_z", "sd_speed_z"] + [loc_column(b) for b in levels] + ["loc_entropy_z"]
    rows = np.zeros((len(servers), len(columns)))
    for i, s in enumerate(servers):
        f = feats[s]
        rows[i, 0] = 1.0
        rows[i, 1] = f.avg_speed_z
        rows[i, 2] = f.sd_speed_z
        if f.modal_loc != reference:
            rows[i, 3 + levels.index(f.modal_loc)] = 1.0
        rows[i, -1] = f.loc_entropy_z

    si = np.array([s_pos[p.server] for p in kept], dtype=np.intp)
    ri = np.array([r_pos[p.returner] for p in kept], dtype=np.intp)
    X = rows[si]
    empty = [j for j in range(3, 3 + len(levels)) if not X[:, j].any()]
    if empty:
        warnings.warn(f"dropping empty location columns {[columns[j] for j in empty]}", SingularBlock,
                      stacklevel=2)
        keep = [j for j in range(len(columns)) if j not in empty]
        X = X[:, keep]
        levels = [b for k, b in enumerate(levels) if 3 + k not in empty]
        columns = [columns[j] for j in keep]
    y = np.array([p.efficient for p in kept], dtype=float)
    return DesignMatrix(y, X, si, ri, servers, returners, columns, reference, levels, excluded)


# ---------------------------------------------------------------------------
# inner problem


@dataclass
class PirlsResult:
    beta: np.ndarray
    u: np.ndarray
    v: np.ndarray
    penalized_loglik: float
    loglik: float
    weights: np.ndarray
    logdet: float
    beta_cov: np.ndarray
    converged: bool
    iterations: int
    score_norm: float
    history: list
    separation: bool = False


class _Workspace:
    """Sparse incidence structure shared by every PIRLS call on one design."""

    def __init__(self, design: DesignMatrix):
        self.d = design
        n, J, K = design.n, design.n_servers, design.n_returners
        self.n, self.p, self.J, self.K = n, design.X.shape[1], J, K
        rows = np.arange(n)
        ones = np.ones(n)
        self.Zs = sp.csr_matrix((ones, (rows, design.server_index)), shape=(n, J))
        # K == 0 drops the returner block (single random intercept model)
        self.Zr = sp.csr_matrix((ones, (rows, design.returner_index)), shape=(n, K)) if K else None
        # eliminate the larger diagonal random block first
        self.servers_first = J >= K

    def eta(self, beta, a, c, sigma, tau):
        d = self.d
        out = d.X @ beta + sigma * a[d.server_index]
        if self.K:
            out += tau * c[d.returner_index]
        return out

    def objective(self, beta, a, c, sigma, tau):
        eta = self.eta(beta, a, c, sigma, tau)
        ll = float(np.dot(self.d.y, eta) - np.logaddexp(0.0, eta).sum())
        return ll - 0.5 * float(a @ a + c @ c), ll, eta

    def gradient(self, eta, a, c, sigma, tau):
        d = self.d
        r = d.y - expit(eta)
        gb = d.X.T @ r
        ga = sigma * np.bincount(d.server_index, r, minlength=self.J) - a
        gc = tau * np.bincount(d.returner_index, r, minlength=self.K) - c if self.K else np.zeros(0)
        return gb, ga, gc

    def blocks(self, eta, sigma, tau):
        d = self.d
        mu = expit(eta)
        w = mu * (1.0 - mu)
        Xw = d.X * w[:, None]
        Hbb = d.X.T @ Xw
        Hba = sigma * np.asarray(self.Zs.T @ Xw).T
        daa = sigma * sigma * np.bincount(d.server_index, w, minlength=self.J) + 1.0
        if self.K:
            Hbc = tau * np.asarray(self.Zr.T @ Xw).T
            dcc = tau * tau * np.bincount(d.returner_index, w, minlength=self.K) + 1.0
            Hac = sigma * tau * sp.coo_matrix((w, (d.server_index, d.returner_index)),
                                              shape=(self.J, self.K)).toarray()
        else:
            Hbc, dcc, Hac = np.zeros((self.p, 0)), np.zeros(0), np.zeros((self.J, 0))
        return w, Hbb, Hba, Hbc, daa, dcc, Hac

    def factor(self, blocks):
        """Schur-complement factorization of the negative penalized Hessian.

        The larger random block is diagonal and is eliminated first; the
        remaining dense system holds the fixed effects and the other random
        block.
        """
        w, Hbb, Hba, Hbc, daa, dcc, Hac = blocks
        p = self.p
        if self.servers_first:
            D, B_fix, B_oth, Doth, cross = daa, Hba, Hbc, dcc, Hac
        else:
            D, B_fix, B_oth, Doth, cross = dcc, Hbc, Hba, daa, Hac.T
        # B = rows of the kept system coupled to the eliminated block
        B = np.vstack([B_fix, cross.T])
        m = len(Doth)
        C = np.zeros((p + m, p + m))
        C[:p, :p] = Hbb
        C[:p, p:] = B_oth
        C[p:, :p] = B_oth.T
        C[p:, p:] = np.diag(Doth)
        S = C - (B / D) @ B.T
        S = 0.5 * (S + S.T)
        chol = sla.cho_factor(S, lower=True)
        S_oth = S[p:, p:]
        if m:
            logdet = float(np.log(D).sum() + 2.0 * np.log(np.diag(np.linalg.cholesky(S_oth))).sum())
        else:
            logdet = float(np.log(D).sum())
        return D, B, chol, logdet

    def solve(self, fac, gb, ga, gc):
        D, B, chol, _ = fac
        g_elim, g_oth = (ga, gc) if self.servers_first else (gc, ga)
        rhs = np.concatenate([gb, g_oth]) - B @ (g_elim / D)
        x_rest = sla.cho_solve(chol, rhs)
        x_elim = (g_elim - B.T @ x_rest) / D
        db, d_oth = x_rest[:self.p], x_rest[self.p:]
        return (db, x_elim, d_oth) if self.servers_first else (db, d_oth, x_elim)

    def beta_cov(self, fac):
        _, _, chol, _ = fac
        k = chol[0].shape[0]
        e = np.zeros((k, self.p))
        e[:self.p, :self.p] = np.eye(self.p)
        return sla.cho_solve(chol, e)[:self.p, :]


def _check_rank(X: np.ndarray) -> None:
    rank = np.linalg.matrix_rank(X)
    if rank < X.shape[1]:
        raise RankDeficientX(f"fixed-effect matrix has rank {rank} < {X.shape[1]} columns")


def pirls(design: DesignMatrix, vc: VarianceComponents, start=None, tol: float = INNER_TOL,
          maxiter: int = INNER_MAXITER, _ws: Optional[_Workspace] = None) -> PirlsResult:
    """Jointly maximize the penalized log-likelihood over (beta, u, v) for fixed variances.

    Newton steps with step halving; stops when the largest penalized score
    (on the spherical random-effect scale) falls below ``tol``.
    """
    ws = _ws or _Workspace(design)
    if _ws is None:
        _check_rank(design.X)
    vc = vc.floored()
    sigma, tau = math.sqrt(vc.sigma2), math.sqrt(vc.tau2)
    if start is None:
        beta = np.zeros(ws.p)
        a = np.zeros(ws.J)
        c = np.zeros(ws.K)
    else:
        beta, u0, v0 = (np.array(x, dtype=float) for x in start)
        a, c = u0 / sigma, v0 / tau

    separation = bool(np.all(design.y == design.y[0]))
    pen, ll, eta = ws.objective(beta, a, c, sigma, tau)
    history = [pen]
    converged = False
    it = 0
    gnorm = np.inf
    for it in range(1, maxiter + 1):
        gb, ga, gc = ws.gradient(eta, a, c, sigma, tau)
        gnorm = max(np.abs(gb).max(initial=0.0), np.abs(ga).max(initial=0.0), np.abs(gc).max(initial=0.0))
        if gnorm < tol:
            converged = True
            it -= 1
            break
        fac = ws.factor(ws.blocks(eta, sigma, tau))
        db, da, dc = ws.solve(fac, gb, ga, gc)
        step = 1.0
        for _ in range(40):
            nb, na, nc = beta + step * db, a + step * da, c + step * dc
            new_pen, new_ll, new_eta = ws.objective(nb, na, nc, sigma, tau)
            if new_pen >= pen - 1e-10 * max(1.0, abs(pen)):
                break
            step *= 0.5
        else:
            break
        # a dip within the roundoff allowance is accepted: near the optimum
        # the objective is flat to machine precision while the score is not
        beta, a, c, pen, ll, eta = nb, na, nc, new_pen, new_ll, new_eta
        history.append(pen)

    if not converged:
        gb, ga, gc = ws.gradient(eta, a, c, sigma, tau)
        gnorm = max(np.abs(gb).max(initial=0.0), np.abs(ga).max(initial=0.0), np.abs(gc).max(initial=0.0))
        converged = gnorm < tol
    if np.abs(eta).max() > 30.0:
        separation = True
    if separation:
        converged = False
        warnings.warn("perfect or quasi separation: fitted probabilities at 0 or 1", NotConverged,
                      stacklevel=2)
    elif not converged:
        warnings.warn(f"PIRLS stopped after {it} iterations with score norm {gnorm:.3g}", NotConverged,
                      stacklevel=2)

    blocks = ws.blocks(eta, sigma, tau)
    fac = ws.factor(blocks)
    return PirlsResult(
        beta=beta,
        u=sigma * a,
        v=tau * c,
        penalized_loglik=pen,
        loglik=ll,
        weights=blocks[0],
        logdet=fac[3],
        beta_cov=ws.beta_cov(fac),
        converged=converged,
        iterations=it,
        score_norm=float(gnorm),
        history=history,
        separation=separation,
    )


def _full_eta(design: DesignMatrix, beta, u, v) -> np.ndarray:
    eta = design.X @ beta + u[design.server_index]
    if design.n_returners:
        eta = eta + v[design.returner_index]
    return eta


def penalized_loglik(design: DesignMatrix, vc: VarianceComponents, beta, u, v) -> float:
    """Penalized log-likelihood on the original (u, v) scale."""
    vc = vc.floored()
    eta = _full_eta(design, beta, u, v)
    ll = float(np.dot(design.y, eta) - np.logaddexp(0.0, eta).sum())
    return ll - 0.5 * float(u @ u) / vc.sigma2 - 0.5 * float(v @ v) / vc.tau2


def penalized_score(design: DesignMatrix, vc: VarianceComponents, beta, u, v):
    """Analytic gradient of :func:`penalized_loglik` as one concatenated vector."""
    vc = vc.floored()
    eta = _full_eta(design, beta, u, v)
    r = design.y - expit(eta)
    gb = design.X.T @ r
    gu = np.bincount(design.server_index, r, minlength=design.n_servers) - u / vc.sigma2
    gv = (np.bincount(design.returner_index, r, minlength=design.n_returners) - v / vc.tau2
          if design.n_returners else np.zeros(0))
    return np.concatenate([gb, gu, gv])


def laplace_from_pirls(res: PirlsResult) -> float:
    return res.penalized_loglik - 0.5 * res.logdet


def laplace_objective(design: DesignMatrix, vc: VarianceComponents, start=None,
                      _ws: Optional[_Workspace] = None) -> float:
    """Laplace-approximated marginal log-likelihood at the given variances.

    Equal to the penalized log-likelihood at the joint mode minus half the log
    determinant of ``I + L Z'WZ L``; see the module docstring.
    """
    return laplace_from_pirls(pirls(design, vc, start=start, _ws=_ws))


# ---------------------------------------------------------------------------
# outer problem


@dataclass
class GlmmFit:
    beta: np.ndarray
    beta_se: np.ndarray
    u: np.ndarray
    v: np.ndarray
    vc: VarianceComponents
    laplace_loglik: float
    converged: bool
    n_points: int
    iterations: tuple
    column_names: list
    server_labels: list
    returner_labels: list
    reference_loc: Optional[LocationBin] = None
    loc_levels: list = field(default_factory=list)
    degenerate: tuple = ()
    score_norm: float = 0.0

    def coef(self) -> dict:
        return dict(zip(self.column_names, map(float, self.beta)))

    def server_effects(self) -> dict:
        return dict(zip(self.server_labels, map(float, self.u)))

    def returner_effects(self) -> dict:
        return dict(zip(self.returner_labels, map(float, self.v)))

    def linear_predictor(self, design: DesignMatrix) -> np.ndarray:
        return _full_eta(design, self.beta, self.u, self.v)

    def to_dict(self) -> dict:
        return {
            "column_names": list(self.column_names),
            "beta": [float(b) for b in self.beta],
            "beta_se": [float(s) for s in self.beta_se],
            "variance_components": {"sigma2": self.vc.sigma2, "tau2": self.vc.tau2},
            "laplace_loglik": self.laplace_loglik,
            "converged": bool(self.converged),
            "n_points": self.n_points,
            "iterations": {"outer": self.iterations[0], "inner": self.iterations[1]},
            "score_norm": self.score_norm,
            "degenerate": list(self.degenerate),
            "reference_loc": None if self.reference_loc is None else str(self.reference_loc),
            "loc_levels": [str(b) for b in self.loc_levels],
            "servers": [{"server": s, "u": float(x)} for s, x in zip(self.server_labels, self.u)],
            "returners": [{"returner": r, "v": float(x)} for r, x in zip(self.returner_labels, self.v)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GlmmFit":
        ref = d.get("reference_loc")
        return cls(
            beta=np.array(d["beta"], dtype=float),
            beta_se=np.array(d["beta_se"], dtype=float),
            u=np.array([s["u"] for s in d["servers"]], dtype=float),
            v=np.array([r["v"] for r in d["returners"]], dtype=float),
            vc=VarianceComponents(d["variance_components"]["sigma2"], d["variance_components"]["tau2"]),
            laplace_loglik=d["laplace_loglik"],
            converged=d["converged"],
            n_points=d["n_points"],
            iterations=(d["iterations"]["outer"], d["iterations"]["inner"]),
            column_names=list(d["column_names"]),
            server_labels=[s["server"] for s in d["servers"]],
            returner_labels=[r["returner"] for r in d["returners"]],
            reference_loc=None if ref is None else LocationBin.parse(ref),
            loc_levels=[LocationBin.parse(b) for b in d.get("loc_levels", [])],
            degenerate=tuple(d.get("degenerate", ())),
            score_norm=d.get("score_norm", 0.0),
        )


def fit_glmm(design: DesignMatrix, start: tuple = (START_VARIANCE, START_VARIANCE),
             tol: float = OUTER_TOL, maxiter: int = OUTER_MAXITER) -> GlmmFit:
    """Maximize the Laplace objective over (log sigma2, log tau2) by Nelder-Mead."""
    if design.n_servers < 2 or design.n_returners < 2:
        raise ValueError("need at least two servers and two returners")
    _check_rank(design.X)
    ws = _Workspace(design)
    lo, hi = math.log(VARIANCE_FLOOR), math.log(VARIANCE_CEILING)
    warm = {"start": None}
    cache: dict = {}

    def to_vc(x) -> VarianceComponents:
        s2, t2 = (math.exp(min(max(float(xi), lo), hi)) for xi in x)
        return VarianceComponents(s2, t2)

    def evaluate(vc: VarianceComponents) -> PirlsResult:
        key = (vc.sigma2, vc.tau2)
        if key not in cache:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", NotConverged)
                res = pirls(design, vc, start=warm["start"], _ws=ws)
            if not res.converged:
                # warm start may be poor far from the last point
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", NotConverged)
                    res = pirls(design, vc, _ws=ws)
            if res.converged:
                warm["start"] = (res.beta, res.u, res.v)
            cache[key] = res
        return cache[key]

    def negobj(x):
        res = evaluate(to_vc(x))
        val = laplace_from_pirls(res)
        return -val if math.isfinite(val) else 1e300

    x0 = np.log(np.asarray(start, dtype=float))
    simplex = np.array([x0, x0 + [1.0, 0.0], x0 + [0.0, 1.0]])
    opt = minimize(negobj, x0, method="Nelder-Mead",
                   options={"fatol": tol, "xatol": 1e-4, "maxiter": maxiter, "maxfev": 4 * maxiter,
                            "initial_simplex": simplex})
    vc = to_vc(opt.x)
    best = -opt.fun

    # pin components whose floor value is as good as the interior optimum
    degenerate = []
    for name in ("sigma2", "tau2"):
        trial = VarianceComponents(**{**vc.__dict__, name: VARIANCE_FLOOR})
        val = laplace_from_pirls(evaluate(trial))
        if val >= best - tol:
            degenerate.append(name)
            vc, best = trial, val
    if degenerate:
        warnings.warn(f"variance component(s) {degenerate} at the floor {VARIANCE_FLOOR}",
                      DegenerateVariance, stacklevel=2)

    res = pirls(design, vc, start=warm["start"], _ws=ws)
    outer_ok = bool(opt.success)
    if not outer_ok:
        warnings.warn(f"Nelder-Mead: {opt.message}", NotConverged, stacklevel=2)
    return GlmmFit(
        beta=res.beta,
        beta_se=np.sqrt(np.clip(np.diag(res.beta_cov), 0.0, None)),
        u=res.u,
        v=res.v,
        vc=vc,
        laplace_loglik=laplace_from_pirls(res),
        converged=bool(outer_ok and res.converged),
        n_points=design.n,
        iterations=(int(opt.nit), int(res.iterations)),
        column_names=list(design.column_names),
        server_labels=list(design.server_labels),
        returner_labels=list(design.returner_labels),
        reference_loc=design.reference_loc,
        loc_levels=list(design.loc_levels),
        degenerate=tuple(degenerate),
        score_norm=res.score_norm,
    )


def write_fit_json(fit: GlmmFit, path, extra: Optional[dict] = None) -> None:
    payload = fit.to_dict()
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_fit_json(path) -> GlmmFit:
    return GlmmFit.from_dict(json.loads(Path(path).read_text()))
