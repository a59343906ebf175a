"""Log-posterior targets for full and blockwise estimation.

A :class:`Target` bundles the routed data of one estimation unit (the
whole multistate model, one competing-risks block, or one single
transition) with a flat unconstrained parameterisation, and evaluates
the joint log-posterior and its exact gradient.

Unconstrained layout
--------------------
Positions are fixed and documented so draws can be exported column-wise:

====  =======================  ==========================================
 0    intercept                fixed effect, raw
 1    slope                    fixed effect, raw
 2    log_var_e                residual variance, log scale
 3    log_var_b1               random-intercept variance, log scale
 4    log_var_b2               random-slope variance, log scale
 5    atanh_corr               intercept-slope correlation, atanh scale
 ...  per transition (ordered by origin, then destination):
      log_shape, log_scale, coef (one per covariate), assoc coefficients
 ...  per subject: standardized random effects z1, z2
====  =======================  ==========================================

Random effects are non-centred: b_i = L z_i with L the Cholesky factor
of the random-effects covariance, and z_i standard normal a priori.
Positive parameters enter priors on the scale the prior is stated on
(variances for the inverse-gamma priors, shape/scale for the
half-Cauchy priors); the log-map Jacobians are included in the target.

Hazard clock
------------
Under concurrent linkage, time is re-centred at block entry and the
trajectory feeding the hazard at sojourn ``u`` is evaluated at ``u``.
Under historical linkage (and for the full model) the global origin is
kept and the hazard at sojourn ``u`` reads the trajectory at
``entry_time + u``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import cohort as cohort_mod
from .cohort import CONCURRENT, HISTORICAL, Cohort, concurrent_window, link_longitudinal
from .errors import NonFiniteError
from .graph import CrBlock, StBlock, TransitionDiagram, decompose
from .submodels import (
    ASSOC_DIM,
    GL_LNX,
    GL_WTILDE,
    QUAD_KAPPA,
    LongitudinalParams,
    RandomEffects,
    TransitionParams,
)

__all__ = [
    "PriorSpec",
    "ParameterVector",
    "Target",
    "build_target",
    "build_msm_target",
    "build_cr_target",
    "build_st_target",
    "log_posterior",
    "grad_log_posterior",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PriorSpec:
    """Weakly informative prior hyperparameters.

    Normal(0, normal_sd^2) on raw fixed effects, covariate and
    association coefficients; half-Cauchy(0, half_cauchy_scale) on the
    Weibull shape and scale; inverse-gamma on the three variances; a
    Beta law on (corr+1)/2.
    """

    normal_sd: float = 100.0
    half_cauchy_scale: float = 1.0
    inv_gamma_shape: float = 0.01
    inv_gamma_rate: float = 0.01
    corr_beta: tuple[float, float] = (0.5, 0.5)

    def __post_init__(self):
        if min(
            self.normal_sd,
            self.half_cauchy_scale,
            self.inv_gamma_shape,
            self.inv_gamma_rate,
            *self.corr_beta,
        ) <= 0:
            raise ValueError("prior hyperparameters must be positive")


@dataclass(frozen=True)
class ParameterVector:
    """Constrained-scale view of one point in parameter space."""

    longitudinal: LongitudinalParams
    transitions: dict[tuple[int, int], TransitionParams]
    random_effects: dict[str, RandomEffects]


@dataclass(frozen=True)
class _Layout:
    """Index map from parameter names to unconstrained coordinates."""

    names: tuple[str, ...]
    constrained_names: tuple[str, ...]
    trans_slices: tuple[dict, ...]   # per transition: shape/scale/coef/assoc indices
    z_start: int
    dim: int

    def index_of(self, name: str) -> int:
        return self.names.index(name)


def _build_layout(transitions, assoc_forms, n_cov, subject_ids):
    names = ["intercept", "slope", "log_var_e", "log_var_b1", "log_var_b2", "atanh_corr"]
    cnames = ["intercept", "slope", "sigma_e", "sigma_b1", "sigma_b2", "corr"]
    trans_slices = []
    pos = 6
    for (j, k), form in zip(transitions, assoc_forms):
        tag = f"{j}_{k}"
        entry = {"shape": pos, "scale": pos + 1}
        names += [f"log_shape_{tag}", f"log_scale_{tag}"]
        cnames += [f"shape_{tag}", f"scale_{tag}"]
        pos += 2
        entry["coef"] = (pos, pos + n_cov)
        for c in range(n_cov):
            suffix = f"_{c}" if n_cov > 1 else ""
            names.append(f"coef_{tag}{suffix}")
            cnames.append(f"coef_{tag}{suffix}")
        pos += n_cov
        a_dim = ASSOC_DIM[form]
        entry["assoc"] = (pos, pos + a_dim)
        if a_dim == 1:
            names.append(f"assoc_{tag}")
            cnames.append(f"assoc_{tag}")
        else:
            for a in range(a_dim):
                names.append(f"assoc{a + 1}_{tag}")
                cnames.append(f"assoc{a + 1}_{tag}")
        pos += a_dim
        trans_slices.append(entry)
    z_start = pos
    for sid in subject_ids:
        names += [f"z1_{sid}", f"z2_{sid}"]
        cnames += [f"b1_{sid}", f"b2_{sid}"]
    dim = z_start + 2 * len(subject_ids)
    return _Layout(tuple(names), tuple(cnames), tuple(trans_slices), z_start, dim)


@dataclass
class Target:
    """One estimation unit: routed data plus its unconstrained posterior.

    Instances are built by :func:`build_target`; all arrays are fixed at
    construction, so evaluation is a pure function of the parameter
    vector and is safe to call concurrently.
    """

    kind: str                       # "msm" | "cr" | "st"
    key: str                        # stable block identifier
    linkage: str | None
    transitions: tuple[tuple[int, int], ...]
    assoc_forms: tuple[str, ...]
    prior: PriorSpec
    subject_ids: tuple[str, ...]
    n_cov: int
    layout: _Layout = field(repr=False)
    # measurement rows (trajectory clock)
    meas_t: np.ndarray = field(repr=False)
    meas_y: np.ndarray = field(repr=False)
    meas_subj: np.ndarray = field(repr=False)
    meas_pointwise: np.ndarray = field(repr=False)   # bool: counts toward LOO unit
    # event rows, flattened over (transition, subject at risk)
    ev_trans: np.ndarray = field(repr=False)
    ev_subj: np.ndarray = field(repr=False)
    ev_w: np.ndarray = field(repr=False)
    ev_delta: np.ndarray = field(repr=False)
    ev_D: np.ndarray = field(repr=False)
    ev_logD: np.ndarray = field(repr=False)
    ev_entry: np.ndarray = field(repr=False)
    ev_tauD: np.ndarray = field(repr=False)
    clock_global: bool = False
    # per-transition association bookkeeping, broadcast to rows lazily
    _row_cache: dict = field(default_factory=dict, repr=False)

    # -- derived quantities ------------------------------------------------

    @property
    def dim(self) -> int:
        return self.layout.dim

    @property
    def n_subjects(self) -> int:
        return len(self.subject_ids)

    @property
    def param_names(self) -> tuple[str, ...]:
        return self.layout.names

    @property
    def constrained_names(self) -> tuple[str, ...]:
        return self.layout.constrained_names

    def _rows(self):
        """Per-event-row parameter gathers that do not depend on the draw."""
        if not self._row_cache:
            n_trans = len(self.transitions)
            is_ai = np.array([f == "age_interaction" for f in self.assoc_forms])
            is_qd = np.array([f == "quadratic" for f in self.assoc_forms])
            has_a1 = np.array([ASSOC_DIM[f] >= 1 for f in self.assoc_forms])
            has_a2 = np.array([ASSOC_DIM[f] >= 2 for f in self.assoc_forms])
            tr = self.ev_trans
            self._row_cache.update(
                n_trans=n_trans,
                row_ai=is_ai[tr] if len(tr) else np.zeros(0, dtype=bool),
                row_qd=is_qd[tr] if len(tr) else np.zeros(0, dtype=bool),
                has_a1=has_a1,
                has_a2=has_a2,
                needs_g2=bool(is_ai.any() or is_qd.any()),
                row_age=(self.ev_w[:, 0] if self.n_cov > 0 and len(tr) else np.zeros(len(tr))),
            )
        return self._row_cache

    def _gather_trans(self, u):
        """Per-transition parameter arrays from an unconstrained vector."""
        n_trans = len(self.transitions)
        u_shape = np.empty(n_trans)
        u_scale = np.empty(n_trans)
        coef = np.zeros((n_trans, self.n_cov))
        a1 = np.zeros(n_trans)
        a2 = np.zeros(n_trans)
        for t, sl in enumerate(self.layout.trans_slices):
            u_shape[t] = u[sl["shape"]]
            u_scale[t] = u[sl["scale"]]
            c0, c1 = sl["coef"]
            coef[t] = u[c0:c1]
            a0, a1_end = sl["assoc"]
            if a1_end > a0:
                a1[t] = u[a0]
            if a1_end > a0 + 1:
                a2[t] = u[a0 + 1]
        return u_shape, u_scale, coef, a1, a2

    # -- evaluation ----------------------------------------------------------

    def value_and_grad(self, u: np.ndarray):
        """Log-posterior and its exact gradient.

        Returns ``(-inf, zeros)`` when any intermediate overflows, which
        the sampler treats as a rejected (divergent) point.
        """
        lp, grad = self._value_and_grad_safe(u)
        if not (np.isfinite(lp) and np.all(np.isfinite(grad))):
            return -np.inf, np.zeros(self.dim)
        return lp, grad

    def _value_and_grad(self, u):
        pr = self.prior
        m = self.n_subjects
        g = np.zeros(self.dim)
        lp = 0.0

        intercept, slope_p = u[0], u[1]
        var_e = math.exp(u[2])
        s1 = math.exp(0.5 * u[3])
        s2 = math.exp(0.5 * u[4])
        corr = math.tanh(u[5])
        cfac = math.sqrt(1.0 - corr * corr)
        z = u[self.layout.z_start :].reshape(m, 2) if m else np.zeros((0, 2))
        b1 = s1 * z[:, 0]
        b2 = s2 * (corr * z[:, 0] + cfac * z[:, 1])
        base = intercept + b1
        slope = slope_p + b2

        gb1 = np.zeros(m)
        gb2 = np.zeros(m)

        # longitudinal measurements
        nm = self.meas_t.size
        if nm:
            ms = self.meas_subj
            mt = self.meas_t
            resid = self.meas_y - (base[ms] + slope[ms] * mt)
            rss = float(resid @ resid)
            lp += -0.5 * nm * _LOG_2PI - 0.5 * nm * u[2] - 0.5 * rss / var_e
            cres = resid / var_e
            g[0] += cres.sum()
            g[1] += float(cres @ mt)
            gb1 += np.bincount(ms, weights=cres, minlength=m)
            gb2 += np.bincount(ms, weights=cres * mt, minlength=m)
            g[2] += -0.5 * nm + 0.5 * rss / var_e

        # event history
        if self.ev_trans.size:
            rows = self._rows()
            n_trans = rows["n_trans"]
            u_shape, u_scale, coef, a1_all, a2_all = self._gather_trans(u)
            shape_all = np.exp(u_shape)
            tr = self.ev_trans
            es = self.ev_subj
            shape_r = shape_all[tr]
            a1r = a1_all[tr]
            a2r = a2_all[tr]
            ai = rows["row_ai"]
            qd = rows["row_qd"]
            age = rows["row_age"]
            wcoef = (self.ev_w * coef[tr]).sum(axis=1) if self.n_cov else np.zeros(len(tr))
            base_r = base[es]
            slope_r = slope[es]
            entry_r = self.ev_entry if self.clock_global else 0.0

            # intensity at the event time
            mu_d = base_r + slope_r * self.ev_tauD
            g2_d = np.where(ai, age * mu_d, 0.0) + np.where(qd, mu_d * mu_d, 0.0)
            logh_d = u_shape[tr] + (shape_r - 1.0) * self.ev_logD + u_scale[tr] + wcoef \
                + a1r * mu_d + a2r * g2_d
            log_const = u_scale[tr] + wcoef + shape_r * self.ev_logD
            uq = self.ev_D[:, None] * np.exp(GL_LNX[None, :] * (QUAD_KAPPA / shape_r)[:, None])

            if not rows["needs_g2"]:
                # fast path for linear / absent association: the node-level
                # trajectory enters only via a per-row affine in uq, so the
                # node grid never has to be materialised beyond uq itself
                mu0_r = base_r + slope_r * entry_r
                wh = GL_WTILDE[None, :] * np.exp(
                    (log_const + a1r * mu0_r)[:, None] + (a1r * slope_r)[:, None] * uq
                )
                cumhaz = wh.sum(axis=1)
                # per-transition subtotals first: the blockwise targets then
                # reproduce the full model's event terms bit-for-bit
                lp += float(
                    np.bincount(tr, weights=self.ev_delta * logh_d - cumhaz, minlength=n_trans).sum()
                )
                if not np.isfinite(lp):
                    return -np.inf, g
                wu = wh * uq
                s_u = wu.sum(axis=1)                      # sum_q wh uq
                s_ulnx = (wu * GL_LNX[None, :]).sum(axis=1)
                rows_shape = (
                    self.ev_delta * (1.0 + shape_r * self.ev_logD)
                    - shape_r * self.ev_logD * cumhaz
                    + (QUAD_KAPPA / shape_r) * slope_r * a1r * s_ulnx
                )
                rows_a1 = self.ev_delta * mu_d - (mu0_r * cumhaz + slope_r * s_u)
                rows_a2 = np.zeros(0)
                adj_d = self.ev_delta * a1r
                adj_row = adj_d - a1r * cumhaz            # sum over nodes of dA/dmu
                adj_tau = adj_d * self.ev_tauD - a1r * (entry_r * cumhaz + s_u)
            else:
                tau_q = uq + self.ev_entry[:, None] if self.clock_global else uq
                mu_q = base_r[:, None] + slope_r[:, None] * tau_q
                g2_q = np.where(ai[:, None], age[:, None] * mu_q, 0.0) \
                    + np.where(qd[:, None], mu_q * mu_q, 0.0)
                wh = GL_WTILDE[None, :] * np.exp(
                    log_const[:, None] + a1r[:, None] * mu_q + a2r[:, None] * g2_q
                )
                cumhaz = wh.sum(axis=1)
                lp += float(
                    np.bincount(tr, weights=self.ev_delta * logh_d - cumhaz, minlength=n_trans).sum()
                )
                if not np.isfinite(lp):
                    return -np.inf, g
                apd = a1r + a2r * (np.where(ai, age, 0.0) + np.where(qd, 2.0 * mu_d, 0.0))
                apq = a1r[:, None] + a2r[:, None] * (
                    np.where(ai[:, None], age[:, None], 0.0)
                    + np.where(qd[:, None], 2.0 * mu_q, 0.0)
                )
                wh_apq = wh * apq
                rows_shape = (
                    self.ev_delta * (1.0 + shape_r * self.ev_logD)
                    - shape_r * self.ev_logD * cumhaz
                    + (QUAD_KAPPA / shape_r) * slope_r
                    * (wh_apq * uq * GL_LNX[None, :]).sum(axis=1)
                )
                rows_a1 = self.ev_delta * mu_d - (wh * mu_q).sum(axis=1)
                rows_a2 = self.ev_delta * g2_d - (wh * g2_q).sum(axis=1)
                adj_d = self.ev_delta * apd
                adj_row = adj_d - wh_apq.sum(axis=1)
                adj_tau = adj_d * self.ev_tauD - (wh_apq * tau_q).sum(axis=1)

            rows_scale = self.ev_delta - cumhaz
            g_shape = np.bincount(tr, weights=rows_shape, minlength=n_trans)
            g_scale = np.bincount(tr, weights=rows_scale, minlength=n_trans)
            g_a1 = np.bincount(tr, weights=rows_a1, minlength=n_trans)
            g_a2 = (
                np.bincount(tr, weights=rows_a2, minlength=n_trans)
                if rows_a2.size else np.zeros(n_trans)
            )
            for t, sl in enumerate(self.layout.trans_slices):
                g[sl["shape"]] += g_shape[t]
                g[sl["scale"]] += g_scale[t]
                a0, a_end = sl["assoc"]
                if a_end > a0:
                    g[a0] += g_a1[t]
                if a_end > a0 + 1:
                    g[a0 + 1] += g_a2[t]
            for c in range(self.n_cov):
                g_coef = np.bincount(tr, weights=self.ev_w[:, c] * rows_scale, minlength=n_trans)
                for t, sl in enumerate(self.layout.trans_slices):
                    g[sl["coef"][0] + c] += g_coef[t]

            # trajectory adjoints accumulated per row
            g[0] += adj_row.sum()
            g[1] += float(adj_tau.sum())
            gb1 += np.bincount(es, weights=adj_row, minlength=m)
            gb2 += np.bincount(es, weights=adj_tau, minlength=m)
        else:
            u_shape, u_scale, coef, a1_all, a2_all = self._gather_trans(u)

        # standardized random effects
        if m:
            lp += -0.5 * float((z * z).sum()) - m * _LOG_2PI
            gz = -z.copy()
            gz[:, 0] += s1 * gb1 + s2 * corr * gb2
            gz[:, 1] += s2 * cfac * gb2
            g[self.layout.z_start :] = gz.ravel()
            g[3] += 0.5 * float(gb1 @ b1)
            g[4] += 0.5 * float(gb2 @ b2)
            g[5] += (1.0 - corr * corr) * s2 * float(gb2 @ (z[:, 0] - z[:, 1] * corr / cfac))

        # priors (with the log-map Jacobians folded in)
        sd2 = pr.normal_sd**2
        norm_const = -math.log(pr.normal_sd) - 0.5 * _LOG_2PI
        for idx, val in ((0, intercept), (1, slope_p)):
            lp += -0.5 * val * val / sd2 + norm_const
            g[idx] += -val / sd2
        for t, sl in enumerate(self.layout.trans_slices):
            c0, c1 = sl["coef"]
            for idx in range(c0, c1):
                lp += -0.5 * u[idx] ** 2 / sd2 + norm_const
                g[idx] += -u[idx] / sd2
            a0, a_end = sl["assoc"]
            for idx in range(a0, a_end):
                lp += -0.5 * u[idx] ** 2 / sd2 + norm_const
                g[idx] += -u[idx] / sd2
            # half-Cauchy(0, s) on shape and scale, plus exp-map Jacobian
            hcs2 = pr.half_cauchy_scale**2
            for idx in (sl["shape"], sl["scale"]):
                v = math.exp(u[idx])
                lp += (
                    math.log(2.0) - math.log(math.pi) - math.log(pr.half_cauchy_scale)
                    - math.log1p(v * v / hcs2) + u[idx]
                )
                g[idx] += 1.0 - 2.0 * v * v / (hcs2 + v * v)

        # inverse-gamma on the three variances, plus exp-map Jacobian
        a0, b0 = pr.inv_gamma_shape, pr.inv_gamma_rate
        ig_const = a0 * math.log(b0) - math.lgamma(a0)
        for idx in (2, 3, 4):
            lp += ig_const - a0 * u[idx] - b0 * math.exp(-u[idx])
            g[idx] += -a0 + b0 * math.exp(-u[idx])

        # Beta on (corr+1)/2, plus tanh-map Jacobian
        ba, bb = pr.corr_beta
        p = 0.5 * (corr + 1.0)
        lp += (
            (ba - 1.0) * math.log(p) + (bb - 1.0) * math.log1p(-p)
            - (math.lgamma(ba) + math.lgamma(bb) - math.lgamma(ba + bb))
            - math.log(2.0) + math.log1p(-corr * corr)
        )
        dls_drho = 0.5 * ((ba - 1.0) / p - (bb - 1.0) / (1.0 - p)) - 2.0 * corr / (1.0 - corr * corr)
        g[5] += dls_drho * (1.0 - corr * corr)

        return lp, g

    def components(self, u: np.ndarray) -> dict:
        """Break the log-posterior into named additive pieces.

        Useful for bookkeeping checks and for attributing non-finite
        values; the pieces sum to :meth:`log_posterior` exactly.
        """
        full, _ = self._value_and_grad_safe(u)
        # Recompute pieces with stripped-down targets sharing the arrays.
        out = {}
        out["longitudinal"] = self._longitudinal_only(u)
        out["event"] = self._event_only(u)
        m = self.n_subjects
        z = u[self.layout.z_start :].reshape(m, 2) if m else np.zeros((0, 2))
        out["random_effects"] = float(-0.5 * (z * z).sum() - m * _LOG_2PI)
        out["prior_and_jacobian"] = full - out["longitudinal"] - out["event"] - out["random_effects"]
        out["total"] = full
        return out

    def _value_and_grad_safe(self, u):
        try:
            with np.errstate(over="ignore", invalid="ignore", under="ignore", divide="ignore"):
                return self._value_and_grad(u)
        except (OverflowError, ValueError, ZeroDivisionError):
            # scalar-math overflow at extreme proposals: reject the point
            return -np.inf, np.zeros(self.dim)

    def _longitudinal_only(self, u):
        if not self.meas_t.size:
            return 0.0
        m = self.n_subjects
        per = self._per_subject_longitudinal(u, pointwise_only=False)
        return float(per.sum())

    def _event_only(self, u):
        if not self.ev_trans.size:
            return 0.0
        return float(self._per_subject_event(u).sum())

    def _trajectory_pieces(self, u):
        m = self.n_subjects
        s1 = math.exp(0.5 * u[3])
        s2 = math.exp(0.5 * u[4])
        corr = math.tanh(u[5])
        cfac = math.sqrt(1.0 - corr * corr)
        z = u[self.layout.z_start :].reshape(m, 2) if m else np.zeros((0, 2))
        base = u[0] + s1 * z[:, 0]
        slope = u[1] + s2 * (corr * z[:, 0] + cfac * z[:, 1])
        return base, slope

    def _per_subject_longitudinal(self, u, pointwise_only: bool):
        """Per-subject Gaussian log-likelihood (optionally LOO rows only)."""
        m = self.n_subjects
        base, slope = self._trajectory_pieces(u)
        var_e = math.exp(u[2])
        if pointwise_only:
            sel = self.meas_pointwise
            ms, mt, my = self.meas_subj[sel], self.meas_t[sel], self.meas_y[sel]
        else:
            ms, mt, my = self.meas_subj, self.meas_t, self.meas_y
        if not len(ms):
            return np.zeros(m)
        resid = my - (base[ms] + slope[ms] * mt)
        ll_rows = -0.5 * _LOG_2PI - 0.5 * u[2] - 0.5 * resid * resid / var_e
        return np.bincount(ms, weights=ll_rows, minlength=m)

    def _per_subject_event(self, u):
        m = self.n_subjects
        if not self.ev_trans.size:
            return np.zeros(m)
        rows = self._rows()
        base, slope = self._trajectory_pieces(u)
        u_shape, u_scale, coef, a1_all, a2_all = self._gather_trans(u)
        shape_all = np.exp(u_shape)
        tr, es = self.ev_trans, self.ev_subj
        shape_r = shape_all[tr]
        a1r, a2r = a1_all[tr], a2_all[tr]
        ai, qd, age = rows["row_ai"], rows["row_qd"], rows["row_age"]
        wcoef = (self.ev_w * coef[tr]).sum(axis=1) if self.n_cov else np.zeros(len(tr))
        mu_d = base[es] + slope[es] * self.ev_tauD
        g2_d = np.where(ai, age * mu_d, 0.0) + np.where(qd, mu_d * mu_d, 0.0)
        logh_d = u_shape[tr] + (shape_r - 1.0) * self.ev_logD + u_scale[tr] + wcoef \
            + a1r * mu_d + a2r * g2_d
        with np.errstate(over="ignore"):
            uq = self.ev_D[:, None] * np.exp(GL_LNX[None, :] * (QUAD_KAPPA / shape_r)[:, None])
            tau_q = uq + self.ev_entry[:, None] if self.clock_global else uq
            mu_q = base[es][:, None] + slope[es][:, None] * tau_q
            g2_q = np.where(ai[:, None], age[:, None] * mu_q, 0.0) \
                + np.where(qd[:, None], mu_q * mu_q, 0.0)
            log_const = u_scale[tr] + wcoef + shape_r * self.ev_logD
            cumhaz = (
                GL_WTILDE[None, :]
                * np.exp(log_const[:, None] + a1r[:, None] * mu_q + a2r[:, None] * g2_q)
            ).sum(axis=1)
        rows_ll = self.ev_delta * logh_d - cumhaz
        return np.bincount(es, weights=rows_ll, minlength=m)

    # -- public contract wrappers -------------------------------------------

    def log_posterior(self, u: np.ndarray) -> float:
        """Joint log-posterior density on the unconstrained scale.

        Raises
        ------
        NonFiniteError
            Naming the offending additive component.
        """
        lp, _ = self._value_and_grad_safe(np.asarray(u, dtype=float))
        if not np.isfinite(lp):
            comp = self.components(np.asarray(u, dtype=float))
            bad = [k for k, v in comp.items() if k != "total" and not np.isfinite(v)]
            raise NonFiniteError(
                f"log-posterior is not finite (component(s): {bad or ['unknown']})",
                component=bad[0] if bad else None,
            )
        return float(lp)

    def grad_log_posterior(self, u: np.ndarray) -> np.ndarray:
        """Exact gradient on the unconstrained scale."""
        lp, grad = self._value_and_grad_safe(np.asarray(u, dtype=float))
        if not (np.isfinite(lp) and np.all(np.isfinite(grad))):
            raise NonFiniteError("gradient is not finite", component="gradient")
        return grad

    # -- parameter-space maps -------------------------------------------------

    def to_constrained(self, u: np.ndarray):
        """Map an unconstrained vector to a :class:`ParameterVector`.

        Returns the constrained parameters together with the accumulated
        log-Jacobian of the change of variables (exp maps for positive
        parameters, tanh for the correlation, and the Cholesky map from
        standardized to raw random effects).
        """
        u = np.asarray(u, dtype=float)
        var_e = math.exp(u[2])
        s1 = math.exp(0.5 * u[3])
        s2 = math.exp(0.5 * u[4])
        corr = math.tanh(u[5])
        cfac = math.sqrt(1.0 - corr * corr)
        lp = LongitudinalParams(
            intercept=float(u[0]), slope=float(u[1]),
            sigma_e=math.sqrt(var_e), sigma_b1=s1, sigma_b2=s2, corr=corr,
        )
        log_jac = u[2] + u[3] + u[4] + math.log1p(-corr * corr)
        trans = {}
        for (jk, form, sl) in zip(self.transitions, self.assoc_forms, self.layout.trans_slices):
            shape = math.exp(u[sl["shape"]])
            scale = math.exp(u[sl["scale"]])
            log_jac += u[sl["shape"]] + u[sl["scale"]]
            c0, c1 = sl["coef"]
            a0, a_end = sl["assoc"]
            trans[jk] = TransitionParams(
                shape=shape, scale=scale,
                coef=tuple(float(v) for v in u[c0:c1]),
                assoc=tuple(float(v) for v in u[a0:a_end]),
                assoc_form=form,
            )
        m = self.n_subjects
        z = u[self.layout.z_start :].reshape(m, 2) if m else np.zeros((0, 2))
        b1 = s1 * z[:, 0]
        b2 = s2 * (corr * z[:, 0] + cfac * z[:, 1])
        res = {sid: RandomEffects(float(b1[i]), float(b2[i])) for i, sid in enumerate(self.subject_ids)}
        # |L| = sigma_b1 * sigma_b2 * sqrt(1 - corr^2), once per subject
        log_jac += m * (0.5 * u[3] + 0.5 * u[4] + 0.5 * math.log1p(-corr * corr))
        return ParameterVector(lp, trans, res), float(log_jac)

    def from_constrained(self, pv: ParameterVector) -> np.ndarray:
        """Inverse of :meth:`to_constrained` (drops the Jacobian)."""
        u = np.zeros(self.dim)
        lp = pv.longitudinal
        u[0], u[1] = lp.intercept, lp.slope
        u[2] = math.log(lp.sigma_e**2)
        u[3] = math.log(lp.sigma_b1**2)
        u[4] = math.log(lp.sigma_b2**2)
        u[5] = math.atanh(lp.corr)
        for (jk, sl) in zip(self.transitions, self.layout.trans_slices):
            tp = pv.transitions[jk]
            u[sl["shape"]] = math.log(tp.shape)
            u[sl["scale"]] = math.log(tp.scale)
            c0, c1 = sl["coef"]
            u[c0:c1] = tp.coef
            a0, a_end = sl["assoc"]
            u[a0:a_end] = tp.assoc
        chol = lp.chol
        for i, sid in enumerate(self.subject_ids):
            re = pv.random_effects[sid]
            zvec = np.linalg.solve(chol, np.array([re.b1, re.b2]))
            u[self.layout.z_start + 2 * i : self.layout.z_start + 2 * i + 2] = zvec
        return u

    def constrain_draws(self, draws: np.ndarray) -> np.ndarray:
        """Vectorised unconstrained -> constrained map over a draw matrix."""
        out = draws.copy()
        out[:, 2] = np.exp(0.5 * draws[:, 2])   # sigma_e
        out[:, 3] = np.exp(0.5 * draws[:, 3])   # sigma_b1
        out[:, 4] = np.exp(0.5 * draws[:, 4])   # sigma_b2
        out[:, 5] = np.tanh(draws[:, 5])        # corr
        for sl in self.layout.trans_slices:
            out[:, sl["shape"]] = np.exp(draws[:, sl["shape"]])
            out[:, sl["scale"]] = np.exp(draws[:, sl["scale"]])
        zs = self.layout.z_start
        if self.n_subjects:
            s1 = out[:, 3]
            s2 = out[:, 4]
            corr = out[:, 5]
            cfac = np.sqrt(1.0 - corr**2)
            z1 = draws[:, zs::2]
            z2 = draws[:, zs + 1 :: 2]
            out[:, zs::2] = s1[:, None] * z1
            out[:, zs + 1 :: 2] = s2[:, None] * (corr[:, None] * z1 + cfac[:, None] * z2)
        return out

    # -- pointwise log-likelihood matrices (for LOO) --------------------------

    def pointwise_loglik(self, draws: np.ndarray) -> dict:
        """Per-draw, per-subject log-likelihood matrices.

        Returns ``{"longitudinal": (S, m), "event": (S, m)}`` where the
        longitudinal entry sums the subject's observed within-block
        measurements (imputed carry-forward records are excluded) and
        the event entry is the subject's event log-likelihood under this
        target.  The joint definition is their sum.
        """
        S = draws.shape[0]
        m = self.n_subjects
        out_long = np.empty((S, m))
        out_event = np.empty((S, m))
        for s in range(S):
            out_long[s] = self._per_subject_longitudinal(draws[s], pointwise_only=True)
            out_event[s] = self._per_subject_event(draws[s])
        return {"longitudinal": out_long, "event": out_event}


# ---------------------------------------------------------------------------
# Target construction
# ---------------------------------------------------------------------------


def _norm_assoc_forms(assoc_form, transitions):
    if isinstance(assoc_form, str):
        return tuple(assoc_form for _ in transitions)
    return tuple(assoc_form[jk] for jk in transitions)


def build_target(
    cohort: Cohort,
    diagram: TransitionDiagram,
    kind: str,
    *,
    block: CrBlock | StBlock | None = None,
    linkage: str | None = None,
    assoc_form="linear",
    prior: PriorSpec | None = None,
) -> Target:
    """Assemble the routed data and layout for one estimation unit.

    ``kind`` is ``"msm"`` (block covering everything; ``linkage`` is
    ignored), ``"cr"`` or ``"st"`` (requiring ``block`` and ``linkage``).
    ``assoc_form`` is a single form name or a mapping from transition to
    form.
    """
    prior = prior or PriorSpec()
    kind = kind.lower()
    n_cov = len(cohort.subjects[0].covariates) if len(cohort) else 0

    if kind == "msm":
        transitions = diagram.transitions
        subj_idx = list(range(len(cohort)))
        key = "msm"
        linkage = None
    elif kind in ("cr", "st"):
        if block is None or linkage is None:
            raise ValueError("cr/st targets need a block and a linkage")
        transitions = block.transitions
        subj_idx = cohort_mod.block_risk_set(cohort, block)
        key = block.key
    else:
        raise ValueError(f"unknown target kind {kind!r}")

    forms = _norm_assoc_forms(assoc_form, transitions)
    subjects = [cohort.subjects[i] for i in subj_idx]
    subject_ids = tuple(s.id for s in subjects)
    layout = _build_layout(transitions, forms, n_cov, subject_ids)

    meas_t, meas_y, meas_subj, meas_pw = [], [], [], []
    ev = {"trans": [], "subj": [], "w": [], "delta": [], "D": [], "entry": []}

    if kind == "msm":
        for slot, s in enumerate(subjects):
            meas_t.append(s.times)
            meas_y.append(s.values)
            meas_subj.append(np.full(len(s.longitudinal), slot, dtype=np.int64))
            meas_pw.append(np.ones(len(s.longitudinal), dtype=bool))
            for t_idx, (j, k) in enumerate(transitions):
                if j not in s.events.visited_states:
                    continue
                sojourn, outcome = s.events.sojourn(j)
                ev["trans"].append(t_idx)
                ev["subj"].append(slot)
                ev["w"].append(s.covariates)
                ev["delta"].append(1.0 if outcome == k else 0.0)
                ev["D"].append(sojourn)
                ev["entry"].append(s.events.entry_time(j))
        clock_global = True
    else:
        for slot, s in enumerate(subjects):
            bd = link_longitudinal(s, block, linkage)
            meas_t.append(bd.local_times)
            meas_y.append(bd.values)
            meas_subj.append(np.full(len(bd.values), slot, dtype=np.int64))
            if linkage == CONCURRENT:
                meas_pw.append(~bd.imputed)
            else:
                _, _, tw, _ = concurrent_window(s, block)
                within = np.isin(bd.local_times, tw)
                meas_pw.append(within)
            for t_idx, (j, k) in enumerate(transitions):
                ev["trans"].append(t_idx)
                ev["subj"].append(slot)
                ev["w"].append(s.covariates)
                ev["delta"].append(1.0 if bd.outcome == k else 0.0)
                ev["D"].append(bd.sojourn)
                ev["entry"].append(bd.entry_time)
        clock_global = linkage == HISTORICAL

    meas_t = np.concatenate(meas_t) if meas_t else np.zeros(0)
    meas_y = np.concatenate(meas_y) if meas_y else np.zeros(0)
    meas_subj = (
        np.concatenate(meas_subj).astype(np.int64) if meas_subj else np.zeros(0, dtype=np.int64)
    )
    meas_pw = np.concatenate(meas_pw) if meas_pw else np.zeros(0, dtype=bool)

    n_rows = len(ev["D"])
    ev_trans = np.asarray(ev["trans"], dtype=np.int64)
    ev_subj = np.asarray(ev["subj"], dtype=np.int64)
    ev_w = np.asarray(ev["w"], dtype=float).reshape(n_rows, n_cov)
    ev_delta = np.asarray(ev["delta"], dtype=float)
    ev_D = np.asarray(ev["D"], dtype=float)
    ev_entry = np.asarray(ev["entry"], dtype=float)
    if n_rows:
        ev_logD = np.log(ev_D)
        tau_d = ev_entry + ev_D if clock_global else ev_D
    else:
        ev_logD = tau_d = np.zeros(0)

    return Target(
        kind=kind,
        key=key,
        linkage=linkage,
        transitions=tuple(transitions),
        assoc_forms=forms,
        prior=prior,
        subject_ids=subject_ids,
        n_cov=n_cov,
        layout=layout,
        meas_t=meas_t,
        meas_y=meas_y,
        meas_subj=meas_subj,
        meas_pointwise=meas_pw,
        ev_trans=ev_trans,
        ev_subj=ev_subj,
        ev_w=ev_w,
        ev_delta=ev_delta,
        ev_D=ev_D,
        ev_logD=ev_logD,
        ev_entry=ev_entry,
        ev_tauD=tau_d,
        clock_global=clock_global,
    )


def build_msm_target(cohort, diagram, assoc_form="linear", prior=None) -> Target:
    return build_target(cohort, diagram, "msm", assoc_form=assoc_form, prior=prior)


def build_cr_target(cohort, diagram, block: CrBlock, linkage, assoc_form="linear", prior=None) -> Target:
    return build_target(
        cohort, diagram, "cr", block=block, linkage=linkage, assoc_form=assoc_form, prior=prior
    )


def build_st_target(cohort, diagram, block: StBlock, linkage, assoc_form="linear", prior=None) -> Target:
    return build_target(
        cohort, diagram, "st", block=block, linkage=linkage, assoc_form=assoc_form, prior=prior
    )


def log_posterior(target: Target, u) -> float:
    """Module-level convenience wrapper around :meth:`Target.log_posterior`."""
    return target.log_posterior(np.asarray(u, dtype=float))


def grad_log_posterior(target: Target, u) -> np.ndarray:
    """Module-level convenience wrapper around :meth:`Target.grad_log_posterior`."""
    return target.grad_log_posterior(np.asarray(u, dtype=float))
