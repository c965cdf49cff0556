"""Closed-form Shannon mutual information between sensor beams and the map.

A beam's outcome tree is finite: it either ends in one of the traversed cells
with one of the K occupied classes, or it reaches max range with every cell
free. The information value is the expectation over those outcomes of the
summed per-cell log-ratios (KL divergences) between the updated and current
beliefs. Three evaluations of the same quantity live here:

* ``beam_mi_dense``   - one forward pass over the per-cell sequence, O(K N)
* ``beam_mi_srle``    - one forward pass over run-length-encoded homogeneous
  segments with the inner geometric sums in closed form, O(K Q)
* ``beam_mi_oracle``  - brute-force enumeration of the outcome tree using
  nothing but softmax, the posterior update, and a direct KL sum; the ground
  truth the fast paths are tested against

plus direct (non-recursive) counterparts of the two fast paths that rebuild
every prefix from scratch, used to validate the forward recursions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import logodds
from .errors import EmptyRay, ScaleExceeded
from .grid import BeamMeasurement, GridMap, RayTrace
from .logodds import SensorParams

LIMIT_EPS = 1e-9  # switch to the analytic limit of the geometric sums


@dataclass(frozen=True)
class SrleRay:
    """Run-length encoded beam: consecutive cells sharing one belief.

    ``widths[q]`` counts smallest-resolution elements in run q, ``chi_t`` the
    current log-odds of the run and ``chi_0`` its prior.
    """

    widths: np.ndarray
    chi_t: np.ndarray
    chi_0: np.ndarray

    def __post_init__(self):
        widths = np.ascontiguousarray(self.widths, dtype=np.int64)
        chi_t = np.ascontiguousarray(self.chi_t, dtype=np.float64)
        chi_0 = np.ascontiguousarray(self.chi_0, dtype=np.float64)
        if widths.ndim != 1 or np.any(widths < 1):
            raise ValueError("run widths must be positive")
        if chi_t.ndim != 2 or chi_t.shape[0] != widths.shape[0] or chi_0.shape != chi_t.shape:
            raise ValueError("chi_t/chi_0 must be (Q, K+1) and share shape")
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "chi_t", chi_t)
        object.__setattr__(self, "chi_0", chi_0)

    @property
    def num_runs(self) -> int:
        return int(self.widths.shape[0])

    @property
    def num_elements(self) -> int:
        return int(self.widths.sum())

    def expand(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-element (current, prior) log-odds; inverse of encode_runs."""
        h_t = np.repeat(self.chi_t, self.widths, axis=0)
        h_0 = np.repeat(self.chi_0, self.widths, axis=0)
        return h_t, h_0


def encode_runs(h_t: np.ndarray, h_0: np.ndarray) -> SrleRay:
    """Group consecutive cells with exactly equal (current, prior) log-odds."""
    h_t = np.asarray(h_t, dtype=np.float64)
    h_0 = np.asarray(h_0, dtype=np.float64)
    if h_t.ndim != 2 or h_t.shape[0] == 0:
        raise EmptyRay("need at least one cell to encode")
    same = np.all(h_t[1:] == h_t[:-1], axis=1) & np.all(h_0[1:] == h_0[:-1], axis=1)
    starts = np.concatenate([[0], np.nonzero(~same)[0] + 1])
    widths = np.diff(np.concatenate([starts, [h_t.shape[0]]]))
    return SrleRay(widths=widths, chi_t=h_t[starts], chi_0=h_0[starts])


@dataclass
class BeamMI:
    """Information value of one beam in nats, with optional term breakdown.

    When detail is requested, ``terms`` holds the (N or Q, K) summands of the
    hit part, ``p_detail`` the event probabilities (p or rho) and ``c_detail``
    the accumulated log-ratios (C or Theta) they multiply.
    """

    value: float
    hit_term: float
    free_term: float
    terms: np.ndarray | None = None
    p_detail: np.ndarray | None = None
    c_detail: np.ndarray | None = None

    def __float__(self) -> float:
        return self.value


def _hit_models(params: SensorParams) -> np.ndarray:
    """Stack of the K hit-update log-odds vectors, shape (K, K+1)."""
    k = params.num_classes
    models = np.tile(params.phi_plus, (k, 1))
    models[np.arange(k), np.arange(1, k + 1)] += params.psi_plus[1:]
    return models


def beam_mi_dense(
    h_t: np.ndarray, h_0: np.ndarray, params: SensorParams, return_detail: bool = False
) -> BeamMI:
    """Per-cell forward pass: expected log-ratio over the beam outcome tree.

    One free-update log-ratio and K hit-update log-ratios are evaluated per
    cell; prefix products and sums carry the recursion, so the total work is
    O(K N) for N cells.
    """
    h_t = np.atleast_2d(np.asarray(h_t, dtype=np.float64))
    h_0 = np.broadcast_to(np.asarray(h_0, dtype=np.float64), h_t.shape)
    n_cells = h_t.shape[0]
    if n_cells == 0:
        raise EmptyRay("dense information query over zero cells")
    lse = logodds.logsumexp(h_t, axis=-1)
    log_p0 = -np.asarray(lse)  # h_t[:, 0] == 0
    pmf = logodds.softmax_pmf(h_t)

    f_free = logodds.f_logratio_rows(params.phi_minus - h_0, h_t)
    hit = _hit_models(params)  # (K, K+1)
    f_hit = logodds.f_logratio_rows(hit[None, :, :] - h_0[:, None, :], h_t[:, None, :])

    before_log_p0 = np.concatenate([[0.0], np.cumsum(log_p0)[:-1]])
    before_f_free = np.concatenate([[0.0], np.cumsum(f_free)[:-1]])

    p_nk = pmf[:, 1:] * np.exp(before_log_p0)[:, None]
    c_nk = f_hit + before_f_free[:, None]
    terms = p_nk * c_nk
    hit_term = float(terms.sum())
    free_term = float(math.exp(np.sum(log_p0)) * np.sum(f_free))
    return BeamMI(
        value=hit_term + free_term,
        hit_term=hit_term,
        free_term=free_term,
        terms=terms if return_detail else None,
        p_detail=p_nk if return_detail else None,
        c_detail=c_nk if return_detail else None,
    )


def beam_mi_dense_direct(h_t: np.ndarray, h_0: np.ndarray, params: SensorParams) -> float:
    """Direct O(K N^2) evaluation with every prefix rebuilt from scratch.

    Exists to validate the forward recursion; shares the f kernel but no
    prefix bookkeeping with :func:`beam_mi_dense`.
    """
    h_t = np.atleast_2d(np.asarray(h_t, dtype=np.float64))
    h_0 = np.broadcast_to(np.asarray(h_0, dtype=np.float64), h_t.shape)
    n_cells = h_t.shape[0]
    if n_cells == 0:
        raise EmptyRay("dense information query over zero cells")
    k_classes = params.num_classes
    pmf = logodds.softmax_pmf(h_t)
    hit = _hit_models(params)
    total = 0.0
    for k in range(1, k_classes + 1):
        for n in range(n_cells):
            p = pmf[n, k]
            c = logodds.f_logratio(hit[k - 1] - h_0[n], h_t[n])
            for i in range(n):
                p *= pmf[i, 0]
                c += logodds.f_logratio(params.phi_minus - h_0[i], h_t[i])
            total += p * c
    p_pass = float(np.prod(pmf[:, 0]))
    c_pass = sum(
        logodds.f_logratio(params.phi_minus - h_0[i], h_t[i]) for i in range(n_cells)
    )
    return total + p_pass * c_pass


def _geometric_sums(log_p0: np.ndarray, widths: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """S0 = sum_{j<w} x^j and S1 = sum_{j<w} j x^j for x = exp(log_p0).

    Uses expm1 forms away from x = 1 and the analytic limits w and
    w(w-1)/2 inside LIMIT_EPS of the singularity, where the closed forms
    are 0/0.
    """
    w = widths.astype(np.float64)
    em1 = np.expm1(log_p0)  # x - 1, exact near 0
    singular = -em1 < LIMIT_EPS
    safe_em1 = np.where(singular, -1.0, em1)
    emw = np.expm1(w * log_p0)
    s0 = np.where(singular, w, emw / safe_em1)
    xw = np.exp(w * log_p0)
    s1 = np.where(singular, w * (w - 1.0) / 2.0, (s0 - 1.0 - (w - 1.0) * xw) / (-safe_em1))
    return s0, s1


def beam_mi_srle(ray: SrleRay, params: SensorParams, return_detail: bool = False) -> BeamMI:
    """Run-length evaluation: exactly the dense value in O(K Q) work.

    Within a homogeneous run the per-element contributions form geometric
    sums that collapse in closed form, so cost depends on the number of runs,
    not elements.
    """
    if ray.num_runs == 0:
        raise EmptyRay("run-length information query over zero runs")
    chi_t, chi_0, w = ray.chi_t, ray.chi_0, ray.widths.astype(np.float64)
    lse = np.asarray(logodds.logsumexp(chi_t, axis=-1), dtype=np.float64).reshape(-1)
    log_p0 = -lse
    pmf = logodds.softmax_pmf(chi_t)

    f_free = logodds.f_logratio_rows(params.phi_minus - chi_0, chi_t)
    hit = _hit_models(params)
    f_hit = logodds.f_logratio_rows(hit[None, :, :] - chi_0[:, None, :], chi_t[:, None, :])

    run_log_p0 = w * log_p0
    before_log_p0 = np.concatenate([[0.0], np.cumsum(run_log_p0)[:-1]])
    before_f_free = np.concatenate([[0.0], np.cumsum(w * f_free)[:-1]])

    rho = pmf[:, 1:] * np.exp(before_log_p0)[:, None]
    beta = f_hit + before_f_free[:, None]
    s0, s1 = _geometric_sums(log_p0, ray.widths)
    theta = beta * s0[:, None] + (f_free * s1)[:, None]
    terms = rho * theta
    hit_term = float(terms.sum())
    free_term = float(math.exp(np.sum(run_log_p0)) * np.sum(w * f_free))
    return BeamMI(
        value=hit_term + free_term,
        hit_term=hit_term,
        free_term=free_term,
        terms=terms if return_detail else None,
        p_detail=rho if return_detail else None,
        c_detail=theta if return_detail else None,
    )


def beam_mi_srle_direct(ray: SrleRay, params: SensorParams) -> float:
    """Direct run-by-run evaluation with explicit geometric summation loops.

    Rebuilds rho and beta from scratch per run and sums the in-run series
    term by term; independent of both the closed forms and the recursion.
    """
    if ray.num_runs == 0:
        raise EmptyRay("run-length information query over zero runs")
    pmf = logodds.softmax_pmf(ray.chi_t)
    hit = _hit_models(params)
    k_classes = params.num_classes
    total = 0.0
    for k in range(1, k_classes + 1):
        for q in range(ray.num_runs):
            rho = pmf[q, k]
            beta = logodds.f_logratio(hit[k - 1] - ray.chi_0[q], ray.chi_t[q])
            for j in range(q):
                rho *= pmf[j, 0] ** int(ray.widths[j])
                beta += int(ray.widths[j]) * logodds.f_logratio(
                    params.phi_minus - ray.chi_0[j], ray.chi_t[j]
                )
            ffq = logodds.f_logratio(params.phi_minus - ray.chi_0[q], ray.chi_t[q])
            s0 = sum(pmf[q, 0] ** j for j in range(int(ray.widths[q])))
            s1 = sum(j * pmf[q, 0] ** j for j in range(int(ray.widths[q])))
            total += rho * (beta * s0 + ffq * s1)
    p_pass = float(np.prod([pmf[q, 0] ** int(ray.widths[q]) for q in range(ray.num_runs)]))
    c_pass = sum(
        int(ray.widths[q])
        * logodds.f_logratio(params.phi_minus - ray.chi_0[q], ray.chi_t[q])
        for q in range(ray.num_runs)
    )
    return total + p_pass * c_pass


ORACLE_MAX_CELLS = 8
ORACLE_MAX_CLASSES = 3


def beam_mi_oracle(h_t: np.ndarray, h_0: np.ndarray, params: SensorParams) -> float:
    """Ground-truth beam information by outcome-tree enumeration.

    Walks every (hit cell, class) outcome plus the all-free outcome, forms
    the exact posterior of each cell with the plain Bayesian update, and
    accumulates probability-weighted KL divergences computed term by term.
    Restricted to small instances; everything else is tested against this.
    """
    h_t = np.atleast_2d(np.asarray(h_t, dtype=np.float64))
    h_0 = np.broadcast_to(np.asarray(h_0, dtype=np.float64), h_t.shape)
    n_cells = h_t.shape[0]
    k_classes = params.num_classes
    if n_cells == 0:
        raise EmptyRay("oracle query over zero cells")
    if n_cells > ORACLE_MAX_CELLS or k_classes > ORACLE_MAX_CLASSES:
        raise ScaleExceeded(
            f"oracle handles N <= {ORACLE_MAX_CELLS}, K <= {ORACLE_MAX_CLASSES}"
        )

    def kl(post_h: np.ndarray, cur_h: np.ndarray) -> float:
        p = logodds.softmax_pmf(post_h)
        q = logodds.softmax_pmf(cur_h)
        acc = 0.0
        for pk, qk in zip(p, q):
            if pk > 0.0:
                acc += pk * math.log(pk / qk)
        return acc

    pmf = logodds.softmax_pmf(h_t)
    total = 0.0
    for n in range(n_cells):
        free_info = sum(
            kl(logodds.posterior_update(h_t[i], params.phi_minus, h_0[i]), h_t[i])
            for i in range(n)
        )
        prob_before = float(np.prod(pmf[:n, 0]))
        for y in range(1, k_classes + 1):
            prob = prob_before * pmf[n, y]
            info = free_info + kl(
                logodds.posterior_update(h_t[n], params.hit_logodds(y), h_0[n]), h_t[n]
            )
            total += prob * info
    prob_pass = float(np.prod(pmf[:, 0]))
    info_pass = sum(
        kl(logodds.posterior_update(h_t[i], params.phi_minus, h_0[i]), h_t[i])
        for i in range(n_cells)
    )
    return total + prob_pass * info_pass


# -- beam selection and trajectory evaluation --------------------------------


def select_nonoverlapping(traces: list[RayTrace], skip_first_cell: bool = True) -> list[int]:
    """Greedy maximal subset of traces sharing no cell, in input order.

    The cell a beam starts in is excluded by default: it is the sensor's own
    location, carries no range information, and would otherwise make every
    pair of beams from one pose overlap trivially.
    """
    chosen: list[int] = []
    used: set[tuple[int, int, int]] = set()
    for idx, trace in enumerate(traces):
        cells = trace.cells[1:] if skip_first_cell else trace.cells
        cell_set = {tuple(c) for c in cells}
        if cell_set & used:
            continue
        chosen.append(idx)
        used |= cell_set
    return chosen


def beam_mi_for_trace(gmap: GridMap, trace: RayTrace, params: SensorParams,
                      skip_first_cell: bool = True) -> float:
    """Dense beam information over a grid trace (sensor cell excluded)."""
    cells = trace.cells[1:] if skip_first_cell else trace.cells
    if cells.shape[0] == 0:
        return 0.0
    h_t = gmap.cells[tuple(cells.T)]
    h_0 = np.broadcast_to(gmap.prior, h_t.shape)
    return beam_mi_dense(h_t, h_0, params).value


@dataclass
class TrajectoryMI:
    value: float
    beams_total: int
    beams_kept: int


def trajectory_mi(
    mapper,
    beams_per_pose: list[list[BeamMeasurement]],
    params: SensorParams,
    return_detail: bool = False,
):
    """Information of a whole observation sequence: cast every beam, drop
    overlapping ones greedily across the horizon, and add up per-beam values.

    ``mapper`` is a GridMap (dense evaluation) or a semantic octree (run-
    length evaluation over its leaves). Out-of-bounds beams propagate.
    """
    from . import octree as octree_mod  # local import; octree depends on grid

    is_tree = isinstance(mapper, octree_mod.SemanticOctree)
    flat_beams = [b for fan in beams_per_pose for b in fan]
    if is_tree:
        traces = [mapper.cast_elements(b) for b in flat_beams]
    else:
        traces = [mapper.cast_ray(b) for b in flat_beams]
    keep = select_nonoverlapping(traces)
    total = 0.0
    for idx in keep:
        if is_tree:
            ray = mapper.encode_trace(traces[idx], skip_first_cell=True)
            if ray is not None and ray.num_runs > 0:
                total += beam_mi_srle(ray, params).value
        else:
            total += beam_mi_for_trace(mapper, traces[idx], params)
    if return_detail:
        return TrajectoryMI(value=total, beams_total=len(flat_beams), beams_kept=len(keep))
    return total


# -- binary collapse ----------------------------------------------------------


def collapse_to_binary(h: np.ndarray) -> np.ndarray:
    """Project K+1 class log-odds to the 2-class occupied/free form.

    The occupied log-odds is log-sum-exp over all occupied classes, so the
    collapsed PMF is [p_free, 1 - p_free].
    """
    h = np.asarray(h, dtype=np.float64)
    occ = logodds.logsumexp(h[..., 1:], axis=-1)
    out = np.zeros(h.shape[:-1] + (2,), dtype=np.float64)
    out[..., 1] = occ
    return out


def fan_beams(
    center: np.ndarray,
    num_beams: int,
    max_range: float,
    heading: float = 0.0,
    fov: float = 2.0 * math.pi,
) -> list[BeamMeasurement]:
    """Planar candidate beams around ``heading``; angles sit strictly between
    the fov edges (half-step offset) so fans avoid exact axis alignment."""
    start = heading - fov / 2.0
    step = fov / num_beams
    out = []
    for b in range(num_beams):
        angle = start + (b + 0.5) * step
        out.append(
            BeamMeasurement(
                origin=np.array(center, dtype=np.float64),
                direction=np.array([math.cos(angle), math.sin(angle), 0.0]),
                range=max_range,
                category=None,
                max_range=max_range,
            )
        )
    return out


def mi_surface(
    gmap: GridMap,
    params: SensorParams,
    num_beams: int = 16,
    max_range: float | None = None,
    binary: bool = False,
    binary_params: SensorParams | None = None,
) -> np.ndarray:
    """Information of a full fan at every free-labeled cell of a 2-D map.

    Returns an (nx, ny) array; cells whose most likely class is not free hold
    0. ``binary`` evaluates the occupancy-only collapse instead, using a
    1-class sensor profile.

    The surface is a per-cell field for inspection, so every beam of the fan
    is summed (each beam's value is exact on its own); the non-overlap
    filtering that the trajectory bound requires would make the field depend
    on beam enumeration order.
    """
    if max_range is None:
        max_range = max(gmap.dims[:2]) * gmap.resolution
    if binary and binary_params is None:
        binary_params = SensorParams.default(1)
    labels = gmap.most_likely()[:, :, 0]
    out = np.zeros(gmap.dims[:2], dtype=np.float64)
    for i in range(gmap.dims[0]):
        for j in range(gmap.dims[1]):
            if labels[i, j] != 0:
                continue
            center = gmap.cell_center((i, j, 0))
            fan = fan_beams(center, num_beams, max_range)
            traces = [gmap.cast_ray(b) for b in fan]
            total = 0.0
            for trace in traces:
                cells = trace.cells[1:]
                if cells.shape[0] == 0:
                    continue
                h_t = gmap.cells[tuple(cells.T)]
                h_0 = np.broadcast_to(gmap.prior, h_t.shape)
                if binary:
                    total += beam_mi_dense(
                        collapse_to_binary(h_t), collapse_to_binary(h_0), binary_params
                    ).value
                else:
                    total += beam_mi_dense(h_t, h_0, params).value
            out[i, j] = total
    return out


def dump_terms(mi_result: BeamMI, fh, kind: str = "n") -> None:
    """Per-term CSV of a detail-carrying result.

    Columns: 1-based cell or run index, class, event probability (p or rho),
    accumulated log-ratio (C or Theta), and their product."""
    if mi_result.terms is None:
        raise ValueError("compute the beam value with return_detail=True first")
    fh.write(f"{kind},k,p,c,term\n")
    rows, cols = mi_result.terms.shape
    for r in range(rows):
        for c in range(cols):
            fh.write(
                f"{r + 1},{c + 1},{float(mi_result.p_detail[r, c])!r},"
                f"{float(mi_result.c_detail[r, c])!r},{float(mi_result.terms[r, c])!r}\n"
            )
