"""Time integration of the underdamped Langevin process and its variants.

Four process kinds are supported:

* ``forward``     dq = p dt,  dp = -(grad U + gamma p) dt + sqrt(2 gamma eps) dB
* ``perturbed``   forward plus a small elliptic regularisation of the position
                  equation: dq += -alpha grad U dt + sqrt(2 alpha eps) dW
* ``reversed``    dq = -p dt, dp = +(grad U + gamma p) dt + sqrt(2 gamma eps) dB
* ``zero_noise``  the deterministic (eps = 0) forward flow

Noise is counter-based: every trajectory owns a Philox stream keyed by
(seed, stream_id) and consumes it in fixed-size chunks, so a trajectory's
path is bit-reproducible regardless of which other trajectories run next to
it, on how many workers, or in which order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from .errors import InputError, NumericsError
from .potentials import PotentialModel

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a soft dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


EULER = "euler-maruyama"
OBABO = "splitting-obabo"

BLOWUP_LIMIT = 1.0e8
NOISE_CHUNK = 1024  # steps per Philox counter block


# -- process and configuration ------------------------------------------------


@dataclass(frozen=True)
class ProcessKind:
    kind: str
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in ("forward", "perturbed", "reversed", "zero_noise"):
            raise InputError(f"unknown process kind {self.kind!r}")
        if self.kind == "perturbed" and self.alpha <= 0:
            raise InputError("perturbed process requires alpha > 0")

    @classmethod
    def forward(cls):
        return cls("forward")

    @classmethod
    def perturbed(cls, alpha: float):
        return cls("perturbed", float(alpha))

    @classmethod
    def reversed(cls):
        return cls("reversed")

    @classmethod
    def zero_noise(cls):
        return cls("zero_noise")


@dataclass(frozen=True)
class IntegratorConfig:
    scheme: str = OBABO
    dt: float = 1.0e-3
    max_time: float = 1.0e6
    rng_seed: int = 0
    stream_id: int = 0

    def __post_init__(self):
        if self.scheme not in (EULER, OBABO):
            raise InputError(f"unknown scheme {self.scheme!r}")
        if not 0 < self.dt < self.max_time:
            raise InputError("require 0 < dt < max_time")


@dataclass(frozen=True)
class StopSpec:
    """First-hit stopping rule: any combination of the supported predicates."""

    target_center: Optional[np.ndarray] = None
    target_radius: float = 0.0
    avoid_center: Optional[np.ndarray] = None
    avoid_radius: float = 0.0
    energy_level: Optional[float] = None
    domain_bound: Optional[float] = None
    level_fn: Optional[Callable] = None  # vectorized f(x) -> value, stop when >= level
    level_value: float = 0.0

    @classmethod
    def target_ball(cls, center, radius):
        return cls(target_center=np.asarray(center, dtype=float), target_radius=float(radius))

    @classmethod
    def none(cls):
        return cls()


@dataclass(frozen=True)
class StopEvent:
    reason: str  # hit_target | hit_avoid | energy_level_crossed | left_domain | timeout
    time: float
    state: np.ndarray


# -- counter-based noise streams ----------------------------------------------


def _philox_key(seed: int, stream_id: int) -> np.ndarray:
    return np.array([np.uint64(seed & (2**64 - 1)), np.uint64(stream_id & (2**64 - 1))])


def noise_block(seed: int, stream_id: int, chunk_index: int, shape) -> np.ndarray:
    """Standard normals for one chunk of one stream.

    Chunks live 2^128 apart in Philox counter space, so consuming a variable
    number of words inside a chunk can never bleed into the next one.
    """
    counter = np.array([0, 0, np.uint64(chunk_index), 0], dtype=np.uint64)
    bg = np.random.Philox(key=_philox_key(seed, stream_id), counter=counter)
    return np.random.Generator(bg).standard_normal(shape)


class NoiseStream:
    """Sequential per-step noise for a single trajectory."""

    def __init__(self, seed: int, stream_id: int, width: int):
        self.seed = seed
        self.stream_id = stream_id
        self.width = width  # normals consumed per step
        self._chunk_index = -1
        self._chunk = None

    def step(self, step_index: int) -> np.ndarray:
        chunk, offset = divmod(step_index, NOISE_CHUNK)
        if chunk != self._chunk_index:
            self._chunk = noise_block(self.seed, self.stream_id, chunk, (NOISE_CHUNK, self.width))
            self._chunk_index = chunk
        return self._chunk[offset]


# -- single steps ---------------------------------------------------------------


def _drift(process: ProcessKind, model, gamma, q, p):
    """(dq/dt, dp/dt) drift of the chosen SDE, vectorized over leading axes."""
    grad = model.gradient(q)
    if process.kind == "reversed":
        return -p, grad + gamma * p
    dq = p
    dp = -grad - gamma * p
    if process.kind == "perturbed":
        dq = dq - process.alpha * grad
    return dq, dp


def step(
    process: ProcessKind,
    model: PotentialModel,
    gamma: float,
    epsilon: float,
    state,
    dt: float,
    noise,
    scheme: str = EULER,
):
    """Advance one step; returns the new phase vector.

    Noise layout: ``euler-maruyama`` consumes d normals for the momentum
    equation (plus d more leading ones for the position equation of the
    perturbed process, 2d total).  ``splitting-obabo`` consumes 2d normals
    (two momentum half-kicks) and is only defined for the forward and
    zero-noise processes.
    """
    x = np.asarray(state, dtype=float)
    d = model.dimension
    if x.shape[-1] != 2 * d:
        raise InputError(f"state must have length {2 * d}")
    q, p = x[..., :d].copy(), x[..., d:].copy()
    eps = 0.0 if process.kind == "zero_noise" else float(epsilon)
    noise = np.asarray(noise, dtype=float) if noise is not None else np.zeros(0)

    if scheme == EULER:
        need = 2 * d if process.kind == "perturbed" else d
        if eps > 0 and noise.shape[-1] != need:
            raise InputError(f"{process.kind} Euler step needs {need} normals")
        dq, dp = _drift(process, model, gamma, q, p)
        q_new = q + dq * dt
        p_new = p + dp * dt
        if eps > 0:
            if process.kind == "perturbed":
                q_new = q_new + np.sqrt(2 * process.alpha * eps * dt) * noise[..., :d]
                p_new = p_new + np.sqrt(2 * gamma * eps * dt) * noise[..., d:]
            else:
                p_new = p_new + np.sqrt(2 * gamma * eps * dt) * noise
    elif scheme == OBABO:
        if process.kind in ("perturbed", "reversed"):
            raise InputError("splitting-obabo is defined for forward/zero_noise only")
        if eps > 0 and noise.shape[-1] != 2 * d:
            raise InputError("obabo step needs 2d normals")
        a = np.exp(-gamma * dt / 2.0)
        b = np.sqrt(eps * (1.0 - a * a))
        n1 = noise[..., :d] if eps > 0 else 0.0
        n2 = noise[..., d:] if eps > 0 else 0.0
        p = a * p + b * n1                      # O: exact OU half-step
        p = p - 0.5 * dt * model.gradient(q)    # B
        q = q + dt * p                          # A
        p = p - 0.5 * dt * model.gradient(q)    # B
        q_new, p_new = q, a * p + b * n2        # O
    else:
        raise InputError(f"unknown scheme {scheme!r}")

    out = np.concatenate([np.atleast_1d(q_new), np.atleast_1d(p_new)], axis=-1)
    if not np.all(np.isfinite(out)) or np.any(np.abs(out) > BLOWUP_LIMIT):
        raise NumericsError(f"trajectory blew up at state {out}")
    return out


def _noise_width(process: ProcessKind, scheme: str, d: int) -> int:
    if scheme == OBABO:
        return 2 * d
    return 2 * d if process.kind == "perturbed" else d


# -- single-trajectory integration ----------------------------------------------


def _phase_dist(x, center, d):
    """Distance with the same summation order as the batch engine."""
    dq2 = ((x[:d] - center[:d]) ** 2).sum()
    dp2 = ((x[d:] - center[d:]) ** 2).sum()
    return np.sqrt(dq2 + dp2)


def _check_stop(stop: StopSpec, model, x_prev, x_new, t_prev, dt):
    """First predicate fired during (t_prev, t_prev+dt]; linear crossing time."""
    d = len(x_prev) // 2

    def interp(val_prev, val_new, threshold):
        denom = val_new - val_prev
        frac = 0.0 if denom == 0 else (threshold - val_prev) / denom
        return min(max(frac, 0.0), 1.0)

    if stop.target_center is not None:
        r_new = _phase_dist(x_new, stop.target_center, d)
        if r_new <= stop.target_radius:
            r_prev = _phase_dist(x_prev, stop.target_center, d)
            frac = interp(r_prev, r_new, stop.target_radius)
            return StopEvent("hit_target", t_prev + frac * dt, x_prev + frac * (x_new - x_prev))
    if stop.avoid_center is not None:
        r_new = _phase_dist(x_new, stop.avoid_center, d)
        if r_new <= stop.avoid_radius:
            r_prev = _phase_dist(x_prev, stop.avoid_center, d)
            frac = interp(r_prev, r_new, stop.avoid_radius)
            return StopEvent("hit_avoid", t_prev + frac * dt, x_prev + frac * (x_new - x_prev))
    if stop.energy_level is not None:
        from .potentials import hamiltonian

        v_new = hamiltonian(model, x_new)
        if v_new >= stop.energy_level:
            v_prev = hamiltonian(model, x_prev)
            frac = interp(v_prev, v_new, stop.energy_level)
            return StopEvent("energy_level_crossed", t_prev + frac * dt, x_prev + frac * (x_new - x_prev))
    if stop.level_fn is not None:
        v_new = float(stop.level_fn(x_new[None, :])[0])
        if v_new >= stop.level_value:
            v_prev = float(stop.level_fn(x_prev[None, :])[0])
            frac = interp(v_prev, v_new, stop.level_value)
            return StopEvent("energy_level_crossed", t_prev + frac * dt, x_prev + frac * (x_new - x_prev))
    if stop.domain_bound is not None and np.linalg.norm(x_new) > stop.domain_bound:
        return StopEvent("left_domain", t_prev + dt, x_new)
    return None


def integrate_until(
    process: ProcessKind,
    model: PotentialModel,
    gamma: float,
    epsilon: float,
    start,
    stop: StopSpec,
    config: IntegratorConfig,
) -> StopEvent:
    """Step until the first stop predicate fires or max_time elapses.

    Deterministic given (rng_seed, stream_id, config); timeouts are reported
    as events, not errors.
    """
    x = np.asarray(start, dtype=float).copy()
    if not np.all(np.isfinite(x)):
        raise InputError("start state must be finite")
    d = model.dimension
    if process.kind == "forward" and _fast_path_ok(model, config.scheme, stop):
        times, reasons, finals = batch_hit_times(
            model, gamma, epsilon, x[None, :], stop, config, np.array([config.stream_id])
        )
        names = {HIT_TARGET: "hit_target", HIT_AVOID: "hit_avoid", TIMEOUT: "timeout"}
        return StopEvent(names[int(reasons[0])], float(times[0]), finals[0])
    # immediate hits at time zero
    event = _check_stop(stop, model, x, x, 0.0, 0.0)
    if event is not None:
        return event
    width = _noise_width(process, config.scheme, d)
    stream = NoiseStream(config.rng_seed, config.stream_id, width)
    n_steps = int(np.ceil(config.max_time / config.dt))
    for k in range(n_steps):
        noise = stream.step(k) if (epsilon > 0 and process.kind != "zero_noise") else np.zeros(width)
        x_new = step(process, model, gamma, epsilon, x, config.dt, noise, config.scheme)
        event = _check_stop(stop, model, x, x_new, k * config.dt, config.dt)
        if event is not None:
            return event
        x = x_new
    return StopEvent("timeout", float(config.max_time), x)


# -- vectorized ensemble engine ---------------------------------------------------


HIT_TARGET, HIT_AVOID, TIMEOUT, LEVEL_CROSSED = 0, 1, 2, 3


@njit(cache=True)
def _grad_into(q_row, coefs, exps, out):
    """Gradient of U at one point from zero-padded monomial arrays."""
    d = q_row.shape[0]
    for a in range(d):
        acc = 0.0
        for m in range(coefs.shape[1]):
            c = coefs[a, m]
            if c == 0.0:
                continue
            term = c
            for k in range(d):
                e = exps[a, m, k]
                for _ in range(e):
                    term *= q_row[k]
            acc += term
        out[a] = acc


@njit(cache=True)
def _chunk_kernel_balls(
    q, p, noise, steps, scheme_obabo,
    a_coef, b_coef, sq_em, dt, gamma,
    coefs, exps,
    has_target, tc, tr, has_avoid, ac, ar,
    hit_step, hit_frac, hit_code, ev_q, ev_p,
):
    """March one noise chunk for every running trajectory (ball stops only).

    hit_code: -1 running, 0 target, 1 avoid, -3 blow-up.  Event step/fraction
    and the interpolated state are written per trajectory; positions and
    momenta of still-running rows are updated in place.
    """
    n = q.shape[0]
    d = q.shape[1]
    g = np.empty(d)
    qn = np.empty(d)
    pn = np.empty(d)
    for i in range(n):
        if hit_code[i] != -1:
            continue
        for s in range(steps):
            if scheme_obabo:
                for k in range(d):
                    pn[k] = a_coef * p[i, k] + b_coef * noise[i, s, k]
                _grad_into(q[i], coefs, exps, g)
                for k in range(d):
                    pn[k] = pn[k] - 0.5 * dt * g[k]
                for k in range(d):
                    qn[k] = q[i, k] + dt * pn[k]
                _grad_into(qn, coefs, exps, g)
                for k in range(d):
                    pn[k] = pn[k] - 0.5 * dt * g[k]
                for k in range(d):
                    pn[k] = a_coef * pn[k] + b_coef * noise[i, s, d + k]
            else:
                _grad_into(q[i], coefs, exps, g)
                for k in range(d):
                    qn[k] = q[i, k] + dt * p[i, k]
                for k in range(d):
                    pn[k] = p[i, k] + dt * (-g[k] - gamma * p[i, k]) + sq_em * noise[i, s, k]

            blown = False
            for k in range(d):
                if abs(qn[k]) > BLOWUP_LIMIT or abs(pn[k]) > BLOWUP_LIMIT:
                    blown = True
            if blown:
                hit_code[i] = -3
                hit_step[i] = s
                break

            fired = False
            for which in range(2):
                if fired:
                    break
                if which == 0:
                    if not has_target:
                        continue
                    center, radius, code = tc, tr, 0
                else:
                    if not has_avoid:
                        continue
                    center, radius, code = ac, ar, 1
                acc_q = 0.0
                acc_p = 0.0
                for k in range(d):
                    dq = qn[k] - center[k]
                    acc_q += dq * dq
                for k in range(d):
                    dp = pn[k] - center[d + k]
                    acc_p += dp * dp
                r_new = np.sqrt(acc_q + acc_p)
                if r_new <= radius:
                    acc_q = 0.0
                    acc_p = 0.0
                    for k in range(d):
                        dq = q[i, k] - center[k]
                        acc_q += dq * dq
                    for k in range(d):
                        dp = p[i, k] - center[d + k]
                        acc_p += dp * dp
                    r_old = np.sqrt(acc_q + acc_p)
                    denom = r_new - r_old if r_new != r_old else 1.0
                    frac = (radius - r_old) / denom
                    if frac < 0.0:
                        frac = 0.0
                    elif frac > 1.0:
                        frac = 1.0
                    hit_code[i] = code
                    hit_step[i] = s
                    hit_frac[i] = frac
                    for k in range(d):
                        ev_q[i, k] = q[i, k] + frac * (qn[k] - q[i, k])
                        ev_p[i, k] = p[i, k] + frac * (pn[k] - p[i, k])
                    fired = True
            if fired:
                break
            for k in range(d):
                q[i, k] = qn[k]
                p[i, k] = pn[k]


def _fast_path_ok(model, scheme, stop):
    return (
        HAVE_NUMBA
        and scheme in (OBABO, EULER)
        and stop.level_fn is None
        and stop.energy_level is None
        and stop.domain_bound is None
        and (stop.target_center is not None or stop.avoid_center is not None)
    )


def _batch_hit_times_fast(model, gamma, epsilon, starts, stop, config, stream_ids):
    """Chunked numba driver; same noise protocol and arithmetic as the kernel."""
    starts = np.asarray(starts, dtype=float)
    n, dim2 = starts.shape
    d = model.dimension
    dt = config.dt
    n_steps = int(np.ceil(config.max_time / dt))
    width = _noise_width(ProcessKind.forward(), config.scheme, d)
    coefs, exps = model.gradient_monomial_arrays()

    times = np.full(n, float(config.max_time))
    reasons = np.full(n, TIMEOUT, dtype=np.int8)
    finals = starts.copy()
    q = np.ascontiguousarray(starts[:, :d])
    p = np.ascontiguousarray(starts[:, d:])
    active = np.arange(n)
    sid = np.asarray(stream_ids)

    tc = stop.target_center if stop.target_center is not None else np.zeros(2 * d)
    ac = stop.avoid_center if stop.avoid_center is not None else np.zeros(2 * d)
    has_target = stop.target_center is not None
    has_avoid = stop.avoid_center is not None

    def dist(qq, pp, center):
        dd = ((qq - center[:d]) ** 2).sum(axis=1) + ((pp - center[d:]) ** 2).sum(axis=1)
        return np.sqrt(dd)

    # hits at time zero
    for center, radius, code, present in (
        (tc, stop.target_radius, HIT_TARGET, has_target),
        (ac, stop.avoid_radius, HIT_AVOID, has_avoid),
    ):
        if present and len(active):
            inside = dist(q, p, center) <= radius
            if np.any(inside):
                idx = active[inside]
                times[idx] = 0.0
                reasons[idx] = code
                keep = ~inside
                active, q, p = active[keep], q[keep], p[keep]

    a_coef = np.exp(-gamma * dt / 2.0)
    b_coef = np.sqrt(epsilon * (1.0 - a_coef * a_coef))
    sq_em = np.sqrt(2 * gamma * epsilon * dt)

    chunk_index = 0
    while len(active) and chunk_index * NOISE_CHUNK < n_steps:
        na = len(active)
        steps = min(NOISE_CHUNK, n_steps - chunk_index * NOISE_CHUNK)
        noise = np.empty((na, NOISE_CHUNK, width))
        for row, i in enumerate(active):
            noise[row] = noise_block(config.rng_seed, int(sid[i]), chunk_index, (NOISE_CHUNK, width))
        hit_step = np.zeros(na, dtype=np.int64)
        hit_frac = np.zeros(na)
        hit_code = np.full(na, -1, dtype=np.int8)
        ev_q = np.zeros((na, d))
        ev_p = np.zeros((na, d))
        _chunk_kernel_balls(
            q, p, noise, steps, config.scheme == OBABO,
            a_coef, b_coef, sq_em, dt, gamma,
            coefs, exps,
            has_target, tc, float(stop.target_radius),
            has_avoid, ac, float(stop.avoid_radius),
            hit_step, hit_frac, hit_code, ev_q, ev_p,
        )
        if np.any(hit_code == -3):
            bad = active[hit_code == -3][0]
            raise NumericsError(f"trajectory {bad} blew up during integration")
        done = hit_code >= 0
        if np.any(done):
            idx = active[done]
            k_global = chunk_index * NOISE_CHUNK + hit_step[done]
            times[idx] = k_global * dt + hit_frac[done] * dt
            reasons[idx] = hit_code[done]
            finals[idx, :d] = ev_q[done]
            finals[idx, d:] = ev_p[done]
            keep = ~done
            active, q, p = active[keep], np.ascontiguousarray(q[keep]), np.ascontiguousarray(p[keep])
        chunk_index += 1

    if len(active):
        finals[active, :d] = q
        finals[active, d:] = p
    return times, reasons, finals


def batch_hit_times(
    model: PotentialModel,
    gamma: float,
    epsilon: float,
    starts: np.ndarray,
    stop: StopSpec,
    config: IntegratorConfig,
    stream_ids: np.ndarray,
):
    """Integrate many forward trajectories at once (one Philox stream each).

    Returns (times, reasons, final_states); reasons holds the integer codes
    HIT_TARGET / HIT_AVOID / TIMEOUT / LEVEL_CROSSED.  Noise for trajectory i
    is consumed from stream (rng_seed, stream_ids[i]) in NOISE_CHUNK blocks,
    so a trajectory's path does not depend on the batch around it.  Ball-only
    stop rules run through a compiled per-chunk kernel when numba is present;
    level and domain predicates use the vectorized numpy fallback.
    """
    if _fast_path_ok(model, config.scheme, stop):
        return _batch_hit_times_fast(model, gamma, epsilon, starts, stop, config, stream_ids)
    starts = np.asarray(starts, dtype=float)
    n, dim2 = starts.shape
    d = model.dimension
    if dim2 != 2 * d:
        raise InputError("starts must have shape (n, 2d)")
    scheme = config.scheme
    width = _noise_width(ProcessKind.forward(), scheme, d)
    dt = config.dt
    n_steps = int(np.ceil(config.max_time / dt))

    times = np.full(n, float(config.max_time))
    reasons = np.full(n, TIMEOUT, dtype=np.int8)
    finals = starts.copy()

    q = starts[:, :d].copy()
    p = starts[:, d:].copy()
    active = np.arange(n)
    sid = np.asarray(stream_ids)

    tc, tr = stop.target_center, stop.target_radius
    ac, ar = stop.avoid_center, stop.avoid_radius
    lf, lv = stop.level_fn, stop.level_value

    def dist(qq, pp, center):
        dd = ((qq - center[:d]) ** 2).sum(axis=1) + ((pp - center[d:]) ** 2).sum(axis=1)
        return np.sqrt(dd)

    def settle(idx, reason, t_event, q_ev, p_ev):
        times[idx] = t_event
        reasons[idx] = reason
        finals[idx, :d] = q_ev
        finals[idx, d:] = p_ev

    # hits at time zero
    for center, radius, code in ((tc, tr, HIT_TARGET), (ac, ar, HIT_AVOID)):
        if center is not None and len(active):
            inside = dist(q, p, center) <= radius
            if np.any(inside):
                settle(active[inside], code, 0.0, q[inside], p[inside])
                keep = ~inside
                active, q, p = active[keep], q[keep], p[keep]
    if lf is not None and len(active):
        inside = lf(np.concatenate([q, p], axis=1)) >= lv
        if np.any(inside):
            settle(active[inside], LEVEL_CROSSED, 0.0, q[inside], p[inside])
            keep = ~inside
            active, q, p = active[keep], q[keep], p[keep]

    a_coef = np.exp(-gamma * dt / 2.0)
    b_coef = np.sqrt(epsilon * (1.0 - a_coef * a_coef))
    sq_em = np.sqrt(2 * gamma * epsilon * dt)

    chunk = None
    chunk_idx = -1

    for k in range(n_steps):
        if len(active) == 0:
            break
        c_idx, offset = divmod(k, NOISE_CHUNK)
        if c_idx != chunk_idx:
            chunk = np.empty((len(active), NOISE_CHUNK, width))
            for row, i in enumerate(active):
                chunk[row] = noise_block(config.rng_seed, int(sid[i]), c_idx, (NOISE_CHUNK, width))
            chunk_idx = c_idx
        noise = chunk[:, offset, :]

        if scheme == OBABO:
            p_mid = a_coef * p + b_coef * noise[:, :d]
            p_mid = p_mid - 0.5 * dt * model.gradient(q)
            q_new = q + dt * p_mid
            p_mid = p_mid - 0.5 * dt * model.gradient(q_new)
            p_new = a_coef * p_mid + b_coef * noise[:, d:]
        else:
            grad = model.gradient(q)
            q_new = q + dt * p
            p_new = p + dt * (-grad - gamma * p) + sq_em * noise[:, :d]

        if k % 16 == 0 and (
            np.any(np.abs(q_new) > BLOWUP_LIMIT) or np.any(np.abs(p_new) > BLOWUP_LIMIT)
        ):
            raise NumericsError(f"ensemble trajectory blew up at step {k}")

        done = np.zeros(len(active), dtype=bool)
        t_prev = k * dt

        for center, radius, code in ((tc, tr, HIT_TARGET), (ac, ar, HIT_AVOID)):
            if center is None:
                continue
            r_new = dist(q_new, p_new, center)
            hit = (r_new <= radius) & ~done
            if np.any(hit):
                r_old = dist(q, p, center)[hit]
                denom = np.where(r_new[hit] != r_old, r_new[hit] - r_old, 1.0)
                frac = np.clip((radius - r_old) / denom, 0.0, 1.0)
                idx = active[hit]
                settle(
                    idx,
                    code,
                    t_prev + frac * dt,
                    q[hit] + frac[:, None] * (q_new[hit] - q[hit]),
                    p[hit] + frac[:, None] * (p_new[hit] - p[hit]),
                )
                done |= hit
        if lf is not None:
            val_new = lf(np.concatenate([q_new, p_new], axis=1))
            hit = (val_new >= lv) & ~done
            if np.any(hit):
                val_old = lf(np.concatenate([q, p], axis=1))[hit]
                denom = np.where(val_new[hit] != val_old, val_new[hit] - val_old, 1.0)
                frac = np.clip((lv - val_old) / denom, 0.0, 1.0)
                idx = active[hit]
                settle(
                    idx,
                    LEVEL_CROSSED,
                    t_prev + frac * dt,
                    q[hit] + frac[:, None] * (q_new[hit] - q[hit]),
                    p[hit] + frac[:, None] * (p_new[hit] - p[hit]),
                )
                done |= hit

        if np.any(done):
            keep = ~done
            active, q, p = active[keep], q_new[keep], p_new[keep]
            chunk = chunk[keep]
        else:
            q, p = q_new, p_new

    if len(active):
        finals[active, :d] = q
        finals[active, d:] = p
    return times, reasons, finals


# -- generator application ---------------------------------------------------------


@dataclass(frozen=True)
class FunctionBundle:
    """Scalar observable with its analytic derivatives on phase space."""

    f: Callable
    grad: Callable          # x -> (2d,) gradient
    laplacian_p: Callable   # x -> scalar trace of the momentum block of hess f
    hess: Optional[Callable] = None


def apply_generator(
    model: PotentialModel,
    gamma: float,
    epsilon: float,
    bundle: FunctionBundle,
    x,
    adjoint: bool = False,
    check_consistency: bool = False,
) -> float:
    """Kinetic Fokker-Planck generator (or its adjoint) applied to the bundle.

    L f = <p, grad_q f> - <grad U, grad_p f> - gamma <p, grad_p f>
          + gamma eps Lap_p f; the adjoint flips the signs of the first two
    (transport) terms.
    """
    x = np.asarray(x, dtype=float)
    d = model.dimension
    q, p = x[:d], x[d:]
    g = np.asarray(bundle.grad(x), dtype=float)
    if g.shape != (2 * d,):
        raise InputError("bundle gradient must return a vector of length 2d")
    if check_consistency:
        _check_bundle(bundle, x)
    gu = model.gradient(q)
    sign = -1.0 if adjoint else 1.0
    transport = sign * (np.dot(p, g[:d]) - np.dot(gu, g[d:]))
    friction = -gamma * np.dot(p, g[d:])
    diffusion = gamma * epsilon * float(bundle.laplacian_p(x))
    return float(transport + friction + diffusion)


def _check_bundle(bundle: FunctionBundle, x, h: float = 1.0e-6, tol: float = 1.0e-4):
    """Spot-check the bundle's gradient against finite differences of f."""
    x = np.asarray(x, dtype=float)
    g = np.asarray(bundle.grad(x), dtype=float)
    scale = max(1.0, np.linalg.norm(g))
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        fd = (bundle.f(x + e) - bundle.f(x - e)) / (2 * h)
        if abs(fd - g[i]) > tol * scale:
            raise InputError(
                f"bundle gradient component {i} mismatches finite differences: {g[i]} vs {fd}"
            )


# -- zero-noise flow -----------------------------------------------------------------


@dataclass
class FlowResult:
    limit_point: Optional[np.ndarray]
    settle_time: Optional[float]
    energy_trace: np.ndarray  # columns (t, V)
    converged: bool


def _rk4_field(model, gamma, x):
    d = model.dimension
    q, p = x[..., :d], x[..., d:]
    return np.concatenate([p, -model.gradient(q) - gamma * p], axis=-1)


def run_zero_noise_flow(
    model: PotentialModel,
    gamma: float,
    start,
    tol: float = 1.0e-3,
    max_time: float = 1.0e3,
    minima=None,
    dt: float = 1.0e-2,
) -> FlowResult:
    """Integrate the deterministic flow until it settles into a minimum ball.

    Uses RK4 with adaptive step halving keyed to local error; the energy trace
    is recorded for the monotonicity check dV/dt = -gamma |p|^2 <= 0.  Failure
    to settle (e.g. starting on the saddle's stable manifold) is reported, not
    raised.
    """
    from .potentials import hamiltonian

    x = np.asarray(start, dtype=float).copy()
    d = model.dimension
    if minima is None:
        raise InputError("run_zero_noise_flow needs the list of located minima")
    targets = [np.concatenate([np.atleast_1d(z), np.zeros(d)]) for z in np.atleast_2d(minima)]
    t = 0.0
    trace = [(0.0, hamiltonian(model, x))]
    for z in targets:
        if np.linalg.norm(x - z) < tol:
            return FlowResult(z, 0.0, np.array(trace), True)
    next_record = 0.0
    record_every = max(max_time / 4096.0, dt)
    while t < max_time:
        h = dt
        # one adaptive RK4 step (step doubling error control)
        while True:
            big = _rk4_step(model, gamma, x, h)
            half = _rk4_step(model, gamma, _rk4_step(model, gamma, x, h / 2), h / 2)
            err = np.max(np.abs(big - half))
            if err < 1.0e-10 or h < 1.0e-6:
                x = half
                break
            h /= 2.0
        t += h
        if t >= next_record:
            trace.append((t, hamiltonian(model, x)))
            next_record = t + record_every
        for z in targets:
            if np.linalg.norm(x - z) < tol:
                trace.append((t, hamiltonian(model, x)))
                return FlowResult(z, t, np.array(trace), True)
    trace.append((t, hamiltonian(model, x)))
    return FlowResult(None, None, np.array(trace), False)


def _rk4_step(model, gamma, x, h):
    k1 = _rk4_field(model, gamma, x)
    k2 = _rk4_field(model, gamma, x + 0.5 * h * k1)
    k3 = _rk4_field(model, gamma, x + 0.5 * h * k2)
    k4 = _rk4_field(model, gamma, x + h * k3)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


# -- linearization covariance ---------------------------------------------------------


@dataclass
class CovarianceResult:
    times: np.ndarray
    sigmas: np.ndarray        # (n_checkpoints, 2d, 2d)
    sigma_limit: np.ndarray
    frobenius_trace: np.ndarray  # ||Sigma_t - Sigma_limit||_F at each checkpoint


def evolve_linearization_covariance(
    model: PotentialModel,
    gamma: float,
    z,
    T: float,
    dt: float = 1.0e-3,
    n_checkpoints: int = 200,
) -> CovarianceResult:
    """Covariance of the frozen linearization around a minimum z.

    Integrates Sigma' = A Sigma + Sigma A^T + J J^T from Sigma(0) = 0 with
    A = [[0, I], [-H_U(z), -gamma I]] and J J^T = diag(0, I), and solves the
    stationary Lyapunov equation for the limit.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    d = model.dimension
    H = model.hessian(z)
    A = np.zeros((2 * d, 2 * d))
    A[:d, d:] = np.eye(d)
    A[d:, :d] = -H
    A[d:, d:] = -gamma * np.eye(d)
    if np.any(np.real(np.linalg.eigvals(A)) >= 0):
        raise InputError("linearization point is not a stable minimum")
    Q = np.zeros((2 * d, 2 * d))
    Q[d:, d:] = np.eye(d)
    sigma_limit = solve_continuous_lyapunov(A, -Q)

    n_steps = int(np.ceil(T / dt))
    stride = max(1, n_steps // n_checkpoints)
    S = np.zeros((2 * d, 2 * d))
    times, sigmas = [], []

    def rhs(Sig):
        return A @ Sig + Sig @ A.T + Q

    for k in range(n_steps):
        k1 = rhs(S)
        k2 = rhs(S + 0.5 * dt * k1)
        k3 = rhs(S + 0.5 * dt * k2)
        k4 = rhs(S + dt * k3)
        S = S + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        S = 0.5 * (S + S.T)
        if (k + 1) % stride == 0 or k == n_steps - 1:
            times.append((k + 1) * dt)
            sigmas.append(S.copy())
    sigmas = np.array(sigmas)
    fro = np.linalg.norm(sigmas - sigma_limit, axis=(1, 2))
    return CovarianceResult(np.array(times), sigmas, sigma_limit, fro)


# -- coupled distance probe --------------------------------------------------------------


@dataclass
class CoupledProbeResult:
    max_distance: float
    gronwall_bound: float
    truncated: bool
    truncation_time: Optional[float]


def coupled_distance_probe(
    model: PotentialModel,
    gamma: float,
    epsilon: float,
    alpha: float,
    start,
    T: float,
    config: IntegratorConfig,
    box_bound: float = 50.0,
) -> CoupledProbeResult:
    """Drive the forward and perturbed processes with shared Brownian noise.

    Reports sup_t |X^{alpha,eps} - X^eps| over [0, T] alongside the Gronwall
    envelope exp(Ct) [alpha Int |grad U(q^eps)| dr + sqrt(2 alpha eps)
    sup |W~|], with the Lipschitz constant C measured on the visited region.
    Euler-Maruyama is used for both so the coupling is exact in the driving
    noise; the discrete-time comparison is reported, never asserted.
    """
    if alpha < 0:
        raise InputError("alpha must be nonnegative")
    x_f = np.asarray(start, dtype=float).copy()
    x_p = x_f.copy()
    d = model.dimension
    dt = config.dt
    n_steps = int(np.ceil(T / dt))
    stream = NoiseStream(config.rng_seed, config.stream_id, 2 * d)
    max_dist = 0.0
    grad_int = 0.0
    wtilde = np.zeros(d)
    sup_wtilde = 0.0
    max_hess = 0.0
    truncated = False
    t_trunc = None
    proc_p = ProcessKind.perturbed(alpha) if alpha > 0 else ProcessKind.forward()
    for k in range(n_steps):
        noise = stream.step(k)
        nB, nW = noise[d:], noise[:d]  # momentum noise shared; W~ drives q of the perturbed
        x_f = step(ProcessKind.forward(), model, gamma, epsilon, x_f, dt, nB, EULER)
        pert_noise = np.concatenate([nW, nB]) if alpha > 0 else nB
        x_p = step(proc_p, model, gamma, epsilon, x_p, dt, pert_noise, EULER)
        if max(np.max(np.abs(x_f)), np.max(np.abs(x_p))) > box_bound:
            truncated = True
            t_trunc = (k + 1) * dt
            break
        grad_int += np.linalg.norm(model.gradient(x_f[:d])) * dt
        wtilde = wtilde + np.sqrt(dt) * nW
        sup_wtilde = max(sup_wtilde, float(np.linalg.norm(wtilde)))
        if k % 8 == 0:  # Lipschitz constant of grad U on the visited region, sampled
            for qq in (x_f[:d], x_p[:d]):
                max_hess = max(max_hess, float(np.max(np.abs(np.linalg.eigvalsh(model.hessian(qq))))))
        max_dist = max(max_dist, float(np.linalg.norm(x_f - x_p)))
    t_end = t_trunc if truncated else n_steps * dt
    C = 1.0 + gamma + max_hess
    bound = np.exp(C * t_end) * (alpha * grad_int + np.sqrt(2 * alpha * epsilon) * sup_wtilde)
    return CoupledProbeResult(max_dist, float(bound), truncated, t_trunc)
