"""Energy-per-sample and average power from sampled power traces.

Trace file format (UTF-8 text)::

    # background_w: 5.0            background power P' in watts (optional if a window is given)
    # n_samples: 100               inference samples processed during the trace (required)
    # background_window: 0.0,2.0   optional: P' = mean power over t0 <= t <= t1
    t,power_w
    0.0,20.0
    ...

With a background window the energy integral starts at the first sample with
``t >= t1``.  A window overrides ``background_w``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import EmptyTrace, NonMonotonicTime, ParseError, ZeroDuration


@dataclass(frozen=True)
class PowerTrace:
    t: np.ndarray
    power: np.ndarray
    background: float
    n_samples: int

    def __post_init__(self):
        if len(self.t) != len(self.power):
            raise ParseError("time and power columns differ in length")
        if len(self.t) < 2:
            raise EmptyTrace(f"need at least two samples, got {len(self.t)}")
        bad = np.nonzero(np.diff(self.t) <= 0)[0]
        if len(bad):
            i = int(bad[0]) + 1
            raise NonMonotonicTime(f"timestamps must increase strictly (row {i}: {self.t[i]} after {self.t[i - 1]})")
        if self.n_samples < 1:
            raise ParseError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.background < 0:
            raise ParseError(f"background power must be >= 0, got {self.background}")

    @property
    def duration(self):
        return float(self.t[-1] - self.t[0])


def eps(trace):
    """Trapezoidal net energy over the trace divided by the number of samples (J)."""
    tau = np.diff(trace.t)
    p = trace.power
    return float(np.sum(tau * (p[:-1] + p[1:] - 2.0 * trace.background)) / (2.0 * trace.n_samples))


def avp(trace):
    """Average net power: ``n_samples * eps / duration`` (W)."""
    d = trace.duration
    if d <= 0:
        raise ZeroDuration("trace spans zero time")
    return trace.n_samples * eps(trace) / d


def _meta(lines):
    meta = {}
    for ln in lines:
        body = ln.lstrip("#").strip()
        if ":" not in body:
            continue
        key, val = body.split(":", 1)
        meta[key.strip()] = val.strip()
    return meta


def parse_trace(text, background_window=None):
    lines = text.splitlines()
    meta = _meta(ln for ln in lines if ln.startswith("#"))
    rows = [ln for ln in lines if ln.strip() and not ln.startswith("#")]
    if not rows or [c.strip() for c in rows[0].split(",")] != ["t", "power_w"]:
        raise ParseError("trace must start with the header 't,power_w'")
    try:
        data = [(float(a), float(b)) for a, b in csv.reader(io.StringIO("\n".join(rows[1:])))]
    except ValueError as e:
        raise ParseError(f"bad trace row: {e}") from None
    if "n_samples" not in meta:
        raise ParseError("missing metadata field 'n_samples'")
    try:
        n_samples = int(meta["n_samples"])
    except ValueError:
        raise ParseError(f"n_samples must be an integer, got {meta['n_samples']!r}") from None
    t = np.array([r[0] for r in data], dtype=np.float64)
    p = np.array([r[1] for r in data], dtype=np.float64)
    if len(t) >= 2 and np.any(np.diff(t) <= 0):
        PowerTrace(t, p, 0.0, max(n_samples, 1))  # raises NonMonotonicTime
    window = background_window
    if window is None and "background_window" in meta:
        try:
            window = tuple(float(v) for v in meta["background_window"].split(","))
        except ValueError:
            raise ParseError(f"bad background_window {meta['background_window']!r}") from None
    if window is not None:
        t0, t1 = window
        inside = (t >= t0) & (t <= t1)
        if not inside.any():
            raise ParseError(f"background window [{t0}, {t1}] holds no samples")
        background = float(p[inside].mean())
        after = t >= t1
        t, p = t[after], p[after]
    elif "background_w" in meta:
        try:
            background = float(meta["background_w"])
        except ValueError:
            raise ParseError(f"background_w must be a number, got {meta['background_w']!r}") from None
    else:
        raise ParseError("missing metadata field 'background_w' (or a background window)")
    return PowerTrace(t, p, background, n_samples)


def load_trace(path, background_window=None):
    with open(path, encoding="utf-8") as f:
        return parse_trace(f.read(), background_window)


def format_trace(t, power, n_samples, background=None, window=None):
    out = []
    if background is not None:
        out.append(f"# background_w: {background!r}")
    out.append(f"# n_samples: {int(n_samples)}")
    if window is not None:
        out.append(f"# background_window: {window[0]!r},{window[1]!r}")
    out.append("t,power_w")
    out.extend(f"{float(a)!r},{float(b)!r}" for a, b in zip(t, power))
    return "\n".join(out) + "\n"
