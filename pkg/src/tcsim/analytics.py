"""Signatures extracted from simulated trajectories and measured spectra.

Envelope handling
-----------------
Oscillation envelopes come from local extrema, refined by a parabola through
the three samples around each extremum. The half peak-to-peak distance
between consecutive extrema serves as the envelope where offset invariance
matters (revivals); raw extrema magnitudes are used for the collapse fit,
whose model assumes oscillation about zero. Neither works well when the
Rabi period is close to the sampling interval or when ``n_bar`` is so low
that the collapse is incomplete.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import least_squares

from .errors import ConvergenceError, InsufficientDataError

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


@dataclass
class SpectrumTrace:
    abscissa: np.ndarray
    ordinate: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.abscissa = np.asarray(self.abscissa, dtype=float)
        self.ordinate = np.asarray(self.ordinate, dtype=float)
        if self.abscissa.shape != self.ordinate.shape or self.abscissa.ndim != 1:
            raise ValueError("abscissa and ordinate must be 1-D and of equal length")
        d = np.diff(self.abscissa)
        if not (np.all(d > 0) or np.all(d < 0)):
            raise ValueError("abscissa must be strictly monotone")

    def __len__(self):
        return self.abscissa.size

    @property
    def source(self):
        return self.metadata.get("source", "")


@dataclass
class FitResult:
    """Outcome of one fit. ``flags`` collects non-fatal warnings."""

    model: str
    params: dict
    rmse: float
    r_squared: float
    covariance: np.ndarray | None = None
    flags: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.params[name]

    def to_report(self) -> str:
        """Flat ``key=value`` lines in a fixed order."""
        lines = [f"model={self.model}"]
        lines += [f"{k}={_fmt(v)}" for k, v in self.params.items()]
        lines.append(f"rmse={_fmt(self.rmse)}")
        lines.append(f"r_squared={_fmt(self.r_squared)}")
        if self.covariance is not None:
            for name, err in zip(self.params, np.sqrt(np.abs(np.diag(self.covariance)))):
                lines.append(f"stderr_{name}={_fmt(err)}")
        lines += [f"{k}={_fmt(v)}" for k, v in self.extra.items()]
        lines.append("flags=" + ",".join(self.flags))
        return "\n".join(lines) + "\n"

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_report())


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def _quality(y, resid):
    ss_res = float(np.sum(resid ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    rmse = math.sqrt(ss_res / y.size)
    if ss_tot == 0.0:
        # constant data: perfect fit counts as r^2 = 1
        r2 = 1.0 if ss_res <= 1e-24 * max(1.0, float(np.sum(y ** 2))) else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return rmse, r2


def _covariance(jac, resid, n_params):
    dof = max(resid.size - n_params, 1)
    s2 = float(resid @ resid) / dof
    try:
        return np.linalg.pinv(jac.T @ jac) * s2
    except np.linalg.LinAlgError:
        return None


# --- Gaussian line envelope -----------------------------------------------

def gaussian_envelope(H, y0, Hc, W, A):
    """``y0 + A/W * sqrt(2/pi) * exp(-2 ((H - Hc)/W)^2)``."""
    H = np.asarray(H, dtype=float)
    return y0 + A / W * SQRT_2_OVER_PI * np.exp(-2.0 * ((H - Hc) / W) ** 2)


def _gaussian_jac(p, H):
    y0, Hc, W, A = p
    u = (H - Hc) / W
    e = np.exp(-2.0 * u ** 2)
    peak = A / W * SQRT_2_OVER_PI * e
    return np.column_stack([
        np.ones_like(H),
        peak * 4.0 * u / W,
        -peak / W + peak * 4.0 * u ** 2 / W,
        SQRT_2_OVER_PI * e / W,
    ])


def gaussian_initial_guess(H, y):
    """Baseline from the outer 10% of points, centre at the extreme deviation, width from FWHM."""
    n = H.size
    k = max(1, n // 10)
    y0 = float(np.median(np.concatenate([y[:k], y[-k:]])))
    dev = y - y0
    i = int(np.argmax(np.abs(dev)))
    height = float(dev[i])
    span = float(abs(H[-1] - H[0]))
    if height == 0.0:
        return [y0, float(H[n // 2]), span / 10.0, 0.0]
    above = np.abs(dev) >= 0.5 * abs(height)
    lo, hi = i, i
    while lo > 0 and above[lo - 1]:
        lo -= 1
    while hi < n - 1 and above[hi + 1]:
        hi += 1
    fwhm = max(abs(H[hi] - H[lo]), span / n)
    W = fwhm / math.sqrt(2.0 * math.log(2.0))
    return [y0, float(H[i]), W, height * W / SQRT_2_OVER_PI]


def fit_gaussian_envelope(trace: SpectrumTrace, init=None, max_iter=200) -> FitResult:
    """Least-squares fit of :func:`gaussian_envelope` (trust-region reflective).

    ``init`` may be a mapping with any of ``y0, Hc, W, A``; the rest come from
    :func:`gaussian_initial_guess`.
    """
    H, y = trace.abscissa, trace.ordinate
    if H.size < 8:
        raise InsufficientDataError(f"need at least 8 points, got {H.size}")
    order = np.argsort(H)
    H, y = H[order], y[order]
    p0 = gaussian_initial_guess(H, y)
    names = ["y0", "Hc", "W", "A"]
    if init:
        p0 = [float(init.get(n, v)) for n, v in zip(names, p0)]

    # residual scale; a flat trace falls back to its magnitude
    yscale = float(np.ptp(y)) or max(float(np.max(np.abs(y))), 1.0)

    def resid(p):
        return (gaussian_envelope(H, *p) - y) / yscale

    def jac(p):
        return _gaussian_jac(p, H) / yscale

    span = H[-1] - H[0]
    lower = [-np.inf, H[0] - span, span * 1e-9, -np.inf]
    upper = [np.inf, H[-1] + span, span * 10.0, np.inf]
    p0[2] = float(np.clip(p0[2], lower[2] * 10, upper[2] / 10))
    sol = least_squares(resid, p0, jac=jac, method="trf", bounds=(lower, upper),
                        x_scale="jac", max_nfev=max_iter, xtol=1e-15, ftol=1e-15, gtol=1e-15)
    r = gaussian_envelope(H, *sol.x) - y
    if sol.status == 0:
        raise ConvergenceError("Gaussian fit did not converge", best=dict(zip(names, sol.x)),
                               rmse=float(np.sqrt(np.mean(r ** 2))), nfev=sol.nfev)
    rmse, r2 = _quality(y, r)
    res = FitResult("gaussian_envelope", dict(zip(names, map(float, sol.x))), rmse, r2,
                    _covariance(sol.jac * yscale, r, 4), extra={"nfev": int(sol.nfev)})
    if abs(sol.x[3]) / sol.x[2] * SQRT_2_OVER_PI <= 1e-9 * max(1.0, np.max(np.abs(y))):
        res.flags.append("degenerate_flat")
    if r2 < 0:
        res.flags.append("negative_r_squared")
    return res


def asymmetric_gaussian(H, y0, Hc, peak, W_left, W_right):
    """Two half-Gaussians sharing centre and peak height, with separate widths."""
    H = np.asarray(H, dtype=float)
    W = np.where(H < Hc, W_left, W_right)
    return y0 + peak * np.exp(-2.0 * ((H - Hc) / W) ** 2)


def fit_asymmetric_gaussian(trace: SpectrumTrace) -> FitResult:
    """Asymmetric variant: left/right widths fitted separately, continuous at ``Hc``.

    Reports ``A_left = peak * W_left / sqrt(2/pi)`` and likewise ``A_right`` so
    each side reads in the same parametrisation as :func:`gaussian_envelope`.
    """
    sym = fit_gaussian_envelope(trace)
    H, y = trace.abscissa, trace.ordinate
    p = sym.params
    peak0 = p["A"] / p["W"] * SQRT_2_OVER_PI
    x0 = [p["y0"], p["Hc"], peak0, p["W"], p["W"]]
    span = np.ptp(H)
    sol = least_squares(lambda q: asymmetric_gaussian(H, *q) - y, x0, method="trf",
                        bounds=([-np.inf, H.min() - span, -np.inf, span * 1e-9, span * 1e-9],
                                [np.inf, H.max() + span, np.inf, 10 * span, 10 * span]),
                        x_scale="jac", max_nfev=400)
    y0, Hc, peak, wl, wr = map(float, sol.x)
    r = asymmetric_gaussian(H, *sol.x) - y
    rmse, r2 = _quality(y, r)
    return FitResult("asymmetric_gaussian_envelope",
                     {"y0": y0, "Hc": Hc, "peak": peak, "W_left": wl, "W_right": wr,
                      "A_left": peak * wl / SQRT_2_OVER_PI, "A_right": peak * wr / SQRT_2_OVER_PI},
                     rmse, r2)


# --- envelopes of oscillating channels -------------------------------------

def local_extrema(times, values):
    """Parabola-refined local maxima and minima, in time order."""
    t = np.asarray(times, dtype=float)
    x = np.asarray(values, dtype=float)
    d = np.diff(x)
    idx = np.where(((d[:-1] > 0) & (d[1:] <= 0)) | ((d[:-1] < 0) & (d[1:] >= 0)))[0] + 1
    if idx.size == 0:
        return np.empty(0), np.empty(0)
    a, b, c = x[idx - 1], x[idx], x[idx + 1]
    den = a - 2.0 * b + c
    with np.errstate(divide="ignore", invalid="ignore"):
        shift = np.where(den != 0.0, 0.5 * (a - c) / den, 0.0)
    dt = t[idx + 1] - t[idx]
    return t[idx] + shift * dt, b - 0.25 * (a - c) * shift


def oscillation_envelope(times, values):
    """Half peak-to-peak amplitude between consecutive extrema, at their midpoints."""
    te, xe = local_extrema(times, values)
    if te.size < 2:
        return np.empty(0), np.empty(0)
    return 0.5 * (te[1:] + te[:-1]), 0.5 * np.abs(np.diff(xe))


def fit_collapse_envelope(times, values, g=None, t_window=None, baseline=0.0,
                          free_amplitude=False) -> FitResult:
    """Fit ``amp * exp(-(t / tau_c)^2 / 2)`` to extrema magnitudes.

    ``amp`` is pinned to the initial magnitude ``|x(0) - baseline|`` unless
    ``free_amplitude``. The window defaults to ``t <= 3/g`` when ``g`` is given.
    Reports ``tau_c``, the 1/e time ``t_1e = sqrt(2) tau_c`` and, with ``g``,
    ``tau_c * g``. An envelope that decays by less than 1% over the window is
    flagged ``no_collapse_detected`` with ``tau_c = inf``.
    """
    t = np.asarray(times, dtype=float)
    x = np.asarray(values, dtype=float) - baseline
    if t_window is None and g is not None:
        t_window = 3.0 / g
    if t_window is not None:
        keep = t <= t_window * (1 + 1e-12)
        t, x = t[keep], x[keep]
    te, xe = local_extrema(t, x)
    if te.size < 4:
        raise InsufficientDataError(f"found {te.size} extrema, need at least 4")
    mags = np.abs(xe)
    amp0 = abs(x[0])
    span = float(t[-1] - t[0])

    # rate k = 1/tau^2 >= 0 so an undamped signal sits on the boundary k = 0
    if free_amplitude:
        def model(p):
            return p[0] * np.exp(-0.5 * p[1] * te ** 2)
        p0, lower = [max(mags[0], 1e-12), 1.0 / span ** 2], [0.0, 0.0]
    else:
        def model(p):
            return amp0 * np.exp(-0.5 * p[0] * te ** 2)
        p0, lower = [1.0 / span ** 2], [0.0]
    sol = least_squares(lambda p: model(p) - mags, p0, bounds=(lower, np.inf), method="trf",
                        x_scale="jac", xtol=1e-14, ftol=1e-14, gtol=1e-14)
    k = float(sol.x[-1])
    amp = float(sol.x[0]) if free_amplitude else amp0
    rmse, r2 = _quality(mags, model(sol.x) - mags)
    flags = []
    if 0.5 * k * float(te[-1]) ** 2 < 0.01:
        flags.append("no_collapse_detected")
        tau = math.inf
    else:
        tau = 1.0 / math.sqrt(k)
    params = {"tau_c": tau, "amplitude": amp, "t_1e": math.sqrt(2.0) * tau}
    extra = {"n_extrema": int(te.size)}
    if g is not None:
        params["tau_c_times_g"] = tau * g
        extra["t_1e_expected"] = math.sqrt(2.0) / g
    return FitResult("collapse_gaussian", params, rmse, r2, flags=flags, extra=extra)


class NoRevivalError(InsufficientDataError):
    """No collapse-then-revival pattern in the analysed window."""


def estimate_revival_time(times, values, expected=None, collapse_fraction=0.1,
                          revival_fraction=0.1):
    """Time of the first envelope maximum after the oscillation has collapsed.

    The envelope (half peak-to-peak, so a constant offset does not matter) must
    first drop below ``collapse_fraction`` of its initial value; the revival
    is the next stretch where it exceeds ``revival_fraction`` of the initial
    value. A Gaussian ``P exp(-(t - t_R)^2 / (2 s^2))`` fitted to that stretch
    locates ``t_R``.

    Returns ``(t_R, FitResult)``; raises :class:`NoRevivalError` otherwise.
    """
    tm, env = oscillation_envelope(times, values)
    if env.size < 4:
        raise NoRevivalError("no revival: channel does not oscillate")
    e0 = env[0]
    if e0 <= 0:
        raise NoRevivalError("no revival: zero initial oscillation amplitude")
    below = np.nonzero(env < collapse_fraction * e0)[0]
    if below.size == 0:
        raise NoRevivalError("no revival: no collapse detected")
    i_c = below[0]
    above = np.nonzero(env[i_c:] > revival_fraction * e0)[0]
    if above.size == 0:
        raise NoRevivalError("no revival found in window")
    start = i_c + above[0]
    stop = start
    while stop + 1 < env.size and env[stop + 1] > revival_fraction * e0:
        stop += 1
    if stop == env.size - 1:
        raise NoRevivalError("no revival: revival extends past the end of the window")
    seg_t, seg_e = tm[start:stop + 1], env[start:stop + 1]
    if seg_t.size < 3:
        raise NoRevivalError("no revival: revival stretch too short to locate")
    j = int(np.argmax(seg_e))
    p0 = [seg_e[j], seg_t[j], max((seg_t[-1] - seg_t[0]) / 4.0, 1e-12)]
    sol = least_squares(lambda p: p[0] * np.exp(-0.5 * ((seg_t - p[1]) / p[2]) ** 2) - seg_e,
                        p0, method="trf", x_scale="jac",
                        bounds=([0, seg_t[0], 0], [np.inf, seg_t[-1], np.inf]))
    peak, t_r, width = map(float, sol.x)
    resid = peak * np.exp(-0.5 * ((seg_t - t_r) / width) ** 2) - seg_e
    rmse, r2 = _quality(seg_e, resid)
    params = {"t_revival": t_r, "peak_envelope": peak, "width": width}
    extra = {"collapse_at": float(tm[i_c]), "segment_start": float(seg_t[0]),
             "segment_end": float(seg_t[-1]), "raw_peak_time": float(seg_t[j])}
    if expected is not None:
        extra["t_revival_expected"] = float(expected)
        extra["relative_error"] = (t_r - expected) / expected
    return t_r, FitResult("revival_peak", params, rmse, r2, extra=extra)


# --- spectral peaks --------------------------------------------------------

class RabiPeak(NamedTuple):
    frequency: float      # cycles per time unit
    amplitude: float      # amplitude of the cosine component

    @property
    def angular(self):
        return 2.0 * math.pi * self.frequency


def extract_rabi_frequencies(times, values, max_peaks=5, min_rel_amplitude=5e-3,
                             pad_factor=8, window="blackman"):
    """Dominant oscillation frequencies of a uniformly sampled channel.

    The mean is removed, a window applied and the spectrum zero-padded by
    ``pad_factor``; each local maximum is refined by a parabola through the log
    magnitudes (exact for a Gaussian-shaped main lobe). Amplitudes are corrected
    for the window's coherent gain. Peaks are sorted by amplitude.
    """
    t = np.asarray(times, dtype=float)
    x = np.asarray(values, dtype=float)
    if t.size < 64:
        raise InsufficientDataError(f"need at least 64 samples, got {t.size}")
    dt = np.diff(t)
    if np.max(np.abs(dt - dt[0])) > 1e-6 * dt[0]:
        raise ValueError("extract_rabi_frequencies requires uniform sampling")
    x = x - x.mean()
    if np.max(np.abs(x)) <= 1e-14:
        return []
    w = {"blackman": np.blackman, "hann": np.hanning}[window](t.size)
    nfft = pad_factor * t.size
    mag = np.abs(np.fft.rfft(x * w, nfft))
    freqs = np.fft.rfftfreq(nfft, dt[0])
    gain = 2.0 / w.sum()
    # main-lobe half width of the window, in padded bins
    guard = (3 if window == "blackman" else 2) * pad_factor
    floor = min_rel_amplitude * mag.max()
    cand = np.nonzero((mag[1:-1] > mag[:-2]) & (mag[1:-1] >= mag[2:]) & (mag[1:-1] > floor))[0] + 1
    cand = cand[np.argsort(mag[cand])[::-1]]
    chosen = []
    for k in cand:
        if any(abs(k - j) < guard for j in chosen):
            continue
        chosen.append(k)
        if len(chosen) == max_peaks:
            break
    peaks = []
    df = freqs[1] - freqs[0]
    for k in chosen:
        a, b, c = np.log(mag[k - 1:k + 2] + 1e-300)
        den = a - 2.0 * b + c
        p = 0.5 * (a - c) / den if den != 0 else 0.0
        peaks.append(RabiPeak(float(freqs[k] + p * df), float(np.exp(b - 0.25 * (a - c) * p) * gain)))
    return sorted(peaks, key=lambda pk: -pk.amplitude)


# --- linear fits -----------------------------------------------------------

def linear_fit(x, y, model="linear") -> FitResult:
    """Ordinary least squares ``y = slope * x + intercept``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise InsufficientDataError("need at least 2 points for a line")
    xm = x.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx <= 1e-300 * max(1.0, xm ** 2):
        raise ValueError("degenerate abscissa: all x values coincide")
    slope = float(np.sum((x - xm) * (y - y.mean())) / sxx)
    intercept = float(y.mean() - slope * xm)
    resid = slope * x + intercept - y
    rmse, r2 = _quality(y, resid)
    dof = max(x.size - 2, 1)
    s2 = float(resid @ resid) / dof
    cov = np.array([[s2 / sxx, -xm * s2 / sxx], [-xm * s2 / sxx, s2 * (1 / x.size + xm ** 2 / sxx)]])
    return FitResult(model, {"slope": slope, "intercept": intercept}, rmse, r2, cov)


def fit_linear_splitting(line_positions, abscissa="index") -> FitResult:
    """Fit the splitting between neighbouring lines against line index or field.

    ``line_positions`` is a sequence of ``(index, field)``. The splitting
    ``field[k+1] - field[k]`` is placed at the lower index (``abscissa='index'``)
    or at the midpoint field (``abscissa='field'``).
    """
    pos = sorted((float(i), float(h)) for i, h in line_positions)
    if len(pos) < 3:
        raise InsufficientDataError("need at least 3 line positions")
    idx = np.array([p[0] for p in pos])
    fld = np.array([p[1] for p in pos])
    split = np.diff(fld)
    if abscissa == "index":
        x = idx[:-1]
    elif abscissa == "field":
        x = 0.5 * (fld[1:] + fld[:-1])
    else:
        raise ValueError(f"unknown abscissa {abscissa!r}")
    res = linear_fit(x, split)
    res.extra["n_splittings"] = int(split.size)
    res.extra["abscissa"] = abscissa
    return res
