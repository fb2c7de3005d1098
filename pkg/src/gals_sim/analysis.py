"""Trace post-processing: throughput, clock-edge spectra, GPRM resource counts."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import LinkRole, Network
from .errors import (BandOutOfRange, InsufficientLength, MismatchedSpectra, UnknownSink,
                     UnsupportedShape)
from .trace import Trace, write_rows

PS = 1e-12


# -- throughput --------------------------------------------------------------

@dataclass(frozen=True)
class ThroughputSeries:
    window: int
    points: tuple[tuple[int, float], ...]   # (window start ps, items per second)
    span: int = 0

    def total_items(self) -> float:
        """Rate integrated back over each window (partial last window included)."""
        total = 0.0
        for i, (start, rate) in enumerate(self.points):
            stop = self.points[i + 1][0] if i + 1 < len(self.points) else self.span
            total += rate * (stop - start) * PS
        return total

    def write_csv(self, path: str) -> None:
        write_rows(path, ("window_start_ps", "items_per_s"),
                   [(s, f"{r:.9g}") for s, r in self.points])


def throughput(trace: Trace, window: int, sink: str) -> ThroughputSeries:
    """Items per second at ``sink`` in consecutive windows tiling [0, trace.end].

    An item is one clock pulse of the APB (for a recording sink, one
    delivery). The last window may be partial and is normalized by its own
    length, so ``sum(rate * length) == items``.
    """
    if window <= 0:
        raise ValueError("window must be > 0")
    if sink not in trace.edges:
        raise UnknownSink(f"no APB {sink!r} in trace")
    times = np.asarray(trace.edges[sink], dtype=np.int64)
    span = max(trace.end, int(times[-1]) if len(times) else 0) + 1
    starts = np.arange(0, span, window, dtype=np.int64)
    counts = np.bincount(times // window, minlength=len(starts))[:len(starts)]
    lengths = np.minimum(starts + window, span) - starts
    rates = counts / (lengths * PS)
    return ThroughputSeries(window, tuple(zip(starts.tolist(), rates.tolist())), span)


# -- spectra -----------------------------------------------------------------

def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft_radix2(x: Sequence[complex]) -> np.ndarray:
    """Iterative decimation-in-time Cooley-Tukey FFT; ``len(x)`` must be a power of two."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[0]
    if n == 0 or n & (n - 1):
        raise ValueError(f"length {n} is not a power of two")
    out = x[_bit_reverse(n)]
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = out.reshape(-1, size)
        even = blocks[:, :half]
        odd = blocks[:, half:] * tw
        out = np.concatenate((even + odd, even - odd), axis=1).reshape(n)
        size *= 2
    return out


@dataclass(frozen=True, eq=False)
class Spectrum:
    """One-sided periodogram of a binned impulse train.

    ``power[k]`` is ``|X_k|^2 / nfft``, doubled for 0 < k < nfft/2, so that
    ``power.sum()`` equals the energy of the mean-removed sample vector.
    """

    bin_hz: float
    power: np.ndarray
    sample_rate: float
    energy: float

    @property
    def freqs(self) -> np.ndarray:
        return np.arange(len(self.power)) * self.bin_hz

    def db(self) -> np.ndarray:
        return 10 * np.log10(np.maximum(self.power, 1e-300))

    def peak(self, band: tuple[float, float] | None = None) -> tuple[float, float]:
        lo, hi = _band_slice(self, band or (self.bin_hz, self.freqs[-1]))
        k = lo + int(np.argmax(self.power[lo:hi]))
        return float(self.freqs[k]), float(self.power[k])

    def write_csv(self, path: str) -> None:
        write_rows(path, ("frequency_hz", "power"),
                   [(f"{f:.6f}", f"{p:.12g}") for f, p in zip(self.freqs, self.power)])


def impulse_train(edges: Sequence[int], bin: int, nfft: int) -> np.ndarray:
    """Count edges per ``bin`` ps starting at t=0, remove the mean over the
    occupied bins, zero-pad to ``nfft``."""
    if bin <= 0:
        raise ValueError("bin must be > 0")
    if nfft <= 0 or nfft & (nfft - 1):
        raise ValueError(f"nfft {nfft} is not a power of two")
    if len(edges) == 0:
        raise InsufficientLength("no clock edges")
    idx = np.asarray(edges, dtype=np.int64) // bin
    occupied = int(idx.max()) + 1
    if occupied < 2:
        raise InsufficientLength("edge trace is shorter than one bin")
    if occupied > nfft:
        raise ValueError(f"nfft {nfft} < {occupied} occupied bins")
    counts = np.bincount(idx, minlength=occupied).astype(np.float64)
    x = np.zeros(nfft)
    x[:occupied] = counts - counts.mean()
    return x


def clock_spectrum(edges: Sequence[int], bin: int, nfft: int) -> Spectrum:
    x = impulse_train(edges, bin, nfft)
    X = fft_radix2(x)[: nfft // 2 + 1]
    power = (X.real ** 2 + X.imag ** 2) / nfft
    power[1:nfft // 2] *= 2
    fs = 1.0 / (bin * PS)
    return Spectrum(fs / nfft, power, fs, float(np.dot(x, x)))


def next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def _band_slice(s: Spectrum, band) -> tuple[int, int]:
    lo_hz, hi_hz = band
    nyq = s.sample_rate / 2
    if lo_hz < 0 or hi_hz > nyq + 1e-9 or lo_hz >= hi_hz:
        raise BandOutOfRange(f"band {band} outside [0, {nyq}] Hz")
    lo = int(math.ceil(lo_hz / s.bin_hz - 1e-9))
    hi = int(math.floor(hi_hz / s.bin_hz + 1e-9)) + 1
    hi = min(hi, len(s.power))
    if hi <= lo:
        raise BandOutOfRange(f"band {band} contains no frequency bin")
    return lo, hi


def peak_reduction(reference: Spectrum, spread: Spectrum, band: tuple[float, float]) -> float:
    """10 log10(max in-band power of reference / of spread), in dB."""
    if (reference.bin_hz != spread.bin_hz or reference.sample_rate != spread.sample_rate
            or len(reference.power) != len(spread.power)):
        raise MismatchedSpectra("spectra differ in resolution or sample rate")
    lo, hi = _band_slice(reference, band)
    ref = float(reference.power[lo:hi].max())
    spr = float(spread.power[lo:hi].max())
    if spr == 0.0:
        return math.inf if ref > 0 else 0.0
    if ref == 0.0:
        return -math.inf
    return 10 * math.log10(ref / spr)


def clock_rate(trace: Trace) -> float:
    """Mean pulse rate (Hz) of the busiest GPRM: the clock fundamental."""
    best = 0.0
    for ts in trace.edges.values():
        if len(ts) >= 2 and ts[-1] > ts[0]:
            best = max(best, (len(ts) - 1) / ((ts[-1] - ts[0]) * PS))
    if best == 0.0:
        raise InsufficientLength("no GPRM fired twice")
    return best


def band_around(f0: float, rel: float = 0.2) -> tuple[float, float]:
    return f0 * (1 - rel), f0 * (1 + rel)


# -- resource estimate ---------------------------------------------------------

@dataclass(frozen=True)
class GprmShape:
    """Link shape of one GPRM.

    ``inputs[i]`` is the number of forward wires arriving on input link i
    (the upstream producer's channel count), ``outputs[i]`` the forward
    channels driven on output link i, ``loops[i]`` the channels of loop i.
    ``input_bwd``/``output_bwd`` default to one backward channel each.
    Integers are accepted as shorthand for that many single-channel links.
    ``lockstep`` says every firing sends on every endpoint.
    """

    inputs: tuple[int, ...] = ()
    outputs: tuple[int, ...] = ()
    loops: tuple[int, ...] = ()
    input_bwd: tuple[int, ...] | None = None
    output_bwd: tuple[int, ...] | None = None
    lockstep: bool = True

    def __post_init__(self):
        for name in ("inputs", "outputs", "loops"):
            v = getattr(self, name)
            object.__setattr__(self, name, (1,) * v if isinstance(v, int) else tuple(v))
        ib = (1,) * len(self.inputs) if self.input_bwd is None else tuple(self.input_bwd)
        ob = (1,) * len(self.outputs) if self.output_bwd is None else tuple(self.output_bwd)
        object.__setattr__(self, "input_bwd", ib)
        object.__setattr__(self, "output_bwd", ob)


@dataclass(frozen=True)
class ResourceEstimate:
    lut4: int
    t_ff: int
    notes: tuple[str, ...] = ()


# (inputs, outputs, loops) -> (name, lut4, t_ff)
KNOWN_SHAPES = {
    ((1,), (1,), ()): ("Pipeline Stage Controller", 1, 1),
    ((1,), (2,), ()): ("Pipeline Stage Controller *", 2, 3),
    ((1, 1), (1,), ()): ("Pipeline Join (2 to 1)", 1, 1),
    ((1,), (1, 1), ()): ("Pipeline Fork (1 to 2)", 1, 1),
    ((1,), (1,), (1,)): ("Sequential Machine Controller", 2, 3),
    ((1,), (1,), (2,)): ("Sequential Machine Controller", 3, 4),
}


def resource_estimate(shape: GprmShape) -> ResourceEstimate:
    """4-input LUTs and T flip-flops for one GPRM.

    T-FFs: one per locally driven channel, except that in a loop-free
    lockstep controller all single-channel endpoints toggle on every pulse
    and share one flip-flop. LUTs: the AND of all parity functions is one
    function of (own T-FFs + received wires) inputs, mapped onto a tree of
    4-input LUTs: ``ceil((n - 1) / 3)``.
    """
    counts = (*shape.inputs, *shape.outputs, *shape.loops, *shape.input_bwd, *shape.output_bwd)
    if not (shape.inputs or shape.outputs or shape.loops):
        raise UnsupportedShape("GPRM controls no links")
    if len(shape.input_bwd) != len(shape.inputs) or len(shape.output_bwd) != len(shape.outputs):
        raise UnsupportedShape("backward channel counts do not match the link counts")
    if any(c < 1 for c in counts):
        raise UnsupportedShape("every link needs at least one channel per direction")

    driven = [*shape.input_bwd, *shape.outputs]
    if shape.loops or not shape.lockstep:
        t_ff = sum(driven) + sum(shape.loops)
    else:
        singles = sum(1 for c in driven if c == 1)
        t_ff = (1 if singles else 0) + sum(c for c in driven if c > 1)
    received = sum(shape.inputs) + sum(shape.output_bwd) + sum(shape.loops)
    n = t_ff + received
    lut4 = max(1, math.ceil((n - 1) / 3))

    notes = []
    key = (shape.inputs, shape.outputs, shape.loops)
    row = KNOWN_SHAPES.get(key)
    table_shape = (row is not None and (shape.lockstep or bool(shape.loops))
                   and set(shape.input_bwd) <= {1} and set(shape.output_bwd) <= {1})
    if table_shape:
        notes.append(f"reference shape: {row[0]}")
    else:
        notes.append("extrapolated: not a reference shape")
    for i, c in enumerate(shape.outputs):
        if c > 1:
            notes.append(f"output {i} has {c} channels: destination GPRM needs {c - 1} "
                         "additional LUT input(s)")
    return ResourceEstimate(lut4, t_ff, tuple(notes))


def gprm_shape(network: Network, gprm: str) -> GprmShape:
    g = network.gprm(gprm)
    ins, ibwd, outs, obwd, loops = [], [], [], [], []
    for ep in g.endpoints:
        link = network.link(ep.link)
        if ep.role is LinkRole.INPUT:
            ins.append(len(link.fwd))
            ibwd.append(len(link.bwd))
        elif ep.role is LinkRole.OUTPUT:
            outs.append(len(link.fwd))
            obwd.append(len(link.bwd))
        else:
            loops.append(len(link.fwd))
    policy = network.apb(gprm).policy
    lock = getattr(policy, "lockstep", lambda: False)()
    return GprmShape(tuple(ins), tuple(outs), tuple(loops), tuple(ibwd), tuple(obwd), lock)


def resource_table(network: Network) -> str:
    """Plain-text per-GPRM table in the reference column layout, plus totals."""
    header = f"{'GPRM':<16} {'INPUT':>5} {'OUTPUT':>10} {'LOOP':>10} {'4 INPUT LUT':>11} " \
             f"{'SLICE T-FF':>10}  NOTES"
    lines = [header, "-" * len(header)]
    tl = tf = 0
    for a in network.apbs:
        shape = gprm_shape(network, a.id)
        try:
            est = resource_estimate(shape)
        except UnsupportedShape as exc:
            lines.append(f"{a.id:<16} UNSUPPORTED: {exc}")
            continue
        tl += est.lut4
        tf += est.t_ff
        lines.append(f"{a.id:<16} {len(shape.inputs):>5} {_fmt_links(shape.outputs):>10} "
                     f"{_fmt_links(shape.loops):>10} {est.lut4:>11} {est.t_ff:>10}  "
                     + "; ".join(est.notes))
    lines.append("-" * len(header))
    lines.append(f"{'TOTAL':<16} {'':>5} {'':>10} {'':>10} {tl:>11} {tf:>10}")
    return "\n".join(lines)


def _fmt_links(chans: tuple[int, ...]) -> str:
    if not chans:
        return "0"
    if all(c == 1 for c in chans):
        return str(len(chans))
    return "+".join(str(1) if c == 1 else f"1x{c}ch" for c in chans)
