"""Option chains, risk-neutral densities from strike second differences, return marginals.

Rates are taken to be zero throughout, so put-call parity reads
``C(K) - P(K) = S - K`` and the density of the terminal price equals the
second strike-derivative of either price curve.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .distributions import DomainError, Tabulated

__all__ = [
    "ChainParseError",
    "ExtractionError",
    "OptionChain",
    "ImpliedDensity",
    "load_chain",
    "save_chain",
    "implied_density",
    "to_return_marginal",
    "bs_call",
    "bs_put",
    "lognormal_pdf",
    "synthetic_chain",
]

log = logging.getLogger(__name__)

ARB_SLACK = 1e-8  # relative to spot
CLIP_FLOOR = -1e-8


class ChainParseError(ValueError):
    pass


class ExtractionError(ValueError):
    pass


@dataclass(eq=False)
class OptionChain:
    asset: str
    spot: float
    strikes: np.ndarray
    calls: np.ndarray  # NaN where missing
    puts: np.ndarray
    as_of: str = ""
    expiry: str = ""

    def __post_init__(self):
        self.strikes = np.asarray(self.strikes, dtype=float)
        self.calls = np.asarray(self.calls, dtype=float)
        self.puts = np.asarray(self.puts, dtype=float)
        if not self.spot > 0:
            raise DomainError("spot must be positive")
        if not (self.strikes.shape == self.calls.shape == self.puts.shape):
            raise DomainError("strike and price columns differ in length")
        if np.any(self.strikes <= 0):
            raise DomainError("strikes must be positive")
        if np.any(np.diff(self.strikes) <= 0):
            raise DomainError("strikes must be strictly increasing")
        if np.any(self.calls < 0) or np.any(self.puts < 0):
            raise DomainError("option prices must be nonnegative")

    def __len__(self) -> int:
        return self.strikes.size


def _cell(text: str, lineno: int, name: str) -> float:
    text = text.strip()
    if text == "":
        return np.nan
    try:
        return float(text)
    except ValueError:
        raise ChainParseError(f"line {lineno}: cannot parse {name} {text!r}") from None


def load_chain(path, spot: float | None = None, asset: str | None = None, as_of: str = "", expiry: str = "") -> OptionChain:
    """Read a ``strike,call,put`` CSV.

    Leading ``# key: value`` lines may carry ``spot``, ``asset``, ``as_of``
    and ``expiry``; keyword arguments take precedence.  Blank price cells
    mean "not quoted".
    """
    meta: dict[str, str] = {}
    rows: list[tuple[float, float, float]] = []
    seen: dict[float, int] = {}
    header_seen = False
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                if ":" in s:
                    k, v = s[1:].split(":", 1)
                    meta[k.strip()] = v.strip()
                continue
            cells = next(csv.reader([s]))
            if not header_seen:
                if [c.strip().lower() for c in cells] != ["strike", "call", "put"]:
                    raise ChainParseError(f"line {lineno}: expected header 'strike,call,put'")
                header_seen = True
                continue
            if len(cells) != 3:
                raise ChainParseError(f"line {lineno}: expected 3 fields, got {len(cells)}")
            k = _cell(cells[0], lineno, "strike")
            if np.isnan(k):
                raise ChainParseError(f"line {lineno}: missing strike")
            if k in seen:
                raise ChainParseError(f"line {lineno}: duplicate strike {k:g} (first on line {seen[k]})")
            seen[k] = lineno
            rows.append((k, _cell(cells[1], lineno, "call"), _cell(cells[2], lineno, "put")))
    if not header_seen:
        raise ChainParseError("empty file")
    if not rows:
        raise ChainParseError("no option rows")
    arr = np.array(rows)
    if np.any(np.diff(arr[:, 0]) < 0):
        log.warning("strikes in %s are not sorted; sorting", path)
        arr = arr[np.argsort(arr[:, 0])]
    if spot is None:
        if "spot" not in meta:
            raise ChainParseError("spot price not given (pass it or add a '# spot: ...' line)")
        spot = float(meta["spot"])
    return OptionChain(asset if asset is not None else meta.get("asset", Path(path).stem), float(spot),
                       arr[:, 0], arr[:, 1], arr[:, 2], as_of or meta.get("as_of", ""), expiry or meta.get("expiry", ""))


def save_chain(chain: OptionChain, path) -> None:
    def fmt(v):
        return "" if np.isnan(v) else repr(float(v))

    with open(path, "w", newline="") as fh:
        fh.write(f"# asset: {chain.asset}\n# spot: {float(chain.spot)!r}\n")
        if chain.as_of:
            fh.write(f"# as_of: {chain.as_of}\n")
        if chain.expiry:
            fh.write(f"# expiry: {chain.expiry}\n")
        fh.write("strike,call,put\n")
        for k, c, p in zip(chain.strikes, chain.calls, chain.puts):
            fh.write(f"{float(k)!r},{fmt(c)},{fmt(p)}\n")


@dataclass
class ImpliedDensity:
    strikes: np.ndarray
    density: np.ndarray
    normalized: bool
    forward: float
    raw_mass: float = float("nan")
    dropped: list[tuple[float, str]] = field(default_factory=list)
    curve: tuple[np.ndarray, np.ndarray] | None = None  # cleaned put-equivalent prices

    def mass(self) -> float:
        return _trapz(self.density, self.strikes)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("strike,density\n")
            for k, f in zip(self.strikes, self.density):
                fh.write(f"{float(k)!r},{float(f)!r}\n")


def _trapz(y, x) -> float:
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))


def _put_curve(chain: OptionChain):
    """Put-equivalent price curve: puts below spot, parity-converted calls above."""
    S = chain.spot
    K, C, P = chain.strikes, chain.calls, chain.puts
    ks, ps, dropped = [], [], []
    for k, c, p in zip(K, C, P):
        if k < S:
            v = p
        elif k > S:
            v = c - S + k if not np.isnan(c) else np.nan
        else:
            both = [x for x in (p, c - S + k if not np.isnan(c) else np.nan) if not np.isnan(x)]
            v = float(np.mean(both)) if both else np.nan
        if np.isnan(v):
            dropped.append((float(k), "no quote on the out-of-the-money side"))
            continue
        ks.append(k)
        ps.append(v)
    return np.array(ks), np.array(ps), dropped


def _arbitrage_filter(k: np.ndarray, p: np.ndarray, slack: float):
    """Drop quotes until the put-equivalent curve is nonnegative, has slopes in
    ``[0, 1]`` and is convex, all up to ``slack``.  The worst offender goes first."""
    keep = np.ones(k.size, dtype=bool)
    dropped = []
    bad0 = p < -slack
    for j in np.flatnonzero(bad0):
        dropped.append((float(k[j]), "negative price"))
    keep &= ~bad0
    while keep.sum() >= 3:
        idx = np.flatnonzero(keep)
        kk, pp = k[idx], p[idx]
        s = np.diff(pp) / np.diff(kk)
        worst, reason, score = None, "", 0.0
        mono = np.maximum(-s - slack, 0) + np.maximum(s - 1 - slack, 0)
        if mono.max() > 0:
            j = int(np.argmax(mono))
            # blame the endpoint further from the median price level
            cand = j if abs(pp[j] - np.median(pp)) > abs(pp[j + 1] - np.median(pp)) else j + 1
            worst, reason, score = cand, "monotonicity", mono.max()
        dd = np.diff(s)
        if dd.size and -dd.min() > slack and -dd.min() > score:
            worst, reason = int(np.argmin(dd)) + 1, "convexity"
        if worst is None:
            break
        keep[idx[worst]] = False
        dropped.append((float(kk[worst]), reason))
    return keep, dropped


def implied_density(chain: OptionChain, normalize: bool = True) -> ImpliedDensity:
    """Density of the terminal price from second divided differences in strike.

    Out-of-the-money quotes are used on each side of the spot (puts below,
    calls above), merged into one curve by put-call parity and averaged at a
    strike equal to the spot.  Quotes breaking static no-arbitrage are dropped.
    The density is zero outside the usable strike range.
    """
    S = chain.spot
    k, p, dropped = _put_curve(chain)
    keep, more = _arbitrage_filter(k, p, ARB_SLACK * S)
    dropped += more
    k, p = k[keep], p[keep]
    below, above = np.sum(k <= S), np.sum(k >= S)
    if below < 3 or above < 3:
        raise ExtractionError(f"{chain.asset}: need 3 usable quotes on each side of spot, have {below} below and {above} above")
    h_left, h_right = k[1:-1] - k[:-2], k[2:] - k[1:-1]
    s_left, s_right = (p[1:-1] - p[:-2]) / h_left, (p[2:] - p[1:-1]) / h_right
    f = 2.0 * (s_right - s_left) / (h_left + h_right)
    f = np.where((f < 0) & (f >= CLIP_FLOOR), 0.0, f)
    if np.any(f < 0):
        raise ExtractionError("negative density survived the no-arbitrage filter")
    grid = k[1:-1]
    mass = _trapz(f, grid)
    if not mass > 0:
        raise ExtractionError(f"{chain.asset}: extracted density has no mass")
    dens = f / mass if normalize else f
    return ImpliedDensity(grid, dens, normalize, S, mass, dropped, (k, p))


def to_return_marginal(dens: ImpliedDensity, ref_price: float, match_forward: bool = True) -> Tabulated:
    """Law of ``(K - ref) / ref`` under the extracted density.

    With ``match_forward`` the return grid is shifted so that the mean equals
    ``(forward - ref) / ref`` exactly, removing the small drift introduced by
    truncation and quadrature; marginals of different expiries then share a
    mean, as a martingale requires.
    """
    if not ref_price > 0:
        raise DomainError("reference price must be positive")
    grid = (np.asarray(dens.strikes) - ref_price) / ref_price
    m = Tabulated.from_density(grid, np.asarray(dens.density) * ref_price)
    if match_forward:
        shift = (dens.forward - ref_price) / ref_price - m.mean()
        m = Tabulated(m.grid + shift, m.cdf_values)
    return m


# --------------------------------------------------------------------------
# Black-Scholes fixtures (zero rate)


def _d1d2(S, K, T, sigma):
    v = sigma * np.sqrt(T)
    d1 = (np.log(S / K) + 0.5 * v * v) / v
    return d1, d1 - v


def bs_call(S, K, T, sigma):
    K = np.asarray(K, dtype=float)
    d1, d2 = _d1d2(S, K, T, sigma)
    return S * stats.norm.cdf(d1) - K * stats.norm.cdf(d2)


def bs_put(S, K, T, sigma):
    K = np.asarray(K, dtype=float)
    d1, d2 = _d1d2(S, K, T, sigma)
    return K * stats.norm.cdf(-d2) - S * stats.norm.cdf(-d1)


def lognormal_pdf(S, K, T, sigma):
    """Terminal price density of the driftless lognormal model."""
    v = sigma * np.sqrt(T)
    return stats.lognorm.pdf(K, s=v, scale=S * np.exp(-0.5 * v * v))


def synthetic_chain(spot: float, T: float, sigma: float, n_strikes: int = 100, width: float = 4.0,
                    asset: str = "SYN", as_of: str = "", expiry: str = "", strikes=None) -> OptionChain:
    """Exact Black-Scholes calls and puts on ``n_strikes`` evenly spaced strikes
    covering ``width`` standard deviations of log-price on each side."""
    if strikes is None:
        v = sigma * np.sqrt(T)
        lo, hi = spot * np.exp(-width * v), spot * np.exp(width * v)
        strikes = np.linspace(lo, hi, n_strikes)
    strikes = np.asarray(strikes, dtype=float)
    return OptionChain(asset, spot, strikes, bs_call(spot, strikes, T, sigma), bs_put(spot, strikes, T, sigma),
                       as_of, expiry)
