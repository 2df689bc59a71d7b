"""Random channel realizations for an IRS-aided multi-user uplink.

The AP-IRS link is a deterministic rank-one line-of-sight channel built from
uniform-linear-array steering vectors. User-to-AP and user-to-IRS links are
independent Rayleigh fading scaled by a distance-based link budget.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

FILE_MAGIC = "# irsmec-channel-set v1"


class ChannelFileError(ValueError):
    """Raised when a channel file cannot be parsed.

    Attributes
    ----------
    field : str
        Name of the section or header entry that failed to parse.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"channel file field '{field}': {message}")
        self.field = field


@dataclass(frozen=True)
class SystemGeometry:
    """Deployment geometry and link-budget constants.

    Positions are 2-D coordinates in meters. ``user_positions`` has shape
    (K, 2). Gains and losses are in dB.
    """

    ap_antennas: int = 4
    irs_elements: int = 30
    user_positions: tuple[tuple[float, float], ...] = ()
    ap_position: tuple[float, float] = (0.0, 0.0)
    irs_position: tuple[float, float] = (50.0, 0.0)
    pathloss_exponent_user: float = 3.0
    pathloss_exponent_irs: float = 2.0
    penetration_loss_db: float = 10.0
    ref_pathloss_db_at_1m: float = 30.0
    antenna_gain_ap_db: float = 0.0
    antenna_gain_user_db: float = 0.0
    antenna_gain_irs_element_db: float = 5.0
    # ULA axis orientations (radians from the x-axis); half-wavelength spacing
    ap_array_angle: float = math.pi / 3
    irs_array_angle: float = 2 * math.pi / 3
    tx_power_mw: float = 10.0
    noise_power_mw: float = 1e-12

    @property
    def users(self) -> int:
        return len(self.user_positions)

    @property
    def ap_irs_distance(self) -> float:
        return float(np.hypot(*np.subtract(self.irs_position, self.ap_position)))

    def validate(self) -> None:
        if self.ap_antennas < 1:
            raise ValueError("need at least one AP antenna")
        if self.users < 1:
            raise ValueError("need at least one user")
        if self.irs_elements < 0:
            raise ValueError("irs_elements must be >= 0")
        if self.tx_power_mw <= 0 or self.noise_power_mw <= 0:
            raise ValueError("transmit and noise powers must be positive")
        points = [self.ap_position, self.irs_position, *self.user_positions]
        for i, a in enumerate(points):
            for b in points[i + 1:]:
                if np.hypot(a[0] - b[0], a[1] - b[1]) <= 0:
                    raise ValueError(f"coincident positions {a} and {b}")


def user_row(users: int = 4, spacing: float = 5.0, start_x: float = 42.5,
             offset: float = 2.0) -> tuple[tuple[float, float], ...]:
    """Users on a row parallel to the AP-IRS line (the x-axis)."""
    return tuple((start_x + i * spacing, offset) for i in range(users))


def paper_geometry(irs_elements: int = 30, **overrides) -> SystemGeometry:
    """M=4 AP antennas, four users 5 m apart, IRS 50 m from the AP.

    Link-budget constants are the published ones. See ``calibrated_geometry``
    for the preset used by the experiments.
    """
    geo = SystemGeometry(ap_antennas=4, irs_elements=irs_elements,
                         user_positions=user_row())
    return replace(geo, **overrides)


# Extra user-side loss that brings the published setup into the rate regime
# of its reported experiments (boundary around 2.3-2.5 nats).
CALIBRATED_PENETRATION_LOSS_DB = 40.0


def calibrated_geometry(irs_elements: int = 30, **overrides) -> SystemGeometry:
    """``paper_geometry`` with the user-side penetration loss recalibrated."""
    overrides.setdefault("penetration_loss_db", CALIBRATED_PENETRATION_LOSS_DB)
    return paper_geometry(irs_elements, **overrides)


@dataclass(eq=False)
class ChannelSet:
    """One realization of every channel in the system.

    G : (M, N) IRS->AP channel.
    h_r : (K, N) user->IRS channels, one row per user.
    h_d : (K, M) user->AP channels, one row per user.
    q : (K,) transmit powers in mW.
    noise : noise power in mW.
    """

    G: np.ndarray
    h_r: np.ndarray
    h_d: np.ndarray
    q: np.ndarray
    noise: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.G = np.asarray(self.G, dtype=complex)
        self.h_r = np.asarray(self.h_r, dtype=complex)
        self.h_d = np.asarray(self.h_d, dtype=complex)
        self.q = np.asarray(self.q, dtype=float)
        self.noise = float(self.noise)
        M, N = self.G.shape
        K = self.h_d.shape[0]
        if self.h_d.shape != (K, M):
            raise ValueError(f"h_d has shape {self.h_d.shape}, expected ({K}, {M})")
        if self.h_r.shape != (K, N):
            raise ValueError(f"h_r has shape {self.h_r.shape}, expected ({K}, {N})")
        if self.q.shape != (K,):
            raise ValueError("need one transmit power per user")
        if np.any(self.q < 0) or self.noise <= 0:
            raise ValueError("transmit powers must be >= 0 and noise > 0")

    @property
    def M(self) -> int:
        return self.G.shape[0]

    @property
    def N(self) -> int:
        return self.G.shape[1]

    @property
    def K(self) -> int:
        return self.h_d.shape[0]

    def cascaded(self) -> np.ndarray:
        """F_k = G diag(h_r,k) stacked as a (K, M, N) array."""
        return self.G[None, :, :] * self.h_r[:, None, :]

    def without_irs(self) -> ChannelSet:
        K, M = self.h_d.shape
        return ChannelSet(np.zeros((M, 0), complex), np.zeros((K, 0), complex),
                          self.h_d.copy(), self.q.copy(), self.noise, dict(self.meta))

    def __eq__(self, other):
        if not isinstance(other, ChannelSet):
            return NotImplemented
        return (self.G.shape == other.G.shape and self.h_d.shape == other.h_d.shape
                and np.array_equal(self.G, other.G)
                and np.array_equal(self.h_r, other.h_r)
                and np.array_equal(self.h_d, other.h_d)
                and np.array_equal(self.q, other.q)
                and self.noise == other.noise)


def pathloss_linear(distance: float, exponent: float, ref_db: float) -> float:
    """Power gain of ``ref_db`` dB loss at 1 m decaying as ``d**-exponent``."""
    return 10.0 ** (-(ref_db + 10.0 * exponent * math.log10(distance)) / 10.0)


def ula_response(n: int, axis_angle: float, direction: np.ndarray) -> np.ndarray:
    """Half-wavelength ULA steering vector toward ``direction``."""
    u = np.asarray(direction, float)
    u = u / np.linalg.norm(u)
    cos_psi = math.cos(axis_angle) * u[0] + math.sin(axis_angle) * u[1]
    return np.exp(1j * math.pi * np.arange(n) * cos_psi)


def link_budgets(geometry: SystemGeometry) -> dict[str, np.ndarray | float]:
    """Average power gains of every link (linear scale)."""
    g = geometry
    ap, irs = np.asarray(g.ap_position, float), np.asarray(g.irs_position, float)
    users = np.asarray(g.user_positions, float).reshape(-1, 2)
    db = lambda x: 10.0 ** (x / 10.0)  # noqa: E731
    pen = db(-g.penetration_loss_db)
    d_direct = np.linalg.norm(users - ap, axis=1)
    d_irs = np.linalg.norm(users - irs, axis=1)
    beta_d = np.array([pathloss_linear(d, g.pathloss_exponent_user, g.ref_pathloss_db_at_1m)
                       for d in d_direct])
    beta_d *= pen * db(g.antenna_gain_ap_db + g.antenna_gain_user_db)
    beta_r = np.array([pathloss_linear(d, g.pathloss_exponent_user, g.ref_pathloss_db_at_1m)
                       for d in d_irs])
    beta_r *= pen * db(g.antenna_gain_user_db + g.antenna_gain_irs_element_db)
    beta_g = pathloss_linear(g.ap_irs_distance, g.pathloss_exponent_irs,
                             g.ref_pathloss_db_at_1m) * db(g.antenna_gain_ap_db)
    return {"direct": beta_d, "irs_user": beta_r, "ap_irs": beta_g}


def _crandn(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def generate_channels(geometry: SystemGeometry, seed: int) -> ChannelSet:
    """Draw one channel realization.

    The direct links and the IRS links come from separate child streams of
    ``seed``, so the same seed gives the same ``h_d`` for every IRS size
    (including ``N = 0``).
    """
    geometry.validate()
    M, N, K = geometry.ap_antennas, geometry.irs_elements, geometry.users
    budgets = link_budgets(geometry)
    rng_direct, rng_irs = (np.random.default_rng(s)
                           for s in np.random.SeedSequence(seed).spawn(2))

    h_d = _crandn(rng_direct, (K, M)) * np.sqrt(budgets["direct"])[:, None]
    if N > 0:
        ap = np.asarray(geometry.ap_position, float)
        irs = np.asarray(geometry.irs_position, float)
        a_ap = ula_response(M, geometry.ap_array_angle, irs - ap)
        a_irs = ula_response(N, geometry.irs_array_angle, ap - irs)
        G = math.sqrt(budgets["ap_irs"]) * np.outer(a_ap, a_irs.conj())
        h_r = _crandn(rng_irs, (K, N)) * np.sqrt(budgets["irs_user"])[:, None]
    else:
        G = np.zeros((M, 0), complex)
        h_r = np.zeros((K, 0), complex)
    q = np.full(K, geometry.tx_power_mw)
    return ChannelSet(G, h_r, h_d, q, geometry.noise_power_mw, meta={"seed": int(seed)})


# -- persistence ------------------------------------------------------------

def _format_rows(arr: np.ndarray) -> list[str]:
    lines = []
    for row in np.atleast_2d(arr):
        lines.append(" ".join(f"{float(z.real)!r} {float(z.imag)!r}" for z in row))
    return lines


def save_channels(chset: ChannelSet, path) -> None:
    """Write a channel set as a self-describing text file."""
    out = [FILE_MAGIC,
           f"M {chset.M}",
           f"K {chset.K}",
           f"N {chset.N}",
           f"noise {float(chset.noise)!r}",
           "q " + " ".join(repr(float(x)) for x in chset.q)]
    if "seed" in chset.meta:
        out.append(f"seed {chset.meta['seed']}")
    for name, arr in (("G", chset.G), ("h_r", chset.h_r), ("h_d", chset.h_d)):
        rows = arr.shape[0]
        out.append(f"[{name}] {arr.shape[0]} {arr.shape[1]}")
        if arr.shape[1] > 0:
            out.extend(_format_rows(arr))
        else:
            out.extend([""] * rows)
    out.append("[end]")
    Path(path).write_text("\n".join(out) + "\n")


_SECTION = re.compile(r"^\[(\w+)\](?:\s+(\d+)\s+(\d+))?$")


def _parse_matrix(name, lines, pos, rows, cols):
    data = np.empty((rows, cols), complex)
    for r in range(rows):
        if pos >= len(lines):
            raise ChannelFileError(name, f"truncated at row {r}")
        fields = lines[pos].split()
        pos += 1
        if len(fields) != 2 * cols:
            raise ChannelFileError(name, f"row {r} has {len(fields)} numbers, expected {2 * cols}")
        try:
            vals = np.array([float(f) for f in fields])
        except ValueError as exc:
            raise ChannelFileError(name, f"row {r}: {exc}") from None
        data[r] = vals[0::2] + 1j * vals[1::2]
    return data, pos


def load_channels(path) -> ChannelSet:
    """Read a file written by :func:`save_channels`."""
    try:
        lines = Path(path).read_text().split("\n")
    except UnicodeDecodeError as exc:
        raise ChannelFileError("header", f"not a text file ({exc})") from None
    if not lines or lines[0].strip() != FILE_MAGIC:
        raise ChannelFileError("header", "missing magic line")
    header: dict[str, list[str]] = {}
    pos = 1
    while pos < len(lines) and not lines[pos].startswith("["):
        parts = lines[pos].split()
        if parts:
            header[parts[0]] = parts[1:]
        pos += 1

    def scalar(key, cast):
        if key not in header or len(header[key]) != 1:
            raise ChannelFileError(key, "missing or malformed header entry")
        try:
            return cast(header[key][0])
        except ValueError:
            raise ChannelFileError(key, f"cannot parse {header[key][0]!r}") from None

    M, K, N = scalar("M", int), scalar("K", int), scalar("N", int)
    noise = scalar("noise", float)
    try:
        q = np.array([float(x) for x in header.get("q", [])])
    except ValueError:
        raise ChannelFileError("q", "non-numeric transmit power") from None
    if q.shape != (K,):
        raise ChannelFileError("q", f"expected {K} values, found {q.size}")
    meta = {"seed": scalar("seed", int)} if "seed" in header else {}

    expected = {"G": (M, N), "h_r": (K, N), "h_d": (K, M)}
    arrays = {}
    for name, (rows, cols) in expected.items():
        if pos >= len(lines):
            raise ChannelFileError(name, "section missing (file truncated)")
        m = _SECTION.match(lines[pos].strip())
        if not m or m.group(1) != name:
            raise ChannelFileError(name, f"expected section header, found {lines[pos]!r}")
        if m.group(2) is None or (int(m.group(2)), int(m.group(3))) != (rows, cols):
            raise ChannelFileError(name, "dimension mismatch with header")
        pos += 1
        if cols == 0:
            arrays[name] = np.zeros((rows, 0), complex)
            pos += rows
            continue
        arrays[name], pos = _parse_matrix(name, lines, pos, rows, cols)
    if pos >= len(lines) or lines[pos].strip() != "[end]":
        raise ChannelFileError("end", "missing end marker (file truncated)")
    try:
        return ChannelSet(arrays["G"], arrays["h_r"], arrays["h_d"], q, noise, meta)
    except ValueError as exc:
        raise ChannelFileError("header", str(exc)) from None
