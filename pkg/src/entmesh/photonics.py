"""Rate and state model: source spectrum, detector response, coincidence
statistics, and the effective two-qubit state under accidental noise.

All functions are pure; random sampling takes an explicit seed or generator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_FWHM_TO_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


class PhotonicsError(ValueError):
    pass


@dataclass(frozen=True)
class SourceModel:
    """Broadband pair source with a Gaussian spectral envelope.

    ``total_pair_rate_hz`` is the fitted full-spectrum emission scale and
    ``intrinsic_visibility`` absorbs every non-multipair imperfection.
    """

    total_pair_rate_hz: float
    spectral_fwhm_ghz: float = 310.0
    center_thz: float = 192.3125
    intrinsic_visibility: float = 1.0

    def __post_init__(self) -> None:
        if self.total_pair_rate_hz <= 0:
            raise PhotonicsError("total pair rate must be positive")
        if self.spectral_fwhm_ghz <= 0:
            raise PhotonicsError("spectral FWHM must be positive")
        if not 0 < self.intrinsic_visibility <= 1:
            raise PhotonicsError("intrinsic visibility must be in (0, 1]")


@dataclass(frozen=True)
class DetectorModel:
    efficiency: float
    dark_rate_hz: float = 0.0
    dead_time_s: float = 0.0

    def __post_init__(self) -> None:
        if not 0 <= self.efficiency <= 1:
            raise PhotonicsError("detector efficiency must be in [0, 1]")
        if self.dead_time_s < 0 or self.dark_rate_hz < 0:
            raise PhotonicsError("dark rate and dead time must be nonnegative")


@dataclass(frozen=True)
class RateReport:
    singles_a_hz: float
    singles_b_hz: float
    true_coincidence_hz: float
    accidental_hz: float
    window_s: float

    def __post_init__(self) -> None:
        for value in (
            self.singles_a_hz,
            self.singles_b_hz,
            self.true_coincidence_hz,
            self.accidental_hz,
        ):
            if value < 0:
                raise PhotonicsError("rates must be nonnegative")
        limit = self.singles_a_hz * self.singles_b_hz * self.window_s
        if self.accidental_hz > limit * (1 + 1e-9) + 1e-12:
            raise PhotonicsError("accidental rate exceeds singles product bound")


def _std_normal_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def slot_fraction(source: SourceModel, channel: int) -> float:
    """Fraction of the Gaussian spectral density inside signal slot ``channel``.

    The slot spans offsets [25(n-1), 25n] GHz from the grid center; by
    spectral symmetry the conjugate idler slot holds the same fraction.
    """
    if not 1 <= channel <= 8:
        raise PhotonicsError(f"channel index {channel} outside 1..8")
    sigma = source.spectral_fwhm_ghz / _FWHM_TO_SIGMA
    lo, hi = 25.0 * (channel - 1), 25.0 * channel
    return _std_normal_cdf(hi / sigma) - _std_normal_cdf(lo / sigma)


def channel_pair_rate(source: SourceModel, channel: int) -> float:
    """Pairs per second emitted into conjugate channel pair ``channel``."""
    return source.total_pair_rate_hz * slot_fraction(source, channel)


def transmittance_from_db(loss_db: float) -> float:
    return 10.0 ** (-loss_db / 10.0)


def singles_rate(
    allocated_pair_rates: list[float] | tuple[float, ...],
    transmittance: float,
    detector: DetectorModel,
) -> float:
    """Reported singles rate for one detector.

    Raw rate is efficiency * transmittance * sum of allocated channel pair
    rates plus darks; the reported rate applies the non-paralyzable
    dead-time correction raw / (1 + raw * dead_time).
    """
    if not 0 <= transmittance <= 1:
        raise PhotonicsError("transmittance must be in [0, 1]")
    raw = detector.efficiency * transmittance * float(sum(allocated_pair_rates))
    raw += detector.dark_rate_hz
    return raw / (1.0 + raw * detector.dead_time_s)


def coincidence_rates(
    shared_pair_rate_hz: float,
    transmittance_a: float,
    efficiency_a: float,
    transmittance_b: float,
    efficiency_b: float,
    singles_a_hz: float,
    singles_b_hz: float,
    window_s: float,
) -> tuple[float, float]:
    """(true, accidental) coincidence rates for one user pair.

    True coincidences scale with the product of both arm transmittances and
    efficiencies; accidentals follow the singles product times the window.
    """
    if window_s <= 0:
        raise PhotonicsError("coincidence window must be positive")
    if min(shared_pair_rate_hz, singles_a_hz, singles_b_hz) < 0:
        raise PhotonicsError("rates must be nonnegative")
    true = (
        shared_pair_rate_hz
        * transmittance_a
        * efficiency_a
        * transmittance_b
        * efficiency_b
    )
    accidental = singles_a_hz * singles_b_hz * window_s
    return true, accidental


def werner_weight(
    true_hz: float, accidental_hz: float, intrinsic_visibility: float
) -> float:
    if true_hz < 0 or accidental_hz < 0:
        raise PhotonicsError("rates must be nonnegative")
    if true_hz + accidental_hz == 0:
        raise PhotonicsError("no flux: true and accidental rates are both zero")
    return intrinsic_visibility * true_hz / (true_hz + accidental_hz)


def effective_state(
    true_hz: float, accidental_hz: float, intrinsic_visibility: float = 1.0
) -> np.ndarray:
    """Werner-form effective two-qubit state for the given coincidence mix.

    rho = p |psi+><psi+| + (1 - p) I/4 with
    p = V0 * true / (true + accidental); fidelity to |psi+> is (1 + 3p)/4.
    """
    from .tomography import werner_state  # tomography owns the state algebra

    return werner_state(werner_weight(true_hz, accidental_hz, intrinsic_visibility))


def sample_counts(
    rate_hz: float, duration_s: float, seed: int | np.random.Generator
) -> int:
    """Poisson-distributed integer count; identical seed, identical count."""
    if rate_hz < 0:
        raise PhotonicsError("rate must be nonnegative")
    if duration_s <= 0:
        raise PhotonicsError("duration must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return int(rng.poisson(rate_hz * duration_s))


@dataclass(frozen=True)
class CalibrationAnchor:
    """Single measured link used to fit the unpublished source parameters."""

    true_coincidence_hz: float
    fidelity: float
    slot_fraction: float  # spectral weight of the anchor pair's channel
    arm_a_transmittance: float  # path transmittance times detector efficiency
    arm_b_transmittance: float
    singles_a_hz: float  # analytic singles at the fitted source, darks included
    singles_b_hz: float
    window_s: float


def calibrate_source(
    anchor: CalibrationAnchor,
    spectral_fwhm_ghz: float = 310.0,
    center_thz: float = 192.3125,
) -> SourceModel:
    """Fit (total pair rate, intrinsic visibility) from one anchor link.

    The pair rate makes the predicted true coincidence rate match the anchor
    exactly; the visibility makes the Werner fidelity match once the anchor's
    accidental fraction is accounted for. Both are then frozen.
    """
    denom = anchor.slot_fraction * anchor.arm_a_transmittance * anchor.arm_b_transmittance
    if denom <= 0:
        raise PhotonicsError("anchor transmittances and slot fraction must be positive")
    total_rate = anchor.true_coincidence_hz / denom
    accidental = anchor.singles_a_hz * anchor.singles_b_hz * anchor.window_s
    p_measured = (4.0 * anchor.fidelity - 1.0) / 3.0
    p_flux = anchor.true_coincidence_hz / (anchor.true_coincidence_hz + accidental)
    visibility = p_measured / p_flux
    if not 0 < visibility <= 1:
        raise PhotonicsError(f"calibrated visibility {visibility:.6f} outside (0, 1]")
    return SourceModel(
        total_pair_rate_hz=total_rate,
        spectral_fwhm_ghz=spectral_fwhm_ghz,
        center_thz=center_thz,
        intrinsic_visibility=visibility,
    )
