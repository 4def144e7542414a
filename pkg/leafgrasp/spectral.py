"""Simulated leaf-clip spectrometer with white/dark referencing.

The sensor measures light transmitted through the grasped leaf. Raw counts follow
``dark + (white - dark) * T`` plus Gaussian read noise, where ``white`` is the lamp
response without a leaf and ``dark`` the response with the lamp off; calibrated
transmittance is ``(raw - dark_ref) / (white_ref - dark_ref)``. The leaf
transmittance ``T`` is a synthetic template, not measured data.
"""

import logging
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np
import numpy.typing as npt

from leafgrasp.exceptions import ConfigurationError, DegenerateReferenceError, MalformedInputError

logger = logging.getLogger(__name__)

MIN_WAVELENGTH: float = 400.0
MAX_WAVELENGTH: float = 1010.0


def transmittance_template(wavelengths: npt.ArrayLike, pigment: float = 1.0) -> npt.NDArray[np.float64]:
    """Smooth synthetic leaf transmittance in [0, 1].

    Low in the blue, a bump in the green, a dip in the red and a plateau in the
    near infrared. ``pigment`` above 1 darkens the leaf, below 1 lightens it.
    """
    wl = np.asarray(wavelengths, dtype=np.float64)
    base = (
        0.04
        + 0.12 * np.exp(-(((wl - 550.0) / 35.0) ** 2))
        - 0.03 * np.exp(-(((wl - 675.0) / 15.0) ** 2))
        + 0.41 / (1.0 + np.exp(-(wl - 715.0) / 12.0))
    )
    return np.asarray(np.clip(base, 0.0, 1.0) ** pigment)


class SpectralSensorConfiguration:
    """Class to encapsulate the simulated spectrometer parameters."""

    def __init__(self) -> None:
        """Initialize the sensor with its default parameters."""
        self._wavelength_min: float = MIN_WAVELENGTH
        self._wavelength_max: float = MAX_WAVELENGTH
        self._wavelength_step: float = 5.0
        self._lamp_peak_counts: float = 40000.0
        self._dark_counts: float = 800.0
        self._read_noise: float = 15.0
        self._reference_frames: int = 16

    @property
    def wavelengths(self) -> npt.NDArray[np.float64]:
        """Band centers in nanometers, ascending."""
        return np.arange(self._wavelength_min, self._wavelength_max + self._wavelength_step / 2, self._wavelength_step)

    @property
    def dark_counts(self) -> float:
        """Mean counts with the lamp off."""
        return self._dark_counts

    @property
    def read_noise(self) -> float:
        """Standard deviation of the per-band read noise, counts."""
        return self._read_noise

    @property
    def reference_frames(self) -> int:
        """Frames averaged into each reference."""
        return self._reference_frames

    def lamp_counts(self) -> npt.NDArray[np.float64]:
        """Noiseless white response per band: a broad halogen-like hump."""
        wl = self.wavelengths
        return self._dark_counts + self._lamp_peak_counts * (0.35 + 0.65 * np.exp(-(((wl - 720.0) / 260.0) ** 2)))

    def set_wavelength_range(self, minimum: float, maximum: float, step: float) -> "SpectralSensorConfiguration":
        """Set the band grid."""
        if not MIN_WAVELENGTH <= minimum < maximum <= MAX_WAVELENGTH:
            raise ConfigurationError(
                f"wavelength range [{minimum}, {maximum}] must lie within [{MIN_WAVELENGTH}, {MAX_WAVELENGTH}] nm"
            )
        if not 0.0 < step <= maximum - minimum:
            raise ConfigurationError(f"wavelength step {step} must be positive and fit the range")
        self._wavelength_min, self._wavelength_max, self._wavelength_step = minimum, maximum, step
        return self

    def set_lamp_peak_counts(self, counts: float) -> "SpectralSensorConfiguration":
        """Set the lamp signal above dark at its brightest band."""
        if not counts > 0.0:
            raise ConfigurationError(f"lamp counts must be positive, got {counts}")
        self._lamp_peak_counts = counts
        return self

    def set_dark_counts(self, counts: float) -> "SpectralSensorConfiguration":
        """Set the dark level."""
        if not counts >= 0.0:
            raise ConfigurationError(f"dark counts must be non-negative, got {counts}")
        self._dark_counts = counts
        return self

    def set_read_noise(self, sigma: float) -> "SpectralSensorConfiguration":
        """Set the read noise; 0 gives a noiseless sensor."""
        if not sigma >= 0.0:
            raise ConfigurationError(f"read noise must be non-negative, got {sigma}")
        self._read_noise = sigma
        return self

    def set_reference_frames(self, frames: int) -> "SpectralSensorConfiguration":
        """Set how many frames each reference averages."""
        if frames < 1:
            raise ConfigurationError(f"reference frames must be at least 1, got {frames}")
        self._reference_frames = frames
        return self

    def to_dict(self) -> dict[str, Any]:
        """Return the JSON representation."""
        return {
            "wavelength_min": self._wavelength_min,
            "wavelength_max": self._wavelength_max,
            "wavelength_step": self._wavelength_step,
            "lamp_peak_counts": self._lamp_peak_counts,
            "dark_counts": self._dark_counts,
            "read_noise": self._read_noise,
            "reference_frames": self._reference_frames,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SpectralSensorConfiguration":
        """Create a configuration from its JSON representation."""
        return (
            cls()
            .set_wavelength_range(
                float(data.get("wavelength_min", MIN_WAVELENGTH)),
                float(data.get("wavelength_max", MAX_WAVELENGTH)),
                float(data.get("wavelength_step", 5.0)),
            )
            .set_lamp_peak_counts(float(data.get("lamp_peak_counts", 40000.0)))
            .set_dark_counts(float(data.get("dark_counts", 800.0)))
            .set_read_noise(float(data.get("read_noise", 15.0)))
            .set_reference_frames(int(data.get("reference_frames", 16)))
        )


@dataclass(frozen=True)
class References:
    """Averaged white and dark reference frames."""

    white: npt.NDArray[np.float64]
    dark: npt.NDArray[np.float64]


def calibrate(sensor: SpectralSensorConfiguration, rng: np.random.Generator) -> References:
    """Acquire and average the white and dark reference frames."""
    bands = len(sensor.wavelengths)
    white = np.tile(sensor.lamp_counts(), (sensor.reference_frames, 1))
    dark = np.full((sensor.reference_frames, bands), sensor.dark_counts)
    if sensor.read_noise > 0.0:
        white += rng.normal(0.0, sensor.read_noise, white.shape)
        dark += rng.normal(0.0, sensor.read_noise, dark.shape)
    return References(white=white.mean(axis=0), dark=dark.mean(axis=0))


def calibrate_transmittance(
    raw: npt.ArrayLike, white_ref: npt.ArrayLike, dark_ref: npt.ArrayLike, wavelengths: Optional[npt.ArrayLike] = None
) -> npt.NDArray[np.float64]:
    """Return ``(raw - dark) / (white - dark)`` clamped to [0, 1].

    Raises
    ------
    DegenerateReferenceError
        If the white reference does not exceed the dark one at some band.
    """
    raw = np.asarray(raw, dtype=np.float64)
    white = np.asarray(white_ref, dtype=np.float64)
    dark = np.asarray(dark_ref, dtype=np.float64)
    span = white - dark
    degenerate = np.flatnonzero(span <= 0.0)
    if len(degenerate) > 0:
        band = int(degenerate[0])
        wavelength = float(np.asarray(wavelengths)[band]) if wavelengths is not None else float(band)
        raise DegenerateReferenceError(wavelength)
    return np.asarray(np.clip((raw - dark) / span, 0.0, 1.0))


@dataclass(frozen=True, eq=False)
class SpectralSample:
    """Calibrated transmittance of one grasped leaf."""

    wavelengths: npt.NDArray[np.float64]
    values: npt.NDArray[np.float64]
    white_ref: npt.NDArray[np.float64]
    dark_ref: npt.NDArray[np.float64]
    synthetic: bool = True

    def __post_init__(self) -> None:
        lengths = {len(self.wavelengths), len(self.values), len(self.white_ref), len(self.dark_ref)}
        if len(lengths) != 1:
            raise MalformedInputError("spectral sample", f"array lengths differ: {sorted(lengths)}")
        if len(self.wavelengths) and (
            self.wavelengths[0] < MIN_WAVELENGTH
            or self.wavelengths[-1] > MAX_WAVELENGTH
            or np.any(np.diff(self.wavelengths) <= 0)
        ):
            raise MalformedInputError("spectral sample", "wavelengths must ascend within 400-1010 nm")

    def to_dict(self) -> dict[str, Any]:
        """Return the JSON representation."""
        return {
            "synthetic": self.synthetic,
            "wavelengths": self.wavelengths.tolist(),
            "values": self.values.tolist(),
            "white_ref": self.white_ref.tolist(),
            "dark_ref": self.dark_ref.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SpectralSample":
        """Create a sample from its JSON representation."""
        return cls(
            wavelengths=np.asarray(data["wavelengths"], dtype=np.float64),
            values=np.asarray(data["values"], dtype=np.float64),
            white_ref=np.asarray(data["white_ref"], dtype=np.float64),
            dark_ref=np.asarray(data["dark_ref"], dtype=np.float64),
            synthetic=bool(data.get("synthetic", True)),
        )


def acquire_spectrum(
    pigment: float,
    sensor: Optional[SpectralSensorConfiguration] = None,
    rng_seed: int = 0,
    references: Optional[References] = None,
) -> SpectralSample:
    """Simulate one transmittance measurement of a leaf with the given pigment factor.

    ``references`` come from :func:`calibrate`; when omitted the sensor is
    calibrated first with the same generator.
    """
    sensor = SpectralSensorConfiguration() if sensor is None else sensor
    rng = np.random.default_rng(rng_seed)
    references = calibrate(sensor, rng) if references is None else references
    wavelengths = sensor.wavelengths
    white = sensor.lamp_counts()
    dark = np.full(len(wavelengths), sensor.dark_counts)
    raw = dark + (white - dark) * transmittance_template(wavelengths, pigment)
    if sensor.read_noise > 0.0:
        raw = raw + rng.normal(0.0, sensor.read_noise, len(wavelengths))
    values = calibrate_transmittance(raw, references.white, references.dark, wavelengths)
    return SpectralSample(wavelengths=wavelengths, values=values, white_ref=references.white, dark_ref=references.dark)
