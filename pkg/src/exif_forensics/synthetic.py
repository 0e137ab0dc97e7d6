"""Synthetic camera pipelines with consistent EXIF records, and two-camera composites."""

import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .models import ManifestRow
from .patches import synth_splice
from .utils import save_png

logger = logging.getLogger(__name__)

# PIL subsampling codes
CHROMA_444 = 0
CHROMA_422 = 1
CHROMA_420 = 2

_SHAPES = ("circle", "square", "stripe")
_COLORS = ("red", "green", "blue", "yellow", "gray", "purple")

# ISO multiples of the camera's base ISO, and exposure compensation in EV
ISO_STEPS = (1, 2, 4, 8)
EXPOSURE_BIAS = (("-2/3 EV", -2 / 3), ("0 EV", 0.0), ("+2/3 EV", 2 / 3), ("+4/3 EV", 4 / 3))


@dataclass(frozen=True)
class Shot:
    """Per-shot settings that both change the pixels and appear in the EXIF record."""

    iso_step: int = 1
    bias: int = 1

    @property
    def ev(self) -> float:
        return EXPOSURE_BIAS[self.bias][1]


@dataclass(frozen=True)
class CameraProfile:
    """Processing pipeline of one synthetic camera and the EXIF it writes."""

    make: str
    model: str
    noise_sigma: float
    gamma: float
    subsampling: int
    jpeg_quality: int
    white_balance: tuple[float, float, float] = (1.0, 1.0, 1.0)
    pattern_strength: float = 0.0
    pattern_seed: int = 0
    base_iso: int = 100
    base_shutter: int = 125
    exif: dict[str, str] = field(default_factory=dict)

    @property
    def name(self) -> str:
        return f"{self.make} {self.model}"

    def pattern(self) -> np.ndarray:
        """Fixed 8 x 8 x 3 sensor pattern, tiled over every image of this camera."""
        return np.random.default_rng(self.pattern_seed).uniform(-1.0, 1.0, (8, 8, 3))

    def draw_shot(self, rng: np.random.Generator) -> Shot:
        return Shot(
            iso_step=ISO_STEPS[int(rng.integers(len(ISO_STEPS)))],
            bias=int(rng.integers(len(EXPOSURE_BIAS))),
        )

    def sigma(self, shot: Shot) -> float:
        """Noise level grows with the square root of the ISO gain."""
        return self.noise_sigma * float(np.sqrt(shot.iso_step))

    def record(self, index: int, shot: Shot | None = None) -> dict[str, str]:
        """EXIF for the ``index``-th shot: camera constants, shot settings and a capture time."""
        shot = shot or Shot()
        stamp = f"2021:06:{1 + index % 28:02d} {8 + index % 12:02d}:{index % 60:02d}:00"
        shutter = max(1, round(self.base_shutter * shot.iso_step / 2**shot.ev))
        return {
            **self.exif,
            "ISO Speed Ratings": str(self.base_iso * shot.iso_step),
            "Exposure Time": f"1/{shutter}",
            "Exposure Bias Value": EXPOSURE_BIAS[shot.bias][0],
            "Date/Time": stamp,
            "Date/Time Original": stamp,
            "Date/Time Digitized": stamp,
        }


_SHARED_EXIF = {
    "Metering Mode": "Pattern",
    "Flash": "Flash did not fire",
    "Exposure Program": "Program Normal",
    "Exif Version": "0230",
    "Orientation": "Horizontal (normal)",
    "Resolution Unit": "Pixels/Inch",
}

# make, model, noise sigma, gamma, subsampling, JPEG quality, white balance gains,
# pattern strength, base ISO, base shutter denominator, f-number, focal length,
# software, color space, white balance mode, YCbCr positioning
_CAMERAS = [
    ("Canon", "Canon EOS 5D", 0.004, 2.2, CHROMA_422, 95, (1.00, 1.00, 1.00), 0.010,
     100, 250, "8.0", "50.0 mm", "Digital Photo Professional", "sRGB", "Auto",
     "Co-sited"),
    ("NIKON CORPORATION", "NIKON D90", 0.012, 1.8, CHROMA_420, 85, (1.05, 1.00, 0.92),
     0.012, 800, 60, "4.0", "35.0 mm", "Ver.1.00", "sRGB", "Auto", "Centered"),
    ("Apple", "iPhone 4", 0.020, 2.4, CHROMA_420, 70, (0.95, 1.00, 1.08), 0.008,
     1000, 15, "2.8", "3.85 mm", "4.3.3", "sRGB", "Auto", "Centered"),
    ("SONY", "DSC-W80", 0.008, 2.0, CHROMA_444, 90, (1.00, 0.97, 1.02), 0.015,
     200, 125, "5.6", "6.3 mm", "DSC-W80 v1.00", "sRGB", "Manual", "Co-sited"),
    ("FUJIFILM", "FinePix S5600", 0.016, 1.6, CHROMA_422, 75, (1.08, 1.02, 0.95), 0.010,
     400, 30, "3.2", "12.4 mm", "Digital Camera FinePix S5600", "sRGB", "Auto",
     "Co-sited"),
    ("OLYMPUS IMAGING CORP.", "E-500", 0.006, 2.6, CHROMA_444, 80, (0.97, 1.03, 1.00),
     0.018, 100, 500, "11.0", "14.0 mm", "Version 1.2", "Uncalibrated", "Auto",
     "Centered"),
    ("Panasonic", "DMC-FZ8", 0.024, 2.1, CHROMA_420, 60, (1.02, 0.95, 1.05), 0.012,
     1600, 8, "2.8", "6.0 mm", "Ver.1.0", "sRGB", "Manual", "Co-sited"),
    ("SAMSUNG", "SM-G920F", 0.010, 1.9, CHROMA_444, 98, (1.00, 1.06, 0.97), 0.014,
     320, 100, "1.9", "4.3 mm", "G920FXXU3DPBG", "sRGB", "Auto", "Centered"),
]


def default_profiles() -> list[CameraProfile]:
    """Eight cameras that differ in noise, tone curve, chroma subsampling and JPEG quality."""
    profiles = []
    for index, row in enumerate(_CAMERAS):
        make, model, sigma, gamma, subsampling, quality, gains, strength = row[:8]
        base_iso, base_shutter, f_number, focal, software, color_space, wb_mode, ycbcr = row[8:]
        exif = {
            "Camera Make": make,
            "Camera Model": model,
            "F-Number": f_number,
            "Focal Length": focal,
            "Software": software,
            "Color Space": color_space,
            "White Balance Mode": wb_mode,
            "YCbCr Positioning": ycbcr,
            **_SHARED_EXIF,
        }
        profiles.append(
            CameraProfile(
                make=make,
                model=model,
                noise_sigma=sigma,
                gamma=gamma,
                subsampling=subsampling,
                jpeg_quality=quality,
                white_balance=gains,
                pattern_strength=strength,
                pattern_seed=1000 + index,
                base_iso=base_iso,
                base_shutter=base_shutter,
                exif=exif,
            )
        )
    return profiles


def render_scene(rng: np.random.Generator, height: int, width: int) -> tuple[np.ndarray, str]:
    """
    Smooth linear-light scene: a colored gradient plus a few flat shapes.

    Returns:
        Tuple of (float scene in [0, 1] of shape (height, width, 3), caption)
    """
    rows = np.linspace(0.0, 1.0, height)[:, None, None]
    cols = np.linspace(0.0, 1.0, width)[None, :, None]
    start, stop, across = rng.uniform(0.1, 0.9, (3, 3))
    scene = start + (stop - start) * rows + (across - start) * 0.5 * cols
    yy, xx = np.mgrid[0:height, 0:width]

    n_shapes = int(rng.integers(2, 6))
    kind = _SHAPES[int(rng.integers(len(_SHAPES)))]
    color_name = _COLORS[int(rng.integers(len(_COLORS)))]
    for _ in range(n_shapes):
        color = rng.uniform(0.05, 0.95, 3)
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        size = rng.uniform(0.05, 0.2) * min(height, width)
        if kind == "circle":
            inside = (yy - cy) ** 2 + (xx - cx) ** 2 <= size**2
        elif kind == "square":
            inside = (np.abs(yy - cy) <= size) & (np.abs(xx - cx) <= size)
        else:
            inside = np.abs(yy - cy) <= size / 3
        scene[inside] = color
    caption = f"{n_shapes} {kind}s over a {color_name} gradient"
    return np.clip(scene, 0.0, 1.0), caption


def apply_camera(
    scene: np.ndarray,
    profile: CameraProfile,
    rng: np.random.Generator,
    shot: Shot | None = None,
) -> np.ndarray:
    """Exposure, tone curve, white balance, sensor pattern, ISO noise and a JPEG round trip."""
    shot = shot or Shot()
    height, width = scene.shape[:2]
    exposed = np.clip(scene * 2.0**shot.ev, 0.0, 1.0)
    toned = np.power(exposed, 1.0 / profile.gamma)
    toned = toned * np.asarray(profile.white_balance)
    reps = (-(-height // 8), -(-width // 8), 1)
    toned = toned + profile.pattern_strength * np.tile(profile.pattern(), reps)[:height, :width]
    toned = toned + rng.normal(0.0, profile.sigma(shot), toned.shape)
    pixels = np.clip(np.rint(toned * 255.0), 0, 255).astype(np.uint8)

    buffer = io.BytesIO()
    Image.fromarray(pixels).save(
        buffer, format="JPEG", quality=profile.jpeg_quality, subsampling=profile.subsampling
    )
    buffer.seek(0)
    with Image.open(buffer) as decoded:
        return np.asarray(decoded.convert("RGB"))


@dataclass
class SyntheticCorpus:
    rows: list[ManifestRow]
    splice_rows: list[ManifestRow]
    profiles: list[CameraProfile]


def _shoot(
    profile: CameraProfile, rng: np.random.Generator, height: int, width: int
) -> np.ndarray:
    scene = render_scene(rng, height, width)[0]
    return apply_camera(scene, profile, rng, profile.draw_shot(rng))


def _write_sidecar(path: Path, record: dict[str, str]) -> Path:
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def build_synthetic_corpus(
    out_dir: Path,
    per_camera: int,
    rng: np.random.Generator,
    height: int = 256,
    width: int = 256,
    n_composites: int = 0,
    n_pristine_eval: int = 0,
    profiles: list[CameraProfile] | None = None,
) -> SyntheticCorpus:
    """
    Render a training corpus and an optional splice-evaluation corpus.

    Training images go to ``out_dir/train`` with JSON sidecars. Evaluation
    composites (host and donor from different cameras, rectangle or ellipse
    region) go to ``out_dir/splices`` next to ``n_pristine_eval`` unmodified
    images; their ground-truth masks go to ``out_dir/masks``.
    """
    profiles = profiles or default_profiles()
    train_dir = out_dir / "train"
    train_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for c, profile in enumerate(profiles):
        for i in range(per_camera):
            source_id = f"cam{c}-{i:04d}"
            scene, caption = render_scene(rng, height, width)
            shot = profile.draw_shot(rng)
            image = apply_camera(scene, profile, rng, shot)
            image_path = save_png(train_dir / f"{source_id}.png", image)
            record = profile.record(i, shot)
            sidecar = _write_sidecar(train_dir / f"{source_id}.json", record)
            rows.append(
                ManifestRow(
                    id=source_id,
                    image=str(image_path),
                    sidecar=str(sidecar),
                    caption=caption,
                    labels={"camera": profile.name},
                    n_tags=len(record),
                )
            )

    splice_rows = []
    if n_composites or n_pristine_eval:
        splice_dir = out_dir / "splices"
        splice_dir.mkdir(parents=True, exist_ok=True)
        mask_dir = out_dir / "masks"
        mask_dir.mkdir(exist_ok=True)
        for i in range(n_composites):
            host_cam, donor_cam = rng.choice(len(profiles), size=2, replace=False)
            host = _shoot(profiles[host_cam], rng, height, width)
            donor = _shoot(profiles[donor_cam], rng, height, width)
            shape = "rectangle" if i % 2 == 0 else "ellipse"
            image, mask = synth_splice(host, donor, rng, shape=shape)
            source_id = f"splice-{i:04d}"
            splice_rows.append(
                ManifestRow(
                    id=source_id,
                    image=str(save_png(splice_dir / f"{source_id}.png", image)),
                    mask=str(save_png(mask_dir / f"{source_id}.png", mask)),
                    labels={
                        "is_spliced": True,
                        "host": profiles[host_cam].name,
                        "donor": profiles[donor_cam].name,
                    },
                    split="eval",
                )
            )
        for i in range(n_pristine_eval):
            cam = int(rng.integers(len(profiles)))
            image = _shoot(profiles[cam], rng, height, width)
            source_id = f"pristine-{i:04d}"
            splice_rows.append(
                ManifestRow(
                    id=source_id,
                    image=str(save_png(splice_dir / f"{source_id}.png", image)),
                    labels={"is_spliced": False, "host": profiles[cam].name},
                    split="eval",
                )
            )

    logger.info(
        f"Synthetic corpus: {len(rows)} training images from {len(profiles)} cameras, "
        f"{n_composites} composites, {n_pristine_eval} pristine evaluation images"
    )
    return SyntheticCorpus(rows=rows, splice_rows=splice_rows, profiles=profiles)
