"""Seeded procedural texture fixtures standing in for medical data.

CI never touches real cohorts: these generate two visually distinct
"classes" of 128x128 patches (smooth low-frequency blobs vs. spiculated
high-frequency texture) with synthetic patient ids, two views per patient.
A third frequency family serves as an out-of-domain "external" set.
"""

from __future__ import annotations

import numpy as np

from .ingest import Box, Label, LesionRecord, MassPatch, Source, View

PATCH_SIDE = 128


def _texture(rng: np.random.Generator, freq_lo: float, freq_hi: float, n_waves: int) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(PATCH_SIDE), np.arange(PATCH_SIDE), indexing="ij")
    img = np.zeros((PATCH_SIDE, PATCH_SIDE))
    for _ in range(n_waves):
        f = rng.uniform(freq_lo, freq_hi)
        theta = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        img += rng.uniform(0.5, 1.0) * np.cos(
            2 * np.pi * f * (xx * np.cos(theta) + yy * np.sin(theta)) / PATCH_SIDE + phase
        )
    # central bump imitating a mass on top of the texture
    cy, cx = rng.uniform(54, 74, size=2)
    r = rng.uniform(18, 34)
    img += 2.2 * np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r)))
    lo, hi = img.min(), img.max()
    return ((img - lo) / (hi - lo)).astype(np.float32)


def fixture_image(label: Label, rng: np.random.Generator, family: str = "patch") -> np.ndarray:
    """One 128x128 texture; malignant draws from a higher frequency band."""
    if family == "external":
        bands = {Label.benign: (6.0, 10.0), Label.malignant: (16.0, 24.0)}
        n_waves = 10
    else:
        bands = {Label.benign: (1.0, 3.0), Label.malignant: (8.0, 14.0)}
        n_waves = 6
    lo, hi = bands[label]
    return _texture(rng, lo, hi, n_waves)


def fixture_patches(
    n_patients: int,
    seed: int = 0,
    views_per_patient: int = 2,
    source: Source = Source.FIXTURE,
    family: str = "patch",
    id_prefix: str = "FXP",
) -> list[MassPatch]:
    """Labeled patches for ``n_patients`` synthetic patients.

    Patients alternate benign/malignant; every image of a patient shares the
    patient's label, mirroring biopsy-level ground truth.
    """
    rng = np.random.default_rng(seed)
    views = [View.CC, View.MLO]
    patches = []
    for i in range(n_patients):
        label = Label.malignant if i % 2 else Label.benign
        pid = f"{id_prefix}{i:04d}"
        for v in range(views_per_patient):
            record = LesionRecord(
                patient_id=pid,
                image_id=f"{pid}_{views[v % 2].value}",
                view=views[v % 2],
                label=label,
                source=source,
                box=Box(40, 40, 88, 88),
            )
            patches.append(
                MassPatch(pixels=fixture_image(label, rng, family), label=label, provenance=record)
            )
    return patches


def fixture_records(patches: list[MassPatch]) -> list[LesionRecord]:
    return [p.provenance for p in patches if isinstance(p.provenance, LesionRecord)]


def fixture_synthetic(n_benign: int, n_malignant: int, seed: int = 0) -> list[MassPatch]:
    """Generator stand-in: texture patches tagged with synthetic provenance."""
    rng = np.random.default_rng(seed)
    patches = []
    for i in range(n_benign + n_malignant):
        label = Label.benign if i < n_benign else Label.malignant
        patches.append(
            MassPatch(
                pixels=fixture_image(label, rng),
                label=label,
                provenance=f"synthetic:fixture:{seed}:{i}",
            )
        )
    return patches
