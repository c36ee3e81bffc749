"""Grayscale images, patch grids, and pixel-domain sensing pipelines.

Images are 8-bit grayscale read and written as binary PGM (P5). Patches
vectorize row-major within the patch. Reassembly averages every patch
value covering a pixel, which is the exact inverse of extraction when
patches are unmodified.

Overlapped reconstruction: when sensing used pixel subsampling, the
non-overlapped measurements are a set of sensed pixel positions, so every
sliding patch owns the sensed pixels inside its window. After the mixture
is learned on the original measurements, each sliding patch selects a
component by measured-domain evidence and decodes from its own pixels;
averaging the overlaps removes block artifacts. A sliding patch with no
sensed pixels decodes to its selected component's mean.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .decoder import CONDITION_LIMIT, JITTER_REL
from .gmm import (
    EVIDENCE_JITTER_REL,
    EmTrace,
    GmmModel,
    PatchMeasurement,
    _LOG_2PI,
    map_em_decode,
)
from .rng import SeededRng
from .sensing import (
    SensingMatrix,
    bernoulli_matrix,
    gaussian_matrix,
    subsample_columns,
    subsampling_matrix,
)

IMAGE_MATRIX_KINDS = ("gaussian", "bernoulli", "subsample")

_DECODE_CHUNK = 2048


class PgmFormatError(ValueError):
    """Malformed PGM input; carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        self.offset = int(offset)
        super().__init__(f"{message} (byte offset {offset})")


class CoverageError(ValueError):
    """A pixel is covered by no patch during reassembly."""


@dataclass(frozen=True)
class GrayImage:
    """8-bit grayscale image held as floats in [0, 255]."""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels, dtype=float)
        if px.shape != (self.height, self.width):
            raise ValueError(
                f"pixels must have shape ({self.height}, {self.width}), got {px.shape}"
            )
        if not np.all(np.isfinite(px)):
            raise ValueError("pixel values must be finite")
        if px.size and (px.min() < 0.0 or px.max() > 255.0):
            raise ValueError("pixel values must lie in [0, 255]")
        px = px.copy()
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)


@dataclass(frozen=True)
class PatchGrid:
    """Patches with their top-left offsets; vectorized row-major."""

    patch_side: int
    stride: int
    offsets: np.ndarray
    patches: np.ndarray

    def __post_init__(self) -> None:
        offsets = np.asarray(self.offsets, dtype=int)
        patches = np.asarray(self.patches, dtype=float)
        if offsets.ndim != 2 or offsets.shape[1] != 2:
            raise ValueError("offsets must be a (count, 2) array")
        if patches.ndim != 2 or patches.shape != (
            offsets.shape[0],
            self.patch_side**2,
        ):
            raise ValueError("patches must be (count, patch_side^2)")
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "patches", patches)

    def __len__(self) -> int:
        return int(self.offsets.shape[0])


def read_pgm(path) -> GrayImage:
    """Read a binary (P5) PGM with maxval 255."""
    data = Path(path).read_bytes()
    pos = 0

    def skip_separators() -> None:
        nonlocal pos
        while pos < len(data):
            b = data[pos]
            if b in b" \t\r\n":
                pos += 1
            elif b == ord("#"):
                while pos < len(data) and data[pos] != ord("\n"):
                    pos += 1
            else:
                return

    def token(name: str) -> tuple[bytes, int]:
        nonlocal pos
        skip_separators()
        start = pos
        while pos < len(data) and data[pos] not in b" \t\r\n":
            pos += 1
        if start == pos:
            raise PgmFormatError(f"missing {name}", start)
        return data[start:pos], start

    def int_token(name: str) -> int:
        text, start = token(name)
        try:
            value = int(text)
        except ValueError:
            raise PgmFormatError(f"non-numeric {name} {text!r}", start) from None
        if value <= 0:
            raise PgmFormatError(f"{name} must be positive, got {value}", start)
        return value

    magic, magic_off = token("magic number")
    if magic != b"P5":
        raise PgmFormatError(
            f"unsupported magic {magic!r}; only binary P5 is handled", magic_off
        )
    width = int_token("width")
    height = int_token("height")
    maxval_text, maxval_off = token("maxval")
    if maxval_text != b"255":
        raise PgmFormatError(
            f"maxval must be 255, got {maxval_text!r}", maxval_off
        )
    if pos >= len(data) or data[pos] not in b" \t\r\n":
        raise PgmFormatError("expected single whitespace byte after maxval", pos)
    pos += 1
    expected = width * height
    if len(data) - pos < expected:
        raise PgmFormatError(
            f"truncated payload: need {expected} bytes, have {len(data) - pos}",
            len(data),
        )
    payload = np.frombuffer(data, dtype=np.uint8, count=expected, offset=pos)
    return GrayImage(
        width=width, height=height, pixels=payload.reshape(height, width).astype(float)
    )


def write_pgm(image: GrayImage, path) -> None:
    """Write binary P5, rounding pixels to the nearest 8-bit value."""
    quantized = np.clip(np.rint(image.pixels), 0, 255).astype(np.uint8)
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + quantized.tobytes())


def _starts(extent: int, side: int, stride: int) -> list[int]:
    if side > extent:
        raise ValueError(f"patch side {side} exceeds image extent {extent}")
    starts = list(range(0, extent - side + 1, stride))
    if starts[-1] != extent - side:
        starts.append(extent - side)
    return starts


def extract_patches(image: GrayImage, patch_side: int, stride: int) -> PatchGrid:
    """Raster-order patches; the rightmost/bottom strips are covered by
    patches aligned to the image edge when the stride does not divide
    evenly."""
    if patch_side < 1 or stride < 1:
        raise ValueError("patch_side and stride must be >= 1")
    row_starts = _starts(image.height, patch_side, stride)
    col_starts = _starts(image.width, patch_side, stride)
    offsets = []
    patches = []
    for r0 in row_starts:
        for c0 in col_starts:
            offsets.append((r0, c0))
            patches.append(
                image.pixels[r0 : r0 + patch_side, c0 : c0 + patch_side].reshape(-1)
            )
    return PatchGrid(
        patch_side=patch_side,
        stride=stride,
        offsets=np.array(offsets, dtype=int),
        patches=np.array(patches),
    )


def _accumulate(
    patch_side: int, offsets: np.ndarray, patches: np.ndarray, width: int, height: int
) -> tuple[np.ndarray, np.ndarray]:
    sums = np.zeros((height, width))
    counts = np.zeros((height, width))
    s = patch_side
    for (r0, c0), patch in zip(offsets, patches):
        if r0 < 0 or c0 < 0 or r0 + s > height or c0 + s > width:
            raise ValueError(f"patch at ({r0}, {c0}) does not fit in the image")
        sums[r0 : r0 + s, c0 : c0 + s] += patch.reshape(s, s)
        counts[r0 : r0 + s, c0 : c0 + s] += 1.0
    return sums, counts


def reassemble(grid: PatchGrid, width: int, height: int) -> GrayImage:
    """Average all patch values covering each pixel."""
    sums, counts = _accumulate(grid.patch_side, grid.offsets, grid.patches, width, height)
    if np.any(counts == 0):
        uncovered = int(np.sum(counts == 0))
        raise CoverageError(f"{uncovered} pixels are covered by no patch")
    return GrayImage(width=width, height=height, pixels=sums / counts)


def psnr(reference: GrayImage, test: GrayImage, peak: float = 255.0) -> float:
    """10 log10(peak^2 / pixel MSE); identical images return math.inf."""
    if (reference.width, reference.height) != (test.width, test.height):
        raise ValueError("images must have identical dimensions")
    mse = float(np.mean((reference.pixels - test.pixels) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def sense_image(
    image: GrayImage,
    patch_side: int,
    stride: int,
    matrix_kind: str,
    sampling_rate: float,
    rng: SeededRng,
) -> list[PatchMeasurement]:
    """Measure every patch with a fresh operator; M = round(rate * N).

    Subsampling operators pick pixels of the patch directly; patch i draws
    its operator from rng.child(i).
    """
    if matrix_kind not in IMAGE_MATRIX_KINDS:
        raise ValueError(
            f"unknown matrix kind {matrix_kind!r}; expected one of {IMAGE_MATRIX_KINDS}"
        )
    if not 0.0 < sampling_rate <= 1.0:
        raise ValueError("sampling_rate must lie in (0, 1]")
    n = patch_side * patch_side
    m = int(round(sampling_rate * n))
    if m < 1:
        raise ValueError(f"sampling rate {sampling_rate} rounds to zero measurements")
    grid = extract_patches(image, patch_side, stride)
    draw = {
        "gaussian": gaussian_matrix,
        "bernoulli": bernoulli_matrix,
        "subsample": subsampling_matrix,
    }[matrix_kind]
    measurements = []
    for i in range(len(grid)):
        phi = draw(m, n, rng.child(i))
        measurements.append(
            PatchMeasurement(y=phi.entries @ grid.patches[i], phi=phi, patch_index=i)
        )
    return measurements


def _batched_gather_evidence(
    component, weight: float, sigma: np.ndarray, idx: np.ndarray, ys: np.ndarray
) -> np.ndarray:
    """Evidence for subsampled measurements via index gathers; same math
    as component_log_evidence."""
    p, m = idx.shape
    if weight <= 0.0:
        return np.full(p, -np.inf)
    gram = sigma[idx[:, :, None], idx[:, None, :]]
    tau = EVIDENCE_JITTER_REL * np.trace(gram, axis1=1, axis2=2) / m
    gram = gram + tau[:, None, None] * np.eye(m)
    r = ys - component.mean[idx]
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        out = np.full(p, -np.inf)
        for i in range(p):
            try:
                chol_i = np.linalg.cholesky(gram[i])
            except np.linalg.LinAlgError:
                continue
            logdet_i = 2.0 * float(np.sum(np.log(np.diag(chol_i))))
            quad_i = float(r[i] @ np.linalg.solve(gram[i], r[i]))
            out[i] = math.log(weight) - 0.5 * (m * _LOG_2PI + logdet_i + quad_i)
        return out
    logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
    w = np.linalg.solve(gram, r[..., None])[..., 0]
    quad = np.einsum("pm,pm->p", r, w)
    return math.log(weight) - 0.5 * (m * _LOG_2PI + logdet + quad)


def _batched_gather_decode(
    component, idx: np.ndarray, ys: np.ndarray
) -> np.ndarray:
    """MAP decode of subsampled measurements via index gathers, with the
    decoder's on-demand jitter policy."""
    p, m = idx.shape
    sigma = component.covariance
    mu = component.mean
    gram = sigma[idx[:, :, None], idx[:, None, :]]
    eigs = np.linalg.eigvalsh(gram)
    emin, emax = eigs[:, 0], eigs[:, -1]
    bad = (emin <= 0) | (emax > CONDITION_LIMIT * emin)
    if np.any(bad):
        tau = JITTER_REL * np.trace(gram, axis1=1, axis2=2) / m
        gram = gram + np.where(bad, tau, 0.0)[:, None, None] * np.eye(m)
    r = ys - mu[idx]
    w = np.linalg.solve(gram, r[..., None])[..., 0]
    cross = np.moveaxis(sigma[:, idx], 1, 0)
    return mu + np.einsum("pnm,pm->pn", cross, w)


def _decode_subsampled_patches(
    model: GmmModel, indices: list[np.ndarray], values: list[np.ndarray]
) -> np.ndarray:
    """Select a component and decode for each pixel-subsampled patch.

    Patches are grouped by measurement count and processed in chunks.
    Full-coverage patches scatter their pixels back exactly and skip
    selection (the decode does not depend on the component); empty patches
    take the highest-weight component's mean.
    """
    n = model.patch_dim
    count = len(indices)
    estimates = np.empty((count, n))
    by_size: dict[int, list[int]] = {}
    for i, idx in enumerate(indices):
        by_size.setdefault(len(idx), []).append(i)
    prior_mean = model.prior_mean()
    top_component = int(np.argmax(model.weights))
    for m, members in by_size.items():
        if m == 0:
            estimates[members] = model.components[top_component].mean
            continue
        if m == n:
            for i in members:
                estimates[i][indices[i]] = values[i]
            continue
        for pos in range(0, len(members), _DECODE_CHUNK):
            chunk = members[pos : pos + _DECODE_CHUNK]
            idx = np.stack([indices[i] for i in chunk])
            ys = np.stack([values[i] for i in chunk])
            evidence = np.stack(
                [
                    _batched_gather_evidence(
                        comp, float(model.weights[k]), comp.covariance, idx, ys
                    )
                    for k, comp in enumerate(model.components)
                ],
                axis=1,
            )
            flagged = ~np.any(np.isfinite(evidence), axis=1)
            assignments = np.argmax(evidence, axis=1)
            decoded = np.empty((len(chunk), n))
            for k in np.unique(assignments):
                mask = assignments == k
                decoded[mask] = _batched_gather_decode(
                    model.components[k], idx[mask], ys[mask]
                )
            decoded[flagged] = prior_mean
            estimates[chunk] = decoded
    return estimates


def _sensing_offsets(width: int, height: int, patch_side: int) -> np.ndarray:
    row_starts = _starts(height, patch_side, patch_side)
    col_starts = _starts(width, patch_side, patch_side)
    return np.array([(r, c) for r in row_starts for c in col_starts], dtype=int)


def reconstruct_image(
    measurements,
    width: int,
    height: int,
    patch_side: int,
    stride: int,
    n_components: int,
    iters: int,
    rng: SeededRng,
    regularization: float | None = None,
) -> tuple[GrayImage, EmTrace]:
    """Learn the mixture from the measurements, decode, and reassemble.

    Measurements must come from non-overlapped sensing (stride equal to
    patch_side). With stride == patch_side the EM reconstructions tile the
    image directly. A smaller stride requests overlapped reconstruction,
    which requires pixel-subsampling operators: the sensed pixels are
    regrouped per sliding patch, each sliding patch is selected + decoded
    under the learned mixture, and overlaps are averaged. Pixels are
    clamped to [0, 255] at the end.
    """
    if not measurements:
        raise ValueError("measurements must be non-empty")
    if not 1 <= stride <= patch_side:
        raise ValueError("need 1 <= stride <= patch_side")
    n = patch_side * patch_side
    offsets = _sensing_offsets(width, height, patch_side)
    if len(offsets) != len(measurements):
        raise ValueError(
            f"geometry mismatch: {len(offsets)} sensing positions for "
            f"{len(measurements)} measurements"
        )
    estimates, _, model, trace = map_em_decode(
        measurements, n_components, iters, regularization, rng
    )
    if stride == patch_side:
        sums, counts = _accumulate(patch_side, offsets, estimates, width, height)
        if np.any(counts == 0):
            raise CoverageError("sensing grid does not cover the image")
        pixels = np.clip(sums / counts, 0.0, 255.0)
        return GrayImage(width=width, height=height, pixels=pixels), trace

    if any(meas.phi.kind != "subsample" for meas in measurements):
        raise ValueError(
            "overlapped reconstruction requires pixel-subsampling measurements"
        )
    sensed_mask = np.zeros((height, width), dtype=bool)
    sensed_values = np.zeros((height, width))
    for meas, (r0, c0) in zip(measurements, offsets):
        cols = subsample_columns(meas.phi)
        rr = r0 + cols // patch_side
        cc = c0 + cols % patch_side
        sensed_mask[rr, cc] = True
        sensed_values[rr, cc] = meas.y
    row_starts = _starts(height, patch_side, stride)
    col_starts = _starts(width, patch_side, stride)
    sliding_offsets = []
    indices = []
    values = []
    for r0 in row_starts:
        for c0 in col_starts:
            window_mask = sensed_mask[r0 : r0 + patch_side, c0 : c0 + patch_side]
            local = np.flatnonzero(window_mask.reshape(-1))
            sliding_offsets.append((r0, c0))
            indices.append(local)
            values.append(
                sensed_values[r0 : r0 + patch_side, c0 : c0 + patch_side].reshape(-1)[
                    local
                ]
            )
    decoded = _decode_subsampled_patches(model, indices, values)
    sums, counts = _accumulate(
        patch_side, np.array(sliding_offsets, dtype=int), decoded, width, height
    )
    if np.any(counts == 0):
        raise CoverageError("sliding grid does not cover the image")
    pixels = sums / counts
    # Sensed pixels are known exactly in the noiseless model; every decode
    # covering one already pins it there, so publish the measured value.
    pixels[sensed_mask] = sensed_values[sensed_mask]
    pixels = np.clip(pixels, 0.0, 255.0)
    return GrayImage(width=width, height=height, pixels=pixels), trace


def write_measurements_jsonl(path, measurements, meta: dict) -> None:
    """One JSON object per line: a metadata header, then one measurement
    per line. Subsampling operators store their selected columns; other
    kinds store dense row-major entries."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"type": "meta", **meta}, sort_keys=True) + "\n")
        for meas in measurements:
            if meas.phi.kind == "subsample":
                phi_obj = {
                    "rows": meas.phi.rows,
                    "cols": meas.phi.cols,
                    "kind": "subsample",
                    "columns": [int(c) for c in subsample_columns(meas.phi)],
                }
            else:
                phi_obj = meas.phi.to_json_dict()
            record = {
                "patch_index": meas.patch_index,
                "y": [float(v) for v in meas.y],
                "phi": phi_obj,
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_measurements_jsonl(path) -> tuple[dict, list[PatchMeasurement]]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line for line in fh.read().splitlines() if line.strip()]
    if not lines:
        raise ValueError(f"{path} is empty")
    meta = json.loads(lines[0])
    if meta.get("type") != "meta":
        raise ValueError("first line must be the metadata header")
    measurements = []
    for line in lines[1:]:
        record = json.loads(line)
        phi_obj = record["phi"]
        if "columns" in phi_obj:
            m, n = int(phi_obj["rows"]), int(phi_obj["cols"])
            entries = np.zeros((m, n))
            entries[np.arange(m), np.asarray(phi_obj["columns"], dtype=int)] = 1.0
            phi = SensingMatrix(rows=m, cols=n, entries=entries, kind="subsample")
        else:
            phi = SensingMatrix.from_json_dict(phi_obj)
        measurements.append(
            PatchMeasurement(
                y=np.asarray(record["y"], dtype=float),
                phi=phi,
                patch_index=int(record["patch_index"]),
            )
        )
    return meta, measurements
