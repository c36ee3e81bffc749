"""Deterministic synthetic 512x512 grayscale test scene.

The scene mixes smooth shading, oriented sharp-edged shapes, two grating
bands, and band-limited stochastic texture, so patch statistics resemble
a natural photograph's. Running this script rewrites scene512.pgm in
place; the file is checked in so tests never depend on regeneration.
"""

from pathlib import Path

import numpy as np

SEED = 20260810
SIZE = 512


def build_scene() -> np.ndarray:
    gen = np.random.default_rng(SEED)
    yy, xx = np.mgrid[0:SIZE, 0:SIZE].astype(float)

    img = (
        110
        + 55 * np.sin(2 * np.pi * xx / 700 + 0.7) * np.cos(2 * np.pi * yy / 520)
        + 35 * (xx + 0.6 * yy) / (SIZE + 0.6 * SIZE)
    )

    def ellipse(cx, cy, rx, ry, ang, level):
        ca, sa = np.cos(ang), np.sin(ang)
        u = (xx - cx) * ca + (yy - cy) * sa
        v = -(xx - cx) * sa + (yy - cy) * ca
        return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0, level

    def rect(cx, cy, hx, hy, ang, level):
        ca, sa = np.cos(ang), np.sin(ang)
        u = (xx - cx) * ca + (yy - cy) * sa
        v = -(xx - cx) * sa + (yy - cy) * ca
        return (np.abs(u) <= hx) & (np.abs(v) <= hy), level

    shapes = [
        ellipse(140, 120, 90, 55, 0.5, 195),
        ellipse(380, 150, 60, 95, -0.3, 70),
        rect(120, 380, 85, 50, 0.25, 45),
        rect(360, 400, 95, 38, -0.6, 160),
        ellipse(260, 270, 42, 42, 0.0, 230),
        rect(450, 280, 28, 90, 1.1, 105),
    ]
    for mask, level in shapes:
        img[mask] = level + 0.15 * (img[mask] - 128)

    band = yy > 440
    img[band] += 18.0 * np.sin(
        2 * np.pi * (xx[band] * np.cos(0.3) + yy[band] * np.sin(0.3)) / 11.0
    )
    band = xx > 455
    img[band] += 14.4 * np.sin(
        2 * np.pi * (xx[band] * np.cos(1.25) + yy[band] * np.sin(1.25)) / 8.0
    )

    noise = gen.standard_normal((SIZE, SIZE))
    kernel = np.exp(-0.5 * (np.arange(-6, 7) / 1.4) ** 2)
    kernel /= kernel.sum()
    smooth = np.apply_along_axis(lambda r: np.convolve(r, kernel, mode="same"), 1, noise)
    smooth = np.apply_along_axis(lambda c: np.convolve(c, kernel, mode="same"), 0, smooth)
    img += smooth * (6.0 / smooth.std())

    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def main() -> None:
    pixels = build_scene()
    header = f"P5\n{SIZE} {SIZE}\n255\n".encode("ascii")
    out = Path(__file__).parent / "scene512.pgm"
    out.write_bytes(header + pixels.tobytes())
    print(f"wrote {out} ({out.stat().st_size} bytes)")


if __name__ == "__main__":
    main()
