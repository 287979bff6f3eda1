#!/usr/bin/env python3
"""Reference log-Mel / MFCC fixtures, computed independently of the C++ code.

The filterbank weight of bin k is the average of the HTK-mel triangle over the
bin's frequency interval [f_k - df/2, f_k + df/2], evaluated here by dense
midpoint quadrature rather than in closed form. DCT comes from scipy.

Run from this directory:  python3 make_golden.py
"""
import json

import numpy as np
from scipy.fft import dct

SR = 16000
FRAME, HOP, NFFT = 400, 160, 512
NMELS, FMIN, FMAX = 128, 0.0, 8000.0
FLOOR = 1e-10
NMFCC = 13
TARGET = 50
QUAD = 4000


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + f / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (m / 2595.0) - 1.0)


def filterbank():
    edges = mel_to_hz(np.linspace(hz_to_mel(FMIN), hz_to_mel(FMAX), NMELS + 2))
    df = SR / NFFT
    nbins = NFFT // 2 + 1
    offs = (np.arange(QUAD) + 0.5) / QUAD - 0.5  # midpoints across one bin
    freqs = (np.arange(nbins)[:, None] + offs[None, :]) * df
    fb = np.zeros((NMELS, nbins))
    for m in range(NMELS):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        tri = np.clip(np.minimum((freqs - lo) / (mid - lo), (hi - freqs) / (hi - mid)), 0.0, None)
        fb[m] = tri.mean(axis=1)
    return fb


def features(x, fb):
    x = (x - x.mean()) / x.std()  # conditioning, population std
    n = 1 + (len(x) - FRAME) // HOP
    win = 0.54 - 0.46 * np.cos(2 * np.pi * np.arange(FRAME) / (FRAME - 1))
    frames = np.stack([x[t * HOP:t * HOP + FRAME] * win for t in range(n)], axis=1)
    power = np.abs(np.fft.rfft(frames, n=NFFT, axis=0)) ** 2
    raw = np.log(np.maximum(fb @ power, FLOOR))
    c = dct(raw, type=2, norm="ortho", axis=0)[:NMFCC]
    stats = np.concatenate([c.mean(axis=1), c.std(axis=1)])
    z = (raw - raw.mean()) / raw.std()
    t = z.shape[1]
    if t >= TARGET:
        s = (t - TARGET) // 2
        z = z[:, s:s + TARGET]
    else:
        z = np.concatenate([z, np.full((NMELS, TARGET - t), z.min())], axis=1)
    return raw, z, stats


def signals():
    rng = np.random.default_rng(20240601)
    t = np.arange(int(0.6 * SR)) / SR
    chirp = 0.3 * np.sin(2 * np.pi * (100 * t + 0.5 * (4000 - 100) / 0.6 * t ** 2))
    chirp += 0.02 * rng.standard_normal(len(t))
    t2 = np.arange(int(0.45 * SR)) / SR
    tones = 0.4 * np.sin(2 * np.pi * 300 * t2) + 0.1 * np.sin(2 * np.pi * 2500 * t2 + 0.3)
    voiced = np.zeros(int(0.5 * SR))
    t3 = np.arange(len(voiced)) / SR
    for k in range(1, 30):
        voiced += k ** -1.2 * np.sin(2 * np.pi * 150 * k * t3 + k)
    voiced *= 0.2 * (1.0 + 0.5 * np.sin(2 * np.pi * 3 * t3))
    voiced += 0.01 * rng.standard_normal(len(voiced))
    return {"chirp": chirp, "two_tone": tones, "harmonic": voiced}


def main():
    fb = filterbank()
    for name, x in signals().items():
        raw, z, stats = features(x, fb)
        doc = {
            "sample_rate": SR,
            "target_frames": TARGET,
            "n_mfcc": NMFCC,
            "signal": [float(v) for v in x],
            "raw_log_mel": {"rows": raw.shape[0], "cols": raw.shape[1], "data": [float(v) for v in raw.ravel()]},
            "log_mel": {"rows": z.shape[0], "cols": z.shape[1], "data": [float(v) for v in z.ravel()]},
            "mfcc_stats": [float(v) for v in stats],
        }
        with open(f"{name}.json", "w") as f:
            json.dump(doc, f)
        print(name, raw.shape, z.shape)


if __name__ == "__main__":
    main()
