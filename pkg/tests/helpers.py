"""Independent scalar oracles shared by several test modules."""
import math

import numpy as np
import torch


def gauss_window(size=11, sigma=1.5):
    c = (size - 1) / 2
    g = [math.exp(-((i - c) ** 2) / (2 * sigma * sigma)) for i in range(size)]
    s = sum(g)
    g = [v / s for v in g]
    return [[a * b for b in g] for a in g]


def ssim_scalar(a, b, size=11, sigma=1.5):
    """Mean SSIM over valid windows; ``a`` and ``b`` are nested lists [c][y][x]."""
    w = gauss_window(size, sigma)
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    for ca, cb in zip(a, b):
        h, wd = len(ca), len(ca[0])
        for y in range(h - size + 1):
            for x in range(wd - size + 1):
                ma = mb = saa = sbb = sab = 0.0
                for i in range(size):
                    for j in range(size):
                        k = w[i][j]
                        u, v = ca[y + i][x + j], cb[y + i][x + j]
                        ma += k * u
                        mb += k * v
                        saa += k * u * u
                        sbb += k * v * v
                        sab += k * u * v
                va, vb, cov = saa - ma * ma, sbb - mb * mb, sab - ma * mb
                vals.append(((2 * ma * mb + c1) * (2 * cov + c2))
                            / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return sum(vals) / len(vals)


def psnr_scalar(a, b):
    """``a``, ``b`` are flat sequences of floats in [0, 1]."""
    se = 0.0
    for u, v in zip(a, b):
        se += (float(u) - float(v)) ** 2
    mse = se / len(a)
    return 100.0 if mse == 0 else min(100.0, 10 * math.log10(1 / mse))


def fd_check(f, params, n_probe=12, eps=1e-4, seed=0):
    """Relative error between autograd and central differences of scalar ``f``.

    Probes up to ``n_probe`` random coordinates of each tensor in ``params``
    (float64, requires_grad). Returns the norm-wise relative error.
    """
    out = f()
    grads = torch.autograd.grad(out, params, allow_unused=True)
    gen = torch.Generator().manual_seed(seed)
    ga, gf = [], []
    with torch.no_grad():
        for p, g in zip(params, grads):
            g = torch.zeros_like(p) if g is None else g
            flat = p.view(-1)
            idx = torch.randperm(flat.numel(), generator=gen)[:n_probe]
            for i in idx.tolist():
                old = flat[i].item()
                flat[i] = old + eps
                up = f().item()
                flat[i] = old - eps
                down = f().item()
                flat[i] = old
                gf.append((up - down) / (2 * eps))
                ga.append(g.reshape(-1)[i].item())
    ga, gf = np.array(ga), np.array(gf)
    scale = max(np.linalg.norm(gf), np.linalg.norm(ga), 1e-12)
    return float(np.linalg.norm(ga - gf) / scale)
