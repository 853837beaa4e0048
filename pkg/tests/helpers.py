"""Shared test utilities: gradient checks and independent oracles."""

from __future__ import annotations

import copy
import json
import random
import re

import numpy as np
import torch
from scipy.special import comb
from scipy.stats import chisquare

from transnar.lm import sample_positions
from transnar.tasks import generate_instance
from transnar.text import render_text


def fd_gradient_check(loss_fn, params: dict[str, torch.Tensor], coords: int = 100, eps: float = 1e-5,
                      floor: float = 1e-4, analytic: dict[str, torch.Tensor] | None = None, seed: int = 0) -> float:
    """Largest relative error between autograd and central differences.

    ``coords`` scalar coordinates are sampled uniformly across ``params``.
    The error is |a - n| / max(|a|, |n|, floor); the floor keeps coordinates
    whose gradient is below the finite-difference noise from dominating.
    ``analytic`` substitutes gradients computed elsewhere (e.g. in float32).
    """
    names = list(params)
    sizes = np.array([params[n].numel() for n in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    flat = rng.choice(int(sizes.sum()), size=min(coords, int(sizes.sum())), replace=False)

    if analytic is None:
        for p in params.values():
            p.grad = None
        loss_fn().backward()
        analytic = {n: p.grad for n, p in params.items()}
    worst = 0.0
    for f in flat:
        i = int(np.searchsorted(offsets, f, side="right") - 1)
        p = params[names[i]]
        j = int(f - offsets[i])
        a = analytic[names[i]].reshape(-1)[j].item()
        with torch.no_grad():
            view = p.data.view(-1)
            orig = view[j].item()
            view[j] = orig + eps
            up = loss_fn().item()
            view[j] = orig - eps
            down = loss_fn().item()
            view[j] = orig
        n = (up - down) / (2 * eps)
        worst = max(worst, abs(a - n) / max(abs(a), abs(n), floor))
    return worst


def float32_gradient_check(module: torch.nn.Module, loss_of, coords: int = 100, **kw) -> float:
    """Check float32 autograd gradients against float64 central differences.

    ``loss_of(m)`` builds the scalar loss for module ``m`` in that module's dtype.
    """
    module = module.float()
    for p in module.parameters():
        p.grad = None
    loss_of(module).backward()
    grads = {n: p.grad.double() for n, p in module.named_parameters() if p.requires_grad}
    ref = copy.deepcopy(module).double()
    params = {n: p for n, p in ref.named_parameters() if p.requires_grad}
    return fd_gradient_check(lambda: loss_of(ref), params, coords, analytic=grads, **kw)


def trainable(module: torch.nn.Module) -> dict[str, torch.Tensor]:
    return {n: p for n, p in module.named_parameters() if p.requires_grad}


def brute_force_clrs(pred_text: str, instance) -> float:
    """Elementwise comparison written without the library's parser or numpy."""
    truth = np.asarray(instance.output).tolist()
    is_float = instance.algorithm.value in ("insertion_sort",)
    text = " ".join(pred_text.split())
    if not text or any(c.isalpha() for c in text):
        return 0.0

    def flatten(x):
        return [v for row in x for v in flatten(row)] if isinstance(x, list) else [x]

    try:
        text = re.sub(r"\s*,\s*", ",", text.replace("[ ", "[").replace(" ]", "]"))
        pred = json.loads(re.sub(r"\s+", ",", text))
    except json.JSONDecodeError:
        return 0.0

    def dims(x):
        return [len(x)] + dims(x[0]) if isinstance(x, list) and x else ([0] if isinstance(x, list) else [])

    if dims(pred) != dims(truth):
        return 0.0
    p, t = flatten(pred), flatten(truth)
    if not is_float and any(isinstance(v, float) for v in p):
        return 0.0
    # compare floats in integer thousandths to stay clear of binary rounding
    hits = sum((abs(round(a * 1000) - round(b * 1000)) <= 1) if is_float else (a == b) for a, b in zip(p, t))
    return hits / len(t)


def _perturb(text: str, rng: random.Random) -> str:
    nums = text.replace("[", " [ ").replace("]", " ] ").split()
    out = []
    for tok in nums:
        if tok in "[]," or rng.random() > 0.3:
            out.append(tok)
        elif "." in tok:
            out.append(f"{round(float(tok) + rng.choice([0.001, 0.002, -0.004]), 3):g}")
        else:
            out.append(str(abs(int(tok.rstrip(","))) + rng.choice([1, 0])) + ("," if tok.endswith(",") else ""))
    joined = " ".join(out).replace("[ ", "[").replace(" ]", "]")
    r = rng.random()
    if r < 0.05:
        joined = joined.replace("]", " 1]", 1)
    elif r < 0.08:
        joined = joined[:-2]
    return joined


def synthetic_pairs(count: int = 1000, seed: int = 0):
    rng = random.Random(seed)
    algs = ["insertion_sort", "task_scheduling", "jarvis_march", "articulation_points", "binary_search",
            "kmp_matcher", "matrix_chain_order"]
    for i in range(count):
        inst = generate_instance(algs[i % len(algs)], rng.randint(2, 8), i)
        yield _perturb(render_text(inst).target, rng), inst


def first_position_marginal(seq_len: int, max_len: int) -> np.ndarray:
    """P(min = j) for a uniform seq_len-subset of range(max_len), by counting subsets."""
    counts = np.array([comb(max_len - 1 - j, seq_len - 1, exact=True) for j in range(max_len)], dtype=float)
    assert counts.sum() == comb(max_len, seq_len, exact=True)
    return counts / counts.sum()


def chi2_first_position(draws: int = 10_000, seq_len: int = 8, max_len: int = 64, seed: int = 0):
    rng = np.random.default_rng(seed)
    firsts = np.array([sample_positions(seq_len, max_len, rng)[0] for _ in range(draws)])
    expected = first_position_marginal(seq_len, max_len) * draws
    observed = np.bincount(firsts, minlength=max_len).astype(float)
    # pool the sparse tail so every bin expects at least 5 draws
    cut = int(np.argmax(expected[::-1].cumsum()[::-1] < 5)) or max_len
    obs = np.append(observed[: cut - 1], observed[cut - 1 :].sum())
    exp = np.append(expected[: cut - 1], expected[cut - 1 :].sum())
    return chisquare(obs, exp).pvalue
