"""Benchmark the compiled kernels against the pure-NumPy fallback.

Times the per-op kernels and a full fusion-head training step at desk
scale (the synthetic benchmark's shapes) and at encoder scale (CLIP-like
widths). Run:

    python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from conceptcil import autodiff, fusion, kernels


def timeit(fn, min_seconds=0.2):
    fn()  # warm up
    n = 0
    started = time.perf_counter()
    while True:
        fn()
        n += 1
        elapsed = time.perf_counter() - started
        if elapsed >= min_seconds:
            return elapsed / n * 1e6  # microseconds per call


def op_cases(batch, dim, n_concepts, n_classes, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(batch, dim))
    gain = np.ones(dim)
    shift = np.zeros(dim)
    g = rng.normal(size=(batch, dim))
    scores = rng.normal(size=(batch, n_concepts))
    probs = kernels.softmax_rows(scores)
    logits = rng.normal(size=(batch, n_classes))
    labels = rng.integers(0, n_classes, size=batch)
    value = rng.normal(size=dim * dim)
    grad = rng.normal(size=dim * dim)
    m = np.zeros(dim * dim)
    v = np.zeros(dim * dim)

    ln_cache = kernels.layernorm_forward(x, gain, shift, 1e-5)
    return {
        "layernorm_fwd": lambda: kernels.layernorm_forward(x, gain, shift, 1e-5),
        "layernorm_bwd": lambda: kernels.layernorm_backward(g, ln_cache[1], ln_cache[2], gain),
        "softmax_fwd": lambda: kernels.softmax_rows(scores),
        "softmax_bwd": lambda: kernels.softmax_backward(probs, probs),
        "cross_entropy": lambda: kernels.cross_entropy(logits, labels),
        "adamw_update": lambda: kernels.adamw_update(
            value, grad, m, v, 5, 1e-3, 0.9, 0.999, 1e-8, 1e-4
        ),
    }


def training_step_case(batch, dim, n_concepts, n_classes, seed=0):
    rng = np.random.default_rng(seed)
    params = fusion.FusionParams.init(dim, seed)
    fusion.expand_classes(params, n_classes, rng)
    z = rng.normal(size=(batch, dim))
    h = rng.normal(size=(n_concepts, dim))
    labels = rng.integers(0, n_classes, size=batch)
    sets = [np.sort(rng.choice(n_concepts, size=3, replace=False)) for _ in range(batch)]
    optimizer = autodiff.AdamW(params.trainable())

    def step():
        optimizer.zero_grad()
        trace = fusion.forward(params, z, h)
        fusion.composite_loss(params, trace, labels, sets, 0.8, 0.6)
        optimizer.step(1e-3)

    return step


def run_scale(tag, batch, dim, n_concepts, n_classes):
    print(f"\n== {tag}: batch={batch} dim={dim} concepts={n_concepts} classes={n_classes} ==")
    rows = []
    for name in op_cases(batch, dim, n_concepts, n_classes):
        per_backend = {}
        for backend in kernels.available_backends():
            kernels.set_backend(backend)
            per_backend[backend] = timeit(op_cases(batch, dim, n_concepts, n_classes)[name])
        rows.append((name, per_backend))
    step_row = {}
    for backend in kernels.available_backends():
        kernels.set_backend(backend)
        step_row[backend] = timeit(training_step_case(batch, dim, n_concepts, n_classes), min_seconds=0.5)
    rows.append(("training_step", step_row))

    header = f"{'kernel':<16}" + "".join(f"{b + ' (us)':>14}" for b in kernels.available_backends())
    if len(kernels.available_backends()) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for name, per_backend in rows:
        line = f"{name:<16}" + "".join(
            f"{per_backend[b]:>14.2f}" for b in kernels.available_backends()
        )
        if "python" in per_backend and "cython" in per_backend:
            line += f"{per_backend['python'] / per_backend['cython']:>9.2f}x"
        print(line)


def main():
    print(f"built backends: {kernels.available_backends()}")
    run_scale("desk scale (synthetic benchmark)", batch=36, dim=32, n_concepts=30, n_classes=10)
    run_scale("encoder scale (CLIP-like)", batch=32, dim=512, n_concepts=120, n_classes=40)


if __name__ == "__main__":
    main()
