"""Time the numpy and numba kernel backends, plus one end-to-end encoder step.

    python benchmarks/bench_kernels.py [--repeat 20] [--batch 32] [--seq 64] [--hidden 64]
"""

import argparse
import timeit

import numpy as np

from absapair import kernels
from absapair.encoder import EncoderConfig, encoder_backward, forward_with_cache, init_params
from absapair.input_repr import InputBatch


def make_inputs(rng, b, t, h, a):
    x = rng.normal(size=(b, t, h)).astype(np.float32)
    scores = rng.normal(size=(b, a, t, t)).astype(np.float32)
    mask = (np.arange(t)[None, :] < rng.integers(t // 2, t + 1, b)[:, None]).astype(np.int8)
    gamma = np.ones(h, np.float32)
    beta = np.zeros(h, np.float32)
    return x, scores, mask, gamma, beta


def kernel_cases(x, scores, mask, gamma, beta):
    _, xhat, rstd = kernels.layer_norm(x, gamma, beta)
    p = kernels.masked_softmax(scores, mask)
    return {
        "gelu": lambda: kernels.gelu(x),
        "gelu_backward": lambda: kernels.gelu_backward(x, x),
        "layer_norm": lambda: kernels.layer_norm(x, gamma, beta),
        "layer_norm_backward": lambda: kernels.layer_norm_backward(x, xhat, rstd, gamma),
        "masked_softmax": lambda: kernels.masked_softmax(scores, mask),
        "softmax_backward": lambda: kernels.softmax_backward(p, scores),
    }


def encoder_case(rng, b, t, h, a):
    config = EncoderConfig(2, h, a, max_positions=t, vocab_size=200)
    params = init_params(config, 0)
    ids = rng.integers(5, 200, (b, t))
    mask = np.ones((b, t), np.int8)
    batch = InputBatch(ids, np.zeros_like(ids), mask)

    def step():
        hidden, cls, cache = forward_with_cache(batch, params, config)
        encoder_backward(cache, params, config, d_hidden=np.ones_like(hidden), d_cls=np.ones_like(cls))

    return step


def time_backend(name, args):
    kernels.use(name)
    rng = np.random.default_rng(0)
    inputs = make_inputs(rng, args.batch, args.seq, args.hidden, args.heads)
    cases = kernel_cases(*inputs)
    cases["encoder fwd+bwd"] = encoder_case(rng, args.batch, args.seq, args.hidden, args.heads)
    out = {}
    for label, fn in cases.items():
        fn()  # warm-up, triggers JIT compilation
        out[label] = min(timeit.repeat(fn, number=1, repeat=args.repeat))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--seq", type=int, default=64)
    ap.add_argument("--hidden", type=int, default=64)
    ap.add_argument("--heads", type=int, default=4)
    args = ap.parse_args()

    backends = ["numpy"] + (["numba"] if kernels.numba_kernels is not None else [])
    results = {b: time_backend(b, args) for b in backends}
    print(f"batch={args.batch} seq={args.seq} hidden={args.hidden} heads={args.heads}, best of {args.repeat}")
    print(f"{'kernel':<22}" + "".join(f"{b + ' (ms)':>14}" for b in backends) + ("   speedup" if len(backends) > 1 else ""))
    for label in results["numpy"]:
        row = f"{label:<22}" + "".join(f"{results[b][label] * 1e3:>14.3f}" for b in backends)
        if len(backends) > 1:
            row += f"{results['numpy'][label] / results['numba'][label]:>9.2f}x"
        print(row)
    if len(backends) == 1:
        print("numba not installed; only the numpy backend was timed")


if __name__ == "__main__":
    main()
