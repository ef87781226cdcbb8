"""Independent reference implementations used to cross-check production code.

Everything here is deliberately naive — nested loops, straight-line
compositions, direct formulas — in double precision, and shares no
numerical kernel with the production modules.  The suite compares both
sides on fixed seeds and reports deviations.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import blocks as _blocks
from . import metrics as _metrics
from . import model as _model
from . import optim as _optim
from . import tensor as _tensor
from .data import Image

__all__ = [
    "OracleReport",
    "run_oracle_suite",
    "ORACLE_HEADER",
    "conv2d_reference",
    "pixel_shuffle_reference",
    "mdcb_reference",
    "model_reference",
    "adam_reference",
    "psnr_reference",
    "ssim_reference",
    "rmse_reference",
    "checkpoint_size_reference",
    "param_count_reference",
    "finite_difference_gradient",
]

ORACLE_HEADER = ("case", "production", "oracle", "deviation", "tolerance", "pass")


@dataclass
class OracleReport:
    case: str
    production: float
    oracle: float
    deviation: float
    tolerance: float
    passed: bool


# ---------------------------------------------------------------------------
# Reference kernels (loops and straight-line numpy, double precision)
# ---------------------------------------------------------------------------


def conv2d_reference(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Quadruple-nested-loop convolution, stride 1, same-size zero padding."""
    n, c, h, wd = x.shape
    oc, ic, k, _ = w.shape
    p = (k - 1) // 2
    out = np.zeros((n, oc, h, wd), dtype=np.float64)
    for bi in range(n):
        for o in range(oc):
            for y in range(h):
                for xx in range(wd):
                    acc = float(b.reshape(oc)[o])
                    for i in range(ic):
                        for dy in range(k):
                            for dx in range(k):
                                yy = y + dy - p
                                xc = xx + dx - p
                                if 0 <= yy < h and 0 <= xc < wd:
                                    acc += x[bi, i, yy, xc] * w[o, i, dy, dx]
                    out[bi, o, y, xx] = acc
    return out


def pixel_shuffle_reference(x: np.ndarray, r: int) -> np.ndarray:
    """Index-by-index sub-pixel rearrangement."""
    n, c, h, w = x.shape
    oc = c // (r * r)
    out = np.zeros((n, oc, h * r, w * r), dtype=np.float64)
    for bi in range(n):
        for co in range(oc):
            for y in range(h):
                for xx in range(w):
                    for dy in range(r):
                        for dx in range(r):
                            out[bi, co, r * y + dy, r * xx + dx] = x[
                                bi, co * r * r + dy * r + dx, y, xx
                            ]
    return out


def _relu_ref(a):
    return np.maximum(a, 0.0)


def _sigmoid_ref(a):
    return 1.0 / (1.0 + np.exp(-a))


def _conv_of(store, name, x):
    w = store[name + ".w"].data.astype(np.float64)
    b = store[name + ".b"].data.astype(np.float64)
    return conv2d_reference(x, w, b)


def mdcb_reference(x: np.ndarray, store, prefix: str, fefm: bool, residual: bool) -> np.ndarray:
    """Straight-line dual-path block: first stages, exchanged fusions, shared tail."""
    l22 = _relu_ref(_conv_of(store, f"{prefix}.top1", x))
    h22 = _relu_ref(_conv_of(store, f"{prefix}.bot1", x))
    top_in = np.concatenate([x, l22, h22] if fefm else [x, l22], axis=1)
    l33 = _relu_ref(_conv_of(store, f"{prefix}.top2", _conv_of(store, f"{prefix}.top_fuse", top_in)))
    bot_in = np.concatenate([x, h22, l22] if fefm else [x, h22], axis=1)
    h33 = _relu_ref(_conv_of(store, f"{prefix}.bot2", _conv_of(store, f"{prefix}.bot_fuse", bot_in)))
    out = _conv_of(store, f"{prefix}.tail", np.concatenate([l22, l33, h22, h33, x], axis=1))
    return out + x if residual else out


def cam_reference(x: np.ndarray, store, prefix: str) -> np.ndarray:
    """Squeeze, two-layer gate, rescale; mean taken with explicit loops."""
    n, c, h, w = x.shape
    z = np.zeros((n, c, 1, 1), dtype=np.float64)
    for bi in range(n):
        for ci in range(c):
            acc = 0.0
            for y in range(h):
                for xx in range(w):
                    acc += x[bi, ci, y, xx]
            z[bi, ci, 0, 0] = acc / (h * w)
    s = _sigmoid_ref(_conv_of(store, f"{prefix}.up", _relu_ref(_conv_of(store, f"{prefix}.down", z))))
    return x * s


def hfdb_reference(feats, store) -> np.ndarray:
    cat = np.concatenate(feats, axis=1)
    reduced = _conv_of(store, "hfdb.head", cat)
    attended = cam_reference(reduced, store, "hfdb.cam")
    return _conv_of(store, "hfdb.tail", attended)


def model_reference(x: np.ndarray, store, factor: int) -> np.ndarray:
    """Straight-line composition of the whole pipeline from reference kernels."""
    cfg = store.config
    l_input = _conv_of(store, "input", x)
    feats = []
    cur = l_input
    for i in range(1, cfg.n_blocks + 1):
        cur = mdcb_reference(cur, store, f"block{i:02d}", cfg.fefm, cfg.residual)
        feats.append(cur)
    l_output = feats[-1]
    if cfg.hierarchy == "HFDB":
        l_dis = hfdb_reference(feats[:-1], store)
        mixed = l_input + l_dis + l_output
    elif cfg.hierarchy == "A":
        mixed = l_input + l_output
    else:
        raise ValueError(f"reference pipeline covers A and HFDB, not {cfg.hierarchy}")
    l_mix = _conv_of(store, "mix", mixed)
    cur = l_mix
    if factor == 4:
        cur = pixel_shuffle_reference(_conv_of(store, "head4.up1", cur), 2)
        cur = pixel_shuffle_reference(_conv_of(store, "head4.up2", cur), 2)
    else:
        cur = pixel_shuffle_reference(_conv_of(store, f"head{factor}.up1", cur), factor)
    return _conv_of(store, "output", cur)


def adam_reference(grads, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8, theta0: float = 0.0):
    """Hand-rolled scalar update rule: returns the value after each step."""
    theta = float(theta0)
    m = v = 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        theta -= lr * m_hat / (math.sqrt(v_hat) + eps)
        out.append(theta)
    return out


def _luma_ref(pixels: np.ndarray) -> np.ndarray:
    h, w, _ = pixels.shape
    out = np.zeros((h, w), dtype=np.float64)
    for y in range(h):
        for x in range(w):
            r, g, b = (float(pixels[y, x, i]) / 255.0 for i in range(3))
            out[y, x] = 16.0 + 65.481 * r + 128.553 * g + 24.966 * b
    return out


def _shave_ref(plane: np.ndarray, s: int) -> np.ndarray:
    return plane[s:-s, s:-s] if s > 0 else plane


def psnr_reference(a: Image, b: Image, factor: int) -> float:
    ya = _shave_ref(_luma_ref(a.pixels), factor)
    yb = _shave_ref(_luma_ref(b.pixels), factor)
    err = 0.0
    for y in range(ya.shape[0]):
        for x in range(ya.shape[1]):
            d = ya[y, x] - yb[y, x]
            err += d * d
    mse = err / ya.size
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0**2 / mse)


def rmse_reference(a: Image, b: Image, factor: int) -> float:
    ya = _shave_ref(_luma_ref(a.pixels), factor)
    yb = _shave_ref(_luma_ref(b.pixels), factor)
    err = 0.0
    for y in range(ya.shape[0]):
        for x in range(ya.shape[1]):
            d = ya[y, x] - yb[y, x]
            err += d * d
    return math.sqrt(err / ya.size)


def ssim_reference(a: Image, b: Image, factor: int) -> float:
    """Windowed formula evaluated position by position."""
    ya = _shave_ref(_luma_ref(a.pixels), factor)
    yb = _shave_ref(_luma_ref(b.pixels), factor)
    size, sigma = 11, 1.5
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g1 = np.exp(-(coords**2) / (2 * sigma * sigma))
    win = np.outer(g1, g1)
    win /= win.sum()
    c1 = (0.01 * 255.0) ** 2
    c2 = (0.03 * 255.0) ** 2
    h, w = ya.shape
    vals = []
    for y in range(h - size + 1):
        for x in range(w - size + 1):
            pa = ya[y : y + size, x : x + size]
            pb = yb[y : y + size, x : x + size]
            mu_a = float((win * pa).sum())
            mu_b = float((win * pb).sum())
            var_a = float((win * pa * pa).sum()) - mu_a * mu_a
            var_b = float((win * pb * pb).sum()) - mu_b * mu_b
            cov = float((win * pa * pb).sum()) - mu_a * mu_b
            vals.append(
                ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
            )
    return float(np.mean(vals))


def checkpoint_size_reference(store) -> int:
    """Byte size the checkpoint format should produce for this store."""
    cfg_bytes = len(json.dumps(store.config.to_dict(), sort_keys=True).encode("utf-8"))
    total = 4 + 4 + 4 + cfg_bytes + 4
    for name, t in store.items():
        total += 2 + len(name.encode("utf-8")) + 1 + 4 * 4 + 4 * t.numel
    return total


def param_count_reference(config) -> int:
    """Layer-inventory enumeration: sum of k*k*in*out + out over every layer."""
    c = config.channels

    def conv(in_c, out_c, k):
        return k * k * in_c * out_c + out_c

    total = conv(3, c, 3)  # input
    if config.block_kind == "mdcb":
        has_top = config.paths in ("both", "top")
        has_bot = config.paths in ("both", "bottom")
        dual = has_top and has_bot
        fuse_in = (3 * c if config.fefm else 2 * c) if dual else 2 * c
        tail_in = 5 * c if dual else 3 * c
        per_block = conv(tail_in, c, 1)
        if has_top:
            per_block += conv(c, c, 3) + conv(fuse_in, c, 1) + conv(c, c, 3)
        if has_bot:
            per_block += conv(c, c, 5) + conv(fuse_in, c, 1) + conv(c, c, 5)
    elif config.block_kind == "msrb":
        per_block = (
            conv(c, c, 3) + conv(c, c, 5)
            + conv(2 * c, 2 * c, 3) + conv(2 * c, 2 * c, 5)
            + conv(4 * c, c, 1)
        )
    else:
        per_block = 2 * conv(c, c, 3)
    total += config.n_blocks * per_block
    if config.hierarchy == "HFDB":
        m = (config.n_blocks - 1) * c
        inner = config.hfdb_inner
        cw = max(1, -(-inner // config.cam_reduction))
        total += conv(m, inner, 1) + conv(inner, cw, 1) + conv(cw, inner, 1) + conv(inner, c, 1)
    elif config.hierarchy == "D":
        total += conv((config.n_blocks - 1) * c, c, 1)
    total += conv(c, c, 3)  # mix
    for f in config.factors:
        if f == 4:
            total += 2 * conv(c, 4 * c, 1)
        else:
            total += conv(c, f * f * c, 1)
    total += conv(c, 3, 3)  # output
    return total


def finite_difference_gradient(f, arrays, index: int, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar f(arrays) w.r.t. arrays[index]."""
    base = [np.array(a, dtype=np.float64) for a in arrays]
    grad = np.zeros_like(base[index])
    it = np.nditer(base[index], flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        plus = [a.copy() for a in base]
        minus = [a.copy() for a in base]
        plus[index][idx] += step
        minus[index][idx] -= step
        grad[idx] = (f(plus) - f(minus)) / (2.0 * step)
        it.iternext()
    return grad


# ---------------------------------------------------------------------------
# The suite
# ---------------------------------------------------------------------------


def _report(case, produced, expected, tol, relative=False) -> OracleReport:
    produced = np.asarray(produced, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    diff = np.abs(produced - expected)
    if relative:
        denom = np.maximum.reduce([np.abs(produced), np.abs(expected),
                                   np.full_like(diff, 1e-8)])
        diff = diff / denom
    dev = float(diff.max()) if diff.size else 0.0
    at = np.unravel_index(int(np.argmax(diff)), diff.shape) if diff.size else ()
    return OracleReport(
        case=case,
        production=float(produced[at]) if produced.shape else float(produced),
        oracle=float(expected[at]) if expected.shape else float(expected),
        deviation=dev,
        tolerance=tol,
        passed=bool(dev <= tol),
    )


def _case_conv_loop() -> OracleReport:
    rng = np.random.default_rng(101)
    x = rng.normal(size=(1, 2, 4, 4))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=(1, 3, 1, 1))
    produced = _tensor.conv2d(
        _tensor.Tensor(x), _tensor.Tensor(w), _tensor.Tensor(b)
    ).data
    return _report("tensor/conv-loop", produced, conv2d_reference(x, w, b), 1e-6)


def _tiny_store(factors=(2,), n_blocks=2, channels=4, dtype=np.float64):
    cfg = _model.ModelConfig(
        n_blocks=n_blocks, channels=channels,
        hfdb_inner=max(2, channels // 2 - 1) if channels <= 8 else channels // 2,
        cam_reduction=2, factors=factors,
        block_kind="mdcb", hierarchy="HFDB", paths="both", fefm=True, residual=True,
    )
    return _model.build(cfg, seed=7, dtype=dtype)


def _case_mdcb_straight_line() -> OracleReport:
    store = _tiny_store()
    rng = np.random.default_rng(11)
    x = rng.normal(size=(1, 4, 4, 4))
    params = store.parts.blocks[0]
    produced = _blocks.mdcb_forward(_tensor.Tensor(x), params).data
    expected = mdcb_reference(x, store, "block01", fefm=True, residual=True)
    return _report("blocks/mdcb-straight-line", produced, expected, 1e-6)


def _case_model_straight_line() -> OracleReport:
    store = _tiny_store()
    rng = np.random.default_rng(12)
    x = rng.normal(size=(1, 3, 5, 4)) * 0.5
    produced = _model.forward(store, _tensor.Tensor(x), 2).data
    expected = model_reference(x, store, 2)
    return _report("model/straight-line", produced, expected, 1e-6)


def _case_adam_quadratic() -> OracleReport:
    # three steps on f(t) = 0.5 t^2 starting at theta = 1
    lr = 0.1
    theta = _tensor.Tensor(np.full((1, 1, 1, 1), 1.0, dtype=np.float64), requires_grad=True)
    cfg = _model.ModelConfig(n_blocks=1, channels=4, hfdb_inner=2, cam_reduction=2,
                             factors=(2,), hierarchy="A")
    store = _model.ParameterStore(cfg)
    store.add("theta", theta, "trunk")
    state = _optim.AdamState.for_store(store)
    produced = []
    grads = []
    for _ in range(3):
        g = theta.data.copy()  # d/dtheta of 0.5 theta^2
        grads.append(float(g.reshape(())))
        theta.grad = g
        _optim.adam_step(store, state, lr)
        produced.append(float(theta.data.reshape(())))
    expected = adam_reference(grads, lr, theta0=1.0)
    return _report("optim/adam-quadratic", produced, expected, 1e-12)


def _metric_images():
    rng = np.random.default_rng(13)
    a = Image(rng.integers(0, 256, size=(24, 20, 3), dtype=np.uint8))
    noise = rng.integers(-12, 13, size=(24, 20, 3))
    b = Image(np.clip(a.pixels.astype(np.int64) + noise, 0, 255).astype(np.uint8))
    return a, b


def _case_psnr() -> OracleReport:
    a, b = _metric_images()
    return _report("metrics/psnr", _metrics.psnr(a, b, 2), psnr_reference(a, b, 2), 1e-9)


def _case_ssim() -> OracleReport:
    a, b = _metric_images()
    return _report("metrics/ssim", _metrics.ssim(a, b, 2), ssim_reference(a, b, 2), 1e-6)


def _case_rmse() -> OracleReport:
    a, b = _metric_images()
    return _report("metrics/rmse", _metrics.rmse(a, b, 2), rmse_reference(a, b, 2), 1e-9)


def _case_checkpoint_format() -> OracleReport:
    import tempfile
    from pathlib import Path

    cfg = _model.ModelConfig(n_blocks=2, channels=8, hfdb_inner=4, cam_reduction=4,
                             factors=(2, 3))
    store = _model.build(cfg, seed=3)
    with tempfile.TemporaryDirectory() as td:
        path = Path(td) / "tiny.ckpt"
        _model.save_checkpoint(store, path)
        produced = path.stat().st_size
    return _report("model/checkpoint-format", produced, checkpoint_size_reference(store), 0.0)


def _case_param_count() -> OracleReport:
    cfg = _model.ModelConfig(n_blocks=2, channels=8, hfdb_inner=4, cam_reduction=4,
                             factors=(2,))
    return _report("model/param-count", _model.param_count(cfg), param_count_reference(cfg), 0.0)


def _case_finite_difference() -> OracleReport:
    rng = np.random.default_rng(14)
    x = rng.normal(size=(1, 2, 4, 4))
    w = rng.normal(size=(2, 2, 3, 3))
    b = rng.normal(size=(1, 2, 1, 1))
    proj = rng.normal(size=(1, 2, 4, 4))

    def run(arrs):
        y = _tensor.sigmoid(
            _tensor.conv2d(
                _tensor.Tensor(arrs[0]), _tensor.Tensor(arrs[1]), _tensor.Tensor(arrs[2])
            )
        )
        return _tensor.mean_all(_tensor.mul(y, _tensor.Tensor(proj))).item()

    xt = _tensor.Tensor(x, requires_grad=True)
    wt = _tensor.Tensor(w, requires_grad=True)
    bt = _tensor.Tensor(b, requires_grad=True)
    with _tensor.Tape() as tape:
        y = _tensor.sigmoid(_tensor.conv2d(xt, wt, bt))
        loss = _tensor.mean_all(_tensor.mul(y, _tensor.Tensor(proj)))
        _tensor.backward(loss, tape)
    numeric = finite_difference_gradient(run, [x, w, b], index=1)
    return _report("tensor/finite-difference", wt.grad, numeric, 1e-5, relative=True)


# ---------------------------------------------------------------------------
# Finite-difference gradient suite (ops, composite blocks, full tiny model)
# ---------------------------------------------------------------------------


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    tolerance: float
    passed: bool


GRAD_TOL_DOUBLE = 1e-5
GRAD_STEP = 1e-5


def _max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum.reduce(
        [np.abs(analytic), np.abs(numeric), np.full_like(analytic, 1e-8)]
    )
    return float((np.abs(analytic - numeric) / denom).max())


def _grad_case(name: str, leaves, forward_fn, tol: float = GRAD_TOL_DOUBLE) -> GradCheckResult:
    """Compare taped gradients of every leaf against central differences.

    ``leaves`` are double-precision Tensors with requires_grad set;
    ``forward_fn`` must be a pure function of their current data.
    """
    for t in leaves:
        t.grad = None
    with _tensor.Tape() as tape:
        loss = forward_fn()
        _tensor.backward(loss, tape)
    worst = 0.0
    for t in leaves:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + GRAD_STEP
            f_plus = forward_fn().item()
            flat[i] = orig - GRAD_STEP
            f_minus = forward_fn().item()
            flat[i] = orig
            num_flat[i] = (f_plus - f_minus) / (2.0 * GRAD_STEP)
        worst = max(worst, _max_rel_error(analytic, numeric))
    return GradCheckResult(name, worst, tol, worst < tol)


def _leaf(rng, shape, lo=-1.0, hi=1.0):
    return _tensor.Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _proj(rng, shape):
    return _tensor.Tensor(rng.normal(size=shape))


def _projected(out, proj):
    return _tensor.mean_all(_tensor.mul(out, proj))


def run_grad_check_suite() -> list[GradCheckResult]:
    """Every differentiable op and composite at shapes <= (2, 4, 6, 6),
    double precision, central differences with step 1e-5."""
    rng = np.random.default_rng(2024)
    results = []

    for k in (1, 3, 5):
        x = _leaf(rng, (2, 3, 5, 5))
        w = _leaf(rng, (4, 3, k, k))
        b = _leaf(rng, (1, 4, 1, 1))
        proj = _proj(rng, (2, 4, 5, 5))
        results.append(_grad_case(
            f"conv2d(k={k})", [x, w, b],
            lambda x=x, w=w, b=b, proj=proj: _projected(_tensor.conv2d(x, w, b), proj),
        ))

    # relu inputs kept away from the kink at 0
    data = rng.uniform(0.05, 1.0, size=(2, 4, 5, 5)) * rng.choice([-1.0, 1.0], size=(2, 4, 5, 5))
    x = _tensor.Tensor(data, requires_grad=True)
    proj = _proj(rng, (2, 4, 5, 5))
    results.append(_grad_case(
        "activation(relu)", [x],
        lambda x=x, proj=proj: _projected(_tensor.relu(x), proj),
    ))

    x = _leaf(rng, (2, 4, 5, 5), -3.0, 3.0)
    proj = _proj(rng, (2, 4, 5, 5))
    results.append(_grad_case(
        "activation(sigmoid)", [x],
        lambda x=x, proj=proj: _projected(_tensor.sigmoid(x), proj),
    ))

    a = _leaf(rng, (2, 4, 5, 5))
    bb = _leaf(rng, (2, 4, 5, 5))
    proj = _proj(rng, (2, 4, 5, 5))
    results.append(_grad_case(
        "add", [a, bb],
        lambda a=a, bb=bb, proj=proj: _projected(_tensor.add(a, bb), proj),
    ))
    results.append(_grad_case(
        "mul", [a, bb],
        lambda a=a, bb=bb, proj=proj: _projected(_tensor.mul(a, bb), proj),
    ))

    parts = [_leaf(rng, (2, c, 4, 4)) for c in (1, 2, 3)]
    proj = _proj(rng, (2, 6, 4, 4))
    results.append(_grad_case(
        "concat_channels", parts,
        lambda parts=parts, proj=proj: _projected(_tensor.concat_channels(parts), proj),
    ))

    x = _leaf(rng, (2, 4, 6, 6))
    proj = _proj(rng, (2, 4, 1, 1))
    results.append(_grad_case(
        "global_avg_pool", [x],
        lambda x=x, proj=proj: _projected(_tensor.global_avg_pool(x), proj),
    ))

    x = _leaf(rng, (2, 4, 5, 5))
    s = _leaf(rng, (2, 4, 1, 1), 0.1, 1.0)
    proj = _proj(rng, (2, 4, 5, 5))
    results.append(_grad_case(
        "scale_channels", [x, s],
        lambda x=x, s=s, proj=proj: _projected(_tensor.scale_channels(x, s), proj),
    ))

    x = _leaf(rng, (2, 4, 3, 3))
    proj = _proj(rng, (2, 1, 6, 6))
    results.append(_grad_case(
        "pixel_shuffle(r=2)", [x],
        lambda x=x, proj=proj: _projected(_tensor.pixel_shuffle(x, 2), proj),
    ))

    x = _leaf(rng, (2, 1, 6, 6))
    proj = _proj(rng, (2, 4, 3, 3))
    results.append(_grad_case(
        "space_to_depth(r=2)", [x],
        lambda x=x, proj=proj: _projected(_tensor.space_to_depth(x, 2), proj),
    ))

    # l1 needs the difference clear of the |.| kink for finite differences
    pred_data = rng.uniform(-1, 1, size=(2, 3, 4, 4))
    target_data = pred_data + rng.uniform(0.05, 0.5, size=pred_data.shape) * rng.choice(
        [-1.0, 1.0], size=pred_data.shape
    )
    pred = _tensor.Tensor(pred_data, requires_grad=True)
    target = _tensor.Tensor(target_data)
    results.append(_grad_case(
        "l1_loss", [pred],
        lambda pred=pred, target=target: _tensor.l1_loss(pred, target),
    ))

    x = _leaf(rng, (2, 4, 5, 5))
    results.append(_grad_case("mean_all", [x], lambda x=x: _tensor.mean_all(x)))

    # composite: dual-path block with exchange and residual
    store = _tiny_store()
    block = store.parts.blocks[0]
    x = _leaf(rng, (1, 4, 5, 5))
    proj = _proj(rng, (1, 4, 5, 5))
    block_leaves = [x] + [store[n] for n in store.names() if n.startswith("block01.")]
    results.append(_grad_case(
        "mdcb", block_leaves,
        lambda x=x, block=block, proj=proj: _projected(_blocks.mdcb_forward(x, block), proj),
    ))

    # composite: channel attention
    cam = store.parts.hier.cam
    x = _leaf(rng, (1, 2, 4, 4))
    proj = _proj(rng, (1, 2, 4, 4))
    cam_leaves = [x] + [store[n] for n in store.names() if n.startswith("hfdb.cam.")]
    results.append(_grad_case(
        "cam", cam_leaves,
        lambda x=x, cam=cam, proj=proj: _projected(_blocks.cam_forward(x, cam), proj),
    ))

    # composite: hierarchical distillation over one collected feature (N=2)
    hfdb = store.parts.hier
    feats = [_leaf(rng, (1, 4, 4, 4))]
    proj = _proj(rng, (1, 4, 4, 4))
    hfdb_leaves = feats + [store[n] for n in store.names() if n.startswith("hfdb.")]
    results.append(_grad_case(
        "hfdb", hfdb_leaves,
        lambda feats=feats, hfdb=hfdb, proj=proj: _projected(
            _blocks.hfdb_forward(feats, hfdb), proj
        ),
    ))

    # composite: x4 reconstruction head (two cascaded shuffle stages)
    store4 = _tiny_store(factors=(4,))
    drb = store4.parts.drb
    x = _leaf(rng, (1, 4, 3, 3))
    proj = _proj(rng, (1, 4, 12, 12))
    drb_leaves = [x] + [store4[n] for n in store4.names() if n.startswith("head4.")]
    results.append(_grad_case(
        "drb(head4)", drb_leaves,
        lambda x=x, drb=drb, proj=proj: _projected(_blocks.drb_forward(x, 4, drb), proj),
    ))

    # composite: the whole tiny model under a smooth projection loss
    store_full = _tiny_store()
    x = _leaf(rng, (1, 3, 6, 6), 0.0, 1.0)
    proj = _proj(rng, (1, 3, 12, 12))
    model_leaves = [x] + [store_full[n] for n in store_full.names()]
    results.append(_grad_case(
        "model(tiny)", model_leaves,
        lambda x=x, store_full=store_full, proj=proj: _projected(
            _model.forward(store_full, x, 2), proj
        ),
    ))
    return results


_CASES = (
    ("tensor/conv-loop", _case_conv_loop),
    ("blocks/mdcb-straight-line", _case_mdcb_straight_line),
    ("model/straight-line", _case_model_straight_line),
    ("optim/adam-quadratic", _case_adam_quadratic),
    ("metrics/psnr", _case_psnr),
    ("metrics/ssim", _case_ssim),
    ("metrics/rmse", _case_rmse),
    ("model/checkpoint-format", _case_checkpoint_format),
    ("model/param-count", _case_param_count),
    ("tensor/finite-difference", _case_finite_difference),
)


def run_oracle_suite(selection: str = "all") -> list[OracleReport]:
    """Run every oracle case, or only those under one module prefix
    (e.g. ``"metrics"`` runs exactly the metric cases)."""
    return [
        fn()
        for name, fn in _CASES
        if selection == "all" or name.startswith(selection + "/")
    ]
