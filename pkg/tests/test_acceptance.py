"""Acceptance criteria, one test each. A PASS/FAIL line per criterion is
printed in the terminal summary."""

import contextlib
import io
import os
import re
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from dinstyle.autodiff import Tensor
from dinstyle.cli import main
from dinstyle.flops import compare_architectures, count_flops
from dinstyle.gradchecks import run_scope
from dinstyle.images import write_png
from dinstyle.normalization import (
    AffineParams,
    DinParams,
    adain,
    adain_params,
    cin,
    diagonal_params,
    din,
    identity_params,
    instance_norm,
)
from dinstyle.ops import ConvWeight, adaptive_avg_pool, conv2d, deformable_conv2d, depthwise_separable
from dinstyle.stylenet import build_default_network, build_vgg_slice
from dinstyle.trainer import parse_log

from oracles import adaptive_pool_naive, conv2d_naive

SMOKE_JSON = os.path.join(os.path.dirname(__file__), "..", "src", "dinstyle", "data", "smoke", "smoke.json")


def record(num: int, title: str, ok: bool, detail: str) -> None:
    line = f"C{num} {'PASS' if ok else 'FAIL'} {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def run_cli(args):
    out = io.StringIO()
    with contextlib.redirect_stdout(out):
        rc = main(args)
    return rc, out.getvalue()


def test_c01_scope_note():
    # a statement of scope, not a measurable check
    ACCEPTANCE_LINES.append("C1 N/A full-scale training reproduction is out of scope; C2-C11 are the checks")


def test_c02_vgg_anchor():
    t = time.perf_counter()
    rc, out = run_cli(["analyze", "--arch", "vgg-relu4_1", "--size", "512x512"])
    dt = time.perf_counter() - t
    total = float(re.search(r"^total\s+([\d.]+) G$", out, re.M).group(1))
    ok = rc == 0 and abs(total - 63.44) <= 0.5 and dt < 1.0
    record(2, "VGG relu4_1 FLOPs @512", ok, f"{total:.4f} G (target 63.44 +/- 0.5), {dt:.3f} s")


def test_c03_efficiency():
    t = time.perf_counter()
    spec = build_default_network()
    rep = count_flops(spec, (512, 512))
    enc, dec = rep.section_total("encoder") / 1e9, rep.section_total("decoder") / 1e9
    ratio = compare_architectures({"vgg": build_vgg_slice(), "ours": spec}, (512, 512)).ratios()[0][2]
    dt = time.perf_counter() - t
    ok = enc <= 4.5 and dec <= 4.5 and ratio >= 15 and dt < 1.0
    record(3, "encoder/decoder budget and ratio", ok,
           f"encoder {enc:.4f} G, decoder {dec:.4f} G (<= 4.5), VGG/ours {ratio:.2f} (>= 15), {dt:.3f} s")


def test_c04_generator_overhead():
    mflops = count_flops(build_default_network(), (512, 512)).section_total("generators") / 1e6
    record(4, "generator FLOPs @512", mflops <= 100, f"{mflops:.3f} MFLOPs (<= 100)")


def test_c05_special_cases():
    t = time.perf_counter()
    worst_in = worst_cin = worst_adain = 0.0
    cases = 0
    for seed in range(60):
        rng = np.random.default_rng(seed)
        n, c = int(rng.integers(1, 4)), int(rng.integers(1, 6))
        h, w = int(rng.integers(3, 10)), int(rng.integers(3, 10))
        k = int(rng.choice([1, 3]))
        x = Tensor(rng.normal(rng.normal(), rng.uniform(0.1, 5), size=(n, c, h, w)))
        worst_in = max(worst_in, np.abs(din(x, identity_params(c, k)).data - instance_norm(x).data).max())
        g, b = Tensor(rng.normal(size=c)), Tensor(rng.normal(size=c))
        worst_cin = max(worst_cin, np.abs(din(x, diagonal_params(g, b)).data - cin(x, AffineParams(g, b)).data).max())
        fs = Tensor(rng.normal(rng.normal(), rng.uniform(0.1, 5), size=(n, c, h + 2, w + 1)))
        worst_adain = max(worst_adain, np.abs(din(x, adain_params(fs)).data - adain(x, fs).data).max())
        cases += 1
    dt = time.perf_counter() - t
    ok = worst_in <= 1e-9 and worst_cin == 0.0 and worst_adain <= 1e-9 and dt < 10
    record(5, "IN/CIN/AdaIN special cases", ok,
           f"{cases} inputs, IN err {worst_in:.2e}, CIN err {worst_cin:.1e}, AdaIN err {worst_adain:.2e}, {dt:.2f} s")


def test_c06_gradients():
    t = time.perf_counter()
    reports = run_scope("ops", 0) + run_scope("normalization", 0) + run_scope("end2end", 0)
    dt = time.perf_counter() - t
    failed = [r.name for r in reports if not r.passed]
    local = max(r.max_rel_error for r in reports if not r.name.startswith("end2end"))
    e2e = max(r.max_rel_error for r in reports if r.name.startswith("end2end"))
    ok = not failed and dt < 300
    record(6, "finite-difference gradients", ok,
           f"{len(reports) - len(failed)}/{len(reports)} pass, ops max_rel {local:.2e} (tol 1e-4), "
           f"end-to-end max_rel {e2e:.2e} (tol 1e-3), {dt:.1f} s" + (f", failed {failed}" if failed else ""))


def test_c07_oracle_equivalence():
    t = time.perf_counter()
    worst = 0.0
    shapes = [(1, 3, 8, 8, 4, 3, 1, 1), (2, 4, 9, 7, 6, 3, 2, 1), (1, 2, 6, 6, 3, 1, 1, 0), (2, 3, 10, 10, 2, 5, 2, 2)]
    for i, (n, c, h, w, co, k, s, p) in enumerate(shapes):
        rng = np.random.default_rng(i)
        x, kern, b = rng.normal(size=(n, c, h, w)), rng.normal(size=(co, c, k, k)), rng.normal(size=co)
        for reflect in (False, True):
            wt = ConvWeight(Tensor(kern), Tensor(b), s, p, "reflect" if reflect else "zero")
            worst = max(worst, np.abs(conv2d(Tensor(x), wt).data - conv2d_naive(x, kern, b, s, p, 1, reflect)).max())
        kd, pw = rng.normal(size=(c, 1, k, k)), rng.normal(size=(co, c, 1, 1))
        got = depthwise_separable(Tensor(x), ConvWeight(Tensor(kd), None, s, p, groups=c), ConvWeight(Tensor(pw)))
        worst = max(worst, np.abs(got.data - conv2d_naive(conv2d_naive(x, kd, None, s, p, c), pw)).max())
        wt = ConvWeight(Tensor(kern), Tensor(b), s, p)
        ref = conv2d_naive(x, kern, b, s, p)
        off = Tensor(np.zeros((n, 2 * k * k) + ref.shape[2:]))
        worst = max(worst, np.abs(deformable_conv2d(Tensor(x), wt, off).data - ref).max())
        for oh, ow in ((1, 1), (3, 3), (h // 2, w // 3), (h, w)):
            worst = max(worst, np.abs(adaptive_avg_pool(Tensor(x), oh, ow).data - adaptive_pool_naive(x, oh, ow)).max())
    dt = time.perf_counter() - t
    record(7, "convolution/pooling oracles", worst <= 1e-12 and dt < 60, f"max abs err {worst:.2e} (<= 1e-12), {dt:.2f} s")


def test_c08_spatially_adaptive():
    t = time.perf_counter()
    rng = np.random.default_rng(0)
    x = rng.normal(size=(1, 4, 16, 16))
    block = (slice(4, 12), slice(4, 12))
    for ch in x[0]:
        mask = np.zeros(ch.shape, bool)
        mask[block] = True
        ch[mask] = ch[~mask].mean()  # instance norm is exactly zero on the block
    x = Tensor(x)
    std = din(x, DinParams(Tensor(rng.normal(size=(4, 4, 1, 1))), Tensor(np.zeros(4)))).data[0][:, block[0], block[1]]
    sa = din(x, DinParams(Tensor(rng.normal(size=(4, 1, 4, 4))), Tensor(np.zeros(4)), "spatially_adaptive"))
    var = sa.data[0][:, block[0], block[1]].var(axis=(1, 2)).min()
    dt = time.perf_counter() - t
    ok = np.abs(std).max() <= 1e-12 and var > 0 and dt < 5
    record(8, "spatially-adaptive DIN on a uniform region", ok,
           f"1x1 DIN max |out| {np.abs(std).max():.1e}, spatially-adaptive min variance {var:.3e}, {dt:.3f} s")


def test_c09_deformable_reduction():
    worst = 0.0
    for i, (k, s, p) in enumerate([(1, 1, 0), (3, 1, 1), (3, 2, 1), (5, 1, 2)]):
        rng = np.random.default_rng(i)
        x, kern, b = rng.normal(size=(2, 3, 9, 9)), rng.normal(size=(4, 3, k, k)), rng.normal(size=4)
        wt = ConvWeight(Tensor(kern), Tensor(b), s, p)
        ref = conv2d(Tensor(x), wt)
        got = deformable_conv2d(Tensor(x), wt, Tensor(np.zeros((2, 2 * k * k) + ref.shape[2:])))
        worst = max(worst, np.abs(got.data - ref.data).max())
    record(9, "deformable conv with zero offsets", worst <= 1e-12, f"max abs err {worst:.2e} (<= 1e-12)")


def test_c10_training_smoke(tmp_path):
    t = time.perf_counter()
    a, b, r = tmp_path / "a", tmp_path / "b", tmp_path / "r"
    rc = [run_cli(["train", "--config", SMOKE_JSON, "--out-dir", str(d)])[0] for d in (a, b)]
    # resume the second half from the first run's step-100 checkpoint
    rc.append(run_cli(["train", "--config", SMOKE_JSON, "--out-dir", str(r), "--resume-from",
                       str(a / "ckpt_000100.dinc")])[0])
    dt = time.perf_counter() - t
    log_a = (a / "loss.log").read_bytes()
    rows = parse_log(log_a.decode())
    ratio = rows[-1][3] / rows[0][3]
    reproducible = log_a == (b / "loss.log").read_bytes() and (a / "ckpt_000200.dinc").read_bytes() == (
        b / "ckpt_000200.dinc").read_bytes()
    resumed = (r / "loss.log").read_text().splitlines() == log_a.decode().splitlines()[100:] and (
        r / "ckpt_000200.dinc").read_bytes() == (a / "ckpt_000200.dinc").read_bytes()
    ok = rc == [0, 0, 0] and len(rows) == 200 and ratio <= 0.7 and reproducible and resumed and dt < 600
    record(10, "200-step training smoke run", ok,
           f"loss {rows[0][3]:.4f} -> {rows[-1][3]:.4f} (ratio {ratio:.4f} <= 0.7), rerun identical {reproducible}, "
           f"resume identical {resumed}, {dt:.0f} s for 2.5 runs")


def test_c11_style_code_equivalence(tmp_path):
    weights = str(tmp_path / "w.dinc")
    assert run_cli(["init-weights", "--out", weights, "--seed", "0"])[0] == 0
    same = 0
    for i in range(5):
        rng = np.random.default_rng(100 + i)
        ch, cw = (int(v) * 4 for v in rng.integers(8, 17, size=2))
        c, s = tmp_path / f"c{i}.png", tmp_path / f"s{i}.png"
        write_png(c, rng.integers(0, 256, size=(ch, cw, 3), dtype=np.uint8))
        write_png(s, rng.integers(0, 256, size=tuple(int(v) for v in rng.integers(32, 80, size=2)) + (3,), dtype=np.uint8))
        code, direct, via = tmp_path / f"{i}.code", tmp_path / f"d{i}.png", tmp_path / f"v{i}.png"
        assert run_cli(["precompute", "--style", str(s), "--weights", weights, "--out", str(code)])[0] == 0
        assert run_cli(["stylize", "--content", str(c), "--style", str(s), "--weights", weights, "--out", str(direct)])[0] == 0
        assert run_cli(["stylize", "--content", str(c), "--style-code", str(code), "--weights", weights,
                        "--out", str(via)])[0] == 0
        same += direct.read_bytes() == via.read_bytes()
    record(11, "StyleCode equivalence at PNG level", same == 5, f"{same}/5 pairs byte-identical")
