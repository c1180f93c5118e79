import numpy as np
import pytest

from dinstyle.autodiff import ShapeError
from dinstyle.flops import compare_architectures, count_flops
from dinstyle.netspec import Layer, NetworkSpec
from dinstyle.stylenet import StyleNetConfig, build_default_network, build_vgg_slice

from oracles import count_conv_macs


def _single(layer, in_ch=None):
    return NetworkSpec("one", {"encoder": (layer,)}, in_channels=in_ch or layer.in_ch)


def test_single_conv_closed_form():
    r = count_flops(_single(Layer("c", "conv", 3, 64, kernel=3, padding="zero")), (512, 512))
    assert r.total == 452_984_832


def test_empty_spec_is_zero():
    assert count_flops(NetworkSpec("empty", {}), (512, 512)).total == 0


def test_depthwise_separable_formula():
    r = count_flops(_single(Layer("d", "ds_block", 8, 16, kernel=3, stride=1)), (32, 32))
    assert r.total == 9 * 8 * 32 * 32 + 8 * 16 * 32 * 32


@pytest.mark.parametrize("cin,cout,k,stride,hw", [(3, 8, 3, 1, 16), (8, 4, 3, 2, 16), (4, 8, 1, 1, 8), (2, 3, 5, 1, 12)])
def test_conv_count_matches_instrumented_execution(cin, cout, k, stride, hw):
    r = count_flops(_single(Layer("c", "conv", cin, cout, kernel=k, stride=stride)), (hw, hw))
    assert r.rows[0].macs == count_conv_macs((1, cin, hw, hw), (cout, cin, k, k), stride, (k - 1) // 2)


def test_ds_count_matches_instrumented_execution():
    r = count_flops(_single(Layer("d", "ds_block", 8, 8, kernel=3, stride=2)), (16, 16))
    dw = count_conv_macs((1, 8, 16, 16), (8, 1, 3, 3), 2, 1)
    pw = count_conv_macs((1, 8, 8, 8), (8, 8, 1, 1), 1, 0)
    assert r.rows[0].macs == dw + pw


def test_doubling_resolution_quadruples_conv_rows():
    spec = build_default_network()
    a, b = count_flops(spec, (64, 64)), count_flops(spec, (128, 128))
    for ra, rb in zip(a.rows, b.rows):
        if ra.section in ("encoder", "decoder") and ra.kind in ("conv", "ds_block", "residual_block"):
            assert rb.flops == 4 * ra.flops, ra.name


def test_totals_equal_row_sums():
    r = count_flops(build_default_network(), (512, 512))
    assert r.total == sum(row.flops for row in r.rows)
    assert r.total == sum(r.section_total(s) for s in r.sections)
    assert all(row.macs >= 0 and row.other >= 0 for row in r.rows)


def test_vgg_anchor():
    total = count_flops(build_vgg_slice("relu4_1"), (512, 512)).total
    assert abs(total / 1e9 - 63.44) <= 0.5


def test_default_sections_within_budget():
    r = count_flops(build_default_network(), (512, 512))
    assert 3.0e9 <= r.section_total("encoder") <= 4.5e9
    assert 3.0e9 <= r.section_total("decoder") <= 4.5e9
    assert r.section_total("generators") <= 100e6


@pytest.mark.parametrize("conv_type,k", [("deformable", 3), ("spatially_adaptive", 1), ("standard", 3)])
def test_variants_are_counted(conv_type, k):
    base = count_flops(build_default_network(), (256, 256)).section_total("decoder")
    other = count_flops(build_default_network(StyleNetConfig(conv_type=conv_type, din_kernel=k)), (256, 256))
    assert other.section_total("decoder") > base


def test_compare_ratio_and_identity():
    vgg, ours = build_vgg_slice(), build_default_network()
    cmp = compare_architectures({"vgg": vgg, "ours": ours}, (512, 512))
    assert cmp.ratios()[0][2] >= 15
    same = compare_architectures([("a", ours), ("b", ours)], (512, 512))
    assert same.ratios()[0][2] == 1.0
    assert "ratio vgg/ours" in cmp.to_text()
    with pytest.raises(ValueError):
        compare_architectures({"only": ours}, (512, 512))


def test_csv_rows():
    r = count_flops(build_vgg_slice("relu1_1"), (8, 8))
    lines = r.to_csv().strip().splitlines()
    assert lines[0] == "name,kind,h,w,c,flops"
    assert lines[1] == f"encoder/conv1_1,conv,8,8,64,{9 * 3 * 64 * 64 + 64 * 64}"


def test_inconsistent_spec_rejected():
    spec = NetworkSpec("bad", {"encoder": (Layer("a", "conv", 3, 8), Layer("b", "conv", 4, 8))})
    with pytest.raises(ShapeError):
        count_flops(spec, (8, 8))
