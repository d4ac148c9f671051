import pytest
import torch
import torch.nn as nn
import torch.nn.functional as F

from rlnet.blocks import (FFRB, UFFRB, BlockConfig, MultiStream, ResGNBlock, SEBlock, SPPRefine,
                          gn_groups)
from rlnet.errors import ConfigError

from .helpers import fd_check


def zero_biases(m: nn.Module):
    with torch.no_grad():
        for name, p in m.named_parameters():
            if name.endswith("bias"):
                p.zero_()
    return m


def test_gn_groups_picks_largest_divisor():
    assert gn_groups(32) == 8
    assert gn_groups(12) == 6
    assert gn_groups(3) == 3
    assert gn_groups(7) == 7
    assert gn_groups(14) == 7
    with pytest.raises(ConfigError):
        gn_groups(0)


def test_block_config_rejects_bad_kernel():
    with pytest.raises(ConfigError):
        BlockConfig(kernel_size=4)


def test_res_block_shape_and_zero_init_identity():
    blk = ResGNBlock(32, 3, 8)
    x = torch.randn(1, 32, 16, 16)
    assert blk(x).shape == x.shape
    with torch.no_grad():
        blk.conv2.weight.zero_()
        blk.conv2.bias.zero_()
    # conv2 output is zero so GN sees a constant field and returns its bias (zero)
    torch.testing.assert_close(blk(x), x)


def test_res_block_rejects_wrong_channels():
    with pytest.raises(ConfigError):
        ResGNBlock(8)(torch.randn(1, 4, 8, 8))


def test_group_norm_of_constant_field_is_zero():
    gn = nn.GroupNorm(1, 1, affine=False)
    out = gn(torch.full((1, 1, 5, 5), 0.7))
    assert torch.equal(out, torch.zeros_like(out))


def test_se_zero_weights_halve_input():
    se = SEBlock(64, 16)
    for p in se.parameters():
        nn.init.zeros_(p)
    x = torch.randn(2, 64, 8, 8)
    torch.testing.assert_close(se(x), 0.5 * x)
    assert se.fc1.out_features == 4
    assert se(x).shape == x.shape


def test_se_weights_strictly_inside_unit_interval():
    for i in range(100):
        torch.manual_seed(i)
        se = SEBlock(16, 4)
        w = se.weights(torch.randn(1, 16, 4, 4) * 3)
        assert (w > 0).all() and (w < 1).all()


@pytest.mark.parametrize("k", [3, 5, 7])
def test_ffrb_shape(k):
    blk = FFRB(32, BlockConfig(kernel_size=k))
    assert blk(torch.randn(1, 32, 16, 16)).shape == (1, 32, 16, 16)


def test_ffrb_maps_zero_to_zero():
    blk = zero_biases(FFRB(16, BlockConfig(base_channels=16)))
    x = torch.zeros(1, 16, 8, 8)
    assert torch.equal(blk(x), x)


def test_ffrb_gradient_matches_fd():
    blk = FFRB(4, BlockConfig(gn_groups=2, se_reduction=2)).double()
    x = torch.randn(1, 4, 5, 5, dtype=torch.float64, requires_grad=True)
    assert fd_check(lambda: blk(x).sum(), [x], n_probe=40) <= 1e-3


@pytest.mark.parametrize("k", [3, 5, 7])
@pytest.mark.parametrize("size", [32, 64, 96])
def test_blocks_preserve_spatial_size(k, size):
    cfg = BlockConfig(kernel_size=k, base_channels=8)
    x = torch.randn(1, 8, size, size)
    assert ResGNBlock(8, k)(x).shape == x.shape
    assert FFRB(8, cfg)(x).shape == x.shape
    assert UFFRB(8, cfg, depth=2)(x).shape == x.shape
    assert SPPRefine(8, n_res=1)(x).shape == x.shape


def test_uffrb_bottleneck_scale():
    u = UFFRB(8, BlockConfig(base_channels=8), depth=2)
    seen = {}

    def hook(m, i, o):
        seen["bottleneck"] = o.shape

    u.enc[2].register_forward_hook(hook)
    out = u(torch.randn(1, 8, 64, 64))
    assert seen["bottleneck"][-2:] == (16, 16)
    assert out.shape == (1, 8, 64, 64)


def test_uffrb_depth_zero_is_a_single_ffrb():
    cfg = BlockConfig(base_channels=8)
    u = UFFRB(8, cfg, depth=0)
    f = FFRB(8, cfg)
    f.load_state_dict(u.enc[0].state_dict())
    x = torch.randn(1, 8, 12, 12)
    assert torch.equal(u(x), f(x))


def test_uffrb_skips_are_wired():
    u = UFFRB(8, BlockConfig(base_channels=8), depth=2)
    x = torch.randn(1, 8, 32, 32)
    a = u(x)
    u.use_skips = False
    b = u(x)
    assert not torch.allclose(a, b)


def test_uffrb_rejects_indivisible_input():
    with pytest.raises(ConfigError):
        UFFRB(8, BlockConfig(base_channels=8), depth=2)(torch.randn(1, 8, 30, 30))


def test_uffrb_injection_changes_output():
    u = UFFRB(8, BlockConfig(base_channels=8), depth=2, inject={1: 3, 2: 3})
    x = torch.randn(1, 8, 32, 32)
    inj = {1: torch.rand(1, 3, 16, 16), 2: torch.rand(1, 3, 8, 8)}
    a = u(x, inj)
    b = u(x, {1: inj[1], 2: torch.zeros(1, 3, 8, 8)})
    assert a.shape == x.shape and not torch.allclose(a, b)
    with pytest.raises(ConfigError):
        u(x)


def test_uffrb_gradient_matches_fd():
    u = UFFRB(4, BlockConfig(gn_groups=2, se_reduction=2), depth=1).double()
    x = torch.randn(1, 4, 8, 8, dtype=torch.float64, requires_grad=True)
    assert fd_check(lambda: u(x).sum(), [x], n_probe=40) <= 1e-3


def test_multistream_channels_and_zero_propagation():
    ms = MultiStream(16, BlockConfig(base_channels=16), depth=1)
    assert ms.out_channels == 48
    x = torch.randn(1, 16, 16, 16)
    assert ms(x).shape == (1, 48, 16, 16)
    zero_biases(ms)
    z = torch.zeros(1, 16, 16, 16)
    assert torch.equal(ms(z), torch.zeros(1, 48, 16, 16))


def test_multistream_permutation_permutes_blocks():
    ms = MultiStream(8, BlockConfig(base_channels=8), depth=1)
    x = torch.randn(1, 8, 16, 16)
    out = ms(x)
    ms.streams = nn.ModuleList([ms.streams[2], ms.streams[0], ms.streams[1]])
    perm = ms(x)
    torch.testing.assert_close(perm, torch.cat([out[:, 16:24], out[:, 0:8], out[:, 8:16]], dim=1))


def test_multistream_gradient_matches_fd():
    ms = MultiStream(4, BlockConfig(gn_groups=2, se_reduction=2), depth=1).double()
    x = torch.randn(1, 4, 8, 8, dtype=torch.float64, requires_grad=True)
    assert fd_check(lambda: ms(x).sum(), [x], n_probe=30) <= 1e-3


def test_spp_branch_grids():
    spp = SPPRefine(8)
    grids = []
    for f in spp.factors:
        grids.append(F.avg_pool2d(torch.zeros(1, 8, 64, 64), f).shape[-2:])
    assert grids == [(16, 16), (8, 8), (4, 4), (2, 2)]
    assert spp.pyramid(torch.randn(1, 8, 64, 64)).shape == (1, 8 + 4 * 2, 64, 64)


def test_spp_constant_input_gives_constant_branches():
    spp = SPPRefine(8)
    pyr = spp.pyramid(torch.full((1, 8, 64, 64), 0.3))
    for c in range(pyr.shape[1]):
        ch = pyr[0, c]
        torch.testing.assert_close(ch, torch.full_like(ch, ch[0, 0].item()))


def test_nearest_upsample_gives_constant_quadrants():
    g = torch.tensor([[1.0, 2.0], [3.0, 4.0]])[None, None]
    up = F.interpolate(g, scale_factor=32, mode="nearest")[0, 0]
    assert torch.equal(up[:32, :32], torch.full((32, 32), 1.0))
    assert torch.equal(up[:32, 32:], torch.full((32, 32), 2.0))
    assert torch.equal(up[32:, :32], torch.full((32, 32), 3.0))
    assert torch.equal(up[32:, 32:], torch.full((32, 32), 4.0))


def test_spp_rejects_indivisible_input():
    with pytest.raises(ConfigError):
        SPPRefine(8)(torch.randn(1, 8, 48, 48))


def test_res_and_se_and_spp_gradients_match_fd():
    res = ResGNBlock(4, 3, 2).double()
    x = torch.randn(1, 4, 6, 6, dtype=torch.float64, requires_grad=True)
    assert fd_check(lambda: res(x).sum(), [x] + list(res.parameters())[:2]) <= 1e-3
    se = SEBlock(8, 4).double()
    y = torch.randn(1, 8, 4, 4, dtype=torch.float64, requires_grad=True)
    assert fd_check(lambda: (se(y) ** 2).sum(), [y] + list(se.parameters())) <= 1e-3
    spp = SPPRefine(4, n_res=2, max_groups=2).double()
    z = torch.randn(1, 4, 32, 32, dtype=torch.float64, requires_grad=True)
    assert fd_check(lambda: (spp(z) ** 2).mean(), [z], n_probe=24) <= 1e-3
