import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from fuda.errors import ShapeError
from fuda.rain import StyleDistribution, StyleVae, kl_to_standard_normal, sample_style_code


def make_vae(moment_dim=12, latent_dim=5, hidden=16, eps_std=1e-5) -> StyleVae:
    torch.manual_seed(0)
    return StyleVae(moment_dim=moment_dim, latent_dim=latent_dim, hidden=hidden,
                    eps_std=eps_std)


class TestKl:
    def test_standard_normal_is_zero(self):
        d = StyleDistribution(psi=torch.zeros(1, 4), xi=torch.ones(1, 4))
        assert kl_to_standard_normal(d).item() == pytest.approx(0.0, abs=1e-12)

    def test_unit_mean_one_dim(self):
        d = StyleDistribution(psi=torch.ones(1, 1), xi=torch.ones(1, 1))
        assert kl_to_standard_normal(d).item() == pytest.approx(0.5, abs=1e-9)

    @given(st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_nonnegative(self, seed):
        gen = torch.Generator().manual_seed(seed)
        psi = torch.randn(3, 6, generator=gen, dtype=torch.float64)
        xi = torch.rand(3, 6, generator=gen, dtype=torch.float64) * 3 + 1e-3
        assert kl_to_standard_normal(StyleDistribution(psi, xi)).item() >= -1e-12

    def test_closed_form_matches_brute_force(self):
        gen = torch.Generator().manual_seed(7)
        psi = torch.randn(2, 3, generator=gen, dtype=torch.float64)
        xi = torch.rand(2, 3, generator=gen, dtype=torch.float64) + 0.5
        expected = 0.0
        for b in range(2):
            for i in range(3):
                p, x = psi[b, i].item(), xi[b, i].item()
                expected += -0.5 * (1 + 2 * math.log(x) - p * p - x * x)
        expected /= 2  # batch mean of per-sample sums
        got = kl_to_standard_normal(StyleDistribution(psi, xi)).item()
        assert got == pytest.approx(expected, rel=1e-12)


class TestSampling:
    def test_deterministic_given_seed(self):
        d = StyleDistribution(psi=torch.zeros(2, 5), xi=torch.ones(2, 5))
        a = sample_style_code(d, 123)
        b = sample_style_code(d, 123)
        torch.testing.assert_close(a, b, rtol=0, atol=0)
        c = sample_style_code(d, 124)
        assert not torch.equal(a, c)

    def test_degenerate_scale_collapses_to_mean(self):
        psi = torch.arange(4.0).reshape(1, 4)
        d = StyleDistribution(psi=psi, xi=torch.full((1, 4), 1e-5))
        eps = sample_style_code(d, 5)
        torch.testing.assert_close(eps, psi, atol=1e-3, rtol=0)

    def test_monte_carlo_mean(self):
        # Sample mean within 4*xi/sqrt(n) of psi per coordinate.
        n = 10_000
        psi = torch.tensor([[0.7, -1.2, 0.0]], dtype=torch.float64)
        xi = torch.tensor([[0.5, 2.0, 1.0]], dtype=torch.float64)
        d = StyleDistribution(psi=psi.expand(n, -1), xi=xi.expand(n, -1))
        draws = sample_style_code(d, 99)
        bound = 4 * xi[0] / n ** 0.5
        assert ((draws.mean(dim=0) - psi[0]).abs() <= bound).all()

    def test_reparameterized_gradients_match_finite_differences(self):
        # d(eps)/d(psi) = I and d(eps)/d(xi) = diag(eta): check the analytic
        # gradient of a smooth scalar functional of eps against central
        # differences at 64-bit precision.
        torch.manual_seed(11)
        psi = torch.randn(1, 6, dtype=torch.float64, requires_grad=True)
        xi = (torch.rand(1, 6, dtype=torch.float64) + 0.5).requires_grad_(True)
        w = torch.randn(6, dtype=torch.float64)

        def functional(p, x):
            eps = sample_style_code(StyleDistribution(p, x), 321)
            return (w * eps.squeeze(0)).sin().sum() + (eps ** 2).sum()

        loss = functional(psi, xi)
        g_psi, g_xi = torch.autograd.grad(loss, (psi, xi))
        h = 1e-6
        for param, grad in ((psi, g_psi), (xi, g_xi)):
            for i in range(6):
                delta = torch.zeros_like(param)
                delta[0, i] = h
                hi = functional((psi + delta).detach(), xi.detach()) if param is psi \
                    else functional(psi.detach(), (xi + delta).detach())
                lo = functional((psi - delta).detach(), xi.detach()) if param is psi \
                    else functional(psi.detach(), (xi - delta).detach())
                fd = (hi - lo).item() / (2 * h)
                assert grad[0, i].item() == pytest.approx(fd, rel=1e-3, abs=1e-9)


class TestVaeShapes:
    def test_encode_decode_shapes(self):
        vae = make_vae()
        moments = torch.randn(3, 12)
        dist = vae.encode(moments)
        assert dist.psi.shape == dist.xi.shape == (3, 5)
        assert dist.latent_dim == 5
        code = sample_style_code(dist, 0)
        recon = vae.decode(code)
        assert recon.shape == (3, 12)

    def test_xi_strictly_positive(self):
        vae = make_vae()
        dist = vae.encode(torch.randn(4, 12) * 10)
        assert (dist.xi >= vae.eps_std).all()

    def test_decoded_std_half_floored(self):
        vae = make_vae()
        recon = vae.decode(torch.randn(4, 5) * 10)
        sd_half = recon[:, 6:]
        assert (sd_half >= vae.eps_std).all()

    def test_wrong_moment_length_rejected(self):
        with pytest.raises(ShapeError):
            make_vae().encode(torch.randn(2, 13))

    def test_extreme_inputs_stay_finite(self):
        vae = make_vae()
        dist = vae.encode(torch.full((1, 12), 1e8))
        assert torch.isfinite(dist.psi).all() and torch.isfinite(dist.xi).all()
        recon = vae.decode(torch.full((1, 5), 1e8))
        assert torch.isfinite(recon).all()


class TestMomentPriorInit:
    """Centering the decoder output on the data's mean moment vector."""

    def test_bias_matches_data_mean(self):
        vae = make_vae()
        mv = torch.cat([torch.randn(8, 6), torch.rand(8, 6) + 0.1], dim=-1)
        vae.init_moment_prior(mv)
        mean = mv.mean(dim=0)
        bias = vae.dec[-1].bias
        assert torch.equal(bias[:6], mean[:6])
        assert torch.allclose(bias[6:], torch.log(mean[6:]))

    def test_nonpositive_std_half_floored_before_log(self):
        vae = make_vae()
        mv = torch.zeros(4, 12)
        vae.init_moment_prior(mv)
        assert torch.isfinite(vae.dec[-1].bias).all()
        assert torch.allclose(vae.dec[-1].bias[6:],
                              torch.full((6,), math.log(vae.eps_std)))

    def test_wrong_shape_rejected(self):
        vae = make_vae()
        with pytest.raises(ShapeError):
            vae.init_moment_prior(torch.randn(12))
        with pytest.raises(ShapeError):
            vae.init_moment_prior(torch.randn(3, 13))

    def test_keeps_gradients_flowing(self):
        vae = make_vae()
        vae.init_moment_prior(torch.cat([torch.randn(5, 6),
                                         torch.rand(5, 6) + 0.1], dim=-1))
        recon = vae.decode(torch.randn(2, 5))
        recon.sum().backward()
        assert vae.dec[-1].bias.grad is not None
        assert torch.isfinite(vae.dec[-1].bias.grad).all()
