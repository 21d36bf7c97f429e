import copy
import math

import pytest
import torch

from contgan.archive import load_archive, save_archive
from contgan.data import ConditioningMode
from contgan.errors import ConfigurationError, ContractError, IntegrityError
from contgan.networks import (
    NetworkConfig,
    build_model,
    clone_frozen,
    reparameterize,
)


def zeroed(model):
    for p in model.eg_parameters() + model.d_parameters():
        with torch.no_grad():
            p.zero_()
    return model


class TestConfig:
    def test_requires_exactly_one_conditioning(self):
        with pytest.raises(ConfigurationError):
            NetworkConfig(cond_channels=3, label_dim=10)
        with pytest.raises(ConfigurationError):
            NetworkConfig(cond_channels=0, label_dim=0)

    def test_latent_dim_positive(self):
        with pytest.raises(ConfigurationError):
            NetworkConfig(latent_dim=0)


class TestEncoder:
    def test_zero_params_give_zero_stats(self, image_model):
        zeroed(image_model)
        mu, logvar = image_model.encoder(torch.randn(2, 1, 64, 64).clamp(-1, 1))
        assert torch.all(mu == 0) and torch.all(logvar == 0)

    @pytest.mark.parametrize("latent_dim", [2, 8])
    def test_output_length_tracks_config(self, latent_dim):
        cfg = NetworkConfig(latent_dim=latent_dim, base_channels=2)
        m = build_model(cfg, seed=0)
        mu, logvar = m.encoder(torch.zeros(3, 1, 64, 64))
        assert mu.shape == (3, latent_dim) and logvar.shape == (3, latent_dim)

    def test_deterministic(self, image_model):
        img = torch.randn(2, 1, 64, 64, generator=torch.Generator().manual_seed(3))
        a = image_model.encoder(img)
        b = image_model.encoder(img)
        assert torch.equal(a[0], b[0]) and torch.equal(a[1], b[1])

    def test_shape_contract(self, image_model):
        with pytest.raises(ContractError):
            image_model.encoder(torch.zeros(2, 3, 64, 64))


class TestReparameterize:
    def test_standard_normal_passthrough(self):
        n = torch.randn(4, 8)
        z = reparameterize(torch.zeros(4, 8), torch.zeros(4, 8), n)
        assert torch.equal(z, n)

    def test_zero_noise_returns_mu(self):
        mu = torch.randn(2, 8)
        assert torch.equal(reparameterize(mu, torch.zeros(2, 8), torch.zeros(2, 8)), mu)

    def test_hand_value(self):
        mu = torch.tensor([[1.0, 2.0]])
        logvar = torch.tensor([[0.0, math.log(4.0)]])
        noise = torch.tensor([[1.0, 1.0]])
        assert torch.allclose(reparameterize(mu, logvar, noise), torch.tensor([[2.0, 4.0]]))


class TestGenerator:
    def test_output_shape_and_range(self, image_model):
        out = image_model.generator(torch.randn(2, 3, 64, 64), torch.randn(2, 8))
        assert out.shape == (2, 1, 64, 64)
        assert out.min() >= -1.0 and out.max() <= 1.0

    def test_label_mode(self, label_model):
        cond = torch.nn.functional.one_hot(torch.tensor([1, 5]), 10).float()
        out = label_model.generator(cond, torch.randn(2, 8))
        assert out.shape == (2, 1, 64, 64)

    def test_mode_mismatch_rejected(self, image_model, label_model):
        with pytest.raises(ContractError):
            image_model.generator(torch.zeros(2, 10), torch.zeros(2, 8))
        with pytest.raises(ContractError):
            label_model.generator(torch.zeros(2, 3, 64, 64), torch.zeros(2, 8))

    def test_deterministic(self, image_model):
        g = torch.Generator().manual_seed(5)
        a_in = torch.randn(1, 3, 64, 64, generator=g)
        z = torch.randn(1, 8, generator=g)
        assert torch.equal(image_model.generator(a_in, z), image_model.generator(a_in, z))


class TestDiscriminator:
    def test_patch_grid_shape(self, image_model):
        logits = image_model.discriminator(torch.randn(2, 3, 64, 64), torch.randn(2, 1, 64, 64))
        assert logits.shape == (2, 1, 8, 8)

    def test_zero_params_zero_logits(self, image_model):
        zeroed(image_model)
        logits = image_model.discriminator(torch.randn(2, 3, 64, 64), torch.randn(2, 1, 64, 64))
        assert torch.all(logits == 0)

    def test_label_condition_broadcast(self, label_model):
        cond = torch.nn.functional.one_hot(torch.tensor([0, 9]), 10).float()
        logits = label_model.discriminator(cond, torch.randn(2, 1, 64, 64))
        assert logits.shape == (2, 1, 8, 8)


class TestCloneFrozen:
    def test_bitwise_copy(self, image_model):
        snap = clone_frozen(image_model)
        for a, b in zip(image_model.named_tensors().values(), snap.named_tensors().values()):
            assert torch.equal(a, b)
        assert snap.frozen

    def test_student_mutation_leaves_clone(self, image_model):
        snap = clone_frozen(image_model)
        before = copy.deepcopy(snap.named_tensors())
        for p in image_model.eg_parameters():
            with torch.no_grad():
                p.add_(1.0)
        for k, v in snap.named_tensors().items():
            assert torch.equal(v, before[k])

    def test_no_gradient_into_frozen(self, image_model):
        snap = clone_frozen(image_model)
        out = snap.generator(torch.randn(1, 3, 64, 64), torch.randn(1, 8))
        assert not out.requires_grad
        assert all(p.grad is None for p in snap.eg_parameters())


class TestInitDeterminism:
    def test_same_seed_same_params(self, image_cfg):
        a = build_model(image_cfg, seed=3).named_tensors()
        b = build_model(image_cfg, seed=3).named_tensors()
        assert all(torch.equal(a[k], b[k]) for k in a)

    def test_different_seed_differs(self, image_cfg):
        a = build_model(image_cfg, seed=3).named_tensors()
        b = build_model(image_cfg, seed=4).named_tensors()
        assert any(not torch.equal(a[k], b[k]) for k in a)


class TestArchive:
    def test_bit_exact_roundtrip(self, tmp_path, image_model):
        p = str(tmp_path / "m.cgar")
        save_archive(p, image_model.named_tensors(), {"kind": "model"})
        first = open(p, "rb").read()
        tensors, meta = load_archive(p)
        assert meta == {"kind": "model"}
        save_archive(p, {k: torch.from_numpy(v) for k, v in tensors.items()}, meta)
        assert open(p, "rb").read() == first
        for k, v in image_model.named_tensors().items():
            assert torch.equal(torch.from_numpy(tensors[k]), v)

    def test_corruption_detected(self, tmp_path, image_model):
        p = str(tmp_path / "m.cgar")
        save_archive(p, image_model.named_tensors(), {})
        blob = bytearray(open(p, "rb").read())
        blob[len(blob) // 2] ^= 0xFF
        open(p, "wb").write(bytes(blob))
        with pytest.raises(IntegrityError):
            load_archive(p)


class TestGradientsMatchFiniteDifferences:
    """Central finite differences on tiny double-precision copies.

    Float32 roundoff at step 1e-3 is the same order as the tolerance, so
    the comparison runs in float64 where the discretization error (~h^2)
    is the only contribution.
    """

    def _fd_check(self, params, loss_fn, n_probe=10, h=1e-4, tol=1e-3, seed=0):
        g = torch.Generator().manual_seed(seed)
        loss = loss_fn()
        loss.backward()
        checked = 0
        for p in params:
            if p.grad is None:
                continue
            flat = p.detach().view(-1)
            grad = p.grad.view(-1)
            for _ in range(max(1, n_probe // max(1, len(params)))):
                i = int(torch.randint(flat.numel(), (1,), generator=g))
                orig = flat[i].item()
                flat[i] = orig + h
                lp = loss_fn().item()
                flat[i] = orig - h
                lm = loss_fn().item()
                flat[i] = orig
                fd = (lp - lm) / (2 * h)
                an = grad[i].item()
                rel = abs(an - fd) / max(abs(an), abs(fd), 1e-3)
                assert rel < tol, f"grad mismatch: analytic={an} fd={fd} rel={rel}"
                checked += 1
        assert checked > 0

    def test_encoder(self, tiny_cfg):
        model = build_model(tiny_cfg, seed=1)
        model.encoder.double()
        img = torch.randn(2, 1, 8, 8, generator=torch.Generator().manual_seed(2)).double()
        probe = torch.randn(2, 2, generator=torch.Generator().manual_seed(3)).double()

        def loss_fn():
            mu, logvar = model.encoder(img)
            return (mu * probe).sum() + (logvar * probe).sum() * 0.5

        self._fd_check(list(model.encoder.parameters()), loss_fn)

    def test_generator(self, tiny_cfg):
        model = build_model(tiny_cfg, seed=1)
        model.generator.double()
        cond = torch.randn(2, 3, 8, 8, generator=torch.Generator().manual_seed(2)).double()
        z = torch.randn(2, 2, generator=torch.Generator().manual_seed(3)).double()
        probe = torch.randn(2, 1, 8, 8, generator=torch.Generator().manual_seed(4)).double()

        def loss_fn():
            return (model.generator(cond, z) * probe).sum()

        self._fd_check(list(model.generator.parameters()), loss_fn)

    def test_discriminator(self, tiny_cfg):
        model = build_model(tiny_cfg, seed=1)
        model.discriminator.double()
        cond = torch.randn(2, 3, 8, 8, generator=torch.Generator().manual_seed(2)).double()
        img = torch.randn(2, 1, 8, 8, generator=torch.Generator().manual_seed(3)).double()

        def loss_fn():
            return model.discriminator(cond, img).pow(2).sum()

        self._fd_check(list(model.discriminator.parameters()), loss_fn)
