import math

import numpy as np
import pytest
import torch

from relit.losses import (
    LossWeights,
    composite_loss,
    loss_cm,
    loss_final,
    loss_mask,
    loss_normal,
    loss_symm,
    loss_tv,
    masked_mismatch,
    mismatch,
)
from relit.ops import grad_check
from relit.scene import TEXTURE_SIZE


def rand_img(rng, h=16, w=16, c=3):
    return torch.tensor(rng.uniform(size=(h, w, c)), dtype=torch.float64)


class TestMismatch:
    def test_identical_images_zero(self):
        rng = np.random.default_rng(0)
        img = rand_img(rng)
        assert mismatch(img, img).item() == 0.0

    def test_constant_offset_hits_only_pooled_term(self):
        rng = np.random.default_rng(1)
        img = rand_img(rng)
        c = 0.125
        beta = 2500.0
        val = mismatch(img, img + c, beta=beta).item()
        assert val == pytest.approx(beta * c, rel=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        a, b = rand_img(rng), rand_img(rng)
        assert mismatch(a, b).item() == pytest.approx(mismatch(b, a).item(), rel=1e-12)

    def test_matches_scalar_reference(self):
        rng = np.random.default_rng(3)
        a, b = rand_img(rng, 12, 12), rand_img(rng, 12, 12)
        beta, k = 2500.0, 4

        def sobel_mag(img):
            kx = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=float)
            h, w, c = img.shape
            out = np.zeros((h - 2, w - 2, c))
            for ch in range(c):
                for i in range(h - 2):
                    for j in range(w - 2):
                        gx = (kx * img[i : i + 3, j : j + 3, ch]).sum()
                        gy = (kx.T * img[i : i + 3, j : j + 3, ch]).sum()
                        out[i, j, ch] = math.sqrt(gx * gx + gy * gy + 1e-12)
            return out

        def pool(img, k):
            h, w, c = img.shape
            return img[: h // k * k, : w // k * k].reshape(h // k, k, w // k, k, c).mean(axis=(1, 3))

        an, bn = a.numpy(), b.numpy()
        ref = 0.0
        xa, xb = an, bn
        for s in range(3):
            if s > 0:
                xa, xb = pool(xa, 2), pool(xb, 2)
            if min(xa.shape[:2]) < 3:
                break
            ref += np.abs(sobel_mag(xa) - sobel_mag(xb)).mean()
        ref += beta * np.abs(pool(an, k) - pool(bn, k)).mean()
        assert mismatch(a, b, beta=beta, pool_k=k).item() == pytest.approx(ref, rel=1e-9)

    def test_gradients(self):
        rng = np.random.default_rng(4)
        a, b = rand_img(rng, 8, 8), rand_img(rng, 8, 8)
        assert grad_check(lambda x, y: mismatch(x, y), [a, b]) < 1e-4

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            mismatch(torch.zeros(4, 4, 3), torch.zeros(5, 5, 3))


class TestLossFinal:
    def test_identical_zero(self):
        rng = np.random.default_rng(5)
        img = rand_img(rng)
        m = torch.ones(16, 16)
        assert loss_final(img, img, m, LossWeights()).item() == 0.0

    def test_background_corruption_ignored(self):
        rng = np.random.default_rng(6)
        img = rand_img(rng)
        target = img.clone()
        mask = torch.zeros(16, 16)
        mask[4:12, 4:12] = 1.0
        base = loss_final(img, target, mask, LossWeights()).item()
        corrupted = target.clone()
        corrupted[mask == 0] = 7.0
        after = loss_final(img, corrupted, mask, LossWeights()).item()
        assert base == after == 0.0
        # and with a non-trivial prediction too
        pred = rand_img(rng)
        b1 = loss_final(pred, target, mask, LossWeights()).item()
        b2 = loss_final(pred, corrupted, mask, LossWeights()).item()
        assert b1 == pytest.approx(b2, rel=1e-12)

    def test_matches_masked_mismatch(self):
        rng = np.random.default_rng(7)
        pred, target = rand_img(rng), rand_img(rng)
        mask = (torch.tensor(rng.uniform(size=(16, 16))) > 0.4).to(torch.float64)
        w = LossWeights()
        a = loss_final(pred, target, mask, w).item()
        b = masked_mismatch(pred, target, mask > 0.5, w.beta, w.pool_k).item()
        assert a == b


class TestLossMask:
    def test_equal_masks_zero(self):
        m = torch.zeros(10, 10)
        m[2:8, 2:8] = 1.0
        assert loss_mask(m, m).item() == pytest.approx(0.0, abs=1e-6)

    def test_disjoint_masks(self):
        a = torch.zeros(10, 10)
        b = torch.zeros(10, 10)
        a[:3, :3] = 1.0  # area 9
        b[5:8, 5:8] = 1.0  # area 9
        dice = 1.0 / (9 + 9 + 1)
        assert loss_mask(a, b).item() == pytest.approx(-math.log(dice), rel=1e-6)

    def test_half_coverage(self):
        gt = torch.zeros(8, 8)
        gt[:4, :] = 1.0  # area 32
        pred = torch.zeros(8, 8)
        pred[:2, :] = 1.0  # area 16, all inside gt
        dice = (2 * 16 + 1) / (16 + 32 + 1)
        assert loss_mask(pred, gt).item() == pytest.approx(-math.log(dice), rel=1e-6)

    def test_symmetric(self):
        rng = np.random.default_rng(8)
        a = torch.tensor(rng.uniform(size=(12, 12)))
        b = torch.tensor(rng.uniform(size=(12, 12)))
        assert loss_mask(a, b).item() == pytest.approx(loss_mask(b, a).item(), rel=1e-12)

    def test_gradients(self):
        rng = np.random.default_rng(9)
        a = torch.tensor(rng.uniform(0.1, 0.9, size=(6, 6)))
        b = torch.tensor(rng.uniform(0.1, 0.9, size=(6, 6)))
        assert grad_check(loss_mask, [a, b]) < 1e-4


class TestLossTV:
    def test_constant_zero(self):
        assert loss_tv(torch.full((8, 8), 0.4)).item() == 0.0

    def test_step_image_hand_value(self):
        img = torch.tensor([[0.0, 1.0], [0.0, 1.0]])
        assert loss_tv(img).item() == pytest.approx(0.5)

    def test_gradients(self):
        rng = np.random.default_rng(10)
        img = torch.tensor(rng.uniform(size=(7, 7)))
        assert grad_check(loss_tv, [img]) < 1e-4


def make_posmap(rng, h, w, coverage=0.7):
    """Posmap whose texels point at random in-view positions (rest invalid)."""
    pm = np.full((TEXTURE_SIZE, TEXTURE_SIZE, 2), -1e6, dtype=np.float64)
    valid = rng.uniform(size=(TEXTURE_SIZE, TEXTURE_SIZE)) < coverage
    pm[valid, 0] = rng.uniform(0, w - 1, size=int(valid.sum()))
    pm[valid, 1] = rng.uniform(0, h - 1, size=int(valid.sum()))
    return pm, valid


class TestLossSymm:
    def test_exact_match_zero(self):
        rng = np.random.default_rng(11)
        half = torch.tensor(rng.uniform(size=(TEXTURE_SIZE, 128, 3)), dtype=torch.float64)
        full = torch.cat([half, torch.flip(half, dims=[1])], dim=1)
        # an albedo image equal to the target texture sampled at integer posmap
        albedo = full  # pretend the "image" IS the texture plane, 256x256
        ys, xs = np.mgrid[0:TEXTURE_SIZE, 0:TEXTURE_SIZE]
        posmap = np.stack([xs, ys], axis=-1).astype(np.float64)
        w = LossWeights()
        assert loss_symm(albedo, posmap, half, w).item() == pytest.approx(0.0, abs=1e-12)

    def test_all_invalid_zero_loss_zero_grad(self):
        rng = np.random.default_rng(12)
        albedo = rand_img(rng, 16, 16).requires_grad_(True)
        posmap = np.full((TEXTURE_SIZE, TEXTURE_SIZE, 2), -1e6, dtype=np.float64)
        half = torch.tensor(rng.uniform(size=(TEXTURE_SIZE, 128, 3)))
        out = loss_symm(albedo, posmap, half, LossWeights())
        assert out.item() == 0.0
        out.backward()
        assert albedo.grad is None or torch.all(albedo.grad == 0)

    def test_matches_materialized_reference(self):
        rng = np.random.default_rng(13)
        albedo = rand_img(rng, 20, 20)
        posmap, _ = make_posmap(rng, 20, 20)
        half = torch.tensor(rng.uniform(size=(TEXTURE_SIZE, 128, 3)), dtype=torch.float64)
        w = LossWeights()
        got = loss_symm(albedo, posmap, half, w).item()

        from relit.ops import bilinear_sample

        sampled, valid = bilinear_sample(albedo, torch.from_numpy(posmap))
        target = torch.cat([half, torch.flip(half, dims=[1])], dim=1)
        ref = masked_mismatch(sampled, target, valid, w.beta, w.pool_k).item()
        assert got == ref


class TestLossCM:
    def _setup(self, rng, h=18, w=18):
        albedo = rand_img(rng, h, w)
        posmap, _ = make_posmap(rng, h, w)
        tf = torch.tensor(rng.uniform(size=(TEXTURE_SIZE, TEXTURE_SIZE, 3)), dtype=torch.float64)
        tf_valid = torch.tensor(rng.uniform(size=(TEXTURE_SIZE, TEXTURE_SIZE)) < 0.8)
        return albedo, posmap, tf, tf_valid

    def test_equal_textures_zero(self):
        rng = np.random.default_rng(14)
        albedo, posmap, tf, tf_valid = self._setup(rng)

        from relit.ops import bilinear_sample

        sampled, _ = bilinear_sample(albedo, torch.from_numpy(posmap))
        assert loss_cm(albedo, posmap, sampled, tf_valid).item() == 0.0

    def test_constant_offset_gives_offset(self):
        rng = np.random.default_rng(15)
        albedo, posmap, _, tf_valid = self._setup(rng)

        from relit.ops import bilinear_sample

        sampled, valid = bilinear_sample(albedo, torch.from_numpy(posmap))
        c = 0.07
        tf = sampled + c  # offset everywhere; invalid texels never compared
        tf = tf * valid.unsqueeze(-1) + c * (~valid).unsqueeze(-1)
        got = loss_cm(albedo, posmap, tf, tf_valid).item()
        assert got == pytest.approx(c, rel=1e-9)

    def test_matches_scalar_reference(self):
        rng = np.random.default_rng(16)
        albedo, posmap, tf, tf_valid = self._setup(rng)

        from relit.ops import bilinear_sample

        sampled, valid = bilinear_sample(albedo, torch.from_numpy(posmap))
        v = (valid & tf_valid).numpy()
        diff = np.abs(sampled.detach().numpy() - tf.numpy())[v]
        ref = diff.mean() if diff.size else 0.0
        got = loss_cm(albedo, posmap, tf, tf_valid).item()
        assert got == pytest.approx(ref, rel=1e-9)


class TestLossNormal:
    def test_equal_normals_zero(self):
        rng = np.random.default_rng(17)
        n = rand_img(rng)
        mask = torch.ones(16, 16)
        assert loss_normal(n, n, mask, LossWeights()).item() == 0.0

    def test_empty_face_mask_zero(self):
        rng = np.random.default_rng(18)
        a, b = rand_img(rng), rand_img(rng)
        assert loss_normal(a, b, torch.zeros(16, 16), LossWeights()).item() == 0.0

    def test_matches_masked_delta(self):
        rng = np.random.default_rng(19)
        a, b = rand_img(rng), rand_img(rng)
        mask = (torch.tensor(rng.uniform(size=(16, 16))) > 0.5).to(torch.float64)
        w = LossWeights()
        got = loss_normal(a, b, mask, w).item()
        ref = mismatch(a * mask.unsqueeze(-1), b * mask.unsqueeze(-1), w.beta, w.pool_k).item()
        assert got == ref


class TestNonnegativity:
    def test_every_loss_is_nonnegative_on_random_inputs(self):
        rng = np.random.default_rng(30)
        w = LossWeights()
        for _ in range(5):
            a, b = rand_img(rng), rand_img(rng)
            m = torch.tensor(rng.uniform(size=(16, 16)))
            posmap, _ = make_posmap(rng, 16, 16)
            half = torch.tensor(rng.uniform(size=(TEXTURE_SIZE, 128, 3)))
            tf = torch.tensor(rng.uniform(size=(TEXTURE_SIZE, TEXTURE_SIZE, 3)))
            tf_valid = torch.tensor(rng.uniform(size=(TEXTURE_SIZE, TEXTURE_SIZE)) < 0.5)
            assert mismatch(a, b).item() >= 0
            assert loss_final(a, b, m, w).item() >= 0
            assert loss_mask(m, 1 - m).item() >= 0
            assert loss_tv(m).item() >= 0
            assert loss_symm(a, posmap, half, w).item() >= 0
            assert loss_cm(a, posmap, tf, tf_valid).item() >= 0
            assert loss_normal(a, b, m, w).item() >= 0


class TestComposite:
    def test_all_zero(self):
        z = torch.zeros(())
        total, report = composite_loss(z, z, z, z, z, z, LossWeights())
        assert total.item() == 0.0
        assert report.total == 0.0

    def test_mask_weight_is_1000(self):
        z = torch.zeros(())
        total, report = composite_loss(z, z, z, z, z, torch.tensor(0.1), LossWeights())
        assert total.item() == pytest.approx(100.0)
        assert report.mask == pytest.approx(0.1)

    def test_paper_weighting(self):
        rng = np.random.default_rng(20)
        terms = [torch.tensor(v) for v in rng.uniform(size=6)]
        w = LossWeights()
        total, report = composite_loss(*terms, w)
        expected = (
            terms[0] + 0.1 * terms[1] + 0.02 * terms[2] + 100.0 * terms[3]
            + 50.0 * terms[4] + 1000.0 * terms[5]
        ).item()
        assert total.item() == pytest.approx(expected, abs=1e-9)
        assert report.total == pytest.approx(
            report.final + 0.1 * report.normal + 0.02 * report.symm
            + 100.0 * report.cm + 50.0 * report.tv + 1000.0 * report.mask,
            abs=1e-6,
        )

    def test_default_weights_match_publication(self):
        w = LossWeights()
        assert (w.normal, w.symm, w.cm, w.tv, w.mask) == (0.1, 0.02, 100.0, 50.0, 1000.0)
        assert w.beta == 2500.0
        assert w.pool_k == 4

    def test_composite_gradients_flow_to_all_heads(self):
        rng = np.random.default_rng(21)
        albedo = rand_img(rng, 16, 16)
        shadow = torch.tensor(rng.uniform(0.2, 0.8, size=(16, 16)))
        normals = rand_img(rng, 16, 16)
        m_pred = torch.tensor(rng.uniform(0.1, 0.9, size=(16, 16)))
        tex = torch.tensor(rng.uniform(size=(TEXTURE_SIZE, 128, 3)))
        target = rand_img(rng, 16, 16)
        tmask = torch.ones(16, 16)
        posmap, _ = make_posmap(rng, 16, 16, coverage=0.5)
        n_gt = rand_img(rng, 16, 16)
        fmask = torch.ones(16, 16)
        tf = torch.tensor(rng.uniform(size=(TEXTURE_SIZE, TEXTURE_SIZE, 3)))
        tf_valid = torch.ones(TEXTURE_SIZE, TEXTURE_SIZE, dtype=torch.bool)
        w = LossWeights()

        def f(albedo, shadow, normals, m_pred, tex):
            rendered = albedo * 0.8 * shadow.unsqueeze(-1)
            total, _ = composite_loss(
                loss_final(rendered, target, tmask, w),
                loss_normal(normals, n_gt, fmask, w),
                loss_symm(albedo, posmap, tex, w),
                loss_cm(albedo, posmap, tf, tf_valid),
                loss_tv(shadow),
                loss_mask(m_pred, tmask),
                w,
            )
            return total

        err = grad_check(f, [albedo, shadow, normals, m_pred, tex], eps=1e-6, max_probe=40)
        assert err < 1e-4
