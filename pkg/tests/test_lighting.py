import math

import numpy as np
import pytest
import torch

from relit.lighting import (
    AdditionalPoint,
    C4,
    DirectionalAmbient,
    SphericalHarmonics,
    compose_original,
    project_env_to_sh,
    relight_additional_point,
    relight_directional,
    relight_sh,
    sh_basis,
    sh_coefficients_for_directional,
    sh_irradiance,
    sh_matrix,
)
from relit.network import HeadMaps
from relit.ops import grad_check
from relit.scene import LightColors


def make_heads(rng, h=6, w=7, dtype=torch.float64):
    albedo = torch.tensor(rng.uniform(0.05, 0.95, size=(h, w, 3)), dtype=dtype)
    n = rng.normal(size=(h, w, 3))
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    return HeadMaps(
        albedo=albedo,
        normals=torch.tensor(n, dtype=dtype),
        shadow=torch.tensor(rng.uniform(0.1, 0.9, size=(h, w)), dtype=dtype),
        mask=torch.tensor(rng.uniform(size=(h, w)), dtype=dtype),
    )


def uniform_heads(albedo, shadow, normal, h=4, w=4):
    n = torch.tensor(normal, dtype=torch.float64).expand(h, w, 3)
    return HeadMaps(
        albedo=torch.full((h, w, 3), albedo, dtype=torch.float64),
        normals=n,
        shadow=torch.full((h, w), shadow, dtype=torch.float64),
        mask=torch.ones(h, w, dtype=torch.float64),
    )


class TestComposeOriginal:
    def test_direct_substitution(self):
        # A=1, S=0.5, C_room=C_flash=1, d=2, N=-w_o -> 0.5 + 0.25
        heads = uniform_heads(1.0, 0.5, [0.0, 0.0, -1.0])
        lights = LightColors(np.ones(3), np.ones(3))
        img = compose_original(heads, lights, flash=True, distance=2.0, view_dir=[0, 0, 1])
        assert torch.allclose(img, torch.full_like(img, 0.75))

    def test_no_flash_ignores_normals_and_distance(self):
        rng = np.random.default_rng(0)
        heads = make_heads(rng)
        lights = LightColors([0.9, 0.8, 0.7], [2.0, 2.0, 2.0])
        a = compose_original(heads, lights, flash=False, distance=1.0, view_dir=[0, 0, 1])
        b = compose_original(heads, lights, flash=False, distance=9.0, view_dir=[1, 0, 0])
        expected = heads.albedo * torch.tensor([0.9, 0.8, 0.7], dtype=torch.float64) * heads.shadow.unsqueeze(-1)
        assert torch.allclose(a, b)
        assert torch.allclose(a, expected)

    def test_matches_scalar_reference_and_grads(self):
        rng = np.random.default_rng(1)
        heads = make_heads(rng, 4, 5)
        c_room = rng.uniform(0.2, 1.0, 3)
        c_flash = rng.uniform(0.5, 3.0, 3)
        lights = LightColors(c_room, c_flash)
        d = 1.7
        w_o = np.array([0.2, -0.3, 0.93])
        w_o /= np.linalg.norm(w_o)
        img = compose_original(heads, lights, True, d, w_o).numpy()
        for i in range(4):
            for j in range(5):
                cos = max(float(-(heads.normals[i, j].numpy() * w_o).sum()), 0.0)
                for c in range(3):
                    # reference against the stored float32 light colors
                    ref = (
                        heads.albedo[i, j, c].item() * float(lights.c_room[c]) * heads.shadow[i, j].item()
                        + heads.albedo[i, j, c].item() * float(lights.c_flash[c]) / d**2 * cos
                    )
                    assert img[i, j, c] == pytest.approx(ref, rel=1e-12)

        def f(albedo, shadow, normals, cr, cf):
            h = HeadMaps(albedo=albedo, normals=normals, shadow=shadow, mask=heads.mask)
            from relit.lighting import compose

            return compose(h, cr, cf, True, d, w_o).square().sum()

        err = grad_check(
            f,
            [heads.albedo, heads.shadow, heads.normals,
             torch.tensor(c_room), torch.tensor(c_flash)],
        )
        assert err < 1e-4

    def test_flash_distance_must_be_positive(self):
        heads = uniform_heads(1.0, 0.5, [0, 0, -1])
        lights = LightColors(np.ones(3), np.ones(3))
        with pytest.raises(ValueError):
            compose_original(heads, lights, True, 0.0, [0, 0, 1])

    def test_linear_in_albedo(self):
        rng = np.random.default_rng(2)
        heads = make_heads(rng)
        lights = LightColors([0.5, 0.6, 0.7], [1.0, 1.2, 1.4])
        args = dict(flash=True, distance=2.0, view_dir=[0, 0, 1])
        base = compose_original(heads, lights, **args)
        heads2 = HeadMaps(heads.albedo * 3.0, heads.normals, heads.shadow, heads.mask)
        assert torch.allclose(compose_original(heads2, lights, **args), 3.0 * base)

    @pytest.mark.parametrize("k", [0.1, 1.0, 10.0])
    def test_scale_ambiguity(self, k):
        rng = np.random.default_rng(3)
        heads = make_heads(rng)
        c_room = rng.uniform(0.2, 1.0, 3)
        c_flash = rng.uniform(0.5, 3.0, 3)
        base = compose_original(
            heads, LightColors(c_room, c_flash), True, 2.0, [0, 0, 1]
        )
        heads_k = HeadMaps(heads.albedo / k, heads.normals, heads.shadow, heads.mask)
        scaled = compose_original(
            heads_k, LightColors(k * c_room, k * c_flash), True, 2.0, [0, 0, 1]
        )
        assert (base - scaled).abs().max() < 1e-6


class TestRelightDirectional:
    def test_full_ambient_is_albedo_matte(self):
        rng = np.random.default_rng(4)
        heads = make_heads(rng)
        out = relight_directional(heads, [0, 0, 1], 1.0, [1, 1, 1])
        assert torch.allclose(out, heads.albedo)

    def test_frontal_light_recovers_albedo(self):
        heads = uniform_heads(0.6, 0.5, [0.0, 0.0, -1.0])
        out = relight_directional(heads, [0, 0, 1], 0.0, [1, 1, 1])
        assert torch.allclose(out, heads.albedo)

    def test_backlight_clamps_to_ambient(self):
        heads = uniform_heads(0.8, 0.5, [0.0, 0.0, -1.0])
        out = relight_directional(heads, [0, 0, -1], 0.5, [1, 1, 1])
        assert torch.allclose(out, 0.5 * heads.albedo)

    def test_nonnegative(self):
        rng = np.random.default_rng(5)
        heads = make_heads(rng)
        out = relight_directional(heads, [0, 1, 0], 0.0, [1.0, 0.5, 0.25])
        assert (out >= 0).all()


class TestRelightAdditionalPoint:
    def test_inverse_square(self):
        rng = np.random.default_rng(6)
        heads = make_heads(rng)
        lights = LightColors([0.4, 0.4, 0.4], [1, 1, 1])
        near = relight_additional_point(
            heads, lights, AdditionalPoint(direction=[0, 0, 1], distance=1.0)
        )
        far = relight_additional_point(
            heads, lights, AdditionalPoint(direction=[0, 0, 1], distance=2.0)
        )
        room = compose_original(heads, lights, False, 1.0, [0, 0, 1])
        assert torch.allclose(far - room, (near - room) / 4.0, atol=1e-12)

    def test_zero_color_equals_room_only(self):
        rng = np.random.default_rng(7)
        heads = make_heads(rng)
        lights = LightColors([0.5, 0.6, 0.7], [2, 2, 2])
        out = relight_additional_point(
            heads, lights, AdditionalPoint(direction=[0, 1, 0], distance=1.0, color=[0, 0, 0])
        )
        assert torch.allclose(out, compose_original(heads, lights, False, 1.0, [0, 0, 1]))

    def test_matches_scalar_reference(self):
        rng = np.random.default_rng(8)
        heads = make_heads(rng, 3, 3)
        lights = LightColors([0.3, 0.4, 0.5], [1, 1, 1])
        spec = AdditionalPoint(direction=[0.6, 0.0, 0.8], distance=1.5, color=[2.0, 1.0, 0.5])
        out = relight_additional_point(heads, lights, spec).numpy()
        for i in range(3):
            for j in range(3):
                cos = max(float(-(heads.normals[i, j].numpy() * spec.direction).sum()), 0.0)
                for c in range(3):
                    ref = heads.albedo[i, j, c].item() * (
                        lights.c_room[c] * heads.shadow[i, j].item()
                        + spec.color[c] / spec.distance**2 * cos
                    )
                    assert out[i, j, c] == pytest.approx(ref, rel=1e-6)

    def test_invalid_distance_rejected(self):
        with pytest.raises(ValueError):
            AdditionalPoint(direction=[0, 0, 1], distance=0.0)


def hemisphere_irradiance(radiance_fn, normal, n_samples=10_000, seed=0):
    """Monte-Carlo reference: integrate clamped-cosine-weighted radiance."""
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n_samples, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    vals = radiance_fn(dirs)  # (n, 3)
    cos = np.clip(dirs @ normal, 0.0, None)
    # E = (1/N) * 4*pi * mean(radiance * cos+) over the full sphere
    return 4 * np.pi * (vals * cos[:, None]).mean(axis=0)


class TestSHMatrix:
    def test_zero_coefficients_black(self):
        m = sh_matrix(np.zeros(27))
        assert np.all(m == 0)
        rng = np.random.default_rng(9)
        heads = make_heads(rng)
        out = relight_sh(heads, np.zeros(27))
        assert torch.all(out == 0)

    def test_dc_only_constant_for_any_normal(self):
        v = 0.8
        coeffs = np.zeros(27)
        coeffs[[0, 9, 18]] = v
        m = sh_matrix(coeffs)
        rng = np.random.default_rng(10)
        normals = rng.normal(size=(100, 3))
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        irr = sh_irradiance(normals, m)
        assert np.abs(irr - C4 * v).max() < 1e-6

    def test_wrong_count_rejected(self):
        with pytest.raises(ValueError):
            sh_matrix(np.zeros(26))
        with pytest.raises(ValueError):
            SphericalHarmonics(coefficients=np.zeros(26))

    def test_linear_in_coefficients(self):
        rng = np.random.default_rng(11)
        a = rng.normal(size=27)
        b = rng.normal(size=27)
        assert np.allclose(sh_matrix(2 * a - 3 * b), 2 * sh_matrix(a) - 3 * sh_matrix(b))

    def test_symmetric(self):
        rng = np.random.default_rng(12)
        m = sh_matrix(rng.normal(size=27))
        for c in range(3):
            assert np.abs(m[c] - m[c].T).max() < 1e-9

    def test_directional_light_matches_hemisphere_quadrature(self):
        rng = np.random.default_rng(13)
        worst = 0.0
        for _ in range(3):
            light_dir = rng.normal(size=3)
            light_dir /= np.linalg.norm(light_dir)
            coeffs = sh_coefficients_for_directional(light_dir)
            m = sh_matrix(coeffs)
            # bin normals by angle to the light; reference is the exact clamped cosine
            angles = np.linspace(0, math.pi, 13)
            us = np.cos(angles)
            normals = []
            perp = np.cross(light_dir, [0.3, 0.9, 0.1])
            perp /= np.linalg.norm(perp)
            for u in us:
                normals.append(u * light_dir + math.sqrt(max(0, 1 - u * u)) * perp)
            normals = np.array(normals)
            approx = sh_irradiance(normals, m)[:, 0]
            exact = np.clip(us, 0, None)
            peak = exact.max()
            worst = max(worst, np.abs(approx - exact).max() / peak)
        assert worst <= 0.10

    def test_smooth_env_matches_quadrature_within_10_percent(self):
        rng = np.random.default_rng(14)

        def radiance(dirs):
            base = 0.6 + 0.4 * dirs[:, 2] + 0.2 * dirs[:, 0]
            return np.stack([base, 0.8 * base, 0.9 * base], axis=1)

        coeffs = project_env_to_sh(radiance)
        m = sh_matrix(coeffs)
        for _ in range(5):
            n = rng.normal(size=3)
            n /= np.linalg.norm(n)
            approx = sh_irradiance(n[None], m)[0]
            exact = hemisphere_irradiance(radiance, n)
            assert np.abs(approx - exact).max() <= 0.10 * np.abs(exact).max()


class TestRelightSH:
    def test_dc_only_flat_shading(self):
        rng = np.random.default_rng(15)
        heads = make_heads(rng)
        v = 0.5
        coeffs = np.zeros(27)
        coeffs[[0, 9, 18]] = v
        out = relight_sh(heads, coeffs)
        assert torch.allclose(out, heads.albedo * (C4 * v), atol=1e-6)

    def test_matches_scalar_quadratic_form(self):
        rng = np.random.default_rng(16)
        heads = make_heads(rng, 3, 4)
        coeffs = rng.normal(size=27)
        m = sh_matrix(coeffs)
        out = relight_sh(heads, coeffs).numpy()
        for i in range(3):
            for j in range(4):
                hvec = np.append(heads.normals[i, j].numpy(), 1.0)
                for c in range(3):
                    q = max(float(hvec @ m[c] @ hvec), 0.0)
                    ref = heads.albedo[i, j, c].item() * q
                    assert out[i, j, c] == pytest.approx(ref, rel=1e-9, abs=1e-12)

    def test_nonnegative(self):
        rng = np.random.default_rng(17)
        heads = make_heads(rng)
        out = relight_sh(heads, rng.normal(size=27))
        assert (out >= 0).all()


class TestProjectEnv:
    def test_constant_radiance_dc_only(self):
        c = np.array([0.7, 0.5, 0.3])
        coeffs = project_env_to_sh(lambda dirs: np.tile(c, (len(dirs), 1)))
        expected_dc = 2 * math.sqrt(math.pi)
        for ch in range(3):
            block = coeffs[9 * ch : 9 * ch + 9]
            assert block[0] == pytest.approx(expected_dc * c[ch], rel=1e-9)
            assert np.abs(block[1:]).max() < 1e-9

    def test_basis_function_projects_to_itself(self):
        def radiance(dirs):
            y10 = sh_basis(dirs)[:, 2]
            return np.stack([y10, y10, y10], axis=1)

        coeffs = project_env_to_sh(radiance)
        block = coeffs[:9]
        assert block[2] == pytest.approx(1.0, abs=1e-3)
        others = np.delete(block, 2)
        assert np.abs(others).max() < 1e-3

    def test_panorama_grid_matches_callable(self):
        def radiance(dirs):
            base = 0.5 + 0.3 * dirs[:, 1] - 0.2 * dirs[:, 0] * dirs[:, 2]
            return np.stack([base, base * 0.9, base * 1.1], axis=1)

        h, w = 64, 128
        theta = (np.arange(h) + 0.5) * (np.pi / h)
        phi = (np.arange(w) + 0.5) * (2 * np.pi / w)
        tt, pp = np.meshgrid(theta, phi, indexing="ij")
        dirs = np.stack(
            [np.sin(tt) * np.cos(pp), np.sin(tt) * np.sin(pp), np.cos(tt)], axis=-1
        ).reshape(-1, 3)
        grid = radiance(dirs).reshape(h, w, 3)
        a = project_env_to_sh(radiance)
        b = project_env_to_sh(grid)
        assert np.abs(a - b).max() < 1e-3

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            project_env_to_sh(lambda dirs: np.full((len(dirs), 3), np.nan))


class TestLightingSpecValidation:
    def test_direction_must_be_unit(self):
        with pytest.raises(ValueError):
            DirectionalAmbient(direction=[0, 0, 2], ambient=0.5)

    def test_ambient_range(self):
        with pytest.raises(ValueError):
            DirectionalAmbient(direction=[0, 0, 1], ambient=1.5)
