"""Torch ops parity with numpy, denoiser layout, encoders, and losses."""

import numpy as np
import pytest
import torch

from motionfill.diffusion import fit_normalizer
from motionfill.kinematics import MotionSequence, PoseParams, forward_kinematics, pose_pack
from motionfill.nn import (
    Denoiser,
    DenoiserConfig,
    GridEncoder,
    LocalBPSEmbed,
    fk_positions,
    matrix_from_rot6d,
    rot6d_from_matrix,
    timestep_embedding,
    training_losses,
)
from motionfill.nn.encoders import PATCH
from motionfill.nn.unet import parameter_count
from motionfill.rotations import axis_angle_to_matrix, matrix_to_rot6d, rot6d_to_matrix
from motionfill.skeleton import canonical_skeleton, rest_joints

SKEL = canonical_skeleton()


def random_rot6d(rng, shape):
    axes = rng.standard_normal(shape + (3,))
    angles = rng.uniform(-np.pi, np.pi, size=shape)
    return matrix_to_rot6d(axis_angle_to_matrix(axes, angles))


def random_features(rng, n, scale=0.3):
    """FK-consistent feature windows with bounded random joint rotations."""
    rows = []
    for _ in range(n):
        pose = PoseParams(
            gamma=rng.standard_normal(3) * 0.1 + np.array([0.0, 0.9, 0.0]),
            phi=random_rot6d(rng, ()),
            psi=matrix_to_rot6d(
                axis_angle_to_matrix(
                    rng.standard_normal((21, 3)), rng.uniform(-scale, scale, size=21)
                )
            ),
        )
        rows.append(pose_pack(pose, forward_kinematics(pose, SKEL)))
    return np.stack(rows)


# ---------------------------------------------------------------------------
# torch rotation / FK parity


def test_rot6d_decode_matches_numpy():
    rng = np.random.default_rng(0)
    r6 = random_rot6d(rng, (50,)) + rng.standard_normal((50, 6)) * 0.2
    want = np.stack([rot6d_to_matrix(r) for r in r6])
    got = matrix_from_rot6d(torch.as_tensor(r6)).numpy()
    assert np.max(np.abs(got - want)) < 1e-12


def test_rot6d_decode_degenerate_fallback():
    bad = torch.zeros(3, 6, dtype=torch.float64)
    bad[1] = torch.tensor([1.0, 0, 0, 2.0, 0, 0])  # parallel pair
    bad[2] = torch.tensor([1.0, 0, 0, 0, 1.0, 0])  # valid
    counter = [0]
    out = matrix_from_rot6d(bad, counter)
    assert counter[0] == 2
    assert torch.allclose(out[0], torch.eye(3, dtype=torch.float64))
    assert torch.allclose(out[1], torch.eye(3, dtype=torch.float64))
    assert torch.allclose(out[2], torch.eye(3, dtype=torch.float64))


def test_rot6d_encode_matches_numpy():
    rng = np.random.default_rng(1)
    m = axis_angle_to_matrix(rng.standard_normal((20, 3)), rng.uniform(-3, 3, size=20))
    got = rot6d_from_matrix(torch.as_tensor(m)).numpy()
    assert np.max(np.abs(got - matrix_to_rot6d(m))) < 1e-15


def test_fk_positions_matches_numpy():
    rng = np.random.default_rng(2)
    pose = PoseParams(
        gamma=rng.standard_normal((4, 3)),
        phi=random_rot6d(rng, (4,)),
        psi=random_rot6d(rng, (4, 21)),
    )
    want = forward_kinematics(pose, SKEL)
    got = fk_positions(
        torch.as_tensor(pose.gamma),
        torch.as_tensor(pose.phi),
        torch.as_tensor(pose.psi),
        SKEL,
    ).numpy()
    assert np.max(np.abs(got - want)) < 1e-9


def test_fk_positions_gradients_finite_with_fallback():
    rng = np.random.default_rng(3)
    gamma = torch.as_tensor(rng.standard_normal((2, 3))).requires_grad_(True)
    phi = torch.as_tensor(random_rot6d(rng, (2,))).requires_grad_(True)
    psi_np = random_rot6d(rng, (2, 21))
    psi_np[0, 5] = 0.0  # degenerate row exercises the identity fallback
    psi = torch.as_tensor(psi_np).requires_grad_(True)
    counter = [0]
    fk_positions(gamma, phi, psi, SKEL, counter).sum().backward()
    assert counter[0] == 1
    for g in (gamma.grad, phi.grad, psi.grad):
        assert torch.isfinite(g).all()


def test_timestep_embedding_basic():
    t = torch.tensor([0, 1, 500])
    emb = timestep_embedding(t, 64)
    assert emb.shape == (3, 64)
    assert not torch.allclose(emb[1], emb[2])
    again = timestep_embedding(torch.tensor([1]), 64)
    assert torch.equal(emb[1], again[0])


# ---------------------------------------------------------------------------
# denoiser


def tiny_cfg():
    return DenoiserConfig(width=32, mults=(1, 2))


def denoiser_inputs(rng, b, n, cfg, dtype=torch.float64):
    def t(a):
        return torch.as_tensor(a, dtype=dtype)

    x = t(rng.standard_normal((b, n, cfg.feature_dim)))
    local = t(rng.standard_normal((b, n, cfg.local_dim)))
    mask = torch.zeros(b, n, dtype=dtype)
    mask[:, 0] = 1.0
    mask[:, -1] = 1.0
    step = torch.full((b,), 17, dtype=torch.long)
    shape = t(rng.standard_normal((b, cfg.shape_dim)))
    c_g = t(rng.standard_normal((b, cfg.scene_dim)))
    return x, local, mask, step, shape, c_g


@pytest.mark.parametrize("n", [121, 60])
def test_denoiser_output_shape(n):
    cfg = tiny_cfg()
    model = Denoiser(cfg).double().eval()
    rng = np.random.default_rng(4)
    out = model(*denoiser_inputs(rng, 2, n, cfg))
    assert out.shape == (2, n, cfg.feature_dim)
    assert torch.isfinite(out).all()


def test_denoiser_eval_deterministic():
    cfg = tiny_cfg()
    model = Denoiser(cfg).double().eval()
    rng = np.random.default_rng(5)
    inputs = denoiser_inputs(rng, 1, 121, cfg)
    with torch.no_grad():
        assert torch.equal(model(*inputs), model(*inputs))


def test_token_assembly_layout():
    cfg = tiny_cfg()
    model = Denoiser(cfg).double().eval()
    rng = np.random.default_rng(6)
    x, local, mask, step, shape, c_g = denoiser_inputs(rng, 1, 121, cfg)
    tokens = model.assemble_tokens(x, local, mask, step, shape, c_g)
    assert tokens.shape == (1, 123, cfg.width)

    # changing t adds the same delta to every token
    t2 = torch.full((1,), 900, dtype=torch.long)
    delta = model.assemble_tokens(x, local, mask, t2, shape, c_g) - tokens
    assert torch.max(torch.abs(delta - delta[:, :1])) < 1e-12

    # swapping the global scene code touches only token 1
    other = model.assemble_tokens(x, local, mask, step, shape, torch.zeros_like(c_g))
    diff = (other - tokens).abs().amax(dim=-1)[0]
    assert diff[1] > 0
    assert torch.all(diff[torch.arange(123) != 1] == 0)


def test_default_parameter_count_recorded():
    total = (
        parameter_count(Denoiser(DenoiserConfig()))
        + parameter_count(GridEncoder())
        + parameter_count(LocalBPSEmbed())
    )
    print(f"default config parameter count: {total / 1e6:.2f}M")
    assert 1_000_000 <= total <= 30_000_000


# ---------------------------------------------------------------------------
# encoders


def test_patchify_one_hot_layout():
    grid = torch.zeros(1, 48, 24, 48)
    x, y, z = 13, 8, 31
    grid[0, x, y, z] = 1.0
    patched = GridEncoder.patchify(grid)
    assert patched.shape == (1, 256, PATCH**3)
    token = ((x // PATCH) * 4 + y // PATCH) * 8 + z // PATCH
    inner = ((x % PATCH) * PATCH + y % PATCH) * PATCH + z % PATCH
    assert patched[0, token, inner] == 1.0
    assert patched.sum() == 1.0


def test_grid_encoder_forward():
    enc = GridEncoder(width=64, layers=2, heads=4, out_dim=512).eval()
    grids = torch.rand(2, 48, 24, 48) > 0.9
    with torch.no_grad():
        out = enc(grids.float())
        assert out.shape == (2, 512)
        assert torch.equal(out, enc(grids.float()))
    null = enc.null_embedding(3)
    assert null.shape == (3, 512)
    assert torch.equal(null[0], null[2])
    assert enc.null.requires_grad


def test_local_embed_zero_rows_constant():
    emb = LocalBPSEmbed(in_dim=192, width=64).eval()
    c = torch.randn(1, 10, 192)
    c[0, 3] = 0.0
    c[0, 7] = 0.0
    out = emb(c)
    assert out.shape == (1, 10, 64)
    assert torch.equal(out[0, 3], out[0, 7])


# ---------------------------------------------------------------------------
# losses


def test_losses_zero_at_identity():
    rng = np.random.default_rng(7)
    x0 = torch.as_tensor(random_features(rng, 6))[None]
    loss, ls, lj, lv = training_losses(x0, x0.clone(), SKEL)
    assert float(loss) == 0.0 and float(ls) == 0.0 and float(lj) == 0.0 and float(lv) == 0.0


def test_losses_constant_shift():
    rng = np.random.default_rng(8)
    x0 = torch.as_tensor(random_features(rng, 5))[None]
    c = torch.tensor([0.03, -0.01, 0.02], dtype=torch.float64)
    shifted = x0.clone()
    shifted[..., 66:69] += c
    shifted[..., :66] += c.repeat(22)
    loss, ls, lj, lv = training_losses(x0, shifted, SKEL)
    assert abs(float(lj) - float((c**2).sum())) < 1e-12
    assert float(lv) < 1e-24
    assert float(loss) > 0


def test_losses_monotone_in_residual_scale():
    rng = np.random.default_rng(9)
    x0 = torch.as_tensor(random_features(rng, 4))[None]
    d = torch.as_tensor(rng.standard_normal(tuple(x0.shape)))
    vals = []
    for s in (1e-3, 2e-3, 4e-3):
        vals.append(float(training_losses(x0, x0 + s * d, SKEL)[0]))
    assert vals[0] < vals[1] < vals[2]


def test_losses_stored_joint_source():
    rng = np.random.default_rng(10)
    x0 = torch.as_tensor(random_features(rng, 4))[None]
    hat = x0.clone()
    hat[..., :66] += 0.01
    loss_fk = training_losses(x0, hat, SKEL, joints_source="fk")
    loss_st = training_losses(x0, hat, SKEL, joints_source="stored")
    assert float(loss_fk[2]) == 0.0  # parameter blocks untouched
    assert abs(float(loss_st[2]) - 3 * 0.01**2) < 1e-12
    with pytest.raises(ValueError):
        training_losses(x0, hat, SKEL, joints_source="nope")


def test_losses_normalized_space():
    rng = np.random.default_rng(11)
    feats = random_features(rng, 8)
    norm = fit_normalizer(feats)
    x0 = torch.as_tensor(norm.apply(feats))[None]
    hat = x0 + 0.01
    loss, ls, lj, lv = training_losses(x0, hat, SKEL, normalizer=norm)
    assert abs(float(ls) - 0.01**2) < 1e-12
    # denormalized gamma shift varies per channel, so FK terms are nonzero
    assert float(lj) > 0


def test_losses_fallback_counter():
    rng = np.random.default_rng(12)
    x0 = torch.as_tensor(random_features(rng, 3))[None]
    hat = x0.clone()
    hat[0, 1, 75:81] = 0.0  # zero 6D block in psi
    counter = [0]
    training_losses(x0, hat, SKEL, fallback_counter=counter)
    assert counter[0] == 1


def test_loss_gradient_matches_finite_differences():
    torch.manual_seed(13)
    rng = np.random.default_rng(13)
    base = torch.as_tensor(random_features(rng, 4))[None]
    z = torch.as_tensor(rng.standard_normal((1, 4, 5)))
    net = torch.nn.Linear(5, 201).double()

    def compute_loss():
        return training_losses(base, base + 0.01 * net(z), SKEL)[0]

    loss = compute_loss()
    loss.backward()
    grad = net.weight.grad.clone()

    h = 1e-6
    idx = [(int(i), int(j)) for i, j in zip(
        rng.integers(0, 201, size=30), rng.integers(0, 5, size=30)
    )]
    worst = 0.0
    for i, j in idx:
        with torch.no_grad():
            net.weight[i, j] += h
            up = float(compute_loss())
            net.weight[i, j] -= 2 * h
            down = float(compute_loss())
            net.weight[i, j] += h
        fd = (up - down) / (2 * h)
        denom = max(abs(fd), abs(float(grad[i, j])), 1e-8)
        worst = max(worst, abs(fd - float(grad[i, j])) / denom)
    assert worst < 1e-4
