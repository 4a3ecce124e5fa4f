"""Builders for on-disk synthetic datasets and small networks."""
import json
from pathlib import Path

import numpy as np

from rlattention.imaging import frame_filename, write_png, write_raw_tensor
from rlattention.netforward import Network, NetworkWeights, build_spec, random_weights


def textured_frame(seed: int, size=(210, 160), channels=3) -> np.ndarray:
    rng = np.random.default_rng(seed)
    h, w = size
    base = rng.integers(0, 256, size=(h // 10 + 1, w // 10 + 1, channels)).astype(np.uint8)
    img = np.kron(base, np.ones((10, 10, 1), dtype=np.uint8))[:h, :w]
    return img[..., 0] if channels == 1 else img


def write_episode(
    root,
    name: str,
    n_frames: int = 10,
    lives=None,
    gaze_every: int = 1,
    size=(210, 160),
    archive: str = "png",
    seed: int = 0,
    meta: dict | None = None,
) -> Path:
    """Write one episode directory; returns its path."""
    directory = Path(root) / name
    directory.mkdir(parents=True, exist_ok=True)
    lives = list(lives) if lives is not None else [3] * n_frames
    frames = [textured_frame(seed * 1000 + k, size) for k in range(n_frames)]
    if archive == "png":
        (directory / "frames").mkdir(exist_ok=True)
        for k, img in enumerate(frames):
            write_png(directory / "frames" / frame_filename(k), img)
    else:
        write_raw_tensor(directory / "frames.atnb", np.stack(frames))
    h, w = size
    rng = np.random.default_rng(seed + 17)
    score = 0.0
    with open(directory / "log.jsonl", "w", encoding="utf-8") as fh:
        for k in range(n_frames):
            reward = float(k % 3 == 0)
            score += reward
            gaze = []
            if gaze_every and k % gaze_every == 0:
                gaze = [[float(rng.uniform(0, w)), float(rng.uniform(0, h))] for _ in range(3)]
            row = {"frame": k, "action": k % 4, "reward": reward, "lives": lives[k], "score": score, "gaze": gaze}
            fh.write(json.dumps(row) + "\n")
    info = {"game": "synthetic", "seed": seed, "gamma": 0.99, "timestep": 1000, "final_score": score}
    info.update(meta or {})
    (directory / "meta.json").write_text(json.dumps(info), encoding="utf-8")
    return directory


def tiny_policy(n_actions: int = 3, seed: int = 0, input_shape=(4, 84, 84)) -> Network:
    spec = build_spec(
        input_shape,
        "action_distribution",
        [
            {"kind": "conv", "filters": 4, "kernel": 8, "stride": 4},
            {"kind": "relu"},
            {"kind": "flatten"},
            {"kind": "dense", "units": n_actions},
            {"kind": "softmax_vector"},
        ],
    )
    return Network(spec, random_weights(spec, seed))


def pixel_sensitive_net(pixel=(40, 40), shape=(84, 84), gain: float = 4.0) -> Network:
    """Two-way softmax whose first logit is ``gain`` times one pixel of the last frame.

    The second logit is a constant distractor (zero), so the output depends on
    exactly one input pixel.
    """
    h, w = shape
    spec = build_spec(
        (4, h, w),
        "action_distribution",
        [{"kind": "flatten"}, {"kind": "dense", "units": 2}, {"kind": "softmax_vector"}],
    )
    weight = np.zeros((2, 4 * h * w), dtype=np.float32)
    weight[0, 3 * h * w + pixel[0] * w + pixel[1]] = gain
    params = [{}, {"weight": weight, "bias": np.zeros(2, np.float32)}, {}]
    return Network(spec, NetworkWeights(params))


def constant_net(shape=(84, 84)) -> Network:
    h, w = shape
    spec = build_spec(
        (4, h, w),
        "action_distribution",
        [{"kind": "flatten"}, {"kind": "dense", "units": 3}, {"kind": "softmax_vector"}],
    )
    params = [{}, {"weight": np.zeros((3, 4 * h * w), np.float32), "bias": np.array([0.1, 0.5, -0.2], np.float32)}, {}]
    return Network(spec, NetworkWeights(params))


def smooth_stack(seed: int = 0, shape=(84, 84)) -> np.ndarray:
    """A (4, H, W) stack in [0, 1] with texture at every scale."""
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, 1.0, size=(4,) + tuple(shape))
