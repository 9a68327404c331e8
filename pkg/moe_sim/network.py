"""Force-estimation network with hand-written reverse mode.

All weights live in one flat float64 vector; ``ParamLayout`` maps names to views of it.
The depth branch is a stack of stride-2 convolutions, adaptive average pooling onto a
``pool_grid`` x ``pool_grid`` grid and a linear layer; the load branch is a two-layer perceptron; the fusion head maps the concatenated
features to a force vector.
"""

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractViolation
from .models import EncoderConfig, Variant

STRIDE = 2
LOAD_DIM = 4
OUT_DIM = 3


@dataclass(frozen=True)
class ParamLayout:
    names: Tuple[str, ...]
    shapes: Tuple[Tuple[int, ...], ...]

    @property
    def offsets(self) -> Tuple[int, ...]:
        sizes = [int(np.prod(s)) for s in self.shapes]
        return tuple(np.concatenate([[0], np.cumsum(sizes)]).astype(int))

    @property
    def size(self) -> int:
        return int(self.offsets[-1])

    def view(self, vector: np.ndarray, name: str) -> np.ndarray:
        i = self.names.index(name)
        start, stop = self.offsets[i], self.offsets[i + 1]
        return vector[start:stop].reshape(self.shapes[i])

    def views(self, vector: np.ndarray) -> Dict[str, np.ndarray]:
        if vector.shape != (self.size,):
            raise ContractViolation(
                f"parameter vector has {vector.shape[0]} entries, layout expects {self.size}"
            )
        return {name: self.view(vector, name) for name in self.names}

    def to_table(self) -> List[dict]:
        return [{"name": n, "shape": list(s)} for n, s in zip(self.names, self.shapes)]

    @classmethod
    def from_table(cls, table: List[dict]) -> "ParamLayout":
        return cls(
            tuple(entry["name"] for entry in table),
            tuple(tuple(int(d) for d in entry["shape"]) for entry in table),
        )


def build_layout(config: EncoderConfig) -> ParamLayout:
    entries: List[Tuple[str, Tuple[int, ...]]] = []
    c_in, k = config.input_channels, config.kernel
    for i, c_out in enumerate(config.channels):
        entries.append((f"conv{i}.w", (c_out, c_in, k, k)))
        entries.append((f"conv{i}.b", (c_out,)))
        c_in = c_out
    width = config.feature_width
    entries += [
        ("depth_fc.w", (width, c_in * config.pool_grid**2)),
        ("depth_fc.b", (width,)),
        ("load_fc1.w", (config.load_hidden, LOAD_DIM)),
        ("load_fc1.b", (config.load_hidden,)),
        ("load_fc2.w", (width, config.load_hidden)),
        ("load_fc2.b", (width,)),
        ("fusion_fc1.w", (config.fusion_hidden, 2 * width)),
        ("fusion_fc1.b", (config.fusion_hidden,)),
        ("head.w", (OUT_DIM, config.fusion_hidden)),
        ("head.b", (OUT_DIM,)),
    ]
    names, shapes = zip(*entries)
    return ParamLayout(tuple(names), tuple(shapes))


def init_params(layout: ParamLayout, rng: np.random.Generator) -> np.ndarray:
    """He-normal weights, zero biases; the output layer uses unit-gain scaling."""
    vector = np.zeros(layout.size)
    for name, shape in zip(layout.names, layout.shapes):
        if name.endswith(".b"):
            continue
        fan_in = int(np.prod(shape[1:]))
        gain = 1.0 if name == "head.w" else 2.0
        layout.view(vector, name)[...] = rng.normal(0.0, np.sqrt(gain / fan_in), size=shape)
    return vector


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def pool_matrix(size: int, cells: int) -> np.ndarray:
    """(cells, size) averaging weights; cell i covers [floor(i*size/cells), ceil((i+1)*size/cells)).

    Cells overlap when the map is smaller than the grid, so every cell sees at least one pixel.
    """
    weights = np.zeros((cells, size))
    for i in range(cells):
        start = (i * size) // cells
        stop = -((-(i + 1) * size) // cells)
        weights[i, start:stop] = 1.0 / (stop - start)
    return weights


def conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    k = w.shape[-1]
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::STRIDE, ::STRIDE]
    n, c, ho, wo = windows.shape[:4]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    out = cols @ w.reshape(w.shape[0], -1).T + b
    return out.reshape(n, ho, wo, -1).transpose(0, 3, 1, 2), (cols, xp.shape)


def conv_backward(dout: np.ndarray, w: np.ndarray, saved, need_input: bool = True):
    cols, padded_shape = saved
    n, o, ho, wo = dout.shape
    k = w.shape[-1]
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, o)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_input:
        return None, dw, db
    c = w.shape[1]
    dwin = (d2 @ w.reshape(o, -1)).reshape(n, ho, wo, c, k, k)
    dxp = np.zeros(padded_shape)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + STRIDE * ho : STRIDE, j : j + STRIDE * wo : STRIDE] += dwin[
                ..., i, j
            ].transpose(0, 3, 1, 2)
    pad = k // 2
    return dxp[:, :, pad : padded_shape[2] - pad, pad : padded_shape[3] - pad], dw, db


class ForceNet:
    """Forward and backward passes for one variant over a fixed layout."""

    def __init__(self, config: EncoderConfig, variant: Variant):
        self.config = config
        self.variant = Variant(variant)
        self.layout = build_layout(config)

    @property
    def uses_depth(self) -> bool:
        return self.variant is not Variant.LOAD_ONLY

    @property
    def uses_load(self) -> bool:
        return self.variant is not Variant.DEPTH_ONLY

    def forward(self, vector: np.ndarray, images: np.ndarray, loads: np.ndarray):
        """Return predictions (N, 3) and the cache needed by ``backward``."""
        p = self.layout.views(vector)
        n = loads.shape[0]
        width = self.config.feature_width
        cache: dict = {}

        if self.uses_depth:
            if images.ndim != 4 or images.shape[1] != self.config.input_channels:
                raise ContractViolation(f"image batch has shape {images.shape}")
            h = images
            convs = []
            for i in range(len(self.config.channels)):
                z, saved = conv_forward(h, p[f"conv{i}.w"], p[f"conv{i}.b"])
                h = _relu(z)
                convs.append((saved, z > 0.0))
            cache["convs"] = convs
            grid = self.config.pool_grid
            rows, cols = pool_matrix(h.shape[2], grid), pool_matrix(h.shape[3], grid)
            cache["pool"] = (rows, cols)
            pooled = np.einsum("ih,nchw,jw->ncij", rows, h, cols).reshape(n, -1)
            cache["pooled"] = pooled
            zd = pooled @ p["depth_fc.w"].T + p["depth_fc.b"]
            cache["zd"] = zd
            feat_d = _relu(zd)
        else:
            feat_d = np.zeros((n, width))

        if self.uses_load:
            z1 = loads @ p["load_fc1.w"].T + p["load_fc1.b"]
            h1 = _relu(z1)
            z2 = h1 @ p["load_fc2.w"].T + p["load_fc2.b"]
            cache.update(loads=loads, z1=z1, h1=h1, z2=z2)
            feat_l = _relu(z2)
        else:
            feat_l = np.zeros((n, width))

        fused = np.concatenate([feat_d, feat_l], axis=1)
        zf = fused @ p["fusion_fc1.w"].T + p["fusion_fc1.b"]
        hf = _relu(zf)
        out = hf @ p["head.w"].T + p["head.b"]
        cache.update(fused=fused, zf=zf, hf=hf)
        return out, cache

    def backward(self, vector: np.ndarray, cache: dict, dout: np.ndarray) -> np.ndarray:
        p = self.layout.views(vector)
        grad = np.zeros_like(vector)
        g = self.layout.views(grad)
        width = self.config.feature_width

        g["head.w"][...] = dout.T @ cache["hf"]
        g["head.b"][...] = dout.sum(axis=0)
        dzf = (dout @ p["head.w"]) * (cache["zf"] > 0.0)
        g["fusion_fc1.w"][...] = dzf.T @ cache["fused"]
        g["fusion_fc1.b"][...] = dzf.sum(axis=0)
        dfused = dzf @ p["fusion_fc1.w"]

        if self.uses_load:
            dz2 = dfused[:, width:] * (cache["z2"] > 0.0)
            g["load_fc2.w"][...] = dz2.T @ cache["h1"]
            g["load_fc2.b"][...] = dz2.sum(axis=0)
            dz1 = (dz2 @ p["load_fc2.w"]) * (cache["z1"] > 0.0)
            g["load_fc1.w"][...] = dz1.T @ cache["loads"]
            g["load_fc1.b"][...] = dz1.sum(axis=0)

        if self.uses_depth:
            dzd = dfused[:, :width] * (cache["zd"] > 0.0)
            g["depth_fc.w"][...] = dzd.T @ cache["pooled"]
            g["depth_fc.b"][...] = dzd.sum(axis=0)
            dpooled = dzd @ p["depth_fc.w"]
            rows, cols = cache["pool"]
            grid = self.config.pool_grid
            dpooled = dpooled.reshape(dpooled.shape[0], -1, grid, grid)
            dh = np.einsum("ih,ncij,jw->nchw", rows, dpooled, cols)
            for i in reversed(range(len(self.config.channels))):
                saved, active = cache["convs"][i]
                dz = dh * active
                dh, dw, db = conv_backward(dz, p[f"conv{i}.w"], saved, need_input=i > 0)
                g[f"conv{i}.w"][...] = dw
                g[f"conv{i}.b"][...] = db
        return grad
