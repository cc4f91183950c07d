"""Generator and critic construction, Cramér/WGAN losses with gradient
penalty, and the training loop.

Both networks share one layout: the input feeds a dense stack and a cross
stack in parallel, their outputs are concatenated, and a final stage maps
the trunk to per-block heads (generator) or a linear k-dim output (critic).
With cross_layers = 0 the cross stack contributes nothing, which yields the
plain fully-connected variants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import Dataset
from .encoding import (
    NUMERIC,
    ONEHOT,
    BandCodec,
    EncodedMatrix,
    EncodingPlan,
    band_decode,
    band_encode,
    band_layout,
    decode,
    encode,
    fit_band_codec,
)
from .rng import Stream

MODES = ("cramer", "wgan")
ENCODINGS = ("embedding", "band")


class GanError(ValueError):
    """Bad configuration or malformed loss inputs."""


class TrainingError(RuntimeError):
    """Training aborted; carries the failing iteration index."""

    def __init__(self, iteration: int, cause: str):
        self.iteration = iteration
        super().__init__(f"iteration {iteration}: {cause}")


@dataclass(frozen=True)
class GanConfig:
    mode: str = "cramer"
    encoding: str = "embedding"
    noise_dim: int = 12
    gen_widths: tuple = (64, 128)
    h_widths: tuple = (64, 128, 128)
    h_out: int = 128
    gp_weight: float = 10.0
    n_critic: int = 5
    batch_size: int = 128
    learning_rate: float = 0.0001
    cross_layers: int = 2
    leaky_slope: float = 0.2
    iters: int = 2000
    embed_dims: dict = field(default=None)

    def __post_init__(self):
        if self.mode not in MODES:
            raise GanError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.encoding not in ENCODINGS:
            raise GanError(f"encoding must be one of {ENCODINGS}, got {self.encoding!r}")
        for name in ("noise_dim", "h_out", "n_critic", "batch_size"):
            if getattr(self, name) < 1:
                raise GanError(f"{name} must be positive")
        if any(w < 1 for w in self.gen_widths) or any(w < 1 for w in self.h_widths):
            raise GanError("layer widths must be positive")
        if self.gp_weight < 0:
            raise GanError("gp_weight must be nonnegative")
        if self.cross_layers < 0 or self.iters < 0:
            raise GanError("cross_layers and iters must be nonnegative")
        if not 0 < self.leaky_slope < 1:
            raise GanError("leaky_slope must lie in (0,1)")
        if self.learning_rate <= 0:
            raise GanError("learning_rate must be positive")


def embed_dim(cardinality: int, cfg: GanConfig, source: str = None, kind: str = None) -> int:
    """ceil(sqrt(levels)) capped at 16, unless overridden per block."""
    if cfg.embed_dims and (source, kind) in cfg.embed_dims:
        return int(cfg.embed_dims[(source, kind)])
    return min(16, math.ceil(math.sqrt(cardinality)))


# -------------------------------------------------------------- cross layer


def cross_layer(x0, xl, w, b) -> np.ndarray:
    """x0·(xlᵀw) + b + xl on 1-D vectors of equal length."""
    x0, xl, w, b = (np.asarray(v, dtype=np.float64) for v in (x0, xl, w, b))
    if not x0.shape == xl.shape == w.shape == b.shape or x0.ndim != 1:
        raise GanError("cross_layer needs four equal-length vectors")
    return x0 * float(xl @ w) + b + xl


def _cross_graph(x0: ad.Node, w: ad.Node, b: ad.Node, xl: ad.Node) -> ad.Node:
    # batch form: (n,d)*(n,1) broadcast, then row-broadcast bias, residual
    return ad.add(ad.add(ad.mul(x0, ad.matmul(xl, w)), b), xl)


# ------------------------------------------------------------ param layouts


def _glorot(stream: Stream, name: str, fan_in: int, fan_out: int) -> ad.Node:
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    u = stream.child("init:" + name).uniforms(fan_in * fan_out)
    return ad.param(name, (2.0 * u - 1.0).reshape(fan_in, fan_out) * lim)


def _zeros_param(name: str, rows: int, cols: int) -> ad.Node:
    return ad.param(name, np.zeros((rows, cols)))


def _cross_params(stream: Stream, prefix: str, dim: int, count: int) -> dict:
    params = {}
    for i in range(count):
        wname = f"{prefix}:cross{i}:w"
        z = stream.child("init:" + wname).normals(dim, sigma=0.01)
        params[wname] = ad.param(wname, z.reshape(dim, 1))
        params[f"{prefix}:cross{i}:b"] = _zeros_param(f"{prefix}:cross{i}:b", 1, dim)
    return params


def _gen_head_blocks(plan: EncodingPlan, cfg: GanConfig) -> list:
    """(label, width, softmax?) per head, in output order."""
    if cfg.encoding == "band":
        return [("num", len(plan.blocks), False)]
    heads = [("num", sum(1 for b in plan.blocks if b.kind == NUMERIC), False)]
    heads += [(f"{b.source}/{b.kind}", b.width, True)
              for b in plan.blocks if b.kind != NUMERIC]
    return [h for h in heads if h[1] > 0]


def init_generator(plan: EncodingPlan, cfg: GanConfig, stream: Stream) -> dict:
    params = {}
    widths = [cfg.noise_dim] + list(cfg.gen_widths)
    for i in range(len(cfg.gen_widths)):
        params[f"g:dense{i}:w"] = _glorot(stream, f"g:dense{i}:w", widths[i], widths[i + 1])
        params[f"g:dense{i}:b"] = _zeros_param(f"g:dense{i}:b", 1, widths[i + 1])
    params.update(_cross_params(stream, "g", cfg.noise_dim, cfg.cross_layers))
    trunk = cfg.gen_widths[-1] + (cfg.noise_dim if cfg.cross_layers else 0)
    for label, width, _ in _gen_head_blocks(plan, cfg):
        params[f"g:head:{label}:w"] = _glorot(stream, f"g:head:{label}:w", trunk, width)
        params[f"g:head:{label}:b"] = _zeros_param(f"g:head:{label}:b", 1, width)
    return params


def _critic_in_width(plan: EncodingPlan, cfg: GanConfig) -> int:
    if cfg.encoding == "band":
        return len(plan.blocks)
    return sum(1 if b.kind == NUMERIC else embed_dim(b.width, cfg, b.source, b.kind)
               for b in plan.blocks)


def init_critic(plan: EncodingPlan, cfg: GanConfig, stream: Stream) -> dict:
    params = {}
    if cfg.encoding == "embedding":
        for b in plan.blocks:
            if b.kind == NUMERIC:
                continue
            name = f"h:embed:{b.source}/{b.kind}"
            params[name] = _glorot(stream, name, b.width,
                                   embed_dim(b.width, cfg, b.source, b.kind))
    d = _critic_in_width(plan, cfg)
    widths = [d] + list(cfg.h_widths)
    for i in range(len(cfg.h_widths)):
        params[f"h:dense{i}:w"] = _glorot(stream, f"h:dense{i}:w", widths[i], widths[i + 1])
        params[f"h:dense{i}:b"] = _zeros_param(f"h:dense{i}:b", 1, widths[i + 1])
    params.update(_cross_params(stream, "h", d, cfg.cross_layers))
    trunk = cfg.h_widths[-1] + (d if cfg.cross_layers else 0)
    params["h:out:w"] = _glorot(stream, "h:out:w", trunk, cfg.h_out)
    params["h:out:b"] = _zeros_param("h:out:b", 1, cfg.h_out)
    if cfg.mode == "wgan":
        params["h:score:w"] = _glorot(stream, "h:score:w", cfg.h_out, 1)
    return params


# ------------------------------------------------------------ graph builders


def _trunk_graph(x: ad.Node, params: dict, prefix: str, n_dense: int,
                 cfg: GanConfig) -> ad.Node:
    out = x
    for i in range(n_dense):
        affine = ad.add(ad.matmul(out, params[f"{prefix}:dense{i}:w"]),
                        params[f"{prefix}:dense{i}:b"])
        out = ad.leaky_relu(affine, cfg.leaky_slope)
    if not cfg.cross_layers:
        return out
    crossed = x
    for i in range(cfg.cross_layers):
        crossed = _cross_graph(x, params[f"{prefix}:cross{i}:w"],
                               params[f"{prefix}:cross{i}:b"], crossed)
    return ad.hconcat(out, crossed)


def _generator_graph(z: ad.Node, params: dict, plan: EncodingPlan,
                     cfg: GanConfig) -> ad.Node:
    trunk = _trunk_graph(z, params, "g", len(cfg.gen_widths), cfg)
    heads = {}
    for label, _, softmax in _gen_head_blocks(plan, cfg):
        affine = ad.add(ad.matmul(trunk, params[f"g:head:{label}:w"]),
                        params[f"g:head:{label}:b"])
        heads[label] = ad.row_softmax(affine) if softmax else ad.sigmoid(affine)
    if cfg.encoding == "band":
        return heads["num"]
    parts, nth_numeric = [], 0
    for b in plan.blocks:
        if b.kind == NUMERIC:
            parts.append(ad.slice_cols(heads["num"], nth_numeric, nth_numeric + 1))
            nth_numeric += 1
        else:
            parts.append(heads[f"{b.source}/{b.kind}"])
    return ad.hconcat(*parts)


def _critic_graph(x: ad.Node, params: dict, plan: EncodingPlan,
                  cfg: GanConfig) -> ad.Node:
    if cfg.encoding == "band":
        embedded = x
    else:
        parts = []
        for b in plan.blocks:
            block = ad.slice_cols(x, b.start, b.stop)
            if b.kind == NUMERIC:
                parts.append(block)
            else:
                parts.append(ad.matmul(block, params[f"h:embed:{b.source}/{b.kind}"]))
        embedded = ad.hconcat(*parts)
    trunk = _trunk_graph(embedded, params, "h", len(cfg.h_widths), cfg)
    return ad.add(ad.matmul(trunk, params["h:out:w"]), params["h:out:b"])


def _pairdist(a: ad.Node, b: ad.Node) -> ad.Node:
    """All-pairs Euclidean distances (m,k),(p,k) -> (m,p), shift-stabilized."""
    a2 = ad.row_sum(ad.square(a))
    b2 = ad.row_sum(ad.square(b))
    d2 = ad.add(ad.add(ad.smul(ad.matmul(a, b, tb=True), -2.0), a2), ad.transpose(b2))
    return ad.sqrt_shift(d2)


def _fhat(hv: ad.Node, h_xp: ad.Node, h_yp: ad.Node, wx: ad.Node, wy: ad.Node) -> ad.Node:
    """Critic surrogate per row: weighted mean distance to the generated
    comparison batch minus weighted mean distance to the real one."""
    to_fake = ad.row_sum(ad.mul(_pairdist(hv, h_yp), wy))
    to_real = ad.row_sum(ad.mul(_pairdist(hv, h_xp), wx))
    return ad.sub(to_fake, to_real)


def _mean_weights(v: np.ndarray, comparison: np.ndarray) -> np.ndarray:
    """Row-mean weights over the comparison batch; when the two batches are
    the same sample, self-pairs are excluded from the mean."""
    m, p = v.shape[0], comparison.shape[0]
    if v.shape == comparison.shape and np.array_equal(v, comparison):
        w = np.full((m, p), 0.0 if p == 1 else 1.0 / (p - 1))
        np.fill_diagonal(w, 0.0)
        return w
    return np.full((m, p), 1.0 / p)


# ------------------------------------------------------------------- losses


def _check_batches(*batches):
    width = batches[0].shape[1] if batches[0].ndim == 2 else -1
    for b in batches:
        if b.ndim != 2 or b.shape[0] < 1 or b.shape[1] != width:
            raise GanError("losses need nonempty 2-D batches of equal width")


def _batch_values(m) -> np.ndarray:
    v = m.values if isinstance(m, EncodedMatrix) else np.asarray(m)
    return v.astype(np.float64)


def cramer_losses(x, xp, y, yp, critic: dict, plan: EncodingPlan,
                  cfg: GanConfig, seed) -> tuple:
    """(L_G, L_D, GP) on four equal-width batches: two independent real
    draws x, x' and two generated draws y, y'. seed drives the interpolation
    coefficients of the penalty term."""
    x, xp, y, yp = (_batch_values(v) for v in (x, xp, y, yp))
    _check_batches(x, xp, y, yp)
    if x.shape[0] != y.shape[0]:
        raise GanError("x and y need equal batch sizes for interpolation")
    m, d = x.shape
    eps = Stream(seed).child("gp_eps").uniforms(m).reshape(m, 1)
    xhat = eps * x + (1.0 - eps) * y

    leaves = {name: ad.data(name, v.shape)
              for name, v in (("x", x), ("xp", xp), ("y", y), ("yp", yp), ("xhat", xhat))}
    h = {k: _critic_graph(leaves[k], critic, plan, cfg) for k in leaves}
    weights = {
        ("x", "xp"): _mean_weights(x, xp), ("x", "yp"): _mean_weights(x, yp),
        ("y", "xp"): _mean_weights(y, xp), ("y", "yp"): _mean_weights(y, yp),
        ("xhat", "xp"): _mean_weights(xhat, xp), ("xhat", "yp"): _mean_weights(xhat, yp),
    }
    wnodes = {k: ad.const(v) for k, v in weights.items()}
    lg = ad.sub(
        ad.mean_all(_fhat(h["x"], h["xp"], h["yp"], wnodes[("x", "xp")], wnodes[("x", "yp")])),
        ad.mean_all(_fhat(h["y"], h["xp"], h["yp"], wnodes[("y", "xp")], wnodes[("y", "yp")])),
    )
    fhat_sum = ad.smul(ad.mean_all(
        _fhat(h["xhat"], h["xp"], h["yp"], wnodes[("xhat", "xp")], wnodes[("xhat", "yp")])), m)
    gnode = ad.grad(fhat_sum, [leaves["xhat"]])[leaves["xhat"]]
    gp = ad.mean_all(ad.square(ad.sub(ad.row_l2norm(gnode), ad.const([[1.0]]))))
    ld = ad.add(ad.smul(lg, -1.0), ad.smul(gp, cfg.gp_weight))
    binds = {leaves["x"]: x, leaves["xp"]: xp, leaves["y"]: y,
             leaves["yp"]: yp, leaves["xhat"]: xhat}
    lg_v, ld_v, gp_v = ad.eval_nodes([lg, ld, gp], binds)
    return float(lg_v[0, 0]), float(ld_v[0, 0]), float(gp_v[0, 0])


def wgan_losses(x, y, critic: dict, plan: EncodingPlan, cfg: GanConfig, seed) -> tuple:
    """(L_G, L_D, GP) with the linear score head: L_D = mean s(y) - mean s(x)
    + gp_weight·GP, L_G = -mean s(y)."""
    x, y = _batch_values(x), _batch_values(y)
    _check_batches(x, y)
    if x.shape[0] != y.shape[0]:
        raise GanError("x and y need equal batch sizes for interpolation")
    m = x.shape[0]
    eps = Stream(seed).child("gp_eps").uniforms(m).reshape(m, 1)
    xhat = eps * x + (1.0 - eps) * y
    xn, yn, hn = ad.data("x", x.shape), ad.data("y", y.shape), ad.data("xhat", xhat.shape)

    def score(node):
        return ad.matmul(_critic_graph(node, critic, plan, cfg), critic["h:score:w"])

    raw = ad.sub(ad.mean_all(score(yn)), ad.mean_all(score(xn)))
    ssum = ad.smul(ad.mean_all(score(hn)), m)
    gnode = ad.grad(ssum, [hn])[hn]
    gp = ad.mean_all(ad.square(ad.sub(ad.row_l2norm(gnode), ad.const([[1.0]]))))
    ld = ad.add(raw, ad.smul(gp, cfg.gp_weight))
    lg = ad.smul(ad.mean_all(score(yn)), -1.0)
    lg_v, ld_v, gp_v = ad.eval_nodes([lg, ld, gp], {xn: x, yn: y, hn: xhat})
    return float(lg_v[0, 0]), float(ld_v[0, 0]), float(gp_v[0, 0])


# -------------------------------------------------------------------- model


class GanModel:
    """Trained (or initialized) parameter set plus everything needed to
    sample from it: config, encoding plan, and the band codec when the band
    encoding is in use."""

    def __init__(self, cfg: GanConfig, plan: EncodingPlan, gen_params: dict,
                 critic_params: dict, codec: BandCodec = None):
        self.cfg = cfg
        self.plan = plan
        self.gen_params = gen_params
        self.critic_params = critic_params
        self.codec = codec
        if cfg.encoding == "band" and codec is None:
            raise GanError("band encoding needs a fitted band codec")

    def tensors(self) -> dict:
        out = {k: p.value.copy() for k, p in self.gen_params.items()}
        out.update({k: p.value.copy() for k, p in self.critic_params.items()})
        return out

    def clone(self) -> "GanModel":
        gen = {k: ad.param(k, p.value.copy()) for k, p in self.gen_params.items()}
        cri = {k: ad.param(k, p.value.copy()) for k, p in self.critic_params.items()}
        return GanModel(self.cfg, self.plan, gen, cri, self.codec)


def model_from_tensors(cfg: GanConfig, plan: EncodingPlan, tensors: dict,
                       codec: BandCodec = None) -> GanModel:
    """Rebuild a model from a checkpoint dict; unknown/missing names or
    shape mismatches are errors."""
    model = GanModel(cfg, plan, init_generator(plan, cfg, Stream(0)),
                     init_critic(plan, cfg, Stream(0)), codec)
    params = {**model.gen_params, **model.critic_params}
    if set(tensors) != set(params):
        missing = sorted(set(params) - set(tensors))
        extra = sorted(set(tensors) - set(params))
        raise GanError(f"checkpoint mismatch: missing {missing}, unexpected {extra}")
    for name, node in params.items():
        v = np.asarray(tensors[name], dtype=np.float64)
        if v.shape != node.value.shape:
            raise GanError(f"checkpoint tensor {name} has shape {v.shape}, "
                           f"wants {node.value.shape}")
        node.value = v.copy()
    return model


def generator_forward(z, gen_params: dict, plan: EncodingPlan,
                      cfg: GanConfig) -> EncodedMatrix:
    """Noise rows -> soft encoded matrix (sigmoid numerics, softmax blocks)."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != cfg.noise_dim:
        raise GanError(f"noise must be (n, {cfg.noise_dim}), got {z.shape}")
    layout = band_layout(plan) if cfg.encoding == "band" else plan.blocks
    form = "band" if cfg.encoding == "band" else ONEHOT
    if z.shape[0] == 0:
        return EncodedMatrix(np.zeros((0, len(layout) if cfg.encoding == "band"
                                       else plan.width)), layout, form)
    zn = ad.data("z", z.shape)
    out = ad.eval_nodes([_generator_graph(zn, gen_params, plan, cfg)], {zn: z})[0]
    return EncodedMatrix(out, layout, form)


def critic_h(x, critic_params: dict, plan: EncodingPlan, cfg: GanConfig) -> np.ndarray:
    """Batch of encoded rows -> batch of k-vectors."""
    v = _batch_values(x)
    xn = ad.data("x", v.shape)
    return ad.eval_nodes([_critic_graph(xn, critic_params, plan, cfg)], {xn: v})[0]


# ----------------------------------------------------------------- training


def _draw_batch(values: np.ndarray, stream: Stream, m: int) -> np.ndarray:
    idx = stream.integers(0, values.shape[0], m)
    return values[idx]


def train(train_data: Dataset, cfg: GanConfig, plan: EncodingPlan, seed,
          on_iteration=None) -> tuple:
    """Adam-train per config: n_critic critic steps on fresh batches, then
    one generator step. Returns (model, metrics) where metrics rows are
    (iteration, loss_g, loss_d, gp); loss_d/gp come from the iteration's
    last critic step. on_iteration(it, model) runs after each iteration."""
    root = Stream(seed)
    codec = None
    if cfg.encoding == "band":
        codec = fit_band_codec(train_data, plan)
        real = band_encode(train_data, codec, plan, root.child("encode")).values
    else:
        real = encode(train_data, plan, root.child("encode")).values
    real = real.astype(np.float64)
    if real.shape[0] < 1:
        raise GanError("training data is empty")

    gen_params = init_generator(plan, cfg, root.child("init_g"))
    critic_params = init_critic(plan, cfg, root.child("init_h"))
    model = GanModel(cfg, plan, gen_params, critic_params, codec)
    metrics = []
    if cfg.iters == 0:
        return model, metrics

    m, d = cfg.batch_size, real.shape[1]
    zdim = cfg.noise_dim
    gen_names = sorted(gen_params)
    critic_names = sorted(critic_params)

    # generator forward pass (for critic-step batches and sampling)
    z_fwd = ad.data("z", (m, zdim))
    fwd = ad.Evaluator([_generator_graph(z_fwd, gen_params, plan, cfg)])

    # critic step: real/fake/interpolate leaves -> L_D and critic grads
    cx, cxp = ad.data("x", (m, d)), ad.data("xp", (m, d))
    cy, cyp = ad.data("y", (m, d)), ad.data("yp", (m, d))
    chat = ad.data("xhat", (m, d))
    one = ad.const([[1.0]])
    if cfg.mode == "cramer":
        hmap = {k: _critic_graph(n, critic_params, plan, cfg)
                for k, n in (("x", cx), ("xp", cxp), ("y", cy), ("yp", cyp), ("xhat", chat))}
        wfull = ad.const(np.full((m, m), 1.0 / m))
        lg_c = ad.sub(ad.mean_all(_fhat(hmap["x"], hmap["xp"], hmap["yp"], wfull, wfull)),
                      ad.mean_all(_fhat(hmap["y"], hmap["xp"], hmap["yp"], wfull, wfull)))
        fsum = ad.smul(ad.mean_all(_fhat(hmap["xhat"], hmap["xp"], hmap["yp"], wfull, wfull)), m)
    else:
        def _score(node):
            return ad.matmul(_critic_graph(node, critic_params, plan, cfg),
                             critic_params["h:score:w"])
        lg_c = ad.sub(ad.mean_all(_score(cy)), ad.mean_all(_score(cx)))  # raw critic gap
        fsum = ad.smul(ad.mean_all(_score(chat)), m)
    gnode = ad.grad(fsum, [chat])[chat]
    gp = ad.mean_all(ad.square(ad.sub(ad.row_l2norm(gnode), one)))
    ld = (ad.add(ad.smul(lg_c, -1.0), ad.smul(gp, cfg.gp_weight)) if cfg.mode == "cramer"
          else ad.add(lg_c, ad.smul(gp, cfg.gp_weight)))
    critic_grads = ad.grad(ld, [critic_params[k] for k in critic_names])
    critic_step = ad.Evaluator([ld, gp] + [critic_grads[critic_params[k]]
                                           for k in critic_names])

    # generator step: noise + real leaves -> L_G and generator grads
    gz, gzp = ad.data("z", (m, zdim)), ad.data("zp", (m, zdim))
    gx, gxp = ad.data("x", (m, d)), ad.data("xp", (m, d))
    gy = _generator_graph(gz, gen_params, plan, cfg)
    gyp = _generator_graph(gzp, gen_params, plan, cfg)
    if cfg.mode == "cramer":
        hx = _critic_graph(gx, critic_params, plan, cfg)
        hxp = _critic_graph(gxp, critic_params, plan, cfg)
        hy = _critic_graph(gy, critic_params, plan, cfg)
        hyp = _critic_graph(gyp, critic_params, plan, cfg)
        wfull_g = ad.const(np.full((m, m), 1.0 / m))
        lg = ad.sub(ad.mean_all(_fhat(hx, hxp, hyp, wfull_g, wfull_g)),
                    ad.mean_all(_fhat(hy, hxp, hyp, wfull_g, wfull_g)))
    else:
        lg = ad.smul(ad.mean_all(ad.matmul(_critic_graph(gy, critic_params, plan, cfg),
                                           critic_params["h:score:w"])), -1.0)
    gen_grads = ad.grad(lg, [gen_params[k] for k in gen_names])
    gen_step = ad.Evaluator([lg] + [gen_grads[gen_params[k]] for k in gen_names])

    batches = root.child("batches")
    noise = root.child("noise")
    eps_stream = root.child("gp_eps")
    adam_h = ad.adam_init([critic_params[k] for k in critic_names])
    adam_g = ad.adam_init([gen_params[k] for k in gen_names])

    for it in range(1, cfg.iters + 1):
        try:
            for _ in range(cfg.n_critic):
                x = _draw_batch(real, batches, m)
                xp = _draw_batch(real, batches, m)
                y = fwd.run({z_fwd: noise.uniforms(m * zdim).reshape(m, zdim)})[0]
                yp = fwd.run({z_fwd: noise.uniforms(m * zdim).reshape(m, zdim)})[0]
                eps = eps_stream.uniforms(m).reshape(m, 1)
                binds = {cx: x, cxp: xp, cy: y, cyp: yp,
                         chat: eps * x + (1.0 - eps) * y}
                out = critic_step.run(binds)
                ld_v, gp_v = float(out[0][0, 0]), float(out[1][0, 0])
                grads = {critic_params[k]: out[2 + i] for i, k in enumerate(critic_names)}
                ad.adam_step([critic_params[k] for k in critic_names], grads,
                             adam_h, cfg.learning_rate)
            binds = {gz: noise.uniforms(m * zdim).reshape(m, zdim),
                     gzp: noise.uniforms(m * zdim).reshape(m, zdim)}
            if cfg.mode == "cramer":
                binds[gx] = _draw_batch(real, batches, m)
                binds[gxp] = _draw_batch(real, batches, m)
            out = gen_step.run(binds)
            lg_v = float(out[0][0, 0])
            grads = {gen_params[k]: out[1 + i] for i, k in enumerate(gen_names)}
            ad.adam_step([gen_params[k] for k in gen_names], grads,
                         adam_g, cfg.learning_rate)
        except ad.NonFiniteError as err:
            raise TrainingError(it, str(err)) from err
        metrics.append((it, lg_v, ld_v, gp_v))
        if on_iteration is not None:
            on_iteration(it, model)
    return model, metrics


def generate(model: GanModel, n: int, seed, plan: EncodingPlan = None) -> Dataset:
    """Sample n rows: noise -> generator -> decode back to a Dataset."""
    if plan is not None and plan is not model.plan and plan != model.plan:
        raise GanError("plan does not match the model's plan")
    if n < 0:
        raise GanError("n must be nonnegative")
    cfg = model.cfg
    z = Stream(seed).child("generate").uniforms(n * cfg.noise_dim)
    soft = generator_forward(z.reshape(n, cfg.noise_dim), model.gen_params,
                             model.plan, cfg)
    if cfg.encoding == "band":
        return band_decode(soft, model.codec, model.plan)
    return decode(soft, model.plan)
