"""Two-layer graph-attention encoder with spectral decoder and exact gradients.

Architecture: attention layer (F_in -> 64, ELU) -> attention layer (64 -> 32,
ELU) -> global mean pooling -> linear head. Attention over the closed
neighborhood N(i) u {i} uses the additive two-vector form

    e_ij = LeakyReLU(a_src . W x_i + a_dst . W x_j) + log(w_ij)
    alpha_ij = softmax_j(e_ij)        (max-subtracted)
    h_i = ELU(sum_j alpha_ij W x_j)

where self-loops carry weight 1 and absent edges are excluded. The spectral
decoder turns node embeddings into a reconstructed normalized Laplacian via
A_hat_ij = logistic(scale * z_i . z_j), which is then scored against the
encoder input graph's Laplacian with a row-mean squared Frobenius loss.

All backward passes are hand-written reverse mode; ``forward_backward``
returns gradients for every trainable parameter block and is validated
against central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import GraphError, SchemaMismatchError, SkillGraphError
from .graph import SurgicalGraph, decompose_laplacian, normalized_laplacian, spectral_embedding
from .util import canonical_json_dumps, read_json

HIDDEN_WIDTH = 64
EMBED_WIDTH = 32
CHECKPOINT_SCHEMA = 1


@dataclass(frozen=True)
class GatLayerParams:
    W: np.ndarray  # (out, in)
    a_src: np.ndarray  # (out,)
    a_dst: np.ndarray  # (out,)
    leaky_slope: float = 0.2


@dataclass(frozen=True)
class GnnModel:
    layer1: GatLayerParams  # F_in (+ positional) -> 64
    layer2: GatLayerParams  # 64 -> 32
    head_w: np.ndarray  # (K, 32)
    head_b: np.ndarray  # (K,)
    decoder_scale: float = 1.0  # fixed temperature, not trained
    feature_dim: int = 0  # width of raw node features (before positional)
    spectral_k: int = 4
    use_positional: bool = True
    k_classes: int = 0
    category: str = ""
    feature_schema_id: str = ""
    ordinal_min: int = 1
    dataset_build_id: str = ""

    @property
    def input_dim(self) -> int:
        return self.feature_dim + (self.spectral_k if self.use_positional else 0)


def init_model(
    feature_dim: int,
    k_classes: int,
    seed: int = 0,
    spectral_k: int = 4,
    use_positional: bool = True,
    decoder_scale: float = 1.0,
    leaky_slope: float = 0.2,
    category: str = "",
    feature_schema_id: str = "",
    ordinal_min: int = 1,
    dataset_build_id: str = "",
) -> GnnModel:
    """Glorot-uniform initialization, deterministic in the seed."""
    rng = np.random.default_rng(seed)
    d_in = feature_dim + (spectral_k if use_positional else 0)

    def glorot(shape):
        lim = np.sqrt(6.0 / (shape[0] + shape[-1]))
        return rng.uniform(-lim, lim, size=shape)

    def layer(din, dout):
        return GatLayerParams(
            W=glorot((dout, din)),
            a_src=glorot((dout, 1)).ravel(),
            a_dst=glorot((dout, 1)).ravel(),
            leaky_slope=leaky_slope,
        )

    l1 = layer(d_in, HIDDEN_WIDTH)
    l2 = layer(HIDDEN_WIDTH, EMBED_WIDTH)
    head_w = glorot((k_classes, EMBED_WIDTH))
    head_b = np.zeros(k_classes)
    return GnnModel(
        l1, l2, head_w, head_b, decoder_scale, feature_dim, spectral_k,
        use_positional, k_classes, category, feature_schema_id, ordinal_min,
        dataset_build_id,
    )


PARAM_BLOCKS = ("layer1.W", "layer1.a_src", "layer1.a_dst",
                "layer2.W", "layer2.a_src", "layer2.a_dst",
                "head.W", "head.b")


def parameters(model: GnnModel) -> dict[str, np.ndarray]:
    return {
        "layer1.W": model.layer1.W,
        "layer1.a_src": model.layer1.a_src,
        "layer1.a_dst": model.layer1.a_dst,
        "layer2.W": model.layer2.W,
        "layer2.a_src": model.layer2.a_src,
        "layer2.a_dst": model.layer2.a_dst,
        "head.W": model.head_w,
        "head.b": model.head_b,
    }


def with_parameters(model: GnnModel, params: dict[str, np.ndarray]) -> GnnModel:
    return replace(
        model,
        layer1=replace(model.layer1, W=params["layer1.W"],
                       a_src=params["layer1.a_src"], a_dst=params["layer1.a_dst"]),
        layer2=replace(model.layer2, W=params["layer2.W"],
                       a_src=params["layer2.a_src"], a_dst=params["layer2.a_dst"]),
        head_w=params["head.W"],
        head_b=params["head.b"],
    )


def zero_gradients(model: GnnModel) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in parameters(model).items()}


# -- layer forward / backward -------------------------------------------------


def _gat_forward(X: np.ndarray, A: np.ndarray, p: GatLayerParams):
    n = X.shape[0]
    if not np.all(np.isfinite(X)):
        raise SkillGraphError("non-finite input to attention layer")
    if p.W.shape[1] != X.shape[1]:
        raise SkillGraphError(
            f"attention layer expects width {p.W.shape[1]}, got {X.shape[1]}"
        )
    P = X @ p.W.T
    src = P @ p.a_src
    dst = P @ p.a_dst
    raw = src[:, None] + dst[None, :]
    act = np.where(raw > 0, raw, p.leaky_slope * raw)
    mask = (A > 0) | np.eye(n, dtype=bool)
    logw = np.zeros((n, n))
    pos = A > 0
    logw[pos] = np.log(A[pos])  # self-loops carry weight 1, log 1 = 0
    e = np.where(mask, act + logw, -np.inf)
    m = e.max(axis=1, keepdims=True)
    ex = np.exp(e - m)
    ex[~mask] = 0.0
    alpha = ex / ex.sum(axis=1, keepdims=True)
    M = alpha @ P
    H = np.where(M > 0, M, np.expm1(M))  # ELU, alpha=1
    cache = (X, P, raw, alpha, M)
    return H, cache


def _gat_backward(gH: np.ndarray, cache, p: GatLayerParams):
    X, P, raw, alpha, M = cache
    gM = gH * np.where(M > 0, 1.0, np.exp(np.minimum(M, 0.0)))
    gAlpha = gM @ P.T
    gP = alpha.T @ gM
    row_dot = np.sum(alpha * gAlpha, axis=1, keepdims=True)
    gE = alpha * (gAlpha - row_dot)
    gRaw = gE * np.where(raw > 0, 1.0, p.leaky_slope)
    g_src = gRaw.sum(axis=1)
    g_dst = gRaw.sum(axis=0)
    ga_src = P.T @ g_src
    ga_dst = P.T @ g_dst
    gP += np.outer(g_src, p.a_src) + np.outer(g_dst, p.a_dst)
    gW = gP.T @ X
    gX = gP @ p.W
    return gX, {"W": gW, "a_src": ga_src, "a_dst": ga_dst}


def gat_layer_forward(
    X: np.ndarray, A: np.ndarray, params: GatLayerParams, return_attention: bool = False
):
    """Public single-layer forward; optionally also the attention matrix."""
    H, cache = _gat_forward(np.asarray(X, dtype=np.float64), np.asarray(A), params)
    if return_attention:
        return H, cache[3]
    return H


def global_mean_pool(H: np.ndarray) -> np.ndarray:
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] < 1:
        raise SkillGraphError("global mean pool needs at least one node row")
    return H.mean(axis=0)


def classify(pooled: np.ndarray, head_w: np.ndarray, head_b: np.ndarray) -> np.ndarray:
    return head_w @ pooled + head_b


def _logistic(S: np.ndarray) -> np.ndarray:
    # sign-split form: never exponentiates a positive argument
    out = np.empty_like(S)
    pos = S >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-S[pos]))
    ez = np.exp(S[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _decode_forward(Z: np.ndarray, scale: float):
    if not np.all(np.isfinite(Z)):
        raise SkillGraphError("non-finite embeddings passed to decoder")
    n = Z.shape[0]
    S = scale * (Z @ Z.T)
    Ahat = _logistic(S)
    np.fill_diagonal(Ahat, 0.0)
    d = np.sort(Ahat, axis=1).sum(axis=1)  # sorted-sum degree, as in graph module
    with np.errstate(divide="ignore"):
        e = np.where(d > 0, d**-0.5, 0.0)
    N = e[:, None] * Ahat * e[None, :]
    L = -N
    L[np.diag_indices(n)] = np.where(d > 0, 1.0, 0.0)
    cache = (Z, Ahat, d, e)
    return L, cache


def _decode_backward(gL: np.ndarray, cache, scale: float) -> np.ndarray:
    Z, Ahat, d, e = cache
    gN = -gL.copy()
    np.fill_diagonal(gN, 0.0)  # diagonal of L is locally constant in Z
    gAhat = gN * np.outer(e, e)
    # degree chain: e_k = d_k^{-1/2}, d_k = sum_l Ahat_kl
    ge = (gN * Ahat) @ e + (gN * Ahat).T @ e
    with np.errstate(divide="ignore"):
        gd = np.where(d > 0, ge * (-0.5) * d**-1.5, 0.0)
    gAhat += gd[:, None]
    np.fill_diagonal(gAhat, 0.0)
    gS = gAhat * Ahat * (1.0 - Ahat)
    gZ = scale * (gS + gS.T) @ Z
    return gZ


def decode_laplacian(Z: np.ndarray, decoder_scale: float = 1.0) -> np.ndarray:
    """Reconstructed normalized Laplacian from inner-product edge logits."""
    L, _ = _decode_forward(np.asarray(Z, dtype=np.float64), decoder_scale)
    return L


def spectral_loss(L_original: np.ndarray, L_reconstructed: np.ndarray) -> float:
    """Mean over rows of the squared row discrepancy: ||dL||_F^2 / n."""
    L_original = np.asarray(L_original)
    L_reconstructed = np.asarray(L_reconstructed)
    if L_original.shape != L_reconstructed.shape:
        raise SkillGraphError(
            f"shape mismatch: {L_original.shape} vs {L_reconstructed.shape}"
        )
    diff = L_original - L_reconstructed
    return float(np.sum(diff * diff) / L_original.shape[0])


def cross_entropy_loss(logits: np.ndarray, label: int) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[0]:
        raise SkillGraphError(f"label {label} out of range for {logits.shape[0]} classes")
    m = logits.max()
    lse = m + np.log(np.sum(np.exp(logits - m)))
    return float(lse - logits[label])


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    ez = np.exp(z)
    return ez / ez.sum()


# -- whole-model forward/backward ---------------------------------------------


@dataclass(frozen=True)
class SslTarget:
    """Reconstruction target: the unmasked graph's normalized Laplacian."""

    l_original: np.ndarray


def positional_features(A: np.ndarray, k: int) -> np.ndarray:
    """Sign-fixed eigenvectors of the k smallest Laplacian eigenvalues.

    Zero-padded to k columns when the graph has fewer than k nodes, so the
    encoder input width does not depend on graph size.
    """
    decomp = decompose_laplacian(A)
    H = spectral_embedding(decomp, min(k, A.shape[0]))
    if H.shape[1] < k:
        H = np.hstack([H, np.zeros((H.shape[0], k - H.shape[1]))])
    return H


def model_input(model: GnnModel, graph: SurgicalGraph,
                positional: np.ndarray | None = None) -> np.ndarray:
    if graph.X.shape[1] != model.feature_dim:
        raise SchemaMismatchError(
            f"graph feature width {graph.X.shape[1]} != model feature_dim "
            f"{model.feature_dim}"
        )
    if not model.use_positional:
        return graph.X
    if positional is None:
        positional = positional_features(graph.A, model.spectral_k)
    return np.hstack([graph.X, positional])


def _encode(model: GnnModel, X: np.ndarray, A: np.ndarray):
    H1, c1 = _gat_forward(X, A, model.layer1)
    Z, c2 = _gat_forward(H1, A, model.layer2)
    return Z, (c1, c2)


def node_embeddings(model: GnnModel, graph: SurgicalGraph,
                    positional: np.ndarray | None = None) -> np.ndarray:
    """Post-layer-2 node embeddings (n x 32)."""
    Z, _ = _encode(model, model_input(model, graph, positional), graph.A)
    return Z


def pooled_embedding(model: GnnModel, graph: SurgicalGraph,
                     positional: np.ndarray | None = None) -> np.ndarray:
    return global_mean_pool(node_embeddings(model, graph, positional))


def predict_logits(model: GnnModel, graph: SurgicalGraph,
                   positional: np.ndarray | None = None) -> np.ndarray:
    return classify(pooled_embedding(model, graph, positional), model.head_w, model.head_b)


def _forward_backward(
    model: GnnModel,
    graph: SurgicalGraph,
    target: int | SslTarget,
    positional: np.ndarray | None = None,
):
    X = model_input(model, graph, positional)
    A = graph.A
    Z, (c1, c2) = _encode(model, X, A)
    grads = zero_gradients(model)
    logits = None

    if isinstance(target, SslTarget):
        L_rec, dc = _decode_forward(Z, model.decoder_scale)
        loss = spectral_loss(target.l_original, L_rec)
        gL = 2.0 * (L_rec - target.l_original) / A.shape[0]
        gZ = _decode_backward(gL, dc, model.decoder_scale)
    else:
        pooled = global_mean_pool(Z)
        logits = classify(pooled, model.head_w, model.head_b)
        loss = cross_entropy_loss(logits, int(target))
        glogits = _softmax(logits)
        glogits[int(target)] -= 1.0
        grads["head.W"] = np.outer(glogits, pooled)
        grads["head.b"] = glogits
        gPooled = model.head_w.T @ glogits
        gZ = np.broadcast_to(gPooled / Z.shape[0], Z.shape).copy()

    if not np.isfinite(loss):
        raise SkillGraphError(f"non-finite loss on graph {graph.clip_id!r}")

    gH1, g2 = _gat_backward(gZ, c2, model.layer2)
    _, g1 = _gat_backward(gH1, c1, model.layer1)
    grads["layer2.W"], grads["layer2.a_src"], grads["layer2.a_dst"] = (
        g2["W"], g2["a_src"], g2["a_dst"])
    grads["layer1.W"], grads["layer1.a_src"], grads["layer1.a_dst"] = (
        g1["W"], g1["a_src"], g1["a_dst"])
    return loss, grads, logits


def forward_backward(
    model: GnnModel,
    graph: SurgicalGraph,
    target: int | SslTarget,
    positional: np.ndarray | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and exact gradients for one graph.

    ``target`` is a class index for the supervised cross-entropy path, or an
    :class:`SslTarget` holding the unmasked graph's Laplacian for the
    self-supervised spectral path. Gradients cover every trainable block;
    blocks unused by the chosen path come back zero.
    """
    loss, grads, _ = _forward_backward(model, graph, target, positional)
    return loss, grads


def ssl_target(graph: SurgicalGraph) -> SslTarget:
    return SslTarget(normalized_laplacian(graph.A))


# -- checkpoints ---------------------------------------------------------------


def model_to_checkpoint(model: GnnModel) -> dict:
    def arr(a):
        return [float(x) for x in np.asarray(a).reshape(-1)]

    return {
        "schema_version": CHECKPOINT_SCHEMA,
        "shapes": {
            "layer1.W": list(model.layer1.W.shape),
            "layer2.W": list(model.layer2.W.shape),
            "head.W": list(model.head_w.shape),
        },
        "params": {
            "layer1.W": arr(model.layer1.W),
            "layer1.a_src": arr(model.layer1.a_src),
            "layer1.a_dst": arr(model.layer1.a_dst),
            "layer2.W": arr(model.layer2.W),
            "layer2.a_src": arr(model.layer2.a_src),
            "layer2.a_dst": arr(model.layer2.a_dst),
            "head.W": arr(model.head_w),
            "head.b": arr(model.head_b),
        },
        "leaky_slope": model.layer1.leaky_slope,
        "decoder_scale": model.decoder_scale,
        "feature_dim": model.feature_dim,
        "spectral_k": model.spectral_k,
        "use_positional": model.use_positional,
        "K": model.k_classes,
        "category": model.category,
        "feature_schema_id": model.feature_schema_id,
        "ordinal_min": model.ordinal_min,
        "dataset_build_id": model.dataset_build_id,
    }


def checkpoint_to_model(obj: dict) -> GnnModel:
    if obj.get("schema_version") != CHECKPOINT_SCHEMA:
        raise SchemaMismatchError(
            f"unsupported checkpoint schema {obj.get('schema_version')!r}"
        )
    shapes = obj["shapes"]
    p = obj["params"]

    def arr(name, shape):
        return np.asarray(p[name], dtype=np.float64).reshape(shape)

    slope = float(obj["leaky_slope"])
    w1 = tuple(shapes["layer1.W"])
    w2 = tuple(shapes["layer2.W"])
    hw = tuple(shapes["head.W"])
    l1 = GatLayerParams(arr("layer1.W", w1), arr("layer1.a_src", (w1[0],)),
                        arr("layer1.a_dst", (w1[0],)), slope)
    l2 = GatLayerParams(arr("layer2.W", w2), arr("layer2.a_src", (w2[0],)),
                        arr("layer2.a_dst", (w2[0],)), slope)
    return GnnModel(
        l1, l2, arr("head.W", hw), arr("head.b", (hw[0],)),
        float(obj["decoder_scale"]), int(obj["feature_dim"]),
        int(obj["spectral_k"]), bool(obj["use_positional"]), int(obj["K"]),
        obj.get("category", ""), obj.get("feature_schema_id", ""),
        int(obj.get("ordinal_min", 1)), obj.get("dataset_build_id", ""),
    )


def save_checkpoint(model: GnnModel, path: Path | str) -> None:
    Path(path).write_text(canonical_json_dumps(model_to_checkpoint(model)), encoding="utf-8")


def load_checkpoint(path: Path | str) -> GnnModel:
    path = Path(path)
    if not path.exists():
        raise SkillGraphError(f"checkpoint not found: {path}")
    return checkpoint_to_model(read_json(path))
