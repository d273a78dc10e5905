"""Pure-numpy embedding-bag kernels (fallback for ``_ckernels``)."""
import numpy as np

MEAN, DECAY = 0, 1


def _ordered(tokens, lengths, mode):
    """Return (token matrix, weight matrix) in summation order, pads weighted 0."""
    B, L = tokens.shape
    pos = np.arange(L)
    mask = pos[None, :] < lengths[:, None]
    if mode == MEAN:
        sentinel = np.iinfo(np.int64).max
        toks = np.sort(np.where(mask, tokens, sentinel), axis=1)
        toks = np.where(mask, toks, 0)
        w = np.where(mask, 1.0 / np.maximum(lengths, 1)[:, None], 0.0)
    else:
        toks = np.where(mask, tokens, 0)
        inv = np.where(mask, 1.0 / (pos[None, :] + 1.0), 0.0)
        total = np.zeros(B)
        for i in range(L):
            total += inv[:, i]
        w = np.where(mask, inv / np.where(total > 0, total, 1.0)[:, None], 0.0)
    return toks, w, mask


def pool(E, tokens, lengths, mode):
    toks, w, mask = _ordered(tokens, lengths, mode)
    pooled = np.zeros((tokens.shape[0], E.shape[1]))
    for i in range(tokens.shape[1]):
        live = mask[:, i]
        pooled[live] += w[live, i, None] * E[toks[live, i]]
    return pooled


def _softmax(logits):
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    s = e.sum(axis=1, keepdims=True)
    return e / s, (m + np.log(s))[:, 0]


def predict_proba(E, W, bias, tokens, lengths, mode):
    logits = pool(E, tokens, lengths, mode) @ W + bias
    return _softmax(logits)[0]


def loss_grad(E, W, bias, tokens, lengths, labels, mode, gE, gW, gb):
    """Mean cross-entropy; gradients are accumulated into zeroed gE, gW, gb."""
    B = tokens.shape[0]
    pooled = pool(E, tokens, lengths, mode)
    logits = pooled @ W + bias
    rows = np.arange(B)
    probs, lse = _softmax(logits)
    loss = float(np.sum(lse - logits[rows, labels]) / B)
    dlogits = probs / B
    dlogits[rows, labels] -= 1.0 / B
    gb += dlogits.sum(axis=0)
    gW += pooled.T @ dlogits
    dpool = dlogits @ W.T
    toks, w, mask = _ordered(tokens, lengths, mode)
    np.add.at(gE, toks[mask], (w[:, :, None] * dpool[:, None, :])[mask])
    return loss
