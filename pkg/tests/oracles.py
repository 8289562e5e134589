"""Independent loop implementations used as test oracles."""

import math

import numpy as np


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def conv_oracle(x, w, b, d, causal):
    c_out, c_in, k = w.shape
    t_len = x.shape[1]
    out = np.zeros((c_out, t_len))
    for o in range(c_out):
        for t in range(t_len):
            acc = b[o] if b is not None else 0.0
            for i in range(c_in):
                for j in range(k):
                    src = t - (k - 1 - j) * d if causal else t + (j - (k - 1) // 2) * d
                    if 0 <= src < t_len:
                        acc += w[o, i, j] * x[i, src]
            out[o, t] = acc
    return out


def deconv_oracle(x, w):
    c_in, c_out, _ = w.shape
    out = np.zeros((c_out, 2 * x.shape[1]))
    for i in range(x.shape[1]):
        for j in range(2):
            for ci in range(c_in):
                for co in range(c_out):
                    out[co, 2 * i + j] += x[ci, i] * w[ci, co, j]
    return out


def highway_oracle(x, w, b, d, causal):
    c = x.shape[0]
    h = conv_oracle(x, w, b, d, causal)
    gate = sigmoid(h[:c])
    return gate * h[c:] + (1 - gate) * x


def stack_oracle(x, layers, params):
    """Evaluate a layer list one layer at a time with the loop kernels."""
    for layer in layers:
        w = params[f"{layer.name}.weight"].data
        kind = type(layer).__name__
        if kind == "Conv":
            x = conv_oracle(x, w, params[f"{layer.name}.bias"].data, layer.dilation, layer.causal)
            if layer.relu:
                x = np.maximum(x, 0.0)
        elif kind == "Highway":
            x = highway_oracle(x, w, params[f"{layer.name}.bias"].data, layer.dilation, layer.causal)
        else:
            x = deconv_oracle(x, w)
    return x


def attention_oracle(k, v, q):
    d, n = k.shape
    t_len = q.shape[1]
    a = np.zeros((n, t_len))
    for t in range(t_len):
        scores = [sum(k[i, j] * q[i, t] for i in range(d)) / math.sqrt(d) for j in range(n)]
        top = max(scores)
        e = [math.exp(s - top) for s in scores]
        for j in range(n):
            a[j, t] = e[j] / sum(e)
    r = np.zeros((v.shape[0], t_len))
    for t in range(t_len):
        for j in range(n):
            r[:, t] += v[:, j] * a[j, t]
    return a, r


def guided_weight(n, t, n_len, t_len, g=0.2):
    return 1.0 - math.exp(-((n / n_len - t / t_len) ** 2) / (2 * g * g))


def mcd_oracle(ceps_a, ceps_b):
    """Plain dynamic-programming DTW over Euclidean cepstral distances."""
    na, nb = len(ceps_a), len(ceps_b)
    dist = [[math.sqrt(sum((x - y) ** 2 for x, y in zip(ceps_a[i], ceps_b[j]))) for j in range(nb)]
            for i in range(na)]
    inf = float("inf")
    acc = [[inf] * (nb + 1) for _ in range(na + 1)]
    steps = [[0] * (nb + 1) for _ in range(na + 1)]
    acc[0][0] = 0.0
    for i in range(1, na + 1):
        for j in range(1, nb + 1):
            best, n = min((acc[i - 1][j - 1], steps[i - 1][j - 1]), (acc[i - 1][j], steps[i - 1][j]),
                          (acc[i][j - 1], steps[i][j - 1]))
            acc[i][j] = best + dist[i - 1][j - 1]
            steps[i][j] = n + 1
    return 10.0 / math.log(10.0) * math.sqrt(2.0) * acc[na][nb] / steps[na][nb]
