"""Independent reference computations used to check the numpy paths.

Nothing here imports the model's math; the block reference is a per-position
loop over python lists in mpmath extended precision.
"""

import mpmath as mp

mp.mp.dps = 40


def brute_force_masked_cells(n):
    count = 0
    for i in range(n):
        for j in range(n):
            if j > i:
                count += 1
    return count


def _vec(a):
    return [mp.mpf(float(v)) for v in a]


def _mat(a):
    return [[mp.mpf(float(v)) for v in row] for row in a]


def _matvec(x, w):
    # x: length-in vector, w: in x out
    return [mp.fsum(x[k] * w[k][c] for k in range(len(x))) for c in range(len(w[0]))]


def _layer_norm(x, scale, shift, eps):
    n = len(x)
    mean = mp.fsum(x) / n
    var = mp.fsum((v - mean) ** 2 for v in x) / n
    denom = mp.sqrt(var + eps)
    return [(x[i] - mean) / denom * scale[i] + shift[i] for i in range(n)]


def _gelu(v):
    return mp.mpf("0.5") * v * (1 + mp.tanh(mp.sqrt(2 / mp.pi) * (v + mp.mpf("0.044715") * v**3)))


def _rotate(vec, pos, base):
    d = len(vec)
    half = d // 2
    out = [None] * d
    for i in range(half):
        theta = pos * mp.power(base, -mp.mpf(2 * i) / d)
        c, s = mp.cos(theta), mp.sin(theta)
        out[i] = vec[i] * c - vec[i + half] * s
        out[i + half] = vec[i] * s + vec[i + half] * c
    return out


def reference_block(z, layer, cfg):
    """Straight-line evaluation of one block; returns (outputs, maps[h][t][j]) as mpf."""
    z = [_vec(row) for row in z]
    T, D, H = len(z), cfg.hidden_dim, cfg.num_heads
    hd = D // H
    eps = mp.mpf(cfg.norm_eps)
    base = mp.mpf(cfg.rope_base)
    ln1s, ln1b = _vec(layer.ln1_scale), _vec(layer.ln1_shift)
    ln2s, ln2b = _vec(layer.ln2_scale), _vec(layer.ln2_shift)
    wq, wk, wv, wo = _mat(layer.w_query), _mat(layer.w_key), _mat(layer.w_value), _mat(layer.w_out)
    f1, b1, f2, b2 = _mat(layer.ff_in), _vec(layer.ff_in_bias), _mat(layer.ff_out), _vec(layer.ff_out_bias)
    pre = cfg.norm_placement == "pre"

    attn_in = [_layer_norm(row, ln1s, ln1b, eps) for row in z] if pre else z
    q = [_matvec(row, wq) for row in attn_in]
    k = [_matvec(row, wk) for row in attn_in]
    v = [_matvec(row, wv) for row in attn_in]

    maps = [[[mp.mpf(0)] * T for _ in range(T)] for _ in range(H)]
    context = [[mp.mpf(0)] * D for _ in range(T)]
    for h in range(H):
        sl = slice(h * hd, (h + 1) * hd)
        qh = [row[sl] for row in q]
        kh = [row[sl] for row in k]
        if cfg.positional_scheme == "rotary":
            qh = [_rotate(qh[t], t, base) for t in range(T)]
            kh = [_rotate(kh[t], t, base) for t in range(T)]
        for t in range(T):
            scores = [mp.fsum(qh[t][i] * kh[j][i] for i in range(hd)) / mp.sqrt(hd) for j in range(t + 1)]
            exps = [mp.exp(s) for s in scores]
            total = mp.fsum(exps)
            for j in range(t + 1):
                maps[h][t][j] = exps[j] / total
            for i in range(hd):
                context[t][h * hd + i] = mp.fsum(maps[h][t][j] * v[j][h * hd + i] for j in range(t + 1))
    attn_out = [_matvec(row, wo) for row in context]

    outputs = []
    for t in range(T):
        if pre:
            a = [z[t][i] + attn_out[t][i] for i in range(D)]
            hidden = [_gelu(u + b1[c]) for c, u in enumerate(_matvec(_layer_norm(a, ln2s, ln2b, eps), f1))]
            ff = [u + b2[c] for c, u in enumerate(_matvec(hidden, f2))]
            outputs.append([a[i] + ff[i] for i in range(D)])
        else:
            a = _layer_norm([attn_out[t][i] + z[t][i] for i in range(D)], ln1s, ln1b, eps)
            hidden = [_gelu(u + b1[c]) for c, u in enumerate(_matvec(a, f1))]
            ff = [u + b2[c] for c, u in enumerate(_matvec(hidden, f2))]
            outputs.append(_layer_norm([ff[i] + a[i] for i in range(D)], ln2s, ln2b, eps))
    return outputs, maps


def reference_softmax_full_then_renormalize(logits, option_ids):
    """Full-vocabulary softmax, then restricted to the option ids and renormalized."""
    xs = [mp.mpf(float(v)) for v in logits]
    m = max(xs)
    exps = [mp.exp(v - m) for v in xs]
    total = mp.fsum(exps)
    full = [e / total for e in exps]
    picked = [full[i] for i in option_ids]
    s = mp.fsum(picked)
    return [float(p / s) for p in picked]
