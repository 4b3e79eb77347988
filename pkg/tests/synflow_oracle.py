from modprune.saliency import gradients, linear_forward, linearize
from modprune.zoo import GraphBuilder


def fd_gradient_error(graph, h=1e-3):
    """Worst relative error between reverse-mode dR/dw and central differences."""
    lin = linearize(graph)
    R, vals = linear_forward(lin)
    grads = gradients(lin, vals)
    owner = {k: n.id for n in graph for k in n.weights.values()}
    worst = 0.0
    for key, w in lin.weights.items():
        for i in range(w.size):
            W = dict(lin.weights)
            up, dn = w.copy(), w.copy()
            up.flat[i] += h
            dn.flat[i] -= h
            W[key] = up
            rp, _ = linear_forward(lin, W, vals, owner[key])
            W[key] = dn
            rm, _ = linear_forward(lin, W, vals, owner[key])
            fd, an = (rp - rm) / (2 * h), grads[key].flat[i]
            d = max(abs(fd), abs(an))
            if d > 0:
                worst = max(worst, abs(fd - an) / d)
    return worst


def linear_only(seed=0):
    b = GraphBuilder("linear", seed)
    x = b.input("x", "vision", (3, 6, 6))
    a = b.conv("a", x, 4)
    c = b.conv("c", x, 4, 1)
    s = b.add("s", a, c)
    p = b.avgpool("p", s)
    cat = b.concat("cat", p, b.conv("d", s, 4, 1))
    sh = b.shuffle("sh", cat, 2)
    b.output("y", b.conv("e", sh, 2, 1))
    return b.build()
