"""Central finite-difference oracle shared by the gradient tests."""
import numpy as np


def numeric_grad(f, x, h=1e-6):
    """d f / d x for scalar ``f()`` that reads ``x`` in place."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)


def check_layer(layer, x, rng):
    """Worst relative error over the input and parameter gradients of
    ``layer`` under the scalar loss ``sum(out * r)`` with random ``r``."""
    from microexit import nn

    out, cache = layer.forward_train(x)
    r = rng.uniform(-1, 1, size=out.shape)
    dx, grads = layer.backward(cache, r)

    def loss():
        if isinstance(layer, nn.BatchNorm):
            return float((layer.forward_train(x, update_stats=False)[0] * r).sum())
        return float((layer.forward_train(x)[0] * r).sum())

    errs = [rel_error(dx, numeric_grad(loss, x))]
    for name, p in layer.params().items():
        errs.append(rel_error(grads[name], numeric_grad(loss, p)))
    return max(errs)


LAYER_KINDS = ("conv", "pool", "bn", "dense", "leaky", "softmax", "flatten")


def random_layer(kind, rng):
    """A randomly sized layer of ``kind`` and a matching input in [-1, 1]."""
    from microexit import nn

    if kind == "conv":
        cin, cout, k, s = (int(v) for v in rng.integers([1, 1, 1, 1], [4, 4, 4, 3]))
        layer = nn.Conv1d(cin, cout, k, s, rng.uniform(-1, 1, (cout, cin, k)),
                          rng.uniform(-1, 1, cout))
        return layer, rng.uniform(-1, 1, (2, k + int(rng.integers(0, 6)), cin))
    if kind == "pool":
        k, s = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        return nn.AvgPool1d(k, s), rng.uniform(-1, 1, (2, k + int(rng.integers(0, 6)), 3))
    if kind == "bn":
        c = int(rng.integers(1, 4))
        layer = nn.BatchNorm(c)
        layer.gamma[:] = rng.uniform(0.5, 1.5, c)
        layer.beta[:] = rng.uniform(-1, 1, c)
        return layer, rng.uniform(-1, 1, (3, 4, c))
    if kind == "dense":
        i, o = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        return nn.Dense(i, o, rng.uniform(-1, 1, (o, i)), rng.uniform(-1, 1, o)), \
            rng.uniform(-1, 1, (3, i))
    if kind == "leaky":
        x = rng.uniform(-1, 1, (3, 5, 2))
        # keep inputs off the kink so the central difference is smooth
        x = np.where(np.abs(x) < 1e-3, 2e-3, x)
        return nn.LeakyRelu(rng.uniform(0.01, 0.3)), x
    if kind == "softmax":
        return nn.Softmax(), rng.uniform(-1, 1, (3, 5))
    if kind == "flatten":
        return nn.Flatten(), rng.uniform(-1, 1, (2, 3, 2))
    raise ValueError(kind)


def tiny_config():
    """Input 8x2, two classes, same layer kinds as the full network."""
    from microexit.model import ModelConfig

    return ModelConfig(num_classes=2, input_length=8, input_channels=2, conv1_filters=3,
                       conv1_kernel=3, conv1_stride=1, pool_kernel=2, pool_stride=2,
                       conv2_filters=2, conv2_kernel=2, dense_units=4)


def joint_loss_error(seed):
    """Worst relative gradient error of the joint two-head loss over every
    parameter of a randomly initialised tiny model."""
    from microexit import model, trainer

    rng = np.random.default_rng(seed)
    net = model.build(tiny_config(), seed=seed)
    for name in ("bn1", "bn2"):
        bn = net.layers[name]
        bn.gamma[:] = rng.uniform(0.5, 1.5, bn.channels)
        bn.beta[:] = rng.uniform(-0.5, 0.5, bn.channels)
    x = rng.uniform(-1, 1, (6, 8, 2))
    y = rng.integers(0, 2, 6)
    cfg = trainer.TrainConfig(w_fob=float(rng.uniform(0.2, 1.0)), w_base=1.0)
    _, grads = trainer.joint_loss(net, x, y, cfg)
    worst = 0.0
    for name, p in net.parameters().items():
        num = numeric_grad(lambda: trainer.joint_loss(net, x, y, cfg)[0], p)
        worst = max(worst, rel_error(grads[name], num))
    return worst
