import numpy as np

from hopformer import tensor as T


def numeric_grad(f, arrays, i, h=1e-5):
    """Central differences of scalar ``f(*arrays)`` with respect to ``arrays[i]``."""
    x = arrays[i]
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        up = f(*arrays)
        x[idx] = old - h
        down = f(*arrays)
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / denom)


def gradcheck(build, arrays, h=1e-5):
    """Worst relative error between tape gradients and central differences.

    ``build(*tensors)`` must return a scalar Tensor; ``arrays`` are float64.
    """
    tensors = [T.Tensor(a.copy(), requires_grad=True) for a in arrays]
    build(*tensors).backward()

    def f(*xs):
        with T.no_grad():
            return float(build(*[T.Tensor(x) for x in xs]).data)

    work = [a.copy() for a in arrays]
    return max(rel_err(t.grad, numeric_grad(f, work, i, h)) for i, t in enumerate(tensors))


def dense_normalized(n, edges):
    """Independent dense construction of D^-1/2 (A + I) D^-1/2."""
    A = np.zeros((n, n))
    for u, v in edges:
        if u != v:
            A[u, v] = A[v, u] = 1.0
    A += np.eye(n)
    d = A.sum(axis=1)
    return A / np.sqrt(np.outer(d, d))


def _shape(rng, ndim, lo=1, hi=4):
    return tuple(int(s) for s in rng.integers(lo, hi + 1, size=ndim))


def _weighted(out, rng):
    """Reduce to a scalar with fixed random weights so every output entry matters."""
    w = rng.standard_normal(out.shape)
    return T.sum(T.mul(out, w))


def op_cases():
    """``name -> make(rng) -> (build, arrays)`` for each differentiable op."""

    def matmul(rng):
        b, m, k, n = _shape(rng, 4)
        w = rng.standard_normal((b, m, n))
        return lambda x, y: T.sum(T.mul(T.matmul(x, y), w)), [
            rng.standard_normal((b, m, k)), rng.standard_normal((k, n))]

    def add(rng):
        a, b = _shape(rng, 2)
        w = rng.standard_normal((a, b))
        return lambda x, y: T.sum(T.mul(T.add(x, y), w)), [
            rng.standard_normal((a, b)), rng.standard_normal((b,))]

    def sub(rng):
        a, b = _shape(rng, 2)
        w = rng.standard_normal((a, b))
        return lambda x, y: T.sum(T.mul(T.sub(x, y), w)), [
            rng.standard_normal((a, 1)), rng.standard_normal((a, b))]

    def mul(rng):
        a, b = _shape(rng, 2)
        return lambda x, y: T.sum(T.mul(x, y)), [
            rng.standard_normal((a, b)), rng.standard_normal((1, b))]

    def scale(rng):
        shp, c = _shape(rng, 2), float(rng.standard_normal())
        w = rng.standard_normal(shp)
        return lambda x: T.sum(T.mul(T.scale(x, c), w)), [rng.standard_normal(shp)]

    def concat(rng):
        a, b, c = _shape(rng, 3)
        w = rng.standard_normal((a, b + c))
        return lambda x, y: T.sum(T.mul(T.concat([x, y]), w)), [
            rng.standard_normal((a, b)), rng.standard_normal((a, c))]

    def softmax(rng):
        shp = _shape(rng, 3)
        w = rng.standard_normal(shp)
        return lambda x: T.sum(T.mul(T.softmax(x), w)), [rng.standard_normal(shp)]

    def layernorm(rng):
        shp = _shape(rng, 2, 2, 5)
        w = rng.standard_normal(shp)
        return lambda x, g, b: T.sum(T.mul(T.layernorm(x, g, b), w)), [
            rng.standard_normal(shp), rng.standard_normal(shp[-1:]), rng.standard_normal(shp[-1:])]

    def gelu(rng):
        shp = _shape(rng, 2)
        w = rng.standard_normal(shp)
        return lambda x: T.sum(T.mul(T.gelu(x), w)), [2 * rng.standard_normal(shp)]

    def dropout(rng):
        shp = _shape(rng, 2)
        seed = int(rng.integers(2**31))
        w = rng.standard_normal(shp)
        # same stream on every call, so the mask is fixed across perturbations
        return lambda x: T.sum(T.mul(T.dropout(x, 0.3, np.random.default_rng(seed)), w)), [
            rng.standard_normal(shp)]

    def cross_entropy(rng):
        b, c = _shape(rng, 2, 1, 5)
        y = rng.dirichlet(np.ones(c), size=b)
        return lambda x: T.cross_entropy(x, y), [rng.standard_normal((b, c))]

    def transpose(rng):
        shp = _shape(rng, 3)
        axes = tuple(rng.permutation(3))
        w = rng.standard_normal(tuple(shp[i] for i in axes))
        return lambda x: T.sum(T.mul(T.transpose(x, axes), w)), [rng.standard_normal(shp)]

    def slice_(rng):
        a, b = _shape(rng, 2, 2, 5)
        w = rng.standard_normal((a - 1, b))
        return lambda x: T.sum(T.mul(x[1:, :], w)), [rng.standard_normal((a, b))]

    def gather(rng):
        a, b = _shape(rng, 2, 2, 5)
        idx = rng.integers(0, a, size=a + 1)
        w = rng.standard_normal((a + 1, b))
        return lambda x: T.sum(T.mul(x[idx], w)), [rng.standard_normal((a, b))]

    def mean(rng):
        shp = _shape(rng, 3)
        w = rng.standard_normal(shp[:1] + shp[2:])
        return lambda x: T.sum(T.mul(T.mean(x, axis=1), w)), [rng.standard_normal(shp)]

    def sum_(rng):
        shp = _shape(rng, 2)
        return lambda x: T.sum(x), [rng.standard_normal(shp)]

    def reshape(rng):
        a, b = _shape(rng, 2)
        w = rng.standard_normal((b, a))
        return lambda x: T.sum(T.mul(T.reshape(x, (b, a)), w)), [rng.standard_normal((a, b))]

    return {"matmul": matmul, "add": add, "sub": sub, "mul": mul, "scale": scale,
            "concat": concat, "softmax": softmax, "layernorm": layernorm, "gelu": gelu,
            "dropout": dropout, "cross_entropy": cross_entropy, "transpose": transpose,
            "slice": slice_, "gather": gather, "mean": mean, "sum": sum_, "reshape": reshape}


def tiny_model_gradcheck(seed=0):
    """Finite-difference check of every parameter of a K=2, d_m=8, L=1 model on b=3 nodes."""
    from hopformer.model import ModelConfig, NAGphormer, node_loss

    rng = np.random.default_rng(seed)
    cfg = ModelConfig(K=2, in_dim=3, hidden=8, layers=1, heads=2, dropout=0.2,
                      num_classes=3, dtype="float64")
    model = NAGphormer(cfg, seed=seed)
    # move off the zero/one initialization so no parameter sits at a special point
    for p in model.parameters():
        p.data = p.data + 0.3 * rng.standard_normal(p.shape)
    tokens = rng.standard_normal((3, 3, 3))
    labels = rng.dirichlet(np.ones(3), size=3)
    drop_seed = int(rng.integers(2**31))

    def loss():
        logits = model.forward(tokens, training=True, rng=np.random.default_rng(drop_seed))
        return node_loss(logits, labels)

    loss().backward()
    worst = 0.0
    for name, p in model.params.items():
        analytic = p.grad.copy()

        def f(x, p=p):
            p.data = x
            with T.no_grad():
                return float(loss().data)

        base = p.data.copy()
        numeric = numeric_grad(f, [base.copy()], 0)
        p.data = base
        worst = max(worst, rel_err(analytic, numeric))
    return worst
