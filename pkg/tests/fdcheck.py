"""Central finite-difference gradient checker (float64)."""

import torch


def numeric_grad(fn, inputs, eps=1e-6):
    """Per-coordinate central differences of scalar ``fn(*inputs)`` w.r.t. each input tensor."""
    grads = []
    with torch.no_grad():
        for x in inputs:
            g = torch.zeros_like(x)
            flat, gflat = x.view(-1), g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                hi = float(fn(*inputs))
                flat[i] = orig - eps
                lo = float(fn(*inputs))
                flat[i] = orig
                gflat[i] = (hi - lo) / (2 * eps)
            grads.append(g)
    return grads


def analytic_grad(fn, inputs):
    leaves = [x.detach().clone().requires_grad_(True) for x in inputs]
    out = fn(*leaves)
    return list(torch.autograd.grad(out, leaves, allow_unused=True))


def relative_error(fn, inputs, eps=1e-6):
    """``||g_analytic - g_numeric|| / max(||g_analytic|| + ||g_numeric||, 1e-12)`` over all inputs."""
    inputs = [x.detach().clone().double() for x in inputs]
    ga = analytic_grad(fn, inputs)
    gn = numeric_grad(fn, inputs, eps)
    ga = torch.cat([torch.zeros_like(n).reshape(-1) if a is None else a.reshape(-1) for a, n in zip(ga, gn)])
    gn = torch.cat([n.reshape(-1) for n in gn])
    return float((ga - gn).norm() / max(float(ga.norm() + gn.norm()), 1e-12))


def param_fn(module, call):
    """Turn ``call(module)`` into a function of the module's parameters (for finite differencing)."""
    names = [n for n, p in module.named_parameters() if p.requires_grad]

    def fn(*values):
        params = dict(zip(names, values))
        return call(lambda *a, **k: torch.func.functional_call(module, params, a, k))

    values = [dict(module.named_parameters())[n] for n in names]
    return fn, values
