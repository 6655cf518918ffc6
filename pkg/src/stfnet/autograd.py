"""Tape-based reverse-mode differentiation over real/imaginary planes.

Complex tensors are differentiated as pairs of independent real planes;
a gradient for a complex value is carried as the complex array
``dL/d(re) + j * dL/d(im)``. Under that convention the adjoint of any
complex-linear map A is its conjugate transpose, and elementwise
products pick up a conjugated cofactor, so no Wirtinger machinery is
needed anywhere.

Every primitive here performs its numpy forward work immediately and
records a vector-Jacobian closure on the :class:`Tape`;
:func:`backward` replays the records in reverse. The spectral
primitives mirror the pure implementations in :mod:`stfnet.transform` /
:mod:`stfnet.specops` bin for bin.
"""

import numpy as np

from . import _kernels, specops
from .errors import GraphError, ShapeError
from .numeric import ComplexTensor

# --- tape machinery ----------------------------------------------------------


class Var:
    """A node value on the tape. Leaves are Vars nothing recorded into."""

    __slots__ = ("value",)

    def __init__(self, value):
        self.value = value

    @property
    def shape(self):
        return self.value.shape


class Tape:
    """Append-only record of primitive applications, in execution order."""

    def __init__(self):
        self.records = []

    def leaf(self, value) -> Var:
        return Var(np.asarray(value))

    def record(self, value, inputs, vjp) -> Var:
        out = Var(value)
        self.records.append((out, tuple(inputs), vjp))
        return out


def backward(tape: Tape, loss: Var) -> dict:
    """Accumulate d(loss)/d(node) for every node reachable from ``loss``.

    Returns a dict keyed by Var; complex nodes receive plane-pair
    gradients encoded as complex arrays.
    """
    lv = np.asarray(loss.value)
    if lv.shape != () or np.iscomplexobj(lv):
        raise GraphError(f"loss must be a real scalar, got shape {lv.shape}")
    grads: dict = {loss: np.float64(1.0)}
    for out, inputs, vjp in reversed(tape.records):
        g = grads.get(out)
        if g is None:
            continue
        contributions = vjp(g)
        for var, contrib in zip(inputs, contributions):
            if var is None or contrib is None:
                continue
            acc = grads.get(var)
            grads[var] = contrib if acc is None else acc + contrib
    return grads


def _zeros_like_grad(value):
    if np.iscomplexobj(value):
        return np.zeros(value.shape, dtype=np.complex128)
    return np.zeros(value.shape, dtype=np.float64)


# --- real-valued primitives ----------------------------------------------------


def relu(tape, x: Var) -> Var:
    mask = x.value > 0

    def vjp(g):
        return (g * mask,)

    return tape.record(np.maximum(x.value, 0.0), (x,), vjp)


def mean_axis(tape, x: Var, axis: int) -> Var:
    n = x.value.shape[axis]

    def vjp(g):
        return (np.repeat(np.expand_dims(g / n, axis), n, axis=axis),)

    return tape.record(x.value.mean(axis=axis), (x,), vjp)


def concat(tape, xs, axis: int) -> Var:
    sizes = [v.value.shape[axis] for v in xs]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(xs))
        )

    return tape.record(np.concatenate([v.value for v in xs], axis=axis), tuple(xs), vjp)


def slice_features(tape, x: Var, lo: int, hi: int) -> Var:
    """Select feature columns [lo, hi) of a (..., D) real array."""

    def vjp(g):
        gx = np.zeros_like(x.value)
        gx[..., lo:hi] = g
        return (gx,)

    return tape.record(x.value[..., lo:hi], (x,), vjp)


def flatten_trailing(tape, x: Var) -> Var:
    """(B, ...) -> (B, prod(...))."""
    shape = x.value.shape

    def vjp(g):
        return (g.reshape(shape),)

    return tape.record(x.value.reshape(shape[0], -1), (x,), vjp)


def affine(tape, x: Var, w: Var, b: Var) -> Var:
    if x.value.shape[1] != w.value.shape[0]:
        raise ShapeError(
            f"affine mismatch: {x.value.shape} @ {w.value.shape}"
        )

    def vjp(g):
        return (g @ w.value.T, x.value.T @ g, g.sum(axis=0))

    return tape.record(x.value @ w.value + b.value, (x, w, b), vjp)


def cross_entropy(tape, logits: Var, labels: np.ndarray) -> Var:
    """Mean cross-entropy from logits with a stabilized log-softmax."""
    z = logits.value
    zmax = z.max(axis=1, keepdims=True)
    logsum = zmax + np.log(np.exp(z - zmax).sum(axis=1, keepdims=True))
    logp = z - logsum
    n = z.shape[0]
    picked = logp[np.arange(n), labels]

    def vjp(g):
        grad = np.exp(logp)
        grad[np.arange(n), labels] -= 1.0
        return (grad * (g / n),)

    return tape.record(np.float64(-picked.mean()), (logits,), vjp)


def sum_squares(tape, x: Var) -> Var:
    """Sum of squared planes: real dot for real x, |z|^2 sum for complex."""
    v = x.value
    if np.iscomplexobj(v):
        value = np.float64(np.sum(v.real**2 + v.imag**2))
    else:
        value = np.float64(np.sum(v**2))

    def vjp(g):
        return (2.0 * v * g,)

    return tape.record(value, (x,), vjp)


def sum_real_part(tape, x: Var) -> Var:
    v = x.value

    def vjp(g):
        if np.iscomplexobj(v):
            return (np.full(v.shape, g, dtype=np.complex128),)
        return (np.full(v.shape, g, dtype=np.float64),)

    value = np.float64(np.sum(v.real) if np.iscomplexobj(v) else np.sum(v))
    return tape.record(value, (x,), vjp)


# --- transform primitives -------------------------------------------------------


def stft_batch(tape, x: Var, tau: int) -> Var:
    """(B, T, D) real -> (B, M, K, D) complex, per-chunk half-spectrum DFT."""
    b, t_len, d = x.value.shape
    if t_len % tau != 0:
        raise ShapeError(f"signal length {t_len} not divisible by tau={tau}")
    m = t_len // tau
    k = _kernels.half_bins(tau)
    rows = x.value.reshape(b, m, tau, d).transpose(0, 1, 3, 2).reshape(-1, tau)
    spec = _kernels.rfft_rows(rows).reshape(b, m, d, k).transpose(0, 1, 3, 2)

    def vjp(g):
        g_rows = np.ascontiguousarray(g.transpose(0, 1, 3, 2)).reshape(-1, k)
        gx = _kernels.adjoint_rfft_rows(g_rows, tau)
        gx = gx.reshape(b, m, d, tau).transpose(0, 1, 3, 2).reshape(b, t_len, d)
        return (gx,)

    return tape.record(spec, (x,), vjp)


def istft_batch(tape, z: Var, tau: int) -> Var:
    """(B, M, K, D) complex -> (B, M*tau, D) real.

    Imaginary parts of DC/Nyquist bins are projected away (they cannot
    contribute to a real signal), so their planes carry zero gradient.
    """
    b, m, k, d = z.value.shape
    rows = np.ascontiguousarray(z.value.transpose(0, 1, 3, 2)).reshape(-1, k)
    sig = _kernels.irfft_rows(rows, tau)
    sig = sig.reshape(b, m, d, tau).transpose(0, 1, 3, 2).reshape(b, m * tau, d)

    def vjp(g):
        g_rows = g.reshape(b, m, tau, d).transpose(0, 1, 3, 2).reshape(-1, tau)
        gz = _kernels.adjoint_irfft_rows(g_rows, tau)
        gz = gz.reshape(b, m, d, k).transpose(0, 1, 3, 2)
        return (gz,)

    return tape.record(sig, (z,), vjp)


# --- filtering primitives --------------------------------------------------------


def filter_apply(tape, z: Var, w: Var) -> Var:
    """Per-bin feature mixing: out[...,k,o] = sum_d z[...,k,d] w[k,d,o]."""
    if z.value.shape[-1] != w.value.shape[1]:
        raise ShapeError(
            f"filter expects {w.value.shape[1]} features, got {z.value.shape[-1]}"
        )

    def vjp(g):
        gz = np.einsum("bmko,kdo->bmkd", g, np.conj(w.value))
        gw = np.einsum("bmkd,bmko->kdo", np.conj(z.value), g)
        return (gz, gw)

    return tape.record(np.einsum("bmkd,kdo->bmko", z.value, w.value), (z, w), vjp)


def subsample_weights(tape, w: Var, stride: int) -> Var:
    def vjp(g):
        gw = np.zeros_like(w.value)
        gw[::stride] = g
        return (gw,)

    return tape.record(w.value[::stride], (w,), vjp)


def lininterp_weights(tape, w: Var, tau_base: int, tau_target: int) -> Var:
    ratio = tau_target // tau_base
    k_base = w.value.shape[0]
    k_target = _kernels.half_bins(tau_target)
    kp = np.arange(k_target)
    k_l = kp // ratio
    rem = kp % ratio
    k_r = np.minimum(k_l + 1, k_base - 1)
    frac = (rem / ratio).reshape((-1,) + (1,) * (w.value.ndim - 1))
    value = w.value[k_l] * (1.0 - frac) + w.value[k_r] * frac

    def vjp(g):
        gw = np.zeros_like(w.value)
        np.add.at(gw, k_l, g * (1.0 - frac))
        np.add.at(gw, k_r, g * frac)
        return (gw,)

    return tape.record(value, (w,), vjp)


def specinterp_weights(tape, w: Var, tau_base: int, tau_target: int) -> Var:
    """Spectral interpolation as on-tape op; linear over the planes.

    Forward ignores the imaginary parts of DC/Nyquist bins (a real
    impulse response has none), so those planes get zero gradient.
    """
    k_base = w.value.shape[0]
    tail = w.value.shape[1:]
    k_target = _kernels.half_bins(tau_target)
    value = specops._spectral_interp_raw(w.value, tau_base, tau_target)

    def vjp(g):
        g_rows = np.ascontiguousarray(g.reshape(k_target, -1).T)
        g_pad = _kernels.adjoint_rfft_rows(g_rows, tau_target)
        g_imp = np.ascontiguousarray(g_pad[:, :tau_base])
        gw = _kernels.adjoint_irfft_rows(g_imp, tau_base)
        return (gw.T.reshape((k_base,) + tail),)

    return tape.record(value, (w,), vjp)


def resolve_filter_weights_tape(tape, w: Var, tau_base: int, tau: int, interp_mode: str) -> Var:
    if tau == tau_base:
        return w
    if tau < tau_base:
        return subsample_weights(tape, w, tau_base // tau)
    if interp_mode == "linear":
        return lininterp_weights(tape, w, tau_base, tau)
    return specinterp_weights(tape, w, tau_base, tau)


# --- padding / convolution primitives --------------------------------------------


def spectral_pad_op(tape, z: Var, pad_left: int, pad_right: int) -> Var:
    """Conjugate-mirror padding along the bin axis of (B, M, K, D)."""
    k = z.value.shape[2]
    src, conj_mask = specops.pad_source_indices(k, pad_left, pad_right)
    value = z.value[:, :, src, :]
    value[:, :, conj_mask, :] = np.conj(value[:, :, conj_mask, :])

    def vjp(g):
        gz = g[:, :, pad_left : pad_left + k, :].copy()
        for out_idx in np.nonzero(conj_mask)[0]:
            gz[:, :, src[out_idx], :] += np.conj(g[:, :, out_idx, :])
        return (gz,)

    return tape.record(value, (z,), vjp)


def conv_apply(tape, zpad: Var, w: Var, rate: int, k_out: int) -> Var:
    """Dilated complex cross-correlation along bins; kernel w is (S, D, O)."""
    s_k = w.value.shape[0]
    taps = np.arange(k_out)[:, None] + np.arange(s_k)[None, :] * (rate + 1)
    gathered = zpad.value[:, :, taps, :]
    value = np.einsum("bmksd,sdo->bmko", gathered, w.value)

    def vjp(g):
        gz = np.zeros_like(zpad.value)
        gw = np.empty_like(w.value)
        w_conj = np.conj(w.value)
        for s in range(s_k):
            off = s * (rate + 1)
            gz[:, :, off : off + k_out, :] += np.einsum(
                "bmko,do->bmkd", g, w_conj[s]
            )
            gw[s] = np.einsum(
                "bmkd,bmko->do", np.conj(zpad.value[:, :, off : off + k_out, :]), g
            )
        return (gz, gw)

    return tape.record(value, (zpad, w), vjp)


def pool_bins(tape, z: Var, kept: int, rho: float) -> Var:
    """Keep the lowest ``kept`` bins, rescaled by rho for the shorter window."""

    def vjp(g):
        gz = np.zeros_like(z.value)
        gz[:, :, :kept, :] = g * rho
        return (gz,)

    return tape.record(z.value[:, :, :kept, :] * rho, (z,), vjp)


# --- interleave primitives ---------------------------------------------------------


def gather_fine(tape, zf: Var, fine_bins: np.ndarray, ratio: int) -> Var:
    """(B, M*S, Kf, D) -> (B, M, S, nb, D): aligned fine chunks per coarse chunk."""
    b, mj, _, d = zf.value.shape
    m = mj // ratio
    value = zf.value[:, :, fine_bins, :].reshape(b, m, ratio, len(fine_bins), d)

    def vjp(g):
        gz = np.zeros_like(zf.value)
        gz[:, :, fine_bins, :] = g.reshape(b, mj, len(fine_bins), d)
        return (gz,)

    return tape.record(value, (zf,), vjp)


def merge_matvec(tape, z: Var, wm: Var) -> Var:
    """Apply the (S, S) merge matrix across the chunk-within-chunk axis."""

    def vjp(g):
        gz = np.einsum("ts,bmtnd->bmsnd", np.conj(wm.value), g)
        gw = np.einsum("bmtnd,bmsnd->ts", g, np.conj(z.value))
        return (gz, gw)

    return tape.record(np.einsum("ts,bmsnd->bmtnd", wm.value, z.value), (z, wm), vjp)


def magnitude(tape, z: Var) -> Var:
    """|z| elementwise with subgradient 0 at the origin."""
    mag = np.abs(z.value)
    safe = np.where(mag == 0.0, 1.0, mag)
    unit = z.value / safe

    def vjp(g):
        return (g * unit * (mag > 0),)

    return tape.record(mag, (z,), vjp)


def softmax_axis(tape, x: Var, axis: int) -> Var:
    shifted = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    sm = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = np.sum(g * sm, axis=axis, keepdims=True)
        return (sm * (g - inner),)

    return tape.record(sm, (x,), vjp)


def merge_combine(tape, att: Var, z: Var, ratio: int) -> Var:
    """ratio * sum_s att[..., s, ...] * z[..., s, ...] over the S axis (2)."""
    value = ratio * np.sum(att.value * z.value, axis=2)

    def vjp(g):
        ge = np.expand_dims(g, 2)
        g_att = ratio * (ge.real * z.value.real + ge.imag * z.value.imag)
        g_z = ratio * att.value * ge
        return (g_att, g_z)

    return tape.record(value, (att, z), vjp)


def scatter_bins(tape, base: Var, updates: Var, bins: np.ndarray) -> Var:
    """Replace the listed bins of (B, M, K, D) with ``updates``."""
    value = base.value.copy()
    value[:, :, bins, :] = updates.value

    def vjp(g):
        g_base = g.copy()
        g_base[:, :, bins, :] = 0.0
        return (g_base, g[:, :, bins, :])

    return tape.record(value, (base, updates), vjp)


def interleave_tape(tape, rep_vars, window_set, wm_vars) -> list:
    """Tape version of :func:`stfnet.specops.interleave` over batched reps.

    ``rep_vars`` are (B, M_i, K_i, D) complex Vars in ascending window
    order; ``wm_vars`` maps each chunk ratio to its (S, S) merge Var.
    Sources are always the raw input reps, never merged outputs.
    """
    out = []
    for i, rv in enumerate(rep_vars):
        if i == 0:
            out.append(rv)
            continue
        cur = rv
        for j, ratio, bins in specops.alignment_groups(window_set, i):
            zg = gather_fine(tape, rep_vars[j], bins // ratio, ratio)
            v = merge_matvec(tape, zg, wm_vars[ratio])
            att = softmax_axis(tape, magnitude(tape, v), axis=2)
            upd = merge_combine(tape, att, zg, ratio)
            cur = scatter_bins(tape, cur, upd, bins)
        out.append(cur)
    return out


# --- parameters and optimizer ---------------------------------------------------


class Param:
    """Named learnable array: float64 (real) or complex128 (plane pair)."""

    __slots__ = ("value", "kind", "constraint")

    def __init__(self, value, kind: str, constraint: str = "none"):
        if kind not in ("real", "complex"):
            raise ShapeError(f"unknown param kind {kind!r}")
        if constraint not in ("none", "real-dc-nyquist"):
            raise ShapeError(f"unknown constraint {constraint!r}")
        dtype = np.complex128 if kind == "complex" else np.float64
        self.value = np.asarray(value, dtype=dtype)
        self.kind = kind
        self.constraint = constraint

    def planes(self) -> np.ndarray:
        """Stacked float64 view-copy: (2, ...) for complex, (1, ...) for real."""
        if self.kind == "complex":
            return np.stack([self.value.real, self.value.imag])
        return self.value[None, ...].copy()

    def set_planes(self, planes: np.ndarray) -> None:
        if self.kind == "complex":
            self.value = planes[0] + 1j * planes[1]
        else:
            self.value = planes[0].copy()
        self.apply_constraint()

    def apply_constraint(self) -> None:
        if self.constraint == "real-dc-nyquist" and self.kind == "complex":
            self.value[0] = self.value[0].real
            self.value[-1] = self.value[-1].real

    def tensor(self) -> ComplexTensor:
        if self.kind != "complex":
            raise ShapeError("tensor() is only defined for complex params")
        return ComplexTensor(self.value.real.copy(), self.value.imag.copy())


class ParamStore:
    """Ordered mapping of unique parameter names to :class:`Param`."""

    def __init__(self):
        self._params: dict = {}

    def add(self, name: str, value, kind: str, constraint: str = "none") -> Param:
        if name in self._params:
            raise ShapeError(f"duplicate parameter name {name!r}")
        p = Param(value, kind, constraint)
        p.apply_constraint()
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def plane_count(self) -> int:
        """Learnable degrees of freedom (complex entries count twice)."""
        return sum(
            p.value.size * (2 if p.kind == "complex" else 1)
            for p in self._params.values()
        )

    def leaf_vars(self) -> dict:
        return {name: Var(p.value) for name, p in self._params.items()}


def param_grads(grads_by_var: dict, leaf_vars: dict, store: ParamStore) -> dict:
    """Gradient per parameter name, zeros for parameters off the loss path."""
    out = {}
    for name, var in leaf_vars.items():
        g = grads_by_var.get(var)
        out[name] = _zeros_like_grad(store[name].value) if g is None else g
    return out


class Adam:
    """Plane-wise Adam with bias correction and constraint re-projection."""

    def __init__(self, store: ParamStore, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {n: np.zeros_like(p.planes()) for n, p in store.items()}
        self._v = {n: np.zeros_like(p.planes()) for n, p in store.items()}

    def step(self, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.store.items():
            g = grads[name]
            g_planes = (
                np.stack([g.real, g.imag]) if p.kind == "complex" else np.asarray(g)[None]
            )
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1 - b1) * g_planes
            v *= b2
            v += (1 - b2) * g_planes**2
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            planes = p.planes()
            planes -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            p.set_planes(planes)


# --- finite-difference verification ------------------------------------------------


def gradcheck(build_loss, store: ParamStore, step=1e-5, tol=1e-4) -> dict:
    """Compare tape gradients against central differences per plane entry.

    ``build_loss(tape, leaf_vars)`` must return the scalar loss Var for
    the current parameter values. Relative error uses a floor of 1e-3 in
    the denominator so near-zero gradient pairs are compared absolutely.
    """
    tape = Tape()
    leaves = store.leaf_vars()
    loss = build_loss(tape, leaves)
    grads = param_grads(backward(tape, loss), leaves, store)

    def loss_value() -> float:
        t = Tape()
        return float(build_loss(t, store.leaf_vars()).value)

    report = {"step": step, "tolerance": tol, "passed": True, "params": {}}
    for name, p in store.items():
        analytic = grads[name]
        a_planes = (
            np.stack([analytic.real, analytic.imag])
            if p.kind == "complex"
            else np.asarray(analytic)[None]
        )
        worst = 0.0
        base = p.value.copy()
        planes = p.planes()
        for flat in range(planes.size):
            idx = np.unravel_index(flat, planes.shape)
            orig = planes[idx]
            planes[idx] = orig + step
            p.set_planes(planes)
            up = loss_value()
            planes[idx] = orig - step
            p.set_planes(planes)
            down = loss_value()
            planes[idx] = orig
            p.value = base.copy()
            numeric = (up - down) / (2 * step)
            a = a_planes[idx]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-3)
            worst = max(worst, rel)
        ok = worst <= tol
        report["params"][name] = {"max_rel_err": worst, "passed": ok}
        report["passed"] = report["passed"] and ok
    return report
