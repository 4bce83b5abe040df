"""Finite-difference verification of analytic gradients.

``gradcheck`` compares the gradients produced by ``Tensor.backward``
against central differences at 64-bit precision. The default step is
1e-4 scaled by element magnitude. The relative error reported per input
is |analytic - numeric| / max(1, |analytic|, |numeric|), which behaves
like an absolute error near zero and a relative error for large values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class GradcheckFailure:
    input_index: int
    element_index: int
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradcheckReport:
    name: str
    tol: float
    max_rel_error: list = field(default_factory=list)  # one entry per input
    failures: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.failures

    def __str__(self):
        worst = max(self.max_rel_error) if self.max_rel_error else 0.0
        status = "ok" if self.passed else f"FAIL ({len(self.failures)} elements)"
        lines = [f"gradcheck {self.name}: {status}, max rel error {worst:.3e} (tol {self.tol:.1e})"]
        for f in self.failures[:5]:
            lines.append(
                f"  input {f.input_index} element {f.element_index}: "
                f"analytic {f.analytic:.6e} numeric {f.numeric:.6e} rel {f.rel_error:.3e}")
        return "\n".join(lines)


def gradcheck(fn, inputs, tol=1e-4, step=1e-4, name="fn", max_elements=None, rng=None):
    """Check d(fn)/d(inputs) against central finite differences.

    fn must map the given list of float64 Tensors to a scalar Tensor,
    building a fresh graph on every call (input data is perturbed in
    place between calls). When ``max_elements`` is set, only that many
    randomly chosen elements per input are probed, which keeps deep-
    network checks affordable.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise ValueError(f"gradcheck requires float64 inputs, got {t.dtype}")
        if not t.requires_grad:
            raise ValueError("gradcheck inputs must require grad")
        t.zero_grad()

    out = fn(inputs)
    if out.size != 1:
        raise ValueError(f"gradcheck target must be scalar, got shape {out.shape}")
    out.backward()
    analytic = [t.grad.copy() for t in inputs]

    if rng is None:
        rng = np.random.default_rng(0)

    report = GradcheckReport(name=name, tol=tol)
    for i, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        aflat = analytic[i].reshape(-1)
        if max_elements is not None and flat.size > max_elements:
            idxs = rng.choice(flat.size, size=max_elements, replace=False)
        else:
            idxs = range(flat.size)
        worst = 0.0
        for j in idxs:
            old = flat[j]
            h = step * max(1.0, abs(old))
            flat[j] = old + h
            f_plus = float(fn(inputs).data)
            flat[j] = old - h
            f_minus = float(fn(inputs).data)
            flat[j] = old
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(aflat[j])
            rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, rel)
            if rel > tol:
                report.failures.append(GradcheckFailure(i, int(j), a, numeric, rel))
        report.max_rel_error.append(worst)
    return report
