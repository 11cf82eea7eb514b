"""Hypothesis strategies shared by the test modules."""

from __future__ import annotations

from hypothesis import strategies as st

from nnwalk.model import StepModel


@st.composite
def models(draw, transient_only: bool = False):
    kind = draw(st.sampled_from(["lambda", "power", "logpow", "const", "table"]))
    if kind == "lambda":
        K = draw(st.integers(1, 3))
        B = draw(st.floats(1.2 if transient_only else 0.5, 4.0))
        return StepModel.lambda_family(K, B)
    if kind == "power":
        return StepModel.power(draw(st.floats(0.1, 0.9)), draw(st.floats(0.2, 3.0)))
    if kind == "logpow":
        return StepModel.log_power(draw(st.floats(0.2, 2.0)), draw(st.floats(0.2, 3.0)))
    if kind == "const":
        return StepModel.constant(draw(st.floats(0.02 if transient_only else 0.0, 0.45)))
    vals = draw(st.lists(st.floats(0.0, 0.49), min_size=60, max_size=120))
    return StepModel.table(vals)
