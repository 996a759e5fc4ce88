"""Small builders shared by the test modules."""

from pathlib import Path

from gergodic.config import load_config
from gergodic.models import model_from_dict, parse_model

BENCH = Path(__file__).resolve().parent.parent / "bench"


def make_model(b="0", sigma="1", f="0", g="0", h="0", lo=1.0, hi=4.0, **consts):
    lines = ["[model]", f'b = "{b}"', f'sigma = "{sigma}"', f'f = "{f}"', f'g = "{g}"', f'h = "{h}"']
    lines += [f"{k} = {float(v)!r}" for k, v in consts.items()]
    lines += ["[uncertainty]", f"sigma_lo_sq = {float(lo)!r}", f"sigma_hi_sq = {float(hi)!r}"]
    return parse_model("\n".join(lines) + "\n")


def bench_config(name):
    return load_config(BENCH / f"{name}.toml")


def bench_model(name):
    return model_from_dict(bench_config(name))
