# %% [markdown]
# # Long-run cost of an Ornstein-Uhlenbeck state
#
# The running cost 1/(1+x^2) is paid while the state mean-reverts.  We
# extract the ergodic constant twice: from discounted problems as the
# discount vanishes, and from the slope of the undiscounted value in the
# horizon.  Without uncertainty the answer is a Gaussian integral.

# %%
import numpy as np

from gergodic.config import load_config
from gergodic.ergodic import DiscountSchedule, ErgodicProblem, implied_lambda, large_time, vanishing_discount
from gergodic.models import model_from_dict
from gergodic.pde import Field, Grid

grid = Grid(-8.0, 8.0, 0.1)
bench = "bench/{}.toml"

# %%
for name in ("ou", "ou_nonlinear"):
    model = model_from_dict(load_config(bench.format(name)))
    problem = ErgodicProblem(model)
    sol = vanishing_discount(problem, DiscountSchedule.geometric(), grid)
    lt, rep = large_time(problem, Field.constant(0.0, grid), (4.0, 8.0, 16.0), 0.0, grid)
    print(f"{name}: discounted {sol.lam:.5f}  horizon slope {lt:.5f}  residual-implied {implied_lambda(problem, sol.v):.5f}")
    for eps, val in sol.lambda_history:
        print(f"    eps = {eps:<7g} eps*v(0) = {val:.6f}")

# %% [markdown]
# The classical value is E[1/(1+X^2)] for X ~ N(0, 1/2).

# %%
t, w = np.polynomial.hermite.hermgauss(80)
print("Gaussian integral:", float(np.sum(w / (1 + t**2)) / np.sqrt(np.pi)))
