# %% [markdown]
# # Choosing a drift when the volatility is uncertain
#
# Two actions push the drift by -0.5 or +0.5; the second costs 0.1 extra
# per unit time.  The ergodic constant of the Hamiltonian equation is the
# best achievable long-run cost, and the feedback read off the potential
# attains it.

# %%
from gergodic.config import load_config
from gergodic.control import control_problem, evaluate_J, optimal_feedback, random_feedbacks
from gergodic.ergodic import DiscountSchedule, vanishing_discount
from gergodic.mc_oracle import Lattice
from gergodic.models import control_from_dict, model_from_dict
from gergodic.pde import Grid

cfg = load_config("bench/control.toml")
model = model_from_dict(cfg)
ctrl = control_from_dict(cfg["control"])
grid = Grid(-8.0, 8.0, 0.1)
lattice = Lattice(-8.0, 8.0, 0.1)

sol = vanishing_discount(control_problem(model, ctrl), DiscountSchedule.geometric(), grid)
fb = optimal_feedback(ctrl, sol, model, grid)
print("lambda =", round(sol.lam, 5))
print("switch points of u*:", [round(float(x), 2) for x, a, b in zip(grid.nodes[1:], fb.u_index[:-1], fb.u_index[1:]) if a != b])

# %%
print("J(u*) =", round(evaluate_J(model, ctrl, fb, 0.0, (8.0, 16.0), lattice).J, 5))
for k, f in enumerate(random_feedbacks(ctrl, grid.nodes, 5, seed=1)):
    print(f"J(random {k}) =", round(evaluate_J(model, ctrl, f, 0.0, (8.0, 16.0), lattice).J, 5))
