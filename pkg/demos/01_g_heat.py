# %% [markdown]
# # Heat flow under volatility uncertainty
#
# With zero drift and zero driver the parabolic equation is the G-heat
# equation.  For a convex payoff the worst case picks the largest variance,
# for a concave one the smallest, so x^2 and -x^2 recover the two bounds.

# %%
import numpy as np

from gergodic import Field, Grid, parse_model, solve_parabolic

model = parse_model("""
[model]
b = "0"
sigma = "1"
f = "0"
[uncertainty]
sigma_lo_sq = 1.0
sigma_hi_sq = 4.0
""")
grid = Grid(-8.0, 8.0, 0.05)

# %%
for sign, label in ((1.0, "x^2"), (-1.0, "-x^2")):
    phi = Field.from_function(lambda x: sign * x**2, grid)
    u0 = solve_parabolic(model, phi, 1.0).initial
    print(f"payoff {label:>5}: u(0, 0) = {u0(0.0):+.5f}")

# %% [markdown]
# A payoff that is neither convex nor concave mixes the two levels: the
# scheme applies the upper variance where the discrete curvature is
# positive and the lower one elsewhere.

# %%
phi = Field.from_function(np.cos, grid)
tf = solve_parabolic(model, phi, 1.0)
for x in (0.0, np.pi / 2, np.pi):
    print(f"cos payoff, x = {x:.3f}: u(0, x) = {tf.initial(x):+.5f}")
