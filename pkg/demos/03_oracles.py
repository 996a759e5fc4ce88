# %% [markdown]
# # Checking the PDE solver against independent oracles
#
# The trinomial lattice and the Monte-Carlo scenario search share no code
# with the finite-difference scheme.  Open-loop scenarios cannot react to
# the path, so they only bound the adapted worst case from below.

# %%
from gergodic import Field, Grid, parse_model, solve_finite_bsde
from gergodic.gcalculus import UncertaintyInterval
from gergodic.mc_oracle import Lattice, LinearDriver, lattice_value, linear_bsde_explicit, upper_expectation_scenarios

text = """
[model]
b = "{b}"
sigma = "1"
f = "{f}"
g = "{g}"
alpha2 = 0.5
[uncertainty]
sigma_lo_sq = 1.0
sigma_hi_sq = 4.0
"""
grid = Grid(-8.0, 8.0, 0.05)
lattice = Lattice(-8.0, 8.0, 0.05)

# %%
ou = parse_model(text.format(b="-x", f="1/(1+x^2)", g="0"))
y_pde, z_pde = solve_finite_bsde(ou, Field.constant(0.0, grid), 2.0, 0.5)
print(f"OU running cost, T=2: pde {y_pde:.5f}  lattice {lattice_value(ou, '0', 2.0, lattice)(0.5):.5f}")

# %%
lin = parse_model(text.format(b="0", f="-y", g="0.5*z"))
phi = Field.from_function(lambda x: x**2, grid)
print("linear driver, payoff B_T^2:")
print("  pde       ", solve_finite_bsde(lin, phi, 1.0, 0.0)[0])
print("  lattice   ", lattice_value(lin, "x^2", 1.0, lattice)(0.0))
print("  explicit  ", linear_bsde_explicit(LinearDriver(a=-1.0, d=0.5, payoff="x^2"), 1.0, UncertaintyInterval(1.0, 4.0)))

# %%
bm = parse_model(text.format(b="0", f="0", g="0"))
res = upper_expectation_scenarios(bm, "sin(x)", 1.0, 4, 2, 0.3, 20_000, seed=0, details=True)
print(f"sin payoff: best open-loop {res.value:.4f} (levels {res.levels}), adapted lattice "
      f"{lattice_value(bm, 'sin(x)', 1.0, lattice)(0.3):.4f}")
