"""
Where does damage move a natural frequency?
===========================================

A stiffness loss at one spring of a long uniform chain lowers each natural
frequency in proportion to the strain energy that mode stores there.  Where
a mode barely moves, its shape is large and the springs around it carry
little strain, so the frequency drop and the normalised mode-shape
magnitude run in opposite directions along the chain.
"""

import numpy as np

from modal_transfer.population import sensitivity_demo

# %%
# Reduce each spring of a 100-DoF chain by 10% in turn and record the drop
# of the first two natural frequencies.
curves = sensitivity_demo(dof=100, reduction=0.1, n_modes=2)

for mode, rho in enumerate(curves.spearman(), start=1):
    print(f"mode {mode}: Spearman(|psi|, frequency drop) = {rho:+.3f}")

# %%
# A coarse profile: both quantities are min-max normalised to [0, 1].
print(f"\n{'location':>8} {'|psi_1|':>8} {'drop_1':>8} {'|psi_2|':>8} {'drop_2':>8}")
for loc in np.linspace(0, 99, 12).astype(int):
    print(f"{loc:>8} {curves.mode_shape[0, loc]:8.3f} {curves.frequency_shift[0, loc]:8.3f} "
          f"{curves.mode_shape[1, loc]:8.3f} {curves.frequency_shift[1, loc]:8.3f}")
