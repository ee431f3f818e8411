"""Structure of a measurement model: blocks, invariant states, period.

Run:  python demos/01_structure.py
"""
import numpy as np

from enclosure_lab import systems
from enclosure_lab.errors import TransientPartError
from enclosure_lab.structure import decompose

np.set_printoptions(precision=4, suppress=True)

# A qubit measured without disturbing its pointer basis: each basis vector is
# its own invariant subspace.
ch = systems.system_a()
dec = decompose(ch)
print("System A blocks:", dec.dims, "period", dec.period)
for a, m in enumerate(dec.projectors):
    print(f"  M_{a} =\n{m.real}")

# Two coherent 2x2 blocks.  The invariant state of each block is full rank on
# its block and the Cesaro averages converge at rate lambda_hat.
ch = systems.system_b()
dec = decompose(ch)
print("\nSystem B blocks:", dec.dims, "mixing rate lambda_hat=%.4f c_hat=%.3f" % dec.mixing_rate)
print("certificate residuals:", {k: f"{v:.1e}" for k, v in dec.residuals.items()})

# Twin copies of one block: the dual fixed space is larger than the number of
# blocks, which flags equivalent blocks.
dec = decompose(systems.system_c())
print("\nSystem C: dual fixed dim", dec.dual_fixed_dim, "for", dec.n_blocks, "blocks ->",
      "equivalent blocks" if dec.has_equivalent_blocks else "distinct blocks")

print("\nclassical 2-cycle period:", decompose(systems.two_cycle()).period)

try:
    decompose(systems.decaying_level())
except TransientPartError as exc:
    print("\ndecaying level refused:", exc)
