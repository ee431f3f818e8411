"""Feedback that steers every trajectory into a chosen block.

Starting in the second pointer state, measurement alone never leaves it.  The
controller rotates with exp(-i u sigma_x) after each measurement, choosing u
to minimize the exact expected Lyapunov value at the end of the block.
"""
import numpy as np

from enclosure_lab import systems
from enclosure_lab.control import (ControlConfig, FeedbackController, check_controllability,
                                   choose_epsilon, estimate_delta0)
from enclosure_lab.identify import analyze_identifiability
from enclosure_lab.structure import decompose
from enclosure_lab.trajectory import fit_rate, simulate_ensemble

ch = systems.system_a()
dec = decompose(ch)
rep = analyze_identifiability(ch, dec)
target = 0
print("controllability:", check_controllability(dec, target, systems.SIGMA_X))

probe = ControlConfig(target, systems.SIGMA_X, np.pi / 2, rep.uniform_length_N, 1.0)
delta0, _ = estimate_delta0(ch, dec, probe, samples=16)
choice = choose_epsilon(delta0, rep.kappa_prime(target), dec.n_blocks)
print("epsilon choice:", choice.as_dict())

rho0 = np.diag([0.0, 1.0])
for u_bound in (0.0, np.pi / 2):
    cfg = ControlConfig(target, systems.SIGMA_X, u_bound, rep.uniform_length_N, choice.epsilon)
    ens = simulate_ensemble(ch, dec, rho0, 200, 120, master_seed=1,
                            controller=FeedbackController(ch, dec, cfg, rep.uniform_length_N))
    v = ens.mean("V")
    print(f"\nu_bound={u_bound:.4f}: mean V at steps 0,1,10,100 = {v[[0, 1, 10, 100]]}")
    if u_bound > 0:
        print("first controls:", np.unique(ens.controls[:, :2]))
        print("rate of mean V after the first step: %.3f per step" % fit_rate(v, None, mean_floor=0.0).gamma)
