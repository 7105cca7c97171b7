"""Kerr-cavity photonic logic: SLH network composition, open-system dynamics
and quasi-principal-component model reduction."""

__version__ = "0.1.0"

from .fock import (Operator, QuantumState, SpaceDescriptor, annihilation, creation, dagger, embed,
                   hermitian_eig, identity, kerr_hamiltonian, number, tensor)
from .slh import (DriveExpr, ParametricOperator, SlhTriple, beamsplitter, concat, displacement, evaluate,
                  feedback, identity_system, kerr_cavity, permutation, phase, series)
from .dynamics import (DriveSchedule, ExpectationSeries, Generator, TrajectoryConfig, lindblad_apply,
                       master_evolve, mcwf_ensemble, output_mean, steady_state)
from .reduction import (ReductionBasis, build_basis, embed_fock_state, embed_jade_state, fidelity,
                        fock_truncation_basis, jade, reduce_operator, reduced_kerr_cavity)
