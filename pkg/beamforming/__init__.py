from .beamforming_solver import BeamformingSolver, ALGORITHMS

__all__ = ['BeamformingSolver', 'ALGORITHMS']
