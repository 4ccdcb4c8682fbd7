//! 3D molecular encoder, coordinate noise, internal coordinates, the
//! torsion Jacobian and three quadratic energies around an equilibrium
//! structure.

mod energy;
mod geometry;
mod jacobian;
mod model;

pub use energy::{energy_coord, energy_frad, energy_slide, EnergyParams};
pub use geometry::{
    add_coord_noise, add_coord_noise_with, bond_angle, bond_length, build_radius_graph, dihedral, internal_coords,
    wrap_angle, InternalCoords, Molecule, NoisySample, Topology, Vec3,
};
pub use jacobian::{compute_torsion_jacobian, moving_side, rotate_about_bond, twist, TorsionJacobian, TORSION_STEP};
pub use model::{Encoder3d, Encoder3dConfig, Encoder3dOutput, GraphBatch, MAX_ATOMIC_NUMBER};
