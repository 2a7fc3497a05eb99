//! Quaternions, dual quaternions, rigid transforms, spherical harmonics and
//! exact nearest-neighbour search.

mod dual_quat;
mod knn;
mod linalg;
mod quat;
mod sh;

pub use dual_quat::{dq_from_rigid, dq_to_rigid, rot_of, DualQuaternion, RigidTransform, RIGID_TOL};
pub use knn::{brute_force_knn, KnnIndex, Neighbor};
pub use linalg::{Mat3, Vec3};
pub use quat::{normalize_backward, quat_to_rot, rotation_jacobian, Quaternion};
pub use sh::{
    basis_count, rgb_to_dc, sh_basis, sh_basis_grad, sh_eval, sh_raw, SHCoefficients,
    MAX_SH_DEGREE, SH_C0, SH_C1, SH_C2, SH_C3,
};
