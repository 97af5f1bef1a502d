//! Scalar probability modeling shared by the tensor model and the coder:
//! Laplace interval probabilities, quantization and the quadtree decode
//! schedule.

mod laplace;
mod quadtree;
mod quantize;

pub use laplace::{laplace_bits, laplace_bits_grad, laplace_cdf, laplace_interval_prob, laplace_pmf_table, table_radius, P_FLOOR, SIGMA_MIN};
pub use quadtree::{QuadtreeSchedule, STEPS as QUADTREE_STEPS};
pub use quantize::{quantize, round_half_away, QuantMode};
