//! Growing-L2-regularization pruning on small dense and convolutional networks.
//!
//! * [`quadratic_lab`]: closed-form behaviour of a growing L2 penalty on a
//!   local quadratic model.
//! * [`netcore`]: minimal networks, SGD with per-group penalties, checkpoints.
//! * [`groups`]: pruning plans, group norms, masks and the hard prune.
//! * [`scheduler`]: the GReg-1 and GReg-2 penalty schedules.
//! * [`harness`]: datasets, training loops, schedule comparisons, records.

pub mod groups;
pub mod harness;
pub mod netcore;
pub mod quadratic_lab;
pub mod scheduler;
pub mod stats;
