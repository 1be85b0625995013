//! Config-driven experiment runner and output files.
//!
//! Output formats (all plain text):
//!
//! * `metrics.csv`: a `# uapdfl-metrics v1` line, then columns
//!   `round,client,arm,seed,test_accuracy,train_loss,dropout,h_peers,cum_scalars`.
//!   Round 0 evaluates the initial models. `dropout` is 0/1, `h_peers` is the
//!   number of peers whose classifier head was averaged in, and `cum_scalars`
//!   counts every scalar the client has received through that round.
//! * `divergence.csv`: a `# uapdfl-divergence v1` line, then
//!   `round,client,div_0,...,div_{M-1}`, one row of the pairwise matrix per client.
//! * `summary.json`: per-arm final accuracy per seed with mean and sample
//!   standard deviation, plus any failed runs.
//! * `bound_check_seed<seed>.csv`: per-round noise-free gap and bound and
//!   Monte Carlo mean gap and bound.

mod config;
mod run;

pub use config::*;
pub use run::*;
