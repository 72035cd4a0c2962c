pub mod attribute;
pub mod estimate;
pub mod funnel;
pub mod net;
pub mod pool;
pub mod sim;
pub mod stats;

pub use pool::{IpId, Policy, Pool, PoolConfig, PoolEntry, PoolError, Seconds, TenantId};
pub use sim::{AdversaryMetrics, SimConfig, SimError, SimReport};
