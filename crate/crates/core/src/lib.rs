pub mod client;
pub mod config;
pub mod error;
pub mod experiment;
pub mod id;
pub mod metrics;
pub mod netsim;
pub mod routing;
pub mod workload;

pub use client::{
    DhtParams, OpRecord, OpRequest, OpResult, OpType, Simulation, Termination, ValueId,
};
pub use error::{Error, Result};
pub use id::{bucket_index, xor_distance, Distance, Id256, NodeId, SampleKey};
pub use routing::{table_init, BucketFill, KBucket, Population, RoutingTable};
