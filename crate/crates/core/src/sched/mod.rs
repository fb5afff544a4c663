//! Task DAG construction for each scheduling policy and the two-stream
//! discrete-event simulator that turns it into a timeline.

mod graph;
mod sim;

pub use graph::{
    build_graph, build_graph_with_plan, Resource, Subject, Task, TaskGraph, TaskId, TaskKind,
};
pub use sim::{iteration_time, simulate, throughput, Event, Timeline};
