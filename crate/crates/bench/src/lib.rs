//! Benchmarks for `travpool`: allocation, iteration with gaps, threaded
//! allocation, partitioned iteration and memory accounting. Results go out
//! as CSV rows.

pub mod element;
pub mod record;
pub mod runs;

pub use element::{draw_values, fold, workload_kernel, Element24, RANDOM_VALUES};
pub use record::{BenchRecord, CsvSink, Measurement, HEADER};
pub use runs::{
    accounting_overhead, gapped_pool, memory_report, run_alloc, run_iter, run_mt_alloc,
    run_par_iter, speedup, BenchConfig, BIN_SIZE_SWEEP, THREAD_SWEEP,
};
