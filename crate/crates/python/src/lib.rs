//! Python bindings. Payloads cross the boundary as `bytes` of exactly the
//! pool's payload size.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyMemoryError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use ::travpool as core;
use core::oracle::fuzz::{fuzz as run_fuzz, FuzzConfig, Verdict};
use core::oracle::FreeTopCheck;

create_exception!(travpool, PoolError, PyException, "Misuse of a pool: bad handle, double free, pseudo slot, ...");

fn err(e: core::PoolError) -> PyErr {
    match e {
        core::PoolError::OutOfMemory => PyMemoryError::new_err(e.to_string()),
        core::PoolError::Size(_) | core::PoolError::Argument(_) | core::PoolError::PayloadSize { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PoolError::new_err(e.to_string()),
    }
}

/// Reference to a live element.
#[pyclass(frozen, eq, hash, skip_from_py_object, module = "travpool")]
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct Handle(core::Handle);

#[pymethods]
impl Handle {
    #[getter]
    fn slot(&self) -> u32 {
        self.0.slot()
    }

    fn __repr__(&self) -> String {
        format!("Handle({:?}, slot={})", self.0.bin(), self.0.slot())
    }
}

/// Position in a pool's iteration order.
#[pyclass(frozen, eq, hash, skip_from_py_object, module = "travpool")]
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct Cursor(core::Cursor);

#[pymethods]
impl Cursor {
    #[getter]
    fn slot(&self) -> u32 {
        self.0.slot()
    }

    fn __repr__(&self) -> String {
        format!("Cursor({:?}, slot={})", self.0.bin(), self.0.slot())
    }
}

/// Single-threaded pool of fixed-size payloads.
#[pyclass(module = "travpool")]
struct Pool(core::Pool);

#[pymethods]
impl Pool {
    #[new]
    #[pyo3(signature = (payload_size, bin_capacity = core::DEFAULT_BIN_CAPACITY))]
    fn new(payload_size: usize, bin_capacity: u32) -> PyResult<Self> {
        core::Pool::new(payload_size, bin_capacity).map(Pool).map_err(err)
    }

    #[getter]
    fn payload_size(&self) -> usize {
        self.0.payload_size()
    }

    #[getter]
    fn bin_capacity(&self) -> u32 {
        self.0.bin_capacity()
    }

    #[getter]
    fn bin_count(&self) -> usize {
        self.0.bin_count()
    }

    #[getter]
    fn bytes_reserved(&self) -> usize {
        self.0.bytes_reserved()
    }

    /// Bytes one slot occupies, padding and status word included.
    #[getter]
    fn slot_footprint(&self) -> usize {
        self.0.layout().footprint()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    /// Allocates an element, zero-filled unless `payload` is given.
    #[pyo3(signature = (payload = None))]
    fn allocate(&mut self, payload: Option<&[u8]>) -> PyResult<Handle> {
        match payload {
            Some(p) => self.0.allocate_with(p),
            None => self.0.allocate(),
        }
        .map(Handle)
        .map_err(err)
    }

    fn deallocate(&mut self, h: &Handle) -> PyResult<()> {
        self.0.deallocate(h.0).map_err(err)
    }

    fn get<'py>(&self, py: Python<'py>, h: &Handle) -> PyResult<Bound<'py, PyBytes>> {
        Ok(PyBytes::new(py, self.0.get(h.0).map_err(err)?))
    }

    fn set(&mut self, h: &Handle, payload: &[u8]) -> PyResult<()> {
        let dst = self.0.get_mut(h.0).map_err(err)?;
        if dst.len() != payload.len() {
            return Err(err(core::PoolError::PayloadSize {
                expected: dst.len(),
                found: payload.len(),
            }));
        }
        dst.copy_from_slice(payload);
        Ok(())
    }

    fn retire_empty_bins(&mut self) -> usize {
        self.0.retire_empty_bins()
    }

    /// Live `(handle, payload)` pairs in iteration order.
    fn items<'py>(&self, py: Python<'py>) -> Vec<(Handle, Bound<'py, PyBytes>)> {
        self.0
            .iter()
            .map(|(h, b)| (Handle(h), PyBytes::new(py, b)))
            .collect()
    }

    fn handles(&self) -> Vec<Handle> {
        self.0.iter().map(|(h, _)| Handle(h)).collect()
    }

    fn begin(&self) -> Cursor {
        Cursor(self.0.begin())
    }

    fn end(&self) -> Cursor {
        Cursor(self.0.end())
    }

    fn advance(&self, c: &Cursor) -> PyResult<Cursor> {
        self.0.advance(c.0).map(Cursor).map_err(err)
    }

    fn retreat(&self, c: &Cursor) -> PyResult<Cursor> {
        self.0.retreat(c.0).map(Cursor).map_err(err)
    }

    fn cursor(&self, h: &Handle) -> Cursor {
        Cursor(core::Cursor::from(h.0))
    }

    fn read<'py>(&self, py: Python<'py>, c: &Cursor) -> PyResult<Bound<'py, PyBytes>> {
        Ok(PyBytes::new(py, self.0.read(c.0).map_err(err)?))
    }

    fn write(&mut self, c: &Cursor, payload: &[u8]) -> PyResult<()> {
        self.0.write(c.0, payload).map_err(err)
    }

    /// Splits the bins into `k` runs; returns `(begin, end)` cursor pairs.
    fn partition(&self, k: usize) -> PyResult<Vec<(Cursor, Cursor)>> {
        Ok(self
            .0
            .partition(k)
            .map_err(err)?
            .into_iter()
            .map(|r| (Cursor(r.begin), Cursor(r.end)))
            .collect())
    }

    /// Handles inside one range returned by `partition`.
    fn handles_in(&self, begin: &Cursor, end: &Cursor) -> Vec<Handle> {
        let range = core::CursorRange {
            begin: begin.0,
            end: end.0,
        };
        self.0.iter_range(&range).map(|(h, _)| Handle(h)).collect()
    }

    /// Structural check of every bin; returns the violations as strings.
    fn validate(&self) -> Vec<String> {
        self.0
            .bins()
            .flat_map(|b| core::oracle::scan_validity(b).violations)
            .map(|v| v.to_string())
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Pool(payload_size={}, bin_capacity={}, len={}, bins={})",
            self.0.payload_size(),
            self.0.bin_capacity(),
            self.0.len(),
            self.0.bin_count()
        )
    }
}

/// Thread-safe pool. Iterate through `snapshot`.
#[pyclass(module = "travpool")]
struct SharedPool(core::SharedPool);

#[pymethods]
impl SharedPool {
    #[new]
    #[pyo3(signature = (payload_size, bin_capacity = core::DEFAULT_BIN_CAPACITY))]
    fn new(payload_size: usize, bin_capacity: u32) -> PyResult<Self> {
        core::SharedPool::new(payload_size, bin_capacity)
            .map(SharedPool)
            .map_err(err)
    }

    #[getter]
    fn bin_count(&self) -> usize {
        self.0.bin_count()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[pyo3(signature = (payload = None))]
    fn allocate(&self, payload: Option<&[u8]>) -> PyResult<Handle> {
        match payload {
            Some(p) => self.0.allocate_with(p),
            None => self.0.allocate(),
        }
        .map(Handle)
        .map_err(err)
    }

    fn deallocate(&self, h: &Handle) -> PyResult<()> {
        self.0.deallocate(h.0).map_err(err)
    }

    fn get<'py>(&self, py: Python<'py>, h: &Handle) -> PyResult<Bound<'py, PyBytes>> {
        Ok(PyBytes::new(py, &self.0.read_payload(h.0).map_err(err)?))
    }

    fn set(&self, h: &Handle, payload: &[u8]) -> PyResult<()> {
        self.0.write_payload(h.0, payload).map_err(err)
    }

    fn retire_empty_bins(&self) -> usize {
        self.0.retire_empty_bins()
    }

    /// Copy of the current contents as a single-threaded `Pool`.
    fn snapshot(&self) -> Pool {
        Pool(self.0.snapshot())
    }
}

/// Runs the pool against the reference model. Returns a dict with `passed`
/// and either statistics or the divergence message and reproducer trace.
#[pyfunction]
#[pyo3(signature = (seed = 0, ops = 100_000, bin_capacity = 64, mode = "sequential", threads = 4, depth = 10, free_top = "full"))]
fn fuzz<'py>(
    py: Python<'py>,
    seed: u64,
    ops: usize,
    bin_capacity: u32,
    mode: &str,
    threads: usize,
    depth: usize,
    free_top: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = match mode {
        "sequential" => FuzzConfig::sequential(seed, ops, bin_capacity),
        "exhaustive" => FuzzConfig::exhaustive(bin_capacity, depth),
        "concurrent" => FuzzConfig::concurrent(seed, ops, bin_capacity, threads),
        _ => return Err(PyValueError::new_err(format!("unknown mode {mode:?}"))),
    };
    let check = match free_top {
        "full" => FreeTopCheck::Full,
        "guarded" => FreeTopCheck::Guarded,
        _ => return Err(PyValueError::new_err(format!("unknown free_top {free_top:?}"))),
    };
    let verdict = run_fuzz(&cfg.with_free_top(check));
    let d = PyDict::new(py);
    match verdict {
        Verdict::Pass(s) => {
            d.set_item("passed", true)?;
            d.set_item("ops", s.ops)?;
            d.set_item("sequences", s.sequences)?;
            d.set_item("max_alloc_writes", s.max_alloc_writes)?;
            d.set_item("max_free_writes", s.max_free_writes)?;
        }
        Verdict::Fail(f) => {
            d.set_item("passed", false)?;
            d.set_item("message", &f.message)?;
            d.set_item("trace", f.trace.to_string())?;
        }
    }
    Ok(d)
}

/// Bytes one slot occupies for a given payload size.
#[pyfunction]
fn slot_footprint(payload_size: usize) -> PyResult<usize> {
    core::SlotLayout::new(payload_size)
        .map(|l| l.footprint())
        .map_err(err)
}

#[pymodule(name = "travpool")]
fn travpool_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Pool>()?;
    m.add_class::<SharedPool>()?;
    m.add_class::<Handle>()?;
    m.add_class::<Cursor>()?;
    m.add_function(wrap_pyfunction!(fuzz, m)?)?;
    m.add_function(wrap_pyfunction!(slot_footprint, m)?)?;
    m.add("PoolError", m.py().get_type::<PoolError>())?;
    m.add("DEFAULT_BIN_CAPACITY", core::DEFAULT_BIN_CAPACITY)?;
    Ok(())
}
