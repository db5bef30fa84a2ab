use pyo3::prelude::*;

#[pymodule]
fn mbsarma_py(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
