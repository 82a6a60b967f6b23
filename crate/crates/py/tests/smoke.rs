use std::ffi::CString;
use std::path::PathBuf;

use pyo3::prelude::*;
use pyo3::types::PyDict;

/// Runs python/smoke_test.py against the module compiled into this test.
#[test]
fn python_smoke_script_passes() {
    let script = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../python/smoke_test.py");
    let source = std::fs::read_to_string(&script).unwrap();
    Python::attach(|py| -> PyResult<()> {
        let module = pyo3::wrap_pymodule!(nanoswarm_py::nanoswarm_module)(py);
        py.import("sys")?
            .getattr("modules")?
            .set_item("nanoswarm", module)?;
        let globals = PyDict::new(py);
        globals.set_item("__name__", "__main__")?;
        globals.set_item("__file__", script.to_str().unwrap())?;
        py.run(&CString::new(source).unwrap(), Some(&globals), None)
    })
    .unwrap_or_else(|e| panic!("smoke test failed: {e}"));
}
