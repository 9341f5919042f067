//! File-access trace.
//!
//! Every corpus, checkpoint and config read in this crate goes through
//! [`open`], which records the path while a trace is active on the current
//! thread. Tests use this to show which files a command touched.

use std::cell::RefCell;
use std::fs::File;
use std::io;
use std::path::{Path, PathBuf};

thread_local! {
    static TRACE: RefCell<Option<Vec<PathBuf>>> = const { RefCell::new(None) };
}

/// Starts (or restarts) recording on this thread.
pub fn start() {
    TRACE.with(|t| *t.borrow_mut() = Some(Vec::new()));
}

/// Stops recording and returns every path opened since [`start`].
pub fn finish() -> Vec<PathBuf> {
    TRACE.with(|t| t.borrow_mut().take()).unwrap_or_default()
}

pub fn record(path: &Path) {
    TRACE.with(|t| {
        if let Some(trace) = t.borrow_mut().as_mut() {
            trace.push(path.to_path_buf());
        }
    });
}

/// Opens a file for reading, recording the access.
pub fn open(path: &Path) -> io::Result<File> {
    record(path);
    File::open(path)
}

pub fn read_to_string(path: &Path) -> io::Result<String> {
    record(path);
    std::fs::read_to_string(path)
}
