#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use tradeoff::mnist::{self, DataSplits};

/// MNIST directory: `TRADEOFF_DATA_DIR`, else `data/mnist` in the workspace.
pub fn data_dir() -> PathBuf {
    std::env::var_os("TRADEOFF_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/mnist")))
}

/// The standard splits, loaded once per test binary.
pub fn load() -> &'static DataSplits {
    static DATA: OnceLock<DataSplits> = OnceLock::new();
    DATA.get_or_init(|| {
        let dir = data_dir();
        mnist::load_dir(&dir).unwrap_or_else(|e| {
            panic!(
                "{e}\nthese tests need MNIST: run scripts/fetch-mnist.sh {} or set TRADEOFF_DATA_DIR",
                dir.display()
            )
        })
    })
}
