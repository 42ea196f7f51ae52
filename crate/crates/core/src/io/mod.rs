//! Run configuration files, binary snapshots, the diagnostics CSV and
//! plot-data text files.

mod config;
mod csv_io;
mod snapshot;

pub use config::{parse_config, write_config, OutputSettings, RunConfig};
pub use csv_io::{read_csv, write_csv, write_plot_data};
pub use snapshot::{read_snapshot, write_snapshot, Snapshot, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};

/// Decimal text with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
