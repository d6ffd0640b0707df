//! Speed records, 2-minute binning, sample windows and synthetic traffic.

mod binning;
mod records;
pub mod synth;
mod windows;

pub use binning::{bin_records, BinnedSeries, DayWindow, SECONDS_PER_DAY};
pub use records::{load_records, read_records, save_records, write_records, SpeedRecord};
pub use synth::{generate_synthetic, lattice_network, IncidentLog, Lattice, LatticeConfig, ScriptedIncident, SynthConfig, SynthOutput};
pub use windows::{
    chronological_split, default_v_max, make_windows, percentile, windows_per_day, SampleWindow, WindowSet,
};
