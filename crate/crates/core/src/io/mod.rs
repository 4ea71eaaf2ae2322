//! Model files, PGM frame sequences and CSV tables.

mod frames;
mod model_file;
mod tables;

pub use frames::{frame_name, frame_paths, montage, read_frames, read_pgm, write_frames, write_pgm, BitDepth};
pub use model_file::{
    from_bytes, load_mtca, load_model, load_tca, load_thmm, load_tmg, save_model, to_bytes, Model,
    FORMAT_VERSION,
};
pub use tables::{
    read_csv, step_rows, track_rows, truth_rows, write_csv, write_params, LabelRow, StepRow, TrackRow,
    TruthRow,
};
