//! Protocol files, result emitters and the command line.

pub mod cli;
pub mod json;
pub mod parser;
pub mod serialize;
pub mod sweep;

pub use cli::{cli_main, cli_main_with};
pub use json::emit_result_json;
pub use parser::{parse_protocol, parse_protocol_bytes, ParseError, SourceSpan};
pub use serialize::serialize_protocol;
pub use sweep::{run_sweep, SweepConfig, SweepParam};
