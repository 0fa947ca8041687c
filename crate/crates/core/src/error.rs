use std::path::PathBuf;

use thiserror::Error;

use crate::isa::EncodeError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("FPB has no remap support (FP_REMAP.RMPSPT reads 0)")]
    RemapUnsupported,
    #[error("invalid FPB configuration: {num_code} code + {num_lit} literal comparators")]
    InvalidFpbConfig { num_code: u8, num_lit: u8 },
    #[error("remap table base 0x{base:08x} is not aligned to {required} bytes")]
    MisalignedRemapBase { base: u32, required: u32 },
    #[error("memory region `{name}` at 0x{base:08x} is invalid: {reason}")]
    InvalidRegion { name: String, base: u32, reason: &'static str },
    #[error("region `{0}` redefines the private peripheral bus")]
    PpbRedefinition(String),
    #[error("regions `{first}` and `{second}` overlap")]
    OverlappingRegions { first: String, second: String },
    #[error("segment at 0x{address:08x} ({len} bytes) does not fit a memory region")]
    SegmentOutOfRange { address: u32, len: usize },
    #[error("undefined label `{0}`")]
    UndefinedLabel(String),
    #[error("label `{0}` defined twice")]
    DuplicateLabel(String),
    #[error("branch or literal from 0x{from:08x} to `{label}` is out of range")]
    FixupOutOfRange { label: String, from: u32 },
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
