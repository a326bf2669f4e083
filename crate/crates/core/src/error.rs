//! Error type shared by every module in the crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while parsing, transforming, or verifying a
/// PE file.  Parsing malformed input must always surface as one of these
/// variants, never as a panic.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    /// The first two bytes are not `MZ`.
    #[error("bad DOS magic (expected 'MZ')")]
    BadDosMagic,
    /// The four bytes at `e_lfanew` are not `PE\0\0`.
    #[error("bad NT signature at offset {0:#x} (expected 'PE\\0\\0')")]
    BadNtSignature(u64),
    /// Optional-header magic is neither PE32 (0x10B) nor PE32+ (0x20B).
    #[error("unsupported optional-header magic {0:#06x}")]
    UnsupportedMachineClass(u16),
    /// A required structure extends past the end of the buffer.
    #[error("file truncated reading {what} at offset {offset:#x}")]
    TruncatedFile { what: &'static str, offset: u64 },
    /// Two sections claim overlapping file-offset ranges.
    #[error("sections {0} and {1} overlap in file-offset space")]
    OverlappingSections(usize, usize),

    /// An RVA falls in no section's raw data and outside the header region.
    #[error("RVA {0:#x} maps to no file data")]
    UnmappedRva(u32),
    /// A file offset lies in slack space claimed by no section or header.
    #[error("file offset {0:#x} maps to no RVA")]
    UnmappedOffset(u64),

    /// The import data directory is absent or empty.
    #[error("image has no import table")]
    NoImportTable,
    /// An import descriptor references unmappable or oversized data.
    #[error("malformed import descriptor {index}: {reason}")]
    MalformedDescriptor { index: usize, reason: String },
    /// A thunk array ran off the end of its section without a terminator.
    #[error("thunk array at RVA {0:#x} has no zero terminator before section end")]
    UnterminatedThunkArray(u32),
    /// A base-relocation block is shorter than its header or overruns the
    /// directory bounds.
    #[error("malformed relocation block at directory offset {offset:#x}: {reason}")]
    MalformedRelocBlock { offset: u32, reason: String },

    /// Two serialization edits touch the same byte.
    #[error("edits at offsets {0:#x} and {1:#x} overlap")]
    OverlappingEdits(u64, u64),
    /// An edit extends past the end of the buffer.
    #[error("edit at offset {offset:#x} ({len} bytes) out of bounds")]
    EditOutOfBounds { offset: u64, len: usize },

    /// Paper-mode imphash has no defined encoding for ordinal imports.
    #[error("ordinal import {ordinal} from {module} has no symbol name")]
    NoSymbolName { module: String, ordinal: u16 },

    /// A descriptor carries a bind timestamp or a bound-import directory
    /// exists, and unbinding was not requested.
    #[error("bound imports present ({0}); pass the unbind option to strip them")]
    BoundImportsPresent(String),
    /// OFT and FT arrays disagree before any transform was applied.
    #[error("OFT/FT mismatch in {module} at slot RVA {slot:#x}: {oft:#x} vs {ft:#x}")]
    OftFtMismatch {
        module: String,
        slot: u32,
        oft: u64,
        ft: u64,
    },
    /// Every thunk group has at most one element, or repeated shuffles could
    /// not produce an import string different from the original.
    #[error("nothing to shuffle: {0}")]
    NothingToShuffle(String),
    /// A permutation does not match the image it is being applied to.
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
    /// A relocation entry targets bytes outside mapped raw data.
    #[error("relocation entry targets unmappable RVA {0:#x}")]
    RelocTargetUnmappable(u32),
    /// A scanned call site references a slot the permutation does not cover.
    #[error("call site at RVA {site:#x} references slot {slot:#x} not in permutation")]
    SlotNotInPermutation { site: u32, slot: u32 },
    /// Relocations are stripped and the text scanner cannot repair the image.
    #[error("no retarget path: {0}")]
    NoRetargetPath(String),
    /// The internal bind simulation rejected a transform output.
    #[error("equivalence check failed: {0} divergent site(s) — transform output discarded")]
    EquivalenceCheckFailed(usize),

    /// The bind simulator was given an import absent from the export universe.
    #[error("unresolved import {module}!{symbol}")]
    UnresolvedImport { module: String, symbol: String },
    /// A code reference targets no bound IAT slot after rebasing.
    #[error("dangling reference at RVA {0:#x}")]
    DanglingReference(u32),
    /// The mapped image span exceeds the bind simulator's sanity cap.
    #[error("mapped image would span {0} bytes, beyond the 256 MiB simulation cap")]
    OversizedImage(u64),

    /// A synthesis spec is internally inconsistent.
    #[error("invalid synthesis spec: {0}")]
    SpecInvalid(String),
}

impl Error {
    fn truncated(what: &'static str, offset: u64) -> Self {
        Error::TruncatedFile { what, offset }
    }
}

/// Read a little-endian `u16`, erroring instead of panicking on short input.
pub(crate) fn read_u16(data: &[u8], offset: usize, what: &'static str) -> Result<u16> {
    let end = offset
        .checked_add(2)
        .ok_or_else(|| Error::truncated(what, offset as u64))?;
    if end > data.len() {
        return Err(Error::truncated(what, offset as u64));
    }
    Ok(u16::from_le_bytes([data[offset], data[offset + 1]]))
}

/// Read a little-endian `u32`.
pub(crate) fn read_u32(data: &[u8], offset: usize, what: &'static str) -> Result<u32> {
    let end = offset
        .checked_add(4)
        .ok_or_else(|| Error::truncated(what, offset as u64))?;
    if end > data.len() {
        return Err(Error::truncated(what, offset as u64));
    }
    Ok(u32::from_le_bytes(data[offset..end].try_into().unwrap()))
}

/// Read a little-endian `u64`.
pub(crate) fn read_u64(data: &[u8], offset: usize, what: &'static str) -> Result<u64> {
    let end = offset
        .checked_add(8)
        .ok_or_else(|| Error::truncated(what, offset as u64))?;
    if end > data.len() {
        return Err(Error::truncated(what, offset as u64));
    }
    Ok(u64::from_le_bytes(data[offset..end].try_into().unwrap()))
}
