//! Code-scan fallback for images whose import references cannot be reached
//! through the relocation table.
//!
//! The scanner walks every executable section for the two-byte patterns
//! `FF 15` (indirect call) and `FF 25` (indirect jump) followed by a 4-byte
//! operand, and keeps a match only when that operand resolves to a known
//! import slot: PE32 operands hold `image_base + slot` absolutely, PE32+
//! operands hold a RIP-relative displacement.  Matches are consumed left to
//! right; after a qualifying match the scan resumes past its 6-byte extent.
//! Without a disassembler this is best-effort by construction — the
//! slot-membership filter is the strongest cheap guard, and uncorroborated
//! absolute matches are surfaced as warnings by the transform orchestration.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::Serialize;

use crate::codec::Edit;
use crate::error::{Error, Result};
use crate::image::{MachineClass, PeImage};
use crate::shuffle::ThunkPermutation;

/// Instruction form at a matched site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CallKind {
    CallIndirect,
    JmpIndirect,
}

/// How the 4-byte operand encodes its target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Addressing {
    /// Operand holds `image_base + slot RVA` (PE32 only).
    Absolute32,
    /// Operand holds `slot RVA − (instr RVA + 6)` (PE32+ only).
    RipRelative32,
}

/// One qualifying `FF 15`/`FF 25` site.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CallSite {
    /// RVA of the `FF` opcode byte.
    pub instr_rva: u32,
    pub kind: CallKind,
    /// File offset of the 4-byte operand.
    pub operand_offset: u64,
    pub addressing: Addressing,
    /// The import slot this site reads.
    pub referenced_slot_rva: u32,
}

/// Byte length above which the parallel scan path engages.
#[cfg(feature = "parallel")]
const PAR_THRESHOLD: usize = 64 * 1024;

/// Decide whether the 6 bytes at `pos` form a qualifying site.
///
/// Qualification depends only on the bytes and the slot set — never on scan
/// state — which is what makes the parallel candidate pass below exact.
fn qualify(
    code: &[u8],
    pos: usize,
    span_rva: u32,
    abs_base: u64,
    slots: &BTreeSet<u32>,
    machine_class: MachineClass,
) -> Option<(CallKind, u32)> {
    if code[pos] != 0xFF {
        return None;
    }
    let kind = match code[pos + 1] {
        0x15 => CallKind::CallIndirect,
        0x25 => CallKind::JmpIndirect,
        _ => return None,
    };
    let operand = u32::from_le_bytes(code[pos + 2..pos + 6].try_into().unwrap());
    let slot = match machine_class {
        MachineClass::Pe32 => u32::try_from(u64::from(operand).checked_sub(abs_base)?).ok()?,
        MachineClass::Pe32Plus => {
            let target = i64::from(span_rva) + pos as i64 + 6 + i64::from(operand as i32);
            u32::try_from(target).ok()?
        }
    };
    slots.contains(&slot).then_some((kind, slot))
}

/// Greedy left-to-right selection over qualifying positions: accept a
/// position only when it lies past the previous accepted match's extent.
fn suppress_overlaps(candidates: Vec<(usize, CallKind, u32)>) -> Vec<(usize, CallKind, u32)> {
    let mut accepted = Vec::with_capacity(candidates.len());
    let mut next_free = 0usize;
    for (pos, kind, slot) in candidates {
        if pos >= next_free {
            next_free = pos + 6;
            accepted.push((pos, kind, slot));
        }
    }
    accepted
}

/// Sequential scan of one code span.  `abs_base` is the base address used
/// to decode absolute operands (the image base on disk, or a load base when
/// scanning a mapped view).
pub(crate) fn scan_span_seq(
    code: &[u8],
    span_rva: u32,
    abs_base: u64,
    slots: &BTreeSet<u32>,
    machine_class: MachineClass,
) -> Vec<(usize, CallKind, u32)> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos + 6 <= code.len() {
        match qualify(code, pos, span_rva, abs_base, slots, machine_class) {
            Some((kind, slot)) => {
                out.push((pos, kind, slot));
                pos += 6;
            }
            None => pos += 1,
        }
    }
    out
}

/// Parallel scan: qualify every position independently, then apply the same
/// greedy suppression the sequential loop performs implicitly.
#[cfg(feature = "parallel")]
pub(crate) fn scan_span_par(
    code: &[u8],
    span_rva: u32,
    abs_base: u64,
    slots: &BTreeSet<u32>,
    machine_class: MachineClass,
) -> Vec<(usize, CallKind, u32)> {
    use rayon::prelude::*;
    if code.len() < 6 {
        return Vec::new();
    }
    let candidates: Vec<(usize, CallKind, u32)> = (0..=code.len() - 6)
        .into_par_iter()
        .filter_map(|pos| {
            qualify(code, pos, span_rva, abs_base, slots, machine_class)
                .map(|(kind, slot)| (pos, kind, slot))
        })
        .collect();
    suppress_overlaps(candidates)
}

pub(crate) fn scan_span(
    code: &[u8],
    span_rva: u32,
    abs_base: u64,
    slots: &BTreeSet<u32>,
    machine_class: MachineClass,
) -> Vec<(usize, CallKind, u32)> {
    // The parallel route re-qualifies every offset and pays for it with
    // cores; on a single-thread pool it is strictly slower than walking.
    #[cfg(feature = "parallel")]
    if code.len() >= PAR_THRESHOLD && rayon::current_num_threads() > 1 {
        return scan_span_par(code, span_rva, abs_base, slots, machine_class);
    }
    scan_span_seq(code, span_rva, abs_base, slots, machine_class)
}

fn sites_of_image(
    image: &PeImage,
    slots: &BTreeSet<u32>,
    scan: impl Fn(&[u8], u32, u64, &BTreeSet<u32>, MachineClass) -> Vec<(usize, CallKind, u32)>,
) -> Vec<CallSite> {
    let addressing = match image.machine_class {
        MachineClass::Pe32 => Addressing::Absolute32,
        MachineClass::Pe32Plus => Addressing::RipRelative32,
    };
    let mut sites = Vec::new();
    for section in image.sections.iter().filter(|s| s.is_executable()) {
        let start = section.raw_offset as usize;
        // A hostile header can claim raw data past the file or code past the
        // 32-bit address space; neither region can hold addressable sites.
        let end = start
            .saturating_add(section.raw_size as usize)
            .min(image.raw.len());
        if start >= end
            || u64::from(section.virtual_address) + (end - start) as u64 > u64::from(u32::MAX)
        {
            continue;
        }
        let code = &image.raw[start..end];
        for (pos, kind, slot) in scan(
            code,
            section.virtual_address,
            image.image_base,
            slots,
            image.machine_class,
        ) {
            sites.push(CallSite {
                instr_rva: section.virtual_address + pos as u32,
                kind,
                operand_offset: (start + pos + 2) as u64,
                addressing,
                referenced_slot_rva: slot,
            });
        }
    }
    sites
}

/// Find every qualifying indirect call/jump site referencing one of
/// `slot_rvas`.  Sections without the executable characteristic are never
/// scanned; an empty result is valid.
pub fn scan_iat_references(image: &PeImage, slot_rvas: &BTreeSet<u32>) -> Vec<CallSite> {
    sites_of_image(image, slot_rvas, scan_span)
}

/// Sequential-only variant of [`scan_iat_references`], for benchmarking and
/// equivalence tests.
pub fn scan_iat_references_seq(image: &PeImage, slot_rvas: &BTreeSet<u32>) -> Vec<CallSite> {
    sites_of_image(image, slot_rvas, scan_span_seq)
}

/// Parallel-only variant of [`scan_iat_references`].
#[cfg(feature = "parallel")]
pub fn scan_iat_references_par(image: &PeImage, slot_rvas: &BTreeSet<u32>) -> Vec<CallSite> {
    sites_of_image(image, slot_rvas, scan_span_par)
}

/// Rewrite each site's operand so it references the slot its symbol moved
/// to.  Operands already holding the right bytes produce no edit.
pub fn retarget_call_sites(
    sites: &[CallSite],
    perm: &ThunkPermutation,
    image: &PeImage,
) -> Result<Vec<Edit>> {
    let mapping: BTreeMap<u32, u32> = perm
        .per_module
        .iter()
        .flat_map(|m| m.mapping.iter().map(|(&old, &new)| (old, new)))
        .collect();
    let mut edits = Vec::new();
    for site in sites {
        let new_slot = *mapping
            .get(&site.referenced_slot_rva)
            .ok_or(Error::SlotNotInPermutation {
                site: site.instr_rva,
                slot: site.referenced_slot_rva,
            })?;
        let bytes = match site.addressing {
            Addressing::Absolute32 => {
                let value = image.image_base.wrapping_add(u64::from(new_slot));
                (value as u32).to_le_bytes()
            }
            Addressing::RipRelative32 => {
                let disp = i64::from(new_slot) - (i64::from(site.instr_rva) + 6);
                (disp as i32).to_le_bytes()
            }
        };
        let at = site.operand_offset as usize;
        if image.raw[at..at + 4] != bytes {
            edits.push(Edit::new(site.operand_offset, bytes.to_vec()));
        }
    }
    Ok(edits)
}
