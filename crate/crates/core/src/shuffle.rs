//! Import-thunk shuffling: the core rewrite.
//!
//! The transform permutes thunk contents within each import descriptor —
//! slots are never moved, created, or deleted; only which symbol occupies
//! which slot changes — then fixes every code reference so each call still
//! reaches its original symbol.  Reference fixing happens through the
//! relocation table when one exists ([`patch_relocated_references`]) or
//! through a code scan ([`crate::textscan`]) when it does not.  Every
//! transform is checked by the bind simulator before being returned, and
//! re-seeded (up to 8 times) until the import fingerprint actually changes.
//!
//! Shuffle scope is per-descriptor: moving a thunk across descriptors would
//! make the loader resolve the symbol against the wrong module, so only
//! within-module permutations preserve behavior.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::codec::{self, Edit};
use crate::error::{Error, Result};
use crate::image::{MachineClass, PeImage, RelocBlock, DIR_BOUND_IMPORT};
use crate::imphash::{imphash_reports, ImphashReport};
use crate::rng::{next_chain_seed, SplitMix64};
use crate::textscan::{self, Addressing};
use crate::verify::{assert_equivalent, default_load_bases, MockExportUniverse};

/// One thunk slot: its stored value and where it lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ThunkPair {
    /// Raw stored thunk value — a hint/name RVA or an ordinal-flagged word.
    pub address_of_data: u64,
    pub ft_slot_rva: u32,
}

/// All thunk pairs of one descriptor, in slot order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ThunkGroup {
    pub module_name: String,
    pub pairs: Vec<ThunkPair>,
}

/// A per-descriptor slot mapping: `old → new` means the symbol formerly
/// bound to slot `old` now lives at slot `new`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ModuleMapping {
    pub module_name: String,
    pub mapping: BTreeMap<u32, u32>,
}

/// The full permutation, reproducible from its seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ThunkPermutation {
    pub seed: u64,
    pub per_module: Vec<ModuleMapping>,
}

/// How code references get fixed up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    /// Relocation patching when a non-empty reloc directory exists,
    /// code scan otherwise.
    Auto,
    RelocPatch,
    TextScan,
}

/// The strategy a transform actually used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StrategyUsed {
    RelocPatch,
    TextScan,
}

/// Transform policy knobs.
#[derive(Debug, Clone, Copy)]
pub struct TransformOptions {
    /// Unbind bound imports (zero descriptor stamps, clear the bound-import
    /// directory) instead of refusing them.
    pub unbind: bool,
    /// Recompute the header checksum on the output (unset checksums stay
    /// unset either way).
    pub update_checksum: bool,
}

impl Default for TransformOptions {
    fn default() -> Self {
        TransformOptions {
            unbind: false,
            update_checksum: true,
        }
    }
}

/// A completed transform and its report.
#[derive(Debug, Clone, Serialize)]
pub struct TransformResult {
    /// The rewritten file; always the same length as the input.
    #[serde(skip)]
    pub output: Vec<u8>,
    pub permutation: ThunkPermutation,
    /// Relocation-table entries whose stored address was rewritten.
    pub relocation_patches: usize,
    /// Scanned call-site operands rewritten.
    pub text_patches: usize,
    /// Absolute-operand scan matches with no corroborating relocation
    /// entry; inherent ambiguity of pattern scanning, reported not fatal.
    pub scan_warnings: usize,
    /// One report per mode computable on the input.
    pub imphash_before: Vec<ImphashReport>,
    pub imphash_after: Vec<ImphashReport>,
    pub strategy_used: StrategyUsed,
}

/// Gather per-descriptor `(address_of_data, ft_slot_rva)` pairs in slot
/// order, from the OFT when present, else the FT.
///
/// Bound imports (nonzero descriptor stamp or a present bound-import
/// directory) are refused unless `unbind` is set: with stale pre-resolved
/// addresses in place the permuted IAT would never be consulted.  When the
/// OFT exists on an unbound descriptor, FT values must agree with it.
pub fn collect_thunk_pairs(image: &PeImage, unbind: bool) -> Result<Vec<ThunkGroup>> {
    let descriptors = codec::read_import_directory(image)?;
    if !unbind && image.directory(DIR_BOUND_IMPORT).is_present() {
        return Err(Error::BoundImportsPresent(
            "bound-import directory present".into(),
        ));
    }
    let width = image.machine_class.thunk_width();
    let mut groups = Vec::with_capacity(descriptors.len());
    for descriptor in &descriptors {
        if descriptor.is_bound() && !unbind {
            return Err(Error::BoundImportsPresent(descriptor.module_name.clone()));
        }
        let mut pairs = Vec::with_capacity(descriptor.thunks.len());
        for thunk in &descriptor.thunks {
            if thunk.oft_slot_rva.is_some() && !descriptor.is_bound() {
                let ft_raw = image.read_at_rva(thunk.ft_slot_rva, width)?;
                let ft_value = if width == 4 {
                    u64::from(u32::from_le_bytes(ft_raw.try_into().unwrap()))
                } else {
                    u64::from_le_bytes(ft_raw.try_into().unwrap())
                };
                if ft_value != thunk.raw_value {
                    return Err(Error::OftFtMismatch {
                        module: descriptor.module_name.clone(),
                        slot: thunk.ft_slot_rva,
                        oft: thunk.raw_value,
                        ft: ft_value,
                    });
                }
            }
            pairs.push(ThunkPair {
                address_of_data: thunk.raw_value,
                ft_slot_rva: thunk.ft_slot_rva,
            });
        }
        groups.push(ThunkGroup {
            module_name: descriptor.module_name.clone(),
            pairs,
        });
    }
    Ok(groups)
}

fn draw_mappings(groups: &[ThunkGroup], rng: &mut SplitMix64) -> Vec<ModuleMapping> {
    groups
        .iter()
        .map(|group| {
            let mut shuffled = group.pairs.clone();
            rng.shuffle(&mut shuffled);
            let mapping = shuffled
                .iter()
                .zip(&group.pairs)
                .map(|(moved, slot)| (moved.ft_slot_rva, slot.ft_slot_rva))
                .collect();
            ModuleMapping {
                module_name: group.module_name.clone(),
                mapping,
            }
        })
        .collect()
}

fn is_identity(mappings: &[ModuleMapping]) -> bool {
    mappings
        .iter()
        .all(|m| m.mapping.iter().all(|(old, new)| old == new))
}

/// Shuffle each group independently (Fisher-Yates over a SplitMix64 stream
/// seeded with `seed`).  If any group has two or more slots the result is
/// guaranteed non-identity: identity draws are re-drawn up to 64 times,
/// then the first two slots of the largest group are force-swapped.
pub fn make_permutation(groups: &[ThunkGroup], seed: u64) -> Result<ThunkPermutation> {
    if !groups.iter().any(|g| g.pairs.len() >= 2) {
        return Err(Error::NothingToShuffle(if groups.is_empty() {
            "image has no import descriptors".into()
        } else {
            "every descriptor holds a single import slot".into()
        }));
    }
    let mut rng = SplitMix64::new(seed);
    let mut per_module = draw_mappings(groups, &mut rng);
    for _ in 1..64 {
        if !is_identity(&per_module) {
            break;
        }
        per_module = draw_mappings(groups, &mut rng);
    }
    if is_identity(&per_module) {
        let largest_len = groups.iter().map(|g| g.pairs.len()).max().unwrap();
        let index = groups
            .iter()
            .position(|g| g.pairs.len() == largest_len)
            .unwrap();
        let s0 = groups[index].pairs[0].ft_slot_rva;
        let s1 = groups[index].pairs[1].ft_slot_rva;
        let mapping = &mut per_module[index].mapping;
        mapping.insert(s0, s1);
        mapping.insert(s1, s0);
    }
    Ok(ThunkPermutation { seed, per_module })
}

fn thunk_value_bytes(value: u64, width: usize) -> Vec<u8> {
    if width == 4 {
        (value as u32).to_le_bytes().to_vec()
    } else {
        value.to_le_bytes().to_vec()
    }
}

/// Rewrite FT (and OFT, when present) slot contents per the permutation.
///
/// Edits that would write a slot's existing bytes are dropped, so an
/// identity permutation yields an empty list.  On a bound descriptor under
/// unbind the FT holds addresses, not thunk values, so every FT slot write
/// survives normalization — restoring original values as a side effect.
pub fn apply_permutation(image: &PeImage, perm: &ThunkPermutation) -> Result<Vec<Edit>> {
    let descriptors = codec::read_import_directory(image)?;
    if descriptors.len() != perm.per_module.len() {
        return Err(Error::InvalidPermutation(format!(
            "permutation covers {} descriptors, image has {}",
            perm.per_module.len(),
            descriptors.len()
        )));
    }
    let width = image.machine_class.thunk_width();
    let mut edits = Vec::new();
    let mut claimed: BTreeSet<u32> = BTreeSet::new();
    for (descriptor, module_perm) in descriptors.iter().zip(&perm.per_module) {
        if descriptor.module_name != module_perm.module_name {
            return Err(Error::InvalidPermutation(format!(
                "descriptor order mismatch: image has {}, permutation has {}",
                descriptor.module_name, module_perm.module_name
            )));
        }
        let slots: BTreeSet<u32> = descriptor.thunks.iter().map(|t| t.ft_slot_rva).collect();
        let keys: BTreeSet<u32> = module_perm.mapping.keys().copied().collect();
        let values: BTreeSet<u32> = module_perm.mapping.values().copied().collect();
        if keys != slots || values != slots || module_perm.mapping.len() != descriptor.thunks.len()
        {
            return Err(Error::InvalidPermutation(format!(
                "mapping for {} is not a bijection on its slot set",
                descriptor.module_name
            )));
        }
        if let Some(&dup) = keys.intersection(&claimed).next() {
            return Err(Error::InvalidPermutation(format!(
                "slot RVA {dup:#x} appears in more than one module's mapping"
            )));
        }
        claimed.extend(&keys);

        let address_of: BTreeMap<u32, u64> = descriptor
            .thunks
            .iter()
            .map(|t| (t.ft_slot_rva, t.raw_value))
            .collect();
        for (&old, &new) in &module_perm.mapping {
            let value = thunk_value_bytes(address_of[&old], width);
            let current = image.read_at_rva(new, width)?;
            if current != value {
                edits.push(Edit::new(image.rva_to_offset(new)?, value.clone()));
            }
            if descriptor.oft_rva != 0 {
                let index = (new - descriptor.ft_rva) / width as u32;
                let oft_slot = descriptor.oft_rva + index * width as u32;
                let current = image.read_at_rva(oft_slot, width)?;
                if current != value {
                    edits.push(Edit::new(image.rva_to_offset(oft_slot)?, value));
                }
            }
        }
    }
    Ok(edits)
}

fn flat_mapping(perm: &ThunkPermutation) -> BTreeMap<u32, u32> {
    perm.per_module
        .iter()
        .flat_map(|m| m.mapping.iter().map(|(&old, &new)| (old, new)))
        .collect()
}

/// Rewrite relocation-covered absolute operands that point at moved slots.
///
/// For each machine-class-matching entry the stored absolute address is
/// read; when `stored − image_base` equals a permuted slot's old RVA, the
/// word is rewritten to `image_base + new RVA`.  Anything else — a
/// relocation for unrelated data — is left untouched.  Returns the edits
/// and the patched-site count.
pub fn patch_relocated_references(
    image: &PeImage,
    perm: &ThunkPermutation,
    relocs: &[RelocBlock],
) -> Result<(Vec<Edit>, usize)> {
    let mapping = flat_mapping(perm);
    let kind = image.machine_class.reloc_kind();
    let width = image.machine_class.thunk_width();
    let mut edits = Vec::new();
    for block in relocs {
        for target in block.targets_of_kind(kind) {
            let raw = image
                .read_at_rva(target, width)
                .map_err(|_| Error::RelocTargetUnmappable(target))?;
            let stored = if width == 4 {
                u64::from(u32::from_le_bytes(raw.try_into().unwrap()))
            } else {
                u64::from_le_bytes(raw.try_into().unwrap())
            };
            let candidate = stored
                .checked_sub(image.image_base)
                .and_then(|c| u32::try_from(c).ok());
            let Some(new) = candidate.and_then(|c| mapping.get(&c)) else {
                continue;
            };
            let value = thunk_value_bytes(image.image_base.wrapping_add(u64::from(*new)), width);
            if value != raw {
                edits.push(Edit::new(image.rva_to_offset(target)?, value));
            }
        }
    }
    let count = edits.len();
    Ok((edits, count))
}

/// Edits that unbind an image: zero every nonzero descriptor timestamp and
/// clear the bound-import directory slot.
fn unbind_edits(image: &PeImage) -> Result<Vec<Edit>> {
    let descriptors = codec::read_import_directory(image)?;
    let mut edits = Vec::new();
    for descriptor in &descriptors {
        if descriptor.time_date_stamp != 0 {
            edits.push(Edit::new(descriptor.record_offset + 4, vec![0; 4]));
        }
    }
    if image.directory(DIR_BOUND_IMPORT).is_present() {
        edits.push(Edit::new(
            image.directories_offset + DIR_BOUND_IMPORT as u64 * 8,
            vec![0; 8],
        ));
    }
    Ok(edits)
}

struct Attempt {
    output: Vec<u8>,
    permutation: ThunkPermutation,
    relocation_patches: usize,
    text_patches: usize,
    scan_warnings: usize,
    strategy_used: StrategyUsed,
}

fn transform_once(
    image: &PeImage,
    seed: u64,
    strategy: Strategy,
    options: TransformOptions,
) -> Result<Attempt> {
    let groups = collect_thunk_pairs(image, options.unbind)?;
    let permutation = make_permutation(&groups, seed)?;
    let mut edits = apply_permutation(image, &permutation)?;
    if options.unbind {
        edits.extend(unbind_edits(image)?);
    }

    let relocs = codec::read_reloc_directory(image)?;
    let strategy_used = match strategy {
        Strategy::RelocPatch => StrategyUsed::RelocPatch,
        Strategy::TextScan => StrategyUsed::TextScan,
        Strategy::Auto => {
            if relocs.is_empty() {
                StrategyUsed::TextScan
            } else {
                StrategyUsed::RelocPatch
            }
        }
    };

    let slot_set: BTreeSet<u32> = groups
        .iter()
        .flat_map(|g| g.pairs.iter().map(|p| p.ft_slot_rva))
        .collect();
    let mut relocation_patches = 0;
    let mut text_patches = 0;
    let mut scan_warnings = 0;
    match strategy_used {
        StrategyUsed::RelocPatch => {
            let (patch_edits, count) = patch_relocated_references(image, &permutation, &relocs)?;
            edits.extend(patch_edits);
            relocation_patches = count;
            // RIP-relative operands are never relocation-covered, so PE32+
            // always needs the scanner as well.
            if image.machine_class == MachineClass::Pe32Plus {
                let sites = textscan::scan_iat_references(image, &slot_set);
                let scan_edits = textscan::retarget_call_sites(&sites, &permutation, image)?;
                text_patches = scan_edits.len();
                edits.extend(scan_edits);
            }
        }
        StrategyUsed::TextScan => {
            let sites = textscan::scan_iat_references(image, &slot_set);
            let scanned_operands: BTreeSet<u32> =
                sites.iter().map(|s| s.instr_rva + 2).collect();
            // A reloc-covered word that points into the IAT but is not a
            // scannable call site (a data-side pointer, say) cannot be
            // retargeted by this strategy; refuse rather than emit a file
            // whose stale reference the verifier would reject.
            let kind = image.machine_class.reloc_kind();
            let width = image.machine_class.thunk_width();
            for block in &relocs {
                for target in block.targets_of_kind(kind) {
                    let raw = image
                        .read_at_rva(target, width)
                        .map_err(|_| Error::RelocTargetUnmappable(target))?;
                    let stored = if width == 4 {
                        u64::from(u32::from_le_bytes(raw.try_into().unwrap()))
                    } else {
                        u64::from_le_bytes(raw.try_into().unwrap())
                    };
                    let candidate = stored
                        .checked_sub(image.image_base)
                        .and_then(|c| u32::try_from(c).ok());
                    if candidate.is_some_and(|c| slot_set.contains(&c))
                        && !scanned_operands.contains(&target)
                    {
                        return Err(Error::NoRetargetPath(format!(
                            "relocation-covered import reference at RVA {target:#x} \
                             is not a scannable call site"
                        )));
                    }
                }
            }
            let reloc_covered: BTreeSet<u32> = relocs
                .iter()
                .flat_map(|b| b.targets_of_kind(kind))
                .collect();
            scan_warnings = sites
                .iter()
                .filter(|s| {
                    s.addressing == Addressing::Absolute32
                        && !reloc_covered.contains(&(s.instr_rva + 2))
                })
                .count();
            let scan_edits = textscan::retarget_call_sites(&sites, &permutation, image)?;
            text_patches = scan_edits.len();
            edits.extend(scan_edits);
        }
    }

    let mut output = codec::serialize(image, &edits)?;
    if options.update_checksum {
        output = codec::update_checksum(&output, image.checksum_offset);
    }
    Ok(Attempt {
        output,
        permutation,
        relocation_patches,
        text_patches,
        scan_warnings,
        strategy_used,
    })
}

fn digests_changed(before: &[ImphashReport], after: &[ImphashReport]) -> bool {
    before.len() == after.len()
        && before.iter().zip(after).all(|(b, a)| {
            b.mode == a.mode && b.canonical_string != a.canonical_string && b.digest != a.digest
        })
}

/// Transform `bytes`: shuffle import thunks, fix code references, refresh
/// the checksum, and prove equivalence — all deterministically from `seed`.
///
/// If a draw happens to leave the fingerprint unchanged (duplicate symbol
/// names can do that) the transform re-seeds and retries, up to 8 times.
/// The internal equivalence check failing is always a bug, never a silently
/// returned output.
pub fn transform(
    bytes: &[u8],
    seed: u64,
    strategy: Strategy,
    options: TransformOptions,
) -> Result<TransformResult> {
    let image = codec::parse_pe(bytes.to_vec())?;
    let imphash_before = imphash_reports(&image)?;

    let mut attempt_seed = seed;
    let mut last_unchanged = None;
    for _ in 0..=8 {
        let attempt = transform_once(&image, attempt_seed, strategy, options)?;
        let out_image = codec::parse_pe(attempt.output.clone())?;
        let imphash_after = imphash_reports(&out_image)?;
        if !digests_changed(&imphash_before, &imphash_after) {
            last_unchanged = Some(attempt_seed);
            attempt_seed = next_chain_seed(attempt_seed);
            continue;
        }

        let universe = MockExportUniverse::covering(&[&image])?;
        let report = assert_equivalent(&image, &out_image, &universe, &default_load_bases(&image))?;
        if !report.equivalent {
            return Err(Error::EquivalenceCheckFailed(report.divergent_sites.len()));
        }
        return Ok(TransformResult {
            output: attempt.output,
            permutation: attempt.permutation,
            relocation_patches: attempt.relocation_patches,
            text_patches: attempt.text_patches,
            scan_warnings: attempt.scan_warnings,
            imphash_before,
            imphash_after,
            strategy_used: attempt.strategy_used,
        });
    }
    Err(Error::NothingToShuffle(format!(
        "9 seeds starting from {} left the import fingerprint unchanged",
        last_unchanged.map_or_else(|| seed.to_string(), |s| s.to_string())
    )))
}
