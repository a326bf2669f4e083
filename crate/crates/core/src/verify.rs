//! Loader-bind simulation and behavioral equivalence checking.
//!
//! The simulator does what a loader would: map the image at a chosen base,
//! apply base relocations, resolve every import slot against a mock export
//! universe, then resolve every code reference — scanned call sites plus
//! relocation-covered pointers — to the symbol it would actually reach.
//! Two images are equivalent when every reference reaches the same symbol
//! at every tested load base, regardless of which slot the symbol occupies.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::codec;
use crate::error::{Error, Result};
use crate::image::{PeImage, ThunkPayload, RELOC_DIR64, RELOC_HIGHLOW};
use crate::textscan;

/// Hard cap on the simulated mapping, to keep hostile headers from
/// requesting absurd allocations.
const MAPPED_SPAN_CAP: u64 = 256 * 1024 * 1024;

/// The synthetic-VA window exports are assigned from.  Addresses here fit a
/// 32-bit slot with the top bit clear and sit far above any image mapping,
/// so a universe VA can never be mistaken for a rebased slot pointer.
const UNIVERSE_VA_FLOOR: u64 = 0x4000_0000;
const UNIVERSE_VA_SPAN: u64 = 0x4000_0000;

/// A symbol as the export universe keys it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum SymbolRef {
    Name(String),
    Ordinal(u16),
}

impl From<&ThunkPayload> for SymbolRef {
    fn from(payload: &ThunkPayload) -> Self {
        match payload {
            ThunkPayload::Ordinal(n) => SymbolRef::Ordinal(*n),
            ThunkPayload::ByName { name, .. } => SymbolRef::Name(name.clone()),
        }
    }
}

impl fmt::Display for SymbolRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SymbolRef::Name(name) => f.write_str(name),
            SymbolRef::Ordinal(n) => write!(f, "ord{n}"),
        }
    }
}

/// A deterministic fake export table: module name (lowercase) → symbol →
/// synthetic virtual address.  Every VA is unique and reverse-mapped, so a
/// bound slot value identifies its symbol unambiguously.
#[derive(Debug, Clone, Default)]
pub struct MockExportUniverse {
    exports: BTreeMap<String, BTreeMap<SymbolRef, u64>>,
    reverse: BTreeMap<u64, (String, SymbolRef)>,
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut hash = 0xCBF2_9CE4_8422_2325u64;
    for byte in bytes {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

impl MockExportUniverse {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register an export, assigning a deterministic VA derived from the
    /// (module, symbol) pair.  Re-inserting returns the existing VA.
    pub fn insert(&mut self, module: &str, symbol: SymbolRef) -> u64 {
        let module = module.to_ascii_lowercase();
        if let Some(va) = self.exports.get(&module).and_then(|m| m.get(&symbol)) {
            return *va;
        }
        let tag = symbol.to_string();
        let seed = fnv1a(
            module
                .bytes()
                .chain([0u8])
                .chain(tag.bytes()),
        );
        // 16-byte-aligned linear probe inside the universe window.
        let slots = UNIVERSE_VA_SPAN / 16;
        let mut index = seed % slots;
        let va = loop {
            let candidate = UNIVERSE_VA_FLOOR + index * 16;
            if !self.reverse.contains_key(&candidate) {
                break candidate;
            }
            index = (index + 1) % slots;
        };
        self.exports
            .entry(module.clone())
            .or_default()
            .insert(symbol.clone(), va);
        self.reverse.insert(va, (module, symbol));
        va
    }

    /// Build a universe exporting exactly the imports of the given images.
    pub fn covering(images: &[&PeImage]) -> Result<Self> {
        let mut universe = Self::new();
        for image in images {
            for descriptor in &codec::read_import_directory(image)? {
                for thunk in &descriptor.thunks {
                    universe.insert(&descriptor.module_name, SymbolRef::from(&thunk.payload));
                }
            }
        }
        Ok(universe)
    }

    pub fn lookup(&self, module: &str, symbol: &SymbolRef) -> Option<u64> {
        self.exports
            .get(&module.to_ascii_lowercase())
            .and_then(|m| m.get(symbol))
            .copied()
    }

    /// Which export a synthetic VA belongs to.
    pub fn symbol_at(&self, va: u64) -> Option<&(String, SymbolRef)> {
        self.reverse.get(&va)
    }

    pub fn export_count(&self) -> usize {
        self.reverse.len()
    }
}

/// One import slot after binding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SlotBinding {
    pub slot_rva: u32,
    pub module: String,
    pub symbol: SymbolRef,
    pub bound_va: u64,
}

/// How a site was discovered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Route {
    /// Found by the executable-section scanner.
    Scan,
    /// Found through a base-relocation entry.
    Reloc,
    /// Found by both, agreeing.
    Both,
}

/// One code reference and the export it reaches after binding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SiteResolution {
    /// RVA of the referencing word (a call-site operand or pointer cell).
    pub operand_rva: u32,
    pub route: Route,
    pub slot_rva: u32,
    pub target_va: u64,
    pub module: String,
    pub symbol: SymbolRef,
}

/// Everything [`simulate_bind`] determines for one load base.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BindReport {
    pub load_base: u64,
    /// `load_base − image_base`.
    pub rebase_delta: i64,
    /// Every import slot in descriptor order.
    pub slot_bindings: Vec<SlotBinding>,
    /// Every discovered reference, sorted by operand RVA.
    pub site_resolutions: Vec<SiteResolution>,
}

fn read_u32_at(mapped: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(mapped[at..at + 4].try_into().unwrap())
}

fn read_u64_at(mapped: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(mapped[at..at + 8].try_into().unwrap())
}

/// Map the file the way a loader would: headers at offset 0, each section's
/// raw data at its virtual address, zero fill elsewhere.
fn map_image(image: &PeImage) -> Result<Vec<u8>> {
    let header_len = image
        .sections
        .iter()
        .filter(|s| s.raw_size > 0)
        .map(|s| u64::from(s.raw_offset))
        .min()
        .unwrap_or(image.raw.len() as u64)
        .min(image.raw.len() as u64);
    let span = image
        .sections
        .iter()
        .map(|s| u64::from(s.virtual_address) + u64::from(s.virtual_size.max(s.raw_size)))
        .chain([u64::from(image.size_of_image), header_len])
        .max()
        .unwrap_or(0);
    if span > MAPPED_SPAN_CAP {
        return Err(Error::OversizedImage(span));
    }
    let mut mapped = vec![0u8; span as usize];
    mapped[..header_len as usize].copy_from_slice(&image.raw[..header_len as usize]);
    for section in &image.sections {
        // Raw data past the end of the file maps as zero fill, like a
        // truncated-on-disk section would.
        let start = (section.raw_offset as usize).min(image.raw.len());
        let end = start
            .saturating_add(section.raw_size as usize)
            .min(image.raw.len());
        let src = start..end;
        let dst = section.virtual_address as usize..section.virtual_address as usize + src.len();
        mapped[dst].copy_from_slice(&image.raw[src]);
    }
    Ok(mapped)
}

/// Simulate loading `image` at `load_base` and resolving its imports
/// against `universe`.
///
/// Relocations are applied by entry type (HIGHLOW adds a 32-bit delta,
/// DIR64 a 64-bit one), import slots are overwritten with universe VAs, and
/// references are gathered two ways: scanning mapped executable sections,
/// and following relocation entries whose relocated value points at a bound
/// slot.  A relocated value that lands inside an import table without
/// hitting a slot boundary is a [`Error::DanglingReference`].
pub fn simulate_bind(
    image: &PeImage,
    universe: &MockExportUniverse,
    load_base: u64,
) -> Result<BindReport> {
    let descriptors = codec::read_import_directory(image)?;
    let relocs = codec::read_reloc_directory(image)?;
    let mut mapped = map_image(image)?;
    let delta = load_base.wrapping_sub(image.image_base) as i64;

    for block in &relocs {
        for entry in &block.entries {
            let width = match entry.kind {
                RELOC_HIGHLOW => 4,
                RELOC_DIR64 => 8,
                _ => continue,
            };
            // Safe to sum: the parser vetted every non-padding entry target.
            let target = block.page_rva + u32::from(entry.offset_in_page);
            let at = target as usize;
            // The parser checked the target's first byte is mapped; a block
            // near a section tail can still run the full word off the span.
            if at + width > mapped.len() {
                return Err(Error::RelocTargetUnmappable(target));
            }
            if width == 4 {
                let value = read_u32_at(&mapped, at).wrapping_add(delta as u32);
                mapped[at..at + 4].copy_from_slice(&value.to_le_bytes());
            } else {
                let value = read_u64_at(&mapped, at).wrapping_add(delta as u64);
                mapped[at..at + 8].copy_from_slice(&value.to_le_bytes());
            }
        }
    }

    let width = image.machine_class.thunk_width();
    let mut slot_bindings = Vec::new();
    let mut binding_at: BTreeMap<u32, usize> = BTreeMap::new();
    for descriptor in &descriptors {
        for thunk in &descriptor.thunks {
            let symbol = SymbolRef::from(&thunk.payload);
            let va = universe
                .lookup(&descriptor.module_name, &symbol)
                .ok_or_else(|| Error::UnresolvedImport {
                    module: descriptor.module_name.clone(),
                    symbol: symbol.to_string(),
                })?;
            let at = thunk.ft_slot_rva as usize;
            // With an OFT present the parser never dereferences the FT
            // side, so its RVA is unvetted until this write.
            if at + width > mapped.len() {
                return Err(Error::UnmappedRva(thunk.ft_slot_rva));
            }
            if width == 4 {
                mapped[at..at + 4].copy_from_slice(&(va as u32).to_le_bytes());
            } else {
                mapped[at..at + 8].copy_from_slice(&va.to_le_bytes());
            }
            binding_at.insert(thunk.ft_slot_rva, slot_bindings.len());
            slot_bindings.push(SlotBinding {
                slot_rva: thunk.ft_slot_rva,
                module: descriptor.module_name.to_ascii_lowercase(),
                symbol,
                bound_va: va,
            });
        }
    }

    let slot_set: BTreeSet<u32> = binding_at.keys().copied().collect();
    let ft_spans: Vec<(u64, u64)> = descriptors
        .iter()
        .map(|d| {
            let len = (d.thunks.len() * width) as u64;
            (u64::from(d.ft_rva), u64::from(d.ft_rva) + len)
        })
        .collect();

    let mut sites: BTreeMap<u32, SiteResolution> = BTreeMap::new();
    let mut add_site = |operand_rva: u32, route: Route, slot: u32| {
        let binding = &slot_bindings[binding_at[&slot]];
        sites
            .entry(operand_rva)
            .and_modify(|existing| {
                if existing.route != route {
                    existing.route = Route::Both;
                }
            })
            .or_insert(SiteResolution {
                operand_rva,
                route,
                slot_rva: slot,
                target_va: binding.bound_va,
                module: binding.module.clone(),
                symbol: binding.symbol.clone(),
            });
    };

    // Scan route: walk mapped executable sections, decoding absolute
    // operands against the load base (they were just relocated to it).
    for section in image.sections.iter().filter(|s| s.is_executable()) {
        let start = section.virtual_address as usize;
        let code = &mapped[start..start + section.raw_size as usize];
        for (pos, _, slot) in textscan::scan_span(
            code,
            section.virtual_address,
            load_base,
            &slot_set,
            image.machine_class,
        ) {
            add_site(section.virtual_address + (pos + 2) as u32, Route::Scan, slot);
        }
    }

    // Reloc route: any relocated word now holding `load_base + slot` is a
    // reference, wherever it lives.
    for block in &relocs {
        for entry in &block.entries {
            if entry.kind != RELOC_HIGHLOW && entry.kind != RELOC_DIR64 {
                continue;
            }
            let target = block.page_rva + u32::from(entry.offset_in_page);
            let value = match entry.kind {
                RELOC_HIGHLOW if target as usize + 4 <= mapped.len() => {
                    u64::from(read_u32_at(&mapped, target as usize))
                }
                RELOC_DIR64 if target as usize + 8 <= mapped.len() => {
                    read_u64_at(&mapped, target as usize)
                }
                _ => continue,
            };
            let Some(pointee) = value
                .wrapping_sub(load_base)
                .try_into()
                .ok()
                .filter(|rva: &u32| u64::from(*rva) == value.wrapping_sub(load_base))
            else {
                continue;
            };
            if slot_set.contains(&pointee) {
                add_site(target, Route::Reloc, pointee);
            } else if ft_spans
                .iter()
                .any(|&(lo, hi)| u64::from(pointee) >= lo && u64::from(pointee) < hi)
            {
                return Err(Error::DanglingReference(target));
            }
        }
    }

    Ok(BindReport {
        load_base,
        rebase_delta: delta,
        slot_bindings,
        site_resolutions: sites.into_values().collect(),
    })
}

/// The export a site resolves to, for divergence reporting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ResolvedSymbol {
    pub module: String,
    pub symbol: SymbolRef,
}

/// One reference that resolves differently between two images.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DivergentSite {
    pub load_base: u64,
    pub operand_rva: u32,
    /// Resolution in the first image; `None` when absent there.
    pub before: Option<ResolvedSymbol>,
    pub after: Option<ResolvedSymbol>,
}

/// Outcome of [`assert_equivalent`].  Divergences are report content, not
/// errors; only simulation failures (unresolved imports, dangling
/// references, unparseable input) surface as `Err`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EquivalenceReport {
    pub equivalent: bool,
    /// Same machine class, base, file length, section table, and slot set.
    pub geometry_matches: bool,
    /// Same per-module bag of imported symbols, order ignored.
    pub import_multiset_matches: bool,
    /// Bases actually tested, after clamping for stripped relocations.
    pub load_bases: Vec<u64>,
    /// References compared at each base (union of both images' sites).
    pub sites_per_base: Vec<usize>,
    pub divergent_sites: Vec<DivergentSite>,
}

fn import_multiset(image: &PeImage) -> Result<BTreeMap<String, BTreeMap<SymbolRef, usize>>> {
    let mut bags: BTreeMap<String, BTreeMap<SymbolRef, usize>> = BTreeMap::new();
    for descriptor in &codec::read_import_directory(image)? {
        let bag = bags
            .entry(descriptor.module_name.to_ascii_lowercase())
            .or_default();
        for thunk in &descriptor.thunks {
            *bag.entry(SymbolRef::from(&thunk.payload)).or_default() += 1;
        }
    }
    Ok(bags)
}

fn slot_set(image: &PeImage) -> Result<BTreeSet<u32>> {
    Ok(codec::read_import_directory(image)?
        .iter()
        .flat_map(|d| d.thunks.iter().map(|t| t.ft_slot_rva))
        .collect())
}

/// Load bases the transform's internal check uses: the preferred base and
/// one rebased by 64 KiB.
pub fn default_load_bases(image: &PeImage) -> Vec<u64> {
    vec![image.image_base, image.image_base.wrapping_add(0x10000)]
}

/// Bind both images at every load base and compare where each code
/// reference lands.
///
/// Bases are clamped to the preferred image base when either image has
/// relocations stripped (a loader could not rebase it either), then
/// deduplicated.  The two images are equivalent when geometry and import
/// multisets match and no reference resolves differently at any base.
pub fn assert_equivalent(
    original: &PeImage,
    transformed: &PeImage,
    universe: &MockExportUniverse,
    load_bases: &[u64],
) -> Result<EquivalenceReport> {
    let geometry_matches = original.machine_class == transformed.machine_class
        && original.image_base == transformed.image_base
        && original.raw.len() == transformed.raw.len()
        && original.size_of_image == transformed.size_of_image
        && original.sections == transformed.sections
        && slot_set(original)? == slot_set(transformed)?;
    let import_multiset_matches = import_multiset(original)? == import_multiset(transformed)?;

    let clamp = original.relocs_stripped() || transformed.relocs_stripped();
    let mut bases: Vec<u64> = Vec::new();
    for &base in load_bases {
        let base = if clamp { original.image_base } else { base };
        if !bases.contains(&base) {
            bases.push(base);
        }
    }

    let mut sites_per_base = Vec::with_capacity(bases.len());
    let mut divergent_sites = Vec::new();
    for &base in &bases {
        let before = simulate_bind(original, universe, base)?;
        let after = simulate_bind(transformed, universe, base)?;
        let before: BTreeMap<u32, &SiteResolution> = before
            .site_resolutions
            .iter()
            .map(|s| (s.operand_rva, s))
            .collect();
        let after: BTreeMap<u32, &SiteResolution> = after
            .site_resolutions
            .iter()
            .map(|s| (s.operand_rva, s))
            .collect();
        let operands: BTreeSet<u32> = before.keys().chain(after.keys()).copied().collect();
        sites_per_base.push(operands.len());
        for operand_rva in operands {
            let resolve = |side: &BTreeMap<u32, &SiteResolution>| {
                side.get(&operand_rva).map(|s| ResolvedSymbol {
                    module: s.module.clone(),
                    symbol: s.symbol.clone(),
                })
            };
            let b = resolve(&before);
            let a = resolve(&after);
            if b != a {
                divergent_sites.push(DivergentSite {
                    load_base: base,
                    operand_rva,
                    before: b,
                    after: a,
                });
            }
        }
    }

    Ok(EquivalenceReport {
        equivalent: geometry_matches && import_multiset_matches && divergent_sites.is_empty(),
        geometry_matches,
        import_multiset_matches,
        load_bases: bases,
        sites_per_base,
        divergent_sites,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shuffle::{self, Strategy, TransformOptions};
    use crate::synth::{build_pe, ModuleSpec, SymbolSpec, SynthSpec};

    fn parse(spec: &SynthSpec) -> PeImage {
        codec::parse_pe(build_pe(spec).unwrap()).unwrap()
    }

    #[test]
    fn universe_vas_are_unique_and_reversible() {
        let mut universe = MockExportUniverse::new();
        let mut vas = BTreeSet::new();
        for m in 0..8 {
            for s in 0..64 {
                let va = universe.insert(&format!("mod{m}.dll"), SymbolRef::Name(format!("sym{s}")));
                assert!((UNIVERSE_VA_FLOOR..UNIVERSE_VA_FLOOR + UNIVERSE_VA_SPAN).contains(&va));
                assert_eq!(va % 16, 0);
                assert!(vas.insert(va), "duplicate VA {va:#x}");
                let (module, symbol) = universe.symbol_at(va).unwrap();
                assert_eq!(module, &format!("mod{m}.dll"));
                assert_eq!(symbol, &SymbolRef::Name(format!("sym{s}")));
            }
        }
        assert_eq!(universe.export_count(), 8 * 64);
        // Idempotent and case-insensitive on the module.
        let va1 = universe.insert("MOD0.DLL", SymbolRef::Name("sym0".into()));
        assert_eq!(Some(va1), universe.lookup("mod0.dll", &SymbolRef::Name("sym0".into())));
        assert_eq!(universe.export_count(), 8 * 64);
    }

    #[test]
    fn untransformed_slots_bind_in_declaration_order() {
        let mut spec = SynthSpec::minimal_pe32();
        spec.modules = vec![ModuleSpec::by_name("demo.dll", &["alpha", "beta", "gamma"])];
        let image = parse(&spec);
        let universe = MockExportUniverse::covering(&[&image]).unwrap();
        let report = simulate_bind(&image, &universe, image.image_base).unwrap();
        assert_eq!(report.rebase_delta, 0);
        let names: Vec<String> = report
            .slot_bindings
            .iter()
            .map(|b| b.symbol.to_string())
            .collect();
        assert_eq!(names, ["alpha", "beta", "gamma"]);
        for b in &report.slot_bindings {
            assert_eq!(universe.symbol_at(b.bound_va).unwrap().1, b.symbol);
        }
        // One call site per symbol, each found by scan and corroborated by
        // a relocation entry.
        assert_eq!(report.site_resolutions.len(), 3);
        for site in &report.site_resolutions {
            assert_eq!(site.route, Route::Both);
        }
    }

    #[test]
    fn rebasing_moves_bindings_not_resolutions() {
        let image = parse(&SynthSpec::minimal_pe32());
        let universe = MockExportUniverse::covering(&[&image]).unwrap();
        let at_home = simulate_bind(&image, &universe, image.image_base).unwrap();
        let moved = simulate_bind(&image, &universe, image.image_base + 0x7_0000).unwrap();
        assert_eq!(moved.rebase_delta, 0x7_0000);
        // Symbols reached are identical; only operand words were rebased.
        let sym = |r: &BindReport| -> Vec<(u32, String)> {
            r.site_resolutions
                .iter()
                .map(|s| (s.operand_rva, format!("{}!{}", s.module, s.symbol)))
                .collect()
        };
        assert_eq!(sym(&at_home), sym(&moved));
    }

    #[test]
    fn unresolved_import_is_an_error() {
        let image = parse(&SynthSpec::minimal_pe32());
        let universe = MockExportUniverse::new();
        match simulate_bind(&image, &universe, image.image_base) {
            Err(Error::UnresolvedImport { module, symbol }) => {
                assert_eq!(module, "demo.dll");
                assert_eq!(symbol, "alpha");
            }
            other => panic!("expected UnresolvedImport, got {other:?}"),
        }
    }

    #[test]
    fn ordinal_imports_bind_through_the_universe() {
        let mut spec = SynthSpec::minimal_pe32();
        spec.modules = vec![ModuleSpec {
            name: "byord.dll".into(),
            symbols: vec![SymbolSpec::Ordinal(7), SymbolSpec::Ordinal(400)],
        }];
        let image = parse(&spec);
        let universe = MockExportUniverse::covering(&[&image]).unwrap();
        let report = simulate_bind(&image, &universe, image.image_base).unwrap();
        assert_eq!(report.slot_bindings[0].symbol, SymbolRef::Ordinal(7));
        assert_eq!(report.slot_bindings[1].symbol, SymbolRef::Ordinal(400));
    }

    #[test]
    fn original_is_equivalent_to_itself() {
        let image = parse(&SynthSpec::minimal_pe32());
        let universe = MockExportUniverse::covering(&[&image]).unwrap();
        let report =
            assert_equivalent(&image, &image, &universe, &default_load_bases(&image)).unwrap();
        assert!(report.equivalent);
        assert!(report.geometry_matches);
        assert!(report.import_multiset_matches);
        assert_eq!(report.load_bases.len(), 2);
        assert!(report.divergent_sites.is_empty());
        assert!(report.sites_per_base.iter().all(|&n| n == 2));
    }

    #[test]
    fn transformed_output_is_equivalent_to_input() {
        let bytes = build_pe(&SynthSpec::minimal_pe32()).unwrap();
        let original = codec::parse_pe(bytes.clone()).unwrap();
        let result =
            shuffle::transform(&bytes, 77, Strategy::Auto, TransformOptions::default()).unwrap();
        let transformed = codec::parse_pe(result.output).unwrap();
        let universe = MockExportUniverse::covering(&[&original]).unwrap();
        let report = assert_equivalent(
            &original,
            &transformed,
            &universe,
            &default_load_bases(&original),
        )
        .unwrap();
        assert!(report.equivalent);
        // The permutation really moved slot bindings.
        let bind = simulate_bind(&transformed, &universe, original.image_base).unwrap();
        let orig_bind = simulate_bind(&original, &universe, original.image_base).unwrap();
        assert_ne!(bind.slot_bindings, orig_bind.slot_bindings);
    }

    #[test]
    fn shuffle_without_patching_is_flagged() {
        // Apply a permutation but skip reference patching: imports stay the
        // same multiset, geometry is untouched, yet every site now reaches
        // the wrong symbol.
        let image = parse(&SynthSpec::minimal_pe32());
        let groups = shuffle::collect_thunk_pairs(&image, false).unwrap();
        let s = |i: usize| groups[0].pairs[i].ft_slot_rva;
        let perm = shuffle::ThunkPermutation {
            seed: 0,
            per_module: vec![shuffle::ModuleMapping {
                module_name: groups[0].module_name.clone(),
                mapping: [(s(0), s(1)), (s(1), s(0))].into(),
            }],
        };
        let edits = shuffle::apply_permutation(&image, &perm).unwrap();
        let broken = codec::parse_pe(codec::serialize(&image, &edits).unwrap()).unwrap();

        let universe = MockExportUniverse::covering(&[&image]).unwrap();
        let report =
            assert_equivalent(&image, &broken, &universe, &default_load_bases(&image)).unwrap();
        assert!(!report.equivalent);
        assert!(report.geometry_matches);
        assert!(report.import_multiset_matches);
        // Two sites diverge at each of the two bases.
        assert_eq!(report.divergent_sites.len(), 4);
        for site in &report.divergent_sites {
            let before = site.before.as_ref().unwrap();
            let after = site.after.as_ref().unwrap();
            assert_eq!(before.module, after.module);
            assert_ne!(before.symbol, after.symbol);
        }
    }

    #[test]
    fn stripped_images_clamp_to_their_preferred_base() {
        let mut spec = SynthSpec::minimal_pe32();
        spec.emit_relocs = false;
        spec.set_relocs_stripped = true;
        let image = parse(&spec);
        let universe = MockExportUniverse::covering(&[&image]).unwrap();
        let report = assert_equivalent(
            &image,
            &image,
            &universe,
            &[image.image_base, image.image_base + 0x10000],
        )
        .unwrap();
        assert_eq!(report.load_bases, vec![image.image_base]);
        assert!(report.equivalent);
    }

    #[test]
    fn pointer_cells_resolve_through_the_reloc_route() {
        let mut spec = SynthSpec::minimal_pe32();
        spec.emit_pointer_cells = true;
        spec.call_sites_per_symbol = 0;
        let image = parse(&spec);
        let universe = MockExportUniverse::covering(&[&image]).unwrap();
        let report = simulate_bind(&image, &universe, image.image_base + 0x10000).unwrap();
        assert_eq!(report.site_resolutions.len(), 2);
        for site in &report.site_resolutions {
            assert_eq!(site.route, Route::Reloc);
        }
    }

    #[test]
    fn misaligned_iat_pointer_is_dangling() {
        let mut spec = SynthSpec::minimal_pe32();
        spec.emit_pointer_cells = true;
        let image = parse(&spec);
        // Nudge one pointer cell so it lands between two slots.
        let universe = MockExportUniverse::covering(&[&image]).unwrap();
        let clean = simulate_bind(&image, &universe, image.image_base).unwrap();
        let cell = clean
            .site_resolutions
            .iter()
            .find(|s| s.route == Route::Reloc)
            .expect("fixture has pointer cells");
        let at = image.rva_to_offset(cell.operand_rva).unwrap() as usize;
        let mut raw = image.raw.clone();
        let stored = u32::from_le_bytes(raw[at..at + 4].try_into().unwrap());
        raw[at..at + 4].copy_from_slice(&(stored + 1).to_le_bytes());
        let poked = codec::parse_pe(raw).unwrap();
        match simulate_bind(&poked, &universe, poked.image_base) {
            Err(Error::DanglingReference(rva)) => assert_eq!(rva, cell.operand_rva),
            other => panic!("expected DanglingReference, got {other:?}"),
        }
    }

    #[test]
    fn oversized_image_is_refused() {
        let image = parse(&SynthSpec::minimal_pe32());
        let mut oversized = image.clone();
        oversized.size_of_image = u32::MAX;
        let universe = MockExportUniverse::covering(&[&image]).unwrap();
        match simulate_bind(&oversized, &universe, oversized.image_base) {
            Err(Error::OversizedImage(_)) => {}
            other => panic!("expected OversizedImage, got {other:?}"),
        }
    }
}
