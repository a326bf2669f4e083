//! `petool` — PE import-table analysis and rewriting from the command line.
//!
//! Every subcommand prints a single JSON document to stdout; diagnostics go
//! to stderr.  Exit codes: 0 success (or equivalent, for `verify`); 1 usage
//! or I/O error; 2 input-file parse error; 3 transform refused; 4 not
//! equivalent.  No subcommand modifies its input in place.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use petool_core::codec;
use petool_core::imphash::{imphash_report, imphash_reports, ImphashMode};
use petool_core::shuffle::{transform, Strategy, TransformOptions};
use petool_core::synth::{build_pe, SynthSpec};
use petool_core::verify::{assert_equivalent, default_load_bases, MockExportUniverse};
use petool_core::Error as CoreError;

#[derive(Parser)]
#[command(
    name = "petool",
    version,
    about = "Inspect, fingerprint, and rewrite PE import tables"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Paper,
    Compat,
}

impl From<ModeArg> for ImphashMode {
    fn from(mode: ModeArg) -> Self {
        match mode {
            ModeArg::Paper => ImphashMode::PaperMode,
            ModeArg::Compat => ImphashMode::CompatMode,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    Auto,
    Reloc,
    TextScan,
}

impl From<StrategyArg> for Strategy {
    fn from(strategy: StrategyArg) -> Self {
        match strategy {
            StrategyArg::Auto => Strategy::Auto,
            StrategyArg::Reloc => Strategy::RelocPatch,
            StrategyArg::TextScan => Strategy::TextScan,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Compute the import fingerprint of a PE file.
    Imphash {
        file: PathBuf,
        /// Canonicalization convention to fingerprint with.
        #[arg(long, value_enum, default_value_t = ModeArg::Compat)]
        mode: ModeArg,
        /// Include the canonical import string in the output.
        #[arg(long)]
        show_string: bool,
    },
    /// Shuffle import thunks and patch references, writing a new file.
    Transform {
        input: PathBuf,
        /// Where to write the transformed file.
        #[arg(short, long)]
        output: PathBuf,
        /// Shuffle seed; omitted, one is drawn at random and reported.
        #[arg(long)]
        seed: Option<u64>,
        /// How code references get fixed up.
        #[arg(long, value_enum, default_value_t = StrategyArg::Auto)]
        strategy: StrategyArg,
        /// Strip bind timestamps and the bound-import directory first.
        #[arg(long)]
        unbind: bool,
        /// Leave the header checksum untouched.
        #[arg(long)]
        no_checksum: bool,
    },
    /// Dump headers, imports, and relocation summary as JSON.
    Inspect { file: PathBuf },
    /// Check two files resolve every import reference identically.
    Verify {
        original: PathBuf,
        transformed: PathBuf,
    },
    /// Build a synthetic PE from a JSON spec.
    Gen {
        /// JSON document mirroring the SynthSpec fields.
        #[arg(long)]
        spec: PathBuf,
        /// Where to write the generated file.
        #[arg(short, long)]
        output: PathBuf,
    },
}

/// A diagnostic plus the exit code it maps to.
struct Failure {
    code: i32,
    message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn exit_code(err: &CoreError) -> i32 {
    match err {
        // Structural problems with an input file.
        CoreError::BadDosMagic
        | CoreError::BadNtSignature(_)
        | CoreError::UnsupportedMachineClass(_)
        | CoreError::TruncatedFile { .. }
        | CoreError::OverlappingSections(..)
        | CoreError::UnmappedRva(_)
        | CoreError::UnmappedOffset(_)
        | CoreError::NoImportTable
        | CoreError::MalformedDescriptor { .. }
        | CoreError::UnterminatedThunkArray(_)
        | CoreError::MalformedRelocBlock { .. }
        | CoreError::NoSymbolName { .. }
        | CoreError::OftFtMismatch { .. }
        | CoreError::RelocTargetUnmappable(_)
        | CoreError::UnresolvedImport { .. }
        | CoreError::DanglingReference(_)
        | CoreError::OversizedImage(_) => 2,
        // The transform declined to produce an output.
        CoreError::NothingToShuffle(_)
        | CoreError::BoundImportsPresent(_)
        | CoreError::NoRetargetPath(_)
        | CoreError::EquivalenceCheckFailed(_) => 3,
        _ => 1,
    }
}

impl From<CoreError> for Failure {
    fn from(err: CoreError) -> Self {
        Failure {
            code: exit_code(&err),
            message: err.to_string(),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(err: serde_json::Error) -> Self {
        Failure {
            code: 1,
            message: err.to_string(),
        }
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|err| Failure {
        code: 1,
        message: format!("{}: {err}", path.display()),
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|err| Failure {
        code: 1,
        message: format!("{}: {err}", path.display()),
    })
}

fn emit(value: &serde_json::Value) -> Result<(), Failure> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value)?;
    // A consumer closing the pipe early (e.g. `| head`) is not our error.
    let _ = writeln!(std::io::stdout(), "{text}");
    Ok(())
}

/// Reject output paths that would clobber the input.
fn guard_in_place(input: &Path, output: &Path) -> Result<(), Failure> {
    let same = input == output
        || match (fs::canonicalize(input), fs::canonicalize(output)) {
            (Ok(a), Ok(b)) => a == b,
            _ => false,
        };
    if same {
        return Err(Failure {
            code: 1,
            message: format!(
                "refusing to overwrite the input in place: {}",
                input.display()
            ),
        });
    }
    Ok(())
}

fn execute(command: Command) -> Result<i32, Failure> {
    match command {
        Command::Imphash {
            file,
            mode,
            show_string,
        } => {
            let image = codec::parse_pe(read_bytes(&file)?)?;
            let report = imphash_report(&image, mode.into())?;
            let mut value = serde_json::to_value(&report)?;
            if !show_string {
                value.as_object_mut().unwrap().remove("canonical_string");
            }
            emit(&value)?;
            Ok(0)
        }
        Command::Transform {
            input,
            output,
            seed,
            strategy,
            unbind,
            no_checksum,
        } => {
            guard_in_place(&input, &output)?;
            let bytes = read_bytes(&input)?;
            let seed = seed.unwrap_or_else(rand::random::<u64>);
            let options = TransformOptions {
                unbind,
                update_checksum: !no_checksum,
            };
            let result = transform(&bytes, seed, strategy.into(), options)?;
            write_bytes(&output, &result.output)?;
            let mut value = serde_json::to_value(&result)?;
            let object = value.as_object_mut().unwrap();
            object.insert("seed".into(), seed.into());
            object.insert("input".into(), input.display().to_string().into());
            object.insert("output".into(), output.display().to_string().into());
            emit(&value)?;
            Ok(0)
        }
        Command::Inspect { file } => {
            let image = codec::parse_pe(read_bytes(&file)?)?;
            let imports = match codec::read_import_directory(&image) {
                Ok(descriptors) => descriptors,
                Err(CoreError::NoImportTable) => Vec::new(),
                Err(err) => return Err(err.into()),
            };
            let relocs = codec::read_reloc_directory(&image)?;
            let count_kind = |kind: u8| -> usize {
                relocs
                    .iter()
                    .flat_map(|b| &b.entries)
                    .filter(|e| e.kind == kind)
                    .count()
            };
            let sections: Vec<_> = image
                .sections
                .iter()
                .map(|s| {
                    json!({
                        "name": s.name_str(),
                        "virtual_address": s.virtual_address,
                        "virtual_size": s.virtual_size,
                        "raw_offset": s.raw_offset,
                        "raw_size": s.raw_size,
                        "executable": s.is_executable(),
                    })
                })
                .collect();
            emit(&json!({
                "machine_class": image.machine_class,
                "image_base": image.image_base,
                "size_of_image": image.size_of_image,
                "file_length": image.raw.len(),
                "relocs_stripped": image.relocs_stripped(),
                "sections": sections,
                "imports": imports,
                "relocations": {
                    "blocks": relocs.len(),
                    "highlow": count_kind(petool_core::image::RELOC_HIGHLOW),
                    "dir64": count_kind(petool_core::image::RELOC_DIR64),
                    "absolute_padding": count_kind(0),
                },
                "imphash": imphash_reports(&image)?,
            }))?;
            Ok(0)
        }
        Command::Verify {
            original,
            transformed,
        } => {
            let before = codec::parse_pe(read_bytes(&original)?)?;
            let after = codec::parse_pe(read_bytes(&transformed)?)?;
            let universe = MockExportUniverse::covering(&[&before, &after])?;
            let report =
                assert_equivalent(&before, &after, &universe, &default_load_bases(&before))?;
            emit(&serde_json::to_value(&report)?)?;
            Ok(if report.equivalent { 0 } else { 4 })
        }
        Command::Gen { spec, output } => {
            let text = fs::read_to_string(&spec).map_err(|err| Failure {
                code: 1,
                message: format!("{}: {err}", spec.display()),
            })?;
            let spec: SynthSpec = serde_json::from_str(&text).map_err(|err| Failure {
                code: 1,
                message: format!("spec is not valid JSON: {err}"),
            })?;
            let bytes = build_pe(&spec).map_err(|err| Failure {
                code: 1,
                message: err.to_string(),
            })?;
            write_bytes(&output, &bytes)?;
            emit(&json!({
                "output": output.display().to_string(),
                "length": bytes.len(),
            }))?;
            Ok(0)
        }
    }
}

fn run<I>(argv: I) -> i32
where
    I: IntoIterator<Item = OsString>,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.exit_code() == 0 { 0 } else { 1 };
            let _ = err.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(failure) => {
            eprintln!("petool: {failure}");
            failure.code
        }
    }
}

fn main() {
    std::process::exit(run(std::env::args_os()));
}
