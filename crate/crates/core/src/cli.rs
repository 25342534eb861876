//! Configuration documents, result files and the command-line front end.
//!
//! A configuration is a flat TOML document. Scalars fix a parameter; the one
//! parameter given as an array is swept:
//!
//! ```toml
//! n_elements = 128
//! n_faults = 6
//! n_paths = 3
//! quantized = false
//! snr_db = [0, 10, 20, 30]
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

use crate::fault_channel::FaultMode;
use crate::simulator::{
    preset, run_sweep, CsiErrorModel, ExperimentSpec, InvalidSpec, OperatingPoint, PresetName,
    SimulationError, Sweep, SweepParam, SweepResult, Technique, TechniqueSelection, DEFAULT_TRIALS,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Output columns, in order.
pub const CSV_COLUMNS: [&str; 19] = [
    "experiment_id",
    "technique",
    "n_elements",
    "n_faults",
    "fault_mode",
    "n_paths",
    "quantized",
    "m_measurements",
    "snr_db",
    "aoa_offset_deg",
    "gain_error_var",
    "aoa_error_var",
    "sweep_param",
    "sweep_value",
    "trials",
    "p_success",
    "std_error",
    "seed",
    "tool_version",
];

const KNOWN_KEYS: [&str; 15] = [
    "experiment_id",
    "n_elements",
    "n_faults",
    "fault_mode",
    "n_paths",
    "quantized",
    "technique",
    "m_measurements",
    "snr_db",
    "aoa_offset_deg",
    "gain_error_var",
    "aoa_error_var",
    "csi_error",
    "trials",
    "seed",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("malformed document: {0}")]
    Syntax(String),
    #[error("missing required key `{0}`")]
    MissingKey(&'static str),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("`{field}` must be {expected}")]
    Type {
        field: String,
        expected: &'static str,
    },
    #[error("no swept parameter: give exactly one of m_measurements, snr_db, aoa_offset_deg, gain_error_var, aoa_error_var as an array")]
    NoSweep,
    #[error("more than one swept parameter: {}", .0.join(", "))]
    DuplicateSweep(Vec<String>),
    #[error(transparent)]
    Invalid(#[from] InvalidSpec),
}

impl ConfigError {
    /// Name of the offending key, when there is one.
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Syntax(_) | ConfigError::NoSweep => None,
            ConfigError::MissingKey(k) => Some(k),
            ConfigError::UnknownKey(k) => Some(k),
            ConfigError::Type { field, .. } => Some(field),
            ConfigError::DuplicateSweep(keys) => keys.first().map(String::as_str),
            ConfigError::Invalid(e) => Some(&e.field),
        }
    }
}

fn type_error(field: &str, expected: &'static str) -> ConfigError {
    ConfigError::Type {
        field: field.to_string(),
        expected,
    }
}

fn as_count(field: &str, v: &Value) -> Result<u64, ConfigError> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        _ => Err(type_error(field, "a non-negative integer")),
    }
}

fn as_number(field: &str, v: &Value) -> Result<f64, ConfigError> {
    match v {
        Value::Integer(i) => Ok(*i as f64),
        Value::Float(f) => Ok(*f),
        _ => Err(type_error(field, "a number")),
    }
}

fn as_str<'a>(field: &str, v: &'a Value) -> Result<&'a str, ConfigError> {
    v.as_str().ok_or_else(|| type_error(field, "a string"))
}

fn parse_enum<T: std::str::FromStr<Err = String>>(
    field: &str,
    v: &Value,
) -> Result<T, ConfigError> {
    as_str(field, v)?.parse().map_err(|message| {
        ConfigError::Invalid(InvalidSpec {
            field: field.to_string(),
            message,
        })
    })
}

/// Parse and validate a configuration document.
///
/// Keys left out take their defaults, which end up in the returned spec.
pub fn parse_config(text: &str) -> Result<ExperimentSpec, ConfigError> {
    let table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
    if let Some(key) = table.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
        return Err(ConfigError::UnknownKey(key.clone()));
    }

    let swept: Vec<&String> = table
        .iter()
        .filter(|(_, v)| v.is_array())
        .map(|(k, _)| k)
        .collect();
    let sweep = match swept.as_slice() {
        [] => return Err(ConfigError::NoSweep),
        [key] => {
            let param = SweepParam::from_key(key)
                .ok_or_else(|| type_error(key, "a scalar (it cannot be swept)"))?;
            let values = table[key.as_str()]
                .as_array()
                .expect("filtered on arrays")
                .iter()
                .map(|v| as_number(key, v))
                .collect::<Result<Vec<f64>, _>>()?;
            Sweep { param, values }
        }
        many => {
            return Err(ConfigError::DuplicateSweep(
                many.iter().map(|k| k.to_string()).collect(),
            ))
        }
    };

    let get = |k: &str| table.get(k).filter(|v| !v.is_array());
    let required = |k: &'static str| get(k).ok_or(ConfigError::MissingKey(k));

    let mut fixed = OperatingPoint::default();
    if let Some(v) = get("m_measurements") {
        fixed.m_measurements = as_count("m_measurements", v)? as usize;
    }
    if let Some(v) = get("snr_db") {
        fixed.snr_db = as_number("snr_db", v)?;
    }
    if let Some(v) = get("aoa_offset_deg") {
        fixed.aoa_offset_deg = as_number("aoa_offset_deg", v)?;
    }
    if let Some(v) = get("gain_error_var") {
        fixed.gain_error_var = as_number("gain_error_var", v)?;
    }
    if let Some(v) = get("aoa_error_var") {
        fixed.aoa_error_var = as_number("aoa_error_var", v)?;
    }
    let csi_error: CsiErrorModel = match get("csi_error") {
        Some(v) => parse_enum("csi_error", v)?,
        None => CsiErrorModel::default(),
    };
    if csi_error == CsiErrorModel::SnrMatched {
        for key in ["gain_error_var", "aoa_error_var"] {
            if table.contains_key(key) {
                return Err(ConfigError::Invalid(InvalidSpec {
                    field: key.to_string(),
                    message: "derived from snr_db when csi_error = \"snr_matched\"".into(),
                }));
            }
        }
    }

    let spec = ExperimentSpec {
        experiment_id: match get("experiment_id") {
            Some(v) => as_str("experiment_id", v)?.to_string(),
            None => "custom".to_string(),
        },
        n_elements: as_count("n_elements", required("n_elements")?)? as usize,
        n_faults: as_count("n_faults", required("n_faults")?)? as usize,
        fault_mode: match get("fault_mode") {
            Some(v) => parse_enum("fault_mode", v)?,
            None => FaultMode::Complete,
        },
        n_paths: match get("n_paths") {
            Some(v) => as_count("n_paths", v)? as usize,
            None => 1,
        },
        quantized: match get("quantized") {
            Some(v) => v
                .as_bool()
                .ok_or_else(|| type_error("quantized", "a boolean"))?,
            None => true,
        },
        technique: match get("technique") {
            Some(v) => parse_enum("technique", v)?,
            None => TechniqueSelection::Both,
        },
        sweep,
        fixed,
        csi_error,
        trials: match get("trials") {
            Some(v) => as_count("trials", v)?,
            None => DEFAULT_TRIALS,
        },
        master_seed: match get("seed") {
            Some(v) => as_count("seed", v)?,
            None => 0,
        },
    };
    spec.validate()?;
    Ok(spec)
}

fn float_value(v: f64) -> Value {
    Value::Float(v)
}

/// Configuration document that parses back to `spec`.
pub fn spec_to_config(spec: &ExperimentSpec) -> String {
    let mut t = Table::new();
    t.insert(
        "experiment_id".into(),
        Value::String(spec.experiment_id.clone()),
    );
    t.insert("n_elements".into(), Value::Integer(spec.n_elements as i64));
    t.insert("n_faults".into(), Value::Integer(spec.n_faults as i64));
    t.insert(
        "fault_mode".into(),
        Value::String(spec.fault_mode.as_str().into()),
    );
    t.insert("n_paths".into(), Value::Integer(spec.n_paths as i64));
    t.insert("quantized".into(), Value::Boolean(spec.quantized));
    t.insert(
        "technique".into(),
        Value::String(spec.technique.as_str().into()),
    );
    t.insert(
        "csi_error".into(),
        Value::String(spec.csi_error.as_str().into()),
    );
    t.insert("trials".into(), Value::Integer(spec.trials as i64));
    t.insert("seed".into(), Value::Integer(spec.master_seed as i64));

    for param in SweepParam::ALL {
        if spec.csi_error == CsiErrorModel::SnrMatched
            && matches!(param, SweepParam::GainErrorVar | SweepParam::AoaErrorVar)
        {
            continue;
        }
        let value = if param == spec.sweep.param {
            Value::Array(
                spec.sweep
                    .values
                    .iter()
                    .map(|&v| match param {
                        SweepParam::Measurements => Value::Integer(v as i64),
                        _ => float_value(v),
                    })
                    .collect(),
            )
        } else {
            match param {
                SweepParam::Measurements => Value::Integer(spec.fixed.m_measurements as i64),
                _ => float_value(spec.fixed.get(param)),
            }
        };
        t.insert(param.key().into(), value);
    }
    toml::to_string(&t).expect("plain table serializes")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

/// One output row. Field order matches [`CSV_COLUMNS`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment_id: String,
    pub technique: Technique,
    pub n_elements: usize,
    pub n_faults: usize,
    pub fault_mode: FaultMode,
    pub n_paths: usize,
    pub quantized: bool,
    pub m_measurements: usize,
    pub snr_db: f64,
    pub aoa_offset_deg: f64,
    pub gain_error_var: f64,
    pub aoa_error_var: f64,
    pub sweep_param: SweepParam,
    pub sweep_value: f64,
    pub trials: u64,
    pub p_success: f64,
    pub std_error: f64,
    pub seed: u64,
    pub tool_version: String,
}

impl ResultRecord {
    fn csv_fields(&self) -> [String; 19] {
        [
            self.experiment_id.clone(),
            self.technique.as_str().to_string(),
            self.n_elements.to_string(),
            self.n_faults.to_string(),
            self.fault_mode.as_str().to_string(),
            self.n_paths.to_string(),
            self.quantized.to_string(),
            self.m_measurements.to_string(),
            self.snr_db.to_string(),
            self.aoa_offset_deg.to_string(),
            self.gain_error_var.to_string(),
            self.aoa_error_var.to_string(),
            self.sweep_param.key().to_string(),
            self.sweep_value.to_string(),
            self.trials.to_string(),
            format!("{:.6}", self.p_success),
            format!("{:.6}", self.std_error),
            self.seed.to_string(),
            self.tool_version.clone(),
        ]
    }

    /// Single-point spec that reproduces this row.
    ///
    /// Error variances are taken as recorded, so rows produced under
    /// `snr_matched` come back as explicit variances with identical values.
    pub fn to_spec(&self) -> ExperimentSpec {
        ExperimentSpec {
            experiment_id: self.experiment_id.clone(),
            n_elements: self.n_elements,
            n_faults: self.n_faults,
            fault_mode: self.fault_mode,
            n_paths: self.n_paths,
            quantized: self.quantized,
            technique: match self.technique {
                Technique::Proposed => TechniqueSelection::Proposed,
                Technique::Difference => TechniqueSelection::Difference,
            },
            sweep: Sweep {
                param: self.sweep_param,
                values: vec![self.sweep_value],
            },
            fixed: OperatingPoint {
                m_measurements: self.m_measurements,
                snr_db: self.snr_db,
                aoa_offset_deg: self.aoa_offset_deg,
                gain_error_var: self.gain_error_var,
                aoa_error_var: self.aoa_error_var,
            },
            csi_error: CsiErrorModel::Explicit,
            trials: self.trials,
            master_seed: self.seed,
        }
    }
}

pub fn records(result: &SweepResult, spec: &ExperimentSpec) -> Vec<ResultRecord> {
    result
        .rows
        .iter()
        .map(|row| ResultRecord {
            experiment_id: spec.experiment_id.clone(),
            technique: row.technique,
            n_elements: spec.n_elements,
            n_faults: spec.n_faults,
            fault_mode: spec.fault_mode,
            n_paths: spec.n_paths,
            quantized: spec.quantized,
            m_measurements: row.point.m_measurements,
            snr_db: row.point.snr_db,
            aoa_offset_deg: row.point.aoa_offset_deg,
            gain_error_var: row.point.gain_error_var,
            aoa_error_var: row.point.aoa_error_var,
            sweep_param: spec.sweep.param,
            sweep_value: row.sweep_value,
            trials: row.trials,
            p_success: row.p_success,
            std_error: row.std_error,
            seed: row.seed,
            tool_version: TOOL_VERSION.to_string(),
        })
        .collect()
}

pub fn write_records<W: io::Write>(
    records: &[ResultRecord],
    format: OutputFormat,
    mut out: W,
) -> io::Result<()> {
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(CSV_COLUMNS)?;
            for r in records {
                w.write_record(r.csv_fields())?;
            }
            w.flush()
        }
        OutputFormat::Json => {
            serde_json::to_writer_pretty(&mut out, records)?;
            writeln!(out)
        }
    }
}

/// Write `result` for `spec` to `path`.
pub fn emit_results(
    result: &SweepResult,
    spec: &ExperimentSpec,
    format: OutputFormat,
    path: &Path,
) -> io::Result<()> {
    let file = fs::File::create(path)?;
    write_records(&records(result, spec), format, io::BufWriter::new(file))
}

#[derive(Debug, Parser)]
#[command(
    name = "arraydiag",
    version,
    about = "Antenna-array fault diagnosis simulator"
)]
pub struct CliConfig {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the sweep described by a configuration file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        format: OutputFormat,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run one of the built-in figure presets.
    Preset {
        #[arg(long)]
        name: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value_t)]
        format: OutputFormat,
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Check a configuration file without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Simulation(#[from] SimulationError),
}

impl CliError {
    /// 1 for bad input, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Simulation(SimulationError::InvalidSpec(_)) => 1,
            CliError::Io { .. } | CliError::Simulation(_) => 2,
        }
    }
}

fn read_config(path: &Path) -> Result<ExperimentSpec, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(parse_config(&text)?)
}

fn run_all(
    specs: &[ExperimentSpec],
    workers: Option<usize>,
    format: OutputFormat,
    out: &Path,
) -> Result<usize, CliError> {
    let mut all = Vec::new();
    for spec in specs {
        spec.validate().map_err(ConfigError::from)?;
    }
    for spec in specs {
        let result = run_sweep(spec, workers)?;
        all.extend(records(&result, spec));
    }
    let io_err = |source| CliError::Io {
        path: out.to_path_buf(),
        source,
    };
    let file = fs::File::create(out).map_err(io_err)?;
    write_records(&all, format, io::BufWriter::new(file)).map_err(io_err)?;
    Ok(all.len())
}

/// Execute a parsed command line; returns a one-line summary.
pub fn execute(cli: CliConfig) -> Result<String, CliError> {
    match cli.command {
        Command::Run {
            config,
            out,
            format,
            seed,
            trials,
            workers,
        } => {
            let mut spec = read_config(&config)?;
            spec.master_seed = seed;
            if let Some(t) = trials {
                spec.trials = t;
            }
            let n = run_all(std::slice::from_ref(&spec), workers, format, &out)?;
            Ok(format!("wrote {n} rows to {}", out.display()))
        }
        Command::Preset {
            name,
            out,
            seed,
            format,
            trials,
            workers,
        } => {
            let name: PresetName = name.parse().map_err(ConfigError::from)?;
            let mut p = preset(name).with_seed(seed);
            if let Some(t) = trials {
                p = p.with_trials(t);
            }
            let n = run_all(&p.specs, workers, format, &out)?;
            Ok(format!("wrote {n} rows to {}", out.display()))
        }
        Command::Validate { config } => {
            let spec = read_config(&config)?;
            Ok(format!(
                "{}: ok ({} sweep over {} values, {} trials)",
                spec.experiment_id,
                spec.sweep.param.key(),
                spec.sweep.values.len(),
                spec.trials
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::SweepRow;

    #[test]
    fn minimal_document_gets_defaults() {
        let spec =
            parse_config("n_elements = 128\nn_faults = 6\nsnr_db = [0, 10, 20, 30]\n").unwrap();
        assert_eq!(spec.sweep.param, SweepParam::SnrDb);
        assert_eq!(spec.sweep.values, vec![0.0, 10.0, 20.0, 30.0]);
        assert_eq!(spec.trials, DEFAULT_TRIALS);
        assert_eq!(spec.n_paths, 1);
        assert_eq!(spec.fixed.m_measurements, 35);
        assert_eq!(spec.experiment_id, "custom");
        assert_eq!(spec.technique, TechniqueSelection::Both);
    }

    #[test]
    fn errors_name_the_field() {
        let err = parse_config("n_elements = 128\nn_faults = 200\nsnr_db = [0]\n").unwrap_err();
        assert_eq!(err.field(), Some("n_faults"));
        let err =
            parse_config("n_elements = 128\nn_faults = 2\nsnr_db = [0]\nm_measurements = [5]\n")
                .unwrap_err();
        assert!(matches!(err, ConfigError::DuplicateSweep(_)));
        let err =
            parse_config("n_elements = 128\nn_faults = 2\nsnr_db = [0]\ncolour = 1\n").unwrap_err();
        assert_eq!(err.field(), Some("colour"));
        let err = parse_config("n_faults = 2\nsnr_db = [0]\n").unwrap_err();
        assert_eq!(err.field(), Some("n_elements"));
        let err = parse_config("n_elements = 128\nn_faults = 2\n").unwrap_err();
        assert!(matches!(err, ConfigError::NoSweep));
        let err = parse_config("n_elements = 128\nn_faults = 2\nn_paths = [1, 2]\n").unwrap_err();
        assert_eq!(err.field(), Some("n_paths"));
        let err =
            parse_config("n_elements = 128\nn_faults = 2\nsnr_db = [0]\nfault_mode = \"odd\"\n")
                .unwrap_err();
        assert_eq!(err.field(), Some("fault_mode"));
        let err = parse_config("n_elements = 128\nn_faults = 2\nsnr_db = [0]\ncsi_error = \"snr_matched\"\ngain_error_var = 0.1\n")
            .unwrap_err();
        assert_eq!(err.field(), Some("gain_error_var"));
        let err = parse_config("n_elements = 12.5\nn_faults = 2\nsnr_db = [0]\n").unwrap_err();
        assert_eq!(err.field(), Some("n_elements"));
        assert!(matches!(
            parse_config("n_elements = "),
            Err(ConfigError::Syntax(_))
        ));
    }

    #[test]
    fn presets_round_trip_through_documents() {
        for name in PresetName::ALL {
            for spec in preset(name).specs {
                let text = spec_to_config(&spec);
                assert_eq!(parse_config(&text).unwrap(), spec, "{text}");
            }
        }
    }

    fn one_row() -> (SweepResult, ExperimentSpec) {
        let spec = preset(PresetName::Fig3).specs[0].clone();
        let row = SweepRow {
            sweep_value: 20.0,
            point: spec.point(20.0),
            technique: Technique::Proposed,
            successes: 123,
            trials: 500,
            p_success: 0.246,
            std_error: crate::simulator::std_error(0.246, 500),
            seed: 0,
        };
        (SweepResult { rows: vec![row] }, spec)
    }

    #[test]
    fn csv_layout() {
        let (result, spec) = one_row();
        let mut buf = Vec::new();
        write_records(
            &records(&SweepResult::default(), &spec),
            OutputFormat::Csv,
            &mut buf,
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, CSV_COLUMNS.join(",") + "\n");

        let mut buf = Vec::new();
        write_records(&records(&result, &spec), OutputFormat::Csv, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields.len(), 19);
        assert_eq!(fields[0], "fig3_complete");
        assert_eq!(fields[12], "snr_db");
        assert_eq!(fields[15], "0.246000");
        assert_eq!(fields[10], "0.01");
    }

    #[test]
    fn json_round_trip() {
        let (result, spec) = one_row();
        let recs = records(&result, &spec);
        let mut buf = Vec::new();
        write_records(&recs, OutputFormat::Json, &mut buf).unwrap();
        let back: Vec<ResultRecord> = serde_json::from_slice(&buf).unwrap();
        assert_eq!(back, recs);
        let value: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        let keys: Vec<&String> = value[0].as_object().unwrap().keys().collect();
        let mut expected: Vec<&str> = CSV_COLUMNS.to_vec();
        expected.sort_unstable();
        let mut keys: Vec<&str> = keys.iter().map(|s| s.as_str()).collect();
        keys.sort_unstable();
        assert_eq!(keys, expected);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config(ConfigError::NoSweep).exit_code(), 1);
        let io = CliError::Io {
            path: "x".into(),
            source: io::Error::other("boom"),
        };
        assert_eq!(io.exit_code(), 2);
    }
}
