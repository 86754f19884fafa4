//! Greedy per-parameter architecture selection.
//!
//! Each parameter is swept on its own with the other three held at their
//! defaults; the final architecture combines the per-sweep winners.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::network::ArchitectureConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Parameter {
    Convolutions,
    HiddenLayers,
    Units,
    Dropout,
}

impl Parameter {
    pub const ALL: [Parameter; 4] = [
        Parameter::Convolutions,
        Parameter::HiddenLayers,
        Parameter::Units,
        Parameter::Dropout,
    ];

    /// Config key, shared with run-config files and checkpoints.
    pub fn key(self) -> &'static str {
        match self {
            Parameter::Convolutions => "num_convolutions",
            Parameter::HiddenLayers => "num_hidden_layers",
            Parameter::Units => "units_per_hidden_layer",
            Parameter::Dropout => "dropout_rate",
        }
    }

    pub fn get(self, cfg: &ArchitectureConfig) -> f64 {
        match self {
            Parameter::Convolutions => cfg.num_convolutions as f64,
            Parameter::HiddenLayers => cfg.num_hidden_layers as f64,
            Parameter::Units => cfg.units_per_hidden_layer as f64,
            Parameter::Dropout => cfg.dropout_rate,
        }
    }

    pub fn apply(self, cfg: &mut ArchitectureConfig, value: f64) {
        match self {
            Parameter::Convolutions => cfg.num_convolutions = value as usize,
            Parameter::HiddenLayers => cfg.num_hidden_layers = value as usize,
            Parameter::Units => cfg.units_per_hidden_layer = value as usize,
            Parameter::Dropout => cfg.dropout_rate = value,
        }
    }

    fn is_integral(self) -> bool {
        self != Parameter::Dropout
    }
}

impl fmt::Display for Parameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Parameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Parameter::ALL
            .into_iter()
            .find(|p| p.key() == s)
            .ok_or_else(|| Error::Config(format!("unknown selection parameter {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Axis {
    pub parameter: Parameter,
    pub candidates: Vec<f64>,
    pub default: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionGrid {
    pub axes: Vec<Axis>,
}

impl Default for SelectionGrid {
    fn default() -> Self {
        let axis = |parameter, candidates: &[f64], default| Axis {
            parameter,
            candidates: candidates.to_vec(),
            default,
        };
        SelectionGrid {
            axes: vec![
                axis(Parameter::Convolutions, &[1.0, 2.0, 3.0], 1.0),
                axis(Parameter::HiddenLayers, &[1.0, 2.0, 3.0], 1.0),
                axis(Parameter::Units, &[100.0, 200.0, 300.0, 400.0], 100.0),
                axis(Parameter::Dropout, &[0.0, 0.1, 0.5, 0.7], 0.5),
            ],
        }
    }
}

impl SelectionGrid {
    pub fn validate(&self) -> Result<()> {
        let op = "selection grid";
        for (i, axis) in self.axes.iter().enumerate() {
            if self.axes[..i].iter().any(|a| a.parameter == axis.parameter) {
                return Err(Error::invalid(
                    op,
                    format!("{} listed twice", axis.parameter),
                ));
            }
            if axis.candidates.is_empty() {
                return Err(Error::invalid(
                    op,
                    format!("{} has no candidates", axis.parameter),
                ));
            }
            if !axis.candidates.contains(&axis.default) {
                return Err(Error::invalid(
                    op,
                    format!(
                        "default {} of {} is not a candidate",
                        axis.default, axis.parameter
                    ),
                ));
            }
            for (j, &v) in axis.candidates.iter().enumerate() {
                if axis.candidates[..j].contains(&v) {
                    return Err(Error::invalid(
                        op,
                        format!("{} repeats {v}", axis.parameter),
                    ));
                }
                let integral_ok = !axis.parameter.is_integral() || (v >= 1.0 && v.fract() == 0.0);
                if !v.is_finite() || !integral_ok {
                    return Err(Error::invalid(op, format!("{} value {v}", axis.parameter)));
                }
            }
        }
        Ok(())
    }

    /// Number of evaluator calls a selection makes.
    pub fn total_runs(&self) -> usize {
        self.axes.iter().map(|a| a.candidates.len()).sum()
    }

    /// `base` with every swept parameter at its default.
    pub fn default_config(&self, base: &ArchitectureConfig) -> ArchitectureConfig {
        let mut cfg = base.clone();
        for a in &self.axes {
            a.parameter.apply(&mut cfg, a.default);
        }
        cfg
    }
}

/// One point of a sweep, handed to the evaluator.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub parameter: Parameter,
    pub value: f64,
    pub config: ArchitectureConfig,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Trial {
    pub parameter: Parameter,
    pub value: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionReport {
    pub trials: Vec<Trial>,
    pub winners: Vec<(Parameter, f64)>,
    /// `None` when the selection was aborted.
    pub final_config: Option<ArchitectureConfig>,
}

impl SelectionReport {
    pub fn total_runs(&self) -> usize {
        self.trials.len()
    }

    pub fn winner(&self, parameter: Parameter) -> Option<f64> {
        self.winners
            .iter()
            .find(|(p, _)| *p == parameter)
            .map(|&(_, v)| v)
    }

    /// `parameter,value,val_acc` rows, then a blank line and the final
    /// configuration as `key=value` lines (omitted for partial reports).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("parameter,value,val_acc\n");
        for t in &self.trials {
            let _ = writeln!(out, "{},{},{}", t.parameter, t.value, t.val_acc);
        }
        if let Some(cfg) = &self.final_config {
            out.push_str("\n# final configuration\n");
            out.push_str(&architecture_lines(cfg));
        }
        out
    }
}

/// The four selected parameters plus the input size as `key=value` lines.
pub fn architecture_lines(cfg: &ArchitectureConfig) -> String {
    let mut out = String::new();
    for p in Parameter::ALL {
        let v = p.get(cfg);
        let _ = writeln!(out, "{}={}", p.key(), v);
    }
    let _ = writeln!(out, "input_height={}", cfg.input_height);
    let _ = writeln!(out, "input_width={}", cfg.input_width);
    out
}

#[derive(Debug, thiserror::Error)]
#[error("selection aborted at {parameter}={value}: {source}")]
pub struct SelectionFailure {
    pub parameter: Parameter,
    pub value: f64,
    pub partial: SelectionReport,
    #[source]
    pub source: Error,
}

/// Highest accuracy wins; ties go to the value closest to the default, then
/// to the smaller value. Independent of candidate order.
fn pick_winner(default: f64, scores: &[(f64, f64)]) -> f64 {
    let mut best = scores[0];
    for &(value, acc) in &scores[1..] {
        let better = acc > best.1
            || acc == best.1
                && ((value - default).abs() < (best.0 - default).abs()
                    || (value - default).abs() == (best.0 - default).abs() && value < best.0);
        if better {
            best = (value, acc);
        }
    }
    best.0
}

/// Runs every sweep in grid order. `evaluator` returns the validation
/// accuracy of a candidate and must be deterministic.
pub fn select<F>(
    grid: &SelectionGrid,
    base: &ArchitectureConfig,
    mut evaluator: F,
) -> std::result::Result<SelectionReport, Box<SelectionFailure>>
where
    F: FnMut(&Candidate) -> Result<f64>,
{
    let defaults = grid.default_config(base);
    let mut report = SelectionReport {
        trials: Vec::with_capacity(grid.total_runs()),
        winners: Vec::with_capacity(grid.axes.len()),
        final_config: None,
    };
    if let Err(source) = grid.validate() {
        let first = &Parameter::ALL[0];
        return Err(Box::new(SelectionFailure {
            parameter: *first,
            value: f64::NAN,
            partial: report,
            source,
        }));
    }
    for axis in &grid.axes {
        let mut scores = Vec::with_capacity(axis.candidates.len());
        for &value in &axis.candidates {
            let mut config = defaults.clone();
            axis.parameter.apply(&mut config, value);
            let candidate = Candidate {
                parameter: axis.parameter,
                value,
                config,
            };
            let acc = evaluator(&candidate).and_then(|acc| {
                if (0.0..=1.0).contains(&acc) {
                    Ok(acc)
                } else {
                    Err(Error::invalid(
                        "select",
                        format!("accuracy {acc} outside [0, 1]"),
                    ))
                }
            });
            match acc {
                Ok(acc) => {
                    report.trials.push(Trial {
                        parameter: axis.parameter,
                        value,
                        val_acc: acc,
                    });
                    scores.push((value, acc));
                }
                Err(source) => {
                    return Err(Box::new(SelectionFailure {
                        parameter: axis.parameter,
                        value,
                        partial: report,
                        source,
                    }))
                }
            }
        }
        report
            .winners
            .push((axis.parameter, pick_winner(axis.default, &scores)));
    }
    let mut cfg = defaults;
    for &(p, v) in &report.winners {
        p.apply(&mut cfg, v);
    }
    report.final_config = Some(cfg);
    Ok(report)
}

/// Re-derives every coordinate winner by brute force, independently of
/// [`select`], and reports whether both agree.
pub fn exhaustive_coordinate_check<F>(
    grid: &SelectionGrid,
    base: &ArchitectureConfig,
    mut evaluator: F,
) -> bool
where
    F: FnMut(&Candidate) -> Result<f64>,
{
    let Ok(report) = select(grid, base, &mut evaluator) else {
        return false;
    };
    let defaults = grid.default_config(base);
    let mut expected = defaults.clone();
    for axis in &grid.axes {
        let mut scored = Vec::new();
        for &value in &axis.candidates {
            let mut config = defaults.clone();
            axis.parameter.apply(&mut config, value);
            let Ok(acc) = evaluator(&Candidate {
                parameter: axis.parameter,
                value,
                config,
            }) else {
                return false;
            };
            scored.push((value, acc));
        }
        // Sort ascending by (accuracy, closeness to default, smallness); the
        // last element is the winner.
        scored.sort_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then(
                    (b.0 - axis.default)
                        .abs()
                        .total_cmp(&(a.0 - axis.default).abs()),
                )
                .then(b.0.total_cmp(&a.0))
        });
        let winner = scored.last().unwrap().0;
        if report.winner(axis.parameter) != Some(winner) {
            return false;
        }
        axis.parameter.apply(&mut expected, winner);
    }
    report.final_config.as_ref() == Some(&expected)
}

/// Replays recorded accuracies. Rows are `parameter,value,val_acc`; either
/// key may be `*`. Exact rows win over wildcard rows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StubEvaluator {
    rows: Vec<(Option<Parameter>, Option<f64>, f64)>,
}

impl StubEvaluator {
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("parameter,") {
                continue;
            }
            // A report's trailing configuration block is not replayed.
            if line.contains('=') {
                break;
            }
            let bad = || Error::Config(format!("stub line {}: {line:?}", i + 1));
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let [p, v, acc] = fields[..] else {
                return Err(bad());
            };
            let parameter = match p {
                "*" => None,
                key => Some(key.parse()?),
            };
            let value = match v {
                "*" => None,
                v => Some(v.parse::<f64>().map_err(|_| bad())?),
            };
            let acc = acc.parse::<f64>().map_err(|_| bad())?;
            rows.push((parameter, value, acc));
        }
        Ok(StubEvaluator { rows })
    }

    pub fn evaluate(&self, c: &Candidate) -> Result<f64> {
        let rank = |(p, v, _): &&(Option<Parameter>, Option<f64>, f64)| {
            u8::from(p.is_none()) + u8::from(v.is_none())
        };
        self.rows
            .iter()
            .filter(|(p, v, _)| {
                p.is_none_or(|p| p == c.parameter) && v.is_none_or(|v| v == c.value)
            })
            .min_by_key(rank)
            .map(|&(_, _, acc)| acc)
            .ok_or_else(|| {
                Error::Config(format!(
                    "stub has no accuracy for {}={}",
                    c.parameter, c.value
                ))
            })
    }
}
