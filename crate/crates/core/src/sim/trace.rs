use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};

use super::run::StepPlan;
use super::SimError;
use crate::control::ControlMessage;
use crate::dispatch::DispatchSignal;
use crate::time::format_timestamp;

/// Steps between flushes of trace files, so long runs can be inspected while
/// they execute.
const FLUSH_EVERY: usize = 3600;

/// Everything known about one completed simulation step.
#[derive(Debug, Clone, Copy)]
pub struct StepRecord<'a> {
    pub step: usize,
    pub timestamp: DateTime<Utc>,
    pub dispatch: &'a DispatchSignal,
    pub plan: &'a StepPlan,
    /// Realized output per inverter.
    pub outputs: &'a [f64],
    /// True potential per inverter.
    pub capabilities: &'a [f64],
}

impl StepRecord<'_> {
    pub fn output_total(&self) -> f64 {
        self.outputs.iter().sum()
    }

    pub fn mpp_total(&self) -> f64 {
        self.capabilities.iter().sum()
    }
}

pub trait TraceSink {
    fn record(&mut self, rec: &StepRecord<'_>) -> Result<(), SimError>;

    fn finish(&mut self) -> Result<(), SimError> {
        Ok(())
    }
}

/// Discards everything.
#[derive(Debug, Default)]
pub struct NullSink;

impl TraceSink for NullSink {
    fn record(&mut self, _rec: &StepRecord<'_>) -> Result<(), SimError> {
        Ok(())
    }
}

/// Keeps per-step, per-inverter values in memory.
#[derive(Debug, Default, Clone)]
pub struct MemorySink {
    pub keep_messages: bool,
    pub impp_est: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<f64>>,
    pub planned: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
    pub capabilities: Vec<Vec<f64>>,
    pub p_desired: Vec<f64>,
    pub plant_deficit: Vec<f64>,
    pub messages: Vec<Vec<ControlMessage>>,
}

impl MemorySink {
    pub fn with_messages() -> Self {
        Self { keep_messages: true, ..Self::default() }
    }
}

impl TraceSink for MemorySink {
    fn record(&mut self, rec: &StepRecord<'_>) -> Result<(), SimError> {
        self.impp_est.push(rec.plan.impp_est.clone());
        self.alpha.push(rec.plan.alpha.clone());
        self.planned.push(rec.plan.planned.clone());
        self.outputs.push(rec.outputs.to_vec());
        self.capabilities.push(rec.capabilities.to_vec());
        self.p_desired.push(rec.dispatch.p_desired);
        self.plant_deficit.push(rec.plan.plant_deficit);
        if self.keep_messages {
            self.messages.push(rec.plan.messages.clone());
        }
        Ok(())
    }
}

type CsvOut = csv::Writer<BufWriter<File>>;

fn create(path: &Path) -> Result<CsvOut, SimError> {
    let file = File::create(path).map_err(SimError::io(path))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> SimError + '_ {
    move |e| SimError::Io { path: path.to_path_buf(), source: std::io::Error::other(e) }
}

/// Streams the setpoint, message and plant traces to CSV files in `dir`.
pub struct FileSink {
    setpoints: (PathBuf, CsvOut),
    messages: Option<(PathBuf, CsvOut)>,
    plant: (PathBuf, CsvOut),
    written: usize,
}

impl FileSink {
    pub const PLANT_FILE: &'static str = "plant.csv";
    pub const MESSAGES_FILE: &'static str = "messages.csv";

    pub fn setpoints_file(controller: &str) -> String {
        format!("setpoints_{controller}.csv")
    }

    pub fn create(dir: &Path, controller: &str, write_messages: bool) -> Result<Self, SimError> {
        let sp_path = dir.join(Self::setpoints_file(controller));
        let mut setpoints = create(&sp_path)?;
        setpoints
            .write_record(["timestamp", "inverter_id", "impp_est_kw", "alpha", "p_final_kw"])
            .map_err(csv_err(&sp_path))?;
        let messages = if write_messages {
            let path = dir.join(Self::MESSAGES_FILE);
            let mut w = create(&path)?;
            w.write_record(["iteration", "kind", "sender", "receiver", "amount_kw"]).map_err(csv_err(&path))?;
            Some((path, w))
        } else {
            None
        };
        let plant_path = dir.join(Self::PLANT_FILE);
        let mut plant = create(&plant_path)?;
        plant
            .write_record([
                "timestamp",
                "p_desired_kw",
                "commitment_kw",
                "regd",
                "output_kw",
                "planned_kw",
                "mpp_kw",
                "support_kw",
            ])
            .map_err(csv_err(&plant_path))?;
        Ok(Self { setpoints: (sp_path, setpoints), messages, plant: (plant_path, plant), written: 0 })
    }

    fn flush_all(&mut self) -> Result<(), SimError> {
        let (p, w) = &mut self.setpoints;
        w.flush().map_err(SimError::io(p.clone()))?;
        if let Some((p, w)) = &mut self.messages {
            w.flush().map_err(SimError::io(p.clone()))?;
        }
        let (p, w) = &mut self.plant;
        w.flush().map_err(SimError::io(p.clone()))
    }
}

impl TraceSink for FileSink {
    fn record(&mut self, rec: &StepRecord<'_>) -> Result<(), SimError> {
        let ts = format_timestamp(&rec.timestamp);
        let (path, w) = &mut self.setpoints;
        for i in 0..rec.plan.impp_est.len() {
            w.write_record([
                ts.as_str(),
                &i.to_string(),
                &rec.plan.impp_est[i].to_string(),
                &rec.plan.alpha[i].to_string(),
                &rec.plan.planned[i].to_string(),
            ])
            .map_err(csv_err(path))?;
        }
        if let Some((path, w)) = &mut self.messages {
            for m in &rec.plan.messages {
                w.write_record([
                    m.iteration.to_string(),
                    m.kind.to_string(),
                    m.sender.to_string(),
                    m.receiver.to_string(),
                    m.amount.to_string(),
                ])
                .map_err(csv_err(path))?;
            }
        }
        let d = rec.dispatch;
        let output = rec.output_total();
        let (path, w) = &mut self.plant;
        w.write_record([
            ts,
            d.p_desired.to_string(),
            d.commitment_kw.to_string(),
            d.regd_value.to_string(),
            output.to_string(),
            rec.plan.planned_total().to_string(),
            rec.mpp_total().to_string(),
            (d.p_desired - output).to_string(),
        ])
        .map_err(csv_err(path))?;
        self.written += 1;
        if self.written % FLUSH_EVERY == 0 {
            self.flush_all()?;
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<(), SimError> {
        self.flush_all()
    }
}
