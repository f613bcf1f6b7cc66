use super::{IngestError, IrradianceDataset};

/// Fills missing samples per sensor.
///
/// Interior runs no longer than `max_gap_secs` are linearly interpolated between
/// the flanking samples; runs touching either end of the series take the
/// nearest present value. A longer run, or a sensor with no data at all, is an
/// [`IngestError::UnrecoverableGap`].
pub fn fill_gaps(dataset: &IrradianceDataset, max_gap_secs: u64) -> Result<IrradianceDataset, IngestError> {
    let n = dataset.n_sensors();
    let len = dataset.len();
    let step = u64::from(dataset.step_secs);
    let mut out = dataset.values().as_slice().to_vec();

    for s in 0..n {
        let col = dataset.column(s);
        let mut t = 0;
        while t < len {
            if !col[t].is_nan() {
                t += 1;
                continue;
            }
            let first = t;
            while t < len && col[t].is_nan() {
                t += 1;
            }
            let last = t - 1;
            let run = (last - first + 1) as u64;
            if run * step > max_gap_secs {
                return Err(IngestError::UnrecoverableGap {
                    sensor: dataset.sensors[s].clone(),
                    first,
                    last,
                    secs: run * step,
                    max_secs: max_gap_secs,
                });
            }
            let before = first.checked_sub(1).map(|i| col[i]);
            let after = (t < len).then(|| col[t]);
            for i in first..=last {
                out[i * n + s] = match (before, after) {
                    (Some(a), Some(b)) => {
                        let frac = (i - first + 1) as f64 / (run + 1) as f64;
                        a + (b - a) * frac
                    }
                    (Some(a), None) => a,
                    (None, Some(b)) => b,
                    (None, None) => unreachable!("a run covering the whole series exceeds any finite gap"),
                };
            }
        }
    }
    IrradianceDataset::new(dataset.start_time, dataset.step_secs, dataset.sensors.clone(), out)
}
