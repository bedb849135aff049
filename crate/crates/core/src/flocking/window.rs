use super::{FlockingError, SimTrace, Vec3};
use crate::nn::ObservationWindow;

/// Cut a trace into consecutive, non-overlapping position windows of
/// `window_seconds` sampled at `sample_rate` Hz (nearest snapshot).
///
/// Each window is re-centered on the flock centroid of its first sample and
/// labeled with the trace's leader. A trace shorter than one window yields
/// no windows.
pub fn extract_windows(
    trace: &SimTrace,
    window_seconds: f64,
    sample_rate: f64,
) -> Result<Vec<ObservationWindow>, FlockingError> {
    let f_r = trace.config.control_rate;
    if !(sample_rate > 0.0 && sample_rate <= f_r) {
        return Err(FlockingError::Window(format!(
            "sample rate {sample_rate} Hz must lie in (0, {f_r}] Hz"
        )));
    }
    let channels = (window_seconds * sample_rate).round() as usize;
    if channels < 1 {
        return Err(FlockingError::Window(format!(
            "window of {window_seconds} s at {sample_rate} Hz holds no samples"
        )));
    }
    let span = (window_seconds * f_r).round() as usize;
    let stride = f_r / sample_rate;
    let n = trace.n_robots();
    let q = trace.steps();

    let mut out = Vec::new();
    let mut start = 0;
    while span > 0 && start + span <= q {
        let mut data = Vec::with_capacity(channels * n * 3);
        let first = &trace.states[start];
        let centroid = first.iter().map(|s| s.position).sum::<Vec3>() / n as f64;
        for c in 0..channels {
            let k = (start + (c as f64 * stride).round() as usize).min(q - 1);
            for s in &trace.states[k] {
                let p = s.position - centroid;
                data.extend_from_slice(&[p.x, p.y, p.z]);
            }
        }
        out.push(ObservationWindow::new(channels, n, data, trace.leader_index));
        start += span;
    }
    Ok(out)
}
