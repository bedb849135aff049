//! Trace CSV export: `t,robot_id,is_leader,px,py,pz,vx,vy,vz`, and the
//! window dataset dump read by the discriminator tooling.

use std::io::{Read, Write};

use super::{RobotState, SimTrace, Vec3};
use crate::nn::ObservationWindow;

pub const TRACE_HEADER: [&str; 9] = ["t", "robot_id", "is_leader", "px", "py", "pz", "vx", "vy", "vz"];

/// One row per robot per snapshot; time with six decimals, coordinates in
/// shortest round-trip form.
pub fn write_trace_csv<W: Write>(trace: &SimTrace, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for (k, snap) in trace.states.iter().enumerate() {
        let t = format!("{:.6}", trace.time(k));
        for (i, s) in snap.iter().enumerate() {
            w.write_record([
                t.clone(),
                i.to_string(),
                u8::from(i == trace.leader_index).to_string(),
                s.position.x.to_string(),
                s.position.y.to_string(),
                s.position.z.to_string(),
                s.velocity.x.to_string(),
                s.velocity.y.to_string(),
                s.velocity.z.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Snapshots and leader id read back from a trace CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRows {
    pub times: Vec<f64>,
    pub states: Vec<Vec<RobotState>>,
    pub leader_index: Option<usize>,
}

pub fn read_trace_csv<R: Read>(input: R) -> Result<TraceRows, String> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(|e| e.to_string())?.clone();
    if header.iter().ne(TRACE_HEADER.iter().copied()) {
        return Err(format!("unexpected trace header: {header:?}"));
    }
    let mut rows = TraceRows { times: Vec::new(), states: Vec::new(), leader_index: None };
    let mut last_t: Option<String> = None;
    for rec in r.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let num = |i: usize| -> Result<f64, String> {
            rec[i].parse::<f64>().map_err(|e| format!("column {}: {e}", TRACE_HEADER[i]))
        };
        if last_t.as_deref() != Some(&rec[0]) {
            rows.times.push(num(0)?);
            rows.states.push(Vec::new());
            last_t = Some(rec[0].to_string());
        }
        let id: usize = rec[1].parse().map_err(|e| format!("robot_id: {e}"))?;
        if &rec[2] == "1" {
            rows.leader_index = Some(id);
        }
        let state = RobotState {
            position: Vec3::new(num(3)?, num(4)?, num(5)?),
            velocity: Vec3::new(num(6)?, num(7)?, num(8)?),
        };
        rows.states.last_mut().expect("pushed above").push(state);
    }
    Ok(rows)
}

const WINDOW_SHAPE_COLUMNS: [&str; 4] = ["label", "n_robots", "axes", "channels"];

/// One row per window: label, the shape `(n_robots, 3, channels)`, then the
/// positions in `[channel][robot][axis]` order as columns `v0, v1, ...`.
/// All windows must share a shape.
pub fn write_windows_csv<W: Write>(windows: &[ObservationWindow], out: W) -> Result<(), String> {
    let mut w = csv::Writer::from_writer(out);
    let len = windows.first().map_or(0, |x| x.data.len());
    let mut header: Vec<String> = WINDOW_SHAPE_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..len).map(|k| format!("v{k}")));
    w.write_record(&header).map_err(|e| e.to_string())?;
    for (k, win) in windows.iter().enumerate() {
        if win.data.len() != len {
            return Err(format!("window {k} has {} values, expected {len}", win.data.len()));
        }
        let mut row = vec![win.label.to_string(), win.n_robots.to_string(), "3".into(), win.channels.to_string()];
        row.extend(win.data.iter().map(f64::to_string));
        w.write_record(&row).map_err(|e| e.to_string())?;
    }
    w.flush().map_err(|e| e.to_string())
}

pub fn read_windows_csv<R: Read>(input: R) -> Result<Vec<ObservationWindow>, String> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(|e| e.to_string())?.clone();
    if header.iter().take(4).ne(WINDOW_SHAPE_COLUMNS.iter().copied()) {
        return Err(format!("unexpected window header: {header:?}"));
    }
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let int = |i: usize| rec[i].parse::<usize>().map_err(|e| format!("row {k}, {}: {e}", WINDOW_SHAPE_COLUMNS[i]));
        let (label, n, axes, channels) = (int(0)?, int(1)?, int(2)?, int(3)?);
        if axes != 3 || rec.len() != 4 + n * 3 * channels || label >= n {
            return Err(format!("row {k}: shape ({n}, {axes}, {channels}) does not match its {} values", rec.len() - 4));
        }
        let data = rec
            .iter()
            .skip(4)
            .map(|v| v.parse::<f64>().map_err(|e| format!("row {k}: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(ObservationWindow::new(channels, n, data, label));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flocking::{simulate, Chromosome, SimConfig, TrajectoryKind, TrajectoryShape};

    #[test]
    fn header_and_roundtrip() {
        let traj = TrajectoryShape::default().build(TrajectoryKind::Sine);
        let cfg = SimConfig { duration: 3.0, seed: 4, ..SimConfig::default() };
        let trace = simulate(&Chromosome::hand_tuned(), &traj, &cfg).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&trace, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,robot_id,is_leader,px,py,pz,vx,vy,vz");
        assert!(lines.next().unwrap().starts_with("0.000000,0,"));
        assert_eq!(text.lines().count(), 1 + 6 * 9);
        assert!(text.contains("\n2.500000,"));

        let back = read_trace_csv(buf.as_slice()).unwrap();
        assert_eq!(back.states, trace.states);
        assert_eq!(back.leader_index, Some(trace.leader_index));
        assert_eq!(back.times[5], 2.5);
    }

    #[test]
    fn window_dataset_round_trip() {
        let ws = vec![
            ObservationWindow::new(2, 3, (0..18).map(|k| k as f64 * 0.1).collect(), 2),
            ObservationWindow::new(2, 3, (0..18).map(|k| -(k as f64)).collect(), 0),
        ];
        let mut buf = Vec::new();
        write_windows_csv(&ws, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("label,n_robots,axes,channels,v0,"));
        assert_eq!(read_windows_csv(&buf[..]).unwrap(), ws);
    }

    #[test]
    fn window_dataset_rejects_bad_shape() {
        let bad = "label,n_robots,axes,channels,v0\n0,2,3,1,0.5\n";
        assert!(read_windows_csv(bad.as_bytes()).is_err());
    }
}
