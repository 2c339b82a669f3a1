//! CSV output with a single header line, plus optional gnuplot scripts.

use std::fmt::Write as _;

use super::calibrate::ShoreCalibration;
use super::fd::FdCurve;
use super::step::StepResult;
use super::sweep::BodeResult;

fn table(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

/// `frequency_hz,gain_db,phase_deg,clipped`
pub fn bode_csv(b: &BodeResult) -> String {
    table(
        &["frequency_hz", "gain_db", "phase_deg", "clipped"],
        b.points.iter().map(|p| {
            vec![
                format!("{:.6}", p.frequency_hz),
                format!("{:.6}", p.gain_db),
                format!("{:.6}", p.phase_deg),
                (p.clipped as u8).to_string(),
            ]
        }),
    )
}

/// `t_s,reference_mm,height_mm`
pub fn step_csv(s: &StepResult) -> String {
    table(
        &["t_s", "reference_mm", "height_mm"],
        s.trace.iter().map(|p| {
            vec![
                format!("{:.5}", p.t_s),
                format!("{:.6}", p.reference_mm),
                format!("{:.6}", p.height_mm),
            ]
        }),
    )
}

/// `force_n,displacement_mm,epsilon_um,yielding,closed_form_force_n`
pub fn fd_csv(c: &FdCurve, params: &crate::plant::PlantParams) -> String {
    table(
        &["force_n", "displacement_mm", "epsilon_um", "yielding", "closed_form_force_n"],
        c.points.iter().map(|p| {
            let oracle = if p.yielding {
                format!("{:.6}", super::fd::closed_form_force(&c.law, params, p.displacement_mm))
            } else {
                String::new()
            };
            vec![
                format!("{:.6}", p.force_n),
                format!("{:.6}", p.displacement_mm),
                format!("{:.6}", p.epsilon_um),
                (p.yielding as u8).to_string(),
                oracle,
            ]
        }),
    )
}

/// `k,force_n,deformation_mm,shore00`
pub fn shore_csv(s: &ShoreCalibration) -> String {
    table(
        &["k", "force_n", "deformation_mm", "shore00"],
        s.samples.iter().map(|x| {
            vec![
                format!("{}", x.k),
                format!("{}", x.force_n),
                format!("{:.6}", x.deformation_mm),
                format!("{:.4}", x.shore),
            ]
        }),
    )
}

/// A gnuplot script plotting columns of `csv_path` (1-based column indices).
pub fn gnuplot_script(csv_path: &str, title: &str, x: (usize, &str), ys: &[(usize, &str)], logx: bool) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set key autotitle columnhead");
    let _ = writeln!(s, "set title '{title}'");
    let _ = writeln!(s, "set xlabel '{}'", x.1);
    if logx {
        let _ = writeln!(s, "set logscale x");
    }
    let plots: Vec<String> = ys
        .iter()
        .map(|(col, label)| format!("'{csv_path}' using {}:{} with linespoints title '{label}'", x.0, col))
        .collect();
    let _ = writeln!(s, "plot {}", plots.join(", \\\n     "));
    let _ = writeln!(s, "pause mouse close");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::sweep::{BodePoint, LoopKind};

    #[test]
    fn one_header_line() {
        let b = BodeResult {
            kind: LoopKind::Open,
            points: vec![BodePoint { frequency_hz: 1.0, gain_db: 0.0, phase_deg: -1.0, clipped: false }],
            w_bw_hz: None,
            w_pw_hz: None,
        };
        let csv = bode_csv(&b);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "frequency_hz,gain_db,phase_deg,clipped");
        assert_eq!(lines.len(), 2);
        assert!(gnuplot_script("b.csv", "bode", (1, "Hz"), &[(2, "dB")], true).contains("logscale"));
    }
}
