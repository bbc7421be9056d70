use std::io::{self, Write};

use super::Trajectory;

/// Significant digits written for every floating-point CSV field.
pub const TRAJECTORY_PRECISION: usize = 17;

fn field(w: &mut impl Write, v: f64) -> io::Result<()> {
    write!(w, "{:.*e}", TRAJECTORY_PRECISION - 1, v)
}

/// Writes one row per recorded state. The `V` column is emitted only when
/// Lyapunov values (one per record) are supplied.
pub fn write_trajectory_csv<W: Write>(
    w: &mut W,
    traj: &Trajectory,
    lyapunov: Option<&[f64]>,
) -> io::Result<()> {
    let Some(first) = traj.records.first() else {
        return Ok(());
    };
    if let Some(v) = lyapunov {
        if v.len() != traj.records.len() {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!(
                    "{} Lyapunov values for {} records",
                    v.len(),
                    traj.records.len()
                ),
            ));
        }
    }
    let s = &first.state;
    let mut header = vec!["t".to_string()];
    header.extend((1..=s.x.len()).map(|i| format!("x_{i}")));
    header.extend((1..=s.lambda.len()).map(|i| format!("lambda_{i}")));
    header.extend((1..=s.mu.len()).map(|i| format!("mu_{i}")));
    header.extend(
        [
            "objective",
            "res_stationarity",
            "res_consensus",
            "res_complementarity",
            "res_feasibility",
        ]
        .map(String::from),
    );
    if lyapunov.is_some() {
        header.push("V".into());
    }
    writeln!(w, "{}", header.join(","))?;

    for (row, rec) in traj.records.iter().enumerate() {
        let st = &rec.state;
        let r = &rec.residual;
        let mut values = vec![st.t];
        values.extend(&st.x);
        values.extend(&st.lambda);
        values.extend(&st.mu);
        values.extend([
            rec.objective,
            r.stationarity,
            r.consensus,
            r.complementarity,
            r.feasibility,
        ]);
        if let Some(v) = lyapunov {
            values.push(v[row]);
        }
        for (i, v) in values.into_iter().enumerate() {
            if i > 0 {
                w.write_all(b",")?;
            }
            field(w, v)?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}
