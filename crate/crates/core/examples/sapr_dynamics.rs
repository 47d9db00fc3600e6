//! Multiplier trajectories of the clamped constraint controller: a run of
//! violations followed by a run inside the bounds.
//!
//! `cargo run --release --example sapr_dynamics`

use segstitch::objective::{sapr_step, Constraint, QValues, SaprState};

fn main() -> anyhow::Result<()> {
    let mut state = SaprState {
        rec: Constraint::new(0.0, 1.0)?,
        density: Constraint::new(0.05, 0.1)?,
        area: Constraint::new(0.10, 0.15)?,
    };
    let violating = QValues { density: 0.4, area: 0.02, rec: 0.5 };
    let satisfied = QValues { density: 0.07, area: 0.12, rec: 0.5 };
    println!("step\tphase\tloss\tlambda_density\tlambda_area");
    for t in 0..400 {
        let (phase, q) = if t < 200 { ("violate", violating) } else { ("satisfy", satisfied) };
        let step = sapr_step(&q, &state, 1.0)?;
        state = step.state;
        if t % 25 == 0 || t == 199 || t == 399 {
            println!("{t}\t{phase}\t{:.4}\t{:.4}\t{:.4}", step.loss, state.density.lambda, state.area.lambda);
        }
    }
    Ok(())
}
