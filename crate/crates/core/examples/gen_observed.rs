//! Regenerates the shipped synthetic observed data sets in `data/`.
//!
//! `cargo run --example gen_observed`

use std::path::Path;

use abcsmc::model::{
    write_matrix_csv, CsvMatrix, MG1Queue, Model, Seir, Slcp, SEIR_TRUE_THETA, SLCP_TRUE_THETA,
};
use abcsmc::rng::substream;

const MG1_TRUE_THETA: [f64; 3] = [0.1, 4.0, 5.0];
const SEIR_HORIZON: usize = 60;

fn theta_note(theta: &[f64]) -> String {
    let parts: Vec<String> = theta.iter().map(|v| format!("{v}")).collect();
    format!("true theta = ({})", parts.join(", "))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");

    let seed = 20_240_501;
    let seir = Seir::new(SEIR_HORIZON);
    let y = seir.simulate(&SEIR_TRUE_THETA, &mut substream(seed, &[]))?;
    write_matrix_csv(
        &dir.join("seir_observed.csv"),
        &CsvMatrix {
            comments: vec![
                "synthetic SEIR reported cases".into(),
                format!("generator seed = {seed}"),
                theta_note(&SEIR_TRUE_THETA),
            ],
            header: vec!["t".into(), "y".into()],
            rows: y.iter().enumerate().map(|(t, v)| vec![t as f64, *v]).collect(),
        },
    )?;

    let seed = 20_240_502;
    let x = Slcp.simulate(&SLCP_TRUE_THETA, &mut substream(seed, &[]))?;
    write_matrix_csv(
        &dir.join("slcp_observed.csv"),
        &CsvMatrix {
            comments: vec![
                "synthetic SLCP observations".into(),
                format!("generator seed = {seed}"),
                theta_note(&SLCP_TRUE_THETA),
            ],
            header: vec!["x1".into(), "x2".into()],
            rows: x.chunks(2).map(|c| c.to_vec()).collect(),
        },
    )?;

    let seed = 20_240_503;
    let gaps = MG1Queue.simulate(&MG1_TRUE_THETA, &mut substream(seed, &[]))?;
    write_matrix_csv(
        &dir.join("mg1_observed.csv"),
        &CsvMatrix {
            comments: vec![
                "synthetic M/G/1 inter-departure times".into(),
                format!("generator seed = {seed}"),
                theta_note(&MG1_TRUE_THETA),
            ],
            header: vec!["gap".into()],
            rows: gaps.into_iter().map(|g| vec![g]).collect(),
        },
    )?;
    println!("wrote observed data to {}", dir.display());
    Ok(())
}
