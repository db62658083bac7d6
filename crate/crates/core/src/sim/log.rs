use std::io::{self, Write};

use super::vehicle::VehicleId;

pub const TRAJECTORY_HEADER: &str = "time,vehicle_id,x,y,v,psi,is_ego,braking_flag";

/// One vehicle at one physics step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub time: f64,
    pub vehicle_id: VehicleId,
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub psi: f64,
    pub is_ego: bool,
    pub braking: bool,
}

pub fn write_trajectory_csv<W: Write>(mut out: W, rows: &[TrajectoryRow]) -> io::Result<()> {
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.time, r.vehicle_id, r.x, r.y, r.v, r.psi, r.is_ego as u8, r.braking as u8
        )?;
    }
    Ok(())
}
