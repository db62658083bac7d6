use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::DqnError;

pub const METRICS_HEADER: &str = "episode,return,length,avg_speed,epsilon,mean_loss";

/// One training episode; `mean_loss` is absent before the first gradient step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub length: usize,
    pub avg_speed: f64,
    pub epsilon: f64,
    pub mean_loss: Option<f64>,
}

pub fn write_metrics_csv<W: Write>(writer: W, rows: &[EpisodeMetrics]) -> Result<(), DqnError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(METRICS_HEADER.split(','))
        .map_err(|e| DqnError::Metrics(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| DqnError::Metrics(e.to_string()))?;
    }
    w.flush().map_err(|e| DqnError::Metrics(e.to_string()))
}

pub fn read_metrics_csv<R: Read>(reader: R) -> Result<Vec<EpisodeMetrics>, DqnError> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers().map_err(|e| DqnError::Metrics(e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != METRICS_HEADER {
        return Err(DqnError::Metrics(format!("unexpected header {header:?}")));
    }
    r.deserialize()
        .collect::<Result<Vec<EpisodeMetrics>, _>>()
        .map_err(|e| DqnError::Metrics(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let rows = vec![
            EpisodeMetrics {
                episode: 0,
                episode_return: -5.0,
                length: 3,
                avg_speed: 7.25,
                epsilon: 1.0,
                mean_loss: None,
            },
            EpisodeMetrics {
                episode: 1,
                episode_return: 4.0,
                length: 13,
                avg_speed: 8.1,
                epsilon: 0.9962,
                mean_loss: Some(0.0123),
            },
        ];
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("episode,return,length,avg_speed,epsilon,mean_loss\n0,-5.0,3,7.25,1.0,\n"));
        assert_eq!(read_metrics_csv(buf.as_slice()).unwrap(), rows);
    }
}
