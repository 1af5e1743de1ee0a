//! Trajectory CSV format.
//!
//! Continuous systems: header `traj_id,t,x0,x1,...,x{D-1}`; discrete
//! systems: header `traj_id,t,genotype`. Rows sorted by `(traj_id, t)`,
//! floats written with 17 significant digits so round trips are exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::systems::{States, Trajectory};

/// Declared layout of a trajectory CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CsvSchema {
    Continuous {
        /// Expected dimension; `None` accepts whatever the header declares.
        dim: Option<usize>,
    },
    Discrete {
        state_space: usize,
    },
}

/// Load trajectories from a CSV file, or from every `*.csv` in a directory
/// (visited in lexicographic order).
pub fn load_trajectories_csv(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
    lag_time: usize,
    system_id: &str,
) -> Result<Vec<Trajectory>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    if path.is_dir() {
        let mut files: Vec<_> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Data(format!(
                "no trajectories: no csv files in {}",
                path.display()
            )));
        }
        for f in files {
            out.extend(load_one_file(&f, schema, lag_time, system_id)?);
        }
    } else {
        out = load_one_file(path, schema, lag_time, system_id)?;
    }
    if out.is_empty() {
        return Err(Error::Data("no trajectories".into()));
    }
    Ok(out)
}

fn load_one_file(
    path: &Path,
    schema: &CsvSchema,
    lag_time: usize,
    system_id: &str,
) -> Result<Vec<Trajectory>> {
    let text = fs::read_to_string(path)?;
    let display = path.display().to_string();
    let err = |line: usize, msg: String| Error::Csv {
        path: display.clone(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| err(1, "empty file; no trajectories".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let discrete = match (cols.as_slice(), schema) {
        (["traj_id", "t", "genotype"], CsvSchema::Discrete { .. }) => true,
        (["traj_id", "t", rest @ ..], CsvSchema::Continuous { dim })
            if !rest.is_empty()
                && rest
                    .iter()
                    .enumerate()
                    .all(|(i, c)| *c == format!("x{i}")) =>
        {
            if let Some(d) = dim {
                if *d != rest.len() {
                    return Err(err(
                        1,
                        format!("expected dimension {} but header has {}", d, rest.len()),
                    ));
                }
            }
            false
        }
        _ => {
            return Err(err(
                1,
                format!("header `{header}` does not match the declared schema"),
            ))
        }
    };
    let dim = cols.len() - 2;

    struct Partial {
        id: u64,
        last_t: i64,
        cont: Vec<f64>,
        disc: Vec<usize>,
    }
    let mut trajs: Vec<Partial> = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(err(
                lineno,
                format!("expected {} fields, got {}", cols.len(), fields.len()),
            ));
        }
        let id: u64 = fields[0]
            .parse()
            .map_err(|e| err(lineno, format!("bad traj_id `{}`: {e}", fields[0])))?;
        let t: i64 = fields[1]
            .parse()
            .map_err(|e| err(lineno, format!("bad t `{}`: {e}", fields[1])))?;
        let current = match trajs.last_mut() {
            Some(p) if p.id == id => {
                if t != p.last_t + 1 {
                    return Err(err(
                        lineno,
                        format!("rows not sorted by (traj_id, t): t={} after t={}", t, p.last_t),
                    ));
                }
                p.last_t = t;
                p
            }
            _ => {
                if trajs.iter().any(|p| p.id == id) {
                    return Err(err(lineno, format!("traj_id {id} appears out of order")));
                }
                trajs.push(Partial {
                    id,
                    last_t: t,
                    cont: Vec::new(),
                    disc: Vec::new(),
                });
                trajs.last_mut().unwrap()
            }
        };
        if discrete {
            let g: usize = fields[2]
                .parse()
                .map_err(|e| err(lineno, format!("bad genotype `{}`: {e}", fields[2])))?;
            if let CsvSchema::Discrete { state_space } = schema {
                if g >= *state_space {
                    return Err(err(
                        lineno,
                        format!("genotype {g} outside state space {state_space}"),
                    ));
                }
            }
            current.disc.push(g);
        } else {
            for f in &fields[2..] {
                let v: f64 = f
                    .parse()
                    .map_err(|e| err(lineno, format!("bad value `{f}`: {e}")))?;
                if !v.is_finite() {
                    return Err(err(lineno, format!("non-finite value `{f}`")));
                }
                current.cont.push(v);
            }
        }
    }
    if trajs.is_empty() {
        return Err(Error::Data("no trajectories".into()));
    }
    trajs
        .into_iter()
        .map(|p| {
            if discrete {
                let space = match schema {
                    CsvSchema::Discrete { state_space } => *state_space,
                    CsvSchema::Continuous { .. } => unreachable!(),
                };
                Trajectory::discrete(space, p.disc, lag_time, system_id)
            } else {
                Trajectory::continuous(dim, p.cont, lag_time, system_id)
            }
        })
        .collect()
}

/// Write trajectories to one CSV file. All trajectories must share a kind
/// and dimension; ids are assigned sequentially from `first_id`.
pub fn write_trajectories_csv(
    path: impl AsRef<Path>,
    trajs: &[Trajectory],
    first_id: u64,
) -> Result<()> {
    let path = path.as_ref();
    if trajs.is_empty() {
        return Err(Error::Data("no trajectories to write".into()));
    }
    let discrete = trajs[0].is_discrete();
    let dim = trajs[0].dim();
    for t in trajs {
        if t.is_discrete() != discrete || t.dim() != dim {
            return Err(Error::Data("mixed trajectory kinds or dimensions".into()));
        }
    }
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    if discrete {
        writeln!(f, "traj_id,t,genotype")?;
    } else {
        let cols: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
        writeln!(f, "traj_id,t,{}", cols.join(","))?;
    }
    for (k, traj) in trajs.iter().enumerate() {
        let id = first_id + k as u64;
        match &traj.states {
            States::Discrete { values, .. } => {
                for (t, g) in values.iter().enumerate() {
                    writeln!(f, "{id},{t},{g}")?;
                }
            }
            States::Continuous { dim, values } => {
                for t in 0..values.len() / dim {
                    let row: Vec<String> = values[t * dim..(t + 1) * dim]
                        .iter()
                        .map(|v| format!("{v:.16e}"))
                        .collect();
                    writeln!(f, "{id},{t},{}", row.join(","))?;
                }
            }
        }
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir(name: &str) -> std::path::PathBuf {
        let d = std::env::temp_dir().join(format!("basin-csv-{name}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&d);
        fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn three_row_file_loads_one_trajectory() {
        let d = tmpdir("small");
        let p = d.join("t.csv");
        fs::write(&p, "traj_id,t,x0,x1\n0,0,1.0,2.0\n0,1,3.0,4.0\n0,2,5.0,6.0\n").unwrap();
        let trajs =
            load_trajectories_csv(&p, &CsvSchema::Continuous { dim: None }, 1, "csv").unwrap();
        assert_eq!(trajs.len(), 1);
        assert_eq!(trajs[0].len(), 3);
        assert_eq!(trajs[0].state(1), &[3.0, 4.0]);
    }

    #[test]
    fn empty_file_reports_no_trajectories() {
        let d = tmpdir("empty");
        let p = d.join("t.csv");
        fs::write(&p, "").unwrap();
        let err =
            load_trajectories_csv(&p, &CsvSchema::Continuous { dim: None }, 1, "csv").unwrap_err();
        assert!(err.to_string().contains("no trajectories"));
    }

    #[test]
    fn round_trip_preserves_full_precision() {
        let d = tmpdir("roundtrip");
        let p = d.join("t.csv");
        let values = vec![
            0.1,
            -1.0 / 3.0,
            std::f64::consts::PI,
            1.2345678901234567e-8,
            -9.87654321e5,
            2.0_f64.sqrt(),
        ];
        let t = Trajectory::continuous(2, values.clone(), 1, "csv").unwrap();
        write_trajectories_csv(&p, &[t.clone()], 0).unwrap();
        let back =
            load_trajectories_csv(&p, &CsvSchema::Continuous { dim: Some(2) }, 1, "csv").unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].states, t.states);
    }

    #[test]
    fn malformed_row_reports_line_number() {
        let d = tmpdir("badrow");
        let p = d.join("t.csv");
        fs::write(&p, "traj_id,t,x0\n0,0,1.0\n0,1,oops\n").unwrap();
        let err =
            load_trajectories_csv(&p, &CsvSchema::Continuous { dim: None }, 1, "csv").unwrap_err();
        match err {
            Error::Csv { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn mixed_dimensionality_rejected() {
        let d = tmpdir("mixed");
        let p = d.join("t.csv");
        fs::write(&p, "traj_id,t,x0,x1\n0,0,1.0,2.0\n0,1,3.0\n").unwrap();
        let err =
            load_trajectories_csv(&p, &CsvSchema::Continuous { dim: None }, 1, "csv").unwrap_err();
        assert!(err.to_string().contains("expected 4 fields"));
    }

    #[test]
    fn discrete_round_trip_and_bounds() {
        let d = tmpdir("disc");
        let p = d.join("t.csv");
        let t = Trajectory::discrete(100, vec![1, 5, 99, 5], 1, "csv").unwrap();
        write_trajectories_csv(&p, &[t.clone()], 7).unwrap();
        let back =
            load_trajectories_csv(&p, &CsvSchema::Discrete { state_space: 100 }, 1, "csv").unwrap();
        assert_eq!(back[0].states, t.states);
        let err = load_trajectories_csv(&p, &CsvSchema::Discrete { state_space: 50 }, 1, "csv")
            .unwrap_err();
        assert!(err.to_string().contains("outside state space"));
    }

    #[test]
    fn directory_loads_files_in_order() {
        let d = tmpdir("dir");
        fs::write(d.join("b.csv"), "traj_id,t,x0\n1,0,3.0\n1,1,4.0\n").unwrap();
        fs::write(d.join("a.csv"), "traj_id,t,x0\n0,0,1.0\n0,1,2.0\n").unwrap();
        let trajs =
            load_trajectories_csv(&d, &CsvSchema::Continuous { dim: Some(1) }, 1, "csv").unwrap();
        assert_eq!(trajs.len(), 2);
        assert_eq!(trajs[0].state(0), &[1.0]);
        assert_eq!(trajs[1].state(0), &[3.0]);
    }
}
