use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;

use super::env::{goal_reached, integrate};
use super::expert::scripted_expert;
use super::layout::MazeSpec;
use crate::diffmath::Matrix;
use crate::error::{Error, Result};

/// Aligned `(s_t, a_t)` pairs from one demonstration.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Matrix,
    pub actions: Matrix,
}

impl Trajectory {
    pub fn new(states: Matrix, actions: Matrix) -> Result<Self> {
        if states.rows() != actions.rows() {
            return Err(Error::Shape {
                op: "trajectory",
                lhs: states.shape(),
                rhs: actions.shape(),
            });
        }
        Ok(Trajectory { states, actions })
    }

    pub fn len(&self) -> usize {
        self.actions.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset {
    pub state_dim: usize,
    pub action_dim: usize,
    pub trajectories: Vec<Trajectory>,
}

impl OfflineDataset {
    pub fn new(state_dim: usize, action_dim: usize, trajectories: Vec<Trajectory>) -> Result<Self> {
        for t in &trajectories {
            if t.states.cols() != state_dim || t.actions.cols() != action_dim {
                return Err(Error::Shape {
                    op: "dataset",
                    lhs: (state_dim, action_dim),
                    rhs: (t.states.cols(), t.actions.cols()),
                });
            }
        }
        Ok(OfflineDataset {
            state_dim,
            action_dim,
            trajectories,
        })
    }

    pub fn num_pairs(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// Keeps the first `n` trajectories.
    pub fn truncated(&self, n: usize) -> Self {
        OfflineDataset {
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            trajectories: self.trajectories.iter().take(n).cloned().collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut header = vec!["traj_id".to_string(), "t".to_string()];
        header.extend((0..self.state_dim).map(|i| format!("s{i}")));
        header.extend((0..self.action_dim).map(|i| format!("a{i}")));
        let mut out = csv::Writer::from_writer(&mut w);
        out.write_record(&header).map_err(|e| csv_err(path, e))?;
        for (id, traj) in self.trajectories.iter().enumerate() {
            for t in 0..traj.len() {
                let mut rec = vec![id.to_string(), t.to_string()];
                // `{}` on f64 prints the shortest string that parses back exactly.
                rec.extend(traj.states.row(t).iter().map(|x| x.to_string()));
                rec.extend(traj.actions.row(t).iter().map(|x| x.to_string()));
                out.write_record(&rec).map_err(|e| csv_err(path, e))?;
            }
        }
        out.flush().map_err(|e| Error::io(path, e))?;
        drop(out);
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(BufReader::new(file));
        let header = rdr
            .headers()
            .map_err(|e| parse_err(1, e.to_string()))?
            .clone();
        let names: Vec<&str> = header.iter().collect();
        let count = |p: char| {
            names
                .iter()
                .filter(|n| n.starts_with(p) && n[1..].parse::<usize>().is_ok())
                .count()
        };
        let (sd, ad) = (count('s'), count('a'));
        let mut expected = vec!["traj_id".to_string(), "t".to_string()];
        expected.extend((0..sd).map(|i| format!("s{i}")));
        expected.extend((0..ad).map(|i| format!("a{i}")));
        if names.is_empty()
            || names != expected.iter().map(String::as_str).collect::<Vec<_>>()
            || sd == 0
            || ad == 0
        {
            return Err(parse_err(
                1,
                format!("unexpected header `{}`", names.join(",")),
            ));
        }

        let mut trajs: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
            if rec.len() != expected.len() {
                return Err(parse_err(
                    line,
                    format!("expected {} columns, found {}", expected.len(), rec.len()),
                ));
            }
            let id: usize = rec[0]
                .parse()
                .map_err(|_| parse_err(line, format!("bad traj_id `{}`", &rec[0])))?;
            let t: usize = rec[1]
                .parse()
                .map_err(|_| parse_err(line, format!("bad t `{}`", &rec[1])))?;
            if id != trajs.len() && id + 1 != trajs.len() {
                return Err(parse_err(line, format!("traj_id {id} out of sequence")));
            }
            if id == trajs.len() {
                trajs.push((Vec::new(), Vec::new()));
            }
            let (s, a) = trajs.last_mut().expect("pushed above");
            if t != s.len() / sd {
                return Err(parse_err(line, format!("t {t} out of sequence")));
            }
            for (k, field) in rec.iter().enumerate().skip(2) {
                let v: f64 = field.parse().map_err(|_| {
                    parse_err(
                        line,
                        format!("bad number `{field}` in column {}", expected[k]),
                    )
                })?;
                if k < 2 + sd {
                    s.push(v);
                } else {
                    a.push(v);
                }
            }
        }
        let trajectories = trajs
            .into_iter()
            .map(|(s, a)| {
                let n = s.len() / sd;
                Trajectory::new(Matrix::from_vec(n, sd, s)?, Matrix::from_vec(n, ad, a)?)
            })
            .collect::<Result<Vec<_>>>()?;
        OfflineDataset::new(sd, ad, trajectories)
    }
}

fn parse_err(line: usize, msg: String) -> Error {
    Error::Parse { line, msg }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

/// Rolls out the noisy scripted expert from the layout's start. Goals are
/// uniform over free space and are redrawn whenever the current one is
/// reached. Stored states are positions only.
pub fn collect_dataset(
    spec: &MazeSpec,
    n_traj: usize,
    traj_len: usize,
    noise_std: f64,
    rng: &mut impl Rng,
) -> Result<OfflineDataset> {
    if n_traj == 0 || traj_len == 0 {
        return Err(Error::Invalid("n_traj and traj_len must be >= 1".into()));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::Invalid(format!(
            "noise_std {noise_std} must be >= 0"
        )));
    }
    let mut trajectories = Vec::with_capacity(n_traj);
    for _ in 0..n_traj {
        let mut states = Matrix::zeros(traj_len, 2);
        let mut actions = Matrix::zeros(traj_len, 2);
        let mut pos = spec.start;
        let mut goal = spec.sample_free(rng);
        for t in 0..traj_len {
            let a = scripted_expert(pos, goal, noise_std, rng);
            states.row_mut(t).copy_from_slice(&pos);
            actions.row_mut(t).copy_from_slice(&a);
            pos = integrate(spec, pos, a);
            if goal_reached(spec, pos, goal) {
                goal = spec.sample_free(rng);
            }
        }
        trajectories.push(Trajectory { states, actions });
    }
    OfflineDataset::new(2, 2, trajectories)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mazeworld::layout::Layout;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> OfflineDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        collect_dataset(&Layout::Room.spec(), 3, 40, 0.25, &mut rng).unwrap()
    }

    #[test]
    fn shape_of_single_short_trajectory() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = collect_dataset(&Layout::Room.spec(), 1, 5, 0.25, &mut rng).unwrap();
        assert_eq!(d.trajectories.len(), 1);
        assert_eq!(d.trajectories[0].len(), 5);
        assert_eq!(d.trajectories[0].states.shape(), (5, 2));
    }

    #[test]
    fn noiseless_actions_point_at_current_goal() {
        // Without noise the expert draws nothing, so replaying the same seed
        // reproduces the goal sequence.
        let spec = Layout::Room.spec();
        let d = collect_dataset(&spec, 2, 300, 0.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut replay = ChaCha8Rng::seed_from_u64(3);
        let mut switches = 0;
        for traj in &d.trajectories {
            let mut goal = spec.sample_free(&mut replay);
            for t in 0..traj.len() {
                let (s, a) = (traj.states.row(t), traj.actions.row(t));
                let v = [goal[0] - s[0], goal[1] - s[1]];
                let cross = v[0] * a[1] - v[1] * a[0];
                assert!(
                    cross.abs() < 1e-9 && v[0] * a[0] + v[1] * a[1] > 0.0,
                    "t={t}"
                );
                let next = [s[0] + a[0], s[1] + a[1]];
                if (next[0] - goal[0]).hypot(next[1] - goal[1]) < spec.success_radius {
                    goal = spec.sample_free(&mut replay);
                    switches += 1;
                }
            }
        }
        assert!(switches > 2);
    }

    #[test]
    fn actions_stay_in_bounds_and_collection_is_deterministic() {
        let d = small();
        assert!(d.trajectories.iter().all(|t| t.actions.max_abs() <= 1.0));
        assert_eq!(d, small());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let d = small();
        d.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("traj_id,t,s0,s1,a0,a1\n"));
        assert_eq!(OfflineDataset::load(&path).unwrap(), d);
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        let d = OfflineDataset::new(2, 2, vec![]).unwrap();
        d.save(&path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "traj_id,t,s0,s1,a0,a1\n"
        );
        assert_eq!(OfflineDataset::load(&path).unwrap(), d);
    }

    #[test]
    fn missing_column_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "traj_id,t,s0,s1,a0,a1\n0,0,1,2,3,4\n0,1,1,2,3\n").unwrap();
        match OfflineDataset::load(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_number_and_bad_header_are_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "traj_id,t,s0,s1,a0,a1\n0,0,1,x,3,4\n").unwrap();
        assert!(matches!(
            OfflineDataset::load(&path),
            Err(Error::Parse { line: 2, .. })
        ));
        std::fs::write(&path, "id,t,s0,s1,a0,a1\n").unwrap();
        assert!(matches!(
            OfflineDataset::load(&path),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
