use caishift::criteria::criterion;
use caishift::lmm::standard_normal_vec;
use caishift::rng;
use caishift::smallarea::{estimate_psi, nerm_design, AreaRecord, NermData, PredictiveMode, UnsampledCovariates};
use caishift::{CandidateModel, Lmm, Variant};
use nalgebra::{DMatrix, DVector};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn caishift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_caishift")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let h = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (h, rows)
}

fn column(h: &[String], name: &str) -> usize {
    h.iter().position(|c| c == name).unwrap()
}

/// Area id, sampled `(y, x1, x2)` and unsampled `(x1, x2)`.
type ToyArea = (String, Vec<(f64, f64, f64)>, Vec<(f64, f64)>);

struct Toy {
    areas: Vec<ToyArea>,
}

impl Toy {
    fn generate(q: usize, n_i: usize, r_i: usize, seed: u64, log_prices: bool) -> Toy {
        let mut r = rng::stream(seed, &[]);
        let areas = (0..q)
            .map(|i| {
                let z = standard_normal_vec(1 + 3 * (n_i + r_i), &mut r);
                let b = 0.4 * z[0];
                let unit = |k: usize| {
                    let (x1, x2) = (z[1 + 3 * k], z[2 + 3 * k]);
                    let mut y = 1.0 + 0.7 * x1 + b + 0.6 * z[3 + 3 * k];
                    if log_prices {
                        y = 0.5 + 0.3 * x1 + 0.5 * b + 0.5 * z[3 + 3 * k];
                    }
                    (y, x1, x2)
                };
                let sampled = (0..n_i).map(unit).collect();
                let unsampled = (n_i..n_i + r_i).map(|k| {
                    let (_, x1, x2) = unit(k);
                    (x1, x2)
                });
                (format!("a{}", i + 1), sampled, unsampled.collect())
            })
            .collect();
        Toy { areas }
    }

    fn write(&self, path: &Path) {
        let mut s = String::from("area,unit,y,x1,x2\n");
        for (id, samp, uns) in &self.areas {
            let mut u = 0;
            for (y, x1, x2) in samp {
                u += 1;
                s += &format!("{id},{u},{y},{x1},{x2}\n");
            }
            for (x1, x2) in uns {
                u += 1;
                s += &format!("{id},{u},,{x1},{x2}\n");
            }
        }
        std::fs::write(path, s).unwrap();
    }

    fn nerm(&self) -> NermData {
        let areas = self
            .areas
            .iter()
            .map(|(id, samp, uns)| AreaRecord {
                id: id.clone(),
                population_size: samp.len() + uns.len(),
                y: DVector::from_iterator(samp.len(), samp.iter().map(|s| s.0)),
                x: DMatrix::from_fn(samp.len(), 3, |k, c| [1.0, samp[k].1, samp[k].2][c]),
                unsampled: UnsampledCovariates::Units(DMatrix::from_fn(uns.len(), 3, |k, c| {
                    [1.0, uns[k].0, uns[k].1][c]
                })),
            })
            .collect();
        NermData::new(areas).unwrap()
    }
}

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn select_totals_equal_direct_library_calls() {
    let dir = tmp();
    let toy = Toy::generate(10, 4, 5, 1, false);
    let data = dir.path().join("toy.csv");
    toy.write(&data);
    let out = dir.path().join("out");
    for variant in ["u", "hat"] {
        let o = caishift(&["select", s(&data), "--variant", variant, "--out", s(&out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));

        let nerm = toy.nerm();
        let psi = estimate_psi(&nerm).unwrap();
        let (y, design) = nerm_design(&nerm, psi.psi_hat, PredictiveMode::Unit).unwrap();
        let lmm = Lmm::new(design).unwrap();
        let v: Variant = variant.parse().unwrap();

        let (h, rows) = read_csv(&out.join("select.csv"));
        assert_eq!(rows.len(), 4);
        let (ci, ti, bi) = (column(&h, "indices"), column(&h, "total"), column(&h, "best"));
        for (k, row) in rows.iter().enumerate() {
            let idx: Vec<usize> = row[ci].split(';').map(|t| t.parse().unwrap()).collect();
            let want = criterion(v, &y, &lmm, &CandidateModel::new(idx, 3).unwrap(), None).unwrap().total;
            let got: f64 = row[ti].parse().unwrap();
            assert!((got - want).abs() <= 1e-12 * want.abs(), "{got} vs {want}");
            assert_eq!(row[bi], if k == 0 { "true" } else { "false" });
        }
    }
}

#[test]
fn malformed_header_names_the_missing_column() {
    let dir = tmp();
    let data = dir.path().join("bad.csv");
    std::fs::write(&data, "area,unit,response,x1\na,1,2.0,0.5\n").unwrap();
    let o = caishift(&["select", s(&data), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("missing column 'y'"), "{}", stderr(&o));
}

#[test]
fn bad_cells_and_duplicates_are_input_errors() {
    let dir = tmp();
    let data = dir.path().join("bad.csv");
    std::fs::write(&data, "area,unit,y,x1\na,1,2.0,0.5\na,2,oops,0.5\n").unwrap();
    let o = caishift(&["select", s(&data)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("row 3, column 'y'"), "{}", stderr(&o));

    std::fs::write(&data, "area,unit,y,x1\na,1,2.0,0.5\na,1,3.0,0.1\n").unwrap();
    let o = caishift(&["select", s(&data)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("duplicate unit"), "{}", stderr(&o));
}

#[test]
fn no_candidate_left_after_filtering_is_exit_2() {
    let dir = tmp();
    let data = dir.path().join("tiny.csv");
    std::fs::write(&data, "area,unit,y,x1\na,1,1.0,0.3\na,2,2.0,-0.1\nb,1,0.5,0.9\n").unwrap();
    let o = caishift(&["select", s(&data), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("no candidate"), "{}", stderr(&o));
}

#[test]
fn fully_sampled_area_predicts_its_sample_mean_in_unit_mode() {
    let dir = tmp();
    let mut toy = Toy::generate(8, 4, 3, 2, false);
    toy.areas[0].2.clear();
    let data = dir.path().join("toy.csv");
    toy.write(&data);
    let out = dir.path().join("o");
    let o = caishift(&["predict", s(&data), "--model", "x1", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (h, rows) = read_csv(&out.join("predict.csv"));
    let (sm, pm) = (column(&h, "sampled_mean"), column(&h, "predicted_mean"));
    let a: f64 = rows[0][sm].parse().unwrap();
    let b: f64 = rows[0][pm].parse().unwrap();
    assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));

    let o = caishift(&["predict", s(&data), "--model", "x1", "--predictive", "area", "--out", s(&out)]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn predictions_round_trip_through_csv() {
    let dir = tmp();
    let toy = Toy::generate(9, 3, 4, 3, true);
    let data = dir.path().join("toy.csv");
    toy.write(&data);
    let out = dir.path().join("o");
    let o = caishift(&["predict", s(&data), "--model", "x1,x2", "--log-scale", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let loaded = caishift_cli::input::load(&data, None).unwrap();
    let settings = caishift_cli::config::PredictSettings {
        model: vec!["x1".into(), "x2".into()],
        predictive: None,
        log_scale: true,
    };
    let (_, _, mem) = caishift_cli::commands::predict(&loaded, &settings).unwrap();
    let (h, rows) = read_csv(&out.join("predict.csv"));
    let pm = column(&h, "predicted_mean");
    let csv_total: f64 = rows.iter().map(|r| r[pm].parse::<f64>().unwrap()).sum();
    let mem_total: f64 = mem.iter().map(|r| r.predicted_mean).sum();
    assert!((csv_total - mem_total).abs() < 1e-12 * mem_total.abs());
    for (r, m) in rows.iter().zip(&mem) {
        assert_eq!(r[pm].parse::<f64>().unwrap(), m.predicted_mean);
    }
}

#[test]
fn linear_scale_under_predicts_log_generated_prices() {
    let dir = tmp();
    let toy = Toy::generate(40, 4, 12, 4, true);
    let data = dir.path().join("toy.csv");
    toy.write(&data);
    let loaded = caishift_cli::input::load(&data, None).unwrap();
    let run = |log_scale: bool| {
        let settings = caishift_cli::config::PredictSettings {
            model: vec!["x1".into()],
            predictive: None,
            log_scale,
        };
        caishift_cli::commands::predict(&loaded, &settings).unwrap().2
    };
    let on = run(true);
    let off = run(false);
    // Back-transforming the linear predictor of the log mean ignores the
    // conditional variance and the spread of log prices within an area.
    let gap: Vec<f64> = on.iter().zip(&off).map(|(a, b)| a.predicted_mean - b.predicted_mean.exp()).collect();
    assert!(gap.iter().all(|g| *g > 0.0));
    let mean_gap = gap.iter().sum::<f64>() / gap.len() as f64;
    assert!(mean_gap > 0.05, "mean gap {mean_gap}");
}

#[test]
fn config_file_is_overridden_by_flags_and_rejects_unknown_keys() {
    let dir = tmp();
    let toy = Toy::generate(8, 4, 3, 5, false);
    let data = dir.path().join("toy.csv");
    toy.write(&data);
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "variant = \"u\"\ncandidates = \"nested\"\n").unwrap();
    let out = dir.path().join("o");
    let o = caishift(&["select", s(&data), "--config", s(&cfg), "--variant", "hat", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (h, rows) = read_csv(&out.join("select.csv"));
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r[column(&h, "variant")] == "hat"));

    std::fs::write(&cfg, "variant = \"u\"\nunknown_key = 3\n").unwrap();
    let o = caishift(&["select", s(&data), "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("unknown_key"), "{}", stderr(&o));
}

#[test]
fn manifest_is_appended_per_run() {
    let dir = tmp();
    let toy = Toy::generate(8, 4, 3, 6, false);
    let data = dir.path().join("toy.csv");
    toy.write(&data);
    let out = dir.path().join("o");
    for _ in 0..2 {
        assert_eq!(code(&caishift(&["select", s(&data), "--out", s(&out)])), 0);
    }
    assert_eq!(code(&caishift(&["predict", s(&data), "--model", "x2", "--out", s(&out)])), 0);
    let log = caishift_cli::manifest::read(&out).unwrap();
    let cmds: Vec<&str> = log.runs.iter().map(|r| r.command.as_str()).collect();
    assert_eq!(cmds, ["select", "select", "predict"]);
    assert_eq!(log.runs[0].artifacts, ["select.csv", "select_excluded.csv"]);
    assert_eq!(log.runs[0].seed, Some(1));
}

fn files_equal(a: &Path, b: &Path, names: &[&str]) {
    for n in names {
        let x = std::fs::read(a.join(n)).unwrap();
        let y = std::fs::read(b.join(n)).unwrap();
        assert!(x == y, "{n} differs between runs");
    }
}

#[test]
fn dagger_select_is_byte_identical_across_runs_and_workers() {
    let dir = tmp();
    let toy = Toy::generate(10, 4, 4, 7, false);
    let data = dir.path().join("toy.csv");
    toy.write(&data);
    let outs: Vec<PathBuf> = (0..3).map(|k| dir.path().join(format!("o{k}"))).collect();
    for (k, workers) in ["1", "4", "4"].iter().enumerate() {
        let o = caishift(&[
            "select", s(&data), "--variant", "dagger", "--boot-reps", "200", "--seed", "11", "--workers", workers,
            "--out", s(&outs[k]),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    files_equal(&outs[0], &outs[1], &["select.csv", "select_excluded.csv"]);
    files_equal(&outs[1], &outs[2], &["select.csv", "select_excluded.csv"]);
}

#[test]
fn small_simulations_run_and_are_reproducible() {
    let dir = tmp();
    let cfg = dir.path().join("sim.toml");
    std::fs::write(&cfg, "q = 12\nsample_size = 48\npopulation_size = 240\noracle_reps = 1000\n").unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = caishift(&["simulate-sae", "--config", s(&cfg), "--reps", "4", "--out", s(out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let o = caishift(&[
            "simulate-bias", "--config", s(&cfg), "--reps", "100", "--boot-reps", "20", "--out", s(out),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    files_equal(&a, &b, &["sae_areas.csv", "sae_samples.csv", "bias.csv"]);
    let (_, rows) = read_csv(&a.join("sae_areas.csv"));
    assert_eq!(rows.len(), 12);
    let (_, rows) = read_csv(&a.join("bias.csv"));
    assert_eq!(rows.len(), 7);
}

#[test]
fn invalid_simulation_settings_are_input_errors() {
    let o = caishift(&["simulate-bias", "--reps", "5", "--out", "/nonexistent/never"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}
