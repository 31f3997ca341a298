mod common;

use std::time::Duration;

use common::{heights_csv, readings_csv, run, spawn, write_config};

fn stdout(o: &std::process::Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &std::process::Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    std::fs::write(&cfg, "controll.temp = 30\n").unwrap();
    let out = run(&["run", "-c", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("controll.temp"), "{}", stderr(&out));
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["ttest", "x.csv"]).status.code(), Some(2));
}

#[test]
fn ttest_reports_four_decimals() {
    let heights = heights_csv();
    let out = run(&["ttest", heights.to_str().unwrap(), "--day", "Day 29", "--test-value", "24.688"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("t 0.7089\n"), "{text}");
    assert!(text.contains("df 10\n"), "{text}");
    assert!(text.contains("p_two_tailed 0.4946\n"), "{text}");
}

#[test]
fn ttest_at_sample_mean_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("h.csv");
    std::fs::write(&csv, "sample,Day 1\n1,1.5\n2,2.5\n3,3.5\n").unwrap();
    let out = run(&["ttest", csv.to_str().unwrap(), "--day", "Day 1", "--test-value", "2.5"]);
    assert!(stdout(&out).contains("t 0.0000\n"), "{}", stdout(&out));
}

#[test]
fn ttest_unknown_day_lists_labels() {
    let heights = heights_csv();
    let out = run(&["ttest", heights.to_str().unwrap(), "--day", "Day 30", "--test-value", "24.688"]);
    assert_ne!(out.status.code(), Some(0));
    let err = stderr(&out);
    assert!(err.contains("Day 1 9-Jan") && err.contains("Day 29 6-Feb"), "{err}");
}

fn replay_file(readings: &str) -> (tempfile::TempDir, String, std::process::Output) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("readings.csv");
    std::fs::write(&path, readings).unwrap();
    let out = run(&["replay", path.to_str().unwrap()]);
    let text = stdout(&out);
    (dir, text, out)
}

#[test]
fn replay_single_temperature_excursion() {
    let mut rows = vec![(28.0, 400, 6000); 10];
    rows.extend(vec![(31.0, 400, 6000); 5]);
    rows.extend(vec![(28.5, 400, 6000); 10]);
    let (_d, text, out) = replay_file(&readings_csv(&rows, 0));
    assert_eq!(out.status.code(), Some(0));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines,
        vec![
            "ts_ms,actuator,action,source,cause_seq,cause_value",
            "55000,COOLER,ON,AUTO,11,31.0",
            "80000,COOLER,OFF,AUTO,16,28.5",
        ]
    );
}

#[test]
fn replay_in_range_day_is_header_only() {
    let rows = vec![(25.0, 500, 9000); 100];
    let (_d, text, _) = replay_file(&readings_csv(&rows, 0));
    assert_eq!(text, "ts_ms,actuator,action,source,cause_seq,cause_value\n");
}

#[test]
fn replay_is_deterministic() {
    let rows: Vec<(f64, u16, u32)> = (0..500)
        .map(|i| {
            let x = f64::from(i) / 20.0;
            (28.0 + 4.0 * x.sin(), (300.0 + 40.0 * (x * 0.7).cos()) as u16, (5000.0 + 500.0 * (x * 1.3).sin()) as u32)
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("r.csv");
    std::fs::write(&input, readings_csv(&rows, 0)).unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let o = run(&["replay", input.to_str().unwrap(), "-o", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
    }
    let a = std::fs::read(a).unwrap();
    assert_eq!(a, std::fs::read(b).unwrap());
    assert!(a.len() > 100);
}

#[test]
fn replay_malformed_csv_names_the_line() {
    let text = "ts_ms,node_id,seq,temp_c,moisture_adc,lux\n5000,node-1,1,30.0,300,5000\n10000,node-1,2,hot,300,5000\n";
    let (_d, _, out) = replay_file(text);
    assert_ne!(out.status.code(), Some(0));
    assert!(stderr(&out).contains(":3:"), "{}", stderr(&out));
}

#[test]
fn report_intervals_match_replayed_events() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir(&data).unwrap();
    let rows: Vec<(f64, u16, u32)> = (0..2000)
        .map(|i| {
            let x = f64::from(i) / 50.0;
            (29.0 + 2.0 * x.sin(), (310.0 + 30.0 * (x * 0.7).cos()) as u16, (5100.0 + 400.0 * (x * 1.3).sin()) as u32)
        })
        .collect();
    std::fs::write(data.join("readings.csv"), readings_csv(&rows, 0)).unwrap();
    let events = data.join("events.csv");
    let o = run(&["replay", data.join("readings.csv").to_str().unwrap(), "-o", events.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let out_dir = dir.path().join("report");
    let o = run(&["report", data.to_str().unwrap(), "-o", out_dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let events_text = std::fs::read_to_string(&events).unwrap();
    for (file, actuator) in [
        ("temp_cooler_on.csv", "COOLER"),
        ("moisture_pump_on.csv", "PUMP"),
        ("light_light_on.csv", "LIGHT"),
    ] {
        let mut expected = Vec::new();
        let mut open = None;
        for line in events_text.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f[1] != actuator {
                continue;
            }
            let ts: u64 = f[0].parse().unwrap();
            match f[2] {
                "ON" => open = Some(ts),
                _ => expected.push(format!("{},{ts}", open.take().unwrap())),
            }
        }
        if let Some(start) = open {
            expected.push(format!("{start},{}", 2000 * 5000));
        }
        let got = std::fs::read_to_string(out_dir.join(file)).unwrap();
        let got: Vec<&str> = got.lines().skip(1).collect();
        assert!(!got.is_empty(), "{file}");
        assert_eq!(got, expected, "{file}");
    }
    let values = std::fs::read_to_string(out_dir.join("temp_values.csv")).unwrap();
    assert_eq!(values.lines().count(), 2001);
}

#[test]
fn report_on_empty_day_is_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir(&data).unwrap();
    std::fs::write(data.join("readings.csv"), readings_csv(&[(25.0, 500, 9000); 10], 0)).unwrap();
    std::fs::write(data.join("events.csv"), "ts_ms,actuator,action,source,cause_seq,cause_value\n").unwrap();
    let out_dir = dir.path().join("r");
    let o = run(&["report", data.to_str().unwrap(), "--date", "3", "-o", out_dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    for f in std::fs::read_dir(&out_dir).unwrap() {
        let text = std::fs::read_to_string(f.unwrap().path()).unwrap();
        assert_eq!(text.lines().count(), 1, "{text}");
    }
}

#[test]
fn report_missing_files_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["report", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn run_logs_readings_and_stops_cleanly_on_sigterm() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "net.time_scale = 600\n");
    let mut running = spawn(&["run", "-c", cfg.to_str().unwrap()]);
    std::thread::sleep(Duration::from_secs(3));
    let status = running.terminate();
    assert_eq!(status.code(), Some(0));
    let text = std::fs::read_to_string(dir.path().join("data/readings.csv")).unwrap();
    assert!(text.ends_with('\n'));
    // 3 s wall at 600x is 30 virtual minutes: about 360 frames.
    let rows = text.lines().count() - 1;
    assert!((300..=400).contains(&rows), "{rows} rows");
}
