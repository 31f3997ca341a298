mod common;

use std::time::Duration;

use microfarm::control::Thresholds;
use microfarm::model::{Mode, Param, SensorReading};
use microfarm::stack;
use tokio_util::sync::CancellationToken;

const HALF_HOUR_MS: u64 = 30 * 60 * 1000;

fn first_in_range(readings: &[SensorReading], th: &Thresholds, param: Param) -> Option<u64> {
    readings
        .iter()
        .find(|r| !th.out_of_range(param, param.value_of(r)))
        .map(|r| r.timestamp_ms)
}

async fn run_half_hour(mode: Mode) -> Vec<SensorReading> {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::config(
        dir.path(),
        &format!("net.time_scale = 600\ncontrol.initial_mode = {}", mode.as_str()),
    );
    let shutdown = CancellationToken::new();
    let running = stack::start(&cfg, shutdown.clone()).await.unwrap();
    let clock = running.clock;
    clock.sleep_until(HALF_HOUR_MS + 1).await;
    shutdown.cancel();
    let store = running.gateway.gateway.store().clone();
    tokio::time::timeout(Duration::from_secs(10), running.join()).await.unwrap().unwrap();
    store.readings()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn auto_mode_brings_all_channels_into_range() {
    let readings = run_half_hour(Mode::Auto).await;
    assert!(readings.len() >= 300, "{} readings", readings.len());
    let first = &readings[0];
    assert!(first.temp_c > 34.0 && first.moisture_adc < 300 && first.lux < 5000, "{first:?}");
    let th = Thresholds::default();
    for param in Param::ALL {
        let at = first_in_range(&readings, &th, param);
        assert!(at.is_some_and(|t| t <= HALF_HOUR_MS), "{param} never entered range");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn manual_mode_without_commands_stays_out_of_range() {
    let readings = run_half_hour(Mode::Manual).await;
    assert!(readings.len() >= 300, "{} readings", readings.len());
    let th = Thresholds::default();
    for param in Param::ALL {
        assert_eq!(first_in_range(&readings, &th, param), None, "{param} entered range");
    }
}
