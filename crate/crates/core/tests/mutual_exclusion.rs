use std::sync::Arc;
use std::time::Duration;

use microfarm::clock::VirtualClock;
use microfarm::control::Thresholds;
use microfarm::gateway::{Gateway, ManualOutcome};
use microfarm::model::{Action, ActuationEvent, Actuator, ControlMode, Mode, SensorReading};
use microfarm::store::Store;
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Reading { temp_c: f64, moisture_adc: u16, lux: u32 },
    SetMode(Mode),
    Manual(Actuator, Action),
    Advance(u64),
}

fn op() -> impl Strategy<Value = Op> {
    let actuator = prop_oneof![Just(Actuator::Pump), Just(Actuator::Cooler), Just(Actuator::Light)];
    let action = prop_oneof![Just(Action::On), Just(Action::Off)];
    let mode = prop_oneof![Just(Mode::Auto), Just(Mode::Manual)];
    prop_oneof![
        4 => (250u32..=350, 250u16..=350, 4700u32..=5300).prop_map(|(t, m, l)| Op::Reading {
            temp_c: f64::from(t) / 10.0,
            moisture_adc: m,
            lux: l
        }),
        2 => mode.prop_map(Op::SetMode),
        3 => (actuator, action).prop_map(|(a, b)| Op::Manual(a, b)),
        2 => (0u64..10_000).prop_map(Op::Advance),
    ]
}

/// Mode in effect at `ts`: the last change at or before it.
fn mode_at(modes: &[ControlMode], ts: u64) -> Mode {
    modes.iter().filter(|m| m.changed_at_ms <= ts).last().expect("initial mode logged").mode
}

fn run(ops: &[Op], initial: Mode) -> (Vec<ActuationEvent>, Vec<ControlMode>, usize) {
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_time()
        .start_paused(true)
        .build()
        .unwrap();
    rt.block_on(async {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(Store::open(dir.path(), 48).unwrap());
        let clock = VirtualClock::new(0, 1.0);
        let gw = Gateway::new(store.clone(), Thresholds::default(), initial, clock, 5000).unwrap();
        let (_, mut cmds, _) = gw.register_session("node-1");
        let mut seq = 0;
        let mut refused_in_auto = 0;
        for op in ops {
            match *op {
                Op::Reading { temp_c, moisture_adc, lux } => {
                    seq += 1;
                    gw.ingest(SensorReading {
                        node_id: "node-1".into(),
                        seq,
                        timestamp_ms: gw.now_ms(),
                        temp_c,
                        moisture_adc,
                        lux,
                    });
                }
                Op::SetMode(m) => {
                    gw.set_mode(m, "prop").unwrap();
                }
                Op::Manual(target, action) => {
                    let in_auto = gw.mode().mode == Mode::Auto;
                    let before = store.events().len();
                    let outcome = gw.manual(target, action);
                    if in_auto {
                        assert_eq!(outcome, ManualOutcome::Rejected);
                        assert_eq!(store.events().len(), before);
                        refused_in_auto += 1;
                    } else {
                        assert!(matches!(outcome, ManualOutcome::Accepted { .. }));
                    }
                }
                Op::Advance(ms) => tokio::time::advance(Duration::from_millis(ms)).await,
            }
            while let Ok(cmd) = cmds.try_recv() {
                gw.ack(cmd.cmd_id);
            }
        }
        (store.events(), store.modes(), refused_in_auto)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn events_stay_inside_their_mode(
        ops in prop::collection::vec(op(), 1..120),
        start_auto in any::<bool>(),
    ) {
        let initial = if start_auto { Mode::Auto } else { Mode::Manual };
        let (events, modes, _) = run(&ops, initial);
        for e in &events {
            prop_assert_eq!(mode_at(&modes, e.ts_ms), e.source, "event {:?} modes {:?}", e, modes);
            if e.source == Mode::Auto {
                prop_assert!(e.cause_reading_seq.is_some() && e.cause_param_value.is_some());
            }
        }
        prop_assert!(events.windows(2).all(|w| w[0].ts_ms <= w[1].ts_ms));
        prop_assert!(modes.windows(2).all(|w| w[0].changed_at_ms <= w[1].changed_at_ms));
        for a in Actuator::ALL {
            let actions: Vec<Action> = events.iter().filter(|e| e.actuator == a).map(|e| e.action).collect();
            prop_assert!(actions.windows(2).all(|w| w[0] != w[1]));
            prop_assert!(actions.first().is_none_or(|&x| x == Action::On));
        }
    }
}

#[test]
fn manual_requests_in_auto_are_all_refused() {
    let ops: Vec<Op> = (0..300)
        .map(|i| match i % 3 {
            0 => Op::Manual(Actuator::ALL[i % 9 / 3], Action::On),
            1 => Op::Manual(Actuator::ALL[i % 9 / 3], Action::Off),
            _ => Op::Reading {
                temp_c: 31.0,
                moisture_adc: 280,
                lux: 4000,
            },
        })
        .collect();
    let (events, _, refused) = run(&ops, Mode::Auto);
    assert_eq!(refused, 200);
    assert!(events.iter().all(|e| e.source == Mode::Auto));
}
