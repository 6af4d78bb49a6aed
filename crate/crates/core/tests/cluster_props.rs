use std::collections::HashSet;

use beowulf_core::cluster::{
    fit_power_model, load_cluster_spec, placement, render, BoardSpec, ClusterSpec, PlacementPolicy, PowerModel,
    SwitchSpec, Topology,
};
use proptest::prelude::*;

fn spec_strategy() -> impl Strategy<Value = ClusterSpec> {
    (
        prop::collection::vec((1u32..=8, 1.0e8..4.0e9f64, 1u64..1 << 36, 1.0e6..1.0e10f64), 1..=8),
        0u32..8,
        1.0e6..1.0e10f64,
        0.0..1e-3f64,
        (0.0..10.0f64, 0.0..2.0f64, 0.0..20.0f64),
    )
        .prop_map(|(boards, spare_ports, port_bw, latency, (idle, core, infra))| ClusterSpec {
            switch: SwitchSpec {
                port_count: boards.len() as u32 + spare_ports,
                port_bandwidth_bps: port_bw,
                per_message_latency_s: latency,
            },
            boards: boards
                .into_iter()
                .enumerate()
                .map(|(i, (cores, clock, ram, nic))| BoardSpec {
                    id: format!("node{i}"),
                    core_count: cores,
                    core_clock_hz: clock,
                    ram_bytes: ram,
                    nic_bandwidth_bps: nic,
                    mac_address: format!("aa:bb:cc:00:00:{i:02x}"),
                })
                .collect(),
            power: PowerModel { p_idle_w: idle, p_core_w: core, p_infra_w: infra },
            topology: Topology::Star,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn block_placement_is_injective_and_total(spec in spec_strategy(), frac in 0.0..1.0f64) {
        let cap = spec.total_cores();
        let ranks = 1 + ((cap - 1) as f64 * frac) as usize;
        let map = placement(&spec, ranks, PlacementPolicy::Block).unwrap();
        prop_assert_eq!(map.ranks(), ranks);
        let slots: HashSet<_> = map.entries().iter().map(|s| (s.board, s.core)).collect();
        prop_assert_eq!(slots.len(), ranks);
        for s in map.entries() {
            prop_assert!(s.board < spec.boards.len());
            prop_assert!(s.core < spec.boards[s.board].core_count as usize);
        }
        // boards fill in order: every board before the last used one is full
        let load = map.ranks_per_board(spec.boards.len());
        let last = map.boards_used() - 1;
        for (n, board) in load.iter().zip(&spec.boards).take(last) {
            prop_assert_eq!(*n, board.core_count);
        }
        prop_assert!(placement(&spec, cap + 1, PlacementPolicy::Block).is_err());
    }

    #[test]
    fn render_round_trips(spec in spec_strategy()) {
        prop_assert_eq!(load_cluster_spec(&render(&spec)).unwrap(), spec);
    }

    #[test]
    fn board_power_is_monotone(idle in 0.0..10.0f64, core in 0.0..2.0f64, k in 0u32..1000) {
        let m = PowerModel { p_idle_w: idle, p_core_w: core, p_infra_w: 0.0 };
        prop_assert!(m.board_power(k + 1) >= m.board_power(k));
    }

    #[test]
    fn power_fit_recovers_exact_lines(
        idle in 0.0..10.0f64,
        core in 0.0..2.0f64,
        ks in prop::collection::btree_set(0u32..64, 2..8),
    ) {
        let samples: Vec<(u32, f64)> = ks.iter().map(|&k| (k, idle + core * k as f64)).collect();
        let fit = fit_power_model(&samples).unwrap();
        prop_assert!(fit.max_abs_residual() < 1e-9);
        for &(k, w) in &samples {
            prop_assert!((fit.model.board_power(k) - w).abs() < 1e-9);
        }
    }
}

#[test]
fn bundled_config_loads() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/radxa4.json")).unwrap();
    let spec = load_cluster_spec(&text).unwrap();
    assert_eq!(spec.boards.len(), 4);
    assert_eq!(spec.total_cores(), 16);
    assert_eq!(spec.nominal_link_bps(), 100e6);
}
