use std::hint::black_box;

use beowulf_core::analysis::{calibrate, MeasuredTable};
use beowulf_core::cluster::{placement, ClusterSpec, PlacementPolicy, PowerModel};
use beowulf_core::kernels::{EpParams, FtParams};
use beowulf_core::sim::{ep_profile, ft_profile, predict, predict_energy};
use criterion::{criterion_group, criterion_main, Criterion};

const EP_B: &str = include_str!("../../../data/paper_ep_b.csv");
const FT_A: &str = include_str!("../../../data/paper_ft_a.csv");

fn model(c: &mut Criterion) {
    let spec = ClusterSpec::radxa(4, PowerModel { p_idle_w: 3.0154, p_core_w: 0.1708, p_infra_w: 0.0 });
    let table = MeasuredTable::from_csv_str(EP_B).unwrap().merge(&MeasuredTable::from_csv_str(FT_A).unwrap()).unwrap();
    let cal = calibrate(&table, &spec).unwrap();

    c.bench_function("calibrate paper tables", |b| b.iter(|| calibrate(black_box(&table), &spec)));

    let map = placement(&spec, 16, PlacementPolicy::Block).unwrap();
    let ep = ep_profile(&EpParams::for_class("B").unwrap(), 16).unwrap();
    c.bench_function("predict EP.B 16 ranks", |b| {
        b.iter(|| {
            let run = predict(black_box(&ep), &spec, &cal.model, &map).unwrap();
            predict_energy(&run, &spec.power, &spec)
        })
    });
    let ft = ft_profile(&FtParams::for_class("B").unwrap(), 16).unwrap();
    c.bench_function("predict FT.B 16 ranks", |b| b.iter(|| predict(black_box(&ft), &spec, &cal.model, &map)));
}

criterion_group!(benches, model);
criterion_main!(benches);
