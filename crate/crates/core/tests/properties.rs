use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;

use bicgrid::controller::weighted_laplacian;
use bicgrid::network::{
    build_admittance, rotate_to_common, rotate_to_machine, BusId, Line, LoadAdmittance,
};
use bicgrid::report::{read_csv, write_csv};
use bicgrid::sim::{GeneratorSample, TrajectoryRecord};

fn sample() -> impl Strategy<Value = GeneratorSample> {
    prop::array::uniform9(-1e6f64..1e6).prop_map(|v| GeneratorSample {
        omega: v[0],
        delta: v[1],
        e_q_prime: v[2],
        p: v[3],
        q: v[4],
        t_m: v[5],
        e_f: v[6],
        sigma_t: v[7],
        sigma_e: v[8],
    })
}

fn records() -> impl Strategy<Value = Vec<TrajectoryRecord>> {
    (1usize..4, 1usize..5).prop_flat_map(|(g, b)| {
        prop::collection::vec(
            (
                0.0f64..1e4,
                prop::collection::vec(sample(), g),
                prop::collection::vec(0.0f64..2.0, b),
            )
                .prop_map(|(time, generators, bus_voltage)| TrajectoryRecord {
                    time,
                    generators,
                    bus_voltage,
                }),
            1..6,
        )
    })
}

proptest! {
    #[test]
    fn rotation_is_unitary(q in -5.0f64..5.0, d in -5.0f64..5.0, delta in -10.0f64..10.0) {
        let (big_q, big_d) = rotate_to_common(q, d, delta);
        prop_assert!((big_q.hypot(big_d) - q.hypot(d)).abs() <= 1e-12 * (1.0 + q.hypot(d)));
        let (q2, d2) = rotate_to_machine(big_q, big_d, delta);
        prop_assert!((q2 - q).abs() <= 1e-12 * (1.0 + q.abs()));
        prop_assert!((d2 - d).abs() <= 1e-12 * (1.0 + d.abs()));
    }

    #[test]
    fn admittance_is_symmetric_with_zero_row_sums(
        raw in prop::collection::vec((0usize..6, 0usize..6, 0.0f64..0.1, 0.01f64..1.0), 1..12),
        load in (0usize..6, 0.0f64..2.0, -1.0f64..1.0),
    ) {
        let lines: Vec<Line> = raw.iter()
            .filter(|(a, b, _, _)| a != b)
            .map(|&(a, b, r, x)| Line::new(a, b, r, x))
            .collect();
        prop_assume!(!lines.is_empty());
        let y = build_admittance(6, &lines, &[], &[]).unwrap();
        prop_assert!(y.is_symmetric());
        for i in 0..6 {
            let row: Complex64 = (0..6).map(|j| y.get(i, j)).sum();
            prop_assert!(row.norm() < 1e-9 * (1.0 + y.get(i, i).norm()));
        }
        let extra = LoadAdmittance { bus: BusId(load.0), admittance: Complex64::new(load.1, load.2) };
        let y2 = build_admittance(6, &lines, &[extra], &[]).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let diff = y2.get(i, j) - y.get(i, j);
                if i == load.0 && j == load.0 {
                    prop_assert!((diff - extra.admittance).norm() < 1e-12 * (1.0 + y.get(i, i).norm()));
                } else {
                    prop_assert_eq!(diff, Complex64::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn weighted_laplacian_structure(
        n in 2usize..8,
        bits in prop::collection::vec(any::<bool>(), 28),
        g in prop::collection::vec(0.0f64..3.0, 8),
    ) {
        let mut a = DMatrix::zeros(n, n);
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                if bits[k] {
                    a[(i, j)] = 1.0;
                    a[(j, i)] = 1.0;
                }
                k += 1;
            }
        }
        let l = weighted_laplacian(&a, &g[..n]).unwrap();
        for i in 0..n {
            let row: f64 = (0..n).map(|j| l[(i, j)]).sum();
            prop_assert!(row.abs() < 1e-12);
            prop_assert!(l[(i, i)] >= 0.0);
            for j in 0..n {
                prop_assert_eq!(l[(i, j)], l[(j, i)]);
                if i != j {
                    prop_assert!(l[(i, j)] <= 0.0);
                }
            }
        }
    }

    #[test]
    fn csv_round_trip_is_exact(recs in records()) {
        let mut buf = Vec::new();
        write_csv(&recs, &mut buf).unwrap();
        let back = read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back, recs);
    }
}
