#![allow(dead_code)]

use floquet_sep::{make_constant_driver, make_iid_switching_driver, DriverPoint64, Mat64, Semiflow64, SwitchState};

pub fn mat(d: &[f64]) -> Mat64 {
    Mat64::square_f64(2, d).unwrap()
}

/// Two-state iid switching with unit cells; irreducible in one delay window.
pub fn switching(seed: u64) -> DriverPoint64 {
    let states = vec![
        SwitchState { a: mat(&[-1.0, 0.5, 0.3, -0.5]), b: mat(&[0.4, 0.2, 0.1, 0.3]) },
        SwitchState { a: mat(&[-0.2, 0.1, 0.8, -1.2]), b: mat(&[0.1, 0.5, 0.3, 0.2]) },
    ];
    make_iid_switching_driver(seed, states, 1.0).unwrap()
}

pub fn pure_delay() -> DriverPoint64 {
    make_constant_driver(mat(&[0.0; 4]), mat(&[1.0, 0.0, 0.0, 1.0])).unwrap()
}

pub fn perron() -> DriverPoint64 {
    make_constant_driver(mat(&[-1.0, 1.0, 1.0, -1.0]), mat(&[0.0; 4])).unwrap()
}

pub fn flow(omega: &DriverPoint64, m: usize) -> Semiflow64 {
    Semiflow64::new(omega, m).unwrap()
}
