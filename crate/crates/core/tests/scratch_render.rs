//! Scratch render inspection (not part of the final suite).
use vxc_core::data::{build_dataset, Split};

#[test]
#[ignore]
fn render_stats() {
    let tmp = tempfile::tempdir().unwrap();
    let m = build_dataset(tmp.path(), 4, 2, 5, 42, 32, 32, 32).unwrap();
    for e in m.split(Split::Train) {
        let views: Vec<vxc_core::Tensor<f64>> = m.load_views(e).unwrap();
        let grid = m.load_grid(e).unwrap();
        let occ_frac = grid.count() as f64 / 32768.0;
        let mut s = format!("{} occ {:.3} |", e.id, occ_frac);
        for v in &views {
            let non_white = v.data()[..1024].iter().filter(|&&p| p < 0.99).count();
            s += &format!(" {:4}", non_white);
        }
        println!("{s} non-white px of 1024");
    }
}
