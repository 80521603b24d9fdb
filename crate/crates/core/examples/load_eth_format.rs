//! Reading `frame_id agent_id x y` trajectory files into scenes and
//! observed/future windows.
//!
//! Run: `cargo run --release --example load_eth_format [file]`
//! Without a file, a small two-agent recording is written to a temp dir first.

use continual_traj::data::{load_trajectory_file, window_split, DEFAULT_OBS_LEN, DEFAULT_PRED_LEN};

fn main() -> continual_traj::Result<()> {
    let path = match std::env::args().nth(1) {
        Some(p) => std::path::PathBuf::from(p),
        None => {
            let p = std::env::temp_dir().join("two_walkers.txt");
            let mut text = String::from("# frame agent x y\n");
            for f in 0..30 {
                let t = f as f64 * 0.4;
                text.push_str(&format!("{} 1 {:.2} {:.2}\n", f * 10, t, 0.5 * t.sin()));
                text.push_str(&format!("{} 2 {:.2} {:.2}\n", f * 10, 10.0 - t, 3.0));
            }
            std::fs::write(&p, text)?;
            p
        }
    };
    let dom = load_trajectory_file(&path)?;
    println!(
        "{}: {} train / {} val / {} test windows of {} frames",
        dom.name,
        dom.train.len(),
        dom.val.len(),
        dom.test.len(),
        DEFAULT_OBS_LEN + DEFAULT_PRED_LEN
    );
    let w = window_split(&dom.train[0], DEFAULT_OBS_LEN, DEFAULT_PRED_LEN)?;
    for (a, id) in w.agent_ids.iter().enumerate() {
        println!(
            "agent {id}: last observed {:?}, first future displacement {:?}, final position {:?}",
            w.last_obs[a],
            w.fut_disp[a][0],
            w.fut_abs[a].last().unwrap()
        );
    }
    Ok(())
}
