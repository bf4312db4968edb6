use std::path::Path;
use std::process::{Command, Output};
use std::time::Duration;

use ldpc_store::cluster::{fast_gossip, LocalCluster};
use ldpc_store::codec::{compute_fmax, default_graph};

fn ldpcstore(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldpcstore"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn sha_line(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .find(|l| l.starts_with("sha256 = "))
        .expect("sha256 line")
        .to_string()
}

fn random_file(path: &Path, len: usize) {
    let data: Vec<u8> = (0..len).map(|i| (i.wrapping_mul(2654435761) >> 7) as u8).collect();
    std::fs::write(path, data).unwrap();
}

#[test]
fn encode_decode_with_three_drops() {
    let dir = tempfile::tempdir().unwrap();
    random_file(&dir.path().join("f.bin"), 100_003);
    let enc = ldpcstore(&["encode", "f.bin", "-o", "chunks"], dir.path());
    assert!(enc.status.success(), "{}", String::from_utf8_lossy(&enc.stderr));
    assert_eq!(std::fs::read_dir(dir.path().join("chunks")).unwrap().count(), 14);
    for drop in ["0,5,12", "1,2,3", "6,7,13"] {
        let dec = ldpcstore(&["decode", "chunks", "-o", "out.bin", "--drop", drop], dir.path());
        assert!(dec.status.success(), "{}", String::from_utf8_lossy(&dec.stderr));
        assert_eq!(sha_line(&dec), sha_line(&enc));
        assert_eq!(std::fs::read(dir.path().join("out.bin")).unwrap(), std::fs::read(dir.path().join("f.bin")).unwrap());
    }
}

#[test]
fn witness_drop_exits_not_decodable() {
    let dir = tempfile::tempdir().unwrap();
    random_file(&dir.path().join("f.bin"), 5000);
    assert!(ldpcstore(&["encode", "f.bin", "-o", "chunks"], dir.path()).status.success());
    let witness = compute_fmax(&default_graph()).unwrap().witness;
    assert_eq!(witness.len(), 4);
    let drop: Vec<String> = witness.iter().map(|i| i.to_string()).collect();
    let dec = ldpcstore(&["decode", "chunks", "-o", "out.bin", "--drop", &drop.join(",")], dir.path());
    assert_eq!(dec.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&dec.stderr).contains("not decodable"));
}

#[test]
fn usage_and_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ldpcstore(&["encode"], dir.path()).status.code(), Some(2));
    assert_eq!(ldpcstore(&["encode", "absent.bin", "-o", "c"], dir.path()).status.code(), Some(3));
    std::fs::write(dir.path().join("bad.txt"), "not a graph\n").unwrap();
    assert_eq!(ldpcstore(&["evalcode", "bad.txt"], dir.path()).status.code(), Some(8));
    std::fs::write(dir.path().join("c.conf"), "seeds = 127.0.0.1:1\nbogus = 1\n").unwrap();
    assert_eq!(ldpcstore(&["hosts", "--config", "c.conf"], dir.path()).status.code(), Some(8));
}

#[test]
fn evalcode_reports_default_metrics() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("g.txt"), default_graph().to_text()).unwrap();
    let out = ldpcstore(&["evalcode", "g.txt", "--samples", "2000", "--exact-availability", "--mu", "0.95"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("f_max_blocks = 11"), "{text}");
    assert!(text.contains("exact_failure(mu=0.95)"), "{text}");
}

#[test]
fn curves_fig4_contains_rate_four_sevenths_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = ldpcstore(&["curves", "--fig", "4", "-o", "c.csv"], dir.path());
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("c.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("scheme,mu,x,failure"));
    let row = csv.lines().find(|l| l.starts_with("rate_4/7,0.95,8,")).expect("n = 8 row");
    let p: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
    // Three or more of 14 replicas lost: 1 - sum_{k<=3} C(14,k) .05^k .95^(14-k).
    assert!((p - 1.9617e-6).abs() / 1.9617e-6 < 1e-3, "{p}");
}

#[test]
fn bench_decode_prints_rate() {
    let dir = tempfile::tempdir().unwrap();
    let out = ldpcstore(&["bench", "decode", "--size", "80000", "--missing", "2", "--trials", "3"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("MB/s"));
}

#[test]
fn put_get_hosts_against_cluster() {
    let dir = tempfile::tempdir().unwrap();
    let cluster = LocalCluster::start(&dir.path().join("nodes"), "clifile", 14, fast_gossip()).unwrap();
    assert!(cluster.wait_converged(Duration::from_secs(30)));
    let seeds = cluster.addresses()[..2].join(", ");
    std::fs::write(dir.path().join("client.conf"), format!("seeds = {seeds}\nmanifest_dir = manifests\n")).unwrap();
    random_file(&dir.path().join("up.bin"), 300_000);

    let hosts = ldpcstore(&["hosts", "--config", "client.conf"], dir.path());
    assert!(hosts.status.success());
    assert_eq!(String::from_utf8_lossy(&hosts.stdout).lines().filter(|l| l.contains(" joined ")).count(), 14);

    let name = cluster.file().to_string();
    let put = ldpcstore(&["put", "up.bin", &name, "--config", "client.conf"], dir.path());
    assert!(put.status.success(), "{}", String::from_utf8_lossy(&put.stderr));
    assert!(String::from_utf8_lossy(&put.stdout).contains("stored 14/14"));
    assert!(dir.path().join("manifests").is_dir());

    let get = ldpcstore(&["get", &name, "down.bin", "--config", "client.conf"], dir.path());
    assert!(get.status.success(), "{}", String::from_utf8_lossy(&get.stderr));
    assert_eq!(std::fs::read(dir.path().join("down.bin")).unwrap(), std::fs::read(dir.path().join("up.bin")).unwrap());

    let missing = ldpcstore(&["get", "no-such-file", "x.bin", "--config", "client.conf"], dir.path());
    assert_eq!(missing.status.code(), Some(5));
    cluster.shutdown();
}

#[test]
fn unreachable_seeds_exit_network() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("client.conf"), "seeds = 127.0.0.1:1\ntimeout_ms = 500\n").unwrap();
    let out = ldpcstore(&["hosts", "--config", "client.conf"], dir.path());
    assert_eq!(out.status.code(), Some(7), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("sim.conf"),
        "nodes = 8\nseed = 3\nfiles = 2\ntrials = 20\n\n[events]\nt=5000 crash 2\nt=9000 join 2\n",
    )
    .unwrap();
    let out = ldpcstore(&["simulate", "--config", "sim.conf", "-o", "report"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["convergence.csv", "gets.csv", "summary.txt"] {
        assert!(dir.path().join("report").join(f).is_file(), "{f}");
    }
}
