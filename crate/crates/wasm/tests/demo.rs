use rcl_wasm::demo::{neighbors, relative_loss, synth_histogram};
use serde_json::Value;

fn json(s: Result<String, String>) -> Value {
    serde_json::from_str(&s.unwrap()).unwrap()
}

#[test]
fn neighbor_pools() {
    let corpus = "1 2 3 4 9\n1 2 3 5 9\n2 3 4 5 6\n7 8 9 10 11\n7 8 9 10 12\n1 2 3 4 6\n";
    let v = json(neighbors(corpus, "jaccard", 0.25));
    assert_eq!(v["k"], 2);
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0]["strong"], serde_json::json!([1]));
    assert_eq!(rows[0]["weak"][0]["id"], 5);
    assert_eq!(rows[0]["weak"][0]["score"], 1.0);
    assert_eq!(rows[0]["weak"][1]["same_target"], true);
    for r in rows {
        assert_eq!(r["weak"].as_array().unwrap().len(), 2);
    }
    assert!(neighbors(corpus, "hamming", 0.25).is_err());
    assert!(neighbors("1 2", "jaccard", 0.25).is_err());
}

#[test]
fn histogram_counts_different_target_pairs() {
    let v = json(synth_histogram(200, 100, 5, 0.1, 0.5, 1, "jaccard", 10, 0.7));
    let bins = v["bins"].as_array().unwrap();
    assert_eq!(bins.len(), 10);
    let total: u64 = bins.iter().map(|b| b[2].as_u64().unwrap()).sum();
    assert_eq!(total, v["pairs"].as_u64().unwrap());
    assert!(total > 0 && total <= 200 * 199 / 2);
    assert!(synth_histogram(200, 100, 5, 0.1, 0.5, 1, "jaccard", 1, 0.7).is_err());
}

#[test]
fn clamp_follows_the_pair_losses() {
    // Weak positive closer than the strong one: the weak pair is cheaper and
    // gets lifted to the boundary.
    let v = json(relative_loss(60.0, 10.0, 6, 2.0, 1.0, "unweight", 0.5, 0.1));
    assert!(v["weak_pair"].as_f64().unwrap() < v["strong_pair"].as_f64().unwrap());
    assert_eq!(v["clamped"], true);
    assert_eq!(v["weak_term"], v["strong_pair"]);
    assert_eq!(v["strong_term"], v["strong_pair"]);

    let v = json(relative_loss(10.0, 60.0, 6, 2.0, 1.0, "unweight", 0.5, 0.1));
    assert_eq!(v["clamped"], false);
    assert_eq!(v["weak_term"], v["weak_pair"]);

    let v = json(relative_loss(60.0, 10.0, 6, 2.0, 1.0, "weak", 0.5, 0.1));
    assert_eq!(v["clamped"], false);
    assert_eq!(v["weak_term"], v["weak_pair"]);
    assert_eq!(v["strong_term"], 0.0);
    assert_eq!(v["grads"].as_array().unwrap().len(), 3 + 6);

    assert!(relative_loss(10.0, 60.0, 0, 2.0, 1.0, "unweight", 0.5, 0.1).is_err());
    assert!(relative_loss(10.0, 60.0, 3, 2.0, 1.0, "three_pairs", 0.5, 0.1).is_err());
}
