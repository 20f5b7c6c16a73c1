mod common;

use std::fs;
use std::path::Path;

use common::{fixture, leaftile, leaftile_env, split_lists, synthetic_corpus, tile_source, CORPUS_SEED};
use leaftile::leafwidth::read_width_table;

fn stderr(o: &std::process::Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: &std::process::Output) {
    assert!(o.status.success(), "exit {:?}\n{}", o.status.code(), stderr(o));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Hand-measured widths of the three fixture leaves, as LW percent.
#[test]
fn widths_on_three_image_fixture() {
    let out = tempfile::tempdir().unwrap();
    let root = fixture("mini");
    ok(&leaftile(&["ingest", "--corpus", s(&root), "--out", s(out.path())]));
    ok(&leaftile(&["widths", "--corpus", s(&root), "--out", s(out.path())]));
    let rows = read_width_table(fs::File::open(out.path().join("widths.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 3);
    // field_a: two 40 px bars on 1000 px; field_b: a 50.99 px parallelogram
    // on 600 px; field_c: a 60 px bar on 1200 px.
    let want = [
        ("field_a", 40.0, 1000.0),
        ("field_b", 20800.0 / 166400f64.sqrt(), 600.0),
        ("field_c", 60.0, 1200.0),
    ];
    for (row, (id, lfw, side)) in rows.iter().zip(want) {
        assert_eq!(row.image_id, id);
        assert!((row.lfw - lfw).abs() <= 1.5, "{id}: {} vs {lfw}", row.lfw);
        assert!((row.lw - 100.0 * lfw / side).abs() <= 150.0 / side);
    }
    assert_eq!(rows[0].leaf_count, 2);
    assert_eq!(rows[1].leaf_count, 1);
}

#[test]
fn tile_writes_one_tree_per_n() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, out) = (dir.path().join("corpus"), dir.path().join("out"));
    let records = synthetic_corpus(&corpus, 10, CORPUS_SEED);
    let base = ["--corpus", s(&corpus), "--out", s(&out), "--seed", "3", "-q"];
    for cmd in ["ingest", "widths"] {
        ok(&leaftile(&[&[cmd][..], &base].concat()));
    }
    ok(&leaftile(&[&["tile", "--n", "3,5,7"][..], &base].concat()));

    let original = split_lists_of_sources(&records, &out);
    for n in [3, 5, 7] {
        let tree = out.join(format!("tiled_N{n}"));
        let lists = split_lists(&tree);
        assert!(!lists.is_empty());
        for (tile, split) in &lists {
            assert!(tile.contains(&format!("__N{n}_")));
            assert!(tree.join("images").join(format!("{tile}.png")).is_file());
            let labels = fs::read_to_string(tree.join("labels").join(format!("{tile}.txt"))).unwrap();
            assert!(!labels.is_empty(), "annotated-only trees hold no empty label files");
            assert_eq!(&original[tile_source(&format!("{tile}.png"))], split);
        }
        let side: u32 = fs::read_to_string(tree.join("tiles.csv"))
            .unwrap()
            .lines()
            .nth(1)
            .unwrap()
            .rsplit(',')
            .next()
            .unwrap()
            .parse()
            .unwrap();
        let img = image::open(
            tree.join("images")
                .join(format!("{}.png", lists.keys().next().unwrap())),
        )
        .unwrap();
        assert_eq!((img.width(), img.height()), (side, side));
    }
    let counts = fs::read_to_string(out.join("class_counts.csv")).unwrap();
    assert_eq!(counts.lines().next().unwrap(), "class,original,N3,N5,N7");
    assert!(counts.contains("\nTotal,80,"));
}

/// Splits of the source images, computed by running `emit`.
fn split_lists_of_sources(records: &[leaftile::ImageRecord], out: &Path) -> std::collections::BTreeMap<String, String> {
    let corpus = out.parent().unwrap().join("corpus");
    ok(&leaftile(&[
        "emit",
        "--corpus",
        s(&corpus),
        "--out",
        s(out),
        "--seed",
        "3",
        "-q",
    ]));
    let lists = split_lists(&out.join("original"));
    assert_eq!(lists.len(), records.len());
    lists
}

#[test]
fn dry_run_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, out) = (dir.path().join("corpus"), dir.path().join("out"));
    synthetic_corpus(&corpus, 10, CORPUS_SEED);
    let o = leaftile(&["pipeline", "--dry-run", "--corpus", s(&corpus), "--out", s(&out)]);
    ok(&o);
    assert!(!out.exists());
    let plan = String::from_utf8(o.stdout).unwrap();
    assert!(plan.lines().all(|l| l.starts_with("plan: ")), "{plan}");
    for artifact in [
        "records.jsonl",
        "widths.csv",
        "partition.csv",
        "stats.csv",
        "original",
        "tiled_N3",
        "tiled_N7",
    ] {
        assert!(plan.contains(artifact), "plan lacks {artifact}");
    }
}

#[test]
fn exit_codes_and_error_lines() {
    let dir = tempfile::tempdir().unwrap();
    let o = leaftile(&["tile", "--n", "3,x"]);
    assert_eq!(o.status.code(), Some(1));
    let o = leaftile(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    let o = leaftile(&["tile", "--n", "2", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[usage]: "));

    // Nothing to ingest.
    let o = leaftile(&["ingest", "--corpus", s(dir.path()), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    let lines: Vec<String> = stderr(&o)
        .lines()
        .filter(|l| l.starts_with("error"))
        .map(String::from)
        .collect();
    assert_eq!(lines.len(), 1);
    assert!(lines[0].starts_with("error[data]: no annotation files match"));

    // Unknown class label in an annotation.
    let bad = dir.path().join("bad");
    fs::create_dir_all(&bad).unwrap();
    fs::write(
        bad.join("x.json"),
        r#"{"imagePath":"x.jpg","imageWidth":10,"imageHeight":10,"shapes":[{"label":"rust","points":[[0,0],[5,0],[5,5]]}]}"#,
    )
    .unwrap();
    let o = leaftile(&["ingest", "--corpus", s(&bad), "--out", s(&dir.path().join("o2"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown class label"));

    ok(&leaftile(&["--help"]));
}

#[test]
fn config_from_environment_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("leaftile.toml");
    fs::write(
        &cfg,
        format!(
            "corpus_root = {:?}\noutput_root = \"from_config\"\n",
            s(&fixture("mini"))
        ),
    )
    .unwrap();
    let env = [("LEAFTILE_CONFIG", s(&cfg))];
    ok(&leaftile_env(&["ingest"], &env));
    assert!(dir.path().join("from_config/records.jsonl").is_file());
    let flag_out = dir.path().join("from_flag");
    ok(&leaftile_env(&["ingest", "--out", s(&flag_out)], &env));
    assert!(flag_out.join("records.jsonl").is_file());
}

#[test]
fn eval_mape_reads_checked_in_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, out) = (dir.path().join("corpus"), dir.path().join("out"));
    synthetic_corpus(&corpus, 10, CORPUS_SEED);
    let base = ["--corpus", s(&corpus), "--out", s(&out), "-q"];
    ok(&leaftile(&[&["ingest"][..], &base].concat()));
    ok(&leaftile(&[&["widths"][..], &base].concat()));
    let sidecar = fixture("sidecar.csv");
    let o = leaftile(&[&["eval-mape", "--predictions", s(&sidecar)][..], &base].concat());
    ok(&o);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("mape.json")).unwrap()).unwrap();
    let overall = report["overall"].as_f64().unwrap();
    assert!(overall.is_finite() && overall > 0.0 && overall < 50.0, "{overall}");
    assert_eq!(report["n"].as_u64(), Some(80));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.lines().any(|l| l.starts_with("mape All")));

    // Without a sidecar the command is a usage error.
    let o = leaftile(&[&["eval-mape"][..], &base].concat());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn predicted_widths_drive_tiling() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, out) = (dir.path().join("corpus"), dir.path().join("out"));
    synthetic_corpus(&corpus, 10, CORPUS_SEED);
    let sidecar = dir.path().join("wide.csv");
    // Every image predicted at 40% of its longest side.
    let mut text = String::from("imageId,predictedLW_percent\n");
    for class in leaftile::DiseaseClass::ALL {
        for i in 0..10 {
            text.push_str(&format!("{}_{i:03},40\n", class.name().to_lowercase()));
        }
    }
    fs::write(&sidecar, text).unwrap();
    let base = ["--corpus", s(&corpus), "--out", s(&out), "-q", "--no-images"];
    ok(&leaftile(&[&["ingest"][..], &base].concat()));
    ok(&leaftile(
        &[
            &[
                "tile",
                "--n",
                "3",
                "--width-policy",
                "prediction-only",
                "--predictions",
                s(&sidecar),
            ][..],
            &base,
        ]
        .concat(),
    ));
    let tiles = fs::read_to_string(out.join("tiled_N3/tiles.csv")).unwrap();
    for line in tiles.lines().skip(1) {
        let side: u32 = line.rsplit(',').next().unwrap().parse().unwrap();
        let img = line.split(',').nth(1).unwrap();
        // 3 x 40% exceeds the short side, so the window is clamped to it.
        let rec = fs::read_to_string(corpus.join(format!("annotations/{img}.json"))).unwrap();
        let v: serde_json::Value = serde_json::from_str(&rec).unwrap();
        let short = v["imageWidth"]
            .as_u64()
            .unwrap()
            .min(v["imageHeight"].as_u64().unwrap());
        assert_eq!(side as u64, short);
    }
    assert!(!out.join("tiled_N3/images").read_dir().unwrap().any(|_| true));
}

#[test]
fn eval_map_and_merge() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, out) = (dir.path().join("corpus"), dir.path().join("out"));
    let records = synthetic_corpus(&corpus, 10, CORPUS_SEED);
    let base = ["--corpus", s(&corpus), "--out", s(&out), "-q"];
    ok(&leaftile(&[&["ingest"][..], &base].concat()));

    // Perfect and empty detectors.
    let mut perfect = String::new();
    for r in &records {
        for g in &r.regions {
            let b = g.bbox;
            perfect.push_str(&format!(
                "{} {} 0.9 {} {} {} {}\n",
                r.id,
                g.class.index(),
                b.xmin,
                b.ymin,
                b.xmax,
                b.ymax
            ));
        }
    }
    let perfect_path = dir.path().join("perfect.txt");
    fs::write(&perfect_path, &perfect).unwrap();
    let empty_path = dir.path().join("none.txt");
    fs::write(&empty_path, "# nothing\n").unwrap();
    let det_a = format!("good={}", s(&perfect_path));
    let det_b = format!("none={}", s(&empty_path));
    let o = leaftile(&[&["eval-map", "--detections", &det_a, "--detections", &det_b][..], &base].concat());
    ok(&o);
    let table = String::from_utf8(o.stdout).unwrap();
    let map_line = table.lines().find(|l| l.starts_with("mAP")).unwrap();
    assert_eq!(
        map_line.split_whitespace().collect::<Vec<_>>(),
        ["mAP", "100.00", "0.00"]
    );
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("ap.json")).unwrap()).unwrap();
    assert_eq!(report["good"]["map"].as_f64(), Some(1.0));
    assert_eq!(fs::read_to_string(out.join("ap_table.txt")).unwrap(), table);

    // Test split only.
    let o = leaftile(&[&["eval-map", "--split", "test", "--detections", &det_a][..], &base].concat());
    ok(&o);

    // Tile-space detections for every whole box, merged back.
    ok(&leaftile(&[&["widths"][..], &base].concat()));
    ok(&leaftile(&[&["tile", "--n", "3", "--no-images"][..], &base].concat()));
    let tree = out.join("tiled_N3");
    let mut tile_dets = String::new();
    for entry in fs::read_dir(tree.join("labels")).unwrap() {
        let path = entry.unwrap().path();
        let id = path.file_stem().unwrap().to_str().unwrap().to_string();
        let side: f64 = fs::read_to_string(tree.join("tiles.csv"))
            .unwrap()
            .lines()
            .find(|l| l.starts_with(&format!("{id},")))
            .unwrap()
            .rsplit(',')
            .next()
            .unwrap()
            .parse()
            .unwrap();
        for line in fs::read_to_string(&path).unwrap().lines() {
            let v: Vec<f64> = line.split(' ').map(|x| x.parse().unwrap()).collect();
            let (cx, cy, w, h) = (v[1] * side, v[2] * side, v[3] * side, v[4] * side);
            // Larger boxes first, so whole boxes outrank their own slivers.
            let conf = (w * h / 1e5).min(1.0);
            tile_dets.push_str(&format!(
                "{id} {} {conf} {} {} {} {}\n",
                v[0],
                cx - w / 2.0,
                cy - h / 2.0,
                cx + w / 2.0,
                cy + h / 2.0
            ));
        }
    }
    let tile_path = dir.path().join("tile_dets.txt");
    fs::write(&tile_path, tile_dets).unwrap();
    let merged = dir.path().join("merged.txt");
    ok(&leaftile(
        &[
            &[
                "merge",
                "--tiles",
                s(&tree.join("tiles.csv")),
                "--detections",
                s(&tile_path),
                "--output",
                s(&merged),
            ][..],
            &base,
        ]
        .concat(),
    ));
    let merged_text = fs::read_to_string(&merged).unwrap();
    let ids: std::collections::BTreeSet<&str> = merged_text.lines().map(|l| l.split(' ').next().unwrap()).collect();
    assert!(ids.iter().all(|id| records.iter().any(|r| r.id == *id)));
    let det_m = format!("merged={}", s(&merged));
    let o = leaftile(&[&["eval-map", "--detections", &det_m][..], &base].concat());
    ok(&o);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("ap.json")).unwrap()).unwrap();
    let m = report["merged"]["map"].as_f64().unwrap();
    assert!(m > 0.5, "{m}");
}
