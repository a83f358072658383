use painnet_bench::{small_dataset, video};

#[test]
fn dataset_covers_every_class() {
    let ds = small_dataset(2);
    assert_eq!(ds.len(), 22);
    for c in 0..11u8 {
        assert_eq!(ds.records().iter().filter(|r| r.vas == c).count(), 2);
    }
    assert!(ds.centered(0).is_ok());
}

#[test]
fn video_has_the_default_schema() {
    let v = video(40, 0);
    assert_eq!((v.frames(), v.aus()), (40, 20));
}
