use std::collections::BTreeSet;

use serde_json::Value;
use webtask_core::task::TaskSet;
use webtask_fixtures::{fixture_registry, scripts_dir, tasks_file};

fn script(name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(scripts_dir().join(name)).unwrap()).unwrap()
}

#[test]
fn agent_scripts_share_the_caption_table() {
    let captions = &script("captions.json")["captions"];
    for name in ["oracle.json", "adversarial.json"] {
        assert_eq!(&script(name)["captions"], captions, "{name} captions drifted from captions.json");
    }
}

#[test]
fn agent_scripts_cover_exactly_the_task_pack() {
    let tasks = TaskSet::load(&tasks_file()).unwrap();
    let ids: BTreeSet<String> = tasks.tasks.iter().map(|t| t.task_id.clone()).collect();
    for name in ["oracle.json", "adversarial.json"] {
        let keys: BTreeSet<String> = script(name)["agents"].as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ids, "{name}");
    }
}

#[test]
fn task_pack_references_resolve() {
    let tasks = TaskSet::load(&tasks_file()).unwrap();
    assert!(fixture_registry().missing_for(&tasks.tasks).is_empty());
    for task in &tasks.tasks {
        for img in &task.input_images {
            assert!(tasks.base_dir.join(img).is_file(), "{}: {}", task.task_id, img.display());
        }
    }
}

#[test]
fn mug_images_separate_at_the_task_threshold() {
    use webtask_core::eval::eval_fuzzy_image_match;
    use webtask_core::raster::Raster;
    let dir = webtask_fixtures::pack_dir();
    let green = Raster::load(&dir.join("images/mug_green.png")).unwrap();
    let served = Raster::load(&dir.join("www/shopping.test/img/mug_green.png")).unwrap();
    let yellow = Raster::load(&dir.join("www/shopping.test/img/mug_yellow.png")).unwrap();
    assert_eq!(eval_fuzzy_image_match(&served, &green, 0.9), 1);
    assert_eq!(eval_fuzzy_image_match(&yellow, &green, 0.9), 0);
}
