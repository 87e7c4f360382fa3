use chrono::NaiveDate;

use glucoach::analytics::{study_weekly_stats, Aggregate};
use glucoach::config::Config;
use glucoach::service::replay::ReplayError;
use glucoach::service::{replay, App, MemoryStore};

fn app() -> App<MemoryStore> {
    App::new(MemoryStore::new(), &Config::default()).unwrap()
}

const LOG: &str = "\
date,user,kind,field1,field2,field3
2024-03-04T07:00:00Z,ana,reading,95,fasting,
2024-03-04T17:55:00Z,ana,reading,160,post_meal,before
2024-03-04T18:40:00Z,ana,reading,140,post_meal,after
2024-03-04T18:00:00Z,ana,exercise,35,4000,150
2024-03-04T12:00:00Z,ana,meal,white rice cooked,,150
2024-03-04,ana,steps,8000,,
2024-03-04,ana,close_day,,,
2024-03-04T07:00:00Z,bo,nap,,,
2024-03-04T07:00:00Z,bo,reading,abc,fasting,
2024-03-04T07:00:00Z,bo,reading,700,fasting,
2024-03-04,bo,goal,bg_target,150-100,
2024-03-04T09:00:00Z,bo,reading,120,fasting,before
2024-03-04T09:00:00Z,bo,too,many,fields,here,x
";

#[tokio::test]
async fn applies_good_rows_and_reports_bad_ones_by_line() {
    let app = app();
    let summary = replay(&app, LOG.as_bytes()).await.unwrap();
    assert_eq!(summary.rows, 13);
    assert_eq!(summary.users_created, 2);
    let lines: Vec<u64> = summary.issues.iter().map(|i| i.line).collect();
    assert_eq!(lines, vec![9, 10, 11, 12, 14, 13], "{:#?}", summary.issues);
    assert_eq!(summary.applied, 13 - 5);
    assert!(summary.issues[0].message.contains("unknown kind 'nap'"));
    assert!(summary.issues[2].message.contains("rejected reading"));
    assert!(summary.issues[5]
        .message
        .contains("never followed by an exercise row"));

    let ana = app.user_by_login("ana").unwrap().unwrap().user_id;
    let history = app.history(ana).unwrap();
    assert_eq!(history.sessions.len(), 1);
    assert_eq!(history.sessions[0].bg_drop(), Some(20));
    let rewards = app.rewards(ana).unwrap();
    assert!(rewards
        .entries
        .iter()
        .any(|e| e.source_ref.starts_with("exercise:") && e.points == 15));
}

#[tokio::test]
async fn replayed_accounts_cannot_log_in() {
    let app = app();
    replay(&app, LOG.as_bytes()).await.unwrap();
    let profile = app.user_by_login("ana").unwrap().unwrap();
    assert_eq!(profile.email, "ana@replay.invalid");
    let err = app.login(
        &glucoach::service::app::LoginRequest {
            login: "ana".into(),
            password: String::new(),
        },
        chrono::Utc::now(),
    );
    assert!(err.is_err());
}

#[tokio::test]
async fn rejects_wrong_header() {
    let err = replay(&app(), "when,who,what\n".as_bytes())
        .await
        .unwrap_err();
    assert!(matches!(err, ReplayError::Header(_)));
}

#[tokio::test]
async fn replay_twice_is_idempotent_for_rewards() {
    let app = app();
    let log = "\
date,user,kind,field1,field2,field3
2024-03-04T07:00:00Z,ana,reading,95,fasting,
2024-03-04,ana,close_day,,,
2024-03-04,ana,close_day,,,
";
    replay(&app, log.as_bytes()).await.unwrap();
    let ana = app.user_by_login("ana").unwrap().unwrap().user_id;
    // In-range check plus three met areas; bg_monitoring, medication and diet.
    assert_eq!(app.rewards(ana).unwrap().balance, 2 + 3 * 3);
}

#[tokio::test]
async fn bundled_study_file_replays_cleanly() {
    let app = app();
    let text =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/data/study.csv")).unwrap();
    let summary = replay(&app, text.as_bytes()).await.unwrap();
    assert!(
        summary.issues.is_empty(),
        "{:?}",
        &summary.issues[..summary.issues.len().min(5)]
    );
    assert_eq!(summary.users_created, 10);
    let weeks = study_weekly_stats(
        &app.histories().unwrap(),
        NaiveDate::from_ymd_opt(2024, 3, 4).unwrap(),
        3,
    );
    assert_eq!(weeks.len(), 3);
    assert!(matches!(weeks[0].avg_bg_before, Aggregate::Mean { .. }));
}
