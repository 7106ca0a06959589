//! Helpers shared by the integration tests: a brute-force feature oracle,
//! hand-built corpora, and a small HTTP client.
#![allow(dead_code)]

use std::collections::BTreeSet;

use cqa_detect::corpus::{Label, QASession};
use cqa_detect::textstats::distinct_words;

pub fn session(
    url: &str,
    questioner: &str,
    answerer: &str,
    title: &str,
    question: &str,
    answer: &str,
    label: Option<Label>,
) -> QASession {
    QASession {
        url: url.to_string(),
        title: title.to_string(),
        question_text: question.to_string(),
        answer_text: answer.to_string(),
        questioner_id: questioner.to_string(),
        answerer_id: answerer.to_string(),
        category: None,
        ask_time: 1_000,
        answer_time: 2_000,
        likes: 0,
        other_answers: 0,
        rating: None,
        label,
    }
}

// ---- brute-force feature oracle ----
//
// Recounts everything from the raw session list on every call. Shares no
// code with the library beyond tokenization.

fn history_grade(normal: u64, campaign: u64) -> f64 {
    if normal + campaign < 5 {
        0.5
    } else if campaign == 0 {
        0.5 / (normal as f64 + 0.5)
    } else {
        campaign as f64 / (normal + campaign) as f64
    }
}

/// [sgqid, sgaid, sgtext] of `s` against the labeled sessions in `corpus`.
/// With `leave_out`, the session with `s.url` is dropped from the database
/// first.
pub fn brute_features(corpus: &[QASession], s: &QASession, leave_out: bool, neutral: f64) -> [f64; 3] {
    let db: Vec<&QASession> = corpus
        .iter()
        .filter(|d| d.label.is_some())
        .filter(|d| !(leave_out && d.url == s.url))
        .collect();

    let mut q = [0u64; 2];
    let mut a = [0u64; 2];
    for d in &db {
        let k = d.label.unwrap().as_u8() as usize;
        if d.questioner_id == s.questioner_id {
            q[k] += 1;
        }
        if d.answerer_id == s.answerer_id {
            a[k] += 1;
        }
    }

    let words = distinct_words(s);
    let sgtext = if words.is_empty() {
        neutral
    } else {
        let db_words: Vec<(Label, BTreeSet<String>)> =
            db.iter().map(|d| (d.label.unwrap(), distinct_words(d))).collect();
        let big_n = db_words.iter().filter(|(l, _)| *l == Label::Normal).count() as f64;
        let big_s = db_words.iter().filter(|(l, _)| *l == Label::Campaign).count() as f64;
        let mut total = 0.0;
        for w in &words {
            let n_i = db_words.iter().filter(|(l, ws)| *l == Label::Normal && ws.contains(w)).count() as f64;
            let s_i = db_words.iter().filter(|(l, ws)| *l == Label::Campaign && ws.contains(w)).count() as f64;
            total += ((big_n + 1.0) / (n_i + 1.0)).ln() * ((s_i + 1.0) / (big_s + 1.0));
        }
        total / words.len() as f64
    };
    [history_grade(q[0], q[1]), history_grade(a[0], a[1]), sgtext]
}

// ---- hand-built corpora ----

const N: Option<Label> = Some(Label::Normal);
const C: Option<Label> = Some(Label::Campaign);

/// questioner, answerer, title, question, answer, label
type Row<'a> = (&'a str, &'a str, &'a str, &'a str, &'a str, Option<Label>);

/// Small English forum: one prolific asker, a shop account that only posts
/// pitches, a doctor who answers honestly, and a few one-off users.
pub fn corpus_tea_shop() -> Vec<QASession> {
    let rows: &[Row] = &[
        ("amy", "doc", "Losing weight", "How do I lose weight fast?", "Eat less sugar and walk daily.", N),
        ("amy", "shop", "Slimming tea", "Which slimming tea works?", "Buy GreenLeaf tea at greenleaf shop, 50% off!", C),
        ("amy", "doc", "Sleep", "Why can't I sleep?", "Avoid screens before bed.", N),
        ("amy", "shop", "Tea brand", "Best tea brand for health?", "GreenLeaf tea, buy now at the shop.", C),
        ("amy", "doc", "Headache", "Headache every morning?", "Drink water and see a doctor.", N),
        ("amy", "shop", "Detox", "Does detox tea work?", "GreenLeaf detox tea works, order at greenleaf shop.", C),
        ("bob", "doc", "Back pain", "Back pain after running", "Stretch and rest for a week.", N),
        ("bob", "shop", "Energy", "How to get more energy?", "GreenLeaf energy tea, 50% off today!", C),
        ("cat", "shop", "Gift", "Gift for my mother?", "GreenLeaf tea gift box, buy at the shop.", C),
        ("cat", "doc", "Cold", "Cold remedies?", "Rest, fluids, and honey.", N),
        ("dan", "eve", "Running shoes", "Which running shoes?", "Any shoes that fit well.", N),
        ("eve", "dan", "Diet", "Is a vegan diet healthy?", "Yes if you plan your protein.", N),
        ("amy", "eve", "Tea", "Is green tea healthy?", "Green tea in moderation is fine.", N),
        ("fay", "shop", "Weight", "Lose weight without exercise?", "Buy GreenLeaf slimming tea now!", C),
    ];
    build("tea", rows)
}

/// Mixed CJK and Latin text, including a session with no words at all and a
/// user who both asks and answers.
pub fn corpus_cjk_mixed() -> Vec<QASession> {
    let rows: &[Row] = &[
        ("小明", "店主", "减肥", "怎么减肥最快？", "推荐绿叶减肥茶，淘宝店购买，五折优惠！", C),
        ("小明", "医生", "失眠", "晚上睡不着怎么办？", "睡前不要看手机。", N),
        ("小红", "店主", "减肥茶", "减肥茶有用吗？", "绿叶减肥茶很有效，淘宝店有售。", C),
        ("小红", "医生", "头痛", "早上头痛是什么原因？", "多喝水，必要时就医。", N),
        ("小明", "店主", "礼物", "送妈妈什么礼物？", "绿叶茶礼盒，淘宝店五折。", C),
        ("小明", "医生", "感冒", "感冒了怎么办？", "多休息多喝水。", N),
        ("小明", "医生", "跑步", "跑步膝盖疼", "注意热身，减少跑量。", N),
        ("小明", "店主", "GreenLeaf", "GreenLeaf 茶好吗？", "GreenLeaf 绿叶茶 buy now 淘宝店", C),
        ("医生", "小红", "问题", "医生也有问题吗？", "当然，医生也会生病。", N),
        ("小红", "医生", "?", "??", "!!!", N),
        ("老王", "店主", "排毒", "排毒茶怎么样？", "绿叶排毒茶，淘宝店购买。", C),
        ("老王", "医生", "血压", "血压高怎么办？", "少盐饮食，定期检查。", N),
        ("小红", "店主", "美容", "怎么让皮肤变好？", "绿叶美容茶，五折优惠，淘宝店。", C),
        ("小红", "小明", "电影", "最近有什么好电影？", "我觉得新上映的那部不错。", N),
        ("店主", "医生", "胃痛", "胃痛吃什么？", "清淡饮食，去医院检查。", N),
        ("小明", "店主", "瘦身", "夏天怎么瘦身？", "绿叶瘦身茶 Buy 淘宝店 50% off", C),
        ("老王", "小红", "旅游", "国庆去哪里玩？", "去云南看看吧。", N),
        ("老王", "店主", "减肥", "中年人减肥难吗？", "喝绿叶减肥茶就不难，淘宝店有。", C),
        ("小红", "医生", "过敏", "花粉过敏怎么办？", "避免接触，遵医嘱用药。", N),
        ("医生", "店主", "茶", "什么茶最好？", "绿叶茶最好，淘宝店购买。", C),
    ];
    build("cjk", rows)
}

/// Fifty formula-built sessions with overlapping asker and answerer pools
/// and a shifting vocabulary.
pub fn corpus_formula() -> Vec<QASession> {
    let pitch = ["discount", "buy", "shop", "offer", "brand", "cheap", "order"];
    let plain = ["why", "how", "doctor", "sleep", "water", "walk", "rest", "think", "maybe", "friend"];
    (0..50)
        .map(|i: usize| {
            let questioner = format!("u{}", i % 7);
            let answerer = format!("u{}", (i * 3) % 11);
            let campaign = i.is_multiple_of(3) || (i * 3) % 11 == 2;
            let mut answer: Vec<&str> = (0..4).map(|k| plain[(i * 7 + k * 3) % plain.len()]).collect();
            if campaign {
                answer.extend((0..3).map(|k| pitch[(i + k * 2) % pitch.len()]));
            } else if i % 4 == 1 {
                answer.push(pitch[i % pitch.len()]);
            }
            let question = format!("{} {} question {i}", plain[i % plain.len()], plain[(i / 2) % plain.len()]);
            let mut s = session(
                &format!("https://forum.test/formula/{i}"),
                &questioner,
                &answerer,
                &format!("topic {}", i % 5),
                &question,
                &answer.join(" "),
                Some(Label::from_bool(campaign)),
            );
            s.ask_time = 10_000 + 100 * i as i64;
            s.answer_time = s.ask_time + 50;
            s
        })
        .collect()
}

fn build(prefix: &str, rows: &[Row]) -> Vec<QASession> {
    rows.iter()
        .enumerate()
        .map(|(i, (q, a, title, question, answer, label))| {
            let mut s = session(
                &format!("https://forum.test/{prefix}/{i}"),
                q,
                a,
                title,
                question,
                answer,
                *label,
            );
            s.ask_time = 1_000 + 60 * i as i64;
            s.answer_time = s.ask_time + 30;
            s
        })
        .collect()
}

pub fn hand_corpora() -> Vec<(&'static str, Vec<QASession>)> {
    vec![
        ("tea_shop", corpus_tea_shop()),
        ("cjk_mixed", corpus_cjk_mixed()),
        ("formula", corpus_formula()),
    ]
}

// ---- HTTP ----

pub struct Http {
    agent: ureq::Agent,
}

impl Default for Http {
    fn default() -> Self {
        Http::new()
    }
}

impl Http {
    pub fn new() -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        Http { agent }
    }

    /// POST returning (status, body text).
    pub fn post(&self, url: &str, content_type: &str, body: impl AsRef<[u8]>) -> (u16, String) {
        let mut resp = self
            .agent
            .post(url)
            .header("Content-Type", content_type)
            .send(body.as_ref())
            .expect("request failed");
        let status = resp.status().as_u16();
        (status, resp.body_mut().read_to_string().expect("body"))
    }

    pub fn post_json(&self, url: &str, body: &str) -> (u16, String) {
        self.post(url, "application/json", body)
    }

    pub fn get(&self, url: &str) -> (u16, String) {
        let mut resp = self.agent.get(url).call().expect("request failed");
        let status = resp.status().as_u16();
        (status, resp.body_mut().read_to_string().expect("body"))
    }
}

// ---- test servers ----

pub const REGULAR: &str = "reader-token";
pub const HELPER: &str = "helper-token";
pub const ADMIN: &str = "admin-token";

pub fn tokens() -> cqa_detect::server::TokenTable {
    use cqa_detect::role::Role;
    cqa_detect::server::TokenTable::new()
        .with(REGULAR, Role::Regular)
        .with(HELPER, Role::Helper)
        .with(ADMIN, Role::Admin)
}

/// Starts a server on an ephemeral port whose store is seeded with `seed`
/// (and a model trained on it, if it holds both classes).
pub fn start_server(
    seed: &[QASession],
    store_dir: Option<&std::path::Path>,
    retrain_every: Option<u64>,
) -> cqa_detect::server::RunningServer {
    use cqa_detect::adaptive::RetrainTrigger;
    use cqa_detect::server::{seed_store, RunningServer, ServerConfig, Service};
    use cqa_detect::store::Store;

    let cfg = ServerConfig {
        tokens: tokens(),
        trigger: RetrainTrigger { every: retrain_every },
        ..ServerConfig::default()
    };
    let mut store = match store_dir {
        Some(dir) => Store::open(dir).unwrap(),
        None => Store::in_memory(),
    };
    if !seed.is_empty() {
        seed_store(&mut store, seed, &cfg.params).unwrap();
    }
    RunningServer::start(Service::from_store(store, &cfg), "127.0.0.1:0").unwrap()
}

/// Submission body for `s`: every field except the label.
pub fn submission(s: &QASession) -> String {
    s.unlabeled().to_line()
}

pub fn json_f64(x: f64) -> String {
    serde_json::to_string(&x).unwrap()
}
