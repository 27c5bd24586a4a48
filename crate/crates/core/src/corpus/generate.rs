use std::collections::{BTreeMap, BTreeSet};

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, Dialogue, Entity, KnowledgeBase, Speaker, Turn};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotDef {
    pub name: String,
    pub values: Vec<String>,
}

/// One user request and the system reply that answers it. Each side lists
/// interchangeable templates; `{slot}` is replaced by the dialogue's entity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub usr: Vec<String>,
    pub sys: Vec<String>,
}

/// A domain: its slots (the first slot identifies a knowledge-base row) and
/// the exchanges a dialogue is assembled from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainDef {
    pub name: String,
    pub slots: Vec<SlotDef>,
    pub opening: Exchange,
    pub middle: Vec<Exchange>,
    pub closing: Exchange,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub domains: Vec<DomainDef>,
    pub dialogues_per_domain: usize,
    pub multi_domain_fraction: f64,
    /// Inclusive range of turns per dialogue; both ends even.
    pub min_turns: usize,
    pub max_turns: usize,
    pub seed: u64,
}

fn placeholders(template: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        let Some(len) = rest[start..].find('}') else { break };
        out.push(rest[start + 1..start + len].to_string());
        rest = &rest[start + len + 1..];
    }
    out
}

fn fill(template: &str, row: &IndexMap<String, String>) -> String {
    let mut text = template.to_string();
    for (slot, value) in row {
        text = text.replace(&format!("{{{slot}}}"), value);
    }
    text
}

impl DomainDef {
    fn exchanges(&self) -> impl Iterator<Item = &Exchange> {
        std::iter::once(&self.opening)
            .chain(self.middle.iter())
            .chain(std::iter::once(&self.closing))
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::InvalidSpec(m));
        if self.domains.len() < 3 {
            return bad(format!("{} domains given; at least 3 are needed", self.domains.len()));
        }
        if !(0.0..=1.0).contains(&self.multi_domain_fraction) {
            return bad(format!("multi_domain_fraction {} outside [0,1]", self.multi_domain_fraction));
        }
        if self.min_turns < 2
            || self.min_turns > self.max_turns
            || self.min_turns % 2 != 0
            || self.max_turns % 2 != 0
        {
            return bad(format!("turn range {}..={} must be even and >= 2", self.min_turns, self.max_turns));
        }
        if self.multi_domain_fraction > 0.0 && self.max_turns < 4 {
            return bad("multi-domain dialogues need max_turns >= 4".into());
        }
        let mut names = BTreeSet::new();
        let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
        for d in &self.domains {
            if !names.insert(d.name.as_str()) {
                return bad(format!("duplicate domain `{}`", d.name));
            }
            if d.slots.is_empty() || d.slots[0].values.is_empty() {
                return bad(format!("domain `{}` needs an identifying slot with values", d.name));
            }
            let declared: BTreeSet<&str> = d.slots.iter().map(|s| s.name.as_str()).collect();
            for slot in &d.slots {
                if slot.values.is_empty() || slot.values.iter().any(|v| v.trim().is_empty()) {
                    return bad(format!("slot `{}.{}` has an empty inventory or value", d.name, slot.name));
                }
                for v in &slot.values {
                    if let Some(other) = owner.insert(v.as_str(), d.name.as_str()) {
                        if other != d.name {
                            return bad(format!("value `{v}` shared by `{other}` and `{}`", d.name));
                        }
                    }
                }
            }
            for ex in d.exchanges() {
                if ex.usr.is_empty() || ex.sys.is_empty() {
                    return bad(format!("domain `{}` has an exchange without templates", d.name));
                }
                for t in ex.usr.iter().chain(&ex.sys) {
                    for p in placeholders(t) {
                        if !declared.contains(p.as_str()) {
                            return bad(format!("template `{t}` references undeclared slot `{p}`"));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Four-domain desk-scale corpus in the style of restaurant/hotel booking data.
    pub fn toy(dialogues_per_domain: usize, seed: u64) -> Self {
        fn ex(usr: &[&str], sys: &[&str]) -> Exchange {
            Exchange {
                usr: usr.iter().map(|s| s.to_string()).collect(),
                sys: sys.iter().map(|s| s.to_string()).collect(),
            }
        }
        fn slot(name: &str, values: &[&str]) -> SlotDef {
            SlotDef {
                name: name.into(),
                values: values.iter().map(|s| s.to_string()).collect(),
            }
        }
        fn phones(prefix: &str, n: usize) -> Vec<String> {
            (0..n).map(|i| format!("{prefix}{:04}", 1013 + 577 * i)).collect()
        }
        let phone_exchange = ex(
            &["what is their phone number ?", "can i have the phone number please ?"],
            &["the phone number of {name} is {phone}", "you can reach {name} on {phone}"],
        );
        let area_exchange = ex(
            &["which part of town is it in ?", "where is it located ?"],
            &["{name} is in the {area}", "it is in the {area}"],
        );

        let restaurant_names = [
            "golden palace", "curry garden", "the nirala", "saffron brasserie", "bedouin", "hotpot house",
            "la margherita", "midsummer house", "royal spice", "kymmoy", "pipasha", "zizzi bistro",
        ];
        let restaurant = DomainDef {
            name: "restaurant".into(),
            slots: vec![
                slot("name", &restaurant_names),
                slot("food", &["chinese", "indian", "italian", "lebanese", "french", "korean"]),
                slot("area", &["riverside", "old town", "market square"]),
                SlotDef { name: "phone".into(), values: phones("0122350", restaurant_names.len()) },
            ],
            opening: ex(
                &[
                    "i am looking for a {food} restaurant in the {area}",
                    "can you find me a {food} place to eat in the {area} ?",
                    "i would like some {food} food in the {area}",
                ],
                &["{name} serves {food} food in the {area}", "how about {name} ? it is a {food} restaurant in the {area}"],
            ),
            middle: vec![
                phone_exchange.clone(),
                area_exchange.clone(),
                ex(&["what type of food do they serve ?"], &["{name} serves {food} food", "they serve {food} food"]),
            ],
            closing: ex(
                &["thank you , goodbye", "thanks , that is all i need"],
                &["you are welcome , enjoy your meal", "have a nice day , goodbye"],
            ),
        };

        let hotel_names = [
            "acorn lodge", "alpha milton", "avalon inn", "bridge house", "carolina manor", "el shaddai",
            "gonville hotel", "hamilton lodge", "lensfield hotel", "worth house", "hobsons rest", "ashley court",
        ];
        let hotel = DomainDef {
            name: "hotel".into(),
            slots: vec![
                slot("name", &hotel_names),
                slot("stars", &["two star", "three star", "four star", "five star"]),
                slot("area", &["harbour side", "city centre", "west end"]),
                SlotDef { name: "phone".into(), values: phones("0122360", hotel_names.len()) },
            ],
            opening: ex(
                &[
                    "i need a {stars} hotel in the {area}",
                    "can you find me a {stars} place to stay in the {area} ?",
                    "i would like a {stars} room in the {area}",
                ],
                &["{name} is a {stars} hotel in the {area}", "how about {name} ? it is a {stars} hotel in the {area}"],
            ),
            middle: vec![
                phone_exchange.clone(),
                area_exchange.clone(),
                ex(&["how many stars does it have ?"], &["{name} is rated {stars}", "it is a {stars} hotel"]),
            ],
            closing: ex(
                &["thank you , goodbye", "thanks , that is all i need"],
                &["you are welcome , enjoy your stay", "have a nice day , goodbye"],
            ),
        };

        let attraction_names = [
            "kings college", "byard gallery", "scott polar museum", "water play park", "fitzwilliam museum",
            "all saints church", "castle galleries", "whipple museum", "jesus green pool", "parkside pools",
            "broughton gallery", "primavera studio",
        ];
        let attraction = DomainDef {
            name: "attraction".into(),
            slots: vec![
                slot("name", &attraction_names),
                slot("type", &["architecture", "boating", "theatre", "cinema", "nightclub", "sculpture"]),
                slot("area", &["university quarter", "north bank", "east side"]),
                SlotDef { name: "phone".into(), values: phones("0122370", attraction_names.len()) },
            ],
            opening: ex(
                &[
                    "i want to visit some {type} in the {area}",
                    "is there any {type} to see in the {area} ?",
                    "i am interested in {type} in the {area}",
                ],
                &["{name} offers {type} in the {area}", "you could try {name} , it has {type} in the {area}"],
            ),
            middle: vec![
                phone_exchange,
                area_exchange,
                ex(&["what kind of attraction is it ?"], &["{name} is known for {type}", "it is known for {type}"]),
            ],
            closing: ex(
                &["thank you , goodbye", "thanks , that is all i need"],
                &["you are welcome , enjoy your visit", "have a nice day , goodbye"],
            ),
        };

        let cars = [
            "black toyota", "white skoda", "red volvo", "blue honda", "grey ford", "yellow tesla",
            "silver audi", "green lexus", "purple fiat",
        ];
        let taxi = DomainDef {
            name: "taxi".into(),
            slots: vec![
                slot("car", &cars),
                slot(
                    "destination",
                    &["central station", "airport terminal", "bus depot", "science park", "grafton mall"],
                ),
                slot("leave", &["17:15", "09:30", "12:45", "20:00", "06:50"]),
                SlotDef { name: "phone".into(), values: (0..cars.len()).map(|i| format!("07700{:06}", 900_113 + 311 * i)).collect() },
            ],
            opening: ex(
                &[
                    "i need a taxi to {destination} at {leave}",
                    "please book a taxi to {destination} leaving at {leave}",
                    "can you get me a cab to {destination} by {leave} ?",
                ],
                &["i have booked a {car} to {destination} for {leave}", "a {car} will take you to {destination} at {leave}"],
            ),
            middle: vec![
                ex(
                    &["what is the contact number ?", "can i have the phone number please ?"],
                    &["the contact number for the {car} is {phone}", "you can reach the driver on {phone}"],
                ),
                ex(&["what car is it ?", "what kind of car will come ?"], &["it is a {car}", "look out for a {car}"]),
            ],
            closing: ex(
                &["thank you , goodbye", "thanks , that is all i need"],
                &["you are welcome , have a safe trip", "have a nice day , goodbye"],
            ),
        };

        Self {
            domains: vec![restaurant, hotel, attraction, taxi],
            dialogues_per_domain,
            multi_domain_fraction: 0.1,
            min_turns: 4,
            max_turns: 8,
            seed,
        }
    }
}

fn build_kb(spec: &CorpusSpec, rng: &mut ChaCha8Rng) -> KnowledgeBase {
    let mut kb = KnowledgeBase::default();
    for d in &spec.domains {
        let ident = &d.slots[0];
        let rows = ident
            .values
            .iter()
            .enumerate()
            .map(|(i, id_value)| {
                let mut row = IndexMap::new();
                row.insert(ident.name.clone(), id_value.clone());
                for s in &d.slots[1..] {
                    let value = if s.values.len() == ident.values.len() {
                        s.values[i].clone()
                    } else {
                        s.values.choose(rng).cloned().unwrap_or_default()
                    };
                    row.insert(s.name.clone(), value);
                }
                row
            })
            .collect();
        kb.domains.insert(d.name.clone(), rows);
    }
    kb
}

fn push_exchange(
    turns: &mut Vec<Turn>,
    ex: &Exchange,
    domain: &str,
    row: &IndexMap<String, String>,
    rng: &mut ChaCha8Rng,
) {
    let usr = ex.usr.choose(rng).expect("validated");
    let sys = ex.sys.choose(rng).expect("validated");
    turns.push(Turn {
        speaker: Speaker::Usr,
        domain: domain.to_string(),
        text: fill(usr, row),
        entities: Vec::new(),
    });
    let mut entities: Vec<Entity> = Vec::new();
    for slot in placeholders(sys) {
        let e = Entity::new(&slot, &row[&slot]);
        if !entities.contains(&e) {
            entities.push(e);
        }
    }
    turns.push(Turn {
        speaker: Speaker::Sys,
        domain: domain.to_string(),
        text: fill(sys, row),
        entities,
    });
}

/// Opening, `n - 2` distinct middles (repeating once exhausted), closing.
fn domain_segment(
    turns: &mut Vec<Turn>,
    def: &DomainDef,
    row: &IndexMap<String, String>,
    exchanges: usize,
    with_closing: bool,
    rng: &mut ChaCha8Rng,
) {
    push_exchange(turns, &def.opening, &def.name, row, rng);
    let middles = exchanges.saturating_sub(1 + usize::from(with_closing));
    let mut order: Vec<usize> = (0..def.middle.len()).collect();
    order.shuffle(rng);
    for i in 0..middles {
        if def.middle.is_empty() {
            break;
        }
        let ex = &def.middle[order[i % order.len()]];
        push_exchange(turns, ex, &def.name, row, rng);
    }
    if with_closing && exchanges >= 2 {
        push_exchange(turns, &def.closing, &def.name, row, rng);
    }
}

/// Deterministic synthetic corpus plus its knowledge base.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<(Corpus, KnowledgeBase), CorpusError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let kb = build_kb(spec, &mut rng);
    let mut dialogues = Vec::with_capacity(spec.domains.len() * spec.dialogues_per_domain);
    for (di, def) in spec.domains.iter().enumerate() {
        let rows = kb.domain(&def.name).expect("built above");
        for n in 0..spec.dialogues_per_domain {
            let exchanges = rng.gen_range(spec.min_turns / 2..=spec.max_turns / 2);
            let multi = spec.multi_domain_fraction > 0.0 && rng.gen::<f64>() < spec.multi_domain_fraction;
            let row = rows.choose(&mut rng).expect("non-empty kb");
            let mut turns = Vec::new();
            let mut domains = vec![def.name.clone()];
            if multi {
                let exchanges = exchanges.max(2);
                let first = rng.gen_range(1..exchanges);
                let mut other = rng.gen_range(0..spec.domains.len() - 1);
                if other >= di {
                    other += 1;
                }
                let second_def = &spec.domains[other];
                let second_row = kb.domain(&second_def.name).expect("built above").choose(&mut rng).expect("non-empty kb");
                domain_segment(&mut turns, def, row, first, false, &mut rng);
                domain_segment(&mut turns, second_def, second_row, exchanges - first, true, &mut rng);
                domains.push(second_def.name.clone());
            } else {
                domain_segment(&mut turns, def, row, exchanges, true, &mut rng);
            }
            let dialogue = Dialogue {
                dialogue_id: format!("{}-{:04}", def.name, n),
                domains,
                turns,
            };
            dialogue.validate()?;
            dialogues.push(dialogue);
        }
    }
    Ok((Corpus::new(dialogues), kb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{extract_entities, write_corpus_string};

    #[test]
    fn toy_spec_is_valid() {
        CorpusSpec::toy(10, 1).validate().unwrap();
    }

    #[test]
    fn same_seed_identical_output() {
        let spec = CorpusSpec::toy(20, 5);
        let (a, ka) = generate_corpus(&spec).unwrap();
        let (b, kb) = generate_corpus(&spec).unwrap();
        assert_eq!(write_corpus_string(&a), write_corpus_string(&b));
        assert_eq!(ka, kb);
        let (c, _) = generate_corpus(&CorpusSpec::toy(20, 6)).unwrap();
        assert_ne!(write_corpus_string(&a), write_corpus_string(&c));
    }

    #[test]
    fn exact_count_without_multi_domain() {
        let mut spec = CorpusSpec::toy(100, 3);
        spec.domains.truncate(3);
        spec.multi_domain_fraction = 0.0;
        let (c, _) = generate_corpus(&spec).unwrap();
        assert_eq!(c.len(), 300);
        assert!(c.iter().all(|d| d.domains.len() == 1));
    }

    #[test]
    fn every_annotation_is_a_kb_value_and_matchable() {
        let (c, kb) = generate_corpus(&CorpusSpec::toy(40, 9)).unwrap();
        let mut checked = 0;
        for d in c.iter() {
            for t in &d.turns {
                let kb_entities = kb.entities(&t.domain);
                for e in &t.entities {
                    assert!(kb_entities.contains(e), "{e:?} not in kb");
                    checked += 1;
                }
                if t.speaker == Speaker::Sys {
                    assert_eq!(extract_entities(&t.tokens(), &t.domain, &kb), t.entity_set());
                }
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = CorpusSpec::toy(5, 1);
        spec.domains.truncate(2);
        assert!(spec.validate().is_err());

        let mut spec = CorpusSpec::toy(5, 1);
        spec.domains[0].opening.sys.push("{name} has {parking}".into());
        assert!(spec.validate().is_err());

        let mut spec = CorpusSpec::toy(5, 1);
        spec.domains[1].slots[1].values.push("chinese".into());
        assert!(spec.validate().is_err());

        let mut spec = CorpusSpec::toy(5, 1);
        spec.min_turns = 3;
        assert!(generate_corpus(&spec).is_err());
    }
}
