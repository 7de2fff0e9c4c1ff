//! Shared generators and brute-force oracles for integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use pcig_core::graph::{build_graph, select_anchor};
use pcig_core::layout::{predicates_to_constraints, solve_layout, LayoutConfig};
use pcig_core::model::{Canvas, ObjectCategory, PromptSpec, RelationTriple, SceneObject, ScenePlan, PLAN_SCHEMA_VERSION};
use rand::seq::SliceRandom;
use rand::Rng;

/// Degree by direct edge counting; each endpoint of each triple counts once.
pub fn brute_force_degrees(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut degree = vec![0; n];
    for &(s, o) in edges {
        degree[s] += 1;
        degree[o] += 1;
    }
    degree
}

/// First index attaining the maximum degree.
pub fn brute_force_anchor(n: usize, edges: &[(usize, usize)]) -> usize {
    let degree = brute_force_degrees(n, edges);
    let max = *degree.iter().max().expect("non-empty");
    degree.iter().position(|&d| d == max).expect("max exists")
}

pub fn random_edges(rng: &mut impl Rng, n: usize) -> Vec<(usize, usize)> {
    let m = rng.gen_range(0..=2 * n);
    (0..m)
        .filter_map(|_| {
            let s = rng.gen_range(0..n);
            let o = rng.gen_range(0..n);
            (s != o).then_some((s, o))
        })
        .collect()
}

pub fn objects_for(n: usize, rng: &mut impl Rng) -> Vec<SceneObject> {
    (0..n)
        .map(|i| {
            let mut o = SceneObject::general(i, format!("object {i}"), format!("object {i}"));
            if rng.gen_bool(0.15) {
                let words = ["SALE", "Open 24 hours", "Hello", "Welcome to the jungle gym"];
                let text = words[rng.gen_range(0..words.len())].to_string();
                o.category = ObjectCategory::Text;
                o.caption = text.clone();
                o.text_payload = Some(text);
            }
            o
        })
        .collect()
}

/// A random instance that is solvable by construction: every order
/// relation agrees with one hidden permutation per axis and containment
/// follows a hidden nesting order.
pub fn random_solvable_instance(rng: &mut impl Rng, max_objects: usize) -> (Vec<SceneObject>, Vec<RelationTriple>) {
    let n = rng.gen_range(1..=max_objects);
    let mut x_order: Vec<usize> = (0..n).collect();
    let mut y_order: Vec<usize> = (0..n).collect();
    let mut nest_order: Vec<usize> = (0..n).collect();
    x_order.shuffle(rng);
    y_order.shuffle(rng);
    nest_order.shuffle(rng);
    let pos = |order: &[usize]| {
        let mut p = vec![0; order.len()];
        for (i, &v) in order.iter().enumerate() {
            p[v] = i;
        }
        p
    };
    let (px, py, pn) = (pos(&x_order), pos(&y_order), pos(&nest_order));

    let mut triples = Vec::new();
    if n >= 2 {
        let m = rng.gen_range(0..=(3 * n / 2).max(1));
        for _ in 0..m {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            if a == b {
                continue;
            }
            let t = match rng.gen_range(0..8) {
                0 => {
                    let (l, r) = if px[a] < px[b] { (a, b) } else { (b, a) };
                    RelationTriple::new(l, "left of", r)
                }
                1 => {
                    let (l, r) = if px[a] < px[b] { (a, b) } else { (b, a) };
                    RelationTriple::new(r, "right of", l)
                }
                2 => {
                    let (u, d) = if py[a] < py[b] { (a, b) } else { (b, a) };
                    RelationTriple::new(u, "above", d)
                }
                3 => {
                    let (u, d) = if py[a] < py[b] { (a, b) } else { (b, a) };
                    RelationTriple::new(d, "under", u)
                }
                4 | 5 => {
                    // the later object in the nesting order goes inside
                    let (outer, inner) = if pn[a] < pn[b] { (a, b) } else { (b, a) };
                    RelationTriple::new(inner, "in", outer)
                }
                6 => RelationTriple::new(a, if rng.gen_bool(0.5) { "is wearing" } else { "holding" }, b),
                _ => RelationTriple::new(a, "next to", b),
            };
            triples.push(t);
        }
    }
    (objects_for(n, rng), triples)
}

pub fn count_by<K: Ord, T>(items: &[T], key: impl Fn(&T) -> K) -> BTreeMap<K, usize> {
    let mut out = BTreeMap::new();
    for item in items {
        *out.entry(key(item)).or_default() += 1;
    }
    out
}

/// A valid plan with mixed categories, awkward strings and solver boxes.
pub fn random_plan(rng: &mut impl Rng) -> ScenePlan {
    let (mut objects, triples) = random_solvable_instance(rng, 12);
    let captions = ["a cat", "Café \"Lumière\"", "back\\slash", "日本の寺", "tab\there", "a 😀 emoji", "line\nbreak"];
    for (i, o) in objects.iter_mut().enumerate() {
        match rng.gen_range(0..4) {
            0 => {
                o.category = ObjectCategory::Pn;
                o.caption = format!("Brand {i}");
                o.pn_key = Some(format!("brand-{i}"));
                o.text_payload = None;
            }
            1 if o.category == ObjectCategory::Go => {
                o.caption = captions[rng.gen_range(0..captions.len())].to_string();
            }
            _ => {}
        }
        o.group_key = format!("group {i}");
    }
    let graph = build_graph(&objects, &triples).expect("ids in range");
    let anchor_id = select_anchor(&graph).expect("non-empty");
    let config = LayoutConfig {
        rng_seed: rng.gen(),
        ..LayoutConfig::default()
    };
    let boxes = solve_layout(&graph, &objects, &predicates_to_constraints(&triples), &config)
        .expect("solvable by construction")
        .boxes;
    let text = captions[rng.gen_range(0..captions.len())];
    let mut prompt = PromptSpec::new(format!("p-{}", rng.gen::<u32>()), format!("prompt with {text}"));
    if rng.gen_bool(0.3) {
        prompt.augmented_text = Some(format!("augmented {text}"));
    }
    ScenePlan {
        schema_version: PLAN_SCHEMA_VERSION.into(),
        prompt,
        canvas: Canvas {
            width_px: rng.gen_range(64..=2048),
            height_px: rng.gen_range(64..=2048),
        },
        objects,
        triples,
        anchor_id,
        boxes,
    }
}
