//! Generate a synthetic world, ask a multi-hop question and solve it with the
//! oracle against the search index.
//!
//! ```text
//! cargo run --example search_world -- [seed] [hops]
//! ```

use icrl::tools::{generate_question, generate_world, oracle_solve, SearchTool, Tool};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(Ok(1), |s| s.parse())?;
    let hops: usize = args.next().map_or(Ok(2), |s| s.parse())?;
    let world = generate_world(seed, 50, 80)?;
    println!("{} entities, {} facts, {} documents", world.entities.len(), world.relations.len(), world.corpus.len());

    let q = generate_question(&world, hops, seed)?;
    println!("question: {}\ngold:     {}", q.prompt_text, q.gold_answer);

    let tool = SearchTool::new(&world);
    let query = format!("{} {}", q.head, q.relations[0]);
    println!("search {query:?} -> {}", tool.call(&query).text);
    println!("search \"zzz\" -> {:?}", tool.call("zzz"));

    println!("oracle transcript:\n{}", oracle_solve(&world, &q)?);
    Ok(())
}
