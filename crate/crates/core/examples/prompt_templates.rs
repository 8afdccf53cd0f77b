//! Builds rank templates for an age task and splices learned context
//! prompts in front of them.

use ordino::encoders::{toy_backbone, BackboneConfig};
use ordino::prompt_space::{assemble_prompts, build_templates, ContextPrompts, PromptScaffold, TaskDescriptor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ordino::Result<()> {
    let backbone = toy_backbone(&BackboneConfig::default(), 16)?;
    let task = TaskDescriptor::numeric("A photo of {age} years old face.", 0..=100);
    let set = build_templates(&task, backbone.tokenizer.as_ref(), 8)?;
    let listing = set.to_listing();
    for line in listing.lines().take(4) {
        println!("{line}");
    }
    println!("... {} templates, rank tokens at {:?}", set.num_ranks(), set.span());

    let decades = TaskDescriptor {
        template: "A photo taken in the {decade}.".into(),
        label_names: ["1930s", "1940s", "1950s", "1960s", "1970s"].map(String::from).to_vec(),
        rank_labels: (0..5).collect(),
    };
    let set = build_templates(&decades, backbone.tokenizer.as_ref(), 8)?;
    print!("{}", set.to_listing());

    let scaffold = PromptScaffold::new(set, backbone.text.embeddings())?;
    let context = ContextPrompts::random(&mut ChaCha8Rng::seed_from_u64(0), 5, scaffold.d_embed());
    let prompts = assemble_prompts(&context, &scaffold.rank_tokens(), &scaffold)?;
    println!("prompt tensor (ranks, tokens, d_embed) = {:?}", prompts.dim());
    Ok(())
}
