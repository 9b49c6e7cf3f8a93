//! Dataset families expanded from the bundled vocabulary.

use frap::prelude::*;

fn main() -> Result<()> {
    let vocab = default_vocabulary();
    for template in TemplateId::ALL {
        let prompts = expand_template(template, &vocab, 0)?;
        let sample = &prompts[prompts.len() / 2];
        println!(
            "{:<20} {:>4} prompts  e.g. {:?} objects {:?} pairs {:?}",
            template.name(),
            prompts.len(),
            sample.text(),
            sample.objects(),
            sample.pairs()
        );
    }
    Ok(())
}
