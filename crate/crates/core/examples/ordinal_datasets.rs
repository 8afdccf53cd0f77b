//! Synthetic ordinal data and the few-shot, distribution-shift and k-fold
//! protocols.
//!
//! cargo run --example ordinal_datasets -- [out_dir]

use ordino::data::{
    distribution_shift_subsample, few_shot_subsample, generate_synthetic, kfold_split, load_image_folder,
    save_image_folder, DatasetSpec,
};

fn main() -> ordino::Result<()> {
    let spec = DatasetSpec::uniform(10, 40);
    let ds = generate_synthetic(&spec, 0.5, 0)?;
    println!("{} images of {}x{}, histogram {:?}", ds.len(), spec.height, spec.width, ds.class_histogram());

    let (train, _, test) = ds.split(spec.split, 0);
    println!("split: {} train / {} test", train.len(), test.len());

    for k in [1, 4, 16, 64] {
        println!("few-shot k={k:>2}: {:?}", few_shot_subsample(&train, k, 1).class_histogram());
    }
    let shifted = distribution_shift_subsample(&train, 3, 90, 2)?;
    println!("shift 3 classes by 90%: {:?}", shifted.class_histogram());

    for fold in 0..3 {
        let (tr, te) = kfold_split(&ds, 3, fold, 3)?;
        println!("fold {fold}: {} train / {} test", tr.len(), te.len());
    }

    let root = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("ordino_bars"));
    let small = few_shot_subsample(&ds, 2, 4);
    save_image_folder(&small, &root)?;
    let reloaded = load_image_folder(&root, &root.join("labels.csv"), &small.label_values, 16)?;
    println!("wrote and reloaded {} images under {} as 16x16 RGB", reloaded.len(), root.display());
    Ok(())
}
