//! Time-delay RBF dictionary and a two-region model bank for the Duffing
//! oscillator, with a round trip through the model file format.

use koopgen::cli::model_file;
use koopgen::dictionary::{halton_rbf_centers, Basis, Dictionary, DictionarySpec, RbfKernel};
use koopgen::edmd::{fit_operators, BilinearModel};
use koopgen::krom::ModelBank;
use koopgen::plants::{sample_training_set, DuffingParams, InitialStates, InputBox, InputDraw, Plant, SamplingSpec};

fn main() -> koopgen::Result<()> {
    let plant = Plant::duffing(DuffingParams::default());
    let centers = halton_rbf_centers(2, 20, &[(-2.0, 2.0), (-2.0, 2.0)])?;
    let rbf = Basis::Stack {
        parts: vec![
            Basis::Monomials { degree: 1 },
            Basis::Rbf { centers, shape: 0.8, kernel: RbfKernel::Gaussian },
        ],
    };
    let dict = Dictionary::new(DictionarySpec::new(2, rbf))?;
    println!("RBF dictionary: {} observables", dict.n_obs());

    // one operator per half of the input box
    let halves = [(-1.0, 0.0), (0.0, 1.0)];
    let mut entries = Vec::new();
    for (i, (lo, hi)) in halves.into_iter().enumerate() {
        let sampling = SamplingSpec::Trajectories {
            count: 20,
            steps: 50,
            dt: 0.05,
            initial: InitialStates::Uniform { lo: vec![-1.5, -1.5], hi: vec![1.5, 1.5] },
            inputs: InputDraw::Levels { levels: vec![vec![lo], vec![hi]], weights: None },
            hold_steps: 2,
            derivatives: false,
        };
        let data = sample_training_set(&plant, &sampling, 20 + i as u64)?;
        let model = fit_operators(&dict, &data, 1e-10)?;
        let info = model.fit.clone().expect("fit info");
        println!("region [{lo}, {hi}]: rank {} of {}, residual {:.2e}", info.rank, info.rows, info.residual);
        entries.push((InputBox::new(vec![lo], vec![hi])?, BilinearModel::Operator(model)));
    }
    let bank = ModelBank::new(InputBox::symmetric(1.0, 1), entries)?;
    for u in [-0.7, 0.0, 0.4] {
        println!("u = {u:+}: region {}", bank.select(&[u])?.0);
    }

    // delay embedding of the position only
    let delayed = Dictionary::new(
        DictionarySpec::new(2, Basis::Monomials { degree: 2 }).with_observed(vec![0]).with_delay(3),
    )?;
    println!("delay dictionary: {} raw inputs -> {} observables", delayed.input_dim(), delayed.n_obs());

    let text = model_file::to_text(&bank.entries[0].1)?;
    let back = model_file::from_text(&text)?;
    println!(
        "model file: {} lines, checksum ok: {}, identical after reload: {}",
        text.lines().count(),
        back.checksum_ok,
        back.model == bank.entries[0].1
    );
    Ok(())
}
