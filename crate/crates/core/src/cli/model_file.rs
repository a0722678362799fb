//! Versioned plain-text model files.
//!
//! ```text
//! koopgen-model 1
//! kind operator
//! n_obs 3
//! n_inputs 1
//! dt 1.0000000000000000e-1
//! input_lo -1.0000000000000000e0
//! input_hi 1.0000000000000000e0
//! dictionary {"state_dim":2,...}
//! fit {"method":"operators",...}
//! matrix k0 3 3
//! <one row per line>
//! matrix b1 3 3
//! ...
//! sha256 <hex digest of every preceding byte>
//! ```

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::dictionary::DictionarySpec;
use crate::edmd::{BilinearModel, FitInfo, GeneratorModel, OperatorModel};
use crate::error::{KoopError, Result};
use crate::numerics::Matrix;
use crate::plants::InputBox;

pub const MAGIC: &str = "koopgen-model";
pub const VERSION: u32 = 1;

/// 17 significant digits, enough to round-trip every `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(fmt_f64).collect::<Vec<_>>().join(" ")
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn json<T: serde::Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| KoopError::Parse(e.to_string()))
}

pub fn to_text(model: &BilinearModel) -> Result<String> {
    let (kind, k0, b, dt, dict, ib, fit) = match model {
        BilinearModel::Generator(g) => ("generator", &g.k0, &g.b, None, &g.dictionary, &g.input_box, &g.fit),
        BilinearModel::Operator(o) => ("operator", &o.k0, &o.b, Some(o.dt), &o.dictionary, &o.input_box, &o.fit),
    };
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC} {VERSION}");
    let _ = writeln!(s, "kind {kind}");
    let _ = writeln!(s, "n_obs {}", k0.nrows());
    let _ = writeln!(s, "n_inputs {}", b.len());
    let _ = writeln!(s, "dt {}", dt.map_or("none".to_string(), fmt_f64));
    let _ = writeln!(s, "input_lo {}", join(ib.lo.iter().copied()));
    let _ = writeln!(s, "input_hi {}", join(ib.hi.iter().copied()));
    let _ = writeln!(s, "dictionary {}", json(dict)?);
    match fit {
        Some(f) => {
            let _ = writeln!(s, "fit {}", json(f)?);
        }
        None => {
            let _ = writeln!(s, "fit none");
        }
    }
    let mut put = |name: String, m: &Matrix| {
        let _ = writeln!(s, "matrix {name} {} {}", m.nrows(), m.ncols());
        for r in m.row_iter() {
            let _ = writeln!(s, "{}", join(r.iter().copied()));
        }
    };
    put("k0".into(), k0);
    for (i, bi) in b.iter().enumerate() {
        put(format!("b{}", i + 1), bi);
    }
    let digest = hex(&Sha256::digest(s.as_bytes()));
    let _ = writeln!(s, "sha256 {digest}");
    Ok(s)
}

/// A parsed model file. `checksum_ok` is false when the stored digest does
/// not match the content; the model is still returned.
#[derive(Clone, Debug)]
pub struct LoadedModel {
    pub model: BilinearModel,
    pub checksum_ok: bool,
}

struct Lines<'a> {
    it: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<(usize, &'a str)> {
        self.it
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| KoopError::Parse("model file ends early".into()))
    }

    fn keyed(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (n, line) = self.next()?;
        match line.split_once(' ') {
            Some((k, rest)) if k == key => Ok((n, rest)),
            _ => Err(KoopError::Parse(format!("line {n}: expected `{key} …`"))),
        }
    }
}

fn parse_num<T: std::str::FromStr>(n: usize, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| KoopError::Parse(format!("line {n}: cannot parse `{s}`")))
}

fn parse_row(n: usize, s: &str) -> Result<Vec<f64>> {
    s.split_whitespace().map(|t| parse_num(n, t)).collect()
}

fn parse_matrix(lines: &mut Lines, name: &str, size: usize) -> Result<Matrix> {
    let (n, rest) = lines.keyed("matrix")?;
    let parts: Vec<&str> = rest.split_whitespace().collect();
    if parts.len() != 3 || parts[0] != name {
        return Err(KoopError::Parse(format!("line {n}: expected `matrix {name} <rows> <cols>`")));
    }
    let (r, c): (usize, usize) = (parse_num(n, parts[1])?, parse_num(n, parts[2])?);
    if r != size || c != size {
        return Err(KoopError::Parse(format!("line {n}: matrix {name} is {r}x{c}, expected {size}x{size}")));
    }
    let mut m = Matrix::zeros(r, c);
    for i in 0..r {
        let (n, line) = lines.next()?;
        let row = parse_row(n, line)?;
        if row.len() != c {
            return Err(KoopError::Parse(format!("line {n}: expected {c} entries, found {}", row.len())));
        }
        for (j, v) in row.into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

pub fn from_text(text: &str) -> Result<LoadedModel> {
    let body_end = text
        .rfind("sha256 ")
        .ok_or_else(|| KoopError::Parse("model file has no sha256 line".into()))?;
    let (body, tail) = text.split_at(body_end);
    let stored = tail["sha256 ".len()..].trim();
    let checksum_ok = hex(&Sha256::digest(body.as_bytes())) == stored;

    let mut lines = Lines {
        it: body.lines().enumerate(),
    };
    let (n, header) = lines.next()?;
    match header.split_once(' ') {
        Some((MAGIC, v)) => {
            let v: u32 = parse_num(n, v)?;
            if v != VERSION {
                return Err(KoopError::Parse(format!("unsupported model file version {v}")));
            }
        }
        _ => return Err(KoopError::Parse("not a koopgen model file".into())),
    }
    let (_, kind) = lines.keyed("kind")?;
    let (n, v) = lines.keyed("n_obs")?;
    let n_obs: usize = parse_num(n, v)?;
    let (n, v) = lines.keyed("n_inputs")?;
    let n_inputs: usize = parse_num(n, v)?;
    let (n, v) = lines.keyed("dt")?;
    let dt: Option<f64> = if v.trim() == "none" { None } else { Some(parse_num(n, v)?) };
    let (n, v) = lines.keyed("input_lo")?;
    let lo = parse_row(n, v)?;
    let (n, v) = lines.keyed("input_hi")?;
    let hi = parse_row(n, v)?;
    let input_box = InputBox::new(lo, hi)?;
    let (n, v) = lines.keyed("dictionary")?;
    let dictionary: DictionarySpec =
        serde_json::from_str(v).map_err(|e| KoopError::Parse(format!("line {n}: {e}")))?;
    let (n, v) = lines.keyed("fit")?;
    let fit: Option<FitInfo> = if v.trim() == "none" {
        None
    } else {
        Some(serde_json::from_str(v).map_err(|e| KoopError::Parse(format!("line {n}: {e}")))?)
    };
    let k0 = parse_matrix(&mut lines, "k0", n_obs)?;
    let b = (1..=n_inputs)
        .map(|i| parse_matrix(&mut lines, &format!("b{i}"), n_obs))
        .collect::<Result<Vec<_>>>()?;
    if let Ok((n, _)) = lines.next() {
        return Err(KoopError::Parse(format!("line {n}: unexpected content before the checksum")));
    }

    let model = match (kind.trim(), dt) {
        ("generator", None) => {
            let mut g = GeneratorModel::new(k0, b, dictionary, input_box)?;
            g.fit = fit;
            BilinearModel::Generator(g)
        }
        ("operator", Some(dt)) => {
            let mut o = OperatorModel::new(k0, b, dt, dictionary, input_box)?;
            o.fit = fit;
            BilinearModel::Operator(o)
        }
        (k, _) => return Err(KoopError::Parse(format!("model kind `{k}` with dt {dt:?} is not valid"))),
    };
    Ok(LoadedModel { model, checksum_ok })
}

pub fn write(path: &Path, model: &BilinearModel) -> Result<()> {
    std::fs::write(path, to_text(model)?)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<LoadedModel> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| KoopError::invalid(format!("cannot read model {}: {e}", path.display())))?;
    from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::Basis;
    use proptest::prelude::*;

    fn sample(seed: f64) -> BilinearModel {
        let k0 = Matrix::from_fn(3, 3, |i, j| (seed + i as f64 * 0.37 - j as f64 / 7.0).sin() * 1e3_f64.powi(i as i32 - 1));
        let b = vec![Matrix::from_fn(3, 3, |i, j| (i * j) as f64 / 3.0 - seed)];
        let mut o = OperatorModel::new(
            k0,
            b,
            0.1,
            DictionarySpec::new(2, Basis::Monomials { degree: 1 }),
            InputBox::symmetric(1.0, 1),
        )
        .unwrap();
        o.fit = Some(FitInfo {
            method: "operators".into(),
            residual: 1.5e-3,
            rank: 9,
            rows: 6,
            samples: 40,
            full_row_rank: true,
            fingerprint: "ab".repeat(32),
        });
        BilinearModel::Operator(o)
    }

    #[test]
    fn round_trip_is_exact() {
        let m = sample(0.3);
        let back = from_text(&to_text(&m).unwrap()).unwrap();
        assert!(back.checksum_ok);
        assert_eq!(back.model, m);
    }

    #[test]
    fn generator_round_trip() {
        let g = GeneratorModel::new(
            Matrix::identity(2, 2) * -0.5,
            vec![Matrix::from_element(2, 2, 0.25)],
            DictionarySpec::new(2, Basis::Identity),
            InputBox::new(vec![-2.0], vec![0.5]).unwrap(),
        )
        .unwrap();
        let m = BilinearModel::Generator(g);
        assert_eq!(from_text(&to_text(&m).unwrap()).unwrap().model, m);
    }

    #[test]
    fn rbf_centers_survive_the_json_line() {
        let centers = crate::dictionary::halton_rbf_centers(2, 20, &[(-2.0, 2.0), (-2.0, 2.0)]).unwrap();
        let spec = DictionarySpec::new(
            2,
            Basis::Rbf {
                centers,
                shape: 0.8,
                kernel: Default::default(),
            },
        );
        let o = OperatorModel::new(Matrix::identity(20, 20), vec![Matrix::zeros(20, 20)], 0.5, spec, InputBox::symmetric(1.0, 1)).unwrap();
        let m = BilinearModel::Operator(o);
        assert_eq!(from_text(&to_text(&m).unwrap()).unwrap().model, m);
    }

    #[test]
    fn tampering_breaks_the_checksum() {
        let text = to_text(&sample(0.1)).unwrap();
        let line = text.lines().position(|l| l.starts_with("matrix k0")).unwrap() + 1;
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let first = lines[line].split(' ').next().unwrap().to_string();
        let v: f64 = first.parse().unwrap();
        lines[line] = lines[line].replacen(&first, &fmt_f64(v + 1e-6), 1);
        let loaded = from_text(&(lines.join("\n") + "\n")).unwrap();
        assert!(!loaded.checksum_ok);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let text = to_text(&sample(0.2)).unwrap();
        assert!(from_text(&text.replace("koopgen-model 1", "koopgen-model 9")).is_err());
        assert!(from_text(&text.replace("matrix b1 3 3", "matrix b1 3 2")).is_err());
        assert!(from_text("").is_err());
    }

    proptest! {
        #[test]
        fn every_f64_round_trips(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let back: f64 = fmt_f64(v).parse().unwrap();
            prop_assert_eq!(back.to_bits(), v.to_bits());
        }
    }
}
