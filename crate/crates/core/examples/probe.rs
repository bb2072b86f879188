use otpt_core::calibration::CalibrationReport;
use otpt_core::linalg::Matrix;
use otpt_core::model::{ClassEmbeddings, PromptState};
use otpt_core::objective::Method;
use otpt_core::synthdata::{generate_dataset, DatasetSpec};
use otpt_core::tuner::{run_dataset, TunerConfig};

const BAKED_ALIGN: f64 = 0.0128;
const BAKED_PROMPT: f64 = 0.1152;

struct Cell { acc: f64, ece: f64, cos: f64, records: Vec<otpt_core::tuner::PredictionRecord> }

fn run(ds: &otpt_core::synthdata::Dataset, classes: &ClassEmbeddings, prompt: &PromptState, method: Method, lambda: Option<f64>) -> Cell {
    let mut cfg = TunerConfig::new(method);
    if let Some(l) = lambda { cfg.lambda_ortho = l; }
    let records = run_dataset(&ds.encoder, classes, prompt, &ds.samples, &cfg).unwrap();
    let rep = CalibrationReport::compute(&records, 15, method.as_str(), "").unwrap();
    let cos = records.iter().map(|r| r.mean_pairwise_cos).sum::<f64>() / records.len() as f64;
    Cell { acc: rep.accuracy, ece: rep.ece, cos, records }
}

fn group_ece(records: &[otpt_core::tuner::PredictionRecord], split: &[bool]) -> (f64, f64) {
    let above: Vec<_> = records.iter().zip(split).filter(|(_, a)| **a).map(|(r, _)| r.clone()).collect();
    let below: Vec<_> = records.iter().zip(split).filter(|(_, a)| !**a).map(|(r, _)| r.clone()).collect();
    (
        CalibrationReport::compute(&above, 15, "", "").unwrap().ece,
        CalibrationReport::compute(&below, 15, "", "").unwrap().ece,
    )
}

fn scale_matrix(m: &Matrix, s: f64) -> Matrix {
    Matrix::new(m.rows(), m.cols(), m.as_slice().iter().map(|x| x * s).collect())
}

fn main() {
    let spec = DatasetSpec::benchmark();
    let ds = generate_dataset(&spec).unwrap();
    for (alpha, sp) in [(0.0128, 0.1152)] {
        let classes = ClassEmbeddings::from_matrix(scale_matrix(&ds.classes.g, alpha / BAKED_ALIGN));
        let prompts: Vec<PromptState> = (0..3).map(|s| {
            let b = PromptState::from_hard_seed(s, spec.n_ctx, spec.d_tok);
            PromptState::new(scale_matrix(&b.context, sp / BAKED_PROMPT))
        }).collect();
        println!("=== align {alpha} prompt {sp}");
        // seed 0 cells
        let zs = run(&ds, &classes, &prompts[0], Method::Zeroshot, None);
        let tpt = run(&ds, &classes, &prompts[0], Method::Tpt, None);
        let otpt = run(&ds, &classes, &prompts[0], Method::Otpt, None);
        let hh = run(&ds, &classes, &prompts[0], Method::OtptHh, None);
        let c5a = tpt.acc >= zs.acc - 0.005 && tpt.ece > zs.ece;
        let c5b = otpt.ece < 0.8 * tpt.ece;
        let c5c = (otpt.acc - tpt.acc).abs() <= 0.02;
        let c5d = otpt.cos < tpt.cos;
        let c9 = hh.ece < 0.8 * tpt.ece;
        println!("5a {} (tptacc {:.4} zsacc {:.4} tptece {:.4} zsece {:.4})", c5a, tpt.acc, zs.acc, tpt.ece, zs.ece);
        println!("5b {} (ratio {:.3})  5c {}  5d {}  9 {} (hh ratio {:.3})", c5b, otpt.ece / tpt.ece, c5c, c5d, c9, hh.ece / tpt.ece);
        // criterion 6: split by tpt cos median
        let coses: Vec<f64> = tpt.records.iter().map(|r| r.mean_pairwise_cos).collect();
        let mut sorted = coses.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = 0.5 * (sorted[249] + sorted[250]);
        let split: Vec<bool> = coses.iter().enumerate().map(|(i, c)| if *c == median { i % 2 == 1 } else { *c > median }).collect();
        let (t_above, t_below) = group_ece(&tpt.records, &split);
        let (o_above, o_below) = group_ece(&otpt.records, &split);
        let c6 = t_above > t_below && o_above < t_above && o_below < t_below;
        println!("6 {c6} (tpt {t_above:.4}/{t_below:.4} otpt {o_above:.4}/{o_below:.4})");
        // criterion 10: stds over 3 seeds
        let mut te = vec![tpt.ece]; let mut oe = vec![otpt.ece];
        for s in 1..3 {
            te.push(run(&ds, &classes, &prompts[s], Method::Tpt, None).ece);
            oe.push(run(&ds, &classes, &prompts[s], Method::Otpt, None).ece);
        }
        let std = |v: &[f64]| { let m = v.iter().sum::<f64>() / 3.0; (v.iter().map(|x| (x-m)*(x-m)).sum::<f64>() / 2.0).sqrt() };
        let c10 = std(&oe) <= std(&te);
        println!("10 {c10} (tpt std {:.5} otpt std {:.5})", std(&te), std(&oe));
        // criterion 7: lambda sweep monotone within 1e-3
        let mut coss = Vec::new();
        for l in [0.0, 2.0, 6.0, 18.0, 54.0] {
            coss.push(run(&ds, &classes, &prompts[0], Method::Otpt, Some(l)).cos);
        }
        let c7 = coss.windows(2).all(|w| w[1] <= w[0] + 1e-3);
        println!("7 {c7} ({:?})", coss.iter().map(|x| (x*1e6).round()/1e6).collect::<Vec<_>>());
    }
}
