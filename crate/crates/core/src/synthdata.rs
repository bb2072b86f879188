//! Deterministic synthetic dataset generation and serialization.
//!
//! Class prototypes live on the unit sphere of the image input space with a
//! controllable minimum pairwise angle, samples are noisy copies of their
//! prototype, and class token embeddings are constructed so that each
//! class's text feature points toward the image feature of its prototype —
//! that alignment is what gives the frozen random towers a nontrivial
//! zero-shot classifier.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;
use std::path::Path;

use crate::error::{LabError, Result};
use crate::linalg::{
    householder_qr, l2_normalize, solve_upper_triangular, Matrix, Vector,
};
use crate::model::{encode_image, ClassEmbeddings, EncoderParams, ModelDims};
use crate::rng::{derive_seed, CounterRng};

const STREAM_ENCODER: u64 = 1;
const STREAM_PROTO: u64 = 2;
const STREAM_LABELS: u64 = 3;
const STREAM_NOISE: u64 = 4;
const STREAM_VAL: u64 = 5;
const STREAM_JITTER: u64 = 6;

/// Repulsion schedule for prototype placement.
const REPULSION_ROUNDS: usize = 500;
const REPULSION_STEP: f64 = 0.01;

/// Scale of the class-token construction: text features sit at roughly this
/// pre-normalization magnitude along their target direction, so the
/// prompt-induced shared component dominates and keeps logit gaps small.
/// Tuned once on the frozen benchmark, then frozen.
const ALIGN_SCALE: f64 = 0.0128;
/// Ridge weight (relative to the mean diagonal of the linearized tower
/// Gram) used when inverting the text tower; bounds token norms when the
/// tower is poorly conditioned.
const ALIGN_RIDGE_REL: f64 = 0.1;

/// Everything needed to regenerate a dataset bit-for-bit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetSpec {
    pub n_classes: usize,
    pub d_img: usize,
    pub d_tok: usize,
    pub hidden: usize,
    pub feat_dim: usize,
    pub n_ctx: usize,
    pub n_test: usize,
    pub class_noise_sigma: f64,
    /// Minimum pairwise prototype angle as a fraction of a right angle.
    pub separation: f64,
    pub seed: u64,
}

impl DatasetSpec {
    /// The frozen in-repo benchmark configuration.
    pub fn benchmark() -> Self {
        DatasetSpec {
            n_classes: 10,
            d_img: 24,
            d_tok: 16,
            hidden: 32,
            feat_dim: 16,
            n_ctx: 4,
            n_test: 500,
            class_noise_sigma: 0.6,
            separation: 0.5,
            seed: 42,
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            d_tok: self.d_tok,
            d_img: self.d_img,
            hidden: self.hidden,
            feat_dim: self.feat_dim,
            n_ctx: self.n_ctx,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(LabError::InvalidSpec("n_classes must be >= 2".into()));
        }
        if self.feat_dim < 2 {
            return Err(LabError::InvalidSpec("feat_dim must be >= 2".into()));
        }
        if self.n_test < 1 {
            return Err(LabError::InvalidSpec("n_test must be >= 1".into()));
        }
        if self.d_img < 2 || self.d_tok < 1 || self.hidden < 1 || self.n_ctx < 1 {
            return Err(LabError::InvalidSpec("model dimensions must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.separation) {
            return Err(LabError::InvalidSpec(format!(
                "separation must lie in [0, 1], got {}",
                self.separation
            )));
        }
        if self.class_noise_sigma < 0.0 || !self.class_noise_sigma.is_finite() {
            return Err(LabError::InvalidSpec("class_noise_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// One labeled test point.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vector,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub encoder: EncoderParams,
    pub classes: ClassEmbeddings,
    /// Unit prototypes in image input space, `C x d_img`.
    pub prototypes: Matrix,
    pub samples: Vec<Sample>,
}

fn pair_angle(a: &[f64], b: &[f64]) -> f64 {
    crate::linalg::dot(a, b).clamp(-1.0, 1.0).acos()
}

fn min_angle_pair(protos: &Matrix) -> (usize, usize, f64) {
    let c = protos.rows();
    let mut best = (0, 1, f64::INFINITY);
    for i in 0..c {
        for j in i + 1..c {
            let a = pair_angle(protos.row(i), protos.row(j));
            if a < best.2 {
                best = (i, j, a);
            }
        }
    }
    best
}

/// Pushes the two prototypes of the current minimum-angle pair apart along
/// the sphere. The step is capped near the target so the final angle lands
/// just past it instead of overshooting by a full step.
fn repel_prototypes(protos: &mut Matrix, target: f64, jitter: &mut CounterRng) -> Result<f64> {
    let d = protos.cols();
    for _ in 0..REPULSION_ROUNDS {
        let (i, j, angle) = min_angle_pair(protos);
        if angle >= target {
            return Ok(angle);
        }
        let step = REPULSION_STEP.min(0.525 * (target - angle) + 1e-9);
        let pi: Vec<f64> = protos.row(i).to_vec();
        let pj: Vec<f64> = protos.row(j).to_vec();
        let cos_ij = crate::linalg::dot(&pi, &pj);
        for (row_idx, this, other) in [(i, &pi, &pj), (j, &pj, &pi)] {
            // Tangential direction that decreases <p_i, p_j>.
            let mut dir: Vec<f64> =
                this.iter().zip(other).map(|(t, o)| cos_ij * t - o).collect();
            let mut norm = crate::linalg::slice_norm(&dir);
            if norm <= 1e-9 {
                // Coincident pair: pick a seeded random tangent.
                dir = (0..d).map(|_| jitter.standard_normal()).collect();
                let proj = crate::linalg::dot(&dir, this);
                for (dv, t) in dir.iter_mut().zip(this) {
                    *dv -= proj * t;
                }
                norm = crate::linalg::slice_norm(&dir);
                if norm <= 1e-12 {
                    continue;
                }
            }
            let moved: Vec<f64> = this
                .iter()
                .zip(&dir)
                .map(|(t, dv)| t + step * dv / norm)
                .collect();
            let unit = l2_normalize(&Vector::new(moved))?;
            protos.row_mut(row_idx).copy_from_slice(unit.as_slice());
        }
    }
    let (_, _, angle) = min_angle_pair(protos);
    if angle >= target {
        Ok(angle)
    } else {
        Err(LabError::SeparationInfeasible { achieved: angle, target })
    }
}

/// Class token embeddings whose text features (under a zero prompt) point
/// toward the image feature of the class prototype.
///
/// The tanh tower is linearized around zero: `W_T tanh(A_T u) ~ M u` with
/// `M = W_T A_T`, and the token solves the ridge system
/// `u = M^T (M M^T + mu I)^-1 v_c` scaled to keep tanh near-linear.
fn aligned_class_embeddings(
    encoder: &EncoderParams,
    prototypes: &Matrix,
    n_ctx: usize,
) -> Result<ClassEmbeddings> {
    let m = encoder.w_t.matmul(&encoder.a_t);
    let feat = m.rows();
    let mmt = m.matmul(&m.transpose());
    let trace: f64 = (0..feat).map(|i| mmt.get(i, i)).sum();
    let mu = ALIGN_RIDGE_REL * trace / feat as f64;
    let mut k = mmt;
    for i in 0..feat {
        let cur = k.get(i, i);
        k.set(i, i, cur + mu);
    }
    let (q, r) = householder_qr(&k)?;
    let c = prototypes.rows();
    let d_tok = m.cols();
    let mut g = Matrix::zeros(c, d_tok);
    let token_scale = (n_ctx + 1) as f64 * ALIGN_SCALE;
    for ci in 0..c {
        let proto = Vector::new(prototypes.row(ci).to_vec());
        let v = encode_image(encoder, &proto)?;
        let qtv = q.matvec_t(v.v.as_slice());
        let w = solve_upper_triangular(&r, &qtv)?;
        let u = m.matvec_t(&w);
        for (dst, val) in g.row_mut(ci).iter_mut().zip(&u) {
            *dst = token_scale * val;
        }
    }
    Ok(ClassEmbeddings::from_matrix(g))
}

/// Builds the full dataset deterministically from its spec.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let dims = spec.dims();
    let encoder = EncoderParams::generate(derive_seed(spec.seed, STREAM_ENCODER), &dims);

    // Prototypes: random unit vectors repelled to the target angle.
    let mut proto_rng = CounterRng::new(derive_seed(spec.seed, STREAM_PROTO));
    let mut prototypes = Matrix::zeros(spec.n_classes, spec.d_img);
    for ci in 0..spec.n_classes {
        let raw: Vec<f64> = (0..spec.d_img).map(|_| proto_rng.standard_normal()).collect();
        let unit = l2_normalize(&Vector::new(raw))?;
        prototypes.row_mut(ci).copy_from_slice(unit.as_slice());
    }
    let target = spec.separation * FRAC_PI_2;
    let mut jitter = CounterRng::new(derive_seed(spec.seed, STREAM_JITTER));
    repel_prototypes(&mut prototypes, target, &mut jitter)?;

    let classes = aligned_class_embeddings(&encoder, &prototypes, spec.n_ctx)?;

    // Round-robin labels shuffled by seed.
    let mut labels: Vec<usize> = (0..spec.n_test).map(|i| i % spec.n_classes).collect();
    let mut label_rng = CounterRng::new(derive_seed(spec.seed, STREAM_LABELS));
    for i in (1..labels.len()).rev() {
        let j = label_rng.below((i + 1) as u64) as usize;
        labels.swap(i, j);
    }

    let mut noise_rng = CounterRng::new(derive_seed(spec.seed, STREAM_NOISE));
    let samples = draw_samples(&prototypes, &labels, spec.class_noise_sigma, &mut noise_rng)?;

    Ok(Dataset { spec: *spec, encoder, classes, prototypes, samples })
}

fn draw_samples(
    prototypes: &Matrix,
    labels: &[usize],
    sigma: f64,
    rng: &mut CounterRng,
) -> Result<Vec<Sample>> {
    let d = prototypes.cols();
    // Noise is isotropic with expected norm ~1 (each coordinate scaled by
    // 1/sqrt(d)), so sigma is the noise magnitude relative to the unit
    // prototype regardless of the input dimension.
    let coord_scale = sigma / (d as f64).sqrt();
    labels
        .iter()
        .map(|&label| {
            let proto = prototypes.row(label);
            let raw: Vec<f64> = proto
                .iter()
                .map(|p| p + coord_scale * rng.standard_normal())
                .collect();
            debug_assert_eq!(raw.len(), d);
            let x = l2_normalize(&Vector::new(raw))?;
            Ok(Sample { x, label })
        })
        .collect()
}

/// Extra labeled samples from the same prototypes and noise model but a
/// distinct seed stream; used as the held-out split for temperature fitting.
pub fn generate_validation_samples(ds: &Dataset, n: usize, salt: u64) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(LabError::EmptyDataset);
    }
    let base = derive_seed(derive_seed(ds.spec.seed, STREAM_VAL), salt);
    let root = CounterRng::new(base);
    let mut labels: Vec<usize> = (0..n).map(|i| i % ds.spec.n_classes).collect();
    let mut label_rng = root.stream(0);
    for i in (1..labels.len()).rev() {
        let j = label_rng.below((i + 1) as u64) as usize;
        labels.swap(i, j);
    }
    let mut noise_rng = root.stream(1);
    draw_samples(&ds.prototypes, &labels, ds.spec.class_noise_sigma, &mut noise_rng)
}

// ---------------------------------------------------------------------------
// Serialization. One JSON document; floats carry 17 significant digits so
// the round trip is bit-exact, and the writer emits fields in a fixed order
// so identical datasets produce identical bytes.
// ---------------------------------------------------------------------------

const DATASET_VERSION: i64 = 1;

fn fmt_f64(x: f64) -> String {
    format!("{:.16e}", x)
}

fn write_float_array(out: &mut String, values: &[f64]) {
    out.push('[');
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&fmt_f64(*v));
    }
    out.push(']');
}

fn write_matrix(out: &mut String, m: &Matrix) {
    out.push('[');
    for r in 0..m.rows() {
        if r > 0 {
            out.push(',');
        }
        write_float_array(out, m.row(r));
    }
    out.push(']');
}

/// Serializes the dataset; identical datasets yield byte-identical files.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("{\n");
    out.push_str(&format!("  \"version\": {DATASET_VERSION},\n"));
    let s = &ds.spec;
    out.push_str(&format!(
        "  \"spec\": {{\"n_classes\": {}, \"d_img\": {}, \"d_tok\": {}, \"hidden\": {}, \"feat_dim\": {}, \"n_ctx\": {}, \"n_test\": {}, \"class_noise_sigma\": {}, \"separation\": {}, \"seed\": {}}},\n",
        s.n_classes,
        s.d_img,
        s.d_tok,
        s.hidden,
        s.feat_dim,
        s.n_ctx,
        s.n_test,
        fmt_f64(s.class_noise_sigma),
        fmt_f64(s.separation),
        s.seed
    ));
    out.push_str("  \"encoder\": {\n    \"a_t\": ");
    write_matrix(&mut out, &ds.encoder.a_t);
    out.push_str(",\n    \"w_t\": ");
    write_matrix(&mut out, &ds.encoder.w_t);
    out.push_str(",\n    \"a_i\": ");
    write_matrix(&mut out, &ds.encoder.a_i);
    out.push_str(",\n    \"w_i\": ");
    write_matrix(&mut out, &ds.encoder.w_i);
    out.push_str(",\n    \"logit_scale\": ");
    out.push_str(&fmt_f64(ds.encoder.logit_scale));
    out.push_str("\n  },\n  \"classes\": ");
    write_matrix(&mut out, &ds.classes.g);
    out.push_str(",\n  \"prototypes\": ");
    write_matrix(&mut out, &ds.prototypes);
    out.push_str(",\n  \"samples\": [\n");
    for (i, sample) in ds.samples.iter().enumerate() {
        out.push_str("    {\"label\": ");
        out.push_str(&sample.label.to_string());
        out.push_str(", \"x\": ");
        write_float_array(&mut out, sample.x.as_slice());
        out.push('}');
        if i + 1 < ds.samples.len() {
            out.push(',');
        }
        out.push('\n');
    }
    out.push_str("  ]\n}\n");

    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

fn schema_err(msg: impl Into<String>) -> LabError {
    LabError::SchemaMismatch(msg.into())
}

fn value_f64(v: &serde_json::Value, what: &str) -> Result<f64> {
    let x = v
        .as_f64()
        .ok_or_else(|| schema_err(format!("{what}: expected number")))?;
    if !x.is_finite() {
        return Err(schema_err(format!("{what}: non-finite number")));
    }
    Ok(x)
}

fn value_usize(v: &serde_json::Value, what: &str) -> Result<usize> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| schema_err(format!("{what}: expected non-negative integer")))
}

fn field<'a>(obj: &'a serde_json::Value, name: &str) -> Result<&'a serde_json::Value> {
    obj.get(name)
        .ok_or_else(|| schema_err(format!("missing field `{name}`")))
}

fn parse_float_array(v: &serde_json::Value, what: &str) -> Result<Vec<f64>> {
    let arr = v
        .as_array()
        .ok_or_else(|| schema_err(format!("{what}: expected array")))?;
    arr.iter().map(|x| value_f64(x, what)).collect()
}

fn parse_matrix(v: &serde_json::Value, what: &str) -> Result<Matrix> {
    let arr = v
        .as_array()
        .ok_or_else(|| schema_err(format!("{what}: expected array of rows")))?;
    if arr.is_empty() {
        return Err(schema_err(format!("{what}: empty matrix")));
    }
    let rows: Vec<Vec<f64>> = arr
        .iter()
        .map(|row| parse_float_array(row, what))
        .collect::<Result<_>>()?;
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(schema_err(format!("{what}: ragged rows")));
    }
    Matrix::try_new(rows.len(), cols, rows.concat())
        .map_err(|_| schema_err(format!("{what}: invalid matrix data")))
}

/// Loads a dataset saved by [`save_dataset`]. Unreadable or syntactically
/// broken files surface as `Io`; structurally wrong documents (including a
/// version other than 1) surface as `SchemaMismatch`.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
        LabError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    })?;
    let version = field(&doc, "version")?
        .as_i64()
        .ok_or_else(|| schema_err("version: expected integer"))?;
    if version != DATASET_VERSION {
        return Err(schema_err(format!(
            "unsupported version {version}, expected {DATASET_VERSION}"
        )));
    }

    let spec_v = field(&doc, "spec")?;
    let spec = DatasetSpec {
        n_classes: value_usize(field(spec_v, "n_classes")?, "spec.n_classes")?,
        d_img: value_usize(field(spec_v, "d_img")?, "spec.d_img")?,
        d_tok: value_usize(field(spec_v, "d_tok")?, "spec.d_tok")?,
        hidden: value_usize(field(spec_v, "hidden")?, "spec.hidden")?,
        feat_dim: value_usize(field(spec_v, "feat_dim")?, "spec.feat_dim")?,
        n_ctx: value_usize(field(spec_v, "n_ctx")?, "spec.n_ctx")?,
        n_test: value_usize(field(spec_v, "n_test")?, "spec.n_test")?,
        class_noise_sigma: value_f64(field(spec_v, "class_noise_sigma")?, "spec.class_noise_sigma")?,
        separation: value_f64(field(spec_v, "separation")?, "spec.separation")?,
        seed: field(spec_v, "seed")?
            .as_u64()
            .ok_or_else(|| schema_err("spec.seed: expected non-negative integer"))?,
    };

    let enc_v = field(&doc, "encoder")?;
    let encoder = EncoderParams {
        a_t: parse_matrix(field(enc_v, "a_t")?, "encoder.a_t")?,
        w_t: parse_matrix(field(enc_v, "w_t")?, "encoder.w_t")?,
        a_i: parse_matrix(field(enc_v, "a_i")?, "encoder.a_i")?,
        w_i: parse_matrix(field(enc_v, "w_i")?, "encoder.w_i")?,
        logit_scale: value_f64(field(enc_v, "logit_scale")?, "encoder.logit_scale")?,
    };
    let classes = ClassEmbeddings::from_matrix(parse_matrix(field(&doc, "classes")?, "classes")?);
    let prototypes = parse_matrix(field(&doc, "prototypes")?, "prototypes")?;

    let samples_v = field(&doc, "samples")?
        .as_array()
        .ok_or_else(|| schema_err("samples: expected array"))?;
    let samples: Vec<Sample> = samples_v
        .iter()
        .map(|s| {
            let label = value_usize(field(s, "label")?, "sample.label")?;
            if label >= spec.n_classes {
                return Err(schema_err(format!(
                    "sample label {label} out of range for {} classes",
                    spec.n_classes
                )));
            }
            let x = parse_float_array(field(s, "x")?, "sample.x")?;
            let x = Vector::try_new(x).map_err(|_| schema_err("sample.x: non-finite"))?;
            Ok(Sample { x, label })
        })
        .collect::<Result<_>>()?;

    // Cross-field consistency.
    if encoder.a_t.cols() != spec.d_tok
        || encoder.a_i.cols() != spec.d_img
        || encoder.w_t.rows() != spec.feat_dim
        || classes.g.rows() != spec.n_classes
        || classes.g.cols() != spec.d_tok
        || prototypes.rows() != spec.n_classes
        || prototypes.cols() != spec.d_img
        || samples.len() != spec.n_test
        || samples.iter().any(|s| s.x.len() != spec.d_img)
    {
        return Err(schema_err("field shapes disagree with spec"));
    }

    Ok(Dataset { spec, encoder, classes, prototypes, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> DatasetSpec {
        DatasetSpec {
            n_classes: 4,
            d_img: 10,
            d_tok: 8,
            hidden: 12,
            feat_dim: 8,
            n_ctx: 2,
            n_test: 25,
            class_noise_sigma: 0.4,
            separation: 0.5,
            seed: 9,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small_spec();
        let a = generate_dataset(&spec).unwrap();
        let b = generate_dataset(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_separation_always_succeeds() {
        let spec = DatasetSpec { separation: 0.0, ..small_spec() };
        generate_dataset(&spec).unwrap();
    }

    #[test]
    fn two_classes_full_separation_orthogonal() {
        // Seed 5 starts the pair at an acute angle, so repulsion must drive
        // it to the right angle; the capped final step lands within 1e-3.
        let spec =
            DatasetSpec { n_classes: 2, separation: 1.0, n_test: 4, seed: 5, ..small_spec() };
        let ds = generate_dataset(&spec).unwrap();
        let angle = pair_angle(ds.prototypes.row(0), ds.prototypes.row(1));
        assert!(
            angle >= FRAC_PI_2 - 1e-9 && angle <= FRAC_PI_2 + 1e-3,
            "expected right angle, got {angle}"
        );
        // A pair that is already past the target is left alone but still
        // satisfies the constraint.
        let spec = DatasetSpec { n_classes: 2, separation: 1.0, n_test: 4, seed: 1, ..small_spec() };
        let ds = generate_dataset(&spec).unwrap();
        let angle = pair_angle(ds.prototypes.row(0), ds.prototypes.row(1));
        assert!(angle >= FRAC_PI_2 - 1e-9);
    }

    #[test]
    fn separation_target_met_on_fixture() {
        let spec = DatasetSpec {
            n_classes: 10,
            d_img: 24,
            d_tok: 16,
            hidden: 32,
            feat_dim: 16,
            n_ctx: 4,
            n_test: 10,
            class_noise_sigma: 0.6,
            separation: 0.8,
            seed: 42,
        };
        let ds = generate_dataset(&spec).unwrap();
        let target = 0.8 * FRAC_PI_2;
        let (_, _, min_angle) = min_angle_pair(&ds.prototypes);
        assert!(min_angle >= target - 1e-6, "min angle {min_angle} < {target}");
        let again = generate_dataset(&spec).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn infeasible_separation_errors() {
        // 5 directions cannot be pairwise orthogonal in R^3.
        let spec = DatasetSpec {
            n_classes: 5,
            d_img: 3,
            separation: 1.0,
            n_test: 5,
            ..small_spec()
        };
        assert!(matches!(
            generate_dataset(&spec),
            Err(LabError::SeparationInfeasible { .. })
        ));
    }

    #[test]
    fn labels_balanced_and_samples_unit_norm() {
        let ds = generate_dataset(&small_spec()).unwrap();
        let mut counts = vec![0usize; ds.spec.n_classes];
        for s in &ds.samples {
            counts[s.label] += 1;
            assert!((s.x.norm() - 1.0).abs() <= 1e-10);
        }
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1, "counts {counts:?}");
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(matches!(
            DatasetSpec { separation: 1.5, ..small_spec() }.validate(),
            Err(LabError::InvalidSpec(_))
        ));
        assert!(matches!(
            DatasetSpec { n_classes: 1, ..small_spec() }.validate(),
            Err(LabError::InvalidSpec(_))
        ));
        assert!(matches!(
            DatasetSpec { n_test: 0, ..small_spec() }.validate(),
            Err(LabError::InvalidSpec(_))
        ));
    }

    #[test]
    fn save_load_roundtrip_is_exact() {
        let dir = std::env::temp_dir().join(format!("otpt-synth-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.json");
        let ds = generate_dataset(&small_spec()).unwrap();
        save_dataset(&ds, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(ds, loaded);
        // Saving twice produces identical bytes.
        let path2 = dir.join("roundtrip2.json");
        save_dataset(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn wrong_version_is_schema_mismatch() {
        let dir = std::env::temp_dir().join(format!("otpt-synth-v-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ds.json");
        let ds = generate_dataset(&small_spec()).unwrap();
        save_dataset(&ds, &path).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"version\": 1", "\"version\": 99");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load_dataset(&path), Err(LabError::SchemaMismatch(_))));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn truncated_file_is_io_error() {
        let dir = std::env::temp_dir().join(format!("otpt-synth-t-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ds.json");
        let ds = generate_dataset(&small_spec()).unwrap();
        save_dataset(&ds, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_dataset(&path), Err(LabError::Io(_))));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn validation_split_distinct_from_test_and_deterministic() {
        let ds = generate_dataset(&small_spec()).unwrap();
        let val = generate_validation_samples(&ds, 10, 0).unwrap();
        let val2 = generate_validation_samples(&ds, 10, 0).unwrap();
        assert_eq!(val, val2);
        assert_ne!(val[0].x, ds.samples[0].x);
        let other_salt = generate_validation_samples(&ds, 10, 1).unwrap();
        assert_ne!(val[0].x, other_salt[0].x);
    }
}
