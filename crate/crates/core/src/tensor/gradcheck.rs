//! Central finite-difference verification of tape gradients.

use super::{BatchNormState, ParamStore, Tape, Tensor, ValueId};
use crate::error::Result;
use crate::rng;
use rand_core::RngCore;

/// Outcome for one parameter tensor.
#[derive(Clone, Debug)]
pub struct GradCheckRow {
    pub name: String,
    pub max_rel_err: f64,
    pub probes: usize,
}

/// Report over every probed parameter.
#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub rows: Vec<GradCheckRow>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.rows.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    }

    /// True when every probed parameter stays strictly below `tol`.
    pub fn passes(&self, tol: f64) -> bool {
        self.rows.iter().all(|r| r.max_rel_err < tol)
    }

    pub fn failing(&self, tol: f64) -> Vec<&GradCheckRow> {
        self.rows.iter().filter(|r| r.max_rel_err >= tol).collect()
    }
}

/// A `(parameter index, element index)` coordinate to probe.
pub type Probe = (usize, usize);

/// Probe every element of every parameter.
pub fn probes_all(store: &ParamStore) -> Vec<Probe> {
    store
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| (0..p.value.numel()).map(move |ei| (pi, ei)))
        .collect()
}

/// Sample `count` probes uniformly over all scalar entries, always including
/// one entry of each parameter named in `must_include`.
pub fn probes_sampled(
    store: &ParamStore,
    count: usize,
    must_include: &[&str],
    rng: &mut impl RngCore,
) -> Vec<Probe> {
    let mut probes: Vec<Probe> = Vec::new();
    for name in must_include {
        if let Some(pi) = store.iter().position(|p| &p.name == name) {
            probes.push((pi, 0));
        }
    }
    let sizes: Vec<usize> = store.iter().map(|p| p.value.numel()).collect();
    let total: usize = sizes.iter().sum();
    while probes.len() < count {
        let mut flat = (rng.next_u64() % total as u64) as usize;
        let mut pi = 0;
        while flat >= sizes[pi] {
            flat -= sizes[pi];
            pi += 1;
        }
        if !probes.contains(&(pi, flat)) {
            probes.push((pi, flat));
        }
    }
    probes
}

/// Compare analytic gradients against central differences
/// `(f(θ+eps) − f(θ−eps)) / (2·eps)` at the given probes.
///
/// `build` must construct a fresh tape, bind the store's parameters in store
/// order and return the scalar loss together with the bound ids. Relative
/// error uses `|a − n| / max(|a|, |n|)`; when both magnitudes fall below
/// 1e-7 the probe counts as exact (a zero gradient measured as zero).
pub fn finite_diff_check<F>(
    store: &mut ParamStore,
    mut build: F,
    eps: f64,
    probes: &[Probe],
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<(Tape, ValueId, Vec<ValueId>)>,
{
    assert!(eps > 0.0, "finite_diff_check: eps must be positive");

    let (mut tape, loss, bound) = build(store)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = bound
        .iter()
        .map(|&id| {
            tape.grad(id)
                .map(|t| t.data().to_vec())
                .unwrap_or_else(|| vec![0.0; tape.value(id).numel()])
        })
        .collect();

    let mut report = GradCheckReport::default();
    for p in store.iter() {
        report.rows.push(GradCheckRow { name: p.name.clone(), max_rel_err: 0.0, probes: 0 });
    }

    for &(pi, ei) in probes {
        let original = store.get(super::ParamId(pi)).value.data()[ei];

        store.get_mut(super::ParamId(pi)).value.data_mut()[ei] = original + eps;
        let (tape_p, loss_p, _) = build(store)?;
        let f_plus = tape_p.value(loss_p).data()[0];

        store.get_mut(super::ParamId(pi)).value.data_mut()[ei] = original - eps;
        let (tape_m, loss_m, _) = build(store)?;
        let f_minus = tape_m.value(loss_m).data()[0];

        store.get_mut(super::ParamId(pi)).value.data_mut()[ei] = original;

        let numeric = (f_plus - f_minus) / (2.0 * eps);
        let a = analytic[pi][ei];
        let denom = a.abs().max(numeric.abs());
        let rel = if denom < 1e-7 { 0.0 } else { (a - numeric).abs() / denom };

        let row = &mut report.rows[pi];
        row.probes += 1;
        row.max_rel_err = row.max_rel_err.max(rel);
    }
    report.rows.retain(|r| r.probes > 0);
    Ok(report)
}

/// Finite-difference checks for every tape primitive on seeded micro-graphs.
///
/// Each check registers the primitive's inputs as parameters, projects the
/// output onto a fixed random direction, reduces to a scalar with `mean`,
/// and probes every entry. Row names are `<primitive>.<input>`.
pub fn primitive_checks(eps: f64, seed: u64) -> Result<GradCheckReport> {
    let mut all = GradCheckReport::default();
    let mut r = rng::rng_from(rng::derive(seed, 0x7072696d, 0, 0));

    // Random tensors kept away from ReLU/maxpool decision boundaries: the
    // magnitude stays in [0.2, 1.2] with random sign where allowed.
    fn spread(r: &mut rand_chacha::ChaCha8Rng, shape: [usize; 4], signed: bool) -> Tensor {
        Tensor::from_fn(shape, |_, _, _, _| {
            let mag = rng::uniform_in(r, 0.2, 1.2);
            if signed && rng::uniform(r) < 0.5 {
                -mag
            } else {
                mag
            }
        })
    }

    let proj_44 = spread(&mut r, [1, 2, 4, 4], true);
    let proj_scalar = Tensor::scalar(1.0);
    let x0 = spread(&mut r, [1, 2, 4, 4], true);

    let run = |all: &mut GradCheckReport,
                   label: &str,
                   store: &mut ParamStore,
                   build: &mut dyn FnMut(&ParamStore) -> Result<(Tape, ValueId, Vec<ValueId>)>|
     -> Result<()> {
        let probes = probes_all(store);
        let rep = finite_diff_check(store, build, eps, &probes)?;
        for row in rep.rows {
            all.rows.push(GradCheckRow { name: format!("{label}.{}", row.name), ..row });
        }
        Ok(())
    };

    // conv2d: plain, strided, and dilated variants.
    for (label, stride, padding, dilation) in [
        ("conv2d", 1, 1, 1),
        ("conv2d_stride2", 2, 1, 1),
        ("conv2d_dilated", 1, 2, 2),
    ] {
        let mut store = ParamStore::new();
        store.add("x", spread(&mut r, [1, 2, 6, 6], true));
        store.add("weight", spread(&mut r, [3, 2, 3, 3], true));
        store.add("bias", spread(&mut r, [1, 3, 1, 1], true));
        let proj = spread(
            &mut r,
            [
                1,
                3,
                super::ops::conv_out_extent(6, 3, stride, padding, dilation)?,
                super::ops::conv_out_extent(6, 3, stride, padding, dilation)?,
            ],
            true,
        );
        run(&mut all, label, &mut store, &mut |ps: &ParamStore| {
            let mut tape = Tape::new();
            let bound = ps.bind(&mut tape);
            let y = tape.conv2d(bound[0], bound[1], bound[2], stride, padding, dilation)?;
            let y = tape.mul_const(y, proj.clone())?;
            let loss = tape.mean(y);
            Ok((tape, loss, bound))
        })?;
    }

    // batchnorm2d in training mode (gradients flow through batch stats).
    {
        let mut store = ParamStore::new();
        store.add("x", spread(&mut r, [2, 2, 3, 3], true));
        store.add("gamma", spread(&mut r, [1, 2, 1, 1], false));
        store.add("beta", spread(&mut r, [1, 2, 1, 1], true));
        let proj = spread(&mut r, [2, 2, 3, 3], true);
        run(&mut all, "batchnorm2d", &mut store, &mut |ps: &ParamStore| {
            let mut tape = Tape::new();
            let bound = ps.bind(&mut tape);
            let mut state = BatchNormState::new(2);
            let y = tape.batchnorm2d(bound[0], bound[1], bound[2], &mut state, 0.1, 1e-5, true)?;
            let y = tape.mul_const(y, proj.clone())?;
            let loss = tape.mean(y);
            Ok((tape, loss, bound))
        })?;
    }

    // relu / sigmoid / one_minus elementwise chains.
    {
        let mut store = ParamStore::new();
        store.add("x", x0.clone());
        let proj = proj_44.clone();
        run(&mut all, "relu", &mut store, &mut |ps: &ParamStore| {
            let mut tape = Tape::new();
            let bound = ps.bind(&mut tape);
            let y = tape.relu(bound[0]);
            let y = tape.mul_const(y, proj.clone())?;
            let loss = tape.mean(y);
            Ok((tape, loss, bound))
        })?;
        run(&mut all, "sigmoid", &mut store, &mut |ps: &ParamStore| {
            let mut tape = Tape::new();
            let bound = ps.bind(&mut tape);
            let y = tape.sigmoid(bound[0]);
            let y = tape.mul_const(y, proj.clone())?;
            let loss = tape.mean(y);
            Ok((tape, loss, bound))
        })?;
        run(&mut all, "one_minus", &mut store, &mut |ps: &ParamStore| {
            let mut tape = Tape::new();
            let bound = ps.bind(&mut tape);
            let y = tape.one_minus(bound[0]);
            let y = tape.mul_const(y, proj.clone())?;
            let loss = tape.mean(y);
            Ok((tape, loss, bound))
        })?;
    }

    // maxpool2x2 (window entries spaced well beyond eps, so the argmax is
    // stable under the probe).
    {
        let mut store = ParamStore::new();
        let mut vals: Vec<f64> = (0..32).map(|k| 0.05 * k as f64).collect();
        rng::shuffle(&mut r, &mut vals);
        store.add("x", Tensor::new([1, 2, 4, 4], vals)?);
        let proj = spread(&mut r, [1, 2, 2, 2], true);
        run(&mut all, "maxpool2x2", &mut store, &mut |ps: &ParamStore| {
            let mut tape = Tape::new();
            let bound = ps.bind(&mut tape);
            let y = tape.maxpool2x2(bound[0])?;
            let y = tape.mul_const(y, proj.clone())?;
            let loss = tape.mean(y);
            Ok((tape, loss, bound))
        })?;
    }

    // bilinear_upsample.
    {
        let mut store = ParamStore::new();
        store.add("x", spread(&mut r, [1, 2, 3, 3], true));
        let proj = spread(&mut r, [1, 2, 6, 6], true);
        run(&mut all, "bilinear_upsample", &mut store, &mut |ps: &ParamStore| {
            let mut tape = Tape::new();
            let bound = ps.bind(&mut tape);
            let y = tape.bilinear_upsample(bound[0], 2)?;
            let y = tape.mul_const(y, proj.clone())?;
            let loss = tape.mean(y);
            Ok((tape, loss, bound))
        })?;
    }

    // concat_channels + add.
    {
        let mut store = ParamStore::new();
        store.add("a", spread(&mut r, [1, 2, 4, 4], true));
        store.add("b", spread(&mut r, [1, 3, 4, 4], true));
        let proj = spread(&mut r, [1, 5, 4, 4], true);
        run(&mut all, "concat_channels", &mut store, &mut |ps: &ParamStore| {
            let mut tape = Tape::new();
            let bound = ps.bind(&mut tape);
            let y = tape.concat_channels(&bound)?;
            let y = tape.mul_const(y, proj.clone())?;
            let loss = tape.mean(y);
            Ok((tape, loss, bound))
        })?;

        let mut store = ParamStore::new();
        store.add("a", spread(&mut r, [1, 2, 4, 4], true));
        store.add("b", spread(&mut r, [1, 2, 4, 4], true));
        let proj = proj_44.clone();
        run(&mut all, "add", &mut store, &mut |ps: &ParamStore| {
            let mut tape = Tape::new();
            let bound = ps.bind(&mut tape);
            let y = tape.add(bound[0], bound[1])?;
            let y = tape.mul_const(y, proj.clone())?;
            let loss = tape.mean(y);
            Ok((tape, loss, bound))
        })?;
    }

    // scale_by_param and gate_mul (the attention arithmetic).
    {
        let mut store = ParamStore::new();
        store.add("x", spread(&mut r, [1, 2, 4, 4], true));
        store.add("s", spread(&mut r, [1, 1, 1, 1], true));
        let proj = proj_44.clone();
        run(&mut all, "scale_by_param", &mut store, &mut |ps: &ParamStore| {
            let mut tape = Tape::new();
            let bound = ps.bind(&mut tape);
            let y = tape.scale_by_param(bound[0], bound[1])?;
            let y = tape.mul_const(y, proj.clone())?;
            let loss = tape.mean(y);
            Ok((tape, loss, bound))
        })?;

        let mut store = ParamStore::new();
        store.add("x", spread(&mut r, [1, 2, 4, 4], true));
        store.add("gate", spread(&mut r, [1, 1, 4, 4], false));
        let proj = proj_44.clone();
        run(&mut all, "gate_mul", &mut store, &mut |ps: &ParamStore| {
            let mut tape = Tape::new();
            let bound = ps.bind(&mut tape);
            let y = tape.gate_mul(bound[0], bound[1])?;
            let y = tape.mul_const(y, proj.clone())?;
            let loss = tape.mean(y);
            Ok((tape, loss, bound))
        })?;
    }

    // mean reduction.
    {
        let mut store = ParamStore::new();
        store.add("x", spread(&mut r, [1, 2, 4, 4], true));
        let proj = proj_scalar.clone();
        run(&mut all, "mean", &mut store, &mut |ps: &ParamStore| {
            let mut tape = Tape::new();
            let bound = ps.bind(&mut tape);
            let y = tape.mean(bound[0]);
            let y = tape.mul_const(y, proj.clone())?;
            let loss = tape.mean(y);
            Ok((tape, loss, bound))
        })?;
    }

    // Loss primitives.
    {
        let mut store = ParamStore::new();
        store.add("logits", spread(&mut r, [1, 1, 4, 4], true));
        let target = Tensor::from_fn([1, 1, 4, 4], |_, _, _, _| {
            if rng::uniform(&mut r) < 0.5 {
                1.0
            } else {
                0.0
            }
        });
        run(&mut all, "bce_loss", &mut store, &mut |ps: &ParamStore| {
            let mut tape = Tape::new();
            let bound = ps.bind(&mut tape);
            let loss = tape.bce_with_logits(bound[0], target.clone())?;
            Ok((tape, loss, bound))
        })?;

        let mut store = ParamStore::new();
        store.add("pred", spread(&mut r, [1, 1, 4, 4], false));
        let target = Tensor::from_fn([1, 1, 4, 4], |_, _, _, _| rng::uniform(&mut r));
        run(&mut all, "mse_loss", &mut store, &mut |ps: &ParamStore| {
            let mut tape = Tape::new();
            let bound = ps.bind(&mut tape);
            let loss = tape.mse(bound[0], target.clone())?;
            Ok((tape, loss, bound))
        })?;
    }

    Ok(all)
}
