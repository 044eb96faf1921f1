//! Dörfler marking and the adaptive Solve–Estimate–Mark–Refine iteration.

use std::sync::Arc;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::estimator::{indicators, oscillation, IndicatorSet};
use crate::mesh::{MarkSet, Mesh};
use crate::problem::{DomainSpec, ErrorMode, ProblemSpec};
use crate::spaces::{DofMap, FieldPair};
use crate::system::{assemble_and_solve, energy_error_vs_exact, energy_norm_diff};

/// Stopping rule for the adaptive loop.
#[derive(Debug, Clone, Copy)]
pub struct StopRule {
    /// Stop once n_σ + n_u reaches this.
    pub max_dofs: usize,
    /// Stop once η² + osc² drops below this.
    pub tol_total: f64,
    /// Hard iteration cap.
    pub max_iters: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            max_dofs: 100_000,
            tol_total: 1e-8,
            max_iters: 100,
        }
    }
}

/// Configuration of one adaptive (or uniform) run.
#[derive(Debug, Clone)]
pub struct AfemConfig {
    pub problem: ProblemSpec,
    pub domain: DomainSpec,
    /// Dörfler bulk parameter θ ∈ (0,1).
    pub theta: f64,
    pub stop: StopRule,
    pub error_mode: ErrorMode,
}

impl AfemConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::DimensionMismatch(format!(
                "marking parameter theta must lie in (0,1), got {}",
                self.theta
            )));
        }
        Ok(())
    }
}

/// One row of the adaptive history.
#[derive(Debug, Clone)]
pub struct AfemRecord {
    pub k: usize,
    pub ntri: usize,
    pub n_sigma: usize,
    pub n_u: usize,
    pub ndof: usize,
    pub eta2: f64,
    pub osc2: f64,
    pub err_energy: Option<f64>,
    pub nmarked: usize,
    pub seconds: f64,
}

/// Full record of an adaptive run, including the per-iteration meshes,
/// fields and indicator sets needed to re-check the two-level inequalities.
pub struct AfemHistory {
    pub records: Vec<AfemRecord>,
    pub meshes: Vec<Arc<Mesh>>,
    pub dofmaps: Vec<DofMap>,
    pub fields: Vec<FieldPair>,
    pub indicators: Vec<IndicatorSet>,
    pub marks: Vec<Vec<usize>>,
    pub theta: f64,
}

impl AfemHistory {
    pub fn final_record(&self) -> &AfemRecord {
        self.records.last().expect("history is never empty")
    }

    /// (N, η²+osc²) pairs for rate fitting.
    pub fn estimator_points(&self) -> Vec<(f64, f64)> {
        self.records
            .iter()
            .map(|r| (r.ntri as f64, r.eta2 + r.osc2))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,ntri,ndof,eta2,osc2,err_energy,nmarked,seconds\n");
        for r in &self.records {
            let err = r
                .err_energy
                .map(|e| e.to_string())
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.k, r.ntri, r.ndof, r.eta2, r.osc2, err, r.nmarked, r.seconds
            ));
        }
        out
    }
}

/// Minimal-cardinality Dörfler bulk marking: sort the per-element totals
/// η²(K)+osc²(K) descending (ties by ascending element index) and take the
/// shortest prefix reaching θ of the grand total. All-zero indicators give
/// an empty set.
pub fn doerfler_mark(ind: &IndicatorSet, theta: f64) -> Result<Vec<usize>> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::DimensionMismatch(format!(
            "doerfler_mark needs theta in (0,1], got {theta}"
        )));
    }
    let n = ind.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        ind.combined(b)
            .partial_cmp(&ind.combined(a))
            .unwrap()
            .then(a.cmp(&b))
    });
    // grand total in the same (descending) summation order as the prefix
    let total: f64 = order.iter().map(|&k| ind.combined(k)).sum();
    if total <= 0.0 {
        return Ok(Vec::new());
    }
    let target = theta * total;
    let mut cum = 0.0;
    let mut out = Vec::new();
    for &k in &order {
        let v = ind.combined(k);
        if v <= 0.0 {
            break;
        }
        out.push(k);
        cum += v;
        if cum >= target {
            break;
        }
    }
    Ok(out)
}

enum Marker {
    Doerfler(f64),
    All,
}

/// Run the adaptive loop with Dörfler marking.
pub fn afem_run(config: &AfemConfig) -> Result<AfemHistory> {
    config.validate()?;
    run_loop(config, Marker::Doerfler(config.theta))
}

/// Run the baseline loop refining every element each iteration.
pub fn uniform_run(config: &AfemConfig) -> Result<AfemHistory> {
    run_loop(config, Marker::All)
}

fn run_loop(config: &AfemConfig, marker: Marker) -> Result<AfemHistory> {
    let kind = config.problem.kind;
    let family = config.problem.family;
    let mut mesh = Arc::new(config.domain.build()?);
    let mut history = AfemHistory {
        records: Vec::new(),
        meshes: Vec::new(),
        dofmaps: Vec::new(),
        fields: Vec::new(),
        indicators: Vec::new(),
        marks: Vec::new(),
        theta: match marker {
            Marker::Doerfler(t) => t,
            Marker::All => 1.0,
        },
    };

    for k in 0..=config.stop.max_iters {
        let wrap = |e: Error| Error::AfemIteration {
            iteration: k,
            source: Box::new(e),
        };
        let start = Instant::now();
        let dofmap = DofMap::build(&mesh, family, kind).map_err(wrap)?;
        let (_system, field) = assemble_and_solve(&mesh, &dofmap, &config.problem).map_err(wrap)?;
        let ind = IndicatorSet::merge(
            indicators(&mesh, &dofmap, &field, &config.problem).map_err(wrap)?,
            oscillation(&mesh, &dofmap, &config.problem.source).map_err(wrap)?,
        );
        let (eta2, osc2) = ind.total(None).map_err(wrap)?;
        let ndof = dofmap.n_sigma + dofmap.n_u;
        let ntri = mesh.num_triangles();

        let stop = ndof >= config.stop.max_dofs
            || (eta2 + osc2) <= config.stop.tol_total
            || k == config.stop.max_iters;

        let marked = if stop {
            Vec::new()
        } else {
            match marker {
                Marker::Doerfler(theta) => doerfler_mark(&ind, theta).map_err(wrap)?,
                Marker::All => (0..ntri).collect(),
            }
        };

        history.records.push(AfemRecord {
            k,
            ntri,
            n_sigma: dofmap.n_sigma,
            n_u: dofmap.n_u,
            ndof,
            eta2,
            osc2,
            err_energy: None,
            nmarked: marked.len(),
            seconds: start.elapsed().as_secs_f64(),
        });
        history.meshes.push(Arc::clone(&mesh));
        history.dofmaps.push(dofmap);
        history.fields.push(field);
        history.indicators.push(ind);
        history.marks.push(marked.clone());

        if stop || marked.is_empty() {
            break;
        }
        let mark_set = MarkSet::new(marked, &mesh).map_err(wrap)?;
        mesh = Arc::new(mesh.refine(&mark_set).map_err(wrap)?);
    }

    fill_error_column(config, &mut history)?;
    Ok(history)
}

/// Fill the energy-error column according to the configured mode.
fn fill_error_column(config: &AfemConfig, history: &mut AfemHistory) -> Result<()> {
    let op = config.problem.kind.operator();
    match config.error_mode {
        ErrorMode::None => Ok(()),
        ErrorMode::Exact => {
            let exact = config.problem.exact.as_ref().ok_or_else(|| {
                Error::DimensionMismatch(
                    "error mode 'exact' needs a configured exact solution".into(),
                )
            })?;
            for i in 0..history.records.len() {
                let err = energy_error_vs_exact(
                    &history.meshes[i],
                    &history.dofmaps[i],
                    op,
                    &history.fields[i].sigma,
                    exact,
                );
                history.records[i].err_energy = Some(err);
            }
            Ok(())
        }
        ErrorMode::Reference => {
            // reference: two extra uniform refinements of the finest mesh
            let finest = Arc::clone(history.meshes.last().expect("nonempty"));
            let mut reference = (*finest).clone();
            for _ in 0..2 {
                reference = reference.refine(&MarkSet::all(&reference))?;
            }
            let ref_dm = DofMap::build(&reference, config.problem.family, config.problem.kind)?;
            let (_, ref_field) = assemble_and_solve(&reference, &ref_dm, &config.problem)?;
            for i in 0..history.records.len() {
                let anc = history.meshes[i].coarse_ancestry(&reference)?;
                let prolonged = crate::spaces::prolong_stress(
                    &history.meshes[i],
                    &history.dofmaps[i],
                    &reference,
                    &ref_dm,
                    &anc,
                    &history.fields[i].sigma,
                )?;
                let err = energy_norm_diff(&reference, &ref_dm, op, &ref_field.sigma, &prolonged);
                history.records[i].err_energy = Some(err);
            }
            Ok(())
        }
    }
}
