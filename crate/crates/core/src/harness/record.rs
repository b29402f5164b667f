use std::fmt::Write as _;

use crate::stats;

/// One checkpoint of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordRow {
    pub iter: usize,
    pub phase: &'static str,
    pub train_loss: f64,
    pub val_acc: f64,
    pub lambda: f64,
    /// Per-layer norm dispersion; `None` where it is undefined.
    pub dispersion: Vec<Option<f64>>,
}

/// End-of-run figures.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub name: String,
    pub method: String,
    pub seed: u64,
    pub baseline_acc: f64,
    /// Accuracy of the network the mask is applied to.
    pub pre_prune_acc: f64,
    pub post_prune_acc: f64,
    pub post_finetune_acc: f64,
    /// Fraction of weights removed or frozen.
    pub sparsity: f64,
    pub pruned_groups: usize,
    pub pruned_hash: String,
    pub reg_iters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub rows: Vec<RecordRow>,
    pub summary: RunSummary,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ExperimentRecord {
    pub fn num_layers(&self) -> usize {
        self.rows.iter().map(|r| r.dispersion.len()).max().unwrap_or(0)
    }

    /// `iter,phase,train_loss,val_acc,lambda,disp_0,...`
    pub fn rows_csv(&self) -> String {
        let layers = self.num_layers();
        let mut s = String::from("iter,phase,train_loss,val_acc,lambda");
        for l in 0..layers {
            write!(s, ",disp_{l}").unwrap();
        }
        s.push('\n');
        for r in &self.rows {
            write!(s, "{},{},{},{},{}", r.iter, r.phase, r.train_loss, r.val_acc, r.lambda).unwrap();
            for l in 0..layers {
                write!(s, ",{}", opt(r.dispersion.get(l).copied().flatten())).unwrap();
            }
            s.push('\n');
        }
        s
    }

    /// Two-column `key,value` table.
    pub fn summary_csv(&self) -> String {
        let m = &self.summary;
        let mut s = String::from("key,value\n");
        for (k, v) in [
            ("name", m.name.clone()),
            ("method", m.method.clone()),
            ("seed", m.seed.to_string()),
            ("baseline_acc", m.baseline_acc.to_string()),
            ("pre_prune_acc", m.pre_prune_acc.to_string()),
            ("post_prune_acc", m.post_prune_acc.to_string()),
            ("post_finetune_acc", m.post_finetune_acc.to_string()),
            ("sparsity", m.sparsity.to_string()),
            ("pruned_groups", m.pruned_groups.to_string()),
            ("pruned_hash", m.pruned_hash.clone()),
            ("reg_iters", m.reg_iters.to_string()),
        ] {
            writeln!(s, "{k},{v}").unwrap();
        }
        s
    }

    /// One-line human summary.
    pub fn summary_line(&self) -> String {
        let m = &self.summary;
        format!(
            "{} seed={} sparsity={:.4} baseline={:.4} pre_prune={:.4} post_prune={:.4} post_finetune={:.4}",
            m.method, m.seed, m.sparsity, m.baseline_acc, m.pre_prune_acc, m.post_prune_acc, m.post_finetune_acc
        )
    }
}

/// Paired results of two pruning schedules over several seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub methods: [String; 2],
    pub runs: Vec<[RunSummary; 2]>,
}

impl ComparisonTable {
    pub fn post_finetune(&self, which: usize) -> Vec<f64> {
        self.runs.iter().map(|r| r[which].post_finetune_acc).collect()
    }

    pub fn post_prune(&self, which: usize) -> Vec<f64> {
        self.runs.iter().map(|r| r[which].post_prune_acc).collect()
    }

    /// Mean and population std of post-finetune accuracy.
    pub fn mean_std(&self, which: usize) -> (f64, f64) {
        let v = self.post_finetune(which);
        (stats::mean(&v), stats::std_dev(&v))
    }

    /// `method,n_seeds,mean,std,...` with population std.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from(
            "method,n_seeds,post_finetune_mean,post_finetune_std,post_prune_mean,post_prune_std\n",
        );
        for w in 0..2 {
            let (m, sd) = self.mean_std(w);
            let pp = self.post_prune(w);
            writeln!(
                s,
                "{},{},{},{},{},{}",
                self.methods[w],
                self.runs.len(),
                m,
                sd,
                stats::mean(&pp),
                stats::std_dev(&pp)
            )
            .unwrap();
        }
        s
    }

    pub fn per_seed_csv(&self) -> String {
        let mut s = String::from(
            "seed,method,baseline_acc,pre_prune_acc,post_prune_acc,post_finetune_acc,sparsity,pruned_hash\n",
        );
        for pair in &self.runs {
            for r in pair {
                writeln!(
                    s,
                    "{},{},{},{},{},{},{},{}",
                    r.seed, r.method, r.baseline_acc, r.pre_prune_acc, r.post_prune_acc, r.post_finetune_acc, r.sparsity, r.pruned_hash
                )
                .unwrap();
            }
        }
        s
    }
}

/// Group-norm snapshots taken while penalties grow.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationPoint {
    pub iter: usize,
    pub lambda: f64,
    pub dispersion: Vec<Option<f64>>,
    /// Per layer, group L1 norms divided by the layer maximum.
    pub normalized: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SeparationTrace {
    /// Layers whose groups are under the growing penalty.
    pub layers: Vec<usize>,
    pub points: Vec<SeparationPoint>,
}

impl SeparationTrace {
    /// Dispersion series of one layer, skipping undefined points.
    pub fn series(&self, layer: usize) -> Vec<f64> {
        self.points.iter().filter_map(|p| p.dispersion.get(layer).copied().flatten()).collect()
    }

    /// Spearman correlation between checkpoint index and dispersion.
    pub fn trend(&self, layer: usize) -> f64 {
        let ys = self.series(layer);
        let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64).collect();
        stats::spearman(&xs, &ys)
    }

    /// Long format `iter,layer,metric,value` for the dispersion series.
    pub fn dispersion_csv(&self) -> String {
        let mut s = String::from("iter,layer,metric,value\n");
        for p in &self.points {
            for &l in &self.layers {
                if let Some(d) = p.dispersion.get(l).copied().flatten() {
                    writeln!(s, "{},{l},dispersion,{d}", p.iter).unwrap();
                }
            }
        }
        s
    }

    /// Long format `iter,layer,group,value` of normalised norms.
    pub fn snapshots_csv(&self, iters: Option<&[usize]>) -> String {
        let mut s = String::from("iter,layer,group,value\n");
        for p in &self.points {
            if iters.is_some_and(|keep| !keep.contains(&p.iter)) {
                continue;
            }
            for &l in &self.layers {
                for (g, v) in p.normalized[l].iter().enumerate() {
                    writeln!(s, "{},{l},{g},{v}", p.iter).unwrap();
                }
            }
        }
        s
    }
}
